// SPDX-License-Identifier: Apache-2.0

#include "lpa/ops.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include <Eigen/Core>

namespace lpa {

using detail::make_result;
using detail::Node;

namespace {

constexpr double kLayerNormEps = 1e-5;

std::vector<double>* grad_of(const Node& self, std::size_t parent) {
  auto& p = *self.parents[parent];
  return p.requires_grad ? &p.grad_buffer() : nullptr;
}

void require_defined(const Tensor& t, const char* op) {
  if (!t.defined()) throw ContractError(std::string(op) + ": undefined tensor");
}

using RowMajor = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using ConstMap = Eigen::Map<const RowMajor>;
using Map = Eigen::Map<RowMajor>;

// c += a[m×k]·b[k×n].
void gemm_nn(const double* a, const double* b, double* c, std::size_t m, std::size_t k,
             std::size_t n) {
  Map(c, m, n).noalias() += ConstMap(a, m, k) * ConstMap(b, k, n);
}

// c += a[m×k]·b[n×k]ᵀ.
void gemm_nt(const double* a, const double* b, double* c, std::size_t m, std::size_t k,
             std::size_t n) {
  Map(c, m, n).noalias() += ConstMap(a, m, k) * ConstMap(b, n, k).transpose();
}

// c += a[k×m]ᵀ·b[k×n].
void gemm_tn(const double* a, const double* b, double* c, std::size_t m, std::size_t k,
             std::size_t n) {
  Map(c, m, n).noalias() += ConstMap(a, k, m).transpose() * ConstMap(b, k, n);
}

// Broadcast b over a: returns the period of b's index within a's flat index.
std::size_t broadcast_period(const Tensor& a, const Tensor& b, const char* op) {
  const auto& as = a.shape();
  const auto& bs = b.shape();
  if (as == bs) return a.numel();
  if (b.numel() == 1) return 1;
  if (bs.size() <= as.size() && std::equal(bs.rbegin(), bs.rend(), as.rbegin())) return b.numel();
  throw DimensionError(std::string(op) + ": cannot broadcast " + shape_str(bs) + " onto " +
                       shape_str(as));
}

struct RowView {
  std::size_t rows;
  std::size_t cols;
};

RowView rows_of(const Tensor& a, const char* op) {
  if (a.rank() == 0) throw DimensionError(std::string(op) + ": rank-0 input");
  const std::size_t cols = a.shape().back();
  if (cols == 0) throw DimensionError(std::string(op) + ": empty last dimension");
  return {a.numel() / cols, cols};
}

}  // namespace

Tensor matmul(const Tensor& a, const Tensor& b) {
  require_defined(a, "matmul");
  require_defined(b, "matmul");
  const auto& as = a.shape();
  const auto& bs = b.shape();
  const bool batched = as.size() == 3 && bs.size() == 3;
  const bool plain = as.size() == 2 && bs.size() == 2;
  if ((!batched && !plain) || (batched && as[0] != bs[0]) || as.back() != bs[bs.size() - 2]) {
    throw DimensionError("matmul: incompatible shapes " + shape_str(as) + " and " + shape_str(bs));
  }
  const std::size_t batch = batched ? as[0] : 1;
  const std::size_t m = as[as.size() - 2], k = as.back(), n = bs.back();
  std::vector<double> out(batch * m * n, 0.0);
  const double* ad = a.data().data();
  const double* bd = b.data().data();
  for (std::size_t s = 0; s < batch; ++s) {
    gemm_nn(ad + s * m * k, bd + s * k * n, out.data() + s * m * n, m, k, n);
  }
  Shape shape = batched ? Shape{batch, m, n} : Shape{m, n};
  return make_result(std::move(shape), std::move(out), "matmul", {a, b},
                     [batch, m, k, n](const Node& self) {
                       const double* g = self.grad.data();
                       const auto& ad = self.parents[0]->data;
                       const auto& bd = self.parents[1]->data;
                       if (auto* ga = grad_of(self, 0)) {
                         for (std::size_t s = 0; s < batch; ++s) {
                           gemm_nt(g + s * m * n, bd.data() + s * k * n, ga->data() + s * m * k, m,
                                   n, k);
                         }
                       }
                       if (auto* gb = grad_of(self, 1)) {
                         for (std::size_t s = 0; s < batch; ++s) {
                           gemm_tn(ad.data() + s * m * k, g + s * m * n, gb->data() + s * k * n, k,
                                   m, n);
                         }
                       }
                     });
}

Tensor transpose(const Tensor& a) {
  require_defined(a, "transpose");
  const auto& as = a.shape();
  if (as.size() != 2 && as.size() != 3) {
    throw DimensionError("transpose: expected rank 2 or 3, got " + shape_str(as));
  }
  const std::size_t batch = as.size() == 3 ? as[0] : 1;
  const std::size_t m = as[as.size() - 2], n = as.back();
  std::vector<double> out(a.numel());
  const auto in = a.data();
  for (std::size_t s = 0; s < batch; ++s) {
    for (std::size_t i = 0; i < m; ++i) {
      for (std::size_t j = 0; j < n; ++j) out[s * m * n + j * m + i] = in[s * m * n + i * n + j];
    }
  }
  Shape shape = as;
  std::swap(shape[shape.size() - 1], shape[shape.size() - 2]);
  return make_result(std::move(shape), std::move(out), "transpose", {a},
                     [batch, m, n](const Node& self) {
                       auto* ga = grad_of(self, 0);
                       if (!ga) return;
                       for (std::size_t s = 0; s < batch; ++s) {
                         for (std::size_t i = 0; i < m; ++i) {
                           for (std::size_t j = 0; j < n; ++j) {
                             (*ga)[s * m * n + i * n + j] += self.grad[s * m * n + j * m + i];
                           }
                         }
                       }
                     });
}

Tensor reshape(const Tensor& a, Shape shape) {
  require_defined(a, "reshape");
  if (shape_numel(shape) != a.numel()) {
    throw DimensionError("reshape: cannot view " + shape_str(a.shape()) + " as " + shape_str(shape));
  }
  std::vector<double> out(a.data().begin(), a.data().end());
  return make_result(std::move(shape), std::move(out), "reshape", {a}, [](const Node& self) {
    if (auto* ga = grad_of(self, 0)) {
      for (std::size_t i = 0; i < self.grad.size(); ++i) (*ga)[i] += self.grad[i];
    }
  });
}

Tensor add(const Tensor& a, const Tensor& b) {
  require_defined(a, "add");
  require_defined(b, "add");
  const std::size_t period = broadcast_period(a, b, "add");
  const auto ad = a.data();
  const auto bd = b.data();
  std::vector<double> out(ad.size());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = ad[i] + bd[i % period];
  return make_result(a.shape(), std::move(out), "add", {a, b}, [period](const Node& self) {
    if (auto* ga = grad_of(self, 0)) {
      for (std::size_t i = 0; i < self.grad.size(); ++i) (*ga)[i] += self.grad[i];
    }
    if (auto* gb = grad_of(self, 1)) {
      for (std::size_t i = 0; i < self.grad.size(); ++i) (*gb)[i % period] += self.grad[i];
    }
  });
}

Tensor sub(const Tensor& a, const Tensor& b) { return add(a, scale(b, -1.0)); }

Tensor mul(const Tensor& a, const Tensor& b) {
  require_defined(a, "mul");
  require_defined(b, "mul");
  const std::size_t period = broadcast_period(a, b, "mul");
  const auto ad = a.data();
  const auto bd = b.data();
  std::vector<double> out(ad.size());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = ad[i] * bd[i % period];
  return make_result(a.shape(), std::move(out), "mul", {a, b}, [period](const Node& self) {
    const auto& ad = self.parents[0]->data;
    const auto& bd = self.parents[1]->data;
    if (auto* ga = grad_of(self, 0)) {
      for (std::size_t i = 0; i < self.grad.size(); ++i) (*ga)[i] += self.grad[i] * bd[i % period];
    }
    if (auto* gb = grad_of(self, 1)) {
      for (std::size_t i = 0; i < self.grad.size(); ++i) (*gb)[i % period] += self.grad[i] * ad[i];
    }
  });
}

Tensor scale(const Tensor& a, double factor) {
  require_defined(a, "scale");
  const auto ad = a.data();
  std::vector<double> out(ad.size());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = ad[i] * factor;
  return make_result(a.shape(), std::move(out), "scale", {a}, [factor](const Node& self) {
    if (auto* ga = grad_of(self, 0)) {
      for (std::size_t i = 0; i < self.grad.size(); ++i) (*ga)[i] += self.grad[i] * factor;
    }
  });
}

Tensor gelu(const Tensor& a) {
  require_defined(a, "gelu");
  const auto ad = a.data();
  std::vector<double> out(ad.size());
  for (std::size_t i = 0; i < out.size(); ++i) {
    out[i] = 0.5 * ad[i] * (1.0 + std::erf(ad[i] * M_SQRT1_2));
  }
  return make_result(a.shape(), std::move(out), "gelu", {a}, [](const Node& self) {
    auto* ga = grad_of(self, 0);
    if (!ga) return;
    const auto& x = self.parents[0]->data;
    const double inv_sqrt_2pi = 0.5 * M_2_SQRTPI * M_SQRT1_2;
    for (std::size_t i = 0; i < x.size(); ++i) {
      const double cdf = 0.5 * (1.0 + std::erf(x[i] * M_SQRT1_2));
      const double pdf = inv_sqrt_2pi * std::exp(-0.5 * x[i] * x[i]);
      (*ga)[i] += self.grad[i] * (cdf + x[i] * pdf);
    }
  });
}

Tensor layer_norm(const Tensor& a) {
  require_defined(a, "layer_norm");
  const auto [rows, cols] = rows_of(a, "layer_norm");
  const auto ad = a.data();
  std::vector<double> out(ad.size());
  std::vector<double> inv_std(rows);
  for (std::size_t r = 0; r < rows; ++r) {
    const double* x = ad.data() + r * cols;
    double mu = 0.0;
    for (std::size_t c = 0; c < cols; ++c) mu += x[c];
    mu /= static_cast<double>(cols);
    double var = 0.0;
    for (std::size_t c = 0; c < cols; ++c) var += (x[c] - mu) * (x[c] - mu);
    var /= static_cast<double>(cols);
    inv_std[r] = 1.0 / std::sqrt(var + kLayerNormEps);
    for (std::size_t c = 0; c < cols; ++c) out[r * cols + c] = (x[c] - mu) * inv_std[r];
  }
  return make_result(a.shape(), std::move(out), "layer_norm", {a},
                     [rows, cols, inv_std = std::move(inv_std)](const Node& self) {
                       auto* ga = grad_of(self, 0);
                       if (!ga) return;
                       const double n = static_cast<double>(cols);
                       for (std::size_t r = 0; r < rows; ++r) {
                         const double* y = self.data.data() + r * cols;
                         const double* g = self.grad.data() + r * cols;
                         double g_mean = 0.0, gy_mean = 0.0;
                         for (std::size_t c = 0; c < cols; ++c) {
                           g_mean += g[c];
                           gy_mean += g[c] * y[c];
                         }
                         g_mean /= n;
                         gy_mean /= n;
                         for (std::size_t c = 0; c < cols; ++c) {
                           (*ga)[r * cols + c] += inv_std[r] * (g[c] - g_mean - y[c] * gy_mean);
                         }
                       }
                     });
}

Tensor softmax_rows(const Tensor& a) {
  require_defined(a, "softmax_rows");
  const auto [rows, cols] = rows_of(a, "softmax_rows");
  const auto ad = a.data();
  std::vector<double> out(ad.size());
  for (std::size_t r = 0; r < rows; ++r) {
    const double* x = ad.data() + r * cols;
    double* y = out.data() + r * cols;
    const double mx = *std::max_element(x, x + cols);
    double total = 0.0;
    for (std::size_t c = 0; c < cols; ++c) {
      y[c] = std::exp(x[c] - mx);
      total += y[c];
    }
    for (std::size_t c = 0; c < cols; ++c) y[c] /= total;
  }
  return make_result(a.shape(), std::move(out), "softmax_rows", {a},
                     [rows, cols](const Node& self) {
                       auto* ga = grad_of(self, 0);
                       if (!ga) return;
                       for (std::size_t r = 0; r < rows; ++r) {
                         const double* y = self.data.data() + r * cols;
                         const double* g = self.grad.data() + r * cols;
                         double dot = 0.0;
                         for (std::size_t c = 0; c < cols; ++c) dot += g[c] * y[c];
                         for (std::size_t c = 0; c < cols; ++c) {
                           (*ga)[r * cols + c] += y[c] * (g[c] - dot);
                         }
                       }
                     });
}

Tensor log_softmax_rows(const Tensor& a) {
  require_defined(a, "log_softmax_rows");
  const auto [rows, cols] = rows_of(a, "log_softmax_rows");
  const auto ad = a.data();
  std::vector<double> out(ad.size());
  for (std::size_t r = 0; r < rows; ++r) {
    const double* x = ad.data() + r * cols;
    const double mx = *std::max_element(x, x + cols);
    double total = 0.0;
    for (std::size_t c = 0; c < cols; ++c) total += std::exp(x[c] - mx);
    const double lse = mx + std::log(total);
    for (std::size_t c = 0; c < cols; ++c) out[r * cols + c] = x[c] - lse;
  }
  return make_result(a.shape(), std::move(out), "log_softmax_rows", {a},
                     [rows, cols](const Node& self) {
                       auto* ga = grad_of(self, 0);
                       if (!ga) return;
                       for (std::size_t r = 0; r < rows; ++r) {
                         const double* y = self.data.data() + r * cols;
                         const double* g = self.grad.data() + r * cols;
                         double gsum = 0.0;
                         for (std::size_t c = 0; c < cols; ++c) gsum += g[c];
                         for (std::size_t c = 0; c < cols; ++c) {
                           (*ga)[r * cols + c] += g[c] - std::exp(y[c]) * gsum;
                         }
                       }
                     });
}

Tensor sum(const Tensor& a) {
  require_defined(a, "sum");
  const auto ad = a.data();
  const double total = std::accumulate(ad.begin(), ad.end(), 0.0);
  return make_result({1}, {total}, "sum", {a}, [](const Node& self) {
    if (auto* ga = grad_of(self, 0)) {
      for (auto& v : *ga) v += self.grad[0];
    }
  });
}

Tensor mean(const Tensor& a) { return scale(sum(a), 1.0 / static_cast<double>(a.numel())); }

namespace {

// View of a tensor as [outer × axis_len × inner].
struct AxisView {
  std::size_t outer = 1;
  std::size_t len = 1;
  std::size_t inner = 1;
};

AxisView axis_view(const Shape& shape, std::size_t axis) {
  AxisView v;
  for (std::size_t i = 0; i < axis; ++i) v.outer *= shape[i];
  v.len = shape[axis];
  for (std::size_t i = axis + 1; i < shape.size(); ++i) v.inner *= shape[i];
  return v;
}

}  // namespace

Tensor concat(const std::vector<Tensor>& parts, std::size_t axis) {
  if (parts.empty()) throw DimensionError("concat: no inputs");
  for (const auto& p : parts) require_defined(p, "concat");
  const Shape& first = parts.front().shape();
  if (axis >= first.size()) {
    throw DimensionError("concat: axis " + std::to_string(axis) + " out of range for " +
                         shape_str(first));
  }
  Shape out_shape = first;
  out_shape[axis] = 0;
  for (const auto& p : parts) {
    const auto& s = p.shape();
    bool ok = s.size() == first.size();
    for (std::size_t i = 0; ok && i < s.size(); ++i) ok = i == axis || s[i] == first[i];
    if (!ok) {
      throw DimensionError("concat: shape " + shape_str(s) + " incompatible with " +
                           shape_str(first) + " along axis " + std::to_string(axis));
    }
    out_shape[axis] += s[axis];
  }
  const AxisView ov = axis_view(out_shape, axis);
  std::vector<double> out(shape_numel(out_shape));
  std::vector<std::size_t> offsets;
  std::size_t offset = 0;
  for (const auto& p : parts) {
    offsets.push_back(offset);
    const AxisView pv = axis_view(p.shape(), axis);
    const auto pd = p.data();
    for (std::size_t o = 0; o < pv.outer; ++o) {
      std::copy_n(pd.data() + o * pv.len * pv.inner, pv.len * pv.inner,
                  out.data() + (o * ov.len + offset) * ov.inner);
    }
    offset += pv.len;
  }
  return make_result(std::move(out_shape), std::move(out), "concat", parts,
                     [ov, offsets = std::move(offsets)](const Node& self) {
                       for (std::size_t k = 0; k < self.parents.size(); ++k) {
                         auto* gp = grad_of(self, k);
                         if (!gp) continue;
                         const std::size_t len = self.parents[k]->data.size() / (ov.outer * ov.inner);
                         for (std::size_t o = 0; o < ov.outer; ++o) {
                           const double* src = self.grad.data() + (o * ov.len + offsets[k]) * ov.inner;
                           double* dst = gp->data() + o * len * ov.inner;
                           for (std::size_t i = 0; i < len * ov.inner; ++i) dst[i] += src[i];
                         }
                       }
                     });
}

Tensor slice(const Tensor& a, std::size_t axis, std::size_t begin, std::size_t end) {
  require_defined(a, "slice");
  const auto& as = a.shape();
  if (axis >= as.size() || begin >= end || end > as[axis]) {
    throw DimensionError("slice: range [" + std::to_string(begin) + ", " + std::to_string(end) +
                         ") on axis " + std::to_string(axis) + " invalid for " + shape_str(as));
  }
  const AxisView av = axis_view(as, axis);
  const std::size_t len = end - begin;
  Shape out_shape = as;
  out_shape[axis] = len;
  std::vector<double> out(av.outer * len * av.inner);
  const auto ad = a.data();
  for (std::size_t o = 0; o < av.outer; ++o) {
    std::copy_n(ad.data() + (o * av.len + begin) * av.inner, len * av.inner,
                out.data() + o * len * av.inner);
  }
  return make_result(std::move(out_shape), std::move(out), "slice", {a},
                     [av, begin, len](const Node& self) {
                       auto* ga = grad_of(self, 0);
                       if (!ga) return;
                       for (std::size_t o = 0; o < av.outer; ++o) {
                         const double* src = self.grad.data() + o * len * av.inner;
                         double* dst = ga->data() + (o * av.len + begin) * av.inner;
                         for (std::size_t i = 0; i < len * av.inner; ++i) dst[i] += src[i];
                       }
                     });
}

std::vector<Tensor> split(const Tensor& a, std::size_t axis, const std::vector<std::size_t>& sizes) {
  const std::size_t total = std::accumulate(sizes.begin(), sizes.end(), std::size_t{0});
  if (axis >= a.rank() || total != a.dim(axis)) {
    throw DimensionError("split: sizes do not partition axis " + std::to_string(axis) + " of " +
                         shape_str(a.shape()));
  }
  std::vector<Tensor> out;
  std::size_t begin = 0;
  for (auto s : sizes) {
    out.push_back(slice(a, axis, begin, begin + s));
    begin += s;
  }
  return out;
}

Tensor gather_rows(const Tensor& a, std::span<const std::size_t> rows) {
  require_defined(a, "gather_rows");
  if (a.rank() != 2) throw DimensionError("gather_rows: expected rank 2, got " + shape_str(a.shape()));
  if (rows.empty()) throw DimensionError("gather_rows: empty index list");
  const std::size_t n = a.dim(0), cols = a.dim(1);
  std::vector<std::size_t> idx(rows.begin(), rows.end());
  std::vector<double> out(idx.size() * cols);
  const auto ad = a.data();
  for (std::size_t r = 0; r < idx.size(); ++r) {
    if (idx[r] >= n) {
      throw DimensionError("gather_rows: row " + std::to_string(idx[r]) + " out of range for " +
                           shape_str(a.shape()));
    }
    std::copy_n(ad.data() + idx[r] * cols, cols, out.data() + r * cols);
  }
  Shape out_shape{idx.size(), cols};
  return make_result(std::move(out_shape), std::move(out), "gather_rows", {a},
                     [idx = std::move(idx), cols](const Node& self) {
                       auto* ga = grad_of(self, 0);
                       if (!ga) return;
                       for (std::size_t r = 0; r < idx.size(); ++r) {
                         for (std::size_t c = 0; c < cols; ++c) {
                           (*ga)[idx[r] * cols + c] += self.grad[r * cols + c];
                         }
                       }
                     });
}

Tensor cross_entropy(const Tensor& logits, std::span<const std::size_t> labels) {
  require_defined(logits, "cross_entropy");
  if (logits.rank() != 2 || logits.dim(0) != labels.size()) {
    throw DimensionError("cross_entropy: logits " + shape_str(logits.shape()) + " vs " +
                         std::to_string(labels.size()) + " labels");
  }
  const std::size_t cols = logits.dim(1);
  std::vector<std::size_t> picks;
  picks.reserve(labels.size());
  for (std::size_t r = 0; r < labels.size(); ++r) {
    if (labels[r] >= cols) {
      throw DimensionError("cross_entropy: label " + std::to_string(labels[r]) +
                           " out of range for " + std::to_string(cols) + " classes");
    }
    picks.push_back(r * cols + labels[r]);
  }
  const Tensor logp = log_softmax_rows(logits);
  const auto lp = logp.data();
  double total = 0.0;
  for (auto p : picks) total -= lp[p];
  const double inv_b = 1.0 / static_cast<double>(labels.size());
  return make_result({1}, {total * inv_b}, "cross_entropy", {logp},
                     [picks = std::move(picks), inv_b](const Node& self) {
                       auto* gl = grad_of(self, 0);
                       if (!gl) return;
                       for (auto p : picks) (*gl)[p] -= self.grad[0] * inv_b;
                     });
}

Tensor kl_divergence(const Tensor& p_logits, const Tensor& q_logits, double temperature) {
  require_defined(p_logits, "kl_divergence");
  require_defined(q_logits, "kl_divergence");
  if (p_logits.shape() != q_logits.shape()) {
    throw DimensionError("kl_divergence: shapes " + shape_str(p_logits.shape()) + " and " +
                         shape_str(q_logits.shape()) + " differ");
  }
  if (!(temperature > 0.0)) throw ContractError("kl_divergence: temperature must be positive");
  const std::size_t rows = rows_of(p_logits, "kl_divergence").rows;
  const Tensor logp = log_softmax_rows(scale(p_logits, 1.0 / temperature));
  const Tensor logq = log_softmax_rows(scale(q_logits, 1.0 / temperature));
  // sum_j p_j (log p_j - log q_j), averaged over rows.
  const Tensor p = Tensor(logp.shape(), [&] {
    std::vector<double> v(logp.data().begin(), logp.data().end());
    for (auto& x : v) x = std::exp(x);
    return v;
  }());
  const auto lp = logp.data();
  const auto lq = logq.data();
  const auto pd = p.data();
  double total = 0.0;
  for (std::size_t i = 0; i < lp.size(); ++i) total += pd[i] * (lp[i] - lq[i]);
  const double inv_rows = 1.0 / static_cast<double>(rows);
  return make_result(
      {1}, {total * inv_rows}, "kl_divergence", {logp, logq},
      [inv_rows](const Node& self) {
        const auto& lp = self.parents[0]->data;
        const auto& lq = self.parents[1]->data;
        const double g = self.grad[0] * inv_rows;
        if (auto* gp = grad_of(self, 0)) {
          // d/d(log p_j) of sum_j p_j (log p_j - log q_j) = p_j (log p_j - log q_j + 1)
          for (std::size_t i = 0; i < lp.size(); ++i) {
            (*gp)[i] += g * std::exp(lp[i]) * (lp[i] - lq[i] + 1.0);
          }
        }
        if (auto* gq = grad_of(self, 1)) {
          for (std::size_t i = 0; i < lq.size(); ++i) (*gq)[i] -= g * std::exp(lp[i]);
        }
      });
}

}  // namespace lpa
