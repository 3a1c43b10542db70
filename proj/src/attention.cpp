// SPDX-License-Identifier: Apache-2.0

#include "lpa/attention.hpp"

#include <cmath>

#include "lpa/ops.hpp"

namespace lpa {

namespace {

Tensor normal_tensor(Shape shape, double stddev, Rng& rng) {
  std::normal_distribution<double> dist(0.0, stddev);
  std::vector<double> v(shape_numel(shape));
  for (auto& x : v) x = dist(rng);
  return Tensor(std::move(shape), std::move(v), true);
}

// Promotes [N × d] to [1 × N × d]; returns whether it did.
std::pair<Tensor, bool> as_batched(const Tensor& x, std::size_t dim, const char* op) {
  if (x.rank() == 2 && x.dim(1) == dim) return {reshape(x, {1, x.dim(0), dim}), true};
  if (x.rank() == 3 && x.dim(2) == dim) return {x, false};
  throw DimensionError(std::string(op) + ": input " + shape_str(x.shape()) +
                       " does not have width " + std::to_string(dim));
}

// [B × T × d] -> [B × T × d_h] projection through W [d × d_h].
Tensor project(const Tensor& x3, const Tensor& w) {
  const std::size_t b = x3.dim(0), t = x3.dim(1), d = x3.dim(2);
  return reshape(matmul(reshape(x3, {b * t, d}), w), {b, t, w.dim(1)});
}

}  // namespace

std::vector<std::array<double, 3>> init_positional_vectors(std::size_t num_heads, double alpha) {
  std::vector<std::array<double, 3>> out(num_heads, {0.0, 0.0, 0.0});
  for (std::size_t h = 0; h < num_heads && h < kHeadOffsets.size(); ++h) {
    out[h] = {-alpha, 2.0 * alpha * kHeadOffsets[h][0], 2.0 * alpha * kHeadOffsets[h][1]};
  }
  return out;
}

std::vector<std::pair<std::string, Tensor>> VanillaLayer::named_parameters() const {
  std::vector<std::pair<std::string, Tensor>> out;
  for (std::size_t h = 0; h < num_heads; ++h) {
    out.emplace_back("w_q." + std::to_string(h), w_q[h]);
    out.emplace_back("w_k." + std::to_string(h), w_k[h]);
    out.emplace_back("w_v." + std::to_string(h), w_v[h]);
  }
  out.emplace_back("w_o", w_o);
  out.emplace_back("b_o", b_o);
  return out;
}

VanillaLayer VanillaLayer::create(std::size_t dim, std::size_t num_heads, double init_std, Rng& rng) {
  if (num_heads == 0 || dim % num_heads != 0) {
    throw DimensionError("attention width " + std::to_string(dim) + " not divisible by " +
                         std::to_string(num_heads) + " heads");
  }
  VanillaLayer layer;
  layer.dim = dim;
  layer.num_heads = num_heads;
  const std::size_t dh = dim / num_heads;
  for (std::size_t h = 0; h < num_heads; ++h) {
    layer.w_q.push_back(normal_tensor({dim, dh}, init_std, rng));
    layer.w_k.push_back(normal_tensor({dim, dh}, init_std, rng));
    layer.w_v.push_back(normal_tensor({dim, dh}, init_std, rng));
  }
  layer.w_o = normal_tensor({dim, dim}, init_std, rng);
  layer.b_o = Tensor::zeros({dim}, true);
  return layer;
}

std::vector<std::pair<std::string, Tensor>> LpaLayer::named_parameters() const {
  auto out = attention.named_parameters();
  for (std::size_t h = 0; h < num_heads(); ++h) {
    out.emplace_back("lambda." + std::to_string(h), lambda[h]);
    out.emplace_back("v." + std::to_string(h), v[h]);
  }
  return out;
}

LpaLayer LpaLayer::create(std::size_t dim, std::size_t num_heads, double init_std, double lambda0,
                          double alpha, Rng& rng) {
  LpaLayer layer;
  layer.attention = VanillaLayer::create(dim, num_heads, init_std, rng);
  const auto vs = init_positional_vectors(num_heads, alpha);
  for (std::size_t h = 0; h < num_heads; ++h) {
    layer.lambda.push_back(Tensor({1}, {lambda0}, true));
    layer.v.push_back(Tensor({3}, {vs[h][0], vs[h][1], vs[h][2]}, true));
    layer.alpha.push_back(alpha);
  }
  return layer;
}

const VanillaLayer& base_of(const SelfAttention& layer) {
  if (const auto* lpa = std::get_if<LpaLayer>(&layer)) return lpa->attention;
  return std::get<VanillaLayer>(layer);
}

Tensor LayerTrace::map(std::size_t h, std::size_t b) const {
  const Tensor& t = heads.at(h);
  return reshape(slice(t, 0, b, b + 1), {t.dim(1), t.dim(2)});
}

Tensor LayerTrace::head_mean(std::size_t b) const {
  NoGradGuard guard;
  Tensor acc = map(0, b);
  for (std::size_t h = 1; h < heads.size(); ++h) acc = add(acc, map(h, b));
  return scale(acc, 1.0 / static_cast<double>(heads.size()));
}

Tensor vanilla_scores(const Tensor& x, const VanillaLayer& layer, std::size_t head) {
  if (head >= layer.num_heads) {
    throw DimensionError("head " + std::to_string(head) + " out of range for " +
                         std::to_string(layer.num_heads) + " heads");
  }
  auto [x3, promoted] = as_batched(x, layer.dim, "vanilla_scores");
  const Tensor q = project(x3, layer.w_q[head]);
  const Tensor k = project(x3, layer.w_k[head]);
  Tensor scores = scale(matmul(q, transpose(k)), 1.0 / std::sqrt(double(layer.head_dim())));
  if (promoted) scores = reshape(scores, {x.dim(0), x.dim(0)});
  return scores;
}

Tensor lpa_map(const Tensor& scores, const PatchGrid& grid, const Tensor& lambda, const Tensor& v) {
  const std::size_t n = grid.size();
  const auto& s = scores.shape();
  const bool ok = (s.size() == 2 || s.size() == 3) && s[s.size() - 1] == n && s[s.size() - 2] == n;
  if (!ok) {
    throw DimensionError("lpa_map: scores " + shape_str(s) + " do not match a grid of " +
                         std::to_string(n) + " patches");
  }
  if (lambda.numel() != 1 || v.numel() != 3) {
    throw DimensionError("lpa_map: expected scalar lambda and 3-vector v, got " +
                         shape_str(lambda.shape()) + " and " + shape_str(v.shape()));
  }
  const Tensor bias = reshape(matmul(grid.encoding_matrix, reshape(v, {3, 1})), {n, n});
  return softmax_rows(add(mul(scores, lambda), bias));
}

Tensor attention_forward(const Tensor& x, const SelfAttention& layer, const PatchGrid& grid,
                         LayerTrace* trace) {
  const VanillaLayer& base = base_of(layer);
  auto [x3, promoted] = as_batched(x, base.dim, "attention_forward");
  const std::size_t batch = x3.dim(0), n = x3.dim(1);
  if (n != grid.size()) {
    throw DimensionError("attention_forward: " + std::to_string(n) + " tokens for a grid of " +
                         std::to_string(grid.size()) + " patches");
  }
  const LpaLayer* lpa = std::get_if<LpaLayer>(&layer);
  const double inv_sqrt = 1.0 / std::sqrt(double(base.head_dim()));
  std::vector<Tensor> outputs;
  outputs.reserve(base.num_heads);
  for (std::size_t h = 0; h < base.num_heads; ++h) {
    const Tensor q = project(x3, base.w_q[h]);
    const Tensor k = project(x3, base.w_k[h]);
    const Tensor v = project(x3, base.w_v[h]);
    const Tensor scores = scale(matmul(q, transpose(k)), inv_sqrt);
    const Tensor map = lpa ? lpa_map(scores, grid, lpa->lambda[h], lpa->v[h]) : softmax_rows(scores);
    if (trace) trace->heads.push_back(map.detach());
    outputs.push_back(matmul(map, v));
  }
  const Tensor merged = reshape(concat(outputs, 2), {batch * n, base.dim});
  Tensor out = add(matmul(merged, base.w_o), base.b_o);
  return reshape(out, promoted ? Shape{n, base.dim} : Shape{batch, n, base.dim});
}

Tensor class_attention_forward(const Tensor& tokens, const VanillaLayer& layer, LayerTrace* trace) {
  auto [t3, promoted] = as_batched(tokens, layer.dim, "class_attention_forward");
  const std::size_t batch = t3.dim(0);
  const Tensor cls = slice(t3, 1, 0, 1);  // [B × 1 × d]
  const double inv_sqrt = 1.0 / std::sqrt(double(layer.head_dim()));
  if (trace) trace->class_attention = true;
  std::vector<Tensor> outputs;
  outputs.reserve(layer.num_heads);
  for (std::size_t h = 0; h < layer.num_heads; ++h) {
    const Tensor q = project(cls, layer.w_q[h]);
    const Tensor k = project(t3, layer.w_k[h]);
    const Tensor v = project(t3, layer.w_v[h]);
    const Tensor map = softmax_rows(scale(matmul(q, transpose(k)), inv_sqrt));  // [B × 1 × N+1]
    if (trace) trace->heads.push_back(map.detach());
    outputs.push_back(matmul(map, v));
  }
  const Tensor merged = reshape(concat(outputs, 2), {batch, layer.dim});
  Tensor out = add(matmul(merged, layer.w_o), layer.b_o);
  return promoted ? reshape(out, {layer.dim}) : out;
}

}  // namespace lpa
