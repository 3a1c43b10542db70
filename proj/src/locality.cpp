// SPDX-License-Identifier: Apache-2.0

#include "lpa/locality.hpp"

#include <algorithm>
#include <cctype>
#include <cmath>
#include <fstream>
#include <map>
#include <numeric>
#include <tuple>

#include "json.hpp"

namespace lpa {

namespace {

using Json = nlohmann::json;

// [N × N] distance table for the grid.
std::vector<double> distance_table(const PatchGrid& grid) {
  const std::size_t n = grid.size();
  std::vector<double> out(n * n);
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = 0; j < n; ++j) out[i * n + j] = grid.distance(i, j);
  return out;
}

double weighted_distance(std::span<const double> map, std::span<const double> dist) {
  return std::inner_product(map.begin(), map.end(), dist.begin(), 0.0);
}

std::vector<double> matmul_square(const std::vector<double>& a, const std::vector<double>& b,
                                  std::size_t n) {
  std::vector<double> c(n * n, 0.0);
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t k = 0; k < n; ++k) {
      const double aik = a[i * n + k];
      for (std::size_t j = 0; j < n; ++j) c[i * n + j] += aik * b[k * n + j];
    }
  return c;
}

std::vector<double> layer_mean_map(const LayerTrace& layer, std::size_t sample) {
  const Tensor& first = layer.heads.front();
  const std::size_t rows = first.dim(1), cols = first.dim(2), stride = rows * cols;
  if (sample >= first.dim(0)) {
    throw LayerRangeError("rollout sample " + std::to_string(sample) + " outside batch of " +
                          std::to_string(first.dim(0)));
  }
  std::vector<double> acc(stride, 0.0);
  for (const auto& h : layer.heads) {
    auto d = h.data().subspan(sample * stride, stride);
    for (std::size_t k = 0; k < stride; ++k) acc[k] += d[k];
  }
  for (auto& x : acc) x /= static_cast<double>(layer.heads.size());
  return acc;
}

}  // namespace

double NonlocalityReport::mean() const {
  if (per_layer.empty()) return 0.0;
  return std::accumulate(per_layer.begin(), per_layer.end(), 0.0) /
         static_cast<double>(per_layer.size());
}

double map_nonlocality(const Tensor& map, const PatchGrid& grid) {
  const std::size_t n = grid.size();
  const bool ok = (map.rank() == 2 || map.rank() == 3) && map.dim(map.rank() - 1) == n &&
                  map.dim(map.rank() - 2) == n;
  if (!ok) {
    throw DimensionError("nonlocality: map " + shape_str(map.shape()) + " does not match a grid of " +
                         std::to_string(n) + " patches");
  }
  const auto dist = distance_table(grid);
  const std::size_t batch = map.rank() == 3 ? map.dim(0) : 1;
  const auto data = map.data();
  double total = 0.0;
  for (std::size_t b = 0; b < batch; ++b) total += weighted_distance(data.subspan(b * n * n, n * n), dist);
  return total / static_cast<double>(n * batch);
}

NonlocalityReport nonlocality(const AttentionTrace& trace, const PatchGrid& grid) {
  NonlocalityReport report;
  for (const auto& layer : trace.layers) {
    if (layer.class_attention) continue;
    std::vector<double> heads;
    for (const auto& h : layer.heads) heads.push_back(map_nonlocality(h, grid));
    const double m = std::accumulate(heads.begin(), heads.end(), 0.0) / static_cast<double>(heads.size());
    report.per_head.push_back(std::move(heads));
    report.per_layer.push_back(m);
  }
  return report;
}

std::vector<Tensor> rollout_chain(const std::vector<Tensor>& maps, bool residual) {
  if (maps.empty()) throw LayerRangeError("rollout over an empty layer range");
  const std::size_t n = maps.front().dim(0);
  std::vector<Tensor> out;
  std::vector<double> acc;
  for (const auto& m : maps) {
    if (m.rank() != 2 || m.dim(0) != n || m.dim(1) != n) {
      throw DimensionError("rollout: map " + shape_str(m.shape()) + " is not " + std::to_string(n) +
                           "x" + std::to_string(n));
    }
    std::vector<double> a(m.data().begin(), m.data().end());
    if (residual) {
      for (auto& x : a) x *= 0.5;
      for (std::size_t i = 0; i < n; ++i) a[i * n + i] += 0.5;
    }
    acc = acc.empty() ? std::move(a) : matmul_square(a, acc, n);
    out.emplace_back(Shape{n, n}, acc);
  }
  return out;
}

RolloutMap attention_rollout(const AttentionTrace& trace, std::size_t from_layer,
                             std::size_t to_layer, const PatchGrid& grid,
                             const RolloutOptions& options) {
  const std::size_t layers = trace.layers.size();
  if (from_layer > to_layer || to_layer >= layers) {
    throw LayerRangeError("rollout range [" + std::to_string(from_layer) + ", " +
                          std::to_string(to_layer) + "] invalid for " + std::to_string(layers) +
                          " layers");
  }
  const bool ends_on_class = trace.layers[to_layer].class_attention;
  const std::size_t last_self = ends_on_class ? to_layer : to_layer + 1;
  if (from_layer >= last_self) throw LayerRangeError("rollout range holds no self-attention layer");

  const std::size_t n = grid.size();
  std::vector<Tensor> maps;
  for (std::size_t l = from_layer; l < last_self; ++l) {
    if (trace.layers[l].class_attention) {
      throw LayerRangeError("class-attention layer " + std::to_string(l) + " inside rollout range");
    }
    auto m = layer_mean_map(trace.layers[l], options.sample);
    if (m.size() != n * n) throw DimensionError("rollout: layer map does not match the patch grid");
    maps.emplace_back(Shape{n, n}, std::move(m));
  }

  RolloutMap out;
  out.grid_h = grid.grid_h;
  out.grid_w = grid.grid_w;
  out.cumulative = rollout_chain(maps, options.residual);
  if (ends_on_class) {
    const auto row = layer_mean_map(trace.layers[to_layer], options.sample);
    if (row.size() != n + 1) throw DimensionError("rollout: class row does not cover N+1 tokens");
    // Column 0 is the class token itself; the patch columns carry the heat.
    const auto acc = out.result().data();
    out.class_heat.assign(n, 0.0);
    for (std::size_t k = 0; k < n; ++k)
      for (std::size_t j = 0; j < n; ++j) out.class_heat[j] += row[k + 1] * acc[k * n + j];
  }
  return out;
}

double SpectrumReport::top_mass(std::size_t k) const {
  if (trace <= 0.0) return 0.0;
  k = std::min(k, eigenvalues.size());
  return std::accumulate(eigenvalues.begin(), eigenvalues.begin() + static_cast<std::ptrdiff_t>(k), 0.0) /
         trace;
}

std::vector<double> symmetric_eigenvalues(std::vector<double> a, std::size_t n) {
  if (a.size() != n * n) throw DimensionError("eigensolver: buffer does not hold an n×n matrix");
  auto at = [&](std::size_t i, std::size_t j) -> double& { return a[i * n + j]; };
  for (int sweep = 0; sweep < 100; ++sweep) {
    double off = 0.0, diag = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
      diag += at(i, i) * at(i, i);
      for (std::size_t j = i + 1; j < n; ++j) off += at(i, j) * at(i, j);
    }
    if (off <= 1e-30 * std::max(diag, 1e-300)) break;
    for (std::size_t p = 0; p < n; ++p) {
      for (std::size_t q = p + 1; q < n; ++q) {
        const double apq = at(p, q);
        if (apq == 0.0) continue;
        const double theta = (at(q, q) - at(p, p)) / (2.0 * apq);
        const double t = (theta >= 0 ? 1.0 : -1.0) / (std::abs(theta) + std::sqrt(theta * theta + 1.0));
        const double c = 1.0 / std::sqrt(t * t + 1.0), s = t * c;
        for (std::size_t k = 0; k < n; ++k) {
          const double akp = at(k, p), akq = at(k, q);
          at(k, p) = c * akp - s * akq;
          at(k, q) = s * akp + c * akq;
        }
        for (std::size_t k = 0; k < n; ++k) {
          const double apk = at(p, k), aqk = at(q, k);
          at(p, k) = c * apk - s * aqk;
          at(q, k) = s * apk + c * aqk;
        }
      }
    }
  }
  std::vector<double> eig(n);
  for (std::size_t i = 0; i < n; ++i) eig[i] = at(i, i);
  std::sort(eig.begin(), eig.end(), std::greater<>());
  return eig;
}

std::vector<double> covariance(const Tensor& representations) {
  if (representations.rank() != 2) {
    throw DimensionError("covariance: expected [M × d], got " + shape_str(representations.shape()));
  }
  const std::size_t m = representations.dim(0), d = representations.dim(1);
  if (m < 2) throw InsufficientSamplesError("covariance needs at least 2 samples, got " + std::to_string(m));
  const auto x = representations.data();
  std::vector<double> mu(d, 0.0);
  for (std::size_t r = 0; r < m; ++r)
    for (std::size_t c = 0; c < d; ++c) mu[c] += x[r * d + c];
  for (auto& v : mu) v /= static_cast<double>(m);
  std::vector<double> cov(d * d, 0.0);
  for (std::size_t r = 0; r < m; ++r)
    for (std::size_t i = 0; i < d; ++i) {
      const double xi = x[r * d + i] - mu[i];
      for (std::size_t j = i; j < d; ++j) cov[i * d + j] += xi * (x[r * d + j] - mu[j]);
    }
  for (std::size_t i = 0; i < d; ++i)
    for (std::size_t j = i; j < d; ++j) {
      cov[i * d + j] /= static_cast<double>(m - 1);
      cov[j * d + i] = cov[i * d + j];
    }
  return cov;
}

SpectrumReport covariance_spectrum(const Tensor& representations) {
  auto cov = covariance(representations);
  const std::size_t d = representations.dim(1);
  SpectrumReport report;
  report.samples = representations.dim(0);
  report.dim = d;
  for (std::size_t i = 0; i < d; ++i) report.trace += cov[i * d + i];
  report.eigenvalues = symmetric_eigenvalues(std::move(cov), d);
  return report;
}

SpectrumReport truncate_spectrum(SpectrumReport report, std::size_t k) {
  if (report.eigenvalues.size() > k) report.eigenvalues.resize(k);
  return report;
}

double NonlocalityGap::layer_mean(std::size_t task) const {
  double total = 0.0;
  std::size_t count = 0;
  for (const auto& e : seed_mean) {
    if (e.task != task) continue;
    total += e.gap;
    ++count;
  }
  if (count == 0) throw AlignmentError("no gap recorded for task " + std::to_string(task));
  return total / static_cast<double>(count);
}

NonlocalityGap nonlocality_gap(std::span<const NonlocalityReport> cil,
                               std::span<const NonlocalityReport> joint) {
  using Key = std::pair<std::size_t, std::uint64_t>;  // task, seed
  auto index = [](std::span<const NonlocalityReport> reports, const char* side) {
    std::map<Key, const NonlocalityReport*> out;
    for (const auto& r : reports) {
      if (!out.emplace(Key{r.task, r.seed}, &r).second) {
        throw AlignmentError(std::string(side) + " reports repeat task " + std::to_string(r.task) +
                             ", seed " + std::to_string(r.seed));
      }
    }
    return out;
  };
  const auto a = index(cil, "cil");
  const auto b = index(joint, "joint");
  if (a.size() != b.size()) throw AlignmentError("cil and joint series differ in length");

  NonlocalityGap gap;
  std::map<std::pair<std::size_t, std::size_t>, std::pair<double, std::size_t>> sums;
  for (const auto& [key, rc] : a) {
    auto it = b.find(key);
    if (it == b.end()) {
      throw AlignmentError("no joint report for task " + std::to_string(key.first) + ", seed " +
                           std::to_string(key.second));
    }
    const auto* rj = it->second;
    if (rc->num_layers() != rj->num_layers()) {
      throw AlignmentError("layer count mismatch at task " + std::to_string(key.first));
    }
    for (std::size_t l = 0; l < rc->num_layers(); ++l) {
      const double g = rc->per_layer[l] - rj->per_layer[l];
      gap.per_seed.push_back({key.first, l, key.second, g});
      auto& s = sums[{key.first, l}];
      s.first += g;
      ++s.second;
    }
  }
  std::sort(gap.per_seed.begin(), gap.per_seed.end(), [](const GapEntry& x, const GapEntry& y) {
    return std::tie(x.task, x.layer, x.seed) < std::tie(y.task, y.layer, y.seed);
  });
  for (const auto& [key, s] : sums) {
    gap.seed_mean.push_back({key.first, key.second, 0, s.first / static_cast<double>(s.second)});
  }
  return gap;
}

void write_nonlocality_csv(std::ostream& out, std::span<const NonlocalityReport> reports) {
  out << kReportCsvHeader << '\n';
  out.precision(17);
  for (const auto& r : reports) {
    for (std::size_t l = 0; l < r.num_layers(); ++l) {
      for (std::size_t h = 0; h < r.per_head[l].size(); ++h) {
        out << l << ',' << h << ',' << r.task << ',' << r.procedure << ',' << r.seed << ','
            << r.per_head[l][h] << '\n';
      }
      out << l << ",mean," << r.task << ',' << r.procedure << ',' << r.seed << ',' << r.per_layer[l]
          << '\n';
    }
  }
}

std::string nonlocality_json(const NonlocalityReport& report) {
  Json j;
  j["task"] = report.task;
  j["procedure"] = report.procedure;
  j["seed"] = report.seed;
  j["per_head"] = report.per_head;
  j["per_layer"] = report.per_layer;
  j["mean"] = report.mean();
  return j.dump(2);
}

std::string spectrum_json(const SpectrumReport& report) {
  Json j;
  j["tag"] = report.tag;
  j["seed"] = report.seed;
  j["samples"] = report.samples;
  j["dim"] = report.dim;
  j["trace"] = report.trace;
  j["eigenvalues"] = report.eigenvalues;
  j["eigenvalue_sum"] = std::accumulate(report.eigenvalues.begin(), report.eigenvalues.end(), 0.0);
  return j.dump(2);
}

std::vector<std::uint8_t> encode_pgm(std::span<const double> values, std::size_t width,
                                     std::size_t height) {
  if (width == 0 || height == 0 || values.size() != width * height) {
    throw DimensionError("pgm: " + std::to_string(values.size()) + " values for a " +
                         std::to_string(width) + "x" + std::to_string(height) + " image");
  }
  const std::string header = "P5\n" + std::to_string(width) + " " + std::to_string(height) + "\n255\n";
  std::vector<std::uint8_t> out(header.begin(), header.end());
  const auto [lo, hi] = std::minmax_element(values.begin(), values.end());
  const double range = *hi - *lo;
  for (double v : values) {
    const double t = range > 0.0 ? (v - *lo) / range : 0.0;
    out.push_back(static_cast<std::uint8_t>(std::lround(t * 255.0)));
  }
  return out;
}

void write_pgm(const std::filesystem::path& path, std::span<const double> values, std::size_t width,
               std::size_t height) {
  const auto bytes = encode_pgm(values, width, height);
  std::ofstream f(path, std::ios::binary);
  if (!f) throw IoError("cannot open " + path.string() + " for writing");
  f.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
  if (!f) throw IoError("write failed for " + path.string());
}

PgmImage decode_pgm(std::span<const std::uint8_t> bytes) {
  std::size_t pos = 0;
  if (bytes.size() < 2 || bytes[0] != 'P' || bytes[1] != '5') throw FormatError("pgm: missing P5 magic", 0);
  pos = 2;
  auto skip_space = [&] {
    const std::size_t start = pos;
    while (pos < bytes.size()) {
      if (bytes[pos] == '#') {
        while (pos < bytes.size() && bytes[pos] != '\n') ++pos;
      } else if (std::isspace(bytes[pos])) {
        ++pos;
      } else {
        break;
      }
    }
    if (pos == start) throw FormatError("pgm: expected whitespace", pos);
  };
  auto number = [&] {
    const std::size_t start = pos;
    std::size_t v = 0;
    while (pos < bytes.size() && std::isdigit(bytes[pos])) v = v * 10 + (bytes[pos++] - '0');
    if (pos == start) throw FormatError("pgm: expected a number", pos);
    return v;
  };
  PgmImage img;
  skip_space();
  img.width = number();
  skip_space();
  img.height = number();
  skip_space();
  img.maxval = number();
  if (img.width == 0 || img.height == 0) throw FormatError("pgm: zero dimension", pos);
  if (img.maxval == 0 || img.maxval > 255) throw FormatError("pgm: unsupported maxval", pos);
  if (pos >= bytes.size() || !std::isspace(bytes[pos])) throw FormatError("pgm: expected whitespace", pos);
  ++pos;
  const std::size_t n = img.width * img.height;
  if (bytes.size() - pos != n) throw FormatError("pgm: raster size mismatch", pos);
  img.pixels.assign(bytes.begin() + static_cast<std::ptrdiff_t>(pos), bytes.end());
  for (std::size_t i = 0; i < n; ++i) {
    if (img.pixels[i] > img.maxval) throw FormatError("pgm: sample above maxval", pos + i);
  }
  return img;
}

}  // namespace lpa
