// SPDX-License-Identifier: Apache-2.0

#include "lpa/cil.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>
#include <numeric>
#include <optional>

#include "json.hpp"
#include "lpa/autodiff.hpp"
#include "lpa/ops.hpp"
#include "lpa/rng.hpp"

namespace lpa {

namespace {

void normalize(std::span<double> v) {
  double n = 0.0;
  for (double x : v) n += x * x;
  n = std::sqrt(n);
  if (n > 0.0) {
    for (double& x : v) x /= n;
  }
}

std::vector<std::size_t> iota_range(std::size_t begin, std::size_t end) {
  std::vector<std::size_t> out(end - begin);
  std::iota(out.begin(), out.end(), begin);
  return out;
}

Tensor features_of_images(const Backbone& model, const std::vector<std::vector<double>>& images,
                          std::size_t channels, std::size_t height, std::size_t width) {
  LabeledImageSet set;
  set.channels = channels;
  set.height = height;
  set.width = width;
  set.num_classes = 1;
  for (const auto& img : images) {
    set.pixels.insert(set.pixels.end(), img.begin(), img.end());
    set.labels.push_back(0);
  }
  const auto idx = iota_range(0, images.size());
  return extract_features(model, set, idx);
}

std::size_t argmax(std::span<const double> row) {
  std::size_t best = 0;
  for (std::size_t j = 1; j < row.size(); ++j) {
    if (row[j] > row[best]) best = j;
  }
  return best;
}

TaskRecord probe_record(const Backbone& model, const LabeledImageSet& test, std::size_t classes_seen,
                        std::size_t per_class, std::size_t task, const char* procedure,
                        std::uint64_t seed) {
  TaskRecord rec;
  rec.task = task;
  const auto probe = probe_indices(test, classes_seen, per_class);
  if (!probe.empty()) {
    NoGradGuard guard;
    const auto out = model.forward(test.batch(probe), true);
    rec.nonlocality = nonlocality(out.trace, model.grid());
  }
  rec.nonlocality.task = task;
  rec.nonlocality.procedure = procedure;
  rec.nonlocality.seed = seed;
  return rec;
}

}  // namespace

std::size_t Scenario::offset(std::size_t task) const {
  if (task >= tasks.size()) {
    throw ScenarioError("task " + std::to_string(task) + " outside a " + std::to_string(tasks.size()) +
                        "-task scenario");
  }
  return task == 0 ? 0 : base + (task - 1) * increment;
}

std::string Scenario::name() const {
  return "B" + std::to_string(base) + "-" + std::to_string(increment);
}

Scenario build_scenario(std::size_t num_classes, std::size_t base, std::size_t increment,
                        std::uint64_t seed, bool shuffle) {
  const auto where = "scenario B" + std::to_string(base) + "-" + std::to_string(increment) + " over " +
                     std::to_string(num_classes) + " classes";
  if (base == 0 || base > num_classes) throw ScenarioError(where + ": base must be in [1, classes]");
  const std::size_t rest = num_classes - base;
  if (increment == 0 ? rest != 0 : rest % increment != 0) {
    throw ScenarioError(where + ": classes do not split into whole increments");
  }
  Scenario s;
  s.num_classes = num_classes;
  s.base = base;
  s.increment = increment;
  s.seed = seed;
  s.order = iota_range(0, num_classes);
  if (shuffle) {
    Rng rng = make_stream(seed, "scenario");
    std::shuffle(s.order.begin(), s.order.end(), rng);
  }
  s.tasks.emplace_back(s.order.begin(), s.order.begin() + static_cast<std::ptrdiff_t>(base));
  for (std::size_t start = base; start < num_classes; start += increment) {
    s.tasks.emplace_back(s.order.begin() + static_cast<std::ptrdiff_t>(start),
                         s.order.begin() + static_cast<std::ptrdiff_t>(start + increment));
  }
  return s;
}

LabeledImageSet remap_labels(const LabeledImageSet& set, const Scenario& scenario) {
  std::vector<std::size_t> position(scenario.num_classes);
  for (std::size_t i = 0; i < scenario.order.size(); ++i) position[scenario.order[i]] = i;
  LabeledImageSet out = set;
  out.num_classes = scenario.num_classes;
  for (auto& l : out.labels) {
    if (l >= scenario.num_classes) {
      throw ScenarioError("label " + std::to_string(l) + " outside the scenario's " +
                          std::to_string(scenario.num_classes) + " classes");
    }
    l = position[l];
  }
  return out;
}

std::vector<std::size_t> herding_select(const Tensor& features, std::size_t m) {
  constexpr double kTieTolerance = 1e-12;
  if (features.rank() != 2) throw DimensionError("herding: features must be [M x d]");
  const std::size_t rows = features.dim(0), d = features.dim(1);
  if (m == 0 || m > rows) {
    throw QuotaError("herding quota " + std::to_string(m) + " outside [1, " + std::to_string(rows) + "]");
  }
  const auto x = features.data();
  std::vector<double> mu(d, 0.0), acc(d, 0.0);
  for (std::size_t r = 0; r < rows; ++r)
    for (std::size_t c = 0; c < d; ++c) mu[c] += x[r * d + c];
  for (auto& v : mu) v /= static_cast<double>(rows);

  std::vector<bool> taken(rows, false);
  std::vector<std::size_t> chosen;
  for (std::size_t k = 1; k <= m; ++k) {
    std::size_t best = rows;
    double best_dist = 0.0;
    for (std::size_t r = 0; r < rows; ++r) {
      if (taken[r]) continue;
      double dist = 0.0;
      for (std::size_t c = 0; c < d; ++c) {
        const double diff = mu[c] - (acc[c] + x[r * d + c]) / static_cast<double>(k);
        dist += diff * diff;
      }
      // Distances within rounding of each other are ties (e.g. the two
      // points of a pair are exactly equidistant from their midpoint).
      if (best == rows || dist < best_dist - kTieTolerance * best_dist) {
        best = r;
        best_dist = dist;
      }
    }
    taken[best] = true;
    chosen.push_back(best);
    for (std::size_t c = 0; c < d; ++c) acc[c] += x[best * d + c];
  }
  return chosen;
}

Tensor extract_features(const Backbone& model, const LabeledImageSet& set,
                        std::span<const std::size_t> indices, std::size_t batch) {
  if (indices.empty()) throw DimensionError("feature extraction over no images");
  NoGradGuard guard;
  const std::size_t d = model.config().dim;
  std::vector<double> out;
  out.reserve(indices.size() * d);
  for (std::size_t start = 0; start < indices.size(); start += batch) {
    const auto chunk = indices.subspan(start, std::min(batch, indices.size() - start));
    const auto rep = model.forward(set.batch(chunk)).representation;
    out.insert(out.end(), rep.data().begin(), rep.data().end());
  }
  for (std::size_t r = 0; r < indices.size(); ++r) normalize(std::span(out).subspan(r * d, d));
  return Tensor({indices.size(), d}, std::move(out));
}

std::size_t RehearsalMemory::size() const {
  std::size_t n = 0;
  for (const auto& [label, ex] : classes) n += ex.images.size();
  return n;
}

std::size_t RehearsalMemory::quota(std::size_t classes_seen) const {
  const std::size_t q = classes_seen == 0 ? 0 : capacity / classes_seen;
  if (q == 0) {
    throw CapacityError("memory of " + std::to_string(capacity) + " exemplars cannot hold " +
                        std::to_string(classes_seen) + " classes");
  }
  return q;
}

LabeledImageSet RehearsalMemory::as_dataset(std::size_t channels, std::size_t height,
                                            std::size_t width, std::size_t num_classes) const {
  LabeledImageSet set;
  set.channels = channels;
  set.height = height;
  set.width = width;
  set.num_classes = num_classes;
  set.split = "memory";
  for (const auto& [label, ex] : classes) {
    for (const auto& img : ex.images) {
      set.pixels.insert(set.pixels.end(), img.begin(), img.end());
      set.labels.push_back(label);
    }
  }
  return set;
}

void update_memory(RehearsalMemory& memory, const LabeledImageSet& data,
                   std::span<const std::size_t> new_classes, const Backbone& model) {
  std::size_t seen = memory.classes.size();
  for (auto c : new_classes) seen += memory.classes.count(c) ? 0 : 1;
  const std::size_t q = memory.quota(seen);
  for (auto& [label, ex] : memory.classes) {
    if (ex.images.size() > q) ex.images.resize(q);
  }
  for (auto c : new_classes) {
    const auto idx = data.indices_of(c);
    if (idx.empty()) throw CapacityError("no training images for class " + std::to_string(c));
    const auto order = herding_select(extract_features(model, data, idx), std::min(q, idx.size()));
    auto& ex = memory.classes[c];
    ex.images.clear();
    for (auto k : order) {
      const auto img = data.image(idx[k]);
      ex.images.emplace_back(img.begin(), img.end());
    }
  }
  for (auto& [label, ex] : memory.classes) {
    const auto f = features_of_images(model, ex.images, data.channels, data.height, data.width);
    const std::size_t d = f.dim(1);
    ex.mean.assign(d, 0.0);
    for (std::size_t r = 0; r < f.dim(0); ++r)
      for (std::size_t c = 0; c < d; ++c) ex.mean[c] += f.data()[r * d + c];
    for (auto& v : ex.mean) v /= static_cast<double>(f.dim(0));
    normalize(ex.mean);
  }
}

std::size_t nme_classify(std::span<const double> representation, const RehearsalMemory& memory) {
  if (memory.classes.empty()) throw ClassifierError("nearest-mean classifier on an empty memory");
  std::vector<double> q(representation.begin(), representation.end());
  normalize(q);
  std::size_t best = 0;
  double best_dist = 0.0;
  bool first = true;
  for (const auto& [label, ex] : memory.classes) {
    if (ex.mean.size() != q.size()) {
      throw DimensionError("class mean of width " + std::to_string(ex.mean.size()) +
                           " against a representation of width " + std::to_string(q.size()));
    }
    double dist = 0.0;
    for (std::size_t c = 0; c < q.size(); ++c) dist += (q[c] - ex.mean[c]) * (q[c] - ex.mean[c]);
    if (first || dist < best_dist) {
      best = label;
      best_dist = dist;
      first = false;
    }
  }
  return best;
}

Tensor distillation_loss(const Tensor& new_logits, const Tensor& old_logits, double temperature) {
  if (new_logits.rank() != 2 || old_logits.rank() != 2 || new_logits.dim(0) != old_logits.dim(0) ||
      new_logits.dim(1) < old_logits.dim(1)) {
    throw DimensionError("distillation: new logits " + shape_str(new_logits.shape()) +
                         " do not cover old logits " + shape_str(old_logits.shape()));
  }
  const Tensor head = new_logits.dim(1) == old_logits.dim(1)
                          ? new_logits
                          : slice(new_logits, 1, 0, old_logits.dim(1));
  return scale(kl_divergence(old_logits, head, temperature), temperature * temperature);
}

Adam::Adam(std::vector<Tensor> params, double beta1, double beta2, double eps, double weight_decay)
    : params_(std::move(params)), beta1_(beta1), beta2_(beta2), eps_(eps), weight_decay_(weight_decay) {
  for (const auto& p : params_) {
    m_.emplace_back(p.numel(), 0.0);
    v_.emplace_back(p.numel(), 0.0);
  }
}

void Adam::step(double lr) {
  ++t_;
  const double c1 = 1.0 - std::pow(beta1_, static_cast<double>(t_));
  const double c2 = 1.0 - std::pow(beta2_, static_cast<double>(t_));
  for (std::size_t i = 0; i < params_.size(); ++i) {
    auto& p = params_[i];
    if (!p.has_grad()) continue;
    const auto g = p.grad();
    auto w = p.mutable_data();
    auto& m = m_[i];
    auto& v = v_[i];
    for (std::size_t k = 0; k < w.size(); ++k) {
      m[k] = beta1_ * m[k] + (1.0 - beta1_) * g[k];
      v[k] = beta2_ * v[k] + (1.0 - beta2_) * g[k] * g[k];
      const double update = (m[k] / c1) / (std::sqrt(v[k] / c2) + eps_) + weight_decay_ * w[k];
      w[k] -= lr * update;
    }
  }
}

void Adam::zero_grad() {
  for (auto& p : params_) p.zero_grad();
}

double cosine_lr(double lr0, std::size_t step, std::size_t total, std::size_t warmup) {
  if (step < warmup) return lr0 * static_cast<double>(step + 1) / static_cast<double>(warmup);
  if (total <= warmup) return lr0;
  const double progress = static_cast<double>(step - warmup) / static_cast<double>(total - warmup);
  return lr0 * 0.5 * (1.0 + std::cos(std::numbers::pi * progress));
}

void augment_batch(std::vector<double>& pixels, std::size_t count, std::size_t channels,
                   std::size_t height, std::size_t width, Rng& rng, std::size_t crop_step) {
  constexpr int kPad = 4;
  if (crop_step != 0 && kPad % crop_step != 0) {
    throw TrainingError("crop step " + std::to_string(crop_step) + " does not divide the 4-pixel padding");
  }
  const int step = crop_step == 0 ? 1 : static_cast<int>(crop_step);
  const int reach = crop_step == 0 ? 0 : kPad / step;
  const std::size_t plane = height * width, numel = channels * plane;
  std::bernoulli_distribution flip(0.5);
  std::uniform_int_distribution<int> shift(-reach, reach);
  std::vector<double> src(numel);
  for (std::size_t i = 0; i < count; ++i) {
    double* img = pixels.data() + i * numel;
    std::copy(img, img + numel, src.begin());
    const bool f = flip(rng);
    const int dy = shift(rng) * step, dx = shift(rng) * step;
    for (std::size_t c = 0; c < channels; ++c) {
      for (std::size_t y = 0; y < height; ++y) {
        for (std::size_t x = 0; x < width; ++x) {
          const long sy = static_cast<long>(y) + dy;
          long sx = static_cast<long>(x) + dx;
          double v = 0.0;
          if (sy >= 0 && sy < long(height) && sx >= 0 && sx < long(width)) {
            if (f) sx = long(width) - 1 - sx;
            v = src[c * plane + std::size_t(sy) * width + std::size_t(sx)];
          }
          img[c * plane + y * width + x] = v;
        }
      }
    }
  }
}

TrainLog train_task(Backbone& model, const LabeledImageSet& data, std::size_t new_classes,
                    const RehearsalMemory& memory, const Backbone* old_model,
                    const TrainConfig& config, std::uint64_t seed, std::size_t task) {
  if (data.size() == 0) throw TrainingError("task " + std::to_string(task) + " has no training data");
  if (config.batch == 0) throw TrainingError("batch size must be positive");
  Rng head_rng = make_stream(seed, "head", task);
  model.add_classes(new_classes, head_rng);

  LabeledImageSet set = data;
  if (memory.size() > 0) {
    const auto mem = memory.as_dataset(data.channels, data.height, data.width, data.num_classes);
    set.pixels.insert(set.pixels.end(), mem.pixels.begin(), mem.pixels.end());
    set.labels.insert(set.labels.end(), mem.labels.begin(), mem.labels.end());
  }
  for (auto l : set.labels) {
    if (l >= model.num_classes()) {
      throw TrainingError("label " + std::to_string(l) + " has no classifier column (" +
                          std::to_string(model.num_classes()) + " columns)");
    }
  }

  Rng shuffle_rng = make_stream(seed, "shuffle", task);
  Rng augment_rng = make_stream(seed, "augment", task);
  Adam adam(model.parameters(), 0.9, 0.999, 1e-8, config.weight_decay);
  adam.zero_grad();

  const std::size_t m = set.size(), numel = set.image_numel();
  const std::size_t per_epoch = (m + config.batch - 1) / config.batch;
  const std::size_t total = per_epoch * config.epochs;
  const std::size_t warmup = per_epoch * std::min(config.warmup_epochs, config.epochs);
  std::vector<std::size_t> order = iota_range(0, m);
  TrainLog log;
  for (std::size_t epoch = 0; epoch < config.epochs; ++epoch) {
    std::shuffle(order.begin(), order.end(), shuffle_rng);
    double epoch_loss = 0.0;
    for (std::size_t start = 0; start < m; start += config.batch) {
      const std::size_t b = std::min(config.batch, m - start);
      std::vector<double> pixels(b * numel);
      std::vector<std::size_t> labels(b);
      for (std::size_t i = 0; i < b; ++i) {
        const auto img = set.image(order[start + i]);
        std::copy(img.begin(), img.end(), pixels.begin() + static_cast<std::ptrdiff_t>(i * numel));
        labels[i] = set.labels[order[start + i]];
      }
      if (config.augment) augment_batch(pixels, b, set.channels, set.height, set.width, augment_rng, config.crop_step);
      const Tensor images({b, set.channels, set.height, set.width}, std::move(pixels));

      const auto out = model.forward(images);
      Tensor loss = cross_entropy(out.logits, labels);
      if (old_model && old_model->num_classes() > 0) {
        Tensor old_logits;
        {
          NoGradGuard guard;
          old_logits = old_model->forward(images).logits;
        }
        loss = add(loss, scale(distillation_loss(out.logits, old_logits, config.temperature),
                               config.distill_weight));
      }
      backward(loss);
      adam.step(cosine_lr(config.lr, log.steps, total, warmup));
      adam.zero_grad();
      ++log.steps;
      epoch_loss += loss.item() * static_cast<double>(b);
    }
    log.epoch_loss.push_back(epoch_loss / static_cast<double>(m));
  }
  return log;
}

CilMetrics metrics(const AccuracyMatrix& matrix, std::size_t num_tasks) {
  if (num_tasks == 0 || matrix.acc.size() != num_tasks || matrix.test_sizes.size() < num_tasks) {
    throw MetricsError("accuracy matrix does not cover " + std::to_string(num_tasks) + " tasks");
  }
  for (std::size_t t = 0; t < num_tasks; ++t) {
    if (matrix.acc[t].size() != t + 1) {
      throw MetricsError("accuracy row " + std::to_string(t) + " has " +
                         std::to_string(matrix.acc[t].size()) + " entries, expected " +
                         std::to_string(t + 1));
    }
    for (double a : matrix.acc[t]) {
      if (!(a >= 0.0 && a <= 1.0)) throw MetricsError("accuracy outside [0, 1]");
    }
  }
  auto overall = [&](std::size_t t) {
    double hit = 0.0, n = 0.0;
    for (std::size_t k = 0; k <= t; ++k) {
      hit += matrix.acc[t][k] * static_cast<double>(matrix.test_sizes[k]);
      n += static_cast<double>(matrix.test_sizes[k]);
    }
    if (n == 0.0) throw MetricsError("no test samples after task " + std::to_string(t));
    return hit / n;
  };
  CilMetrics out;
  const std::size_t last = num_tasks - 1;
  out.last = overall(last);
  for (std::size_t t = 0; t < num_tasks; ++t) {
    out.avg += overall(t);
    out.avg_task_mean += std::accumulate(matrix.acc[t].begin(), matrix.acc[t].end(), 0.0) /
                         static_cast<double>(t + 1);
  }
  out.avg /= static_cast<double>(num_tasks);
  out.avg_task_mean /= static_cast<double>(num_tasks);
  if (last > 0) {
    for (std::size_t k = 0; k < last; ++k) {
      double worst = 0.0;
      for (std::size_t i = k; i < last; ++i) worst = std::max(worst, matrix.acc[i][k] - matrix.acc[last][k]);
      out.forgetting += worst;
    }
    out.forgetting /= static_cast<double>(last);
  }
  return out;
}

std::vector<double> evaluate(const Backbone& model, const RehearsalMemory* memory,
                             const LabeledImageSet& test, const Scenario& scenario, std::size_t t,
                             Classifier classifier, std::vector<std::size_t>* test_sizes) {
  const std::size_t seen = scenario.classes_seen(t);
  std::vector<std::size_t> idx;
  for (std::size_t i = 0; i < test.size(); ++i) {
    if (test.labels[i] < seen) idx.push_back(i);
  }
  std::vector<std::size_t> predicted(idx.size());
  if (!idx.empty()) {
    if (classifier == Classifier::kNme) {
      if (!memory) throw ClassifierError("nearest-mean evaluation without a memory");
      const auto f = extract_features(model, test, idx);
      const std::size_t d = f.dim(1);
      for (std::size_t r = 0; r < idx.size(); ++r) predicted[r] = nme_classify(f.data().subspan(r * d, d), *memory);
    } else {
      NoGradGuard guard;
      constexpr std::size_t kBatch = 64;
      for (std::size_t start = 0; start < idx.size(); start += kBatch) {
        const auto chunk = std::span(idx).subspan(start, std::min(kBatch, idx.size() - start));
        const auto logits = model.forward(test.batch(chunk)).logits;
        const std::size_t c = logits.dim(1);
        for (std::size_t r = 0; r < chunk.size(); ++r) predicted[start + r] = argmax(logits.data().subspan(r * c, c));
      }
    }
  }
  std::vector<double> hits(t + 1, 0.0), counts(t + 1, 0.0);
  for (std::size_t r = 0; r < idx.size(); ++r) {
    const std::size_t label = test.labels[idx[r]];
    std::size_t k = 0;
    while (k < t && label >= scenario.offset(k + 1)) ++k;
    counts[k] += 1.0;
    if (predicted[r] == label) hits[k] += 1.0;
  }
  std::vector<double> acc(t + 1, 0.0);
  if (test_sizes) test_sizes->assign(t + 1, 0);
  for (std::size_t k = 0; k <= t; ++k) {
    if (counts[k] == 0.0) throw MetricsError("task " + std::to_string(k) + " has no test images");
    acc[k] = hits[k] / counts[k];
    if (test_sizes) (*test_sizes)[k] = static_cast<std::size_t>(counts[k]);
  }
  return acc;
}

std::vector<std::size_t> probe_indices(const LabeledImageSet& test, std::size_t classes_seen,
                                       std::size_t per_class) {
  std::vector<std::size_t> out;
  for (std::size_t c = 0; c < classes_seen; ++c) {
    const auto idx = test.indices_of(c);
    for (std::size_t i = 0; i < std::min(per_class, idx.size()); ++i) out.push_back(idx[i]);
  }
  return out;
}

CilRun run_cil(const CilConfig& config, const LabeledImageSet& train, const LabeledImageSet& test,
               std::uint64_t seed, const TaskCallback& on_task) {
  CilRun run{build_scenario(train.num_classes, config.base, config.increment, seed, config.shuffle_classes),
             {}, {}, {}, Backbone::create(config.model, seed), RehearsalMemory{config.capacity, {}}};
  const auto& sc = run.scenario;
  const auto train_r = remap_labels(train, sc);
  const auto test_r = remap_labels(test, sc);
  std::optional<Backbone> old;
  for (std::size_t t = 0; t < sc.num_tasks(); ++t) {
    const auto classes = iota_range(sc.offset(t), sc.classes_seen(t));
    const auto task_data = train_r.subset(train_r.indices_of(classes));
    auto log = train_task(run.model, task_data, classes.size(), run.memory, old ? &*old : nullptr,
                          config.train, seed, t);
    update_memory(run.memory, task_data, classes, run.model);
    std::vector<std::size_t> sizes;
    run.matrix.acc.push_back(evaluate(run.model, &run.memory, test_r, sc, t, config.classifier, &sizes));
    run.matrix.test_sizes = sizes;

    auto rec = probe_record(run.model, test_r, sc.classes_seen(t), config.probe_per_class, t, "cil", seed);
    rec.log = std::move(log);
    rec.accuracy = run.matrix.acc.back();
    run.tasks.push_back(std::move(rec));
    if (on_task) on_task(run.tasks.back(), run.model);
    old = run.model.clone(false);
  }
  run.metrics = metrics(run.matrix, sc.num_tasks());
  return run;
}

Backbone joint_train(const BackboneConfig& model_config, const LabeledImageSet& train,
                     const Scenario& scenario, std::size_t t, const TrainConfig& config,
                     std::uint64_t seed) {
  const auto classes = iota_range(0, scenario.classes_seen(t));
  const auto data = train.subset(train.indices_of(classes));
  Backbone model = Backbone::create(model_config, seed);
  train_task(model, data, classes.size(), RehearsalMemory{}, nullptr, config, seed, t);
  return model;
}

JointRun run_joint(const CilConfig& config, const LabeledImageSet& train, const LabeledImageSet& test,
                   std::uint64_t seed, bool final_only, const TaskCallback& on_task) {
  JointRun run{build_scenario(train.num_classes, config.base, config.increment, seed, config.shuffle_classes),
               {}, Backbone::create(config.model, seed)};
  const auto& sc = run.scenario;
  const auto train_r = remap_labels(train, sc);
  const auto test_r = remap_labels(test, sc);
  for (std::size_t t = final_only ? sc.num_tasks() - 1 : 0; t < sc.num_tasks(); ++t) {
    run.model = joint_train(config.model, train_r, sc, t, config.train, seed);
    auto rec = probe_record(run.model, test_r, sc.classes_seen(t), config.probe_per_class, t, "joint", seed);
    rec.accuracy = evaluate(run.model, nullptr, test_r, sc, t, Classifier::kLogits);
    run.tasks.push_back(std::move(rec));
    if (on_task) on_task(run.tasks.back(), run.model);
  }
  return run;
}

std::string metrics_json(const CilRun& run, std::uint64_t seed) {
  using Json = nlohmann::json;
  const auto& sc = run.scenario;
  Json j;
  j["seed"] = seed;
  j["scenario"] = {{"name", sc.name()},      {"num_classes", sc.num_classes}, {"base", sc.base},
                   {"increment", sc.increment}, {"order", sc.order},           {"tasks", sc.tasks}};
  j["accuracy_matrix"] = run.matrix.acc;
  j["test_sizes"] = run.matrix.test_sizes;
  j["metrics"] = {{"last", run.metrics.last},
                  {"avg", run.metrics.avg},
                  {"avg_task_mean", run.metrics.avg_task_mean},
                  {"forgetting", run.metrics.forgetting}};
  return j.dump(2);
}

}  // namespace lpa
