// SPDX-License-Identifier: Apache-2.0
//
// Class-incremental learning harness: scenarios, rehearsal memory with
// herding, distillation-regularized training, NME classification, the
// accuracy matrix with Last/Avg/Forgetting, and the joint-training baseline.
//
// Inside the harness labels are positions in the scenario's class order,
// so task t always owns a contiguous block of classifier columns.

#pragma once

#include <cstddef>
#include <cstdint>
#include <functional>
#include <map>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include "lpa/backbone.hpp"
#include "lpa/dataset.hpp"
#include "lpa/locality.hpp"
#include "lpa/tensor.hpp"

namespace lpa {

class ScenarioError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};
class QuotaError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};
class CapacityError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};
class ClassifierError : public std::logic_error {
 public:
  using std::logic_error::logic_error;
};
class MetricsError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};
class TrainingError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

struct Scenario {
  std::size_t num_classes = 0;
  std::size_t base = 0;
  std::size_t increment = 0;
  std::uint64_t seed = 0;
  std::vector<std::size_t> order;              // original label at each position
  std::vector<std::vector<std::size_t>> tasks;  // original labels per task

  std::size_t num_tasks() const { return tasks.size(); }
  /// First position (remapped label) owned by task t.
  std::size_t offset(std::size_t task) const;
  /// Remapped labels seen after task t: [0, offset(t) + |C_t|).
  std::size_t classes_seen(std::size_t task) const { return offset(task) + tasks.at(task).size(); }
  /// "B<base>-<increment>".
  std::string name() const;
};

/// Seeded shuffle of the class ids (identity order when `shuffle` is false),
/// split into [base, increment, increment, ...].
Scenario build_scenario(std::size_t num_classes, std::size_t base, std::size_t increment,
                        std::uint64_t seed, bool shuffle = true);

/// Relabels a set so that each label becomes its position in the scenario order.
LabeledImageSet remap_labels(const LabeledImageSet& set, const Scenario& scenario);

/// iCaRL herding: step k picks the unchosen row minimizing
/// ‖μ - (Σ chosen + x) / k‖; ties (squared distances equal to 1e-12
/// relative) go to the lower index.
std::vector<std::size_t> herding_select(const Tensor& features, std::size_t m);

/// Representations of the selected images, L2-normalized per row, [M × d].
Tensor extract_features(const Backbone& model, const LabeledImageSet& set,
                        std::span<const std::size_t> indices, std::size_t batch = 64);

struct ClassExemplars {
  std::vector<std::vector<double>> images;  // herding order
  std::vector<double> mean;                 // L2-normalized exemplar mean
};

struct RehearsalMemory {
  std::size_t capacity = 200;
  std::map<std::size_t, ClassExemplars> classes;  // by remapped label

  std::size_t size() const;
  /// floor(capacity / classes_seen); throws CapacityError when it is 0.
  std::size_t quota(std::size_t classes_seen) const;
  /// Stored exemplars as an image set (labels are the map keys).
  LabeledImageSet as_dataset(std::size_t channels, std::size_t height, std::size_t width,
                             std::size_t num_classes) const;
};

/// Truncates old classes to the new quota, herding-selects exemplars for
/// `new_classes` from `data`, then refreshes every class mean with `model`.
void update_memory(RehearsalMemory& memory, const LabeledImageSet& data,
                   std::span<const std::size_t> new_classes, const Backbone& model);

/// Nearest exemplar mean (Euclidean) to the L2-normalized representation.
std::size_t nme_classify(std::span<const double> representation, const RehearsalMemory& memory);

/// T² · KL(softmax(old/T) ‖ softmax(new[:, :C_old]/T)), mean over rows.
Tensor distillation_loss(const Tensor& new_logits, const Tensor& old_logits, double temperature);

/// Adam with bias correction; learning rate supplied per step.
class Adam {
 public:
  explicit Adam(std::vector<Tensor> params, double beta1 = 0.9, double beta2 = 0.999,
                double eps = 1e-8, double weight_decay = 0.0);
  void step(double lr);
  void zero_grad();

 private:
  std::vector<Tensor> params_;
  std::vector<std::vector<double>> m_, v_;
  double beta1_, beta2_, eps_, weight_decay_;
  std::size_t t_ = 0;
};

/// Linear warmup over the first `warmup` steps, then
/// lr0 · ½(1 + cos(π · (step - warmup) / (total - warmup))).
double cosine_lr(double lr0, std::size_t step, std::size_t total, std::size_t warmup = 0);

struct TrainConfig {
  double lr = 5e-4;
  std::size_t epochs = 20;
  std::size_t warmup_epochs = 0;
  std::size_t batch = 64;
  double temperature = 2.0;
  double distill_weight = 1.0;
  double weight_decay = 0.0;
  bool augment = true;
  std::size_t crop_step = 1;
};

struct TrainLog {
  std::vector<double> epoch_loss;
  std::size_t steps = 0;
};

/// Random horizontal flip, then a random crop from a 4-pixel zero padding.
/// Crop offsets are multiples of `crop_step` (1, 2 or 4); 0 disables the crop.
void augment_batch(std::vector<double>& pixels, std::size_t count, std::size_t channels,
                   std::size_t height, std::size_t width, Rng& rng, std::size_t crop_step = 1);

/// Appends one classifier column per class in `new_classes`, then trains on
/// `data` plus the memory exemplars. With `old_model` the loss adds the
/// distillation term on the old model's columns.
TrainLog train_task(Backbone& model, const LabeledImageSet& data, std::size_t new_classes,
                    const RehearsalMemory& memory, const Backbone* old_model,
                    const TrainConfig& config, std::uint64_t seed, std::size_t task);

enum class Classifier { kNme, kLogits };

/// Row acc[t][k] is the accuracy on task k's test split after task t (k ≤ t).
struct AccuracyMatrix {
  std::vector<std::vector<double>> acc;
  std::vector<std::size_t> test_sizes;  // per task
};

struct CilMetrics {
  double last = 0.0;
  double avg = 0.0;            // mean of the overall accuracy after each task
  double avg_task_mean = 0.0;  // mean over t of the unweighted per-task mean
  double forgetting = 0.0;
};

CilMetrics metrics(const AccuracyMatrix& matrix, std::size_t num_tasks);

/// Per-task accuracy over tasks 0..t of `test` (remapped labels).
std::vector<double> evaluate(const Backbone& model, const RehearsalMemory* memory,
                             const LabeledImageSet& test, const Scenario& scenario, std::size_t t,
                             Classifier classifier, std::vector<std::size_t>* test_sizes = nullptr);

struct CilConfig {
  BackboneConfig model;
  TrainConfig train;
  std::size_t base = 2;
  std::size_t increment = 2;
  std::size_t capacity = 200;
  Classifier classifier = Classifier::kNme;
  std::size_t probe_per_class = 4;  // test images per seen class in the trace probe
  bool shuffle_classes = true;
};

struct TaskRecord {
  std::size_t task = 0;
  TrainLog log;
  NonlocalityReport nonlocality;
  std::vector<double> accuracy;
};

struct CilRun {
  Scenario scenario;
  AccuracyMatrix matrix;
  CilMetrics metrics;
  std::vector<TaskRecord> tasks;
  Backbone model;
  RehearsalMemory memory;
};

/// Fixed probe batch: the first `per_class` test images of every class seen
/// after task t, ordered by class. `test` carries remapped labels.
std::vector<std::size_t> probe_indices(const LabeledImageSet& test, std::size_t classes_seen,
                                       std::size_t per_class);

using TaskCallback = std::function<void(const TaskRecord&, const Backbone&)>;

/// Full protocol over `train`/`test` with original labels.
CilRun run_cil(const CilConfig& config, const LabeledImageSet& train, const LabeledImageSet& test,
               std::uint64_t seed, const TaskCallback& on_task = {});

/// Fresh model trained on the union of tasks 0..t (remapped `train`).
Backbone joint_train(const BackboneConfig& model_config, const LabeledImageSet& train,
                     const Scenario& scenario, std::size_t t, const TrainConfig& config,
                     std::uint64_t seed);

struct JointRun {
  Scenario scenario;
  std::vector<TaskRecord> tasks;  // one per comparison point
  Backbone model;                 // trained at the last comparison point
};

/// Joint baseline at every task boundary, or only the final one when
/// `final_only` is set.
JointRun run_joint(const CilConfig& config, const LabeledImageSet& train,
                   const LabeledImageSet& test, std::uint64_t seed, bool final_only = false,
                   const TaskCallback& on_task = {});

/// Scenario, accuracy matrix rows and metrics as JSON.
std::string metrics_json(const CilRun& run, std::uint64_t seed);

}  // namespace lpa
