// SPDX-License-Identifier: Apache-2.0

#include "lpa/experiment.hpp"

#include <algorithm>
#include <charconv>
#include <cstdio>
#include <fstream>
#include <functional>
#include <numeric>
#include <sstream>

#include "json.hpp"
#include "lpa/autodiff.hpp"
#include "lpa/locality.hpp"

namespace lpa {

namespace fs = std::filesystem;
using Json = nlohmann::json;

BackboneConfig RunConfig::desk_model() {
  BackboneConfig m;
  m.image_size = 32;
  m.patch_size = 8;
  m.dim = 36;
  m.num_heads = 9;
  return m;
}

TrainConfig RunConfig::desk_train() {
  TrainConfig t;
  t.batch = 16;
  t.crop_step = 0;  // flip only; see the README on pad-crop at this data size
  return t;
}

CilConfig RunConfig::cil() const {
  CilConfig c;
  c.model = model;
  if (kind == "vanilla") c.model.lpa_layers = 0;
  c.train = train;
  c.base = base;
  c.increment = increment;
  c.capacity = capacity;
  c.classifier = classifier == "logits" ? Classifier::kLogits : Classifier::kNme;
  c.probe_per_class = probe_per_class;
  c.shuffle_classes = shuffle_classes;
  return c;
}

namespace {

std::string trim(std::string_view s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string_view::npos) return {};
  const auto e = s.find_last_not_of(" \t\r");
  return std::string(s.substr(b, e - b + 1));
}

std::string fmt_double(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

std::size_t to_size(const std::string& key, const std::string& v) {
  std::size_t out = 0;
  const auto [p, ec] = std::from_chars(v.data(), v.data() + v.size(), out);
  if (ec != std::errc{} || p != v.data() + v.size()) {
    throw ConfigError(key + ": expected a non-negative integer, got '" + v + "'");
  }
  return out;
}

double to_double(const std::string& key, const std::string& v) {
  try {
    std::size_t used = 0;
    const double out = std::stod(v, &used);
    if (used == v.size()) return out;
  } catch (const std::exception&) {
  }
  throw ConfigError(key + ": expected a number, got '" + v + "'");
}

bool to_bool(const std::string& key, const std::string& v) {
  if (v == "true" || v == "1") return true;
  if (v == "false" || v == "0") return false;
  throw ConfigError(key + ": expected true or false, got '" + v + "'");
}

std::string one_of(const std::string& key, const std::string& v, std::initializer_list<const char*> allowed) {
  for (const char* a : allowed) {
    if (v == a) return v;
  }
  std::string list;
  for (const char* a : allowed) list += (list.empty() ? "" : "|") + std::string(a);
  throw ConfigError(key + ": expected " + list + ", got '" + v + "'");
}

std::vector<std::uint64_t> to_seeds(const std::string& key, const std::string& v) {
  std::vector<std::uint64_t> out;
  std::stringstream ss(v);
  std::string item;
  while (std::getline(ss, item, ',')) {
    item = trim(item);
    std::uint64_t s = 0;
    const auto [p, ec] = std::from_chars(item.data(), item.data() + item.size(), s);
    if (item.empty() || ec != std::errc{} || p != item.data() + item.size()) {
      throw ConfigError(key + ": expected comma-separated seeds, got '" + v + "'");
    }
    out.push_back(s);
  }
  if (out.empty()) throw ConfigError(key + ": at least one seed is required");
  return out;
}

struct Field {
  const char* key;
  std::function<std::string(const RunConfig&)> get;
  std::function<void(RunConfig&, const std::string&)> set;
};

#define LPA_SIZE(k, member) \
  Field{k, [](const RunConfig& c) { return std::to_string(c.member); }, \
        [](RunConfig& c, const std::string& v) { c.member = to_size(k, v); }}
#define LPA_DOUBLE(k, member) \
  Field{k, [](const RunConfig& c) { return fmt_double(c.member); }, \
        [](RunConfig& c, const std::string& v) { c.member = to_double(k, v); }}
#define LPA_BOOL(k, member) \
  Field{k, [](const RunConfig& c) { return std::string(c.member ? "true" : "false"); }, \
        [](RunConfig& c, const std::string& v) { c.member = to_bool(k, v); }}
#define LPA_PATH(k, member) \
  Field{k, [](const RunConfig& c) { return c.member; }, [](RunConfig& c, const std::string& v) { c.member = v; }}
#define LPA_CHOICE(k, member, ...) \
  Field{k, [](const RunConfig& c) { return c.member; }, \
        [](RunConfig& c, const std::string& v) { c.member = one_of(k, v, {__VA_ARGS__}); }}

const std::vector<Field>& fields() {
  static const std::vector<Field> table{
      LPA_SIZE("scenario.base", base),
      LPA_SIZE("scenario.increment", increment),
      LPA_BOOL("scenario.shuffle", shuffle_classes),
      LPA_CHOICE("model.kind", kind, "lpa", "vanilla"),
      LPA_SIZE("model.channels", model.channels),
      LPA_SIZE("model.image_size", model.image_size),
      LPA_SIZE("model.patch_size", model.patch_size),
      LPA_SIZE("model.dim", model.dim),
      LPA_SIZE("model.heads", model.num_heads),
      LPA_SIZE("model.ffn_hidden", model.ffn_hidden),
      LPA_SIZE("model.lpa_layers", model.lpa_layers),
      LPA_DOUBLE("model.lambda0", model.lambda0),
      LPA_DOUBLE("model.alpha", model.alpha),
      LPA_DOUBLE("model.init_std", model.init_std),
      LPA_DOUBLE("model.input_mean", model.input_mean),
      LPA_DOUBLE("model.input_std", model.input_std),
      LPA_DOUBLE("optim.lr", train.lr),
      LPA_SIZE("optim.epochs", train.epochs),
      LPA_SIZE("optim.warmup_epochs", train.warmup_epochs),
      LPA_SIZE("optim.batch", train.batch),
      LPA_DOUBLE("optim.weight_decay", train.weight_decay),
      LPA_DOUBLE("optim.temperature", train.temperature),
      LPA_DOUBLE("optim.distill_weight", train.distill_weight),
      LPA_BOOL("augment.enabled", train.augment),
      LPA_SIZE("augment.crop_step", train.crop_step),
      LPA_SIZE("memory.capacity", capacity),
      LPA_CHOICE("eval.classifier", classifier, "nme", "logits"),
      LPA_SIZE("eval.probe_per_class", probe_per_class),
      Field{"seeds",
            [](const RunConfig& c) {
              std::string s;
              for (auto v : c.seeds) s += (s.empty() ? "" : ",") + std::to_string(v);
              return s;
            },
            [](RunConfig& c, const std::string& v) { c.seeds = to_seeds("seeds", v); }},
      LPA_CHOICE("data.source", source, "synthetic", "img1"),
      LPA_SIZE("data.classes", synth.num_classes),
      LPA_SIZE("data.per_class", synth.per_class),
      LPA_SIZE("data.test_per_class", test_per_class),
      LPA_SIZE("data.stamps", synth.stamps_per_image),
      LPA_DOUBLE("data.noise", synth.noise),
      LPA_SIZE("data.lattice", synth.lattice),
      LPA_PATH("data.train_path", train_path),
      LPA_PATH("data.test_path", test_path),
      LPA_PATH("output.dir", output_dir),
  };
  return table;
}

#undef LPA_SIZE
#undef LPA_DOUBLE
#undef LPA_BOOL
#undef LPA_PATH
#undef LPA_CHOICE

void set_field(RunConfig& config, const std::string& key, const std::string& value) {
  for (const auto& f : fields()) {
    if (key == f.key) {
      f.set(config, value);
      return;
    }
  }
  throw ConfigError("unknown config key '" + key + "'");
}

void validate(const RunConfig& c) {
  try {
    c.cil().model.validate();
  } catch (const DimensionError& e) {
    throw ConfigError(std::string("model: ") + e.what());
  }
  if (c.train.batch == 0) throw ConfigError("optim.batch must be positive");
  if (c.train.crop_step != 0 && 4 % c.train.crop_step != 0) {
    throw ConfigError("augment.crop_step must be 0, 1, 2 or 4");
  }
  if (c.source == "img1" && (c.train_path.empty() || c.test_path.empty())) {
    throw ConfigError("data.source = img1 needs data.train_path and data.test_path");
  }
  if (c.output_dir.empty()) throw ConfigError("output.dir must not be empty");
}

void write_text(const fs::path& path, const std::string& text) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError("cannot open " + path.string() + " for writing");
  out << text;
  if (!out) throw IoError("write failed for " + path.string());
}

fs::path prepare_dir(const fs::path& dir) {
  std::error_code ec;
  fs::create_directories(dir, ec);
  if (ec) throw IoError("cannot create " + dir.string() + ": " + ec.message());
  return dir;
}

fs::path seed_dir(const RunConfig& config, std::uint64_t seed) {
  return prepare_dir(fs::path(config.output_dir) / ("seed" + std::to_string(seed)));
}

std::string rel(const RunConfig& config, const fs::path& p) {
  return p.lexically_relative(config.output_dir).generic_string();
}

/// Nonlocality CSV + JSON and a checkpoint for one task; returns the paths.
Json emit_task(const RunConfig& config, const fs::path& dir, const TaskRecord& rec, const Backbone& model,
               const std::string& procedure) {
  const auto stem = procedure + "_task" + std::to_string(rec.task);
  const auto csv = dir / (stem + "_nonlocality.csv");
  const auto json = dir / (stem + "_nonlocality.json");
  const auto ckpt = dir / (stem + ".ckpt");
  std::ostringstream s;
  write_nonlocality_csv(s, std::span(&rec.nonlocality, 1));
  write_text(csv, s.str());
  write_text(json, nonlocality_json(rec.nonlocality));
  save_checkpoint(ckpt, model);
  return Json{{"task", rec.task},
              {"accuracy", rec.accuracy},
              {"epoch_loss", rec.log.epoch_loss},
              {"nonlocality_mean", rec.nonlocality.mean()},
              {"nonlocality_csv", rel(config, csv)},
              {"nonlocality_json", rel(config, json)},
              {"checkpoint", rel(config, ckpt)}};
}

Json log_header(const RunConfig& config, const std::string& command) {
  return Json{{"command", command}, {"config", config_text(config)}, {"seeds", config.seeds}};
}

fs::path finish_log(const RunConfig& config, Json log) {
  const fs::path dir = prepare_dir(config.output_dir);
  write_text(dir / "config.txt", config_text(config));
  const auto path = dir / "run_log.json";
  write_text(path, log.dump(2) + "\n");
  return path;
}

std::string ablation_csv(const std::string& name, const std::vector<AblationRow>& rows) {
  std::ostringstream out;
  out << name << ",seed,avg,last,forgetting,avg_task_mean\n";
  for (const auto& r : rows) {
    out << fmt_double(r.setting) << ',' << r.seed << ',' << fmt_double(r.metrics.avg) << ','
        << fmt_double(r.metrics.last) << ',' << fmt_double(r.metrics.forgetting) << ','
        << fmt_double(r.metrics.avg_task_mean) << '\n';
  }
  return out.str();
}

std::string summary_csv(const std::string& name, const std::vector<AblationSummary>& rows) {
  std::ostringstream out;
  out << name << ",seeds,avg_mean,last_mean,forgetting_mean\n";
  for (const auto& r : rows) {
    out << fmt_double(r.setting) << ',' << r.seeds << ',' << fmt_double(r.avg) << ',' << fmt_double(r.last)
        << ',' << fmt_double(r.forgetting) << '\n';
  }
  return out.str();
}

fs::path emit_ablation(const RunConfig& config, const std::string& command, const std::string& name,
                       const std::vector<AblationRow>& rows) {
  const fs::path dir = prepare_dir(config.output_dir);
  const auto table = dir / (command + ".csv");
  const auto summary = dir / (command + "_summary.csv");
  const auto means = summarize(rows);
  write_text(table, ablation_csv(name, rows));
  write_text(summary, summary_csv(name, means));
  Json log = log_header(config, command);
  Json out = Json::array();
  for (const auto& m : means) out.push_back({{name, m.setting}, {"seeds", m.seeds}, {"avg_mean", m.avg}});
  log["summary"] = out;
  log["table"] = rel(config, table);
  log["summary_table"] = rel(config, summary);
  return finish_log(config, log);
}

std::vector<AblationRow> ablate(const RunConfig& config, const std::vector<double>& settings,
                                const std::function<void(CilConfig&, double)>& apply) {
  std::vector<AblationRow> rows;
  for (double s : settings) {
    for (auto seed : config.seeds) {
      auto cil = config.cil();
      apply(cil, s);
      const auto data = load_datasets(config, seed);
      rows.push_back({s, seed, run_cil(cil, data.train, data.test, seed).metrics});
    }
  }
  return rows;
}

}  // namespace

RunConfig parse_config(std::string_view text, RunConfig base) {
  std::istringstream in{std::string(text)};
  std::string line;
  std::size_t number = 0;
  while (std::getline(in, line)) {
    ++number;
    if (const auto hash = line.find('#'); hash != std::string::npos) line.erase(hash);
    const auto t = trim(line);
    if (t.empty()) continue;
    const auto eq = t.find('=');
    if (eq == std::string::npos) {
      throw ConfigError("line " + std::to_string(number) + ": expected 'key = value'");
    }
    const auto key = trim(std::string_view(t).substr(0, eq));
    const auto value = trim(std::string_view(t).substr(eq + 1));
    try {
      set_field(base, key, value);
    } catch (const ConfigError& e) {
      throw ConfigError("line " + std::to_string(number) + ": " + e.what());
    }
  }
  validate(base);
  return base;
}

RunConfig load_config(const fs::path& path, RunConfig base) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open config " + path.string());
  std::stringstream ss;
  ss << in.rdbuf();
  return parse_config(ss.str(), std::move(base));
}

void apply_override(RunConfig& config, std::string_view assignment) {
  const auto eq = assignment.find('=');
  if (eq == std::string_view::npos) {
    throw ConfigError("override '" + std::string(assignment) + "' is not key=value");
  }
  set_field(config, trim(assignment.substr(0, eq)), trim(assignment.substr(eq + 1)));
  validate(config);
}

std::string config_text(const RunConfig& config) {
  std::string out;
  for (const auto& f : fields()) out += std::string(f.key) + " = " + f.get(config) + "\n";
  return out;
}

std::vector<std::string> config_keys() {
  std::vector<std::string> out;
  for (const auto& f : fields()) out.emplace_back(f.key);
  return out;
}

Datasets load_datasets(const RunConfig& config, std::uint64_t seed) {
  if (config.source == "img1") return {load_raw(config.train_path), load_raw(config.test_path)};
  SynthConfig train = config.synth;
  train.image_size = config.model.image_size;
  SynthConfig test = train;
  test.per_class = config.test_per_class;
  return {synth_local_textures(train, seed, "train"), synth_local_textures(test, seed, "test")};
}

std::vector<AblationSummary> summarize(const std::vector<AblationRow>& rows) {
  std::vector<AblationSummary> out;
  for (const auto& r : rows) {
    auto it = std::find_if(out.begin(), out.end(), [&](const auto& s) { return s.setting == r.setting; });
    if (it == out.end()) it = out.insert(out.end(), AblationSummary{r.setting});
    it->seeds += 1;
    it->avg += r.metrics.avg;
    it->last += r.metrics.last;
    it->forgetting += r.metrics.forgetting;
  }
  for (auto& s : out) {
    s.avg /= double(s.seeds);
    s.last /= double(s.seeds);
    s.forgetting /= double(s.seeds);
  }
  return out;
}

std::vector<AblationRow> ablate_lambda(const RunConfig& config, const std::vector<double>& lambdas) {
  return ablate(config, lambdas, [](CilConfig& c, double v) { c.model.lambda0 = v; });
}

std::vector<AblationRow> ablate_lpa_layers(const RunConfig& config, const std::vector<std::size_t>& counts) {
  std::vector<double> settings(counts.begin(), counts.end());
  for (auto n : counts) {
    if (n > kSelfAttentionBlocks) {
      throw ConfigError("LPA layer count " + std::to_string(n) + " exceeds " +
                        std::to_string(kSelfAttentionBlocks));
    }
  }
  return ablate(config, settings, [](CilConfig& c, double v) { c.model.lpa_layers = std::size_t(v); });
}

fs::path command_train_cil(const RunConfig& config) {
  Json log = log_header(config, "train-cil");
  Json runs = Json::array();
  for (auto seed : config.seeds) {
    const auto dir = seed_dir(config, seed);
    const auto data = load_datasets(config, seed);
    Json tasks = Json::array();
    const auto run = run_cil(config.cil(), data.train, data.test, seed,
                             [&](const TaskRecord& rec, const Backbone& model) {
                               tasks.push_back(emit_task(config, dir, rec, model, "cil"));
                             });
    const auto metrics_path = dir / "metrics.json";
    write_text(metrics_path, metrics_json(run, seed) + "\n");
    runs.push_back({{"seed", seed},
                    {"metrics", {{"last", run.metrics.last},
                                 {"avg", run.metrics.avg},
                                 {"avg_task_mean", run.metrics.avg_task_mean},
                                 {"forgetting", run.metrics.forgetting}}},
                    {"metrics_json", rel(config, metrics_path)},
                    {"tasks", tasks}});
  }
  log["runs"] = runs;
  return finish_log(config, log);
}

fs::path command_train_joint(const RunConfig& config) {
  Json log = log_header(config, "train-joint");
  Json runs = Json::array();
  for (auto seed : config.seeds) {
    const auto dir = seed_dir(config, seed);
    const auto data = load_datasets(config, seed);
    Json tasks = Json::array();
    run_joint(config.cil(), data.train, data.test, seed, false,
              [&](const TaskRecord& rec, const Backbone& model) {
                tasks.push_back(emit_task(config, dir, rec, model, "joint"));
              });
    runs.push_back({{"seed", seed}, {"tasks", tasks}});
  }
  log["runs"] = runs;
  return finish_log(config, log);
}

fs::path command_ablate_lambda(const RunConfig& config, const std::vector<double>& lambdas) {
  return emit_ablation(config, "ablate_lambda", "lambda0", ablate_lambda(config, lambdas));
}

fs::path command_ablate_lpa_layers(const RunConfig& config, const std::vector<std::size_t>& counts) {
  return emit_ablation(config, "ablate_lpa_layers", "lpa_layers", ablate_lpa_layers(config, counts));
}

fs::path command_rollout(const fs::path& checkpoint, const fs::path& images, std::size_t index, bool residual,
                         const fs::path& out_dir) {
  const auto model = load_checkpoint(checkpoint);
  const auto set = load_raw(images);
  if (index >= set.size()) {
    throw ConfigError("image index " + std::to_string(index) + " outside a set of " +
                      std::to_string(set.size()));
  }
  const auto& c = model.config();
  if (set.channels != c.channels || set.height != c.image_size || set.width != c.image_size) {
    throw ConfigError("images are " + std::to_string(set.channels) + "x" + std::to_string(set.height) + "x" +
                      std::to_string(set.width) + " but the model expects " + std::to_string(c.channels) + "x" +
                      std::to_string(c.image_size) + "x" + std::to_string(c.image_size));
  }
  const std::vector<std::size_t> one{index};
  NoGradGuard guard;
  const auto out = model.forward(set.batch(one), true);
  RolloutOptions opts;
  opts.residual = residual;
  const auto map = attention_rollout(out.trace, 0, out.trace.layers.size() - 1, model.grid(), opts);

  prepare_dir(out_dir);
  write_pgm(out_dir / "rollout.pgm", map.class_heat, map.grid_w, map.grid_h);
  const Json j{{"checkpoint", checkpoint.filename().string()},
               {"image", index},
               {"label", set.labels[index]},
               {"residual", residual},
               {"grid_h", map.grid_h},
               {"grid_w", map.grid_w},
               {"heat", map.class_heat}};
  const auto path = out_dir / "rollout.json";
  write_text(path, j.dump(2) + "\n");
  return path;
}

fs::path command_spectrum(const fs::path& checkpoint, const LabeledImageSet& images, const fs::path& out_dir,
                          std::size_t top) {
  const auto model = load_checkpoint(checkpoint);
  if (images.size() < 2) throw InsufficientSamplesError("spectrum needs at least two images");
  std::vector<double> reps;
  {
    NoGradGuard guard;
    constexpr std::size_t kBatch = 64;
    std::vector<std::size_t> idx(images.size());
    std::iota(idx.begin(), idx.end(), 0);
    for (std::size_t start = 0; start < idx.size(); start += kBatch) {
      const auto chunk = std::span(idx).subspan(start, std::min(kBatch, idx.size() - start));
      const auto r = model.forward(images.batch(chunk)).representation;
      reps.insert(reps.end(), r.data().begin(), r.data().end());
    }
  }
  const std::size_t d = model.config().dim;
  auto report = covariance_spectrum(Tensor({images.size(), d}, std::move(reps)));
  report.tag = checkpoint.filename().string();
  report = truncate_spectrum(std::move(report), std::min(top, d));
  prepare_dir(out_dir);
  const auto path = out_dir / "spectrum.json";
  write_text(path, spectrum_json(report) + "\n");
  return path;
}

}  // namespace lpa
