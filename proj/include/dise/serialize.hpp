#pragma once

#include <algorithm>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <string>
#include <vector>

#include "json.hpp"

#include "dise/data.hpp"
#include "dise/errors.hpp"
#include "dise/metrics.hpp"
#include "dise/model.hpp"
#include "dise/optim.hpp"

namespace dise {

using json = nlohmann::json;

inline constexpr const char* kCheckpointFormat = "dise-ckpt/1";
inline constexpr const char* kHistoryFormat = "dise-history/1";
inline constexpr const char* kReportFormat = "dise-report/1";

namespace detail {

/// Typed field read; type errors are reported against the field name.
template <class T>
T field(const json& j, const std::string& key) {
  if (!j.is_object() || !j.contains(key)) throw ConfigError(key, "missing");
  try {
    const json& v = j.at(key);
    if constexpr (std::is_same_v<T, bool>) {
      if (!v.is_boolean()) throw ConfigError(key, "expected a boolean");
    } else if constexpr (std::is_integral_v<T>) {
      if (!v.is_number_integer()) throw ConfigError(key, "expected an integer");
      if constexpr (std::is_unsigned_v<T>)
        if (!v.is_number_unsigned() && v.get<std::int64_t>() < 0) throw ConfigError(key, "must be >= 0");
    } else if constexpr (std::is_floating_point_v<T>) {
      if (!v.is_number()) throw ConfigError(key, "expected a number");
    }
    return v.get<T>();
  } catch (const json::exception& e) {
    throw ConfigError(key, e.what());
  }
}

template <class T>
void maybe(const json& j, const std::string& key, T& out) {
  if (j.contains(key)) out = field<T>(j, key);
}

inline void write_text(const std::filesystem::path& path, const std::string& text) {
  std::ofstream os(path, std::ios::binary);
  if (!os) throw Error("cannot open " + path.string() + " for writing");
  os << text;
  if (!os) throw Error("write failed: " + path.string());
}

inline json read_json(const std::filesystem::path& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw Error("cannot open " + path.string());
  try {
    return json::parse(is);
  } catch (const json::parse_error& e) {
    throw FormatError(path.string() + ": " + e.what());
  }
}

inline void expect_format(const json& j, const char* format) {
  if (!j.is_object() || !j.contains("format") || j["format"] != format)
    throw FormatError(std::string("expected format \"") + format + "\"");
}

inline std::string dump(const json& j) { return j.dump(2) + "\n"; }

}  // namespace detail

// ---------------------------------------------------------------------------
// Configurations

inline json to_json(const ModelConfig& c) {
  return {{"input_dim", c.input_dim},     {"hidden_dims", c.hidden_dims}, {"feature_dim", c.feature_dim},
          {"num_classes", c.num_classes}, {"bn_momentum", c.bn_momentum}, {"bn_eps", c.bn_eps},
          {"clamp_limit", c.clamp_limit}, {"temperature_scaling", c.temperature_scaling}};
}

/// Reads the model keys present in `j` on top of `c`.
inline void merge_model_config(const json& j, ModelConfig& c) {
  using detail::maybe;
  maybe(j, "input_dim", c.input_dim);
  maybe(j, "hidden_dims", c.hidden_dims);
  maybe(j, "feature_dim", c.feature_dim);
  maybe(j, "num_classes", c.num_classes);
  maybe(j, "bn_momentum", c.bn_momentum);
  maybe(j, "bn_eps", c.bn_eps);
  maybe(j, "clamp_limit", c.clamp_limit);
  maybe(j, "temperature_scaling", c.temperature_scaling);
}

inline json to_json(const TrainConfig& c) {
  return {{"batch_size", c.batch_size}, {"epochs", c.epochs},   {"momentum", c.momentum},
          {"peak_lr", c.peak_lr},       {"min_lr", c.min_lr},   {"warmup_steps", c.warmup_steps},
          {"lambda", c.lambda},         {"seed", c.seed},       {"use_dise", c.use_dise}};
}

inline void merge_train_config(const json& j, TrainConfig& c) {
  using detail::maybe;
  maybe(j, "batch_size", c.batch_size);
  maybe(j, "epochs", c.epochs);
  maybe(j, "momentum", c.momentum);
  maybe(j, "peak_lr", c.peak_lr);
  maybe(j, "min_lr", c.min_lr);
  maybe(j, "warmup_steps", c.warmup_steps);
  maybe(j, "lambda", c.lambda);
  maybe(j, "seed", c.seed);
  maybe(j, "use_dise", c.use_dise);
}

inline json to_json(const CorruptionSpec& c) {
  return {{"corrupted_fraction", c.corrupted_fraction},
          {"noise_sigma", c.noise_sigma},
          {"label_flip_prob", c.label_flip_prob}};
}

/// Fields absent from `j` keep their values from `base`.
inline CorruptionSpec corruption_from_json(const json& j, const std::string& name, CorruptionSpec base = {}) {
  if (!j.is_object()) throw ConfigError(name, "expected an object");
  CorruptionSpec c = base;
  try {
    detail::maybe(j, "corrupted_fraction", c.corrupted_fraction);
    detail::maybe(j, "noise_sigma", c.noise_sigma);
    detail::maybe(j, "label_flip_prob", c.label_flip_prob);
  } catch (const ConfigError& e) {
    throw ConfigError(name + "." + e.field(), e.what());
  }
  return c;
}

inline json to_json(const DatasetSpec& s) {
  return {{"input_dim", s.input_dim},
          {"train_per_class", s.train_per_class},
          {"dev_per_class", s.dev_per_class},
          {"test_per_class", s.test_per_class},
          {"separation", s.separation},
          {"base_sigma", s.base_sigma},
          {"train", to_json(s.train)},
          {"dev", to_json(s.dev)},
          {"test", to_json(s.test)},
          {"seed", s.seed}};
}

/// Keys absent from `j` keep their defaults; unknown keys are rejected.
inline DatasetSpec dataset_spec_from_json(const json& j) {
  if (!j.is_object()) throw ConfigError("spec", "expected a JSON object");
  static const std::vector<std::string> known{"input_dim",  "train_per_class", "dev_per_class", "test_per_class",
                                              "separation", "base_sigma",      "train",         "dev",
                                              "test",       "seed"};
  for (const auto& [k, v] : j.items())
    if (std::find(known.begin(), known.end(), k) == known.end()) throw ConfigError(k, "unknown field");
  DatasetSpec s;
  using detail::maybe;
  maybe(j, "input_dim", s.input_dim);
  maybe(j, "train_per_class", s.train_per_class);
  maybe(j, "dev_per_class", s.dev_per_class);
  maybe(j, "test_per_class", s.test_per_class);
  maybe(j, "separation", s.separation);
  maybe(j, "base_sigma", s.base_sigma);
  maybe(j, "seed", s.seed);
  if (j.contains("train")) s.train = corruption_from_json(j["train"], "train", s.train);
  if (j.contains("dev")) s.dev = corruption_from_json(j["dev"], "dev", s.dev);
  if (j.contains("test")) s.test = corruption_from_json(j["test"], "test", s.test);
  s.validate();
  return s;
}

// ---------------------------------------------------------------------------
// Checkpoint

namespace detail {

inline json dense_to_json(const Dense& d) {
  return {{"rows", d.out}, {"cols", d.in}, {"weight", d.weight}, {"bias", d.bias}};
}

inline Dense dense_from_json(const json& j, std::size_t in, std::size_t out, const std::string& name) {
  Dense d(in, out);
  if (field<std::size_t>(j, "rows") != out || field<std::size_t>(j, "cols") != in)
    throw FormatError(name + ": shape does not match config");
  d.weight = field<std::vector<double>>(j, "weight");
  d.bias = field<std::vector<double>>(j, "bias");
  if (d.weight.size() != in * out || d.bias.size() != out) throw FormatError(name + ": array length mismatch");
  return d;
}

}  // namespace detail

inline json checkpoint_to_json(const ModelParams& p) {
  json backbone = json::array();
  for (const auto& l : p.backbone) backbone.push_back(detail::dense_to_json(l));
  return {{"format", kCheckpointFormat},
          {"config", to_json(p.config)},
          {"backbone", backbone},
          {"classifier", detail::dense_to_json(p.classifier)},
          {"uncertainty", {{"weight", p.uncertainty_weight}, {"bias", p.uncertainty_bias}}},
          {"bn",
           {{"gamma", p.bn.gamma},
            {"beta", p.bn.beta},
            {"running_mean", p.bn.running_mean},
            {"running_var", p.bn.running_var},
            {"momentum", p.bn.momentum},
            {"eps", p.bn.eps}}}};
}

inline ModelParams checkpoint_from_json(const json& j) {
  detail::expect_format(j, kCheckpointFormat);
  try {
    ModelParams p;
    merge_model_config(j.at("config"), p.config);
    p.config.validate();
    const auto widths = backbone_widths(p.config);
    const auto& bb = j.at("backbone");
    if (!bb.is_array() || bb.size() + 1 != widths.size()) throw FormatError("backbone: layer count mismatch");
    for (std::size_t l = 0; l < bb.size(); ++l)
      p.backbone.push_back(
          detail::dense_from_json(bb[l], widths[l], widths[l + 1], "backbone." + std::to_string(l)));
    p.classifier = detail::dense_from_json(j.at("classifier"), p.config.feature_dim, p.config.num_classes,
                                           "classifier");
    const auto& u = j.at("uncertainty");
    p.uncertainty_weight = detail::field<std::vector<double>>(u, "weight");
    if (p.uncertainty_weight.size() != p.config.feature_dim) throw FormatError("uncertainty.weight: length mismatch");
    p.uncertainty_bias = detail::field<double>(u, "bias");
    const auto& bn = j.at("bn");
    p.bn.gamma = detail::field<double>(bn, "gamma");
    p.bn.beta = detail::field<double>(bn, "beta");
    p.bn.running_mean = detail::field<double>(bn, "running_mean");
    p.bn.running_var = detail::field<double>(bn, "running_var");
    p.bn.momentum = detail::field<double>(bn, "momentum");
    p.bn.eps = detail::field<double>(bn, "eps");
    if (p.bn.running_var < 0.0 || !(p.bn.eps > 0.0)) throw FormatError("bn: invalid running_var or eps");
    for (auto v : parameter_views(p))
      for (double x : v)
        if (!std::isfinite(x)) throw FormatError("non-finite parameter");
    return p;
  } catch (const json::exception& e) {
    throw FormatError(std::string("checkpoint: ") + e.what());
  } catch (const ConfigError& e) {
    throw FormatError(std::string("checkpoint: ") + e.what());
  }
}

inline void save_checkpoint(const ModelParams& p, const std::filesystem::path& path) {
  detail::write_text(path, detail::dump(checkpoint_to_json(p)));
}

inline ModelParams load_checkpoint(const std::filesystem::path& path) {
  return checkpoint_from_json(detail::read_json(path));
}

// ---------------------------------------------------------------------------
// Reports and history

inline json to_json(const MetricsReport& r) {
  return {{"apcer", r.apcer},         {"bpcer", r.bpcer},       {"acer", r.acer},
          {"auc", r.auc},             {"threshold", r.threshold}, {"n_attack", r.n_attack},
          {"n_bonafide", r.n_bonafide}};
}

inline MetricsReport report_from_json(const json& j) {
  MetricsReport r;
  r.apcer = detail::field<double>(j, "apcer");
  r.bpcer = detail::field<double>(j, "bpcer");
  r.acer = detail::field<double>(j, "acer");
  r.auc = detail::field<double>(j, "auc");
  r.threshold = detail::field<double>(j, "threshold");
  r.n_attack = detail::field<std::size_t>(j, "n_attack");
  r.n_bonafide = detail::field<std::size_t>(j, "n_bonafide");
  return r;
}

inline json report_document(const MetricsReport& r) {
  json j = to_json(r);
  j["format"] = kReportFormat;
  j["table"] = format_table(r);
  return j;
}

inline json history_to_json(const TrainHistory& h) {
  json steps = json::array(), epochs = json::array(), vs = json::array();
  for (const auto& s : h.steps)
    steps.push_back({{"step", s.step}, {"lr", s.lr}, {"ce", s.ce}, {"kl", s.kl}, {"total", s.total}});
  for (const auto& e : h.epochs) epochs.push_back({{"epoch", e.epoch}, {"dev", to_json(e.dev)}});
  for (const auto& v : h.final_train_v) vs.push_back({{"id", v.id}, {"v", v.v}});
  return {{"format", kHistoryFormat}, {"steps", steps}, {"epochs", epochs}, {"final_train_v", vs}};
}

inline TrainHistory history_from_json(const json& j) {
  detail::expect_format(j, kHistoryFormat);
  TrainHistory h;
  try {
    for (const auto& s : j.at("steps"))
      h.steps.push_back({detail::field<std::size_t>(s, "step"), detail::field<double>(s, "lr"),
                         detail::field<double>(s, "ce"), detail::field<double>(s, "kl"),
                         detail::field<double>(s, "total")});
    for (const auto& e : j.at("epochs"))
      h.epochs.push_back({detail::field<std::size_t>(e, "epoch"), report_from_json(e.at("dev"))});
    for (const auto& v : j.at("final_train_v"))
      h.final_train_v.push_back({detail::field<std::string>(v, "id"), detail::field<double>(v, "v")});
  } catch (const json::exception& e) {
    throw FormatError(std::string("history: ") + e.what());
  }
  return h;
}

// ---------------------------------------------------------------------------
// Files

/// Score dump: id,label,score,v.
inline void write_scores(std::span<const ScoredSample> scores, const std::filesystem::path& path) {
  std::ostringstream os;
  os << "id,label,score,v\n";
  for (const auto& s : scores)
    os << s.id << ',' << s.label << ',' << format_double(s.score) << ',' << format_double(s.v) << '\n';
  detail::write_text(path, os.str());
}

/// train.csv, dev.csv, test.csv and spec.json under `dir`.
inline void save_dataset(const Dataset& ds, const DatasetSpec& spec, const std::filesystem::path& dir) {
  std::filesystem::create_directories(dir);
  write_split(ds.train, (dir / "train.csv").string());
  write_split(ds.dev, (dir / "dev.csv").string());
  write_split(ds.test, (dir / "test.csv").string());
  detail::write_text(dir / "spec.json", detail::dump(to_json(spec)));
}

inline DatasetSplit load_split(const std::filesystem::path& dir, const std::string& name) {
  const auto path = dir / (name + ".csv");
  if (!std::filesystem::exists(path)) throw Error("missing dataset file " + path.string());
  return read_split(path.string(), name);
}

}  // namespace dise
