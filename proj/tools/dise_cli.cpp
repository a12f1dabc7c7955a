// dise: generate quality-stratified data, train, evaluate, gradient-check.
//
// Exit status: 0 success, 1 check or metric failure, 2 usage/validation error.

#include <cstdio>
#include <filesystem>
#include <iostream>
#include <optional>
#include <string>

#include "CLI11.hpp"

#include "dise/dise.hpp"

namespace fs = std::filesystem;
using namespace dise;

namespace {

constexpr int kOk = 0;
constexpr int kCheckFailed = 1;
constexpr int kUsage = 2;

struct GenDataArgs {
  std::string spec_path;
  std::string out_dir;
  std::optional<std::uint64_t> seed;
};

struct TrainArgs {
  std::string data_dir;
  std::string config_path;
  std::string out_dir;
  std::optional<std::uint64_t> seed;
  std::optional<std::size_t> epochs;
  std::optional<double> lambda;
  bool baseline = false;
  bool merge_dev = false;
};

struct EvalArgs {
  std::string checkpoint;
  std::string data_dir;
  std::string split = "test";
  std::string threshold = "auto";
  std::string tta = "off";
  double jitter = 0.1;
  std::uint64_t seed = 0;
  std::string out_dir;
};

struct GradcheckArgs {
  std::uint64_t seed = 0;
  double eps = 1e-5;
  double lambda = 0.01;
  double fault_scale = 1.0;
};

int cmd_gen_data(const GenDataArgs& a) {
  DatasetSpec spec;
  if (!a.spec_path.empty()) spec = dataset_spec_from_json(detail::read_json(a.spec_path));
  if (a.seed) spec.seed = *a.seed;
  spec.validate();
  const auto ds = generate_dataset(spec);
  save_dataset(ds, spec, a.out_dir);
  std::cout << "wrote " << ds.train.samples.size() << '/' << ds.dev.samples.size() << '/'
            << ds.test.samples.size() << " samples to " << a.out_dir << '\n';
  return kOk;
}

/// Flat run config: model and training keys side by side.
void load_run_config(const std::string& path, ModelConfig& model, TrainConfig& train) {
  const json j = detail::read_json(path);
  if (!j.is_object()) throw ConfigError("config", "expected a JSON object");
  const auto mk = to_json(model);
  const auto tk = to_json(train);
  for (const auto& [k, v] : j.items())
    if (!mk.contains(k) && !tk.contains(k)) throw ConfigError(k, "unknown field");
  merge_model_config(j, model);
  merge_train_config(j, train);
}

int cmd_train(const TrainArgs& a) {
  const fs::path dir(a.data_dir);
  auto train_split = load_split(dir, "train");
  const auto dev_split = load_split(dir, "dev");
  if (train_split.samples.empty()) throw ConfigError("train", "split is empty");

  ModelConfig model;
  model.input_dim = train_split.samples.front().features.size();
  TrainConfig cfg;
  if (!a.config_path.empty()) load_run_config(a.config_path, model, cfg);
  if (a.seed) cfg.seed = *a.seed;
  if (a.epochs) cfg.epochs = *a.epochs;
  if (a.lambda) cfg.lambda = *a.lambda;
  if (a.baseline) cfg.use_dise = false;
  if (model.input_dim != train_split.samples.front().features.size())
    throw ConfigError("input_dim", "does not match the dataset dimension");
  model.temperature_scaling = cfg.use_dise;
  model.validate();
  cfg.validate();
  if (a.merge_dev)
    train_split.samples.insert(train_split.samples.end(), dev_split.samples.begin(), dev_split.samples.end());

  const auto result = train(model, cfg, train_split.samples, dev_split.samples);
  fs::create_directories(a.out_dir);
  save_checkpoint(result.params, fs::path(a.out_dir) / "checkpoint.json");
  detail::write_text(fs::path(a.out_dir) / "history.json", detail::dump(history_to_json(result.history)));
  std::cout << "steps=" << result.history.steps.size() << '\n';
  if (!result.history.epochs.empty()) std::cout << format_table(result.history.epochs.back().dev) << '\n';
  return kOk;
}

int cmd_eval(const EvalArgs& a) {
  const auto params = load_checkpoint(a.checkpoint);
  const fs::path dir(a.data_dir);
  const auto split = load_split(dir, a.split);

  EvalOptions opt;
  opt.tta.seed = a.seed;
  opt.tta.jitter_sigma = a.jitter;
  if (a.tta == "off") {
    opt.tta.views = 1;
  } else {
    try {
      const long k = std::stol(a.tta);
      if (k < 1) throw std::invalid_argument("k");
      opt.tta.views = static_cast<std::size_t>(k);
    } catch (const std::exception&) {
      throw ConfigError("tta", "expected 'off' or a positive integer");
    }
  }
  std::optional<DatasetSplit> dev;
  if (a.threshold == "auto") {
    dev = load_split(dir, "dev");
  } else {
    try {
      std::size_t used = 0;
      opt.threshold = std::stod(a.threshold, &used);
      if (used != a.threshold.size()) throw std::invalid_argument("t");
    } catch (const std::exception&) {
      throw ConfigError("threshold", "expected 'auto' or a number");
    }
  }
  const auto e = evaluate(params, split.samples, opt,
                          dev ? std::span<const Sample>(dev->samples) : std::span<const Sample>{});
  if (!a.out_dir.empty()) {
    fs::create_directories(a.out_dir);
    write_scores(e.scores, fs::path(a.out_dir) / ("scores_" + a.split + ".csv"));
    detail::write_text(fs::path(a.out_dir) / ("report_" + a.split + ".json"),
                       detail::dump(report_document(e.report)));
  }
  std::cout << format_table(e.report) << '\n';
  return kOk;
}

int cmd_gradcheck(const GradcheckArgs& a) {
  if (!(a.eps >= 1e-7 && a.eps <= 1e-3)) throw ConfigError("eps", "must lie in [1e-7, 1e-3]");
  double worst = 0.0;
  for (bool use_dise : {true, false}) {
    const auto prob = make_gradcheck_problem(a.seed, use_dise);
    GradcheckOptions opt;
    opt.epsilon = a.eps;
    opt.analytic_scale = a.fault_scale;
    worst = std::max(worst, finite_difference_gradcheck(prob.params, prob.batch, a.lambda, opt).max_rel_err);
  }
  std::printf("max_rel_err=%.6e\n", worst);
  return worst < gradcheck_tolerance(a.eps) ? kOk : kCheckFailed;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Distributional estimation of data uncertainty: data, training, evaluation"};
  app.require_subcommand(1);

  GenDataArgs gen;
  auto* gen_cmd = app.add_subcommand("gen-data", "Generate train/dev/test CSVs and spec.json");
  gen_cmd->add_option("--spec", gen.spec_path, "DatasetSpec JSON (defaults when omitted)");
  gen_cmd->add_option("--out", gen.out_dir, "Output dataset directory")->required();
  gen_cmd->add_option("--seed", gen.seed, "Override the spec seed");

  TrainArgs tr;
  auto* train_cmd = app.add_subcommand("train", "Train a model and write checkpoint.json + history.json");
  train_cmd->add_option("--data", tr.data_dir, "Dataset directory")->required();
  train_cmd->add_option("--config", tr.config_path, "Flat JSON run config");
  train_cmd->add_option("--seed", tr.seed, "Training seed");
  train_cmd->add_option("--out", tr.out_dir, "Output directory")->required();
  train_cmd->add_option("--epochs", tr.epochs, "Override epochs");
  train_cmd->add_option("--lambda", tr.lambda, "Override the KL weight");
  train_cmd->add_flag("--baseline", tr.baseline, "Point-estimate baseline (v = 1, no KL)");
  train_cmd->add_flag("--merge-dev", tr.merge_dev, "Train on train + dev");

  EvalArgs ev;
  auto* eval_cmd = app.add_subcommand("eval", "Score a split and write scores + report");
  eval_cmd->add_option("--checkpoint", ev.checkpoint, "Checkpoint JSON")->required();
  eval_cmd->add_option("--data", ev.data_dir, "Dataset directory")->required();
  eval_cmd->add_option("--split", ev.split, "train, dev or test")->check(CLI::IsMember({"train", "dev", "test"}));
  eval_cmd->add_option("--threshold", ev.threshold, "'auto' (selected on dev) or a value");
  eval_cmd->add_option("--tta", ev.tta, "'off' or number of views");
  eval_cmd->add_option("--jitter", ev.jitter, "TTA feature jitter sigma")->check(CLI::NonNegativeNumber);
  eval_cmd->add_option("--seed", ev.seed, "TTA jitter seed");
  eval_cmd->add_option("--out", ev.out_dir, "Output directory for scores and report");

  GradcheckArgs gc;
  auto* gc_cmd = app.add_subcommand("gradcheck", "Finite-difference check of the analytic gradients");
  gc_cmd->add_option("--seed", gc.seed, "Model/batch seed");
  gc_cmd->add_option("--eps", gc.eps, "Central-difference step");
  gc_cmd->add_option("--lambda", gc.lambda, "KL weight");
  gc_cmd->add_option("--fault-scale", gc.fault_scale, "Scale the analytic gradient (harness only)")
      ->group("");

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    app.exit(e);
    return kUsage;
  }

  try {
    if (*gen_cmd) return cmd_gen_data(gen);
    if (*train_cmd) return cmd_train(tr);
    if (*eval_cmd) return cmd_eval(ev);
    if (*gc_cmd) return cmd_gradcheck(gc);
  } catch (const UndefinedMetricError& e) {
    std::cerr << "error: undefined metric: " << e.what() << '\n';
    return kCheckFailed;
  } catch (const DivergenceError& e) {
    std::cerr << "error: " << e.what() << '\n';
    return kCheckFailed;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return kUsage;
  }
  return kUsage;
}
