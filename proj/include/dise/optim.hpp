#pragma once

#include <cmath>
#include <cstdint>
#include <numbers>
#include <span>
#include <string>
#include <vector>

#include "dise/errors.hpp"
#include "dise/loss.hpp"
#include "dise/metrics.hpp"
#include "dise/model.hpp"
#include "dise/random.hpp"

namespace dise {

struct TrainConfig {
  std::size_t batch_size = 64;
  std::size_t epochs = 30;
  double momentum = 0.9;
  double peak_lr = 0.01;
  double min_lr = 0.0;
  std::size_t warmup_steps = 200;
  double lambda = 0.01;  // KL weight
  std::uint64_t seed = 0;
  /// false trains the point-estimate baseline: v fixed to 1, no KL term.
  bool use_dise = true;

  void validate() const {
    if (batch_size < 2) throw ConfigError("batch_size", "must be >= 2");
    if (!(momentum >= 0.0 && momentum < 1.0)) throw ConfigError("momentum", "must lie in [0, 1)");
    if (!(peak_lr > 0.0) || !std::isfinite(peak_lr)) throw ConfigError("peak_lr", "must be > 0");
    if (!(min_lr >= 0.0 && min_lr <= peak_lr)) throw ConfigError("min_lr", "must lie in [0, peak_lr]");
    if (!(lambda >= 0.0) || !std::isfinite(lambda)) throw ConfigError("lambda", "must be >= 0");
  }

  bool operator==(const TrainConfig&) const = default;
};

/// Linear warmup to peak_lr over the first warmup_steps steps, then a
/// half-cosine down to min_lr at total_steps.
inline double lr_at(std::size_t step, const TrainConfig& cfg, std::size_t total_steps) {
  if (step >= total_steps)
    throw DomainError("step " + std::to_string(step) + " outside schedule of " + std::to_string(total_steps));
  const std::size_t W = cfg.warmup_steps;
  if (step < W) return cfg.peak_lr * (static_cast<double>(step + 1) / static_cast<double>(W));
  const double progress = static_cast<double>(step - W) / static_cast<double>(total_steps - W);
  return cfg.min_lr + (cfg.peak_lr - cfg.min_lr) * 0.5 * (1.0 + std::cos(std::numbers::pi * progress));
}

struct MomentumState {
  GradientSet velocity;

  static MomentumState zeros_like(const ModelParams& p) { return {GradientSet::zeros_like(p)}; }
};

/// Heavy-ball SGD: velocity = momentum * velocity + grad; param -= lr * velocity.
inline void sgd_step(ModelParams& params, const GradientSet& grads, MomentumState& state, double lr,
                     double momentum) {
  auto views = parameter_views(params);
  if (grads.arrays.size() != views.size() || state.velocity.arrays.size() != views.size())
    throw ShapeError("gradient/parameter array count mismatch");
  for (std::size_t a = 0; a < views.size(); ++a)
    if (grads.arrays[a].size() != views[a].size() || state.velocity.arrays[a].size() != views[a].size())
      throw ShapeError("gradient/parameter shape mismatch");
  if (!grads.all_finite()) throw DomainError("non-finite gradient");
  for (std::size_t a = 0; a < views.size(); ++a) {
    auto& vel = state.velocity.arrays[a];
    const auto& g = grads.arrays[a];
    for (std::size_t k = 0; k < vel.size(); ++k) {
      vel[k] = momentum * vel[k] + g[k];
      views[a][k] -= lr * vel[k];
    }
  }
}

struct StepRecord {
  std::size_t step = 0;
  double lr = 0.0;
  double ce = 0.0;
  double kl = 0.0;
  double total = 0.0;

  bool operator==(const StepRecord&) const = default;
};

struct EpochRecord {
  std::size_t epoch = 0;
  MetricsReport dev;

  bool operator==(const EpochRecord&) const = default;
};

struct SampleVariance {
  std::string id;
  double v = 1.0;

  bool operator==(const SampleVariance&) const = default;
};

struct TrainHistory {
  std::vector<StepRecord> steps;
  std::vector<EpochRecord> epochs;
  std::vector<SampleVariance> final_train_v;

  bool operator==(const TrainHistory&) const = default;
};

struct TrainResult {
  ModelParams params;
  TrainHistory history;
};

/// Batches per epoch: ceil(n / batch_size), minus a trailing batch of one.
inline std::size_t batches_per_epoch(std::size_t n, std::size_t batch_size) {
  std::size_t full = n / batch_size;
  if (n % batch_size >= 2) ++full;
  return full;
}

/// Deterministic training run. The model is initialized from train.seed and
/// each epoch is shuffled from a stream keyed by (seed, epoch). A dev report
/// at the dev-selected threshold is recorded after every epoch.
inline TrainResult train(ModelConfig model_cfg, const TrainConfig& cfg, std::span<const Sample> train_split,
                         std::span<const Sample> dev_split) {
  cfg.validate();
  if (train_split.size() < 2) throw ConfigError("train", "needs at least 2 samples");
  if (dev_split.empty()) throw ConfigError("dev", "split is empty");
  for (const auto* split : {&train_split, &dev_split})
    for (const auto& smp : *split) {
      if (smp.label != 0 && smp.label != 1) throw ConfigError("label", "sample " + smp.id + " has label outside {0, 1}");
      if (smp.features.size() != model_cfg.input_dim)
        throw ShapeError("sample " + smp.id + " has " + std::to_string(smp.features.size()) + " features");
      detail::check_finite(smp.features, "features");
    }
  model_cfg.temperature_scaling = cfg.use_dise;
  const double lambda = cfg.use_dise ? cfg.lambda : 0.0;
  const std::size_t per_epoch = batches_per_epoch(train_split.size(), cfg.batch_size);
  const std::size_t total = cfg.epochs * per_epoch;
  if (cfg.epochs > 0 && cfg.warmup_steps >= total)
    throw ConfigError("warmup_steps", "must be < total steps (" + std::to_string(total) + ")");

  TrainResult r{init_model(model_cfg, cfg.seed), {}};
  auto& params = r.params;
  auto& hist = r.history;
  auto momentum = MomentumState::zeros_like(params);
  const EvalOptions dev_eval{};

  std::vector<std::size_t> order(train_split.size());
  std::vector<Sample> batch;
  std::size_t step = 0;
  for (std::size_t epoch = 0; epoch < cfg.epochs; ++epoch) {
    for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
    Rng shuffler(derive_seed({cfg.seed, epoch, 0x5fu}));
    shuffler.shuffle(order);
    for (std::size_t b = 0; b < per_epoch; ++b, ++step) {
      const std::size_t lo = b * cfg.batch_size;
      const std::size_t hi = std::min(lo + cfg.batch_size, order.size());
      batch.clear();
      for (std::size_t i = lo; i < hi; ++i) batch.push_back(train_split[order[i]]);

      const double lr = lr_at(step, cfg, total);
      // Inputs were validated above, so a domain error here means the
      // parameters have grown until the forward pass overflowed.
      BackwardResult res;
      try {
        res = loss_backward(params, batch, lambda);
      } catch (const DomainError& e) {
        throw DivergenceError(step, e.what());
      }
      if (!std::isfinite(res.loss.total)) throw DivergenceError(step, "non-finite loss");
      if (!res.grads.all_finite()) throw DivergenceError(step, "non-finite gradient");
      sgd_step(params, res.grads, momentum, lr, cfg.momentum);
      for (auto view : parameter_views(params))
        for (double x : view)
          if (!std::isfinite(x)) throw DivergenceError(step, "non-finite parameter");
      params.bn.running_mean = res.state.running_mean;
      params.bn.running_var = res.state.running_var;
      hist.steps.push_back({step, lr, res.loss.ce, res.loss.kl, res.loss.total});
    }
    hist.epochs.push_back({epoch, evaluate(params, dev_split, dev_eval, dev_split).report});
  }

  const auto fwd = model_forward(params, train_split, Mode::eval);
  for (std::size_t i = 0; i < train_split.size(); ++i)
    hist.final_train_v.push_back({train_split[i].id, fwd.outputs[i].variance});
  return r;
}

}  // namespace dise
