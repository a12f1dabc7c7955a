#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "dise/errors.hpp"
#include "dise/random.hpp"
#include "dise/sample.hpp"

namespace dise {

enum class Mode { train, eval };

struct ModelConfig {
  std::size_t input_dim = 16;
  std::vector<std::size_t> hidden_dims{32, 32};
  std::size_t feature_dim = 8;
  std::size_t num_classes = 2;
  double bn_momentum = 0.1;
  double bn_eps = 1e-5;
  double clamp_limit = 20.0;
  /// When false the uncertainty branch is bypassed and v is fixed to 1
  /// (the point-estimate baseline).
  bool temperature_scaling = true;

  void validate() const {
    if (input_dim < 1) throw ConfigError("input_dim", "must be >= 1");
    for (auto h : hidden_dims)
      if (h < 1) throw ConfigError("hidden_dims", "every width must be >= 1");
    if (feature_dim < 1) throw ConfigError("feature_dim", "must be >= 1");
    if (num_classes != 2) throw ConfigError("num_classes", "must be 2");
    if (!(bn_momentum > 0.0 && bn_momentum < 1.0))
      throw ConfigError("bn_momentum", "must lie in (0, 1)");
    if (!(bn_eps > 0.0)) throw ConfigError("bn_eps", "must be > 0");
    if (!(clamp_limit > 0.0)) throw ConfigError("clamp_limit", "must be > 0");
  }

  bool operator==(const ModelConfig&) const = default;
};

/// Fully connected layer, weight stored row-major as out x in.
struct Dense {
  std::size_t in = 0;
  std::size_t out = 0;
  std::vector<double> weight;
  std::vector<double> bias;

  Dense() = default;
  Dense(std::size_t in_dim, std::size_t out_dim)
      : in(in_dim), out(out_dim), weight(in_dim * out_dim, 0.0), bias(out_dim, 0.0) {}

  void apply(std::span<const double> x, std::span<double> y) const {
    for (std::size_t o = 0; o < out; ++o) {
      double acc = bias[o];
      const double* row = weight.data() + o * in;
      for (std::size_t i = 0; i < in; ++i) acc += row[i] * x[i];
      y[o] = acc;
    }
  }

  bool operator==(const Dense&) const = default;
};

/// Scalar batch normalization over the uncertainty pre-activation.
struct BatchNormState {
  double gamma = 1.0;
  double beta = 0.0;
  double running_mean = 0.0;
  double running_var = 1.0;
  double momentum = 0.1;
  double eps = 1e-5;

  bool operator==(const BatchNormState&) const = default;
};

struct ModelParams {
  ModelConfig config;
  std::vector<Dense> backbone;
  Dense classifier;
  std::vector<double> uncertainty_weight;  // w_G, length feature_dim
  double uncertainty_bias = 0.0;           // b_G
  BatchNormState bn;

  bool operator==(const ModelParams&) const = default;
};

/// Per-sample Gaussian N(mean, variance * I) plus the class logits.
struct DistributionalOutput {
  std::vector<double> mean;
  std::vector<double> logits;
  double variance = 1.0;

  bool operator==(const DistributionalOutput&) const = default;
};

/// Layer widths input -> hidden... -> feature.
inline std::vector<std::size_t> backbone_widths(const ModelConfig& c) {
  std::vector<std::size_t> w{c.input_dim};
  w.insert(w.end(), c.hidden_dims.begin(), c.hidden_dims.end());
  w.push_back(c.feature_dim);
  return w;
}

/// He-uniform bound sqrt(6 / fan_in); always below 3 / sqrt(fan_in).
inline double init_bound(std::size_t fan_in) {
  return std::sqrt(6.0 / static_cast<double>(fan_in));
}

/// Weights ~ U(-sqrt(6/fan_in), +sqrt(6/fan_in)), biases zero, identity BN.
inline ModelParams init_model(const ModelConfig& config, std::uint64_t seed) {
  config.validate();
  ModelParams p;
  p.config = config;
  Rng rng(derive_seed({seed, 0x1d1cULL}));
  auto fill = [&rng](std::vector<double>& w, std::size_t fan_in) {
    const double a = init_bound(fan_in);
    for (auto& x : w) x = rng.uniform(-a, a);
  };
  const auto widths = backbone_widths(config);
  for (std::size_t l = 0; l + 1 < widths.size(); ++l) {
    Dense layer(widths[l], widths[l + 1]);
    fill(layer.weight, layer.in);
    p.backbone.push_back(std::move(layer));
  }
  p.classifier = Dense(config.feature_dim, config.num_classes);
  fill(p.classifier.weight, config.feature_dim);
  p.uncertainty_weight.assign(config.feature_dim, 0.0);
  fill(p.uncertainty_weight, config.feature_dim);
  p.bn = BatchNormState{};
  p.bn.momentum = config.bn_momentum;
  p.bn.eps = config.bn_eps;
  return p;
}

/// Overflow-safe ln(1 + e^t).
inline double softplus(double t) { return std::max(t, 0.0) + std::log1p(std::exp(-std::abs(t))); }

inline double sigmoid(double t) {
  if (t >= 0.0) return 1.0 / (1.0 + std::exp(-t));
  const double e = std::exp(t);
  return e / (1.0 + e);
}

/// v = softplus(exp(clamp(u))) for a batch-normalized branch output u.
inline double variance_from_bn_output(double u, double clamp_limit) {
  return softplus(std::exp(std::clamp(u, -clamp_limit, clamp_limit)));
}

/// Train-mode normalization of a batch of branch pre-activations using the
/// biased batch variance.
struct BatchStats {
  std::vector<double> normalized;
  double mean = 0.0;
  double var = 0.0;
  double inv_std = 1.0;
};

inline BatchStats bn_normalize_train(std::span<const double> pre, double eps) {
  if (pre.size() < 2) throw DegenerateBatchError("batch normalization needs at least 2 samples in train mode");
  BatchStats st;
  const double n = static_cast<double>(pre.size());
  for (double x : pre) st.mean += x;
  st.mean /= n;
  st.normalized.resize(pre.size());
  for (std::size_t i = 0; i < pre.size(); ++i) {
    st.normalized[i] = pre[i] - st.mean;
    st.var += st.normalized[i] * st.normalized[i];
  }
  st.var /= n;
  st.inv_std = 1.0 / std::sqrt(st.var + eps);
  for (auto& x : st.normalized) x *= st.inv_std;
  return st;
}

namespace detail {

inline void check_finite(std::span<const double> x, const char* what) {
  for (double v : x)
    if (!std::isfinite(v)) throw DomainError(std::string(what) + " contains a non-finite value");
}

/// Intermediate values of one forward pass, kept for the backward pass.
struct ForwardCache {
  // activations[l][i]: input of layer l for sample i (activations[0] = x).
  std::vector<std::vector<std::vector<double>>> activations;
  // preacts[l][i]: pre-activation of layer l for sample i.
  std::vector<std::vector<std::vector<double>>> preacts;
  std::vector<std::vector<double>> features;
  std::vector<std::vector<double>> logits;
  // uncertainty branch
  std::vector<double> xhat;
  std::vector<double> bn_out;  // before clamping
  std::vector<double> tau;     // exp(clamped bn_out)
  std::vector<double> variance;
  double inv_std = 1.0;
  BatchNormState state;
};

inline std::vector<double> run_backbone(const ModelParams& p, std::span<const double> x,
                                        std::vector<std::vector<double>>* acts,
                                        std::vector<std::vector<double>>* pres) {
  if (x.size() != p.config.input_dim)
    throw ShapeError("input has length " + std::to_string(x.size()) + ", expected " +
                     std::to_string(p.config.input_dim));
  std::vector<double> h(x.begin(), x.end());
  for (std::size_t l = 0; l < p.backbone.size(); ++l) {
    const Dense& layer = p.backbone[l];
    std::vector<double> a(layer.out);
    layer.apply(h, a);
    if (acts) acts->push_back(h);
    if (pres) pres->push_back(a);
    if (l + 1 < p.backbone.size())
      for (auto& v : a) v = std::max(v, 0.0);
    h = std::move(a);
  }
  return h;
}

/// Uncertainty branch over a batch of features. Fills xhat/bn_out/tau/variance
/// and the updated BN state in `c`.
inline void run_branch(const ModelParams& p, const std::vector<std::vector<double>>& feats, Mode mode,
                       ForwardCache& c) {
  const std::size_t n = feats.size();
  const auto& cfg = p.config;
  c.state = p.bn;
  c.xhat.assign(n, 0.0);
  c.bn_out.assign(n, 0.0);
  c.tau.assign(n, 1.0);
  c.variance.assign(n, 1.0);
  if (!cfg.temperature_scaling) return;

  std::vector<double> pre(n);
  for (std::size_t i = 0; i < n; ++i) {
    if (feats[i].size() != cfg.feature_dim) throw ShapeError("feature length mismatch");
    double acc = 0.0;
    for (std::size_t k = 0; k < cfg.feature_dim; ++k) acc += p.uncertainty_weight[k] * feats[i][k];
    pre[i] = acc;
  }
  if (mode == Mode::train) {
    // The bias cancels under batch centering, so it only enters the running mean.
    const BatchStats st = bn_normalize_train(pre, p.bn.eps);
    c.xhat = st.normalized;
    c.inv_std = st.inv_std;
    const double m = p.bn.momentum;
    const double unbiased = st.var * static_cast<double>(n) / static_cast<double>(n - 1);
    c.state.running_mean = (1.0 - m) * p.bn.running_mean + m * (st.mean + p.uncertainty_bias);
    c.state.running_var = (1.0 - m) * p.bn.running_var + m * unbiased;
  } else {
    c.inv_std = 1.0 / std::sqrt(p.bn.running_var + p.bn.eps);
    for (std::size_t i = 0; i < n; ++i)
      c.xhat[i] = (pre[i] + p.uncertainty_bias - p.bn.running_mean) * c.inv_std;
  }
  for (std::size_t i = 0; i < n; ++i) {
    c.bn_out[i] = p.bn.gamma * c.xhat[i] + p.bn.beta;
    c.tau[i] = std::exp(std::clamp(c.bn_out[i], -cfg.clamp_limit, cfg.clamp_limit));
    c.variance[i] = softplus(c.tau[i]);
  }
}

inline ForwardCache forward_cached(const ModelParams& p, std::span<const Sample> batch, Mode mode,
                                   bool keep_layers) {
  if (batch.empty()) throw ShapeError("empty batch");
  if (mode == Mode::train && batch.size() < 2)
    throw DegenerateBatchError("train-mode batch needs at least 2 samples");
  ForwardCache c;
  const std::size_t L = p.backbone.size();
  if (keep_layers) {
    c.activations.assign(L, {});
    c.preacts.assign(L, {});
  }
  for (const auto& s : batch) {
    check_finite(s.features, "input");
    std::vector<std::vector<double>> acts, pres;
    c.features.push_back(run_backbone(p, s.features, keep_layers ? &acts : nullptr,
                                      keep_layers ? &pres : nullptr));
    if (keep_layers)
      for (std::size_t l = 0; l < L; ++l) {
        c.activations[l].push_back(std::move(acts[l]));
        c.preacts[l].push_back(std::move(pres[l]));
      }
    std::vector<double> z(p.config.num_classes);
    p.classifier.apply(c.features.back(), z);
    c.logits.push_back(std::move(z));
  }
  run_branch(p, c.features, mode, c);
  return c;
}

}  // namespace detail

/// Feature embedding s: affine layers with ReLU between them, last layer linear.
inline std::vector<double> backbone_forward(const ModelParams& params, std::span<const double> x) {
  return detail::run_backbone(params, x, nullptr, nullptr);
}

/// Class logits z = W s + b.
inline std::vector<double> classifier_forward(const ModelParams& params, std::span<const double> features) {
  if (features.size() != params.config.feature_dim) throw ShapeError("feature length mismatch");
  std::vector<double> z(params.classifier.out);
  params.classifier.apply(features, z);
  return z;
}

struct UncertaintyResult {
  std::vector<double> variance;
  BatchNormState state;
};

/// v = softplus(exp(clamp(BN(w_G . s + b_G)))). Train mode normalizes with
/// batch statistics and returns EMA-updated running statistics; eval mode
/// leaves the state as is.
inline UncertaintyResult uncertainty_forward(const ModelParams& params,
                                             const std::vector<std::vector<double>>& features, Mode mode) {
  if (features.empty()) throw ShapeError("empty batch");
  if (mode == Mode::train && features.size() < 2)
    throw DegenerateBatchError("train-mode batch needs at least 2 samples");
  detail::ForwardCache c;
  detail::run_branch(params, features, mode, c);
  return {std::move(c.variance), c.state};
}

struct ForwardResult {
  std::vector<DistributionalOutput> outputs;
  BatchNormState state;
};

/// Full forward pass, one output per sample in input order.
inline ForwardResult model_forward(const ModelParams& params, std::span<const Sample> batch, Mode mode) {
  auto c = detail::forward_cached(params, batch, mode, false);
  ForwardResult r;
  r.state = c.state;
  r.outputs.reserve(batch.size());
  for (std::size_t i = 0; i < batch.size(); ++i)
    r.outputs.push_back({std::move(c.features[i]), std::move(c.logits[i]), c.variance[i]});
  return r;
}

/// Trainable arrays in a fixed order, shared by gradients, optimizer state,
/// serialization and the finite-difference check.
inline std::vector<std::span<double>> parameter_views(ModelParams& p) {
  std::vector<std::span<double>> v;
  for (auto& l : p.backbone) {
    v.emplace_back(l.weight);
    v.emplace_back(l.bias);
  }
  v.emplace_back(p.classifier.weight);
  v.emplace_back(p.classifier.bias);
  v.emplace_back(p.uncertainty_weight);
  v.emplace_back(&p.uncertainty_bias, 1);
  v.emplace_back(&p.bn.gamma, 1);
  v.emplace_back(&p.bn.beta, 1);
  return v;
}

inline std::vector<std::string> parameter_names(const ModelConfig& c) {
  std::vector<std::string> names;
  const std::size_t layers = c.hidden_dims.size() + 1;
  for (std::size_t l = 0; l < layers; ++l) {
    names.push_back("backbone." + std::to_string(l) + ".weight");
    names.push_back("backbone." + std::to_string(l) + ".bias");
  }
  for (const char* n : {"classifier.weight", "classifier.bias", "uncertainty.weight", "uncertainty.bias",
                        "bn.gamma", "bn.beta"})
    names.emplace_back(n);
  return names;
}

/// Index range of the uncertainty-branch arrays within parameter_views().
inline bool is_branch_parameter(const ModelConfig& c, std::size_t view_index) {
  const std::size_t first = 2 * (c.hidden_dims.size() + 1) + 2;
  return view_index >= first;
}

}  // namespace dise
