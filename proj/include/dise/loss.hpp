#pragma once

#include <algorithm>
#include <cmath>
#include <span>
#include <string>
#include <vector>

#include "dise/errors.hpp"
#include "dise/model.hpp"

namespace dise {

/// Read-only views in the same order as parameter_views(ModelParams&).
inline std::vector<std::span<const double>> parameter_views(const ModelParams& p) {
  auto mutable_views = parameter_views(const_cast<ModelParams&>(p));
  return {mutable_views.begin(), mutable_views.end()};
}

/// One gradient array per trainable array, in parameter_views() order.
struct GradientSet {
  std::vector<std::vector<double>> arrays;

  static GradientSet zeros_like(const ModelParams& p) {
    GradientSet g;
    for (auto v : parameter_views(p)) g.arrays.emplace_back(v.size(), 0.0);
    return g;
  }

  bool all_finite() const {
    for (const auto& a : arrays)
      for (double x : a)
        if (!std::isfinite(x)) return false;
    return true;
  }

  bool operator==(const GradientSet&) const = default;
};

struct LossBreakdown {
  double ce = 0.0;
  double kl = 0.0;
  double total = 0.0;
  double lambda = 0.0;
  std::vector<double> per_sample_ce;
  std::vector<double> per_sample_v;
};

/// softmax(z / v), max-shifted.
inline std::vector<double> scaled_softmax(std::span<const double> logits, double v) {
  std::vector<double> p(logits.size());
  double m = -INFINITY;
  for (double z : logits) m = std::max(m, z / v);
  double sum = 0.0;
  for (std::size_t j = 0; j < logits.size(); ++j) sum += p[j] = std::exp(logits[j] / v - m);
  for (auto& x : p) x /= sum;
  return p;
}

/// -log softmax(z / v)[label] via log-sum-exp.
inline double scaled_cross_entropy(std::span<const double> logits, double v, int label) {
  if (!(v > 0.0) || !std::isfinite(v)) throw DomainError("temperature must be positive and finite");
  detail::check_finite(logits, "logits");
  if (label < 0 || static_cast<std::size_t>(label) >= logits.size()) throw DomainError("label out of range");
  double m = -INFINITY;
  for (double z : logits) m = std::max(m, z / v);
  double sum = 0.0;
  for (double z : logits) sum += std::exp(z / v - m);
  return std::max(0.0, (m - logits[static_cast<std::size_t>(label)] / v) + std::log(sum));
}

/// KL(N(s, v I) || N(0, I)) = (|s|^2 + d (v - 1 - ln v)) / 2.
inline double kl_regularizer(std::span<const double> s, double v) {
  if (!(v > 0.0) || !std::isfinite(v)) throw DomainError("variance must be positive and finite");
  double sq = 0.0;
  for (double x : s) sq += x * x;
  const double d = static_cast<double>(s.size());
  return std::max(0.0, 0.5 * (sq + d * (v - 1.0 - std::log(v))));
}

/// d CE / d z = (softmax(z / v) - onehot(y)) / v.
inline std::vector<double> scaled_ce_grad_logits(std::span<const double> logits, double v, int label) {
  auto p = scaled_softmax(logits, v);
  p[static_cast<std::size_t>(label)] -= 1.0;
  for (auto& x : p) x /= v;
  return p;
}

/// d CE / d v = -(1 / v^2) * sum_j z_j (softmax(z / v)_j - onehot(y)_j).
inline double scaled_ce_grad_variance(std::span<const double> logits, double v, int label) {
  const auto p = scaled_softmax(logits, v);
  double acc = 0.0;
  for (std::size_t j = 0; j < logits.size(); ++j)
    acc += logits[j] * (p[j] - (j == static_cast<std::size_t>(label) ? 1.0 : 0.0));
  return -acc / (v * v);
}

/// d KL / d v = d (1 - 1 / v) / 2; d KL / d s = s.
inline double kl_grad_variance(std::size_t dim, double v) {
  return static_cast<double>(dim) * (1.0 - 1.0 / v) / 2.0;
}

/// Batch-mean CE plus lambda times batch-mean KL. With include_kl = false the
/// KL term is reported as 0 and excluded from the total.
inline LossBreakdown total_loss(std::span<const DistributionalOutput> outputs, std::span<const int> labels,
                                double lambda, bool include_kl = true) {
  if (outputs.empty()) throw ShapeError("empty batch");
  if (outputs.size() != labels.size()) throw ShapeError("outputs and labels differ in length");
  if (!(lambda >= 0.0)) throw DomainError("lambda must be >= 0");
  LossBreakdown r;
  r.lambda = lambda;
  double kl_sum = 0.0;
  for (std::size_t i = 0; i < outputs.size(); ++i) {
    const auto& o = outputs[i];
    r.per_sample_ce.push_back(scaled_cross_entropy(o.logits, o.variance, labels[i]));
    r.per_sample_v.push_back(o.variance);
    if (include_kl) kl_sum += kl_regularizer(o.mean, o.variance);
  }
  const double n = static_cast<double>(outputs.size());
  double ce_sum = 0.0;
  for (double c : r.per_sample_ce) ce_sum += c;
  r.ce = ce_sum / n;
  r.kl = kl_sum / n;
  r.total = r.ce + lambda * r.kl;
  return r;
}

inline std::vector<int> labels_of(std::span<const Sample> batch) {
  std::vector<int> y;
  y.reserve(batch.size());
  for (const auto& s : batch) y.push_back(s.label);
  return y;
}

/// Train-mode loss without gradients. The baseline graph (temperature scaling
/// off) drops the KL term.
inline LossBreakdown loss_value(const ModelParams& params, std::span<const Sample> batch, double lambda) {
  const auto fwd = model_forward(params, batch, Mode::train);
  const auto y = labels_of(batch);
  return total_loss(fwd.outputs, y, lambda, params.config.temperature_scaling);
}

struct BackwardResult {
  LossBreakdown loss;
  GradientSet grads;
  BatchNormState state;  // running statistics after this batch
};

/// Exact reverse-mode gradients of the train-mode total loss with respect to
/// every trainable array, including the batch-statistics path through BN and
/// the zero subgradient of the clamp outside its range.
inline BackwardResult loss_backward(const ModelParams& params, std::span<const Sample> batch, double lambda) {
  const auto& cfg = params.config;
  const bool dise = cfg.temperature_scaling;
  auto c = detail::forward_cached(params, batch, Mode::train, true);
  const std::size_t n = batch.size();
  const std::size_t d = cfg.feature_dim;
  const std::size_t K = cfg.num_classes;
  const double inv_n = 1.0 / static_cast<double>(n);

  BackwardResult r;
  r.state = c.state;
  {
    std::vector<DistributionalOutput> outs;
    outs.reserve(n);
    for (std::size_t i = 0; i < n; ++i) outs.push_back({c.features[i], c.logits[i], c.variance[i]});
    r.loss = total_loss(outs, labels_of(batch), lambda, dise);
  }
  r.grads = GradientSet::zeros_like(params);
  auto& g = r.grads.arrays;
  const std::size_t L = params.backbone.size();
  const std::size_t cls_w = 2 * L, cls_b = 2 * L + 1, unc_w = 2 * L + 2, bn_g = 2 * L + 4, bn_b = 2 * L + 5;

  std::vector<std::vector<double>> dfeat(n, std::vector<double>(d, 0.0));
  std::vector<double> dvar(n, 0.0);
  for (std::size_t i = 0; i < n; ++i) {
    const auto& z = c.logits[i];
    const double v = c.variance[i];
    const auto dz = scaled_ce_grad_logits(z, v, batch[i].label);
    for (std::size_t k = 0; k < K; ++k) {
      const double gk = inv_n * dz[k];
      for (std::size_t j = 0; j < d; ++j) {
        g[cls_w][k * d + j] += gk * c.features[i][j];
        dfeat[i][j] += params.classifier.weight[k * d + j] * gk;
      }
      g[cls_b][k] += gk;
    }
    if (dise) {
      dvar[i] = inv_n * (scaled_ce_grad_variance(z, v, batch[i].label) + lambda * kl_grad_variance(d, v));
      for (std::size_t j = 0; j < d; ++j) dfeat[i][j] += inv_n * lambda * c.features[i][j];
    }
  }

  if (dise) {
    std::vector<double> dxhat(n);
    double mean_dxhat = 0.0, mean_dxhat_xhat = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
      const double dtau = dvar[i] * sigmoid(c.tau[i]);
      const double du = dtau * c.tau[i];
      const double dy = std::abs(c.bn_out[i]) <= cfg.clamp_limit ? du : 0.0;
      g[bn_g][0] += dy * c.xhat[i];
      g[bn_b][0] += dy;
      dxhat[i] = dy * params.bn.gamma;
      mean_dxhat += dxhat[i];
      mean_dxhat_xhat += dxhat[i] * c.xhat[i];
    }
    mean_dxhat *= inv_n;
    mean_dxhat_xhat *= inv_n;
    // The bias cancels under batch centering: its train-mode gradient is exactly 0.
    for (std::size_t i = 0; i < n; ++i) {
      const double dpre = c.inv_std * (dxhat[i] - mean_dxhat - c.xhat[i] * mean_dxhat_xhat);
      for (std::size_t j = 0; j < d; ++j) {
        g[unc_w][j] += dpre * c.features[i][j];
        dfeat[i][j] += dpre * params.uncertainty_weight[j];
      }
    }
  }

  for (std::size_t i = 0; i < n; ++i) {
    std::vector<double> delta = std::move(dfeat[i]);
    for (std::size_t l = L; l-- > 0;) {
      const Dense& layer = params.backbone[l];
      const auto& act = c.activations[l][i];
      auto& gw = g[2 * l];
      auto& gb = g[2 * l + 1];
      for (std::size_t o = 0; o < layer.out; ++o) {
        gb[o] += delta[o];
        for (std::size_t k = 0; k < layer.in; ++k) gw[o * layer.in + k] += delta[o] * act[k];
      }
      if (l == 0) break;
      std::vector<double> prev(layer.in, 0.0);
      const auto& pre = c.preacts[l - 1][i];
      for (std::size_t k = 0; k < layer.in; ++k) {
        if (pre[k] <= 0.0) continue;
        double acc = 0.0;
        for (std::size_t o = 0; o < layer.out; ++o) acc += layer.weight[o * layer.in + k] * delta[o];
        prev[k] = acc;
      }
      delta = std::move(prev);
    }
  }
  return r;
}

struct GradcheckOptions {
  double epsilon = 1e-5;
  /// Multiplies the analytic gradient; anything but 1 injects a fault.
  double analytic_scale = 1.0;
};

struct GradcheckResult {
  double max_rel_err = 0.0;
  std::string worst_parameter;
  std::size_t worst_index = 0;
  std::size_t checked = 0;
};

/// Central-difference check of loss_backward over every scalar parameter.
/// Relative error is |a - n| / max(|a|, |n|, 1e-8).
inline GradcheckResult finite_difference_gradcheck(const ModelParams& params, std::span<const Sample> batch,
                                                   double lambda, GradcheckOptions opt = {}) {
  if (!(opt.epsilon >= 1e-7 && opt.epsilon <= 1e-3)) throw DomainError("epsilon must lie in [1e-7, 1e-3]");
  const auto analytic = loss_backward(params, batch, lambda).grads;
  const auto names = parameter_names(params.config);
  ModelParams probe = params;
  auto views = parameter_views(probe);
  GradcheckResult res;
  for (std::size_t a = 0; a < views.size(); ++a) {
    for (std::size_t k = 0; k < views[a].size(); ++k) {
      const double saved = views[a][k];
      views[a][k] = saved + opt.epsilon;
      const double up = loss_value(probe, batch, lambda).total;
      views[a][k] = saved - opt.epsilon;
      const double down = loss_value(probe, batch, lambda).total;
      views[a][k] = saved;
      const double numeric = (up - down) / (2.0 * opt.epsilon);
      const double an = opt.analytic_scale * analytic.arrays[a][k];
      const double rel = std::abs(an - numeric) / std::max({std::abs(an), std::abs(numeric), 1e-8});
      ++res.checked;
      if (rel > res.max_rel_err || !std::isfinite(rel)) {
        res.max_rel_err = std::isfinite(rel) ? rel : INFINITY;
        res.worst_parameter = names[a];
        res.worst_index = k;
      }
    }
  }
  return res;
}

}  // namespace dise
