#pragma once

#include <cmath>
#include <cstdint>
#include <vector>

#include "dise/loss.hpp"
#include "dise/random.hpp"

namespace dise {

struct GradcheckProblem {
  ModelParams params;
  std::vector<Sample> batch;
};

/// Random model and batch for the finite-difference check. All biases and
/// the BN affine terms are randomized so every array has a nonzero
/// gradient. Inputs are redrawn until every hidden pre-activation sits at
/// least `kink_margin` away from the ReLU kink, where central differences
/// are not valid.
inline GradcheckProblem make_gradcheck_problem(std::uint64_t seed, bool use_dise, std::size_t batch_size = 6,
                                               double kink_margin = 1e-2) {
  ModelConfig cfg;
  cfg.input_dim = 8;
  cfg.hidden_dims = {8, 8};
  cfg.feature_dim = 4;
  cfg.temperature_scaling = use_dise;
  GradcheckProblem prob{init_model(cfg, seed), {}};
  auto& p = prob.params;
  Rng rng(derive_seed({seed, 0x67c4ULL}));
  for (auto& layer : p.backbone)
    for (auto& b : layer.bias) b = rng.uniform(-0.1, 0.1);
  for (auto& b : p.classifier.bias) b = rng.uniform(-0.1, 0.1);
  p.uncertainty_bias = rng.uniform(-0.1, 0.1);
  p.bn.gamma = rng.uniform(0.5, 1.5);
  p.bn.beta = rng.uniform(-0.5, 0.5);

  for (std::size_t i = 0; i < batch_size; ++i) {
    Sample s;
    s.id = "g" + std::to_string(i);
    s.label = static_cast<int>(i % 2);
    s.features.resize(cfg.input_dim);
    for (;;) {
      for (auto& x : s.features) x = rng.normal();
      std::vector<std::vector<double>> acts, pres;
      detail::run_backbone(p, s.features, &acts, &pres);
      bool clear = true;
      for (std::size_t l = 0; l + 1 < pres.size(); ++l)
        for (double a : pres[l]) clear = clear && std::abs(a) >= kink_margin;
      if (clear) break;
    }
    prob.batch.push_back(std::move(s));
  }
  return prob;
}

/// Pass threshold for a given probe step: 1e-4 at eps <= 1e-5, else 1e-2
/// (truncation error grows as eps^2).
inline double gradcheck_tolerance(double epsilon) { return epsilon <= 1e-5 ? 1e-4 : 1e-2; }

}  // namespace dise
