#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <cstdio>
#include <limits>
#include <optional>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "dise/errors.hpp"
#include "dise/loss.hpp"
#include "dise/model.hpp"
#include "dise/random.hpp"
#include "dise/sample.hpp"

namespace dise {

// Orientation used throughout: attack (label 1) is the positive class and a
// sample is predicted to be an attack when score >= threshold.

struct ScoredSample {
  std::string id;
  int label = 0;
  double score = 0.0;  // probability of attack
  double v = 1.0;

  bool operator==(const ScoredSample&) const = default;
};

struct RocPoint {
  double threshold = 0.0;
  double tpr = 0.0;
  double fpr = 0.0;
};

struct RocCurve {
  std::vector<RocPoint> points;
};

struct MetricsReport {
  double apcer = 0.0;
  double bpcer = 0.0;
  double acer = 0.0;
  double auc = 0.0;
  double threshold = 0.0;
  std::size_t n_attack = 0;
  std::size_t n_bonafide = 0;

  bool operator==(const MetricsReport&) const = default;
};

namespace detail {

inline std::pair<std::size_t, std::size_t> class_counts(std::span<const ScoredSample> scored) {
  std::size_t attack = 0;
  for (const auto& s : scored) attack += s.label == 1;
  const std::size_t bonafide = scored.size() - attack;
  if (attack == 0 || bonafide == 0)
    throw UndefinedMetricError("metric needs both attack and bona fide samples (got " + std::to_string(attack) +
                               " attack, " + std::to_string(bonafide) + " bona fide)");
  return {attack, bonafide};
}

}  // namespace detail

/// One point per distinct score (descending threshold) between the (0,0)
/// endpoint at +inf and the (1,1) endpoint at -inf.
inline RocCurve roc_curve(std::span<const ScoredSample> scored) {
  const auto [n_pos, n_neg] = detail::class_counts(scored);
  std::vector<std::pair<double, int>> v;
  v.reserve(scored.size());
  for (const auto& s : scored) v.emplace_back(s.score, s.label);
  std::sort(v.begin(), v.end(), [](const auto& a, const auto& b) { return a.first > b.first; });

  RocCurve c;
  c.points.push_back({std::numeric_limits<double>::infinity(), 0.0, 0.0});
  std::size_t tp = 0, fp = 0;
  for (std::size_t i = 0; i < v.size();) {
    const double t = v[i].first;
    for (; i < v.size() && v[i].first == t; ++i) (v[i].second == 1 ? tp : fp)++;
    c.points.push_back({t, static_cast<double>(tp) / static_cast<double>(n_pos),
                        static_cast<double>(fp) / static_cast<double>(n_neg)});
  }
  c.points.push_back({-std::numeric_limits<double>::infinity(), 1.0, 1.0});
  return c;
}

/// Trapezoidal integral of TPR d(FPR) along the curve.
inline double auc_trapezoid(const RocCurve& curve) {
  double area = 0.0;
  for (std::size_t i = 1; i < curve.points.size(); ++i) {
    const auto& a = curve.points[i - 1];
    const auto& b = curve.points[i];
    area += (b.fpr - a.fpr) * (a.tpr + b.tpr) * 0.5;
  }
  return area;
}

/// Mann-Whitney AUC: fraction of (attack, bona fide) pairs ordered correctly,
/// ties counted half. Mid-ranks are carried doubled so the sum is exact.
inline double auc(std::span<const ScoredSample> scored) {
  const auto [n_pos, n_neg] = detail::class_counts(scored);
  std::vector<std::size_t> order(scored.size());
  for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
  std::sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return scored[a].score < scored[b].score; });
  // Sum over attacks of twice their 1-based mid-rank.
  std::uint64_t rank2_sum = 0;
  for (std::size_t i = 0; i < order.size();) {
    std::size_t j = i;
    while (j < order.size() && scored[order[j]].score == scored[order[i]].score) ++j;
    const std::uint64_t twice_mid = i + 1 + j;  // (i+1) + j = 2 * mean rank of block
    for (std::size_t k = i; k < j; ++k)
      if (scored[order[k]].label == 1) rank2_sum += twice_mid;
    i = j;
  }
  // 2U = 2 R - n_pos (n_pos + 1)
  const std::uint64_t u2 = rank2_sum - static_cast<std::uint64_t>(n_pos) * (n_pos + 1);
  return static_cast<double>(u2) / (2.0 * static_cast<double>(n_pos) * static_cast<double>(n_neg));
}

struct ErrorRates {
  double apcer = 0.0;
  double bpcer = 0.0;
};

/// APCER: attacks scored below t. BPCER: bona fide scored at or above t.
inline ErrorRates apcer_bpcer(std::span<const ScoredSample> scored, double threshold) {
  const auto [n_pos, n_neg] = detail::class_counts(scored);
  std::size_t missed = 0, false_alarm = 0;
  for (const auto& s : scored) {
    if (s.label == 1 && s.score < threshold) ++missed;
    if (s.label == 0 && s.score >= threshold) ++false_alarm;
  }
  return {static_cast<double>(missed) / static_cast<double>(n_pos),
          static_cast<double>(false_alarm) / static_cast<double>(n_neg)};
}

inline double acer(double apcer, double bpcer) {
  if (!(apcer >= 0.0 && apcer <= 1.0) || !(bpcer >= 0.0 && bpcer <= 1.0))
    throw DomainError("APCER and BPCER must lie in [0, 1]");
  return (apcer + bpcer) / 2.0;
}

/// Candidate thresholds: just below the minimum score, midpoints between
/// consecutive distinct scores, just above the maximum. Returns the ACER
/// minimizer, smallest threshold on ties.
inline double select_threshold(std::span<const ScoredSample> dev) {
  const auto [n_pos, n_neg] = detail::class_counts(dev);
  std::vector<double> attack, bonafide, all;
  for (const auto& s : dev) {
    (s.label == 1 ? attack : bonafide).push_back(s.score);
    all.push_back(s.score);
  }
  std::sort(attack.begin(), attack.end());
  std::sort(bonafide.begin(), bonafide.end());
  std::sort(all.begin(), all.end());
  all.erase(std::unique(all.begin(), all.end()), all.end());

  std::vector<double> candidates;
  candidates.push_back(std::nextafter(all.front(), -std::numeric_limits<double>::infinity()));
  for (std::size_t i = 1; i < all.size(); ++i) candidates.push_back(all[i - 1] + (all[i] - all[i - 1]) / 2.0);
  candidates.push_back(std::nextafter(all.back(), std::numeric_limits<double>::infinity()));

  double best_t = candidates.front();
  double best = std::numeric_limits<double>::infinity();
  for (double t : candidates) {
    const auto missed = static_cast<double>(std::lower_bound(attack.begin(), attack.end(), t) - attack.begin());
    const auto alarms =
        static_cast<double>(bonafide.end() - std::lower_bound(bonafide.begin(), bonafide.end(), t));
    const double a = acer(missed / static_cast<double>(n_pos), alarms / static_cast<double>(n_neg));
    if (a < best) {
      best = a;
      best_t = t;
    }
  }
  return best_t;
}

inline MetricsReport make_report(std::span<const ScoredSample> scored, double threshold) {
  const auto [n_pos, n_neg] = detail::class_counts(scored);
  const auto rates = apcer_bpcer(scored, threshold);
  MetricsReport r;
  r.apcer = rates.apcer;
  r.bpcer = rates.bpcer;
  r.acer = acer(rates.apcer, rates.bpcer);
  r.auc = auc(scored);
  r.threshold = threshold;
  r.n_attack = n_pos;
  r.n_bonafide = n_neg;
  return r;
}

// ---------------------------------------------------------------------------
// Scoring

/// softmax(z / v)[1]: the attack probability under the sample's temperature.
inline double spoof_probability(const DistributionalOutput& o) { return scaled_softmax(o.logits, o.variance)[1]; }

struct ViewScore {
  double score = 0.0;
  double v = 1.0;
};

/// Eval-mode score of one sample averaged over `views` forward passes. The
/// first view is the sample itself; the others add N(0, jitter_sigma^2) to
/// every input feature from a stream seeded by `seed`. Per-view results are
/// appended to `log` when given.
inline ViewScore tta_score(const ModelParams& params, const Sample& sample, std::size_t views, double jitter_sigma,
                           std::uint64_t seed, std::vector<ViewScore>* log = nullptr) {
  if (views < 1) throw DomainError("TTA needs at least one view");
  auto one = [&](const Sample& s) {
    const auto out = model_forward(params, std::span<const Sample>(&s, 1), Mode::eval).outputs.front();
    return ViewScore{spoof_probability(out), out.variance};
  };
  const ViewScore first = one(sample);
  if (log) log->push_back(first);
  if (views == 1 || jitter_sigma == 0.0) {
    // Identical views: their mean is the single-view value.
    if (log)
      for (std::size_t k = 1; k < views; ++k) log->push_back(first);
    return first;
  }
  Rng rng(seed);
  double score_sum = first.score, v_sum = first.v;
  Sample jittered = sample;
  for (std::size_t k = 1; k < views; ++k) {
    for (std::size_t j = 0; j < sample.features.size(); ++j)
      jittered.features[j] = sample.features[j] + jitter_sigma * rng.normal();
    const ViewScore vs = one(jittered);
    if (log) log->push_back(vs);
    score_sum += vs.score;
    v_sum += vs.v;
  }
  const double k = static_cast<double>(views);
  return {score_sum / k, v_sum / k};
}

struct TtaOptions {
  std::size_t views = 1;
  double jitter_sigma = 0.0;
  std::uint64_t seed = 0;
};

/// Scores every sample; sample i's jitter stream is keyed by (seed, i).
inline std::vector<ScoredSample> score_samples(const ModelParams& params, std::span<const Sample> samples,
                                               const TtaOptions& tta = {}) {
  std::vector<ScoredSample> out;
  out.reserve(samples.size());
  for (std::size_t i = 0; i < samples.size(); ++i) {
    const auto vs = tta_score(params, samples[i], tta.views, tta.jitter_sigma, derive_seed({tta.seed, i, 0x77aULL}));
    out.push_back({samples[i].id, samples[i].label, vs.score, vs.v});
  }
  return out;
}

struct EvalOptions {
  /// Fixed decision threshold; when empty the threshold is selected on dev.
  std::optional<double> threshold;
  TtaOptions tta;
};

struct Evaluation {
  MetricsReport report;
  std::vector<ScoredSample> scores;
};

/// Scores `split` and reports at either the fixed threshold or the one
/// selected on `dev` (scored with the same TTA settings).
inline Evaluation evaluate(const ModelParams& params, std::span<const Sample> split, const EvalOptions& opt,
                           std::span<const Sample> dev = {}) {
  Evaluation e;
  e.scores = score_samples(params, split, opt.tta);
  double t = 0.0;
  if (opt.threshold) {
    t = *opt.threshold;
  } else {
    if (dev.empty()) throw ConfigError("threshold", "dev-selected threshold needs a dev split");
    const auto dev_scores = dev.data() == split.data() && dev.size() == split.size()
                                ? e.scores
                                : score_samples(params, dev, opt.tta);
    t = select_threshold(dev_scores);
  }
  e.report = make_report(e.scores, t);
  return e;
}

/// Two lines: column header, then percentages with two decimals.
inline std::string format_table(const MetricsReport& r) {
  char buf[128];
  std::snprintf(buf, sizeof buf, "APCER BPCER ACER AUC\n%.2f %.2f %.2f %.2f", 100.0 * r.apcer, 100.0 * r.bpcer,
                100.0 * r.acer, 100.0 * r.auc);
  return buf;
}

}  // namespace dise
