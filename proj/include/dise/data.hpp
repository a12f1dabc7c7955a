#pragma once

#include <array>
#include <charconv>
#include <algorithm>
#include <cmath>
#include <cstdio>
#include <cstdint>
#include <fstream>
#include <sstream>
#include <string>
#include <string_view>
#include <system_error>
#include <vector>

#include "dise/errors.hpp"
#include "dise/random.hpp"
#include "dise/sample.hpp"

namespace dise {

/// Degradation applied to a fraction of a split: additive feature noise plus
/// label flips.
struct CorruptionSpec {
  double corrupted_fraction = 0.0;
  double noise_sigma = 0.0;
  double label_flip_prob = 0.0;

  void validate(const std::string& prefix) const {
    if (!(corrupted_fraction >= 0.0 && corrupted_fraction <= 1.0))
      throw ConfigError(prefix + ".corrupted_fraction", "must lie in [0, 1]");
    if (!(noise_sigma >= 0.0) || !std::isfinite(noise_sigma))
      throw ConfigError(prefix + ".noise_sigma", "must be finite and >= 0");
    if (!(label_flip_prob >= 0.0 && label_flip_prob <= 1.0))
      throw ConfigError(prefix + ".label_flip_prob", "must lie in [0, 1]");
  }

  /// Componentwise "no more severe than".
  bool milder_or_equal(const CorruptionSpec& o) const {
    return corrupted_fraction <= o.corrupted_fraction && noise_sigma <= o.noise_sigma &&
           label_flip_prob <= o.label_flip_prob;
  }

  bool operator==(const CorruptionSpec&) const = default;
};

enum class SplitId : std::uint64_t { train = 0, dev = 1, test = 2 };

inline const char* split_name(SplitId s) {
  switch (s) {
    case SplitId::train: return "train";
    case SplitId::dev: return "dev";
    case SplitId::test: return "test";
  }
  return "?";
}

struct DatasetSpec {
  std::size_t input_dim = 16;
  std::size_t train_per_class = 500;
  std::size_t dev_per_class = 250;
  std::size_t test_per_class = 500;
  /// Euclidean distance between the two class means.
  double separation = 3.0;
  double base_sigma = 1.0;
  CorruptionSpec train{0.3, 3.0, 0.3};
  CorruptionSpec dev{0.4, 3.0, 0.3};
  CorruptionSpec test{0.5, 3.5, 0.3};
  std::uint64_t seed = 0;

  std::size_t per_class(SplitId s) const {
    return s == SplitId::train ? train_per_class : s == SplitId::dev ? dev_per_class : test_per_class;
  }
  const CorruptionSpec& corruption(SplitId s) const {
    return s == SplitId::train ? train : s == SplitId::dev ? dev : test;
  }

  void validate() const {
    if (input_dim < 1) throw ConfigError("input_dim", "must be >= 1");
    if (train_per_class < 1) throw ConfigError("train_per_class", "must be >= 1");
    if (dev_per_class < 1) throw ConfigError("dev_per_class", "must be >= 1");
    if (test_per_class < 1) throw ConfigError("test_per_class", "must be >= 1");
    if (!(separation > 0.0) || !std::isfinite(separation)) throw ConfigError("separation", "must be > 0");
    if (!(base_sigma > 0.0) || !std::isfinite(base_sigma)) throw ConfigError("base_sigma", "must be > 0");
    train.validate("train");
    dev.validate("dev");
    test.validate("test");
    if (!train.milder_or_equal(dev)) throw ConfigError("dev", "must be at least as severe as train");
    if (!dev.milder_or_equal(test)) throw ConfigError("test", "must be at least as severe as dev");
  }

  bool operator==(const DatasetSpec&) const = default;
};

struct DatasetSplit {
  std::string name;
  std::vector<Sample> samples;

  bool operator==(const DatasetSplit&) const = default;
};

struct Dataset {
  DatasetSplit train;
  DatasetSplit dev;
  DatasetSplit test;
};

/// Quality of a sample whose features carry total noise `sigma`, relative to
/// a clean sample (noise `base_sigma`): (1 + base) / (1 + sigma), in (0, 1].
inline double relative_quality(double base_sigma, double sigma) { return (1.0 + base_sigma) / (1.0 + sigma); }

/// Adds N(0, spec.noise_sigma^2) to every feature and flips the label with
/// probability spec.label_flip_prob. `base_sigma` is the noise already in
/// the sample and sets the quality scale.
inline Sample corrupt(Sample s, const CorruptionSpec& spec, double base_sigma, Rng& rng) {
  if (spec.noise_sigma > 0.0) {
    for (auto& x : s.features) x += spec.noise_sigma * rng.normal();
    const double total = std::sqrt(base_sigma * base_sigma + spec.noise_sigma * spec.noise_sigma);
    s.quality = std::min(s.quality, relative_quality(base_sigma, total));
    s.corrupted = true;
  }
  if (spec.label_flip_prob > 0.0 && rng.bernoulli(spec.label_flip_prob)) {
    s.label = 1 - s.label;
    s.corrupted = true;
  }
  return s;
}

/// One split. Class 0 is centred at +mu, class 1 at -mu along every
/// coordinate. Randomness comes from streams keyed by (seed, split) for the
/// choice of corrupted samples and (seed, split, index) per sample, so one
/// split's spec never changes another split's contents.
inline DatasetSplit generate_split(const DatasetSpec& spec, SplitId which) {
  const std::size_t per_class = spec.per_class(which);
  const std::size_t n = 2 * per_class;
  const auto split_key = static_cast<std::uint64_t>(which);
  const double mu = spec.separation / (2.0 * std::sqrt(static_cast<double>(spec.input_dim)));
  const auto& cspec = spec.corruption(which);

  std::vector<std::size_t> order(n);
  for (std::size_t i = 0; i < n; ++i) order[i] = i;
  Rng pick(derive_seed({spec.seed, split_key, 0x5e1ecULL}));
  pick.shuffle(order);
  const auto n_corrupt = static_cast<std::size_t>(std::llround(cspec.corrupted_fraction * static_cast<double>(n)));
  std::vector<bool> selected(n, false);
  for (std::size_t i = 0; i < n_corrupt; ++i) selected[order[i]] = true;

  DatasetSplit out;
  out.name = split_name(which);
  out.samples.reserve(n);
  char id[64];
  for (std::size_t i = 0; i < n; ++i) {
    Sample s;
    std::snprintf(id, sizeof id, "%s-%06zu", out.name.c_str(), i);
    s.id = id;
    s.label = i < per_class ? 0 : 1;
    const double centre = s.label == 0 ? mu : -mu;
    Rng base(derive_seed({spec.seed, split_key, i, 0xba5eULL}));
    s.features.resize(spec.input_dim);
    for (auto& x : s.features) x = centre + spec.base_sigma * base.normal();
    if (selected[i]) {
      Rng noise(derive_seed({spec.seed, split_key, i, 0xc0de5ULL}));
      s = corrupt(std::move(s), cspec, spec.base_sigma, noise);
    }
    out.samples.push_back(std::move(s));
  }
  return out;
}

inline Dataset generate_dataset(const DatasetSpec& spec) {
  spec.validate();
  return {generate_split(spec, SplitId::train), generate_split(spec, SplitId::dev),
          generate_split(spec, SplitId::test)};
}

// ---------------------------------------------------------------------------
// CSV: id,label,quality,corrupted,f0,...,f{d-1}

/// Shortest decimal that parses back to the same double.
inline std::string format_double(double x) {
  char buf[64];
  auto [end, ec] = std::to_chars(buf, buf + sizeof buf, x);
  return std::string(buf, end);
}

inline std::string csv_header(std::size_t dim) {
  std::string h = "id,label,quality,corrupted";
  for (std::size_t k = 0; k < dim; ++k) h += ",f" + std::to_string(k);
  return h;
}

inline void write_split(const DatasetSplit& split, std::ostream& os) {
  const std::size_t dim = split.samples.empty() ? 0 : split.samples.front().features.size();
  os << csv_header(dim) << '\n';
  for (const auto& s : split.samples) {
    if (s.features.size() != dim) throw ShapeError("samples of one split differ in dimension");
    os << s.id << ',' << s.label << ',' << format_double(s.quality) << ',' << (s.corrupted ? 1 : 0);
    for (double x : s.features) os << ',' << format_double(x);
    os << '\n';
  }
}

inline void write_split(const DatasetSplit& split, const std::string& path) {
  std::ofstream os(path, std::ios::binary);
  if (!os) throw Error("cannot open " + path + " for writing");
  write_split(split, os);
  if (!os) throw Error("write failed: " + path);
}

namespace detail {

inline std::vector<std::string_view> split_fields(std::string_view line) {
  std::vector<std::string_view> out;
  std::size_t start = 0;
  for (;;) {
    const auto pos = line.find(',', start);
    out.push_back(line.substr(start, pos == std::string_view::npos ? std::string_view::npos : pos - start));
    if (pos == std::string_view::npos) break;
    start = pos + 1;
  }
  return out;
}

inline double parse_double(std::string_view f, std::size_t line, const char* what) {
  double x = 0.0;
  auto [ptr, ec] = std::from_chars(f.data(), f.data() + f.size(), x);
  if (ec != std::errc() || ptr != f.data() + f.size() || !std::isfinite(x))
    throw ParseError(line, std::string("bad ") + what + " '" + std::string(f) + "'");
  return x;
}

}  // namespace detail

inline DatasetSplit read_split(std::istream& is, std::string name = {}) {
  std::string line;
  if (!std::getline(is, line) || line.empty()) throw FormatError("missing header");
  if (!line.empty() && line.back() == '\r') line.pop_back();
  const auto head = detail::split_fields(line);
  if (head.size() < 4) throw FormatError("header mismatch: '" + line + "'");
  const std::size_t dim = head.size() - 4;
  if (line != csv_header(dim)) throw FormatError("header mismatch: '" + line + "'");

  DatasetSplit split;
  split.name = std::move(name);
  std::size_t lineno = 1;
  while (std::getline(is, line)) {
    ++lineno;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty()) continue;
    const auto f = detail::split_fields(line);
    if (f.size() != dim + 4)
      throw ParseError(lineno, "expected " + std::to_string(dim + 4) + " fields, got " + std::to_string(f.size()));
    Sample s;
    s.id = std::string(f[0]);
    if (s.id.empty()) throw ParseError(lineno, "empty id");
    if (f[1] == "0" || f[1] == "1") s.label = f[1][0] - '0';
    else throw ParseError(lineno, "label must be 0 or 1, got '" + std::string(f[1]) + "'");
    s.quality = detail::parse_double(f[2], lineno, "quality");
    if (s.quality < 0.0 || s.quality > 1.0) throw ParseError(lineno, "quality outside [0, 1]");
    if (f[3] == "0" || f[3] == "1") s.corrupted = f[3] == "1";
    else throw ParseError(lineno, "corrupted must be 0 or 1");
    s.features.reserve(dim);
    for (std::size_t k = 0; k < dim; ++k) s.features.push_back(detail::parse_double(f[4 + k], lineno, "feature"));
    split.samples.push_back(std::move(s));
  }
  return split;
}

inline DatasetSplit read_split(const std::string& path, std::string name = {}) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw Error("cannot open " + path);
  return read_split(is, std::move(name));
}

}  // namespace dise
