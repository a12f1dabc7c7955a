#include <cmath>
#include <sstream>

#include <gtest/gtest.h>

#include "dise/data.hpp"

namespace dise {
namespace {

DatasetSpec counts(std::size_t tr, std::size_t dv, std::size_t te) {
  DatasetSpec s;
  s.input_dim = 4;
  s.train_per_class = tr;
  s.dev_per_class = dv;
  s.test_per_class = te;
  return s;
}

std::string to_csv(const DatasetSplit& s) {
  std::ostringstream os;
  write_split(s, os);
  return os.str();
}

TEST(GenerateDataset, SplitSizes) {
  const auto ds = generate_dataset(counts(100, 50, 80));
  EXPECT_EQ(ds.train.samples.size(), 200u);
  EXPECT_EQ(ds.dev.samples.size(), 100u);
  EXPECT_EQ(ds.test.samples.size(), 160u);
  EXPECT_EQ(ds.train.name, "train");
  EXPECT_EQ(ds.test.samples.front().id, "test-000000");
}

TEST(GenerateDataset, NoCorruptionMeansCleanSamples) {
  auto spec = counts(30, 30, 30);
  spec.train = spec.dev = spec.test = CorruptionSpec{};
  const auto ds = generate_dataset(spec);
  for (const auto* split : {&ds.train, &ds.dev, &ds.test})
    for (const auto& s : split->samples) {
      EXPECT_FALSE(s.corrupted);
      EXPECT_EQ(s.quality, 1.0);
    }
}

TEST(GenerateDataset, ByteIdenticalForSameSeed) {
  const auto spec = counts(40, 20, 20);
  const auto a = generate_dataset(spec), b = generate_dataset(spec);
  EXPECT_EQ(to_csv(a.train), to_csv(b.train));
  EXPECT_EQ(to_csv(a.test), to_csv(b.test));
  auto other = spec;
  other.seed = 1;
  EXPECT_NE(to_csv(generate_dataset(other).train), to_csv(a.train));
}

TEST(GenerateDataset, ClassMeansOpposeAtRequestedSeparation) {
  auto spec = counts(4000, 1, 1);
  spec.train = spec.dev = spec.test = CorruptionSpec{};
  spec.separation = 6.0;
  const auto ds = generate_dataset(spec);
  std::vector<double> m0(4, 0.0), m1(4, 0.0);
  for (const auto& s : ds.train.samples)
    for (std::size_t k = 0; k < 4; ++k) (s.label == 0 ? m0 : m1)[k] += s.features[k] / 4000.0;
  double dist = 0.0;
  for (std::size_t k = 0; k < 4; ++k) {
    EXPECT_NEAR(m0[k], 1.5, 0.05);  // 6 / (2 sqrt 4)
    EXPECT_NEAR(m1[k], -1.5, 0.05);
    dist += (m0[k] - m1[k]) * (m0[k] - m1[k]);
  }
  EXPECT_NEAR(std::sqrt(dist), 6.0, 0.1);
}

TEST(GenerateDataset, RejectsInvalidSpec) {
  auto s = counts(0, 1, 1);
  EXPECT_THROW(generate_dataset(s), ConfigError);
  s = counts(1, 1, 1);
  s.dev.noise_sigma = 0.5;  // milder than train's 3.0
  try {
    generate_dataset(s);
    FAIL();
  } catch (const ConfigError& e) {
    EXPECT_EQ(e.field(), "dev");
  }
  s = counts(1, 1, 1);
  s.train.label_flip_prob = 1.5;
  try {
    generate_dataset(s);
    FAIL();
  } catch (const ConfigError& e) {
    EXPECT_EQ(e.field(), "train.label_flip_prob");
  }
}

TEST(Corrupt, IdentityWhenNothingApplied) {
  Sample s{"a", 1, 1.0, {0.5, -0.5}, false};
  Rng rng(0);
  EXPECT_EQ(corrupt(s, CorruptionSpec{1.0, 0.0, 0.0}, 1.0, rng), s);
}

TEST(Corrupt, CertainFlip) {
  Rng rng(0);
  for (int label : {0, 1}) {
    Sample s{"a", label, 1.0, {0.5}, false};
    const auto out = corrupt(s, CorruptionSpec{1.0, 0.0, 1.0}, 1.0, rng);
    EXPECT_EQ(out.label, 1 - label);
    EXPECT_TRUE(out.corrupted);
    EXPECT_EQ(out.features, s.features);
    EXPECT_EQ(out.quality, 1.0);
  }
}

TEST(Corrupt, NoiseHasRequestedSigma) {
  Rng rng(17);
  const CorruptionSpec spec{1.0, 5.0, 0.0};
  double sum = 0.0, sq = 0.0;
  const int n = 10000;
  for (int i = 0; i < n; ++i) {
    Sample s{"a", 0, 1.0, {1.0}, false};
    const double d = corrupt(s, spec, 1.0, rng).features[0] - 1.0;
    sum += d;
    sq += d * d;
  }
  const double mean = sum / n;
  const double sd = std::sqrt(sq / n - mean * mean);
  EXPECT_NEAR(sd, 5.0, 0.5);
  EXPECT_NEAR(mean, 0.0, 0.2);
}

TEST(Corrupt, QualityDropsWithNoise) {
  Rng rng(1);
  Sample s{"a", 0, 1.0, {0.0}, false};
  const auto out = corrupt(s, CorruptionSpec{1.0, 3.0, 0.0}, 1.0, rng);
  EXPECT_TRUE(out.corrupted);
  EXPECT_NEAR(out.quality, 2.0 / (1.0 + std::sqrt(10.0)), 1e-15);
}

// Properties

TEST(DatasetProperties, SeverityOrderLabelBalanceAndIsolation) {
  Rng rng(99);
  for (std::uint64_t trial = 0; trial < 30; ++trial) {
    auto spec = counts(20 + trial, 15 + trial, 25);
    spec.seed = trial;
    double f = rng.uniform(0, 0.5), sig = rng.uniform(0, 3), p = rng.uniform(0, 0.3);
    spec.train = {f, sig, p};
    f += rng.uniform(0.05, 0.25), sig += rng.uniform(0, 2), p += rng.uniform(0, 0.2);
    spec.dev = {f, sig, p};
    f += rng.uniform(0.05, 0.25), sig += rng.uniform(0, 2), p += rng.uniform(0, 0.2);
    spec.test = {f, sig, p};
    const auto ds = generate_dataset(spec);

    auto mean_quality = [](const DatasetSplit& s) {
      double q = 0.0;
      for (const auto& x : s.samples) q += x.quality;
      return q / static_cast<double>(s.samples.size());
    };
    EXPECT_GE(mean_quality(ds.train), mean_quality(ds.dev));
    EXPECT_GE(mean_quality(ds.dev), mean_quality(ds.test));

    // Before flips: exact per-class counts; flipped samples are flagged.
    for (const auto* split : {&ds.train, &ds.dev, &ds.test}) {
      const std::size_t per_class = split->samples.size() / 2;
      for (std::size_t i = 0; i < split->samples.size(); ++i) {
        const auto& s = split->samples[i];
        const int original = i < per_class ? 0 : 1;
        if (s.label != original) {
          EXPECT_TRUE(s.corrupted);
        }
        EXPECT_GE(s.quality, 0.0);
        EXPECT_LE(s.quality, 1.0);
      }
    }

    // Changing dev's spec leaves train and test bytes alone.
    auto changed = spec;
    changed.dev.label_flip_prob = std::min(1.0, spec.test.label_flip_prob);
    changed.dev.corrupted_fraction = spec.test.corrupted_fraction;
    const auto ds2 = generate_dataset(changed);
    EXPECT_EQ(to_csv(ds.train), to_csv(ds2.train));
    EXPECT_EQ(to_csv(ds.test), to_csv(ds2.test));
  }
}

TEST(DatasetProperties, CorruptedFractionIsExact) {
  auto spec = counts(50, 50, 50);
  spec.train = {0.3, 3.0, 0.0};
  const auto ds = generate_dataset(spec);
  std::size_t n = 0;
  for (const auto& s : ds.train.samples) n += s.corrupted;
  EXPECT_EQ(n, 30u);
}

// CSV

TEST(Csv, RoundTripIsLossless) {
  const auto ds = generate_dataset(counts(25, 5, 5));
  const auto text = to_csv(ds.train);
  std::istringstream is(text);
  const auto back = read_split(is, "train");
  EXPECT_EQ(back, ds.train);
  EXPECT_EQ(text.substr(0, text.find('\n')), "id,label,quality,corrupted,f0,f1,f2,f3");
}

TEST(Csv, RejectsBadLabelWithLineNumber) {
  std::istringstream is("id,label,quality,corrupted,f0\na,0,1,0,0.5\nb,2,1,0,0.5\n");
  try {
    read_split(is);
    FAIL();
  } catch (const ParseError& e) {
    EXPECT_EQ(e.line(), 3u);
  }
}

TEST(Csv, RejectsEmptyFileAndBadHeader) {
  std::istringstream empty("");
  EXPECT_THROW(read_split(empty), FormatError);
  std::istringstream bad("id,label,quality,corrupt,f0\n");
  EXPECT_THROW(read_split(bad), FormatError);
  std::istringstream order("id,label,quality,corrupted,f1\n");
  EXPECT_THROW(read_split(order), FormatError);
}

TEST(Csv, RejectsMalformedRows) {
  for (const char* row : {"a,0,1,0\n", "a,0,1.5,0,1\n", "a,0,1,2,1\n", "a,0,1,0,abc\n", "a,0,1,0,nan\n", ",0,1,0,1\n"}) {
    std::istringstream is(std::string("id,label,quality,corrupted,f0\n") + row);
    EXPECT_THROW(read_split(is), ParseError) << row;
  }
}

}  // namespace
}  // namespace dise
