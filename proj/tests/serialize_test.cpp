#include <filesystem>
#include <fstream>

#include <gtest/gtest.h>

#include "dise/serialize.hpp"

namespace dise {
namespace {

namespace fs = std::filesystem;

fs::path scratch_dir(const std::string& name) {
  const auto dir = fs::temp_directory_path() / ("dise_serialize_" + name);
  fs::remove_all(dir);
  fs::create_directories(dir);
  return dir;
}

ModelParams trained_looking_model() {
  auto p = init_model(ModelConfig{}, 21);
  Rng rng(4);
  for (auto v : parameter_views(p))
    for (double& x : v) x = rng.normal() / 3.0;
  p.bn.running_mean = 0.123456789012345678;
  p.bn.running_var = 2.0 / 3.0;
  return p;
}

TEST(Checkpoint, RoundTripIsExact) {
  const auto p = trained_looking_model();
  EXPECT_EQ(checkpoint_from_json(checkpoint_to_json(p)), p);
  const auto path = scratch_dir("ckpt") / "checkpoint.json";
  save_checkpoint(p, path);
  const auto q = load_checkpoint(path);
  EXPECT_EQ(q, p);
  // Identical outputs after reload.
  Sample s;
  s.features.assign(16, 0.7);
  EXPECT_EQ(model_forward(q, std::span<const Sample>(&s, 1), Mode::eval).outputs,
            model_forward(p, std::span<const Sample>(&s, 1), Mode::eval).outputs);
}

TEST(Checkpoint, BaselineFlagSurvives) {
  ModelConfig c;
  c.temperature_scaling = false;
  c.hidden_dims = {5};
  const auto p = init_model(c, 2);
  const auto q = checkpoint_from_json(checkpoint_to_json(p));
  EXPECT_FALSE(q.config.temperature_scaling);
  EXPECT_EQ(q, p);
}

TEST(Checkpoint, RejectsWrongFormatAndShapes) {
  auto j = checkpoint_to_json(init_model(ModelConfig{}, 0));
  auto bad = j;
  bad["format"] = "dise-ckpt/0";
  EXPECT_THROW(checkpoint_from_json(bad), FormatError);
  bad = j;
  bad["classifier"]["weight"].erase(0);
  EXPECT_THROW(checkpoint_from_json(bad), FormatError);
  bad = j;
  bad["config"]["feature_dim"] = 3;
  EXPECT_THROW(checkpoint_from_json(bad), FormatError);
  bad = j;
  bad["backbone"].erase(0);
  EXPECT_THROW(checkpoint_from_json(bad), FormatError);
  bad = j;
  bad["bn"].erase("running_var");
  EXPECT_THROW(checkpoint_from_json(bad), FormatError);
  bad = j;
  bad["bn"]["eps"] = 0.0;
  EXPECT_THROW(checkpoint_from_json(bad), FormatError);
  EXPECT_THROW(checkpoint_from_json(json::array()), FormatError);
}

TEST(Checkpoint, MalformedFile) {
  const auto path = scratch_dir("bad") / "checkpoint.json";
  std::ofstream(path) << "{ not json";
  EXPECT_THROW(load_checkpoint(path), FormatError);
  EXPECT_THROW(load_checkpoint(path.parent_path() / "absent.json"), Error);
}

TEST(DatasetSpecJson, RoundTripAndPartialOverride) {
  DatasetSpec s;
  s.seed = 99;
  s.dev.noise_sigma = 3.25;
  s.test.noise_sigma = 3.75;
  EXPECT_EQ(dataset_spec_from_json(to_json(s)), s);
  const auto partial = dataset_spec_from_json(json{{"train_per_class", 10}, {"train", {{"noise_sigma", 2.0}}}});
  EXPECT_EQ(partial.train_per_class, 10u);
  EXPECT_EQ(partial.train.noise_sigma, 2.0);
  EXPECT_EQ(partial.train.corrupted_fraction, DatasetSpec{}.train.corrupted_fraction);
}

TEST(DatasetSpecJson, ErrorsNameTheField) {
  auto field_of = [](const json& j) -> std::string {
    try {
      dataset_spec_from_json(j);
    } catch (const ConfigError& e) {
      return e.field();
    }
    return "";
  };
  EXPECT_EQ(field_of(json{{"train_per_class", -3}}), "train_per_class");
  EXPECT_EQ(field_of(json{{"separation", "wide"}}), "separation");
  EXPECT_EQ(field_of(json{{"input_dim", 0}}), "input_dim");
  EXPECT_EQ(field_of(json{{"bogus", 1}}), "bogus");
  EXPECT_EQ(field_of(json{{"dev", {{"noise_sigma", "x"}}}}), "dev.noise_sigma");
  EXPECT_EQ(field_of(json{{"train", {{"corrupted_fraction", 1.5}}}}), "train.corrupted_fraction");
  EXPECT_EQ(field_of(json::array()), "spec");
}

TEST(ConfigJson, TrainAndModelRoundTrip) {
  TrainConfig t;
  t.epochs = 7;
  t.lambda = 0.25;
  t.use_dise = false;
  TrainConfig t2;
  merge_train_config(to_json(t), t2);
  EXPECT_EQ(to_json(t2), to_json(t));
  ModelConfig m;
  m.hidden_dims = {3, 4, 5};
  ModelConfig m2;
  merge_model_config(to_json(m), m2);
  EXPECT_EQ(m2, m);
  EXPECT_THROW(merge_train_config(json{{"epochs", 1.5}}, t2), ConfigError);
  EXPECT_THROW(merge_train_config(json{{"use_dise", 1}}, t2), ConfigError);
}

TEST(Report, RoundTripAndDocument) {
  MetricsReport r{0.25, 0.125, 0.1875, 0.8125, 0.4375, 8, 16};
  EXPECT_EQ(report_from_json(to_json(r)), r);
  const auto doc = report_document(r);
  EXPECT_EQ(doc["format"], kReportFormat);
  EXPECT_EQ(doc["table"], format_table(r));
}

TEST(History, RoundTrip) {
  TrainHistory h;
  h.steps = {{0, 0.005, 0.7, 0.1, 0.701}, {1, 0.01, 0.6, 0.2, 0.602}};
  h.epochs = {{0, MetricsReport{0.1, 0.2, 0.15, 0.9, 0.5, 3, 4}}};
  h.final_train_v = {{"train-000000", 1.2}, {"train-000001", 3.4}};
  EXPECT_EQ(history_from_json(history_to_json(h)), h);
  auto bad = history_to_json(h);
  bad["format"] = kReportFormat;
  EXPECT_THROW(history_from_json(bad), FormatError);
}

TEST(Files, DatasetDirectoryRoundTrip) {
  DatasetSpec spec;
  spec.train_per_class = 20;
  spec.dev_per_class = 10;
  spec.test_per_class = 10;
  const auto ds = generate_dataset(spec);
  const auto dir = scratch_dir("data");
  save_dataset(ds, spec, dir);
  EXPECT_EQ(load_split(dir, "train"), ds.train);
  EXPECT_EQ(load_split(dir, "test"), ds.test);
  EXPECT_EQ(dataset_spec_from_json(detail::read_json(dir / "spec.json")), spec);
  fs::remove(dir / "dev.csv");
  EXPECT_THROW(load_split(dir, "dev"), Error);
}

TEST(Files, ScoreDump) {
  const auto path = scratch_dir("scores") / "scores.csv";
  const std::vector<ScoredSample> s{{"a", 1, 0.75, 1.5}, {"b", 0, 0.1, 0.7}};
  write_scores(s, path);
  std::ifstream is(path);
  std::string text((std::istreambuf_iterator<char>(is)), {});
  EXPECT_EQ(text, "id,label,score,v\na,1,0.75,1.5\nb,0,0.1,0.7\n");
}

}  // namespace
}  // namespace dise
