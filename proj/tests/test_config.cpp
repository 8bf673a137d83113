#include <gtest/gtest.h>

#include <filesystem>
#include <fstream>

#include "eqpose/config.hpp"

using namespace eqpose;
namespace fs = std::filesystem;

namespace {

std::string message_of(const nlohmann::json& j, const char* env = nullptr,
                       PathRequirements need = {}) {
  try {
    parse_run_config(j, env, need);
  } catch (const ConfigError& e) {
    return e.what();
  }
  return "";
}

fs::path temp_dir(const std::string& name) {
  const fs::path p = fs::temp_directory_path() / ("eqpose_cfg_" + name);
  fs::remove_all(p);
  fs::create_directories(p);
  return p;
}

}  // namespace

TEST(RunConfig, DefaultsFromEmptyObject) {
  const RunConfig c = parse_run_config(nlohmann::json::object(), nullptr);
  EXPECT_EQ(c.seed, 0u);
  EXPECT_EQ(c.category, "plane");
  EXPECT_EQ(c.batch, 8u);
  EXPECT_EQ(c.steps, 5000u);
  EXPECT_DOUBLE_EQ(c.lambda, 0.1);
  EXPECT_DOUBLE_EQ(c.lr, 5e-4);
  EXPECT_DOUBLE_EQ(c.lr_decay, 0.9995);
  EXPECT_EQ(c.checkpoint_every, 500u);
  EXPECT_EQ(c.encoder.layers.size(), 3u);
  EXPECT_EQ(c.output_dir(), c.run_dir);
}

TEST(RunConfig, StepsZeroIsRejected) {
  const auto msg = message_of({{"train", {{"steps", 0}}}});
  EXPECT_NE(msg.find("train.steps must be > 0"), std::string::npos) << msg;
}

TEST(RunConfig, EveryViolationIsListed) {
  const nlohmann::json j = {{"category", "boat"},
                            {"precision", "fp16"},
                            {"train", {{"steps", 0}, {"lambda", -1.0}, {"batch", 0}}},
                            {"data", {{"policy", "sideways"}}}};
  const auto msg = message_of(j);
  for (const char* part : {"category 'boat'", "precision", "train.steps",
                           "train.lambda", "train.batch", "data.policy"})
    EXPECT_NE(msg.find(part), std::string::npos) << part << "\n" << msg;
}

TEST(RunConfig, UnknownKeysAndWrongTypesAreErrors) {
  const nlohmann::json j = {{"colour", "red"},
                            {"train", {{"stepz", 10}, {"lr", "fast"}}},
                            {"seed", -3}};
  const auto msg = message_of(j);
  EXPECT_NE(msg.find("colour is not a known setting"), std::string::npos) << msg;
  EXPECT_NE(msg.find("train.stepz is not a known setting"), std::string::npos) << msg;
  EXPECT_NE(msg.find("train.lr must be a number"), std::string::npos) << msg;
  EXPECT_NE(msg.find("seed must be a non-negative integer"), std::string::npos) << msg;
}

TEST(RunConfig, LambdaZeroIsAllowed) {
  EXPECT_EQ(parse_run_config({{"train", {{"lambda", 0.0}}}}, nullptr).lambda, 0.0);
}

TEST(RunConfig, EnvSeedIsAFallbackOnly) {
  EXPECT_EQ(parse_run_config(nlohmann::json::object(), "77").seed, 77u);
  EXPECT_EQ(parse_run_config({{"seed", 5}}, "77").seed, 5u);
  EXPECT_NE(message_of(nlohmann::json::object(), "x1").find("EQPOSE_SEED"),
            std::string::npos);
}

TEST(RunConfig, MissingPathsAreReported) {
  const nlohmann::json j = {{"data_dir", "/nonexistent/eqpose"},
                            {"checkpoint", "/nonexistent/c.eqps"},
                            {"template", "/nonexistent/t.ply"}};
  const auto msg = message_of(j, nullptr, {true, true});
  EXPECT_NE(msg.find("has no manifest.json"), std::string::npos) << msg;
  EXPECT_NE(msg.find("checkpoint '/nonexistent/c.eqps'"), std::string::npos) << msg;
  EXPECT_NE(msg.find("template '/nonexistent/t.ply'"), std::string::npos) << msg;
  EXPECT_NE(message_of(nlohmann::json::object(), nullptr, {false, true})
                .find("checkpoint is required"),
            std::string::npos);
}

TEST(RunConfig, EncoderLayersAreValidated) {
  const nlohmann::json j = {
      {"model", {{"layers", {{{"points", 300}, {"channels", 8}, {"radius", 0.2}}}}}}};
  const auto msg = message_of(j);
  EXPECT_NE(msg.find("strictly below"), std::string::npos) << msg;
}

TEST(RunConfig, TomlFileWithOverrides) {
  const auto dir = temp_dir("toml");
  const auto path = dir / "run.toml";
  std::ofstream(path) << "seed = 3\ncategory = \"bottle\"\n"
                         "[train]\nsteps = 200\nlr = 1e-3\n"
                         "[[model.layers]]\npoints = 64\nchannels = 8\nradius = 0.3\n"
                         "[[model.layers]]\npoints = 32\nchannels = 8\nradius = 0.6\n";
  nlohmann::json j = load_config_file(path.string());
  apply_override(j, "train.steps=50");
  apply_override(j, "run_dir=out/run1");
  apply_override(j, "data.partial=true");
  const RunConfig c = parse_run_config(j, "99");
  EXPECT_EQ(c.seed, 3u);
  EXPECT_EQ(c.category, "bottle");
  EXPECT_EQ(c.steps, 50u);
  EXPECT_DOUBLE_EQ(c.lr, 1e-3);
  EXPECT_EQ(c.run_dir, "out/run1");
  EXPECT_TRUE(c.partial);
  ASSERT_EQ(c.encoder.layers.size(), 2u);
  EXPECT_EQ(c.encoder.layers[1].points, 32u);
  EXPECT_EQ(c.encoder.layers[1].max_neighbors, 32u);
  EXPECT_EQ(c.distance_mode(c.partial), DistanceMode::partial);
}

TEST(RunConfig, TomlSyntaxErrorNamesTheFile) {
  const auto dir = temp_dir("bad");
  const auto path = dir / "bad.toml";
  std::ofstream(path) << "seed = = 3\n";
  try {
    load_config_file(path.string());
    FAIL();
  } catch (const ConfigError& e) {
    EXPECT_NE(std::string(e.what()).find("bad.toml"), std::string::npos);
  }
  EXPECT_THROW(load_config_file((dir / "missing.toml").string()), ConfigError);
}

TEST(RunConfig, JsonFileAndRoundTrip) {
  RunConfig c;
  c.seed = 11;
  c.category = "chair";
  c.steps = 123;
  c.partial = true;
  c.icp_template_count = 3;
  const auto dir = temp_dir("json");
  const auto path = dir / "run.json";
  std::ofstream(path) << to_json(c).dump();
  const RunConfig back = parse_run_config(load_config_file(path.string()), nullptr);
  EXPECT_EQ(to_json(back), to_json(c));
}

TEST(RunConfig, OverrideSyntax) {
  nlohmann::json j = nlohmann::json::object();
  EXPECT_THROW(apply_override(j, "novalue"), ConfigError);
  EXPECT_THROW(apply_override(j, "=3"), ConfigError);
  apply_override(j, "a.b.c=[1,2]");
  EXPECT_EQ(j["a"]["b"]["c"], nlohmann::json::array({1, 2}));
}

TEST(RunConfig, DerivedStructs) {
  RunConfig c;
  c.seed = 4;
  c.points = 128;
  c.calibration = "test";
  const auto m = c.manifest();
  EXPECT_EQ(m.seed, 4u);
  EXPECT_EQ(m.points, 128u);
  EXPECT_EQ(c.model().encoder.input_points, 128u);
  EXPECT_EQ(c.eval(false).source, CalibrationSource::test_split);
  EXPECT_EQ(c.train(true).mode, DistanceMode::partial);
  c.mode = "complete";
  EXPECT_EQ(c.train(true).mode, DistanceMode::complete);
}
