#pragma once

// Run configuration: TOML or JSON file, flag overrides, validation.

#include <algorithm>
#include <cstdint>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <string>
#include <type_traits>
#include <vector>

#include <json.hpp>
#include <toml.hpp>

#include "eqpose/backbone.hpp"
#include "eqpose/dataset.hpp"
#include "eqpose/errors.hpp"
#include "eqpose/heads.hpp"
#include "eqpose/model.hpp"
#include "eqpose/pipeline.hpp"
#include "eqpose/train.hpp"

namespace eqpose {

struct RunConfig {
  std::uint64_t seed = 0;
  std::string category = "plane";
  std::string data_dir = "data";
  std::string run_dir = "run";
  std::string checkpoint;     // resume source for train, weights for eval/export
  std::string template_path;  // instance mode
  std::string out_dir;        // eval/export output, defaults to run_dir
  std::string precision = "fp32";

  // data
  std::size_t points = 256;
  std::size_t train_instances = 50, train_views = 40;
  std::size_t test_instances = 10, test_views = 5;
  std::string policy = "full-sphere";
  bool partial = false;
  double jitter = 0;
  bool single_instance = false;

  // model
  EncoderConfig encoder = EncoderConfig::desk_default();
  HeadConfig heads;

  // train
  std::size_t batch = 8;
  std::size_t steps = 5000;
  double lambda = lambda_default();
  double lr = 5e-4;
  double lr_decay = 0.9995;
  std::string mode = "auto";  // auto follows the dataset's partial flag
  std::size_t checkpoint_every = 500;
  bool weights_only = false;

  // eval
  std::string calibration = "train";
  std::size_t calibration_views = 2;
  double tau_r_deg = 15;
  double tau_t = 0.05;
  std::size_t ransac_iterations = 256;

  // icp baseline; templates default to the first training instances
  std::vector<std::string> icp_templates;
  std::size_t icp_template_count = 1;
  std::size_t icp_max_iter = 100;
  double icp_tol = 1e-6;

  DatasetManifest manifest() const {
    DatasetManifest m;
    m.seed = seed;
    m.category = category;
    m.points = points;
    m.train_instances = train_instances;
    m.train_views = train_views;
    m.test_instances = test_instances;
    m.test_views = test_views;
    m.policy = view_policy_from_string(policy);
    m.partial = partial;
    m.jitter = jitter;
    m.single_instance = single_instance;
    return m;
  }

  ModelConfig model() const {
    ModelConfig c;
    c.encoder = encoder;
    c.encoder.input_points = points;
    c.heads = heads;
    return c;
  }

  DistanceMode distance_mode(bool dataset_partial) const {
    if (mode == "complete") return DistanceMode::complete;
    if (mode == "partial") return DistanceMode::partial;
    return dataset_partial ? DistanceMode::partial : DistanceMode::complete;
  }

  TrainConfig train(bool dataset_partial) const {
    TrainConfig t;
    t.seed = seed;
    t.batch = batch;
    t.steps = steps;
    t.lambda = lambda;
    t.lr = lr;
    t.lr_decay = lr_decay;
    t.mode = distance_mode(dataset_partial);
    t.checkpoint_every = checkpoint_every;
    return t;
  }

  EvalOptions eval(bool dataset_partial) const {
    EvalOptions o;
    o.mode = distance_mode(dataset_partial);
    o.source = calibration == "test" ? CalibrationSource::test_split
                                     : CalibrationSource::train_split;
    o.calibration_views = calibration_views;
    o.ransac.tau_r_deg = tau_r_deg;
    o.ransac.tau_t = tau_t;
    o.ransac.iterations = ransac_iterations;
    o.ransac.seed = seed;
    return o;
  }

  std::string output_dir() const { return out_dir.empty() ? run_dir : out_dir; }
};

/// Which referenced paths must already exist.
struct PathRequirements {
  bool dataset = false;
  bool checkpoint = false;
};

namespace detail {

inline nlohmann::json toml_to_json(const std::string& text, const std::string& origin) {
  try {
    const toml::table tbl = toml::parse(text, origin);
    std::ostringstream os;
    os << toml::json_formatter{tbl};
    return nlohmann::json::parse(os.str());
  } catch (const toml::parse_error& e) {
    std::ostringstream os;
    os << origin << ":" << e.source().begin.line << ": " << e.description();
    throw ConfigError("cannot parse TOML config " + os.str());
  }
}

// Sets a dotted key ("train.steps") in a JSON object.
inline void set_dotted(nlohmann::json& j, const std::string& key, nlohmann::json value) {
  nlohmann::json* cur = &j;
  std::size_t start = 0;
  for (;;) {
    const std::size_t dot = key.find('.', start);
    const std::string part = key.substr(start, dot - start);
    if (dot == std::string::npos) {
      (*cur)[part] = std::move(value);
      return;
    }
    if (!cur->contains(part) || !(*cur)[part].is_object())
      (*cur)[part] = nlohmann::json::object();
    cur = &(*cur)[part];
    start = dot + 1;
  }
}

// Reads typed fields from a JSON object and records every problem.
class Reader {
 public:
  Reader(const nlohmann::json& j, std::string prefix, std::vector<std::string>& errors)
      : j_(j), prefix_(std::move(prefix)), errors_(errors) {
    if (!j_.is_object()) errors_.push_back(where("") + " must be a table");
  }

  template <class V>
  void get(const std::string& key, V& out) {
    seen_.push_back(key);
    if (!j_.is_object() || !j_.contains(key)) return;
    const auto& v = j_.at(key);
    if constexpr (std::is_same_v<V, bool>) {
      if (!v.is_boolean()) return bad(key, "a boolean");
      out = v.get<bool>();
    } else if constexpr (std::is_same_v<V, std::string>) {
      if (!v.is_string()) return bad(key, "a string");
      out = v.get<std::string>();
    } else if constexpr (std::is_same_v<V, std::vector<std::string>>) {
      if (!v.is_array()) return bad(key, "an array of strings");
      V tmp;
      for (const auto& e : v) {
        if (!e.is_string()) return bad(key, "an array of strings");
        tmp.push_back(e.get<std::string>());
      }
      out = std::move(tmp);
    } else if constexpr (std::is_floating_point_v<V>) {
      if (!v.is_number()) return bad(key, "a number");
      out = v.get<V>();
    } else {
      if (!v.is_number_integer() || (v.is_number_integer() && v.get<long long>() < 0))
        return bad(key, "a non-negative integer");
      out = v.get<V>();
    }
  }

  const nlohmann::json* child(const std::string& key) {
    seen_.push_back(key);
    if (!j_.is_object() || !j_.contains(key)) return nullptr;
    return &j_.at(key);
  }

  void reject_unknown() {
    if (!j_.is_object()) return;
    for (auto it = j_.begin(); it != j_.end(); ++it)
      if (std::find(seen_.begin(), seen_.end(), it.key()) == seen_.end())
        errors_.push_back(where(it.key()) + " is not a known setting");
  }

  std::string where(const std::string& key) const {
    if (prefix_.empty()) return key;
    return key.empty() ? prefix_ : prefix_ + "." + key;
  }

 private:
  void bad(const std::string& key, const char* what) {
    errors_.push_back(where(key) + " must be " + what);
  }

  const nlohmann::json& j_;
  std::string prefix_;
  std::vector<std::string>& errors_;
  std::vector<std::string> seen_;
};

}  // namespace detail

/// Loads a config file (TOML by default, JSON when the extension is .json).
inline nlohmann::json load_config_file(const std::string& path) {
  std::ifstream is(path);
  if (!is) throw ConfigError("config file not found: " + path);
  std::stringstream ss;
  ss << is.rdbuf();
  if (std::filesystem::path(path).extension() == ".json") {
    try {
      return nlohmann::json::parse(ss.str());
    } catch (const nlohmann::json::exception& e) {
      throw ConfigError("cannot parse JSON config " + path + ": " + e.what());
    }
  }
  return detail::toml_to_json(ss.str(), path);
}

/// Applies a "dotted.key=value" override. The value is read as JSON when it
/// parses (numbers, booleans, arrays), otherwise as a plain string.
inline void apply_override(nlohmann::json& j, const std::string& assignment) {
  const auto eq = assignment.find('=');
  if (eq == std::string::npos || eq == 0)
    throw ConfigError("override '" + assignment + "' must look like key=value");
  const std::string key = assignment.substr(0, eq);
  const std::string raw = assignment.substr(eq + 1);
  nlohmann::json v = nlohmann::json::parse(raw, nullptr, false);
  if (v.is_discarded()) v = raw;
  detail::set_dotted(j, key, std::move(v));
}

/// Builds a RunConfig from merged settings. All problems are collected and
/// reported in one ConfigError. `env_seed` is used when no seed is given.
inline RunConfig parse_run_config(const nlohmann::json& j, const char* env_seed,
                                  const PathRequirements& need = {}) {
  std::vector<std::string> errors;
  RunConfig c;
  detail::Reader top(j, "", errors);
  if (j.is_object() && j.contains("seed")) {
    top.get("seed", c.seed);
  } else {
    top.get("seed", c.seed);
    if (env_seed && *env_seed) {
      char* end = nullptr;
      const unsigned long long v = std::strtoull(env_seed, &end, 10);
      if (*end != '\0' || env_seed[0] == '-')
        errors.push_back("EQPOSE_SEED must be a non-negative integer, got '" +
                         std::string(env_seed) + "'");
      else
        c.seed = v;
    }
  }
  top.get("category", c.category);
  top.get("data_dir", c.data_dir);
  top.get("run_dir", c.run_dir);
  top.get("checkpoint", c.checkpoint);
  top.get("template", c.template_path);
  top.get("out_dir", c.out_dir);
  top.get("precision", c.precision);

  if (const auto* d = top.child("data")) {
    detail::Reader r(*d, "data", errors);
    r.get("points", c.points);
    r.get("train_instances", c.train_instances);
    r.get("train_views", c.train_views);
    r.get("test_instances", c.test_instances);
    r.get("test_views", c.test_views);
    r.get("policy", c.policy);
    r.get("partial", c.partial);
    r.get("jitter", c.jitter);
    r.get("single_instance", c.single_instance);
    r.reject_unknown();
  }
  if (const auto* m = top.child("model")) {
    detail::Reader r(*m, "model", errors);
    r.get("n_z", c.heads.n_z);
    r.get("hidden", c.heads.hidden);
    r.get("shape_hidden", c.heads.shape_hidden);
    r.get("leaky_slope", c.encoder.leaky_slope);
    c.heads.leaky_slope = c.encoder.leaky_slope;
    if (const auto* layers = r.child("layers")) {
      if (!layers->is_array()) {
        errors.push_back("model.layers must be an array of tables");
      } else {
        c.encoder.layers.clear();
        for (std::size_t k = 0; k < layers->size(); ++k) {
          detail::Reader lr((*layers)[k], "model.layers[" + std::to_string(k) + "]",
                            errors);
          LayerConfig L;
          lr.get("points", L.points);
          lr.get("channels", L.channels);
          lr.get("radius", L.radius);
          lr.get("max_neighbors", L.max_neighbors);
          lr.reject_unknown();
          c.encoder.layers.push_back(L);
        }
      }
    }
    r.reject_unknown();
  }
  if (const auto* t = top.child("train")) {
    detail::Reader r(*t, "train", errors);
    r.get("batch", c.batch);
    r.get("steps", c.steps);
    r.get("lambda", c.lambda);
    r.get("lr", c.lr);
    r.get("lr_decay", c.lr_decay);
    r.get("mode", c.mode);
    r.get("checkpoint_every", c.checkpoint_every);
    r.get("weights_only", c.weights_only);
    r.reject_unknown();
  }
  if (const auto* e = top.child("eval")) {
    detail::Reader r(*e, "eval", errors);
    r.get("calibration", c.calibration);
    r.get("calibration_views", c.calibration_views);
    r.get("tau_r_deg", c.tau_r_deg);
    r.get("tau_t", c.tau_t);
    r.get("ransac_iterations", c.ransac_iterations);
    r.reject_unknown();
  }
  if (const auto* e = top.child("icp")) {
    detail::Reader r(*e, "icp", errors);
    r.get("templates", c.icp_templates);
    r.get("template_count", c.icp_template_count);
    r.get("max_iter", c.icp_max_iter);
    r.get("tol", c.icp_tol);
    r.reject_unknown();
  }
  top.reject_unknown();

  // Value checks.
  bool known = false;
  for (const auto& cat : builtin_categories()) known |= cat.name == c.category;
  if (!known)
    errors.push_back("category '" + c.category +
                     "' is unknown (expected plane, chair, bottle or box)");
  if (c.precision != "fp32" && c.precision != "fp64")
    errors.push_back("precision must be fp32 or fp64");
  if (c.points < 32) errors.push_back("data.points must be >= 32");
  if (c.train_instances == 0) errors.push_back("data.train_instances must be > 0");
  if (c.train_views == 0) errors.push_back("data.train_views must be > 0");
  if (c.test_instances == 0) errors.push_back("data.test_instances must be > 0");
  if (c.test_views == 0) errors.push_back("data.test_views must be > 0");
  if (c.policy != "full-sphere" && c.policy != "upper-hemisphere")
    errors.push_back("data.policy must be full-sphere or upper-hemisphere");
  if (!(c.jitter >= 0)) errors.push_back("data.jitter must be >= 0");
  if (c.heads.n_z == 0) errors.push_back("model.n_z must be > 0");
  if (c.heads.hidden == 0) errors.push_back("model.hidden must be > 0");
  if (c.heads.shape_hidden == 0) errors.push_back("model.shape_hidden must be > 0");
  EncoderConfig enc = c.encoder;
  enc.input_points = c.points;
  for (const auto& v : enc.violations()) errors.push_back("model: " + v);
  if (c.batch == 0) errors.push_back("train.batch must be > 0");
  if (c.steps == 0) errors.push_back("train.steps must be > 0");
  if (!(c.lambda >= 0)) errors.push_back("train.lambda must be >= 0");
  if (!(c.lr > 0)) errors.push_back("train.lr must be > 0");
  if (!(c.lr_decay > 0 && c.lr_decay <= 1))
    errors.push_back("train.lr_decay must be in (0, 1]");
  if (c.mode != "auto" && c.mode != "complete" && c.mode != "partial")
    errors.push_back("train.mode must be auto, complete or partial");
  if (c.checkpoint_every == 0) errors.push_back("train.checkpoint_every must be > 0");
  if (c.calibration != "train" && c.calibration != "test")
    errors.push_back("eval.calibration must be train or test");
  if (c.calibration_views == 0) errors.push_back("eval.calibration_views must be > 0");
  if (!(c.tau_r_deg > 0)) errors.push_back("eval.tau_r_deg must be > 0");
  if (!(c.tau_t > 0)) errors.push_back("eval.tau_t must be > 0");
  if (c.ransac_iterations == 0) errors.push_back("eval.ransac_iterations must be > 0");

  if (c.icp_template_count == 0) errors.push_back("icp.template_count must be > 0");
  if (c.icp_max_iter == 0) errors.push_back("icp.max_iter must be > 0");
  if (!(c.icp_tol >= 0)) errors.push_back("icp.tol must be >= 0");

  namespace fs = std::filesystem;
  for (const auto& t : c.icp_templates)
    if (!fs::exists(t)) errors.push_back("icp template '" + t + "' does not exist");
  if (need.dataset && !fs::exists(fs::path(c.data_dir) / "manifest.json"))
    errors.push_back("data_dir '" + c.data_dir + "' has no manifest.json");
  if (need.checkpoint && c.checkpoint.empty())
    errors.push_back("checkpoint is required");
  else if (!c.checkpoint.empty() && !fs::exists(c.checkpoint))
    errors.push_back("checkpoint '" + c.checkpoint + "' does not exist");
  if (!c.template_path.empty() && !fs::exists(c.template_path))
    errors.push_back("template '" + c.template_path + "' does not exist");

  if (!errors.empty()) {
    std::string msg = "invalid configuration:";
    for (const auto& e : errors) msg += "\n  - " + e;
    throw ConfigError(msg);
  }
  return c;
}

inline nlohmann::json to_json(const RunConfig& c) {
  nlohmann::json layers = nlohmann::json::array();
  for (const auto& L : c.encoder.layers)
    layers.push_back({{"points", L.points},
                      {"channels", L.channels},
                      {"radius", L.radius},
                      {"max_neighbors", L.max_neighbors}});
  return {{"seed", c.seed},
          {"category", c.category},
          {"data_dir", c.data_dir},
          {"run_dir", c.run_dir},
          {"checkpoint", c.checkpoint},
          {"template", c.template_path},
          {"out_dir", c.out_dir},
          {"precision", c.precision},
          {"data",
           {{"points", c.points},
            {"train_instances", c.train_instances},
            {"train_views", c.train_views},
            {"test_instances", c.test_instances},
            {"test_views", c.test_views},
            {"policy", c.policy},
            {"partial", c.partial},
            {"jitter", c.jitter},
            {"single_instance", c.single_instance}}},
          {"model",
           {{"n_z", c.heads.n_z},
            {"hidden", c.heads.hidden},
            {"shape_hidden", c.heads.shape_hidden},
            {"leaky_slope", c.encoder.leaky_slope},
            {"layers", layers}}},
          {"train",
           {{"batch", c.batch},
            {"steps", c.steps},
            {"lambda", c.lambda},
            {"lr", c.lr},
            {"lr_decay", c.lr_decay},
            {"mode", c.mode},
            {"checkpoint_every", c.checkpoint_every},
            {"weights_only", c.weights_only}}},
          {"eval",
           {{"calibration", c.calibration},
            {"calibration_views", c.calibration_views},
            {"tau_r_deg", c.tau_r_deg},
            {"tau_t", c.tau_t},
            {"ransac_iterations", c.ransac_iterations}}},
          {"icp",
           {{"templates", c.icp_templates},
            {"template_count", c.icp_template_count},
            {"max_iter", c.icp_max_iter},
            {"tol", c.icp_tol}}}};
}

}  // namespace eqpose
