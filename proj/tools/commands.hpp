#pragma once

// Subcommand implementations behind the eqpose binary. Each returns the
// process exit code or throws; main maps exception types to exit codes.

#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <string>
#include <vector>

#include <json.hpp>

#include "eqpose/config.hpp"
#include "eqpose/dataset.hpp"
#include "eqpose/pipeline.hpp"
#include "eqpose/properties.hpp"
#include "eqpose/train.hpp"

namespace eqpose::cli {

inline constexpr int kExitOk = 0;
inline constexpr int kExitError = 1;
inline constexpr int kExitConfig = 2;
inline constexpr int kExitNumerical = 3;
inline constexpr int kExitProperty = 4;

namespace fs = std::filesystem;

template <class F>
int with_precision(const RunConfig& c, F&& f) {
  if (c.precision == "fp64") return f.template operator()<double>();
  return f.template operator()<float>();
}

/// Model configuration for a dataset: input size follows the dataset.
inline ModelConfig model_config_for(const RunConfig& c, const DatasetManifest& m) {
  ModelConfig mc = c.model();
  mc.encoder.input_points = m.points;
  const auto bad = mc.encoder.violations();
  if (!bad.empty()) {
    std::string msg = "invalid configuration:";
    for (const auto& b : bad) msg += "\n  - model: " + b;
    throw ConfigError(msg);
  }
  return mc;
}

template <class T>
void load_weights(Model<T>& model, const RunConfig& c) {
  if (c.checkpoint.empty()) throw ConfigError("invalid configuration:\n  - checkpoint is required");
  restore_state<T>(load_checkpoint(c.checkpoint), model.parameters(), nullptr);
  if (!c.template_path.empty())
    model.set_template(cloud_cast<T>(read_ply(c.template_path)));
}

inline std::string checkpoint_name(std::uint64_t step) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "ckpt_%06llu.eqps", static_cast<unsigned long long>(step));
  return buf;
}

inline void write_json(const fs::path& p, const nlohmann::json& j) {
  std::ofstream os(p);
  if (!os) throw FormatError("cannot write " + p.string());
  os << j.dump(2) << '\n';
}

// ---- gen ----

inline int cmd_gen(const RunConfig& c, std::ostream& out) {
  const DatasetManifest m = c.manifest();
  const auto bad = validate(m);
  if (!bad.empty()) {
    std::string msg = "invalid configuration:";
    for (const auto& b : bad) msg += "\n  - data: " + b;
    throw ConfigError(msg);
  }
  const Dataset d = generate_dataset(m);
  write_dataset(d, c.data_dir);
  write_ply((fs::path(c.data_dir) / "template.ply").string(),
            instance_points(d.manifest, d.manifest.train_ids.front()));
  out << "wrote " << d.train.size() << " train and " << d.test.size()
      << " test samples of '" << m.category << "' to " << c.data_dir << '\n';
  return kExitOk;
}

// ---- train ----

template <class T>
int train_impl(const RunConfig& c, std::ostream& out) {
  RunLock lock(c.run_dir);
  const Dataset d = read_dataset(c.data_dir);
  Model<T> model(model_config_for(c, d.manifest), c.seed);
  if (!c.template_path.empty())
    model.set_template(cloud_cast<T>(read_ply(c.template_path)));
  Trainer<T> trainer(model, training_clouds<T>(d), c.train(d.manifest.partial));
  const bool resumed = !c.checkpoint.empty();
  if (resumed) trainer.resume(load_checkpoint(c.checkpoint), c.weights_only);

  const fs::path dir(c.run_dir);
  write_json(dir / "config.json", to_json(c));
  const fs::path log_path = dir / "log.csv";
  const bool append = resumed && !c.weights_only && fs::exists(log_path);
  std::ofstream log(log_path, append ? std::ios::app : std::ios::trunc);
  if (!log) throw FormatError("cannot write " + log_path.string());
  if (!append) write_log_header(log);

  std::string last_ckpt = resumed ? c.checkpoint : "";
  auto save = [&](const std::string& name) {
    const fs::path p = dir / name;
    save_checkpoint(p.string(), trainer.checkpoint());
    last_ckpt = p.string();
  };
  try {
    while (trainer.step_count() < c.steps) {
      const StepLog s = trainer.step();
      if (!std::isfinite(s.total))
        throw NumericalError("non-finite loss at step " + std::to_string(s.step));
      write_log_row(log, s);
      log.flush();
      const std::uint64_t done = trainer.step_count();
      if (done % c.checkpoint_every == 0) save(checkpoint_name(done));
      if (done % 100 == 0 || done == c.steps)
        out << "step " << done << " loss " << s.total << " rec " << s.rec << '\n';
    }
  } catch (const NumericalError&) {
    std::cerr << "training aborted; last checkpoint: "
              << (last_ckpt.empty() ? "none" : last_ckpt) << '\n';
    throw;
  }
  save("final.eqps");
  out << "final checkpoint " << last_ckpt << '\n';
  return kExitOk;
}

inline int cmd_train(const RunConfig& c, std::ostream& out) {
  return with_precision(c, [&]<class T>() { return train_impl<T>(c, out); });
}

// ---- eval / icp outputs ----

inline nlohmann::json report_json(const MetricReport& m) {
  return {{"count", m.count},
          {"r_median", m.r_median},
          {"r_mean", m.r_mean},
          {"t_median", m.t_median},
          {"t_mean", m.t_mean},
          {"acc_5deg", m.acc_5deg},
          {"acc_5deg_5cm", m.acc_5deg_5cm},
          {"up_median", m.up_median},
          {"up_mean", m.up_mean},
          {"r_full_median", m.r_full_median}};
}

inline nlohmann::json result_json(const EvalResult& r, const std::string& category) {
  const auto& q = r.calibration.rotation;
  const auto& t = r.calibration.translation;
  nlohmann::json j = report_json(r.report);
  j["category"] = category;
  j["symmetry"] = to_string(eqpose::category(category).symmetry);
  j["flip_fraction"] = r.flip_fraction;
  j["no_flip"] = report_json(r.report_no_flip);
  j["add_auc"] = r.add_auc;
  j["adds_auc"] = r.adds_auc;
  j["calibration"] = {{"rotation", {q.w, q.x, q.y, q.z}},
                      {"translation", {t[0], t[1], t[2]}},
                      {"inliers", r.calibration.inliers},
                      {"inlier_fraction", r.calibration.inlier_fraction}};
  return j;
}

inline void write_eval_outputs(const EvalResult& r, const std::string& category,
                               const fs::path& dir) {
  fs::create_directories(dir);
  write_json(dir / "metrics.json", result_json(r, category));
  {
    std::ofstream os(dir / "percentiles.csv");
    if (!os) throw FormatError("cannot write percentiles.csv in " + dir.string());
    os << "percentile,r_err,t_err\n";
    for (std::size_t k = 0; k < r.report.r_percentiles.size(); ++k)
      os << 5 * (k + 1) << ',' << r.report.r_percentiles[k] << ','
         << r.report.t_percentiles[k] << '\n';
  }
  {
    std::ofstream os(dir / "errors.csv");
    if (!os) throw FormatError("cannot write errors.csv in " + dir.string());
    os << "sample_id,r_err,t_err,r_full,up_err,add,adds,selected_j\n";
    char buf[256];
    for (const auto& s : r.samples) {
      std::snprintf(buf, sizeof buf, "%s,%.9g,%.9g,%.9g,%.9g,%.9g,%.9g,%zu\n",
                    s.id.c_str(), s.error.r_err, s.error.t_err, s.error.r_full,
                    s.error.up_err, s.add, s.adds, s.selected_j);
      os << buf;
    }
  }
  std::vector<PoseRow> rows;
  for (const auto& s : r.samples) rows.push_back({s.id, s.corrected});
  write_poses_csv((dir / "poses.csv").string(), rows);
}

inline void print_summary(const EvalResult& r, std::ostream& out) {
  out << "median R " << r.report.r_median << " deg, median T " << r.report.t_median
      << ", 5deg acc " << r.report.acc_5deg << ", up median " << r.report.up_median
      << " deg, flips " << r.flip_fraction << ", ADD AUC " << r.add_auc << '\n';
}

// ---- eval ----

template <class T>
int eval_impl(const RunConfig& c, std::ostream& out) {
  const Dataset d = read_dataset(c.data_dir);
  Model<T> model(model_config_for(c, d.manifest), c.seed);
  load_weights(model, c);
  EvalOptions opt = c.eval(d.manifest.partial);
  opt.calibrate = !model.instance_mode();
  const EvalResult r =
      evaluate(model, d, eqpose::category(d.manifest.category).symmetry, opt);
  write_eval_outputs(r, d.manifest.category, c.output_dir());
  print_summary(r, out);
  return kExitOk;
}

inline int cmd_eval(const RunConfig& c, std::ostream& out) {
  return with_precision(c, [&]<class T>() { return eval_impl<T>(c, out); });
}

// ---- icp ----

inline int cmd_icp(const RunConfig& c, std::ostream& out) {
  const Dataset d = read_dataset(c.data_dir);
  std::vector<Cloud<double>> templates;
  for (const auto& p : c.icp_templates) templates.push_back(read_ply(p));
  if (templates.empty()) {
    const std::size_t k = std::min(c.icp_template_count, d.manifest.train_ids.size());
    for (std::size_t i = 0; i < k; ++i)
      templates.push_back(instance_points(d.manifest, d.manifest.train_ids[i]));
  }
  const Symmetry sym = eqpose::category(d.manifest.category).symmetry;
  const ICPOptions icp{c.icp_max_iter, c.icp_tol};
  const fs::path dir(c.output_dir());
  if (templates.size() == 1) {
    const EvalResult r = evaluate_icp(d, templates[0], sym, icp);
    write_eval_outputs(r, d.manifest.category, dir);
    print_summary(r, out);
    return kExitOk;
  }
  // Template-list mode: one output directory per template, scalar metrics
  // averaged over templates at the top level.
  nlohmann::json per = nlohmann::json::array();
  nlohmann::json mean = nlohmann::json::object();
  for (std::size_t k = 0; k < templates.size(); ++k) {
    const EvalResult r = evaluate_icp(d, templates[k], sym, icp);
    write_eval_outputs(r, d.manifest.category, dir / ("template_" + std::to_string(k)));
    out << "template " << k << ": ";
    print_summary(r, out);
    const nlohmann::json j = result_json(r, d.manifest.category);
    per.push_back(j);
    for (auto it = j.begin(); it != j.end(); ++it)
      if (it.value().is_number_float())
        mean[it.key()] = mean.value(it.key(), 0.0) +
                         it.value().get<double>() / double(templates.size());
  }
  write_json(dir / "metrics.json", {{"templates", per}, {"mean", mean}});
  return kExitOk;
}

// ---- check-equiv ----

inline int cmd_check_equiv(const RunConfig& c, std::size_t clouds, std::ostream& out) {
  const auto results = run_property_battery(c.model(), c.seed, clouds);
  bool ok = true;
  for (const auto& r : results) {
    char buf[256];
    std::snprintf(buf, sizeof buf, "%s %-36s measured %.3e tolerance %.3e\n",
                  r.passed ? "PASS" : "FAIL", r.name.c_str(), r.measured, r.tolerance);
    out << buf;
    ok &= r.passed;
  }
  return ok ? kExitOk : kExitProperty;
}

// ---- export ----

template <class T>
int export_impl(const RunConfig& c, std::size_t limit, std::ostream& out) {
  const Dataset d = read_dataset(c.data_dir);
  Model<T> model(model_config_for(c, d.manifest), c.seed);
  load_weights(model, c);
  const DistanceMode mode = c.distance_mode(d.manifest.partial);
  const fs::path dir = fs::path(c.output_dir()) / "export";
  fs::create_directories(dir);
  std::size_t n = 0;
  for (const auto& s : d.test) {
    if (limit && n >= limit) break;
    const Cloud<T> X = cloud_cast<T>(s.cloud);
    ad::Tape<T> tape;
    const auto o = model.forward(tape, X);
    const Cloud<T> Z = to_cloud(o.shape.value());
    const Prediction p = select_hypothesis(X, Z, o.hypotheses, mode);
    const Cloud<double> Zd = cloud_cast<double>(Z);
    write_ply((dir / ("recon_" + s.id + ".ply")).string(), Zd);
    Cloud<double> overlay = s.cloud;
    std::vector<std::array<unsigned char, 3>> rgb(s.cloud.size(), {160, 160, 160});
    for (const auto& q : p.pose.apply(Zd)) {
      overlay.push_back(q);
      rgb.push_back({220, 40, 40});
    }
    write_ply_rgb((dir / ("overlay_" + s.id + ".ply")).string(), overlay, rgb);
    ++n;
  }
  out << "exported " << n << " samples to " << dir.string() << '\n';
  return kExitOk;
}

inline int cmd_export(const RunConfig& c, std::size_t limit, std::ostream& out) {
  return with_precision(c, [&]<class T>() { return export_impl<T>(c, limit, out); });
}

}  // namespace eqpose::cli
