// Acceptance suite: one PASS/FAIL line per criterion.
//
//   acceptance            run all twelve criteria
//   acceptance 2 7 11     run a subset

#include <chrono>
#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <functional>
#include <iostream>
#include <iterator>
#include <random>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include "eqpose/checkpoint.hpp"
#include "eqpose/dataset.hpp"
#include "eqpose/icp.hpp"
#include "eqpose/pipeline.hpp"
#include "eqpose/properties.hpp"
#include "eqpose/runtime.hpp"
#include "eqpose/train.hpp"
#include "grad_battery.hpp"

using namespace eqpose;
namespace fs = std::filesystem;

namespace {

using Clock = std::chrono::steady_clock;

double seconds_since(Clock::time_point t0) {
  return std::chrono::duration<double>(Clock::now() - t0).count();
}

struct Outcome {
  bool pass = false;
  std::string detail;
};

std::string fmt(const char* f, auto... args) {
  char buf[512];
  std::snprintf(buf, sizeof buf, f, args...);
  return buf;
}

Quaternion<double> random_rotation(std::mt19937_64& rng) {
  std::normal_distribution<double> nd;
  return Quaternion<double>{nd(rng), nd(rng), nd(rng), nd(rng)}.normalized();
}

// ---- 1 ----

Outcome group_correctness() {
  const auto t0 = Clock::now();
  const RotationGroup G = build_icosahedral_group();
  const std::size_t census = census_mismatches(G);
  const std::size_t cayley = cayley_violations(G);
  const double secs = seconds_since(t0);
  const auto c = angle_census(G);
  std::string hist;
  for (const auto& [deg, n] : c) hist += fmt("%d:%zu ", deg, n);
  return {G.size() == 60 && census == 0 && cayley == 0 && secs < 5,
          fmt("60 elements, census {%s}, %zu table violations, %.2f s", hist.c_str(),
              cayley, secs)};
}

// ---- 2 and 4 share the battery: 20 clouds x all 60 rotations ----

struct Battery {
  EquivarianceStats f32, f64;
  double secs = 0;
};

const Battery& rotation_battery() {
  static const Battery b = [] {
    Battery r;
    const auto t0 = Clock::now();
    const ModelConfig cfg;
    r.f64 = measure_equivariance<double>(cfg, 21, 20, all_group_indices(), true);
    r.f32 = measure_equivariance<float>(cfg, 21, 20, all_group_indices(), true);
    r.secs = seconds_since(t0);
    return r;
  }();
  return b;
}

Outcome discrete_equivariance() {
  const auto& b = rotation_battery();
  return {b.f32.encoder_rel < 1e-4 && b.f64.encoder_rel < 1e-8 && b.secs < 300,
          fmt("max rel err fp32 %.2e, fp64 %.2e over %zu cases, %.0f s", b.f32.encoder_rel,
              b.f64.encoder_rel, b.f64.cases, b.secs)};
}

Outcome pose_head_equivariance() {
  const auto& b = rotation_battery();
  const double r = std::max(b.f32.pose_r_deg, b.f64.pose_r_deg);
  const double t = std::max(b.f32.pose_t, b.f64.pose_t);
  return {r < 0.1 && t < 1e-5,
          fmt("rotation err %.2e deg, translation err %.2e (fp32 %.2e / %.2e)", r, t,
              b.f32.pose_r_deg, b.f32.pose_t)};
}

// ---- 3 ----

Outcome reconstruction_invariance() {
  std::mt19937_64 rng(33);
  std::uniform_int_distribution<std::size_t> pick(0, 59);
  double worst = 0;
  std::size_t cases = 0;
  for (int c = 0; c < 10; ++c) {
    std::vector<std::size_t> rots(10);
    for (auto& a : rots) a = pick(rng);
    const auto s = measure_equivariance<double>(ModelConfig{}, 300 + c, 1, rots, true);
    worst = std::max(worst, s.shape_chamfer);
    cases += s.cases;
  }
  return {worst < 1e-6, fmt("max chamfer %.2e over %zu cases", worst, cases)};
}

// ---- 5 ----

Outcome residual_constraint() {
  const double worst = max_residual_angle_deg(100000, 55);
  const auto pz = penalty_zero_check(1000, 56);
  const bool ok = worst < 36 + 1e-4 && pz.unit_penalty < 1e-18 && pz.min_off_unit_penalty > 0;
  return {ok, fmt("max residual angle %.6f deg; penalty on unit rows %.1e, "
                  "min penalty off unit %.1e",
                  worst, pz.unit_penalty, pz.min_off_unit_penalty)};
}

// ---- 6 ----

Outcome gradient_integrity() {
  const auto t0 = Clock::now();
  double worst = 0;
  std::string worst_name;
  std::size_t ops = 0, min_instances = SIZE_MAX;
  auto fold = [&](const test::OpGradResult& r) {
    ++ops;
    min_instances = std::min(min_instances, r.instances);
    if (r.worst >= worst) worst = r.worst, worst_name = r.name;
  };
  for (const auto& r : test::op_gradient_battery(100)) fold(r);
  fold(test::full_loss_gradient_check(100, 10, DistanceMode::complete));
  fold(test::full_loss_gradient_check(100, 10, DistanceMode::partial));
  const double secs = seconds_since(t0);
  return {worst < 1e-3 && min_instances >= 100 && secs < 600,
          fmt("%zu checks x >= %zu instances, worst rel err %.2e (%s), %.0f s", ops,
              min_instances, worst, worst_name.c_str(), secs)};
}

// ---- 7, 8, 9 ----

struct TrainRun {
  std::string category;
  bool partial = false;
  std::size_t steps = 5000;
};

struct TrainedEval {
  EvalResult result;
  double secs = 0;
};

TrainedEval train_and_evaluate(const TrainRun& run) {
  const auto t0 = Clock::now();
  DatasetManifest m;
  m.seed = 7;
  m.category = run.category;
  m.partial = run.partial;
  const Dataset d = generate_dataset(m);
  Model<float> model(ModelConfig{}, 1);
  TrainConfig tc;
  tc.steps = run.steps;
  tc.mode = run.partial ? DistanceMode::partial : DistanceMode::complete;
  Trainer<float> trainer(model, training_clouds<float>(d), tc);
  double acc = 0;
  for (std::size_t s = 1; s <= run.steps; ++s) {
    acc += trainer.step().total;
    if (s % 500 == 0) {
      std::printf("    %s%s step %zu loss %.5f (%.0f s)\n", run.category.c_str(),
                  run.partial ? " partial" : "", s, acc / 500, seconds_since(t0));
      std::fflush(stdout);
      acc = 0;
    }
  }
  EvalOptions eo;
  eo.mode = tc.mode;
  TrainedEval out;
  out.result = evaluate(model, d, category(run.category).symmetry, eo);
  out.secs = seconds_since(t0);
  return out;
}

Outcome training_complete() {
  const auto e = train_and_evaluate({"plane", false, 2500});
  const auto& r = e.result.report;
  return {r.r_median < 15 && r.t_median < 0.05 && e.secs < 45 * 60,
          fmt("median R %.2f deg, median T %.4f, 5deg acc %.2f (target 0.4, tracked), "
              "flips %.2f, %.0f s",
              r.r_median, r.t_median, r.acc_5deg, e.result.flip_fraction, e.secs)};
}

Outcome training_partial() {
  const auto e = train_and_evaluate({"plane", true, 3500});
  const auto& nf = e.result.report_no_flip;
  return {nf.count > 0 && nf.r_median < 25,
          fmt("median R excluding flips %.2f deg (%zu samples), flip fraction %.2f, "
              "all-sample median R %.2f, %.0f s",
              nf.r_median, nf.count, e.result.flip_fraction, e.result.report.r_median,
              e.secs)};
}

Outcome symmetry_behavior() {
  const auto e = train_and_evaluate({"bottle", false, 2000});
  const auto& r = e.result.report;
  return {r.up_median < 10,
          fmt("up-axis median %.2f deg, full R median %.2f deg (unconstrained), %.0f s",
              r.up_median, r.r_full_median, e.secs)};
}

// ---- 10 ----

Outcome calibration_protocol() {
  std::mt19937_64 rng(1010);
  std::normal_distribution<double> nd;
  std::uniform_real_distribution<double> ut(-0.3, 0.3);
  double worst_r = 0, worst_t = 0, worst_zero = 0;
  const int trials = 20;
  for (int trial = 0; trial < trials; ++trial) {
    const RigidPose<double> M{random_rotation(rng), {ut(rng), ut(rng), ut(rng)}};
    for (bool noisy : {false, true}) {
      std::vector<RigidPose<double>> mis;
      for (int k = 0; k < 100; ++k) {
        if (k % 10 < 3) {  // 30% outliers
          mis.push_back({random_rotation(rng), {ut(rng), ut(rng), ut(rng)}});
          continue;
        }
        RigidPose<double> p = M;
        if (noisy) {
          const Vec3<double> axis{nd(rng), nd(rng), nd(rng)};
          p.rotation = compose(Quaternion<double>::from_axis_angle((1.0 / norm(axis)) * axis,
                                                                   radians(0.7)),
                               p.rotation);
          p.translation = p.translation + Vec3<double>{0.002 * nd(rng), 0.002 * nd(rng),
                                                       0.002 * nd(rng)};
        }
        mis.push_back(p);
      }
      const auto cal = calibrate_frame(mis, Symmetry::none);
      worst_r = std::max(worst_r, degrees(geodesic_angle(cal.rotation, M.rotation)));
      worst_t = std::max(worst_t, norm(cal.translation - M.translation));
      if (noisy) continue;
      // Perfect raw predictions carry the same misalignment.
      for (int k = 0; k < 20; ++k) {
        const RigidPose<double> gt{random_rotation(rng), {ut(rng), ut(rng), ut(rng)}};
        const auto e = pose_errors(apply_calibration(gt * M, cal), gt, Symmetry::none);
        worst_zero = std::max({worst_zero, e.r_err, e.t_err});
      }
    }
  }
  return {worst_r < 2 && worst_t < 0.01 && worst_zero < 1e-6,
          fmt("recovered within %.3f deg / %.4f (30%% outliers, %d trials); "
              "corrected error %.1e",
              worst_r, worst_t, trials, worst_zero)};
}

// ---- 11 ----

double add_auc_instance_mode(double& secs) {
  const auto t0 = Clock::now();
  DatasetManifest m;
  m.seed = 7;
  m.category = "plane";
  const Cloud<double> tmpl = instance_points(m, 0);
  std::mt19937_64 rng(1111);
  auto posed = [&](std::size_t n) {
    std::vector<std::pair<RigidPose<double>, Cloud<double>>> out;
    for (std::size_t k = 0; k < n; ++k) {
      const auto pose = pose_sample(rng, ViewPolicy::full_sphere);
      out.push_back({pose, pose.apply(tmpl)});
    }
    return out;
  };
  const auto train = posed(400), test = posed(50);
  Model<float> model(ModelConfig{}, 1);
  model.set_template(cloud_cast<float>(tmpl));
  std::vector<Cloud<float>> clouds;
  for (const auto& [p, c] : train) clouds.push_back(cloud_cast<float>(c));
  TrainConfig tc;
  tc.steps = 3000;
  Trainer<float> trainer(model, clouds, tc);
  for (std::size_t s = 1; s <= tc.steps; ++s) {
    trainer.step();
    if (s % 500 == 0) {
      std::printf("    instance mode step %zu (%.0f s)\n", s, seconds_since(t0));
      std::fflush(stdout);
    }
  }
  std::vector<double> add;
  for (const auto& [gt, X] : test) {
    const Prediction p = predict(model, X, DistanceMode::complete);
    add.push_back(add_distance(p.pose, gt, tmpl));
  }
  secs = seconds_since(t0);
  return distance_auc(add);
}

Outcome icp_oracle() {
  const RotationGroup& G = icosahedral_group();
  DatasetManifest m;
  m.seed = 7;
  m.category = "plane";
  std::mt19937_64 rng(1100);
  std::uniform_real_distribution<double> ut(-0.2, 0.2);
  std::size_t ok = 0, total = 0;
  for (std::size_t inst = 0; inst < 5; ++inst) {
    const Cloud<double> tmpl = instance_points(m, inst);
    for (std::size_t j = 0; j < G.size(); ++j) {
      const RigidPose<double> gt{G[j], {ut(rng), ut(rng), ut(rng)}};
      const ICPResult r = icp_60(gt.apply(tmpl), tmpl, G);
      ok += degrees(geodesic_angle(r.pose.rotation, gt.rotation)) < 1;
      ++total;
    }
  }
  const double rate = double(ok) / double(total);
  double secs = 0;
  const double auc = add_auc_instance_mode(secs);
  return {rate >= 0.95 && auc > 90,
          fmt("ICP-60 within 1 deg on %zu/%zu (%.1f%%); instance-mode ADD AUC %.2f "
              "(%.0f s)",
              ok, total, 100 * rate, auc, secs)};
}

// ---- 12 ----

std::string file_bytes(const fs::path& p) {
  std::ifstream is(p, std::ios::binary);
  return {std::istreambuf_iterator<char>(is), {}};
}

bool same_tree(const fs::path& a, const fs::path& b) {
  std::set<std::string> names;
  for (const auto& e : fs::recursive_directory_iterator(a))
    if (e.is_regular_file()) names.insert(fs::relative(e.path(), a).string());
  std::size_t nb = 0;
  for (const auto& e : fs::recursive_directory_iterator(b)) nb += e.is_regular_file();
  if (nb != names.size()) return false;
  for (const auto& n : names)
    if (file_bytes(a / n) != file_bytes(b / n)) return false;
  return true;
}

Outcome determinism() {
  const fs::path root = fs::temp_directory_path() / "eqpose_acceptance_12";
  fs::remove_all(root);
  bool data_ok = true;
  for (bool partial : {false, true}) {
    DatasetManifest m;
    m.seed = 12;
    m.partial = partial;
    m.train_instances = 4;
    m.train_views = 3;
    m.test_instances = 2;
    m.test_views = 2;
    const std::string tag = partial ? "partial" : "complete";
    write_dataset(generate_dataset(m), (root / (tag + "_a")).string());
    write_dataset(generate_dataset(m), (root / (tag + "_b")).string());
    data_ok &= same_tree(root / (tag + "_a"), root / (tag + "_b"));
  }

  DatasetManifest m;
  m.seed = 12;
  m.train_instances = 4;
  m.train_views = 3;
  const Dataset d = generate_dataset(m);
  auto losses = [&] {
    Model<double> model(ModelConfig{}, 5);
    TrainConfig tc;
    tc.seed = 5;
    Trainer<double> tr(model, training_clouds<double>(d), tc);
    std::vector<double> out;
    for (int s = 0; s < 10; ++s) out.push_back(tr.step().total);
    return out;
  };
  const auto la = losses(), lb = losses();
  const bool loss_ok = la == lb;

  bool ckpt_ok = true;
  auto round_trip = [&]<class T>() {
    Model<T> a(ModelConfig{}, 8), b(ModelConfig{}, 9);
    const fs::path p = root / (std::is_same_v<T, double> ? "fp64.eqps" : "fp32.eqps");
    save_checkpoint(p.string(), state_records<T>(a.parameters(), nullptr));
    restore_state<T>(load_checkpoint(p.string()), b.parameters(), nullptr);
    for (std::size_t k = 0; k < a.parameters().size(); ++k)
      ckpt_ok &= a.parameters()[k].data == b.parameters()[k].data;
  };
  round_trip.template operator()<float>();
  round_trip.template operator()<double>();
  fs::remove_all(root);
  return {data_ok && loss_ok && ckpt_ok,
          fmt("datasets byte-identical: %s; fp64 losses equal for 10 steps: %s "
              "(step 10 loss %.12g); checkpoint round trip bitwise: %s",
              data_ok ? "yes" : "no", loss_ok ? "yes" : "no", la.back(),
              ckpt_ok ? "yes" : "no")};
}

struct Criterion {
  int id;
  const char* title;
  std::function<Outcome()> run;
};

}  // namespace

int main(int argc, char** argv) {
  configure_allocator();
  const std::vector<Criterion> all = {
      {1, "group correctness", group_correctness},
      {2, "discrete equivariance", discrete_equivariance},
      {3, "reconstruction invariance", reconstruction_invariance},
      {4, "pose-head equivariance", pose_head_equivariance},
      {5, "residual constraint", residual_constraint},
      {6, "gradient integrity", gradient_integrity},
      {7, "training, complete clouds", training_complete},
      {8, "training, partial clouds", training_partial},
      {9, "symmetry behavior", symmetry_behavior},
      {10, "calibration protocol", calibration_protocol},
      {11, "ICP-60 oracle and instance mode", icp_oracle},
      {12, "determinism and persistence", determinism},
  };
  std::set<int> wanted;
  for (int i = 1; i < argc; ++i) wanted.insert(std::atoi(argv[i]));
  int failed = 0;
  for (const auto& c : all) {
    if (!wanted.empty() && !wanted.count(c.id)) continue;
    const auto t0 = Clock::now();
    Outcome o;
    try {
      o = c.run();
    } catch (const std::exception& e) {
      o = {false, std::string("exception: ") + e.what()};
    }
    std::printf("%s criterion %2d  %-32s %s [%.1f s]\n", o.pass ? "PASS" : "FAIL", c.id,
                c.title, o.detail.c_str(), seconds_since(t0));
    std::fflush(stdout);
    failed += !o.pass;
  }
  return failed ? 1 : 0;
}
