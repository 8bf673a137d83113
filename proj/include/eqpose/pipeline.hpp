#pragma once

// Calibrated evaluation of a trained model on a dataset.

#include <cstddef>
#include <map>
#include <vector>

#include "eqpose/dataset.hpp"
#include "eqpose/eval.hpp"
#include "eqpose/icp.hpp"
#include "eqpose/model.hpp"

namespace eqpose {

enum class CalibrationSource { train_split, test_split };

struct EvalOptions {
  DistanceMode mode = DistanceMode::complete;
  CalibrationSource source = CalibrationSource::train_split;
  std::size_t calibration_views = 2;  // per train instance
  CalibrationParams ransac;
  double flip_threshold_deg = 135;
  // Off in instance mode: the template already fixes the canonical frame.
  bool calibrate = true;
};

struct SampleResult {
  std::string id;
  RigidPose<double> raw;
  RigidPose<double> corrected;
  PoseError error;
  std::size_t selected_j = 0;
  double add = 0;   // against the sample's canonical instance points
  double adds = 0;
};

struct EvalResult {
  FrameCalibration calibration;
  std::vector<SampleResult> samples;
  MetricReport report;
  MetricReport report_no_flip;  // samples with r_err below the flip threshold
  double flip_fraction = 0;
  double add_auc = 0;
  double adds_auc = 0;
};

/// Misalignment of each sample: the raw prediction on its canonicalized cloud.
template <class T>
std::vector<RigidPose<double>> misalignments(Model<T>& model,
                                             const std::vector<const Sample*>& s,
                                             DistanceMode mode) {
  std::vector<RigidPose<double>> out;
  for (const Sample* x : s)
    out.push_back(predict(model, canonicalize(x->cloud, x->gt_pose), mode).pose);
  return out;
}

namespace detail {

// Errors, ADD/ADD-S and aggregates for predictions already in the canonical
// frame convention.
inline void finish_eval(EvalResult& r, const Dataset& data, Symmetry sym,
                        double flip_threshold_deg) {
  std::vector<PoseError> errs, kept;
  std::vector<double> add, adds;
  std::map<std::size_t, Cloud<double>> models;
  for (std::size_t k = 0; k < r.samples.size(); ++k) {
    auto& sr = r.samples[k];
    const Sample& s = data.test[k];
    sr.error = pose_errors(sr.corrected, s.gt_pose, sym);
    auto it = models.find(s.instance);
    if (it == models.end())
      it = models.emplace(s.instance, instance_points(data.manifest, s.instance)).first;
    sr.add = add_distance(sr.corrected, s.gt_pose, it->second);
    sr.adds = adds_distance(sr.corrected, s.gt_pose, it->second);
    errs.push_back(sr.error);
    add.push_back(sr.add);
    adds.push_back(sr.adds);
    if (sr.error.r_err <= flip_threshold_deg) kept.push_back(sr.error);
  }
  r.report = aggregate(errs);
  r.flip_fraction = 1.0 - double(kept.size()) / double(errs.size());
  if (!kept.empty()) r.report_no_flip = aggregate(kept);
  r.add_auc = distance_auc(add);
  r.adds_auc = distance_auc(adds);
}

}  // namespace detail

template <class T>
EvalResult evaluate(Model<T>& model, const Dataset& data, Symmetry sym,
                    const EvalOptions& opt = {}) {
  EQPOSE_EXPECT(!data.test.empty(), "evaluate: empty test split");
  EvalResult r;
  if (opt.calibrate) {
    std::vector<const Sample*> calib;
    if (opt.source == CalibrationSource::test_split) {
      for (const auto& s : data.test) calib.push_back(&s);
    } else {
      for (const auto& s : data.train)
        if (s.view < opt.calibration_views) calib.push_back(&s);
    }
    EQPOSE_EXPECT(calib.size() >= 4, "calibration needs at least 4 samples");
    r.calibration = calibrate_frame(misalignments(model, calib, opt.mode), sym,
                                    opt.ransac);
  }
  for (const auto& s : data.test) {
    SampleResult sr;
    sr.id = s.id;
    const Prediction p = predict(model, s.cloud, opt.mode);
    sr.raw = p.pose;
    sr.selected_j = p.selected_j;
    sr.corrected = apply_calibration(p.pose, r.calibration);
    r.samples.push_back(std::move(sr));
  }
  detail::finish_eval(r, data, sym, opt.flip_threshold_deg);
  return r;
}

/// ICP-60 baseline against one canonical template, reported in the same
/// schema as `evaluate` (no calibration; the template fixes the frame).
inline EvalResult evaluate_icp(const Dataset& data, const Cloud<double>& tmpl,
                               Symmetry sym, const ICPOptions& icp = {},
                               double flip_threshold_deg = 135) {
  EQPOSE_EXPECT(!data.test.empty(), "evaluate_icp: empty test split");
  const RotationGroup& G = icosahedral_group();
  EvalResult r;
  for (const auto& s : data.test) {
    SampleResult sr;
    sr.id = s.id;
    const ICPResult res = icp_60(s.cloud, tmpl, G, icp);
    sr.raw = res.pose;
    sr.raw.rotation = sr.raw.rotation.canonical();
    sr.corrected = sr.raw;
    sr.selected_j = res.init_index;
    r.samples.push_back(std::move(sr));
  }
  detail::finish_eval(r, data, sym, flip_threshold_deg);
  return r;
}

template <class T>
std::vector<Cloud<T>> training_clouds(const Dataset& d) {
  std::vector<Cloud<T>> out;
  for (const auto& s : d.train) out.push_back(cloud_cast<T>(s.cloud));
  return out;
}

}  // namespace eqpose
