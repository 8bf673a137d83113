#pragma once

// Dataset generation and on-disk layout:
//   <dir>/manifest.json   counts, seed, policy, splits, sample table
//   <dir>/poses.csv       sample_id,qw,qx,qy,qz,tx,ty,tz (9 significant digits)
//   <dir>/clouds/<id>.ply ASCII PLY, float x y z

#include <array>
#include <cstdlib>
#include <cstdint>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <random>
#include <sstream>
#include <string>
#include <vector>

#include <json.hpp>

#include "eqpose/errors.hpp"
#include "eqpose/geometry.hpp"
#include "eqpose/quaternion.hpp"
#include "eqpose/synth.hpp"

namespace eqpose {

struct Sample {
  std::string id;
  std::size_t instance = 0;
  std::size_t view = 0;
  bool partial = false;
  Cloud<double> cloud;
  RigidPose<double> gt_pose;
};

struct DatasetManifest {
  std::uint64_t seed = 0;
  std::string category = "plane";
  std::size_t points = 256;
  std::size_t train_instances = 50;
  std::size_t train_views = 40;
  std::size_t test_instances = 10;
  std::size_t test_views = 5;
  ViewPolicy policy = ViewPolicy::full_sphere;
  bool partial = false;
  double jitter = 0;
  // Instance-level data: every split uses instance 0, test views continue
  // after the train views.
  bool single_instance = false;
  std::vector<std::size_t> train_ids;
  std::vector<std::size_t> test_ids;

  bool operator==(const DatasetManifest&) const = default;

  /// Fills the split instance ids: train first, test after.
  void assign_splits() {
    train_ids.clear();
    test_ids.clear();
    if (single_instance) {
      train_ids = {0};
      test_ids = {0};
      return;
    }
    for (std::size_t k = 0; k < train_instances; ++k) train_ids.push_back(k);
    for (std::size_t k = 0; k < test_instances; ++k)
      test_ids.push_back(train_instances + k);
  }
};

struct Dataset {
  DatasetManifest manifest;
  std::vector<Sample> train;
  std::vector<Sample> test;
};

/// Rounds to the 9 significant digits used on disk so generated values and
/// values read back compare equal.
inline double round_sig9(double v) {
  char buf[40];
  std::snprintf(buf, sizeof buf, "%.9g", v);
  return std::strtod(buf, nullptr);
}

inline RigidPose<double> round_pose(const RigidPose<double>& p) {
  return {{round_sig9(p.rotation.w), round_sig9(p.rotation.x),
           round_sig9(p.rotation.y), round_sig9(p.rotation.z)},
          {round_sig9(p.translation[0]), round_sig9(p.translation[1]),
           round_sig9(p.translation[2])}};
}

/// Canonical instance points at the dataset resolution.
inline Cloud<double> instance_points(const DatasetManifest& m,
                                     std::size_t instance,
                                     std::size_t count = 0) {
  return generate_instance(category(m.category),
                           stream_key(m.seed, 0x1000 + instance),
                           count ? count : m.points);
}

inline std::string sample_id(std::size_t instance, std::size_t view) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "i%04zu_v%03zu", instance, view);
  return buf;
}

/// One sample; its RNG stream depends only on (seed, instance, view).
inline Sample make_sample(const DatasetManifest& m, std::size_t instance,
                          std::size_t view) {
  std::mt19937_64 rng(stream_key(m.seed, 0x2000 + instance, view));
  Sample s;
  s.id = sample_id(instance, view);
  s.instance = instance;
  s.view = view;
  s.partial = m.partial;
  if (!m.partial) {
    s.gt_pose = round_pose(pose_sample(rng, m.policy));
    s.cloud = s.gt_pose.apply(instance_points(m, instance));
  } else {
    const Cloud<double> dense = instance_points(m, instance, 4 * m.points);
    for (int attempt = 0;; ++attempt) {
      s.gt_pose = round_pose(pose_sample(rng, m.policy));
      try {
        s.cloud = partial_view(s.gt_pose.apply(dense), m.points, rng);
        break;
      } catch (const NumericalError&) {
        if (attempt >= 9)
          throw NumericalError("partial view empty after 10 camera retries for " +
                               s.id);
      }
    }
  }
  if (m.jitter > 0) {
    std::normal_distribution<double> nd(0, m.jitter);
    for (auto& p : s.cloud)
      for (auto& c : p) c += nd(rng);
  }
  // Stored as float on disk.
  for (auto& p : s.cloud)
    for (auto& c : p) c = static_cast<double>(static_cast<float>(c));
  return s;
}

inline std::vector<std::string> validate(const DatasetManifest& m) {
  std::vector<std::string> v;
  if (m.points < 32) v.push_back("points must be >= 32");
  if (m.train_instances == 0) v.push_back("train_instances must be positive");
  if (m.train_views == 0) v.push_back("train_views must be positive");
  if (m.test_instances == 0) v.push_back("test_instances must be positive");
  if (m.test_views == 0) v.push_back("test_views must be positive");
  if (m.jitter < 0) v.push_back("jitter must be >= 0");
  bool known = false;
  for (const auto& c : builtin_categories()) known |= c.name == m.category;
  if (!known) v.push_back("unknown category '" + m.category + "'");
  return v;
}

inline Dataset generate_dataset(DatasetManifest m) {
  const auto bad = validate(m);
  if (!bad.empty()) throw ConfigError("invalid dataset config: " + bad[0]);
  m.assign_splits();
  Dataset d;
  d.manifest = m;
  for (std::size_t k : m.train_ids)
    for (std::size_t v = 0; v < m.train_views; ++v)
      d.train.push_back(make_sample(m, k, v));
  for (std::size_t k : m.test_ids)
    for (std::size_t v = 0; v < m.test_views; ++v)
      d.test.push_back(make_sample(m, k, m.single_instance ? m.train_views + v : v));
  return d;
}

// ---- PLY ----

inline void write_ply(const std::string& path, const Cloud<double>& pts) {
  std::ofstream os(path);
  if (!os) throw FormatError("cannot write " + path);
  os << "ply\nformat ascii 1.0\nelement vertex " << pts.size()
     << "\nproperty float x\nproperty float y\nproperty float z\nend_header\n";
  char buf[96];
  for (const auto& p : pts) {
    std::snprintf(buf, sizeof buf, "%.9g %.9g %.9g\n", double(float(p[0])),
                  double(float(p[1])), double(float(p[2])));
    os << buf;
  }
  if (!os) throw FormatError("failed writing " + path);
}

/// ASCII PLY with per-point colour; used for overlays. read_ply accepts it.
inline void write_ply_rgb(const std::string& path, const Cloud<double>& pts,
                          const std::vector<std::array<unsigned char, 3>>& rgb) {
  EQPOSE_EXPECT(rgb.size() == pts.size(), "write_ply_rgb: one colour per point");
  std::ofstream os(path);
  if (!os) throw FormatError("cannot write " + path);
  os << "ply\nformat ascii 1.0\nelement vertex " << pts.size()
     << "\nproperty float x\nproperty float y\nproperty float z"
        "\nproperty uchar red\nproperty uchar green\nproperty uchar blue\nend_header\n";
  char buf[128];
  for (std::size_t i = 0; i < pts.size(); ++i) {
    const auto& p = pts[i];
    std::snprintf(buf, sizeof buf, "%.9g %.9g %.9g %u %u %u\n", double(float(p[0])),
                  double(float(p[1])), double(float(p[2])), unsigned(rgb[i][0]),
                  unsigned(rgb[i][1]), unsigned(rgb[i][2]));
    os << buf;
  }
  if (!os) throw FormatError("failed writing " + path);
}

/// Reads an ASCII PLY with float x, y, z vertex properties (extra vertex
/// properties are ignored; other elements must follow the vertices).
inline Cloud<double> read_ply(const std::string& path) {
  std::ifstream is(path);
  if (!is) throw FormatError("missing file " + path);
  std::string line;
  auto bad = [&](const std::string& why) {
    return FormatError("malformed PLY header in " + path + ": " + why);
  };
  if (!std::getline(is, line) || line != "ply") throw bad("missing 'ply'");
  std::size_t count = 0;
  bool have_vertex = false, in_vertex = false, ascii = false;
  std::vector<std::string> props;
  while (std::getline(is, line)) {
    std::istringstream ls(line);
    std::string word;
    ls >> word;
    if (word == "format") {
      std::string f;
      ls >> f;
      ascii = f == "ascii";
    } else if (word == "element") {
      std::string name;
      ls >> name;
      in_vertex = name == "vertex";
      if (in_vertex) {
        if (!(ls >> count)) throw bad("bad vertex count");
        have_vertex = true;
      }
    } else if (word == "property") {
      std::string type, name;
      ls >> type >> name;
      if (in_vertex) props.push_back(name);
    } else if (word == "end_header") {
      break;
    } else if (word != "comment" && word != "obj_info" && !word.empty()) {
      throw bad("unexpected line '" + line + "'");
    }
  }
  if (line != "end_header") throw bad("missing end_header");
  if (!ascii) throw bad("only ascii format is supported");
  if (!have_vertex) throw bad("no vertex element");
  int ix = -1, iy = -1, iz = -1;
  for (std::size_t k = 0; k < props.size(); ++k) {
    if (props[k] == "x") ix = int(k);
    if (props[k] == "y") iy = int(k);
    if (props[k] == "z") iz = int(k);
  }
  if (ix < 0 || iy < 0 || iz < 0) throw bad("vertex lacks x/y/z");
  Cloud<double> pts(count);
  std::vector<double> vals(props.size());
  for (std::size_t i = 0; i < count; ++i) {
    if (!std::getline(is, line))
      throw FormatError("truncated PLY " + path + ": expected " +
                        std::to_string(count) + " vertices, got " +
                        std::to_string(i));
    // strtod accepts nan/inf; values are float on disk.
    const char* cur = line.c_str();
    for (auto& v : vals) {
      char* end = nullptr;
      v = static_cast<double>(static_cast<float>(std::strtod(cur, &end)));
      if (end == cur)
        throw FormatError("truncated PLY " + path + ": bad vertex line " +
                          std::to_string(i));
      cur = end;
    }
    pts[i] = {vals[ix], vals[iy], vals[iz]};
  }
  return pts;
}

// ---- poses.csv ----

struct PoseRow {
  std::string id;
  RigidPose<double> pose;
};

inline void write_poses_csv(const std::string& path,
                            const std::vector<PoseRow>& rows) {
  std::ofstream os(path);
  if (!os) throw FormatError("cannot write " + path);
  os << "sample_id,qw,qx,qy,qz,tx,ty,tz\n";
  char buf[256];
  for (const auto& r : rows) {
    const auto& q = r.pose.rotation;
    const auto& t = r.pose.translation;
    std::snprintf(buf, sizeof buf, "%s,%.9g,%.9g,%.9g,%.9g,%.9g,%.9g,%.9g\n",
                  r.id.c_str(), q.w, q.x, q.y, q.z, t[0], t[1], t[2]);
    os << buf;
  }
}

inline std::vector<PoseRow> read_poses_csv(const std::string& path) {
  std::ifstream is(path);
  if (!is) throw FormatError("missing file " + path);
  std::string line;
  if (!std::getline(is, line) || line.rfind("sample_id,", 0) != 0)
    throw FormatError("malformed poses header in " + path);
  std::vector<PoseRow> rows;
  std::size_t lineno = 1;
  while (std::getline(is, line)) {
    ++lineno;
    if (line.empty()) continue;
    std::vector<std::string> f;
    std::stringstream ss(line);
    std::string cell;
    while (std::getline(ss, cell, ',')) f.push_back(cell);
    if (f.size() != 8)
      throw FormatError("malformed pose row " + std::to_string(lineno) + " in " +
                        path);
    double v[7];
    for (int k = 0; k < 7; ++k) {
      char* end = nullptr;
      v[k] = std::strtod(f[k + 1].c_str(), &end);
      if (end == f[k + 1].c_str())
        throw FormatError("malformed number on row " + std::to_string(lineno) +
                          " in " + path);
    }
    rows.push_back({f[0], {{v[0], v[1], v[2], v[3]}, {v[4], v[5], v[6]}}});
  }
  return rows;
}

// ---- manifest ----

inline nlohmann::json to_json(const DatasetManifest& m) {
  return {{"seed", m.seed},
          {"category", m.category},
          {"points", m.points},
          {"train_instances", m.train_instances},
          {"train_views", m.train_views},
          {"test_instances", m.test_instances},
          {"test_views", m.test_views},
          {"policy", to_string(m.policy)},
          {"partial", m.partial},
          {"jitter", m.jitter},
          {"single_instance", m.single_instance},
          {"splits", {{"train", m.train_ids}, {"test", m.test_ids}}}};
}

inline DatasetManifest manifest_from_json(const nlohmann::json& j) {
  DatasetManifest m;
  try {
    m.seed = j.at("seed").get<std::uint64_t>();
    m.category = j.at("category").get<std::string>();
    m.points = j.at("points").get<std::size_t>();
    m.train_instances = j.at("train_instances").get<std::size_t>();
    m.train_views = j.at("train_views").get<std::size_t>();
    m.test_instances = j.at("test_instances").get<std::size_t>();
    m.test_views = j.at("test_views").get<std::size_t>();
    m.policy = view_policy_from_string(j.at("policy").get<std::string>());
    m.partial = j.at("partial").get<bool>();
    m.jitter = j.at("jitter").get<double>();
    m.single_instance = j.value("single_instance", false);
    m.train_ids = j.at("splits").at("train").get<std::vector<std::size_t>>();
    m.test_ids = j.at("splits").at("test").get<std::vector<std::size_t>>();
  } catch (const nlohmann::json::exception& e) {
    throw FormatError(std::string("malformed manifest: ") + e.what());
  } catch (const ConfigError& e) {
    throw FormatError(std::string("malformed manifest: ") + e.what());
  }
  return m;
}

inline void write_dataset(const Dataset& d, const std::string& dir) {
  namespace fs = std::filesystem;
  fs::create_directories(fs::path(dir) / "clouds");
  nlohmann::json man = to_json(d.manifest);
  nlohmann::json samples = nlohmann::json::array();
  std::vector<PoseRow> rows;
  auto emit = [&](const Sample& s, const char* split) {
    samples.push_back({{"id", s.id},
                       {"instance", s.instance},
                       {"view", s.view},
                       {"split", split}});
    rows.push_back({s.id, s.gt_pose});
    write_ply((fs::path(dir) / "clouds" / (s.id + ".ply")).string(), s.cloud);
  };
  for (const auto& s : d.train) emit(s, "train");
  for (const auto& s : d.test) emit(s, "test");
  man["samples"] = samples;
  {
    std::ofstream os(fs::path(dir) / "manifest.json");
    if (!os) throw FormatError("cannot write manifest in " + dir);
    os << man.dump(2) << '\n';
  }
  write_poses_csv((fs::path(dir) / "poses.csv").string(), rows);
}

inline Dataset read_dataset(const std::string& dir) {
  namespace fs = std::filesystem;
  const fs::path mp = fs::path(dir) / "manifest.json";
  std::ifstream is(mp);
  if (!is) throw FormatError("missing file " + mp.string());
  nlohmann::json man;
  try {
    is >> man;
  } catch (const nlohmann::json::exception& e) {
    throw FormatError("malformed manifest " + mp.string() + ": " + e.what());
  }
  Dataset d;
  d.manifest = manifest_from_json(man);
  const auto rows = read_poses_csv((fs::path(dir) / "poses.csv").string());
  const auto& samples = man.at("samples");
  if (rows.size() != samples.size())
    throw FormatError("count mismatch: poses.csv has " +
                      std::to_string(rows.size()) + " rows, manifest lists " +
                      std::to_string(samples.size()) + " samples");
  const std::size_t expect =
      d.manifest.train_ids.size() * d.manifest.train_views +
      d.manifest.test_ids.size() * d.manifest.test_views;
  if (samples.size() != expect)
    throw FormatError("count mismatch: manifest lists " +
                      std::to_string(samples.size()) + " samples, counts imply " +
                      std::to_string(expect));
  for (std::size_t k = 0; k < samples.size(); ++k) {
    const auto& js = samples[k];
    Sample s;
    s.id = js.at("id").get<std::string>();
    s.instance = js.at("instance").get<std::size_t>();
    s.view = js.at("view").get<std::size_t>();
    s.partial = d.manifest.partial;
    if (rows[k].id != s.id)
      throw FormatError("poses.csv row " + std::to_string(k + 1) + " is '" +
                        rows[k].id + "', manifest expects '" + s.id + "'");
    s.gt_pose = rows[k].pose;
    s.cloud = read_ply((fs::path(dir) / "clouds" / (s.id + ".ply")).string());
    (js.at("split").get<std::string>() == "test" ? d.test : d.train)
        .push_back(std::move(s));
  }
  return d;
}

}  // namespace eqpose
