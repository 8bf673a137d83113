#pragma once

#include <bit>
#include <cmath>
#include <cstdint>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <functional>
#include <random>
#include <string>
#include <vector>

#include "eqpose/checkpoint.hpp"
#include "eqpose/dataset.hpp"
#include "eqpose/loss.hpp"
#include "eqpose/model.hpp"
#include "eqpose/optim.hpp"

namespace eqpose {

struct TrainConfig {
  std::uint64_t seed = 0;
  std::size_t batch = 8;
  std::size_t steps = 5000;
  double lambda = lambda_default();
  double lr = 5e-4;
  double lr_decay = 0.9995;
  DistanceMode mode = DistanceMode::complete;
  std::size_t checkpoint_every = 500;
};

struct StepLog {
  std::uint64_t step = 0;
  double rec = 0, reg = 0, total = 0;
  std::size_t selected_j = 0;
  double lr = 0;
};

// ---- checkpoint state ----

inline constexpr const char* kExactPrefix = "f64bits/";

/// Parameter and optimizer records. Double-precision tensors also get an
/// exact bit copy so fp64 runs resume without rounding.
template <class T>
std::vector<CheckpointRecord> state_records(const ParameterStore<T>& store,
                                            const OptimizerState<T>* opt) {
  std::vector<CheckpointRecord> out = store.to_records();
  auto exact = [&](const std::string& name, const std::vector<T>& data) {
    if constexpr (std::is_same_v<T, double>) {
      CheckpointRecord r;
      r.name = kExactPrefix + name;
      r.dims = {static_cast<std::uint32_t>(2 * data.size())};
      for (double v : data) {
        const auto bits = std::bit_cast<std::uint64_t>(v);
        r.data.push_back(std::bit_cast<float>(static_cast<std::uint32_t>(bits)));
        r.data.push_back(std::bit_cast<float>(static_cast<std::uint32_t>(bits >> 32)));
      }
      out.push_back(std::move(r));
    }
  };
  for (std::size_t k = 0; k < store.size(); ++k)
    exact(store[k].name, store[k].data);
  if (opt) {
    CheckpointRecord st;
    st.name = "adam/step";
    st.dims = {2};
    st.data = {std::bit_cast<float>(static_cast<std::uint32_t>(opt->step)),
               std::bit_cast<float>(static_cast<std::uint32_t>(opt->step >> 32))};
    out.push_back(st);
    for (std::size_t k = 0; k < opt->m.size() && k < store.size(); ++k) {
      const auto& p = store[k];
      out.push_back(ParameterStore<T>::to_record("adam/m/" + p.name, p.shape,
                                                 opt->m[k]));
      out.push_back(ParameterStore<T>::to_record("adam/v/" + p.name, p.shape,
                                                 opt->v[k]));
      exact("adam/m/" + p.name, opt->m[k]);
      exact("adam/v/" + p.name, opt->v[k]);
    }
  }
  return out;
}

namespace detail {

template <class T>
std::vector<T> record_values(const std::vector<CheckpointRecord>& recs,
                             const std::string& name, std::size_t count) {
  if constexpr (std::is_same_v<T, double>) {
    for (const auto& r : recs)
      if (r.name == kExactPrefix + name && r.data.size() == 2 * count) {
        std::vector<double> out(count);
        for (std::size_t i = 0; i < count; ++i) {
          const std::uint64_t lo = std::bit_cast<std::uint32_t>(r.data[2 * i]);
          const std::uint64_t hi = std::bit_cast<std::uint32_t>(r.data[2 * i + 1]);
          out[i] = std::bit_cast<double>(lo | (hi << 32));
        }
        return out;
      }
  }
  for (const auto& r : recs)
    if (r.name == name) {
      if (r.data.size() != count)
        throw FormatError("checkpoint tensor '" + name + "' has wrong size");
      return std::vector<T>(r.data.begin(), r.data.end());
    }
  throw FormatError("checkpoint lacks tensor '" + name + "'");
}

}  // namespace detail

/// Restores parameters (shape-checked, every mismatch listed) and, when
/// `opt` is given, the optimizer moments and step.
template <class T>
void restore_state(const std::vector<CheckpointRecord>& recs,
                   ParameterStore<T>& store, OptimizerState<T>* opt) {
  store.load_records(recs);
  for (std::size_t k = 0; k < store.size(); ++k)
    store[k].data = detail::record_values<T>(recs, store[k].name, store[k].size());
  if (!opt) return;
  opt->reset();
  const CheckpointRecord* st = nullptr;
  for (const auto& r : recs)
    if (r.name == "adam/step") st = &r;
  if (!st || st->data.size() != 2)
    throw FormatError("checkpoint lacks optimizer state (adam/step)");
  opt->step = std::uint64_t(std::bit_cast<std::uint32_t>(st->data[0])) |
              (std::uint64_t(std::bit_cast<std::uint32_t>(st->data[1])) << 32);
  bool any = false;
  for (const auto& r : recs) any |= r.name.rfind("adam/m/", 0) == 0;
  if (!any) return;
  opt->m.resize(store.size());
  opt->v.resize(store.size());
  for (std::size_t k = 0; k < store.size(); ++k) {
    opt->m[k] = detail::record_values<T>(recs, "adam/m/" + store[k].name,
                                         store[k].size());
    opt->v[k] = detail::record_values<T>(recs, "adam/v/" + store[k].name,
                                         store[k].size());
  }
}

/// Exclusive run-directory lock, released on destruction.
class RunLock {
 public:
  explicit RunLock(const std::string& dir) {
    std::filesystem::create_directories(dir);
    path_ = (std::filesystem::path(dir) / ".lock").string();
    std::FILE* f = std::fopen(path_.c_str(), "wx");
    if (!f)
      throw ConfigError("run directory " + dir +
                        " is locked by another trainer (" + path_ + ")");
    std::fclose(f);
  }
  ~RunLock() { std::remove(path_.c_str()); }
  RunLock(const RunLock&) = delete;
  RunLock& operator=(const RunLock&) = delete;

 private:
  std::string path_;
};

template <class T>
class Trainer {
 public:
  Trainer(Model<T>& model, std::vector<Cloud<T>> clouds, TrainConfig cfg)
      : model_(model), clouds_(std::move(clouds)), cfg_(cfg) {
    EQPOSE_EXPECT(!clouds_.empty(), "trainer: empty training set");
    EQPOSE_EXPECT(cfg_.batch > 0, "trainer: batch must be positive");
    opt_.initial_lr = cfg_.lr;
    opt_.decay = cfg_.lr_decay;
    plans_.resize(clouds_.size());
  }

  OptimizerState<T>& optimizer() { return opt_; }
  std::uint64_t step_count() const { return opt_.step; }

  /// Batch indices of a step depend only on (seed, step).
  std::vector<std::size_t> batch_indices(std::uint64_t step) const {
    std::mt19937_64 rng(stream_key(cfg_.seed, 0x3000, step));
    std::uniform_int_distribution<std::size_t> u(0, clouds_.size() - 1);
    std::vector<std::size_t> idx(cfg_.batch);
    for (auto& i : idx) i = u(rng);
    return idx;
  }

  StepLog step() {
    auto& store = model_.parameters();
    store.zero_grads();
    StepLog log;
    log.step = opt_.step;
    log.lr = opt_.lr();
    const auto idx = batch_indices(opt_.step);
    const T w = T(1) / static_cast<T>(idx.size());
    for (std::size_t b = 0; b < idx.size(); ++b) {
      const auto& X = clouds_[idx[b]];
      auto& plan = plans_[idx[b]];
      if (plan.levels.empty()) plan = make_plan(X, model_.config().encoder);
      ad::Tape<T> tape;
      auto out = model_.forward(tape, X, plan);
      auto L = min_of_n_loss(tape, X, out.shape, out.hypotheses, cfg_.mode,
                             static_cast<T>(cfg_.lambda));
      tape.backward(L.total);
      tape.accumulate_param_grads(w);
      log.rec += double(L.values.rec) / double(idx.size());
      log.reg += double(L.values.reg) / double(idx.size());
      log.total += double(L.values.total) / double(idx.size());
      if (b == 0) log.selected_j = L.values.selected_j;
    }
    for (const auto* p : store.pointers())
      for (T g : p->grad)
        if (!std::isfinite(g))
          throw NumericalError("non-finite gradient in '" + p->name + "' at step " +
                               std::to_string(log.step));
    adam_step(store.pointers(), opt_);
    return log;
  }

  std::vector<CheckpointRecord> checkpoint() const {
    return state_records(model_.parameters(), &opt_);
  }

  void resume(const std::vector<CheckpointRecord>& recs, bool weights_only) {
    if (weights_only) {
      restore_state<T>(recs, model_.parameters(), nullptr);
      opt_.reset();
    } else {
      restore_state<T>(recs, model_.parameters(), &opt_);
    }
  }

 private:
  Model<T>& model_;
  std::vector<Cloud<T>> clouds_;
  std::vector<EncoderPlan> plans_;
  TrainConfig cfg_;
  OptimizerState<T> opt_;
};

inline void write_log_header(std::ostream& os) {
  os << "step,rec,reg,total,selected_j,lr\n";
}

inline void write_log_row(std::ostream& os, const StepLog& l) {
  char buf[256];
  std::snprintf(buf, sizeof buf, "%llu,%.9g,%.9g,%.9g,%zu,%.9g\n",
                static_cast<unsigned long long>(l.step), l.rec, l.reg, l.total,
                l.selected_j, l.lr);
  os << buf;
}

}  // namespace eqpose
