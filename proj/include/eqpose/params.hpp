#pragma once

#include <cmath>
#include <cstddef>
#include <random>
#include <string>
#include <unordered_map>
#include <vector>

#include "eqpose/autodiff.hpp"
#include "eqpose/checkpoint.hpp"

namespace eqpose {

/// Owns the learnable tensors of a model, addressed by insertion index or
/// name. Indices stay valid for the lifetime of the store.
template <class T>
class ParameterStore {
 public:
  std::size_t add(std::string name, ad::Shape shape) {
    if (by_name_.count(name))
      throw ContractViolation("duplicate parameter name '" + name + "'");
    by_name_[name] = tensors_.size();
    tensors_.emplace_back(std::move(name), std::move(shape));
    return tensors_.size() - 1;
  }

  /// Normal(0, std) initialization.
  std::size_t add_normal(std::string name, ad::Shape shape, double stddev,
                         std::mt19937_64& rng) {
    const std::size_t k = add(std::move(name), std::move(shape));
    std::normal_distribution<double> nd(0.0, stddev);
    for (auto& v : tensors_[k].data) v = static_cast<T>(nd(rng));
    return k;
  }

  std::size_t add_constant(std::string name, ad::Shape shape, T value) {
    const std::size_t k = add(std::move(name), std::move(shape));
    std::fill(tensors_[k].data.begin(), tensors_[k].data.end(), value);
    return k;
  }

  ad::Tensor<T>& operator[](std::size_t k) { return tensors_.at(k); }
  const ad::Tensor<T>& operator[](std::size_t k) const { return tensors_.at(k); }
  std::size_t size() const { return tensors_.size(); }

  const ad::Tensor<T>* find(const std::string& name) const {
    auto it = by_name_.find(name);
    return it == by_name_.end() ? nullptr : &tensors_[it->second];
  }
  ad::Tensor<T>* find(const std::string& name) {
    auto it = by_name_.find(name);
    return it == by_name_.end() ? nullptr : &tensors_[it->second];
  }

  std::vector<ad::Tensor<T>*> pointers() {
    std::vector<ad::Tensor<T>*> out;
    for (auto& t : tensors_) out.push_back(&t);
    return out;
  }

  std::size_t scalar_count() const {
    std::size_t n = 0;
    for (const auto& t : tensors_) n += t.size();
    return n;
  }

  void zero_grads() {
    for (auto& t : tensors_) t.zero_grad();
  }

  std::vector<CheckpointRecord> to_records() const {
    std::vector<CheckpointRecord> out;
    for (const auto& t : tensors_) out.push_back(to_record(t.name, t.shape, t.data));
    return out;
  }

  /// Copies matching records into the store. Every parameter must be present
  /// with an identical shape; all mismatches are reported together.
  void load_records(const std::vector<CheckpointRecord>& records) {
    std::unordered_map<std::string, const CheckpointRecord*> idx;
    for (const auto& r : records) idx[r.name] = &r;
    std::string problems;
    for (auto& t : tensors_) {
      auto it = idx.find(t.name);
      if (it == idx.end()) {
        problems += " missing '" + t.name + "';";
        continue;
      }
      const auto& r = *it->second;
      if (!same_dims(t.shape, r.dims)) {
        problems += " shape mismatch for '" + t.name + "' (model " +
                    ad::to_string(t.shape) + ");";
        continue;
      }
    }
    if (!problems.empty())
      throw FormatError("checkpoint does not match model:" + problems);
    for (auto& t : tensors_) {
      const auto& r = *idx.at(t.name);
      for (std::size_t i = 0; i < t.size(); ++i)
        t.data[i] = static_cast<T>(r.data[i]);
    }
  }

  template <class V>
  static CheckpointRecord to_record(const std::string& name,
                                    const ad::Shape& shape,
                                    const std::vector<V>& data) {
    CheckpointRecord r;
    r.name = name;
    for (auto d : shape) r.dims.push_back(static_cast<std::uint32_t>(d));
    r.data.reserve(data.size());
    for (auto v : data) r.data.push_back(static_cast<float>(v));
    return r;
  }

  static bool same_dims(const ad::Shape& s, const std::vector<std::uint32_t>& d) {
    if (s.size() != d.size()) return false;
    for (std::size_t i = 0; i < s.size(); ++i)
      if (s[i] != d[i]) return false;
    return true;
  }

 private:
  std::vector<ad::Tensor<T>> tensors_;
  std::unordered_map<std::string, std::size_t> by_name_;
};

/// Fully connected layer, rows are samples: y = x W + b.
struct Linear {
  std::size_t weight = 0;
  std::size_t bias = 0;

  template <class T>
  static Linear create(ParameterStore<T>& store, const std::string& name,
                       std::size_t in, std::size_t out, std::mt19937_64& rng) {
    Linear l;
    l.weight = store.add_normal(name + ".weight", {in, out},
                                std::sqrt(2.0 / static_cast<double>(in)), rng);
    l.bias = store.add_constant(name + ".bias", {out}, T(0));
    return l;
  }

  template <class T>
  ad::Var<T> operator()(ad::Tape<T>& tape, ParameterStore<T>& store,
                        const ad::Var<T>& x) const {
    return ad::add_rowwise(ad::matmul(x, tape.param(store[weight])),
                           tape.param(store[bias]));
  }
};

}  // namespace eqpose
