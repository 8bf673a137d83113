#pragma once

#include <cstdint>
#include <optional>
#include <random>
#include <string>
#include <vector>

#include "eqpose/backbone.hpp"
#include "eqpose/heads.hpp"
#include "eqpose/loss.hpp"
#include "eqpose/params.hpp"

namespace eqpose {

struct ModelConfig {
  EncoderConfig encoder = EncoderConfig::desk_default();
  HeadConfig heads;
};

template <class T>
struct ModelOutput {
  FeatureField<T> field;
  ad::Var<T> shape;  // [N_Z, 3] or the template
  PoseHypothesisSet<T> hypotheses;
};

/// Encoder plus both heads. With a template set (instance mode) the shape
/// head is bypassed and the template is used as the canonical shape.
template <class T>
class Model {
 public:
  Model(ModelConfig cfg, std::uint64_t seed,
        const RotationGroup& G = icosahedral_group())
      : cfg_(std::move(cfg)), G_(&G) {
    std::mt19937_64 rng(seed);
    encoder_ = Encoder<T>(cfg_.encoder, G, store_, rng);
    shape_ = ShapeHead<T>(cfg_.encoder.output_channels(), cfg_.heads, store_, rng);
    pose_ = PoseHead<T>(cfg_.encoder.output_channels(), cfg_.heads, store_, rng);
  }

  const ModelConfig& config() const { return cfg_; }
  const RotationGroup& group() const { return *G_; }
  ParameterStore<T>& parameters() { return store_; }
  const ParameterStore<T>& parameters() const { return store_; }
  const Encoder<T>& encoder() const { return encoder_; }

  void set_template(Cloud<T> tmpl) {
    EQPOSE_EXPECT(!tmpl.empty(), "instance mode: empty template");
    template_ = std::move(tmpl);
  }
  void clear_template() { template_.reset(); }
  bool instance_mode() const { return template_.has_value(); }
  const Cloud<T>& template_points() const { return *template_; }

  ModelOutput<T> forward(ad::Tape<T>& tape, const Cloud<T>& X) {
    return forward(tape, X, make_plan(X, cfg_.encoder));
  }

  ModelOutput<T> forward(ad::Tape<T>& tape, const Cloud<T>& X,
                         const EncoderPlan& plan) {
    ModelOutput<T> out;
    out.field = encoder_.encode(tape, store_, X, plan);
    out.shape = template_ ? cloud_var(tape, *template_)
                          : shape_(tape, store_, out.field);
    out.hypotheses = pose_(tape, store_, out.field, X, *G_);
    return out;
  }

 private:
  ModelConfig cfg_;
  const RotationGroup* G_;
  ParameterStore<T> store_;
  Encoder<T> encoder_;
  ShapeHead<T> shape_;
  PoseHead<T> pose_;
  std::optional<Cloud<T>> template_;
};

}  // namespace eqpose
