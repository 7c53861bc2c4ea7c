#pragma once

#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "shapeset/autodiff.hpp"

namespace shapeset {

struct DenoiserConfig {
  int m = 4;           // part slots
  int q = 64;          // geometry latent width
  int width = 128;     // token width d
  int blocks = 4;
  int heads = 4;
  int time_dim = 128;  // sinusoidal embedding width
  int ffn_mult = 4;
  bool attend_padding = true;  // false: padding keys are masked out of attention

  int classes() const { return m + 1; }
  int token_dim() const { return q + classes(); }
  void validate() const;

  friend bool operator==(const DenoiserConfig&, const DenoiserConfig&) = default;
};

struct ParamSpec {
  std::string name;
  Eigen::Index rows = 0;
  Eigen::Index cols = 0;
};

/// Ordered tensor list of the denoiser: input encoders, time MLP, per-block
/// modulation/attention/feed-forward weights, final modulation and heads.
std::vector<ParamSpec> denoiser_layout(const DenoiserConfig& config);

/// Flat-addressable list of parameter tensors in layout order.
template <typename T>
struct ParamSet {
  std::vector<ad::Matrix<T>> tensors;

  std::size_t size() const {
    std::size_t n = 0;
    for (const auto& t : tensors) n += static_cast<std::size_t>(t.size());
    return n;
  }
  T& flat(std::size_t i);
  T flat(std::size_t i) const { return const_cast<ParamSet*>(this)->flat(i); }
  /// Index of the tensor holding flat index i.
  std::size_t tensor_of(std::size_t i) const;
  bool all_finite() const {
    for (const auto& t : tensors) {
      if (!t.allFinite()) return false;
    }
    return true;
  }

  template <typename U>
  ParamSet<U> cast() const {
    ParamSet<U> out;
    for (const auto& t : tensors) out.tensors.push_back(t.template cast<U>());
    return out;
  }

  friend bool operator==(const ParamSet& a, const ParamSet& b) { return a.tensors == b.tensors; }
};

/// Deterministic init: scaled-uniform weights, zero biases.
ParamSet<float> init_denoiser_params(const DenoiserConfig& config, std::uint64_t seed);

/// Throws ValidationError if tensor shapes disagree with the layout.
template <typename T>
void check_params(const DenoiserConfig& config, const ParamSet<T>& params);

/// Sinusoidal embedding of integer steps, one row per step.
template <typename T>
ad::Matrix<T> timestep_embedding(std::span<const int> steps, int dim);

template <typename T>
struct DenoiserVars {
  ad::Var geometry;  // (N*m) x q, predicted clean geometry latents
  ad::Var logits;    // (N*m) x (m+1), semantics class logits
};

/// Forward pass over a batch of N latent sets stacked row-wise ((N*m) x
/// (q+m+1)); `steps` holds one diffusion step per set, `mask` one entry per
/// row (nonzero = real part). Tokens carry no positional information, so the
/// map is equivariant to row permutations within a set.
template <typename T>
DenoiserVars<T> denoiser_forward(ad::Tape<T>& tape, const DenoiserConfig& config, std::span<const ad::Var> params,
                                 const ad::Matrix<T>& tokens, std::span<const int> steps,
                                 std::span<const std::uint8_t> mask);

/// Registers params on the tape as variables (or constants when frozen).
template <typename T>
std::vector<ad::Var> register_params(ad::Tape<T>& tape, const ParamSet<T>& params, bool trainable);

/// Inference without gradients; returns geometry and logits matrices.
template <typename T>
std::pair<ad::Matrix<T>, ad::Matrix<T>> denoise(const DenoiserConfig& config, const ParamSet<T>& params,
                                                const ad::Matrix<T>& tokens, std::span<const int> steps,
                                                std::span<const std::uint8_t> mask);

}  // namespace shapeset
