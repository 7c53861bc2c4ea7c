#include "shapeset/denoiser.hpp"

#include <cmath>

#include "shapeset/error.hpp"
#include "shapeset/rng.hpp"

namespace shapeset {

namespace {

// Offsets into the layout.
constexpr std::size_t kPrefix = 8;     // geo_in w/b, sem_in w/b, time w1/b1/w2/b2
constexpr std::size_t kPerBlock = 10;  // mod w/b, qkv w/b, out w/b, ffn1 w/b, ffn2 w/b

}  // namespace

void DenoiserConfig::validate() const {
  if (m < 1 || q < 1) throw ValidationError("denoiser: m and q must be positive");
  if (width < 2 || width % 2 != 0) throw ValidationError("denoiser: width must be even");
  if (blocks < 1) throw ValidationError("denoiser: need at least one block");
  if (heads < 1 || width % heads != 0) throw ValidationError("denoiser: width must be divisible by heads");
  if (time_dim < 2 || time_dim % 2 != 0) throw ValidationError("denoiser: time_dim must be even");
  if (ffn_mult < 1) throw ValidationError("denoiser: ffn_mult must be positive");
}

std::vector<ParamSpec> denoiser_layout(const DenoiserConfig& c) {
  c.validate();
  const Eigen::Index d = c.width, half = c.width / 2, hidden = c.width * c.ffn_mult;
  std::vector<ParamSpec> specs{
      {"geometry_in.weight", c.q, half},     {"geometry_in.bias", 1, half},
      {"semantics_in.weight", c.classes(), half}, {"semantics_in.bias", 1, half},
      {"time.weight1", c.time_dim, d},       {"time.bias1", 1, d},
      {"time.weight2", d, d},                {"time.bias2", 1, d},
  };
  for (int b = 0; b < c.blocks; ++b) {
    const std::string p = "block" + std::to_string(b) + ".";
    specs.push_back({p + "modulation.weight", d, 4 * d});
    specs.push_back({p + "modulation.bias", 1, 4 * d});
    specs.push_back({p + "qkv.weight", d, 3 * d});
    specs.push_back({p + "qkv.bias", 1, 3 * d});
    specs.push_back({p + "out.weight", d, d});
    specs.push_back({p + "out.bias", 1, d});
    specs.push_back({p + "ffn1.weight", d, hidden});
    specs.push_back({p + "ffn1.bias", 1, hidden});
    specs.push_back({p + "ffn2.weight", hidden, d});
    specs.push_back({p + "ffn2.bias", 1, d});
  }
  specs.push_back({"final.modulation.weight", d, 2 * d});
  specs.push_back({"final.modulation.bias", 1, 2 * d});
  specs.push_back({"geometry_out.weight", d, c.q});
  specs.push_back({"geometry_out.bias", 1, c.q});
  specs.push_back({"semantics_out.weight", d, c.classes()});
  specs.push_back({"semantics_out.bias", 1, c.classes()});
  return specs;
}

template <typename T>
T& ParamSet<T>::flat(std::size_t i) {
  for (auto& t : tensors) {
    const auto n = static_cast<std::size_t>(t.size());
    if (i < n) return t.data()[i];
    i -= n;
  }
  throw ValidationError("ParamSet::flat: index out of range");
}

template <typename T>
std::size_t ParamSet<T>::tensor_of(std::size_t i) const {
  for (std::size_t k = 0; k < tensors.size(); ++k) {
    const auto n = static_cast<std::size_t>(tensors[k].size());
    if (i < n) return k;
    i -= n;
  }
  throw ValidationError("ParamSet::tensor_of: index out of range");
}

ParamSet<float> init_denoiser_params(const DenoiserConfig& config, std::uint64_t seed) {
  const auto specs = denoiser_layout(config);
  Rng rng(seed);
  ParamSet<float> out;
  for (const auto& s : specs) {
    ad::Matrix<float> w = ad::Matrix<float>::Zero(s.rows, s.cols);
    const bool is_bias = s.rows == 1 && s.name.find("bias") != std::string::npos;
    if (!is_bias) {
      double bound = std::sqrt(3.0 / static_cast<double>(s.rows));  // unit-variance outputs for unit inputs
      if (s.name.find("modulation") != std::string::npos) bound *= 0.1;
      if (s.name.find("_out.") != std::string::npos) bound *= 0.5;
      for (Eigen::Index i = 0; i < w.size(); ++i) w.data()[i] = static_cast<float>(rng.uniform(-bound, bound));
    }
    out.tensors.push_back(std::move(w));
  }
  return out;
}

template <typename T>
void check_params(const DenoiserConfig& config, const ParamSet<T>& params) {
  const auto specs = denoiser_layout(config);
  if (specs.size() != params.tensors.size()) throw ConfigMismatchError("denoiser params: tensor count mismatch");
  for (std::size_t i = 0; i < specs.size(); ++i) {
    if (params.tensors[i].rows() != specs[i].rows || params.tensors[i].cols() != specs[i].cols) {
      throw ConfigMismatchError("denoiser params: shape mismatch for " + specs[i].name);
    }
  }
}

template <typename T>
ad::Matrix<T> timestep_embedding(std::span<const int> steps, int dim) {
  const int half = dim / 2;
  ad::Matrix<T> out(static_cast<Eigen::Index>(steps.size()), dim);
  for (std::size_t r = 0; r < steps.size(); ++r) {
    for (int i = 0; i < half; ++i) {
      const double freq = std::exp(-std::log(10000.0) * static_cast<double>(i) / static_cast<double>(half));
      const double arg = static_cast<double>(steps[r]) * freq;
      out(static_cast<Eigen::Index>(r), i) = static_cast<T>(std::sin(arg));
      out(static_cast<Eigen::Index>(r), half + i) = static_cast<T>(std::cos(arg));
    }
  }
  return out;
}

template <typename T>
std::vector<ad::Var> register_params(ad::Tape<T>& tape, const ParamSet<T>& params, bool trainable) {
  std::vector<ad::Var> vars;
  vars.reserve(params.tensors.size());
  for (const auto& t : params.tensors) vars.push_back(trainable ? tape.variable(t) : tape.constant(t));
  return vars;
}

template <typename T>
DenoiserVars<T> denoiser_forward(ad::Tape<T>& tape, const DenoiserConfig& c, std::span<const ad::Var> p,
                                 const ad::Matrix<T>& tokens, std::span<const int> steps,
                                 std::span<const std::uint8_t> mask) {
  using namespace ad;
  const Eigen::Index m = c.m, d = c.width;
  const auto sets = static_cast<Eigen::Index>(steps.size());
  if (tokens.cols() != c.token_dim() || tokens.rows() != sets * m) {
    throw ValidationError("denoiser: expected " + std::to_string(sets * m) + "x" + std::to_string(c.token_dim()) +
                          " tokens, got " + std::to_string(tokens.rows()) + "x" + std::to_string(tokens.cols()));
  }
  if (static_cast<Eigen::Index>(mask.size()) != tokens.rows()) throw ValidationError("denoiser: mask length mismatch");
  if (p.size() != kPrefix + kPerBlock * static_cast<std::size_t>(c.blocks) + 6) {
    throw ValidationError("denoiser: parameter count mismatch");
  }

  const Var geo = tape.constant(tokens.leftCols(c.q));
  const Var sem = tape.constant(tokens.rightCols(c.classes()));
  Var x = concat_cols(tape, linear(tape, geo, p[0], p[1]), linear(tape, sem, p[2], p[3]));

  const Var temb = tape.constant(timestep_embedding<T>(steps, c.time_dim));
  Var cond = linear(tape, gelu(tape, linear(tape, temb, p[4], p[5])), p[6], p[7]);
  const Var cond_act = gelu(tape, cond);

  const std::span<const std::uint8_t> key_mask = c.attend_padding ? std::span<const std::uint8_t>{} : mask;
  auto modulate = [&](Var h, Var mods, Eigen::Index slot) {
    const Var scale_part = repeat_rows(tape, slice_cols(tape, mods, 2 * slot * d, d), m);
    const Var shift_part = repeat_rows(tape, slice_cols(tape, mods, (2 * slot + 1) * d, d), m);
    return add(tape, mul(tape, layer_norm_rows(tape, h), add_scalar(tape, scale_part, T(1))), shift_part);
  };

  for (int b = 0; b < c.blocks; ++b) {
    const std::size_t o = kPrefix + kPerBlock * static_cast<std::size_t>(b);
    const Var mods = linear(tape, cond_act, p[o], p[o + 1]);

    const Var h1 = modulate(x, mods, 0);
    const Var qkv = linear(tape, h1, p[o + 2], p[o + 3]);
    const Var attn = grouped_attention(tape, slice_cols(tape, qkv, 0, d), slice_cols(tape, qkv, d, d),
                                       slice_cols(tape, qkv, 2 * d, d), m, c.heads, key_mask);
    x = add(tape, x, linear(tape, attn, p[o + 4], p[o + 5]));

    const Var h2 = modulate(x, mods, 1);
    const Var ff = linear(tape, gelu(tape, linear(tape, h2, p[o + 6], p[o + 7])), p[o + 8], p[o + 9]);
    x = add(tape, x, ff);
  }

  const std::size_t f = kPrefix + kPerBlock * static_cast<std::size_t>(c.blocks);
  const Var final_mods = linear(tape, cond_act, p[f], p[f + 1]);
  const Var h = modulate(x, final_mods, 0);
  return {linear(tape, h, p[f + 2], p[f + 3]), linear(tape, h, p[f + 4], p[f + 5])};
}

template <typename T>
std::pair<ad::Matrix<T>, ad::Matrix<T>> denoise(const DenoiserConfig& config, const ParamSet<T>& params,
                                                const ad::Matrix<T>& tokens, std::span<const int> steps,
                                                std::span<const std::uint8_t> mask) {
  ad::Tape<T> tape;
  const auto vars = register_params(tape, params, false);
  const auto out = denoiser_forward(tape, config, vars, tokens, steps, mask);
  return {tape.value(out.geometry), tape.value(out.logits)};
}

#define SHAPESET_INSTANTIATE(T)                                                                                  \
  template struct ParamSet<T>;                                                                                   \
  template void check_params<T>(const DenoiserConfig&, const ParamSet<T>&);                                      \
  template ad::Matrix<T> timestep_embedding<T>(std::span<const int>, int);                                      \
  template std::vector<ad::Var> register_params<T>(ad::Tape<T>&, const ParamSet<T>&, bool);                      \
  template DenoiserVars<T> denoiser_forward<T>(ad::Tape<T>&, const DenoiserConfig&, std::span<const ad::Var>,    \
                                               const ad::Matrix<T>&, std::span<const int>,                       \
                                               std::span<const std::uint8_t>);                                   \
  template std::pair<ad::Matrix<T>, ad::Matrix<T>> denoise<T>(const DenoiserConfig&, const ParamSet<T>&,         \
                                                              const ad::Matrix<T>&, std::span<const int>,        \
                                                              std::span<const std::uint8_t>);

SHAPESET_INSTANTIATE(float)
SHAPESET_INSTANTIATE(double)

#undef SHAPESET_INSTANTIATE

}  // namespace shapeset
