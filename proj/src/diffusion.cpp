#include "shapeset/diffusion.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>
#include <set>
#include <string>

#include "shapeset/error.hpp"
#include "shapeset/optim.hpp"
#include "shapeset/rng.hpp"

namespace shapeset {

namespace {

using BoolArray = Eigen::Array<bool, Eigen::Dynamic, Eigen::Dynamic>;

Eigen::MatrixXd standard_normal(Rng& rng, Eigen::Index rows, Eigen::Index cols) {
  Eigen::MatrixXd out(rows, cols);
  for (Eigen::Index r = 0; r < rows; ++r) {
    for (Eigen::Index c = 0; c < cols; ++c) out(r, c) = rng.normal();
  }
  return out;
}

void check_step(const DiffusionSchedule& s, int t) {
  if (t < 0 || t >= s.steps()) {
    throw ValidationError("diffusion step " + std::to_string(t) + " outside [0, " + std::to_string(s.steps()) + ")");
  }
}

template <typename T>
LossBatch<T> build_batch(const Model& model, std::span<const ShapeLatent> clean, std::span<const std::vector<int>> classes,
                         std::span<const int> steps, std::span<const Eigen::MatrixXd> noise) {
  const auto& layout = model.layout;
  if (clean.empty()) throw ValidationError("loss: empty batch");
  if (steps.size() != clean.size() || noise.size() != clean.size() || classes.size() != clean.size()) {
    throw ValidationError("loss: batch component sizes differ");
  }
  const auto n = static_cast<Eigen::Index>(clean.size());
  const Eigen::Index m = layout.m;
  LossBatch<T> b;
  b.noisy.resize(n * m, layout.width());
  b.clean_geometry.resize(n * m, layout.q);
  for (Eigen::Index i = 0; i < n; ++i) {
    const auto& z = clean[static_cast<std::size_t>(i)];
    layout.check(z);
    const int t = steps[static_cast<std::size_t>(i)];
    check_step(model.schedule, t);
    const auto& eps = noise[static_cast<std::size_t>(i)];
    if (eps.rows() != m || eps.cols() != layout.width()) throw ValidationError("loss: noise shape mismatch");
    b.noisy.middleRows(i * m, m) = forward_noise(model.schedule, z.values, t, eps).template cast<T>();
    b.clean_geometry.middleRows(i * m, m) = z.values.leftCols(layout.q).template cast<T>();
    b.mask.insert(b.mask.end(), z.mask.begin(), z.mask.end());
    const auto& cls = classes[static_cast<std::size_t>(i)];
    b.classes.insert(b.classes.end(), cls.begin(), cls.end());
    b.steps.push_back(t);
    b.alpha_bars.push_back(model.schedule.alpha_bars[static_cast<std::size_t>(t)]);
  }
  return b;
}

// Expected codebook embedding under the predicted class distribution.
Eigen::MatrixXd expected_semantics(const ad::Matrix<float>& logits, const LabelCodebook& codebook) {
  Eigen::MatrixXd l = logits.cast<double>();
  l = (l.colwise() - l.rowwise().maxCoeff()).array().exp().matrix();
  l.array().colwise() /= l.rowwise().sum().array();
  return l * codebook.means();
}

struct ChainState {
  std::vector<Eigen::MatrixXd> x;       // per set, m x width
  std::vector<Eigen::MatrixXd> known;   // clean values of pinned entries
  std::vector<BoolArray> pinned;        // true where known applies
  std::vector<std::uint8_t> mask;       // denoiser row mask, all sets stacked
  std::vector<Rng> rngs;
};

void project(const DiffusionSchedule& schedule, ChainState& st, std::size_t i, int t) {
  if (!st.pinned[i].any()) return;
  const auto& k = st.known[i];
  const Eigen::MatrixXd eps = standard_normal(st.rngs[i], k.rows(), k.cols());
  const Eigen::MatrixXd noised = forward_noise(schedule, k, t, eps);
  st.x[i] = st.pinned[i].select(noised, st.x[i]);
}

// Sets are denoised in fixed-size chunks padded with dummy sets. Float GEMM
// rounding depends on the row count and on a row's position in the kernel
// tiling, so a fixed chunk shape keeps set i's result independent of how many
// sets share the request.
constexpr std::size_t kChunkSets = 8;

// One reverse step t -> t-1 for every set, in padded chunks.
void reverse_step(const Model& model, ChainState& st, int t, ad::Matrix<float>& tokens, std::vector<std::uint8_t>& mask) {
  const auto& layout = model.layout;
  const Eigen::Index m = layout.m;
  const std::size_t sets = st.x.size();
  const std::vector<int> steps(kChunkSets, t);
  const std::vector<double> rates(kChunkSets, model.schedule.alpha_bars[static_cast<std::size_t>(t)]);
  const double c0 = model.schedule.posterior_coef_clean(t);
  const double ct = model.schedule.posterior_coef_current(t);
  const double sd = std::sqrt(model.schedule.posterior_variance(t));
  for (std::size_t first = 0; first < sets; first += kChunkSets) {
    const std::size_t count = std::min(kChunkSets, sets - first);
    tokens.setZero();
    std::fill(mask.begin(), mask.end(), std::uint8_t{1});
    for (std::size_t j = 0; j < count; ++j) {
      const std::size_t i = first + j;
      project(model.schedule, st, i, t);
      const auto r = static_cast<Eigen::Index>(j) * m;
      tokens.middleRows(r, m) = st.x[i].cast<float>();
      std::copy_n(st.mask.begin() + static_cast<std::ptrdiff_t>(i) * m, m, mask.begin() + r);
    }
    const auto [net, logits] = denoise<float>(model.denoiser, model.params, tokens, steps, mask);
    const auto geo = clean_geometry_estimate<float>(net, tokens, rates, m);
    const Eigen::MatrixXd sem = expected_semantics(logits, model.codebook);

    for (std::size_t j = 0; j < count; ++j) {
      const std::size_t i = first + j;
      const auto r = static_cast<Eigen::Index>(j) * m;
      Eigen::MatrixXd x0(m, layout.width());
      x0.leftCols(layout.q) = geo.middleRows(r, m).cast<double>();
      x0.rightCols(layout.classes()) = sem.middleRows(r, m);
      if (t > 0) {
        const Eigen::MatrixXd z = standard_normal(st.rngs[i], m, layout.width());
        st.x[i] = c0 * x0 + ct * st.x[i] + sd * z;
      } else {
        st.x[i] = std::move(x0);
      }
      if (!st.x[i].allFinite()) throw NumericalError("sampler produced non-finite latents");
    }
  }
}

// `resamples` > 1 repeats each step: after a reverse step the state is
// re-noised from t-1 back to t and the step is redone, so free entries are
// re-derived with the pinned context already in place.
void run_chain(const Model& model, ChainState& st, int t_start, int resamples = 1) {
  if (!model.params.all_finite()) throw NumericalError("denoiser parameters contain non-finite values");
  if (resamples < 1) throw ValidationError("sampler: resample count must be positive");
  const auto& layout = model.layout;
  const auto chunk_rows = static_cast<Eigen::Index>(kChunkSets) * layout.m;
  ad::Matrix<float> tokens(chunk_rows, layout.width());
  std::vector<std::uint8_t> mask(static_cast<std::size_t>(chunk_rows));
  for (int t = t_start; t >= 0; --t) {
    const int passes = t > 0 ? resamples : 1;
    for (int pass = 0; pass < passes; ++pass) {
      if (pass > 0) {
        const double keep = std::sqrt(model.schedule.alphas[static_cast<std::size_t>(t)]);
        const double fresh = std::sqrt(model.schedule.betas[static_cast<std::size_t>(t)]);
        for (std::size_t i = 0; i < st.x.size(); ++i) {
          st.x[i] = keep * st.x[i] + fresh * standard_normal(st.rngs[i], layout.m, layout.width());
        }
      }
      reverse_step(model, st, t, tokens, mask);
    }
  }
  for (std::size_t i = 0; i < st.x.size(); ++i) st.x[i] = st.pinned[i].select(st.known[i], st.x[i]);
}

// Rows classified as padding become canonical padding rows; pinned rows stay.
ShapeLatent finalize(const Model& model, Eigen::MatrixXd values, const BoolArray& pinned) {
  const auto& layout = model.layout;
  ShapeLatent z;
  z.values = std::move(values);
  z.mask.assign(static_cast<std::size_t>(layout.m), 0);
  const auto classes = classify_rows(z, model.codebook, layout);
  const Eigen::VectorXd pad = model.codebook.mean(model.codebook.padding_class());
  for (int r = 0; r < layout.m; ++r) {
    const bool is_pinned = pinned.row(r).any();
    if (classes[static_cast<std::size_t>(r)] == model.codebook.padding_class() && !is_pinned) {
      z.values.row(r).head(layout.q).setZero();
      z.values.row(r).tail(layout.classes()) = pad.transpose();
    } else {
      z.mask[static_cast<std::size_t>(r)] = 1;
    }
  }
  return z;
}

Eigen::MatrixXd initial_noise(const Model& model, Rng& rng, const SampleOptions& options) {
  const auto& layout = model.layout;
  Eigen::MatrixXd x = standard_normal(rng, layout.m, layout.width());
  if (options.semantics_from_padding) {
    const double ab = model.schedule.alpha_bars.back();
    const Eigen::RowVectorXd pad = model.codebook.mean(model.codebook.padding_class()).transpose();
    for (int r = 0; r < layout.m; ++r) {
      x.row(r).tail(layout.classes()) = std::sqrt(ab) * pad + std::sqrt(1.0 - ab) * x.row(r).tail(layout.classes());
    }
  }
  return x;
}

}  // namespace

double DiffusionSchedule::posterior_coef_clean(int t) const {
  const auto k = static_cast<std::size_t>(t);
  return std::sqrt(alpha_bar_prev(t)) * betas[k] / (1.0 - alpha_bars[k]);
}

double DiffusionSchedule::posterior_coef_current(int t) const {
  const auto k = static_cast<std::size_t>(t);
  return std::sqrt(alphas[k]) * (1.0 - alpha_bar_prev(t)) / (1.0 - alpha_bars[k]);
}

double DiffusionSchedule::posterior_variance(int t) const {
  const auto k = static_cast<std::size_t>(t);
  return (1.0 - alpha_bar_prev(t)) * betas[k] / (1.0 - alpha_bars[k]);
}

DiffusionSchedule DiffusionSchedule::cosine(int steps, double offset) {
  if (steps < 1) throw ValidationError("schedule: need at least one step");
  auto f = [&](double tau) {
    const double c = std::cos((tau / steps + offset) / (1.0 + offset) * std::numbers::pi / 2.0);
    return c * c;
  };
  std::vector<double> betas;
  for (int t = 0; t < steps; ++t) betas.push_back(std::min(1.0 - f(t + 1.0) / f(t), 0.999));
  return from_betas(std::move(betas));
}

DiffusionSchedule DiffusionSchedule::from_betas(std::vector<double> betas) {
  DiffusionSchedule s;
  s.betas = std::move(betas);
  double acc = 1.0;
  for (double b : s.betas) {
    s.alphas.push_back(1.0 - b);
    acc *= 1.0 - b;
    s.alpha_bars.push_back(acc);
  }
  s.validate();
  return s;
}

void DiffusionSchedule::validate() const {
  if (betas.empty()) throw ValidationError("schedule: no steps");
  if (alphas.size() != betas.size() || alpha_bars.size() != betas.size()) throw ValidationError("schedule: size mismatch");
  double prev = 1.0;
  for (std::size_t t = 0; t < betas.size(); ++t) {
    if (!(betas[t] > 0.0 && betas[t] < 1.0)) throw ValidationError("schedule: betas must lie in (0,1)");
    if (!(alpha_bars[t] > 0.0 && alpha_bars[t] < prev)) throw ValidationError("schedule: alpha_bar must strictly decrease");
    prev = alpha_bars[t];
  }
}

Eigen::MatrixXd forward_noise(double alpha_bar, const Eigen::MatrixXd& clean, const Eigen::MatrixXd& noise) {
  if (clean.rows() != noise.rows() || clean.cols() != noise.cols()) throw ValidationError("forward_noise: shape mismatch");
  if (!(alpha_bar >= 0.0 && alpha_bar <= 1.0)) throw ValidationError("forward_noise: alpha_bar outside [0,1]");
  return std::sqrt(alpha_bar) * clean + std::sqrt(1.0 - alpha_bar) * noise;
}

Eigen::MatrixXd forward_noise(const DiffusionSchedule& schedule, const Eigen::MatrixXd& clean, int t,
                              const Eigen::MatrixXd& noise) {
  check_step(schedule, t);
  return forward_noise(schedule.alpha_bars[static_cast<std::size_t>(t)], clean, noise);
}

void Model::validate() const {
  if (layout.m < 1 || layout.q < 1) throw ValidationError("model: invalid layout");
  if (static_cast<int>(ssms.size()) != layout.m) throw ConfigMismatchError("model: need one SSM per category");
  if (static_cast<int>(category_names.size()) != layout.m) throw ConfigMismatchError("model: category name count != m");
  for (int j = 0; j < layout.m; ++j) {
    const auto& s = ssms[static_cast<std::size_t>(j)];
    s.validate();
    if (s.category != j) throw ConfigMismatchError("model: SSMs must be ordered by category id");
    if (s.q() != layout.q) throw ConfigMismatchError("model: SSM q differs from latent q");
    if (s.points_per_part != ssms[0].points_per_part) throw ConfigMismatchError("model: SSMs disagree on p");
  }
  if (codebook.class_count() != layout.classes() || codebook.dimension() != layout.classes()) {
    throw ConfigMismatchError("model: codebook does not match m");
  }
  schedule.validate();
  if (denoiser.m != layout.m || denoiser.q != layout.q) throw ConfigMismatchError("model: denoiser m/q mismatch");
  check_params(denoiser, params);
  if (weights.mse < 0 || weights.ce < 0 || weights.kl < 0) throw ValidationError("model: loss weights must be >= 0");
}

Model make_model(std::vector<PartSSM> ssms, std::vector<std::string> category_names, DenoiserConfig denoiser,
                 int diffusion_steps, LossWeights weights, std::uint64_t seed) {
  if (ssms.empty()) throw ValidationError("make_model: no SSMs");
  Model model;
  model.layout = {static_cast<int>(ssms.size()), ssms[0].q()};
  model.category_names = std::move(category_names);
  model.ssms = std::move(ssms);
  model.codebook = LabelCodebook::standard(model.layout.m);
  model.schedule = DiffusionSchedule::cosine(diffusion_steps);
  denoiser.m = model.layout.m;
  denoiser.q = model.layout.q;
  model.denoiser = denoiser;
  model.params = init_denoiser_params(denoiser, seed);
  model.weights = weights;
  model.validate();
  return model;
}

double kl_from_moments(double mu, double var) {
  if (!(var > 0.0)) throw NumericalError("kl: variance must be positive");
  return 0.5 * (mu * mu + var - std::log(var) - 1.0);
}

template <typename T>
LossVars<T> loss_from_predictions(ad::Tape<T>& tape, ad::Var geometry, ad::Var logits, const LossBatch<T>& batch,
                                  const LossWeights& weights) {
  using Mat = ad::Matrix<T>;
  const Eigen::Index rows = batch.clean_geometry.rows(), q = batch.clean_geometry.cols();
  const Eigen::Index classes = tape.value(logits).cols();
  if (rows == 0) throw ValidationError("loss: empty batch");
  if (static_cast<Eigen::Index>(batch.mask.size()) != rows || static_cast<Eigen::Index>(batch.classes.size()) != rows) {
    throw ValidationError("loss: mask/class length mismatch");
  }
  Eigen::Index real = 0;
  for (auto v : batch.mask) real += v != 0;
  if (real == 0) throw ValidationError("loss: batch contains only padding rows");

  Mat row_mask = Mat::Zero(rows, q);
  Mat weights_row = Mat::Zero(1, rows);
  Mat one_hot = Mat::Zero(rows, classes);
  for (Eigen::Index r = 0; r < rows; ++r) {
    const int c = batch.classes[static_cast<std::size_t>(r)];
    if (c < 0 || c >= classes) throw ValidationError("loss: class id out of range");
    one_hot(r, c) = T(1);
    if (batch.mask[static_cast<std::size_t>(r)]) {
      row_mask.row(r).setOnes();
      weights_row(0, r) = T(1) / static_cast<T>(real);
    }
  }

  using namespace ad;
  const Var diff = mul(tape, sub(tape, geometry, tape.constant(batch.clean_geometry)), tape.constant(row_mask));
  const Var mse = scale(tape, sum(tape, square(tape, diff)), T(1) / static_cast<T>(real * q));

  const Var picked = mul(tape, log_softmax_rows(tape, logits), tape.constant(one_hot));
  const Var ce = scale(tape, sum(tape, picked), T(-1) / static_cast<T>(rows));

  const Var w = tape.constant(weights_row);
  const Var mu = matmul(tape, w, geometry);
  const Var centered = sub(tape, geometry, repeat_rows(tape, mu, rows));
  const Var var = matmul(tape, w, square(tape, centered));
  const Var per_dim = add_scalar(tape, sub(tape, add(tape, square(tape, mu), var), log(tape, var)), T(-1));
  const Var kl = scale(tape, mean(tape, per_dim), T(0.5));

  const Var total = add(tape, add(tape, scale(tape, mse, static_cast<T>(weights.mse)), scale(tape, ce, static_cast<T>(weights.ce))),
                        scale(tape, kl, static_cast<T>(weights.kl)));
  return {total, mse, ce, kl};
}

namespace {

// Per-row skip and output coefficients, broadcast over `cols`.
template <typename T>
std::pair<ad::Matrix<T>, ad::Matrix<T>> skip_coefficients(std::span<const double> alpha_bars, Eigen::Index m,
                                                          Eigen::Index rows, Eigen::Index cols) {
  if (static_cast<Eigen::Index>(alpha_bars.size()) * m != rows) {
    throw ValidationError("denoiser: expected one alpha_bar per set");
  }
  ad::Matrix<T> skip(rows, cols), out(rows, cols);
  for (std::size_t i = 0; i < alpha_bars.size(); ++i) {
    const double ab = alpha_bars[i];
    if (!(ab > 0.0 && ab <= 1.0)) throw ValidationError("denoiser: alpha_bar outside (0, 1]");
    const auto r = static_cast<Eigen::Index>(i) * m;
    skip.middleRows(r, m).setConstant(static_cast<T>(std::sqrt(ab)));
    out.middleRows(r, m).setConstant(static_cast<T>(std::sqrt(1.0 - ab)));
  }
  return {skip, out};
}

}  // namespace

template <typename T>
ad::Var clean_geometry_estimate(ad::Tape<T>& tape, ad::Var network_geometry, const ad::Matrix<T>& noisy,
                                std::span<const double> alpha_bars, Eigen::Index m) {
  const auto& f = tape.value(network_geometry);
  const auto [skip, out] = skip_coefficients<T>(alpha_bars, m, f.rows(), f.cols());
  const ad::Matrix<T> carried = skip.cwiseProduct(noisy.leftCols(f.cols()));
  return ad::add(tape, tape.constant(carried), ad::mul(tape, network_geometry, tape.constant(out)));
}

template <typename T>
ad::Matrix<T> clean_geometry_estimate(const ad::Matrix<T>& network_geometry, const ad::Matrix<T>& noisy,
                                      std::span<const double> alpha_bars, Eigen::Index m) {
  const auto [skip, out] = skip_coefficients<T>(alpha_bars, m, network_geometry.rows(), network_geometry.cols());
  return skip.cwiseProduct(noisy.leftCols(network_geometry.cols())) + out.cwiseProduct(network_geometry);
}

template <typename T>
LossVars<T> assemble_loss(ad::Tape<T>& tape, const DenoiserConfig& config, std::span<const ad::Var> params,
                          const LossBatch<T>& batch, const LossWeights& weights) {
  const auto out = denoiser_forward(tape, config, params, batch.noisy, batch.steps, batch.mask);
  const ad::Var geometry = clean_geometry_estimate(tape, out.geometry, batch.noisy, batch.alpha_bars, config.m);
  return loss_from_predictions(tape, geometry, out.logits, batch, weights);
}

template <typename T>
LossBatch<T> make_loss_batch(const Model& model, std::span<const ShapeLatent> clean, std::span<const int> steps,
                             std::span<const Eigen::MatrixXd> noise) {
  std::vector<std::vector<int>> classes;
  for (const auto& z : clean) {
    auto cls = classify_rows(z, model.codebook, model.layout);
    for (std::size_t r = 0; r < cls.size(); ++r) {
      if (!z.mask[r]) cls[r] = model.codebook.padding_class();
    }
    classes.push_back(std::move(cls));
  }
  return build_batch<T>(model, clean, classes, steps, noise);
}

LossComponents training_loss(const Model& model, const LossBatch<float>& batch) {
  ad::Tape<float> tape;
  const auto vars = register_params(tape, model.params, false);
  const auto l = assemble_loss(tape, model.denoiser, vars, batch, model.weights);
  return {tape.value(l.total)(0, 0), tape.value(l.mse)(0, 0), tape.value(l.ce)(0, 0), tape.value(l.kl)(0, 0)};
}

std::vector<TrainRecord> train_denoiser(Model& model, std::span<const ShapeLatent> data, const TrainConfig& config,
                                        const std::function<void(const TrainRecord&)>& on_step) {
  model.validate();
  if (data.empty()) throw ValidationError("train: no training latents");
  if (config.steps < 1 || config.batch_size < 1) throw ValidationError("train: steps and batch size must be positive");
  if (!(config.ema_decay >= 0.0 && config.ema_decay < 1.0)) throw ValidationError("train: ema_decay must be in [0, 1)");

  std::vector<std::vector<int>> classes;
  for (const auto& z : data) {
    model.layout.check(z);
    auto cls = classify_rows(z, model.codebook, model.layout);
    for (std::size_t r = 0; r < cls.size(); ++r) {
      if (!z.mask[r]) cls[r] = model.codebook.padding_class();
    }
    classes.push_back(std::move(cls));
  }

  Rng rng(config.seed);
  Adam adam(AdamConfig{config.learning_rate}, model.params.tensors);
  ParamSet<float> ema = model.params;
  std::vector<TrainRecord> history;
  const auto batch = static_cast<std::size_t>(config.batch_size);
  const int semantics_col = model.layout.q;

  for (int step = 0; step < config.steps; ++step) {
    std::vector<ShapeLatent> clean;
    std::vector<std::vector<int>> cls;
    std::vector<int> steps;
    std::vector<Eigen::MatrixXd> noise;
    for (std::size_t b = 0; b < batch; ++b) {
      const auto idx = static_cast<std::size_t>(rng.index(data.size()));
      ShapeLatent z = data[idx];
      if (config.noisy_semantics) {
        for (int r = 0; r < model.layout.m; ++r) {
          for (int c = 0; c < model.layout.classes(); ++c) z.values(r, semantics_col + c) += model.codebook.sigma() * rng.normal();
        }
      }
      clean.push_back(std::move(z));
      cls.push_back(classes[idx]);
      steps.push_back(static_cast<int>(rng.index(static_cast<std::uint64_t>(model.schedule.steps()))));
      noise.push_back(standard_normal(rng, model.layout.m, model.layout.width()));
    }
    const auto lb = build_batch<float>(model, clean, cls, steps, noise);

    ad::Tape<float> tape;
    const auto vars = register_params(tape, model.params, true);
    const auto loss = assemble_loss(tape, model.denoiser, vars, lb, model.weights);
    tape.backward(loss.total);
    std::vector<ad::Matrix<float>> grads;
    grads.reserve(vars.size());
    for (const auto& v : vars) grads.push_back(tape.grad(v));
    const double norm = clip_grad_norm(grads, config.grad_clip);
    if (!std::isfinite(norm)) throw NumericalError("train: non-finite gradient norm");

    double lr_scale = 1.0;
    if (step < config.warmup) {
      lr_scale = static_cast<double>(step + 1) / config.warmup;
    } else {
      const double progress = static_cast<double>(step - config.warmup) / std::max(1, config.steps - config.warmup);
      lr_scale = 0.1 + 0.9 * 0.5 * (1.0 + std::cos(std::numbers::pi * progress));
    }
    adam.step(model.params.tensors, grads, lr_scale);
    // Bias toward the live weights early on, when the average is mostly init.
    const auto decay = static_cast<float>(std::min(config.ema_decay, (1.0 + step) / (10.0 + step)));
    for (std::size_t k = 0; k < ema.tensors.size(); ++k) {
      ema.tensors[k] = decay * ema.tensors[k] + (1.0f - decay) * model.params.tensors[k];
    }

    TrainRecord rec{step,
                    {tape.value(loss.total)(0, 0), tape.value(loss.mse)(0, 0), tape.value(loss.ce)(0, 0),
                     tape.value(loss.kl)(0, 0)},
                    norm,
                    config.learning_rate * lr_scale};
    if (on_step) on_step(rec);
    history.push_back(rec);
  }
  if (!model.params.all_finite()) throw NumericalError("train: parameters diverged");
  if (config.ema_decay > 0.0) model.params = std::move(ema);
  return history;
}

std::vector<ShapeLatent> sample_latents(const Model& model, int count, std::uint64_t seed, const SampleOptions& options) {
  return complete_latents(model, {}, count, seed, options);
}

ShapeLatent sample(const Model& model, std::uint64_t seed, const SampleOptions& options) {
  return sample_latents(model, 1, seed, options).front();
}

std::vector<ShapeLatent> complete_latents(const Model& model, std::span<const FixedRow> fixed, int count,
                                          std::uint64_t seed, const SampleOptions& options) {
  const auto& layout = model.layout;
  if (count < 1) throw ValidationError("sample: count must be positive");

  Eigen::MatrixXd known = Eigen::MatrixXd::Zero(layout.m, layout.width());
  BoolArray pinned = BoolArray::Constant(layout.m, layout.width(), false);
  std::set<int> rows, cats;
  for (const auto& f : fixed) {
    if (f.row < 0 || f.row >= layout.m) throw ValidationError("complete: fixed row " + std::to_string(f.row) + " >= m");
    if (f.category < 0 || f.category >= layout.m) throw ValidationError("complete: fixed category out of range");
    if (f.geometry.size() != layout.q) throw ValidationError("complete: fixed latent must have q dims");
    if (!f.geometry.allFinite()) throw ValidationError("complete: fixed latent is not finite");
    if (!rows.insert(f.row).second) throw ValidationError("complete: row " + std::to_string(f.row) + " fixed twice");
    if (!cats.insert(f.category).second) {
      throw ValidationError("complete: conflicting duplicate fixed category " + std::to_string(f.category));
    }
    known.row(f.row).head(layout.q) = f.geometry.transpose();
    known.row(f.row).tail(layout.classes()) = model.codebook.mean(f.category).transpose();
    pinned.row(f.row).setConstant(true);
  }

  ChainState st;
  Rng root(seed);
  for (int i = 0; i < count; ++i) {
    Rng rng = root.fork(static_cast<std::uint64_t>(i));
    st.x.push_back(initial_noise(model, rng, options));
    st.rngs.push_back(std::move(rng));
    st.known.push_back(known);
    st.pinned.push_back(pinned);
  }
  st.mask.assign(static_cast<std::size_t>(count * layout.m), 1);
  if (options.completion_resamples < 1) throw ValidationError("complete: resample count must be positive");
  run_chain(model, st, model.schedule.steps() - 1, fixed.empty() ? 1 : options.completion_resamples);

  std::vector<ShapeLatent> out;
  for (int i = 0; i < count; ++i) out.push_back(finalize(model, std::move(st.x[static_cast<std::size_t>(i)]), pinned));
  return out;
}

ShapeLatent refine_dims(const Model& model, const ShapeLatent& shape, int target_row, std::span<const int> dims,
                        int t_start, std::uint64_t seed) {
  const auto& layout = model.layout;
  layout.check(shape);
  if (target_row < 0 || target_row >= layout.m) throw ValidationError("refine: target row out of range");
  if (dims.empty()) throw ValidationError("refine: no dims selected");
  if (t_start <= 0 || t_start >= model.schedule.steps()) throw ValidationError("refine: t_start must lie in (0, T)");

  BoolArray pinned = BoolArray::Constant(layout.m, layout.width(), true);
  for (int d : dims) {
    if (d < 0 || d >= layout.q) throw ValidationError("refine: dim " + std::to_string(d) + " outside [0, q)");
    if (!pinned(target_row, d)) throw ValidationError("refine: duplicate dim " + std::to_string(d));
    pinned(target_row, d) = false;
  }

  ChainState st;
  Rng rng(seed);
  Eigen::MatrixXd x = shape.values;
  const double ab = model.schedule.alpha_bars[static_cast<std::size_t>(t_start)];
  for (int d : dims) x(target_row, d) = std::sqrt(ab) * shape.values(target_row, d) + std::sqrt(1.0 - ab) * rng.normal();
  st.x.push_back(std::move(x));
  st.known.push_back(shape.values);
  st.pinned.push_back(std::move(pinned));
  st.rngs.push_back(std::move(rng));
  st.mask = shape.mask;
  run_chain(model, st, t_start);

  ShapeLatent out = shape;
  out.values = std::move(st.x.front());
  return out;
}

std::vector<ShapeLatent> denoise_from(const Model& model, std::span<const ShapeLatent> noisy, int t_start,
                                      std::uint64_t seed) {
  check_step(model.schedule, t_start);
  const auto& layout = model.layout;
  ChainState st;
  Rng root(seed);
  const BoolArray none = BoolArray::Constant(layout.m, layout.width(), false);
  for (std::size_t i = 0; i < noisy.size(); ++i) {
    layout.check(noisy[i]);
    st.x.push_back(noisy[i].values);
    st.known.push_back(Eigen::MatrixXd::Zero(layout.m, layout.width()));
    st.pinned.push_back(none);
    st.rngs.push_back(root.fork(i));
    st.mask.insert(st.mask.end(), layout.m, 1);
  }
  run_chain(model, st, t_start);
  std::vector<ShapeLatent> out;
  for (auto& x : st.x) out.push_back(finalize(model, std::move(x), none));
  return out;
}

std::vector<int> leading_half_dims(int q) {
  std::vector<int> dims;
  for (int d = 0; d < std::max(1, q / 2); ++d) dims.push_back(d);
  return dims;
}

#define SHAPESET_INSTANTIATE(T)                                                                                      \
  template LossVars<T> loss_from_predictions<T>(ad::Tape<T>&, ad::Var, ad::Var, const LossBatch<T>&,                  \
                                                const LossWeights&);                                                 \
  template ad::Var clean_geometry_estimate<T>(ad::Tape<T>&, ad::Var, const ad::Matrix<T>&, std::span<const double>,   \
                                              Eigen::Index);                                                        \
  template ad::Matrix<T> clean_geometry_estimate<T>(const ad::Matrix<T>&, const ad::Matrix<T>&,                       \
                                                    std::span<const double>, Eigen::Index);                           \
  template LossVars<T> assemble_loss<T>(ad::Tape<T>&, const DenoiserConfig&, std::span<const ad::Var>,               \
                                        const LossBatch<T>&, const LossWeights&);                                    \
  template LossBatch<T> make_loss_batch<T>(const Model&, std::span<const ShapeLatent>, std::span<const int>,          \
                                           std::span<const Eigen::MatrixXd>);

SHAPESET_INSTANTIATE(float)
SHAPESET_INSTANTIATE(double)

#undef SHAPESET_INSTANTIATE

}  // namespace shapeset
