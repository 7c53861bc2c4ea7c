#pragma once

#include <Eigen/Dense>
#include <cstdint>
#include <functional>
#include <span>
#include <string>
#include <vector>

#include "shapeset/autodiff.hpp"
#include "shapeset/denoiser.hpp"
#include "shapeset/latent.hpp"
#include "shapeset/semantics.hpp"
#include "shapeset/ssm.hpp"

namespace shapeset {

/// Noise schedule indexed t = 0..T-1. alpha_bar[t] = prod_{s<=t} (1 - beta[s]);
/// the clean sample sits at the virtual step -1 where alpha_bar = 1.
struct DiffusionSchedule {
  std::vector<double> betas;
  std::vector<double> alphas;
  std::vector<double> alpha_bars;

  int steps() const { return static_cast<int>(betas.size()); }
  double alpha_bar_prev(int t) const { return t == 0 ? 1.0 : alpha_bars[static_cast<std::size_t>(t - 1)]; }

  /// Coefficients of the Gaussian posterior q(x_{t-1} | x_t, x_0).
  double posterior_coef_clean(int t) const;
  double posterior_coef_current(int t) const;
  double posterior_variance(int t) const;

  /// Cosine alpha_bar schedule with offset s; betas capped at 0.999.
  static DiffusionSchedule cosine(int steps, double offset = 0.008);
  static DiffusionSchedule from_betas(std::vector<double> betas);

  void validate() const;

  friend bool operator==(const DiffusionSchedule&, const DiffusionSchedule&) = default;
};

/// sqrt(alpha_bar) z0 + sqrt(1 - alpha_bar) eps
Eigen::MatrixXd forward_noise(double alpha_bar, const Eigen::MatrixXd& clean, const Eigen::MatrixXd& noise);
Eigen::MatrixXd forward_noise(const DiffusionSchedule& schedule, const Eigen::MatrixXd& clean, int t,
                              const Eigen::MatrixXd& noise);

struct LossWeights {
  double mse = 1.0;
  double ce = 0.1;
  double kl = 0.001;

  friend bool operator==(const LossWeights&, const LossWeights&) = default;
};

/// Everything needed to generate, complete and decode shapes.
struct Model {
  LatentLayout layout;
  std::vector<std::string> category_names;
  std::vector<PartSSM> ssms;  // one per category, indexed by id
  LabelCodebook codebook;
  DiffusionSchedule schedule;
  DenoiserConfig denoiser;
  ParamSet<float> params;
  LossWeights weights;

  void validate() const;

  friend bool operator==(const Model&, const Model&) = default;
};

/// Fresh model: denoiser sized for the SSMs' shared q, initialized from `seed`.
Model make_model(std::vector<PartSSM> ssms, std::vector<std::string> category_names, DenoiserConfig denoiser,
                 int diffusion_steps, LossWeights weights, std::uint64_t seed);

/// 1/2 (mu^2 + var - ln var - 1)
double kl_from_moments(double mu, double var);

template <typename T>
struct LossBatch {
  ad::Matrix<T> noisy;            // (N*m) x (q+m+1), Z_t
  ad::Matrix<T> clean_geometry;   // (N*m) x q
  std::vector<int> classes;       // per row; padding rows carry the padding class
  std::vector<std::uint8_t> mask; // per row, nonzero = real part
  std::vector<int> steps;         // per set
  std::vector<double> alpha_bars; // per set, alpha_bar at its step
};

template <typename T>
struct LossVars {
  ad::Var total;
  ad::Var mse;
  ad::Var ce;
  ad::Var kl;
};

/// Weighted objective from denoiser predictions. MSE and KL run over real rows
/// only; cross-entropy over all rows. KL uses the per-dimension mean and
/// (population) variance of predicted real-row geometry, averaged over dims.
template <typename T>
LossVars<T> loss_from_predictions(ad::Tape<T>& tape, ad::Var geometry, ad::Var logits, const LossBatch<T>& batch,
                                  const LossWeights& weights);

/// Clean-geometry estimate sqrt(ab) x_t + sqrt(1 - ab) F from the network
/// output F, with ab = alpha_bar per set. The skip term carries the signal
/// already present in x_t, so F stays unit-scale at every noise level.
template <typename T>
ad::Var clean_geometry_estimate(ad::Tape<T>& tape, ad::Var network_geometry, const ad::Matrix<T>& noisy,
                                std::span<const double> alpha_bars, Eigen::Index m);
template <typename T>
ad::Matrix<T> clean_geometry_estimate(const ad::Matrix<T>& network_geometry, const ad::Matrix<T>& noisy,
                                      std::span<const double> alpha_bars, Eigen::Index m);

template <typename T>
LossVars<T> assemble_loss(ad::Tape<T>& tape, const DenoiserConfig& config, std::span<const ad::Var> params,
                          const LossBatch<T>& batch, const LossWeights& weights);

/// Noises clean latents at the given steps with the given per-set noise.
template <typename T>
LossBatch<T> make_loss_batch(const Model& model, std::span<const ShapeLatent> clean, std::span<const int> steps,
                             std::span<const Eigen::MatrixXd> noise);

struct LossComponents {
  double total = 0.0;
  double mse = 0.0;
  double ce = 0.0;
  double kl = 0.0;
};

/// Forward-only loss on a batch (for reporting and tests).
LossComponents training_loss(const Model& model, const LossBatch<float>& batch);

struct TrainConfig {
  int steps = 3000;
  int batch_size = 64;
  double learning_rate = 1e-3;
  int warmup = 100;
  double grad_clip = 1.0;
  bool noisy_semantics = true;
  /// Exponential moving average of the weights, copied into the model at the
  /// end; 0 keeps the raw final weights.
  double ema_decay = 0.999;
  std::uint64_t seed = 0;
};

struct TrainRecord {
  int step = 0;
  LossComponents loss;
  double grad_norm = 0.0;
  double learning_rate = 0.0;
};

/// Adam on uniformly sampled steps; warmup then cosine decay to 10% of the
/// base rate. `on_step` (optional) sees every record; its losses are those of
/// the raw weights being optimized.
std::vector<TrainRecord> train_denoiser(Model& model, std::span<const ShapeLatent> data, const TrainConfig& config,
                                        const std::function<void(const TrainRecord&)>& on_step = {});

struct SampleOptions {
  /// Start semantics from the noised padding embedding (true) or pure noise.
  bool semantics_from_padding = true;
  /// Passes per reverse step during guided completion (1 = plain projection).
  /// Extra passes re-noise t-1 back to t and redo the step, which keeps free
  /// rows from duplicating a pinned part.
  int completion_resamples = 5;
};

/// `count` independent samples; sample i draws from stream i of `seed`, so
/// the result for a given (seed, i) does not depend on other draws.
std::vector<ShapeLatent> sample_latents(const Model& model, int count, std::uint64_t seed,
                                        const SampleOptions& options = {});
ShapeLatent sample(const Model& model, std::uint64_t seed, const SampleOptions& options = {});

/// A clean part latent pinned to a row during completion.
struct FixedRow {
  int row = 0;
  GeometryLatent geometry;
  int category = 0;
};

/// Guided completion: pinned rows are replaced by their forward-noised clean
/// values at every step and restored exactly at the end.
std::vector<ShapeLatent> complete_latents(const Model& model, std::span<const FixedRow> fixed, int count,
                                          std::uint64_t seed, const SampleOptions& options = {});

/// Re-noises `dims` of `target_row` to level t_start and denoises back with
/// every other entry projected; untouched entries are returned bit-identical.
ShapeLatent refine_dims(const Model& model, const ShapeLatent& shape, int target_row, std::span<const int> dims,
                        int t_start, std::uint64_t seed);

/// Resamples every entry starting from x_t (used for chain-consistency checks).
std::vector<ShapeLatent> denoise_from(const Model& model, std::span<const ShapeLatent> noisy, int t_start,
                                      std::uint64_t seed);

/// First half of the geometry dims, the default refinement target.
std::vector<int> leading_half_dims(int q);

}  // namespace shapeset
