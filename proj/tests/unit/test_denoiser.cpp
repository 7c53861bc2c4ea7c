#include <doctest.h>

#include <algorithm>
#include <random>

#include "shapeset/diffusion.hpp"
#include "shapeset/error.hpp"

using namespace shapeset;
using Md = ad::Matrix<double>;

namespace {

DenoiserConfig small_config(bool attend_padding = true) {
  DenoiserConfig c;
  c.m = 4;
  c.q = 6;
  c.width = 16;
  c.blocks = 2;
  c.heads = 4;
  c.time_dim = 8;
  c.ffn_mult = 2;
  c.attend_padding = attend_padding;
  return c;
}

Md random_tokens(std::mt19937_64& gen, Eigen::Index rows, Eigen::Index cols) {
  std::normal_distribution<double> nd;
  Md m(rows, cols);
  for (Eigen::Index i = 0; i < m.size(); ++i) m.data()[i] = nd(gen);
  return m;
}

// Random batch of two sets with mixed real and padding rows.
LossBatch<double> random_batch(const DenoiserConfig& c, std::mt19937_64& gen) {
  LossBatch<double> b;
  b.noisy = random_tokens(gen, 2 * c.m, c.token_dim());
  b.clean_geometry = random_tokens(gen, 2 * c.m, c.q);
  b.mask = {1, 1, 1, 0, 1, 0, 1, 0};
  b.classes = {0, 1, 2, 4, 3, 4, 1, 4};
  b.steps = {5, 80};
  b.alpha_bars = {0.9, 0.3};
  for (std::size_t r = 0; r < b.mask.size(); ++r) {
    if (!b.mask[r]) b.clean_geometry.row(static_cast<Eigen::Index>(r)).setZero();
  }
  return b;
}

double loss_value(const DenoiserConfig& c, const ParamSet<double>& p, const LossBatch<double>& b) {
  ad::Tape<double> tape;
  const auto vars = register_params(tape, p, false);
  return tape.value(assemble_loss(tape, c, vars, b, LossWeights{1.0, 0.1, 0.01}).total)(0, 0);
}

}  // namespace

TEST_CASE("denoiser output shapes and layout") {
  const auto c = small_config();
  const auto p = init_denoiser_params(c, 1);
  check_params(c, p);
  CHECK(p == init_denoiser_params(c, 1));
  CHECK_FALSE(p == init_denoiser_params(c, 2));
  std::mt19937_64 gen(1);
  for (int sets : {1, 3}) {
    const auto tokens = random_tokens(gen, sets * c.m, c.token_dim()).cast<float>().eval();
    std::vector<int> steps(static_cast<std::size_t>(sets), 10);
    std::vector<std::uint8_t> mask(static_cast<std::size_t>(sets * c.m), 1);
    const auto [geo, logits] = denoise<float>(c, p, tokens, steps, mask);
    CHECK(geo.rows() == sets * c.m);
    CHECK(geo.cols() == c.q);
    CHECK(logits.rows() == sets * c.m);
    CHECK(logits.cols() == c.m + 1);
    CHECK(logits.allFinite());
  }
  const Md bad = Md::Zero(c.m, c.token_dim() + 1);
  const std::vector<int> one{0};
  const std::vector<std::uint8_t> mask(4, 1);
  CHECK_THROWS_AS(denoise<double>(c, p.cast<double>(), bad, one, mask), ValidationError);
  auto broken = p;
  broken.tensors.pop_back();
  CHECK_THROWS_AS(check_params(c, broken), ConfigMismatchError);
}

TEST_CASE("denoiser is permutation equivariant over tokens") {
  for (bool attend : {true, false}) {
    const auto c = small_config(attend);
    const auto p = init_denoiser_params(c, 3).cast<double>();
    std::mt19937_64 gen(4);
    const Md tokens = random_tokens(gen, c.m, c.token_dim());
    const std::vector<std::uint8_t> mask{1, 0, 1, 1};
    const std::vector<int> steps{42};
    const auto [geo, logits] = denoise<double>(c, p, tokens, steps, mask);
    std::vector<int> perm{0, 1, 2, 3};
    for (int trial = 0; trial < 10; ++trial) {
      std::shuffle(perm.begin(), perm.end(), gen);
      Md pt(c.m, c.token_dim());
      std::vector<std::uint8_t> pm(4);
      for (int i = 0; i < c.m; ++i) {
        pt.row(i) = tokens.row(perm[static_cast<std::size_t>(i)]);
        pm[static_cast<std::size_t>(i)] = mask[static_cast<std::size_t>(perm[static_cast<std::size_t>(i)])];
      }
      const auto [g2, l2] = denoise<double>(c, p, pt, steps, pm);
      for (int i = 0; i < c.m; ++i) {
        CHECK((g2.row(i) - geo.row(perm[static_cast<std::size_t>(i)])).cwiseAbs().maxCoeff() < 1e-12);
        CHECK((l2.row(i) - logits.row(perm[static_cast<std::size_t>(i)])).cwiseAbs().maxCoeff() < 1e-12);
      }
    }
  }
}

TEST_CASE("time conditioning changes the output") {
  const auto c = small_config();
  const auto p = init_denoiser_params(c, 5);
  std::mt19937_64 gen(6);
  const auto tokens = random_tokens(gen, c.m, c.token_dim()).cast<float>().eval();
  const std::vector<std::uint8_t> mask(4, 1);
  const std::vector<int> t1{3}, t2{150};
  const auto a = denoise<float>(c, p, tokens, t1, mask);
  const auto b = denoise<float>(c, p, tokens, t2, mask);
  CHECK((a.first - b.first).cwiseAbs().maxCoeff() > 1e-6);
  CHECK((a.second - b.second).cwiseAbs().maxCoeff() > 1e-6);
}

TEST_CASE("every parameter tensor receives gradient") {
  for (bool attend : {true, false}) {
    const auto c = small_config(attend);
    const auto p = init_denoiser_params(c, 7).cast<double>();
    std::mt19937_64 gen(8);
    const auto batch = random_batch(c, gen);
    ad::Tape<double> tape;
    const auto vars = register_params(tape, p, true);
    tape.backward(assemble_loss(tape, c, vars, batch, LossWeights{1.0, 0.1, 0.01}).total);
    const auto layout = denoiser_layout(c);
    for (std::size_t i = 0; i < vars.size(); ++i) {
      CAPTURE(layout[i].name);
      CHECK(tape.grad(vars[i]).norm() > 0.0);
    }
  }
}

TEST_CASE("assembled loss gradient matches central differences on 50 parameters") {
  const auto c = small_config();
  auto p = init_denoiser_params(c, 9).cast<double>();
  std::mt19937_64 gen(10);
  const auto batch = random_batch(c, gen);

  ad::Tape<double> tape;
  const auto vars = register_params(tape, p, true);
  tape.backward(assemble_loss(tape, c, vars, batch, LossWeights{1.0, 0.1, 0.01}).total);
  std::vector<Md> grads;
  for (const auto& v : vars) grads.push_back(tape.grad(v));

  std::uniform_int_distribution<std::size_t> pick(0, p.size() - 1);
  const double h = 1e-5;
  double worst = 0.0;
  for (int k = 0; k < 50; ++k) {
    const std::size_t i = pick(gen);
    const std::size_t tensor = p.tensor_of(i);
    std::size_t offset = i;
    for (std::size_t j = 0; j < tensor; ++j) offset -= static_cast<std::size_t>(p.tensors[j].size());
    const double analytic = grads[tensor].data()[offset];
    const double keep = p.flat(i);
    p.flat(i) = keep + h;
    const double up = loss_value(c, p, batch);
    p.flat(i) = keep - h;
    const double down = loss_value(c, p, batch);
    p.flat(i) = keep;
    const double numeric = (up - down) / (2 * h);
    const double rel = std::abs(analytic - numeric) / std::max({std::abs(analytic), std::abs(numeric), 1e-6});
    worst = std::max(worst, rel);
  }
  MESSAGE("worst relative gradient error: " << worst);
  CHECK(worst < 1e-4);
}
