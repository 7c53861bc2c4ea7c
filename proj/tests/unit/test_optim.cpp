#include <doctest.h>

#include <cmath>

#include "shapeset/error.hpp"
#include "shapeset/optim.hpp"

using namespace shapeset;
using Mat = ad::Matrix<float>;

TEST_CASE("adam: zero gradient is a fixed point") {
  std::vector<Mat> params{Mat::Constant(2, 3, 0.5f)};
  Adam adam(AdamConfig{}, params);
  const auto before = params;
  for (int i = 0; i < 5; ++i) adam.step(params, {Mat::Zero(2, 3)});
  CHECK(params == before);
  CHECK(adam.step_count() == 5);
}

TEST_CASE("adam: first step by hand") {
  AdamConfig cfg;
  cfg.learning_rate = 1e-3;
  std::vector<Mat> params{Mat::Zero(1, 1)};
  Adam adam(cfg, params);
  adam.step(params, {Mat::Ones(1, 1)});
  // m_hat = 1, v_hat = 1 after bias correction.
  const double expected = -cfg.learning_rate / (1.0 + cfg.epsilon);
  CHECK(std::abs(params[0](0, 0) - expected) < 1e-9);
}

TEST_CASE("adam: constant gradient moves by the learning rate per step") {
  AdamConfig cfg;
  cfg.learning_rate = 1e-2;
  std::vector<Mat> params{Mat::Zero(1, 2)};
  Adam adam(cfg, params);
  Mat g(1, 2);
  g << 3.0f, -0.25f;
  float prev0 = 0.0f, prev1 = 0.0f;
  for (int i = 0; i < 2000; ++i) {
    prev0 = params[0](0, 0);
    prev1 = params[0](0, 1);
    adam.step(params, {g});
  }
  CHECK(std::abs((prev0 - params[0](0, 0)) - cfg.learning_rate) < 1e-5);
  CHECK(std::abs((params[0](0, 1) - prev1) - cfg.learning_rate) < 1e-5);
}

TEST_CASE("adam: learning-rate scale and shape errors") {
  std::vector<Mat> a{Mat::Zero(1, 1)}, b{Mat::Zero(1, 1)};
  Adam x(AdamConfig{}, a), y(AdamConfig{}, b);
  x.step(a, {Mat::Ones(1, 1)}, 1.0);
  y.step(b, {Mat::Ones(1, 1)}, 0.5);
  CHECK(std::abs(b[0](0, 0) - 0.5f * a[0](0, 0)) < 1e-9);
  CHECK_THROWS_AS(x.step(a, {Mat::Ones(2, 1)}), ValidationError);
  CHECK_THROWS_AS(x.step(a, {}), ValidationError);
}

TEST_CASE("clip_grad_norm") {
  std::vector<Mat> g{Mat::Constant(1, 1, 3.0f), Mat::Constant(1, 1, 4.0f)};
  CHECK(clip_grad_norm(g, 1.0) == doctest::Approx(5.0));
  CHECK(g[0](0, 0) == doctest::Approx(0.6));
  CHECK(g[1](0, 0) == doctest::Approx(0.8));
  std::vector<Mat> small{Mat::Constant(1, 1, 0.5f)};
  CHECK(clip_grad_norm(small, 1.0) == doctest::Approx(0.5));
  CHECK(small[0](0, 0) == 0.5f);
}
