#include <doctest.h>

#include <functional>
#include <limits>
#include <random>

#include "shapeset/autodiff.hpp"
#include "shapeset/error.hpp"

using namespace shapeset;
using namespace shapeset::ad;
using Md = Matrix<double>;

namespace {

Md random_matrix(std::mt19937_64& gen, Eigen::Index r, Eigen::Index c, double lo = -1.0, double hi = 1.0) {
  std::uniform_real_distribution<double> u(lo, hi);
  Md m(r, c);
  for (Eigen::Index i = 0; i < m.size(); ++i) m.data()[i] = u(gen);
  return m;
}

using Op = std::function<Var(Tape<double>&, const std::vector<Var>&)>;

// Scalar loss sum(op(inputs) .* W) with a fixed random W so every output
// entry gets a distinct upstream gradient.
double project(const std::vector<Md>& inputs, const Op& op, const Md* weights, std::vector<Md>* grads) {
  Tape<double> tape;
  std::vector<Var> vars;
  for (const auto& x : inputs) vars.push_back(tape.variable(x));
  const Var out = op(tape, vars);
  const Var w = tape.constant(weights ? *weights : Md::Ones(tape.value(out).rows(), tape.value(out).cols()));
  const Var loss = sum(tape, mul(tape, out, w));
  if (grads) {
    tape.backward(loss);
    grads->clear();
    for (const auto& v : vars) grads->push_back(tape.grad(v));
  }
  return tape.value(loss)(0, 0);
}

// Worst relative error of the analytic gradient against central differences.
double gradient_error(std::vector<Md> inputs, const Op& op, std::mt19937_64& gen) {
  Tape<double> probe;
  std::vector<Var> pv;
  for (const auto& x : inputs) pv.push_back(probe.constant(x));
  const Md& shape = probe.value(op(probe, pv));
  const Md weights = random_matrix(gen, shape.rows(), shape.cols());

  std::vector<Md> analytic;
  project(inputs, op, &weights, &analytic);
  const double h = 1e-4;
  double worst = 0.0;
  for (std::size_t k = 0; k < inputs.size(); ++k) {
    Md numeric(inputs[k].rows(), inputs[k].cols());
    for (Eigen::Index i = 0; i < inputs[k].size(); ++i) {
      const double keep = inputs[k].data()[i];
      inputs[k].data()[i] = keep + h;
      const double up = project(inputs, op, &weights, nullptr);
      inputs[k].data()[i] = keep - h;
      const double down = project(inputs, op, &weights, nullptr);
      inputs[k].data()[i] = keep;
      numeric.data()[i] = (up - down) / (2 * h);
    }
    const double scale = std::max(numeric.norm(), 1e-8);
    worst = std::max(worst, (analytic[k] - numeric).norm() / scale);
  }
  return worst;
}

}  // namespace

TEST_CASE("primitive gradients match central differences") {
  std::mt19937_64 gen(5);
  auto r = [&](Eigen::Index a, Eigen::Index b) { return random_matrix(gen, a, b); };
  auto pos = [&](Eigen::Index a, Eigen::Index b) { return random_matrix(gen, a, b, 0.5, 2.0); };
  // ReLU inputs kept away from the kink.
  Md away = r(3, 4);
  for (Eigen::Index i = 0; i < away.size(); ++i) away.data()[i] += away.data()[i] > 0 ? 0.1 : -0.1;

  struct Case {
    const char* name;
    std::vector<Md> inputs;
    Op op;
  };
  const std::vector<Case> cases = {
      {"matmul", {r(3, 4), r(4, 2)}, [](auto& t, const auto& v) { return matmul(t, v[0], v[1]); }},
      {"add", {r(3, 4), r(3, 4)}, [](auto& t, const auto& v) { return add(t, v[0], v[1]); }},
      {"sub", {r(3, 4), r(3, 4)}, [](auto& t, const auto& v) { return sub(t, v[0], v[1]); }},
      {"mul", {r(3, 4), r(3, 4)}, [](auto& t, const auto& v) { return mul(t, v[0], v[1]); }},
      {"add_row", {r(3, 4), r(1, 4)}, [](auto& t, const auto& v) { return add_row(t, v[0], v[1]); }},
      {"scale", {r(3, 4)}, [](auto& t, const auto& v) { return scale(t, v[0], -1.7); }},
      {"add_scalar", {r(3, 4)}, [](auto& t, const auto& v) { return add_scalar(t, v[0], 0.3); }},
      {"square", {r(3, 4)}, [](auto& t, const auto& v) { return square(t, v[0]); }},
      {"log", {pos(3, 4)}, [](auto& t, const auto& v) { return log(t, v[0]); }},
      {"gelu", {r(3, 4)}, [](auto& t, const auto& v) { return gelu(t, v[0]); }},
      {"relu", {away}, [](auto& t, const auto& v) { return relu(t, v[0]); }},
      {"softmax_rows", {r(3, 5)}, [](auto& t, const auto& v) { return softmax_rows(t, v[0]); }},
      {"log_softmax_rows", {r(3, 5)}, [](auto& t, const auto& v) { return log_softmax_rows(t, v[0]); }},
      {"layer_norm_rows", {r(3, 6)}, [](auto& t, const auto& v) { return layer_norm_rows(t, v[0]); }},
      {"concat_cols", {r(3, 2), r(3, 3)}, [](auto& t, const auto& v) { return concat_cols(t, v[0], v[1]); }},
      {"slice_cols", {r(3, 6)}, [](auto& t, const auto& v) { return slice_cols(t, v[0], 2, 3); }},
      {"repeat_rows", {r(2, 3)}, [](auto& t, const auto& v) { return repeat_rows(t, v[0], 3); }},
      {"sum", {r(3, 4)}, [](auto& t, const auto& v) { return sum(t, v[0]); }},
      {"mean", {r(3, 4)}, [](auto& t, const auto& v) { return mean(t, v[0]); }},
      {"linear", {r(3, 4), r(4, 2), r(1, 2)}, [](auto& t, const auto& v) { return linear(t, v[0], v[1], v[2]); }},
      {"grouped_attention", {r(6, 4), r(6, 4), r(6, 4)},
       [](auto& t, const auto& v) { return grouped_attention(t, v[0], v[1], v[2], 3, 2); }},
      {"grouped_attention masked", {r(6, 4), r(6, 4), r(6, 4)},
       [](auto& t, const auto& v) {
         static const std::vector<std::uint8_t> mask{1, 1, 0, 1, 0, 0};
         return grouped_attention(t, v[0], v[1], v[2], 3, 2, mask);
       }},
  };
  for (const auto& c : cases) {
    CAPTURE(c.name);
    CHECK(gradient_error(c.inputs, c.op, gen) < 1e-5);
  }
}

TEST_CASE("identities") {
  std::mt19937_64 gen(6);
  const Md a = random_matrix(gen, 3, 3);
  Tape<double> t;
  const Var i = t.constant(Md::Identity(3, 3));
  const Var va = t.variable(a);
  const Var prod = matmul(t, i, va);
  CHECK(t.value(prod) == a);
  const Md up = random_matrix(gen, 3, 3);
  t.backward(sum(t, mul(t, prod, t.constant(up))));
  CHECK((t.grad(va) - up).cwiseAbs().maxCoeff() < 1e-15);

  Tape<double> s;
  const Var c = s.variable(Md::Constant(2, 4, 0.7));
  const Var sm = softmax_rows(s, c);
  CHECK((s.value(sm).array() - 0.25).abs().maxCoeff() < 1e-15);
  const Var x = s.variable(random_matrix(gen, 2, 4));
  s.backward(sum(s, softmax_rows(s, x)));
  CHECK(s.grad(x).cwiseAbs().maxCoeff() < 1e-15);
}

TEST_CASE("3-op chain equals the product of primitive Jacobians") {
  // f(x) = sum((3x + 1)^2) -> df/dx = 2 (3x + 1) * 3
  Md x(1, 3);
  x << -1.0, 0.5, 2.0;
  Tape<double> t;
  const Var vx = t.variable(x);
  const Var f = sum(t, square(t, add_scalar(t, scale(t, vx, 3.0), 1.0)));
  t.backward(f);
  const Md expected = (6.0 * (3.0 * x.array() + 1.0)).matrix();
  CHECK((t.grad(vx) - expected).cwiseAbs().maxCoeff() < 1e-12);
  CHECK(t.value(f)(0, 0) == doctest::Approx(4.0 + 6.25 + 49.0));
}

TEST_CASE("non-finite and shape guards") {
  Tape<double> t;
  const Var neg = t.variable(Md::Constant(1, 2, -1.0));
  CHECK_THROWS_AS(log(t, neg), NumericalError);
  const Var big = t.variable(Md::Constant(1, 1, 1e300));
  CHECK_THROWS_AS(square(t, big), NumericalError);
  CHECK_THROWS_AS(scale(t, neg, std::numeric_limits<double>::infinity()), NumericalError);
  const Var a = t.variable(Md::Zero(2, 3));
  CHECK_THROWS_AS(matmul(t, a, a), ValidationError);
  CHECK_THROWS_AS(add(t, a, t.variable(Md::Zero(3, 2))), ValidationError);
  CHECK_THROWS_AS(t.backward(a), ValidationError);
}

TEST_CASE("float tape agrees with the double tape") {
  std::mt19937_64 gen(8);
  const Md a = random_matrix(gen, 4, 6);
  Tape<double> td;
  Tape<float> tf;
  const Var xd = td.variable(a);
  const Var xf = tf.variable(a.cast<float>());
  td.backward(sum(td, gelu(td, layer_norm_rows(td, xd))));
  tf.backward(sum(tf, gelu(tf, layer_norm_rows(tf, xf))));
  CHECK((tf.grad(xf).cast<double>() - td.grad(xd)).cwiseAbs().maxCoeff() < 1e-4);
}
