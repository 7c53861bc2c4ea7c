#include <doctest.h>

#include <random>

#include "oracles.hpp"
#include "shapeset/error.hpp"
#include "shapeset/ssm.hpp"
#include "shapeset/synthetic.hpp"
#include "test_util.hpp"

using namespace shapeset;

namespace {

CorrespondedCloud cloud_from(const Eigen::VectorXd& flat) { return {0, unflatten(flat)}; }

std::vector<CorrespondedCloud> category_parts(int n, std::uint64_t seed, int category) {
  return generate_dataset(FamilyConfig{}, n, seed).dataset.parts_of(category);
}

}  // namespace

TEST_CASE("fit_ssm matches a Jacobi eigensolver on a rank-2 toy set") {
  // Three 2-point clouds; centered variation has rank 2.
  const std::vector<Eigen::VectorXd> xs = {
      (Eigen::VectorXd(6) << 0, 0, 0, 1, 0, 0).finished(),
      (Eigen::VectorXd(6) << 0.5, 0.2, 0, 1, 1, 0).finished(),
      (Eigen::VectorXd(6) << -0.3, 0.1, 0.4, 2, 0, -1).finished(),
  };
  std::vector<CorrespondedCloud> parts;
  for (const auto& x : xs) parts.push_back(cloud_from(x));
  const PartSSM ssm = fit_ssm(parts, 2);

  Eigen::MatrixXd xc(3, 6);
  const Eigen::VectorXd mean = (xs[0] + xs[1] + xs[2]) / 3.0;
  for (int i = 0; i < 3; ++i) xc.row(i) = (xs[static_cast<std::size_t>(i)] - mean).transpose();
  CHECK((ssm.mean - mean).cwiseAbs().maxCoeff() < 1e-15);

  const auto [gvals, gvecs] = oracle::jacobi_eigen(xc * xc.transpose() / 2.0);
  for (int k = 0; k < 2; ++k) {
    CHECK(std::abs(ssm.eigenvalues(k) - gvals(k)) < 1e-8);
    Eigen::VectorXd u = xc.transpose() * gvecs.col(k);
    u.normalize();
    const double agree = std::min((ssm.basis.col(k) - u).norm(), (ssm.basis.col(k) + u).norm());
    CHECK(agree < 1e-8);
  }
  CHECK(std::abs(gvals(2)) < 1e-12);
  // Full-covariance oracle on the 6x6 matrix agrees as well.
  const auto [cvals, cvecs] = oracle::jacobi_eigen(xc.transpose() * xc / 2.0);
  for (int k = 0; k < 2; ++k) CHECK(std::abs(ssm.eigenvalues(k) - cvals(k)) < 1e-8);
}

TEST_CASE("fit_ssm covariance path agrees with the Gram path") {
  // n >= 3p forces the 3p x 3p covariance path.
  std::mt19937_64 gen(2);
  std::normal_distribution<double> nd;
  std::vector<CorrespondedCloud> parts;
  for (int i = 0; i < 40; ++i) {
    PointCloud pts;
    for (int j = 0; j < 4; ++j) pts.push_back({nd(gen), nd(gen), 0.5 * nd(gen)});
    parts.push_back({0, pts});
  }
  const PartSSM ssm = fit_ssm(parts, 5);
  Eigen::MatrixXd x(40, 12);
  for (int i = 0; i < 40; ++i) x.row(i) = flatten(parts[static_cast<std::size_t>(i)].points).transpose();
  const Eigen::MatrixXd xc = x.rowwise() - x.colwise().mean();
  const auto [vals, vecs] = oracle::jacobi_eigen(xc.transpose() * xc / 39.0);
  for (int k = 0; k < 5; ++k) {
    CHECK(std::abs(ssm.eigenvalues(k) - vals(k)) < 1e-8);
    CHECK(std::min((ssm.basis.col(k) - vecs.col(k)).norm(), (ssm.basis.col(k) + vecs.col(k)).norm()) < 1e-8);
  }
}

TEST_CASE("fit_ssm: degenerate and invalid inputs") {
  const auto parts = category_parts(5, 1, 0);
  std::vector<CorrespondedCloud> same(4, parts[0]);
  CHECK_THROWS_AS(fit_ssm(same, 1), NumericalError);
  CHECK_THROWS_AS(fit_ssm(std::vector<CorrespondedCloud>{parts[0]}, 1), ValidationError);
  CHECK_THROWS_AS(fit_ssm(parts, 0), ValidationError);
  CHECK_THROWS_AS(fit_ssm(parts, 5), ValidationError);
  auto bad = parts;
  bad[1].points.pop_back();
  CHECK_THROWS_AS(fit_ssm(bad, 2), ValidationError);
}

TEST_CASE("fit_ssm clamps q to the available rank") {
  const auto parts = category_parts(60, 3, 2);
  SsmFitInfo info;
  const PartSSM ssm = fit_ssm(parts, 40, &info);
  CHECK(info.clamped);
  CHECK(info.requested_q == 40);
  CHECK(ssm.q() == 8);
  CHECK(info.retained_q == 8);
  for (int k = 0; k < ssm.q(); ++k) CHECK(ssm.eigenvalues(k) > kRankEpsilon);
}

TEST_CASE("complete basis reconstructs training shapes exactly") {
  // Rank n-1 set: fewer shapes than the family's rank.
  const auto parts = category_parts(6, 4, 0);
  const PartSSM ssm = fit_ssm(parts, 5);
  for (const auto& p : parts) {
    const auto rec = decode_part(ssm, encode_part(ssm, p));
    for (std::size_t i = 0; i < p.points.size(); ++i) CHECK(distance(rec.points[i], p.points[i]) < 1e-6);
  }
}

TEST_CASE("SSM structure, whitening and projection") {
  const auto parts = category_parts(400, 5, 1);
  const PartSSM ssm = fit_ssm(parts, 8);
  const Eigen::MatrixXd gram = ssm.basis.transpose() * ssm.basis;
  CHECK((gram - Eigen::MatrixXd::Identity(8, 8)).cwiseAbs().maxCoeff() < 1e-8);
  for (int k = 0; k < 8; ++k) {
    CHECK(ssm.eigenvalues(k) > 0.0);
    if (k > 0) CHECK(ssm.eigenvalues(k) <= ssm.eigenvalues(k - 1));
    Eigen::Index arg;
    ssm.basis.col(k).cwiseAbs().maxCoeff(&arg);
    CHECK(ssm.basis(arg, k) > 0.0);
  }
  CHECK(fit_ssm(parts, 8) == ssm);

  CHECK(encode_part(ssm, cloud_from(ssm.mean)).cwiseAbs().maxCoeff() < 1e-12);

  Eigen::MatrixXd z(static_cast<Eigen::Index>(parts.size()), 8);
  for (std::size_t i = 0; i < parts.size(); ++i) z.row(static_cast<Eigen::Index>(i)) = encode_part(ssm, parts[i]).transpose();
  const Eigen::RowVectorXd mu = z.colwise().mean();
  CHECK(mu.cwiseAbs().maxCoeff() < 1e-8);
  const Eigen::RowVectorXd var = (z.rowwise() - mu).colwise().squaredNorm() / static_cast<double>(parts.size() - 1);
  for (int k = 0; k < 8; ++k) CHECK(std::abs(var(k) - 1.0) < 1e-3);

  std::mt19937_64 gen(8);
  std::normal_distribution<double> nd;
  for (int trial = 0; trial < 20; ++trial) {
    GeometryLatent zz(8);
    for (int k = 0; k < 8; ++k) zz(k) = 2.0 * nd(gen);
    CHECK((encode_part(ssm, decode_part(ssm, zz)) - zz).cwiseAbs().maxCoeff() < 1e-8);
    const auto once = decode_part(ssm, encode_part(ssm, parts[static_cast<std::size_t>(trial)]));
    const auto twice = decode_part(ssm, encode_part(ssm, once));
    for (std::size_t i = 0; i < once.points.size(); ++i) CHECK(distance(once.points[i], twice.points[i]) < 1e-8);
    const auto plus = decode_part(ssm, zz), minus = decode_part(ssm, -zz);
    const auto mean = unflatten(ssm.mean);
    for (std::size_t i = 0; i < mean.size(); ++i) {
      for (int c = 0; c < 3; ++c) CHECK(std::abs(plus.points[i][c] + minus.points[i][c] - 2.0 * mean[i][c]) < 1e-12);
    }
  }
}

TEST_CASE("Eckart-Young: truncation error equals discarded energy") {
  const auto parts = category_parts(300, 6, 0);
  for (int q : {2, 4, 6}) {
    SsmFitInfo info;
    const PartSSM ssm = fit_ssm(parts, q, &info);
    double err = 0.0;
    for (const auto& p : parts) {
      const auto rec = decode_part(ssm, encode_part(ssm, p));
      for (std::size_t i = 0; i < p.points.size(); ++i) err += squared_distance(rec.points[i], p.points[i]);
    }
    const double three_p = 3.0 * static_cast<double>(parts[0].points.size());
    const double lhs = err / static_cast<double>(parts.size() - 1) / three_p;
    const double rhs = info.discarded_variance / three_p;
    CAPTURE(q);
    CHECK(std::abs(lhs - rhs) / rhs < 1e-6);
  }
}

TEST_CASE("decode: origin is the mean bitwise, toy case by hand") {
  const auto parts = category_parts(50, 7, 3);
  const PartSSM ssm = fit_ssm(parts, 4);
  CHECK(decode_part(ssm, GeometryLatent::Zero(4)).points == unflatten(ssm.mean));

  PartSSM toy;
  toy.category = 0;
  toy.points_per_part = 1;
  toy.mean = Eigen::Vector3d(1, 2, 0);
  toy.basis = Eigen::MatrixXd::Zero(3, 1);
  toy.basis(0, 0) = 1.0;
  toy.eigenvalues = Eigen::VectorXd::Constant(1, 4.0);
  const auto out = decode_part(toy, GeometryLatent::Constant(1, 0.5));
  CHECK(std::abs(out.points[0].x - 2.0) < 1e-12);
  CHECK(std::abs(out.points[0].y - 2.0) < 1e-12);
  CHECK(std::abs(out.points[0].z - 0.0) < 1e-12);

  CHECK_THROWS_AS(decode_part(toy, GeometryLatent::Zero(2)), ValidationError);
  CHECK_THROWS_AS(encode_part(ssm, CorrespondedCloud{3, PointCloud(3)}), ValidationError);
}

TEST_CASE("least-squares latent fitting") {
  const auto parts = category_parts(400, 9, 2);
  const PartSSM ssm = fit_ssm(parts, 8);
  std::mt19937_64 gen(10);
  std::normal_distribution<double> nd;

  SUBCASE("full observation recovers the latent") {
    for (int trial = 0; trial < 10; ++trial) {
      GeometryLatent z(8);
      for (int k = 0; k < 8; ++k) z(k) = nd(gen);
      const auto fit = fit_latent_least_squares(ssm, decode_part(ssm, z).points, 0.0);
      CHECK((fit.z - z).cwiseAbs().maxCoeff() < 1e-6);
      CHECK(fit.residual < 1e-12);
    }
  }
  SUBCASE("ridge limit drives the latent to zero") {
    const auto mean = unflatten(ssm.mean);
    GeometryLatent z(8);
    for (int k = 0; k < 8; ++k) z(k) = nd(gen);
    const auto obs = decode_part(ssm, z).points;
    double prev = std::numeric_limits<double>::infinity();
    for (double ridge : {1e-2, 1.0, 1e2, 1e4, 1e8}) {
      const double norm = fit_latent_least_squares(ssm, obs, ridge).z.norm();
      CHECK(norm <= prev + 1e-12);
      prev = norm;
    }
    CHECK(prev < 1e-6);
    CHECK(fit_latent_least_squares(ssm, mean, 1e3).z.norm() < 1e-6);
  }
  SUBCASE("errors") {
    CHECK_THROWS_AS(fit_latent_least_squares(ssm, PointCloud{}, 1e-3), ValidationError);
    CHECK_THROWS_AS(fit_latent_least_squares(ssm, unflatten(ssm.mean), -1.0), ValidationError);
    // One observed point cannot pin 8 dims without a ridge.
    CHECK_THROWS_AS(fit_latent_least_squares(ssm, PointCloud{{0, 0, 0}}, 0.0), NumericalError);
  }
  SUBCASE("deterministic") {
    const auto crop = oracle::slab_crop(parts[3].points, 0.5, {0, 0, 1});
    const auto a = fit_latent_least_squares(ssm, crop, 1e-3);
    const auto b = fit_latent_least_squares(ssm, crop, 1e-3);
    CHECK(a.z == b.z);
    CHECK(a.assignment == b.assignment);
  }
}

TEST_CASE("least-squares fitting of 40% slab crops") {
  const auto f = testutil::make_fixture(400, 9);
  std::mt19937_64 gen(10);
  int good = 0;
  for (int trial = 0; trial < 100; ++trial) {
    const auto& ssm = f.ssms[static_cast<std::size_t>(trial % 4)];
    const auto parts = f.data.dataset.parts_of(trial % 4);
    const GeometryLatent z = encode_part(ssm, parts[static_cast<std::size_t>(trial)]);
    const auto crop = oracle::slab_crop(decode_part(ssm, z).points, 0.4, oracle::random_direction(gen));
    const auto fit = fit_latent_least_squares(ssm, crop, 1e-3);
    good += (fit.z - z).norm() / z.norm() < 0.2;
    CHECK(fit.objective.size() == static_cast<std::size_t>(fit.iterations));
    for (std::size_t i = 1; i < fit.objective.size(); ++i) {
      CHECK(fit.objective[i] <= fit.objective[i - 1] * (1 + 1e-12) + 1e-15);
    }
  }
  MESSAGE("40% crops within 20% relative latent error: " << good << "/100");
  CHECK(good >= 80);
}

TEST_CASE("SSM file round trip and corruption") {
  const auto parts = category_parts(30, 11, 0);
  const PartSSM ssm = fit_ssm(parts, 6);
  testutil::TempDir dir;
  save_ssm(ssm, dir / "ssm_0.bin");
  CHECK(load_ssm(dir / "ssm_0.bin") == ssm);
  auto bytes = encode_ssm_binary(ssm);
  bytes.resize(bytes.size() - 5);
  CHECK_THROWS_AS(decode_ssm_binary(bytes, "x"), CorruptFileError);
  auto bad = encode_ssm_binary(ssm);
  bad[0] = 'X';
  CHECK_THROWS_AS(decode_ssm_binary(bad, "x"), CorruptFileError);
}
