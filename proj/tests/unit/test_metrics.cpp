#include <doctest.h>

#include <algorithm>
#include <json.hpp>
#include <random>

#include "oracles.hpp"
#include "shapeset/error.hpp"
#include "shapeset/metrics.hpp"
#include "test_util.hpp"

using namespace shapeset;

namespace {

PointCloud random_cloud(std::mt19937_64& gen, std::size_t n) {
  std::normal_distribution<double> nd;
  PointCloud c(n);
  for (auto& p : c) p = {nd(gen), nd(gen), nd(gen)};
  return c;
}

Eigen::MatrixXd cost_matrix(const PointCloud& a, const PointCloud& b) {
  Eigen::MatrixXd c(static_cast<Eigen::Index>(a.size()), static_cast<Eigen::Index>(b.size()));
  for (std::size_t i = 0; i < a.size(); ++i) {
    for (std::size_t j = 0; j < b.size(); ++j) c(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(j)) = distance(a[i], b[j]);
  }
  return c;
}

std::vector<PointCloud> family_clouds(int n, std::uint64_t seed) {
  const auto data = generate_dataset(FamilyConfig{}, n, seed);
  std::vector<PointCloud> out;
  for (const auto& s : data.dataset.shapes) out.push_back(eval_cloud(s));
  return out;
}

}  // namespace

TEST_CASE("chamfer") {
  std::mt19937_64 gen(1);
  const auto x = random_cloud(gen, 50);
  CHECK(chamfer(x, x) == 0.0);
  const PointCloud a{{0, 0, 0}}, b{{1, 0, 0}, {3, 0, 0}};
  // Squared distances: 1 from A, (1 + 9) / 2 from B.
  CHECK(chamfer(a, b) == 6.0);
  for (int trial = 0; trial < 5; ++trial) {
    const auto p = random_cloud(gen, 40 + trial), q = random_cloud(gen, 30);
    CHECK(std::abs(chamfer(p, q) - oracle::chamfer(p, q)) < 1e-12);
    // Shared rotation about an arbitrary axis plus a translation.
    const Eigen::Matrix3d r = Eigen::AngleAxisd(0.7 + trial, Eigen::Vector3d(1, 2, 3).normalized()).toRotationMatrix();
    auto move = [&](PointCloud c) {
      for (auto& pt : c) {
        const Eigen::Vector3d v = r * Eigen::Vector3d(pt.x, pt.y, pt.z) + Eigen::Vector3d(5, -2, 1);
        pt = {v.x(), v.y(), v.z()};
      }
      return c;
    };
    CHECK(std::abs(chamfer(move(p), move(q)) - chamfer(p, q)) < 1e-9);
  }
  CHECK_THROWS_AS(chamfer(PointCloud{}, b), ValidationError);
  CHECK_THROWS_AS(mean_nearest_distance(a, PointCloud{}), ValidationError);
}

TEST_CASE("exact assignment and EMD") {
  std::mt19937_64 gen(2);
  SUBCASE("hand cases") {
    const auto x = random_cloud(gen, 20);
    auto perm = x;
    std::shuffle(perm.begin(), perm.end(), gen);
    CHECK(emd(x, perm) == 0.0);
    const PointCloud a{{0, 0, 0}, {1, 0, 0}}, b{{1, 0, 0}, {0, 0, 0}};
    CHECK(emd(a, b) == 0.0);
    CHECK_THROWS_AS(emd(a, PointCloud{{0, 0, 0}}), ValidationError);
  }
  SUBCASE("Hungarian equals factorial brute force for n <= 6") {
    for (int n = 1; n <= 6; ++n) {
      for (int trial = 0; trial < 20; ++trial) {
        const auto a = random_cloud(gen, static_cast<std::size_t>(n)), b = random_cloud(gen, static_cast<std::size_t>(n));
        const Eigen::MatrixXd c = cost_matrix(a, b);
        const auto h = solve_assignment(c);
        CHECK(std::abs(h.cost - oracle::permutation_min(c)) < 1e-12);
        CHECK(std::abs(h.cost - brute_force_assignment(c).cost) < 1e-12);
        double recomputed = 0.0;
        std::vector<int> seen(static_cast<std::size_t>(n), 0);
        for (int i = 0; i < n; ++i) {
          recomputed += c(i, h.column_of_row[static_cast<std::size_t>(i)]);
          ++seen[static_cast<std::size_t>(h.column_of_row[static_cast<std::size_t>(i)])];
        }
        CHECK(std::abs(recomputed - h.cost) < 1e-12);
        CHECK(std::all_of(seen.begin(), seen.end(), [](int s) { return s == 1; }));
      }
    }
  }
  SUBCASE("32-point pairs: 6-point subcases match brute force") {
    for (int trial = 0; trial < 10; ++trial) {
      const auto a = random_cloud(gen, 32), b = random_cloud(gen, 32);
      const double full = emd(a, b);
      CHECK(full >= 0.0);
      for (int start = 0; start + 6 <= 32; start += 6) {
        const PointCloud sa(a.begin() + start, a.begin() + start + 6), sb(b.begin() + start, b.begin() + start + 6);
        CHECK(std::abs(emd(sa, sb) - oracle::permutation_min(cost_matrix(sa, sb)) / 6.0) < 1e-12);
      }
    }
  }
  SUBCASE("EMD dominates the one-directional nearest-neighbor bound") {
    for (int trial = 0; trial < 20; ++trial) {
      const auto a = random_cloud(gen, 40), b = random_cloud(gen, 40);
      const double e = emd(a, b);
      CHECK(e >= mean_nearest_distance(a, b) - 1e-12);
      CHECK(e >= mean_nearest_distance(b, a) - 1e-12);
    }
  }
  SUBCASE("assignment input validation") {
    CHECK_THROWS_AS(solve_assignment(Eigen::MatrixXd(2, 3)), ValidationError);
    CHECK_THROWS_AS(brute_force_assignment(Eigen::MatrixXd::Zero(9, 9)), ValidationError);
    Eigen::MatrixXd bad = Eigen::MatrixXd::Zero(2, 2);
    bad(0, 1) = std::numeric_limits<double>::quiet_NaN();
    CHECK_THROWS_AS(solve_assignment(bad), ValidationError);
  }
}

TEST_CASE("entropic EMD above the exact limit stays close to exact") {
  // Pairs of family clouds just above the exact-solver limit.
  const auto clouds = family_clouds(12, 5);
  double worst = 0.0;
  int pairs = 0;
  for (std::size_t i = 0; i + 1 < clouds.size() && pairs < 4; ++i) {
    const std::size_t n = kExactEmdLimit + 8;
    if (clouds[i].size() < n || clouds[i + 1].size() < n) continue;
    const auto a = subsample(clouds[i], n, 1), b = subsample(clouds[i + 1], n, 2);
    const double exact = emd(a, b, EmdMode::Exact);
    const double approx = emd(a, b);
    CHECK(approx == emd(a, b, EmdMode::Entropic));
    CHECK(approx >= exact * (1.0 - 1e-12));
    worst = std::max(worst, std::abs(approx - exact) / exact);
    ++pairs;
  }
  MESSAGE("entropic EMD worst relative error vs exact on " << pairs << " pairs: " << worst);
  CHECK(pairs == 4);
  CHECK(worst < 0.02);
}

TEST_CASE("set metrics") {
  SUBCASE("hand-built distance matrix") {
    // gen = {0, 1}, ref = {2, 3}.
    Eigen::MatrixXd d(4, 4);
    d << 0, 5, 1, 4,  //
        5, 0, 2, 3,   //
        1, 2, 0, 6,   //
        4, 3, 6, 0;
    CHECK(mmd_from_matrix(d, 2) == doctest::Approx((1.0 + 3.0) / 2.0));
    // Both gen items are nearest to ref 2.
    CHECK(cov_from_matrix(d, 2) == 0.5);
    // 0 -> 2 (wrong), 1 -> 2 (wrong), 2 -> 0 (wrong), 3 -> 1 (wrong).
    CHECK(nna_from_matrix(d, 2) == 0.0);
    Eigen::MatrixXd tie = Eigen::MatrixXd::Ones(4, 4);
    tie.diagonal().setZero();
    // Ties to the lowest index: 0 -> 1, 1 -> 0, 2 -> 0, 3 -> 0.
    CHECK(nna_from_matrix(tie, 2) == 0.5);
    CHECK(cov_from_matrix(tie, 2) == 0.5);
    CHECK_THROWS_AS(mmd_from_matrix(d, 0), ValidationError);
    CHECK_THROWS_AS(nna_from_matrix(d, 4), ValidationError);
  }
  SUBCASE("duplicate sets") {
    const auto ref = family_clouds(10, 3);
    const auto gen = ref;
    CHECK(mmd(gen, ref, CloudDistance::Chamfer) == 0.0);
    CHECK(cov(gen, ref, CloudDistance::Chamfer) == 1.0);
    CHECK(nna(gen, ref, CloudDistance::Chamfer) == 0.0);
    std::vector<PointCloud> small_ref, small_gen;
    for (const auto& c : ref) small_ref.push_back(subsample(c, 24, 0));
    small_gen = small_ref;
    CHECK(mmd(small_gen, small_ref, CloudDistance::Emd) == 0.0);
    CHECK(cov(small_gen, small_ref, CloudDistance::Emd) == 1.0);
    CHECK(nna(small_gen, small_ref, CloudDistance::Emd) == 0.0);
    CHECK_THROWS_AS(mmd(std::vector<PointCloud>{}, ref, CloudDistance::Chamfer), ValidationError);
  }
  SUBCASE("i.i.d. sets from the family") {
    const auto gen = family_clouds(100, 101), ref = family_clouds(100, 202);
    const double v = nna(gen, ref, CloudDistance::Chamfer);
    MESSAGE("1-NNA-CD of two i.i.d. family sets: " << v);
    CHECK(v >= 0.40);
    CHECK(v <= 0.60);
  }
  SUBCASE("order invariance") {
    auto gen = family_clouds(20, 7), ref = family_clouds(20, 8);
    const double m0 = mmd(gen, ref, CloudDistance::Chamfer), c0 = cov(gen, ref, CloudDistance::Chamfer),
                 n0 = nna(gen, ref, CloudDistance::Chamfer);
    std::mt19937_64 g(3);
    std::shuffle(gen.begin(), gen.end(), g);
    std::shuffle(ref.begin(), ref.end(), g);
    CHECK(mmd(gen, ref, CloudDistance::Chamfer) == doctest::Approx(m0).epsilon(1e-12));
    CHECK(cov(gen, ref, CloudDistance::Chamfer) == c0);
    CHECK(nna(gen, ref, CloudDistance::Chamfer) == n0);
  }
}

TEST_CASE("evaluation clouds and report") {
  const auto data = generate_dataset(FamilyConfig{}, 6, 4);
  for (const auto& s : data.dataset.shapes) {
    const auto c = eval_cloud(s);
    CHECK(c.size() == std::min<std::size_t>(merge_parts(s).size(), 2048));
    double lo = 1e9, hi = -1e9;
    for (const auto& p : c) {
      lo = std::min({lo, p.x, p.y, p.z});
      hi = std::max({hi, p.x, p.y, p.z});
    }
    CHECK(lo >= -1.0 - 1e-12);
    CHECK(hi <= 1.0 + 1e-12);
    CHECK(std::abs(hi - 1.0) < 1e-12);
    const auto sub = eval_cloud(s, 100, 3);
    CHECK(sub.size() == 100);
    CHECK(sub == eval_cloud(s, 100, 3));
  }
  CHECK_THROWS_AS(subsample(PointCloud{{0, 0, 0}}, 0, 1), ValidationError);

  std::vector<PointCloud> clouds;
  for (const auto& s : data.dataset.shapes) clouds.push_back(eval_cloud(s));
  EvalOptions opt;
  opt.emd_points = 64;
  const auto rep = evaluate(clouds, clouds, opt);
  CHECK(rep.mmd_cd == 0.0);
  CHECK(rep.cov_emd == 1.0);
  CHECK(rep.nna_emd == 0.0);
  CHECK(rep.emd_points == 64);
  const auto j = nlohmann::json::parse(rep.to_json());
  CHECK(j["mmd_cd_x1e3"] == 0.0);
  CHECK(j["cov_cd"] == 1.0);
  CHECK(j["nna_cd"] == 0.0);
  CHECK(j.contains("chamfer_convention"));
  CHECK(rep.to_table().find("1-NNA") != std::string::npos);
}
