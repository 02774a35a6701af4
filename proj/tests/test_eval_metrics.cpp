#include <doctest.h>

#include "antlab/eval_metrics.hpp"
#include "antlab/synth_data.hpp"
#include "helpers.hpp"
#include "hungarian.hpp"

using namespace antlab;

namespace {
Points gaussian_points(int n, const Vec2& mean, const Eigen::Matrix2d& chol, std::uint64_t seed) {
  Rng rng(seed);
  Points p(2, n);
  for (int i = 0; i < n; ++i) p.col(i) = mean + chol * rng.normal2();
  return p;
}

// Exact optimal transport between two equal-size empirical sets.
double empirical_w2(const Points& a, const Points& b) {
  const int n = static_cast<int>(a.cols());
  std::vector<std::vector<double>> cost(n, std::vector<double>(n));
  for (int i = 0; i < n; ++i)
    for (int j = 0; j < n; ++j) cost[i][j] = (a.col(i) - b.col(j)).squaredNorm();
  const auto m = testing::hungarian(cost);
  double s = 0.0;
  for (int i = 0; i < n; ++i) s += cost[i][m[i]];
  return s / n;
}
}  // namespace

TEST_CASE("harmonic mean") {
  CHECK(harmonic_mean_hc(0.0, 1.0) == doctest::Approx(1.0));
  CHECK(harmonic_mean_hc(1.0, 1.0) == 0.0);
  CHECK(harmonic_mean_hc(0.5, 0.0) == 0.0);
  CHECK(harmonic_mean_hc(0.2, 0.8) == doctest::Approx(0.8));
  CHECK(harmonic_mean_hc(0.5, 0.5) == doctest::Approx(0.5));
  CHECK(harmonic_mean_hc(0.1, 0.6) == doctest::Approx(2.0 / (1.0 / 0.9 + 1.0 / 0.6)));
  double prev = 0.0;
  for (double p : {0.1, 0.3, 0.6, 0.9}) {
    CHECK(harmonic_mean_hc(0.3, p) > prev);
    prev = harmonic_mean_hc(0.3, p);
  }
  CHECK_THROWS_AS(harmonic_mean_hc(1.2, 0.5), InvalidInput);
}

TEST_CASE("w2 between fitted gaussians") {
  Eigen::Matrix2d la, lb;
  la << 1.0, 0.0, 0.0, 0.5;
  lb << 0.7, 0.0, 0.3, 1.2;
  const auto a = gaussian_points(10000, Vec2(0, 0), la, 1);
  CHECK(w2_gaussian(a, a) < 1e-9);

  Points shifted = a;
  shifted.colwise() += Vec2(3.0, -4.0);
  CHECK(w2_gaussian(a, shifted) == doctest::Approx(25.0).epsilon(1e-9));

  const auto b = gaussian_points(10000, Vec2(3, 1), lb, 2);
  CHECK(w2_gaussian(a, b) == doctest::Approx(w2_gaussian(b, a)).epsilon(1e-12));

  // empirical OT on subsamples, averaged over a few draws
  double ot = 0.0;
  const int m = 600, reps = 3;
  for (int r = 0; r < reps; ++r) {
    ot += empirical_w2(gaussian_points(m, Vec2(0, 0), la, 10 + r), gaussian_points(m, Vec2(3, 1), lb, 20 + r)) / reps;
  }
  CHECK(w2_gaussian(a, b) == doctest::Approx(ot).epsilon(0.05));
}

TEST_CASE("off-manifold fraction") {
  const auto spec = make_mixture(8, 20, 2.0, 0.1);
  const double thr = manifold_threshold(spec, 3, 100000);
  const auto fresh = sample_dataset(spec, 20000, 4);
  Points pts(2, static_cast<int>(fresh.points.size()));
  for (int i = 0; i < pts.cols(); ++i) pts.col(i) = fresh.points[i].x;
  CHECK(off_manifold_fraction(pts, spec, thr) == doctest::Approx(0.01).epsilon(0.5));

  Points centers(2, spec.n_modes());
  Points far(2, spec.n_modes());
  for (int k = 0; k < spec.n_modes(); ++k) {
    centers.col(k) = spec.centers[k];
    // midway between two concepts' rings, well beyond 10 sigma of every mode
    far.col(k) = spec.centers[k].normalized() * (spec.centers[k].norm() + 0.5) ;
    far.col(k) = Eigen::Rotation2Dd(M_PI / 8) * far.col(k);
  }
  CHECK(off_manifold_fraction(centers, spec, thr) == 0.0);
  CHECK(off_manifold_fraction(far, spec, thr) == 1.0);
  CHECK_THROWS_AS(manifold_threshold(spec, 3, 0), InvalidInput);
}

TEST_CASE("accuracy of an untrained model is near chance") {
  NetConfig net;
  const auto p = ModelParams::initialize(net, 5);
  const auto s = testing::default_schedule();
  const auto spec = make_mixture(8, 20, 2.0, 0.1);
  GuidanceSpec g;
  const std::vector<int> concepts{0, 1, 2, 3, 4, 5, 6, 7};
  const auto acc = accuracy(p, s, g, concepts, 400, 6, spec);
  for (double a : acc) CHECK(std::abs(a - 1.0 / 8) < 0.1);
  CHECK(accuracy(p, s, g, concepts, 400, 6, spec) == acc);
}

TEST_CASE("eval conds cover contexts evenly") {
  NetConfig net;
  const auto conds = eval_conds(net, 3, 45);
  CHECK(conds.size() == 45);
  CHECK(conds[0] == Cond::of(3, 0));
  CHECK(conds[21] == Cond::of(3, 1));
}
