#include <doctest.h>

#include "antlab/diffusion.hpp"
#include "helpers.hpp"

using namespace antlab;

TEST_CASE("reversal sign") {
  CHECK(sgn_schedule(44, 43) == 1);
  CHECK(sgn_schedule(43, 43) == -1);
  CHECK(sgn_schedule(1, 0) == 1);
}

TEST_CASE("guidance combiner") {
  const Vec2 u(0.3, -1.2), c(0.7, 0.4);
  CHECK(cfg_combine(u, u, 5.0, -1) == u);
  CHECK(cfg_combine(u, c, 0.0, 1) == u);
  CHECK(cfg_combine(Vec2(0, 0), Vec2(1, 0), 2.0, -1) == Vec2(-2, 0));
  for (double s : {0.5, 1.0, 3.0}) CHECK(cfg_combine(u, c, s, -1) == cfg_combine(u, c, -s, 1));
}

TEST_CASE("schedule") {
  const auto s = testing::default_schedule();
  CHECK(s.alpha_bar(0) == 1.0);
  CHECK(s.alpha_bar(s.T()) < 1e-3);
  for (int t = 1; t <= s.T(); ++t) CHECK(s.alpha_bar(t) < s.alpha_bar(t - 1));
  const auto l = s.ladder(50);
  CHECK(l.front() == 0);
  CHECK(l.back() == 100);
  CHECK(l[43] == 86);
  CHECK_THROWS_AS(s.ladder(101), InvalidInput);
}

TEST_CASE("forward noising") {
  const auto s = testing::default_schedule();
  const Vec2 x0(1.5, -2.0), eps(0.4, 0.9);
  CHECK(forward_noise(s, x0, 0, eps) == x0);
  CHECK(forward_noise(s, x0, 30, Vec2::Zero()).isApprox(std::sqrt(s.alpha_bar(30)) * x0, 1e-15));

  SUBCASE("second moment from zero data") {
    Rng rng(1);
    for (int t : {5, 40, 100}) {
      double acc = 0.0;
      const int n = 100000;
      for (int i = 0; i < n; ++i) acc += forward_noise(s, Vec2::Zero(), t, rng.normal2()).squaredNorm();
      const double expect = 2.0 * (1.0 - s.alpha_bar(t));
      CHECK(std::abs(acc / n - expect) < 0.02 * expect);
    }
  }
}

TEST_CASE("ddim step") {
  const auto s = testing::default_schedule();
  const Vec2 z(0.8, -0.3);
  CHECK(ddim_step(s, z, 60, 40, Vec2::Zero()).isApprox(std::sqrt(s.alpha_bar(40) / s.alpha_bar(60)) * z, 1e-14));

  SUBCASE("one step with the true noise inverts the forward process") {
    Rng rng(2);
    double worst = 0.0;
    for (int i = 0; i < 100; ++i) {
      const Vec2 x0 = 10.0 * rng.normal2(), eps = rng.normal2();
      const int t = rng.uniform_int(1, s.T());
      worst = std::max(worst, (ddim_step(s, forward_noise(s, x0, t, eps), t, 0, eps) - x0).norm());
    }
    CHECK(worst < 1e-12);
  }
}

TEST_CASE("50-step sampler on gaussian data matches the composed affine map") {
  // Data N(mu, v0 I) has the exact noise predictor E[eps | z_t] =
  // sqrt(1 - ab) (z - sqrt(ab) mu) / (ab v0 + 1 - ab), so every DDIM step is
  // affine in z and the chain's endpoint is their composition.
  const auto s = testing::default_schedule();
  const Vec2 mu(3.0, -1.0);
  const double v0 = 0.25;
  auto coeff = [&](int t) { return std::sqrt(1 - s.alpha_bar(t)) / (s.alpha_bar(t) * v0 + 1 - s.alpha_bar(t)); };
  const NoisePredictor exact = [&](const Points& z, int t, int) {
    Points e = z;
    for (int j = 0; j < z.cols(); ++j) e.col(j) = coeff(t) * (z.col(j) - std::sqrt(s.alpha_bar(t)) * mu);
    return e;
  };
  const Points zT = initial_noise(64, 3);
  const Points got = ddim_sample(s, 50, zT, exact, false).points;

  // z' = A z + B mu per step, composed in long double
  const auto l = s.ladder(50);
  long double A = 1.0L, B = 0.0L;
  for (int i = 50; i >= 1; --i) {
    const long double ab = s.alpha_bar(l[i]), an = s.alpha_bar(l[i - 1]);
    const long double c = std::sqrt(1 - ab) / (ab * v0 + 1 - ab);
    // eps = c z - c sqrt(ab) mu; x0 = (z - sqrt(1-ab) eps) / sqrt(ab); z' = sqrt(an) x0 + sqrt(1-an) eps
    const long double ez = c, em = -c * std::sqrt(ab);
    const long double xz = (1 - std::sqrt(1 - ab) * ez) / std::sqrt(ab), xm = -std::sqrt(1 - ab) * em / std::sqrt(ab);
    const long double sz = std::sqrt(an) * xz + std::sqrt(1 - an) * ez;
    const long double sm = std::sqrt(an) * xm + std::sqrt(1 - an) * em;
    B = sz * B + sm;
    A = sz * A;
  }
  double worst = 0.0;
  for (int j = 0; j < zT.cols(); ++j) {
    const Vec2 want = static_cast<double>(A) * zT.col(j) + static_cast<double>(B) * mu;
    worst = std::max(worst, (got.col(j) - want).norm());
  }
  CHECK(worst < 1e-6);
  // endpoints land in the data's neighbourhood
  CHECK((got.rowwise().mean() - mu).norm() < 0.3);
}

TEST_CASE("guided sampling") {
  const auto net = testing::small_net();
  const auto p = testing::jiggled(net, 4);
  const auto s = testing::default_schedule();
  const std::vector<Cond> conds(8, Cond::of(1, 2));
  GuidanceSpec g;

  SUBCASE("deterministic per seed") {
    CHECK(sample(p, s, g, conds, 5, false).points == sample(p, s, g, conds, 5, false).points);
    CHECK(sample(p, s, g, conds, 5, false).points != sample(p, s, g, conds, 6, false).points);
  }
  SUBCASE("scale 0 ignores the condition") {
    g.scale = 0.0;
    const std::vector<Cond> other(8, Cond::of(3, 0));
    CHECK(sample(p, s, g, conds, 7, false).points == sample(p, s, g, other, 7, false).points);
  }
  SUBCASE("reversal leaves the early trajectory untouched") {
    const int tau = 20;
    const auto plain = sample(p, s, g, conds, 8, true);
    g.t_prime = tau;
    const auto rev = sample(p, s, g, conds, 8, true);
    const int keep = 50 - tau;  // trajectory entries at ladder positions >= tau
    for (int k = 0; k <= keep; ++k) CHECK(plain.trajectory[k] == rev.trajectory[k]);
    CHECK(plain.trajectory[keep + 1] != rev.trajectory[keep + 1]);
    CHECK(rev.timesteps[keep] == s.ladder(50)[tau]);
  }
  SUBCASE("validation") {
    g.t_prime = 51;
    CHECK_THROWS_AS(sample(p, s, g, conds, 1, false), InvalidInput);
  }
}
