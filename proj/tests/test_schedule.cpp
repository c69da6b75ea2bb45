#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>

#include "oracle/oracles.hpp"
#include "srpo/errors.hpp"
#include "srpo/schedule.hpp"

using namespace srpo;

TEST_CASE("endpoints and the frozen mid/terminal values") {
  NoiseSchedule s(0.1, 20.0);
  const auto [a0, s0] = s.alpha_sigma(0.0);
  CHECK(a0 == doctest::Approx(1.0));
  CHECK(s0 == doctest::Approx(0.0));

  // exponent at t=0.5 is -1.26875, at t=1 it is -5.025
  const auto [a5, s5] = s.alpha_sigma(0.5);
  CHECK(a5 == doctest::Approx(std::exp(-1.26875)).epsilon(1e-12));
  CHECK(a5 == doctest::Approx(0.28118).epsilon(1e-4));
  CHECK(s5 == doctest::Approx(0.95966).epsilon(1e-4));

  const auto [a1, s1] = s.alpha_sigma(1.0);
  CHECK(a1 == doctest::Approx(std::exp(-5.025)).epsilon(1e-12));
  CHECK(a1 == doctest::Approx(6.56e-3).epsilon(1e-2));
  CHECK(s1 == doctest::Approx(0.99998).epsilon(1e-5));
}

TEST_CASE("domain errors") {
  NoiseSchedule s;
  CHECK_THROWS_AS(s.alpha_sigma(-0.01), NumericError);
  CHECK_THROWS_AS(s.alpha_sigma(1.01), NumericError);
  CHECK_THROWS_AS(s.drift_diffusion(0.0), NumericError);
  CHECK_THROWS_AS(NoiseSchedule(0.0, 20.0), ConfigError);
  CHECK_THROWS_AS(NoiseSchedule(1.0, 0.5), ConfigError);
}

TEST_CASE("variance preservation and monotonicity on a 1000-point grid") {
  NoiseSchedule s(0.1, 20.0);
  double prev_a = 1.0;
  double prev_s = 0.0;
  for (int i = 1; i <= 1000; ++i) {
    const double t = static_cast<double>(i) / 1000.0;
    const auto [a, sg] = s.alpha_sigma(t);
    CHECK(std::abs(a * a + sg * sg - 1.0) < 1e-12);
    CHECK(a < prev_a);
    CHECK(sg > prev_s);
    prev_a = a;
    prev_s = sg;
  }
}

TEST_CASE("drift and diffusion match the stated closed forms") {
  NoiseSchedule s(0.1, 20.0);
  const auto [f0, g0] = s.drift_diffusion(1e-9);
  CHECK(f0 == doctest::Approx(-0.05).epsilon(1e-6));
  CHECK(g0 == doctest::Approx(0.1).epsilon(1e-6));
  const auto [f1, g1] = s.drift_diffusion(1.0);
  CHECK(g1 == doctest::Approx(20.0));
  // Algebraic identity of the variance-preserving schedule.
  for (double t : {0.1, 0.33, 0.5, 0.77, 1.0}) {
    const auto [f, g2] = s.drift_diffusion(t);
    CHECK(g2 == doctest::Approx(-2.0 * f).epsilon(1e-14));
  }
}

TEST_CASE("drift_diffusion agrees with finite differences of alpha_sigma") {
  NoiseSchedule s(0.1, 20.0);
  const double h = 1e-6;
  for (double t : {0.05, 0.2, 0.5, 0.8, 0.95}) {
    const auto [f, g2] = s.drift_diffusion(t);
    const double fd_logalpha = oracle::central_difference(
        [&](double u) { return std::log(s.alpha(u)); }, t, h);
    CHECK(f == doctest::Approx(fd_logalpha).epsilon(1e-6));
    const double fd_sigma2 = oracle::central_difference(
        [&](double u) {
          const double sg = s.sigma(u);
          return sg * sg;
        },
        t, h);
    const double g2_from_fd = fd_sigma2 - 2.0 * f * s.sigma(t) * s.sigma(t);
    CHECK(g2 == doctest::Approx(g2_from_fd).epsilon(1e-6));
  }
}

TEST_CASE("perturb applies the closed-form kernel") {
  NoiseSchedule s(0.1, 20.0);
  const Vector a0{0.5, -1.5};
  const Vector eps{0.3, 0.7};
  // t = 0 keeps the action.
  CHECK(s.perturb(a0, 0.0, eps) == a0);
  // eps = 0 scales by alpha.
  const Vector scaled = s.perturb(a0, 0.5, Vector{0.0, 0.0});
  CHECK(scaled[0] == doctest::Approx(s.alpha(0.5) * 0.5));
  CHECK(scaled[1] == doctest::Approx(s.alpha(0.5) * -1.5));
  // a0 = 0 at t = 1 is the noise up to 2e-5.
  const Vector noisy = s.perturb(Vector{0.0, 0.0}, 1.0, eps);
  CHECK(std::abs(noisy[0] - eps[0]) < 2e-5);
  CHECK(std::abs(noisy[1] - eps[1]) < 2e-5);
}
