#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>

#include "oracle/oracles.hpp"
#include "srpo/rng.hpp"

using namespace srpo;
using namespace srpo::oracle;

namespace {

GaussianMixture unit_gaussian() {
  return {{1.0}, {{0.0, 0.0}}, {1.0}};
}

GaussianMixture symmetric_pair() {
  return {{0.5, 0.5}, {{-2.0, 0.0}, {2.0, 0.0}}, {0.09, 0.09}};
}

}  // namespace

TEST_CASE("mixture validation") {
  GaussianMixture bad{{0.5, 0.6}, {{0.0}, {1.0}}, {1.0, 1.0}};
  CHECK_THROWS(bad.validate());
  CHECK_NOTHROW(symmetric_pair().validate());
}

TEST_CASE("diffused unit gaussian keeps score -x at every t") {
  const NoiseSchedule s;
  const GaussianMixture gm = unit_gaussian();
  for (double t : {0.0, 0.1, 0.5, 0.9, 1.0}) {
    for (double x : {-1.5, 0.2, 3.0}) {
      const Vector sc = diffused_mixture_score(gm, s, Vector{x, -x}, t);
      CHECK(sc[0] == doctest::Approx(-x).epsilon(1e-12));
      CHECK(sc[1] == doctest::Approx(x).epsilon(1e-12));
    }
  }
}

TEST_CASE("t = 0 reduces to the undiffused score") {
  const NoiseSchedule s;
  const GaussianMixture gm = symmetric_pair();
  const Vector x{0.7, -0.3};
  const Vector s0 = diffused_mixture_score(gm, s, x, 0.0);
  const Vector direct = mixture_score(gm, x);
  CHECK(s0[0] == doctest::Approx(direct[0]).epsilon(1e-12));
  CHECK(s0[1] == doctest::Approx(direct[1]).epsilon(1e-12));
}

TEST_CASE("score of a symmetric pair is odd") {
  const GaussianMixture gm = symmetric_pair();
  const Vector x{0.9, 0.4};
  const Vector sp = mixture_score(gm, x);
  const Vector sn = mixture_score(gm, Vector{-x[0], -x[1]});
  CHECK(sp[0] == doctest::Approx(-sn[0]).epsilon(1e-12));
  CHECK(sp[1] == doctest::Approx(-sn[1]).epsilon(1e-12));
}

TEST_CASE("oracle score matches numerical differentiation of log density") {
  const GaussianMixture gm = symmetric_pair();
  const double h = 1e-6;
  Rng rng(5);
  for (int rep = 0; rep < 30; ++rep) {
    const Vector x{rng.uniform(-3.0, 3.0), rng.uniform(-3.0, 3.0)};
    const Vector sc = mixture_score(gm, x);
    for (std::size_t c = 0; c < 2; ++c) {
      const double fd = central_difference(
          [&](double v) {
            Vector y = x;
            y[c] = v;
            return mixture_log_density(gm, y);
          },
          x[c], h);
      CHECK(std::abs(sc[c] - fd) < 1e-8 * std::max(1.0, std::abs(fd)));
    }
  }
}

TEST_CASE("expectile closed forms") {
  CHECK(expectile_solve({0.0, 1.0}, {0.5, 0.5}, 0.7) ==
        doctest::Approx(0.7).epsilon(1e-9));
  CHECK(expectile_solve({0.0, 1.0}, {0.5, 0.5}, 0.5) ==
        doctest::Approx(0.5).epsilon(1e-9));
  CHECK(expectile_solve({0.0, 1.0}, {0.5, 0.5}, 0.9) ==
        doctest::Approx(0.9).epsilon(1e-9));
  // tau = 0.5 is the weighted mean.
  CHECK(expectile_solve({1.0, 2.0, 6.0}, {0.25, 0.25, 0.5}, 0.5) ==
        doctest::Approx(0.25 + 0.5 + 3.0).epsilon(1e-9));
  // Degenerate support.
  CHECK(expectile_solve({3.3, 3.3}, {0.5, 0.5}, 0.83) ==
        doctest::Approx(3.3));
}

TEST_CASE("expectile is monotone in tau") {
  const Vector values{-1.0, 0.5, 2.0, 4.0};
  const Vector weights{0.25, 0.25, 0.25, 0.25};
  double prev = -10.0;
  for (double tau : {0.1, 0.3, 0.5, 0.7, 0.9, 0.99}) {
    const double e = expectile_solve(values, weights, tau);
    CHECK(e > prev);
    prev = e;
  }
}

TEST_CASE("fixed point of the unit gaussian is the closed form") {
  const NoiseSchedule s;
  const GaussianMixture gm = unit_gaussian();
  const Vector a_tar{1.2, -0.4};
  for (double inv_beta : {0.0, 0.5, 1.0, 2.0, 10.0}) {
    const Vector a =
        srpo_fixed_point_quadratic(a_tar, inv_beta, gm, s, 1e-12);
    // Solve -2 (a - a_tar) - inv_beta a = 0  =>  a = 2 a_tar / (2 + inv_beta)
    const double scale = 2.0 / (2.0 + inv_beta);
    CHECK(a[0] == doctest::Approx(scale * a_tar[0]).epsilon(1e-8));
    CHECK(a[1] == doctest::Approx(scale * a_tar[1]).epsilon(1e-8));
  }
}

TEST_CASE("fixed point with a bimodal mixture stays in the mode's basin") {
  const NoiseSchedule s;
  const GaussianMixture gm = symmetric_pair();
  const Vector a_tar{2.5, 0.5};  // near the +x mode
  const Vector a = srpo_fixed_point_quadratic(a_tar, 1.0, gm, s, 0.02);
  // Inner product with the mode direction stays positive.
  CHECK(a[0] > 0.0);
  const double d_plus = std::hypot(a[0] - 2.0, a[1]);
  const double d_minus = std::hypot(a[0] + 2.0, a[1]);
  CHECK(d_plus < d_minus);
}

TEST_CASE("mixture sampler hits the component means") {
  const GaussianMixture gm = symmetric_pair();
  Rng rng(11);
  const Matrix pts = sample_mixture(gm, 20000, rng);
  double mean_abs_x = 0.0;
  for (std::size_t i = 0; i < pts.rows; ++i) {
    mean_abs_x += std::abs(pts.at(i, 0));
  }
  mean_abs_x /= static_cast<double>(pts.rows);
  CHECK(mean_abs_x == doctest::Approx(2.0).epsilon(0.02));
}

TEST_CASE("mixture score model matches finite differences of its noise") {
  const NoiseSchedule s;
  const MixtureScoreModel model(symmetric_pair(), s);
  Rng rng(13);
  const double h = 1e-6;
  for (int rep = 0; rep < 10; ++rep) {
    const Vector x{rng.uniform(-3.0, 3.0), rng.uniform(-3.0, 3.0)};
    const double t = rng.uniform(0.05, 0.95);
    const Matrix jac = model.noise_action_jacobian(x, Vector{}, t);
    for (std::size_t i = 0; i < 2; ++i) {
      for (std::size_t j = 0; j < 2; ++j) {
        const double fd = central_difference(
            [&](double v) {
              Vector y = x;
              y[j] = v;
              return model.predict_noise(y, Vector{}, t)[i];
            },
            x[j], h);
        CHECK(jac.at(i, j) == doctest::Approx(fd).epsilon(1e-5));
      }
    }
  }
}
