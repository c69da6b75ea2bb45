#pragma once
// Test-only reference implementations, deliberately written as separate
// straight-line code so agreement with the main path is evidence rather
// than tautology: analytic diffused scores/densities of Gaussian mixtures,
// closed-form expectiles, the quadratic-Q regularized fixed point, a naive
// MLP re-evaluation, and central finite differences.

#include <cstddef>
#include <functional>
#include <vector>

#include "srpo/behavior.hpp"
#include "srpo/net.hpp"
#include "srpo/schedule.hpp"
#include "srpo/tensor.hpp"

namespace srpo::oracle {

struct GaussianMixture {
  Vector weights;                 // positive, sum to 1 within 1e-12
  std::vector<Vector> means;
  Vector variances;               // isotropic, per component

  void validate() const;
  std::size_t dim() const { return means.empty() ? 0 : means.front().size(); }
};

// Mixture diffused by the VP kernel at time t: component means scale by
// alpha_t, variances become alpha_t^2 v + sigma_t^2.
GaussianMixture diffuse(const GaussianMixture& gm, const NoiseSchedule& s,
                        double t);

double mixture_log_density(const GaussianMixture& gm, VecView x);
Vector mixture_score(const GaussianMixture& gm, VecView x);

// Exact score of the diffused mixture at time t.
Vector diffused_mixture_score(const GaussianMixture& gm,
                              const NoiseSchedule& schedule, VecView x,
                              double t);

// Unique minimizer of sum_i w_i L2^tau(x_i - v) by bisection on the
// first-order condition.
double expectile_solve(const Vector& values, const Vector& weights,
                       double tau);

// Solves -2 (a - a_tar) + inv_beta * score_t0(a) = 0 by damped Newton from
// a_tar, with a finite-difference Jacobian of the oracle score.
Vector srpo_fixed_point_quadratic(const Vector& a_tar, double inv_beta,
                                  const GaussianMixture& gm,
                                  const NoiseSchedule& schedule, double t0);

// Straight-line re-evaluation of a plain relu MLP (no residual blocks).
Vector naive_mlp_forward(const DenseNet& net, VecView input);

// Central finite differences of a scalar function.
double central_difference(const std::function<double(double)>& f, double x,
                          double h);

// ScoreModel backed by the closed-form mixture: the "perfect net" whose
// noise prediction is -sigma_t * diffused score.
class MixtureScoreModel final : public ScoreModel {
 public:
  MixtureScoreModel(GaussianMixture gm, NoiseSchedule schedule);

  std::size_t action_dim() const override { return gm_.dim(); }
  const NoiseSchedule& schedule() const override { return schedule_; }
  Vector predict_noise(VecView a_t, VecView state, double t) const override;
  Matrix noise_action_jacobian(VecView a_t, VecView state,
                               double t) const override;

 private:
  GaussianMixture gm_;
  NoiseSchedule schedule_;
};

// Samples from the mixture (test data generation).
Matrix sample_mixture(const GaussianMixture& gm, std::size_t n, Rng& rng);

}  // namespace srpo::oracle
