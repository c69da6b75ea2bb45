#pragma once
// Continuous-time variance-preserving forward diffusion.
//
//   alpha_t = exp(-t^2 (beta_max - beta_min)/4 - t beta_min/2)
//   sigma_t = sqrt(1 - alpha_t^2)
//
// so alpha_0 = 1, sigma_0 = 0 and alpha_t^2 + sigma_t^2 = 1 throughout.
// Drift/diffusion of the matching SDE in closed form:
//   f(t)   = d log(alpha_t)/dt = -(beta_min + t (beta_max - beta_min))/2
//   g^2(t) = d sigma_t^2/dt - 2 f(t) sigma_t^2
//          =  beta_min + t (beta_max - beta_min)  (= -2 f(t))

#include <utility>

#include "srpo/tensor.hpp"

namespace srpo {

class NoiseSchedule {
 public:
  explicit NoiseSchedule(double beta_min = 0.1, double beta_max = 20.0);

  double beta_min() const { return beta_min_; }
  double beta_max() const { return beta_max_; }

  // (alpha_t, sigma_t); t must lie in [0, 1].
  std::pair<double, double> alpha_sigma(double t) const;
  double alpha(double t) const { return alpha_sigma(t).first; }
  double sigma(double t) const { return alpha_sigma(t).second; }

  // (f(t), g^2(t)); t must lie in (0, 1].
  std::pair<double, double> drift_diffusion(double t) const;

  // a_t = alpha_t * a0 + sigma_t * noise
  Vector perturb(VecView a0, double t, VecView noise) const;

 private:
  double beta_min_;
  double beta_max_;
};

}  // namespace srpo
