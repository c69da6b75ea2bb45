#include "srpo/schedule.hpp"

#include <cmath>
#include <string>

#include "srpo/errors.hpp"

namespace srpo {

NoiseSchedule::NoiseSchedule(double beta_min, double beta_max)
    : beta_min_(beta_min), beta_max_(beta_max) {
  if (!(beta_min > 0.0) || !(beta_max > beta_min)) {
    throw ConfigError("noise schedule requires 0 < beta_min < beta_max");
  }
}

std::pair<double, double> NoiseSchedule::alpha_sigma(double t) const {
  if (!(t >= 0.0 && t <= 1.0)) {
    throw NumericError("diffusion time " + std::to_string(t) +
                       " outside [0, 1]");
  }
  const double exponent =
      -0.25 * t * t * (beta_max_ - beta_min_) - 0.5 * t * beta_min_;
  const double a = std::exp(exponent);
  const double s = std::sqrt(std::max(0.0, 1.0 - a * a));
  return {a, s};
}

std::pair<double, double> NoiseSchedule::drift_diffusion(double t) const {
  if (!(t > 0.0 && t <= 1.0)) {
    throw NumericError("diffusion time " + std::to_string(t) +
                       " outside (0, 1]");
  }
  const double beta_t = beta_min_ + t * (beta_max_ - beta_min_);
  return {-0.5 * beta_t, beta_t};
}

Vector NoiseSchedule::perturb(VecView a0, double t, VecView noise) const {
  const auto [a, s] = alpha_sigma(t);
  Vector out(a0.size());
  for (std::size_t i = 0; i < a0.size(); ++i) {
    out[i] = a * a0[i] + s * noise[i];
  }
  return out;
}

}  // namespace srpo
