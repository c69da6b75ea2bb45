#include "oracles.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>
#include <stdexcept>

namespace srpo::oracle {

void GaussianMixture::validate() const {
  if (weights.empty() || weights.size() != means.size() ||
      weights.size() != variances.size()) {
    throw std::invalid_argument("mixture component counts disagree");
  }
  double total = 0.0;
  for (const double w : weights) {
    if (!(w > 0.0)) throw std::invalid_argument("mixture weights must be > 0");
    total += w;
  }
  if (std::abs(total - 1.0) > 1e-12) {
    throw std::invalid_argument("mixture weights must sum to 1");
  }
  for (const auto& m : means) {
    if (m.size() != dim()) {
      throw std::invalid_argument("mixture means must share a dimension");
    }
  }
  for (const double v : variances) {
    if (!(v > 0.0)) throw std::invalid_argument("variances must be positive");
  }
}

GaussianMixture diffuse(const GaussianMixture& gm, const NoiseSchedule& s,
                        double t) {
  const auto [alpha, sigma] = s.alpha_sigma(t);
  GaussianMixture out = gm;
  for (auto& m : out.means) {
    for (double& x : m) x *= alpha;
  }
  for (double& v : out.variances) {
    v = alpha * alpha * v + sigma * sigma;
  }
  return out;
}

namespace {

double component_log_density(VecView x, const Vector& mean, double var) {
  const auto d = static_cast<double>(x.size());
  double q = 0.0;
  for (std::size_t i = 0; i < x.size(); ++i) {
    const double dv = x[i] - mean[i];
    q += dv * dv;
  }
  return -0.5 * d * std::log(2.0 * std::numbers::pi * var) - 0.5 * q / var;
}

// Posterior responsibilities via a log-sum-exp.
Vector responsibilities(const GaussianMixture& gm, VecView x,
                        double* log_density_out) {
  const std::size_t k = gm.weights.size();
  Vector logits(k);
  double lmax = -std::numeric_limits<double>::infinity();
  for (std::size_t i = 0; i < k; ++i) {
    logits[i] = std::log(gm.weights[i]) +
                component_log_density(x, gm.means[i], gm.variances[i]);
    lmax = std::max(lmax, logits[i]);
  }
  double z = 0.0;
  for (std::size_t i = 0; i < k; ++i) z += std::exp(logits[i] - lmax);
  if (log_density_out != nullptr) *log_density_out = lmax + std::log(z);
  Vector r(k);
  for (std::size_t i = 0; i < k; ++i) r[i] = std::exp(logits[i] - lmax) / z;
  return r;
}

}  // namespace

double mixture_log_density(const GaussianMixture& gm, VecView x) {
  gm.validate();
  double ld = 0.0;
  responsibilities(gm, x, &ld);
  return ld;
}

Vector mixture_score(const GaussianMixture& gm, VecView x) {
  gm.validate();
  const Vector r = responsibilities(gm, x, nullptr);
  Vector s(x.size(), 0.0);
  for (std::size_t i = 0; i < gm.weights.size(); ++i) {
    for (std::size_t c = 0; c < x.size(); ++c) {
      s[c] += r[i] * (gm.means[i][c] - x[c]) / gm.variances[i];
    }
  }
  return s;
}

Vector diffused_mixture_score(const GaussianMixture& gm,
                              const NoiseSchedule& schedule, VecView x,
                              double t) {
  return mixture_score(diffuse(gm, schedule, t), x);
}

double expectile_solve(const Vector& values, const Vector& weights,
                       double tau) {
  if (values.empty() || values.size() != weights.size()) {
    throw std::invalid_argument("expectile_solve needs matched nonempty data");
  }
  if (!(tau > 0.0 && tau < 1.0)) {
    throw std::invalid_argument("tau must lie in (0, 1)");
  }
  auto foc = [&](double v) {
    double g = 0.0;
    for (std::size_t i = 0; i < values.size(); ++i) {
      const double u = values[i] - v;
      g += weights[i] * (u < 0.0 ? 1.0 - tau : tau) * u;
    }
    return g;
  };
  double lo = *std::min_element(values.begin(), values.end());
  double hi = *std::max_element(values.begin(), values.end());
  if (lo == hi) return lo;
  for (int it = 0; it < 200; ++it) {
    const double mid = 0.5 * (lo + hi);
    if (foc(mid) > 0.0) {
      lo = mid;
    } else {
      hi = mid;
    }
  }
  return 0.5 * (lo + hi);
}

Vector srpo_fixed_point_quadratic(const Vector& a_tar, double inv_beta,
                                  const GaussianMixture& gm,
                                  const NoiseSchedule& schedule, double t0) {
  const std::size_t d = a_tar.size();
  const GaussianMixture diffused = diffuse(gm, schedule, t0);
  auto g = [&](const Vector& a) {
    Vector s = mixture_score(diffused, a);
    Vector out(d);
    for (std::size_t i = 0; i < d; ++i) {
      out[i] = -2.0 * (a[i] - a_tar[i]) + inv_beta * s[i];
    }
    return out;
  };
  Vector a = a_tar;
  const double h = 1e-6;
  for (int it = 0; it < 100; ++it) {
    const Vector g0 = g(a);
    double gnorm = 0.0;
    for (const double v : g0) gnorm += v * v;
    if (std::sqrt(gnorm) < 1e-12) break;
    // Finite-difference Jacobian (d is 1 or 2 here).
    Matrix jac(d, d);
    for (std::size_t j = 0; j < d; ++j) {
      Vector ap = a, am = a;
      ap[j] += h;
      am[j] -= h;
      const Vector gp = g(ap);
      const Vector gmn = g(am);
      for (std::size_t i = 0; i < d; ++i) {
        jac.at(i, j) = (gp[i] - gmn[i]) / (2.0 * h);
      }
    }
    Vector step(d, 0.0);
    if (d == 1) {
      step[0] = -g0[0] / jac.at(0, 0);
    } else if (d == 2) {
      const double det =
          jac.at(0, 0) * jac.at(1, 1) - jac.at(0, 1) * jac.at(1, 0);
      step[0] = -(jac.at(1, 1) * g0[0] - jac.at(0, 1) * g0[1]) / det;
      step[1] = -(-jac.at(1, 0) * g0[0] + jac.at(0, 0) * g0[1]) / det;
    } else {
      throw std::invalid_argument("fixed point oracle supports d <= 2");
    }
    // Damping: halve until the residual shrinks.
    double lambda = 1.0;
    for (int back = 0; back < 30; ++back) {
      Vector trial(d);
      for (std::size_t i = 0; i < d; ++i) trial[i] = a[i] + lambda * step[i];
      const Vector gt = g(trial);
      double tnorm = 0.0;
      for (const double v : gt) tnorm += v * v;
      if (tnorm < gnorm) {
        a = trial;
        break;
      }
      lambda *= 0.5;
    }
  }
  return a;
}

Vector naive_mlp_forward(const DenseNet& net, VecView input) {
  Vector cur(input.begin(), input.end());
  for (const auto& layer : net.layers()) {
    const auto* lin = std::get_if<Linear>(&layer);
    if (lin == nullptr) {
      throw std::invalid_argument("naive forward handles plain MLPs only");
    }
    Vector next(lin->w.rows, 0.0);
    for (std::size_t r = 0; r < lin->w.rows; ++r) {
      double acc = lin->b[r];
      for (std::size_t c = 0; c < lin->w.cols; ++c) {
        acc += lin->w.at(r, c) * cur[c];
      }
      next[r] = lin->act == Activation::relu && acc < 0.0 ? 0.0 : acc;
    }
    cur = std::move(next);
  }
  return cur;
}

double central_difference(const std::function<double(double)>& f, double x,
                          double h) {
  return (f(x + h) - f(x - h)) / (2.0 * h);
}

MixtureScoreModel::MixtureScoreModel(GaussianMixture gm,
                                     NoiseSchedule schedule)
    : gm_(std::move(gm)), schedule_(schedule) {
  gm_.validate();
}

Vector MixtureScoreModel::predict_noise(VecView a_t, VecView, double t) const {
  const double sigma = schedule_.sigma(t);
  Vector s = diffused_mixture_score(gm_, schedule_, a_t, t);
  for (double& v : s) v *= -sigma;
  return s;
}

Matrix MixtureScoreModel::noise_action_jacobian(VecView a_t, VecView,
                                                double t) const {
  const double sigma = schedule_.sigma(t);
  const GaussianMixture diffused = diffuse(gm_, schedule_, t);
  const std::size_t d = a_t.size();
  const Vector r = responsibilities(diffused, a_t, nullptr);
  // Hessian of log density: sum_i r_i (g_i g_i^T - I/v_i) - s s^T.
  std::vector<Vector> comp_scores(diffused.weights.size(), Vector(d));
  Vector s(d, 0.0);
  for (std::size_t i = 0; i < diffused.weights.size(); ++i) {
    for (std::size_t c = 0; c < d; ++c) {
      comp_scores[i][c] =
          (diffused.means[i][c] - a_t[c]) / diffused.variances[i];
      s[c] += r[i] * comp_scores[i][c];
    }
  }
  Matrix hess(d, d);
  for (std::size_t a = 0; a < d; ++a) {
    for (std::size_t b = 0; b < d; ++b) {
      double h = -s[a] * s[b];
      for (std::size_t i = 0; i < diffused.weights.size(); ++i) {
        h += r[i] * comp_scores[i][a] * comp_scores[i][b];
        if (a == b) h -= r[i] / diffused.variances[i];
      }
      hess.at(a, b) = h;
    }
  }
  // eps(x) = -sigma * score(x), so d eps / d x = -sigma * Hessian.
  for (double& v : hess.data) v *= -sigma;
  return hess;
}

Matrix sample_mixture(const GaussianMixture& gm, std::size_t n, Rng& rng) {
  gm.validate();
  Matrix out(n, gm.dim());
  for (std::size_t i = 0; i < n; ++i) {
    const double u = rng.uniform();
    double acc = 0.0;
    std::size_t pick = gm.weights.size() - 1;
    for (std::size_t k = 0; k < gm.weights.size(); ++k) {
      acc += gm.weights[k];
      if (u < acc) {
        pick = k;
        break;
      }
    }
    const double sd = std::sqrt(gm.variances[pick]);
    for (std::size_t c = 0; c < gm.dim(); ++c) {
      out.at(i, c) = gm.means[pick][c] + sd * rng.normal();
    }
  }
  return out;
}

}  // namespace srpo::oracle
