#include "srpo/extraction.hpp"

#include <cmath>
#include <fstream>
#include <iostream>
#include <map>

#include "srpo/checkpoint.hpp"
#include "srpo/errors.hpp"
#include "srpo/kernels.hpp"

namespace srpo {

void SrpoConfig::validate() const {
  if (!(inv_beta >= 0.0)) throw ConfigError("inv_beta must be >= 0");
  if (!(t_lo > 0.0 && t_hi < 1.0 && t_lo < t_hi)) {
    throw ConfigError("extraction t range must satisfy 0 < lo < hi < 1");
  }
  if (omega_mode == OmegaMode::dirac_t0 &&
      !(dirac_t0 >= t_lo && dirac_t0 <= t_hi)) {
    throw ConfigError("dirac_t0 must lie inside the t range");
  }
  if (omega_mode == OmegaMode::custom && !omega) {
    throw ConfigError("custom omega mode needs an omega function");
  }
  if (mc_samples == 0) throw ConfigError("mc_samples must be positive");
}

PolicyNet::PolicyNet(const PolicyConfig& cfg, Rng& rng) : cfg_(cfg) {
  Rng net_rng = rng.split("policy/net");
  std::vector<std::size_t> dims{cfg.state_dim};
  if (cfg.state_dim > 0) {
    dims.insert(dims.end(), cfg.hidden.begin(), cfg.hidden.end());
  }
  dims.push_back(cfg.action_dim);
  net_ = DenseNet::mlp(dims, Activation::relu, Activation::none, net_rng);
}

PolicyNet::PolicyNet(PolicyConfig cfg, DenseNet net)
    : cfg_(std::move(cfg)), net_(std::move(net)) {
  if (net_.input_dim() != cfg_.state_dim ||
      net_.output_dim() != cfg_.action_dim) {
    throw DimensionError("policy net does not match its config layout");
  }
}

namespace {

Vector apply_bounds(const PolicyConfig& cfg, VecView raw) {
  if (!cfg.bounds.has_value()) return Vector(raw.begin(), raw.end());
  const auto& [lo, hi] = *cfg.bounds;
  Vector out(raw.size());
  for (std::size_t i = 0; i < raw.size(); ++i) {
    out[i] = lo[i] + (hi[i] - lo[i]) * 0.5 * (std::tanh(raw[i]) + 1.0);
  }
  return out;
}

}  // namespace

Vector PolicyNet::act(VecView state) const {
  return apply_bounds(cfg_, forward(net_, state, Mode::eval));
}

Vector PolicyNet::act_cached(VecView state, ForwardCache& cache,
                             Vector& raw) const {
  raw = forward(net_, state, Mode::eval, &cache);
  return apply_bounds(cfg_, raw);
}

Vector PolicyNet::upstream_from_action_grad(VecView action_grad,
                                            VecView raw) const {
  if (!cfg_.bounds.has_value()) {
    return Vector(action_grad.begin(), action_grad.end());
  }
  const auto& [lo, hi] = *cfg_.bounds;
  Vector up(action_grad.size());
  for (std::size_t i = 0; i < up.size(); ++i) {
    const double th = std::tanh(raw[i]);
    up[i] = action_grad[i] * (hi[i] - lo[i]) * 0.5 * (1.0 - th * th);
  }
  return up;
}

void PolicyNet::set_constant_action(VecView action) {
  if (cfg_.state_dim != 0 || cfg_.bounds.has_value()) {
    throw ConfigError(
        "set_constant_action needs the unbounded bias-only policy layout");
  }
  auto& head = std::get<Linear>(net_.layers().back());
  std::copy(action.begin(), action.end(), head.b.begin());
}

void PolicyNet::save(const std::filesystem::path& path) const {
  NetCheckpoint ckpt;
  ckpt.net = net_;
  ckpt.extra = {{"model", "policy"},
                {"state_dim", cfg_.state_dim},
                {"action_dim", cfg_.action_dim},
                {"hidden", cfg_.hidden}};
  if (cfg_.bounds.has_value()) {
    ckpt.extra["bounds_lo"] = cfg_.bounds->first;
    ckpt.extra["bounds_hi"] = cfg_.bounds->second;
  }
  save_checkpoint(ckpt, path);
}

PolicyNet PolicyNet::load(const std::filesystem::path& path) {
  NetCheckpoint ckpt = load_checkpoint(path);
  if (ckpt.extra.value("model", "") != "policy") {
    throw ConfigError("checkpoint is not a policy: " + path.string());
  }
  PolicyConfig cfg;
  cfg.state_dim = ckpt.extra.at("state_dim").get<std::size_t>();
  cfg.action_dim = ckpt.extra.at("action_dim").get<std::size_t>();
  cfg.hidden = ckpt.extra.at("hidden").get<std::vector<std::size_t>>();
  if (ckpt.extra.contains("bounds_lo")) {
    cfg.bounds = {ckpt.extra["bounds_lo"].get<Vector>(),
                  ckpt.extra["bounds_hi"].get<Vector>()};
  }
  return PolicyNet(std::move(cfg), std::move(ckpt.net));
}

Vector regularizer_draw(const ScoreModel& behavior, VecView action,
                        VecView state, const SrpoConfig& cfg, Rng& rng) {
  const NoiseSchedule& schedule = behavior.schedule();
  const double t = cfg.omega_mode == OmegaMode::dirac_t0
                       ? cfg.dirac_t0
                       : rng.uniform(cfg.t_lo, cfg.t_hi);
  const auto [alpha, sigma] = schedule.alpha_sigma(t);
  if (sigma < 1e-6) {
    throw NumericError("regularizer draw: sigma underflow at t=" +
                       std::to_string(t));
  }
  Vector eps(action.size());
  Vector a_t(action.size());
  for (std::size_t i = 0; i < action.size(); ++i) {
    eps[i] = rng.normal();
    a_t[i] = alpha * action[i] + sigma * eps[i];
  }
  Vector pred = behavior.predict_noise(a_t, state, t);
  double w = 0.0;
  switch (cfg.omega_mode) {
    case OmegaMode::dirac_t0:
      w = alpha / sigma;
      break;
    case OmegaMode::sigma_sq:
      w = sigma * sigma;
      break;
    case OmegaMode::custom:
      w = cfg.omega(t);
      break;
  }
  for (std::size_t i = 0; i < pred.size(); ++i) {
    pred[i] = w * (pred[i] - (cfg.use_baseline ? eps[i] : 0.0));
  }
  return pred;
}

Vector srpo_gradient_at_action(VecView action, VecView state,
                               const CriticModel& critic,
                               const ScoreModel& behavior,
                               const SrpoConfig& cfg, Rng& rng) {
  cfg.validate();
  Vector grad = critic.action_gradient(state, action);
  if (cfg.beta_mode == BetaMode::grad_normalized) {
    const double norm =
        std::sqrt(kernels::ops().sumsq(grad.data(), grad.size()));
    for (double& g : grad) g /= norm + 1e-8;
  }
  if (cfg.inv_beta == 0.0) return grad;

  if (cfg.omega_mode == OmegaMode::dirac_t0) {
    // The sigma/alpha compensation and omega = alpha/sigma cancel against
    // the score's 1/sigma analytically; evaluate the score once at t0.
    const Vector sc = score(behavior, action, state, cfg.dirac_t0);
    for (std::size_t i = 0; i < grad.size(); ++i) {
      grad[i] += cfg.inv_beta * sc[i];
    }
  } else {
    Vector mc(action.size(), 0.0);
    for (std::size_t k = 0; k < cfg.mc_samples; ++k) {
      const Vector draw = regularizer_draw(behavior, action, state, cfg, rng);
      for (std::size_t i = 0; i < mc.size(); ++i) mc[i] += draw[i];
    }
    const double inv_n = 1.0 / static_cast<double>(cfg.mc_samples);
    for (std::size_t i = 0; i < grad.size(); ++i) {
      grad[i] -= cfg.inv_beta * inv_n * mc[i];
    }
  }
  if (!kernels::ops().all_finite(grad.data(), grad.size())) {
    throw NumericError("extraction gradient is non-finite");
  }
  return grad;
}

ExtractionResult run_policy_ascent(
    PolicyNet& policy, const Matrix& states,
    const std::function<Vector(VecView, VecView, Rng&)>& action_gradient,
    std::uint64_t steps, std::size_t batch_size, const AdamConfig& adam,
    Rng& rng, const ExtractionDiagnostics& diag,
    const CriticModel* diag_critic, const ScoreModel* diag_behavior) {
  if (states.cols != policy.config().state_dim) {
    throw DimensionError("extraction states do not match the policy input");
  }
  if (states.rows == 0) throw ConfigError("extraction needs at least one state");
  OptimizerState opt(policy.net(), adam);
  Rng batch_rng = rng.split("extract/batch");
  Rng grad_rng = rng.split("extract/grad");
  ExtractionResult result;
  const std::size_t n = states.rows;
  Gradients grads = zeros_like(policy.net());
  for (std::uint64_t step = 1; step <= steps; ++step) {
    grads.zero();
    const std::size_t b = std::min<std::size_t>(batch_size, n);
    double grad_norm_acc = 0.0;
    for (std::size_t i = 0; i < b; ++i) {
      const std::size_t idx = batch_rng.below(n);
      const VecView s = states.row_span(idx);
      ForwardCache cache;
      Vector raw;
      const Vector a = policy.act_cached(s, cache, raw);
      const Vector ga = action_gradient(a, s, grad_rng);
      grad_norm_acc += std::sqrt(squared_norm(ga));
      // Ascend the objective: feed the negated action gradient into the
      // minimizing optimizer, scaled to a batch mean.
      Vector up = policy.upstream_from_action_grad(ga, raw);
      for (double& u : up) u *= -1.0 / static_cast<double>(b);
      backward_params(policy.net(), cache, up, grads);
    }
    opt.step(policy.net(), grads);
    if (diag.interval > 0 && (step % diag.interval == 0 || step == steps)) {
      DiagRow row;
      row.step = step;
      row.mean_grad_norm = grad_norm_acc / static_cast<double>(b);
      const std::size_t m = std::min<std::size_t>(diag.max_states, n);
      double q_acc = 0.0;
      double ld_acc = 0.0;
      for (std::size_t i = 0; i < m; ++i) {
        const VecView s = states.row_span(i);
        const Vector a = policy.act(s);
        if (diag_critic != nullptr) q_acc += diag_critic->value(s, a);
        if (diag_behavior != nullptr) {
          ld_acc += log_density(*diag_behavior, a, s, 0.02, diag.ode_steps);
        }
      }
      row.mean_q = q_acc / static_cast<double>(m);
      row.mean_log_density = ld_acc / static_cast<double>(m);
      result.diagnostics.push_back(row);
    }
  }
  if (!diag.csv.empty() && !result.diagnostics.empty()) {
    std::ofstream out(diag.csv);
    if (!out) {
      throw DependencyError("cannot write diagnostics: " + diag.csv.string());
    }
    out << "step,mean_q,mean_log_density,mean_grad_norm\n";
    out.precision(17);
    for (const auto& row : result.diagnostics) {
      out << row.step << ',' << row.mean_q << ',' << row.mean_log_density
          << ',' << row.mean_grad_norm << '\n';
    }
  }
  return result;
}

ExtractionResult extract_policy(PolicyNet& policy, const Matrix& states,
                                const CriticModel& critic,
                                const ScoreModel& behavior,
                                const SrpoConfig& cfg, Rng& rng,
                                const ExtractionDiagnostics& diag) {
  cfg.validate();
  auto grad_fn = [&](VecView a, VecView s, Rng& r) {
    return srpo_gradient_at_action(a, s, critic, behavior, cfg, r);
  };
  return run_policy_ascent(policy, states, grad_fn, cfg.steps, cfg.batch_size,
                           cfg.adam, rng, diag, &critic, &behavior);
}

ForwardKlResult forward_kl_baseline(const StateActionBatch& data,
                                    const CriticModel& critic,
                                    const PolicyConfig& pcfg,
                                    const ForwardKlConfig& cfg, Rng& rng) {
  if (data.actions.rows == 0) {
    throw ConfigError("weighted regression needs a nonempty dataset");
  }
  ForwardKlResult result{PolicyNet(pcfg, rng), false};
  PolicyNet& policy = result.policy;
  OptimizerState opt(policy.net(), cfg.adam);
  Rng batch_rng = rng.split("fkl/batch");
  const std::size_t n = data.actions.rows;
  const double inv_var = 1.0 / (cfg.policy_sigma * cfg.policy_sigma);

  // Exponentiated weights over the full dataset, computed once (the critic
  // is frozen).
  Vector weights(n);
  for (std::size_t i = 0; i < n; ++i) {
    const double q = critic.value(data.states.row_span(i),
                                  data.actions.row_span(i));
    double logw = cfg.beta * q;
    if (logw > cfg.log_weight_clip) {
      logw = cfg.log_weight_clip;
      if (!result.clipped_weights) {
        std::cerr << "forward_kl_baseline: weights clipped at exp("
                  << cfg.log_weight_clip << ")\n";
      }
      result.clipped_weights = true;
    }
    weights[i] = std::exp(logw);
  }
  const double mean_w =
      kernels::ops().sum(weights.data(), n) / static_cast<double>(n);

  Gradients grads = zeros_like(policy.net());
  for (std::uint64_t step = 1; step <= cfg.steps; ++step) {
    grads.zero();
    const std::size_t b = std::min<std::size_t>(cfg.batch_size, n);
    for (std::size_t i = 0; i < b; ++i) {
      const std::size_t idx = batch_rng.below(n);
      const VecView s = data.states.row_span(idx);
      const VecView a = data.actions.row_span(idx);
      ForwardCache cache;
      Vector raw;
      const Vector m = policy.act_cached(s, cache, raw);
      Vector action_grad(m.size());
      // d/dm of -w |a - m|^2 / (2 sigma^2), ascended.
      for (std::size_t c = 0; c < m.size(); ++c) {
        action_grad[c] = weights[idx] / mean_w * (a[c] - m[c]) * inv_var;
      }
      Vector up = policy.upstream_from_action_grad(action_grad, raw);
      for (double& u : up) u *= -1.0 / static_cast<double>(b);
      backward_params(policy.net(), cache, up, grads);
    }
    opt.step(policy.net(), grads);
  }
  return result;
}

GaussianBehaviorFit::GaussianBehaviorFit(const StateActionBatch& data) {
  if (data.actions.rows == 0) {
    throw ConfigError("gaussian fit needs a nonempty dataset");
  }
  std::map<Vector, std::vector<std::size_t>> groups;
  for (std::size_t i = 0; i < data.actions.rows; ++i) {
    Vector key(data.states.row(i), data.states.row(i) + data.states.cols);
    groups[std::move(key)].push_back(i);
  }
  const std::size_t d = data.actions.cols;
  for (const auto& [state, rows] : groups) {
    GaussianFit fit;
    fit.mean.assign(d, 0.0);
    for (const std::size_t i : rows) {
      for (std::size_t c = 0; c < d; ++c) {
        fit.mean[c] += data.actions.at(i, c);
      }
    }
    for (double& v : fit.mean) v /= static_cast<double>(rows.size());
    double var = 0.0;
    for (const std::size_t i : rows) {
      for (std::size_t c = 0; c < d; ++c) {
        const double dv = data.actions.at(i, c) - fit.mean[c];
        var += dv * dv;
      }
    }
    fit.variance =
        std::max(var / static_cast<double>(rows.size() * d), 1e-8);
    fits_.emplace_back(state, std::move(fit));
  }
}

const GaussianFit& GaussianBehaviorFit::lookup(VecView state) const {
  for (const auto& [key, fit] : fits_) {
    if (key.size() == state.size() &&
        std::equal(key.begin(), key.end(), state.begin())) {
      return fit;
    }
  }
  throw DependencyError("no gaussian fit for the queried state");
}

ExtractionResult gaussian_reverse_kl_baseline(PolicyNet& policy,
                                              const Matrix& states,
                                              const StateActionBatch& data,
                                              const CriticModel& critic,
                                              const SrpoConfig& cfg,
                                              Rng& rng) {
  cfg.validate();
  GaussianBehaviorFit fit(data);
  auto grad_fn = [&](VecView a, VecView s, Rng&) {
    Vector g = critic.action_gradient(s, a);
    if (cfg.beta_mode == BetaMode::grad_normalized) {
      const double norm = std::sqrt(kernels::ops().sumsq(g.data(), g.size()));
      for (double& v : g) v /= norm + 1e-8;
    }
    const GaussianFit& gf = fit.lookup(s);
    for (std::size_t c = 0; c < g.size(); ++c) {
      g[c] -= cfg.inv_beta * (a[c] - gf.mean[c]) / gf.variance;
    }
    return g;
  };
  return run_policy_ascent(policy, states, grad_fn, cfg.steps, cfg.batch_size,
                           cfg.adam, rng, ExtractionDiagnostics{}, &critic,
                           nullptr);
}

}  // namespace srpo
