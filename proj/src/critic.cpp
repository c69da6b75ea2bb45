#include "srpo/critic.hpp"

#include <cmath>
#include <fstream>

#include "srpo/checkpoint.hpp"
#include "srpo/errors.hpp"
#include "srpo/kernels.hpp"

namespace srpo {

double expectile_loss(double residual, double tau) {
  if (!(tau > 0.0 && tau < 1.0)) {
    throw ConfigError("expectile tau must lie in (0, 1)");
  }
  const double w = residual < 0.0 ? 1.0 - tau : tau;
  return w * residual * residual;
}

double QuadraticQ::value(VecView, VecView action) const {
  double s = 0.0;
  for (std::size_t i = 0; i < action.size(); ++i) {
    const double d = action[i] - a_tar_[i];
    s += d * d;
  }
  return -s;
}

Vector QuadraticQ::action_gradient(VecView, VecView action) const {
  Vector g(action.size());
  for (std::size_t i = 0; i < action.size(); ++i) {
    g[i] = -2.0 * (action[i] - a_tar_[i]);
  }
  return g;
}

namespace {

std::vector<std::size_t> mlp_dims(std::size_t in,
                                  const std::vector<std::size_t>& hidden) {
  std::vector<std::size_t> dims{in};
  dims.insert(dims.end(), hidden.begin(), hidden.end());
  dims.push_back(1);
  return dims;
}

void validate_critic_config(const CriticConfig& cfg) {
  if (!(cfg.tau > 0.0 && cfg.tau < 1.0)) {
    throw ConfigError("critic tau must lie in (0, 1)");
  }
  if (!(cfg.discount >= 0.0 && cfg.discount < 1.0)) {
    throw ConfigError("critic discount must lie in [0, 1)");
  }
  if (!(cfg.target_ema > 0.0 && cfg.target_ema <= 1.0)) {
    throw ConfigError("critic target ema rate must lie in (0, 1]");
  }
}

}  // namespace

CriticPair::CriticPair(const CriticConfig& cfg, Rng& rng) : cfg_(cfg) {
  validate_critic_config(cfg_);
  Rng qr = rng.split("critic/q");
  Rng vr = rng.split("critic/v");
  q_ = DenseNet::mlp(mlp_dims(cfg.state_dim + cfg.action_dim, cfg.hidden),
                     Activation::relu, Activation::none, qr);
  v_ = DenseNet::mlp(mlp_dims(cfg.state_dim, cfg.hidden), Activation::relu,
                     Activation::none, vr);
  target_q_ = q_;
  q_opt_ = OptimizerState(q_, cfg.adam);
  v_opt_ = OptimizerState(v_, cfg.adam);
}

CriticPair::CriticPair(CriticConfig cfg, DenseNet q, DenseNet v,
                       DenseNet target_q)
    : cfg_(std::move(cfg)),
      q_(std::move(q)),
      v_(std::move(v)),
      target_q_(std::move(target_q)) {
  validate_critic_config(cfg_);
  q_opt_ = OptimizerState(q_, cfg_.adam);
  v_opt_ = OptimizerState(v_, cfg_.adam);
}

namespace {

Vector joined(VecView state, VecView action) {
  Vector in(state.size() + action.size());
  std::copy(state.begin(), state.end(), in.begin());
  std::copy(action.begin(), action.end(), in.begin() + state.size());
  return in;
}

}  // namespace

double CriticPair::value(VecView state, VecView action) const {
  return forward(q_, joined(state, action))[0];
}

double CriticPair::target_q_value(VecView state, VecView action) const {
  return forward(target_q_, joined(state, action))[0];
}

double CriticPair::v_value(VecView state) const { return forward(v_, state)[0]; }

Vector CriticPair::action_gradient(VecView state, VecView action) const {
  ForwardCache cache;
  forward(q_, joined(state, action), Mode::eval, &cache);
  const Vector full = backward_input(q_, cache, Vector{1.0});
  return Vector(full.begin() + static_cast<std::ptrdiff_t>(state.size()),
                full.end());
}

Matrix CriticPair::batch_inputs(const std::vector<Transition>& batch,
                                bool next) const {
  Matrix in(batch.size(), cfg_.state_dim + (next ? 0 : cfg_.action_dim));
  for (std::size_t i = 0; i < batch.size(); ++i) {
    const Vector& s = next ? batch[i].next_state : batch[i].state;
    if (s.size() != cfg_.state_dim) {
      throw DimensionError("transition state width mismatch");
    }
    std::copy(s.begin(), s.end(), in.row(i));
    if (!next) {
      if (batch[i].action.size() != cfg_.action_dim) {
        throw DimensionError("transition action width mismatch");
      }
      std::copy(batch[i].action.begin(), batch[i].action.end(),
                in.row(i) + cfg_.state_dim);
    }
  }
  return in;
}

double CriticPair::v_step(const std::vector<Transition>& batch) {
  if (batch.empty()) throw ConfigError("v_step needs a nonempty batch");
  // Targets come from the slow Q copy.
  Matrix sa(batch.size(), cfg_.state_dim + cfg_.action_dim);
  Matrix s(batch.size(), cfg_.state_dim);
  for (std::size_t i = 0; i < batch.size(); ++i) {
    std::copy(batch[i].state.begin(), batch[i].state.end(), sa.row(i));
    std::copy(batch[i].action.begin(), batch[i].action.end(),
              sa.row(i) + cfg_.state_dim);
    std::copy(batch[i].state.begin(), batch[i].state.end(), s.row(i));
  }
  const Matrix qv = forward_batch(target_q_, sa, Mode::eval);
  ForwardCache cache;
  const Matrix vv = forward_batch(v_, s, Mode::train, &cache);
  const double inv_b = 1.0 / static_cast<double>(batch.size());
  Matrix upstream(batch.size(), 1);
  double loss = 0.0;
  for (std::size_t i = 0; i < batch.size(); ++i) {
    const double u = qv.at(i, 0) - vv.at(i, 0);
    const double w = u < 0.0 ? 1.0 - cfg_.tau : cfg_.tau;
    loss += w * u * u;
    upstream.at(i, 0) = -2.0 * w * u * inv_b;  // d loss / d V
  }
  loss *= inv_b;
  Gradients grads = zeros_like(v_);
  backward_batch(v_, cache, upstream, &grads, nullptr);
  v_opt_.step(v_, grads);
  return loss;
}

double CriticPair::q_step(const std::vector<Transition>& batch) {
  if (batch.empty()) throw ConfigError("q_step needs a nonempty batch");
  Matrix sa = batch_inputs(batch, false);
  Matrix sn = batch_inputs(batch, true);
  const Matrix vn = forward_batch(v_, sn, Mode::eval);
  ForwardCache cache;
  const Matrix qv = forward_batch(q_, sa, Mode::train, &cache);
  const double inv_b = 1.0 / static_cast<double>(batch.size());
  Matrix upstream(batch.size(), 1);
  double loss = 0.0;
  for (std::size_t i = 0; i < batch.size(); ++i) {
    const double vnext = batch[i].terminal ? 0.0 : vn.at(i, 0);
    const double target = batch[i].reward + cfg_.discount * vnext;
    const double r = qv.at(i, 0) - target;
    loss += r * r;
    upstream.at(i, 0) = 2.0 * r * inv_b;
  }
  loss *= inv_b;
  Gradients grads = zeros_like(q_);
  backward_batch(q_, cache, upstream, &grads, nullptr);
  q_opt_.step(q_, grads);
  update_target();
  return loss;
}

void CriticPair::update_target() {
  const double rho = cfg_.target_ema;
  auto tp = target_q_.param_refs();
  auto qp = q_.param_refs();
  for (std::size_t i = 0; i < tp.size(); ++i) {
    for (std::size_t j = 0; j < tp[i].size; ++j) {
      tp[i].data[j] = (1.0 - rho) * tp[i].data[j] + rho * qp[i].data[j];
    }
  }
}

void CriticPair::save(const std::filesystem::path& dir) const {
  std::filesystem::create_directories(dir);
  nlohmann::json extra = {{"model", "critic"},
                          {"state_dim", cfg_.state_dim},
                          {"action_dim", cfg_.action_dim},
                          {"hidden", cfg_.hidden},
                          {"tau", cfg_.tau},
                          {"discount", cfg_.discount},
                          {"target_ema", cfg_.target_ema}};
  NetCheckpoint q;
  q.net = q_;
  q.extra = extra;
  NetCheckpoint v;
  v.net = v_;
  v.extra = extra;
  NetCheckpoint t;
  t.net = target_q_;
  t.extra = extra;
  save_checkpoint(q, dir / "q.ckpt");
  save_checkpoint(v, dir / "v.ckpt");
  save_checkpoint(t, dir / "target_q.ckpt");
}

CriticPair CriticPair::load(const std::filesystem::path& dir) {
  NetCheckpoint q = load_checkpoint(dir / "q.ckpt");
  NetCheckpoint v = load_checkpoint(dir / "v.ckpt");
  NetCheckpoint t = load_checkpoint(dir / "target_q.ckpt");
  if (q.extra.value("model", "") != "critic") {
    throw ConfigError("checkpoint is not a critic: " + dir.string());
  }
  CriticConfig cfg;
  cfg.state_dim = q.extra.at("state_dim").get<std::size_t>();
  cfg.action_dim = q.extra.at("action_dim").get<std::size_t>();
  cfg.hidden = q.extra.at("hidden").get<std::vector<std::size_t>>();
  cfg.tau = q.extra.at("tau").get<double>();
  cfg.discount = q.extra.at("discount").get<double>();
  cfg.target_ema = q.extra.at("target_ema").get<double>();
  return CriticPair(cfg, std::move(q.net), std::move(v.net),
                    std::move(t.net));
}

CriticCurve train_critic(CriticPair& critic, const MdpDataset& data,
                         const CriticTrainConfig& cfg, Rng& rng) {
  if (data.transitions.empty()) {
    throw ConfigError("critic training needs a nonempty dataset");
  }
  Rng batch_rng = rng.split("critic/batch");
  CriticCurve curve;
  std::vector<Transition> batch;
  const std::size_t n = data.transitions.size();
  for (std::uint64_t step = 1; step <= cfg.steps; ++step) {
    batch.clear();
    const std::size_t b = std::min<std::size_t>(cfg.batch_size, n);
    for (std::size_t i = 0; i < b; ++i) {
      batch.push_back(data.transitions[batch_rng.below(n)]);
    }
    const double vloss = critic.v_step(batch);
    const double qloss = critic.q_step(batch);
    if (step == 1 || step % cfg.log_interval == 0 || step == cfg.steps) {
      curve.steps.push_back(step);
      curve.v_losses.push_back(vloss);
      curve.q_losses.push_back(qloss);
    }
  }
  if (!cfg.loss_csv.empty()) {
    std::ofstream out(cfg.loss_csv);
    if (!out) {
      throw DependencyError("cannot write loss curve: " +
                            cfg.loss_csv.string());
    }
    out << "step,v_loss,q_loss\n";
    out.precision(17);
    for (std::size_t i = 0; i < curve.steps.size(); ++i) {
      out << curve.steps[i] << ',' << curve.v_losses[i] << ','
          << curve.q_losses[i] << '\n';
    }
  }
  return curve;
}

}  // namespace srpo
