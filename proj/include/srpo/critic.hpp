#pragma once
// Q / V estimation: implicit Q-learning on offline datasets (expectile
// value regression + one-step Bellman Q regression with an EMA target), and
// the analytic quadratic Q used by the 2D bandit experiments.

#include <cstdint>
#include <filesystem>
#include <vector>

#include "srpo/datasets.hpp"
#include "srpo/net.hpp"
#include "srpo/optim.hpp"
#include "srpo/rng.hpp"

namespace srpo {

// |tau - 1(u < 0)| * u^2
double expectile_loss(double residual, double tau);

// What policy extraction needs from any critic.
class CriticModel {
 public:
  virtual ~CriticModel() = default;
  virtual double value(VecView state, VecView action) const = 0;
  virtual Vector action_gradient(VecView state, VecView action) const = 0;
};

// Q(a) = -|a - a_tar|^2 with exact gradient -2 (a - a_tar).
class QuadraticQ final : public CriticModel {
 public:
  explicit QuadraticQ(Vector a_tar) : a_tar_(std::move(a_tar)) {}
  const Vector& target() const { return a_tar_; }
  double value(VecView state, VecView action) const override;
  Vector action_gradient(VecView state, VecView action) const override;

 private:
  Vector a_tar_;
};

struct CriticConfig {
  std::size_t state_dim = 1;
  std::size_t action_dim = 1;
  std::vector<std::size_t> hidden{256, 256};
  double tau = 0.7;        // expectile in (0, 1)
  double discount = 0.99;  // gamma in [0, 1)
  double target_ema = 0.005;
  AdamConfig adam{};
};

class CriticPair final : public CriticModel {
 public:
  CriticPair(const CriticConfig& cfg, Rng& rng);
  CriticPair(CriticConfig cfg, DenseNet q, DenseNet v, DenseNet target_q);

  const CriticConfig& config() const { return cfg_; }

  double value(VecView state, VecView action) const override;  // Q_phi
  Vector action_gradient(VecView state, VecView action) const override;
  double target_q_value(VecView state, VecView action) const;
  double v_value(VecView state) const;

  // Expectile regression of V toward target-Q values; one Adam step on the
  // value net. Returns the batch loss.
  double v_step(const std::vector<Transition>& batch);
  // Bellman regression of Q toward r + gamma V(s') (terminals masked), one
  // Adam step on the q net followed by the EMA target update.
  double q_step(const std::vector<Transition>& batch);
  // target <- (1 - rho) target + rho q
  void update_target();

  DenseNet& q_net() { return q_; }
  DenseNet& v_net() { return v_; }
  DenseNet& target_net() { return target_q_; }

  void save(const std::filesystem::path& dir) const;
  static CriticPair load(const std::filesystem::path& dir);

 private:
  Matrix batch_inputs(const std::vector<Transition>& batch, bool next) const;

  CriticConfig cfg_;
  DenseNet q_;
  DenseNet v_;
  DenseNet target_q_;
  OptimizerState q_opt_;
  OptimizerState v_opt_;
};

// The spec-level q_gradient surface over either critic kind.
inline Vector q_gradient(const CriticModel& critic, VecView state,
                         VecView action) {
  return critic.action_gradient(state, action);
}

struct CriticTrainConfig {
  std::uint64_t steps = 8000;
  std::size_t batch_size = 64;
  std::filesystem::path loss_csv;
  std::uint64_t log_interval = 100;
};

struct CriticCurve {
  std::vector<std::uint64_t> steps;
  Vector v_losses;
  Vector q_losses;
};

CriticCurve train_critic(CriticPair& critic, const MdpDataset& data,
                         const CriticTrainConfig& cfg, Rng& rng);

}  // namespace srpo
