#pragma once
// Adam / AdamW (decoupled weight decay) over a DenseNet's parameters.

#include <cstdint>
#include <vector>

#include "srpo/net.hpp"

namespace srpo {

struct AdamConfig {
  double lr = 3e-4;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
  double weight_decay = 0.0;  // 0 = plain Adam, >0 = AdamW
};

class OptimizerState {
 public:
  OptimizerState() = default;
  OptimizerState(DenseNet& net, AdamConfig cfg);

  // One update. Throws NumericError naming the first parameter whose
  // gradient is non-finite; parameters are left untouched in that case.
  void step(DenseNet& net, Gradients& grads);

  std::uint64_t step_count() const { return step_count_; }
  const AdamConfig& config() const { return cfg_; }
  AdamConfig& config() { return cfg_; }

  // Raw accumulators, ordered like DenseNet::param_refs (checkpoints).
  std::vector<Vector>& first_moments() { return m_; }
  std::vector<Vector>& second_moments() { return v_; }
  const std::vector<Vector>& first_moments() const { return m_; }
  const std::vector<Vector>& second_moments() const { return v_; }
  void set_step_count(std::uint64_t n) { step_count_ = n; }

 private:
  AdamConfig cfg_;
  std::vector<Vector> m_;
  std::vector<Vector> v_;
  std::uint64_t step_count_ = 0;
};

inline void optimizer_step(OptimizerState& state, DenseNet& net,
                           Gradients& grads) {
  state.step(net, grads);
}

}  // namespace srpo
