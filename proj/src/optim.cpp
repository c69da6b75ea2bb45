#include "srpo/optim.hpp"

#include <cmath>

#include "srpo/errors.hpp"
#include "srpo/kernels.hpp"

namespace srpo {

OptimizerState::OptimizerState(DenseNet& net, AdamConfig cfg) : cfg_(cfg) {
  for (const auto& ref : net.param_refs()) {
    m_.emplace_back(ref.size, 0.0);
    v_.emplace_back(ref.size, 0.0);
  }
}

void OptimizerState::step(DenseNet& net, Gradients& grads) {
  auto params = net.param_refs();
  auto gparams = grads.param_refs();
  if (params.size() != m_.size() || gparams.size() != params.size()) {
    throw DimensionError("optimizer state does not match net layout");
  }
  const auto& k = kernels::ops();
  for (std::size_t i = 0; i < params.size(); ++i) {
    if (params[i].size != gparams[i].size || m_[i].size() != params[i].size) {
      throw DimensionError("optimizer moment shape mismatch at " +
                           params[i].name);
    }
    if (!k.all_finite(gparams[i].data, gparams[i].size)) {
      throw NumericError("non-finite gradient for parameter " +
                         params[i].name);
    }
  }
  ++step_count_;
  const auto t = static_cast<double>(step_count_);
  kernels::AdamScalars s;
  s.lr = cfg_.lr;
  s.beta1 = cfg_.beta1;
  s.beta2 = cfg_.beta2;
  s.eps = cfg_.eps;
  s.weight_decay = cfg_.weight_decay;
  s.bias1 = 1.0 - std::pow(cfg_.beta1, t);
  s.bias2 = 1.0 - std::pow(cfg_.beta2, t);
  for (std::size_t i = 0; i < params.size(); ++i) {
    k.adam_step(params[i].data, m_[i].data(), v_[i].data(), gparams[i].data,
                params[i].size, s);
  }
}

}  // namespace srpo
