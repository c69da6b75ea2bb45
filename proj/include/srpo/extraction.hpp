#pragma once
// Score-regularized extraction of a deterministic policy from a frozen
// critic and a frozen diffusion behavior model, plus the two reference
// baselines (exponentiated-advantage weighted regression and the
// Gaussian/L2 behavior-regularized variant).
//
// The action-space gradient being ascended is
//
//   g(a, s) = grad_a Q(s, a)
//           - (1/beta) E_{t, eps} [ omega(t) (eps_hat(a_t|s,t) - [baseline] eps) ]
//
// with a_t = alpha_t a + sigma_t eps. In dirac mode the compensation factor
// sigma_t/alpha_t and the weight omega = alpha/sigma cancel analytically,
// and the regularizer reduces to the behavior score at the single time t0:
// g = grad_a Q + (1/beta) score(a | s, t0), evaluated deterministically.

#include <cstdint>
#include <filesystem>
#include <functional>
#include <optional>

#include "srpo/behavior.hpp"
#include "srpo/critic.hpp"
#include "srpo/net.hpp"
#include "srpo/optim.hpp"
#include "srpo/rng.hpp"

namespace srpo {

enum class OmegaMode { dirac_t0, sigma_sq, custom };
enum class BetaMode { fixed, grad_normalized };

struct SrpoConfig {
  // Regularization strength is carried as 1/beta so the "regularizer off"
  // endpoint (beta -> infinity) is representable as inv_beta = 0.
  double inv_beta = 1.0;
  BetaMode beta_mode = BetaMode::fixed;
  OmegaMode omega_mode = OmegaMode::sigma_sq;
  double dirac_t0 = 0.02;
  bool use_baseline = true;
  double t_lo = 0.02;
  double t_hi = 0.98;
  std::size_t mc_samples = 16;
  std::function<double(double)> omega;  // only read in custom mode

  // extraction loop
  std::uint64_t steps = 2000;
  std::size_t batch_size = 32;
  AdamConfig adam{3e-4};

  void validate() const;
};

// Deterministic actor state -> action; plain relu MLP with an optional tanh
// squash onto per-dimension bounds. state_dim may be zero (the bandit
// case), where the net degenerates to a learnable constant action.
struct PolicyConfig {
  std::size_t state_dim = 0;
  std::size_t action_dim = 2;
  std::vector<std::size_t> hidden{256, 256};  // ignored when state_dim == 0
  std::optional<std::pair<Vector, Vector>> bounds;  // (lo, hi) per dimension
};

class PolicyNet {
 public:
  PolicyNet() = default;
  PolicyNet(const PolicyConfig& cfg, Rng& rng);
  PolicyNet(PolicyConfig cfg, DenseNet net);

  const PolicyConfig& config() const { return cfg_; }
  DenseNet& net() { return net_; }
  const DenseNet& net() const { return net_; }

  Vector act(VecView state) const;
  // Cached forward for a later parameter backward; raw is the pre-squash
  // output.
  Vector act_cached(VecView state, ForwardCache& cache, Vector& raw) const;
  // Chain an action-space gradient through the bound transform into the
  // underlying net's output space.
  Vector upstream_from_action_grad(VecView action_grad, VecView raw) const;

  // Overwrite the net so act() returns `action` everywhere (requires the
  // bias-only bandit layout and no bounds). Used to start extraction runs
  // at the Q-optimum.
  void set_constant_action(VecView action);

  void save(const std::filesystem::path& path) const;
  static PolicyNet load(const std::filesystem::path& path);

 private:
  PolicyConfig cfg_;
  DenseNet net_;
};

// One Monte-Carlo draw of the regularization term
// omega(t) (eps_hat(a_t|s,t) - [baseline] eps); t is drawn uniformly from
// cfg's range in sigma_sq/custom mode.
Vector regularizer_draw(const ScoreModel& behavior, VecView action,
                        VecView state, const SrpoConfig& cfg, Rng& rng);

// The full action-space extraction gradient at (a, s).
Vector srpo_gradient_at_action(VecView action, VecView state,
                               const CriticModel& critic,
                               const ScoreModel& behavior,
                               const SrpoConfig& cfg, Rng& rng);

struct ExtractionDiagnostics {
  std::uint64_t interval = 0;  // 0 disables diagnostics
  std::size_t max_states = 8;
  std::size_t ode_steps = 60;
  std::filesystem::path csv;   // empty keeps rows in memory only
};

struct DiagRow {
  std::uint64_t step = 0;
  double mean_q = 0.0;
  double mean_log_density = 0.0;
  double mean_grad_norm = 0.0;
};

struct ExtractionResult {
  std::vector<DiagRow> diagnostics;
};

// Generic deterministic-policy ascent: for each sampled state the
// action-space gradient is chained through the policy net and applied with
// Adam. Both SRPO extraction and the Gaussian reverse-KL baseline run
// through this loop.
ExtractionResult run_policy_ascent(
    PolicyNet& policy, const Matrix& states,
    const std::function<Vector(VecView action, VecView state, Rng&)>&
        action_gradient,
    std::uint64_t steps, std::size_t batch_size, const AdamConfig& adam,
    Rng& rng, const ExtractionDiagnostics& diag = {},
    const CriticModel* diag_critic = nullptr,
    const ScoreModel* diag_behavior = nullptr);

// SRPO policy extraction against frozen critic + behavior models.
ExtractionResult extract_policy(PolicyNet& policy, const Matrix& states,
                                const CriticModel& critic,
                                const ScoreModel& behavior,
                                const SrpoConfig& cfg, Rng& rng,
                                const ExtractionDiagnostics& diag = {});

struct ForwardKlConfig {
  double beta = 1.0;          // weight exponent on Q; 0 = plain MLE
  double policy_sigma = 0.2;  // fixed Gaussian stddev of the policy family
  std::uint64_t steps = 3000;
  std::size_t batch_size = 256;
  AdamConfig adam{1e-2};
  double log_weight_clip = 100.0;  // weights clamp at exp(100) with a warning
};

struct ForwardKlResult {
  PolicyNet policy;  // the learned mean network
  bool clipped_weights = false;
};

// Exponentiated-advantage weighted maximum likelihood on dataset actions
// (the per-state partition constant is dropped; it only rescales weights
// within a state).
ForwardKlResult forward_kl_baseline(const StateActionBatch& data,
                                    const CriticModel& critic,
                                    const PolicyConfig& pcfg,
                                    const ForwardKlConfig& cfg, Rng& rng);

struct GaussianFit {
  Vector mean;
  double variance = 1.0;  // isotropic MLE
};

// Per-state isotropic Gaussian fit of the dataset actions (a single global
// fit when state_dim == 0; exact-match state lookup otherwise).
class GaussianBehaviorFit {
 public:
  explicit GaussianBehaviorFit(const StateActionBatch& data);
  const GaussianFit& lookup(VecView state) const;

 private:
  std::vector<std::pair<Vector, GaussianFit>> fits_;
};

// Behavior regularization with the fitted Gaussian standing in for the
// diffusion model: g = grad_a Q - (1/beta) (a - mean)/variance. This is the
// L2-to-mean variant scaled by the fitted variance, i.e. the exact
// reverse-KL gradient under a Gaussian behavior assumption.
ExtractionResult gaussian_reverse_kl_baseline(PolicyNet& policy,
                                              const Matrix& states,
                                              const StateActionBatch& data,
                                              const CriticModel& critic,
                                              const SrpoConfig& cfg, Rng& rng);

}  // namespace srpo
