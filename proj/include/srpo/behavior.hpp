#pragma once
// Conditional diffusion behavior model eps(a_t | s, t): denoising-loss
// training, score estimation, and probability-flow log-density evaluation.
//
// There is deliberately no action sampler here: the policy-extraction path
// only ever queries the model's noise predictions (score estimates), and
// the density path integrates the probability-flow ODE.

#include <cstdint>
#include <filesystem>
#include <functional>
#include <vector>

#include "srpo/checkpoint.hpp"
#include "srpo/datasets.hpp"
#include "srpo/net.hpp"
#include "srpo/optim.hpp"
#include "srpo/rng.hpp"
#include "srpo/schedule.hpp"

namespace srpo {

// Noise-prediction view of a behavior distribution at any diffusion time.
// Implemented by the trained BehaviorModel and by closed-form references in
// tests; everything downstream (score, density, extraction) only sees this.
class ScoreModel {
 public:
  virtual ~ScoreModel() = default;

  virtual std::size_t action_dim() const = 0;
  virtual const NoiseSchedule& schedule() const = 0;
  virtual Vector predict_noise(VecView a_t, VecView state, double t) const = 0;
  // d eps_c / d a_t, an action_dim x action_dim matrix.
  virtual Matrix noise_action_jacobian(VecView a_t, VecView state,
                                       double t) const = 0;

  // Batched variants over rows of a_t with a shared state/time; defaults
  // loop over rows, BehaviorModel overrides with a batched pass.
  virtual Matrix predict_noise_batch(const Matrix& a_t, VecView state,
                                     double t) const;
  struct BatchJacobian {
    Matrix noise;                     // rows of predicted noise
    std::vector<Matrix> action_grads; // [c].row(i) = d eps_c/d a_t, sample i
  };
  virtual BatchJacobian predict_with_action_grads(const Matrix& a_t,
                                                  VecView state,
                                                  double t) const;
};

// Behavior score of the diffused distribution: -eps(a_t|s,t)/sigma_t.
// Errors when sigma_t underflows 1e-6.
Vector score(const ScoreModel& model, VecView a_t, VecView state, double t);

struct BehaviorConfig {
  std::size_t state_dim = 0;  // zero for the unconditional bandit case
  std::size_t action_dim = 2;
  std::size_t trunk_width = 128;
  std::size_t trunk_blocks = 6;
  double dropout = 0.1;
  std::size_t fourier_frequencies = 16;
  double fourier_scale = 30.0;
  double beta_min = 0.1;
  double beta_max = 20.0;
};

class BehaviorModel final : public ScoreModel {
 public:
  BehaviorModel(const BehaviorConfig& cfg, Rng& rng);
  BehaviorModel(const BehaviorConfig& cfg, DenseNet net,
                FourierTimeEmbedding embed);

  std::size_t action_dim() const override { return cfg_.action_dim; }
  std::size_t state_dim() const { return cfg_.state_dim; }
  const NoiseSchedule& schedule() const override { return schedule_; }
  const BehaviorConfig& config() const { return cfg_; }
  DenseNet& net() { return net_; }
  const DenseNet& net() const { return net_; }
  const FourierTimeEmbedding& time_embedding() const { return embed_; }

  // Fixed input layout: (a_t || state || time embedding).
  Vector build_input(VecView a_t, VecView state, double t) const;
  Matrix build_inputs(const Matrix& a_t, const Matrix& states,
                      const Vector& times) const;
  Matrix build_inputs_shared(const Matrix& a_t, VecView state, double t) const;

  Vector predict_noise(VecView a_t, VecView state, double t) const override;
  Matrix noise_action_jacobian(VecView a_t, VecView state,
                               double t) const override;
  Matrix predict_noise_batch(const Matrix& a_t, VecView state,
                             double t) const override;
  BatchJacobian predict_with_action_grads(const Matrix& a_t, VecView state,
                                          double t) const override;

  void save(const std::filesystem::path& path,
            const OptimizerState* opt = nullptr, std::uint64_t step = 0,
            std::uint64_t rng_seed = 0,
            const std::string& dataset_tag = {}) const;
  static BehaviorModel load(const std::filesystem::path& path);

 private:
  BehaviorConfig cfg_;
  NoiseSchedule schedule_;
  DenseNet net_;
  FourierTimeEmbedding embed_;
};

// One sampled denoising minibatch: per-row diffusion time, injected noise,
// perturbed action, and the matching state rows.
struct DenoisingBatch {
  Matrix a_t;
  Matrix noise;
  Vector times;
  Matrix states;
};

DenoisingBatch make_denoising_batch(const NoiseSchedule& schedule,
                                    const Matrix& states,
                                    const Matrix& actions, double t_lo,
                                    double t_hi, Rng& rng);

// Mean over rows of |predictor(a_t, s, t) - noise|^2; the predictor
// indirection lets tests evaluate closed-form cheats.
double denoising_loss_value(
    const DenoisingBatch& batch,
    const std::function<Vector(VecView, VecView, double)>& predictor);

struct LossAndGrads {
  double loss = 0.0;
  Gradients grads;
};

// Draws (t, eps) per sample, runs a train-mode forward and returns the
// denoising loss with parameter gradients. Throws NumericError if the loss
// is non-finite and ConfigError on an empty batch.
LossAndGrads denoising_loss(BehaviorModel& model,
                            const StateActionBatch& batch, Rng& rng,
                            double t_lo = 0.02, double t_hi = 0.98);

struct BehaviorTrainConfig {
  std::uint64_t steps = 50000;
  std::size_t batch_size = 512;
  AdamConfig adam{3e-4, 0.9, 0.999, 1e-8, 1e-4};  // AdamW by default
  double lr_final = -1.0;  // >= 0 enables cosine decay from adam.lr
  double t_lo = 0.02;
  double t_hi = 0.98;
  std::uint64_t ckpt_interval = 0;        // 0: final checkpoint only
  std::filesystem::path ckpt_dir;         // empty: no checkpoints written
  std::filesystem::path loss_csv;         // empty: curve kept in memory only
  std::uint64_t log_interval = 250;
};

struct TrainCurve {
  std::vector<std::uint64_t> steps;
  Vector losses;
};

TrainCurve train_behavior(BehaviorModel& model, const StateActionBatch& data,
                          const BehaviorTrainConfig& cfg, Rng& rng);

// Log-density of the model's distribution at diffusion time t_eval,
// computed by integrating the probability-flow ODE up to the edge of the
// trained time range (t = 0.98, where the variance-preserving marginal is
// within O(alpha^2) ~ 1e-4 of the standard normal terminal) and applying
// the N(0, I) terminal there. The drift divergence is evaluated exactly
// from the model's action Jacobian.
double log_density(const ScoreModel& model, VecView action, VecView state,
                   double t_eval, std::size_t ode_steps = 200);
Vector log_density_batch(const ScoreModel& model, const Matrix& actions,
                         VecView state, double t_eval,
                         std::size_t ode_steps = 200, unsigned threads = 1);

struct DensityGrid {
  std::size_t nx = 0;
  std::size_t ny = 0;
  double xmin = 0.0, xmax = 0.0, ymin = 0.0, ymax = 0.0;
  double diffusion_time = 0.0;
  Vector values;  // log-density at cell centers, index iy*nx + ix

  double cell_area() const;
  // Midpoint-rule integral of exp(values) over the box.
  double integral() const;
  // Sum of |log-density| differences between grid neighbors.
  double total_variation() const;
};

DensityGrid density_grid(const ScoreModel& model, VecView state, double t_eval,
                         double xmin, double xmax, double ymin, double ymax,
                         std::size_t nx, std::size_t ny,
                         std::size_t ode_steps = 200, unsigned threads = 1);

void write_density_csv(const DensityGrid& grid,
                       const std::filesystem::path& path);

}  // namespace srpo
