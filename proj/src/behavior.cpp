#include "srpo/behavior.hpp"

#include <cmath>
#include <fstream>
#include <numbers>
#include <thread>

#include "srpo/errors.hpp"
#include "srpo/kernels.hpp"

namespace srpo {

namespace {
constexpr double kSigmaFloor = 1e-6;
// Upper edge of the trained diffusion-time range; the VP marginal there is
// within O(alpha^2) ~ 1e-4 of N(0, I), where the probability flow is
// stationary, so the Gaussian terminal is applied at this time.
constexpr double kOdeTerminal = 0.98;
}  // namespace

Matrix ScoreModel::predict_noise_batch(const Matrix& a_t, VecView state,
                                       double t) const {
  Matrix out(a_t.rows, action_dim());
  for (std::size_t i = 0; i < a_t.rows; ++i) {
    const Vector row = predict_noise(a_t.row_span(i), state, t);
    std::copy(row.begin(), row.end(), out.row(i));
  }
  return out;
}

ScoreModel::BatchJacobian ScoreModel::predict_with_action_grads(
    const Matrix& a_t, VecView state, double t) const {
  BatchJacobian bj;
  const std::size_t d = action_dim();
  bj.noise = predict_noise_batch(a_t, state, t);
  bj.action_grads.assign(d, Matrix(a_t.rows, d));
  for (std::size_t i = 0; i < a_t.rows; ++i) {
    const Matrix jac = noise_action_jacobian(a_t.row_span(i), state, t);
    for (std::size_t c = 0; c < d; ++c) {
      for (std::size_t j = 0; j < d; ++j) {
        bj.action_grads[c].at(i, j) = jac.at(c, j);
      }
    }
  }
  return bj;
}

Vector score(const ScoreModel& model, VecView a_t, VecView state, double t) {
  const double sigma = model.schedule().sigma(t);
  if (sigma < kSigmaFloor) {
    throw NumericError("score undefined: sigma(t) underflows at t=" +
                       std::to_string(t));
  }
  Vector s = model.predict_noise(a_t, state, t);
  for (double& v : s) v = -v / sigma;
  return s;
}

BehaviorModel::BehaviorModel(const BehaviorConfig& cfg, Rng& rng)
    : cfg_(cfg), schedule_(cfg.beta_min, cfg.beta_max) {
  Rng net_rng = rng.split("behavior/net");
  Rng embed_rng = rng.split("behavior/fourier");
  embed_ = FourierTimeEmbedding(cfg.fourier_frequencies, cfg.fourier_scale,
                                embed_rng);
  const std::size_t in = cfg.action_dim + cfg.state_dim + embed_.dim();
  net_ = DenseNet::residual(in, cfg.trunk_width, cfg.action_dim,
                            cfg.trunk_blocks, cfg.dropout, net_rng);
}

BehaviorModel::BehaviorModel(const BehaviorConfig& cfg, DenseNet net,
                             FourierTimeEmbedding embed)
    : cfg_(cfg),
      schedule_(cfg.beta_min, cfg.beta_max),
      net_(std::move(net)),
      embed_(std::move(embed)) {
  const std::size_t in = cfg.action_dim + cfg.state_dim + embed_.dim();
  if (net_.input_dim() != in || net_.output_dim() != cfg.action_dim) {
    throw DimensionError("behavior net does not match its config layout");
  }
}

Vector BehaviorModel::build_input(VecView a_t, VecView state, double t) const {
  if (a_t.size() != cfg_.action_dim || state.size() != cfg_.state_dim) {
    throw DimensionError("behavior input dims mismatch");
  }
  Vector in(net_.input_dim());
  std::copy(a_t.begin(), a_t.end(), in.begin());
  std::copy(state.begin(), state.end(), in.begin() + cfg_.action_dim);
  embed_.write(t, MutVecView(in).subspan(cfg_.action_dim + cfg_.state_dim));
  return in;
}

Matrix BehaviorModel::build_inputs(const Matrix& a_t, const Matrix& states,
                                   const Vector& times) const {
  if (a_t.cols != cfg_.action_dim || states.cols != cfg_.state_dim ||
      a_t.rows != states.rows || times.size() != a_t.rows) {
    throw DimensionError("behavior batch dims mismatch");
  }
  Matrix in(a_t.rows, net_.input_dim());
  for (std::size_t i = 0; i < a_t.rows; ++i) {
    double* row = in.row(i);
    std::copy(a_t.row(i), a_t.row(i) + a_t.cols, row);
    std::copy(states.row(i), states.row(i) + states.cols,
              row + cfg_.action_dim);
    embed_.write(times[i], MutVecView(row + cfg_.action_dim + cfg_.state_dim,
                                      embed_.dim()));
  }
  return in;
}

Matrix BehaviorModel::build_inputs_shared(const Matrix& a_t, VecView state,
                                          double t) const {
  if (a_t.cols != cfg_.action_dim || state.size() != cfg_.state_dim) {
    throw DimensionError("behavior batch dims mismatch");
  }
  Vector emb = embed_.embed(t);
  Matrix in(a_t.rows, net_.input_dim());
  for (std::size_t i = 0; i < a_t.rows; ++i) {
    double* row = in.row(i);
    std::copy(a_t.row(i), a_t.row(i) + a_t.cols, row);
    std::copy(state.begin(), state.end(), row + cfg_.action_dim);
    std::copy(emb.begin(), emb.end(), row + cfg_.action_dim + cfg_.state_dim);
  }
  return in;
}

Vector BehaviorModel::predict_noise(VecView a_t, VecView state,
                                    double t) const {
  return forward(net_, build_input(a_t, state, t), Mode::eval);
}

Matrix BehaviorModel::noise_action_jacobian(VecView a_t, VecView state,
                                            double t) const {
  ForwardCache cache;
  forward(net_, build_input(a_t, state, t), Mode::eval, &cache);
  Matrix jac(cfg_.action_dim, cfg_.action_dim);
  Vector upstream(cfg_.action_dim, 0.0);
  for (std::size_t c = 0; c < cfg_.action_dim; ++c) {
    upstream.assign(cfg_.action_dim, 0.0);
    upstream[c] = 1.0;
    const Vector in_grad = backward_input(net_, cache, upstream);
    for (std::size_t j = 0; j < cfg_.action_dim; ++j) {
      jac.at(c, j) = in_grad[j];
    }
  }
  return jac;
}

Matrix BehaviorModel::predict_noise_batch(const Matrix& a_t, VecView state,
                                          double t) const {
  return forward_batch(net_, build_inputs_shared(a_t, state, t), Mode::eval);
}

ScoreModel::BatchJacobian BehaviorModel::predict_with_action_grads(
    const Matrix& a_t, VecView state, double t) const {
  BatchJacobian bj;
  const std::size_t d = cfg_.action_dim;
  ForwardCache cache;
  bj.noise = forward_batch(net_, build_inputs_shared(a_t, state, t),
                           Mode::eval, &cache);
  bj.action_grads.reserve(d);
  Matrix upstream(a_t.rows, d);
  for (std::size_t c = 0; c < d; ++c) {
    upstream.fill(0.0);
    for (std::size_t i = 0; i < a_t.rows; ++i) upstream.at(i, c) = 1.0;
    Matrix in_grad;
    backward_batch(net_, cache, upstream, nullptr, &in_grad);
    Matrix slice(a_t.rows, d);
    for (std::size_t i = 0; i < a_t.rows; ++i) {
      std::copy(in_grad.row(i), in_grad.row(i) + d, slice.row(i));
    }
    bj.action_grads.push_back(std::move(slice));
  }
  return bj;
}

void BehaviorModel::save(const std::filesystem::path& path,
                         const OptimizerState* opt, std::uint64_t step,
                         std::uint64_t rng_seed,
                         const std::string& dataset_tag) const {
  NetCheckpoint ckpt;
  ckpt.net = net_;
  ckpt.fourier_frequencies = embed_.frequencies();
  ckpt.fourier_scale = embed_.scale();
  if (opt != nullptr) ckpt.optimizer = snapshot_optimizer(*opt);
  ckpt.step = step;
  ckpt.rng_seed = rng_seed;
  ckpt.extra = {{"model", "behavior"},
                {"state_dim", cfg_.state_dim},
                {"action_dim", cfg_.action_dim},
                {"trunk_width", cfg_.trunk_width},
                {"trunk_blocks", cfg_.trunk_blocks},
                {"dropout", cfg_.dropout},
                {"fourier_frequencies", cfg_.fourier_frequencies},
                {"fourier_scale", cfg_.fourier_scale},
                {"beta_min", cfg_.beta_min},
                {"beta_max", cfg_.beta_max}};
  if (!dataset_tag.empty()) ckpt.extra["dataset"] = dataset_tag;
  save_checkpoint(ckpt, path);
}

BehaviorModel BehaviorModel::load(const std::filesystem::path& path) {
  NetCheckpoint ckpt = load_checkpoint(path);
  if (ckpt.extra.value("model", "") != "behavior") {
    throw ConfigError("checkpoint is not a behavior model: " + path.string());
  }
  if (!ckpt.fourier_frequencies.has_value()) {
    throw ConfigError("behavior checkpoint lacks time-embedding frequencies");
  }
  BehaviorConfig cfg;
  cfg.state_dim = ckpt.extra.at("state_dim").get<std::size_t>();
  cfg.action_dim = ckpt.extra.at("action_dim").get<std::size_t>();
  cfg.trunk_width = ckpt.extra.at("trunk_width").get<std::size_t>();
  cfg.trunk_blocks = ckpt.extra.at("trunk_blocks").get<std::size_t>();
  cfg.dropout = ckpt.extra.at("dropout").get<double>();
  cfg.fourier_frequencies =
      ckpt.extra.at("fourier_frequencies").get<std::size_t>();
  cfg.fourier_scale = ckpt.extra.at("fourier_scale").get<double>();
  cfg.beta_min = ckpt.extra.at("beta_min").get<double>();
  cfg.beta_max = ckpt.extra.at("beta_max").get<double>();
  FourierTimeEmbedding embed(*ckpt.fourier_frequencies, cfg.fourier_scale);
  return BehaviorModel(cfg, std::move(ckpt.net), std::move(embed));
}

DenoisingBatch make_denoising_batch(const NoiseSchedule& schedule,
                                    const Matrix& states,
                                    const Matrix& actions, double t_lo,
                                    double t_hi, Rng& rng) {
  if (actions.rows == 0) throw ConfigError("empty denoising batch");
  DenoisingBatch batch;
  batch.states = states;
  batch.noise = Matrix(actions.rows, actions.cols);
  batch.a_t = Matrix(actions.rows, actions.cols);
  batch.times.resize(actions.rows);
  for (std::size_t i = 0; i < actions.rows; ++i) {
    const double t = rng.uniform(t_lo, t_hi);
    batch.times[i] = t;
    const auto [a, s] = schedule.alpha_sigma(t);
    for (std::size_t c = 0; c < actions.cols; ++c) {
      const double eps = rng.normal();
      batch.noise.at(i, c) = eps;
      batch.a_t.at(i, c) = a * actions.at(i, c) + s * eps;
    }
  }
  return batch;
}

double denoising_loss_value(
    const DenoisingBatch& batch,
    const std::function<Vector(VecView, VecView, double)>& predictor) {
  double total = 0.0;
  for (std::size_t i = 0; i < batch.a_t.rows; ++i) {
    const Vector pred =
        predictor(batch.a_t.row_span(i), batch.states.row_span(i),
                  batch.times[i]);
    for (std::size_t c = 0; c < batch.a_t.cols; ++c) {
      const double r = pred[c] - batch.noise.at(i, c);
      total += r * r;
    }
  }
  return total / static_cast<double>(batch.a_t.rows);
}

LossAndGrads denoising_loss(BehaviorModel& model, const StateActionBatch& data,
                            Rng& rng, double t_lo, double t_hi) {
  if (data.actions.rows == 0) throw ConfigError("empty denoising batch");
  DenoisingBatch batch = make_denoising_batch(model.schedule(), data.states,
                                              data.actions, t_lo, t_hi, rng);
  const Matrix inputs =
      model.build_inputs(batch.a_t, batch.states, batch.times);
  ForwardCache cache;
  // Dropout masks consume the same stream as the (t, eps) draws.
  const Matrix out =
      forward_batch(model.net(), inputs, Mode::train, &cache, &rng);

  const double inv_b = 1.0 / static_cast<double>(out.rows);
  Matrix upstream(out.rows, out.cols);
  double loss = 0.0;
  for (std::size_t q = 0; q < out.size(); ++q) {
    const double r = out.data[q] - batch.noise.data[q];
    loss += r * r;
    upstream.data[q] = 2.0 * r * inv_b;
  }
  loss *= inv_b;
  if (!std::isfinite(loss)) {
    throw NumericError("denoising loss is non-finite");
  }
  LossAndGrads result;
  result.loss = loss;
  result.grads = zeros_like(model.net());
  backward_batch(model.net(), cache, upstream, &result.grads, nullptr);
  return result;
}

TrainCurve train_behavior(BehaviorModel& model, const StateActionBatch& data,
                          const BehaviorTrainConfig& cfg, Rng& rng) {
  if (data.actions.rows == 0) {
    throw ConfigError("behavior training needs a nonempty dataset");
  }
  if (data.states.rows != data.actions.rows) {
    throw DimensionError("state/action row counts differ");
  }
  OptimizerState opt(model.net(), cfg.adam);
  Rng batch_rng = rng.split("behavior/batch");
  Rng noise_rng = rng.split("behavior/noise");
  TrainCurve curve;
  const std::size_t n = data.actions.rows;
  const double lr0 = cfg.adam.lr;
  StateActionBatch mini;
  for (std::uint64_t step = 1; step <= cfg.steps; ++step) {
    if (cfg.lr_final >= 0.0 && cfg.steps > 1) {
      const double frac =
          static_cast<double>(step - 1) / static_cast<double>(cfg.steps - 1);
      opt.config().lr =
          cfg.lr_final +
          0.5 * (lr0 - cfg.lr_final) * (1.0 + std::cos(std::numbers::pi * frac));
    }
    const std::size_t b = std::min<std::size_t>(cfg.batch_size, n);
    mini.states = Matrix(b, data.states.cols);
    mini.actions = Matrix(b, data.actions.cols);
    for (std::size_t i = 0; i < b; ++i) {
      const auto idx = static_cast<std::size_t>(batch_rng.below(n));
      std::copy(data.states.row(idx), data.states.row(idx) + data.states.cols,
                mini.states.row(i));
      std::copy(data.actions.row(idx),
                data.actions.row(idx) + data.actions.cols,
                mini.actions.row(i));
    }
    LossAndGrads lg =
        denoising_loss(model, mini, noise_rng, cfg.t_lo, cfg.t_hi);
    opt.step(model.net(), lg.grads);
    if (step == 1 || step % cfg.log_interval == 0 || step == cfg.steps) {
      curve.steps.push_back(step);
      curve.losses.push_back(lg.loss);
    }
    const bool at_interval =
        cfg.ckpt_interval > 0 && step % cfg.ckpt_interval == 0;
    if (!cfg.ckpt_dir.empty() && (at_interval || step == cfg.steps)) {
      std::filesystem::create_directories(cfg.ckpt_dir);
      model.save(cfg.ckpt_dir / ("behavior_step" + std::to_string(step) +
                                 ".ckpt"),
                 &opt, step, rng.seed());
    }
  }
  if (!cfg.loss_csv.empty()) {
    std::ofstream out(cfg.loss_csv);
    if (!out) {
      throw DependencyError("cannot write loss curve: " +
                            cfg.loss_csv.string());
    }
    out << "step,loss\n";
    out.precision(17);
    for (std::size_t i = 0; i < curve.steps.size(); ++i) {
      out << curve.steps[i] << ',' << curve.losses[i] << '\n';
    }
  }
  return curve;
}

namespace {

struct FlowDerivative {
  Matrix velocity;
  Vector divergence;
};

FlowDerivative flow_derivative(const ScoreModel& model, const Matrix& x,
                               VecView state, double t) {
  const auto [f, g2] = model.schedule().drift_diffusion(t);
  const double sigma = model.schedule().sigma(t);
  const double gain = 0.5 * g2 / std::max(sigma, kSigmaFloor);
  const auto d = static_cast<double>(model.action_dim());
  const auto bj = model.predict_with_action_grads(x, state, t);
  FlowDerivative out;
  out.velocity = Matrix(x.rows, x.cols);
  out.divergence.assign(x.rows, 0.0);
  for (std::size_t i = 0; i < x.rows; ++i) {
    for (std::size_t c = 0; c < x.cols; ++c) {
      out.velocity.at(i, c) = f * x.at(i, c) + gain * bj.noise.at(i, c);
    }
    double trace = 0.0;
    for (std::size_t c = 0; c < x.cols; ++c) {
      trace += bj.action_grads[c].at(i, c);
    }
    out.divergence[i] = d * f + gain * trace;
  }
  return out;
}

// Integrates the augmented probability-flow system for a chunk of points.
Vector integrate_chunk(const ScoreModel& model, const Matrix& points,
                       VecView state, double t_eval, std::size_t ode_steps) {
  const std::size_t d = model.action_dim();
  const std::size_t rows = points.rows;
  Matrix x = points;
  Vector logdet(rows, 0.0);
  if (t_eval < kOdeTerminal) {
    const double h = (kOdeTerminal - t_eval) / static_cast<double>(ode_steps);
    for (std::size_t step = 0; step < ode_steps; ++step) {
      const double t = t_eval + static_cast<double>(step) * h;
      const auto k1 = flow_derivative(model, x, state, t);
      Matrix x2 = x;
      kernels::ops().axpy(0.5 * h, k1.velocity.data.data(), x2.data.data(),
                          x2.size());
      const auto k2 = flow_derivative(model, x2, state, t + 0.5 * h);
      Matrix x3 = x;
      kernels::ops().axpy(0.5 * h, k2.velocity.data.data(), x3.data.data(),
                          x3.size());
      const auto k3 = flow_derivative(model, x3, state, t + 0.5 * h);
      Matrix x4 = x;
      kernels::ops().axpy(h, k3.velocity.data.data(), x4.data.data(),
                          x4.size());
      const auto k4 = flow_derivative(model, x4, state, t + h);
      for (std::size_t q = 0; q < x.size(); ++q) {
        x.data[q] += h / 6.0 *
                     (k1.velocity.data[q] + 2.0 * k2.velocity.data[q] +
                      2.0 * k3.velocity.data[q] + k4.velocity.data[q]);
      }
      for (std::size_t i = 0; i < rows; ++i) {
        logdet[i] += h / 6.0 *
                     (k1.divergence[i] + 2.0 * k2.divergence[i] +
                      2.0 * k3.divergence[i] + k4.divergence[i]);
      }
      if (!kernels::ops().all_finite(x.data.data(), x.size()) ||
          !kernels::ops().all_finite(logdet.data(), logdet.size())) {
        throw NumericError("probability-flow state non-finite at t=" +
                           std::to_string(t + h));
      }
    }
  }
  const double log_norm =
      -0.5 * static_cast<double>(d) * std::log(2.0 * std::numbers::pi);
  Vector out(rows);
  for (std::size_t i = 0; i < rows; ++i) {
    out[i] = log_norm - 0.5 * squared_norm(x.row_span(i)) + logdet[i];
  }
  if (!kernels::ops().all_finite(out.data(), out.size())) {
    throw NumericError("log-density non-finite after integrating from t=" +
                       std::to_string(t_eval));
  }
  return out;
}

}  // namespace

double log_density(const ScoreModel& model, VecView action, VecView state,
                   double t_eval, std::size_t ode_steps) {
  Matrix pts(1, action.size());
  std::copy(action.begin(), action.end(), pts.data.begin());
  return log_density_batch(model, pts, state, t_eval, ode_steps)[0];
}

Vector log_density_batch(const ScoreModel& model, const Matrix& actions,
                         VecView state, double t_eval, std::size_t ode_steps,
                         unsigned threads) {
  if (actions.cols != model.action_dim()) {
    throw DimensionError("log_density: action width mismatch");
  }
  if (ode_steps < 50) {
    throw ConfigError("log_density needs ode_steps >= 50");
  }
  if (!(t_eval >= 0.02 && t_eval <= 1.0)) {
    throw NumericError("log_density time must lie in [0.02, 1]");
  }
  if (threads <= 1 || actions.rows < 2 * threads) {
    return integrate_chunk(model, actions, state, t_eval, ode_steps);
  }
  Vector out(actions.rows);
  std::vector<std::thread> pool;
  std::vector<std::exception_ptr> errors(threads);
  const std::size_t chunk = (actions.rows + threads - 1) / threads;
  for (unsigned w = 0; w < threads; ++w) {
    const std::size_t lo = w * chunk;
    const std::size_t hi = std::min<std::size_t>(lo + chunk, actions.rows);
    if (lo >= hi) break;
    pool.emplace_back([&, lo, hi, w] {
      try {
        Matrix part(hi - lo, actions.cols);
        std::copy(actions.row(lo), actions.row(lo) + (hi - lo) * actions.cols,
                  part.data.begin());
        const Vector vals =
            integrate_chunk(model, part, state, t_eval, ode_steps);
        std::copy(vals.begin(), vals.end(), out.begin() + lo);
      } catch (...) {
        errors[w] = std::current_exception();
      }
    });
  }
  for (auto& th : pool) th.join();
  for (const auto& err : errors) {
    if (err) std::rethrow_exception(err);
  }
  return out;
}

double DensityGrid::cell_area() const {
  return (xmax - xmin) / static_cast<double>(nx) * (ymax - ymin) /
         static_cast<double>(ny);
}

double DensityGrid::integral() const {
  double total = 0.0;
  for (double v : values) total += std::exp(v);
  return total * cell_area();
}

double DensityGrid::total_variation() const {
  double tv = 0.0;
  for (std::size_t iy = 0; iy < ny; ++iy) {
    for (std::size_t ix = 0; ix < nx; ++ix) {
      const double v = values[iy * nx + ix];
      if (ix + 1 < nx) tv += std::abs(values[iy * nx + ix + 1] - v);
      if (iy + 1 < ny) tv += std::abs(values[(iy + 1) * nx + ix] - v);
    }
  }
  return tv;
}

DensityGrid density_grid(const ScoreModel& model, VecView state, double t_eval,
                         double xmin, double xmax, double ymin, double ymax,
                         std::size_t nx, std::size_t ny, std::size_t ode_steps,
                         unsigned threads) {
  if (model.action_dim() != 2) {
    throw DimensionError("density grids are defined for 2D actions");
  }
  DensityGrid grid;
  grid.nx = nx;
  grid.ny = ny;
  grid.xmin = xmin;
  grid.xmax = xmax;
  grid.ymin = ymin;
  grid.ymax = ymax;
  grid.diffusion_time = t_eval;
  const double dx = (xmax - xmin) / static_cast<double>(nx);
  const double dy = (ymax - ymin) / static_cast<double>(ny);
  Matrix centers(nx * ny, 2);
  for (std::size_t iy = 0; iy < ny; ++iy) {
    for (std::size_t ix = 0; ix < nx; ++ix) {
      centers.at(iy * nx + ix, 0) = xmin + (static_cast<double>(ix) + 0.5) * dx;
      centers.at(iy * nx + ix, 1) = ymin + (static_cast<double>(iy) + 0.5) * dy;
    }
  }
  grid.values =
      log_density_batch(model, centers, state, t_eval, ode_steps, threads);
  return grid;
}

void write_density_csv(const DensityGrid& grid,
                       const std::filesystem::path& path) {
  std::ofstream out(path);
  if (!out) throw DependencyError("cannot write density csv: " + path.string());
  out << "# nx=" << grid.nx << ",ny=" << grid.ny << ",xmin=" << grid.xmin
      << ",xmax=" << grid.xmax << ",ymin=" << grid.ymin
      << ",ymax=" << grid.ymax << ",t=" << grid.diffusion_time << '\n';
  out << "x,y,log_density\n";
  out.precision(17);
  const double dx = (grid.xmax - grid.xmin) / static_cast<double>(grid.nx);
  const double dy = (grid.ymax - grid.ymin) / static_cast<double>(grid.ny);
  for (std::size_t iy = 0; iy < grid.ny; ++iy) {
    for (std::size_t ix = 0; ix < grid.nx; ++ix) {
      out << grid.xmin + (static_cast<double>(ix) + 0.5) * dx << ','
          << grid.ymin + (static_cast<double>(iy) + 0.5) * dy << ','
          << grid.values[iy * grid.nx + ix] << '\n';
    }
  }
}

}  // namespace srpo
