#include "srpo/experiments.hpp"

#include <algorithm>
#include <atomic>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <ctime>
#include <fstream>
#include <iostream>
#include <mutex>
#include <set>
#include <sstream>
#include <thread>

#include "srpo/behavior.hpp"
#include "srpo/critic.hpp"
#include "srpo/datasets.hpp"
#include "srpo/errors.hpp"
#include "srpo/extraction.hpp"
#include "srpo/render.hpp"
#include "srpo/rng.hpp"

namespace srpo {
namespace {

using nlohmann::json;

std::string now_iso8601() {
  const auto now = std::chrono::system_clock::now();
  const std::time_t tt = std::chrono::system_clock::to_time_t(now);
  std::tm tm{};
  gmtime_r(&tt, &tm);
  char buf[32];
  std::strftime(buf, sizeof(buf), "%Y-%m-%dT%H:%M:%SZ", &tm);
  return buf;
}

std::string fmt_num(double v) {
  char buf[32];
  std::snprintf(buf, sizeof(buf), "%g", v);
  return buf;
}

void check_fields(const json& j, const std::string& context,
                  const std::set<std::string>& allowed) {
  if (!j.is_object()) {
    throw ConfigError(context + " must be an object");
  }
  for (const auto& [key, _] : j.items()) {
    if (!allowed.contains(key)) {
      throw ConfigError("unknown field '" + key + "' in " + context);
    }
  }
}

const std::set<std::string> kKinds = {
    "train_behavior", "train_critic",    "extract",
    "density_map",    "figure2",         "figure3",
    "figure5_ensemble", "ablation_omega", "ablation_baseline",
    "ablation_beta"};

void validate_dataset_section(const json& j, const std::string& ctx) {
  check_fields(j, ctx, {"name", "n", "seed", "path"});
  if (j.contains("path")) return;
  if (!j.contains("name") || !j.contains("n")) {
    throw ConfigError(ctx + " needs either a path or name+n");
  }
  const auto name = j.at("name").get<std::string>();
  const auto& names = BanditDataset::names();
  if (std::find(names.begin(), names.end(), name) == names.end()) {
    throw ConfigError("unknown dataset name '" + name + "' in " + ctx);
  }
}

void validate_model_section(const json& j, const std::string& ctx) {
  check_fields(j, ctx,
               {"state_dim", "action_dim", "width", "blocks", "dropout",
                "fourier_frequencies", "fourier_scale", "beta_min",
                "beta_max"});
}

void validate_train_section(const json& j, const std::string& ctx) {
  check_fields(j, ctx,
               {"steps", "batch", "lr", "weight_decay", "t_lo", "t_hi",
                "ckpt_interval", "log_interval"});
}

void validate_srpo_section(const json& j, const std::string& ctx) {
  check_fields(j, ctx,
               {"inv_beta", "beta_mode", "omega_mode", "dirac_t0",
                "use_baseline", "t_lo", "t_hi", "mc_samples", "steps",
                "batch", "lr"});
}

void validate_grid_section(const json& j, const std::string& ctx) {
  check_fields(j, ctx, {"n", "lo", "hi"});
}

void validate_kind(const std::string& kind, const json& j) {
  const std::set<std::string> common = {"version", "kind", "seed", "out_dir"};
  auto with = [&common](std::set<std::string> extra) {
    extra.insert(common.begin(), common.end());
    return extra;
  };
  if (kind == "train_behavior") {
    check_fields(j, kind, with({"dataset", "model", "train"}));
    validate_dataset_section(j.at("dataset"), "dataset");
    if (j.contains("model")) validate_model_section(j["model"], "model");
    if (j.contains("train")) validate_train_section(j["train"], "train");
  } else if (kind == "train_critic") {
    check_fields(j, kind, with({"chain", "critic", "train"}));
    check_fields(j.at("chain"), "chain",
                 {"n_states", "rewards", "behavior_mix", "copies", "seed",
                  "discount"});
    if (j.contains("critic")) {
      check_fields(j["critic"], "critic",
                   {"hidden", "tau", "discount", "target_ema", "lr"});
    }
    if (j.contains("train")) {
      check_fields(j["train"], "train", {"steps", "batch", "log_interval"});
    }
  } else if (kind == "extract") {
    check_fields(j, kind,
                 with({"behavior_ckpt", "critic", "policy", "srpo",
                       "diagnostics"}));
    if (!j.contains("behavior_ckpt")) {
      throw ConfigError("extract needs behavior_ckpt");
    }
    check_fields(j.at("critic"), "critic", {"kind", "a_tar", "path"});
    if (j.contains("policy")) {
      check_fields(j["policy"], "policy", {"init_action"});
    }
    if (j.contains("srpo")) validate_srpo_section(j["srpo"], "srpo");
    if (j.contains("diagnostics")) {
      check_fields(j["diagnostics"], "diagnostics",
                   {"interval", "ode_steps", "max_states"});
    }
  } else if (kind == "density_map") {
    check_fields(j, kind,
                 with({"behavior_ckpt", "t_values", "grid", "ode_steps",
                       "render_png", "threads"}));
    if (!j.contains("behavior_ckpt")) {
      throw ConfigError("density_map needs behavior_ckpt");
    }
    if (j.contains("grid")) validate_grid_section(j["grid"], "grid");
  } else if (kind == "figure2") {
    check_fields(j, kind,
                 with({"mode_half_distance", "mode_sigma", "n", "model",
                       "train", "inv_beta", "fkl_beta", "extract_steps",
                       "extract_lr", "ode_steps"}));
    if (j.contains("model")) validate_model_section(j["model"], "model");
    if (j.contains("train")) validate_train_section(j["train"], "train");
  } else if (kind == "figure3" || kind == "ablation_beta") {
    check_fields(j, kind,
                 with({"dataset", "behavior_ckpt", "model", "train",
                       "a_tar_grid", "inv_betas", "srpo", "density",
                       "render_png"}));
    if (j.contains("dataset")) validate_dataset_section(j["dataset"], "dataset");
    if (j.contains("model")) validate_model_section(j["model"], "model");
    if (j.contains("train")) validate_train_section(j["train"], "train");
    if (j.contains("a_tar_grid")) validate_grid_section(j["a_tar_grid"], "a_tar_grid");
    if (j.contains("srpo")) validate_srpo_section(j["srpo"], "srpo");
    if (j.contains("density")) {
      check_fields(j["density"], "density", {"n", "t", "ode_steps"});
    }
  } else if (kind == "figure5_ensemble") {
    check_fields(j, kind,
                 with({"dataset", "behavior_ckpt", "model", "train",
                       "t_values", "grid", "a_tar_grid", "inv_beta", "srpo",
                       "ode_steps", "threads", "percentile_samples"}));
    if (j.contains("dataset")) validate_dataset_section(j["dataset"], "dataset");
    if (j.contains("model")) validate_model_section(j["model"], "model");
    if (j.contains("train")) validate_train_section(j["train"], "train");
    if (j.contains("grid")) validate_grid_section(j["grid"], "grid");
    if (j.contains("a_tar_grid")) validate_grid_section(j["a_tar_grid"], "a_tar_grid");
    if (j.contains("srpo")) validate_srpo_section(j["srpo"], "srpo");
  } else if (kind == "ablation_omega") {
    check_fields(j, kind,
                 with({"dataset", "behavior_ckpt", "model", "train",
                       "a_tar_grid", "inv_beta", "omega_modes", "srpo",
                       "ode_steps"}));
    if (j.contains("dataset")) validate_dataset_section(j["dataset"], "dataset");
    if (j.contains("model")) validate_model_section(j["model"], "model");
    if (j.contains("train")) validate_train_section(j["train"], "train");
    if (j.contains("a_tar_grid")) validate_grid_section(j["a_tar_grid"], "a_tar_grid");
    if (j.contains("srpo")) validate_srpo_section(j["srpo"], "srpo");
  } else if (kind == "ablation_baseline") {
    check_fields(j, kind,
                 with({"behavior_ckpt", "action", "inv_beta", "n_draws",
                       "omega_mode"}));
    if (!j.contains("behavior_ckpt")) {
      throw ConfigError("ablation_baseline needs behavior_ckpt");
    }
  } else {
    throw ConfigError("unknown experiment kind: " + kind);
  }
}

BehaviorConfig behavior_config_from(const json& j) {
  BehaviorConfig cfg;
  if (j.is_null()) return cfg;
  cfg.state_dim = j.value("state_dim", cfg.state_dim);
  cfg.action_dim = j.value("action_dim", cfg.action_dim);
  cfg.trunk_width = j.value("width", cfg.trunk_width);
  cfg.trunk_blocks = j.value("blocks", cfg.trunk_blocks);
  cfg.dropout = j.value("dropout", cfg.dropout);
  cfg.fourier_frequencies =
      j.value("fourier_frequencies", cfg.fourier_frequencies);
  cfg.fourier_scale = j.value("fourier_scale", cfg.fourier_scale);
  cfg.beta_min = j.value("beta_min", cfg.beta_min);
  cfg.beta_max = j.value("beta_max", cfg.beta_max);
  return cfg;
}

BehaviorTrainConfig behavior_train_from(const json& j) {
  BehaviorTrainConfig cfg;
  if (j.is_null()) return cfg;
  cfg.steps = j.value("steps", cfg.steps);
  cfg.batch_size = j.value("batch", cfg.batch_size);
  cfg.adam.lr = j.value("lr", cfg.adam.lr);
  cfg.adam.weight_decay = j.value("weight_decay", cfg.adam.weight_decay);
  cfg.t_lo = j.value("t_lo", cfg.t_lo);
  cfg.t_hi = j.value("t_hi", cfg.t_hi);
  cfg.ckpt_interval = j.value("ckpt_interval", cfg.ckpt_interval);
  cfg.log_interval = j.value("log_interval", cfg.log_interval);
  return cfg;
}

SrpoConfig srpo_config_from(const json& j) {
  SrpoConfig cfg;
  cfg.steps = 1500;
  cfg.batch_size = 1;
  cfg.adam.lr = 0.01;
  if (j.is_null()) return cfg;
  cfg.inv_beta = j.value("inv_beta", cfg.inv_beta);
  if (j.contains("beta_mode")) {
    const auto m = j["beta_mode"].get<std::string>();
    if (m == "fixed") {
      cfg.beta_mode = BetaMode::fixed;
    } else if (m == "grad_normalized") {
      cfg.beta_mode = BetaMode::grad_normalized;
    } else {
      throw ConfigError("unknown beta_mode: " + m);
    }
  }
  if (j.contains("omega_mode")) {
    const auto m = j["omega_mode"].get<std::string>();
    if (m == "dirac_t0") {
      cfg.omega_mode = OmegaMode::dirac_t0;
    } else if (m == "sigma_sq") {
      cfg.omega_mode = OmegaMode::sigma_sq;
    } else {
      throw ConfigError("unknown omega_mode: " + m);
    }
  }
  cfg.dirac_t0 = j.value("dirac_t0", cfg.dirac_t0);
  cfg.use_baseline = j.value("use_baseline", cfg.use_baseline);
  cfg.t_lo = j.value("t_lo", cfg.t_lo);
  cfg.t_hi = j.value("t_hi", cfg.t_hi);
  cfg.mc_samples = j.value("mc_samples", cfg.mc_samples);
  cfg.steps = j.value("steps", cfg.steps);
  cfg.batch_size = j.value("batch", cfg.batch_size);
  cfg.adam.lr = j.value("lr", cfg.adam.lr);
  return cfg;
}

BanditDataset dataset_from(const json& j) {
  if (j.contains("path")) {
    return load_bandit(j.at("path").get<std::string>());
  }
  return generate_bandit(j.at("name").get<std::string>(),
                         j.at("n").get<std::size_t>(),
                         j.value("seed", std::uint64_t{0}));
}

struct ExperimentRun {
  const ExperimentConfig& cfg;
  RunManifest manifest;

  const json& spec() const { return cfg.spec; }

  std::filesystem::path artifact(const std::string& rel) {
    manifest.artifacts.push_back(rel);
    return cfg.out_dir / rel;
  }

  void metric(const std::string& key, double value) {
    manifest.metrics[key] = value;
  }
};

// Loads the behavior model from "behavior_ckpt" or trains one from the
// dataset/model/train sections, writing behavior.ckpt + loss.csv artifacts.
BehaviorModel obtain_behavior(ExperimentRun& run, Rng& rng) {
  const json& j = run.spec();
  if (j.contains("behavior_ckpt")) {
    const std::string path = j["behavior_ckpt"].get<std::string>();
    if (!std::filesystem::exists(path)) {
      throw DependencyError("behavior checkpoint missing for stage '" +
                            run.cfg.kind + "': " + path);
    }
    return BehaviorModel::load(path);
  }
  if (!j.contains("dataset")) {
    throw DependencyError("stage '" + run.cfg.kind +
                          "' needs behavior_ckpt or a dataset to train from");
  }
  const BanditDataset data = dataset_from(j["dataset"]);
  BehaviorConfig bc = behavior_config_from(j.value("model", json()));
  BehaviorTrainConfig tc = behavior_train_from(j.value("train", json()));
  tc.loss_csv = run.artifact("behavior_loss.csv");
  Rng train_rng = rng.split("behavior");
  BehaviorModel model(bc, train_rng);
  Rng loop_rng = train_rng.split("train");
  const TrainCurve curve =
      train_behavior(model, to_state_actions(data), tc, loop_rng);
  model.save(run.artifact("behavior.ckpt"), nullptr, tc.steps, run.cfg.seed,
             data.name);
  if (!curve.losses.empty()) run.metric("final_loss", curve.losses.back());
  return model;
}

struct TarGrid {
  std::vector<Vector> targets;
};

TarGrid tar_grid_from(const json& j) {
  TarGrid grid;
  const std::size_t n = j.is_null() ? 5 : j.value("n", 5);
  const double lo = j.is_null() ? -3.0 : j.value("lo", -3.0);
  const double hi = j.is_null() ? 3.0 : j.value("hi", 3.0);
  for (std::size_t iy = 0; iy < n; ++iy) {
    for (std::size_t ix = 0; ix < n; ++ix) {
      const double fx = n == 1 ? 0.5 : static_cast<double>(ix) / (n - 1);
      const double fy = n == 1 ? 0.5 : static_cast<double>(iy) / (n - 1);
      grid.targets.push_back({lo + fx * (hi - lo), lo + fy * (hi - lo)});
    }
  }
  return grid;
}

struct ScatterRow {
  Vector a_tar;
  Vector action;
  double inv_beta = 0.0;
  std::string omega_mode;
};

// One bandit extraction per (a_tar, inv_beta) cell; the policy is the
// bias-only constant action initialized at the cell's Q-optimum.
std::vector<ScatterRow> grid_extraction(const BehaviorModel& behavior,
                                        const TarGrid& grid,
                                        const std::vector<double>& inv_betas,
                                        const SrpoConfig& base,
                                        const std::string& omega_label,
                                        Rng& rng) {
  std::vector<ScatterRow> rows;
  const Matrix no_state(1, 0);
  for (std::size_t c = 0; c < grid.targets.size(); ++c) {
    for (const double ib : inv_betas) {
      SrpoConfig cfg = base;
      cfg.inv_beta = ib;
      QuadraticQ critic(grid.targets[c]);
      PolicyConfig pcfg;
      pcfg.state_dim = 0;
      pcfg.action_dim = 2;
      Rng cell_rng = rng.split("cell/" + std::to_string(c) + "/" +
                               fmt_num(ib));
      PolicyNet policy(pcfg, cell_rng);
      policy.set_constant_action(grid.targets[c]);
      extract_policy(policy, no_state, critic, behavior, cfg, cell_rng);
      ScatterRow row;
      row.a_tar = grid.targets[c];
      row.action = policy.act(Vector{});
      row.inv_beta = ib;
      row.omega_mode = omega_label;
      rows.push_back(std::move(row));
    }
  }
  return rows;
}

void write_scatter_csv(const std::vector<ScatterRow>& rows,
                       const std::filesystem::path& path) {
  std::ofstream out(path);
  if (!out) throw DependencyError("cannot write scatter csv: " + path.string());
  out << "a_tar_x,a_tar_y,a_x,a_y,beta,omega_mode\n";
  out.precision(17);
  for (const auto& r : rows) {
    const double beta = r.inv_beta > 0.0
                            ? 1.0 / r.inv_beta
                            : std::numeric_limits<double>::infinity();
    out << r.a_tar[0] << ',' << r.a_tar[1] << ',' << r.action[0] << ','
        << r.action[1] << ',' << beta << ',' << r.omega_mode << '\n';
  }
}

// 10th-percentile log-density of (a subsample of) the dataset under the
// trained model; the support threshold used by the figure proxies.
double support_threshold(const BehaviorModel& behavior,
                         const BanditDataset& data, std::size_t max_samples,
                         std::size_t ode_steps, Rng& rng) {
  const std::size_t n = std::min<std::size_t>(max_samples, data.samples.rows);
  Matrix pts(n, 2);
  for (std::size_t i = 0; i < n; ++i) {
    const std::size_t idx = rng.below(data.samples.rows);
    pts.at(i, 0) = data.samples.at(idx, 0);
    pts.at(i, 1) = data.samples.at(idx, 1);
  }
  Vector ld = log_density_batch(behavior, pts, Vector{}, 0.02, ode_steps, 2);
  std::sort(ld.begin(), ld.end());
  return ld[n / 10];
}

double fraction_above_threshold(const BehaviorModel& behavior,
                                const std::vector<ScatterRow>& rows,
                                double inv_beta, double threshold,
                                std::size_t ode_steps) {
  std::vector<const ScatterRow*> sel;
  for (const auto& r : rows) {
    if (r.inv_beta == inv_beta) sel.push_back(&r);
  }
  if (sel.empty()) return 0.0;
  Matrix pts(sel.size(), 2);
  for (std::size_t i = 0; i < sel.size(); ++i) {
    pts.at(i, 0) = sel[i]->action[0];
    pts.at(i, 1) = sel[i]->action[1];
  }
  const Vector ld =
      log_density_batch(behavior, pts, Vector{}, 0.02, ode_steps, 2);
  std::size_t above = 0;
  for (const double v : ld) {
    if (v > threshold) ++above;
  }
  return static_cast<double>(above) / static_cast<double>(sel.size());
}

void run_train_behavior(ExperimentRun& run, Rng& rng) {
  obtain_behavior(run, rng);
}

void run_train_critic(ExperimentRun& run, Rng& rng) {
  const json& j = run.spec();
  const json& cj = j.at("chain");
  const MdpDataset data = generate_chain_mdp(
      cj.at("n_states").get<std::size_t>(),
      cj.at("rewards").get<std::vector<std::vector<double>>>(),
      cj.value("behavior_mix", std::vector<double>{}),
      cj.value("copies", std::size_t{64}), cj.value("seed", std::uint64_t{0}),
      cj.value("discount", 0.99));
  CriticConfig cc;
  cc.state_dim = 1;
  cc.action_dim = 1;
  const json critic_j = j.value("critic", json());
  if (!critic_j.is_null()) {
    cc.hidden = critic_j.value("hidden", cc.hidden);
    cc.tau = critic_j.value("tau", cc.tau);
    cc.discount = critic_j.value("discount", data.discount);
    cc.target_ema = critic_j.value("target_ema", cc.target_ema);
    cc.adam.lr = critic_j.value("lr", cc.adam.lr);
  } else {
    cc.discount = data.discount;
  }
  Rng crng = rng.split("critic");
  CriticPair critic(cc, crng);
  CriticTrainConfig tc;
  const json train_j = j.value("train", json());
  if (!train_j.is_null()) {
    tc.steps = train_j.value("steps", tc.steps);
    tc.batch_size = train_j.value("batch", tc.batch_size);
    tc.log_interval = train_j.value("log_interval", tc.log_interval);
  }
  tc.loss_csv = run.artifact("critic_loss.csv");
  Rng loop = crng.split("train");
  const CriticCurve curve = train_critic(critic, data, tc, loop);
  critic.save(run.artifact("critic"));
  if (!curve.q_losses.empty()) {
    run.metric("final_q_loss", curve.q_losses.back());
    run.metric("final_v_loss", curve.v_losses.back());
  }
}

void run_extract(ExperimentRun& run, Rng& rng) {
  const json& j = run.spec();
  BehaviorModel behavior = obtain_behavior(run, rng);
  const json& cj = j.at("critic");
  std::unique_ptr<CriticModel> critic;
  std::unique_ptr<CriticPair> learned;
  if (cj.at("kind").get<std::string>() == "quadratic") {
    critic = std::make_unique<QuadraticQ>(cj.at("a_tar").get<Vector>());
  } else if (cj.at("kind").get<std::string>() == "checkpoint") {
    const std::string path = cj.at("path").get<std::string>();
    if (!std::filesystem::exists(path)) {
      throw DependencyError("critic checkpoint missing for stage 'extract': " +
                            path);
    }
    learned = std::make_unique<CriticPair>(CriticPair::load(path));
    critic = nullptr;
  } else {
    throw ConfigError("critic.kind must be quadratic or checkpoint");
  }
  const CriticModel& cref = critic ? *critic : *learned;
  SrpoConfig scfg = srpo_config_from(j.value("srpo", json()));
  PolicyConfig pcfg;
  pcfg.state_dim = 0;
  pcfg.action_dim = behavior.action_dim();
  Rng prng = rng.split("policy");
  PolicyNet policy(pcfg, prng);
  if (j.contains("policy") && j["policy"].contains("init_action")) {
    policy.set_constant_action(j["policy"]["init_action"].get<Vector>());
  }
  ExtractionDiagnostics diag;
  const json dj = j.value("diagnostics", json());
  if (!dj.is_null()) {
    diag.interval = dj.value("interval", diag.interval);
    diag.ode_steps = dj.value("ode_steps", diag.ode_steps);
    diag.max_states = dj.value("max_states", diag.max_states);
    if (diag.interval > 0) diag.csv = run.artifact("diagnostics.csv");
  }
  Matrix no_state(1, 0);
  Rng xrng = rng.split("extract");
  extract_policy(policy, no_state, cref, behavior, scfg, xrng, diag);
  policy.save(run.artifact("policy.ckpt"));
  const Vector a = policy.act(Vector{});
  run.metric("action_x", a[0]);
  run.metric("action_y", a.size() > 1 ? a[1] : 0.0);
  run.metric("q_value", cref.value(Vector{}, a));
  run.metric("log_density", log_density(behavior, a, Vector{}, 0.02, 100));
}

void run_density_map(ExperimentRun& run, Rng&) {
  const json& j = run.spec();
  const std::string ckpt_path = j.at("behavior_ckpt").get<std::string>();
  if (!std::filesystem::exists(ckpt_path)) {
    throw DependencyError(
        "behavior checkpoint missing for stage 'density_map': " + ckpt_path);
  }
  const NetCheckpoint raw = load_checkpoint(ckpt_path);
  const std::string tag = raw.extra.value("dataset", "model");
  const BehaviorModel behavior = BehaviorModel::load(ckpt_path);
  const std::vector<double> ts =
      j.value("t_values", std::vector<double>{0.02, 0.1, 0.3, 1.0});
  const json gj = j.value("grid", json());
  const std::size_t n = gj.is_null() ? 64 : gj.value("n", 64);
  const double lo = gj.is_null() ? -4.0 : gj.value("lo", -4.0);
  const double hi = gj.is_null() ? 4.0 : gj.value("hi", 4.0);
  const std::size_t ode_steps = j.value("ode_steps", std::size_t{200});
  const unsigned threads = j.value("threads", 2u);
  const bool render = j.value("render_png", false);
  for (const double t : ts) {
    const DensityGrid grid = density_grid(behavior, Vector{}, t, lo, hi, lo,
                                          hi, n, n, ode_steps, threads);
    // File names carry the dataset tag, diffusion time, and training step.
    const std::string stem = "density_" + tag + "_t" + fmt_num(t) + "_step" +
                             std::to_string(raw.step);
    write_density_csv(grid, run.artifact(stem + ".csv"));
    if (render && png_support_available()) {
      write_density_png(grid, run.artifact(stem + ".png"));
    }
    run.metric("integral_t" + fmt_num(t), grid.integral());
    run.metric("tv_t" + fmt_num(t), grid.total_variation());
  }
}

void run_figure2(ExperimentRun& run, Rng& rng) {
  const json& j = run.spec();
  const double hd = j.value("mode_half_distance", 2.0);
  const double ms = j.value("mode_sigma", 0.3);
  const std::size_t n = j.value("n", std::size_t{20000});
  const BanditDataset data = generate_two_modes(hd, ms, n, run.cfg.seed);

  BehaviorConfig bc = behavior_config_from(j.value("model", json()));
  bc.trunk_width = j.contains("model") ? bc.trunk_width : 64;
  bc.trunk_blocks = j.contains("model") ? bc.trunk_blocks : 3;
  bc.dropout = j.contains("model") ? bc.dropout : 0.05;
  BehaviorTrainConfig tc = behavior_train_from(j.value("train", json()));
  if (!j.contains("train")) {
    tc.steps = 15000;
    tc.batch_size = 256;
  }
  tc.loss_csv = run.artifact("behavior_loss.csv");
  Rng brng = rng.split("behavior");
  BehaviorModel behavior(bc, brng);
  Rng loop = brng.split("train");
  train_behavior(behavior, to_state_actions(data), tc, loop);
  behavior.save(run.artifact("behavior.ckpt"));

  QuadraticQ critic(Vector{0.0, 0.0});  // equal Q at both modes
  const double inv_beta = j.value("inv_beta", 2.0);
  const std::uint64_t steps = j.value("extract_steps", std::uint64_t{2000});
  const double lr = j.value("extract_lr", 0.01);
  const std::size_t ode_steps = j.value("ode_steps", std::size_t{120});

  // Shared off-axis init from a dataset sample.
  Rng init_rng = rng.split("init");
  const std::size_t init_idx = init_rng.below(data.samples.rows);
  const Vector init{data.samples.at(init_idx, 0), data.samples.at(init_idx, 1)};
  PolicyConfig pcfg;
  pcfg.state_dim = 0;
  pcfg.action_dim = 2;
  const Matrix no_state(1, 0);

  SrpoConfig scfg;
  scfg.inv_beta = inv_beta;
  scfg.steps = steps;
  scfg.batch_size = 1;
  scfg.adam.lr = lr;
  Rng srng = rng.split("srpo");
  PolicyNet srpo_policy(pcfg, srng);
  srpo_policy.set_constant_action(init);
  extract_policy(srpo_policy, no_state, critic, behavior, scfg, srng);

  ForwardKlConfig fcfg;
  fcfg.beta = j.value("fkl_beta", 1.0);
  Rng frng = rng.split("fkl");
  ForwardKlResult fkl =
      forward_kl_baseline(to_state_actions(data), critic, pcfg, fcfg, frng);

  Rng rrng = rng.split("rkl");
  PolicyNet rkl_policy(pcfg, rrng);
  rkl_policy.set_constant_action(init);
  gaussian_reverse_kl_baseline(rkl_policy, no_state, to_state_actions(data),
                               critic, scfg, rrng);

  const Vector modes[2] = {{-hd, 0.0}, {hd, 0.0}};
  auto dist_to_mode = [&](const Vector& a) {
    double best = std::numeric_limits<double>::infinity();
    for (const auto& m : modes) {
      best = std::min(best, std::hypot(a[0] - m[0], a[1] - m[1]));
    }
    return best;
  };
  const auto out_csv = run.artifact("summary.csv");
  std::ofstream out(out_csv);
  out << "method,a_x,a_y,dist_to_nearest_mode,log_density\n";
  out.precision(17);
  const std::pair<std::string, Vector> results[3] = {
      {"srpo", srpo_policy.act(Vector{})},
      {"forward_kl", fkl.policy.act(Vector{})},
      {"reverse_kl_gaussian", rkl_policy.act(Vector{})}};
  for (const auto& [method, a] : results) {
    const double d = dist_to_mode(a);
    const double ld = log_density(behavior, a, Vector{}, 0.02, ode_steps);
    out << method << ',' << a[0] << ',' << a[1] << ',' << d << ',' << ld
        << '\n';
    run.metric(method + "_dist_to_mode", d);
    run.metric(method + "_log_density", ld);
  }
}

void run_figure3(ExperimentRun& run, Rng& rng, bool with_density) {
  const json& j = run.spec();
  BehaviorModel behavior = obtain_behavior(run, rng);
  const TarGrid grid = tar_grid_from(j.value("a_tar_grid", json()));
  const std::vector<double> inv_betas = j.value(
      "inv_betas", std::vector<double>{0.0, 0.2, 0.5, 1.0, 2.0, 4.0});
  SrpoConfig base = srpo_config_from(j.value("srpo", json()));
  Rng xrng = rng.split("extract");
  const std::string omega_label =
      base.omega_mode == OmegaMode::dirac_t0 ? "dirac_t0" : "sigma_sq";
  const auto rows =
      grid_extraction(behavior, grid, inv_betas, base, omega_label, xrng);
  write_scatter_csv(rows, run.artifact("scatter.csv"));
  for (const double ib : inv_betas) {
    double acc = 0.0;
    std::size_t count = 0;
    for (const auto& r : rows) {
      if (r.inv_beta == ib) {
        acc += std::hypot(r.action[0] - r.a_tar[0], r.action[1] - r.a_tar[1]);
        ++count;
      }
    }
    run.metric("mean_dist_ib" + fmt_num(ib),
               acc / static_cast<double>(count));
  }
  if (with_density) {
    const json dj = j.value("density", json());
    const std::size_t n = dj.is_null() ? 64 : dj.value("n", 64);
    const double t = dj.is_null() ? 0.02 : dj.value("t", 0.02);
    const std::size_t ode_steps =
        dj.is_null() ? 150 : dj.value("ode_steps", std::size_t{150});
    const DensityGrid dg = density_grid(behavior, Vector{}, t, -4.0, 4.0,
                                        -4.0, 4.0, n, n, ode_steps, 2);
    write_density_csv(dg, run.artifact("density_t" + fmt_num(t) + ".csv"));
    if (j.value("render_png", false) && png_support_available()) {
      write_density_png(dg, run.artifact("density_t" + fmt_num(t) + ".png"));
    }
    run.metric("density_integral", dg.integral());
  }
}

void run_figure5(ExperimentRun& run, Rng& rng) {
  const json& j = run.spec();
  BehaviorModel behavior = obtain_behavior(run, rng);
  const std::vector<double> ts =
      j.value("t_values", std::vector<double>{0.02, 0.1, 0.3, 1.0});
  const json gj = j.value("grid", json());
  const std::size_t gn = gj.is_null() ? 64 : gj.value("n", 64);
  const std::size_t ode_steps = j.value("ode_steps", std::size_t{150});
  const unsigned threads = j.value("threads", 2u);
  for (const double t : ts) {
    const DensityGrid grid = density_grid(behavior, Vector{}, t, -4.0, 4.0,
                                          -4.0, 4.0, gn, gn, ode_steps,
                                          threads);
    write_density_csv(grid, run.artifact("density_t" + fmt_num(t) + ".csv"));
    run.metric("tv_t" + fmt_num(t), grid.total_variation());
    run.metric("integral_t" + fmt_num(t), grid.integral());
  }
  // Time-ensembled vs single-noisy-time extraction.
  const TarGrid grid = tar_grid_from(j.value("a_tar_grid", json()));
  const double inv_beta = j.value("inv_beta", 4.0);
  SrpoConfig base = srpo_config_from(j.value("srpo", json()));
  base.omega_mode = OmegaMode::sigma_sq;
  Rng xrng = rng.split("extract/sigma");
  auto rows_sigma = grid_extraction(behavior, grid, {inv_beta}, base,
                                    "sigma_sq", xrng);
  SrpoConfig dirac = base;
  dirac.omega_mode = OmegaMode::dirac_t0;
  dirac.dirac_t0 = base.t_hi;
  Rng drng = rng.split("extract/dirac_hi");
  auto rows_dirac = grid_extraction(behavior, grid, {inv_beta}, dirac,
                                    "dirac_hi", drng);
  write_scatter_csv(rows_sigma, run.artifact("scatter_sigma_sq.csv"));
  write_scatter_csv(rows_dirac, run.artifact("scatter_dirac_hi.csv"));

  // Support threshold from the training data itself.
  if (j.contains("dataset")) {
    const BanditDataset data = dataset_from(j["dataset"]);
    Rng trng = rng.split("threshold");
    const double thr = support_threshold(
        behavior, data, j.value("percentile_samples", std::size_t{256}),
        ode_steps, trng);
    run.metric("support_threshold", thr);
    run.metric("frac_above_sigma_sq",
               fraction_above_threshold(behavior, rows_sigma, inv_beta, thr,
                                        ode_steps));
    run.metric("frac_above_dirac_hi",
               fraction_above_threshold(behavior, rows_dirac, inv_beta, thr,
                                        ode_steps));
  }
}

void run_ablation_omega(ExperimentRun& run, Rng& rng) {
  const json& j = run.spec();
  BehaviorModel behavior = obtain_behavior(run, rng);
  const TarGrid grid = tar_grid_from(j.value("a_tar_grid", json()));
  const double inv_beta = j.value("inv_beta", 2.0);
  const std::vector<std::string> modes = j.value(
      "omega_modes",
      std::vector<std::string>{"dirac_t0", "sigma_sq", "dirac_hi"});
  SrpoConfig base = srpo_config_from(j.value("srpo", json()));
  const std::size_t ode_steps = j.value("ode_steps", std::size_t{100});
  for (const auto& mode : modes) {
    SrpoConfig cfg = base;
    if (mode == "dirac_t0") {
      cfg.omega_mode = OmegaMode::dirac_t0;
    } else if (mode == "sigma_sq") {
      cfg.omega_mode = OmegaMode::sigma_sq;
    } else if (mode == "dirac_hi") {
      cfg.omega_mode = OmegaMode::dirac_t0;
      cfg.dirac_t0 = cfg.t_hi;
    } else {
      throw ConfigError("unknown omega mode in ablation: " + mode);
    }
    Rng xrng = rng.split("extract/" + mode);
    const auto rows =
        grid_extraction(behavior, grid, {inv_beta}, cfg, mode, xrng);
    write_scatter_csv(rows, run.artifact("scatter_" + mode + ".csv"));
    Matrix pts(rows.size(), 2);
    for (std::size_t i = 0; i < rows.size(); ++i) {
      pts.at(i, 0) = rows[i].action[0];
      pts.at(i, 1) = rows[i].action[1];
    }
    const Vector ld =
        log_density_batch(behavior, pts, Vector{}, 0.02, ode_steps, 2);
    double acc = 0.0;
    for (const double v : ld) acc += v;
    run.metric("mean_log_density_" + mode,
               acc / static_cast<double>(ld.size()));
  }
}

void run_ablation_baseline(ExperimentRun& run, Rng& rng) {
  const json& j = run.spec();
  const std::string path = j.at("behavior_ckpt").get<std::string>();
  if (!std::filesystem::exists(path)) {
    throw DependencyError(
        "behavior checkpoint missing for stage 'ablation_baseline': " + path);
  }
  const BehaviorModel behavior = BehaviorModel::load(path);
  const Vector action = j.value("action", Vector{1.0, 1.0});
  const std::size_t n_draws = j.value("n_draws", std::size_t{1000});
  SrpoConfig cfg;
  cfg.inv_beta = j.value("inv_beta", 1.0);
  cfg.omega_mode = OmegaMode::sigma_sq;
  cfg.mc_samples = 1;

  Matrix with(n_draws, 2);
  Matrix without(n_draws, 2);
  Rng draw_rng = rng.split("draws");
  for (std::size_t i = 0; i < n_draws; ++i) {
    Rng per_draw = draw_rng.split("d" + std::to_string(i));
    Rng replay = per_draw;  // identical (t, eps) for both variants
    cfg.use_baseline = true;
    const Vector w = regularizer_draw(behavior, action, Vector{}, cfg,
                                      per_draw);
    cfg.use_baseline = false;
    const Vector wo = regularizer_draw(behavior, action, Vector{}, cfg,
                                       replay);
    for (std::size_t c = 0; c < 2; ++c) {
      with.at(i, c) = w[c];
      without.at(i, c) = wo[c];
    }
  }
  const auto csv = run.artifact("baseline_variance.csv");
  std::ofstream out(csv);
  out << "coord,mean_with,mean_without,var_with,var_without\n";
  out.precision(17);
  for (std::size_t c = 0; c < 2; ++c) {
    double mw = 0.0, mwo = 0.0;
    for (std::size_t i = 0; i < n_draws; ++i) {
      mw += with.at(i, c);
      mwo += without.at(i, c);
    }
    mw /= static_cast<double>(n_draws);
    mwo /= static_cast<double>(n_draws);
    double vw = 0.0, vwo = 0.0;
    for (std::size_t i = 0; i < n_draws; ++i) {
      vw += (with.at(i, c) - mw) * (with.at(i, c) - mw);
      vwo += (without.at(i, c) - mwo) * (without.at(i, c) - mwo);
    }
    vw /= static_cast<double>(n_draws - 1);
    vwo /= static_cast<double>(n_draws - 1);
    out << c << ',' << mw << ',' << mwo << ',' << vw << ',' << vwo << '\n';
    run.metric("mean_with_" + std::to_string(c), mw);
    run.metric("mean_without_" + std::to_string(c), mwo);
    run.metric("var_with_" + std::to_string(c), vw);
    run.metric("var_without_" + std::to_string(c), vwo);
  }
}

}  // namespace

nlohmann::json RunManifest::to_json() const {
  json j;
  j["kind"] = kind;
  j["config_hash"] = config_hash;
  j["version_tag"] = version_tag;
  j["started_at"] = started_at;
  j["finished_at"] = finished_at;
  j["artifacts"] = artifacts;
  j["metrics"] = metrics;
  return j;
}

std::filesystem::path default_out_root() {
  if (const char* env = std::getenv("SRPO_OUT_ROOT")) {
    return env;
  }
  return "srpo_out";
}

std::string config_hash_hex(const json& j) {
  const std::string canonical = j.dump();
  char buf[32];
  std::snprintf(buf, sizeof(buf), "%016llx",
                static_cast<unsigned long long>(fnv1a64(canonical)));
  return buf;
}

ExperimentConfig parse_experiment_config(const json& j,
                                         const std::filesystem::path& root) {
  if (!j.is_object()) throw ConfigError("experiment config must be an object");
  if (!j.contains("version") ||
      j["version"].get<int>() != kConfigVersion) {
    throw ConfigError("config version must be " +
                      std::to_string(kConfigVersion));
  }
  if (!j.contains("kind")) throw ConfigError("config needs a kind");
  const std::string kind = j["kind"].get<std::string>();
  if (!kKinds.contains(kind)) {
    throw ConfigError("unknown experiment kind: " + kind);
  }
  validate_kind(kind, j);
  ExperimentConfig cfg;
  cfg.spec = j;
  cfg.kind = kind;
  cfg.seed = j.value("seed", std::uint64_t{0});
  cfg.out_dir = j.contains("out_dir")
                    ? std::filesystem::path(j["out_dir"].get<std::string>())
                    : root / kind;
  return cfg;
}

ExperimentConfig load_experiment_config(const std::filesystem::path& path,
                                        const std::filesystem::path& root) {
  std::ifstream in(path);
  if (!in) throw DependencyError("config not found: " + path.string());
  json j;
  try {
    in >> j;
  } catch (const json::exception& e) {
    throw ConfigError("config is not valid json: " + std::string(e.what()));
  }
  return parse_experiment_config(j, root);
}

RunManifest run_experiment(const ExperimentConfig& cfg) {
  std::filesystem::create_directories(cfg.out_dir);
  ExperimentRun run{cfg, {}};
  run.manifest.kind = cfg.kind;
  run.manifest.config_hash = config_hash_hex(cfg.spec);
  run.manifest.started_at = now_iso8601();
  Rng rng = make_stream(cfg.seed, "experiment/" + cfg.kind);
  if (cfg.kind == "train_behavior") {
    run_train_behavior(run, rng);
  } else if (cfg.kind == "train_critic") {
    run_train_critic(run, rng);
  } else if (cfg.kind == "extract") {
    run_extract(run, rng);
  } else if (cfg.kind == "density_map") {
    run_density_map(run, rng);
  } else if (cfg.kind == "figure2") {
    run_figure2(run, rng);
  } else if (cfg.kind == "figure3") {
    run_figure3(run, rng, true);
  } else if (cfg.kind == "ablation_beta") {
    run_figure3(run, rng, false);
  } else if (cfg.kind == "figure5_ensemble") {
    run_figure5(run, rng);
  } else if (cfg.kind == "ablation_omega") {
    run_ablation_omega(run, rng);
  } else if (cfg.kind == "ablation_baseline") {
    run_ablation_baseline(run, rng);
  } else {
    throw ConfigError("unknown experiment kind: " + cfg.kind);
  }
  run.manifest.finished_at = now_iso8601();
  std::ofstream mf(cfg.out_dir / "manifest.json");
  mf << run.manifest.to_json().dump(2) << '\n';
  return run.manifest;
}

bool SweepResult::all_ok() const {
  return std::all_of(cells.begin(), cells.end(),
                     [](const SweepCellOutcome& c) { return c.ok; });
}

SweepResult run_sweep(const json& sweep_config,
                      const std::filesystem::path& out_root,
                      unsigned parallel) {
  check_fields(sweep_config, "sweep", {"version", "kind", "cells", "parallel"});
  if (sweep_config.value("kind", "") != "sweep") {
    throw ConfigError("sweep config kind must be 'sweep'");
  }
  if (sweep_config.value("version", 0) != kConfigVersion) {
    throw ConfigError("sweep config version must be " +
                      std::to_string(kConfigVersion));
  }
  if (!sweep_config.contains("cells")) {
    throw ConfigError("sweep needs a nonempty cells array");
  }
  const json& cells = sweep_config.at("cells");
  if (!cells.is_array() || cells.empty()) {
    throw ConfigError("sweep needs a nonempty cells array");
  }
  if (parallel == 0) {
    parallel = sweep_config.value("parallel", 1u);
  }
  SweepResult result;
  result.cells.resize(cells.size());
  std::atomic<std::size_t> next{0};
  auto worker = [&] {
    for (;;) {
      const std::size_t i = next.fetch_add(1);
      if (i >= cells.size()) return;
      SweepCellOutcome& cell = result.cells[i];
      char fallback[16];
      std::snprintf(fallback, sizeof(fallback), "cell%03zu", i);
      cell.id = cells[i].is_object() ? cells[i].value("id", fallback)
                                     : fallback;
      try {
        json spec = cells[i];
        spec.erase("id");
        if (!spec.contains("out_dir")) {
          spec["out_dir"] = (out_root / cell.id).string();
        }
        const ExperimentConfig cfg = parse_experiment_config(spec, out_root);
        cell.manifest = run_experiment(cfg);
        cell.ok = true;
      } catch (const std::exception& e) {
        cell.ok = false;
        cell.error = e.what();
      }
    }
  };
  std::vector<std::thread> pool;
  const unsigned n_workers =
      std::min<unsigned>(parallel, static_cast<unsigned>(cells.size()));
  for (unsigned w = 0; w + 1 < n_workers; ++w) pool.emplace_back(worker);
  worker();
  for (auto& th : pool) th.join();

  // Wide-format aggregate, one row per cell, order-normalized.
  std::set<std::string> metric_names;
  for (const auto& cell : result.cells) {
    for (const auto& [k, _] : cell.manifest.metrics) metric_names.insert(k);
  }
  std::vector<const SweepCellOutcome*> ordered;
  for (const auto& cell : result.cells) ordered.push_back(&cell);
  std::sort(ordered.begin(), ordered.end(),
            [](const auto* a, const auto* b) { return a->id < b->id; });
  std::filesystem::create_directories(out_root);
  std::ofstream agg(out_root / "aggregate.csv");
  agg << "cell,kind,status";
  for (const auto& name : metric_names) agg << ',' << name;
  agg << '\n';
  agg.precision(17);
  for (const auto* cell : ordered) {
    agg << cell->id << ',' << cell->manifest.kind << ','
        << (cell->ok ? "ok" : "error");
    for (const auto& name : metric_names) {
      agg << ',';
      const auto it = cell->manifest.metrics.find(name);
      if (it != cell->manifest.metrics.end()) agg << it->second;
    }
    agg << '\n';
  }
  return result;
}

}  // namespace srpo
