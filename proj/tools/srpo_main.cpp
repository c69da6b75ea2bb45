// Command-line front end. Exit codes: 0 success, 2 config error,
// 3 missing dependency, 4 numeric failure.

#include <cstdint>
#include <exception>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <string>

#include <CLI11.hpp>
#include <json.hpp>

#include "srpo/datasets.hpp"
#include "srpo/errors.hpp"
#include "srpo/experiments.hpp"

namespace {

using srpo::ConfigError;
using srpo::DependencyError;
using srpo::NumericError;

struct CommonOpts {
  std::string config;
  std::string out;
  std::optional<std::uint64_t> seed;
};

void add_common(CLI::App* cmd, CommonOpts& opts, bool config_required = true) {
  auto* c = cmd->add_option("--config", opts.config, "experiment config json");
  if (config_required) c->required();
  cmd->add_option("--out", opts.out, "output directory override");
  cmd->add_option("--seed", opts.seed, "seed override");
}

int run_kind(const CommonOpts& opts, const std::string& expected_kind) {
  srpo::ExperimentConfig cfg = srpo::load_experiment_config(
      opts.config, srpo::default_out_root());
  if (!expected_kind.empty() && cfg.kind != expected_kind) {
    throw ConfigError("config kind '" + cfg.kind + "' does not match verb '" +
                      expected_kind + "'");
  }
  if (!opts.out.empty()) cfg.out_dir = opts.out;
  if (opts.seed.has_value()) {
    cfg.seed = *opts.seed;
    cfg.spec["seed"] = *opts.seed;
  }
  const srpo::RunManifest manifest = srpo::run_experiment(cfg);
  std::cout << "wrote " << (cfg.out_dir / "manifest.json").string() << " ("
            << manifest.artifacts.size() << " artifacts)\n";
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"2D offline-RL lab: diffusion behavior models, expectile "
               "critics, and score-regularized policy extraction"};
  app.require_subcommand(1);

  // gen-data
  auto* gen = app.add_subcommand("gen-data", "generate a toy 2D dataset");
  std::string gd_name;
  std::size_t gd_n = 10000;
  std::uint64_t gd_seed = 0;
  std::string gd_out;
  std::string gd_csv;
  gen->add_option("--name", gd_name, "dataset name")->required();
  gen->add_option("--n", gd_n, "number of samples");
  gen->add_option("--seed", gd_seed, "generator seed");
  gen->add_option("--out", gd_out, "output file (columnar binary)")
      ->required();
  gen->add_option("--csv", gd_csv, "also export csv to this path");

  CommonOpts tb, tc, ex, dm, fg, sw;
  auto* train_b = app.add_subcommand("train-behavior",
                                     "train a diffusion behavior model");
  add_common(train_b, tb);
  auto* train_c = app.add_subcommand("train-critic",
                                     "train an expectile critic on a chain");
  add_common(train_c, tc);
  auto* extract = app.add_subcommand("extract", "extract a policy");
  add_common(extract, ex);
  auto* density = app.add_subcommand("density", "evaluate density maps");
  add_common(density, dm);
  auto* figure =
      app.add_subcommand("figure", "run a figure/ablation experiment");
  std::string figure_kind;
  figure->add_option("kind", figure_kind, "experiment kind")->required();
  add_common(figure, fg);

  auto* sweep = app.add_subcommand("sweep", "run a sweep manifest");
  unsigned sw_parallel = 0;
  add_common(sweep, sw);
  sweep->add_option("--parallel", sw_parallel, "max concurrent cells");

  CLI11_PARSE(app, argc, argv);

  try {
    if (gen->parsed()) {
      const srpo::BanditDataset ds =
          srpo::generate_bandit(gd_name, gd_n, gd_seed);
      srpo::save_bandit(ds, gd_out);
      if (!gd_csv.empty()) srpo::save_bandit_csv(ds, gd_csv);
      std::cout << "wrote " << gd_out << " (" << ds.samples.rows
                << " samples)\n";
      return 0;
    }
    if (train_b->parsed()) return run_kind(tb, "train_behavior");
    if (train_c->parsed()) return run_kind(tc, "train_critic");
    if (extract->parsed()) return run_kind(ex, "extract");
    if (density->parsed()) return run_kind(dm, "density_map");
    if (figure->parsed()) return run_kind(fg, figure_kind);
    if (sweep->parsed()) {
      std::ifstream in(sw.config);
      if (!in) throw DependencyError("config not found: " + sw.config);
      nlohmann::json j;
      try {
        in >> j;
      } catch (const nlohmann::json::exception& e) {
        throw ConfigError("config is not valid json: " +
                          std::string(e.what()));
      }
      const std::filesystem::path root =
          sw.out.empty() ? srpo::default_out_root() / "sweep"
                         : std::filesystem::path(sw.out);
      const srpo::SweepResult result = srpo::run_sweep(j, root, sw_parallel);
      for (const auto& cell : result.cells) {
        std::cout << cell.id << ": " << (cell.ok ? "ok" : cell.error) << '\n';
      }
      std::cout << "aggregate: " << (root / "aggregate.csv").string() << '\n';
      return result.all_ok() ? 0 : 4;
    }
  } catch (const ConfigError& e) {
    std::cerr << "config error: " << e.what() << '\n';
    return 2;
  } catch (const DependencyError& e) {
    std::cerr << "dependency error: " << e.what() << '\n';
    return 3;
  } catch (const NumericError& e) {
    std::cerr << "numeric error: " << e.what() << '\n';
    return 4;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 1;
  }
  return 0;
}
