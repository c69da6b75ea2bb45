#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <filesystem>
#include <fstream>
#include <sstream>

#include "srpo/errors.hpp"
#include "srpo/experiments.hpp"

using namespace srpo;
using nlohmann::json;

namespace {

namespace fs = std::filesystem;

struct TempDir {
  fs::path path;
  TempDir() {
    path = fs::temp_directory_path() /
           ("srpo_exp_" + std::to_string(::getpid()) + "_" +
            std::to_string(counter()++));
    fs::create_directories(path);
  }
  ~TempDir() { fs::remove_all(path); }
  static int& counter() {
    static int c = 0;
    return c;
  }
};

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::stringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

// Small enough to run in a unit test.
json tiny_behavior_config(const fs::path& out) {
  return json{
      {"version", 1},
      {"kind", "train_behavior"},
      {"seed", 5},
      {"out_dir", out.string()},
      {"dataset", {{"name", "8gaussians"}, {"n", 512}, {"seed", 1}}},
      {"model",
       {{"width", 16}, {"blocks", 1}, {"dropout", 0.0},
        {"fourier_frequencies", 4}}},
      {"train", {{"steps", 40}, {"batch", 32}}},
  };
}

}  // namespace

TEST_CASE("configs are validated fail-closed before any compute") {
  const fs::path root = "unused";
  CHECK_THROWS_AS(parse_experiment_config(json{{"kind", "figure3"}}, root),
                  ConfigError);  // missing version
  CHECK_THROWS_AS(
      parse_experiment_config(json{{"version", 2}, {"kind", "figure3"}}, root),
      ConfigError);  // wrong version
  CHECK_THROWS_AS(
      parse_experiment_config(json{{"version", 1}, {"kind", "figure9"}}, root),
      ConfigError);  // unknown kind
  // Unknown field at the top level.
  json j = tiny_behavior_config("x");
  j["typo_field"] = 1;
  CHECK_THROWS_AS(parse_experiment_config(j, root), ConfigError);
  // Unknown field in a section.
  j = tiny_behavior_config("x");
  j["train"]["momentum"] = 0.9;
  CHECK_THROWS_AS(parse_experiment_config(j, root), ConfigError);
  // Unknown dataset name.
  j = tiny_behavior_config("x");
  j["dataset"]["name"] = "9gaussians";
  CHECK_THROWS_AS(parse_experiment_config(j, root), ConfigError);
  // The valid config parses.
  CHECK_NOTHROW(parse_experiment_config(tiny_behavior_config("x"), root));
}

TEST_CASE("train_behavior experiment produces manifest and artifacts") {
  TempDir tmp;
  const json j = tiny_behavior_config(tmp.path / "run");
  const ExperimentConfig cfg = parse_experiment_config(j, tmp.path);
  const RunManifest manifest = run_experiment(cfg);
  CHECK(manifest.kind == "train_behavior");
  CHECK(manifest.config_hash == config_hash_hex(j));
  CHECK(manifest.metrics.contains("final_loss"));
  CHECK(fs::exists(tmp.path / "run" / "manifest.json"));
  for (const auto& rel : manifest.artifacts) {
    CHECK(fs::exists(tmp.path / "run" / rel));
  }
}

TEST_CASE("rerunning an experiment reproduces metric csvs byte for byte") {
  TempDir tmp;
  const json j = tiny_behavior_config(tmp.path / "a");
  run_experiment(parse_experiment_config(j, tmp.path));
  const std::string first = slurp(tmp.path / "a" / "behavior_loss.csv");
  json j2 = j;
  j2["out_dir"] = (tmp.path / "b").string();
  run_experiment(parse_experiment_config(j2, tmp.path));
  const std::string second = slurp(tmp.path / "b" / "behavior_loss.csv");
  CHECK(!first.empty());
  CHECK(first == second);
}

TEST_CASE("extract stage fails cleanly on a missing checkpoint") {
  TempDir tmp;
  const json j{
      {"version", 1},
      {"kind", "extract"},
      {"out_dir", (tmp.path / "x").string()},
      {"behavior_ckpt", (tmp.path / "nope.ckpt").string()},
      {"critic", {{"kind", "quadratic"}, {"a_tar", {1.0, 0.0}}}},
  };
  const ExperimentConfig cfg = parse_experiment_config(j, tmp.path);
  try {
    run_experiment(cfg);
    FAIL("expected DependencyError");
  } catch (const DependencyError& e) {
    // The error must name the blocked stage.
    CHECK(std::string(e.what()).find("extract") != std::string::npos);
  }
}

TEST_CASE("extract runs end to end against a trained tiny model") {
  TempDir tmp;
  run_experiment(
      parse_experiment_config(tiny_behavior_config(tmp.path / "b"), tmp.path));
  const json j{
      {"version", 1},
      {"kind", "extract"},
      {"seed", 3},
      {"out_dir", (tmp.path / "x").string()},
      {"behavior_ckpt", (tmp.path / "b" / "behavior.ckpt").string()},
      {"critic", {{"kind", "quadratic"}, {"a_tar", {1.0, 0.5}}}},
      {"policy", {{"init_action", {1.0, 0.5}}}},
      {"srpo",
       {{"inv_beta", 0.0}, {"omega_mode", "dirac_t0"}, {"steps", 50},
        {"lr", 0.01}}},
  };
  const RunManifest manifest =
      run_experiment(parse_experiment_config(j, tmp.path));
  CHECK(manifest.metrics.contains("action_x"));
  // inv_beta = 0 keeps the Q optimum.
  CHECK(manifest.metrics.at("action_x") == doctest::Approx(1.0).epsilon(0.01));
  CHECK(fs::exists(tmp.path / "x" / "policy.ckpt"));
}

TEST_CASE("sweep records failures, keeps going, and aggregates") {
  TempDir tmp;
  json good = tiny_behavior_config("");
  good.erase("out_dir");
  good["id"] = "good_a";
  json good2 = good;
  good2["id"] = "good_b";
  good2["seed"] = 6;
  json poisoned = good;
  poisoned["id"] = "bad";
  poisoned["train"]["bogus_knob"] = true;
  const json sweep{{"version", 1},
                   {"kind", "sweep"},
                   {"parallel", 2},
                   {"cells", json::array({good, good2, poisoned})}};
  const SweepResult result = run_sweep(sweep, tmp.path / "s1", 2);
  REQUIRE(result.cells.size() == 3);
  CHECK_FALSE(result.all_ok());
  int ok = 0, failed = 0;
  for (const auto& cell : result.cells) {
    cell.ok ? ++ok : ++failed;
  }
  CHECK(ok == 2);
  CHECK(failed == 1);
  CHECK(fs::exists(tmp.path / "s1" / "good_a" / "manifest.json"));
  CHECK(fs::exists(tmp.path / "s1" / "aggregate.csv"));

  // Parallelism must not change the aggregate bytes.
  const SweepResult serial = run_sweep(sweep, tmp.path / "s2", 1);
  CHECK(serial.all_ok() == result.all_ok());
  CHECK(slurp(tmp.path / "s1" / "aggregate.csv") ==
        slurp(tmp.path / "s2" / "aggregate.csv"));

  // One row per cell plus the header.
  std::istringstream agg(slurp(tmp.path / "s1" / "aggregate.csv"));
  std::string line;
  std::size_t rows = 0;
  std::getline(agg, line);
  CHECK(line.rfind("cell,kind,status", 0) == 0);
  while (std::getline(agg, line)) ++rows;
  CHECK(rows == 3);
}

TEST_CASE("figure3 runs tiny end to end with scatter and density artifacts") {
  TempDir tmp;
  const json j{
      {"version", 1},
      {"kind", "figure3"},
      {"seed", 9},
      {"out_dir", (tmp.path / "f3").string()},
      {"dataset", {{"name", "8gaussians"}, {"n", 512}, {"seed", 1}}},
      {"model",
       {{"width", 16}, {"blocks", 1}, {"dropout", 0.0},
        {"fourier_frequencies", 4}}},
      {"train", {{"steps", 60}, {"batch", 64}}},
      {"a_tar_grid", {{"n", 2}, {"lo", -2.0}, {"hi", 2.0}}},
      {"inv_betas", {0.0, 1.0}},
      {"srpo", {{"steps", 40}, {"mc_samples", 4}, {"lr", 0.02}}},
      {"density", {{"n", 12}, {"t", 0.1}, {"ode_steps", 60}}},
  };
  const RunManifest m = run_experiment(parse_experiment_config(j, tmp.path));
  CHECK(fs::exists(tmp.path / "f3" / "scatter.csv"));
  CHECK(m.metrics.contains("mean_dist_ib0"));
  CHECK(m.metrics.contains("mean_dist_ib1"));
  CHECK(m.metrics.contains("density_integral"));
  // The greedy endpoint stays at its target.
  CHECK(m.metrics.at("mean_dist_ib0") < 1e-6);
  // Scatter rows: one per (a_tar, inv_beta) cell plus a header.
  std::istringstream scatter(slurp(tmp.path / "f3" / "scatter.csv"));
  std::string line;
  std::getline(scatter, line);
  CHECK(line == "a_tar_x,a_tar_y,a_x,a_y,beta,omega_mode");
  std::size_t rows = 0;
  while (std::getline(scatter, line)) ++rows;
  CHECK(rows == 2 * 2 * 2);
}

TEST_CASE("density_map names artifacts by dataset, time, and step") {
  TempDir tmp;
  run_experiment(
      parse_experiment_config(tiny_behavior_config(tmp.path / "b"), tmp.path));
  const json j{
      {"version", 1},
      {"kind", "density_map"},
      {"out_dir", (tmp.path / "d").string()},
      {"behavior_ckpt", (tmp.path / "b" / "behavior.ckpt").string()},
      {"t_values", {0.3, 1.0}},
      {"grid", {{"n", 8}, {"lo", -4.0}, {"hi", 4.0}}},
      {"ode_steps", 60},
      {"threads", 1},
  };
  const RunManifest m = run_experiment(parse_experiment_config(j, tmp.path));
  CHECK(fs::exists(tmp.path / "d" / "density_8gaussians_t0.3_step40.csv"));
  CHECK(fs::exists(tmp.path / "d" / "density_8gaussians_t1_step40.csv"));
  CHECK(m.metrics.contains("integral_t0.3"));
  CHECK(m.metrics.contains("tv_t1"));
}

TEST_CASE("sweep config is validated") {
  CHECK_THROWS_AS(run_sweep(json{{"version", 1}, {"kind", "sweep"}}, "out", 1),
                  ConfigError);
  CHECK_THROWS_AS(
      run_sweep(json{{"version", 1},
                     {"kind", "sweep"},
                     {"cells", json::array()}},
                "out", 1),
      ConfigError);
}
