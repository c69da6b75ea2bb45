#pragma once
// Config-driven experiment orchestration: validated JSON configs (strict,
// fail-closed), per-run manifests, and a sweep runner that executes
// independent cells in parallel and aggregates their metrics.

#include <cstdint>
#include <filesystem>
#include <map>
#include <string>
#include <vector>

#include <json.hpp>

namespace srpo {

inline constexpr const char* kVersionTag = "srpo-lab/0.1.0";
inline constexpr int kConfigVersion = 1;

struct RunManifest {
  std::string kind;
  std::string config_hash;  // hex fnv1a64 of the canonical config dump
  std::string version_tag = kVersionTag;
  std::string started_at;
  std::string finished_at;
  std::vector<std::string> artifacts;  // paths relative to out_dir
  std::map<std::string, double> metrics;

  nlohmann::json to_json() const;
};

struct ExperimentConfig {
  nlohmann::json spec;  // validated config object
  std::string kind;
  std::uint64_t seed = 0;
  std::filesystem::path out_dir;
};

// Strict parse: version must match, the kind must be known, and every field
// must belong to the kind's schema (unknown fields are rejected so a typo'd
// ablation flag cannot silently vanish). No compute happens here.
ExperimentConfig parse_experiment_config(
    const nlohmann::json& j, const std::filesystem::path& out_root);

ExperimentConfig load_experiment_config(
    const std::filesystem::path& path, const std::filesystem::path& out_root);

// Executes one experiment; writes artifacts plus manifest.json under
// cfg.out_dir and returns the manifest.
RunManifest run_experiment(const ExperimentConfig& cfg);

struct SweepCellOutcome {
  std::string id;
  bool ok = false;
  std::string error;  // set when !ok
  RunManifest manifest;
};

struct SweepResult {
  std::vector<SweepCellOutcome> cells;
  bool all_ok() const;
};

// Runs every cell of a sweep config ({"kind":"sweep","cells":[...]}); cell
// failures are recorded and do not stop the sweep. Writes aggregate.csv
// (long form: cell,status,metric,value; order-normalized) under out_root.
SweepResult run_sweep(const nlohmann::json& sweep_config,
                      const std::filesystem::path& out_root,
                      unsigned parallel);

// Default output root: $SRPO_OUT_ROOT or ./srpo_out.
std::filesystem::path default_out_root();

std::string config_hash_hex(const nlohmann::json& j);

}  // namespace srpo
