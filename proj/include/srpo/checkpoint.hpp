#pragma once
// Versioned checkpoint container: layer shapes and activation tags, raw
// parameter arrays, optional Fourier time-embedding frequencies, optional
// optimizer state, RNG seed and step count, plus a free-form "extra"
// section for module-specific metadata (dims, schedule parameters, ...).
// Serialized as MessagePack so float64 payloads round-trip bit-exactly.

#include <cstdint>
#include <filesystem>
#include <optional>
#include <vector>

#include <json.hpp>

#include "srpo/net.hpp"
#include "srpo/optim.hpp"

namespace srpo {

struct OptimizerSnapshot {
  AdamConfig config;
  std::vector<Vector> first_moments;
  std::vector<Vector> second_moments;
  std::uint64_t step_count = 0;
};

struct NetCheckpoint {
  DenseNet net;
  std::optional<Vector> fourier_frequencies;
  double fourier_scale = 0.0;
  std::optional<OptimizerSnapshot> optimizer;
  std::uint64_t rng_seed = 0;
  std::uint64_t step = 0;
  nlohmann::json extra = nlohmann::json::object();
};

void save_checkpoint(const NetCheckpoint& ckpt,
                     const std::filesystem::path& path);

// Throws DependencyError if the file is missing, ConfigError if the payload
// is not a compatible checkpoint.
NetCheckpoint load_checkpoint(const std::filesystem::path& path);

OptimizerSnapshot snapshot_optimizer(const OptimizerState& opt);
OptimizerState restore_optimizer(const OptimizerSnapshot& snap, DenseNet& net);

}  // namespace srpo
