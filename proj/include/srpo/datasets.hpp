#pragma once
// Deterministic toy-data generators. Bandit datasets are 2D action clouds
// normalized (by construction plus rejection) to lie inside [-4, 4]^2 and
// reproduce bit-exactly from (name, n, seed). Chain MDPs are tiny tabular
// datasets for critic tests.

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "srpo/tensor.hpp"

namespace srpo {

struct BanditDataset {
  std::string name;
  std::uint64_t seed = 0;
  Matrix samples;  // n x 2

  static const std::vector<std::string>& names();
};

// name is one of: 8gaussians, swissroll, checkerboard, 2spirals, rings,
// moons. Unknown names raise ConfigError.
BanditDataset generate_bandit(const std::string& name, std::size_t n_samples,
                              std::uint64_t seed);

// Equal-weight Gaussian modes at (+-half_distance, 0); used by the
// mode-seeking comparison experiment. Not part of the named six.
BanditDataset generate_two_modes(double half_distance, double sigma,
                                 std::size_t n_samples, std::uint64_t seed);

// Columnar binary container: header (magic, version, seed, name) followed by
// the x column then the y column as little-endian float64.
void save_bandit(const BanditDataset& ds, const std::filesystem::path& path);
BanditDataset load_bandit(const std::filesystem::path& path);
// CSV mirror of the binary layout (columns x,y).
void save_bandit_csv(const BanditDataset& ds,
                     const std::filesystem::path& path);

// States/actions paired row-wise; states may have zero columns for the
// unconditional bandit case.
struct StateActionBatch {
  Matrix states;
  Matrix actions;
};

StateActionBatch to_state_actions(const BanditDataset& ds);

struct Transition {
  Vector state;
  Vector action;
  double reward = 0.0;
  Vector next_state;
  bool terminal = false;
};

struct MdpDataset {
  std::vector<Transition> transitions;
  double discount = 0.99;
  std::string behavior_desc;

  std::size_t state_dim() const {
    return transitions.empty() ? 0 : transitions.front().state.size();
  }
  std::size_t action_dim() const {
    return transitions.empty() ? 0 : transitions.front().action.size();
  }
};

// Deterministic chain s0 -> s1 -> ... -> s_{n-1}; states are the scalar
// index, actions the scalar action id. rewards_per_state[i][j] is the reward
// of action j taken in state i (also defining each state's action set; the
// last state's actions self-loop and are terminal). behavior_mix gives
// relative action frequencies (empty = uniform); each (state, action) pair
// is replicated accordingly, `copies` times in total per state, and the
// transition order is shuffled deterministically from the seed.
MdpDataset generate_chain_mdp(
    std::size_t n_states, const std::vector<std::vector<double>>& rewards_per_state,
    const std::vector<double>& behavior_mix, std::size_t copies,
    std::uint64_t seed, double discount = 0.99);

}  // namespace srpo
