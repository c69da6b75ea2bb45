#include "srpo/datasets.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <fstream>
#include <numbers>

#include "srpo/errors.hpp"
#include "srpo/rng.hpp"

namespace srpo {
namespace {

constexpr double kFrame = 4.0;
constexpr double kPi = std::numbers::pi;

struct Point {
  double x, y;
};

bool in_frame(Point p) {
  return p.x >= -kFrame && p.x <= kFrame && p.y >= -kFrame && p.y <= kFrame;
}

Point draw_8gaussians(Rng& rng) {
  const double radius = 2.0 * std::sqrt(2.0);
  const auto k = static_cast<double>(rng.below(8));
  const double angle = k * kPi / 4.0;
  return {radius * std::cos(angle) + 0.3 * rng.normal(),
          radius * std::sin(angle) + 0.3 * rng.normal()};
}

Point draw_swissroll(Rng& rng) {
  const double u = rng.uniform(1.5 * kPi, 4.5 * kPi);
  const double scale = 3.6 / (4.5 * kPi);
  return {scale * u * std::cos(u) + 0.15 * rng.normal(),
          scale * u * std::sin(u) + 0.15 * rng.normal()};
}

Point draw_checkerboard(Rng& rng) {
  // 4x4 grid of side-2 cells over the frame; the 8 cells with even
  // (ix + iy) parity are active.
  static constexpr int kActive[8][2] = {{0, 0}, {0, 2}, {1, 1}, {1, 3},
                                        {2, 0}, {2, 2}, {3, 1}, {3, 3}};
  const auto c = rng.below(8);
  const double x0 = -kFrame + 2.0 * kActive[c][0];
  const double y0 = -kFrame + 2.0 * kActive[c][1];
  return {x0 + rng.uniform(0.0, 2.0), y0 + rng.uniform(0.0, 2.0)};
}

Point draw_2spirals(Rng& rng) {
  const double theta = kPi * (0.5 + 2.5 * std::sqrt(rng.uniform()));
  const double r = 3.6 * theta / (3.0 * kPi);
  const double sign = rng.below(2) == 0 ? 1.0 : -1.0;
  return {sign * r * std::cos(theta) + 0.1 * rng.normal(),
          sign * r * std::sin(theta) + 0.1 * rng.normal()};
}

Point draw_rings(Rng& rng) {
  // Radii weighted by circumference so the line density looks uniform.
  static constexpr double kRadii[4] = {0.8, 1.6, 2.4, 3.2};
  const double u = rng.uniform() * (0.8 + 1.6 + 2.4 + 3.2);
  int ring = 0;
  double acc = kRadii[0];
  while (u > acc && ring < 3) acc += kRadii[++ring];
  const double theta = rng.uniform(0.0, 2.0 * kPi);
  const double r = kRadii[ring] + 0.08 * rng.normal();
  return {r * std::cos(theta), r * std::sin(theta)};
}

Point draw_moons(Rng& rng) {
  const double t = rng.uniform(0.0, kPi);
  const bool upper = rng.below(2) == 0;
  if (upper) {
    return {-1.0 + 2.0 * std::cos(t) + 0.1 * rng.normal(),
            -0.5 + 2.0 * std::sin(t) + 0.1 * rng.normal()};
  }
  return {1.0 + 2.0 * std::cos(t) + 0.1 * rng.normal(),
          0.5 - 2.0 * std::sin(t) + 0.1 * rng.normal()};
}

using DrawFn = Point (*)(Rng&);

DrawFn lookup(const std::string& name) {
  if (name == "8gaussians") return draw_8gaussians;
  if (name == "swissroll") return draw_swissroll;
  if (name == "checkerboard") return draw_checkerboard;
  if (name == "2spirals") return draw_2spirals;
  if (name == "rings") return draw_rings;
  if (name == "moons") return draw_moons;
  throw ConfigError("unknown bandit dataset: " + name);
}

BanditDataset fill(const std::string& name, std::size_t n, std::uint64_t seed,
                   DrawFn draw) {
  if (n < 1) throw ConfigError("dataset needs at least one sample");
  BanditDataset ds;
  ds.name = name;
  ds.seed = seed;
  ds.samples = Matrix(n, 2);
  Rng rng = make_stream(seed, "dataset/" + name);
  for (std::size_t i = 0; i < n; ++i) {
    Point p{};
    do {
      p = draw(rng);
    } while (!in_frame(p));
    ds.samples.at(i, 0) = p.x;
    ds.samples.at(i, 1) = p.y;
  }
  return ds;
}

}  // namespace

const std::vector<std::string>& BanditDataset::names() {
  static const std::vector<std::string> kNames = {
      "8gaussians", "swissroll", "checkerboard", "2spirals", "rings", "moons"};
  return kNames;
}

BanditDataset generate_bandit(const std::string& name, std::size_t n_samples,
                              std::uint64_t seed) {
  return fill(name, n_samples, seed, lookup(name));
}

BanditDataset generate_two_modes(double half_distance, double sigma,
                                 std::size_t n_samples, std::uint64_t seed) {
  if (n_samples < 1) throw ConfigError("dataset needs at least one sample");
  BanditDataset ds;
  ds.name = "twomodes";
  ds.seed = seed;
  ds.samples = Matrix(n_samples, 2);
  Rng rng = make_stream(seed, "dataset/twomodes");
  for (std::size_t i = 0; i < n_samples; ++i) {
    Point p{};
    do {
      const double cx = rng.below(2) == 0 ? -half_distance : half_distance;
      p = {cx + sigma * rng.normal(), sigma * rng.normal()};
    } while (!in_frame(p));
    ds.samples.at(i, 0) = p.x;
    ds.samples.at(i, 1) = p.y;
  }
  return ds;
}

namespace {

constexpr char kDatasetMagic[8] = {'S', 'R', 'P', 'O', 'D', 'A', 'T', '1'};

template <typename T>
void write_pod(std::ofstream& out, const T& v) {
  out.write(reinterpret_cast<const char*>(&v), sizeof(T));
}

template <typename T>
void read_pod(std::ifstream& in, T& v) {
  in.read(reinterpret_cast<char*>(&v), sizeof(T));
}

}  // namespace

void save_bandit(const BanditDataset& ds, const std::filesystem::path& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw DependencyError("cannot write dataset: " + path.string());
  out.write(kDatasetMagic, sizeof(kDatasetMagic));
  write_pod(out, static_cast<std::uint64_t>(ds.samples.rows));
  write_pod(out, ds.seed);
  write_pod(out, static_cast<std::uint32_t>(ds.name.size()));
  out.write(ds.name.data(), static_cast<std::streamsize>(ds.name.size()));
  // Columnar payload: all x, then all y.
  for (std::size_t c = 0; c < 2; ++c) {
    for (std::size_t i = 0; i < ds.samples.rows; ++i) {
      write_pod(out, ds.samples.at(i, c));
    }
  }
  if (!out) throw DependencyError("short write: " + path.string());
}

BanditDataset load_bandit(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw DependencyError("dataset not found: " + path.string());
  char magic[8];
  in.read(magic, sizeof(magic));
  if (!in || std::memcmp(magic, kDatasetMagic, sizeof(magic)) != 0) {
    throw ConfigError("not a bandit dataset file: " + path.string());
  }
  std::uint64_t n = 0;
  std::uint64_t seed = 0;
  std::uint32_t name_len = 0;
  read_pod(in, n);
  read_pod(in, seed);
  read_pod(in, name_len);
  std::string name(name_len, '\0');
  in.read(name.data(), name_len);
  BanditDataset ds;
  ds.name = std::move(name);
  ds.seed = seed;
  ds.samples = Matrix(n, 2);
  for (std::size_t c = 0; c < 2; ++c) {
    for (std::size_t i = 0; i < n; ++i) {
      read_pod(in, ds.samples.at(i, c));
    }
  }
  if (!in) throw ConfigError("truncated dataset file: " + path.string());
  return ds;
}

void save_bandit_csv(const BanditDataset& ds,
                     const std::filesystem::path& path) {
  std::ofstream out(path);
  if (!out) throw DependencyError("cannot write dataset: " + path.string());
  out << "x,y\n";
  out.precision(17);
  for (std::size_t i = 0; i < ds.samples.rows; ++i) {
    out << ds.samples.at(i, 0) << ',' << ds.samples.at(i, 1) << '\n';
  }
}

StateActionBatch to_state_actions(const BanditDataset& ds) {
  StateActionBatch batch;
  batch.states = Matrix(ds.samples.rows, 0);
  batch.actions = ds.samples;
  return batch;
}

MdpDataset generate_chain_mdp(
    std::size_t n_states,
    const std::vector<std::vector<double>>& rewards_per_state,
    const std::vector<double>& behavior_mix, std::size_t copies,
    std::uint64_t seed, double discount) {
  if (n_states < 2) throw ConfigError("chain mdp needs at least two states");
  if (rewards_per_state.size() != n_states) {
    throw ConfigError("rewards_per_state must list every state");
  }
  MdpDataset ds;
  ds.discount = discount;
  ds.behavior_desc = "chain(" + std::to_string(n_states) + ") mix=" +
                     (behavior_mix.empty() ? "uniform" : "custom");
  for (std::size_t i = 0; i < n_states; ++i) {
    const auto& rewards = rewards_per_state[i];
    if (rewards.empty()) {
      throw ConfigError("state " + std::to_string(i) + " has no actions");
    }
    double mix_total = 0.0;
    for (std::size_t j = 0; j < rewards.size(); ++j) {
      mix_total += behavior_mix.empty() ? 1.0 : behavior_mix[j % behavior_mix.size()];
    }
    for (std::size_t j = 0; j < rewards.size(); ++j) {
      const double w =
          behavior_mix.empty() ? 1.0 : behavior_mix[j % behavior_mix.size()];
      auto count = static_cast<std::size_t>(
          std::llround(static_cast<double>(copies) * w / mix_total));
      count = std::max<std::size_t>(count, 1);
      const bool last = i + 1 == n_states;
      Transition t;
      t.state = {static_cast<double>(i)};
      t.action = {static_cast<double>(j)};
      t.reward = rewards[j];
      t.next_state = {static_cast<double>(last ? i : i + 1)};
      t.terminal = last;
      for (std::size_t c = 0; c < count; ++c) ds.transitions.push_back(t);
    }
  }
  // Deterministic shuffle so minibatch order carries no structure.
  Rng rng = make_stream(seed, "dataset/chain");
  for (std::size_t i = ds.transitions.size(); i > 1; --i) {
    std::swap(ds.transitions[i - 1], ds.transitions[rng.below(i)]);
  }
  return ds;
}

}  // namespace srpo
