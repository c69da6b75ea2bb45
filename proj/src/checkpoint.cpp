#include "srpo/checkpoint.hpp"

#include <fstream>

#include "srpo/errors.hpp"

namespace srpo {
namespace {

using nlohmann::json;

constexpr const char* kFormatTag = "srpo-net-checkpoint";
constexpr int kFormatVersion = 1;

json layer_to_json(const Layer& layer) {
  json j;
  if (const auto* l = std::get_if<Linear>(&layer)) {
    j["kind"] = "linear";
    j["out"] = l->w.rows;
    j["in"] = l->w.cols;
    j["act"] = l->act == Activation::relu ? "relu" : "none";
    j["w"] = l->w.data;
    j["b"] = l->b;
  } else {
    const auto& blk = std::get<ResidualBlock>(layer);
    j["kind"] = "residual";
    j["width"] = blk.w1.rows;
    j["dropout"] = blk.dropout_rate;
    j["w1"] = blk.w1.data;
    j["b1"] = blk.b1;
    j["w2"] = blk.w2.data;
    j["b2"] = blk.b2;
  }
  return j;
}

Layer layer_from_json(const json& j) {
  const std::string kind = j.at("kind").get<std::string>();
  if (kind == "linear") {
    Linear l;
    l.w = Matrix(j.at("out").get<std::size_t>(), j.at("in").get<std::size_t>());
    l.w.data = j.at("w").get<std::vector<double>>();
    l.b = j.at("b").get<std::vector<double>>();
    l.act = j.at("act").get<std::string>() == "relu" ? Activation::relu
                                                     : Activation::none;
    if (l.w.data.size() != l.w.rows * l.w.cols || l.b.size() != l.w.rows) {
      throw ConfigError("checkpoint linear layer has inconsistent shapes");
    }
    return l;
  }
  if (kind == "residual") {
    ResidualBlock blk;
    const auto width = j.at("width").get<std::size_t>();
    blk.w1 = Matrix(width, width);
    blk.w2 = Matrix(width, width);
    blk.w1.data = j.at("w1").get<std::vector<double>>();
    blk.w2.data = j.at("w2").get<std::vector<double>>();
    blk.b1 = j.at("b1").get<std::vector<double>>();
    blk.b2 = j.at("b2").get<std::vector<double>>();
    blk.dropout_rate = j.at("dropout").get<double>();
    if (blk.w1.data.size() != width * width ||
        blk.w2.data.size() != width * width || blk.b1.size() != width ||
        blk.b2.size() != width) {
      throw ConfigError("checkpoint residual block has inconsistent shapes");
    }
    return blk;
  }
  throw ConfigError("unknown checkpoint layer kind: " + kind);
}

}  // namespace

void save_checkpoint(const NetCheckpoint& ckpt,
                     const std::filesystem::path& path) {
  json j;
  j["format"] = kFormatTag;
  j["version"] = kFormatVersion;
  json layers = json::array();
  for (const auto& layer : ckpt.net.layers()) {
    layers.push_back(layer_to_json(layer));
  }
  j["net"] = {{"layers", std::move(layers)}};
  if (ckpt.fourier_frequencies.has_value()) {
    j["time_embed"] = {{"frequencies", *ckpt.fourier_frequencies},
                       {"scale", ckpt.fourier_scale}};
  }
  if (ckpt.optimizer.has_value()) {
    const auto& o = *ckpt.optimizer;
    j["optimizer"] = {
        {"lr", o.config.lr},           {"beta1", o.config.beta1},
        {"beta2", o.config.beta2},     {"eps", o.config.eps},
        {"weight_decay", o.config.weight_decay},
        {"m", o.first_moments},        {"v", o.second_moments},
        {"steps", o.step_count},
    };
  }
  j["rng_seed"] = ckpt.rng_seed;
  j["step"] = ckpt.step;
  j["extra"] = ckpt.extra;

  const auto bytes = json::to_msgpack(j);
  std::ofstream out(path, std::ios::binary);
  if (!out) {
    throw DependencyError("cannot open checkpoint for writing: " +
                          path.string());
  }
  out.write(reinterpret_cast<const char*>(bytes.data()),
            static_cast<std::streamsize>(bytes.size()));
  if (!out) {
    throw DependencyError("short write while saving checkpoint: " +
                          path.string());
  }
}

NetCheckpoint load_checkpoint(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) {
    throw DependencyError("checkpoint not found: " + path.string());
  }
  std::vector<std::uint8_t> bytes((std::istreambuf_iterator<char>(in)),
                                  std::istreambuf_iterator<char>());
  json j;
  try {
    j = json::from_msgpack(bytes);
  } catch (const json::exception& e) {
    throw ConfigError("checkpoint is not valid msgpack: " +
                      std::string(e.what()));
  }
  if (!j.is_object() || j.value("format", "") != kFormatTag) {
    throw ConfigError("file is not a net checkpoint: " + path.string());
  }
  if (j.value("version", 0) != kFormatVersion) {
    throw ConfigError("unsupported checkpoint version in " + path.string());
  }
  NetCheckpoint ckpt;
  std::vector<Layer> layers;
  for (const auto& lj : j.at("net").at("layers")) {
    layers.push_back(layer_from_json(lj));
  }
  ckpt.net = DenseNet::from_layers(std::move(layers));
  if (j.contains("time_embed")) {
    ckpt.fourier_frequencies =
        j["time_embed"].at("frequencies").get<std::vector<double>>();
    ckpt.fourier_scale = j["time_embed"].at("scale").get<double>();
  }
  if (j.contains("optimizer")) {
    OptimizerSnapshot o;
    const auto& oj = j["optimizer"];
    o.config.lr = oj.at("lr").get<double>();
    o.config.beta1 = oj.at("beta1").get<double>();
    o.config.beta2 = oj.at("beta2").get<double>();
    o.config.eps = oj.at("eps").get<double>();
    o.config.weight_decay = oj.at("weight_decay").get<double>();
    o.first_moments = oj.at("m").get<std::vector<Vector>>();
    o.second_moments = oj.at("v").get<std::vector<Vector>>();
    o.step_count = oj.at("steps").get<std::uint64_t>();
    ckpt.optimizer = std::move(o);
  }
  ckpt.rng_seed = j.value("rng_seed", std::uint64_t{0});
  ckpt.step = j.value("step", std::uint64_t{0});
  ckpt.extra = j.value("extra", json::object());
  return ckpt;
}

OptimizerSnapshot snapshot_optimizer(const OptimizerState& opt) {
  OptimizerSnapshot snap;
  snap.config = opt.config();
  snap.first_moments = opt.first_moments();
  snap.second_moments = opt.second_moments();
  snap.step_count = opt.step_count();
  return snap;
}

OptimizerState restore_optimizer(const OptimizerSnapshot& snap, DenseNet& net) {
  OptimizerState opt(net, snap.config);
  if (snap.first_moments.size() != opt.first_moments().size()) {
    throw ConfigError("optimizer snapshot does not match net layout");
  }
  opt.first_moments() = snap.first_moments;
  opt.second_moments() = snap.second_moments;
  opt.set_step_count(snap.step_count);
  return opt;
}

}  // namespace srpo
