#include "srpo/net.hpp"

#include <cmath>
#include <numbers>
#include <stdexcept>

#include "srpo/errors.hpp"
#include "srpo/kernels.hpp"

namespace srpo {
namespace {

constexpr double kLayerNormEps = 1e-5;

void init_linear(Linear& l, std::size_t out, std::size_t in, Activation act,
                 Rng& rng) {
  l.w = Matrix(out, in);
  l.b.assign(out, 0.0);
  l.act = act;
  const double bound = in > 0 ? 1.0 / std::sqrt(static_cast<double>(in)) : 0.0;
  for (double& v : l.w.data) v = rng.uniform(-bound, bound);
  for (double& v : l.b) v = rng.uniform(-bound, bound);
}

std::size_t layer_in(const Layer& layer) {
  if (const auto* l = std::get_if<Linear>(&layer)) return l->w.cols;
  return std::get<ResidualBlock>(layer).w1.cols;
}

std::size_t layer_out(const Layer& layer) {
  if (const auto* l = std::get_if<Linear>(&layer)) return l->w.rows;
  return std::get<ResidualBlock>(layer).w2.rows;
}

void add_bias_rows(Matrix& m, const Vector& b) {
  for (std::size_t r = 0; r < m.rows; ++r) {
    double* row = m.row(r);
    for (std::size_t c = 0; c < m.cols; ++c) row[c] += b[c];
  }
}

void column_sums_into(const Matrix& g, Vector& out) {
  for (std::size_t r = 0; r < g.rows; ++r) {
    kernels::ops().axpy(1.0, g.row(r), out.data(), g.cols);
  }
}

// y = layer_norm(x) per row; returns per-row inv std.
void layer_norm_rows(const Matrix& x, Matrix& y, Vector& inv_std) {
  const auto& k = kernels::ops();
  y = Matrix(x.rows, x.cols);
  inv_std.assign(x.rows, 0.0);
  const double n = static_cast<double>(x.cols);
  for (std::size_t r = 0; r < x.rows; ++r) {
    const double* xr = x.row(r);
    const double mean = k.sum(xr, x.cols) / n;
    double var = 0.0;
    for (std::size_t c = 0; c < x.cols; ++c) {
      const double d = xr[c] - mean;
      var += d * d;
    }
    var /= n;
    const double is = 1.0 / std::sqrt(var + kLayerNormEps);
    inv_std[r] = is;
    double* yr = y.row(r);
    for (std::size_t c = 0; c < x.cols; ++c) yr[c] = (xr[c] - mean) * is;
  }
}

// dx for y = layer_norm(x): dx = inv_std * (g - mean(g) - y * mean(g.*y)).
void layer_norm_backward_rows(const Matrix& g, const Matrix& normed,
                              const Vector& inv_std, Matrix& dx) {
  const auto& k = kernels::ops();
  dx = Matrix(g.rows, g.cols);
  const double n = static_cast<double>(g.cols);
  for (std::size_t r = 0; r < g.rows; ++r) {
    const double* gr = g.row(r);
    const double* hr = normed.row(r);
    const double gmean = k.sum(gr, g.cols) / n;
    const double ghmean = k.dot(gr, hr, g.cols) / n;
    double* dr = dx.row(r);
    const double is = inv_std[r];
    for (std::size_t c = 0; c < g.cols; ++c) {
      dr[c] = is * (gr[c] - gmean - hr[c] * ghmean);
    }
  }
}

}  // namespace

DenseNet DenseNet::mlp(const std::vector<std::size_t>& dims, Activation hidden,
                       Activation out, Rng& rng) {
  if (dims.size() < 2) {
    throw DimensionError("mlp needs at least an input and an output dim");
  }
  DenseNet net;
  for (std::size_t i = 0; i + 1 < dims.size(); ++i) {
    if (dims[i + 1] == 0 || (i > 0 && dims[i] == 0)) {
      throw DimensionError("mlp layer dims must be positive past the input");
    }
    Linear l;
    const Activation act = (i + 2 == dims.size()) ? out : hidden;
    init_linear(l, dims[i + 1], dims[i], act, rng);
    net.layers_.push_back(std::move(l));
  }
  net.input_dim_ = dims.front();
  net.output_dim_ = dims.back();
  net.validate();
  return net;
}

DenseNet DenseNet::residual(std::size_t in, std::size_t width, std::size_t out,
                            std::size_t blocks, double dropout, Rng& rng) {
  if (width == 0 || out == 0) {
    throw DimensionError("residual net width and output must be positive");
  }
  if (dropout < 0.0 || dropout >= 1.0) {
    throw DimensionError("dropout rate must lie in [0, 1)");
  }
  DenseNet net;
  Linear stem;
  init_linear(stem, width, in, Activation::none, rng);
  net.layers_.push_back(std::move(stem));
  for (std::size_t i = 0; i < blocks; ++i) {
    ResidualBlock blk;
    Linear tmp;
    init_linear(tmp, width, width, Activation::none, rng);
    blk.w1 = std::move(tmp.w);
    blk.b1 = std::move(tmp.b);
    init_linear(tmp, width, width, Activation::none, rng);
    blk.w2 = std::move(tmp.w);
    blk.b2 = std::move(tmp.b);
    blk.dropout_rate = dropout;
    net.layers_.push_back(std::move(blk));
  }
  Linear head;
  init_linear(head, out, width, Activation::none, rng);
  net.layers_.push_back(std::move(head));
  net.input_dim_ = in;
  net.output_dim_ = out;
  net.validate();
  return net;
}

DenseNet DenseNet::from_layers(std::vector<Layer> layers) {
  if (layers.empty()) throw DimensionError("net needs at least one layer");
  DenseNet net;
  net.layers_ = std::move(layers);
  net.input_dim_ = layer_in(net.layers_.front());
  net.output_dim_ = layer_out(net.layers_.back());
  net.validate();
  return net;
}

void DenseNet::validate() const {
  std::size_t prev = input_dim_;
  for (std::size_t i = 0; i < layers_.size(); ++i) {
    const std::size_t in = layer_in(layers_[i]);
    if (in != prev) {
      throw DimensionError("layer " + std::to_string(i) + ": expects input " +
                           std::to_string(in) + " but upstream provides " +
                           std::to_string(prev));
    }
    if (const auto* blk = std::get_if<ResidualBlock>(&layers_[i])) {
      if (blk->w1.rows != blk->w1.cols || blk->w2.rows != blk->w2.cols ||
          blk->w1.rows != blk->w2.rows) {
        throw DimensionError("layer " + std::to_string(i) +
                             ": residual block needs equal input/output width");
      }
      if (blk->dropout_rate < 0.0 || blk->dropout_rate >= 1.0) {
        throw DimensionError("layer " + std::to_string(i) +
                             ": dropout rate must lie in [0, 1)");
      }
    }
    prev = layer_out(layers_[i]);
  }
}

std::vector<std::size_t> DenseNet::layer_dims() const {
  std::vector<std::size_t> dims{input_dim_};
  for (const auto& layer : layers_) dims.push_back(layer_out(layer));
  return dims;
}

namespace {

std::vector<ParamRef> param_refs_of(std::vector<Layer>& layers) {
  std::vector<ParamRef> refs;
  for (std::size_t i = 0; i < layers.size(); ++i) {
    const std::string prefix = "layer" + std::to_string(i);
    if (auto* l = std::get_if<Linear>(&layers[i])) {
      refs.push_back({prefix + ".w", l->w.data.data(), l->w.size()});
      refs.push_back({prefix + ".b", l->b.data(), l->b.size()});
    } else {
      auto& blk = std::get<ResidualBlock>(layers[i]);
      refs.push_back({prefix + ".w1", blk.w1.data.data(), blk.w1.size()});
      refs.push_back({prefix + ".b1", blk.b1.data(), blk.b1.size()});
      refs.push_back({prefix + ".w2", blk.w2.data.data(), blk.w2.size()});
      refs.push_back({prefix + ".b2", blk.b2.data(), blk.b2.size()});
    }
  }
  return refs;
}

}  // namespace

std::vector<ParamRef> DenseNet::param_refs() { return param_refs_of(layers_); }

std::size_t DenseNet::param_count() const {
  std::size_t n = 0;
  for (const auto& layer : layers_) {
    if (const auto* l = std::get_if<Linear>(&layer)) {
      n += l->w.size() + l->b.size();
    } else {
      const auto& blk = std::get<ResidualBlock>(layer);
      n += blk.w1.size() + blk.b1.size() + blk.w2.size() + blk.b2.size();
    }
  }
  return n;
}

void Gradients::zero() {
  for (auto& layer : layers) {
    if (auto* l = std::get_if<Linear>(&layer)) {
      l->w.fill(0.0);
      std::fill(l->b.begin(), l->b.end(), 0.0);
    } else {
      auto& blk = std::get<ResidualBlock>(layer);
      blk.w1.fill(0.0);
      blk.w2.fill(0.0);
      std::fill(blk.b1.begin(), blk.b1.end(), 0.0);
      std::fill(blk.b2.begin(), blk.b2.end(), 0.0);
    }
  }
}

std::vector<ParamRef> Gradients::param_refs() { return param_refs_of(layers); }

Gradients zeros_like(const DenseNet& net) {
  Gradients g;
  g.layers = net.layers();
  g.zero();
  return g;
}

Matrix forward_batch(const DenseNet& net, const Matrix& x, Mode mode,
                     ForwardCache* cache, Rng* rng) {
  if (x.cols != net.input_dim()) {
    throw DimensionError("forward: input width " + std::to_string(x.cols) +
                         " does not match net input " +
                         std::to_string(net.input_dim()));
  }
  const auto& k = kernels::ops();
  if (cache != nullptr) {
    cache->layers.clear();
    cache->valid = false;
  }
  Matrix cur = x;
  for (std::size_t i = 0; i < net.layers().size(); ++i) {
    const Layer& layer = net.layers()[i];
    if (const auto* l = std::get_if<Linear>(&layer)) {
      Matrix out(cur.rows, l->w.rows);
      k.gemm_nt(cur.data.data(), l->w.data.data(), out.data.data(), cur.rows,
                l->w.rows, l->w.cols, false);
      add_bias_rows(out, l->b);
      LinearCache lc;
      if (cache != nullptr) lc.input = std::move(cur);
      if (l->act == Activation::relu) {
        if (cache != nullptr) lc.pre = out;
        k.relu(out.data.data(), out.data.data(), out.size());
      }
      if (cache != nullptr) cache->layers.emplace_back(std::move(lc));
      cur = std::move(out);
    } else {
      const auto& blk = std::get<ResidualBlock>(layer);
      ResidualCache rc;
      Matrix normed;
      Vector inv_std;
      layer_norm_rows(cur, normed, inv_std);
      Matrix pre1(cur.rows, blk.w1.rows);
      k.gemm_nt(normed.data.data(), blk.w1.data.data(), pre1.data.data(),
                cur.rows, blk.w1.rows, blk.w1.cols, false);
      add_bias_rows(pre1, blk.b1);
      Matrix hidden(pre1.rows, pre1.cols);
      k.relu(pre1.data.data(), hidden.data.data(), pre1.size());
      const bool drop = mode == Mode::train && blk.dropout_rate > 0.0;
      Matrix dropmask;
      if (drop) {
        if (rng == nullptr) {
          throw NumericError("train-mode forward with dropout needs an rng");
        }
        dropmask = Matrix(hidden.rows, hidden.cols);
        const double keep = 1.0 - blk.dropout_rate;
        const double scale = 1.0 / keep;
        for (std::size_t q = 0; q < dropmask.size(); ++q) {
          dropmask.data[q] = rng->uniform() < keep ? scale : 0.0;
          hidden.data[q] *= dropmask.data[q];
        }
      }
      Matrix out = cur;  // skip connection
      k.gemm_nt(hidden.data.data(), blk.w2.data.data(), out.data.data(),
                hidden.rows, blk.w2.rows, blk.w2.cols, true);
      add_bias_rows(out, blk.b2);
      if (cache != nullptr) {
        rc.input = std::move(cur);
        rc.normed = std::move(normed);
        rc.inv_std = std::move(inv_std);
        rc.pre1 = std::move(pre1);
        rc.dropmask = std::move(dropmask);
        rc.hidden = std::move(hidden);
        cache->layers.emplace_back(std::move(rc));
      }
      cur = std::move(out);
    }
  }
  if (cache != nullptr) cache->valid = true;
  return cur;
}

Vector forward(const DenseNet& net, VecView x, Mode mode, ForwardCache* cache,
               Rng* rng) {
  Matrix in(1, x.size());
  std::copy(x.begin(), x.end(), in.data.begin());
  Matrix out = forward_batch(net, in, mode, cache, rng);
  return Vector(out.data.begin(), out.data.end());
}

void backward_batch(const DenseNet& net, const ForwardCache& cache,
                    const Matrix& upstream, Gradients* grads,
                    Matrix* input_grad) {
  if (!cache.valid || cache.layers.size() != net.layers().size()) {
    throw NumericError("backward called without a cached forward pass");
  }
  if (upstream.cols != net.output_dim()) {
    throw DimensionError("backward: upstream width " +
                         std::to_string(upstream.cols) +
                         " does not match net output " +
                         std::to_string(net.output_dim()));
  }
  const auto& k = kernels::ops();
  Matrix g = upstream;
  for (std::size_t idx = net.layers().size(); idx-- > 0;) {
    const Layer& layer = net.layers()[idx];
    const bool need_input_grad = idx > 0 || input_grad != nullptr;
    if (const auto* l = std::get_if<Linear>(&layer)) {
      const auto& lc = std::get<LinearCache>(cache.layers[idx]);
      Matrix gz;
      if (l->act == Activation::relu) {
        gz = Matrix(g.rows, g.cols);
        k.relu_grad(lc.pre.data.data(), g.data.data(), gz.data.data(),
                    g.size());
      } else {
        gz = std::move(g);
      }
      if (grads != nullptr) {
        auto& gl = std::get<Linear>(grads->layers[idx]);
        k.gemm_tn(gz.data.data(), lc.input.data.data(), gl.w.data.data(),
                  l->w.rows, l->w.cols, gz.rows, true);
        column_sums_into(gz, gl.b);
      }
      if (need_input_grad) {
        Matrix gx(gz.rows, l->w.cols);
        k.gemm_nn(gz.data.data(), l->w.data.data(), gx.data.data(), gz.rows,
                  l->w.cols, l->w.rows, false);
        g = std::move(gx);
      }
    } else {
      const auto& blk = std::get<ResidualBlock>(layer);
      const auto& rc = std::get<ResidualCache>(cache.layers[idx]);
      // Through w2 into the hidden path.
      Matrix gd(g.rows, blk.w2.cols);
      k.gemm_nn(g.data.data(), blk.w2.data.data(), gd.data.data(), g.rows,
                blk.w2.cols, blk.w2.rows, false);
      if (grads != nullptr) {
        auto& gb = std::get<ResidualBlock>(grads->layers[idx]);
        k.gemm_tn(g.data.data(), rc.hidden.data.data(), gb.w2.data.data(),
                  blk.w2.rows, blk.w2.cols, g.rows, true);
        column_sums_into(g, gb.b2);
      }
      if (rc.dropmask.size() > 0) {
        for (std::size_t q = 0; q < gd.size(); ++q) {
          gd.data[q] *= rc.dropmask.data[q];
        }
      }
      Matrix gz1(gd.rows, gd.cols);
      k.relu_grad(rc.pre1.data.data(), gd.data.data(), gz1.data.data(),
                  gd.size());
      if (grads != nullptr) {
        auto& gb = std::get<ResidualBlock>(grads->layers[idx]);
        k.gemm_tn(gz1.data.data(), rc.normed.data.data(), gb.w1.data.data(),
                  blk.w1.rows, blk.w1.cols, gz1.rows, true);
        column_sums_into(gz1, gb.b1);
      }
      if (need_input_grad) {
        Matrix gh(gz1.rows, blk.w1.cols);
        k.gemm_nn(gz1.data.data(), blk.w1.data.data(), gh.data.data(),
                  gz1.rows, blk.w1.cols, blk.w1.rows, false);
        Matrix gln;
        layer_norm_backward_rows(gh, rc.normed, rc.inv_std, gln);
        // Skip connection adds the upstream gradient through unchanged.
        for (std::size_t q = 0; q < g.size(); ++q) gln.data[q] += g.data[q];
        g = std::move(gln);
      }
    }
  }
  if (input_grad != nullptr) *input_grad = std::move(g);
}

void backward_params(const DenseNet& net, const ForwardCache& cache,
                     VecView upstream, Gradients& grads) {
  Matrix up(1, upstream.size());
  std::copy(upstream.begin(), upstream.end(), up.data.begin());
  backward_batch(net, cache, up, &grads, nullptr);
}

Vector backward_input(const DenseNet& net, const ForwardCache& cache,
                      VecView upstream) {
  Matrix up(1, upstream.size());
  std::copy(upstream.begin(), upstream.end(), up.data.begin());
  Matrix ig;
  backward_batch(net, cache, up, nullptr, &ig);
  return Vector(ig.data.begin(), ig.data.end());
}

FourierTimeEmbedding::FourierTimeEmbedding(std::size_t num_frequencies,
                                           double scale, Rng& rng)
    : scale_(scale) {
  if (num_frequencies == 0 || scale <= 0.0) {
    throw DimensionError("fourier embedding needs positive size and scale");
  }
  freqs_.reserve(num_frequencies);
  for (std::size_t i = 0; i < num_frequencies; ++i) {
    freqs_.push_back(scale * rng.normal());
  }
}

FourierTimeEmbedding::FourierTimeEmbedding(Vector frequencies, double scale)
    : freqs_(std::move(frequencies)), scale_(scale) {}

void FourierTimeEmbedding::write(double t, MutVecView out) const {
  const double two_pi = 2.0 * std::numbers::pi;
  for (std::size_t i = 0; i < freqs_.size(); ++i) {
    const double phase = two_pi * freqs_[i] * t;
    out[2 * i] = std::sin(phase);
    out[2 * i + 1] = std::cos(phase);
  }
}

Vector FourierTimeEmbedding::embed(double t) const {
  Vector out(dim());
  write(t, out);
  return out;
}

}  // namespace srpo
