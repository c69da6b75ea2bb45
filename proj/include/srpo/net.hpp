#pragma once
// Dense feedforward networks with reverse-mode gradients w.r.t. parameters
// and w.r.t. inputs. Two layer kinds are supported: a plain linear layer
// (optionally relu-activated) and a pre-norm residual block
//
//   y = x + w2 * dropout(relu(w1 * layer_norm(x) + b1)) + b2
//
// Layer norm uses eps = 1e-5 and no learned affine. Dropout is inverted
// (mask / (1-p)) and active only in train mode. All math runs through the
// kernels backend; batched entry points treat matrix rows as samples and
// the single-vector entry points wrap a batch of one.

#include <cstdint>
#include <string>
#include <variant>
#include <vector>

#include "srpo/rng.hpp"
#include "srpo/tensor.hpp"

namespace srpo {

enum class Activation { relu, none };
enum class Mode { train, eval };

struct Linear {
  Matrix w;  // out x in
  Vector b;
  Activation act = Activation::none;
};

struct ResidualBlock {
  Matrix w1;  // width x width
  Vector b1;
  Matrix w2;  // width x width
  Vector b2;
  double dropout_rate = 0.0;
};

using Layer = std::variant<Linear, ResidualBlock>;

struct ParamRef {
  std::string name;
  double* data;
  std::size_t size;
};

class DenseNet {
 public:
  DenseNet() = default;

  // Plain MLP; hidden layers use `hidden`, the last layer uses `out`.
  // dims.front() may be zero (a bias-only head for state-free policies).
  static DenseNet mlp(const std::vector<std::size_t>& dims, Activation hidden,
                      Activation out, Rng& rng);

  // Stem linear (in -> width), `blocks` residual blocks, head linear
  // (width -> out). Stem and head are unactivated.
  static DenseNet residual(std::size_t in, std::size_t width, std::size_t out,
                           std::size_t blocks, double dropout, Rng& rng);

  std::size_t input_dim() const { return input_dim_; }
  std::size_t output_dim() const { return output_dim_; }

  const std::vector<Layer>& layers() const { return layers_; }
  std::vector<Layer>& layers() { return layers_; }

  // Width of each layer boundary: input, every intermediate, output.
  std::vector<std::size_t> layer_dims() const;

  std::vector<ParamRef> param_refs();
  std::size_t param_count() const;

  // Rebuild a net from raw layers (checkpoint loading); validates shapes.
  static DenseNet from_layers(std::vector<Layer> layers);

 private:
  std::vector<Layer> layers_;
  std::size_t input_dim_ = 0;
  std::size_t output_dim_ = 0;

  void validate() const;
};

// Parameter-shaped gradient buffers for one net.
struct Gradients {
  std::vector<Layer> layers;

  void zero();
  std::vector<ParamRef> param_refs();
};

Gradients zeros_like(const DenseNet& net);

// Cached activations of one batched forward pass, consumed by backward.
struct LinearCache {
  Matrix input;
  Matrix pre;  // pre-activation; kept only for relu layers
};

struct ResidualCache {
  Matrix input;
  Matrix normed;    // layer_norm(input)
  Vector inv_std;   // per-row 1/sqrt(var + eps)
  Matrix pre1;      // w1 * normed + b1
  Matrix dropmask;  // 0 or 1/(1-p); empty when dropout inactive
  Matrix hidden;    // dropout(relu(pre1))
};

using LayerCache = std::variant<LinearCache, ResidualCache>;

struct ForwardCache {
  std::vector<LayerCache> layers;
  bool valid = false;
};

// Batched forward; rows of x are independent samples. In train mode with
// dropout-bearing layers an rng is required. Pass a cache to enable a later
// backward pass.
Matrix forward_batch(const DenseNet& net, const Matrix& x, Mode mode,
                     ForwardCache* cache = nullptr, Rng* rng = nullptr);

Vector forward(const DenseNet& net, VecView x, Mode mode = Mode::eval,
               ForwardCache* cache = nullptr, Rng* rng = nullptr);

// Reverse pass over a cached forward. `upstream` holds dL/d(output) per row.
// Parameter gradients are accumulated into `grads` (if non-null) and the
// gradient w.r.t. the input batch is written to `input_grad` (if non-null).
void backward_batch(const DenseNet& net, const ForwardCache& cache,
                    const Matrix& upstream, Gradients* grads,
                    Matrix* input_grad);

// Single-sample conveniences over backward_batch.
void backward_params(const DenseNet& net, const ForwardCache& cache,
                     VecView upstream, Gradients& grads);
Vector backward_input(const DenseNet& net, const ForwardCache& cache,
                      VecView upstream);

// Gaussian Fourier features of a scalar time value:
// [sin(2*pi*f_i*t), cos(2*pi*f_i*t)] pairs with f_i ~ N(0, scale^2) drawn
// once at construction and persisted with checkpoints.
class FourierTimeEmbedding {
 public:
  FourierTimeEmbedding() = default;
  FourierTimeEmbedding(std::size_t num_frequencies, double scale, Rng& rng);
  explicit FourierTimeEmbedding(Vector frequencies, double scale);

  std::size_t dim() const { return 2 * freqs_.size(); }
  double scale() const { return scale_; }
  const Vector& frequencies() const { return freqs_; }

  void write(double t, MutVecView out) const;
  Vector embed(double t) const;

 private:
  Vector freqs_;
  double scale_ = 0.0;
};

}  // namespace srpo
