#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <filesystem>
#include <fstream>

#include "oracle/oracles.hpp"
#include "srpo/checkpoint.hpp"
#include "srpo/errors.hpp"
#include "srpo/net.hpp"
#include "srpo/optim.hpp"
#include "srpo/rng.hpp"

using namespace srpo;

namespace {

Vector random_vec(std::size_t n, Rng& rng) {
  Vector v(n);
  for (double& x : v) x = rng.normal();
  return v;
}

// Scalar objective upstream^T * f(params, input) for finite differencing.
double probe(const DenseNet& net, VecView x, VecView upstream) {
  const Vector y = forward(net, x, Mode::eval);
  double s = 0.0;
  for (std::size_t i = 0; i < y.size(); ++i) s += upstream[i] * y[i];
  return s;
}

// Smallest |preactivation| anywhere in the net for this input; finite
// differences are meaningless within h of a relu kink.
double min_preactivation(const DenseNet& net, VecView x) {
  ForwardCache cache;
  forward(net, x, Mode::eval, &cache);
  double best = std::numeric_limits<double>::infinity();
  for (std::size_t i = 0; i < cache.layers.size(); ++i) {
    if (const auto* lc = std::get_if<LinearCache>(&cache.layers[i])) {
      for (const double v : lc->pre.data) best = std::min(best, std::abs(v));
    } else {
      const auto& rc = std::get<ResidualCache>(cache.layers[i]);
      for (const double v : rc.pre1.data) best = std::min(best, std::abs(v));
    }
  }
  return best;
}

struct GradCheckStats {
  double worst_rel = 0.0;
};

GradCheckStats gradcheck(DenseNet& net, Rng& rng) {
  Vector x;
  do {
    x = random_vec(net.input_dim(), rng);
  } while (min_preactivation(net, x) < 5e-3);
  const Vector upstream = random_vec(net.output_dim(), rng);

  ForwardCache cache;
  forward(net, x, Mode::train, &cache, &rng);
  Gradients grads = zeros_like(net);
  backward_params(net, cache, upstream, grads);
  const Vector input_grad = backward_input(net, cache, upstream);

  GradCheckStats stats;
  const double h = 1e-4;
  auto rel_err = [](double ad, double fd) {
    return std::abs(ad - fd) / std::max({1.0, std::abs(ad), std::abs(fd)});
  };

  auto prefs = net.param_refs();
  auto grefs = grads.param_refs();
  for (std::size_t p = 0; p < prefs.size(); ++p) {
    for (std::size_t i = 0; i < prefs[p].size; ++i) {
      double* slot = prefs[p].data + i;
      const double keep = *slot;
      *slot = keep + h;
      const double fp = probe(net, x, upstream);
      *slot = keep - h;
      const double fm = probe(net, x, upstream);
      *slot = keep;
      const double fd = (fp - fm) / (2.0 * h);
      stats.worst_rel = std::max(stats.worst_rel, rel_err(grefs[p].data[i], fd));
    }
  }
  for (std::size_t i = 0; i < x.size(); ++i) {
    const double keep = x[i];
    x[i] = keep + h;
    const double fp = probe(net, x, upstream);
    x[i] = keep - h;
    const double fm = probe(net, x, upstream);
    x[i] = keep;
    const double fd = (fp - fm) / (2.0 * h);
    stats.worst_rel = std::max(stats.worst_rel, rel_err(input_grad[i], fd));
  }
  return stats;
}

}  // namespace

TEST_CASE("identity linear net reproduces its input") {
  Rng rng(1);
  DenseNet net = DenseNet::mlp({2, 2}, Activation::none, Activation::none, rng);
  auto& lin = std::get<Linear>(net.layers()[0]);
  lin.w.fill(0.0);
  lin.w.at(0, 0) = 1.0;
  lin.w.at(1, 1) = 1.0;
  lin.b = {0.0, 0.0};
  const Vector y = forward(net, Vector{1.0, 2.0});
  CHECK(y[0] == doctest::Approx(1.0));
  CHECK(y[1] == doctest::Approx(2.0));
}

TEST_CASE("zero-weight net returns the bias") {
  Rng rng(2);
  DenseNet net = DenseNet::mlp({3, 2}, Activation::none, Activation::none, rng);
  auto& lin = std::get<Linear>(net.layers()[0]);
  lin.w.fill(0.0);
  lin.b = {0.25, -0.5};
  const Vector y = forward(net, Vector{9.0, -3.0, 7.0});
  CHECK(y[0] == doctest::Approx(0.25));
  CHECK(y[1] == doctest::Approx(-0.5));
}

TEST_CASE("forward agrees with a naive straight-line re-evaluation") {
  Rng rng(3);
  DenseNet net = DenseNet::mlp({2, 16, 1}, Activation::relu, Activation::none,
                               rng);
  for (int rep = 0; rep < 20; ++rep) {
    const Vector x = random_vec(2, rng);
    const Vector fast = forward(net, x);
    const Vector slow = oracle::naive_mlp_forward(net, x);
    CHECK(fast[0] == doctest::Approx(slow[0]).epsilon(1e-12));
  }
}

TEST_CASE("forward rejects mismatched input width") {
  Rng rng(4);
  DenseNet net = DenseNet::mlp({3, 4, 2}, Activation::relu, Activation::none,
                               rng);
  CHECK_THROWS_AS(forward(net, Vector{1.0, 2.0}), DimensionError);
}

TEST_CASE("backward without a cached forward fails") {
  Rng rng(5);
  DenseNet net = DenseNet::mlp({2, 2}, Activation::none, Activation::none, rng);
  ForwardCache cache;  // never filled
  Gradients g = zeros_like(net);
  CHECK_THROWS_AS(backward_params(net, cache, Vector{1.0, 1.0}, g),
                  NumericError);
}

TEST_CASE("single linear layer gradient is the outer product") {
  Rng rng(6);
  DenseNet net = DenseNet::mlp({3, 1}, Activation::none, Activation::none, rng);
  const Vector x{2.0, -1.0, 0.5};
  ForwardCache cache;
  forward(net, x, Mode::train, &cache, &rng);
  Gradients grads = zeros_like(net);
  backward_params(net, cache, Vector{1.0}, grads);
  const auto& gl = std::get<Linear>(grads.layers[0]);
  CHECK(gl.w.at(0, 0) == doctest::Approx(2.0));
  CHECK(gl.w.at(0, 1) == doctest::Approx(-1.0));
  CHECK(gl.w.at(0, 2) == doctest::Approx(0.5));
  CHECK(gl.b[0] == doctest::Approx(1.0));

  // Input gradient of a linear layer is W^T upstream.
  const auto& lin = std::get<Linear>(net.layers()[0]);
  const Vector ig = backward_input(net, cache, Vector{1.0});
  for (std::size_t c = 0; c < 3; ++c) {
    CHECK(ig[c] == doctest::Approx(lin.w.at(0, c)));
  }
}

TEST_CASE("dead relu passes no gradient") {
  Rng rng(7);
  DenseNet net = DenseNet::mlp({1, 1, 1}, Activation::relu, Activation::none,
                               rng);
  auto& l0 = std::get<Linear>(net.layers()[0]);
  l0.w.at(0, 0) = 1.0;
  l0.b[0] = -5.0;  // strictly negative preactivation at x = 1
  ForwardCache cache;
  forward(net, Vector{1.0}, Mode::train, &cache, &rng);
  Gradients grads = zeros_like(net);
  backward_params(net, cache, Vector{1.0}, grads);
  const auto& g0 = std::get<Linear>(grads.layers[0]);
  CHECK(g0.w.at(0, 0) == 0.0);
  CHECK(g0.b[0] == 0.0);
}

TEST_CASE("gradients match central finite differences") {
  Rng rng(8);
  SUBCASE("plain 2-8-1") {
    for (int rep = 0; rep < 5; ++rep) {
      DenseNet net = DenseNet::mlp({2, 8, 1}, Activation::relu,
                                   Activation::none, rng);
      CHECK(gradcheck(net, rng).worst_rel < 1e-5);
    }
  }
  SUBCASE("deeper mlp") {
    DenseNet net = DenseNet::mlp({4, 16, 16, 3}, Activation::relu,
                                 Activation::none, rng);
    CHECK(gradcheck(net, rng).worst_rel < 1e-5);
  }
  SUBCASE("residual trunk without dropout") {
    DenseNet net = DenseNet::residual(5, 12, 2, 2, 0.0, rng);
    CHECK(gradcheck(net, rng).worst_rel < 1e-5);
  }
  SUBCASE("bias-only policy head") {
    DenseNet net = DenseNet::mlp({0, 2}, Activation::none, Activation::none,
                                 rng);
    CHECK(gradcheck(net, rng).worst_rel < 1e-5);
  }
}

TEST_CASE("composite input gradient slice matches the full gradient") {
  Rng rng(9);
  DenseNet net = DenseNet::mlp({6, 12, 2}, Activation::relu, Activation::none,
                               rng);
  const Vector state = random_vec(4, rng);
  const Vector action = random_vec(2, rng);
  Vector joint(6);
  std::copy(state.begin(), state.end(), joint.begin());
  std::copy(action.begin(), action.end(), joint.begin() + 4);
  ForwardCache cache;
  forward(net, joint, Mode::train, &cache, &rng);
  const Vector upstream{1.0, -0.5};
  const Vector full = backward_input(net, cache, upstream);
  const Vector slice(full.begin() + 4, full.end());
  REQUIRE(slice.size() == 2);
  // The action slice must equal finite differences taken over the action
  // coordinates alone, holding the state part fixed.
  const double h = 1e-5;
  for (std::size_t i = 0; i < 2; ++i) {
    Vector jp = joint, jm = joint;
    jp[4 + i] += h;
    jm[4 + i] -= h;
    double fp = 0.0, fm = 0.0;
    const Vector yp = forward(net, jp);
    const Vector ym = forward(net, jm);
    for (std::size_t c = 0; c < 2; ++c) {
      fp += upstream[c] * yp[c];
      fm += upstream[c] * ym[c];
    }
    CHECK(slice[i] == doctest::Approx((fp - fm) / (2.0 * h)).epsilon(1e-4));
  }
}

TEST_CASE("eval forward is pure and dropout-independent") {
  Rng rng(10);
  DenseNet net = DenseNet::residual(3, 16, 2, 3, 0.4, rng);
  const Vector x = random_vec(3, rng);
  const Vector y1 = forward(net, x, Mode::eval);
  const Vector y2 = forward(net, x, Mode::eval);
  CHECK(y1 == y2);
  // Train mode with dropout differs run to run and from eval.
  Rng d1(11), d2(12);
  const Vector t1 = forward(net, x, Mode::train, nullptr, &d1);
  const Vector t2 = forward(net, x, Mode::train, nullptr, &d2);
  CHECK(t1 != t2);
}

TEST_CASE("train-mode dropout needs an rng") {
  Rng rng(13);
  DenseNet net = DenseNet::residual(2, 8, 2, 1, 0.5, rng);
  CHECK_THROWS_AS(forward(net, Vector{1.0, 2.0}, Mode::train), NumericError);
}

TEST_CASE("batched forward rows equal single-sample forwards") {
  Rng rng(14);
  DenseNet net = DenseNet::residual(3, 10, 2, 2, 0.0, rng);
  Matrix x(5, 3);
  for (double& v : x.data) v = rng.normal();
  const Matrix y = forward_batch(net, x, Mode::eval);
  for (std::size_t i = 0; i < x.rows; ++i) {
    const Vector yi = forward(net, x.row_span(i));
    for (std::size_t c = 0; c < 2; ++c) {
      CHECK(y.at(i, c) == doctest::Approx(yi[c]).epsilon(1e-13));
    }
  }
}

TEST_CASE("dropout backward reuses the forward mask") {
  Rng rng(15);
  DenseNet net = DenseNet::residual(2, 8, 2, 1, 0.5, rng);
  const Vector x{0.3, -0.7};
  ForwardCache cache;
  Rng drop(99);
  forward(net, x, Mode::train, &cache, &drop);
  const auto& rc = std::get<ResidualCache>(cache.layers[1]);
  REQUIRE(rc.dropmask.size() == 8);
  // Units dropped in the forward pass contribute no w2 gradient columns.
  Gradients grads = zeros_like(net);
  backward_params(net, cache, Vector{1.0, 1.0}, grads);
  const auto& gb = std::get<ResidualBlock>(grads.layers[1]);
  for (std::size_t u = 0; u < 8; ++u) {
    if (rc.dropmask.at(0, u) == 0.0) {
      for (std::size_t r = 0; r < 8; ++r) {
        CHECK(gb.w2.at(r, u) == 0.0);
      }
    }
  }
}

TEST_CASE("fourier embedding is deterministic and paired") {
  Rng a(42), b(42);
  FourierTimeEmbedding ea(8, 30.0, a);
  FourierTimeEmbedding eb(8, 30.0, b);
  CHECK(ea.frequencies() == eb.frequencies());
  CHECK(ea.dim() == 16);
  const Vector e = ea.embed(0.37);
  for (std::size_t i = 0; i < 8; ++i) {
    // sin^2 + cos^2 = 1 per frequency pair
    CHECK(e[2 * i] * e[2 * i] + e[2 * i + 1] * e[2 * i + 1] ==
          doctest::Approx(1.0));
  }
}

TEST_CASE("adam first step moves by lr in the sign direction") {
  Rng rng(16);
  DenseNet net = DenseNet::mlp({2, 2}, Activation::none, Activation::none, rng);
  const Vector before = [&net] {
    Vector v;
    for (auto& p : net.param_refs()) {
      v.insert(v.end(), p.data, p.data + p.size);
    }
    return v;
  }();
  AdamConfig cfg;
  cfg.lr = 0.1;
  OptimizerState opt(net, cfg);
  Gradients grads = zeros_like(net);
  auto grefs = grads.param_refs();
  Rng grng(17);
  Vector gvals;
  for (auto& g : grefs) {
    for (std::size_t i = 0; i < g.size; ++i) {
      g.data[i] = grng.normal() + (grng.uniform() < 0.5 ? -1.0 : 1.0);
      gvals.push_back(g.data[i]);
    }
  }
  opt.step(net, grads);
  std::size_t q = 0;
  for (auto& p : net.param_refs()) {
    for (std::size_t i = 0; i < p.size; ++i, ++q) {
      const double delta = p.data[i] - before[q];
      // Bias-corrected first step: -lr * g / (|g| + eps') ~ -lr * sign(g).
      CHECK(delta == doctest::Approx(-0.1 * (gvals[q] > 0 ? 1.0 : -1.0))
                         .epsilon(1e-3));
    }
  }
  CHECK(opt.step_count() == 1);
}

TEST_CASE("adam leaves params alone on zero gradients without decay") {
  Rng rng(18);
  DenseNet net = DenseNet::mlp({2, 3}, Activation::none, Activation::none, rng);
  const Vector w0 = [&net] {
    Vector v;
    for (auto& p : net.param_refs()) v.insert(v.end(), p.data, p.data + p.size);
    return v;
  }();
  OptimizerState opt(net, AdamConfig{});
  Gradients grads = zeros_like(net);
  opt.step(net, grads);
  opt.step(net, grads);
  std::size_t q = 0;
  for (auto& p : net.param_refs()) {
    for (std::size_t i = 0; i < p.size; ++i, ++q) {
      CHECK(p.data[i] == w0[q]);
    }
  }
  CHECK(opt.step_count() == 2);
}

TEST_CASE("adam rejects non-finite gradients naming the parameter") {
  Rng rng(19);
  DenseNet net = DenseNet::mlp({2, 3}, Activation::none, Activation::none, rng);
  OptimizerState opt(net, AdamConfig{});
  Gradients grads = zeros_like(net);
  std::get<Linear>(grads.layers[0]).b[1] = std::nan("");
  try {
    opt.step(net, grads);
    FAIL("expected NumericError");
  } catch (const NumericError& e) {
    CHECK(std::string(e.what()).find("layer0.b") != std::string::npos);
  }
}

TEST_CASE("adam drives a quadratic bowl to the origin") {
  Rng rng(20);
  DenseNet net = DenseNet::mlp({1, 8}, Activation::none, Activation::none, rng);
  AdamConfig cfg;
  cfg.lr = 3e-2;
  OptimizerState opt(net, cfg);
  Gradients grads = zeros_like(net);
  for (int step = 0; step < 2000; ++step) {
    auto prefs = net.param_refs();
    auto grefs = grads.param_refs();
    for (std::size_t p = 0; p < prefs.size(); ++p) {
      for (std::size_t i = 0; i < prefs[p].size; ++i) {
        grefs[p].data[i] = 2.0 * prefs[p].data[i];  // d|w|^2/dw
      }
    }
    opt.step(net, grads);
  }
  double norm = 0.0;
  for (auto& p : net.param_refs()) {
    for (std::size_t i = 0; i < p.size; ++i) norm += p.data[i] * p.data[i];
  }
  CHECK(std::sqrt(norm) < 1e-3);
}

TEST_CASE("checkpoint round trip is bit exact in eval mode") {
  Rng rng(21);
  DenseNet net = DenseNet::residual(4, 12, 2, 2, 0.1, rng);
  FourierTimeEmbedding emb(6, 30.0, rng);
  OptimizerState opt(net, AdamConfig{});
  // A couple of steps so the moments are nonzero.
  Gradients grads = zeros_like(net);
  auto grefs = grads.param_refs();
  for (auto& g : grefs) {
    for (std::size_t i = 0; i < g.size; ++i) g.data[i] = 0.01;
  }
  opt.step(net, grads);

  NetCheckpoint ckpt;
  ckpt.net = net;
  ckpt.fourier_frequencies = emb.frequencies();
  ckpt.fourier_scale = emb.scale();
  ckpt.optimizer = snapshot_optimizer(opt);
  ckpt.rng_seed = 77;
  ckpt.step = 123;
  ckpt.extra = {{"note", "roundtrip"}};
  const auto path = std::filesystem::temp_directory_path() / "srpo_rt.ckpt";
  save_checkpoint(ckpt, path);
  const NetCheckpoint back = load_checkpoint(path);

  const Vector x = random_vec(4, rng);
  const Vector y0 = forward(net, x);
  const Vector y1 = forward(back.net, x);
  CHECK(y0 == y1);  // bit-identical
  CHECK(*back.fourier_frequencies == emb.frequencies());
  CHECK(back.optimizer->first_moments == opt.first_moments());
  CHECK(back.step == 123);
  CHECK(back.rng_seed == 77);
  CHECK(back.extra.at("note") == "roundtrip");
  std::filesystem::remove(path);
}

TEST_CASE("checkpoint loader rejects junk") {
  const auto path = std::filesystem::temp_directory_path() / "srpo_junk.bin";
  {
    std::ofstream out(path, std::ios::binary);
    out << "not a checkpoint";
  }
  CHECK_THROWS_AS(load_checkpoint(path), ConfigError);
  CHECK_THROWS_AS(load_checkpoint(path.string() + ".missing"),
                  DependencyError);
  std::filesystem::remove(path);
}
