#pragma once
// Data-parallel arithmetic kernels behind the whole training stack.
//
// Every kernel exists in a plain scalar reference version and, on x86-64,
// an AVX2+FMA version. The backend is picked once at startup from cpuid
// (override with the SRPO_KERNELS env var or force_backend()). The two
// backends are equivalence-tested against each other; the scalar version
// is the semantic reference.
//
// Matrix arguments are dense row-major. GEMM naming follows BLAS-ish
// transpose conventions on the *logical* product:
//   gemm_nt: C(MxN) = A(MxK) * B(NxK)^T      (rows of A dotted with rows of B)
//   gemm_nn: C(MxN) = A(MxK) * B(KxN)
//   gemm_tn: C(MxN) = A(KxM)^T * B(KxN)
// With accumulate=true the product is added onto C instead of overwriting.

#include <cstddef>

namespace srpo::kernels {

enum class Backend { scalar, avx2 };

// Per-call scalars for a decoupled-weight-decay Adam update.
// bias1/bias2 are the 1-beta^t corrections already evaluated for this step.
struct AdamScalars {
  double lr;
  double beta1;
  double beta2;
  double eps;
  double weight_decay;
  double bias1;
  double bias2;
};

struct Ops {
  const char* name;
  double (*dot)(const double* a, const double* b, std::size_t n);
  void (*axpy)(double alpha, const double* x, double* y, std::size_t n);
  void (*gemm_nt)(const double* a, const double* b, double* c, std::size_t m,
                  std::size_t n, std::size_t k, bool accumulate);
  void (*gemm_nn)(const double* a, const double* b, double* c, std::size_t m,
                  std::size_t n, std::size_t k, bool accumulate);
  void (*gemm_tn)(const double* a, const double* b, double* c, std::size_t m,
                  std::size_t n, std::size_t k, bool accumulate);
  void (*relu)(const double* x, double* y, std::size_t n);
  // out = upstream where pre > 0 else 0
  void (*relu_grad)(const double* pre, const double* upstream, double* out,
                    std::size_t n);
  void (*adam_step)(double* param, double* m, double* v, const double* grad,
                    std::size_t n, const AdamScalars& s);
  double (*sum)(const double* x, std::size_t n);
  double (*sumsq)(const double* x, std::size_t n);
  bool (*all_finite)(const double* x, std::size_t n);
};

// Active backend's kernel table.
const Ops& ops();

Backend active_backend();
bool backend_available(Backend b);

// Pin the backend (tests use this to cross-check scalar vs SIMD).
// Throws std::runtime_error if the backend is unavailable on this host.
void force_backend(Backend b);

// Return to automatic cpuid-based selection.
void reset_backend();

const Ops& scalar_ops();
const Ops* avx2_ops_or_null();

}  // namespace srpo::kernels
