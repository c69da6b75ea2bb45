#include "srpo/kernels.hpp"

#include <cstdlib>
#include <cstring>
#include <stdexcept>

namespace srpo::kernels {
namespace {

bool cpu_has_avx2() {
#if defined(__x86_64__) || defined(_M_X64)
  return __builtin_cpu_supports("avx2") && __builtin_cpu_supports("fma");
#else
  return false;
#endif
}

const Ops* pick_auto() {
  if (const char* env = std::getenv("SRPO_KERNELS")) {
    if (std::strcmp(env, "scalar") == 0) return &scalar_ops();
    if (std::strcmp(env, "avx2") == 0) {
      const Ops* t = avx2_ops_or_null();
      if (t != nullptr && cpu_has_avx2()) return t;
      throw std::runtime_error("SRPO_KERNELS=avx2 but AVX2 is unavailable");
    }
    // anything else (including "auto") falls through to detection
  }
  const Ops* t = avx2_ops_or_null();
  if (t != nullptr && cpu_has_avx2()) return t;
  return &scalar_ops();
}

const Ops*& active_slot() {
  static const Ops* active = pick_auto();
  return active;
}

}  // namespace

const Ops& ops() { return *active_slot(); }

Backend active_backend() {
  return active_slot() == &scalar_ops() ? Backend::scalar : Backend::avx2;
}

bool backend_available(Backend b) {
  if (b == Backend::scalar) return true;
  return avx2_ops_or_null() != nullptr && cpu_has_avx2();
}

void force_backend(Backend b) {
  if (!backend_available(b)) {
    throw std::runtime_error("requested kernel backend unavailable on this host");
  }
  active_slot() = (b == Backend::scalar) ? &scalar_ops() : avx2_ops_or_null();
}

void reset_backend() { active_slot() = pick_auto(); }

}  // namespace srpo::kernels
