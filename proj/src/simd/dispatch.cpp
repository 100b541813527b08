#include <atomic>
#include <cstdlib>
#include <string>

#include "refnms/errors.hpp"
#include "refnms/simd/kernels.hpp"

namespace refnms::simd {

namespace {

Backend detect() {
  if (const char* env = std::getenv("REFNMS_KERNELS")) {
    const std::string want(env);
    if (want == "scalar") return Backend::kScalar;
    if (want == "avx2" && avx2_available()) return Backend::kAvx2;
  }
  return avx2_available() ? Backend::kAvx2 : Backend::kScalar;
}

std::atomic<Backend>& current() {
  static std::atomic<Backend> backend{detect()};
  return backend;
}

}  // namespace

std::string_view backend_name(Backend b) {
  return b == Backend::kAvx2 ? "avx2" : "scalar";
}

bool avx2_available() {
#if defined(REFNMS_HAVE_AVX2)
  static const bool ok = __builtin_cpu_supports("avx2") && __builtin_cpu_supports("fma");
  return ok;
#else
  return false;
#endif
}

Backend active_backend() { return current().load(std::memory_order_relaxed); }

void set_backend(Backend b) {
  if (b == Backend::kAvx2 && !avx2_available()) {
    throw InvalidArgument("avx2 kernels are not available on this host");
  }
  current().store(b, std::memory_order_relaxed);
}

double dot(const double* x, const double* y, std::size_t n) {
#if defined(REFNMS_HAVE_AVX2)
  if (active_backend() == Backend::kAvx2) return avx2::dot(x, y, n);
#endif
  return scalar::dot(x, y, n);
}

void axpy(double alpha, const double* x, double* y, std::size_t n) {
#if defined(REFNMS_HAVE_AVX2)
  if (active_backend() == Backend::kAvx2) return avx2::axpy(alpha, x, y, n);
#endif
  scalar::axpy(alpha, x, y, n);
}

void iou_one_to_many(const BoxValue& box, const BoxColumns& targets, double* out) {
#if defined(REFNMS_HAVE_AVX2)
  if (active_backend() == Backend::kAvx2) return avx2::iou_one_to_many(box, targets, out);
#endif
  scalar::iou_one_to_many(box, targets, out);
}

}  // namespace refnms::simd
