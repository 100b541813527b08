#pragma once

// Data-parallel inner loops used by the autodiff engine, the embedding code
// and NMS. Each kernel has a scalar reference implementation and an AVX2
// variant; the variant is chosen once at startup from the host CPU and can be
// pinned with REFNMS_KERNELS=scalar|avx2.

#include <cstddef>
#include <string_view>

namespace refnms::simd {

enum class Backend { kScalar, kAvx2 };

std::string_view backend_name(Backend b);

// Backend used by the dispatching entry points below.
Backend active_backend();

// True when the host can run the AVX2 variants and they were compiled in.
bool avx2_available();

// Overrides the dispatch choice. Throws InvalidArgument when the requested
// backend cannot run on this host.
void set_backend(Backend b);

// Structure-of-arrays view over boxes for one-to-many IoU.
struct BoxColumns {
  const double* x1;
  const double* y1;
  const double* x2;
  const double* y2;
  std::size_t size;
};

struct BoxValue {
  double x1, y1, x2, y2;
};

// sum_i x[i] * y[i]
double dot(const double* x, const double* y, std::size_t n);

// y[i] += alpha * x[i]
void axpy(double alpha, const double* x, double* y, std::size_t n);

// out[i] = iou(box, targets[i]); 0 where the union is empty. Results are
// bitwise identical across backends (no fused multiply-add).
void iou_one_to_many(const BoxValue& box, const BoxColumns& targets, double* out);

namespace scalar {
double dot(const double* x, const double* y, std::size_t n);
void axpy(double alpha, const double* x, double* y, std::size_t n);
void iou_one_to_many(const BoxValue& box, const BoxColumns& targets, double* out);
}  // namespace scalar

#if defined(REFNMS_HAVE_AVX2)
namespace avx2 {
double dot(const double* x, const double* y, std::size_t n);
void axpy(double alpha, const double* x, double* y, std::size_t n);
void iou_one_to_many(const BoxValue& box, const BoxColumns& targets, double* out);
}  // namespace avx2
#endif

}  // namespace refnms::simd
