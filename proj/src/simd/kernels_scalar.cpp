#include "refnms/simd/kernels.hpp"

#include <algorithm>

namespace refnms::simd::scalar {

double dot(const double* x, const double* y, std::size_t n) {
  double acc = 0.0;
  for (std::size_t i = 0; i < n; ++i) acc += x[i] * y[i];
  return acc;
}

void axpy(double alpha, const double* x, double* y, std::size_t n) {
  for (std::size_t i = 0; i < n; ++i) y[i] += alpha * x[i];
}

void iou_one_to_many(const BoxValue& box, const BoxColumns& t, double* out) {
  const double area_a = (box.x2 - box.x1) * (box.y2 - box.y1);
  for (std::size_t i = 0; i < t.size; ++i) {
    const double iw = std::max(0.0, std::min(box.x2, t.x2[i]) - std::max(box.x1, t.x1[i]));
    const double ih = std::max(0.0, std::min(box.y2, t.y2[i]) - std::max(box.y1, t.y1[i]));
    const double inter = iw * ih;
    const double area_b = (t.x2[i] - t.x1[i]) * (t.y2[i] - t.y1[i]);
    const double uni = area_a + area_b - inter;
    out[i] = uni > 0.0 ? inter / uni : 0.0;
  }
}

}  // namespace refnms::simd::scalar
