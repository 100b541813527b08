#include "refnms/simd/kernels.hpp"

#include <immintrin.h>

#include <algorithm>

namespace refnms::simd::avx2 {

namespace {

inline double hsum(__m256d v) {
  const __m128d lo = _mm256_castpd256_pd128(v);
  const __m128d hi = _mm256_extractf128_pd(v, 1);
  const __m128d s = _mm_add_pd(lo, hi);
  return _mm_cvtsd_f64(_mm_add_sd(s, _mm_unpackhi_pd(s, s)));
}

}  // namespace

double dot(const double* x, const double* y, std::size_t n) {
  __m256d acc0 = _mm256_setzero_pd();
  __m256d acc1 = _mm256_setzero_pd();
  std::size_t i = 0;
  for (; i + 8 <= n; i += 8) {
    acc0 = _mm256_fmadd_pd(_mm256_loadu_pd(x + i), _mm256_loadu_pd(y + i), acc0);
    acc1 = _mm256_fmadd_pd(_mm256_loadu_pd(x + i + 4), _mm256_loadu_pd(y + i + 4), acc1);
  }
  for (; i + 4 <= n; i += 4) {
    acc0 = _mm256_fmadd_pd(_mm256_loadu_pd(x + i), _mm256_loadu_pd(y + i), acc0);
  }
  double acc = hsum(_mm256_add_pd(acc0, acc1));
  for (; i < n; ++i) acc += x[i] * y[i];
  return acc;
}

void axpy(double alpha, const double* x, double* y, std::size_t n) {
  const __m256d a = _mm256_set1_pd(alpha);
  std::size_t i = 0;
  for (; i + 4 <= n; i += 4) {
    const __m256d yy = _mm256_fmadd_pd(a, _mm256_loadu_pd(x + i), _mm256_loadu_pd(y + i));
    _mm256_storeu_pd(y + i, yy);
  }
  for (; i < n; ++i) y[i] += alpha * x[i];
}

// Same operation order and min/max operand selection as the scalar reference,
// with mul and add kept separate, so every lane rounds identically.
void iou_one_to_many(const BoxValue& box, const BoxColumns& t, double* out) {
  const double area_a = (box.x2 - box.x1) * (box.y2 - box.y1);
  const __m256d ax1 = _mm256_set1_pd(box.x1);
  const __m256d ay1 = _mm256_set1_pd(box.y1);
  const __m256d ax2 = _mm256_set1_pd(box.x2);
  const __m256d ay2 = _mm256_set1_pd(box.y2);
  const __m256d aa = _mm256_set1_pd(area_a);
  const __m256d zero = _mm256_setzero_pd();
  std::size_t i = 0;
  for (; i + 4 <= t.size; i += 4) {
    const __m256d bx1 = _mm256_loadu_pd(t.x1 + i);
    const __m256d by1 = _mm256_loadu_pd(t.y1 + i);
    const __m256d bx2 = _mm256_loadu_pd(t.x2 + i);
    const __m256d by2 = _mm256_loadu_pd(t.y2 + i);
    const __m256d iw = _mm256_max_pd(_mm256_sub_pd(_mm256_min_pd(bx2, ax2), _mm256_max_pd(bx1, ax1)), zero);
    const __m256d ih = _mm256_max_pd(_mm256_sub_pd(_mm256_min_pd(by2, ay2), _mm256_max_pd(by1, ay1)), zero);
    const __m256d inter = _mm256_mul_pd(iw, ih);
    const __m256d area_b = _mm256_mul_pd(_mm256_sub_pd(bx2, bx1), _mm256_sub_pd(by2, by1));
    const __m256d uni = _mm256_sub_pd(_mm256_add_pd(aa, area_b), inter);
    const __m256d positive = _mm256_cmp_pd(uni, zero, _CMP_GT_OQ);
    // Divide by 1 in lanes with an empty union so no lane produces NaN.
    const __m256d safe = _mm256_blendv_pd(_mm256_set1_pd(1.0), uni, positive);
    const __m256d ratio = _mm256_div_pd(inter, safe);
    _mm256_storeu_pd(out + i, _mm256_and_pd(ratio, positive));
  }
  if (i < t.size) {
    const BoxColumns tail{t.x1 + i, t.y1 + i, t.x2 + i, t.y2 + i, t.size - i};
    scalar::iou_one_to_many(box, tail, out + i);
  }
}

}  // namespace refnms::simd::avx2
