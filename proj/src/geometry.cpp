#include "refnms/geometry.hpp"

#include <algorithm>
#include <vector>

#include "refnms/errors.hpp"
#include "refnms/simd/kernels.hpp"

namespace refnms {

void validate_box(const Box& b) {
  if (!b.valid()) {
    throw RangeError("box has x2 < x1 or y2 < y1");
  }
}

double iou(const Box& a, const Box& b) {
  const double iw = std::max(0.0, std::min(a.x2, b.x2) - std::max(a.x1, b.x1));
  const double ih = std::max(0.0, std::min(a.y2, b.y2) - std::max(a.y1, b.y1));
  const double inter = iw * ih;
  const double uni = a.area() + b.area() - inter;
  return uni > 0.0 ? inter / uni : 0.0;
}

bool hits(const Box& candidate, const Box& target, double threshold) {
  return iou(candidate, target) > threshold;
}

double max_iou_against(const Box& candidate, std::span<const Box> targets) {
  if (targets.empty()) return 0.0;
  std::vector<double> cols(4 * targets.size());
  const std::size_t n = targets.size();
  for (std::size_t i = 0; i < n; ++i) {
    cols[i] = targets[i].x1;
    cols[n + i] = targets[i].y1;
    cols[2 * n + i] = targets[i].x2;
    cols[3 * n + i] = targets[i].y2;
  }
  std::vector<double> out(n);
  simd::iou_one_to_many({candidate.x1, candidate.y1, candidate.x2, candidate.y2},
                        {cols.data(), cols.data() + n, cols.data() + 2 * n, cols.data() + 3 * n, n},
                        out.data());
  return *std::max_element(out.begin(), out.end());
}

}  // namespace refnms
