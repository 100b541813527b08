#pragma once

#include <span>

namespace refnms {

// Axis-aligned box in continuous pixel coordinates (no +1 convention).
struct Box {
  double x1 = 0.0;
  double y1 = 0.0;
  double x2 = 0.0;
  double y2 = 0.0;

  double width() const { return x2 - x1; }
  double height() const { return y2 - y1; }
  double area() const { return (x2 - x1) * (y2 - y1); }
  bool valid() const { return x2 >= x1 && y2 >= y1; }

  friend bool operator==(const Box&, const Box&) = default;
};

// Throws RangeError if x2 < x1 or y2 < y1.
void validate_box(const Box& b);

// Intersection over union; 0 when the union is empty.
double iou(const Box& a, const Box& b);

// iou(candidate, target) > threshold. Strict: an IoU of exactly the threshold
// is a miss.
bool hits(const Box& candidate, const Box& target, double threshold = 0.5);

// Largest IoU of candidate against any target; 0 for no targets.
double max_iou_against(const Box& candidate, std::span<const Box> targets);

}  // namespace refnms
