#pragma once

#include <cstddef>
#include <optional>
#include <span>
#include <utility>
#include <vector>

#include "refnms/autodiff.hpp"
#include "refnms/geometry.hpp"

namespace refnms {

struct LabeledBox {
  std::size_t index = 0;
  double rho = 0.0;  // max IoU against the foreground boxes
  int r_star = 0;    // 1 iff rho > 0.5
  int q_bin = 0;     // overlap level in 0..5
};

struct RankingConfig {
  double margin = 0.1;
  std::size_t top_h = 100;

  friend bool operator==(const RankingConfig&, const RankingConfig&) = default;
};

inline constexpr int kNumOverlapBins = 6;

// ceil(max(0, rho - 0.5) / 0.1). Values within 1e-9 of a bin edge snap to
// that edge so decimal overlaps such as 0.8 land in bin 3, not 4.
int quantize_overlap(double rho);

// Foreground = referent box plus pseudo ground-truth boxes.
std::vector<LabeledBox> assign_labels(std::span<const Box> boxes, std::span<const Box> foreground);

// -(1/|B|) sum r* log r + (1 - r*) log(1 - r), with r clamped to
// [1e-7, 1 - 1e-7]. Throws InvalidArgument for an empty batch or a length
// mismatch.
double binary_xe(std::span<const double> r, std::span<const int> r_star);
ad::Var binary_xe(ad::Var r, std::span<const int> r_star);

struct RankingPair {
  std::size_t negative;
  std::size_t positive;
  friend bool operator==(const RankingPair&, const RankingPair&) = default;
};

// Sampling after splitting: for each positive (rho > 0.5), up to top_h
// negatives with the highest predicted relatedness among boxes whose q_bin is
// strictly lower. Equal scores break by ascending box index.
std::vector<RankingPair> sample_pairs(std::span<const LabeledBox> labeled,
                                      std::span<const double> predicted_r, const RankingConfig& cfg);

// mean over pairs of max(0, r_neg - r_pos + margin); 0 for no pairs.
double ranking_loss(std::span<const RankingPair> pairs, std::span<const double> r,
                    const RankingConfig& cfg);

// Graph version. nullopt when there are no pairs (the loss is 0 and carries
// no gradient).
std::optional<ad::Var> ranking_loss(std::span<const RankingPair> pairs, ad::Var r,
                                    const RankingConfig& cfg);

}  // namespace refnms
