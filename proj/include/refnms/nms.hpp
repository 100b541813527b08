#pragma once

#include <cstddef>
#include <span>
#include <string>
#include <vector>

#include "refnms/geometry.hpp"
#include "refnms/model.hpp"

namespace refnms {

enum class Criterion { kConfidence, kFused };

struct NmsConfig {
  double iou_threshold = 0.3;
  bool per_class = true;
  Criterion criterion = Criterion::kFused;
};

struct ProposalBudget {
  enum class Mode { kTopN, kThreshold };
  Mode mode = Mode::kTopN;
  std::size_t n = 100;
  double conf_min = 0.65;

  static ProposalBudget top_n(std::size_t n) { return {Mode::kTopN, n, 0.0}; }
  static ProposalBudget threshold(double conf_min) { return {Mode::kThreshold, 0, conf_min}; }
  // "10", "50", ... or "real" for the threshold mode.
  std::string label() const;
};

double criterion_score(const ScoredProposal& p, Criterion c);

// Greedy NMS: visit boxes by descending score (ties: lower index first), keep
// the best remaining one and drop every remaining box with IoU above the
// threshold. Returns kept indices in keep order.
std::vector<std::size_t> greedy_nms(std::span<const Box> boxes, std::span<const double> scores,
                                    double iou_threshold);

// Greedy NMS per category (or over one pool when per_class is false) on the
// configured criterion; output sorted by descending criterion score.
std::vector<ScoredProposal> per_class_nms(std::span<const ScoredProposal> proposals, const NmsConfig& cfg);

std::vector<ScoredProposal> select_proposals(std::span<const ScoredProposal> kept, const ProposalBudget& budget,
                                             Criterion criterion);

// delta filter -> relatedness -> NMS on r*c -> budget on r*c.
std::vector<ScoredProposal> ref_nms_pipeline(const ImageDetections& image, std::span<const int> tokens,
                                             const RelatednessScorer& scorer, double delta,
                                             const NmsConfig& nms, const ProposalBudget& budget);

// Expression-agnostic baseline: delta filter -> NMS on c -> budget on c.
// Proposals carry r = 1 and s = c.
std::vector<ScoredProposal> baseline_pipeline(const ImageDetections& image, double delta, const NmsConfig& nms,
                                              const ProposalBudget& budget);

}  // namespace refnms
