#include "refnms/nms.hpp"

#include <algorithm>
#include <map>
#include <numeric>

#include "refnms/errors.hpp"
#include "refnms/simd/kernels.hpp"

namespace refnms {

std::string ProposalBudget::label() const {
  return mode == Mode::kThreshold ? "real" : std::to_string(n);
}

double criterion_score(const ScoredProposal& p, Criterion c) {
  return c == Criterion::kFused ? p.fused : p.confidence;
}

std::vector<std::size_t> greedy_nms(std::span<const Box> boxes, std::span<const double> scores,
                                    double iou_threshold) {
  if (boxes.size() != scores.size()) throw InvalidArgument("greedy_nms: boxes and scores differ in length");
  const std::size_t n = boxes.size();
  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return scores[a] > scores[b]; });

  // Columns in visiting order so each suppression sweep is one contiguous
  // one-to-many IoU call.
  std::vector<double> cols(4 * n);
  for (std::size_t i = 0; i < n; ++i) {
    const Box& b = boxes[order[i]];
    cols[i] = b.x1;
    cols[n + i] = b.y1;
    cols[2 * n + i] = b.x2;
    cols[3 * n + i] = b.y2;
  }
  std::vector<char> suppressed(n, 0);
  std::vector<double> ious(n);
  std::vector<std::size_t> keep;
  for (std::size_t i = 0; i < n; ++i) {
    if (suppressed[i]) continue;
    keep.push_back(order[i]);
    const std::size_t rest = n - i - 1;
    if (rest == 0) break;
    const Box& b = boxes[order[i]];
    const simd::BoxColumns tail{cols.data() + i + 1, cols.data() + n + i + 1, cols.data() + 2 * n + i + 1,
                                cols.data() + 3 * n + i + 1, rest};
    simd::iou_one_to_many({b.x1, b.y1, b.x2, b.y2}, tail, ious.data());
    for (std::size_t k = 0; k < rest; ++k) {
      if (ious[k] > iou_threshold) suppressed[i + 1 + k] = 1;
    }
  }
  return keep;
}

namespace {

void sort_by_criterion(std::vector<ScoredProposal>& v, std::vector<std::size_t>& pos, Criterion c) {
  std::vector<std::size_t> idx(v.size());
  std::iota(idx.begin(), idx.end(), 0);
  std::stable_sort(idx.begin(), idx.end(), [&](std::size_t a, std::size_t b) {
    const double sa = criterion_score(v[a], c), sb = criterion_score(v[b], c);
    if (sa != sb) return sa > sb;
    return pos[a] < pos[b];
  });
  std::vector<ScoredProposal> out;
  std::vector<std::size_t> out_pos;
  for (auto i : idx) {
    out.push_back(v[i]);
    out_pos.push_back(pos[i]);
  }
  v = std::move(out);
  pos = std::move(out_pos);
}

}  // namespace

std::vector<ScoredProposal> per_class_nms(std::span<const ScoredProposal> proposals, const NmsConfig& cfg) {
  std::map<int, std::vector<std::size_t>> groups;
  for (std::size_t i = 0; i < proposals.size(); ++i) {
    groups[cfg.per_class ? proposals[i].category_id : 0].push_back(i);
  }
  std::vector<ScoredProposal> kept;
  std::vector<std::size_t> pos;
  for (const auto& [cat, members] : groups) {
    std::vector<Box> boxes;
    std::vector<double> scores;
    for (auto i : members) {
      boxes.push_back(proposals[i].box);
      scores.push_back(criterion_score(proposals[i], cfg.criterion));
    }
    for (auto k : greedy_nms(boxes, scores, cfg.iou_threshold)) {
      kept.push_back(proposals[members[k]]);
      pos.push_back(members[k]);
    }
  }
  sort_by_criterion(kept, pos, cfg.criterion);
  return kept;
}

std::vector<ScoredProposal> select_proposals(std::span<const ScoredProposal> kept, const ProposalBudget& budget,
                                             Criterion criterion) {
  std::vector<ScoredProposal> sorted(kept.begin(), kept.end());
  std::vector<std::size_t> pos(sorted.size());
  std::iota(pos.begin(), pos.end(), 0);
  sort_by_criterion(sorted, pos, criterion);
  if (budget.mode == ProposalBudget::Mode::kTopN) {
    if (sorted.size() > budget.n) sorted.resize(budget.n);
    return sorted;
  }
  std::vector<ScoredProposal> out;
  for (const auto& p : sorted) {
    if (criterion_score(p, criterion) >= budget.conf_min) out.push_back(p);
  }
  return out;
}

std::vector<ScoredProposal> ref_nms_pipeline(const ImageDetections& image, std::span<const int> tokens,
                                             const RelatednessScorer& scorer, double delta, const NmsConfig& nms,
                                             const ProposalBudget& budget) {
  NmsConfig cfg = nms;
  cfg.criterion = Criterion::kFused;
  const auto scored = score_boxes(image, tokens, scorer, delta);
  return select_proposals(per_class_nms(scored, cfg), budget, Criterion::kFused);
}

std::vector<ScoredProposal> baseline_pipeline(const ImageDetections& image, double delta, const NmsConfig& nms,
                                              const ProposalBudget& budget) {
  NmsConfig cfg = nms;
  cfg.criterion = Criterion::kConfidence;
  std::vector<ScoredProposal> scored;
  for (std::size_t i = 0; i < image.records.size(); ++i) {
    const auto& r = image.records[i];
    if (r.confidence < delta) continue;
    scored.push_back({r.box, r.category_id, r.confidence, 1.0, r.confidence, i});
  }
  return select_proposals(per_class_nms(scored, cfg), budget, Criterion::kConfidence);
}

}  // namespace refnms
