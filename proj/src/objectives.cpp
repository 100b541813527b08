#include "refnms/objectives.hpp"

#include <algorithm>
#include <cmath>

#include "refnms/errors.hpp"

namespace refnms {

namespace {
constexpr double kProbClamp = 1e-7;
}

int quantize_overlap(double rho) {
  if (!(rho > 0.5)) return 0;
  const double t = (rho - 0.5) / 0.1;
  const double nearest = std::round(t);
  int q = (nearest >= 1.0 && std::abs(t - nearest) < 1e-9) ? static_cast<int>(nearest)
                                                            : static_cast<int>(std::ceil(t));
  return std::clamp(q, 1, kNumOverlapBins - 1);
}

std::vector<LabeledBox> assign_labels(std::span<const Box> boxes, std::span<const Box> foreground) {
  std::vector<LabeledBox> out;
  out.reserve(boxes.size());
  for (std::size_t i = 0; i < boxes.size(); ++i) {
    LabeledBox l;
    l.index = i;
    l.rho = max_iou_against(boxes[i], foreground);
    l.r_star = l.rho > 0.5 ? 1 : 0;
    l.q_bin = quantize_overlap(l.rho);
    out.push_back(l);
  }
  return out;
}

double binary_xe(std::span<const double> r, std::span<const int> r_star) {
  if (r.empty()) throw InvalidArgument("binary_xe: empty batch");
  if (r.size() != r_star.size()) throw InvalidArgument("binary_xe: length mismatch");
  double total = 0.0;
  for (std::size_t i = 0; i < r.size(); ++i) {
    const double p = std::clamp(r[i], kProbClamp, 1.0 - kProbClamp);
    total += r_star[i] ? std::log(p) : std::log(1.0 - p);
  }
  return -total / static_cast<double>(r.size());
}

ad::Var binary_xe(ad::Var r, std::span<const int> r_star) {
  const ad::Array& rv = r.value();
  if (rv.size() == 0) throw InvalidArgument("binary_xe: empty batch");
  if (rv.rank() != 1 || rv.size() != r_star.size()) throw InvalidArgument("binary_xe: length mismatch");
  ad::Graph& g = *r.graph;
  std::vector<double> pos(r_star.size()), neg(r_star.size());
  for (std::size_t i = 0; i < r_star.size(); ++i) {
    pos[i] = r_star[i] ? 1.0 : 0.0;
    neg[i] = 1.0 - pos[i];
  }
  const ad::Var p = ad::clamp(r, kProbClamp, 1.0 - kProbClamp);
  const ad::Var log_p = ad::log(p);
  const ad::Var log_q = ad::log(ad::add_scalar(ad::scale(p, -1.0), 1.0));
  const ad::Var terms = ad::add(ad::mul(g.constant(ad::Array::vector(pos)), log_p),
                                ad::mul(g.constant(ad::Array::vector(neg)), log_q));
  return ad::scale(ad::mean(terms), -1.0);
}

std::vector<RankingPair> sample_pairs(std::span<const LabeledBox> labeled, std::span<const double> predicted_r,
                                      const RankingConfig& cfg) {
  if (labeled.size() != predicted_r.size()) throw InvalidArgument("sample_pairs: length mismatch");
  // Boxes of each bin, ordered by descending score then ascending index.
  std::vector<std::vector<std::size_t>> bins(kNumOverlapBins);
  for (std::size_t i = 0; i < labeled.size(); ++i) bins[labeled[i].q_bin].push_back(i);
  const auto by_score = [&](std::size_t a, std::size_t b) {
    if (predicted_r[a] != predicted_r[b]) return predicted_r[a] > predicted_r[b];
    return a < b;
  };

  std::vector<RankingPair> pairs;
  std::vector<std::size_t> pool;
  for (std::size_t p = 0; p < labeled.size(); ++p) {
    if (!(labeled[p].rho > 0.5)) continue;
    pool.clear();
    for (int b = 0; b < labeled[p].q_bin; ++b) pool.insert(pool.end(), bins[b].begin(), bins[b].end());
    const std::size_t take = std::min(cfg.top_h, pool.size());
    std::partial_sort(pool.begin(), pool.begin() + static_cast<std::ptrdiff_t>(take), pool.end(), by_score);
    for (std::size_t k = 0; k < take; ++k) pairs.push_back({pool[k], p});
  }
  return pairs;
}

double ranking_loss(std::span<const RankingPair> pairs, std::span<const double> r, const RankingConfig& cfg) {
  if (pairs.empty()) return 0.0;
  double total = 0.0;
  for (const auto& pr : pairs) total += std::max(0.0, r[pr.negative] - r[pr.positive] + cfg.margin);
  return total / static_cast<double>(pairs.size());
}

std::optional<ad::Var> ranking_loss(std::span<const RankingPair> pairs, ad::Var r, const RankingConfig& cfg) {
  if (pairs.empty()) return std::nullopt;
  std::vector<std::size_t> neg, pos;
  for (const auto& pr : pairs) {
    neg.push_back(pr.negative);
    pos.push_back(pr.positive);
  }
  const ad::Var diff = ad::sub(ad::gather(r, neg), ad::gather(r, pos));
  return ad::mean(ad::relu(ad::add_scalar(diff, cfg.margin)));
}

}  // namespace refnms
