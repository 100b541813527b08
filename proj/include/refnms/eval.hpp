#pragma once

#include <cstddef>
#include <filesystem>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "refnms/ingest.hpp"
#include "refnms/model.hpp"
#include "refnms/nms.hpp"

namespace refnms {

// Some proposal has IoU > 0.5 with the referent.
bool referent_hit(std::span<const Box> proposals, const Box& referent);

struct MatchCount {
  std::size_t matched = 0;
  std::size_t total = 0;
  friend bool operator==(const MatchCount&, const MatchCount&) = default;
};

// A region is matched when any proposal hits it. One proposal may match
// several regions.
MatchCount contextual_recall(std::span<const Box> proposals, std::span<const Box> regions);

enum class Method { kBaselineConf, kRefNms };
std::string_view method_name(Method m);  // "baseline" | "ref_nms"
Method parse_method(std::string_view name);

struct RecallRow {
  std::string split;
  std::string method;
  std::string budget;
  std::size_t referent_hits = 0;
  std::size_t referent_total = 0;
  std::size_t contextual_matched = 0;
  std::size_t contextual_total = 0;

  // Percentages; 0 when the denominator is 0.
  double referent_recall() const;
  double contextual_recall() const;
  friend bool operator==(const RecallRow&, const RecallRow&) = default;
};

struct RecallReport {
  std::vector<RecallRow> rows;
};

struct EvalSettings {
  double delta = 0.05;
  double gamma = 0.4;
  NmsConfig nms;
};

// Everything the recall harness needs, indexed once.
struct EvalData {
  const DetectionDump* detections = nullptr;
  std::span<const ExpressionRecord> expressions;
  std::span<const GroundTruthRegion> regions;
  const EmbeddingTable* embeddings = nullptr;
  const Vocabulary* vocab = nullptr;  // required for ref_nms
};

// Per-expression outcome across budgets, in budget order.
struct ExpressionOutcome {
  std::string expression_id;
  std::vector<bool> referent_hit;
  std::vector<MatchCount> contextual;
};

// Evaluates every expression of `split`. `scorer` is required for ref_nms.
// Expressions whose image has no detections count as misses.
std::vector<ExpressionOutcome> evaluate_expressions(const EvalData& data, Split split, Method method,
                                                    std::span<const ProposalBudget> budgets,
                                                    const RelatednessScorer* scorer, const EvalSettings& settings);

// Sums outcomes into one row per budget. Expressions without pseudo regions
// add nothing to the contextual denominator.
std::vector<RecallRow> aggregate(std::span<const ExpressionOutcome> outcomes, Split split, Method method,
                                 std::span<const ProposalBudget> budgets);

// Throws InvalidArgument when the split has no expressions.
RecallReport recall_curve(const EvalData& data, Split split, Method method, std::span<const ProposalBudget> budgets,
                          const RelatednessScorer* scorer, const EvalSettings& settings);

// "5,10,real" -> budgets; "real" uses conf_min.
std::vector<ProposalBudget> parse_budgets(std::string_view text, double conf_min);

// Two decimals, round half away from zero on the exact ratio.
std::string format_percent(std::size_t hits, std::size_t total);

inline constexpr std::string_view kReportHeader =
    "split,method,budget,referent_recall,referent_hits,referent_total,contextual_recall,contextual_matched,"
    "contextual_total";

std::string format_report(const RecallReport& report);
void write_report(const RecallReport& report, const std::filesystem::path& path);
RecallReport parse_report(std::string_view csv);
RecallReport read_report(const std::filesystem::path& path);

}  // namespace refnms
