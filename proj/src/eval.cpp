#include "refnms/eval.hpp"

#include <map>

#include "refnms/errors.hpp"
#include "refnms/pseudo_gt.hpp"
#include "text_util.hpp"

namespace refnms {

bool referent_hit(std::span<const Box> proposals, const Box& referent) {
  for (const auto& p : proposals) {
    if (hits(p, referent)) return true;
  }
  return false;
}

MatchCount contextual_recall(std::span<const Box> proposals, std::span<const Box> regions) {
  MatchCount m;
  m.total = regions.size();
  for (const auto& r : regions) {
    for (const auto& p : proposals) {
      if (hits(p, r)) {
        ++m.matched;
        break;
      }
    }
  }
  return m;
}

std::string_view method_name(Method m) { return m == Method::kRefNms ? "ref_nms" : "baseline"; }

Method parse_method(std::string_view name) {
  if (name == "baseline" || name == "baseline_conf") return Method::kBaselineConf;
  if (name == "ref_nms" || name == "refnms") return Method::kRefNms;
  throw ParseError("unknown method '" + std::string(name) + "' (expected baseline or ref_nms)");
}

double RecallRow::referent_recall() const {
  return referent_total ? 100.0 * static_cast<double>(referent_hits) / static_cast<double>(referent_total) : 0.0;
}

double RecallRow::contextual_recall() const {
  return contextual_total
             ? 100.0 * static_cast<double>(contextual_matched) / static_cast<double>(contextual_total)
             : 0.0;
}

std::vector<ExpressionOutcome> evaluate_expressions(const EvalData& data, Split split, Method method,
                                                    std::span<const ProposalBudget> budgets,
                                                    const RelatednessScorer* scorer, const EvalSettings& settings) {
  if (method == Method::kRefNms && (scorer == nullptr || data.vocab == nullptr)) {
    throw InvalidArgument("ref_nms evaluation needs a relatedness scorer and a vocabulary");
  }
  std::map<std::string, std::vector<GroundTruthRegion>, std::less<>> by_image;
  for (const auto& r : data.regions) by_image[r.image_id].push_back(r);
  std::map<std::string, const ImageDetections*, std::less<>> images;
  for (const auto& img : data.detections->images) images.emplace(img.image_id, &img);
  static const EmbeddingTable kEmpty;
  const EmbeddingTable& table = data.embeddings ? *data.embeddings : kEmpty;

  std::vector<ExpressionOutcome> out;
  for (const auto& e : data.expressions) {
    if (e.split != split) continue;
    ExpressionOutcome o;
    o.expression_id = e.expression_id;

    std::vector<Box> pseudo_boxes;
    if (const auto rit = by_image.find(e.image_id); rit != by_image.end()) {
      const PseudoGtSet pseudo = generate_pseudo_gt(e, rit->second, table, settings.gamma);
      for (const auto& r : rit->second) {
        if (pseudo.region_ids.count(r.region_id)) pseudo_boxes.push_back(r.box);
      }
    }

    // Budgets only cut a prefix (or threshold) of one NMS result, so NMS runs
    // once with an unbounded budget.
    std::vector<ScoredProposal> kept;
    const Criterion crit = method == Method::kRefNms ? Criterion::kFused : Criterion::kConfidence;
    if (const auto it = images.find(e.image_id); it != images.end()) {
      const ProposalBudget all = ProposalBudget::top_n(it->second->records.size());
      if (method == Method::kRefNms) {
        const auto tokens = encode_tokens(e.tokens, *data.vocab);
        kept = ref_nms_pipeline(*it->second, tokens, *scorer, settings.delta, settings.nms, all);
      } else {
        kept = baseline_pipeline(*it->second, settings.delta, settings.nms, all);
      }
    }
    for (const auto& b : budgets) {
      std::vector<Box> boxes;
      for (const auto& p : select_proposals(kept, b, crit)) boxes.push_back(p.box);
      o.referent_hit.push_back(referent_hit(boxes, e.referent_box));
      o.contextual.push_back(contextual_recall(boxes, pseudo_boxes));
    }
    out.push_back(std::move(o));
  }
  return out;
}

std::vector<RecallRow> aggregate(std::span<const ExpressionOutcome> outcomes, Split split, Method method,
                                 std::span<const ProposalBudget> budgets) {
  std::vector<RecallRow> rows;
  for (std::size_t b = 0; b < budgets.size(); ++b) {
    RecallRow row;
    row.split = std::string(split_name(split));
    row.method = std::string(method_name(method));
    row.budget = budgets[b].label();
    for (const auto& o : outcomes) {
      ++row.referent_total;
      if (o.referent_hit[b]) ++row.referent_hits;
      row.contextual_matched += o.contextual[b].matched;
      row.contextual_total += o.contextual[b].total;
    }
    rows.push_back(row);
  }
  return rows;
}

RecallReport recall_curve(const EvalData& data, Split split, Method method, std::span<const ProposalBudget> budgets,
                          const RelatednessScorer* scorer, const EvalSettings& settings) {
  const auto outcomes = evaluate_expressions(data, split, method, budgets, scorer, settings);
  if (outcomes.empty()) {
    throw InvalidArgument("split '" + std::string(split_name(split)) + "' has no expressions");
  }
  return RecallReport{aggregate(outcomes, split, method, budgets)};
}

std::vector<ProposalBudget> parse_budgets(std::string_view text, double conf_min) {
  std::vector<ProposalBudget> out;
  for (auto part : detail::split_char(text, ',')) {
    part = detail::trim(part);
    if (part.empty()) continue;
    if (part == "real" || part == "real_case") {
      out.push_back(ProposalBudget::threshold(conf_min));
    } else {
      const long long n = detail::parse_int(part, "budget", 0);
      if (n < 0) throw ParseError("budget must be non-negative");
      out.push_back(ProposalBudget::top_n(static_cast<std::size_t>(n)));
    }
  }
  if (out.empty()) throw ParseError("no budgets given");
  return out;
}

std::string format_percent(std::size_t hits, std::size_t total) {
  if (total == 0) return "0.00";
  // Integer rounding of 10000*hits/total keeps 2/3 -> 66.67 exact.
  const unsigned long long num = 10000ULL * hits;
  const unsigned long long q = (2 * num + total) / (2 * total);
  std::string frac = std::to_string(q % 100);
  if (frac.size() < 2) frac = "0" + frac;
  return std::to_string(q / 100) + "." + frac;
}

std::string format_report(const RecallReport& report) {
  std::string s(kReportHeader);
  s += '\n';
  for (const auto& r : report.rows) {
    s += r.split + ',' + r.method + ',' + r.budget + ',' + format_percent(r.referent_hits, r.referent_total) + ',' +
         std::to_string(r.referent_hits) + ',' + std::to_string(r.referent_total) + ',' +
         format_percent(r.contextual_matched, r.contextual_total) + ',' + std::to_string(r.contextual_matched) + ',' +
         std::to_string(r.contextual_total) + '\n';
  }
  return s;
}

void write_report(const RecallReport& report, const std::filesystem::path& path) {
  detail::write_file(path, format_report(report));
}

RecallReport parse_report(std::string_view csv) {
  const auto lines = detail::split_lines(csv);
  if (lines.empty() || lines[0] != kReportHeader) throw ParseError("bad recall report header", 1);
  RecallReport rep;
  for (std::size_t i = 1; i < lines.size(); ++i) {
    if (detail::trim(lines[i]).empty()) continue;
    const auto f = detail::split_char(lines[i], ',');
    if (f.size() != 9) throw ParseError("recall row needs 9 fields", i + 1);
    RecallRow r;
    r.split = std::string(f[0]);
    r.method = std::string(f[1]);
    r.budget = std::string(f[2]);
    r.referent_hits = static_cast<std::size_t>(detail::parse_int(f[4], "referent_hits", i + 1));
    r.referent_total = static_cast<std::size_t>(detail::parse_int(f[5], "referent_total", i + 1));
    r.contextual_matched = static_cast<std::size_t>(detail::parse_int(f[7], "contextual_matched", i + 1));
    r.contextual_total = static_cast<std::size_t>(detail::parse_int(f[8], "contextual_total", i + 1));
    if (f[3] != format_percent(r.referent_hits, r.referent_total) ||
        f[6] != format_percent(r.contextual_matched, r.contextual_total)) {
      throw ParseError("recall percentage disagrees with counts", i + 1);
    }
    rep.rows.push_back(std::move(r));
  }
  return rep;
}

RecallReport read_report(const std::filesystem::path& path) { return parse_report(detail::read_file(path)); }

}  // namespace refnms
