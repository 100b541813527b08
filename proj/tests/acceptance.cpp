// Acceptance run: one PASS/FAIL line per criterion, nonzero exit on any
// failure. Tolerances and budgets are pinned here.

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <functional>
#include <map>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include "oracles.hpp"
#include "refnms/eval.hpp"
#include "refnms/nms.hpp"
#include "refnms/objectives.hpp"
#include "refnms/pseudo_gt.hpp"
#include "refnms/synth.hpp"
#include "refnms/trainer.hpp"

using namespace refnms;
namespace fs = std::filesystem;

namespace {

constexpr double kGradTolerance = 1e-4;
constexpr double kGradSeconds = 60.0;
constexpr double kNmsSeconds = 10.0;
constexpr double kXeTolerance = 1e-9;
constexpr double kGainPoints = 10.0;
constexpr double kRecallAt50 = 95.0;
constexpr double kEndToEndSeconds = 300.0;

struct Verdict {
  bool pass = false;
  std::string detail;
};

using Clock = std::chrono::steady_clock;

double seconds_since(Clock::time_point t0) {
  return std::chrono::duration<double>(Clock::now() - t0).count();
}

std::string fmt(const char* f, double v) {
  char buf[64];
  std::snprintf(buf, sizeof buf, f, v);
  return buf;
}

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

// ------------------------------------------------------------------ C1

Verdict gradient_correctness() {
  const auto t0 = Clock::now();
  ModelGradCheckConfig cfg;
  cfg.boxes = 3;
  cfg.tokens = 4;
  cfg.loss = LossKind::kBinaryXe;
  cfg.options.step = 1e-5;
  cfg.options.max_coords_per_input = 0;
  cfg.options.resolve_tolerance = 0.0;
  const auto res = check_model_gradients(cfg);
  const double secs = seconds_since(t0);
  return {res.max_rel_error < kGradTolerance && secs < kGradSeconds,
          "max relative error " + fmt("%.2e", res.max_rel_error) + " over " + std::to_string(res.coords_checked) +
              " coordinates in " + fmt("%.1f", secs) + " s"};
}

// ------------------------------------------------------------------ C2

Verdict nms_oracle() {
  const auto t0 = Clock::now();
  int mismatches = 0;
  for (std::uint64_t seed = 0; seed < 200; ++seed) {
    Rng rng(1000 + seed);
    const std::size_t n = rng.below(33);
    std::vector<Box> boxes;
    std::vector<double> scores;
    for (std::size_t i = 0; i < n; ++i) {
      boxes.push_back(oracle::random_box(rng, 60));
      scores.push_back(rng.uniform());
    }
    const double thr = rng.uniform(0.1, 0.9);
    if (greedy_nms(boxes, scores, thr) != oracle::nms(boxes, scores, thr)) ++mismatches;
  }
  const double secs = seconds_since(t0);
  return {mismatches == 0 && secs < kNmsSeconds,
          std::to_string(mismatches) + "/200 mismatches in " + fmt("%.2f", secs) + " s"};
}

// ------------------------------------------------------------------ C3

Verdict q_table() {
  int wrong = 0;
  for (int k = 0; k <= 100; ++k) {
    if (quantize_overlap(k / 100.0) != oracle::q_bin_percent(k)) ++wrong;
  }
  const bool ends = quantize_overlap(0.5) == 0 && quantize_overlap(1.0) == 5;
  return {wrong == 0 && ends, std::to_string(wrong) + "/101 wrong, q(0.5)=" + std::to_string(quantize_overlap(0.5)) +
                                  " q(1.0)=" + std::to_string(quantize_overlap(1.0))};
}

// ------------------------------------------------------------------ C4

Verdict loss_oracles() {
  const double half = binary_xe(std::vector<double>{0.5}, std::vector<int>{1});
  const double mixed = binary_xe(std::vector<double>{0.9, 0.2}, std::vector<int>{1, 0});
  const bool xe_ok = std::abs(half - std::log(2.0)) < kXeTolerance &&
                     std::abs(mixed - (-(std::log(0.9) + std::log(0.8)) / 2)) < kXeTolerance;

  // Every assignment of 4 boxes over 6 overlap levels, each with two random
  // score vectors and three top_h values.
  const std::vector<double> levels{0.3, 0.55, 0.65, 0.75, 0.85, 0.95};
  std::size_t fixtures = 0, bad_pairs = 0, bad_counts = 0, bad_loss = 0;
  Rng rng(44);
  for (int code = 0; code < 6 * 6 * 6 * 6; ++code) {
    std::vector<LabeledBox> lab;
    for (int i = 0, c = code; i < 4; ++i, c /= 6) {
      LabeledBox b;
      b.index = static_cast<std::size_t>(i);
      b.rho = levels[static_cast<std::size_t>(c % 6)];
      b.r_star = b.rho > 0.5 ? 1 : 0;
      b.q_bin = quantize_overlap(b.rho);
      lab.push_back(b);
    }
    for (int draw = 0; draw < 2; ++draw) {
      std::vector<double> r;
      for (int i = 0; i < 4; ++i) r.push_back(rng.uniform());
      for (std::size_t top_h : {1u, 2u, 100u}) {
        ++fixtures;
        RankingConfig cfg;
        cfg.top_h = top_h;
        const auto pairs = sample_pairs(lab, r, cfg);
        std::map<std::size_t, std::size_t> per_pos;
        double brute = 0.0;
        for (const auto& p : pairs) {
          if (!(lab[p.negative].rho < lab[p.positive].rho) || lab[p.positive].rho <= 0.5) ++bad_pairs;
          ++per_pos[p.positive];
          brute += std::max(0.0, r[p.negative] - r[p.positive] + cfg.margin);
        }
        for (std::size_t i = 0; i < 4; ++i) {
          if (lab[i].rho <= 0.5) continue;
          std::size_t eligible = 0;
          for (std::size_t j = 0; j < 4; ++j) eligible += lab[j].q_bin < lab[i].q_bin ? 1 : 0;
          if (per_pos[i] != std::min(eligible, top_h)) ++bad_counts;
        }
        if (!pairs.empty()) brute /= static_cast<double>(pairs.size());
        if (ranking_loss(pairs, r, cfg) != brute) ++bad_loss;
      }
    }
  }
  const bool ok = xe_ok && bad_pairs == 0 && bad_counts == 0 && bad_loss == 0;
  return {ok, "xe(0.5)=" + fmt("%.12f", half) + ", " + std::to_string(fixtures) + " pair fixtures: " +
                  std::to_string(bad_pairs) + " bad pairs, " + std::to_string(bad_counts) + " bad counts, " +
                  std::to_string(bad_loss) + " loss mismatches"};
}

// ------------------------------------------------------------------ C5

Verdict fusion_identity() {
  int differ = 0;
  Rng rng(5);
  const NmsConfig nms;
  const auto all = ProposalBudget::top_n(1000);
  for (int t = 0; t < 50; ++t) {
    ImageDetections img;
    img.image_id = "img";
    const std::size_t n = 5 + rng.below(40);
    for (std::size_t i = 0; i < n; ++i) {
      DetectionRecord d;
      d.box = oracle::random_box(rng, 150);
      d.category_id = static_cast<int>(rng.below(4));
      d.confidence = rng.uniform();
      d.feature = {0.0};
      img.records.push_back(d);
    }
    const ConstantScorer k(rng.uniform(0.01, 1.0));
    auto ids = [](const std::vector<ScoredProposal>& v) {
      std::set<std::size_t> s;
      for (const auto& p : v) s.insert(p.source_index);
      return s;
    };
    if (ids(ref_nms_pipeline(img, std::vector<int>{1}, k, 0.05, nms, all)) !=
        ids(baseline_pipeline(img, 0.05, nms, all))) {
      ++differ;
    }
  }
  return {differ == 0, std::to_string(differ) + "/50 images differ"};
}

// ------------------------------------------------------------ C6 and C8

struct EndToEnd {
  RecallReport report;
  fs::path checkpoint;
  fs::path csv;
  double seconds = 0.0;
};

EndToEnd run_end_to_end(const fs::path& dir) {
  const auto t0 = Clock::now();
  fs::remove_all(dir);
  SynthConfig sc;
  sc.train_images = 200;
  sc.eval_images = 50;
  sc.categories = 8;
  sc.boxes_per_image = 20;
  sc.noise = 0.1;
  sc.seed = 7;
  const auto paths = write_synthetic(generate_synthetic(sc), dir / "data");

  const auto dets = load_detection_dump(paths.detections);
  const auto exprs = load_expressions(paths.expressions);
  const auto regions = load_regions(paths.regions);
  const auto table = load_embeddings(paths.embeddings);

  TrainConfig tc;
  tc.loss = LossKind::kBinaryXe;
  tc.epochs = 5;
  tc.seed = 7;
  const auto run = train_model(dets, exprs, regions, table, tc);
  EndToEnd out;
  out.checkpoint = dir / "model.ckpt";
  save_checkpoint(run.checkpoint, out.checkpoint);

  const auto ckpt = load_checkpoint(out.checkpoint);
  const ModelScorer scorer(ckpt.params);
  EvalData data;
  data.detections = &dets;
  data.expressions = exprs;
  data.regions = regions;
  data.embeddings = &table;
  data.vocab = &ckpt.vocab;
  const std::vector<ProposalBudget> budgets{ProposalBudget::top_n(5), ProposalBudget::top_n(50)};
  for (Method m : {Method::kRefNms, Method::kBaselineConf}) {
    auto part = recall_curve(data, Split::kVal, m, budgets, &scorer, {});
    for (auto& row : part.rows) out.report.rows.push_back(std::move(row));
  }
  out.csv = dir / "recall.csv";
  write_report(out.report, out.csv);
  out.seconds = seconds_since(t0);
  return out;
}

Verdict end_to_end_gain(const EndToEnd& e) {
  // Rows: ref_nms@5, ref_nms@50, baseline@5, baseline@50.
  const auto& r = e.report.rows;
  if (r.size() != 4) return {false, "unexpected report shape"};
  const double ref5 = r[0].referent_recall(), ref50 = r[1].referent_recall();
  const double base5 = r[2].referent_recall(), base50 = r[3].referent_recall();
  const bool ok = ref5 >= base5 + kGainPoints && ref50 >= kRecallAt50 && base50 >= kRecallAt50 &&
                  e.seconds < kEndToEndSeconds;
  return {ok, "referent recall@5 ref_nms " + fmt("%.2f", ref5) + " vs baseline " + fmt("%.2f", base5) +
                  ", @50 " + fmt("%.2f", ref50) + " / " + fmt("%.2f", base50) + ", " + fmt("%.0f", e.seconds) +
                  " s"};
}

Verdict determinism(const EndToEnd& a, const EndToEnd& b) {
  const bool ckpt = slurp(a.checkpoint) == slurp(b.checkpoint) && !slurp(a.checkpoint).empty();
  const bool csv = slurp(a.csv) == slurp(b.csv) && !slurp(a.csv).empty();
  return {ckpt && csv, std::string("checkpoints ") + (ckpt ? "identical" : "differ") + ", reports " +
                           (csv ? "identical" : "differ")};
}

// ------------------------------------------------------------------ C7

Verdict pseudo_gt_sweep() {
  SynthConfig sc;
  sc.train_images = 200;
  sc.eval_images = 50;
  const auto ds = generate_synthetic(sc);
  std::map<std::string, std::vector<GroundTruthRegion>> by_image;
  for (const auto& r : ds.regions) by_image[r.image_id].push_back(r);
  std::size_t non_monotone = 0, wrong = 0;
  for (const auto& e : ds.expressions) {
    const auto& regs = by_image[e.image_id];
    std::set<std::string> prev;
    bool first = true;
    for (double g : {0.2, 0.4, 0.6, 0.8}) {
      const auto set = generate_pseudo_gt(e, regs, ds.embeddings, g).region_ids;
      if (!first && !std::includes(prev.begin(), prev.end(), set.begin(), set.end())) ++non_monotone;
      prev = set;
      first = false;
    }
    std::set<std::string> mentioned, expected;
    for (std::size_t i = 0; i < e.tokens.size(); ++i) {
      if (e.pos_tags[i] == "NOUN") mentioned.insert(e.tokens[i]);
    }
    for (const auto& r : regs) {
      if (mentioned.count(r.category_name)) expected.insert(r.region_id);
    }
    if (generate_pseudo_gt(e, regs, ds.embeddings, 0.4).region_ids != expected) ++wrong;
  }
  return {non_monotone == 0 && wrong == 0, std::to_string(ds.expressions.size()) + " expressions, " +
                                               std::to_string(non_monotone) + " non-monotone, " +
                                               std::to_string(wrong) + " differ from mentioned categories"};
}

// ------------------------------------------------------------------ C9

// Baseline proposals recomputed with the quadratic NMS reference.
std::vector<Box> oracle_baseline(const ImageDetections& img, double delta, double thr, std::size_t n) {
  std::map<int, std::vector<std::size_t>> by_cat;
  for (std::size_t i = 0; i < img.records.size(); ++i) {
    if (img.records[i].confidence >= delta) by_cat[img.records[i].category_id].push_back(i);
  }
  std::vector<std::size_t> kept;
  for (const auto& [cat, idx] : by_cat) {
    std::vector<Box> b;
    std::vector<double> s;
    for (auto i : idx) {
      b.push_back(img.records[i].box);
      s.push_back(img.records[i].confidence);
    }
    for (auto k : oracle::nms(b, s, thr)) kept.push_back(idx[k]);
  }
  std::stable_sort(kept.begin(), kept.end(), [&](std::size_t a, std::size_t b) {
    return img.records[a].confidence > img.records[b].confidence;
  });
  std::vector<Box> out;
  for (std::size_t i = 0; i < std::min(n, kept.size()); ++i) out.push_back(img.records[kept[i]].box);
  return out;
}

Verdict recall_harness() {
  const std::vector<std::size_t> ns{5, 10, 20, 50};
  std::vector<ProposalBudget> budgets;
  for (auto n : ns) budgets.push_back(ProposalBudget::top_n(n));
  std::size_t bad_bool = 0, bad_sum = 0, non_monotone = 0, expressions = 0;
  for (std::uint64_t f = 0; f < 20; ++f) {
    Rng rng(900 + f);
    SynthConfig sc;
    sc.train_images = 0;
    sc.eval_images = 4 + rng.below(8);
    sc.categories = 3 + rng.below(6);
    sc.boxes_per_image = 8 + rng.below(40);
    sc.embedding_dim = 32;
    sc.seed = 900 + f;
    const auto ds = generate_synthetic(sc);
    EvalSettings settings;
    settings.nms.iou_threshold = rng.uniform(0.2, 0.7);
    EvalData data;
    data.detections = &ds.detections;
    data.expressions = ds.expressions;
    data.regions = ds.regions;
    data.embeddings = &ds.embeddings;
    const auto outcomes = evaluate_expressions(data, Split::kVal, Method::kBaselineConf, budgets, nullptr, settings);
    expressions += outcomes.size();

    for (std::size_t e = 0; e < outcomes.size(); ++e) {
      const auto& ex = ds.expressions[e];
      const auto pseudo = generate_pseudo_gt(ex, ds.regions, ds.embeddings, settings.gamma).region_ids;
      for (std::size_t b = 0; b < ns.size(); ++b) {
        const auto props = oracle_baseline(*ds.detections.find(ex.image_id), settings.delta,
                                           settings.nms.iou_threshold, ns[b]);
        bool hit = false;
        for (const auto& p : props) hit = hit || oracle::iou(p, ex.referent_box) > 0.5;
        std::size_t matched = 0, total = 0;
        for (const auto& r : ds.regions) {
          if (!pseudo.count(r.region_id)) continue;
          ++total;
          bool m = false;
          for (const auto& p : props) m = m || oracle::iou(p, r.box) > 0.5;
          matched += m ? 1 : 0;
        }
        if (outcomes[e].referent_hit[b] != hit || outcomes[e].contextual[b] != MatchCount{matched, total}) {
          ++bad_bool;
        }
      }
    }

    const auto rows = aggregate(outcomes, Split::kVal, Method::kBaselineConf, budgets);
    for (std::size_t b = 0; b < ns.size(); ++b) {
      std::size_t hits = 0, matched = 0, total = 0;
      for (const auto& o : outcomes) {
        hits += o.referent_hit[b] ? 1 : 0;
        matched += o.contextual[b].matched;
        total += o.contextual[b].total;
      }
      if (rows[b].referent_hits != hits || rows[b].referent_total != outcomes.size() ||
          rows[b].contextual_matched != matched || rows[b].contextual_total != total) {
        ++bad_sum;
      }
      if (b > 0 && (rows[b].referent_recall() < rows[b - 1].referent_recall() ||
                    rows[b].contextual_recall() < rows[b - 1].contextual_recall())) {
        ++non_monotone;
      }
    }
  }
  return {bad_bool == 0 && bad_sum == 0 && non_monotone == 0,
          "20 fixtures, " + std::to_string(expressions) + " expressions: " + std::to_string(bad_bool) +
              " outcome mismatches, " + std::to_string(bad_sum) + " aggregate mismatches, " +
              std::to_string(non_monotone) + " monotonicity violations"};
}

}  // namespace

int main() {
  int failures = 0;
  auto report = [&](int id, const char* name, const std::function<Verdict()>& fn) {
    Verdict v;
    try {
      v = fn();
    } catch (const std::exception& e) {
      v = {false, std::string("threw: ") + e.what()};
    }
    std::printf("%s C%d %s: %s\n", v.pass ? "PASS" : "FAIL", id, name, v.detail.c_str());
    std::fflush(stdout);
    failures += v.pass ? 0 : 1;
  };

  const fs::path tmp(REFNMS_ACCEPT_TMP);
  EndToEnd first, second;
  bool ran = false;
  auto end_to_end = [&] {
    if (!ran) {
      first = run_end_to_end(tmp / "run1");
      ran = true;
    }
    return first;
  };

  report(1, "gradient correctness", gradient_correctness);
  report(2, "NMS oracle equivalence", nms_oracle);
  report(3, "q-value table", q_table);
  report(4, "loss oracles", loss_oracles);
  report(5, "fusion identity", fusion_identity);
  report(6, "synthetic end-to-end gain", [&] { return end_to_end_gain(end_to_end()); });
  report(7, "pseudo ground-truth sweep", pseudo_gt_sweep);
  report(8, "determinism", [&] {
    end_to_end();
    second = run_end_to_end(tmp / "run2");
    return determinism(first, second);
  });
  report(9, "recall harness oracle", recall_harness);
  std::printf("%d of 9 criteria failed\n", failures);
  return failures == 0 ? 0 : 1;
}
