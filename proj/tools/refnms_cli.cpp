// refnms: expression-aware proposal filtering from the command line.

#include <CLI11.hpp>

#include <cstdio>
#include <fstream>
#include <iostream>
#include <map>
#include <memory>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include "refnms/errors.hpp"
#include "refnms/eval.hpp"
#include "refnms/ingest.hpp"
#include "refnms/nms.hpp"
#include "refnms/pseudo_gt.hpp"
#include "refnms/simd/kernels.hpp"
#include "refnms/synth.hpp"
#include "refnms/trainer.hpp"
#include "refnms/version.hpp"

namespace {

using namespace refnms;

enum ExitCode : int {
  kOk = 0,
  kInternal = 1,
  kUsage = 2,
  kIo = 3,
  kBadInput = 4,
  kShape = 5,
  kNumeric = 6,
};

constexpr const char* kExitCodeHelp =
    "Exit codes:\n"
    "  0  success\n"
    "  1  internal error\n"
    "  2  usage error (unknown flag, bad value, nothing to do)\n"
    "  3  I/O error (missing or unwritable file)\n"
    "  4  malformed input (parse, schema or range error)\n"
    "  5  shape mismatch (feature or tensor dimensions)\n"
    "  6  numeric failure (non-finite values, gradient check above tolerance)\n";

class Output {
 public:
  explicit Output(const std::string& path) {
    if (!path.empty()) {
      file_.open(path, std::ios::binary);
      if (!file_) throw IoError("cannot open " + path + " for writing");
    }
  }
  std::ostream& stream() { return file_.is_open() ? static_cast<std::ostream&>(file_) : std::cout; }
  void close(const std::string& path) {
    if (file_.is_open()) {
      file_.close();
      if (!file_) throw IoError("failed writing " + path);
    }
  }

 private:
  std::ofstream file_;
};

std::optional<Split> split_filter(const std::string& name) {
  if (name.empty() || name == "all") return std::nullopt;
  return parse_split(name);
}

// ---------------------------------------------------------------- synth-data

struct SynthArgs {
  std::string out_dir;
  SynthConfig cfg;
};

void run_synth(const SynthArgs& a) {
  const auto data = generate_synthetic(a.cfg);
  const auto p = write_synthetic(data, a.out_dir);
  std::cout << "wrote " << data.detections.images.size() << " images, " << data.expressions.size()
            << " expressions to " << a.out_dir << "\n";
  (void)p;
}

// ----------------------------------------------------------------- pseudo-gt

struct PseudoArgs {
  std::string expressions, regions, embeddings, split = "all", out;
  double gamma = 0.4;
};

void run_pseudo(const PseudoArgs& a) {
  const auto exprs = load_expressions(a.expressions);
  const auto regions = load_regions(a.regions);
  const auto table = load_embeddings(a.embeddings);
  const auto filter = split_filter(a.split);
  std::map<std::string, std::vector<GroundTruthRegion>> by_image;
  for (const auto& r : regions) by_image[r.image_id].push_back(r);

  Output out(a.out);
  for (const auto& e : exprs) {
    if (filter && e.split != *filter) continue;
    const auto& img = by_image[e.image_id];
    const PseudoGtSet set = generate_pseudo_gt(e, img, table, a.gamma);
    std::string ids;
    for (const auto& id : set.region_ids) {
      if (!ids.empty()) ids += ',';
      ids += id;
    }
    out.stream() << e.expression_id << '\t' << ids << '\n';
  }
  out.close(a.out);
}

// --------------------------------------------------------------------- train

struct TrainArgs {
  std::string detections, expressions, regions, embeddings, config, out, resume;
  std::string loss;
  std::size_t epochs = 0, batch_size = 0, hidden = 0, max_len = 0;
  std::uint64_t seed = 0;
  double lr_head = 0, lr_rest = 0, delta = 0, gamma = 0;
  CLI::App* app = nullptr;
};

TrainConfig train_config_from(const TrainArgs& a) {
  TrainConfig cfg;
  if (!a.config.empty()) cfg = load_train_config(a.config);
  const auto given = [&](const char* flag) { return a.app->count(flag) > 0; };
  if (given("--loss")) cfg.loss = parse_loss(a.loss);
  if (given("--epochs")) cfg.epochs = a.epochs;
  if (given("--seed")) cfg.seed = a.seed;
  if (given("--batch-size")) cfg.batch_size = a.batch_size;
  if (given("--hidden")) cfg.hidden = a.hidden;
  if (given("--max-len")) cfg.max_len = a.max_len;
  if (given("--lr-head")) cfg.lr_head = a.lr_head;
  if (given("--lr-rest")) cfg.lr_rest = a.lr_rest;
  if (given("--delta")) cfg.delta = a.delta;
  if (given("--gamma")) cfg.gamma = a.gamma;
  return cfg;
}

void print_epoch(const EpochMetrics& m) {
  char line[160];
  std::snprintf(line, sizeof line, "epoch %zu  loss %.6f  steps %zu  pos %zu  neg %zu  skipped %zu\n", m.epoch + 1,
                m.mean_loss, m.steps, m.positives, m.negatives, m.skipped);
  std::cout << line;
}

void run_train(const TrainArgs& a) {
  const auto dets = load_detection_dump(a.detections);
  const auto exprs = load_expressions(a.expressions);
  const auto regions = load_regions(a.regions);
  const auto table = load_embeddings(a.embeddings);

  if (!a.resume.empty()) {
    Checkpoint ckpt = load_checkpoint(a.resume);
    check_feature_dim(ckpt, dets.feature_dim);
    const std::size_t until = a.app->count("--epochs") ? a.epochs : ckpt.train_config.epochs;
    std::vector<ExpressionRecord> train;
    for (const auto& e : exprs) {
      if (e.split == Split::kTrain) train.push_back(e);
    }
    const auto examples =
        build_training_examples(dets, train, regions, table, ckpt.vocab, ckpt.train_config, nullptr);
    for (const auto& m : resume_training(ckpt, examples, until)) print_epoch(m);
    save_checkpoint(ckpt, a.out);
    std::cout << "saved " << a.out << " after " << ckpt.epochs_completed << " epochs\n";
    return;
  }

  const TrainConfig cfg = train_config_from(a);
  const TrainingRun run = train_model(dets, exprs, regions, table, cfg);
  std::cout << "examples " << run.stats.used << " (no image " << run.stats.skipped_no_image << ", no boxes "
            << run.stats.skipped_empty << "), vocabulary " << run.checkpoint.vocab.size() << ", parameters "
            << run.checkpoint.params.parameter_count() << "\n";
  for (const auto& m : run.history) print_epoch(m);
  save_checkpoint(run.checkpoint, a.out);
  std::cout << "saved " << a.out << "\n";
}

// --------------------------------------------------------------------- apply

struct FilterArgs {
  std::string detections, expressions, checkpoint, method = "ref_nms", split = "all", out;
  bool stub_relatedness = false;
  bool class_agnostic = false;
  double delta = 0.05, nms_iou = 0.3, conf_min = 0.65;
};

struct ApplyArgs : FilterArgs {
  std::string budget = "real";
};

void run_apply(const ApplyArgs& a) {
  const auto dets = load_detection_dump(a.detections);
  const auto exprs = load_expressions(a.expressions);
  const Method method = parse_method(a.method);
  const auto budgets = parse_budgets(a.budget, a.conf_min);
  if (budgets.size() != 1) throw InvalidArgument("apply takes exactly one budget");
  const auto filter = split_filter(a.split);
  NmsConfig nms;
  nms.iou_threshold = a.nms_iou;
  nms.per_class = !a.class_agnostic;

  std::optional<Checkpoint> ckpt;
  std::unique_ptr<RelatednessScorer> scorer;
  if (method == Method::kRefNms) {
    if (a.stub_relatedness) {
      scorer = std::make_unique<ConstantScorer>(1.0);
    } else {
      if (a.checkpoint.empty()) throw InvalidArgument("ref_nms needs --checkpoint or --stub-relatedness");
      ckpt = load_checkpoint(a.checkpoint);
      check_feature_dim(*ckpt, dets.feature_dim);
      scorer = std::make_unique<ModelScorer>(ckpt->params);
    }
  }

  Output out(a.out);
  std::ostream& os = out.stream();
  for (const auto& e : exprs) {
    if (filter && e.split != *filter) continue;
    const ImageDetections* img = dets.find(e.image_id);
    if (img == nullptr) continue;
    std::vector<ScoredProposal> props;
    if (method == Method::kRefNms) {
      std::vector<int> tokens;
      if (ckpt) tokens = encode_tokens(e.tokens, ckpt->vocab);
      props = ref_nms_pipeline(*img, tokens, *scorer, a.delta, nms, budgets[0]);
    } else {
      props = baseline_pipeline(*img, a.delta, nms, budgets[0]);
    }
    for (const auto& p : props) {
      os << e.expression_id << '\t' << format_double(p.box.x1) << ' ' << format_double(p.box.y1) << ' '
         << format_double(p.box.x2) << ' ' << format_double(p.box.y2) << '\t' << p.category_id << '\t'
         << format_double(p.confidence) << '\t' << format_double(p.relatedness) << '\t' << format_double(p.fused)
         << '\n';
    }
  }
  out.close(a.out);
}

// --------------------------------------------------------------- eval-recall

struct EvalArgs : FilterArgs {
  std::string regions, embeddings, budgets = "10,20,50,100,real";
  double gamma = 0.4;
};

void run_eval(const EvalArgs& a) {
  const auto dets = load_detection_dump(a.detections);
  const auto exprs = load_expressions(a.expressions);
  const auto regions = load_regions(a.regions);
  const auto table = load_embeddings(a.embeddings);
  const auto budgets = parse_budgets(a.budgets, a.conf_min);
  if (a.split.empty() || a.split == "all") throw InvalidArgument("eval-recall needs a concrete --split");
  const Split split = parse_split(a.split);

  std::vector<Method> methods;
  {
    std::stringstream ss(a.method);
    std::string tok;
    while (std::getline(ss, tok, ',')) {
      if (!tok.empty()) methods.push_back(parse_method(tok));
    }
  }
  if (methods.empty()) throw InvalidArgument("no method given");

  std::optional<Checkpoint> ckpt;
  std::unique_ptr<RelatednessScorer> scorer;
  for (Method m : methods) {
    if (m != Method::kRefNms || scorer) continue;
    if (a.stub_relatedness) {
      scorer = std::make_unique<ConstantScorer>(1.0);
    } else {
      if (a.checkpoint.empty()) throw InvalidArgument("ref_nms needs --checkpoint or --stub-relatedness");
      ckpt = load_checkpoint(a.checkpoint);
      check_feature_dim(*ckpt, dets.feature_dim);
      scorer = std::make_unique<ModelScorer>(ckpt->params);
    }
  }
  // The stub scorer ignores tokens, but encoding still needs a vocabulary.
  Vocabulary stub_vocab;
  EvalData data;
  data.detections = &dets;
  data.expressions = exprs;
  data.regions = regions;
  data.embeddings = &table;
  data.vocab = ckpt ? &ckpt->vocab : &stub_vocab;

  EvalSettings settings;
  settings.delta = a.delta;
  settings.gamma = a.gamma;
  settings.nms.iou_threshold = a.nms_iou;
  settings.nms.per_class = !a.class_agnostic;

  RecallReport report;
  for (Method m : methods) {
    auto part = recall_curve(data, split, m, budgets, scorer.get(), settings);
    for (auto& row : part.rows) report.rows.push_back(std::move(row));
  }
  Output out(a.out);
  out.stream() << format_report(report);
  out.close(a.out);
}

// ---------------------------------------------------------------- grad-check

struct GradArgs {
  ModelGradCheckConfig cfg;
  std::string loss = "xe";
  double tolerance = 1e-4;
  std::size_t max_coords = 16;
  bool strict = false;
};

int run_grad(GradArgs a) {
  a.cfg.loss = parse_loss(a.loss);
  a.cfg.options.max_coords_per_input = a.max_coords;
  a.cfg.options.seed = a.cfg.seed;
  a.cfg.options.resolve_tolerance = a.strict ? 0.0 : a.tolerance;
  const auto res = check_model_gradients(a.cfg);
  char line[256];
  std::snprintf(line, sizeof line,
                "max relative error %.3e (input %zu, coord %zu, analytic %.6e, numeric %.6e) over %zu coordinates\n",
                res.max_rel_error, res.worst_input, res.worst_coord, res.analytic, res.numeric, res.coords_checked);
  std::cout << line;
  std::snprintf(line, sizeof line, "denominator floor %.3e, %zu coordinates below it\n", res.denominator_floor,
                res.unresolved);
  std::cout << line;
  const bool ok = res.max_rel_error < a.tolerance;
  std::cout << (ok ? "ok" : "FAILED") << " (tolerance " << a.tolerance << ")\n";
  return ok ? kOk : kNumeric;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Expression-aware proposal filtering: pseudo labels, relatedness training, fused-score NMS and "
               "recall evaluation."};
  app.name("refnms");
  app.footer(kExitCodeHelp);
  app.require_subcommand(0, 1);
  bool show_version = false;
  app.add_flag("--version", show_version, "Print artifact and file format versions");
  std::string kernels;
  app.add_option("--kernels", kernels, "Force the numeric kernel backend (scalar or avx2)")
      ->check(CLI::IsMember({"scalar", "avx2"}));

  SynthArgs synth;
  auto* sc = app.add_subcommand("synth-data", "Write a seeded synthetic dataset");
  sc->add_option("--out-dir", synth.out_dir, "Output directory")->required();
  sc->add_option("--train-images", synth.cfg.train_images, "Images in the train split")->capture_default_str();
  sc->add_option("--eval-images", synth.cfg.eval_images, "Images in the val split")->capture_default_str();
  sc->add_option("--categories", synth.cfg.categories, "Number of categories (feature dimension)")
      ->capture_default_str();
  sc->add_option("--boxes-per-image", synth.cfg.boxes_per_image, "Detections per image")->capture_default_str();
  sc->add_option("--expressions-per-image", synth.cfg.expressions_per_image, "Expressions per image")
      ->capture_default_str();
  sc->add_option("--noise", synth.cfg.noise, "Feature noise standard deviation")->capture_default_str();
  sc->add_option("--seed", synth.cfg.seed, "Random seed")->capture_default_str();

  PseudoArgs pseudo;
  auto* pc = app.add_subcommand("pseudo-gt", "Emit pseudo ground-truth region ids per expression");
  pc->add_option("--expressions", pseudo.expressions, "Expressions TSV")->required();
  pc->add_option("--regions", pseudo.regions, "Ground-truth regions TSV")->required();
  pc->add_option("--embeddings", pseudo.embeddings, "Word vectors (GloVe text format)")->required();
  pc->add_option("--gamma", pseudo.gamma, "Cosine similarity threshold")->capture_default_str();
  pc->add_option("--split", pseudo.split, "Only this split (train, val, testA, testB, test or all)")
      ->capture_default_str();
  pc->add_option("--out", pseudo.out, "Output file (default stdout)");

  TrainArgs train;
  auto* tc = app.add_subcommand("train", "Train the relatedness module and write a checkpoint");
  train.app = tc;
  tc->add_option("--detections", train.detections, "Detection dump")->required();
  tc->add_option("--expressions", train.expressions, "Expressions TSV")->required();
  tc->add_option("--regions", train.regions, "Ground-truth regions TSV")->required();
  tc->add_option("--embeddings", train.embeddings, "Word vectors (GloVe text format)")->required();
  tc->add_option("--out", train.out, "Checkpoint to write")->required();
  tc->add_option("--config", train.config, "key = value training config; flags override it");
  tc->add_option("--resume", train.resume, "Continue this checkpoint up to --epochs total epochs");
  tc->add_option("--loss", train.loss, "xe (binary cross-entropy) or rank (margin ranking)");
  tc->add_option("--epochs", train.epochs, "Training epochs (default 5)");
  tc->add_option("--seed", train.seed, "Random seed (default 7)");
  tc->add_option("--batch-size", train.batch_size, "Expressions per optimizer step (default 8)");
  tc->add_option("--hidden", train.hidden, "GRU hidden size per direction (default 256)");
  tc->add_option("--max-len", train.max_len, "Maximum expression length (default 10)");
  tc->add_option("--lr-head", train.lr_head, "Learning rate of the feature projection (default 4e-4)");
  tc->add_option("--lr-rest", train.lr_rest, "Learning rate of the rest of the model (default 5e-3)");
  tc->add_option("--delta", train.delta, "Confidence pre-filter (default 0.05)");
  tc->add_option("--gamma", train.gamma, "Pseudo ground-truth similarity threshold (default 0.4)");

  auto add_filter_options = [](CLI::App* c, FilterArgs& f) {
    c->add_option("--detections", f.detections, "Detection dump")->required();
    c->add_option("--expressions", f.expressions, "Expressions TSV")->required();
    c->add_option("--checkpoint", f.checkpoint, "Trained checkpoint (ref_nms)");
    c->add_flag("--stub-relatedness", f.stub_relatedness, "Use r = 1 for every box instead of a checkpoint");
    c->add_option("--delta", f.delta, "Confidence pre-filter")->capture_default_str();
    c->add_option("--nms-iou", f.nms_iou, "NMS IoU threshold")->capture_default_str();
    c->add_flag("--class-agnostic", f.class_agnostic, "Run NMS over all classes at once");
    c->add_option("--conf-min", f.conf_min, "Score threshold of the 'real' budget")->capture_default_str();
    c->add_option("--out", f.out, "Output file (default stdout)");
  };

  ApplyArgs apply;
  auto* ac = app.add_subcommand("apply", "Filter proposals for each expression");
  add_filter_options(ac, apply);
  ac->add_option("--method", apply.method, "ref_nms or baseline")->capture_default_str();
  ac->add_option("--split", apply.split, "Only this split (or all)")->capture_default_str();
  ac->add_option("--budget", apply.budget, "Top-N count or 'real' for the score threshold")->capture_default_str();

  EvalArgs eval;
  auto* ec = app.add_subcommand("eval-recall", "Referent and contextual recall at several budgets (CSV)");
  add_filter_options(ec, eval);
  ec->add_option("--regions", eval.regions, "Ground-truth regions TSV")->required();
  ec->add_option("--embeddings", eval.embeddings, "Word vectors (GloVe text format)")->required();
  ec->add_option("--split", eval.split, "Split to evaluate")->required();
  ec->add_option("--method", eval.method, "Comma list of ref_nms, baseline")->capture_default_str();
  ec->add_option("--budgets", eval.budgets, "Comma list of top-N counts and 'real'")->capture_default_str();
  ec->add_option("--gamma", eval.gamma, "Pseudo ground-truth similarity threshold")->capture_default_str();

  GradArgs grad;
  grad.cfg.model = ModelConfig{.vocab_size = 20, .word_dim = 300, .hidden = 256, .feature_dim = 16};
  auto* gc = app.add_subcommand("grad-check", "Finite-difference check of model + loss gradients");
  gc->add_option("--seed", grad.cfg.seed, "Random seed")->capture_default_str();
  gc->add_option("--boxes", grad.cfg.boxes, "Boxes in the instance")->capture_default_str();
  gc->add_option("--tokens", grad.cfg.tokens, "Tokens in the expression")->capture_default_str();
  gc->add_option("--vocab", grad.cfg.model.vocab_size, "Vocabulary size")->capture_default_str();
  gc->add_option("--word-dim", grad.cfg.model.word_dim, "Word vector size")->capture_default_str();
  gc->add_option("--hidden", grad.cfg.model.hidden, "GRU hidden size per direction")->capture_default_str();
  gc->add_option("--feature-dim", grad.cfg.model.feature_dim, "Box feature size")->capture_default_str();
  gc->add_option("--loss", grad.loss, "xe or rank")->capture_default_str();
  gc->add_option("--max-coords", grad.max_coords, "Coordinates sampled per tensor (0 = all)")
      ->capture_default_str();
  gc->add_option("--tolerance", grad.tolerance, "Pass threshold on the max relative error")->capture_default_str();
  gc->add_flag("--strict", grad.strict,
               "Fixed 1e-8 denominator floor instead of the double-precision resolution floor");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    // --help lands here too and exits 0.
    const int code = app.exit(e);
    return code == 0 ? kOk : kUsage;
  }
  if (show_version) {
    std::cout << "refnms " << kVersion << "\n"
              << "checkpoint format " << kCheckpointFormat << "\n"
              << "detection dump format v" << kDetectionFormat << "\n"
              << "recall report format " << kReportFormat << "\n";
    return kOk;
  }
  if (app.get_subcommands().empty()) {
    std::cerr << app.help();
    return kUsage;
  }

  try {
    if (!kernels.empty()) {
      const simd::Backend b = kernels == "avx2" ? simd::Backend::kAvx2 : simd::Backend::kScalar;
      if (b == simd::Backend::kAvx2 && !simd::avx2_available()) throw InvalidArgument("avx2 kernels unavailable");
      simd::set_backend(b);
    }
    if (sc->parsed()) run_synth(synth);
    if (pc->parsed()) run_pseudo(pseudo);
    if (tc->parsed()) run_train(train);
    if (ac->parsed()) run_apply(apply);
    if (ec->parsed()) run_eval(eval);
    if (gc->parsed()) return run_grad(grad);
    return kOk;
  } catch (const IoError& e) {
    std::cerr << "refnms: io error: " << e.what() << "\n";
    return kIo;
  } catch (const ParseError& e) {
    std::cerr << "refnms: parse error: " << e.what() << "\n";
    return kBadInput;
  } catch (const SchemaError& e) {
    std::cerr << "refnms: schema error: " << e.what() << "\n";
    return kBadInput;
  } catch (const RangeError& e) {
    std::cerr << "refnms: range error: " << e.what() << "\n";
    return kBadInput;
  } catch (const ShapeError& e) {
    std::cerr << "refnms: shape error: " << e.what() << "\n";
    return kShape;
  } catch (const NumericError& e) {
    std::cerr << "refnms: numeric error: " << e.what() << "\n";
    return kNumeric;
  } catch (const InvalidArgument& e) {
    std::cerr << "refnms: " << e.what() << "\n";
    return kUsage;
  } catch (const std::exception& e) {
    std::cerr << "refnms: internal error: " << e.what() << "\n";
    return kInternal;
  }
}
