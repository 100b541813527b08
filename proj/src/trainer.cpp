#include "refnms/trainer.hpp"

#include <cmath>
#include <map>

#include "refnms/errors.hpp"
#include "refnms/pseudo_gt.hpp"
#include "refnms/rng.hpp"
#include "refnms/simd/kernels.hpp"
#include "text_util.hpp"

namespace refnms {

std::string_view loss_name(LossKind k) { return k == LossKind::kRanking ? "rank" : "xe"; }

LossKind parse_loss(std::string_view name) {
  if (name == "xe" || name == "binary_xe") return LossKind::kBinaryXe;
  if (name == "rank" || name == "ranking") return LossKind::kRanking;
  throw ParseError("unknown loss '" + std::string(name) + "' (expected xe or rank)");
}

// ---- config file ----------------------------------------------------------

TrainConfig parse_train_config(std::string_view text, TrainConfig cfg) {
  const auto lines = detail::split_lines(text);
  for (std::size_t li = 0; li < lines.size(); ++li) {
    const std::size_t ln = li + 1;
    std::string_view line = lines[li];
    if (const auto hash = line.find('#'); hash != std::string_view::npos) line = line.substr(0, hash);
    line = detail::trim(line);
    if (line.empty()) continue;
    const auto eq = line.find('=');
    if (eq == std::string_view::npos) throw ParseError("expected 'key = value'", ln);
    const std::string_view key = detail::trim(line.substr(0, eq));
    const std::string_view val = detail::trim(line.substr(eq + 1));
    const auto as_size = [&] {
      const long long v = detail::parse_int(val, key, ln);
      if (v < 0) throw ParseError(std::string(key) + " must be non-negative", ln);
      return static_cast<std::size_t>(v);
    };
    const auto as_double = [&] { return detail::parse_double(val, key, ln); };
    if (key == "loss") {
      cfg.loss = parse_loss(val);
    } else if (key == "batch_size") {
      cfg.batch_size = as_size();
    } else if (key == "lr_head") {
      cfg.lr_head = as_double();
    } else if (key == "lr_rest") {
      cfg.lr_rest = as_double();
    } else if (key == "beta1") {
      cfg.beta1 = as_double();
    } else if (key == "beta2") {
      cfg.beta2 = as_double();
    } else if (key == "adam_eps") {
      cfg.adam_eps = as_double();
    } else if (key == "epochs") {
      cfg.epochs = as_size();
    } else if (key == "seed") {
      cfg.seed = as_size();
    } else if (key == "delta") {
      cfg.delta = as_double();
    } else if (key == "gamma") {
      cfg.gamma = as_double();
    } else if (key == "margin") {
      cfg.ranking.margin = as_double();
    } else if (key == "top_h") {
      cfg.ranking.top_h = as_size();
    } else if (key == "max_len") {
      cfg.max_len = as_size();
    } else if (key == "hidden") {
      cfg.hidden = as_size();
    } else if (key == "freeze_embeddings") {
      if (val != "true" && val != "false") throw ParseError("freeze_embeddings must be true or false", ln);
      cfg.freeze_embeddings = val == "true";
    } else if (key == "decay_every") {
      cfg.decay_every = as_size();
    } else if (key == "decay_factor") {
      cfg.decay_factor = as_double();
    } else {
      throw ParseError("unknown config key '" + std::string(key) + "'", ln);
    }
  }
  validate_train_config(cfg);
  return cfg;
}

void validate_train_config(const TrainConfig& cfg) {
  if (cfg.batch_size == 0) throw RangeError("batch_size must be >= 1");
  if (!(cfg.lr_head > 0.0) || !(cfg.lr_rest > 0.0)) throw RangeError("learning rates must be > 0");
  if (!(cfg.ranking.margin > 0.0) || cfg.ranking.top_h == 0) throw RangeError("margin must be > 0 and top_h >= 1");
  if (cfg.max_len == 0 || cfg.hidden == 0) throw RangeError("max_len and hidden must be >= 1");
  if (!(cfg.delta >= 0.0 && cfg.delta <= 1.0)) throw RangeError("delta must lie in [0, 1]");
  if (!(cfg.beta1 >= 0.0 && cfg.beta1 < 1.0) || !(cfg.beta2 >= 0.0 && cfg.beta2 < 1.0)) {
    throw RangeError("Adam betas must lie in [0, 1)");
  }
}

TrainConfig load_train_config(const std::filesystem::path& path, TrainConfig base) {
  return parse_train_config(detail::read_file(path), base);
}

std::string format_train_config(const TrainConfig& c) {
  std::string s;
  const auto kv = [&](std::string_view k, const std::string& v) {
    s += k;
    s += " = ";
    s += v;
    s += '\n';
  };
  kv("loss", std::string(loss_name(c.loss)));
  kv("batch_size", std::to_string(c.batch_size));
  kv("lr_head", format_double(c.lr_head));
  kv("lr_rest", format_double(c.lr_rest));
  kv("beta1", format_double(c.beta1));
  kv("beta2", format_double(c.beta2));
  kv("adam_eps", format_double(c.adam_eps));
  kv("epochs", std::to_string(c.epochs));
  kv("seed", std::to_string(c.seed));
  kv("delta", format_double(c.delta));
  kv("gamma", format_double(c.gamma));
  kv("margin", format_double(c.ranking.margin));
  kv("top_h", std::to_string(c.ranking.top_h));
  kv("max_len", std::to_string(c.max_len));
  kv("hidden", std::to_string(c.hidden));
  kv("freeze_embeddings", c.freeze_embeddings ? "true" : "false");
  kv("decay_every", std::to_string(c.decay_every));
  kv("decay_factor", format_double(c.decay_factor));
  return s;
}

std::uint64_t config_hash(const TrainConfig& cfg, const ModelConfig& model) {
  TrainConfig c = cfg;
  c.epochs = 0;  // resuming for more epochs is the same configuration
  std::string text = format_train_config(c);
  text += "vocab=" + std::to_string(model.vocab_size) + " word_dim=" + std::to_string(model.word_dim) +
          " hidden=" + std::to_string(model.hidden) + " feature_dim=" + std::to_string(model.feature_dim);
  std::uint64_t h = 1469598103934665603ULL;
  for (unsigned char ch : text) {
    h ^= ch;
    h *= 1099511628211ULL;
  }
  return h;
}

// ---- optimizer ------------------------------------------------------------

OptimizerState init_optimizer(const ModelParameters& params) {
  OptimizerState s;
  for (const auto& e : params.entries()) {
    s.m.emplace_back(e.array->shape, 0.0);
    s.v.emplace_back(e.array->shape, 0.0);
  }
  return s;
}

void adam_step(ModelParameters& params, std::span<const ad::Array> grads, OptimizerState& state,
               const TrainConfig& cfg, double lr_scale) {
  auto entries = params.entries();
  if (grads.size() != entries.size() || state.m.size() != entries.size() || state.v.size() != entries.size()) {
    throw ShapeError("adam_step: gradient/state count does not match parameters");
  }
  for (std::size_t i = 0; i < entries.size(); ++i) {
    if (grads[i].shape != entries[i].array->shape) {
      throw ShapeError("adam_step: gradient for " + entries[i].name + " has shape " +
                       ad::shape_str(grads[i].shape));
    }
    for (double g : grads[i].data) {
      if (!std::isfinite(g)) throw NumericError("non-finite gradient in parameter " + entries[i].name);
    }
  }
  ++state.step;
  const double t = static_cast<double>(state.step);
  const double bc1 = 1.0 - std::pow(cfg.beta1, t);
  const double bc2 = 1.0 - std::pow(cfg.beta2, t);
  for (std::size_t i = 0; i < entries.size(); ++i) {
    if (cfg.freeze_embeddings && entries[i].name == "word_embeddings") continue;
    const double lr = lr_scale * (entries[i].group == ParamGroup::kHead ? cfg.lr_head : cfg.lr_rest);
    auto& p = entries[i].array->data;
    auto& m = state.m[i].data;
    auto& v = state.v[i].data;
    const auto& g = grads[i].data;
    for (std::size_t k = 0; k < p.size(); ++k) {
      m[k] = cfg.beta1 * m[k] + (1.0 - cfg.beta1) * g[k];
      v[k] = cfg.beta2 * v[k] + (1.0 - cfg.beta2) * g[k] * g[k];
      const double m_hat = m[k] / bc1;
      const double v_hat = v[k] / bc2;
      p[k] -= lr * m_hat / (std::sqrt(v_hat) + cfg.adam_eps);
    }
  }
}

// ---- examples -------------------------------------------------------------

ModelConfig model_config_for(const Vocabulary& vocab, const EmbeddingTable& table, std::size_t feature_dim,
                             const TrainConfig& cfg) {
  ModelConfig m;
  m.vocab_size = vocab.size();
  m.word_dim = table.size() > 0 ? table.dimension() : 300;
  m.hidden = cfg.hidden;
  m.feature_dim = feature_dim;
  return m;
}

std::vector<TrainingExample> build_training_examples(const DetectionDump& dets,
                                                     std::span<const ExpressionRecord> train_exprs,
                                                     std::span<const GroundTruthRegion> regions,
                                                     const EmbeddingTable& table, const Vocabulary& vocab,
                                                     const TrainConfig& cfg, ExampleBuildStats* stats) {
  std::map<std::string, std::vector<GroundTruthRegion>, std::less<>> by_image;
  for (const auto& r : regions) by_image[r.image_id].push_back(r);
  std::map<std::string, const ImageDetections*, std::less<>> images;
  for (const auto& img : dets.images) images.emplace(img.image_id, &img);

  ExampleBuildStats st;
  std::vector<TrainingExample> out;
  static const std::vector<GroundTruthRegion> kNone;
  for (const auto& e : train_exprs) {
    const auto it = images.find(e.image_id);
    if (it == images.end()) {
      ++st.skipped_no_image;
      continue;
    }
    const auto survivors = confidence_survivors(*it->second, cfg.delta);
    if (survivors.empty()) {
      ++st.skipped_empty;
      continue;
    }
    const auto rit = by_image.find(e.image_id);
    const auto& img_regions = rit == by_image.end() ? kNone : rit->second;
    const PseudoGtSet pseudo = generate_pseudo_gt(e, img_regions, table, cfg.gamma);

    TrainingExample ex;
    ex.expression_id = e.expression_id;
    ex.tokens = encode_tokens(e.tokens, vocab);
    ex.features = feature_matrix(survivors, dets.feature_dim);
    for (const auto* s : survivors) ex.boxes.push_back(s->box);
    ex.foreground.push_back(e.referent_box);
    for (const auto& r : img_regions) {
      if (pseudo.region_ids.count(r.region_id)) ex.foreground.push_back(r.box);
    }
    out.push_back(std::move(ex));
    ++st.used;
  }
  if (stats) *stats = st;
  return out;
}

ExampleLoss accumulate_example(const ModelParameters& params, const TrainingExample& ex, const TrainConfig& cfg,
                               std::vector<ad::Array>& grads, double weight) {
  ad::Graph g(true);
  const BoundModel m = bind(g, params, true);
  const ForwardVars f = forward(m, ex.tokens, g.constant_ref(ex.features));
  const auto labels = assign_labels(ex.boxes, ex.foreground);

  ExampleLoss res;
  for (const auto& l : labels) (l.r_star ? res.positives : res.negatives)++;
  std::optional<ad::Var> loss;
  if (cfg.loss == LossKind::kBinaryXe) {
    std::vector<int> r_star;
    for (const auto& l : labels) r_star.push_back(l.r_star);
    loss = binary_xe(f.relatedness.r, r_star);
  } else {
    const auto pairs = sample_pairs(labels, f.relatedness.r.value().data, cfg.ranking);
    res.pairs = pairs.size();
    loss = ranking_loss(pairs, f.relatedness.r, cfg.ranking);
  }
  if (!loss) return res;
  res.loss = loss->value()[0];
  g.backward(*loss);
  for (std::size_t i = 0; i < m.leaves.size(); ++i) {
    if (const ad::Array* gr = g.grad(m.leaves[i])) {
      simd::axpy(weight, gr->data.data(), grads[i].data.data(), gr->size());
      res.has_gradient = true;
    }
  }
  return res;
}

EpochMetrics train_epoch(std::span<const TrainingExample> examples, ModelParameters& params, OptimizerState& state,
                         const TrainConfig& cfg, std::size_t epoch) {
  if (examples.empty()) throw InvalidArgument("train_epoch: no usable training expressions");
  if (cfg.batch_size == 0) throw RangeError("batch_size must be >= 1");
  Rng rng(cfg.seed ^ (0x9E3779B97F4A7C15ULL * (epoch + 1)));
  const auto order = rng.permutation(examples.size());

  double lr_scale = 1.0;
  if (cfg.decay_every > 0) lr_scale = std::pow(cfg.decay_factor, static_cast<double>(epoch / cfg.decay_every));

  std::vector<ad::Array> grads;
  for (const auto& e : params.entries()) grads.emplace_back(e.array->shape, 0.0);

  EpochMetrics metrics;
  metrics.epoch = epoch;
  double loss_sum = 0.0;
  for (std::size_t start = 0; start < order.size(); start += cfg.batch_size) {
    const std::size_t end = std::min(order.size(), start + cfg.batch_size);
    const double weight = 1.0 / static_cast<double>(end - start);
    for (auto& gr : grads) std::fill(gr.data.begin(), gr.data.end(), 0.0);
    bool any = false;
    for (std::size_t k = start; k < end; ++k) {
      const ExampleLoss el = accumulate_example(params, examples[order[k]], cfg, grads, weight);
      loss_sum += el.loss;
      metrics.positives += el.positives;
      metrics.negatives += el.negatives;
      any = any || el.has_gradient;
    }
    if (any) {
      adam_step(params, grads, state, cfg, lr_scale);
      ++metrics.steps;
    }
  }
  metrics.mean_loss = loss_sum / static_cast<double>(examples.size());
  return metrics;
}

// ---- orchestration --------------------------------------------------------

TrainingRun train_model(const DetectionDump& dets, std::span<const ExpressionRecord> exprs,
                        std::span<const GroundTruthRegion> regions, const EmbeddingTable& table,
                        const TrainConfig& cfg) {
  validate_train_config(cfg);
  std::vector<ExpressionRecord> train;
  for (const auto& e : exprs) {
    if (e.split == Split::kTrain) train.push_back(e);
  }
  if (train.empty()) throw InvalidArgument("no training expressions (split=train)");
  TrainingRun run;
  Checkpoint& ck = run.checkpoint;
  ck.train_config = cfg;
  ck.vocab = build_vocabulary(train, cfg.max_len);
  const auto examples = build_training_examples(dets, train, regions, table, ck.vocab, cfg, &run.stats);
  if (examples.empty()) throw InvalidArgument("no usable training expressions after confidence filtering");
  const ModelConfig mc = model_config_for(ck.vocab, table, dets.feature_dim, cfg);
  ck.params = init_parameters(mc, cfg.seed, &ck.vocab, &table);
  ck.optimizer = init_optimizer(ck.params);
  ck.config_hash = config_hash(cfg, mc);
  run.history = resume_training(ck, examples, cfg.epochs);
  for (auto& h : run.history) h.skipped = run.stats.skipped_empty + run.stats.skipped_no_image;
  return run;
}

std::vector<EpochMetrics> resume_training(Checkpoint& ckpt, std::span<const TrainingExample> examples,
                                          std::size_t until_epoch) {
  std::vector<EpochMetrics> history;
  while (ckpt.epochs_completed < until_epoch) {
    history.push_back(train_epoch(examples, ckpt.params, ckpt.optimizer, ckpt.train_config, ckpt.epochs_completed));
    ++ckpt.epochs_completed;
  }
  return history;
}

ad::GradCheckResult check_model_gradients(const ModelGradCheckConfig& cfg) {
  if (cfg.boxes < 2 || cfg.tokens == 0 || cfg.model.vocab_size < 2 || cfg.model.feature_dim == 0) {
    throw InvalidArgument("grad check needs >= 2 boxes, >= 1 token, vocab >= 2 and a feature dimension");
  }
  Rng rng(cfg.seed);
  ModelParameters params = init_parameters(cfg.model, cfg.seed);
  // Move every tensor off its structured init (zero biases, identity
  // projection) so no term is trivially zero.
  for (auto& e : params.entries()) {
    for (auto& v : e.array->data) v += rng.uniform(-0.1, 0.1);
  }
  std::vector<int> tokens;
  for (std::size_t i = 0; i < cfg.tokens; ++i) {
    tokens.push_back(1 + static_cast<int>(rng.below(cfg.model.vocab_size - 1)));
  }
  ad::Array features(ad::Shape{cfg.boxes, cfg.model.feature_dim});
  for (auto& v : features.data) v = rng.normal(0.0, 1.0);

  // Labels alternate so both classes are present; overlaps spread over bins.
  std::vector<int> r_star;
  std::vector<LabeledBox> labeled;
  for (std::size_t i = 0; i < cfg.boxes; ++i) {
    LabeledBox lb;
    lb.index = i;
    lb.r_star = i % 2 == 0 ? 1 : 0;
    lb.rho = lb.r_star ? 0.55 + 0.4 * rng.uniform() : 0.5 * rng.uniform();
    lb.q_bin = quantize_overlap(lb.rho);
    labeled.push_back(lb);
    r_star.push_back(lb.r_star);
  }
  const RankingConfig ranking;
  std::vector<RankingPair> pairs;
  if (cfg.loss == LossKind::kRanking) {
    const auto r0 = predict_relatedness(params, tokens, features);
    pairs = sample_pairs(labeled, r0, ranking);
  }

  std::vector<ad::Array> inputs;
  for (const auto& e : params.entries()) inputs.push_back(*e.array);
  inputs.push_back(features);
  const ModelConfig model_cfg = cfg.model;

  const ad::ScalarFn fn = [&](ad::Graph& g, std::span<const ad::Var> vars) -> ad::Var {
    std::vector<ad::Var> leaves(vars.begin(), vars.end() - 1);
    const BoundModel m = bind_vars(g, model_cfg, std::move(leaves));
    const ForwardVars fw = forward(m, tokens, vars.back());
    if (cfg.loss == LossKind::kBinaryXe) return binary_xe(fw.relatedness.r, r_star);
    auto loss = ranking_loss(pairs, fw.relatedness.r, ranking);
    if (!loss) throw InvalidArgument("grad check instance produced no ranking pairs");
    return *loss;
  };
  return ad::grad_check(fn, inputs, cfg.options);
}

}  // namespace refnms
