#include "refnms/model.hpp"

#include <algorithm>
#include <cmath>

#include "refnms/errors.hpp"
#include "refnms/rng.hpp"

namespace refnms {

using ad::Array;
using ad::Shape;
using ad::Var;

namespace {

Array uniform(Shape shape, double k, Rng& rng) {
  Array a(std::move(shape));
  for (double& v : a.data) v = rng.uniform(-k, k);
  return a;
}

GruWeights init_gru(std::size_t din, std::size_t dh, Rng& rng) {
  const double k = 1.0 / std::sqrt(static_cast<double>(dh));
  GruWeights g;
  g.w_z = uniform({dh, din}, k, rng);
  g.w_r = uniform({dh, din}, k, rng);
  g.w_h = uniform({dh, din}, k, rng);
  g.u_z = uniform({dh, dh}, k, rng);
  g.u_r = uniform({dh, dh}, k, rng);
  g.u_h = uniform({dh, dh}, k, rng);
  g.b_z = Array(Shape{dh});
  g.b_r = Array(Shape{dh});
  g.b_h = Array(Shape{dh});
  return g;
}

LinearWeights init_linear(std::size_t in, std::size_t out, Rng& rng) {
  const double k = 1.0 / std::sqrt(static_cast<double>(std::max<std::size_t>(in, 1)));
  return {uniform({out, in}, k, rng), Array(Shape{out})};
}

void append_gru(std::vector<ModelParameters::Entry>& out, const std::string& prefix, GruWeights& g) {
  for (auto [name, arr] : {std::pair{"w_z", &g.w_z}, {"w_r", &g.w_r}, {"w_h", &g.w_h}, {"u_z", &g.u_z},
                           {"u_r", &g.u_r}, {"u_h", &g.u_h}, {"b_z", &g.b_z}, {"b_r", &g.b_r}, {"b_h", &g.b_h}}) {
    out.push_back({prefix + "." + name, arr, ParamGroup::kRest});
  }
}

void append_linear(std::vector<ModelParameters::Entry>& out, const std::string& prefix, LinearWeights& l,
                   ParamGroup group = ParamGroup::kRest) {
  out.push_back({prefix + ".weight", &l.weight, group});
  out.push_back({prefix + ".bias", &l.bias, group});
}

ad::GruParams bind_gru(const std::vector<Var>& leaves, std::size_t first) {
  return {leaves[first], leaves[first + 1], leaves[first + 2], leaves[first + 3], leaves[first + 4],
          leaves[first + 5], leaves[first + 6], leaves[first + 7], leaves[first + 8]};
}

// x (n) + b (1) for a scalar bias parameter.
Var add_scalar_bias(Var x, Var b) {
  const std::size_t n = x.value().size();
  return ad::reshape(ad::add_bias(ad::reshape(x, Shape{n, 1}), b), Shape{n});
}

Var linear(Var x, Var w, Var b) { return ad::add_bias(ad::matmul_nt(x, w), b); }

}  // namespace

std::vector<ModelParameters::Entry> ModelParameters::entries() {
  std::vector<Entry> out;
  out.push_back({"word_embeddings", &word_embeddings, ParamGroup::kRest});
  append_gru(out, "gru_forward", gru_forward);
  append_gru(out, "gru_backward", gru_backward);
  append_linear(out, "feature_projection", feature_projection, ParamGroup::kHead);
  append_linear(out, "mlp_a1", mlp_a1);
  append_linear(out, "mlp_a2", mlp_a2);
  out.push_back({"fc_s.weight", &fc_s_weight, ParamGroup::kRest});
  out.push_back({"fc_s.bias", &fc_s_bias, ParamGroup::kRest});
  append_linear(out, "mlp_b1", mlp_b1);
  append_linear(out, "mlp_b2", mlp_b2);
  out.push_back({"fc_r.weight", &fc_r_weight, ParamGroup::kRest});
  out.push_back({"fc_r.bias", &fc_r_bias, ParamGroup::kRest});
  return out;
}

std::vector<ModelParameters::ConstEntry> ModelParameters::entries() const {
  std::vector<ConstEntry> out;
  for (const auto& e : const_cast<ModelParameters*>(this)->entries()) out.push_back({e.name, e.array, e.group});
  return out;
}

std::size_t ModelParameters::parameter_count() const {
  std::size_t n = 0;
  for (const auto& e : entries()) n += e.array->size();
  return n;
}

void ModelParameters::validate() const {
  const auto& c = config;
  const std::size_t q = c.query_dim(), h = c.hidden, v = c.feature_dim, w = c.word_dim;
  const std::vector<Shape> expected = {
      {c.vocab_size, w},
      {h, w}, {h, w}, {h, w}, {h, h}, {h, h}, {h, h}, {h}, {h}, {h},
      {h, w}, {h, w}, {h, w}, {h, h}, {h, h}, {h, h}, {h}, {h}, {h},
      {v, v}, {v},
      {q, v}, {q}, {q, q}, {q},
      {2 * q}, {1},
      {q, v}, {q}, {q, q}, {q},
      {q}, {1},
  };
  const auto es = entries();
  if (es.size() != expected.size()) throw ShapeError("parameter table size mismatch");
  for (std::size_t i = 0; i < es.size(); ++i) {
    if (es[i].array->shape != expected[i]) {
      throw ShapeError("parameter " + es[i].name + " has shape " + ad::shape_str(es[i].array->shape) +
                       ", expected " + ad::shape_str(expected[i]));
    }
    if (es[i].array->data.size() != ad::shape_size(expected[i])) {
      throw ShapeError("parameter " + es[i].name + " data length mismatch");
    }
  }
}

ModelParameters init_parameters(const ModelConfig& config, std::uint64_t seed, const Vocabulary* vocab,
                                const EmbeddingTable* glove) {
  if (config.vocab_size < 2 || config.word_dim == 0 || config.hidden == 0 || config.feature_dim == 0) {
    throw InvalidArgument("model config has a zero dimension");
  }
  if (vocab && vocab->size() != config.vocab_size) {
    throw ShapeError("vocabulary size " + std::to_string(vocab->size()) + " != config vocab_size " +
                     std::to_string(config.vocab_size));
  }
  if (glove && glove->size() > 0 && glove->dimension() != config.word_dim) {
    throw ShapeError("embedding table dimension " + std::to_string(glove->dimension()) +
                     " != word_dim " + std::to_string(config.word_dim));
  }
  Rng rng(seed);
  ModelParameters p;
  p.config = config;
  const std::size_t q = config.query_dim(), v = config.feature_dim;

  p.word_embeddings = uniform({config.vocab_size, config.word_dim}, 0.1, rng);
  std::fill_n(p.word_embeddings.row(0), config.word_dim, 0.0);
  if (vocab && glove) {
    for (std::size_t i = 2; i < vocab->size(); ++i) {
      if (const auto* vec = glove->find(vocab->words()[i])) {
        std::copy(vec->begin(), vec->end(), p.word_embeddings.row(i));
      }
    }
  }
  p.gru_forward = init_gru(config.word_dim, config.hidden, rng);
  p.gru_backward = init_gru(config.word_dim, config.hidden, rng);
  p.feature_projection = {Array(Shape{v, v}), Array(Shape{v})};
  for (std::size_t i = 0; i < v; ++i) p.feature_projection.weight.at(i, i) = 1.0;
  p.mlp_a1 = init_linear(v, q, rng);
  p.mlp_a2 = init_linear(q, q, rng);
  p.fc_s_weight = uniform({2 * q}, 1.0 / std::sqrt(static_cast<double>(2 * q)), rng);
  p.fc_s_bias = Array(Shape{1});
  p.mlp_b1 = init_linear(v, q, rng);
  p.mlp_b2 = init_linear(q, q, rng);
  p.fc_r_weight = uniform({q}, 1.0 / std::sqrt(static_cast<double>(q)), rng);
  p.fc_r_bias = Array(Shape{1});
  return p;
}

BoundModel bind(ad::Graph& g, const ModelParameters& params, bool trainable) {
  std::vector<Var> leaves;
  for (const auto& e : params.entries()) {
    leaves.push_back(trainable ? g.leaf_ref(*e.array) : g.constant_ref(*e.array));
  }
  return bind_vars(g, params.config, std::move(leaves));
}

BoundModel bind_vars(ad::Graph& g, const ModelConfig& config, std::vector<Var> leaves) {
  if (leaves.size() != kParameterTensorCount) {
    throw ShapeError("bind_vars: expected " + std::to_string(kParameterTensorCount) + " tensors, got " +
                     std::to_string(leaves.size()));
  }
  BoundModel m;
  m.graph = &g;
  m.config = &config;
  m.leaves = std::move(leaves);
  const auto& L = m.leaves;
  m.embeddings = L[0];
  m.gru_forward = bind_gru(L, 1);
  m.gru_backward = bind_gru(L, 10);
  m.proj_w = L[19];
  m.proj_b = L[20];
  m.a1_w = L[21];
  m.a1_b = L[22];
  m.a2_w = L[23];
  m.a2_b = L[24];
  m.fc_s_w = L[25];
  m.fc_s_b = L[26];
  m.b1_w = L[27];
  m.b1_b = L[28];
  m.b2_w = L[29];
  m.b2_b = L[30];
  m.fc_r_w = L[31];
  m.fc_r_b = L[32];
  return m;
}

Var encode_expression(const BoundModel& m, std::span<const int> tokens) {
  if (tokens.empty()) throw InvalidArgument("encode_expression: empty token sequence");
  ad::Graph& g = *m.graph;
  const std::size_t vocab = m.config->vocab_size;
  std::vector<std::size_t> idx;
  for (int t : tokens) {
    if (t < 0 || static_cast<std::size_t>(t) >= vocab) {
      throw InvalidArgument("token index " + std::to_string(t) + " outside vocabulary");
    }
    idx.push_back(static_cast<std::size_t>(t));
  }
  const Var x = ad::gather(m.embeddings, idx);
  const std::size_t n = idx.size();
  const Var h0 = g.constant(Array(Shape{m.config->hidden}));

  std::vector<Var> fwd;
  Var h = h0;
  for (std::size_t t = 0; t < n; ++t) {
    h = ad::gru_cell(ad::row(x, t), h, m.gru_forward);
    fwd.push_back(h);
  }
  std::vector<Var> bwd(n);
  h = h0;
  for (std::size_t t = n; t-- > 0;) {
    h = ad::gru_cell(ad::row(x, t), h, m.gru_backward);
    bwd[t] = h;
  }
  const Var halves[] = {ad::stack_rows(fwd), ad::stack_rows(bwd)};
  return ad::concat(halves, 1);
}

AttentionVars attend(const BoundModel& m, Var features, Var words) {
  const std::size_t q = m.config->query_dim();
  if (words.value().rank() != 2 || words.value().cols() != q) {
    throw ShapeError("attend: word features have shape " + ad::shape_str(words.shape()));
  }
  AttentionVars out;
  out.v_a = linear(ad::relu(linear(features, m.a1_w, m.a1_b)), m.a2_w, m.a2_b);
  // FC_s over [v_a; w_j] splits into a box term and a word term.
  const Var box_term = ad::matmul(out.v_a, ad::slice(m.fc_s_w, 0, q));
  const Var word_term = ad::matmul(words, ad::slice(m.fc_s_w, q, 2 * q));
  out.logits = ad::add_outer(add_scalar_bias(box_term, m.fc_s_b), word_term);
  out.alpha = ad::softmax(out.logits, 1);
  out.q_attn = ad::matmul(out.alpha, words);
  return out;
}

RelateVars relate(const BoundModel& m, Var features, Var q_attn) {
  RelateVars out;
  out.v_b = linear(ad::relu(linear(features, m.b1_w, m.b1_b)), m.b2_w, m.b2_b);
  out.fused = ad::l2_normalize(ad::mul(out.v_b, q_attn), 1);
  out.r_hat = add_scalar_bias(ad::matmul(out.fused, m.fc_r_w), m.fc_r_b);
  out.r = ad::sigmoid(out.r_hat);
  return out;
}

ForwardVars forward(const BoundModel& m, std::span<const int> tokens, Var raw_features) {
  const auto& f = raw_features.value();
  if (f.rank() != 2 || f.cols() != m.config->feature_dim) {
    throw ShapeError("forward: features have shape " + ad::shape_str(f.shape) + ", expected (B," +
                     std::to_string(m.config->feature_dim) + ")");
  }
  ForwardVars out;
  out.words = encode_expression(m, tokens);
  out.projected = linear(raw_features, m.proj_w, m.proj_b);
  out.attention = attend(m, out.projected, out.words);
  out.relatedness = relate(m, out.projected, out.attention.q_attn);
  return out;
}

Array feature_matrix(std::span<const DetectionRecord* const> boxes, std::size_t feature_dim) {
  Array a(Shape{boxes.size(), feature_dim});
  for (std::size_t i = 0; i < boxes.size(); ++i) {
    if (boxes[i]->feature.size() != feature_dim) {
      throw ShapeError("box feature length " + std::to_string(boxes[i]->feature.size()) + " != " +
                       std::to_string(feature_dim));
    }
    std::copy(boxes[i]->feature.begin(), boxes[i]->feature.end(), a.row(i));
  }
  return a;
}

std::vector<double> predict_relatedness(const ModelParameters& params, std::span<const int> tokens,
                                        const Array& features) {
  if (features.rank() == 2 && features.rows() == 0) return {};
  ad::Graph g(false);
  const BoundModel m = bind(g, params, false);
  const ForwardVars f = forward(m, tokens, g.constant_ref(features));
  return f.relatedness.r.value().data;
}

std::vector<double> ModelScorer::score(std::span<const int> tokens,
                                       std::span<const DetectionRecord* const> boxes) const {
  return predict_relatedness(params_, tokens, feature_matrix(boxes, params_.config.feature_dim));
}

std::vector<const DetectionRecord*> confidence_survivors(const ImageDetections& image, double delta) {
  std::vector<const DetectionRecord*> out;
  for (const auto& r : image.records) {
    if (r.confidence >= delta) out.push_back(&r);
  }
  return out;
}

std::vector<ScoredProposal> score_boxes(const ImageDetections& image, std::span<const int> tokens,
                                        const RelatednessScorer& scorer, double delta) {
  std::vector<std::size_t> source;
  std::vector<const DetectionRecord*> kept;
  for (std::size_t i = 0; i < image.records.size(); ++i) {
    if (image.records[i].confidence >= delta) {
      kept.push_back(&image.records[i]);
      source.push_back(i);
    }
  }
  std::vector<ScoredProposal> out;
  if (kept.empty()) return out;
  const std::vector<double> r = scorer.score(tokens, kept);
  if (r.size() != kept.size()) throw ShapeError("scorer returned the wrong number of scores");
  out.reserve(kept.size());
  for (std::size_t i = 0; i < kept.size(); ++i) {
    ScoredProposal p;
    p.box = kept[i]->box;
    p.category_id = kept[i]->category_id;
    p.confidence = kept[i]->confidence;
    p.relatedness = r[i];
    p.fused = r[i] * kept[i]->confidence;
    p.source_index = source[i];
    out.push_back(p);
  }
  return out;
}

}  // namespace refnms
