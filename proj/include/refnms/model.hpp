#pragma once

// Relatedness module: a bidirectional GRU encodes the expression, each box
// attends over the word features, and a fused box/expression vector is mapped
// to a relatedness probability. The final score fed to NMS is r * c.

#include <cstddef>
#include <cstdint>
#include <memory>
#include <span>
#include <string>
#include <vector>

#include "refnms/autodiff.hpp"
#include "refnms/ingest.hpp"

namespace refnms {

struct ModelConfig {
  std::size_t vocab_size = 2;
  std::size_t word_dim = 300;
  std::size_t hidden = 256;  // per GRU direction
  std::size_t feature_dim = 0;

  // Word feature width: both GRU directions concatenated.
  std::size_t query_dim() const { return 2 * hidden; }

  friend bool operator==(const ModelConfig&, const ModelConfig&) = default;
};

// Learning-rate group. The head group is the feature projection standing in
// for the detector head; everything else is the rest of the network.
enum class ParamGroup { kHead, kRest };

struct GruWeights {
  ad::Array w_z, w_r, w_h;
  ad::Array u_z, u_r, u_h;
  ad::Array b_z, b_r, b_h;
};

struct LinearWeights {
  ad::Array weight;  // (out, in)
  ad::Array bias;    // (out)
};

struct ModelParameters {
  ModelConfig config;
  ad::Array word_embeddings;  // (vocab, word_dim); row 0 is padding
  GruWeights gru_forward;
  GruWeights gru_backward;
  LinearWeights feature_projection;  // v -> v, identity at init
  LinearWeights mlp_a1, mlp_a2;      // v -> q -> q
  ad::Array fc_s_weight;             // (2q): [box part; word part]
  ad::Array fc_s_bias;               // (1)
  LinearWeights mlp_b1, mlp_b2;      // v -> q -> q
  ad::Array fc_r_weight;             // (q)
  ad::Array fc_r_bias;               // (1)

  struct Entry {
    std::string name;
    ad::Array* array;
    ParamGroup group;
  };
  struct ConstEntry {
    std::string name;
    const ad::Array* array;
    ParamGroup group;
  };
  // Stable order; checkpoints and the optimizer rely on it.
  std::vector<Entry> entries();
  std::vector<ConstEntry> entries() const;
  std::size_t parameter_count() const;

  // Throws ShapeError when any tensor disagrees with config.
  void validate() const;
};

// Seeded initialization. GRU weights ~ U(-1/sqrt(h), 1/sqrt(h)), linear
// weights ~ U(-1/sqrt(in), 1/sqrt(in)), biases 0, feature projection = I.
// Embedding rows come from `glove` where the word is present, otherwise
// U(-0.1, 0.1); the padding row is zero.
ModelParameters init_parameters(const ModelConfig& config, std::uint64_t seed,
                                const Vocabulary* vocab = nullptr,
                                const EmbeddingTable* glove = nullptr);

// Parameters registered as leaves of one graph.
struct BoundModel {
  ad::Graph* graph = nullptr;
  const ModelConfig* config = nullptr;
  ad::Var embeddings;
  ad::GruParams gru_forward, gru_backward;
  ad::Var proj_w, proj_b;
  ad::Var a1_w, a1_b, a2_w, a2_b;
  ad::Var fc_s_w, fc_s_b;
  ad::Var b1_w, b1_b, b2_w, b2_b;
  ad::Var fc_r_w, fc_r_b;

  // Leaves in ModelParameters::entries() order.
  std::vector<ad::Var> leaves;
};

inline constexpr std::size_t kParameterTensorCount = 33;

// trainable=false binds parameters as constants.
BoundModel bind(ad::Graph& g, const ModelParameters& params, bool trainable);
// Binds caller-made variables given in ModelParameters::entries() order.
// `config` must outlive the result.
BoundModel bind_vars(ad::Graph& g, const ModelConfig& config, std::vector<ad::Var> leaves);

// (|Q|, q) word features; row j = [forward state j ; backward state j].
ad::Var encode_expression(const BoundModel& m, std::span<const int> tokens);

struct AttentionVars {
  ad::Var v_a;     // (B, q)
  ad::Var logits;  // (B, |Q|)
  ad::Var alpha;   // (B, |Q|), rows sum to 1
  ad::Var q_attn;  // (B, q)
};

// `features` are projected box features (B, v).
AttentionVars attend(const BoundModel& m, ad::Var features, ad::Var words);

struct RelateVars {
  ad::Var v_b;    // (B, q)
  ad::Var fused;  // (B, q), unit rows
  ad::Var r_hat;  // (B)
  ad::Var r;      // (B)
};

RelateVars relate(const BoundModel& m, ad::Var features, ad::Var q_attn);

struct ForwardVars {
  ad::Var words;
  ad::Var projected;
  AttentionVars attention;
  RelateVars relatedness;
};

// Full forward pass for one expression over B boxes; raw_features is (B, v).
ForwardVars forward(const BoundModel& m, std::span<const int> tokens, ad::Var raw_features);

// Stacks box features into a (B, v) array.
ad::Array feature_matrix(std::span<const DetectionRecord* const> boxes, std::size_t feature_dim);

// Inference without recording a tape.
std::vector<double> predict_relatedness(const ModelParameters& params, std::span<const int> tokens,
                                        const ad::Array& features);

// Source of relatedness scores for the filtering pipeline.
class RelatednessScorer {
 public:
  virtual ~RelatednessScorer() = default;
  virtual std::vector<double> score(std::span<const int> tokens,
                                    std::span<const DetectionRecord* const> boxes) const = 0;
};

class ModelScorer final : public RelatednessScorer {
 public:
  explicit ModelScorer(const ModelParameters& params) : params_(params) {}
  std::vector<double> score(std::span<const int> tokens,
                            std::span<const DetectionRecord* const> boxes) const override;

 private:
  const ModelParameters& params_;
};

// r = k for every box.
class ConstantScorer final : public RelatednessScorer {
 public:
  explicit ConstantScorer(double k) : k_(k) {}
  std::vector<double> score(std::span<const int>,
                            std::span<const DetectionRecord* const> boxes) const override {
    return std::vector<double>(boxes.size(), k_);
  }

 private:
  double k_;
};

struct ScoredProposal {
  Box box;
  int category_id = 0;
  double confidence = 0.0;
  double relatedness = 0.0;
  double fused = 0.0;  // relatedness * confidence
  std::size_t source_index = 0;  // index into the image's records
};

// Drops boxes with confidence < delta, scores the rest, keeps input order.
std::vector<ScoredProposal> score_boxes(const ImageDetections& image, std::span<const int> tokens,
                                        const RelatednessScorer& scorer, double delta = 0.05);

// Records with confidence >= delta, in input order.
std::vector<const DetectionRecord*> confidence_survivors(const ImageDetections& image, double delta);

}  // namespace refnms
