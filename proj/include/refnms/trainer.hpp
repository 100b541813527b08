#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "refnms/autodiff.hpp"
#include "refnms/ingest.hpp"
#include "refnms/model.hpp"
#include "refnms/objectives.hpp"

namespace refnms {

enum class LossKind { kBinaryXe, kRanking };

std::string_view loss_name(LossKind k);
LossKind parse_loss(std::string_view name);  // "xe" | "rank"

struct TrainConfig {
  LossKind loss = LossKind::kBinaryXe;
  std::size_t batch_size = 8;
  double lr_head = 4e-4;  // feature projection
  double lr_rest = 5e-3;  // everything else
  double beta1 = 0.9;
  double beta2 = 0.999;
  double adam_eps = 1e-8;
  std::size_t epochs = 5;
  std::uint64_t seed = 7;
  double delta = 0.05;
  double gamma = 0.4;
  RankingConfig ranking;
  std::size_t max_len = 10;
  std::size_t hidden = 256;
  bool freeze_embeddings = false;
  // Multiply both learning rates by decay_factor every decay_every epochs
  // (0 disables decay).
  std::size_t decay_every = 0;
  double decay_factor = 1.0;

  friend bool operator==(const TrainConfig&, const TrainConfig&) = default;
};

// `key = value` lines, '#' comments. Unknown keys throw ParseError.
TrainConfig parse_train_config(std::string_view text, TrainConfig base = {});
TrainConfig load_train_config(const std::filesystem::path& path, TrainConfig base = {});
std::string format_train_config(const TrainConfig& cfg);
// Throws RangeError for values outside their domain.
void validate_train_config(const TrainConfig& cfg);

struct OptimizerState {
  std::vector<ad::Array> m;
  std::vector<ad::Array> v;
  std::uint64_t step = 0;

  friend bool operator==(const OptimizerState&, const OptimizerState&) = default;
};

OptimizerState init_optimizer(const ModelParameters& params);

// One Adam update with bias correction. Head-group tensors use lr_head, the
// rest lr_rest; frozen embeddings are skipped. A non-finite gradient throws
// NumericError naming the parameter before anything is modified.
void adam_step(ModelParameters& params, std::span<const ad::Array> grads, OptimizerState& state,
               const TrainConfig& cfg, double lr_scale = 1.0);

// One expression with its confidence-filtered boxes and foreground set.
struct TrainingExample {
  std::string expression_id;
  std::vector<int> tokens;
  ad::Array features;  // (B, v)
  std::vector<Box> boxes;
  std::vector<Box> foreground;
};

struct ExampleBuildStats {
  std::size_t used = 0;
  std::size_t skipped_no_image = 0;
  std::size_t skipped_empty = 0;
};

std::vector<TrainingExample> build_training_examples(const DetectionDump& dets,
                                                     std::span<const ExpressionRecord> train_exprs,
                                                     std::span<const GroundTruthRegion> regions,
                                                     const EmbeddingTable& table, const Vocabulary& vocab,
                                                     const TrainConfig& cfg, ExampleBuildStats* stats = nullptr);

struct ExampleLoss {
  double loss = 0.0;
  bool has_gradient = false;
  std::size_t positives = 0;
  std::size_t negatives = 0;
  std::size_t pairs = 0;
};

// Forward + loss + backward for one example; gradients are added into
// `grads` scaled by `weight`.
ExampleLoss accumulate_example(const ModelParameters& params, const TrainingExample& ex,
                               const TrainConfig& cfg, std::vector<ad::Array>& grads, double weight);

struct EpochMetrics {
  std::size_t epoch = 0;
  double mean_loss = 0.0;
  std::size_t positives = 0;
  std::size_t negatives = 0;
  std::size_t skipped = 0;
  std::size_t steps = 0;
};

// One pass over the examples in a seeded per-epoch order, one optimizer step
// per batch.
EpochMetrics train_epoch(std::span<const TrainingExample> examples, ModelParameters& params,
                         OptimizerState& state, const TrainConfig& cfg, std::size_t epoch);

// Model config implied by the data and training config.
ModelConfig model_config_for(const Vocabulary& vocab, const EmbeddingTable& table, std::size_t feature_dim,
                             const TrainConfig& cfg);

// Everything needed to resume training or run inference.
struct Checkpoint {
  TrainConfig train_config;
  Vocabulary vocab;
  ModelParameters params;
  OptimizerState optimizer;
  std::size_t epochs_completed = 0;
  std::uint64_t config_hash = 0;
};

std::uint64_t config_hash(const TrainConfig& cfg, const ModelConfig& model);

// Little-endian binary: magic, version, config hash, config text, model
// dims, vocabulary, named tensors, Adam moments, trailer.
void save_checkpoint(const Checkpoint& ckpt, const std::filesystem::path& path);
// Throws ParseError for corrupt files and ShapeError when tensor shapes
// disagree with the stored dims.
Checkpoint load_checkpoint(const std::filesystem::path& path);
// Throws ShapeError if the checkpoint's feature dimension differs.
void check_feature_dim(const Checkpoint& ckpt, std::size_t feature_dim);
// False, with a warning on stderr, when the stored hash differs.
bool check_config_hash(const Checkpoint& ckpt, const TrainConfig& cfg);

struct TrainingRun {
  Checkpoint checkpoint;
  std::vector<EpochMetrics> history;
  ExampleBuildStats stats;
};

// Builds vocabulary, examples and parameters from the train split and runs
// cfg.epochs epochs.
TrainingRun train_model(const DetectionDump& dets, std::span<const ExpressionRecord> exprs,
                        std::span<const GroundTruthRegion> regions, const EmbeddingTable& table,
                        const TrainConfig& cfg);

// Continues a checkpoint up to `until_epoch` total epochs.
std::vector<EpochMetrics> resume_training(Checkpoint& ckpt, std::span<const TrainingExample> examples,
                                          std::size_t until_epoch);

// Finite-difference check of the whole relatedness model plus loss on a
// random instance. Every parameter tensor and the box features are inputs.
struct ModelGradCheckConfig {
  ModelConfig model{.vocab_size = 12, .word_dim = 6, .hidden = 4, .feature_dim = 5};
  std::size_t boxes = 3;
  std::size_t tokens = 4;
  LossKind loss = LossKind::kBinaryXe;
  std::uint64_t seed = 1;
  ad::GradCheckOptions options;
};

ad::GradCheckResult check_model_gradients(const ModelGradCheckConfig& cfg);

}  // namespace refnms
