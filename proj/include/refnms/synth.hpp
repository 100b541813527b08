#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "refnms/ingest.hpp"

namespace refnms {

// Desk-scale stand-in for detector dumps over annotated images. Each
// detection's feature is the one-hot of its category plus Gaussian noise, and
// category words get orthogonal unit embeddings, so relatedness is learnable
// from features alone.
struct SynthConfig {
  std::size_t train_images = 200;
  std::size_t eval_images = 50;
  std::size_t categories = 8;
  std::size_t boxes_per_image = 20;
  double noise = 0.1;
  std::uint64_t seed = 7;
  std::size_t expressions_per_image = 2;
  std::size_t embedding_dim = 300;
  double image_width = 640.0;
  double image_height = 480.0;
};

struct SynthDataset {
  DetectionDump detections;
  std::vector<ExpressionRecord> expressions;
  std::vector<GroundTruthRegion> regions;
  EmbeddingTable embeddings;
};

// Category names for ids 0..n-1.
std::vector<std::string> synth_category_names(std::size_t n);

// Throws InvalidArgument when a count is zero or the embedding dimension is
// too small to keep every word orthogonal.
SynthDataset generate_synthetic(const SynthConfig& cfg);

struct SynthPaths {
  std::filesystem::path detections;
  std::filesystem::path expressions;
  std::filesystem::path regions;
  std::filesystem::path embeddings;
};

// detections.tsv, expressions.tsv, regions.tsv, embeddings.txt under dir.
SynthPaths synth_paths(const std::filesystem::path& dir);
SynthPaths write_synthetic(const SynthDataset& data, const std::filesystem::path& dir);

}  // namespace refnms
