#pragma once

#include <cstddef>
#include <filesystem>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <unordered_map>
#include <vector>

#include "refnms/geometry.hpp"

namespace refnms {

// One detector output: box, class, confidence in [0,1] and the pooled region
// feature after the detector head.
struct DetectionRecord {
  Box box;
  int category_id = 0;
  std::string category_name;
  double confidence = 0.0;
  std::vector<double> feature;

  friend bool operator==(const DetectionRecord&, const DetectionRecord&) = default;
};

struct ImageDetections {
  std::string image_id;
  std::vector<DetectionRecord> records;

  friend bool operator==(const ImageDetections&, const ImageDetections&) = default;
};

struct DetectionDump {
  std::size_t feature_dim = 0;
  std::vector<ImageDetections> images;

  const ImageDetections* find(std::string_view image_id) const;
};

enum class Split { kTrain, kVal, kTestA, kTestB, kTest };

std::string_view split_name(Split s);
// Throws ParseError for unknown names.
Split parse_split(std::string_view name);

struct ExpressionRecord {
  std::string expression_id;
  std::string image_id;
  Split split = Split::kTrain;
  Box referent_box;
  std::vector<std::string> tokens;
  // Empty when the source carried no tags; otherwise aligned with tokens.
  std::vector<std::string> pos_tags;

  friend bool operator==(const ExpressionRecord&, const ExpressionRecord&) = default;
};

struct GroundTruthRegion {
  std::string region_id;
  std::string image_id;
  Box box;
  std::string category_name;

  friend bool operator==(const GroundTruthRegion&, const GroundTruthRegion&) = default;
};

class EmbeddingTable {
 public:
  EmbeddingTable() = default;
  explicit EmbeddingTable(std::size_t dimension) : dimension_(dimension) {}

  std::size_t dimension() const { return dimension_; }
  std::size_t size() const { return entries_.size(); }

  // Replaces an existing entry. Throws SchemaError on a length mismatch.
  void insert(std::string word, std::vector<double> vec);

  // nullptr when the word is absent.
  const std::vector<double>* find(std::string_view word) const;

  // Words in insertion order of first appearance.
  const std::vector<std::string>& words() const { return order_; }

 private:
  std::size_t dimension_ = 0;
  std::unordered_map<std::string, std::vector<double>> entries_;
  std::vector<std::string> order_;
};

class Vocabulary {
 public:
  static constexpr int kPad = 0;
  static constexpr int kUnk = 1;
  static constexpr std::string_view kPadToken = "<pad>";
  static constexpr std::string_view kUnkToken = "unk";

  Vocabulary();
  // words[0] must be the pad token and words[1] the unk token.
  Vocabulary(std::vector<std::string> words, std::size_t max_sentence_length);

  std::size_t size() const { return words_.size(); }
  std::size_t max_sentence_length() const { return max_len_; }
  const std::vector<std::string>& words() const { return words_; }

  // kUnk for unknown words.
  int index_of(std::string_view word) const;
  bool contains(std::string_view word) const;

 private:
  std::vector<std::string> words_;
  std::unordered_map<std::string, int> index_;
  std::size_t max_len_ = 10;
};

// Detection dump: header `#refnms-dets v1 feature_dim=<D>`, then one TAB
// separated record per line (image, box, category id, category name,
// confidence, features). Records of one image are grouped in order of first
// appearance.
DetectionDump load_detection_dump(const std::filesystem::path& path);
DetectionDump parse_detection_dump(std::string_view text);
void write_detection_dump(const DetectionDump& dump, const std::filesystem::path& path);

std::vector<ExpressionRecord> load_expressions(const std::filesystem::path& path);
std::vector<ExpressionRecord> parse_expressions(std::string_view text);
void write_expressions(std::span<const ExpressionRecord> exprs, const std::filesystem::path& path);

std::vector<GroundTruthRegion> load_regions(const std::filesystem::path& path);
std::vector<GroundTruthRegion> parse_regions(std::string_view text);
void write_regions(std::span<const GroundTruthRegion> regions, const std::filesystem::path& path);

// GloVe text format. A repeated word keeps its last vector and logs a warning.
EmbeddingTable load_embeddings(const std::filesystem::path& path);
EmbeddingTable parse_embeddings(std::string_view text);
void write_embeddings(const EmbeddingTable& table, const std::filesystem::path& path);

// Keeps words seen at least twice. Index order: pad, unk, then descending
// count with lexicographic tie-break.
Vocabulary build_vocabulary(std::span<const ExpressionRecord> train_expressions,
                            std::size_t max_len);

// Truncates to the vocabulary's max sentence length; unknown words map to unk.
std::vector<int> encode_tokens(std::span<const std::string> tokens, const Vocabulary& vocab);

// Shortest round-trip decimal form.
std::string format_double(double v);

}  // namespace refnms
