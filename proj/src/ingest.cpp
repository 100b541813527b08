#include "refnms/ingest.hpp"

#include <algorithm>
#include <cctype>
#include <charconv>
#include <iostream>
#include <map>
#include <sstream>

#include "refnms/errors.hpp"
#include "text_util.hpp"

namespace refnms {

using detail::parse_double;
using detail::parse_int;
using detail::split_char;
using detail::split_lines;
using detail::split_ws;

namespace {

constexpr std::string_view kDumpMagic = "#refnms-dets v1";

std::string lower(std::string_view s) {
  std::string out(s);
  for (char& c : out) c = static_cast<char>(std::tolower(static_cast<unsigned char>(c)));
  return out;
}

std::string upper(std::string_view s) {
  std::string out(s);
  for (char& c : out) c = static_cast<char>(std::toupper(static_cast<unsigned char>(c)));
  return out;
}

Box parse_box(std::string_view field, std::size_t line) {
  const auto parts = split_ws(field);
  if (parts.size() != 4) throw ParseError("box needs 4 coordinates", line);
  Box b{parse_double(parts[0], "x1", line), parse_double(parts[1], "y1", line),
        parse_double(parts[2], "x2", line), parse_double(parts[3], "y2", line)};
  if (!b.valid()) throw RangeError("box has x2 < x1 or y2 < y1 (line " + std::to_string(line) + ")");
  return b;
}

void append_box(std::string& out, const Box& b) {
  out += format_double(b.x1);
  out += ' ';
  out += format_double(b.y1);
  out += ' ';
  out += format_double(b.x2);
  out += ' ';
  out += format_double(b.y2);
}

bool skippable(std::string_view line) { return detail::trim(line).empty(); }

}  // namespace

std::string format_double(double v) {
  char buf[64];
  const auto [ptr, ec] = std::to_chars(buf, buf + sizeof(buf), v);
  return std::string(buf, ptr);
}

const ImageDetections* DetectionDump::find(std::string_view image_id) const {
  for (const auto& img : images) {
    if (img.image_id == image_id) return &img;
  }
  return nullptr;
}

std::string_view split_name(Split s) {
  switch (s) {
    case Split::kTrain: return "train";
    case Split::kVal: return "val";
    case Split::kTestA: return "testA";
    case Split::kTestB: return "testB";
    case Split::kTest: return "test";
  }
  return "train";
}

Split parse_split(std::string_view name) {
  for (Split s : {Split::kTrain, Split::kVal, Split::kTestA, Split::kTestB, Split::kTest}) {
    if (split_name(s) == name) return s;
  }
  throw ParseError("unknown split '" + std::string(name) + "'");
}

// ---- detections -----------------------------------------------------------

DetectionDump parse_detection_dump(std::string_view text) {
  const auto lines = split_lines(text);
  if (lines.empty()) throw ParseError("missing detection dump header", 1);
  const std::string_view header = lines[0];
  if (header.substr(0, kDumpMagic.size()) != kDumpMagic) {
    throw ParseError("expected '#refnms-dets v1' header", 1);
  }
  const auto pos = header.find("feature_dim=");
  if (pos == std::string_view::npos) throw ParseError("header lacks feature_dim", 1);
  const long long dim = parse_int(detail::trim(header.substr(pos + 12)), "feature_dim", 1);
  if (dim < 0) throw ParseError("negative feature_dim", 1);

  DetectionDump dump;
  dump.feature_dim = static_cast<std::size_t>(dim);
  std::map<std::string, std::size_t, std::less<>> slot;
  for (std::size_t li = 1; li < lines.size(); ++li) {
    const std::size_t line_no = li + 1;
    if (skippable(lines[li])) continue;
    const auto fields = split_char(lines[li], '\t');
    if (fields.size() != 6) {
      throw ParseError("detection record needs 6 TAB-separated fields, got " +
                           std::to_string(fields.size()),
                       line_no);
    }
    if (fields[0].empty()) throw ParseError("empty image_id", line_no);
    DetectionRecord rec;
    rec.box = parse_box(fields[1], line_no);
    rec.category_id = static_cast<int>(parse_int(fields[2], "category_id", line_no));
    rec.category_name = std::string(fields[3]);
    rec.confidence = parse_double(fields[4], "confidence", line_no);
    if (rec.confidence < 0.0 || rec.confidence > 1.0) {
      throw RangeError("confidence " + std::string(fields[4]) + " outside [0,1] (line " +
                       std::to_string(line_no) + ")");
    }
    const auto feats = split_ws(fields[5]);
    if (feats.size() != dump.feature_dim) {
      throw SchemaError("feature length " + std::to_string(feats.size()) + " != feature_dim " +
                        std::to_string(dump.feature_dim) + " (line " + std::to_string(line_no) + ")");
    }
    rec.feature.reserve(feats.size());
    for (auto f : feats) rec.feature.push_back(parse_double(f, "feature", line_no));

    auto it = slot.find(fields[0]);
    if (it == slot.end()) {
      it = slot.emplace(std::string(fields[0]), dump.images.size()).first;
      dump.images.push_back({std::string(fields[0]), {}});
    }
    dump.images[it->second].records.push_back(std::move(rec));
  }
  return dump;
}

DetectionDump load_detection_dump(const std::filesystem::path& path) {
  return parse_detection_dump(detail::read_file(path));
}

void write_detection_dump(const DetectionDump& dump, const std::filesystem::path& path) {
  std::string out;
  out += kDumpMagic;
  out += " feature_dim=" + std::to_string(dump.feature_dim) + "\n";
  for (const auto& img : dump.images) {
    for (const auto& rec : img.records) {
      if (rec.feature.size() != dump.feature_dim) {
        throw SchemaError("record feature length does not match feature_dim");
      }
      out += img.image_id;
      out += '\t';
      append_box(out, rec.box);
      out += '\t' + std::to_string(rec.category_id) + '\t' + rec.category_name + '\t';
      out += format_double(rec.confidence);
      out += '\t';
      for (std::size_t i = 0; i < rec.feature.size(); ++i) {
        if (i) out += ' ';
        out += format_double(rec.feature[i]);
      }
      out += '\n';
    }
  }
  detail::write_file(path, out);
}

// ---- expressions ----------------------------------------------------------

std::vector<ExpressionRecord> parse_expressions(std::string_view text) {
  std::vector<ExpressionRecord> out;
  const auto lines = split_lines(text);
  for (std::size_t li = 0; li < lines.size(); ++li) {
    const std::size_t line_no = li + 1;
    if (skippable(lines[li])) continue;
    const auto fields = split_char(lines[li], '\t');
    if (fields.size() != 5 && fields.size() != 6) {
      throw ParseError("expression record needs 5 or 6 TAB-separated fields", line_no);
    }
    ExpressionRecord e;
    e.expression_id = std::string(fields[0]);
    e.image_id = std::string(fields[1]);
    if (e.expression_id.empty() || e.image_id.empty()) throw ParseError("empty id", line_no);
    try {
      e.split = parse_split(fields[2]);
    } catch (const ParseError&) {
      throw ParseError("unknown split '" + std::string(fields[2]) + "'", line_no);
    }
    e.referent_box = parse_box(fields[3], line_no);
    for (auto t : split_ws(fields[4])) e.tokens.push_back(lower(t));
    if (e.tokens.empty()) throw ParseError("expression has no tokens", line_no);
    if (fields.size() == 6) {
      for (auto t : split_ws(fields[5])) e.pos_tags.push_back(upper(t));
      if (!e.pos_tags.empty() && e.pos_tags.size() != e.tokens.size()) {
        throw SchemaError("pos tag count does not match token count (line " +
                          std::to_string(line_no) + ")");
      }
    }
    out.push_back(std::move(e));
  }
  return out;
}

std::vector<ExpressionRecord> load_expressions(const std::filesystem::path& path) {
  return parse_expressions(detail::read_file(path));
}

void write_expressions(std::span<const ExpressionRecord> exprs, const std::filesystem::path& path) {
  std::string out;
  for (const auto& e : exprs) {
    out += e.expression_id + '\t' + e.image_id + '\t' + std::string(split_name(e.split)) + '\t';
    append_box(out, e.referent_box);
    out += '\t';
    for (std::size_t i = 0; i < e.tokens.size(); ++i) {
      if (i) out += ' ';
      out += e.tokens[i];
    }
    if (!e.pos_tags.empty()) {
      out += '\t';
      for (std::size_t i = 0; i < e.pos_tags.size(); ++i) {
        if (i) out += ' ';
        out += e.pos_tags[i];
      }
    }
    out += '\n';
  }
  detail::write_file(path, out);
}

// ---- regions --------------------------------------------------------------

std::vector<GroundTruthRegion> parse_regions(std::string_view text) {
  std::vector<GroundTruthRegion> out;
  const auto lines = split_lines(text);
  for (std::size_t li = 0; li < lines.size(); ++li) {
    const std::size_t line_no = li + 1;
    if (skippable(lines[li])) continue;
    const auto fields = split_char(lines[li], '\t');
    if (fields.size() != 4) throw ParseError("region record needs 4 TAB-separated fields", line_no);
    GroundTruthRegion r;
    r.region_id = std::string(fields[0]);
    r.image_id = std::string(fields[1]);
    r.box = parse_box(fields[2], line_no);
    r.category_name = std::string(detail::trim(fields[3]));
    if (r.region_id.empty() || r.image_id.empty() || r.category_name.empty()) {
      throw ParseError("empty region field", line_no);
    }
    out.push_back(std::move(r));
  }
  return out;
}

std::vector<GroundTruthRegion> load_regions(const std::filesystem::path& path) {
  return parse_regions(detail::read_file(path));
}

void write_regions(std::span<const GroundTruthRegion> regions, const std::filesystem::path& path) {
  std::string out;
  for (const auto& r : regions) {
    out += r.region_id + '\t' + r.image_id + '\t';
    append_box(out, r.box);
    out += '\t' + r.category_name + '\n';
  }
  detail::write_file(path, out);
}

// ---- embeddings -----------------------------------------------------------

void EmbeddingTable::insert(std::string word, std::vector<double> vec) {
  if (vec.size() != dimension_) {
    throw SchemaError("embedding for '" + word + "' has length " + std::to_string(vec.size()) +
                      ", table dimension is " + std::to_string(dimension_));
  }
  auto it = entries_.find(word);
  if (it == entries_.end()) {
    order_.push_back(word);
    entries_.emplace(std::move(word), std::move(vec));
  } else {
    it->second = std::move(vec);
  }
}

const std::vector<double>* EmbeddingTable::find(std::string_view word) const {
  const auto it = entries_.find(std::string(word));
  return it == entries_.end() ? nullptr : &it->second;
}

EmbeddingTable parse_embeddings(std::string_view text) {
  EmbeddingTable table;
  bool have_dim = false;
  const auto lines = split_lines(text);
  for (std::size_t li = 0; li < lines.size(); ++li) {
    const std::size_t line_no = li + 1;
    if (skippable(lines[li])) continue;
    const auto parts = split_ws(lines[li]);
    if (parts.size() < 2) throw ParseError("embedding line needs a word and values", line_no);
    const std::size_t dim = parts.size() - 1;
    if (!have_dim) {
      table = EmbeddingTable(dim);
      have_dim = true;
    } else if (dim != table.dimension()) {
      throw SchemaError("embedding line " + std::to_string(line_no) + " has " + std::to_string(dim) +
                        " values, expected " + std::to_string(table.dimension()));
    }
    std::vector<double> vec;
    vec.reserve(dim);
    for (std::size_t i = 1; i < parts.size(); ++i) vec.push_back(parse_double(parts[i], "value", line_no));
    std::string word(parts[0]);
    if (table.find(word) != nullptr) {
      std::clog << "warning: duplicate embedding for '" << word << "' at line " << line_no
                << "; keeping the last one\n";
    }
    table.insert(std::move(word), std::move(vec));
  }
  return table;
}

EmbeddingTable load_embeddings(const std::filesystem::path& path) {
  return parse_embeddings(detail::read_file(path));
}

void write_embeddings(const EmbeddingTable& table, const std::filesystem::path& path) {
  std::string out;
  for (const auto& w : table.words()) {
    out += w;
    for (double v : *table.find(w)) {
      out += ' ';
      out += format_double(v);
    }
    out += '\n';
  }
  detail::write_file(path, out);
}

// ---- vocabulary -----------------------------------------------------------

Vocabulary::Vocabulary() : Vocabulary({std::string(kPadToken), std::string(kUnkToken)}, 10) {}

Vocabulary::Vocabulary(std::vector<std::string> words, std::size_t max_sentence_length)
    : words_(std::move(words)), max_len_(max_sentence_length) {
  if (words_.size() < 2 || words_[0] != kPadToken || words_[1] != kUnkToken) {
    throw InvalidArgument("vocabulary must start with <pad>, unk");
  }
  if (max_len_ == 0) throw InvalidArgument("max sentence length must be positive");
  for (std::size_t i = 0; i < words_.size(); ++i) {
    if (!index_.emplace(words_[i], static_cast<int>(i)).second) {
      throw InvalidArgument("duplicate vocabulary word '" + words_[i] + "'");
    }
  }
}

int Vocabulary::index_of(std::string_view word) const {
  const auto it = index_.find(std::string(word));
  return it == index_.end() ? kUnk : it->second;
}

bool Vocabulary::contains(std::string_view word) const {
  return index_.count(std::string(word)) != 0;
}

Vocabulary build_vocabulary(std::span<const ExpressionRecord> train_expressions, std::size_t max_len) {
  if (train_expressions.empty()) throw InvalidArgument("cannot build a vocabulary from no expressions");
  std::map<std::string, std::size_t> counts;
  for (const auto& e : train_expressions) {
    for (const auto& t : e.tokens) ++counts[t];
  }
  std::vector<std::pair<std::string, std::size_t>> kept;
  for (auto& [w, c] : counts) {
    if (c >= 2 && w != Vocabulary::kUnkToken && w != Vocabulary::kPadToken) kept.emplace_back(w, c);
  }
  std::stable_sort(kept.begin(), kept.end(),
                   [](const auto& a, const auto& b) { return a.second > b.second; });
  std::vector<std::string> words{std::string(Vocabulary::kPadToken), std::string(Vocabulary::kUnkToken)};
  for (auto& [w, c] : kept) words.push_back(w);
  return Vocabulary(std::move(words), max_len);
}

std::vector<int> encode_tokens(std::span<const std::string> tokens, const Vocabulary& vocab) {
  if (tokens.empty()) throw InvalidArgument("cannot encode an empty token list");
  const std::size_t n = std::min(tokens.size(), vocab.max_sentence_length());
  std::vector<int> out;
  out.reserve(n);
  for (std::size_t i = 0; i < n; ++i) out.push_back(vocab.index_of(tokens[i]));
  return out;
}

}  // namespace refnms
