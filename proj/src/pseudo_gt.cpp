#include "refnms/pseudo_gt.hpp"

#include <algorithm>
#include <array>
#include <cctype>
#include <cmath>
#include <map>

#include "refnms/simd/kernels.hpp"
#include "text_util.hpp"

namespace refnms {

namespace {

// Must stay sorted for binary_search.
constexpr std::array<std::string_view, 112> kStopwords = {
    "a", "about", "above", "across", "after", "against", "all", "along",
    "am", "among", "an", "and", "another", "any", "are", "around",
    "as", "at", "back", "be", "behind", "being", "below", "beside",
    "besides", "between", "big", "black", "blue", "both", "bottom", "brown",
    "but", "by", "center", "closest", "dark", "down", "each", "far",
    "farthest", "first", "for", "from", "front", "furthest", "gray", "green",
    "grey", "has", "have", "he", "her", "his", "holding", "in",
    "inside", "into", "is", "it", "its", "large", "last", "left",
    "leftmost", "light", "little", "looking", "lower", "middle", "near", "nearest",
    "next", "of", "off", "on", "one", "or", "orange", "other",
    "out", "over", "pink", "purple", "red", "right", "rightmost", "second",
    "she", "sitting", "small", "standing", "that", "the", "their", "them",
    "these", "they", "third", "this", "those", "to", "top", "under",
    "up", "upper", "wearing", "white", "who", "with", "yellow", "you",
};

bool is_numeric(std::string_view t) {
  if (t.empty()) return false;
  return std::all_of(t.begin(), t.end(), [](char c) {
    return std::isdigit(static_cast<unsigned char>(c)) || c == '.' || c == ',';
  });
}

double norm(const std::vector<double>& v) { return std::sqrt(simd::dot(v.data(), v.data(), v.size())); }

}  // namespace

std::span<const std::string_view> noun_stopwords() { return kStopwords; }

std::vector<std::string> extract_nouns(std::span<const std::string> tokens,
                                       std::span<const std::string> pos_tags) {
  std::vector<std::string> nouns;
  if (!pos_tags.empty()) {
    const std::size_t n = std::min(tokens.size(), pos_tags.size());
    for (std::size_t i = 0; i < n; ++i) {
      if (pos_tags[i] == "NOUN" || pos_tags[i] == "PROPN") nouns.push_back(tokens[i]);
    }
    return nouns;
  }
  for (const auto& t : tokens) {
    if (is_numeric(t)) continue;
    if (std::binary_search(kStopwords.begin(), kStopwords.end(), std::string_view(t))) continue;
    nouns.push_back(t);
  }
  return nouns;
}

double category_similarity(std::string_view noun, std::string_view category_name,
                           const EmbeddingTable& table) {
  const auto* nv = table.find(noun);
  if (nv == nullptr) return -1.0;
  const auto words = detail::split_ws(category_name);
  if (words.empty()) return -1.0;
  std::vector<double> cat(table.dimension(), 0.0);
  for (auto w : words) {
    const auto* wv = table.find(w);
    if (wv == nullptr) return -1.0;
    simd::axpy(1.0, wv->data(), cat.data(), cat.size());
  }
  for (double& x : cat) x /= static_cast<double>(words.size());
  const double nn = norm(*nv);
  const double nc = norm(cat);
  if (nn == 0.0 || nc == 0.0) return -1.0;
  const double c = simd::dot(nv->data(), cat.data(), cat.size()) / (nn * nc);
  return std::clamp(c, -1.0, 1.0);
}

PseudoGtSet generate_pseudo_gt(const ExpressionRecord& expr,
                               std::span<const GroundTruthRegion> regions,
                               const EmbeddingTable& table, double gamma) {
  PseudoGtSet out;
  out.expression_id = expr.expression_id;
  out.referent_included = true;
  const auto nouns = extract_nouns(expr.tokens, expr.pos_tags);
  if (nouns.empty()) return out;
  std::map<std::string, double> best_by_category;
  for (const auto& r : regions) {
    if (r.image_id != expr.image_id) continue;
    auto it = best_by_category.find(r.category_name);
    if (it == best_by_category.end()) {
      double best = -1.0;
      for (const auto& n : nouns) best = std::max(best, category_similarity(n, r.category_name, table));
      it = best_by_category.emplace(r.category_name, best).first;
    }
    if (it->second >= gamma) out.region_ids.insert(r.region_id);
  }
  return out;
}

}  // namespace refnms
