#pragma once

#include <set>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "refnms/ingest.hpp"

namespace refnms {

// Regions promoted to contextual-object targets for one expression. The
// annotated referent box is always foreground on top of these.
struct PseudoGtSet {
  std::string expression_id;
  std::set<std::string> region_ids;
  bool referent_included = true;
};

// Function words dropped by the untagged noun heuristic: articles,
// determiners, pronouns, prepositions, conjunctions, auxiliaries, spatial and
// ordinal modifiers, colours and common relation verbs ("holding",
// "wearing", ...). Sorted; see pseudo_gt.cpp for the full list.
std::span<const std::string_view> noun_stopwords();

// With tags: tokens tagged NOUN or PROPN. Without tags: tokens not in
// noun_stopwords() and not purely numeric. Order and duplicates preserved.
std::vector<std::string> extract_nouns(std::span<const std::string> tokens,
                                       std::span<const std::string> pos_tags);

// Cosine between the noun vector and the category vector (mean of the word
// vectors of a multi-word name). Returns -1 when any word is missing from the
// table or either vector has zero norm.
double category_similarity(std::string_view noun, std::string_view category_name,
                           const EmbeddingTable& table);

// A region is kept when some noun reaches similarity >= gamma with its
// category. Regions of other images are ignored.
PseudoGtSet generate_pseudo_gt(const ExpressionRecord& expr,
                               std::span<const GroundTruthRegion> regions,
                               const EmbeddingTable& table, double gamma = 0.4);

}  // namespace refnms
