#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <string>
#include <vector>

#include "refnms/ingest.hpp"
#include "refnms/pseudo_gt.hpp"
#include "refnms/rng.hpp"

using namespace refnms;

namespace {

std::vector<std::string> toks(std::initializer_list<const char*> l) { return {l.begin(), l.end()}; }

ExpressionRecord expression(std::vector<std::string> tokens, std::vector<std::string> tags = {}) {
  ExpressionRecord e;
  e.expression_id = "e";
  e.image_id = "img";
  e.tokens = std::move(tokens);
  e.pos_tags = std::move(tags);
  return e;
}

GroundTruthRegion region(std::string id, std::string cat) {
  return {std::move(id), "img", {0, 0, 1, 1}, std::move(cat)};
}

}  // namespace

TEST_CASE("extract_nouns with tags") {
  CHECK(extract_nouns(toks({"the", "cat", "on", "a", "towel"}), toks({"DET", "NOUN", "ADP", "DET", "NOUN"})) ==
        toks({"cat", "towel"}));
  CHECK(extract_nouns(toks({"red", "one"}), toks({"ADJ", "NUM"})).empty());
  CHECK(extract_nouns(toks({"john", "runs"}), toks({"PROPN", "VERB"})) == toks({"john"}));
}

TEST_CASE("extract_nouns heuristic fallback") {
  // "holding" is in the shipped function-word list; "man" and "pizza" are not.
  CHECK(extract_nouns(toks({"man", "holding", "pizza"}), {}) == toks({"man", "pizza"}));
  CHECK(extract_nouns(toks({"the", "2", "dogs", "dogs"}), {}) == toks({"dogs", "dogs"}));
  const auto sw = noun_stopwords();
  CHECK(std::is_sorted(sw.begin(), sw.end()));
  CHECK(std::binary_search(sw.begin(), sw.end(), "holding"));
  CHECK_FALSE(std::binary_search(sw.begin(), sw.end(), "man"));
  CHECK_FALSE(std::binary_search(sw.begin(), sw.end(), "pizza"));
}

TEST_CASE("category_similarity") {
  EmbeddingTable t(2);
  t.insert("cat", {1, 0});
  t.insert("dog", {0, 1});
  t.insert("pet", {1, 1});
  t.insert("zero", {0, 0});
  CHECK(category_similarity("cat", "cat", t) == doctest::Approx(1.0));
  CHECK(category_similarity("cat", "dog", t) == doctest::Approx(0.0));
  // mean of (1,0) and (0,1) is parallel to (1,1)
  CHECK(category_similarity("pet", "cat dog", t) == doctest::Approx(1.0));
  CHECK(category_similarity("horse", "cat", t) == -1.0);
  CHECK(category_similarity("cat", "horse", t) == -1.0);
  CHECK(category_similarity("zero", "cat", t) == -1.0);
}

TEST_CASE("generate_pseudo_gt examples") {
  EmbeddingTable t(3);
  t.insert("cat", {1, 0, 0});
  t.insert("towel", {0, 1, 0});
  t.insert("dog", {0, 0, 1});
  const std::vector<GroundTruthRegion> regions{region("r0", "cat"), region("r1", "towel"), region("r2", "dog")};

  SUBCASE("no nouns") {
    const auto s = generate_pseudo_gt(expression(toks({"the", "left", "one"})), regions, t, 0.4);
    CHECK(s.region_ids.empty());
    CHECK(s.referent_included);
    CHECK(s.expression_id == "e");
  }
  SUBCASE("exact category match") {
    const auto s = generate_pseudo_gt(expression(toks({"cat", "on", "towel"}), toks({"NOUN", "ADP", "NOUN"})),
                                      regions, t, 0.4);
    CHECK(s.region_ids == std::set<std::string>{"r0", "r1"});
  }
  SUBCASE("threshold sits between 0.39 and 0.41 and is inclusive") {
    // Unit vectors with the requested cosines against the x and y axes.
    const double a = 0.39, b = 0.41;
    EmbeddingTable u(3);
    u.insert("thing", {a, b, std::sqrt(1 - a * a - b * b)});
    u.insert("cata", {1, 0, 0});
    u.insert("catb", {0, 1, 0});
    const std::vector<GroundTruthRegion> rs{region("ra", "cata"), region("rb", "catb")};
    const auto s = generate_pseudo_gt(expression(toks({"thing"}), toks({"NOUN"})), rs, u, 0.4);
    CHECK(s.region_ids == std::set<std::string>{"rb"});
    EmbeddingTable w(2);
    w.insert("x", {1, 0});
    w.insert("half", {0.5, std::sqrt(0.75)});
    const std::vector<GroundTruthRegion> hr{region("rh", "half")};
    const double cos = category_similarity("x", "half", w);
    CHECK(generate_pseudo_gt(expression(toks({"x"}), toks({"NOUN"})), hr, w, cos).region_ids.size() == 1);
  }
  SUBCASE("regions of other images are ignored") {
    std::vector<GroundTruthRegion> rs = regions;
    rs.push_back({"other", "img2", {0, 0, 1, 1}, "cat"});
    const auto s = generate_pseudo_gt(expression(toks({"cat"}), toks({"NOUN"})), rs, t, 0.4);
    CHECK(s.region_ids == std::set<std::string>{"r0"});
  }
}

TEST_CASE("pseudo gt properties on random embeddings") {
  Rng rng(21);
  const std::vector<std::string> words{"w0", "w1", "w2", "w3", "w4", "w5", "w6", "w7"};
  for (int trial = 0; trial < 50; ++trial) {
    EmbeddingTable t(4);
    for (const auto& w : words) {
      std::vector<double> v(4);
      for (auto& x : v) x = rng.normal(0, 1);
      t.insert(w, v);
    }
    std::vector<GroundTruthRegion> regions;
    for (int i = 0; i < 6; ++i) {
      regions.push_back(region("r" + std::to_string(i), words[rng.below(words.size())] +
                                                            (i % 2 ? " " + words[rng.below(words.size())] : "")));
    }
    std::vector<std::string> nouns{words[rng.below(8)], words[rng.below(8)]};
    const auto base = expression(nouns);

    // monotone in gamma
    std::set<std::string> prev;
    bool first = true;
    for (double g : {-0.5, 0.0, 0.2, 0.4, 0.6, 0.8, 1.0}) {
      const auto s = generate_pseudo_gt(base, regions, t, g).region_ids;
      if (!first) {
        CHECK(std::includes(prev.begin(), prev.end(), s.begin(), s.end()));
      }
      prev = s;
      first = false;
    }
    // adding a noun never removes a region
    auto more = nouns;
    more.push_back(words[rng.below(8)]);
    const auto s1 = generate_pseudo_gt(base, regions, t, 0.3).region_ids;
    const auto s2 = generate_pseudo_gt(expression(more), regions, t, 0.3).region_ids;
    CHECK(std::includes(s2.begin(), s2.end(), s1.begin(), s1.end()));
    // independent of region order
    auto shuffled = regions;
    std::reverse(shuffled.begin(), shuffled.end());
    CHECK(generate_pseudo_gt(base, shuffled, t, 0.3).region_ids == s1);
  }
}
