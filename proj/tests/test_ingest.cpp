#include <doctest.h>

#include <fstream>
#include <sstream>
#include <string>
#include <vector>

#include "refnms/errors.hpp"
#include "refnms/ingest.hpp"
#include "test_helpers.hpp"

using namespace refnms;

namespace {

ExpressionRecord expr_with(const std::string& text) {
  ExpressionRecord e;
  e.expression_id = text;
  e.image_id = "i";
  std::istringstream ss(text);
  std::string t;
  while (ss >> t) e.tokens.push_back(t);
  return e;
}

}  // namespace

TEST_CASE("detection dump parsing") {
  SUBCASE("header only") {
    const auto d = parse_detection_dump("#refnms-dets v1 feature_dim=3\n");
    CHECK(d.feature_dim == 3);
    CHECK(d.images.empty());
  }
  SUBCASE("one image two records") {
    const auto d = parse_detection_dump(
        "#refnms-dets v1 feature_dim=2\n"
        "img1\t0 0 10 10\t3\tcat\t0.9\t0.5 -1\n"
        "img1\t1 1 5 6\t4\tdog\t0.25\t1e-3 2\n");
    REQUIRE(d.images.size() == 1);
    CHECK(d.images[0].image_id == "img1");
    REQUIRE(d.images[0].records.size() == 2);
    const auto& r = d.images[0].records[1];
    CHECK(r.box == Box{1, 1, 5, 6});
    CHECK(r.category_id == 4);
    CHECK(r.category_name == "dog");
    CHECK(r.confidence == 0.25);
    CHECK(r.feature == std::vector<double>{1e-3, 2});
    CHECK(d.find("img1") == &d.images[0]);
    CHECK(d.find("nope") == nullptr);
  }
  SUBCASE("images are grouped in order of first appearance") {
    const auto d = parse_detection_dump(
        "#refnms-dets v1 feature_dim=1\n"
        "b\t0 0 1 1\t0\tx\t0.5\t1\n"
        "a\t0 0 1 1\t0\tx\t0.5\t2\n"
        "b\t0 0 1 1\t0\tx\t0.5\t3\n");
    REQUIRE(d.images.size() == 2);
    CHECK(d.images[0].image_id == "b");
    CHECK(d.images[0].records.size() == 2);
    CHECK(d.images[1].image_id == "a");
  }
  SUBCASE("confidence outside [0,1] is a range error") {
    CHECK_THROWS_AS(parse_detection_dump("#refnms-dets v1 feature_dim=1\nimg\t0 0 1 1\t0\tx\t1.2\t1\n"),
                    RangeError);
  }
  SUBCASE("feature length mismatch is a schema error") {
    CHECK_THROWS_AS(parse_detection_dump("#refnms-dets v1 feature_dim=2\nimg\t0 0 1 1\t0\tx\t0.5\t1\n"),
                    SchemaError);
  }
  SUBCASE("malformed line names its line number") {
    try {
      parse_detection_dump("#refnms-dets v1 feature_dim=1\nimg\t0 0 1 1\t0\tx\t0.5\t1\nimg\t0 0 zz 1\t0\tx\t0.5\t1\n");
      FAIL("expected ParseError");
    } catch (const ParseError& e) {
      CHECK(e.line() == 3);
    }
    CHECK_THROWS_AS(parse_detection_dump("garbage\n"), ParseError);
    CHECK_THROWS_AS(parse_detection_dump("#refnms-dets v1 feature_dim=1\nimg\t0 0 1\t0\tx\t0.5\t1\n"), ParseError);
  }
}

TEST_CASE("detection dump round trip") {
  DetectionDump d;
  d.feature_dim = 3;
  d.images.push_back({"a", {{{0.1, 0.2, 10.5, 20.25}, 2, "cup", 0.123456789012345, {1.0 / 3, -2e-17, 5}},
                            {{1, 2, 3, 4}, 0, "traffic_light", 1.0, {0, 0, 0}}}});
  d.images.push_back({"b", {{{5, 5, 6, 6}, 1, "dog", 0.0, {7, 8, 9}}}});
  const auto dir = scratch_dir("ingest_roundtrip");
  write_detection_dump(d, dir / "d.tsv");
  const auto back = load_detection_dump(dir / "d.tsv");
  CHECK(back.feature_dim == d.feature_dim);
  CHECK(back.images == d.images);
}

TEST_CASE("expressions and regions round trip") {
  std::vector<ExpressionRecord> ex(2);
  ex[0] = {"e0", "img", Split::kTestB, {1, 2, 3, 4}, {"the", "cat"}, {"DET", "NOUN"}};
  ex[1] = {"e1", "img", Split::kVal, {0, 0, 1.5, 1}, {"dog"}, {}};
  std::vector<GroundTruthRegion> regs{{"r0", "img", {0, 0, 2, 2}, "traffic light"}};
  const auto dir = scratch_dir("ingest_expr");
  write_expressions(ex, dir / "e.tsv");
  write_regions(regs, dir / "r.tsv");
  CHECK(load_expressions(dir / "e.tsv") == ex);
  CHECK(load_regions(dir / "r.tsv") == regs);
}

TEST_CASE("expression parsing rules") {
  const auto e = parse_expressions("x\timg\ttestA\t0 0 1 1\tThe Cat\tdet noun\n");
  REQUIRE(e.size() == 1);
  CHECK(e[0].tokens == std::vector<std::string>{"the", "cat"});
  CHECK(e[0].pos_tags == std::vector<std::string>{"DET", "NOUN"});
  CHECK(e[0].split == Split::kTestA);
  CHECK_THROWS_AS(parse_expressions("x\timg\ttrain\t0 0 1 1\tthe cat\tDET\n"), SchemaError);
  CHECK_THROWS_AS(parse_expressions("x\timg\tbogus\t0 0 1 1\tthe cat\n"), ParseError);
  CHECK_THROWS_AS(parse_expressions("x\timg\ttrain\t0 0 1 1\t \n"), ParseError);
}

TEST_CASE("split names") {
  for (Split s : {Split::kTrain, Split::kVal, Split::kTestA, Split::kTestB, Split::kTest}) {
    CHECK(parse_split(split_name(s)) == s);
  }
  CHECK_THROWS_AS(parse_split("dev"), ParseError);
}

TEST_CASE("embedding table loading") {
  const auto t = parse_embeddings("cat 1 0 0\ndog 0 1 0\n");
  CHECK(t.size() == 2);
  CHECK(t.dimension() == 3);
  REQUIRE(t.find("dog") != nullptr);
  CHECK(*t.find("dog") == std::vector<double>{0, 1, 0});
  CHECK(t.find("horse") == nullptr);

  std::string wide = "a";
  for (int i = 0; i < 300; ++i) wide += " 0.5";
  std::string narrow = "b";
  for (int i = 0; i < 299; ++i) narrow += " 0.5";
  CHECK_THROWS_AS(parse_embeddings(wide + "\n" + narrow + "\n"), SchemaError);

  // Duplicates: last one wins (a warning goes to the log).
  const auto d = parse_embeddings("cat 1 0\ncat 0 1\n");
  CHECK(d.size() == 1);
  CHECK(*d.find("cat") == std::vector<double>{0, 1});

  EmbeddingTable manual(2);
  CHECK_THROWS_AS(manual.insert("x", {1, 2, 3}), SchemaError);
}

TEST_CASE("vocabulary construction") {
  SUBCASE("singletons map to unk") {
    const std::vector<ExpressionRecord> c{expr_with("the cat"), expr_with("the dog")};
    const Vocabulary v = build_vocabulary(c, 10);
    CHECK(v.contains("the"));
    CHECK_FALSE(v.contains("cat"));
    CHECK_FALSE(v.contains("dog"));
    CHECK(v.index_of("cat") == Vocabulary::kUnk);
    CHECK(v.size() == 3);
  }
  SUBCASE("repeats within a sentence count") {
    const std::vector<ExpressionRecord> c{expr_with("a a")};
    CHECK(build_vocabulary(c, 10).contains("a"));
  }
  SUBCASE("order: pad, unk, descending count, lexicographic ties") {
    const std::vector<ExpressionRecord> c{expr_with("b a c c c"), expr_with("a b d"), expr_with("z z")};
    const Vocabulary v = build_vocabulary(c, 20);
    CHECK(v.words() == std::vector<std::string>{"<pad>", "unk", "c", "a", "b", "z"});
    CHECK(v.max_sentence_length() == 20);
    CHECK(v.index_of("<pad>") == Vocabulary::kPad);
  }
  SUBCASE("deterministic regardless of corpus order") {
    std::vector<ExpressionRecord> c{expr_with("x y y"), expr_with("x w w q"), expr_with("q y")};
    const auto v1 = build_vocabulary(c, 10);
    std::swap(c[0], c[2]);
    CHECK(build_vocabulary(c, 10).words() == v1.words());
  }
  SUBCASE("empty corpus is an error") {
    CHECK_THROWS_AS(build_vocabulary(std::vector<ExpressionRecord>{}, 10), InvalidArgument);
  }
}

TEST_CASE("encode_tokens") {
  const std::vector<ExpressionRecord> c{expr_with("the red cat the red cat")};
  const Vocabulary v = build_vocabulary(c, 10);
  std::vector<std::string> twelve(12, "cat");
  CHECK(encode_tokens(twelve, v).size() == 10);
  const std::vector<std::string> known{"the", "red", "cat"};
  const auto k = encode_tokens(known, v);
  CHECK(k.size() == 3);
  for (int i : k) CHECK(i > Vocabulary::kUnk);
  const std::vector<std::string> mixed{"the", "blue", "cat", "bird"};
  const auto m = encode_tokens(mixed, v);
  CHECK(m[0] != Vocabulary::kUnk);
  CHECK(m[1] == Vocabulary::kUnk);
  CHECK(m[2] != Vocabulary::kUnk);
  CHECK(m[3] == Vocabulary::kUnk);
  CHECK_THROWS_AS(encode_tokens(std::vector<std::string>{}, v), InvalidArgument);
}

TEST_CASE("missing files are io errors") {
  CHECK_THROWS_AS(load_detection_dump("/nonexistent/x.tsv"), IoError);
  CHECK_THROWS_AS(load_embeddings("/nonexistent/x.txt"), IoError);
}
