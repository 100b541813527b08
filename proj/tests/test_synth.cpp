#include <doctest.h>

#include <fstream>
#include <set>
#include <sstream>

#include "refnms/errors.hpp"
#include "refnms/geometry.hpp"
#include "refnms/pseudo_gt.hpp"
#include "refnms/synth.hpp"
#include "test_helpers.hpp"

using namespace refnms;

namespace {

std::string slurp(const std::filesystem::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

SynthConfig small() {
  SynthConfig c;
  c.train_images = 6;
  c.eval_images = 3;
  c.categories = 5;
  c.boxes_per_image = 12;
  c.embedding_dim = 24;
  return c;
}

}  // namespace

TEST_CASE("synthetic data is reproducible from its seed") {
  const auto dir = scratch_dir("synth_repro");
  const auto a = write_synthetic(generate_synthetic(small()), dir / "a");
  const auto b = write_synthetic(generate_synthetic(small()), dir / "b");
  CHECK(slurp(a.detections) == slurp(b.detections));
  CHECK(slurp(a.expressions) == slurp(b.expressions));
  CHECK(slurp(a.regions) == slurp(b.regions));
  CHECK(slurp(a.embeddings) == slurp(b.embeddings));
  auto other = small();
  other.seed = 8;
  const auto c = write_synthetic(generate_synthetic(other), dir / "c");
  CHECK(slurp(a.detections) != slurp(c.detections));

  // Files read back into the same dataset.
  const auto ds = generate_synthetic(small());
  CHECK(load_detection_dump(a.detections).images == ds.detections.images);
  CHECK(load_expressions(a.expressions) == ds.expressions);
  CHECK(load_regions(a.regions) == ds.regions);
}

TEST_CASE("synthetic data structure") {
  auto cfg = small();
  cfg.noise = 0.0;
  const auto ds = generate_synthetic(cfg);
  CHECK(ds.detections.feature_dim == cfg.categories);
  CHECK(ds.detections.images.size() == cfg.train_images + cfg.eval_images);
  CHECK(ds.expressions.size() == (cfg.train_images + cfg.eval_images) * cfg.expressions_per_image);
  for (const auto& img : ds.detections.images) {
    CHECK(img.records.size() == cfg.boxes_per_image);
    for (const auto& r : img.records) {
      REQUIRE(r.feature.size() == cfg.categories);
      for (std::size_t k = 0; k < cfg.categories; ++k) {
        CHECK(r.feature[k] == (static_cast<int>(k) == r.category_id ? 1.0 : 0.0));
      }
      CHECK(r.confidence >= 0.0);
      CHECK(r.confidence <= 1.0);
    }
  }
  for (const auto& e : ds.expressions) {
    CHECK(e.tokens.size() == e.pos_tags.size());
    CHECK(e.split == (e.image_id < "img0006" ? Split::kTrain : Split::kVal));
    // Some detection of the referent's category covers the referent.
    const auto* img = ds.detections.find(e.image_id);
    REQUIRE(img != nullptr);
    bool covered = false;
    for (const auto& r : img->records) covered = covered || iou(r.box, e.referent_box) > 0.5;
    CHECK(covered);
  }
}

TEST_CASE("pseudo ground truth on synthetic data is the mentioned categories") {
  const auto ds = generate_synthetic(small());
  for (const auto& e : ds.expressions) {
    std::set<std::string> mentioned;
    for (std::size_t i = 0; i < e.tokens.size(); ++i) {
      if (e.pos_tags[i] == "NOUN") mentioned.insert(e.tokens[i]);
    }
    std::set<std::string> expected;
    for (const auto& r : ds.regions) {
      if (r.image_id == e.image_id && mentioned.count(r.category_name)) expected.insert(r.region_id);
    }
    CHECK(generate_pseudo_gt(e, ds.regions, ds.embeddings, 0.4).region_ids == expected);
  }
}

TEST_CASE("invalid synthetic configs") {
  auto c = small();
  c.categories = 0;
  CHECK_THROWS_AS(generate_synthetic(c), InvalidArgument);
  c = small();
  c.eval_images = 0;
  c.train_images = 0;
  CHECK_THROWS_AS(generate_synthetic(c), InvalidArgument);
  c = small();
  c.embedding_dim = 4;
  CHECK_THROWS_AS(generate_synthetic(c), InvalidArgument);
}
