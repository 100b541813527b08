#include "refnms/synth.hpp"

#include <algorithm>
#include <array>
#include <string_view>

#include "refnms/errors.hpp"
#include "refnms/rng.hpp"

namespace refnms {
namespace {

constexpr std::array<std::string_view, 16> kCategoryWords = {
    "person", "dog", "cat",   "car",    "chair", "cup",   "bottle", "pizza",
    "bench",  "bus", "horse", "laptop", "clock", "sheep", "vase",   "bowl"};

constexpr std::array<std::string_view, 8> kRelations = {"near", "beside", "behind", "under",
                                                        "above", "with", "by", "on"};

constexpr std::array<std::string_view, 5> kFunctionWords = {"the", "and", "left", "right", "big"};

Box random_box(Rng& rng, double min_side, double max_side, double w, double h) {
  const double bw = rng.uniform(min_side, max_side);
  const double bh = rng.uniform(min_side, max_side);
  const double x = rng.uniform(0.0, w - bw);
  const double y = rng.uniform(0.0, h - bh);
  return Box{x, y, x + bw, y + bh};
}

Box jitter(Rng& rng, const Box& b) {
  for (;;) {
    const double dx = 0.06 * b.width();
    const double dy = 0.06 * b.height();
    Box j{b.x1 + rng.uniform(-dx, dx), b.y1 + rng.uniform(-dy, dy), b.x2 + rng.uniform(-dx, dx),
          b.y2 + rng.uniform(-dy, dy)};
    if (iou(j, b) > 0.6) return j;
  }
}

double max_iou(const Box& b, const std::vector<Box>& others) {
  double m = 0.0;
  for (const auto& o : others) m = std::max(m, iou(b, o));
  return m;
}

std::vector<double> feature_for(Rng& rng, std::size_t category, std::size_t dim, double noise) {
  std::vector<double> f(dim, 0.0);
  f[category] = 1.0;
  if (noise > 0.0) {
    for (auto& v : f) v += rng.normal(0.0, noise);
  }
  return f;
}

std::string padded(std::string_view prefix, std::size_t i) {
  std::string n = std::to_string(i);
  while (n.size() < 4) n.insert(n.begin(), '0');
  return std::string(prefix) + n;
}

}  // namespace

std::vector<std::string> synth_category_names(std::size_t n) {
  std::vector<std::string> out;
  for (std::size_t i = 0; i < n; ++i) {
    out.push_back(i < kCategoryWords.size() ? std::string(kCategoryWords[i]) : "thing" + std::to_string(i));
  }
  return out;
}

SynthDataset generate_synthetic(const SynthConfig& cfg) {
  if (cfg.train_images + cfg.eval_images == 0 || cfg.categories == 0 || cfg.boxes_per_image == 0 ||
      cfg.expressions_per_image == 0) {
    throw InvalidArgument("synthetic data needs at least one image, category, box and expression");
  }
  if (cfg.noise < 0.0) throw InvalidArgument("noise must be non-negative");
  const auto names = synth_category_names(cfg.categories);
  const std::size_t n_words = names.size() + kRelations.size() + kFunctionWords.size();
  if (cfg.embedding_dim < n_words) {
    throw InvalidArgument("embedding_dim must be at least " + std::to_string(n_words));
  }

  SynthDataset ds;
  ds.detections.feature_dim = cfg.categories;
  ds.embeddings = EmbeddingTable(cfg.embedding_dim);
  {
    std::size_t axis = 0;
    auto add = [&](std::string_view w) {
      std::vector<double> v(cfg.embedding_dim, 0.0);
      v[axis++] = 1.0;
      ds.embeddings.insert(std::string(w), std::move(v));
    };
    for (const auto& n : names) add(n);
    for (auto w : kRelations) add(w);
    for (auto w : kFunctionWords) add(w);
  }

  Rng rng(cfg.seed);
  const std::size_t n_images = cfg.train_images + cfg.eval_images;
  // Each object gets up to 3 detections; leave room for at least as much
  // clutter as objects.
  const std::size_t max_objects =
      std::max<std::size_t>(1, std::min({cfg.categories, std::size_t{6}, cfg.boxes_per_image / 4 + 1}));
  const std::size_t min_objects = std::min<std::size_t>(3, max_objects);
  const double w = cfg.image_width;
  const double h = cfg.image_height;
  const double side_hi = std::min(w, h) * 0.45;

  for (std::size_t img = 0; img < n_images; ++img) {
    const bool train = img < cfg.train_images;
    const std::string image_id = padded("img", img);
    ImageDetections dets;
    dets.image_id = image_id;

    const std::size_t n_obj = min_objects + rng.below(max_objects - min_objects + 1);
    const auto perm = rng.permutation(cfg.categories);
    std::vector<std::size_t> obj_cat(perm.begin(), perm.begin() + static_cast<std::ptrdiff_t>(n_obj));
    std::vector<Box> obj_box;
    for (std::size_t k = 0; k < n_obj; ++k) {
      Box b;
      int tries = 0;
      do {
        b = random_box(rng, 60.0, side_hi, w, h);
      } while (max_iou(b, obj_box) > 0.1 && ++tries < 200);
      obj_box.push_back(b);
      GroundTruthRegion r;
      r.region_id = image_id + "_r" + std::to_string(k);
      r.image_id = image_id;
      r.box = b;
      r.category_name = names[obj_cat[k]];
      ds.regions.push_back(std::move(r));
    }

    std::vector<DetectionRecord> records;
    for (std::size_t k = 0; k < n_obj && records.size() < cfg.boxes_per_image; ++k) {
      const std::size_t copies = 1 + rng.below(3);
      for (std::size_t c = 0; c < copies && records.size() < cfg.boxes_per_image; ++c) {
        DetectionRecord d;
        d.box = c == 0 && rng.uniform() < 0.5 ? obj_box[k] : jitter(rng, obj_box[k]);
        d.category_id = static_cast<int>(obj_cat[k]);
        d.category_name = names[obj_cat[k]];
        d.confidence = rng.uniform(0.3, 1.0);
        d.feature = feature_for(rng, obj_cat[k], cfg.categories, cfg.noise);
        records.push_back(std::move(d));
      }
    }
    // Clutter: confident false positives away from every annotated object.
    while (records.size() < cfg.boxes_per_image) {
      Box b;
      int tries = 0;
      do {
        b = random_box(rng, 30.0, side_hi, w, h);
      } while (max_iou(b, obj_box) >= 0.25 && ++tries < 200);
      const std::size_t cat = rng.below(cfg.categories);
      DetectionRecord d;
      d.box = b;
      d.category_id = static_cast<int>(cat);
      d.category_name = names[cat];
      d.confidence = rng.uniform(0.05, 1.0);
      d.feature = feature_for(rng, cat, cfg.categories, cfg.noise);
      records.push_back(std::move(d));
    }
    // Detector output order carries no information.
    const auto order = rng.permutation(records.size());
    for (std::size_t i : order) dets.records.push_back(records[i]);
    ds.detections.images.push_back(std::move(dets));

    for (std::size_t e = 0; e < cfg.expressions_per_image; ++e) {
      const std::size_t referent = rng.below(n_obj);
      std::vector<std::size_t> others;
      for (std::size_t k = 0; k < n_obj; ++k) {
        if (k != referent) others.push_back(k);
      }
      const std::size_t n_ctx = std::min(others.size(), rng.below(3));
      const auto pick = rng.permutation(others.size());

      ExpressionRecord ex;
      ex.expression_id = image_id + "_e" + std::to_string(e);
      ex.image_id = image_id;
      ex.split = train ? Split::kTrain : Split::kVal;
      ex.referent_box = obj_box[referent];
      auto push = [&](std::string_view tok, std::string_view tag) {
        ex.tokens.emplace_back(tok);
        ex.pos_tags.emplace_back(tag);
      };
      push("the", "DET");
      if (rng.uniform() < 0.3) push(rng.uniform() < 0.5 ? "left" : "big", "ADJ");
      push(names[obj_cat[referent]], "NOUN");
      for (std::size_t c = 0; c < n_ctx; ++c) {
        if (c == 0) {
          push(kRelations[rng.below(kRelations.size())], "ADP");
        } else {
          push("and", "CCONJ");
        }
        push("the", "DET");
        push(names[obj_cat[others[pick[c]]]], "NOUN");
      }
      ds.expressions.push_back(std::move(ex));
    }
  }
  return ds;
}

SynthPaths synth_paths(const std::filesystem::path& dir) {
  return {dir / "detections.tsv", dir / "expressions.tsv", dir / "regions.tsv", dir / "embeddings.txt"};
}

SynthPaths write_synthetic(const SynthDataset& data, const std::filesystem::path& dir) {
  std::error_code ec;
  std::filesystem::create_directories(dir, ec);
  if (ec) throw IoError("cannot create directory " + dir.string() + ": " + ec.message());
  const auto p = synth_paths(dir);
  write_detection_dump(data.detections, p.detections);
  write_expressions(data.expressions, p.expressions);
  write_regions(data.regions, p.regions);
  write_embeddings(data.embeddings, p.embeddings);
  return p;
}

}  // namespace refnms
