#include <doctest.h>

#include <cmath>
#include <vector>

#include "refnms/errors.hpp"
#include "refnms/model.hpp"
#include "refnms/rng.hpp"

using namespace refnms;
using ad::Array;
using ad::Shape;

namespace {

ModelConfig small_config() { return ModelConfig{.vocab_size = 9, .word_dim = 5, .hidden = 3, .feature_dim = 4}; }

Array random_features(Rng& rng, std::size_t b, std::size_t v) {
  Array a(Shape{b, v});
  for (auto& x : a.data) x = rng.normal(0, 1);
  return a;
}

void zero(ad::Array& a) { std::fill(a.data.begin(), a.data.end(), 0.0); }

}  // namespace

TEST_CASE("parameter layout and initialisation") {
  const auto cfg = small_config();
  const auto p = init_parameters(cfg, 3);
  CHECK(p.entries().size() == kParameterTensorCount);
  CHECK_NOTHROW(p.validate());
  for (std::size_t i = 0; i < cfg.word_dim; ++i) CHECK(p.word_embeddings.at(0, i) == 0.0);
  for (std::size_t r = 0; r < cfg.feature_dim; ++r) {
    for (std::size_t c = 0; c < cfg.feature_dim; ++c) {
      CHECK(p.feature_projection.weight.at(r, c) == (r == c ? 1.0 : 0.0));
    }
  }
  std::size_t head = 0;
  for (const auto& e : p.entries()) head += e.group == ParamGroup::kHead;
  CHECK(head == 2);
  CHECK(init_parameters(cfg, 3).word_embeddings == p.word_embeddings);
  CHECK_FALSE(init_parameters(cfg, 4).word_embeddings == p.word_embeddings);

  auto broken = p;
  broken.fc_r_weight = Array(Shape{7});
  CHECK_THROWS_AS(broken.validate(), ShapeError);
}

TEST_CASE("embedding rows come from the table when present") {
  Vocabulary vocab({"<pad>", "unk", "cat", "zebra"}, 10);
  EmbeddingTable t(2);
  t.insert("cat", {0.25, -0.5});
  auto cfg = ModelConfig{.vocab_size = 4, .word_dim = 2, .hidden = 2, .feature_dim = 2};
  const auto p = init_parameters(cfg, 1, &vocab, &t);
  CHECK(p.word_embeddings.at(2, 0) == 0.25);
  CHECK(p.word_embeddings.at(2, 1) == -0.5);
  CHECK(std::abs(p.word_embeddings.at(3, 0)) <= 0.1);
  EmbeddingTable wrong(3);
  wrong.insert("cat", {1, 2, 3});
  CHECK_THROWS_AS(init_parameters(cfg, 1, &vocab, &wrong), ShapeError);
}

TEST_CASE("encode_expression") {
  SUBCASE("shape at the default hidden size") {
    const auto cfg = ModelConfig{.vocab_size = 4, .word_dim = 6, .hidden = 256, .feature_dim = 2};
    const auto p = init_parameters(cfg, 1);
    ad::Graph g(false);
    const auto m = bind(g, p, false);
    const std::vector<int> one{2};
    CHECK(encode_expression(m, one).shape() == Shape{1, 512});
    CHECK_THROWS_AS(encode_expression(m, std::vector<int>{}), InvalidArgument);
    CHECK_THROWS_AS(encode_expression(m, std::vector<int>{4}), InvalidArgument);
  }
  SUBCASE("zero GRU parameters give identical rows") {
    auto p = init_parameters(small_config(), 2);
    for (auto* gw : {&p.gru_forward, &p.gru_backward}) {
      for (auto* a : {&gw->w_z, &gw->w_r, &gw->w_h, &gw->u_z, &gw->u_r, &gw->u_h, &gw->b_z, &gw->b_r, &gw->b_h}) {
        zero(*a);
      }
    }
    ad::Graph g(false);
    const auto m = bind(g, p, false);
    const std::vector<int> tokens{3, 3, 3, 3};
    const Array w = encode_expression(m, tokens).value();
    for (std::size_t r = 1; r < 4; ++r) {
      for (std::size_t c = 0; c < w.cols(); ++c) CHECK(w.at(r, c) == w.at(0, c));
    }
  }
  SUBCASE("reversing tokens and swapping directions reverses rows") {
    const auto p = init_parameters(small_config(), 5);
    auto swapped = p;
    std::swap(swapped.gru_forward, swapped.gru_backward);
    const std::vector<int> tokens{2, 7, 4, 1, 8};
    const std::vector<int> reversed(tokens.rbegin(), tokens.rend());
    ad::Graph g(false);
    const Array a = encode_expression(bind(g, p, false), tokens).value();
    const Array b = encode_expression(bind(g, swapped, false), reversed).value();
    const std::size_t n = tokens.size(), h = small_config().hidden;
    for (std::size_t j = 0; j < n; ++j) {
      for (std::size_t c = 0; c < h; ++c) {
        CHECK(b.at(j, c) == a.at(n - 1 - j, h + c));
        CHECK(b.at(j, h + c) == a.at(n - 1 - j, c));
      }
    }
  }
}

TEST_CASE("attend") {
  // hidden 1 -> q = 2
  const auto cfg = ModelConfig{.vocab_size = 3, .word_dim = 2, .hidden = 1, .feature_dim = 2};
  auto p = init_parameters(cfg, 7);
  Rng rng(7);
  SUBCASE("single word") {
    ad::Graph g(false);
    const auto m = bind(g, p, false);
    const Array words = Array::matrix(1, 2, {0.3, -0.7});
    const auto a = attend(m, g.constant(random_features(rng, 3, 2)), g.constant(words));
    for (std::size_t b = 0; b < 3; ++b) {
      CHECK(a.alpha.value().at(b, 0) == 1.0);
      CHECK(a.q_attn.value().at(b, 0) == doctest::Approx(0.3));
      CHECK(a.q_attn.value().at(b, 1) == doctest::Approx(-0.7));
    }
  }
  SUBCASE("zero FC_s gives uniform attention") {
    zero(p.fc_s_weight);
    ad::Graph g(false);
    const auto m = bind(g, p, false);
    const Array words = Array::matrix(3, 2, {1, 2, 3, 4, 5, 9});
    const auto a = attend(m, g.constant(random_features(rng, 2, 2)), g.constant(words));
    for (std::size_t b = 0; b < 2; ++b) {
      for (std::size_t j = 0; j < 3; ++j) CHECK(a.alpha.value().at(b, j) == doctest::Approx(1.0 / 3));
      CHECK(a.q_attn.value().at(b, 0) == doctest::Approx(3.0));
      CHECK(a.q_attn.value().at(b, 1) == doctest::Approx(5.0));
    }
  }
  SUBCASE("logits ln3 and 0 give 0.75 / 0.25") {
    p.fc_s_weight = Array::vector({0, 0, std::log(3.0), 0});
    ad::Graph g(false);
    const auto m = bind(g, p, false);
    const Array words = Array::matrix(2, 2, {1, 0, 0, 0});
    const auto a = attend(m, g.constant(random_features(rng, 1, 2)), g.constant(words));
    CHECK(a.alpha.value().at(0, 0) == doctest::Approx(0.75).epsilon(1e-12));
    CHECK(a.alpha.value().at(0, 1) == doctest::Approx(0.25).epsilon(1e-12));
  }
}

TEST_CASE("relate") {
  const auto cfg = ModelConfig{.vocab_size = 3, .word_dim = 2, .hidden = 1, .feature_dim = 2};
  auto p = init_parameters(cfg, 7);
  SUBCASE("hand instance: v_b=(3,4), q_attn=(1,1)") {
    p.mlp_b1.weight = Array::matrix(2, 2, {1, 0, 0, 1});
    zero(p.mlp_b1.bias);
    p.mlp_b2.weight = Array::matrix(2, 2, {1, 0, 0, 1});
    zero(p.mlp_b2.bias);
    p.fc_r_weight = Array::vector({1, 1});
    zero(p.fc_r_bias);
    ad::Graph g(false);
    const auto m = bind(g, p, false);
    const auto r = relate(m, g.constant(Array::matrix(1, 2, {3, 4})), g.constant(Array::matrix(1, 2, {1, 1})));
    CHECK(r.fused.value()[0] == doctest::Approx(0.6).epsilon(1e-12));
    CHECK(r.fused.value()[1] == doctest::Approx(0.8).epsilon(1e-12));
    CHECK(r.r_hat.value()[0] == doctest::Approx(1.4).epsilon(1e-12));
    CHECK(r.r.value()[0] == doctest::Approx(1.0 / (1.0 + std::exp(-1.4))).epsilon(1e-12));
    CHECK(r.r.value()[0] == doctest::Approx(0.80218).epsilon(1e-5));
  }
  SUBCASE("zero FC_r gives one half") {
    zero(p.fc_r_weight);
    zero(p.fc_r_bias);
    Rng rng(1);
    ad::Graph g(false);
    const auto m = bind(g, p, false);
    const auto r = relate(m, g.constant(random_features(rng, 4, 2)), g.constant(random_features(rng, 4, 2)));
    for (double v : r.r.value().data) CHECK(v == 0.5);
  }
}

TEST_CASE("forward trace invariants on random models") {
  Rng rng(17);
  for (int trial = 0; trial < 10; ++trial) {
    const auto cfg = small_config();
    auto p = init_parameters(cfg, 100 + trial);
    for (auto& e : p.entries()) {
      for (auto& x : e.array->data) x += rng.uniform(-0.3, 0.3);
    }
    std::vector<int> tokens;
    for (int i = 0; i < 1 + trial % 6; ++i) tokens.push_back(static_cast<int>(rng.below(cfg.vocab_size)));
    const Array feats = random_features(rng, 6, cfg.feature_dim);
    ad::Graph g(false);
    const auto m = bind(g, p, false);
    const auto f = forward(m, tokens, g.constant(feats));
    const Array& alpha = f.attention.alpha.value();
    const Array& fused = f.relatedness.fused.value();
    for (std::size_t b = 0; b < 6; ++b) {
      double s = 0, n = 0;
      for (std::size_t j = 0; j < alpha.cols(); ++j) s += alpha.at(b, j);
      for (std::size_t j = 0; j < fused.cols(); ++j) n += fused.at(b, j) * fused.at(b, j);
      CHECK(std::abs(s - 1.0) < 1e-9);
      CHECK(std::abs(std::sqrt(n) - 1.0) < 1e-6);  // eps inside the norm
      const double r = f.relatedness.r.value()[b];
      CHECK(r > 0.0);
      CHECK(r < 1.0);
    }
    // No cross-box interaction: permuting boxes permutes outputs.
    Array perm(Shape{6, cfg.feature_dim});
    for (std::size_t b = 0; b < 6; ++b) std::copy(feats.row(5 - b), feats.row(5 - b) + cfg.feature_dim, perm.row(b));
    const auto r1 = predict_relatedness(p, tokens, feats);
    const auto r2 = predict_relatedness(p, tokens, perm);
    for (std::size_t b = 0; b < 6; ++b) CHECK(r2[b] == r1[5 - b]);
  }
}

TEST_CASE("forward rejects the wrong feature width") {
  const auto p = init_parameters(small_config(), 1);
  Rng rng(1);
  CHECK_THROWS_AS(predict_relatedness(p, std::vector<int>{2}, random_features(rng, 2, 3)), ShapeError);
}

TEST_CASE("full model gradient check: loss = sum of r on 3 boxes, 4 tokens") {
  const auto cfg = small_config();
  Rng rng(23);
  auto p = init_parameters(cfg, 23);
  for (auto& e : p.entries()) {
    for (auto& x : e.array->data) x += rng.uniform(-0.1, 0.1);
  }
  const std::vector<int> tokens{2, 5, 5, 8};
  std::vector<Array> inputs;
  for (const auto& e : p.entries()) inputs.push_back(*e.array);
  inputs.push_back(random_features(rng, 3, cfg.feature_dim));
  const auto res = ad::grad_check(
      [&](ad::Graph& g, std::span<const ad::Var> v) {
        const auto m = bind_vars(g, cfg, std::vector<ad::Var>(v.begin(), v.end() - 1));
        return ad::sum(forward(m, tokens, v.back()).relatedness.r);
      },
      inputs);
  INFO("worst input " << res.worst_input << " coord " << res.worst_coord);
  CHECK(res.max_rel_error < 1e-4);
}

namespace {

ImageDetections image_with(std::vector<double> confidences) {
  ImageDetections img;
  img.image_id = "img";
  for (std::size_t i = 0; i < confidences.size(); ++i) {
    DetectionRecord d;
    d.box = {double(i), 0, double(i) + 1, 1};
    d.category_id = int(i % 2);
    d.confidence = confidences[i];
    d.feature = {double(i), 1.0};
    img.records.push_back(d);
  }
  return img;
}

class FixedScorer final : public RelatednessScorer {
 public:
  explicit FixedScorer(std::vector<double> r) : r_(std::move(r)) {}
  std::vector<double> score(std::span<const int>, std::span<const DetectionRecord* const> boxes) const override {
    return std::vector<double>(r_.begin(), r_.begin() + static_cast<std::ptrdiff_t>(boxes.size()));
  }

 private:
  std::vector<double> r_;
};

}  // namespace

TEST_CASE("score_boxes") {
  const std::vector<int> tokens{1};
  SUBCASE("everything below delta") {
    CHECK(score_boxes(image_with({0.01, 0.049}), tokens, ConstantScorer(1.0), 0.05).empty());
  }
  SUBCASE("delta boundary is inclusive, order preserved") {
    const auto s = score_boxes(image_with({0.04, 0.05, 0.9}), tokens, ConstantScorer(0.5), 0.05);
    REQUIRE(s.size() == 2);
    CHECK(s[0].confidence == 0.05);
    CHECK(s[1].confidence == 0.9);
    CHECK(s[0].source_index == 1);
    CHECK(s[1].source_index == 2);
  }
  SUBCASE("fused score is the product") {
    const auto s = score_boxes(image_with({0.5}), tokens, FixedScorer({0.8}), 0.05);
    REQUIRE(s.size() == 1);
    CHECK(s[0].fused == 0.5 * 0.8);
    CHECK(s[0].fused == doctest::Approx(0.4));
  }
  SUBCASE("model scorer: s <= min(r, c)") {
    const auto cfg = ModelConfig{.vocab_size = 3, .word_dim = 2, .hidden = 2, .feature_dim = 2};
    const auto p = init_parameters(cfg, 1);
    const ModelScorer scorer(p);
    const auto s = score_boxes(image_with({0.3, 0.6, 0.99, 0.07}), std::vector<int>{1, 2}, scorer, 0.05);
    REQUIRE(s.size() == 4);
    for (const auto& x : s) {
      CHECK(x.fused <= std::min(x.relatedness, x.confidence));
      CHECK(x.fused == x.relatedness * x.confidence);
    }
  }
}
