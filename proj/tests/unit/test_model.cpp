#include <algorithm>
#include <cmath>
#include <numeric>
#include <set>

#include "doctest.h"
#include "dismae/error.hpp"
#include "dismae/model.hpp"
#include "fixtures.hpp"

using namespace dismae;

TEST_CASE("patchify follows (row, col) patch order with (y, x, c) inside a patch") {
  const ModelConfig cfg = fixtures::tiny_model();
  const ImageBatch b = fixtures::random_batch(2, 4, 2, 1);
  const PatchGrid g = patchify(b, cfg);
  REQUIRE(g.tokens.rows == 2 * 4);
  REQUIRE(g.tokens.cols == 12);
  for (int n = 0; n < 2; ++n)
    for (int pr = 0; pr < 2; ++pr)
      for (int pc = 0; pc < 2; ++pc)
        for (int y = 0; y < 2; ++y)
          for (int x = 0; x < 2; ++x)
            for (int c = 0; c < 3; ++c)
              CHECK(g.tokens(n * 4 + pr * 2 + pc, (y * 2 + x) * 3 + c) == b.at(n, pr * 2 + y, pc * 2 + x, c));
  const ImageBatch back = unpatchify(g, cfg);
  CHECK(back.pixels == b.pixels);
}

TEST_CASE("patchify rejects mismatched dimensions") {
  ModelConfig cfg = fixtures::tiny_model();
  ImageBatch b = fixtures::random_batch(1, 6, 1, 2);
  CHECK_THROWS_AS(patchify(b, cfg), ConfigError);
  cfg.patch_size = 3;
  CHECK_THROWS_AS(cfg.validate(), ConfigError);
}

TEST_CASE("keep count uses floor with a guard") {
  CHECK(keep_count(196, 0.8) == 39);
  CHECK(keep_count(16, 0.75) == 4);
  CHECK(keep_count(10, 0.7) == 3);
  CHECK(keep_count(16, 0.0) == 16);
}

TEST_CASE("random masking partitions every sample and is seed-determined") {
  ModelConfig cfg = fixtures::tiny_model();
  const PatchGrid g = patchify(fixtures::random_batch(5, 4, 2, 3), cfg);
  Rng r1(42), r2(42);
  const MaskedTokens a = random_masking(g, 0.5, r1), b = random_masking(g, 0.5, r2);
  CHECK(a.visible == b.visible);
  CHECK(a.plan.visible == b.plan.visible);
  for (int n = 0; n < 5; ++n) {
    const auto& vis = a.plan.visible[static_cast<std::size_t>(n)];
    const auto& msk = a.plan.masked[static_cast<std::size_t>(n)];
    CHECK(vis.size() == 2);
    std::set<int> all(vis.begin(), vis.end());
    all.insert(msk.begin(), msk.end());
    CHECK(all.size() == 4);
    for (std::size_t k = 0; k < vis.size(); ++k)
      CHECK(a.plan.restore[static_cast<std::size_t>(n)][static_cast<std::size_t>(vis[k])] == static_cast<int>(k));
    for (std::size_t k = 0; k < vis.size(); ++k)
      for (int c = 0; c < g.patch_dim; ++c)
        CHECK(a.visible(n * 2 + static_cast<int>(k), c) == g.tokens(n * 4 + vis[k], c));
  }
  Rng bad(1);
  CHECK_THROWS_AS(random_masking(g, 1.0, bad), ConfigError);
  CHECK_THROWS_AS(random_masking(g, -0.1, bad), ConfigError);
}

TEST_CASE("full view keeps identity order") {
  const PatchGrid g = patchify(fixtures::random_batch(2, 4, 2, 4), fixtures::tiny_model());
  const MaskedTokens f = full_view(g);
  CHECK(f.plan.len_keep == 4);
  CHECK(f.visible == g.tokens);
  CHECK(f.plan.masked[0].empty());
}

TEST_CASE("sine-cosine table matches the closed form") {
  const Mat t = sincos_pos_embed(8, 3);
  for (int r = 0; r < 3; ++r)
    for (int c = 0; c < 3; ++c)
      for (int i = 0; i < 2; ++i) {
        const double w = 1.0 / std::pow(10000.0, i / 2.0);
        CHECK(t(r * 3 + c, i) == doctest::Approx(std::sin(r * w)));
        CHECK(t(r * 3 + c, 2 + i) == doctest::Approx(std::cos(r * w)));
        CHECK(t(r * 3 + c, 4 + i) == doctest::Approx(std::sin(c * w)));
        CHECK(t(r * 3 + c, 6 + i) == doctest::Approx(std::cos(c * w)));
      }
  CHECK_THROWS_AS(sincos_pos_embed(6, 2), ConfigError);
}

TEST_CASE("encoder and decoder shapes") {
  const ModelConfig cfg = fixtures::tiny_model();
  DisMae model(cfg, 1);
  const PatchGrid g = patchify(fixtures::random_batch(3, 4, 2, 5), cfg);
  Rng r(2);
  const MaskedTokens m = random_masking(g, cfg.mask_ratio, r);
  Tape t;
  const auto sem = model.encode_semantic(t, m.visible, m.plan);
  CHECK(sem.tokens.rows() == 3 * 3);
  CHECK(sem.cls.rows() == 3);
  CHECK(sem.cls.cols() == 8);
  const Var v0 = model.encode_variation(t, m.visible, m.plan);
  CHECK(v0.rows() == 3);
  const Var pred = model.decode(t, sem.tokens, &v0, m.plan);
  CHECK(pred.rows() == 3 * 4);
  CHECK(pred.cols() == 12);
  const Var two = gather_rows(v0, {0, 1});
  CHECK_THROWS_AS(model.decode(t, sem.tokens, &two, m.plan), ContractError);
  CHECK_THROWS_AS(model.decode(t, sem.tokens, nullptr, m.plan), ContractError);
}

TEST_CASE("per-sample outputs do not depend on batch composition") {
  const ModelConfig cfg = fixtures::tiny_model();
  DisMae model(cfg, 3);
  const ImageBatch b = fixtures::random_batch(4, 4, 2, 6);
  const PatchGrid g = patchify(b, cfg);
  Rng r(7);
  const MaskedTokens m = random_masking(g, cfg.mask_ratio, r);
  Tape t;
  const auto sem = model.encode_semantic(t, m.visible, m.plan);
  const Var v0 = model.encode_variation(t, m.visible, m.plan);
  const Var pred = model.decode(t, sem.tokens, &v0, m.plan);

  const std::vector<int> order{2};
  const MaskPlan p2 = m.plan.select(order);
  std::vector<int> vis_rows;
  for (int k = 0; k < m.plan.len_keep; ++k) vis_rows.push_back(2 * m.plan.len_keep + k);
  const Mat vis2 = gather_rows(m.visible, vis_rows);
  Tape t2;
  const auto sem2 = model.encode_semantic(t2, vis2, p2);
  const Var v02 = model.encode_variation(t2, vis2, p2);
  const Var pred2 = model.decode(t2, sem2.tokens, &v02, p2);
  for (int p = 0; p < 4; ++p)
    for (int c = 0; c < 12; ++c) CHECK(pred2.value()(p, c) == pred.value()(2 * 4 + p, c));
}

TEST_CASE("single-encoder baseline and unlabeled mode") {
  ModelConfig cfg = fixtures::tiny_model();
  cfg.variation_branch = false;
  cfg.num_classes = 0;
  DisMae model(cfg, 1);
  CHECK_FALSE(model.has_label_head());
  CHECK(model.params().find("variation.cls_token") < 0);
  const PatchGrid g = patchify(fixtures::random_batch(2, 4, 2, 8), cfg);
  Tape t;
  const MaskedTokens m = full_view(g);
  CHECK_THROWS_AS(model.encode_variation(t, m.visible, m.plan), ContractError);
  const auto sem = model.encode_semantic(t, m.visible, m.plan);
  CHECK_THROWS_AS(model.label_logits(t, sem.cls), ContractError);
  CHECK(model.decode(t, sem.tokens, nullptr, m.plan).rows() == 8);
}

TEST_CASE("initial heads: zero domain classifier gives uniform probabilities") {
  DisMae model(fixtures::tiny_model(), 5);
  const Mat s0(3, 8, 0.7);
  const Mat p = model.classify_domain(s0);
  for (double v : p.data) CHECK(v == doctest::Approx(0.5));
  CHECK(model.params()[model.params().find("semantic.patch_embed.weight")].group == ParamGroup::semantic);
  CHECK(model.params()[model.params().find("decoder.mask_token")].group == ParamGroup::decoder);
}
