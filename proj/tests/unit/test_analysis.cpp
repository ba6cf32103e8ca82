#include <algorithm>
#include <cmath>

#include "doctest.h"
#include "dismae/analysis.hpp"
#include "dismae/evaluation.hpp"
#include "dismae/error.hpp"
#include "dismae/hash.hpp"
#include "dismae/trainer.hpp"
#include "fixtures.hpp"
#include "oracles.hpp"

using namespace dismae;
namespace fs = std::filesystem;

namespace {

Mat plain_reconstruction(const DisMae& model, const MultiDomainDataset& d, int idx, std::uint64_t seed) {
  const std::vector<int> one{idx};
  const PatchGrid g = patchify(d.batch(one), model.config());
  Rng rng = Rng::derive(seed, {0x5A9, static_cast<std::uint64_t>(idx)});
  const MaskedTokens m = random_masking(g, model.config().mask_ratio, rng);
  Tape t;
  const auto sem = model.encode_semantic(t, m.visible, m.plan);
  const Var v0 = model.encode_variation(t, m.visible, m.plan);
  return model.decode(t, sem.tokens, &v0, m.plan).value();
}

}  // namespace

TEST_CASE("swap grid: diagonal equals the plain reconstruction, layout, determinism") {
  fixtures::TempDir dir("grid");
  const MultiDomainDataset d = generate_factored_dataset(fixtures::small_spec(3, 2), dir.path());
  DisMae model(fixtures::small_model(3), 9);
  const std::vector<int> ids{0, 9, 20};
  const SwapGrid g = render_swap_grid(model, d, ids, ids, 4, 2);
  CHECK(g.image.width == 4 * 8 * 2);
  CHECK(g.image.height == 4 * 8 * 2);
  REQUIRE(g.cells.size() == 3);
  for (int i = 0; i < 3; ++i) {
    CHECK(g.cells[static_cast<std::size_t>(i)].size() == 3);
    CHECK(g.cells[static_cast<std::size_t>(i)][static_cast<std::size_t>(i)] ==
          plain_reconstruction(model, d, ids[static_cast<std::size_t>(i)], 4));
  }
  CHECK(g.cells[0][1] != g.cells[0][0]);
  const SwapGrid again = render_swap_grid(model, d, ids, ids, 4, 2);
  CHECK(again.image.pixels == g.image.pixels);
  write_png(dir.path() / "a.png", g.image);
  write_png(dir.path() / "b.png", again.image);
  CHECK(read_file(dir.path() / "a.png") == read_file(dir.path() / "b.png"));

  const SwapGrid rect = render_swap_grid(model, d, {0}, {9, 20}, 4, 1);
  CHECK(rect.image.width == 3 * 8);
  CHECK(rect.image.height == 2 * 8);
  // top-left corner stays blank
  CHECK(rect.image.pixels[0] == 255);

  CHECK_THROWS_AS(resolve_ids(d, {"crimson/nope.png"}), DataError);
  CHECK(resolve_ids(d, {d.ids[5]}) == std::vector<int>{5});
}

TEST_CASE("score series from a training log") {
  fixtures::TempDir dir("scores");
  const MultiDomainDataset d = generate_factored_dataset(fixtures::small_spec(3, 4), dir.path() / "data");
  TrainConfig t;
  t.epochs = 3;
  t.per_domain_batch = 4;
  LossConfig l;
  l.lambda1 = 0.0;
  Trainer tr(fixtures::small_model(3), l, t);
  train_udg(tr, d, dir.path() / "run");
  const ScoreSeries s = read_score_series(dir.path() / "run");
  CHECK(s.epochs == std::vector<int>{1, 2, 3});
  CHECK(s.domains.size() == 3);
  // zero-initialised classifier, never trained before epoch 1 ends
  for (double p : s.mean_p[0]) CHECK(p == doctest::Approx(1.0 / 3.0));
  const std::string csv = score_series_csv(s);
  CHECK(csv.rfind("epoch,domain,mean_p\n", 0) == 0);
  CHECK(std::count(csv.begin(), csv.end(), '\n') == 1 + 3 * 3);
  CHECK(plot_score_series(s).pixels == plot_score_series(s).pixels);
  ScoreSeries high = s;
  for (auto& row : high.mean_p) row.assign(3, 0.9);
  const Image8 a = plot_score_series(high);
  CHECK(a.width == 480);
  // the dashed reference line sits at 1/K
  const int y = (320 - 30) - static_cast<int>(std::lround((1.0 / 3.0) * (320 - 30 - 15)));
  const std::size_t o = (static_cast<std::size_t>(y) * 480 + 41) * 3;
  CHECK(a.pixels[o] == 128);

  write_file(dir.path() / "bad/logs/scalars.csv", "epoch,series,value\n1,loss_rec,0.5\n");
  CHECK_THROWS_AS(read_score_series(dir.path() / "bad"), DataError);
  CHECK_THROWS_AS(read_score_series(dir.path() / "missing"), DataError);
}

TEST_CASE("embedding csv") {
  fixtures::TempDir dir("emb");
  const MultiDomainDataset d = generate_factored_dataset(fixtures::small_spec(3, 2), dir.path());
  DisMae model(fixtures::small_model(3), 1);
  const Mat e = dataset_semantic_features(model, d);
  const std::string csv = embedding_csv(d, e);
  CHECK(std::count(csv.begin(), csv.end(), '\n') == 1 + d.size());
  CHECK(csv.rfind("id,domain,label,dim0,", 0) == 0);
  MultiDomainDataset unl = d;
  unl.labels.clear();
  const std::string u = embedding_csv(unl, e);
  CHECK(u.find(d.ids[0] + ",crimson,,") != std::string::npos);
  CHECK_THROWS(embedding_csv(d, Mat(3, 8)));
}

TEST_CASE("pca: exact plane, isotropic variance, sign convention, errors") {
  const int H = 6, n = 200;
  Rng r(3);
  Mat plane(n, H);
  std::vector<double> u{1, 2, 0, -1, 0.5, 0}, v{0, 1, -1, 0, 0, 2};
  for (int i = 0; i < n; ++i) {
    const double a = r.normal(), b = r.normal();
    for (int c = 0; c < H; ++c) plane(i, c) = 3.0 + a * u[static_cast<std::size_t>(c)] + b * v[static_cast<std::size_t>(c)];
  }
  const PcaResult p = pca_project(plane, 2);
  CHECK(p.explained[0] + p.explained[1] == doctest::Approx(1.0).epsilon(1e-12));
  // reconstruct from 2 coords
  std::vector<double> mean(H, 0.0);
  for (int i = 0; i < n; ++i)
    for (int c = 0; c < H; ++c) mean[static_cast<std::size_t>(c)] += plane(i, c) / n;
  double err = 0.0;
  for (int i = 0; i < n; ++i)
    for (int c = 0; c < H; ++c) {
      const double rec = mean[static_cast<std::size_t>(c)] + p.coords(i, 0) * p.components(0, c) + p.coords(i, 1) * p.components(1, c);
      err = std::max(err, std::abs(rec - plane(i, c)));
    }
  CHECK(err < 1e-9);
  for (int k = 0; k < 2; ++k) {
    int arg = 0;
    for (int c = 1; c < H; ++c)
      if (std::abs(p.components(k, c)) > std::abs(p.components(k, arg))) arg = c;
    CHECK(p.components(k, arg) > 0.0);
  }

  Mat iso(2000, H);
  for (double& x : iso.data) x = r.normal();
  const PcaResult q = pca_project(iso, 2);
  std::vector<double> flat(iso.data.begin(), iso.data.end());
  const auto ev = oracle::jacobi_eigenvalues(oracle::covariance(flat, 2000, H), H);
  double tr = 0.0;
  for (double e : ev) tr += e;
  CHECK(q.explained[0] == doctest::Approx(ev[0] / tr).epsilon(1e-9));
  CHECK(q.explained[1] == doctest::Approx(ev[1] / tr).epsilon(1e-9));
  CHECK(q.explained[0] + q.explained[1] == doctest::Approx(2.0 / H).epsilon(0.15));

  CHECK_THROWS_AS(pca_project(Mat(3, H), 2), DataError);
}
