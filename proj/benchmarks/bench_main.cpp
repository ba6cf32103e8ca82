#include <benchmark/benchmark.h>

#include "dismae/autograd.hpp"
#include "dismae/datasets.hpp"
#include "dismae/rng.hpp"
#include "dismae/tensor.hpp"
#include "dismae/trainer.hpp"

using namespace dismae;

namespace {

Mat random_mat(int r, int c, Rng& rng) {
  Mat m(r, c);
  for (double& v : m.data) v = rng.normal();
  return m;
}

void BM_Matmul(benchmark::State& state) {
  const int n = static_cast<int>(state.range(0));
  Rng rng(1);
  const Mat a = random_mat(n, n, rng), b = random_mat(n, n, rng);
  for (auto _ : state) benchmark::DoNotOptimize(matmul(a, b));
  state.SetItemsProcessed(state.iterations() * 2LL * n * n * n);
}
BENCHMARK(BM_Matmul)->Arg(32)->Arg(64)->Arg(128);

void BM_AttentionForwardBackward(benchmark::State& state) {
  const int seq = static_cast<int>(state.range(0));
  const int batch = 16, dim = 64, heads = 4;
  Rng rng(2);
  const Mat q = random_mat(batch * seq, dim, rng), k = random_mat(batch * seq, dim, rng),
            v = random_mat(batch * seq, dim, rng);
  for (auto _ : state) {
    Tape t;
    Var out = mean_all(attention(t.constant(q), t.constant(k), t.constant(v), seq, heads));
    t.backward(out);
    benchmark::DoNotOptimize(out.scalar());
  }
}
BENCHMARK(BM_AttentionForwardBackward)->Arg(17)->Arg(50);

ModelConfig bench_model() {
  ModelConfig m;
  m.image_size = 16;
  m.patch_size = 4;
  m.embed_dim = 32;
  m.decoder_dim = 32;
  m.num_heads = 4;
  m.semantic_depth = 2;
  m.variation_depth = 1;
  m.decoder_depth = 1;
  m.num_domains = 3;
  m.num_classes = 10;
  return m;
}

ImageBatch bench_batch(int per_domain) {
  Rng rng(3);
  ImageBatch b;
  b.count = 3 * per_domain;
  b.size = 16;
  b.channels = 3;
  for (int i = 0; i < b.count * 16 * 16 * 3; ++i) b.pixels.push_back(rng.uniform());
  for (int i = 0; i < b.count; ++i) b.domains.push_back(i / per_domain);
  return b;
}

void BM_BackboneStep(benchmark::State& state) {
  LossConfig loss;
  loss.lambda1 = state.range(0) == 0 ? 0.0 : 0.1;
  loss.max_negatives = 2;
  TrainConfig train;
  ModelConfig model = bench_model();
  model.variation_branch = loss.lambda1 > 0.0;
  const Trainer tr(model, loss, train);
  TrainedState st = tr.init_state();
  const ImageBatch b = bench_batch(8);
  for (auto _ : state) benchmark::DoNotOptimize(tr.backbone_step(st, b, 1e-4));
  state.SetItemsProcessed(state.iterations() * b.count);
}
BENCHMARK(BM_BackboneStep)->Arg(0)->Arg(1)->Unit(benchmark::kMillisecond);

}  // namespace

BENCHMARK_MAIN();
