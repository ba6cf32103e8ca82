#include <cmath>
#include <fstream>
#include <limits>

#include "doctest.h"
#include "dismae/config.hpp"
#include "dismae/error.hpp"
#include "dismae/trainer.hpp"
#include "fixtures.hpp"

using namespace dismae;
namespace fs = std::filesystem;

namespace {

struct Setup {
  fixtures::TempDir dir{"trainer"};
  MultiDomainDataset data;
  ModelConfig model = fixtures::small_model(3);
  LossConfig loss;
  TrainConfig train;

  Setup() {
    data = generate_factored_dataset(fixtures::small_spec(3, 4), dir.path() / "data");
    loss.lambda1 = 0.1;
    loss.max_negatives = 2;
    train.epochs = 3;
    train.per_domain_batch = 4;
    train.adaptive_interval = 1;
    train.adaptive_max_epoch = 2;
    train.backbone.lr = 1e-3;
    train.classifier.lr = 0.05;
    train.classifier.momentum = 0.9;
    train.seed = 7;
  }
};

std::vector<Mat> values_in(const DisMae& m, bool want, GroupMask groups) {
  std::vector<Mat> out;
  for (const auto& p : m.params())
    if (groups.test(p.group) == want) out.push_back(p.value);
  return out;
}

std::vector<Mat> all_values(const DisMae& m) {
  std::vector<Mat> out;
  for (const auto& p : m.params()) out.push_back(p.value);
  return out;
}

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  return {std::istreambuf_iterator<char>(in), {}};
}

}  // namespace

TEST_CASE("classifier schedule") {
  CHECK(classifier_schedule(120, 15, 100) == std::vector<int>{15, 30, 45, 60, 75, 90});
  CHECK(classifier_schedule(5, 1, 3) == std::vector<int>{1, 2, 3});
  CHECK(classifier_schedule(10, 20, 100).empty());
}

TEST_CASE("config validation at construction") {
  Setup s;
  ModelConfig m = s.model;
  m.variation_branch = false;
  CHECK_THROWS_AS(Trainer(m, s.loss, s.train), ConfigError);
  TrainConfig t = s.train;
  t.per_domain_batch = 1;
  CHECK_THROWS_AS(Trainer(s.model, s.loss, t), ConfigError);
  m = s.model;
  m.mask_ratio = 0.0;
  CHECK_THROWS_AS(Trainer(m, s.loss, s.train), ConfigError);
}

TEST_CASE("cosine schedule starts at the base rate and decays") {
  Setup s;
  s.train.lr_schedule = LrSchedule::cosine;
  s.train.epochs = 4;
  Trainer tr(s.model, s.loss, s.train);
  CHECK(tr.learning_rate(1) == doctest::Approx(1e-3));
  CHECK(tr.learning_rate(3) == doctest::Approx(0.5e-3));
  CHECK(tr.learning_rate(4) < tr.learning_rate(2));
}

TEST_CASE("freeze contracts hold in both directions") {
  Setup s;
  Trainer tr(s.model, s.loss, s.train);
  TrainedState st = tr.init_state();
  const GroupMask cls{ParamGroup::domain_classifier};
  const auto batches = domain_balanced_batches(s.data, 4, 1, 1);
  const auto frozen_before = values_in(st.model, true, cls);
  const auto moving_before = values_in(st.model, false, cls);
  tr.backbone_step(st, s.data.batch(batches[0]), 1e-3);
  CHECK(values_in(st.model, true, cls) == frozen_before);
  CHECK(values_in(st.model, false, cls) != moving_before);

  const auto backbone_before = values_in(st.model, false, cls);
  const auto cls_before = values_in(st.model, true, cls);
  tr.adaptive_classifier_step(st, s.data, 1);
  CHECK(values_in(st.model, false, cls) == backbone_before);
  CHECK(values_in(st.model, true, cls) != cls_before);

  CHECK_THROWS_AS(tr.adaptive_classifier_step(st, s.data, 3), ContractError);
}

TEST_CASE("identical seeds give bit-identical checkpoints") {
  Setup s;
  Trainer tr(s.model, s.loss, s.train);
  const TrainedState a = train_udg(tr, s.data, s.dir.path() / "a");
  const TrainedState b = train_udg(tr, s.data, s.dir.path() / "b");
  CHECK(all_values(a.model) == all_values(b.model));
  for (const auto& e : fs::directory_iterator(s.dir.path() / "a" / "final"))
    CHECK(slurp(e.path()) == slurp(s.dir.path() / "b" / "final" / e.path().filename()));
  CHECK(slurp(s.dir.path() / "a/logs/scalars.csv") == slurp(s.dir.path() / "b/logs/scalars.csv"));

  TrainConfig other = s.train;
  other.seed = 8;
  const TrainedState c = train_udg(Trainer(s.model, s.loss, other), s.data, s.dir.path() / "c");
  CHECK(all_values(c.model) != all_values(a.model));
}

TEST_CASE("scalars log layout") {
  Setup s;
  s.train.epochs = 2;
  Trainer tr(s.model, s.loss, s.train);
  train_udg(tr, s.data, s.dir.path() / "run");
  std::ifstream in(s.dir.path() / "run/logs/scalars.csv");
  std::string line;
  std::getline(in, line);
  CHECK(line == "epoch,series,value");
  int rows = 0, prop = 0;
  while (std::getline(in, line)) {
    ++rows;
    if (line.find(",propensity/") != std::string::npos) ++prop;
  }
  CHECK(rows == 2 * (3 + 3));
  CHECK(prop == 6);
}

TEST_CASE("checkpoint round trip, tamper detection and fingerprint") {
  Setup s;
  s.train.epochs = 2;
  Trainer tr(s.model, s.loss, s.train);
  const TrainedState a = train_udg(tr, s.data, s.dir.path() / "run");
  const fs::path ck = s.dir.path() / "run" / "final";
  const TrainedState back = checkpoint_load(ck, s.model, s.loss, s.train);
  CHECK(all_values(back.model) == all_values(a.model));
  CHECK(back.epoch == 2);
  CHECK(back.rng.state() == a.rng.state());
  CHECK(back.backbone_opt.steps == a.backbone_opt.steps);

  LossConfig other = s.loss;
  other.tau = 0.5;
  CHECK_THROWS_AS(checkpoint_load(ck, s.model, other, s.train), DataError);

  const fs::path victim = ck / "param__decoder.pred.bias.bin";
  REQUIRE(fs::exists(victim));
  std::string bytes = slurp(victim);
  bytes[3] = static_cast<char>(bytes[3] ^ 0x01);
  std::ofstream(victim, std::ios::binary) << bytes;
  try {
    checkpoint_load(ck, s.model, s.loss, s.train);
    FAIL("tampered checkpoint loaded");
  } catch (const DataError& e) {
    CHECK(std::string(e.what()).find("decoder.pred.bias") != std::string::npos);
  }
  CHECK_THROWS_AS(checkpoint_load(s.dir.path() / "nowhere", s.model, s.loss, s.train), DataError);
}

TEST_CASE("resume from an intermediate checkpoint equals uninterrupted training") {
  Setup s;
  s.train.checkpoint_interval = 1;
  Trainer tr(s.model, s.loss, s.train);
  const TrainedState full = train_udg(tr, s.data, s.dir.path() / "full");
  TrainedState mid = checkpoint_load(s.dir.path() / "full/checkpoints/epoch-0001", s.model, s.loss, s.train);
  const TrainedState resumed = train_udg(tr, s.data, s.dir.path() / "full", std::move(mid));
  CHECK(all_values(resumed.model) == all_values(full.model));
  CHECK(resumed.rng.state() == full.rng.state());
}

TEST_CASE("dg with zero supervision weight follows the udg trajectory") {
  Setup s;
  s.train.epochs = 2;
  s.loss.lambda2 = 0.0;
  const TrainedState u = train_udg(Trainer(s.model, s.loss, s.train), s.data, s.dir.path() / "u");
  TrainConfig dg = s.train;
  dg.mode = TrainMode::dg;
  const TrainedState d = train_dg(Trainer(s.model, s.loss, dg), s.data, s.dir.path() / "d");
  CHECK(all_values(u.model) == all_values(d.model));

  MultiDomainDataset unlabeled = s.data;
  unlabeled.labels.clear();
  CHECK_THROWS_AS(train_dg(Trainer(s.model, s.loss, dg), unlabeled, s.dir.path() / "x"), DataError);
  CHECK_THROWS_AS(train_udg(Trainer(s.model, s.loss, dg), s.data, s.dir.path() / "x"), ConfigError);
}

TEST_CASE("non-finite loss raises a numeric error with a snapshot") {
  Setup s;
  Trainer tr(s.model, s.loss, s.train);
  TrainedState st = tr.init_state();
  auto& p = st.model.params()[st.model.params().find("decoder.pred.bias")];
  p.value(0, 0) = std::numeric_limits<double>::quiet_NaN();
  const auto batches = domain_balanced_batches(s.data, 4, 1, 1);
  try {
    tr.backbone_step(st, s.data.batch(batches[0]), 1e-3);
    FAIL("expected NumericError");
  } catch (const NumericError& e) {
    CHECK(std::string(e.what()).find("non-finite loss") != std::string::npos);
  }
}

TEST_CASE("training rejects mismatched domain counts") {
  Setup s;
  Trainer tr(fixtures::small_model(2), s.loss, s.train);
  CHECK_THROWS_AS(tr.train(s.data, s.dir.path() / "r"), ConfigError);
}
