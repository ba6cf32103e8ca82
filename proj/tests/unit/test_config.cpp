#include <cstdlib>

#include <nlohmann/json.hpp>

#include "doctest.h"
#include "dismae/config.hpp"
#include "dismae/error.hpp"
#include "dismae/hash.hpp"
#include "fixtures.hpp"

using namespace dismae;
using nlohmann::json;

namespace {

std::string error_of(const json& j) {
  try {
    run_config_from_json(j);
  } catch (const ConfigError& e) {
    return e.what();
  }
  return "";
}

struct EnvSeed {
  explicit EnvSeed(const char* v) {
    if (v) ::setenv("DISMAE_SEED", v, 1);
    else ::unsetenv("DISMAE_SEED");
  }
  ~EnvSeed() { ::unsetenv("DISMAE_SEED"); }
};

}  // namespace

TEST_CASE("defaults and partial documents") {
  const RunConfig c = run_config_from_json(json::object());
  CHECK(c.model.embed_dim == 32);
  CHECK(c.model.mask_ratio == 0.8);
  CHECK(c.loss.gamma == 0.008);
  CHECK(c.loss.tau == 0.4);
  CHECK(c.loss.lambda1 == 1e-3);
  CHECK(c.eval.probe_threshold == 0.10);
  const RunConfig p = run_config_from_json(json{{"loss", {{"lambda1", 0.5}, {"weight_mode", "random"}}}});
  CHECK(p.loss.lambda1 == 0.5);
  CHECK(p.loss.weight_mode == WeightMode::random);
  CHECK(p.loss.tau == 0.4);
}

TEST_CASE("strict parsing") {
  CHECK(error_of(json{{"modle", json::object()}}).find("unknown key 'modle'") != std::string::npos);
  CHECK(error_of(json{{"model", {{"embed_dims", 8}}}}).find("model: unknown key 'embed_dims'") != std::string::npos);
  CHECK(error_of(json{{"model", {{"embed_dim", "8"}}}}).find("model.embed_dim: wrong type") != std::string::npos);
  CHECK(error_of(json{{"train", {{"epochs", 1.5}}}}).find("train.epochs") != std::string::npos);
  CHECK(error_of(json{{"loss", {{"weight_mode", "inverse"}}}}).find("inverse") != std::string::npos);
  CHECK(error_of(json{{"model", {{"image_size", 15}}}}).find("not divisible") != std::string::npos);
  CHECK(error_of(json{{"data", {{"train_domains", {"a", "b", "c"}}, {"test_domains", {"a"}}}}})
            .find("both train and test") != std::string::npos);
  CHECK_FALSE(error_of(json{{"data", {{"train_domains", {"a", "b"}}}}}).empty());
  CHECK(run_config_from_json(json{{"model", {{"embed_dim", nullptr}}}}).model.embed_dim == 32);
}

TEST_CASE("resolved config round trips") {
  json j{{"model", {{"image_size", 8}, {"patch_size", 4}, {"embed_dim", 16}}},
         {"loss", {{"negatives_scope", "inter_domain"}}},
         {"train", {{"lr_schedule", "cosine"}, {"mode", "dg"}, {"backbone", {{"lr", 0.002}}}}},
         {"data", {{"root", "/tmp/x"}, {"test_domains", {"violet"}}, {"spec", {{"image_size", 8}}}}},
         {"eval", {{"label_fraction", 0.08}, {"probe", {{"lr_multiplier", 10.0}}}}},
         {"output_dir", "/tmp/out"}};
  const RunConfig a = run_config_from_json(j);
  const std::string text = resolved_config_text(a);
  const RunConfig b = run_config_from_json(json::parse(text));
  CHECK(resolved_config_text(b) == text);
  CHECK(b.data.spec.has_value());
  CHECK(b.data.spec->domains.size() == 4);
  CHECK(b.train.lr_schedule == LrSchedule::cosine);
  CHECK(b.eval.probe.lr_multiplier == 10.0);
}

TEST_CASE("fingerprint ignores data and eval sections") {
  RunConfig a = run_config_from_json(json::object());
  RunConfig b = a;
  b.data.root = "/elsewhere";
  b.eval.label_fraction = 0.5;
  CHECK(config_fingerprint(a.model, a.loss, a.train) == config_fingerprint(b.model, b.loss, b.train));
  b.loss.tau = 0.3;
  CHECK(config_fingerprint(a.model, a.loss, a.train) != config_fingerprint(b.model, b.loss, b.train));
}

TEST_CASE("seed precedence: flag, then environment, then config") {
  RunConfig base = run_config_from_json(json{{"train", {{"seed", 5}}}});
  {
    EnvSeed env(nullptr);
    RunConfig c = base;
    apply_seed_override(c, std::nullopt);
    CHECK(c.train.seed == 5);
  }
  {
    EnvSeed env("11");
    RunConfig c = base;
    apply_seed_override(c, std::nullopt);
    CHECK(c.train.seed == 11);
    CHECK(c.eval.seed == 11);
    RunConfig f = base;
    apply_seed_override(f, 3);
    CHECK(f.train.seed == 3);
  }
  {
    EnvSeed env("-2");
    RunConfig c = base;
    CHECK_THROWS_AS(apply_seed_override(c, std::nullopt), ConfigError);
  }
}

TEST_CASE("config files") {
  fixtures::TempDir dir("cfg");
  write_file(dir.path() / "bad.json", "{\"model\": ");
  CHECK_THROWS_AS(load_run_config((dir.path() / "bad.json").string()), ConfigError);
  CHECK_THROWS_AS(load_run_config((dir.path() / "none.json").string()), ConfigError);
  write_file(dir.path() / "ok.json", "{\"train\": {\"epochs\": 4}}");
  CHECK(load_run_config((dir.path() / "ok.json").string()).train.epochs == 4);
}
