#include <cstdlib>
#include <fstream>
#include <string>

#include <nlohmann/json.hpp>

#include "doctest.h"
#include "dismae/hash.hpp"
#include "fixtures.hpp"

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

int run(const std::string& args) {
  const std::string cmd = std::string(DISMAE_CLI_PATH) + " " + args + " >/dev/null 2>&1";
  const int status = std::system(cmd.c_str());
  return WIFEXITED(status) ? WEXITSTATUS(status) : -1;
}

json cli_config(const fs::path& root, const fs::path& out, double label_fraction) {
  return json{
      {"model",
       {{"image_size", 8}, {"patch_size", 4}, {"embed_dim", 8}, {"decoder_dim", 8}, {"num_heads", 2},
        {"semantic_depth", 1}, {"variation_depth", 1}, {"decoder_depth", 1}, {"num_domains", 3}, {"num_classes", 4},
        {"mask_ratio", 0.5}}},
      {"loss", {{"lambda1", 0.1}, {"max_negatives", 2}}},
      {"train", {{"epochs", 2}, {"per_domain_batch", 4}, {"seed", 1}}},
      {"data",
       {{"root", root.string()},
        {"test_domains", {"violet"}},
        {"spec", {{"num_classes", 4}, {"image_size", 8}, {"samples_per_class_per_domain", 12}}}}},
      {"eval", {{"label_fraction", label_fraction}, {"probe", {{"epochs", 3}}}, {"finetune", {{"epochs", 1}}}}},
      {"output_dir", out.string()}};
}

std::string write_json(const fs::path& p, const json& j) {
  dismae::write_file(p, j.dump(2));
  return p.string();
}

int count_lines(const fs::path& p) {
  std::ifstream in(p);
  int n = 0;
  std::string line;
  while (std::getline(in, line)) ++n;
  return n;
}

}  // namespace

TEST_CASE("cli: usage and configuration errors") {
  fixtures::TempDir dir("cli");
  CHECK(run("--help") == 0);
  CHECK(run("") == 2);
  CHECK(run("frobnicate") == 2);
  CHECK(run("pretrain") == 2);
  CHECK(run("pretrain --config " + (dir.path() / "missing.json").string()) == 2);

  json bad = cli_config(dir.path() / "data", dir.path() / "out", 0.08);
  bad["model"]["bogus"] = 1;
  CHECK(run("pretrain --config " + write_json(dir.path() / "bad.json", bad)) == 2);

  json overlap{{"domains",
                {{{"name", "a"}, {"foreground", {{1.0, 1.0, 1.0}}}, {"background", {{0.0, 0.0, 0.0}}}},
                 {{"name", "b"}, {"foreground", {{0.95, 0.9, 1.0}}}, {"background", {{0.5, 0.5, 0.5}}}}}}};
  CHECK(run("gen-data --spec " + write_json(dir.path() / "spec.json", overlap) + " --out " +
            (dir.path() / "gen").string()) == 2);
  CHECK_FALSE(fs::exists(dir.path() / "gen"));

  json cfg = cli_config(dir.path() / "data", dir.path() / "out", 0.08);
  CHECK(run("eval --config " + write_json(dir.path() / "c.json", cfg) + " --ckpt " +
            (dir.path() / "nockpt").string()) == 1);
}

TEST_CASE("cli: gen-data is deterministic") {
  fixtures::TempDir dir("cli");
  json spec{{"num_classes", 2}, {"image_size", 8}, {"samples_per_class_per_domain", 2}};
  const std::string s = write_json(dir.path() / "spec.json", spec);
  REQUIRE(run("gen-data --spec " + s + " --out " + (dir.path() / "a").string()) == 0);
  REQUIRE(run("gen-data --spec " + s + " --out " + (dir.path() / "b").string()) == 0);
  CHECK(dismae::read_file(dir.path() / "a/manifest.json") == dismae::read_file(dir.path() / "b/manifest.json"));
}

TEST_CASE("cli: pretrain, probe, eval, swap-grid, scores, embed, ablate") {
  fixtures::TempDir dir("cli");
  const fs::path data = dir.path() / "data", pre = dir.path() / "pre";
  const std::string cfg = write_json(dir.path() / "cfg.json", cli_config(data, pre, 0.095));

  REQUIRE(run("pretrain --config " + cfg) == 0);
  CHECK(fs::exists(pre / "final/manifest.json"));
  CHECK(fs::exists(pre / "config.resolved.json"));
  int loss_rows = 0;
  {
    std::ifstream in(pre / "logs/scalars.csv");
    std::string line;
    while (std::getline(in, line))
      if (line.find(",loss_rec,") != std::string::npos) ++loss_rows;
  }
  CHECK(loss_rows == 2);

  const std::string ck = (pre / "final").string();
  REQUIRE(run("probe --config " + cfg + " --ckpt " + ck + " --out " + (dir.path() / "probe").string()) == 0);
  CHECK(fs::exists(dir.path() / "probe/adapt.json"));
  CHECK(run("finetune --config " + cfg + " --ckpt " + ck + " --out " + (dir.path() / "ft").string()) == 2);

  REQUIRE(run("eval --config " + cfg + " --ckpt " + (dir.path() / "probe/final").string() + " --out " +
              (dir.path() / "eval").string()) == 0);
  const json m = json::parse(dismae::read_file(dir.path() / "eval/metrics.json"));
  for (const char* k : {"overall", "average", "per_domain", "counts"}) CHECK(m.contains(k));
  CHECK(m["counts"].contains("violet"));

  json high = cli_config(data, dir.path() / "p10", 0.10);
  const std::string cfg10 = write_json(dir.path() / "cfg10.json", high);
  CHECK(run("probe --config " + cfg10 + " --ckpt " + ck) == 2);
  // a different fingerprint is a data error, not a config error
  high["loss"]["tau"] = 0.3;
  CHECK(run("probe --config " + write_json(dir.path() / "cfgtau.json", high) + " --ckpt " + ck) == 1);

  const std::string ids = "crimson/00/0000.png,forest/01/0001.png";
  const std::string grid_args = "swap-grid --config " + cfg + " --ckpt " + ck + " --rows " + ids + " --cols " + ids;
  REQUIRE(run(grid_args + " --out " + (dir.path() / "g1.png").string()) == 0);
  REQUIRE(run(grid_args + " --out " + (dir.path() / "g2.png").string()) == 0);
  CHECK(dismae::read_file(dir.path() / "g1.png") == dismae::read_file(dir.path() / "g2.png"));
  CHECK(run(grid_args + ",nope.png --out " + (dir.path() / "g3.png").string()) == 1);

  REQUIRE(run("scores --run " + pre.string() + " --out " + (dir.path() / "scores.csv").string()) == 0);
  CHECK(count_lines(dir.path() / "scores.csv") == 1 + 2 * 3);
  CHECK(fs::exists(dir.path() / "scores.png"));

  REQUIRE(run("embed --config " + cfg + " --ckpt " + ck + " --split test --which v0 --out " +
              (dir.path() / "emb.csv").string() + " --pca " + (dir.path() / "pca.csv").string()) == 0);
  CHECK(count_lines(dir.path() / "emb.csv") == 1 + 4 * 12);
  CHECK(count_lines(dir.path() / "pca.csv") == 1 + 4 * 12);

  const std::string grid = write_json(dir.path() / "grid.json", json{{"weight_modes", json::array()}});
  REQUIRE(run("ablate --config " + cfg + " --grid " + grid + " --out " + (dir.path() / "abl").string()) == 0);
  const json table = json::parse(dismae::read_file(dir.path() / "abl/ablation.json"));
  CHECK(table["cells"].empty());
}
