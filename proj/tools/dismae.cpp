// Copyright (c) 2026, The dismae Authors
// SPDX-License-Identifier: Apache-2.0
//
// dismae gen-data|pretrain|probe|finetune|eval|swap-grid|scores|embed|ablate
// Exit codes: 0 success, 2 configuration error, 1 anything else.

#include <cstdio>
#include <filesystem>
#include <iostream>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "dismae/analysis.hpp"
#include "dismae/config.hpp"
#include "dismae/error.hpp"
#include "dismae/hash.hpp"
#include "dismae/pipeline.hpp"

namespace fs = std::filesystem;
using namespace dismae;

namespace {

struct Common {
  std::string config;
  std::string out;
  std::string ckpt;
  std::optional<std::uint64_t> seed;
};

RunConfig resolve(const Common& c) {
  RunConfig cfg = load_run_config(c.config);
  apply_seed_override(cfg, c.seed);
  if (!c.out.empty()) cfg.output_dir = c.out;
  cfg.validate();
  return cfg;
}

std::vector<std::string> split_ids(const std::string& s) {
  std::vector<std::string> out;
  std::stringstream ss(s);
  std::string item;
  while (std::getline(ss, item, ','))
    if (!item.empty()) out.push_back(item);
  return out;
}

TrainedState load_ckpt(const RunConfig& cfg, const std::string& path) {
  return checkpoint_load(path, cfg.model, cfg.loss, cfg.train);
}

void print_metrics(const Metrics& m) {
  std::printf("overall %.4f  average %.4f\n", m.overall, m.average);
  for (const auto& [d, a] : m.per_domain) std::printf("  %-16s %.4f  (n=%d)\n", d.c_str(), a, m.counts.at(d));
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"dual-branch masked autoencoder for unsupervised domain generalization"};
  app.require_subcommand(1);

  Common c;
  auto add_config = [&](CLI::App* sub, bool ckpt) {
    sub->add_option("--config", c.config, "JSON run configuration")->required()->check(CLI::ExistingFile);
    sub->add_option("--out", c.out, "output directory (overrides output_dir)");
    sub->add_option("--seed", c.seed, "seed (overrides DISMAE_SEED and the config)");
    if (ckpt) sub->add_option("--ckpt", c.ckpt, "checkpoint directory")->required();
  };

  std::string spec_path;
  auto* gen = app.add_subcommand("gen-data", "render the synthetic factored dataset");
  gen->add_option("--spec", spec_path, "FactorSpec JSON")->required()->check(CLI::ExistingFile);
  gen->add_option("--out", c.out, "dataset root")->required();
  gen->add_option("--seed", c.seed, "seed (overrides DISMAE_SEED and the spec)");

  std::string resume;
  auto* pretrain = app.add_subcommand("pretrain", "unsupervised pretraining on the source domains");
  add_config(pretrain, false);
  pretrain->add_option("--resume", resume, "checkpoint to resume from");

  auto* probe = app.add_subcommand("probe", "linear probe on a labeled source subset");
  add_config(probe, true);
  auto* finetune = app.add_subcommand("finetune", "finetune the semantic encoder on a labeled source subset");
  add_config(finetune, true);
  auto* eval = app.add_subcommand("eval", "accuracy on the held-out domains");
  add_config(eval, true);

  std::string rows, cols;
  int scale = 4;
  auto* swap = app.add_subcommand("swap-grid", "semantic x variation swap reconstructions");
  add_config(swap, true);
  swap->add_option("--rows", rows, "comma-separated item ids supplying s")->required();
  swap->add_option("--cols", cols, "comma-separated item ids supplying v0")->required();
  swap->add_option("--scale", scale, "pixel upscaling per cell");

  std::string run_dir;
  auto* scores = app.add_subcommand("scores", "per-domain propensity series from a run");
  scores->add_option("--run", run_dir, "pretrain run directory")->required()->check(CLI::ExistingDirectory);
  scores->add_option("--out", c.out, "output path; .csv and .png are written side by side")->required();

  std::string split = "train", which = "s0", pca_out;
  auto* embed = app.add_subcommand("embed", "export s0 or v0 embeddings");
  add_config(embed, true);
  embed->add_option("--split", split, "train|val|test")->check(CLI::IsMember({"train", "val", "test"}));
  embed->add_option("--which", which, "s0|v0")->check(CLI::IsMember({"s0", "v0"}));
  embed->add_option("--pca", pca_out, "also write a 2-D PCA projection CSV here");

  std::string grid_path;
  auto* ablate = app.add_subcommand("ablate", "run the ablation grid");
  add_config(ablate, false);
  ablate->add_option("--grid", grid_path, "grid JSON (default: every table)")->check(CLI::ExistingFile);

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : 2;
  }

  try {
    if (gen->parsed()) {
      FactorSpec spec = factor_spec_from_json(read_json_file(spec_path));
      RunConfig tmp;
      tmp.train.seed = spec.seed;
      apply_seed_override(tmp, c.seed);
      spec.seed = tmp.train.seed;
      const MultiDomainDataset d = generate_factored_dataset(spec, c.out);
      std::printf("wrote %d images in %d domains to %s\n", d.size(), d.num_domains(), c.out.c_str());
    } else if (pretrain->parsed()) {
      const RunConfig cfg = resolve(c);
      const Workspace ws = load_workspace(cfg);
      std::optional<fs::path> from;
      if (!resume.empty()) from = fs::path(resume);
      const TrainedState st = run_pretrain(cfg, ws, cfg.output_dir, from);
      std::printf("trained to epoch %d; checkpoint at %s\n", st.epoch, (fs::path(cfg.output_dir) / "final").c_str());
    } else if (probe->parsed() || finetune->parsed()) {
      const RunConfig cfg = resolve(c);
      const Workspace ws = load_workspace(cfg);
      const TrainedState st = load_ckpt(cfg, c.ckpt);
      const AdaptResult r = run_adapt(cfg, ws, st, cfg.output_dir,
                                      probe->parsed() ? Adaptation::linear_probe : Adaptation::full_finetune);
      std::printf("%s on %d labeled items; %s\n", probe->parsed() ? "probe" : "finetune", r.labeled_items,
                  r.log.lr_rule.c_str());
    } else if (eval->parsed()) {
      const RunConfig cfg = resolve(c);
      const Workspace ws = load_workspace(cfg);
      print_metrics(run_eval(cfg, ws, load_ckpt(cfg, c.ckpt), cfg.output_dir));
    } else if (swap->parsed()) {
      const RunConfig cfg = resolve(c);
      if (cfg.data.root.empty()) throw ConfigError("data.root is required");
      const MultiDomainDataset all = load_image_folders(cfg.data.root, cfg.data.labeled);
      const TrainedState st = load_ckpt(cfg, c.ckpt);
      const SwapGrid g = render_swap_grid(st.model, all, resolve_ids(all, split_ids(rows)),
                                          resolve_ids(all, split_ids(cols)), cfg.train.seed, scale);
      if (c.out.empty()) throw ConfigError("swap-grid needs --out");
      write_png(c.out, g.image);
      std::printf("wrote %dx%d grid to %s\n", g.image.width, g.image.height, c.out.c_str());
    } else if (scores->parsed()) {
      const ScoreSeries s = read_score_series(run_dir);
      const fs::path out = c.out;
      fs::path csv = out, png = out;
      csv.replace_extension(".csv");
      png.replace_extension(".png");
      write_file(csv, score_series_csv(s));
      write_png(png, plot_score_series(s));
      std::printf("wrote %zu epochs x %zu domains to %s and %s\n", s.epochs.size(), s.domains.size(), csv.c_str(),
                  png.c_str());
    } else if (embed->parsed()) {
      const RunConfig cfg = resolve(c);
      if (c.out.empty()) throw ConfigError("embed needs --out");
      const Workspace ws = load_workspace(cfg);
      const MultiDomainDataset& d = split == "train" ? ws.split.train : split == "val" ? ws.split.val : ws.test;
      if (d.size() == 0) throw ConfigError("split '" + split + "' is empty (no test domains configured?)");
      const TrainedState st = load_ckpt(cfg, c.ckpt);
      const Mat e = which == "s0" ? dataset_semantic_features(st.model, d) : dataset_variation_features(st.model, d);
      write_file(c.out, embedding_csv(d, e));
      if (!pca_out.empty()) {
        const PcaResult p = pca_project(e, 2);
        std::string text = "id,domain,pc0,pc1\n";
        char buf[96];
        for (int i = 0; i < d.size(); ++i) {
          std::snprintf(buf, sizeof buf, ",%.17g,%.17g\n", p.coords(i, 0), p.coords(i, 1));
          text += d.ids[static_cast<std::size_t>(i)] + "," +
                  d.domain_names[static_cast<std::size_t>(d.domains[static_cast<std::size_t>(i)])] + buf;
        }
        write_file(pca_out, text);
      }
      std::printf("wrote %d x %d embeddings to %s\n", e.rows, e.cols, c.out.c_str());
    } else if (ablate->parsed()) {
      const RunConfig cfg = resolve(c);
      const AblationGrid grid =
          grid_path.empty() ? default_ablation_grid() : ablation_grid_from_json(read_json_file(grid_path));
      const Workspace ws = load_workspace(cfg);
      const auto table = run_ablation(cfg, grid, ws, cfg.output_dir);
      std::printf("wrote %zu cells to %s\n", table["cells"].size(),
                  (fs::path(cfg.output_dir) / "ablation.json").c_str());
    }
  } catch (const ConfigError& e) {
    std::fprintf(stderr, "config error: %s\n", e.what());
    return 2;
  } catch (const std::exception& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return 1;
  }
  return 0;
}
