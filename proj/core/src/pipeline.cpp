// Copyright (c) 2026, The dismae Authors
// SPDX-License-Identifier: Apache-2.0

#include "dismae/pipeline.hpp"

#include <cstdio>

#include "dismae/error.hpp"
#include "dismae/hash.hpp"

namespace fs = std::filesystem;
using nlohmann::json;

namespace dismae {

Workspace load_workspace(const RunConfig& cfg) {
  if (cfg.data.root.empty()) throw ConfigError("data.root is required");
  const fs::path root = cfg.data.root;
  if (cfg.data.spec && !fs::exists(root / "manifest.json")) generate_factored_dataset(*cfg.data.spec, root);
  const MultiDomainDataset all = load_image_folders(root, cfg.data.labeled);

  for (const auto& t : cfg.data.test_domains)
    if (std::find(all.domain_names.begin(), all.domain_names.end(), t) == all.domain_names.end())
      throw ConfigError("data.test_domains: no domain named '" + t + "' under " + root.string());
  std::vector<std::string> train = cfg.data.train_domains;
  if (train.empty()) {
    for (const auto& d : all.domain_names)
      if (std::find(cfg.data.test_domains.begin(), cfg.data.test_domains.end(), d) == cfg.data.test_domains.end())
        train.push_back(d);
  }
  for (const auto& s : train)
    if (std::find(all.domain_names.begin(), all.domain_names.end(), s) == all.domain_names.end())
      throw ConfigError("data.train_domains: no domain named '" + s + "' under " + root.string());

  Workspace ws;
  ws.source = all.select_domains(train);
  if (ws.source.num_domains() != cfg.model.num_domains)
    throw ConfigError("model.num_domains is " + std::to_string(cfg.model.num_domains) + " but " +
                      std::to_string(ws.source.num_domains()) + " training domains were selected");
  if (ws.source.image_size != cfg.model.image_size)
    throw ConfigError("model.image_size is " + std::to_string(cfg.model.image_size) + " but the images are " +
                      std::to_string(ws.source.image_size) + " px");
  ws.split = split_train_val(ws.source, cfg.data.val_fraction, cfg.data.split_seed);
  if (!cfg.data.test_domains.empty()) ws.test = all.select_domains(cfg.data.test_domains);
  return ws;
}

void write_resolved_config(const RunConfig& cfg, const fs::path& out_dir) {
  write_file(out_dir / "config.resolved.json", resolved_config_text(cfg));
}

TrainedState run_pretrain(const RunConfig& cfg, const Workspace& ws, const fs::path& out_dir,
                          const std::optional<fs::path>& resume_ckpt) {
  write_resolved_config(cfg, out_dir);
  const Trainer trainer(cfg.model, cfg.loss, cfg.train);
  std::optional<TrainedState> resume;
  if (resume_ckpt) resume = checkpoint_load(*resume_ckpt, cfg.model, cfg.loss, cfg.train);
  return cfg.train.mode == TrainMode::udg ? train_udg(trainer, ws.split.train, out_dir, std::move(resume))
                                          : train_dg(trainer, ws.split.train, out_dir, std::move(resume));
}

AdaptResult run_adapt(const RunConfig& cfg, const Workspace& ws, const TrainedState& pretrained,
                      const fs::path& out_dir, std::optional<Adaptation> required) {
  const Adaptation method = dispatch(cfg.eval.label_fraction, cfg.eval.probe_threshold);
  if (required && *required != method) {
    char buf[256];
    if (*required == Adaptation::linear_probe)
      std::snprintf(buf, sizeof buf,
                    "probe refused: label fraction %g is at or above the threshold %g, so the protocol calls for "
                    "full finetuning (use the finetune command)",
                    cfg.eval.label_fraction, cfg.eval.probe_threshold);
    else
      std::snprintf(buf, sizeof buf,
                    "finetune refused: label fraction %g is below the threshold %g, so the protocol calls for a "
                    "linear probe (use the probe command)",
                    cfg.eval.label_fraction, cfg.eval.probe_threshold);
    throw ConfigError(buf);
  }
  write_resolved_config(cfg, out_dir);
  const MultiDomainDataset labeled = select_labeled_subset(ws.split.train, cfg.eval.label_fraction, cfg.eval.seed);
  AdaptResult r{pretrained, {}, method, labeled.size()};
  if (method == Adaptation::linear_probe) {
    r.log = linear_probe(r.state, labeled, cfg.eval);
  } else {
    r.state = full_finetune(pretrained, labeled, cfg.eval, &r.log);
  }
  json j{{"method", method == Adaptation::linear_probe ? "linear_probe" : "full_finetune"},
         {"label_fraction", cfg.eval.label_fraction},
         {"labeled_items", r.labeled_items},
         {"lr", r.log.lr},
         {"lr_rule", r.log.lr_rule},
         {"epoch_loss", r.log.epoch_loss}};
  write_file(out_dir / "adapt.json", j.dump(2) + "\n");
  checkpoint_save(r.state, out_dir / "final");
  return r;
}

Metrics run_eval(const RunConfig& cfg, const Workspace& ws, const TrainedState& state, const fs::path& out_dir) {
  write_resolved_config(cfg, out_dir);
  const MultiDomainDataset& target = ws.test.size() > 0 ? ws.test : ws.split.val;
  const Metrics m = evaluate(state.model, target);
  write_file(out_dir / "metrics.json", metrics_to_json(m).dump(2) + "\n");
  return m;
}

AblationGrid default_ablation_grid() {
  AblationGrid g;
  g.weight_modes = {WeightMode::ipw, WeightMode::none, WeightMode::random, WeightMode::reverse};
  g.inter_domain = true;
  g.decoder_depths = {1, 2, 4, 8};
  g.mask_ratios = {0.5, 0.6, 0.7, 0.8, 0.9};
  g.seeds = {0};
  return g;
}

AblationGrid ablation_grid_from_json(const json& j) {
  if (!j.is_object()) throw ConfigError("ablation grid: expected a JSON object");
  AblationGrid g;
  g.seeds = {0};
  for (auto it = j.begin(); it != j.end(); ++it) {
    const std::string& k = it.key();
    const json& v = it.value();
    try {
      if (k == "weight_modes") {
        for (const auto& m : v) g.weight_modes.push_back(parse_weight_mode(m.get<std::string>()));
      } else if (k == "inter_domain") {
        g.inter_domain = v.get<bool>();
      } else if (k == "decoder_depths") {
        g.decoder_depths = v.get<std::vector<int>>();
      } else if (k == "mask_ratios") {
        g.mask_ratios = v.get<std::vector<double>>();
      } else if (k == "seeds") {
        g.seeds = v.get<std::vector<std::uint64_t>>();
      } else {
        throw ConfigError("ablation grid: unknown key '" + k + "'");
      }
    } catch (const json::exception& e) {
      throw ConfigError("ablation grid: bad value for '" + k + "': " + e.what());
    }
  }
  if (g.seeds.empty()) throw ConfigError("ablation grid: seeds must not be empty");
  return g;
}

namespace {

struct Cell {
  std::string id;
  std::string row;
  json overrides;
  RunConfig cfg;
};

std::string weight_row_name(WeightMode m) {
  switch (m) {
    case WeightMode::ipw: return "DisMAE";
    case WeightMode::none: return "w/o weights";
    case WeightMode::random: return "Random weights";
    case WeightMode::reverse: return "Reverse weights";
  }
  return "";
}

std::string fmt_g(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%g", v);
  return buf;
}

std::vector<Cell> enumerate_cells(const RunConfig& base, const AblationGrid& grid) {
  std::vector<Cell> cells;
  for (WeightMode m : grid.weight_modes) {
    Cell c{"weights/" + to_string(m), weight_row_name(m), {{"loss.weight_mode", to_string(m)}}, base};
    c.cfg.loss.weight_mode = m;
    cells.push_back(std::move(c));
  }
  if (grid.inter_domain) {
    Cell c{"negatives/inter_domain", "Inter-domain neg.", {{"loss.negatives_scope", "inter_domain"}}, base};
    c.cfg.loss.weight_mode = WeightMode::ipw;
    c.cfg.loss.negatives_scope = NegativesScope::inter_domain;
    cells.push_back(std::move(c));
  }
  for (int d : grid.decoder_depths) {
    Cell c{"decoder_depth/" + std::to_string(d), "Decoder depth " + std::to_string(d), {{"model.decoder_depth", d}},
           base};
    c.cfg.model.decoder_depth = d;
    cells.push_back(std::move(c));
  }
  for (double r : grid.mask_ratios) {
    Cell c{"mask_ratio/" + fmt_g(r), "Mask ratio " + fmt_g(r), {{"model.mask_ratio", r}}, base};
    c.cfg.model.mask_ratio = r;
    cells.push_back(std::move(c));
  }
  return cells;
}

std::string dir_name(std::string id) {
  for (char& ch : id)
    if (ch == '/') ch = '_';
  return id;
}

}  // namespace

json run_ablation(const RunConfig& base, const AblationGrid& grid, const Workspace& ws, const fs::path& out_dir) {
  json table{{"seeds", grid.seeds}, {"cells", json::object()}};
  write_file(out_dir / "ablation.json", table.dump(2) + "\n");
  for (Cell& cell : enumerate_cells(base, grid)) {
    json runs = json::array();
    double sum_overall = 0.0, sum_average = 0.0;
    int ok = 0;
    for (std::uint64_t seed : grid.seeds) {
      RunConfig cfg = cell.cfg;
      cfg.train.seed = seed;
      cfg.eval.seed = seed;
      const fs::path run_dir = out_dir / "cells" / dir_name(cell.id) / ("seed-" + std::to_string(seed));
      try {
        cfg.validate();
        const TrainedState pre = run_pretrain(cfg, ws, run_dir / "pretrain");
        const AdaptResult adapted = run_adapt(cfg, ws, pre, run_dir / "adapt");
        const Metrics m = run_eval(cfg, ws, adapted.state, run_dir / "eval");
        runs.push_back({{"seed", seed}, {"metrics", metrics_to_json(m)}});
        sum_overall += m.overall;
        sum_average += m.average;
        ++ok;
      } catch (const std::exception& e) {
        runs.push_back({{"seed", seed}, {"error", e.what()}});
        std::fprintf(stderr, "ablation cell %s seed %llu failed: %s\n", cell.id.c_str(),
                     static_cast<unsigned long long>(seed), e.what());
      }
    }
    json entry{{"row", cell.row}, {"overrides", cell.overrides}, {"runs", runs}};
    entry["mean"] = ok > 0 ? json{{"overall", sum_overall / ok}, {"average", sum_average / ok}} : json(nullptr);
    table["cells"][cell.id] = entry;
    write_file(out_dir / "ablation.json", table.dump(2) + "\n");
  }
  return table;
}

}  // namespace dismae
