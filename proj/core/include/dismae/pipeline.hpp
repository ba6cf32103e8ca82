// Copyright (c) 2026, The dismae Authors
// SPDX-License-Identifier: Apache-2.0
//
// Command bodies shared by the CLI and the end-to-end tests.

#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "dismae/config.hpp"

namespace dismae {

struct Workspace {
  MultiDomainDataset source;  // training domains, before the split
  Split split;                // of source
  MultiDomainDataset test;    // held-out domains (empty when none are configured)
};

/// Loads (generating first when data.spec is set and root has no manifest),
/// selects train/test domains and splits the source.
Workspace load_workspace(const RunConfig& cfg);

void write_resolved_config(const RunConfig& cfg, const std::filesystem::path& out_dir);

TrainedState run_pretrain(const RunConfig& cfg, const Workspace& ws, const std::filesystem::path& out_dir,
                          const std::optional<std::filesystem::path>& resume_ckpt = std::nullopt);

struct AdaptResult {
  TrainedState state;
  AdaptLog log;
  Adaptation method;
  int labeled_items = 0;
};

/// Probe or finetune on a labeled subset of the source train split. When
/// `required` is set and the protocol dispatches elsewhere, throws ConfigError.
AdaptResult run_adapt(const RunConfig& cfg, const Workspace& ws, const TrainedState& pretrained,
                      const std::filesystem::path& out_dir, std::optional<Adaptation> required = std::nullopt);

/// Metrics on the held-out domains (or the source validation split when none).
Metrics run_eval(const RunConfig& cfg, const Workspace& ws, const TrainedState& state,
                 const std::filesystem::path& out_dir);

struct AblationGrid {
  std::vector<WeightMode> weight_modes;
  bool inter_domain = false;
  std::vector<int> decoder_depths;
  std::vector<double> mask_ratios;
  std::vector<std::uint64_t> seeds;
};

/// Weight modes + inter-domain negatives, decoder depths {1,2,4,8}, mask ratios {0.5..0.9}.
AblationGrid default_ablation_grid();
AblationGrid ablation_grid_from_json(const nlohmann::json& j);

/// One pretrain → adapt → eval run per (cell, seed); failures are recorded
/// in the cell and the grid continues. Writes out_dir/ablation.json after
/// every cell and returns the final table.
nlohmann::json run_ablation(const RunConfig& base, const AblationGrid& grid, const Workspace& ws,
                            const std::filesystem::path& out_dir);

}  // namespace dismae
