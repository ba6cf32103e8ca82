// Copyright (c) 2026, The dismae Authors
// SPDX-License-Identifier: Apache-2.0
//
// Figure-style emitters: swap-reconstruction grids, propensity tracking and
// embedding export with a PCA projection.

#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "dismae/datasets.hpp"
#include "dismae/model.hpp"
#include "dismae/png_io.hpp"

namespace dismae {

struct SwapGrid {
  Image8 image;
  /// cells[i][j]: predicted patches [L × P] for decode(s_rows[i], v0_cols[j]).
  std::vector<std::vector<Mat>> cells;
};

/// Each item gets one mask drawn from (seed, dataset index); s and v⁰ of an
/// item both come from that masked view, so cell (i, i) is the plain
/// reconstruction of row item i.
SwapGrid render_swap_grid(const DisMae& model, const MultiDomainDataset& data, const std::vector<int>& rows,
                          const std::vector<int>& cols, std::uint64_t seed, int scale = 4);

/// Resolves ids (dataset-relative paths) to indices; throws DataError on unknown ids.
std::vector<int> resolve_ids(const MultiDomainDataset& data, const std::vector<std::string>& ids);

struct ScoreSeries {
  std::vector<int> epochs;
  std::vector<std::string> domains;
  std::vector<std::vector<double>> mean_p;  // [epoch][domain]
};

/// Reads the propensity/<domain> series of logs/scalars.csv.
ScoreSeries read_score_series(const std::filesystem::path& run_dir);
std::string score_series_csv(const ScoreSeries& s);
/// Line per domain plus a dashed reference at 1/K.
Image8 plot_score_series(const ScoreSeries& s, int width = 480, int height = 320);

/// Header id,domain,label,dim0..dim{H-1}; label is empty for unlabeled data.
std::string embedding_csv(const MultiDomainDataset& data, const Mat& embeddings);

struct PcaResult {
  Mat coords;       // [n × dims]
  Mat components;   // [dims × H], unit rows
  std::vector<double> explained;  // variance fraction per component
};

/// Centers, keeps the top components, and flips signs so each component's
/// largest-magnitude entry is positive. Needs at least as many samples as dims.
PcaResult pca_project(const Mat& x, int dims = 2);

}  // namespace dismae
