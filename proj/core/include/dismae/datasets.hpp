// Copyright (c) 2026, The dismae Authors
// SPDX-License-Identifier: Apache-2.0
//
// Synthetic factored multi-domain data (glyph = class, palette = domain),
// image-folder ingestion, stratified splits and domain-balanced batching.

#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <vector>

#include "dismae/model.hpp"

namespace dismae {

using Rgb = std::array<double, 3>;

struct PaletteSpec {
  std::string name;
  std::vector<Rgb> foreground;
  std::vector<Rgb> background;
  bool texture = false;
};

struct FactorSpec {
  int num_classes = 10;
  std::vector<PaletteSpec> domains;
  int samples_per_class_per_domain = 20;
  int image_size = 16;
  double noise_std = 0.02;
  std::uint64_t seed = 0;

  /// Throws ConfigError; palettes of different domains must keep every
  /// color pair at least 0.2 apart in some channel.
  void validate() const;
};

/// Three source palettes plus one held-out palette ("violet").
FactorSpec default_factor_spec();

/// Minimum channel separation between palettes of distinct domains.
inline constexpr double kPaletteSeparation = 0.2;

struct MultiDomainDataset {
  std::vector<std::string> domain_names;  // index → name
  std::vector<std::string> class_names;   // empty when unlabeled
  int image_size = 0;
  int channels = 3;
  std::vector<std::string> ids;  // path relative to the dataset root
  std::vector<int> domains;
  std::vector<int> labels;       // empty when unlabeled
  std::vector<double> pixels;    // [n][y][x][c] in [0,1]
  int skipped_files = 0;

  int size() const { return static_cast<int>(ids.size()); }
  int num_domains() const { return static_cast<int>(domain_names.size()); }
  bool labeled() const { return !labels.empty(); }

  ImageBatch batch(std::span<const int> indices) const;
  MultiDomainDataset subset(std::span<const int> indices) const;
  /// Keeps only the named domains, re-indexed by lexicographic rank among them.
  MultiDomainDataset select_domains(std::vector<std::string> names) const;
  std::vector<int> indices_of_domain(int d) const;
};

/// 5×7 bitmap for digit glyph c (row-major, 1 = ink).
const std::array<std::uint8_t, 35>& glyph_bitmap(int c);

/// Renders root/<domain>/<class>/NNNN.png and root/manifest.json.
MultiDomainDataset generate_factored_dataset(const FactorSpec& spec, const std::filesystem::path& root);

/// root/<domain>/[<class>/]*.png; indices are lexicographic ranks of names.
MultiDomainDataset load_image_folders(const std::filesystem::path& root, bool labeled);

struct Split {
  MultiDomainDataset train;
  MultiDomainDataset val;
  std::vector<int> train_indices;
  std::vector<int> val_indices;
};

/// Stratified by (domain, class when labeled).
Split split_train_val(const MultiDomainDataset& data, double val_fraction, std::uint64_t seed);

/// Each batch = per_domain_batch items from every domain, in domain order.
std::vector<std::vector<int>> domain_balanced_batches(const MultiDomainDataset& data, int per_domain_batch,
                                                      std::uint64_t seed, int epoch);

}  // namespace dismae
