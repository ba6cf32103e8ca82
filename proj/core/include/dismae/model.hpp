// Copyright (c) 2026, The dismae Authors
// SPDX-License-Identifier: Apache-2.0
//
// Patch handling, random masking, the dual-branch encoders, the conditioned
// decoder and the two classifier heads.

#pragma once

#include <cstdint>
#include <optional>
#include <span>
#include <vector>

#include "dismae/autograd.hpp"
#include "dismae/rng.hpp"
#include "dismae/tensor.hpp"

namespace dismae {

struct ModelConfig {
  int image_size = 16;
  int channels = 3;
  int patch_size = 4;
  int embed_dim = 32;
  int semantic_depth = 4;
  int variation_depth = 2;
  int decoder_depth = 1;
  int decoder_dim = 32;
  int num_heads = 4;
  int mlp_ratio = 4;
  double mask_ratio = 0.8;
  int num_domains = 3;
  int num_classes = 10;
  /// false gives the single-encoder masked-autoencoder baseline.
  bool variation_branch = true;

  int grid_side() const { return image_size / patch_size; }
  int num_patches() const { return grid_side() * grid_side(); }
  int patch_dim() const { return patch_size * patch_size * channels; }
  /// Throws ConfigError naming the first violated invariant.
  void validate() const;
};

/// Pixel images in [0,1], layout [n][y][x][c].
struct ImageBatch {
  int count = 0;
  int size = 0;
  int channels = 0;
  std::vector<double> pixels;
  std::vector<int> domains;
  std::vector<int> labels;  // empty in unlabeled mode

  double& at(int n, int y, int x, int c) {
    return pixels[((static_cast<std::size_t>(n) * size + y) * size + x) * channels + c];
  }
  double at(int n, int y, int x, int c) const {
    return pixels[((static_cast<std::size_t>(n) * size + y) * size + x) * channels + c];
  }
};

struct PatchGrid {
  int batch = 0;
  int grid_rows = 0;
  int grid_cols = 0;
  int patch_dim = 0;
  Mat tokens;  // [batch · L × patch_dim], row-major by patch position

  int num_patches() const { return grid_rows * grid_cols; }
};

PatchGrid patchify(const ImageBatch& images, const ModelConfig& cfg);
/// Pixels only; domains/labels are left empty.
ImageBatch unpatchify(const PatchGrid& grid, const ModelConfig& cfg);

struct MaskPlan {
  int num_patches = 0;
  int len_keep = 0;
  std::vector<std::vector<int>> visible;  // per sample, in keep order
  std::vector<std::vector<int>> masked;
  std::vector<std::vector<int>> restore;  // restore[n][patch] = rank in shuffled order

  int batch() const { return static_cast<int>(visible.size()); }
  /// Plan restricted to (and reordered by) the given samples; duplicates allowed.
  MaskPlan select(std::span<const int> samples) const;
};

struct MaskedTokens {
  Mat visible;  // [batch · len_keep × patch_dim]
  MaskPlan plan;
};

/// floor(L·(1 − r)), guarded against representation error just below an integer.
int keep_count(int num_patches, double ratio);

MaskedTokens random_masking(const PatchGrid& grid, double ratio, Rng& rng);
/// Every patch visible, identity order (the r = 0 inference path).
MaskedTokens full_view(const PatchGrid& grid);

/// Fixed 2-D sine-cosine table, [grid_side² × dim].
Mat sincos_pos_embed(int dim, int grid_side);

class DisMae {
 public:
  struct LinearRef {
    int weight = -1;
    int bias = -1;
  };
  struct NormRef {
    int gain = -1;
    int shift = -1;
  };
  struct BlockRef {
    NormRef norm1;
    LinearRef q, k, v, proj;
    NormRef norm2;
    LinearRef fc1, fc2;
  };
  struct EncoderRef {
    LinearRef patch_embed;
    int cls_token = -1;
    std::vector<BlockRef> blocks;
    NormRef norm;
  };
  struct DecoderRef {
    LinearRef embed;
    int mask_token = -1;
    LinearRef cond;
    std::vector<BlockRef> blocks;
    NormRef norm;
    LinearRef pred;
  };

  struct SemanticOutput {
    Var tokens;  // [N · (1 + len_keep) × H], row 0 of each sample is [cls]
    Var cls;     // [N × H]
    int seq_len = 0;
  };

  DisMae(ModelConfig cfg, std::uint64_t seed);

  const ModelConfig& config() const { return cfg_; }
  const ParameterStore& params() const { return params_; }
  ParameterStore& params() { return params_; }
  bool has_label_head() const { return label_head_.weight >= 0; }

  SemanticOutput encode_semantic(Tape& tape, const Mat& visible, const MaskPlan& plan) const;
  /// [N × H] variation summary v⁰.
  Var encode_variation(Tape& tape, const Mat& visible, const MaskPlan& plan) const;
  /// Predicted patches [N · L × P] for semantic tokens conditioned on v0
  /// (null only when the variation branch is disabled).
  Var decode(Tape& tape, Var semantic_tokens, const Var* v0, const MaskPlan& plan) const;
  Var domain_logits(Tape& tape, Var s0) const;
  Var label_logits(Tape& tape, Var s0) const;

  /// Softmax domain probabilities for constant s⁰ rows.
  Mat classify_domain(const Mat& s0) const;
  /// Class logits for constant s⁰ rows.
  Mat classify_label(const Mat& s0) const;

  /// s⁰ for full (unmasked) images, no gradient.
  Mat semantic_features(const PatchGrid& grid) const;
  Mat variation_features(const PatchGrid& grid) const;

  /// Re-draw the label head (zero weights), e.g. before a fresh linear probe.
  void reset_label_head();

 private:
  void build(std::uint64_t seed);
  Var run_block(Tape& tape, Var x, const BlockRef& b, int seq_len) const;
  Var encode(Tape& tape, const EncoderRef& enc, const Mat& visible, const MaskPlan& plan) const;
  Var apply_linear(Tape& tape, Var x, const LinearRef& l) const;
  Var apply_norm(Tape& tape, Var x, const NormRef& n) const;

  ModelConfig cfg_;
  ParameterStore params_;
  EncoderRef semantic_;
  EncoderRef variation_;
  DecoderRef decoder_;
  LinearRef domain_fc1_, domain_fc2_;
  LinearRef label_head_;
  Mat enc_pos_;
  Mat dec_pos_;
};

}  // namespace dismae
