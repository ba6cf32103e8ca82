// Copyright (c) 2026, The dismae Authors
// SPDX-License-Identifier: Apache-2.0

#include "dismae/model.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <string>

#include "dismae/error.hpp"

namespace dismae {

void ModelConfig::validate() const {
  auto fail = [](const std::string& m) { throw ConfigError("model: " + m); };
  if (image_size <= 0) fail("image_size must be positive");
  if (channels <= 0) fail("channels must be positive");
  if (patch_size <= 0 || image_size % patch_size != 0)
    fail("image_size (" + std::to_string(image_size) + ") not divisible by patch_size (" +
         std::to_string(patch_size) + ")");
  if (!(mask_ratio >= 0.0 && mask_ratio < 1.0)) fail("mask_ratio must lie in [0, 1)");
  if (num_heads <= 0) fail("num_heads must be positive");
  if (embed_dim <= 0 || embed_dim % num_heads != 0) fail("embed_dim not divisible by num_heads");
  if (decoder_dim <= 0 || decoder_dim % num_heads != 0) fail("decoder_dim not divisible by num_heads");
  if (embed_dim % 4 != 0) fail("embed_dim must be a multiple of 4 (sine-cosine positions)");
  if (decoder_dim % 4 != 0) fail("decoder_dim must be a multiple of 4 (sine-cosine positions)");
  if (semantic_depth < 1) fail("semantic_depth must be >= 1");
  if (variation_depth < 1) fail("variation_depth must be >= 1");
  if (decoder_depth < 1) fail("decoder_depth must be >= 1");
  if (mlp_ratio < 1) fail("mlp_ratio must be >= 1");
  if (num_domains < 2) fail("num_domains must be >= 2");
  if (num_classes < 0) fail("num_classes must be >= 0");
}

PatchGrid patchify(const ImageBatch& images, const ModelConfig& cfg) {
  if (images.size != cfg.image_size)
    throw ConfigError("patchify: image_size " + std::to_string(images.size) + " != config " +
                      std::to_string(cfg.image_size));
  if (images.channels != cfg.channels)
    throw ConfigError("patchify: channels " + std::to_string(images.channels) + " != config " +
                      std::to_string(cfg.channels));
  if (images.size % cfg.patch_size != 0)
    throw ConfigError("patchify: image_size not divisible by patch_size");
  const std::size_t expect =
      static_cast<std::size_t>(images.count) * images.size * images.size * images.channels;
  if (images.pixels.size() != expect) throw ConfigError("patchify: pixel buffer length does not match count");
  const int g = cfg.image_size / cfg.patch_size, p = cfg.patch_size, c = cfg.channels;
  PatchGrid out;
  out.batch = images.count;
  out.grid_rows = g;
  out.grid_cols = g;
  out.patch_dim = p * p * c;
  out.tokens = Mat(images.count * g * g, out.patch_dim);
  for (int n = 0; n < images.count; ++n)
    for (int gr = 0; gr < g; ++gr)
      for (int gc = 0; gc < g; ++gc) {
        auto row = out.tokens.row((n * g + gr) * g + gc);
        int k = 0;
        for (int py = 0; py < p; ++py)
          for (int px = 0; px < p; ++px)
            for (int ch = 0; ch < c; ++ch) row[k++] = images.at(n, gr * p + py, gc * p + px, ch);
      }
  return out;
}

ImageBatch unpatchify(const PatchGrid& grid, const ModelConfig& cfg) {
  const int g = cfg.image_size / cfg.patch_size, p = cfg.patch_size, c = cfg.channels;
  if (grid.grid_rows != g || grid.grid_cols != g || grid.patch_dim != p * p * c ||
      grid.tokens.rows != grid.batch * g * g || grid.tokens.cols != grid.patch_dim)
    throw ConfigError("unpatchify: grid layout inconsistent with model config");
  ImageBatch out;
  out.count = grid.batch;
  out.size = cfg.image_size;
  out.channels = c;
  out.pixels.assign(static_cast<std::size_t>(grid.batch) * out.size * out.size * c, 0.0);
  for (int n = 0; n < grid.batch; ++n)
    for (int gr = 0; gr < g; ++gr)
      for (int gc = 0; gc < g; ++gc) {
        auto row = grid.tokens.row((n * g + gr) * g + gc);
        int k = 0;
        for (int py = 0; py < p; ++py)
          for (int px = 0; px < p; ++px)
            for (int ch = 0; ch < c; ++ch) out.at(n, gr * p + py, gc * p + px, ch) = row[k++];
      }
  return out;
}

MaskPlan MaskPlan::select(std::span<const int> samples) const {
  MaskPlan out;
  out.num_patches = num_patches;
  out.len_keep = len_keep;
  for (int s : samples) {
    if (s < 0 || s >= batch()) throw ContractError("MaskPlan::select: sample index out of range");
    out.visible.push_back(visible[static_cast<std::size_t>(s)]);
    out.masked.push_back(masked[static_cast<std::size_t>(s)]);
    out.restore.push_back(restore[static_cast<std::size_t>(s)]);
  }
  return out;
}

int keep_count(int num_patches, double ratio) {
  return static_cast<int>(std::floor(num_patches * (1.0 - ratio) + 1e-9));
}

namespace {

MaskedTokens gather_visible(const PatchGrid& grid, MaskPlan plan) {
  const int L = grid.num_patches();
  MaskedTokens out;
  out.visible = Mat(grid.batch * plan.len_keep, grid.patch_dim);
  for (int n = 0; n < grid.batch; ++n)
    for (int k = 0; k < plan.len_keep; ++k) {
      auto src = grid.tokens.row(n * L + plan.visible[static_cast<std::size_t>(n)][static_cast<std::size_t>(k)]);
      std::copy(src.begin(), src.end(), out.visible.row(n * plan.len_keep + k).begin());
    }
  out.plan = std::move(plan);
  return out;
}

}  // namespace

MaskedTokens random_masking(const PatchGrid& grid, double ratio, Rng& rng) {
  if (!(ratio >= 0.0 && ratio < 1.0)) throw ConfigError("random_masking: mask ratio must lie in [0, 1)");
  const int L = grid.num_patches();
  MaskPlan plan;
  plan.num_patches = L;
  plan.len_keep = keep_count(L, ratio);
  std::vector<double> noise(static_cast<std::size_t>(L));
  std::vector<int> order(static_cast<std::size_t>(L));
  for (int n = 0; n < grid.batch; ++n) {
    for (double& v : noise) v = rng.uniform();
    std::iota(order.begin(), order.end(), 0);
    std::stable_sort(order.begin(), order.end(),
                     [&](int a, int b) { return noise[static_cast<std::size_t>(a)] < noise[static_cast<std::size_t>(b)]; });
    std::vector<int> restore(static_cast<std::size_t>(L));
    for (int r = 0; r < L; ++r) restore[static_cast<std::size_t>(order[static_cast<std::size_t>(r)])] = r;
    plan.visible.emplace_back(order.begin(), order.begin() + plan.len_keep);
    plan.masked.emplace_back(order.begin() + plan.len_keep, order.end());
    plan.restore.push_back(std::move(restore));
  }
  return gather_visible(grid, std::move(plan));
}

MaskedTokens full_view(const PatchGrid& grid) {
  const int L = grid.num_patches();
  MaskPlan plan;
  plan.num_patches = L;
  plan.len_keep = L;
  std::vector<int> ident(static_cast<std::size_t>(L));
  std::iota(ident.begin(), ident.end(), 0);
  for (int n = 0; n < grid.batch; ++n) {
    plan.visible.push_back(ident);
    plan.masked.emplace_back();
    plan.restore.push_back(ident);
  }
  return gather_visible(grid, std::move(plan));
}

Mat sincos_pos_embed(int dim, int grid_side) {
  if (dim % 4 != 0) throw ConfigError("sincos_pos_embed: dim must be a multiple of 4");
  const int quarter = dim / 4;
  Mat out(grid_side * grid_side, dim);
  for (int r = 0; r < grid_side; ++r)
    for (int c = 0; c < grid_side; ++c) {
      auto row = out.row(r * grid_side + c);
      for (int i = 0; i < quarter; ++i) {
        const double omega = 1.0 / std::pow(10000.0, static_cast<double>(i) / quarter);
        row[i] = std::sin(r * omega);
        row[quarter + i] = std::cos(r * omega);
        row[2 * quarter + i] = std::sin(c * omega);
        row[3 * quarter + i] = std::cos(c * omega);
      }
    }
  return out;
}

// ---- DisMae ----------------------------------------------------------------

DisMae::DisMae(ModelConfig cfg, std::uint64_t seed) : cfg_(cfg) {
  cfg_.validate();
  build(seed);
}

void DisMae::build(std::uint64_t seed) {
  Rng rng = Rng::derive(seed, {0x1417});
  auto weight = [&](const std::string& name, ParamGroup g, int in, int out) {
    Mat w(in, out);
    for (double& v : w.data) v = rng.trunc_normal(0.02);
    return params_.add(name, g, std::move(w), true);
  };
  auto linear = [&](const std::string& name, ParamGroup g, int in, int out, bool zero = false) {
    LinearRef l;
    l.weight = zero ? params_.add(name + ".weight", g, Mat(in, out), true) : weight(name + ".weight", g, in, out);
    l.bias = params_.add(name + ".bias", g, Mat(1, out), false);
    return l;
  };
  auto norm = [&](const std::string& name, ParamGroup g, int dim) {
    NormRef n;
    n.gain = params_.add(name + ".gain", g, Mat(1, dim, 1.0), false);
    n.shift = params_.add(name + ".shift", g, Mat(1, dim), false);
    return n;
  };
  auto token = [&](const std::string& name, ParamGroup g, int dim) {
    Mat t(1, dim);
    for (double& v : t.data) v = rng.trunc_normal(0.02);
    return params_.add(name, g, std::move(t), false);
  };
  auto block = [&](const std::string& name, ParamGroup g, int dim) {
    BlockRef b;
    b.norm1 = norm(name + ".norm1", g, dim);
    b.q = linear(name + ".attn.q", g, dim, dim);
    b.k = linear(name + ".attn.k", g, dim, dim);
    b.v = linear(name + ".attn.v", g, dim, dim);
    b.proj = linear(name + ".attn.proj", g, dim, dim);
    b.norm2 = norm(name + ".norm2", g, dim);
    b.fc1 = linear(name + ".mlp.fc1", g, dim, dim * cfg_.mlp_ratio);
    b.fc2 = linear(name + ".mlp.fc2", g, dim * cfg_.mlp_ratio, dim);
    return b;
  };
  auto encoder = [&](const std::string& name, ParamGroup g, int depth) {
    EncoderRef e;
    e.patch_embed = linear(name + ".patch_embed", g, cfg_.patch_dim(), cfg_.embed_dim);
    e.cls_token = token(name + ".cls_token", g, cfg_.embed_dim);
    for (int i = 0; i < depth; ++i) e.blocks.push_back(block(name + ".blocks." + std::to_string(i), g, cfg_.embed_dim));
    e.norm = norm(name + ".norm", g, cfg_.embed_dim);
    return e;
  };

  semantic_ = encoder("semantic", ParamGroup::semantic, cfg_.semantic_depth);
  if (cfg_.variation_branch) variation_ = encoder("variation", ParamGroup::variation, cfg_.variation_depth);

  const ParamGroup dg = ParamGroup::decoder;
  decoder_.embed = linear("decoder.embed", dg, cfg_.embed_dim, cfg_.decoder_dim);
  decoder_.mask_token = token("decoder.mask_token", dg, cfg_.decoder_dim);
  if (cfg_.variation_branch) decoder_.cond = linear("decoder.cond", dg, cfg_.embed_dim, cfg_.decoder_dim);
  for (int i = 0; i < cfg_.decoder_depth; ++i)
    decoder_.blocks.push_back(block("decoder.blocks." + std::to_string(i), dg, cfg_.decoder_dim));
  decoder_.norm = norm("decoder.norm", dg, cfg_.decoder_dim);
  decoder_.pred = linear("decoder.pred", dg, cfg_.decoder_dim, cfg_.patch_dim());

  domain_fc1_ = linear("domain_classifier.fc1", ParamGroup::domain_classifier, cfg_.embed_dim, cfg_.embed_dim);
  domain_fc2_ = linear("domain_classifier.fc2", ParamGroup::domain_classifier, cfg_.embed_dim, cfg_.num_domains, true);
  if (cfg_.num_classes > 0)
    label_head_ = linear("label_head", ParamGroup::label_head, cfg_.embed_dim, cfg_.num_classes, true);

  enc_pos_ = sincos_pos_embed(cfg_.embed_dim, cfg_.grid_side());
  dec_pos_ = sincos_pos_embed(cfg_.decoder_dim, cfg_.grid_side());
}

void DisMae::reset_label_head() {
  if (!has_label_head()) throw ContractError("label head absent: model is in unlabeled mode (num_classes = 0)");
  params_[label_head_.weight].value.fill(0.0);
  params_[label_head_.bias].value.fill(0.0);
}

Var DisMae::apply_linear(Tape& tape, Var x, const LinearRef& l) const {
  return linear(x, tape.param(params_, l.weight), tape.param(params_, l.bias));
}

Var DisMae::apply_norm(Tape& tape, Var x, const NormRef& n) const {
  return layer_norm(x, tape.param(params_, n.gain), tape.param(params_, n.shift));
}

Var DisMae::run_block(Tape& tape, Var x, const BlockRef& b, int seq_len) const {
  Var h = apply_norm(tape, x, b.norm1);
  Var a = attention(apply_linear(tape, h, b.q), apply_linear(tape, h, b.k), apply_linear(tape, h, b.v), seq_len,
                    cfg_.num_heads);
  x = add(x, apply_linear(tape, a, b.proj));
  Var m = apply_linear(tape, gelu(apply_linear(tape, apply_norm(tape, x, b.norm2), b.fc1)), b.fc2);
  return add(x, m);
}

Var DisMae::encode(Tape& tape, const EncoderRef& enc, const Mat& visible, const MaskPlan& plan) const {
  const int n = plan.batch(), keep = plan.len_keep, H = cfg_.embed_dim;
  if (visible.rows != n * keep || visible.cols != cfg_.patch_dim())
    throw ContractError("encoder: visible tokens do not match the mask plan");
  const int T = 1 + keep;
  Mat pos(n * keep, H);
  for (int s = 0; s < n; ++s)
    for (int k = 0; k < keep; ++k) {
      auto src = enc_pos_.row(plan.visible[static_cast<std::size_t>(s)][static_cast<std::size_t>(k)]);
      std::copy(src.begin(), src.end(), pos.row(s * keep + k).begin());
    }
  Var x = add_const(apply_linear(tape, tape.constant(visible), enc.patch_embed), pos);
  std::vector<int> idx;
  idx.reserve(static_cast<std::size_t>(n * T));
  for (int s = 0; s < n; ++s) {
    idx.push_back(0);
    for (int k = 0; k < keep; ++k) idx.push_back(1 + s * keep + k);
  }
  const Var parts[] = {tape.param(params_, enc.cls_token), x};
  Var seq = gather_rows(concat_rows(parts), std::move(idx));
  for (const BlockRef& b : enc.blocks) seq = run_block(tape, seq, b, T);
  return apply_norm(tape, seq, enc.norm);
}

DisMae::SemanticOutput DisMae::encode_semantic(Tape& tape, const Mat& visible, const MaskPlan& plan) const {
  SemanticOutput out;
  out.seq_len = 1 + plan.len_keep;
  out.tokens = encode(tape, semantic_, visible, plan);
  std::vector<int> cls_rows;
  for (int s = 0; s < plan.batch(); ++s) cls_rows.push_back(s * out.seq_len);
  out.cls = gather_rows(out.tokens, std::move(cls_rows));
  return out;
}

Var DisMae::encode_variation(Tape& tape, const Mat& visible, const MaskPlan& plan) const {
  if (!cfg_.variation_branch) throw ContractError("encode_variation: variation branch disabled");
  Var seq = encode(tape, variation_, visible, plan);
  std::vector<int> cls_rows;
  for (int s = 0; s < plan.batch(); ++s) cls_rows.push_back(s * (1 + plan.len_keep));
  return gather_rows(seq, std::move(cls_rows));
}

Var DisMae::decode(Tape& tape, Var semantic_tokens, const Var* v0, const MaskPlan& plan) const {
  const int n = plan.batch(), keep = plan.len_keep, L = plan.num_patches, D = cfg_.decoder_dim;
  const int T_in = 1 + keep;
  if (semantic_tokens.rows() != n * T_in || semantic_tokens.cols() != cfg_.embed_dim)
    throw ContractError("decode: semantic tokens do not match the mask plan");
  if (L != cfg_.num_patches()) throw ContractError("decode: plan patch count differs from model");
  const bool conditioned = cfg_.variation_branch;
  if (conditioned && v0 == nullptr) throw ContractError("decode: variation conditioning required");
  if (conditioned && (v0->rows() != n || v0->cols() != cfg_.embed_dim))
    throw ContractError("decode: batch size of semantic tokens (" + std::to_string(n) +
                        ") and variation vectors (" + std::to_string(v0->rows()) + ") differ");

  Var x = apply_linear(tape, semantic_tokens, decoder_.embed);
  std::vector<Var> parts{x, tape.param(params_, decoder_.mask_token)};
  if (conditioned) parts.push_back(apply_linear(tape, *v0, decoder_.cond));
  const int mask_row = n * T_in;
  const int cond_base = mask_row + 1;
  const int S = 1 + L + (conditioned ? 1 : 0);

  std::vector<int> idx;
  idx.reserve(static_cast<std::size_t>(n * S));
  Mat pos(n * S, D);
  for (int s = 0; s < n; ++s) {
    idx.push_back(s * T_in);
    const auto& restore = plan.restore[static_cast<std::size_t>(s)];
    for (int p = 0; p < L; ++p) {
      const int rank = restore[static_cast<std::size_t>(p)];
      idx.push_back(rank < keep ? s * T_in + 1 + rank : mask_row);
      auto src = dec_pos_.row(p);
      std::copy(src.begin(), src.end(), pos.row(s * S + 1 + p).begin());
    }
    if (conditioned) idx.push_back(cond_base + s);
  }
  Var seq = add_const(gather_rows(concat_rows(parts), std::move(idx)), pos);
  for (const BlockRef& b : decoder_.blocks) seq = run_block(tape, seq, b, S);
  std::vector<int> patch_rows;
  patch_rows.reserve(static_cast<std::size_t>(n * L));
  for (int s = 0; s < n; ++s)
    for (int p = 0; p < L; ++p) patch_rows.push_back(s * S + 1 + p);
  Var out = apply_norm(tape, gather_rows(seq, std::move(patch_rows)), decoder_.norm);
  return apply_linear(tape, out, decoder_.pred);
}

Var DisMae::domain_logits(Tape& tape, Var s0) const {
  if (s0.cols() != cfg_.embed_dim) throw ContractError("classify_domain: s0 width mismatch");
  return apply_linear(tape, gelu(apply_linear(tape, s0, domain_fc1_)), domain_fc2_);
}

Var DisMae::label_logits(Tape& tape, Var s0) const {
  if (!has_label_head()) throw ContractError("label head absent: model is in unlabeled mode (num_classes = 0)");
  if (s0.cols() != cfg_.embed_dim) throw ContractError("classify_label: s0 width mismatch");
  return apply_linear(tape, s0, label_head_);
}

Mat DisMae::classify_domain(const Mat& s0) const {
  Tape tape;
  return softmax_rows(domain_logits(tape, tape.constant(s0)).value());
}

Mat DisMae::classify_label(const Mat& s0) const {
  Tape tape;
  return label_logits(tape, tape.constant(s0)).value();
}

Mat DisMae::semantic_features(const PatchGrid& grid) const {
  Tape tape;
  MaskedTokens full = full_view(grid);
  return encode_semantic(tape, full.visible, full.plan).cls.value();
}

Mat DisMae::variation_features(const PatchGrid& grid) const {
  Tape tape;
  MaskedTokens full = full_view(grid);
  return encode_variation(tape, full.visible, full.plan).value();
}

}  // namespace dismae
