// Copyright (c) 2026, The dismae Authors
// SPDX-License-Identifier: Apache-2.0
//
// Loss terms of the pretraining objective: the margin-constrained
// reconstruction loss, the swap-based intra-domain contrastive loss with
// propensity reweighting, and the supervised extension.
//
// Each operation exists in two forms. The Var overloads are recorded on a
// tape and used by the trainer; the plain overloads evaluate the very same
// tape path on constants and are what the worked examples exercise.

#pragma once

#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "dismae/autograd.hpp"
#include "dismae/model.hpp"
#include "dismae/rng.hpp"

namespace dismae {

enum class WeightMode { ipw, none, random, reverse };
enum class NegativesScope { intra_domain, inter_domain };

/// Exact config tokens: "ipw", "none", "random", "reverse".
WeightMode parse_weight_mode(std::string_view s);
std::string to_string(WeightMode m);
/// Exact config tokens: "intra_domain", "inter_domain".
NegativesScope parse_negatives_scope(std::string_view s);
std::string to_string(NegativesScope s);

struct LossConfig {
  double gamma = 0.008;
  double tau = 0.4;
  double lambda1 = 1e-3;
  double lambda2 = 0.0;
  WeightMode weight_mode = WeightMode::ipw;
  double p_clamp_min = 0.05;
  int max_negatives = 8;  // 0 = every eligible in-batch sample
  NegativesScope negatives_scope = NegativesScope::intra_domain;

  void validate(int num_domains) const;
};

struct SwapPairing {
  int anchor = 0;
  std::vector<int> partners;
};

/// Negative partners per anchor: same-domain samples (or other-domain ones
/// for the inter-domain ablation), anchor excluded, subsampled uniformly
/// without replacement down to max_negatives.
std::vector<SwapPairing> sample_pairings(std::span<const int> domains, const LossConfig& cfg, Rng& rng);

// ---- differentiable forms ----------------------------------------------------

/// Per-sample RMSE over masked-patch pixels, [N×1]. Throws when nothing is masked.
Var per_sample_recon_error(Var pred, const Mat& target, const MaskPlan& plan);
/// mean_i max(d_i − γ, 0)
Var gamma_recon_loss(Var distances, double gamma);
/// −max(d − γ, 0), elementwise.
Var similarity(Var distances, double gamma);

struct SwapReconstructions {
  Var predictions;      // [(B + Σ|J|) · L × P]
  MaskPlan plan;        // anchor plan per reconstruction row block
  std::vector<int> anchor_of;   // anchor sample of each reconstruction
  std::vector<int> partner_of;  // variation donor of each reconstruction
  /// Per anchor: reconstruction indices, the unswapped x'_ii first.
  std::vector<std::vector<int>> groups;
};

/// Decodes every anchor once with its own v⁰ (rows 0..B−1) and once per
/// partner with the partner's v⁰, always under the anchor's mask plan.
SwapReconstructions swap_reconstructions(Tape& tape, const DisMae& model, Var semantic_tokens, Var v0,
                                         const MaskPlan& plan, std::span<const SwapPairing> pairings);

/// InfoNCE per anchor over similarity column sims; groups as above. [A×1]
Var contrastive_terms(Var sims, const std::vector<std::vector<int>>& groups, double tau);
/// mean_i w_i · l_i
Var adaptive_contrastive_loss(Var terms, std::span<const double> weights);
/// L_rec + λ1 · L_con
Var udg_objective(Var rec, Var con, double lambda1);
/// L_rec + λ1 · L_con + λ2 · CE(labels, logits). Throws when labels are absent.
Var dg_objective(Var rec, Var con, Var logits, std::span<const int> labels, double lambda1, double lambda2);

// ---- constants (no gradient) ---------------------------------------------------

/// p_i = probs[i][d_i], clamped below at p_clamp_min.
std::vector<double> domain_propensity(const Mat& probs, std::span<const int> domains, double p_clamp_min);
/// ipw: 1/p; none: 1; random: U[1, K]; reverse: p.
std::vector<double> adaptive_weights(std::span<const double> p, WeightMode mode, int num_domains, Rng& rng);

// ---- plain-value forms -----------------------------------------------------------

std::vector<double> per_sample_recon_error(const Mat& pred, const Mat& target, const MaskPlan& plan);
double gamma_recon_loss(std::span<const double> distances, double gamma);
double similarity(double distance, double gamma);
/// −log[e^{s⁺/τ} / (e^{s⁺/τ} + Σ e^{s⁻/τ})]; 0 with *empty_sets incremented
/// when there are no negatives.
double contrastive_term(double s_pos, std::span<const double> s_neg, double tau, int* empty_sets = nullptr);
double adaptive_contrastive_loss(std::span<const double> terms, std::span<const double> weights);
double udg_objective(double rec, double con, double lambda1);
double dg_objective(double rec, double con, const Mat& logits, std::span<const int> labels, double lambda1,
                    double lambda2);

}  // namespace dismae
