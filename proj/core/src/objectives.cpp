// Copyright (c) 2026, The dismae Authors
// SPDX-License-Identifier: Apache-2.0

#include "dismae/objectives.hpp"

#include <algorithm>
#include <cmath>

#include "dismae/error.hpp"

namespace dismae {

WeightMode parse_weight_mode(std::string_view s) {
  if (s == "ipw") return WeightMode::ipw;
  if (s == "none") return WeightMode::none;
  if (s == "random") return WeightMode::random;
  if (s == "reverse") return WeightMode::reverse;
  throw ConfigError("unknown weight_mode '" + std::string(s) + "' (expected ipw|none|random|reverse)");
}

std::string to_string(WeightMode m) {
  switch (m) {
    case WeightMode::ipw: return "ipw";
    case WeightMode::none: return "none";
    case WeightMode::random: return "random";
    case WeightMode::reverse: return "reverse";
  }
  return "?";
}

NegativesScope parse_negatives_scope(std::string_view s) {
  if (s == "intra_domain") return NegativesScope::intra_domain;
  if (s == "inter_domain") return NegativesScope::inter_domain;
  throw ConfigError("unknown negatives_scope '" + std::string(s) + "' (expected intra_domain|inter_domain)");
}

std::string to_string(NegativesScope s) {
  return s == NegativesScope::intra_domain ? "intra_domain" : "inter_domain";
}

void LossConfig::validate(int num_domains) const {
  if (!(gamma > 0.0)) throw ConfigError("loss: gamma must be > 0");
  if (!(tau > 0.0)) throw ConfigError("loss: tau must be > 0");
  if (!(lambda1 >= 0.0)) throw ConfigError("loss: lambda1 must be >= 0");
  if (!(lambda2 >= 0.0)) throw ConfigError("loss: lambda2 must be >= 0");
  if (!(p_clamp_min > 0.0) || p_clamp_min > 1.0 / num_domains + 1e-12)
    throw ConfigError("loss: p_clamp_min must lie in (0, 1/K]");
  if (max_negatives < 0) throw ConfigError("loss: max_negatives must be >= 0");
}

std::vector<SwapPairing> sample_pairings(std::span<const int> domains, const LossConfig& cfg, Rng& rng) {
  const int n = static_cast<int>(domains.size());
  std::vector<SwapPairing> out;
  out.reserve(domains.size());
  for (int i = 0; i < n; ++i) {
    SwapPairing p;
    p.anchor = i;
    std::vector<int> cand;
    for (int j = 0; j < n; ++j) {
      if (j == i) continue;
      const bool same = domains[static_cast<std::size_t>(j)] == domains[static_cast<std::size_t>(i)];
      if (same == (cfg.negatives_scope == NegativesScope::intra_domain)) cand.push_back(j);
    }
    if (cfg.max_negatives > 0 && static_cast<int>(cand.size()) > cfg.max_negatives) {
      // partial Fisher-Yates: first max_negatives slots become a uniform draw
      for (int k = 0; k < cfg.max_negatives; ++k) {
        const int r = k + rng.uniform_int(static_cast<int>(cand.size()) - k);
        std::swap(cand[static_cast<std::size_t>(k)], cand[static_cast<std::size_t>(r)]);
      }
      cand.resize(static_cast<std::size_t>(cfg.max_negatives));
    }
    p.partners = std::move(cand);
    out.push_back(std::move(p));
  }
  return out;
}

Var per_sample_recon_error(Var pred, const Mat& target, const MaskPlan& plan) {
  for (const auto& m : plan.masked)
    if (m.empty()) throw ConfigError("reconstruction error needs masked patches: use mask_ratio r > 0 for training");
  return masked_rmse(pred, target, plan.num_patches, plan.masked);
}

Var gamma_recon_loss(Var distances, double gamma) { return mean_all(hinge(distances, gamma)); }

Var similarity(Var distances, double gamma) { return scale(hinge(distances, gamma), -1.0); }

SwapReconstructions swap_reconstructions(Tape& tape, const DisMae& model, Var semantic_tokens, Var v0,
                                         const MaskPlan& plan, std::span<const SwapPairing> pairings) {
  const int B = plan.batch();
  const int T = 1 + plan.len_keep;
  SwapReconstructions out;
  for (int i = 0; i < B; ++i) {
    out.anchor_of.push_back(i);
    out.partner_of.push_back(i);
  }
  out.groups.assign(static_cast<std::size_t>(B), {});
  for (int i = 0; i < B; ++i) out.groups[static_cast<std::size_t>(i)].push_back(i);
  for (const SwapPairing& p : pairings) {
    if (p.anchor < 0 || p.anchor >= B) throw ContractError("swap_reconstructions: anchor index out of range");
    for (int j : p.partners) {
      if (j < 0 || j >= B) throw ContractError("swap_reconstructions: partner index out of range");
      out.groups[static_cast<std::size_t>(p.anchor)].push_back(static_cast<int>(out.anchor_of.size()));
      out.anchor_of.push_back(p.anchor);
      out.partner_of.push_back(j);
    }
  }
  std::vector<int> token_rows;
  token_rows.reserve(out.anchor_of.size() * static_cast<std::size_t>(T));
  for (int a : out.anchor_of)
    for (int t = 0; t < T; ++t) token_rows.push_back(a * T + t);
  Var sem = gather_rows(semantic_tokens, std::move(token_rows));
  Var cond = gather_rows(v0, out.partner_of);
  out.plan = plan.select(out.anchor_of);
  out.predictions = model.decode(tape, sem, &cond, out.plan);
  return out;
}

Var contrastive_terms(Var sims, const std::vector<std::vector<int>>& groups, double tau) {
  return info_nce(sims, groups, tau);
}

Var adaptive_contrastive_loss(Var terms, std::span<const double> weights) {
  return weighted_mean(terms, weights);
}

Var udg_objective(Var rec, Var con, double lambda1) {
  if (!(lambda1 >= 0.0)) throw ConfigError("lambda1 must be >= 0");
  return add_scaled(rec, con, lambda1);
}

Var dg_objective(Var rec, Var con, Var logits, std::span<const int> labels, double lambda1, double lambda2) {
  if (labels.empty()) throw ConfigError("dg objective requires class labels; use the udg mode for unlabeled data");
  if (!(lambda2 >= 0.0)) throw ConfigError("lambda2 must be >= 0");
  return add_scaled(udg_objective(rec, con, lambda1), cross_entropy(logits, labels), lambda2);
}

std::vector<double> domain_propensity(const Mat& probs, std::span<const int> domains, double p_clamp_min) {
  if (static_cast<std::size_t>(probs.rows) != domains.size())
    throw ContractError("domain_propensity: row count differs from domain count");
  std::vector<double> p;
  p.reserve(domains.size());
  for (int i = 0; i < probs.rows; ++i) {
    const int d = domains[static_cast<std::size_t>(i)];
    if (d < 0 || d >= probs.cols) throw ContractError("domain_propensity: invalid domain index " + std::to_string(d));
    p.push_back(std::max(probs(i, d), p_clamp_min));
  }
  return p;
}

std::vector<double> adaptive_weights(std::span<const double> p, WeightMode mode, int num_domains, Rng& rng) {
  std::vector<double> w;
  w.reserve(p.size());
  for (double v : p) {
    switch (mode) {
      case WeightMode::ipw: w.push_back(1.0 / v); break;
      case WeightMode::none: w.push_back(1.0); break;
      case WeightMode::random: w.push_back(rng.uniform(1.0, static_cast<double>(num_domains))); break;
      case WeightMode::reverse: w.push_back(v); break;
    }
  }
  return w;
}

// ---- plain-value forms ---------------------------------------------------------

namespace {

Var column(Tape& t, std::span<const double> v) {
  Mat m(static_cast<int>(v.size()), 1);
  std::copy(v.begin(), v.end(), m.data.begin());
  return t.constant(std::move(m));
}

}  // namespace

std::vector<double> per_sample_recon_error(const Mat& pred, const Mat& target, const MaskPlan& plan) {
  Tape t;
  return per_sample_recon_error(t.constant(pred), target, plan).value().data;
}

double gamma_recon_loss(std::span<const double> distances, double gamma) {
  if (!(gamma > 0.0)) throw ConfigError("gamma must be > 0");
  Tape t;
  return gamma_recon_loss(column(t, distances), gamma).scalar();
}

double similarity(double distance, double gamma) {
  Tape t;
  return similarity(t.constant(Mat(1, 1, distance)), gamma).scalar();
}

double contrastive_term(double s_pos, std::span<const double> s_neg, double tau, int* empty_sets) {
  if (s_neg.empty() && empty_sets != nullptr) ++*empty_sets;
  std::vector<double> all{s_pos};
  all.insert(all.end(), s_neg.begin(), s_neg.end());
  std::vector<int> grp(all.size());
  for (std::size_t i = 0; i < grp.size(); ++i) grp[i] = static_cast<int>(i);
  Tape t;
  return contrastive_terms(column(t, all), {grp}, tau).scalar();
}

double adaptive_contrastive_loss(std::span<const double> terms, std::span<const double> weights) {
  Tape t;
  return adaptive_contrastive_loss(column(t, terms), weights).scalar();
}

double udg_objective(double rec, double con, double lambda1) {
  Tape t;
  return udg_objective(t.constant(Mat(1, 1, rec)), t.constant(Mat(1, 1, con)), lambda1).scalar();
}

double dg_objective(double rec, double con, const Mat& logits, std::span<const int> labels, double lambda1,
                    double lambda2) {
  Tape t;
  return dg_objective(t.constant(Mat(1, 1, rec)), t.constant(Mat(1, 1, con)), t.constant(logits), labels, lambda1,
                      lambda2)
      .scalar();
}

}  // namespace dismae
