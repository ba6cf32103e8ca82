// Copyright (c) 2026, The dismae Authors
// SPDX-License-Identifier: Apache-2.0
//
// Downstream protocol: labeled-subset selection, linear probe vs. full
// finetune dispatch, Overall/Average accuracy, and the domain-probe
// diagnostic used to check what s⁰ and v⁰ encode.

#pragma once

#include <cstdint>
#include <map>
#include <span>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "dismae/datasets.hpp"
#include "dismae/trainer.hpp"

namespace dismae {

struct Metrics {
  double overall = 0.0;
  double average = 0.0;
  std::map<std::string, double> per_domain;
  std::map<std::string, int> counts;
};

/// overall = Σ correct / Σ n; average = mean of per-domain accuracies.
Metrics compute_metrics(std::span<const int> predictions, std::span<const int> labels, std::span<const int> domains,
                        const std::vector<std::string>& domain_names);
nlohmann::json metrics_to_json(const Metrics& m);

struct ProbeConfig {
  int batch_size = 16;
  int epochs = 100;
  double momentum = 0.9;
  double weight_decay = 0.0;
  double lr_multiplier = 1.0;
};

struct FinetuneConfig {
  int batch_size = 16;
  int epochs = 50;
  double weight_decay = 0.05;
  double lr_multiplier = 1.0;
};

struct ProtocolConfig {
  double label_fraction = 0.05;
  double probe_threshold = 0.10;
  ProbeConfig probe{};
  FinetuneConfig finetune{};
  std::uint64_t seed = 0;

  void validate() const;
};

enum class Adaptation { linear_probe, full_finetune };
/// fraction < threshold → linear probe; otherwise (boundary included) finetune.
Adaptation dispatch(double label_fraction, double threshold);

/// Reference (lr, batch) pairs for the downstream stage, keyed by label
/// fraction; desk runs scale lr by batch_size / reference batch.
struct ReferenceLr {
  double lr;
  int batch;
};
ReferenceLr reference_lr(double label_fraction);

/// Stratified by (domain, class): round(fraction·N) items, at least one per stratum.
MultiDomainDataset select_labeled_subset(const MultiDomainDataset& data, double fraction, std::uint64_t seed);

struct AdaptLog {
  double lr = 0.0;
  std::string lr_rule;
  std::vector<double> epoch_loss;
};

/// Trains only the label head on frozen full-view s⁰.
AdaptLog linear_probe(TrainedState& state, const MultiDomainDataset& labeled, const ProtocolConfig& cfg);
/// Trains the semantic encoder and label head; variation encoder, decoder
/// and domain classifier stay untouched.
TrainedState full_finetune(const TrainedState& state, const MultiDomainDataset& labeled, const ProtocolConfig& cfg,
                           AdaptLog* log = nullptr);

/// argmax of the label head over full-view s⁰.
std::vector<int> predict_labels(const DisMae& model, const MultiDomainDataset& data);
Metrics evaluate(const DisMae& model, const MultiDomainDataset& test);

/// Fresh two-layer probe (hidden width = representation width) trained on a
/// seeded stratified 80% split; returns held-out accuracy.
double domain_probe(const Mat& representations, std::span<const int> domains, std::uint64_t seed);

/// Full-view features for every item of a dataset, in item order.
Mat dataset_semantic_features(const DisMae& model, const MultiDomainDataset& data);
Mat dataset_variation_features(const DisMae& model, const MultiDomainDataset& data);

}  // namespace dismae
