// Copyright (c) 2026, The dismae Authors
// SPDX-License-Identifier: Apache-2.0
//
// Alternating optimization: every epoch runs backbone steps with the domain
// classifier frozen; on scheduled epochs (e mod T_ad == 0, e <= E_ad) a
// classifier pass follows with all backbones frozen.

#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include "dismae/datasets.hpp"
#include "dismae/model.hpp"
#include "dismae/objectives.hpp"
#include "dismae/optim.hpp"
#include "dismae/rng.hpp"

namespace dismae {

enum class TrainMode { udg, dg };
enum class LrSchedule { constant, cosine };
enum class ClassifierPass { full, single_batch };

struct TrainConfig {
  int epochs = 30;
  int adaptive_max_epoch = 100;
  int adaptive_interval = 15;
  AdamWConfig backbone{};
  SgdConfig classifier{};
  int per_domain_batch = 16;
  std::uint64_t seed = 0;
  int checkpoint_interval = 0;  // 0: only final/
  TrainMode mode = TrainMode::udg;
  LrSchedule lr_schedule = LrSchedule::constant;
  ClassifierPass classifier_pass = ClassifierPass::full;
  double grad_clip = 1.0;

  void validate() const;
};

struct TrainedState {
  DisMae model;
  AdamW backbone_opt;
  Sgd classifier_opt;
  int epoch = 0;
  Rng rng;
  std::string fingerprint;
};

struct StepStats {
  double loss_rec = 0.0;
  double loss_con = 0.0;
  double loss_ce = 0.0;
  double loss_total = 0.0;
  double grad_norm = 0.0;
  int empty_negative_sets = 0;
  std::vector<double> propensity;  // unclamped p(true domain | s⁰) per sample
  std::vector<int> domains;
};

struct ObjectiveTerms {
  Var rec;
  Var con;
  Var total;
  double ce = 0.0;
  Mat probs;  // domain classifier softmax on s⁰, constant
  int empty_negative_sets = 0;
};

/// Records L_UDG (or L_DG) for one masked batch on `tape`. `rng` drives the
/// negative subsampling and random weights.
ObjectiveTerms record_objective(Tape& tape, const DisMae& model, const PatchGrid& grid, const MaskedTokens& masked,
                                const ImageBatch& batch, const LossConfig& loss, TrainMode mode, Rng& rng);

/// Epochs in 1..E at which the classifier trains.
std::vector<int> classifier_schedule(int epochs, int interval, int max_epoch);

class Trainer {
 public:
  Trainer(ModelConfig model, LossConfig loss, TrainConfig train);

  const ModelConfig& model_config() const { return model_; }
  const LossConfig& loss_config() const { return loss_; }
  const TrainConfig& train_config() const { return train_; }

  TrainedState init_state() const;

  /// One AdamW step on the backbones (plus the label head in dg mode); the
  /// domain classifier is read as a constant.
  StepStats backbone_step(TrainedState& state, const ImageBatch& batch, double lr) const;

  /// One pass of SGD steps on the domain classifier over s⁰ with every other
  /// parameter frozen. Throws ContractError when `epoch` is off-schedule.
  double adaptive_classifier_step(TrainedState& state, const MultiDomainDataset& data, int epoch) const;

  bool classifier_scheduled(int epoch) const;
  double learning_rate(int epoch) const;

  /// Runs epochs state.epoch+1 .. E, writing logs/ checkpoints/ final/ under
  /// run_dir. A resumed state continues its log (rows past its epoch are dropped).
  TrainedState train(const MultiDomainDataset& data, const std::filesystem::path& run_dir,
                     std::optional<TrainedState> resume = std::nullopt) const;

 private:
  GroupMask backbone_groups() const;

  ModelConfig model_;
  LossConfig loss_;
  TrainConfig train_;
};

/// Unsupervised pretraining (L_rec + λ1·L_con).
TrainedState train_udg(const Trainer& trainer, const MultiDomainDataset& data, const std::filesystem::path& run_dir,
                       std::optional<TrainedState> resume = std::nullopt);
/// Supervised variant (adds λ2·CE on s⁰); requires labels everywhere.
TrainedState train_dg(const Trainer& trainer, const MultiDomainDataset& data, const std::filesystem::path& run_dir,
                      std::optional<TrainedState> resume = std::nullopt);

// ---- checkpoints ---------------------------------------------------------------

/// manifest.json + one little-endian float64 file per named array.
void checkpoint_save(const TrainedState& state, const std::filesystem::path& dir);
/// Verifies every array hash and the config fingerprint; throws DataError
/// naming the offending array or the mismatch.
TrainedState checkpoint_load(const std::filesystem::path& dir, const ModelConfig& model, const LossConfig& loss,
                             const TrainConfig& train);

}  // namespace dismae
