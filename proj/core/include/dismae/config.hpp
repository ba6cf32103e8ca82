// Copyright (c) 2026, The dismae Authors
// SPDX-License-Identifier: Apache-2.0
//
// JSON run configuration. Every section is read strictly: unknown keys and
// wrong types are ConfigErrors, missing keys take the documented defaults.

#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include <nlohmann/json.hpp>

#include "dismae/datasets.hpp"
#include "dismae/evaluation.hpp"
#include "dismae/model.hpp"
#include "dismae/objectives.hpp"
#include "dismae/trainer.hpp"

namespace dismae {

struct DataConfig {
  std::string root;
  bool labeled = true;
  std::vector<std::string> train_domains;  // empty: every domain not in test_domains
  std::vector<std::string> test_domains;
  double val_fraction = 0.1;
  std::uint64_t split_seed = 0;
  /// When set and root holds no manifest yet, the dataset is generated there.
  std::optional<FactorSpec> spec;
};

struct RunConfig {
  ModelConfig model{};
  LossConfig loss{};
  TrainConfig train{};
  DataConfig data{};
  ProtocolConfig eval{};
  std::string output_dir = "runs/default";

  void validate() const;
};

TrainMode parse_train_mode(std::string_view s);
std::string to_string(TrainMode m);
LrSchedule parse_lr_schedule(std::string_view s);
std::string to_string(LrSchedule s);
ClassifierPass parse_classifier_pass(std::string_view s);
std::string to_string(ClassifierPass p);

nlohmann::json to_json(const ModelConfig& c);
nlohmann::json to_json(const LossConfig& c);
nlohmann::json to_json(const TrainConfig& c);
nlohmann::json to_json(const DataConfig& c);
nlohmann::json to_json(const ProtocolConfig& c);
nlohmann::json to_json(const RunConfig& c);
nlohmann::json factor_spec_to_json(const FactorSpec& spec);

ModelConfig model_config_from_json(const nlohmann::json& j);
LossConfig loss_config_from_json(const nlohmann::json& j);
TrainConfig train_config_from_json(const nlohmann::json& j);
DataConfig data_config_from_json(const nlohmann::json& j);
ProtocolConfig protocol_config_from_json(const nlohmann::json& j);
FactorSpec factor_spec_from_json(const nlohmann::json& j);
RunConfig run_config_from_json(const nlohmann::json& j);

/// Parses a file; syntax errors become ConfigError with the path.
nlohmann::json read_json_file(const std::string& path);
RunConfig load_run_config(const std::string& path);

/// Seed precedence: explicit flag, then DISMAE_SEED, then the config value.
/// The chosen seed replaces both train.seed and eval.seed.
void apply_seed_override(RunConfig& cfg, std::optional<std::uint64_t> flag_seed);

/// SHA-256 over the canonical JSON of the sections that shape a checkpoint.
std::string config_fingerprint(const ModelConfig& model, const LossConfig& loss, const TrainConfig& train);

/// Canonical text written to config.resolved.json.
std::string resolved_config_text(const RunConfig& cfg);

}  // namespace dismae
