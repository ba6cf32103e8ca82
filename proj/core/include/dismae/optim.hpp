// Copyright (c) 2026, The dismae Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstdint>
#include <span>
#include <vector>

#include "dismae/autograd.hpp"

namespace dismae {

struct AdamWConfig {
  double lr = 1e-4;
  double beta1 = 0.9;
  double beta2 = 0.95;
  double eps = 1e-8;
  double weight_decay = 0.05;
};

struct SgdConfig {
  double lr = 5e-4;
  double momentum = 0.99;
  double weight_decay = 0.05;
};

/// Decoupled weight decay Adam. Decay applies only to parameters flagged
/// `decay` (weight matrices).
class AdamW {
 public:
  explicit AdamW(AdamWConfig cfg = {}) : cfg_(cfg) {}

  void step(ParameterStore& store, const GradBuffer& grads, std::span<const int> indices, double lr);

  const AdamWConfig& config() const { return cfg_; }
  std::int64_t steps = 0;
  std::vector<Mat> first_moment;   // aligned with the store; empty = untouched
  std::vector<Mat> second_moment;

 private:
  AdamWConfig cfg_;
};

/// SGD with heavy-ball momentum and L2 weight decay (PyTorch semantics: the
/// first step seeds the buffer with the raw gradient).
class Sgd {
 public:
  explicit Sgd(SgdConfig cfg = {}) : cfg_(cfg) {}

  void step(ParameterStore& store, const GradBuffer& grads, std::span<const int> indices);

  const SgdConfig& config() const { return cfg_; }
  std::vector<Mat> momentum;  // aligned with the store; empty = untouched

 private:
  SgdConfig cfg_;
};

/// Scales the listed gradients so their joint L2 norm is at most max_norm.
/// Returns the norm before clipping.
double clip_grad_norm(GradBuffer& grads, std::span<const int> indices, double max_norm);

}  // namespace dismae
