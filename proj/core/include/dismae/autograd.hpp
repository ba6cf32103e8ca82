// Copyright (c) 2026, The dismae Authors
// SPDX-License-Identifier: Apache-2.0
//
// Reverse-mode differentiation over Mat values.
//
// A Tape records every operation of one forward pass. Parameters enter the
// tape either as trainable leaves (gradient is collected) or as constants,
// depending on the tape's group mask; this is how freeze contracts are
// enforced: a frozen group never receives a gradient, so no optimizer can
// move it.

#pragma once

#include <cstdint>
#include <deque>
#include <functional>
#include <initializer_list>
#include <span>
#include <string>
#include <unordered_map>
#include <vector>

#include "dismae/tensor.hpp"

namespace dismae {

enum class ParamGroup : std::uint8_t {
  semantic = 0,
  variation = 1,
  decoder = 2,
  domain_classifier = 3,
  label_head = 4,
};

const char* to_string(ParamGroup g);

class GroupMask {
 public:
  GroupMask() = default;
  GroupMask(std::initializer_list<ParamGroup> groups) {
    for (auto g : groups) set(g);
  }
  void set(ParamGroup g) { bits_ |= bit(g); }
  bool test(ParamGroup g) const { return (bits_ & bit(g)) != 0; }
  bool none() const { return bits_ == 0; }

 private:
  static std::uint8_t bit(ParamGroup g) { return static_cast<std::uint8_t>(1u << static_cast<unsigned>(g)); }
  std::uint8_t bits_ = 0;
};

struct Parameter {
  std::string name;
  ParamGroup group = ParamGroup::semantic;
  Mat value;
  bool decay = true;  // AdamW weight decay applies (matrices only)
};

/// Ordered, value-semantic collection of named parameters. Indices are stable.
class ParameterStore {
 public:
  int add(std::string name, ParamGroup group, Mat value, bool decay);
  const Parameter& operator[](int i) const { return params_[static_cast<std::size_t>(i)]; }
  Parameter& operator[](int i) { return params_[static_cast<std::size_t>(i)]; }
  int size() const { return static_cast<int>(params_.size()); }
  int find(const std::string& name) const;  // -1 when absent
  std::vector<int> indices_in(GroupMask groups) const;
  auto begin() const { return params_.begin(); }
  auto end() const { return params_.end(); }

 private:
  std::vector<Parameter> params_;
  std::unordered_map<std::string, int> by_name_;
};

/// Gradient buffers aligned with a ParameterStore. Empty Mat = no gradient.
using GradBuffer = std::vector<Mat>;

class Tape;

struct Var {
  Tape* tape = nullptr;
  int id = -1;

  const Mat& value() const;
  int rows() const { return value().rows; }
  int cols() const { return value().cols; }
  double scalar() const { return value().data.at(0); }
};

class Tape {
 public:
  explicit Tape(GroupMask trainable = {}) : trainable_(trainable) {}
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  Var constant(Mat value);
  /// Trainable leaf when the parameter's group is in the mask, constant otherwise.
  Var param(const ParameterStore& store, int index);

  const Mat& value(int id) const { return nodes_[static_cast<std::size_t>(id)].value; }
  bool requires_grad(int id) const { return nodes_[static_cast<std::size_t>(id)].requires_grad; }
  /// Gradient buffer of a node; allocated as zeros on first access.
  Mat& grad(int id);
  bool has_grad(int id) const { return !nodes_[static_cast<std::size_t>(id)].grad.empty(); }

  /// Seed d(loss)=1 and propagate. loss must be 1×1.
  void backward(Var loss);
  /// Add collected parameter gradients into buf (sized to the store on demand).
  void accumulate_param_grads(GradBuffer& buf, int store_size) const;

  Var push(Mat value, bool requires_grad, std::function<void()> back);
  int size() const { return static_cast<int>(nodes_.size()); }

 private:
  struct Node {
    Mat value;
    Mat grad;
    bool requires_grad = false;
    std::function<void()> back;
    int param_index = -1;
  };
  std::deque<Node> nodes_;
  std::unordered_map<const ParameterStore*, std::unordered_map<int, int>> leaves_;
  GroupMask trainable_;
};

// ---- differentiable operations -------------------------------------------

/// x[n×in] · w[in×out] + b[1×out]
Var linear(Var x, Var w, Var b);
Var add(Var a, Var b);
/// a + c·b
Var add_scaled(Var a, Var b, double c);
Var scale(Var x, double c);
/// x + k where k is a constant of the same shape.
Var add_const(Var x, const Mat& k);
Var layer_norm(Var x, Var gain, Var shift, double eps = 1e-6);
Var gelu(Var x);
/// Multi-head scaled dot-product self-attention applied independently to
/// consecutive blocks of seq_len rows.
Var attention(Var q, Var k, Var v, int seq_len, int heads);
Var gather_rows(Var x, std::vector<int> rows);
Var concat_rows(std::span<const Var> parts);

/// Per-sample RMSE over the listed patch rows: pred/target are [N·L × P];
/// masked[n] lists the patch positions of sample n. Returns [N×1].
Var masked_rmse(Var pred, const Mat& target, int patches_per_sample,
                const std::vector<std::vector<int>>& masked);
/// max(x − margin, 0), elementwise.
Var hinge(Var x, double margin);
/// Mean of all entries → 1×1.
Var mean_all(Var x);
/// (1/n) Σ w_i x_i for a column x[n×1]; w are constants.
Var weighted_mean(Var x, std::span<const double> w);
/// For each group (positive index first, then negatives) over a similarity
/// column: −log softmax(sims/τ)[positive]. Returns [groups×1].
Var info_nce(Var sims, const std::vector<std::vector<int>>& groups, double tau);
/// Mean softmax cross-entropy of logits[n×C] against integer labels → 1×1.
Var cross_entropy(Var logits, std::span<const int> labels);

}  // namespace dismae
