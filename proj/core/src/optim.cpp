// Copyright (c) 2026, The dismae Authors
// SPDX-License-Identifier: Apache-2.0

#include "dismae/optim.hpp"

#include <cmath>

namespace dismae {

namespace {

const Mat* grad_of(const GradBuffer& grads, int i) {
  if (i >= static_cast<int>(grads.size())) return nullptr;
  const Mat& g = grads[static_cast<std::size_t>(i)];
  return g.empty() ? nullptr : &g;
}

void ensure(std::vector<Mat>& slots, int size, int i, const Mat& like) {
  if (static_cast<int>(slots.size()) < size) slots.resize(static_cast<std::size_t>(size));
  Mat& s = slots[static_cast<std::size_t>(i)];
  if (s.empty()) s = Mat(like.rows, like.cols);
}

}  // namespace

void AdamW::step(ParameterStore& store, const GradBuffer& grads, std::span<const int> indices, double lr) {
  ++steps;
  const double bc1 = 1.0 - std::pow(cfg_.beta1, static_cast<double>(steps));
  const double bc2 = 1.0 - std::pow(cfg_.beta2, static_cast<double>(steps));
  for (int i : indices) {
    const Mat* g = grad_of(grads, i);
    if (g == nullptr) continue;
    Parameter& p = store[i];
    ensure(first_moment, store.size(), i, p.value);
    ensure(second_moment, store.size(), i, p.value);
    Mat& m = first_moment[static_cast<std::size_t>(i)];
    Mat& v = second_moment[static_cast<std::size_t>(i)];
    const double decay = p.decay ? lr * cfg_.weight_decay : 0.0;
    for (std::size_t k = 0; k < p.value.data.size(); ++k) {
      double& w = p.value.data[k];
      const double gk = g->data[k];
      w -= decay * w;
      m.data[k] = cfg_.beta1 * m.data[k] + (1.0 - cfg_.beta1) * gk;
      v.data[k] = cfg_.beta2 * v.data[k] + (1.0 - cfg_.beta2) * gk * gk;
      const double denom = std::sqrt(v.data[k] / bc2) + cfg_.eps;
      w -= lr * (m.data[k] / bc1) / denom;
    }
  }
}

void Sgd::step(ParameterStore& store, const GradBuffer& grads, std::span<const int> indices) {
  for (int i : indices) {
    const Mat* g = grad_of(grads, i);
    if (g == nullptr) continue;
    Parameter& p = store[i];
    const bool fresh = static_cast<int>(momentum.size()) <= i || momentum[static_cast<std::size_t>(i)].empty();
    ensure(momentum, store.size(), i, p.value);
    Mat& buf = momentum[static_cast<std::size_t>(i)];
    for (std::size_t k = 0; k < p.value.data.size(); ++k) {
      const double d = g->data[k] + cfg_.weight_decay * p.value.data[k];
      buf.data[k] = fresh ? d : cfg_.momentum * buf.data[k] + d;
      p.value.data[k] -= cfg_.lr * buf.data[k];
    }
  }
}

double clip_grad_norm(GradBuffer& grads, std::span<const int> indices, double max_norm) {
  double sq = 0.0;
  for (int i : indices)
    if (const Mat* g = grad_of(grads, i)) sq += sum_squares(*g);
  const double norm = std::sqrt(sq);
  if (max_norm > 0.0 && norm > max_norm) {
    const double s = max_norm / (norm + 1e-6);
    for (int i : indices)
      if (i < static_cast<int>(grads.size())) scale_inplace(grads[static_cast<std::size_t>(i)], s);
  }
  return norm;
}

}  // namespace dismae
