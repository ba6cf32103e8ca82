// Copyright (c) 2026, The dismae Authors
// SPDX-License-Identifier: Apache-2.0

#include "dismae/tensor.hpp"

#include <algorithm>
#include <cmath>

#include "dismae/error.hpp"

namespace dismae {

void Mat::fill(double v) { std::fill(data.begin(), data.end(), v); }

Mat matmul(const Mat& a, const Mat& b) {
  if (a.cols != b.rows) throw ContractError("matmul: inner dimensions differ");
  Mat c(a.rows, b.cols);
  const int m = b.cols;
  for (int i = 0; i < a.rows; ++i) {
    double* out = c.row(i).data();
    const double* ar = a.row(i).data();
    for (int k = 0; k < a.cols; ++k) {
      const double s = ar[k];
      const double* br = b.row(k).data();
      for (int j = 0; j < m; ++j) out[j] += s * br[j];
    }
  }
  return c;
}

Mat matmul_nt(const Mat& a, const Mat& b) {
  if (a.cols != b.cols) throw ContractError("matmul_nt: inner dimensions differ");
  Mat bt(b.cols, b.rows);
  for (int r = 0; r < b.rows; ++r)
    for (int c = 0; c < b.cols; ++c) bt.data[static_cast<std::size_t>(c) * b.rows + r] = b(r, c);
  return matmul(a, bt);
}

Mat matmul_tn(const Mat& a, const Mat& b) {
  if (a.rows != b.rows) throw ContractError("matmul_tn: row counts differ");
  Mat c(a.cols, b.cols);
  const int m = b.cols;
  for (int i = 0; i < a.rows; ++i) {
    const double* ar = a.row(i).data();
    const double* br = b.row(i).data();
    for (int k = 0; k < a.cols; ++k) {
      const double s = ar[k];
      double* out = c.row(k).data();
      for (int j = 0; j < m; ++j) out[j] += s * br[j];
    }
  }
  return c;
}

void add_inplace(Mat& dst, const Mat& src) {
  if (!dst.same_shape(src)) throw ContractError("add_inplace: shape mismatch");
  for (std::size_t i = 0; i < dst.data.size(); ++i) dst.data[i] += src.data[i];
}

void scale_inplace(Mat& m, double s) {
  for (double& v : m.data) v *= s;
}

Mat softmax_rows(const Mat& logits) {
  Mat out(logits.rows, logits.cols);
  for (int i = 0; i < logits.rows; ++i) {
    auto in = logits.row(i);
    auto o = out.row(i);
    const double mx = *std::max_element(in.begin(), in.end());
    double z = 0.0;
    for (int j = 0; j < logits.cols; ++j) {
      o[j] = std::exp(in[j] - mx);
      z += o[j];
    }
    for (int j = 0; j < logits.cols; ++j) o[j] /= z;
  }
  return out;
}

Mat gather_rows(const Mat& src, std::span<const int> rows) {
  Mat out(static_cast<int>(rows.size()), src.cols);
  for (std::size_t i = 0; i < rows.size(); ++i) {
    if (rows[i] < 0 || rows[i] >= src.rows) throw ContractError("gather_rows: index out of range");
    auto s = src.row(rows[i]);
    std::copy(s.begin(), s.end(), out.row(static_cast<int>(i)).begin());
  }
  return out;
}

double sum_squares(const Mat& m) {
  double acc = 0.0;
  for (double v : m.data) acc += v * v;
  return acc;
}

}  // namespace dismae
