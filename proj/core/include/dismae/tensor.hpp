// Copyright (c) 2026, The dismae Authors
// SPDX-License-Identifier: Apache-2.0
//
// Dense row-major matrix of doubles and the three GEMM shapes the model needs.
// Every kernel computes each output row from the matching input row(s) only,
// with a fixed accumulation order, so results for one sample never depend on
// which other samples share the batch.

#pragma once

#include <cstddef>
#include <span>
#include <vector>

namespace dismae {

struct Mat {
  int rows = 0;
  int cols = 0;
  std::vector<double> data;

  Mat() = default;
  Mat(int r, int c, double fill = 0.0)
      : rows(r), cols(c), data(static_cast<std::size_t>(r) * c, fill) {}

  double& operator()(int r, int c) { return data[static_cast<std::size_t>(r) * cols + c]; }
  double operator()(int r, int c) const { return data[static_cast<std::size_t>(r) * cols + c]; }

  std::span<double> row(int r) {
    return {data.data() + static_cast<std::size_t>(r) * cols, static_cast<std::size_t>(cols)};
  }
  std::span<const double> row(int r) const {
    return {data.data() + static_cast<std::size_t>(r) * cols, static_cast<std::size_t>(cols)};
  }

  std::size_t size() const { return data.size(); }
  bool empty() const { return data.empty(); }
  bool same_shape(const Mat& o) const { return rows == o.rows && cols == o.cols; }
  void fill(double v);

  friend bool operator==(const Mat&, const Mat&) = default;
};

/// a[n×k] · b[k×m]
Mat matmul(const Mat& a, const Mat& b);
/// a[n×k] · b[m×k]ᵀ
Mat matmul_nt(const Mat& a, const Mat& b);
/// a[n×k]ᵀ · b[n×m]
Mat matmul_tn(const Mat& a, const Mat& b);

void add_inplace(Mat& dst, const Mat& src);
void scale_inplace(Mat& m, double s);
/// Row-wise softmax with max subtraction.
Mat softmax_rows(const Mat& logits);
Mat gather_rows(const Mat& src, std::span<const int> rows);
double sum_squares(const Mat& m);

}  // namespace dismae
