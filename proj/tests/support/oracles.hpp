// Straight-line reference implementations used to check the production
// paths. Nothing here calls into dismae code.

#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <functional>
#include <map>
#include <utility>
#include <vector>

namespace oracle {

inline double rmse(const std::vector<double>& diffs) {
  double s = 0.0;
  for (double d : diffs) s += d * d;
  return std::sqrt(s / static_cast<double>(diffs.size()));
}

inline double hinge_mean(const std::vector<double>& dist, double gamma) {
  double s = 0.0;
  for (double d : dist) s += d > gamma ? d - gamma : 0.0;
  return s / static_cast<double>(dist.size());
}

inline double contrastive(double s_pos, const std::vector<double>& s_neg, double tau) {
  double num = std::exp(s_pos / tau);
  double den = num;
  for (double s : s_neg) den += std::exp(s / tau);
  return -std::log(num / den);
}

inline double cross_entropy_row(const std::vector<double>& logits, int label) {
  double den = 0.0;
  for (double z : logits) den += std::exp(z);
  return -std::log(std::exp(logits[static_cast<std::size_t>(label)]) / den);
}

/// Overall / average accuracy from explicit per-domain (correct, n) counts.
inline std::pair<double, double> accuracy_from_counts(const std::vector<std::pair<int, int>>& per_domain) {
  int c = 0, n = 0;
  double acc = 0.0;
  for (auto [ci, ni] : per_domain) {
    c += ci;
    n += ni;
    acc += static_cast<double>(ci) / ni;
  }
  return {static_cast<double>(c) / n, acc / static_cast<double>(per_domain.size())};
}

/// Cyclic Jacobi eigenvalues of a symmetric matrix (row-major n×n), descending.
inline std::vector<double> jacobi_eigenvalues(std::vector<double> a, int n) {
  auto at = [&](int i, int j) -> double& { return a[static_cast<std::size_t>(i) * n + j]; };
  for (int sweep = 0; sweep < 100; ++sweep) {
    double off = 0.0;
    for (int i = 0; i < n; ++i)
      for (int j = i + 1; j < n; ++j) off += at(i, j) * at(i, j);
    if (off < 1e-30) break;
    for (int p = 0; p < n; ++p)
      for (int q = p + 1; q < n; ++q) {
        if (std::abs(at(p, q)) < 1e-300) continue;
        const double theta = (at(q, q) - at(p, p)) / (2.0 * at(p, q));
        const double t = (theta >= 0 ? 1.0 : -1.0) / (std::abs(theta) + std::sqrt(theta * theta + 1.0));
        const double c = 1.0 / std::sqrt(t * t + 1.0), s = t * c;
        for (int k = 0; k < n; ++k) {
          const double akp = at(k, p), akq = at(k, q);
          at(k, p) = c * akp - s * akq;
          at(k, q) = s * akp + c * akq;
        }
        for (int k = 0; k < n; ++k) {
          const double apk = at(p, k), aqk = at(q, k);
          at(p, k) = c * apk - s * aqk;
          at(q, k) = s * apk + c * aqk;
        }
      }
  }
  std::vector<double> ev(static_cast<std::size_t>(n));
  for (int i = 0; i < n; ++i) ev[static_cast<std::size_t>(i)] = at(i, i);
  std::sort(ev.begin(), ev.end(), std::greater<>());
  return ev;
}

/// Sample covariance (divisor n−1) of row-major n×h data.
inline std::vector<double> covariance(const std::vector<double>& x, int n, int h) {
  std::vector<double> mean(static_cast<std::size_t>(h), 0.0);
  for (int i = 0; i < n; ++i)
    for (int c = 0; c < h; ++c) mean[static_cast<std::size_t>(c)] += x[static_cast<std::size_t>(i) * h + c] / n;
  std::vector<double> cov(static_cast<std::size_t>(h) * h, 0.0);
  for (int i = 0; i < n; ++i)
    for (int a = 0; a < h; ++a)
      for (int b = 0; b < h; ++b)
        cov[static_cast<std::size_t>(a) * h + b] += (x[static_cast<std::size_t>(i) * h + a] - mean[static_cast<std::size_t>(a)]) *
                                                    (x[static_cast<std::size_t>(i) * h + b] - mean[static_cast<std::size_t>(b)]) /
                                                    (n - 1);
  return cov;
}

/// Leave-nothing-out nearest-centroid accuracy: centroids from `train`,
/// scored on `test` (indices into row-major features).
inline double nearest_centroid_accuracy(const std::vector<std::vector<double>>& feats, const std::vector<int>& labels,
                                        const std::vector<int>& train, const std::vector<int>& test) {
  std::map<int, std::vector<double>> sum;
  std::map<int, int> cnt;
  for (int i : train) {
    auto& s = sum[labels[static_cast<std::size_t>(i)]];
    s.resize(feats[static_cast<std::size_t>(i)].size(), 0.0);
    for (std::size_t c = 0; c < s.size(); ++c) s[c] += feats[static_cast<std::size_t>(i)][c];
    ++cnt[labels[static_cast<std::size_t>(i)]];
  }
  int correct = 0;
  for (int i : test) {
    int best = -1;
    double best_d = 1e300;
    for (auto& [k, s] : sum) {
      double d = 0.0;
      for (std::size_t c = 0; c < s.size(); ++c) {
        const double m = s[c] / cnt[k] - feats[static_cast<std::size_t>(i)][c];
        d += m * m;
      }
      if (d < best_d) {
        best_d = d;
        best = k;
      }
    }
    if (best == labels[static_cast<std::size_t>(i)]) ++correct;
  }
  return static_cast<double>(correct) / static_cast<double>(test.size());
}

/// Central difference of f around x[k].
template <typename F>
double central_difference(std::vector<double>& x, std::size_t k, double h, F&& f) {
  const double orig = x[k];
  x[k] = orig + h;
  const double fp = f();
  x[k] = orig - h;
  const double fm = f();
  x[k] = orig;
  return (fp - fm) / (2.0 * h);
}

}  // namespace oracle
