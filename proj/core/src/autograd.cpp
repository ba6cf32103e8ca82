// Copyright (c) 2026, The dismae Authors
// SPDX-License-Identifier: Apache-2.0

#include "dismae/autograd.hpp"

#include <algorithm>
#include <cmath>
#include <memory>
#include <numbers>

#include "dismae/error.hpp"

namespace dismae {

const char* to_string(ParamGroup g) {
  switch (g) {
    case ParamGroup::semantic: return "semantic";
    case ParamGroup::variation: return "variation";
    case ParamGroup::decoder: return "decoder";
    case ParamGroup::domain_classifier: return "domain_classifier";
    case ParamGroup::label_head: return "label_head";
  }
  return "?";
}

int ParameterStore::add(std::string name, ParamGroup group, Mat value, bool decay) {
  if (by_name_.contains(name)) throw ContractError("duplicate parameter name: " + name);
  const int idx = size();
  by_name_.emplace(name, idx);
  params_.push_back(Parameter{std::move(name), group, std::move(value), decay});
  return idx;
}

int ParameterStore::find(const std::string& name) const {
  auto it = by_name_.find(name);
  return it == by_name_.end() ? -1 : it->second;
}

std::vector<int> ParameterStore::indices_in(GroupMask groups) const {
  std::vector<int> out;
  for (int i = 0; i < size(); ++i)
    if (groups.test(params_[static_cast<std::size_t>(i)].group)) out.push_back(i);
  return out;
}

const Mat& Var::value() const { return tape->value(id); }

Var Tape::push(Mat value, bool requires_grad, std::function<void()> back) {
  Node n;
  n.value = std::move(value);
  n.requires_grad = requires_grad;
  if (requires_grad) n.back = std::move(back);
  nodes_.push_back(std::move(n));
  return Var{this, static_cast<int>(nodes_.size()) - 1};
}

Var Tape::constant(Mat value) { return push(std::move(value), false, {}); }

Var Tape::param(const ParameterStore& store, int index) {
  auto& cache = leaves_[&store];
  if (auto it = cache.find(index); it != cache.end()) return Var{this, it->second};
  const bool trainable = trainable_.test(store[index].group);
  Var v = push(store[index].value, trainable, {});
  if (trainable) nodes_.back().param_index = index;
  cache.emplace(index, v.id);
  return v;
}

Mat& Tape::grad(int id) {
  Node& n = nodes_[static_cast<std::size_t>(id)];
  if (n.grad.empty()) n.grad = Mat(n.value.rows, n.value.cols);
  return n.grad;
}

void Tape::backward(Var loss) {
  if (loss.tape != this) throw ContractError("backward: variable from another tape");
  const Mat& v = value(loss.id);
  if (v.rows != 1 || v.cols != 1) throw ContractError("backward: loss must be a scalar");
  if (!requires_grad(loss.id)) return;
  grad(loss.id)(0, 0) = 1.0;
  for (int id = loss.id; id >= 0; --id) {
    Node& n = nodes_[static_cast<std::size_t>(id)];
    if (n.back && !n.grad.empty()) n.back();
  }
}

void Tape::accumulate_param_grads(GradBuffer& buf, int store_size) const {
  if (static_cast<int>(buf.size()) < store_size) buf.resize(static_cast<std::size_t>(store_size));
  for (const Node& n : nodes_) {
    if (n.param_index < 0 || n.grad.empty()) continue;
    Mat& dst = buf[static_cast<std::size_t>(n.param_index)];
    if (dst.empty()) dst = n.grad;
    else add_inplace(dst, n.grad);
  }
}

namespace {

bool any_grad(std::initializer_list<Var> vs) {
  for (const Var& v : vs)
    if (v.tape->requires_grad(v.id)) return true;
  return false;
}

void check_same_tape(Var a, Var b) {
  if (a.tape != b.tape) throw ContractError("operands recorded on different tapes");
}

}  // namespace

Var linear(Var x, Var w, Var b) {
  check_same_tape(x, w);
  check_same_tape(x, b);
  Tape& t = *x.tape;
  const Mat& X = x.value();
  const Mat& W = w.value();
  const Mat& B = b.value();
  if (X.cols != W.rows || B.rows != 1 || B.cols != W.cols)
    throw ContractError("linear: shape mismatch");
  Mat y = matmul(X, W);
  for (int i = 0; i < y.rows; ++i) {
    auto r = y.row(i);
    for (int j = 0; j < y.cols; ++j) r[j] += B(0, j);
  }
  const int oid = t.size();
  return t.push(std::move(y), any_grad({x, w, b}), [&t, oid, xi = x.id, wi = w.id, bi = b.id] {
    const Mat& g = t.grad(oid);
    if (t.requires_grad(xi)) add_inplace(t.grad(xi), matmul_nt(g, t.value(wi)));
    if (t.requires_grad(wi)) add_inplace(t.grad(wi), matmul_tn(t.value(xi), g));
    if (t.requires_grad(bi)) {
      Mat& gb = t.grad(bi);
      for (int i = 0; i < g.rows; ++i)
        for (int j = 0; j < g.cols; ++j) gb(0, j) += g(i, j);
    }
  });
}

Var add(Var a, Var b) { return add_scaled(a, b, 1.0); }

Var add_scaled(Var a, Var b, double c) {
  check_same_tape(a, b);
  Tape& t = *a.tape;
  if (!a.value().same_shape(b.value())) throw ContractError("add: shape mismatch");
  Mat y = a.value();
  const Mat& B = b.value();
  for (std::size_t i = 0; i < y.data.size(); ++i) y.data[i] += c * B.data[i];
  const int oid = t.size();
  return t.push(std::move(y), any_grad({a, b}), [&t, oid, ai = a.id, bi = b.id, c] {
    const Mat& g = t.grad(oid);
    if (t.requires_grad(ai)) add_inplace(t.grad(ai), g);
    if (t.requires_grad(bi)) {
      Mat& gb = t.grad(bi);
      for (std::size_t i = 0; i < g.data.size(); ++i) gb.data[i] += c * g.data[i];
    }
  });
}

Var scale(Var x, double c) {
  Tape& t = *x.tape;
  Mat y = x.value();
  scale_inplace(y, c);
  const int oid = t.size();
  return t.push(std::move(y), any_grad({x}), [&t, oid, xi = x.id, c] {
    const Mat& g = t.grad(oid);
    Mat& gx = t.grad(xi);
    for (std::size_t i = 0; i < g.data.size(); ++i) gx.data[i] += c * g.data[i];
  });
}

Var add_const(Var x, const Mat& k) {
  Tape& t = *x.tape;
  if (!x.value().same_shape(k)) throw ContractError("add_const: shape mismatch");
  Mat y = x.value();
  add_inplace(y, k);
  const int oid = t.size();
  return t.push(std::move(y), any_grad({x}), [&t, oid, xi = x.id] {
    add_inplace(t.grad(xi), t.grad(oid));
  });
}

Var layer_norm(Var x, Var gain, Var shift, double eps) {
  check_same_tape(x, gain);
  check_same_tape(x, shift);
  Tape& t = *x.tape;
  const Mat& X = x.value();
  const Mat& G = gain.value();
  const Mat& S = shift.value();
  const int n = X.rows, d = X.cols;
  if (G.rows != 1 || G.cols != d || !G.same_shape(S)) throw ContractError("layer_norm: shape mismatch");
  auto xhat = std::make_shared<Mat>(n, d);
  auto inv_std = std::make_shared<std::vector<double>>(static_cast<std::size_t>(n));
  Mat y(n, d);
  for (int i = 0; i < n; ++i) {
    auto r = X.row(i);
    double mean = 0.0;
    for (double v : r) mean += v;
    mean /= d;
    double var = 0.0;
    for (double v : r) var += (v - mean) * (v - mean);
    var /= d;
    const double is = 1.0 / std::sqrt(var + eps);
    (*inv_std)[static_cast<std::size_t>(i)] = is;
    auto xh = xhat->row(i);
    auto yr = y.row(i);
    for (int j = 0; j < d; ++j) {
      xh[j] = (r[j] - mean) * is;
      yr[j] = xh[j] * G(0, j) + S(0, j);
    }
  }
  const int oid = t.size();
  return t.push(std::move(y), any_grad({x, gain, shift}),
                [&t, oid, xi = x.id, gi = gain.id, si = shift.id, xhat, inv_std, n, d] {
    const Mat& g = t.grad(oid);
    const Mat& G = t.value(gi);
    if (t.requires_grad(gi) || t.requires_grad(si)) {
      Mat* gg = t.requires_grad(gi) ? &t.grad(gi) : nullptr;
      Mat* gs = t.requires_grad(si) ? &t.grad(si) : nullptr;
      for (int i = 0; i < n; ++i)
        for (int j = 0; j < d; ++j) {
          if (gg) (*gg)(0, j) += g(i, j) * (*xhat)(i, j);
          if (gs) (*gs)(0, j) += g(i, j);
        }
    }
    if (t.requires_grad(xi)) {
      Mat& gx = t.grad(xi);
      std::vector<double> dxh(static_cast<std::size_t>(d));
      for (int i = 0; i < n; ++i) {
        double m1 = 0.0, m2 = 0.0;
        for (int j = 0; j < d; ++j) {
          dxh[static_cast<std::size_t>(j)] = g(i, j) * G(0, j);
          m1 += dxh[static_cast<std::size_t>(j)];
          m2 += dxh[static_cast<std::size_t>(j)] * (*xhat)(i, j);
        }
        m1 /= d;
        m2 /= d;
        const double is = (*inv_std)[static_cast<std::size_t>(i)];
        for (int j = 0; j < d; ++j)
          gx(i, j) += is * (dxh[static_cast<std::size_t>(j)] - m1 - (*xhat)(i, j) * m2);
      }
    }
  });
}

Var gelu(Var x) {
  Tape& t = *x.tape;
  Mat y = x.value();
  for (double& v : y.data) v = 0.5 * v * (1.0 + std::erf(v * std::numbers::sqrt2 / 2.0));
  const int oid = t.size();
  return t.push(std::move(y), any_grad({x}), [&t, oid, xi = x.id] {
    const Mat& g = t.grad(oid);
    const Mat& X = t.value(xi);
    Mat& gx = t.grad(xi);
    const double inv_sqrt_2pi = 1.0 / std::sqrt(2.0 * std::numbers::pi);
    for (std::size_t i = 0; i < g.data.size(); ++i) {
      const double v = X.data[i];
      const double cdf = 0.5 * (1.0 + std::erf(v * std::numbers::sqrt2 / 2.0));
      const double pdf = inv_sqrt_2pi * std::exp(-0.5 * v * v);
      gx.data[i] += g.data[i] * (cdf + v * pdf);
    }
  });
}

Var attention(Var q, Var k, Var v, int seq_len, int heads) {
  check_same_tape(q, k);
  check_same_tape(q, v);
  Tape& t = *q.tape;
  const Mat& Q = q.value();
  const Mat& K = k.value();
  const Mat& V = v.value();
  if (!Q.same_shape(K) || !Q.same_shape(V)) throw ContractError("attention: q/k/v shapes differ");
  if (seq_len <= 0 || Q.rows % seq_len != 0) throw ContractError("attention: rows not a multiple of seq_len");
  if (heads <= 0 || Q.cols % heads != 0) throw ContractError("attention: width not divisible by heads");
  const int T = seq_len, D = Q.cols, dh = D / heads, nseq = Q.rows / T;
  const double sc = 1.0 / std::sqrt(static_cast<double>(dh));
  // probs layout: [seq][head][T][T]
  auto probs = std::make_shared<std::vector<double>>(static_cast<std::size_t>(nseq) * heads * T * T);
  Mat out(Q.rows, D);
  std::vector<double> srow(static_cast<std::size_t>(T));
  for (int s = 0; s < nseq; ++s) {
    const int base = s * T;
    for (int h = 0; h < heads; ++h) {
      const int c0 = h * dh;
      double* P = probs->data() + (static_cast<std::size_t>(s) * heads + h) * T * T;
      for (int i = 0; i < T; ++i) {
        const double* qi = Q.row(base + i).data() + c0;
        double mx = -INFINITY;
        for (int j = 0; j < T; ++j) {
          const double* kj = K.row(base + j).data() + c0;
          double acc = 0.0;
          for (int c = 0; c < dh; ++c) acc += qi[c] * kj[c];
          srow[static_cast<std::size_t>(j)] = acc * sc;
          mx = std::max(mx, acc * sc);
        }
        double z = 0.0;
        for (int j = 0; j < T; ++j) {
          const double e = std::exp(srow[static_cast<std::size_t>(j)] - mx);
          P[i * T + j] = e;
          z += e;
        }
        double* o = out.row(base + i).data() + c0;
        for (int j = 0; j < T; ++j) {
          P[i * T + j] /= z;
          const double p = P[i * T + j];
          const double* vj = V.row(base + j).data() + c0;
          for (int c = 0; c < dh; ++c) o[c] += p * vj[c];
        }
      }
    }
  }
  const int oid = t.size();
  return t.push(std::move(out), any_grad({q, k, v}),
                [&t, oid, qi_ = q.id, ki_ = k.id, vi_ = v.id, probs, T, D, dh, heads, nseq, sc] {
    const Mat& g = t.grad(oid);
    const Mat& Q = t.value(qi_);
    const Mat& K = t.value(ki_);
    const Mat& V = t.value(vi_);
    const bool gq = t.requires_grad(qi_), gk = t.requires_grad(ki_), gv = t.requires_grad(vi_);
    Mat* dQ = gq ? &t.grad(qi_) : nullptr;
    Mat* dK = gk ? &t.grad(ki_) : nullptr;
    Mat* dV = gv ? &t.grad(vi_) : nullptr;
    std::vector<double> dS(static_cast<std::size_t>(T) * T);
    (void)D;
    for (int s = 0; s < nseq; ++s) {
      const int base = s * T;
      for (int h = 0; h < heads; ++h) {
        const int c0 = h * dh;
        const double* P = probs->data() + (static_cast<std::size_t>(s) * heads + h) * T * T;
        for (int i = 0; i < T; ++i) {
          const double* go = g.row(base + i).data() + c0;
          double dot = 0.0;
          for (int j = 0; j < T; ++j) {
            const double* vj = V.row(base + j).data() + c0;
            double dp = 0.0;
            for (int c = 0; c < dh; ++c) dp += go[c] * vj[c];
            dS[static_cast<std::size_t>(i) * T + j] = dp;
            dot += dp * P[i * T + j];
            if (dV) {
              double* dvj = dV->row(base + j).data() + c0;
              const double p = P[i * T + j];
              for (int c = 0; c < dh; ++c) dvj[c] += p * go[c];
            }
          }
          for (int j = 0; j < T; ++j) {
            double& ds = dS[static_cast<std::size_t>(i) * T + j];
            ds = P[i * T + j] * (ds - dot) * sc;
          }
        }
        for (int i = 0; i < T; ++i) {
          for (int j = 0; j < T; ++j) {
            const double ds = dS[static_cast<std::size_t>(i) * T + j];
            if (dQ) {
              double* dqi = dQ->row(base + i).data() + c0;
              const double* kj = K.row(base + j).data() + c0;
              for (int c = 0; c < dh; ++c) dqi[c] += ds * kj[c];
            }
            if (dK) {
              double* dkj = dK->row(base + j).data() + c0;
              const double* qi = Q.row(base + i).data() + c0;
              for (int c = 0; c < dh; ++c) dkj[c] += ds * qi[c];
            }
          }
        }
      }
    }
  });
}

Var gather_rows(Var x, std::vector<int> rows) {
  Tape& t = *x.tape;
  Mat y = gather_rows(x.value(), rows);
  const int oid = t.size();
  return t.push(std::move(y), any_grad({x}), [&t, oid, xi = x.id, rows = std::move(rows)] {
    const Mat& g = t.grad(oid);
    Mat& gx = t.grad(xi);
    for (std::size_t i = 0; i < rows.size(); ++i) {
      auto src = g.row(static_cast<int>(i));
      auto dst = gx.row(rows[i]);
      for (int j = 0; j < g.cols; ++j) dst[j] += src[j];
    }
  });
}

Var concat_rows(std::span<const Var> parts) {
  if (parts.empty()) throw ContractError("concat_rows: no inputs");
  Tape& t = *parts[0].tape;
  const int cols = parts[0].cols();
  int rows = 0;
  bool rg = false;
  std::vector<int> ids;
  for (const Var& p : parts) {
    if (p.tape != &t) throw ContractError("concat_rows: mixed tapes");
    if (p.cols() != cols) throw ContractError("concat_rows: column mismatch");
    rows += p.rows();
    rg = rg || t.requires_grad(p.id);
    ids.push_back(p.id);
  }
  Mat y(rows, cols);
  std::size_t off = 0;
  for (const Var& p : parts) {
    const Mat& m = p.value();
    std::copy(m.data.begin(), m.data.end(), y.data.begin() + static_cast<std::ptrdiff_t>(off));
    off += m.data.size();
  }
  const int oid = t.size();
  return t.push(std::move(y), rg, [&t, oid, ids = std::move(ids)] {
    const Mat& g = t.grad(oid);
    std::size_t off = 0;
    for (int id : ids) {
      const std::size_t n = t.value(id).data.size();
      if (t.requires_grad(id)) {
        Mat& gi = t.grad(id);
        for (std::size_t i = 0; i < n; ++i) gi.data[i] += g.data[off + i];
      }
      off += n;
    }
  });
}

Var masked_rmse(Var pred, const Mat& target, int patches_per_sample,
                const std::vector<std::vector<int>>& masked) {
  Tape& t = *pred.tape;
  const Mat& Y = pred.value();
  const int L = patches_per_sample;
  const int n = static_cast<int>(masked.size());
  if (!Y.same_shape(target) || Y.rows != n * L) throw ContractError("masked_rmse: shape mismatch");
  Mat d(n, 1);
  for (int s = 0; s < n; ++s) {
    const auto& m = masked[static_cast<std::size_t>(s)];
    if (m.empty()) throw ContractError("masked_rmse: empty masked set");
    double acc = 0.0;
    for (int p : m) {
      auto a = Y.row(s * L + p);
      auto b = target.row(s * L + p);
      for (int c = 0; c < Y.cols; ++c) {
        const double diff = a[c] - b[c];
        acc += diff * diff;
      }
    }
    d(s, 0) = std::sqrt(acc / (static_cast<double>(m.size()) * Y.cols));
  }
  const int oid = t.size();
  return t.push(std::move(d), any_grad({pred}),
                [&t, oid, pi = pred.id, target, L, masked] {
    const Mat& g = t.grad(oid);
    const Mat& D = t.value(oid);
    const Mat& Y = t.value(pi);
    Mat& gy = t.grad(pi);
    for (int s = 0; s < D.rows; ++s) {
      const double dist = D(s, 0);
      if (dist == 0.0) continue;
      const auto& m = masked[static_cast<std::size_t>(s)];
      const double coef = g(s, 0) / (static_cast<double>(m.size()) * Y.cols * dist);
      for (int p : m) {
        auto a = Y.row(s * L + p);
        auto b = target.row(s * L + p);
        auto o = gy.row(s * L + p);
        for (int c = 0; c < Y.cols; ++c) o[c] += coef * (a[c] - b[c]);
      }
    }
  });
}

Var hinge(Var x, double margin) {
  Tape& t = *x.tape;
  Mat y = x.value();
  for (double& v : y.data) v = std::max(v - margin, 0.0);
  const int oid = t.size();
  return t.push(std::move(y), any_grad({x}), [&t, oid, xi = x.id, margin] {
    const Mat& g = t.grad(oid);
    const Mat& X = t.value(xi);
    Mat& gx = t.grad(xi);
    for (std::size_t i = 0; i < g.data.size(); ++i)
      if (X.data[i] - margin > 0.0) gx.data[i] += g.data[i];
  });
}

Var mean_all(Var x) {
  Tape& t = *x.tape;
  const Mat& X = x.value();
  if (X.empty()) throw ContractError("mean_all: empty input");
  double acc = 0.0;
  for (double v : X.data) acc += v;
  Mat y(1, 1, acc / static_cast<double>(X.size()));
  const int oid = t.size();
  return t.push(std::move(y), any_grad({x}), [&t, oid, xi = x.id] {
    const double g = t.grad(oid)(0, 0);
    Mat& gx = t.grad(xi);
    const double c = g / static_cast<double>(gx.size());
    for (double& v : gx.data) v += c;
  });
}

Var weighted_mean(Var x, std::span<const double> w) {
  Tape& t = *x.tape;
  const Mat& X = x.value();
  if (X.cols != 1 || static_cast<std::size_t>(X.rows) != w.size())
    throw ContractError("weighted_mean: length mismatch");
  if (X.rows == 0) throw ContractError("weighted_mean: empty batch");
  double acc = 0.0;
  for (int i = 0; i < X.rows; ++i) acc += w[static_cast<std::size_t>(i)] * X(i, 0);
  Mat y(1, 1, acc / X.rows);
  const int oid = t.size();
  std::vector<double> wv(w.begin(), w.end());
  return t.push(std::move(y), any_grad({x}), [&t, oid, xi = x.id, wv = std::move(wv)] {
    const double g = t.grad(oid)(0, 0);
    Mat& gx = t.grad(xi);
    const double n = static_cast<double>(wv.size());
    for (std::size_t i = 0; i < wv.size(); ++i) gx.data[i] += g * wv[i] / n;
  });
}

Var info_nce(Var sims, const std::vector<std::vector<int>>& groups, double tau) {
  Tape& t = *sims.tape;
  const Mat& S = sims.value();
  if (S.cols != 1) throw ContractError("info_nce: similarities must be a column");
  if (!(tau > 0.0)) throw ContractError("info_nce: temperature must be positive");
  const int a = static_cast<int>(groups.size());
  Mat l(a, 1);
  auto soft = std::make_shared<std::vector<std::vector<double>>>(groups.size());
  for (int gi = 0; gi < a; ++gi) {
    const auto& grp = groups[static_cast<std::size_t>(gi)];
    if (grp.empty()) throw ContractError("info_nce: group without a positive");
    for (int idx : grp)
      if (idx < 0 || idx >= S.rows) throw ContractError("info_nce: index out of range");
    double mx = -INFINITY;
    for (int idx : grp) mx = std::max(mx, S(idx, 0) / tau);
    double z = 0.0;
    auto& sm = (*soft)[static_cast<std::size_t>(gi)];
    sm.resize(grp.size());
    for (std::size_t k = 0; k < grp.size(); ++k) {
      sm[k] = std::exp(S(grp[k], 0) / tau - mx);
      z += sm[k];
    }
    for (double& v : sm) v /= z;
    l(gi, 0) = grp.size() == 1 ? 0.0 : -(S(grp[0], 0) / tau - mx - std::log(z));
  }
  const int oid = t.size();
  return t.push(std::move(l), any_grad({sims}), [&t, oid, si = sims.id, groups, soft, tau] {
    const Mat& g = t.grad(oid);
    Mat& gs = t.grad(si);
    for (std::size_t gi = 0; gi < groups.size(); ++gi) {
      const auto& grp = groups[gi];
      if (grp.size() == 1) continue;
      const auto& sm = (*soft)[gi];
      const double up = g(static_cast<int>(gi), 0);
      for (std::size_t k = 0; k < grp.size(); ++k)
        gs(grp[k], 0) += up * (sm[k] - (k == 0 ? 1.0 : 0.0)) / tau;
    }
  });
}

Var cross_entropy(Var logits, std::span<const int> labels) {
  Tape& t = *logits.tape;
  const Mat& Z = logits.value();
  if (static_cast<std::size_t>(Z.rows) != labels.size() || Z.rows == 0)
    throw ContractError("cross_entropy: label count mismatch");
  auto probs = std::make_shared<Mat>(softmax_rows(Z));
  double acc = 0.0;
  for (int i = 0; i < Z.rows; ++i) {
    const int y = labels[static_cast<std::size_t>(i)];
    if (y < 0 || y >= Z.cols) throw ContractError("cross_entropy: label out of range");
    auto r = Z.row(i);
    const double mx = *std::max_element(r.begin(), r.end());
    double z = 0.0;
    for (double v : r) z += std::exp(v - mx);
    acc += -(r[y] - mx - std::log(z));
  }
  Mat out(1, 1, acc / Z.rows);
  const int oid = t.size();
  std::vector<int> ys(labels.begin(), labels.end());
  return t.push(std::move(out), any_grad({logits}), [&t, oid, zi = logits.id, probs, ys = std::move(ys)] {
    const double g = t.grad(oid)(0, 0);
    Mat& gz = t.grad(zi);
    const double n = static_cast<double>(ys.size());
    for (int i = 0; i < gz.rows; ++i)
      for (int j = 0; j < gz.cols; ++j)
        gz(i, j) += g * ((*probs)(i, j) - (j == ys[static_cast<std::size_t>(i)] ? 1.0 : 0.0)) / n;
  });
}

}  // namespace dismae
