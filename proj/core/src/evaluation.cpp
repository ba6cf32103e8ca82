// Copyright (c) 2026, The dismae Authors
// SPDX-License-Identifier: Apache-2.0

#include "dismae/evaluation.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <map>
#include <numeric>

#include "dismae/error.hpp"
#include "dismae/optim.hpp"

namespace dismae {

void ProtocolConfig::validate() const {
  if (!(label_fraction > 0.0 && label_fraction <= 1.0)) throw ConfigError("eval: label_fraction must be in (0,1]");
  if (!(probe_threshold > 0.0 && probe_threshold <= 1.0)) throw ConfigError("eval: probe_threshold must be in (0,1]");
  if (probe.batch_size < 1 || finetune.batch_size < 1) throw ConfigError("eval: batch sizes must be >= 1");
  if (probe.epochs < 1 || finetune.epochs < 1) throw ConfigError("eval: epochs must be >= 1");
  if (!(probe.lr_multiplier > 0.0) || !(finetune.lr_multiplier > 0.0))
    throw ConfigError("eval: lr_multiplier must be > 0");
  if (probe.momentum < 0.0 || probe.momentum >= 1.0) throw ConfigError("eval: probe momentum must be in [0,1)");
}

Adaptation dispatch(double label_fraction, double threshold) {
  return label_fraction < threshold ? Adaptation::linear_probe : Adaptation::full_finetune;
}

ReferenceLr reference_lr(double label_fraction) {
  if (label_fraction <= 0.03) return {0.025, 96};
  if (label_fraction < 0.10) return {0.05, 192};
  return {5e-5, 36};
}

Metrics compute_metrics(std::span<const int> predictions, std::span<const int> labels, std::span<const int> domains,
                        const std::vector<std::string>& domain_names) {
  if (predictions.size() != labels.size() || labels.size() != domains.size())
    throw ContractError("compute_metrics: predictions, labels and domains differ in length");
  std::vector<int> correct(domain_names.size(), 0), count(domain_names.size(), 0);
  for (std::size_t i = 0; i < labels.size(); ++i) {
    const int d = domains[i];
    if (d < 0 || d >= static_cast<int>(domain_names.size())) throw ContractError("compute_metrics: domain out of range");
    ++count[static_cast<std::size_t>(d)];
    if (predictions[i] == labels[i]) ++correct[static_cast<std::size_t>(d)];
  }
  Metrics m;
  long total_correct = 0, total = 0;
  double acc_sum = 0.0;
  int present = 0;
  for (std::size_t d = 0; d < domain_names.size(); ++d) {
    if (count[d] == 0) continue;
    const double acc = static_cast<double>(correct[d]) / count[d];
    m.per_domain[domain_names[d]] = acc;
    m.counts[domain_names[d]] = count[d];
    acc_sum += acc;
    ++present;
    total_correct += correct[d];
    total += count[d];
  }
  if (total > 0) {
    m.overall = static_cast<double>(total_correct) / static_cast<double>(total);
    m.average = acc_sum / present;
  }
  return m;
}

nlohmann::json metrics_to_json(const Metrics& m) {
  return nlohmann::json{{"overall", m.overall}, {"average", m.average}, {"per_domain", m.per_domain},
                        {"counts", m.counts}};
}

MultiDomainDataset select_labeled_subset(const MultiDomainDataset& data, double fraction, std::uint64_t seed) {
  if (!data.labeled()) throw DataError("select_labeled_subset: dataset has no labels");
  if (!(fraction > 0.0 && fraction <= 1.0)) throw ConfigError("label fraction must be in (0,1]");
  const int K = data.num_domains();
  const int C = static_cast<int>(data.class_names.size());
  std::vector<std::vector<int>> strata(static_cast<std::size_t>(K * C));
  for (int i = 0; i < data.size(); ++i)
    strata[static_cast<std::size_t>(data.domains[static_cast<std::size_t>(i)] * C +
                                    data.labels[static_cast<std::size_t>(i)])]
        .push_back(i);
  std::vector<int> live;
  for (int s = 0; s < K * C; ++s)
    if (!strata[static_cast<std::size_t>(s)].empty()) live.push_back(s);

  const int target = static_cast<int>(std::lround(fraction * data.size()));
  if (target < static_cast<int>(live.size()))
    throw DataError("label fraction " + std::to_string(fraction) + " selects " + std::to_string(target) +
                    " items but there are " + std::to_string(live.size()) +
                    " (domain, class) strata; a stratum would be empty");

  std::vector<int> quota(static_cast<std::size_t>(K * C), 0);
  std::vector<double> exact(static_cast<std::size_t>(K * C), 0.0);
  int sum = 0;
  for (int s : live) {
    const auto k = static_cast<std::size_t>(s);
    const int n = static_cast<int>(strata[k].size());
    exact[k] = fraction * n;
    quota[k] = std::clamp(static_cast<int>(std::floor(exact[k] + 1e-9)), 1, n);
    sum += quota[k];
  }
  while (sum < target) {
    int best = -1;
    for (int s : live) {
      const auto k = static_cast<std::size_t>(s);
      if (quota[k] >= static_cast<int>(strata[k].size())) continue;
      if (best < 0 || exact[k] - quota[k] > exact[static_cast<std::size_t>(best)] - quota[static_cast<std::size_t>(best)])
        best = s;
    }
    ++quota[static_cast<std::size_t>(best)];
    ++sum;
  }
  while (sum > target) {
    int best = -1;
    for (int s : live) {
      const auto k = static_cast<std::size_t>(s);
      if (quota[k] <= 1) continue;
      if (best < 0 || exact[k] - quota[k] < exact[static_cast<std::size_t>(best)] - quota[static_cast<std::size_t>(best)])
        best = s;
    }
    --quota[static_cast<std::size_t>(best)];
    --sum;
  }

  std::vector<int> picked;
  for (int s : live) {
    auto items = strata[static_cast<std::size_t>(s)];
    Rng rng = Rng::derive(seed, {0x5E1EC7, static_cast<std::uint64_t>(s)});
    rng.shuffle(items);
    items.resize(static_cast<std::size_t>(quota[static_cast<std::size_t>(s)]));
    picked.insert(picked.end(), items.begin(), items.end());
  }
  std::sort(picked.begin(), picked.end());
  return data.subset(picked);
}

namespace {

constexpr int kFeatureChunk = 64;

template <typename F>
Mat features_by_chunk(const DisMae& model, const MultiDomainDataset& data, int width, F&& f) {
  Mat out(data.size(), width);
  for (int start = 0; start < data.size(); start += kFeatureChunk) {
    const int end = std::min(data.size(), start + kFeatureChunk);
    std::vector<int> idx(static_cast<std::size_t>(end - start));
    std::iota(idx.begin(), idx.end(), start);
    const Mat part = f(patchify(data.batch(idx), model.config()));
    std::copy(part.data.begin(), part.data.end(), out.data.begin() + static_cast<std::ptrdiff_t>(start) * width);
  }
  return out;
}

void require_labels(const MultiDomainDataset& d, const DisMae& model, const char* who) {
  if (!d.labeled()) throw DataError(std::string(who) + ": labeled subset required");
  if (!model.has_label_head()) throw ConfigError(std::string(who) + ": model has no label head (num_classes = 0)");
  for (int y : d.labels)
    if (y < 0 || y >= model.config().num_classes)
      throw DataError(std::string(who) + ": class index " + std::to_string(y) + " outside the label head");
}

std::vector<std::vector<int>> epoch_batches(int n, int batch_size, std::uint64_t seed, int epoch) {
  std::vector<int> order(static_cast<std::size_t>(n));
  std::iota(order.begin(), order.end(), 0);
  Rng rng = Rng::derive(seed, {0xADA97, static_cast<std::uint64_t>(epoch)});
  rng.shuffle(order);
  std::vector<std::vector<int>> out;
  for (int s = 0; s < n; s += batch_size)
    out.emplace_back(order.begin() + s, order.begin() + std::min(n, s + batch_size));
  return out;
}

std::string lr_rule_text(const char* stage, ReferenceLr ref, int batch, double mult, double lr) {
  char buf[256];
  std::snprintf(buf, sizeof buf, "%s lr = %g (reference) x %d / %d (desk/reference batch) x %g = %.6g", stage, ref.lr,
                batch, ref.batch, mult, lr);
  return buf;
}

}  // namespace

Mat dataset_semantic_features(const DisMae& model, const MultiDomainDataset& data) {
  return features_by_chunk(model, data, model.config().embed_dim,
                           [&](const PatchGrid& g) { return model.semantic_features(g); });
}

Mat dataset_variation_features(const DisMae& model, const MultiDomainDataset& data) {
  return features_by_chunk(model, data, model.config().embed_dim,
                           [&](const PatchGrid& g) { return model.variation_features(g); });
}

AdaptLog linear_probe(TrainedState& state, const MultiDomainDataset& labeled, const ProtocolConfig& cfg) {
  require_labels(labeled, state.model, "linear_probe");
  if (dispatch(cfg.label_fraction, cfg.probe_threshold) != Adaptation::linear_probe)
    throw ConfigError("linear_probe: label fraction " + std::to_string(cfg.label_fraction) +
                      " is at or above the probe threshold " + std::to_string(cfg.probe_threshold) +
                      "; this protocol calls for full finetuning");
  const ReferenceLr ref = reference_lr(cfg.label_fraction);
  AdaptLog log;
  log.lr = ref.lr * cfg.probe.batch_size / ref.batch * cfg.probe.lr_multiplier;
  log.lr_rule = lr_rule_text("probe", ref, cfg.probe.batch_size, cfg.probe.lr_multiplier, log.lr);

  DisMae& model = state.model;
  model.reset_label_head();
  const Mat raw = dataset_semantic_features(model, labeled);
  const int H = raw.cols;
  std::vector<double> mu(static_cast<std::size_t>(H), 0.0), sd(static_cast<std::size_t>(H), 0.0);
  for (int i = 0; i < raw.rows; ++i)
    for (int c = 0; c < H; ++c) mu[static_cast<std::size_t>(c)] += raw(i, c) / raw.rows;
  for (int i = 0; i < raw.rows; ++i)
    for (int c = 0; c < H; ++c) {
      const double d = raw(i, c) - mu[static_cast<std::size_t>(c)];
      sd[static_cast<std::size_t>(c)] += d * d / raw.rows;
    }
  for (auto& s : sd) s = std::sqrt(s + 1e-6);
  Mat feats = raw;
  for (int i = 0; i < feats.rows; ++i)
    for (int c = 0; c < H; ++c)
      feats(i, c) = (raw(i, c) - mu[static_cast<std::size_t>(c)]) / sd[static_cast<std::size_t>(c)];
  const GroupMask head{ParamGroup::label_head};
  const auto indices = model.params().indices_in(head);
  Sgd sgd(SgdConfig{log.lr, cfg.probe.momentum, cfg.probe.weight_decay});
  for (int e = 1; e <= cfg.probe.epochs; ++e) {
    double total = 0.0;
    const auto batches = epoch_batches(labeled.size(), cfg.probe.batch_size, cfg.seed, e);
    for (const auto& b : batches) {
      std::vector<int> y;
      for (int i : b) y.push_back(labeled.labels[static_cast<std::size_t>(i)]);
      Tape tape(head);
      Var loss = cross_entropy(model.label_logits(tape, tape.constant(gather_rows(feats, b))), y);
      total += loss.scalar();
      tape.backward(loss);
      GradBuffer grads;
      tape.accumulate_param_grads(grads, model.params().size());
      sgd.step(model.params(), grads, indices);
    }
    log.epoch_loss.push_back(total / static_cast<double>(batches.size()));
  }
  // Fold the standardization into the head so it stays one affine map on raw s0.
  Mat& w = model.params()[indices[0]].value;
  Mat& b = model.params()[indices[1]].value;
  for (int c = 0; c < H; ++c)
    for (int k = 0; k < w.cols; ++k) {
      w(c, k) /= sd[static_cast<std::size_t>(c)];
      b(0, k) -= mu[static_cast<std::size_t>(c)] * w(c, k);
    }
  return log;
}

TrainedState full_finetune(const TrainedState& state, const MultiDomainDataset& labeled, const ProtocolConfig& cfg,
                           AdaptLog* log_out) {
  require_labels(labeled, state.model, "full_finetune");
  if (dispatch(cfg.label_fraction, cfg.probe_threshold) != Adaptation::full_finetune)
    throw ConfigError("full_finetune: label fraction " + std::to_string(cfg.label_fraction) +
                      " is below the probe threshold " + std::to_string(cfg.probe_threshold) +
                      "; this protocol calls for a linear probe");
  const ReferenceLr ref = reference_lr(cfg.label_fraction);
  AdaptLog log;
  log.lr = ref.lr * cfg.finetune.batch_size / ref.batch * cfg.finetune.lr_multiplier;
  log.lr_rule = lr_rule_text("finetune", ref, cfg.finetune.batch_size, cfg.finetune.lr_multiplier, log.lr);

  TrainedState out = state;
  DisMae& model = out.model;
  model.reset_label_head();
  const GroupMask groups{ParamGroup::semantic, ParamGroup::label_head};
  const auto indices = model.params().indices_in(groups);
  AdamW opt(AdamWConfig{log.lr, 0.9, 0.999, 1e-8, cfg.finetune.weight_decay});
  for (int e = 1; e <= cfg.finetune.epochs; ++e) {
    double total = 0.0;
    const auto batches = epoch_batches(labeled.size(), cfg.finetune.batch_size, cfg.seed, e);
    for (const auto& b : batches) {
      const ImageBatch batch = labeled.batch(b);
      const MaskedTokens full = full_view(patchify(batch, model.config()));
      Tape tape(groups);
      Var s0 = model.encode_semantic(tape, full.visible, full.plan).cls;
      Var loss = cross_entropy(model.label_logits(tape, s0), batch.labels);
      if (!std::isfinite(loss.scalar())) throw NumericError("non-finite finetune loss at epoch " + std::to_string(e));
      total += loss.scalar();
      tape.backward(loss);
      GradBuffer grads;
      tape.accumulate_param_grads(grads, model.params().size());
      clip_grad_norm(grads, indices, 1.0);
      opt.step(model.params(), grads, indices, log.lr);
    }
    log.epoch_loss.push_back(total / static_cast<double>(batches.size()));
  }
  if (log_out) *log_out = std::move(log);
  return out;
}

std::vector<int> predict_labels(const DisMae& model, const MultiDomainDataset& data) {
  const Mat logits = model.classify_label(dataset_semantic_features(model, data));
  std::vector<int> out(static_cast<std::size_t>(data.size()));
  for (int i = 0; i < data.size(); ++i) {
    const auto r = logits.row(i);
    out[static_cast<std::size_t>(i)] = static_cast<int>(std::max_element(r.begin(), r.end()) - r.begin());
  }
  return out;
}

Metrics evaluate(const DisMae& model, const MultiDomainDataset& test) {
  if (!test.labeled()) throw DataError("evaluate: test items need labels");
  require_labels(test, model, "evaluate");
  return compute_metrics(predict_labels(model, test), test.labels, test.domains, test.domain_names);
}

double domain_probe(const Mat& reps, std::span<const int> domains, std::uint64_t seed) {
  if (static_cast<std::size_t>(reps.rows) != domains.size())
    throw ContractError("domain_probe: representation and label counts differ");
  std::map<int, std::vector<int>> by_domain;
  for (int i = 0; i < reps.rows; ++i) by_domain[domains[static_cast<std::size_t>(i)]].push_back(i);
  if (by_domain.size() < 2) throw DataError("domain_probe: needs at least 2 domains");
  const int K = by_domain.rbegin()->first + 1;
  std::vector<int> train, test;
  for (auto& [d, items] : by_domain) {
    if (items.size() < 2) throw DataError("domain_probe: every domain needs at least 2 items");
    Rng rng = Rng::derive(seed, {0xD0E, static_cast<std::uint64_t>(d)});
    rng.shuffle(items);
    const int n = static_cast<int>(items.size());
    const int n_test = std::clamp(static_cast<int>(std::lround(0.2 * n)), 1, n - 1);
    test.insert(test.end(), items.begin(), items.begin() + n_test);
    train.insert(train.end(), items.begin() + n_test, items.end());
  }

  const int H = reps.cols;
  std::vector<double> mean(static_cast<std::size_t>(H), 0.0), sd(static_cast<std::size_t>(H), 0.0);
  for (int i : train)
    for (int c = 0; c < H; ++c) mean[static_cast<std::size_t>(c)] += reps(i, c);
  for (auto& m : mean) m /= static_cast<double>(train.size());
  for (int i : train)
    for (int c = 0; c < H; ++c) {
      const double d = reps(i, c) - mean[static_cast<std::size_t>(c)];
      sd[static_cast<std::size_t>(c)] += d * d;
    }
  for (auto& s : sd) {
    s = std::sqrt(s / static_cast<double>(train.size()));
    if (s < 1e-12) s = 1.0;
  }
  auto standardized = [&](const std::vector<int>& rows) {
    Mat x(static_cast<int>(rows.size()), H);
    for (std::size_t r = 0; r < rows.size(); ++r)
      for (int c = 0; c < H; ++c)
        x(static_cast<int>(r), c) =
            (reps(rows[r], c) - mean[static_cast<std::size_t>(c)]) / sd[static_cast<std::size_t>(c)];
    return x;
  };
  const Mat x_train = standardized(train);
  const Mat x_test = standardized(test);
  std::vector<int> y_train, y_test;
  for (int i : train) y_train.push_back(domains[static_cast<std::size_t>(i)]);
  for (int i : test) y_test.push_back(domains[static_cast<std::size_t>(i)]);

  ParameterStore store;
  Rng init = Rng::derive(seed, {0xD0E1});
  auto random_mat = [&](int r, int c) {
    Mat m(r, c);
    const double s = 1.0 / std::sqrt(static_cast<double>(r));
    for (auto& v : m.data) v = s * init.normal();
    return m;
  };
  const int w1 = store.add("fc1.weight", ParamGroup::label_head, random_mat(H, H), false);
  const int b1 = store.add("fc1.bias", ParamGroup::label_head, Mat(1, H), false);
  const int w2 = store.add("fc2.weight", ParamGroup::label_head, random_mat(H, K), false);
  const int b2 = store.add("fc2.bias", ParamGroup::label_head, Mat(1, K), false);
  const GroupMask all{ParamGroup::label_head};
  const auto indices = store.indices_in(all);
  auto forward = [&](Tape& tape, const Mat& x) {
    Var h = gelu(linear(tape.constant(x), tape.param(store, w1), tape.param(store, b1)));
    return linear(h, tape.param(store, w2), tape.param(store, b2));
  };
  AdamW opt(AdamWConfig{1e-2, 0.9, 0.999, 1e-8, 0.0});
  for (int it = 0; it < 300; ++it) {
    Tape tape(all);
    Var loss = cross_entropy(forward(tape, x_train), y_train);
    tape.backward(loss);
    GradBuffer grads;
    tape.accumulate_param_grads(grads, store.size());
    opt.step(store, grads, indices, 1e-2);
  }
  Tape tape;
  const Mat logits = forward(tape, x_test).value();
  int correct = 0;
  for (int r = 0; r < logits.rows; ++r) {
    const auto row = logits.row(r);
    if (std::max_element(row.begin(), row.end()) - row.begin() == y_test[static_cast<std::size_t>(r)]) ++correct;
  }
  return static_cast<double>(correct) / static_cast<double>(y_test.size());
}

}  // namespace dismae
