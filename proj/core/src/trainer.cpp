// Copyright (c) 2026, The dismae Authors
// SPDX-License-Identifier: Apache-2.0

#include "dismae/trainer.hpp"

#include <cmath>
#include <cstdio>
#include <fstream>
#include <numbers>
#include <sstream>

#include "dismae/config.hpp"
#include "dismae/error.hpp"
#include "dismae/hash.hpp"

namespace fs = std::filesystem;

namespace dismae {

void TrainConfig::validate() const {
  if (epochs < 1) throw ConfigError("train: epochs must be >= 1");
  if (adaptive_interval < 1) throw ConfigError("train: adaptive_interval must be >= 1");
  if (adaptive_max_epoch < 0) throw ConfigError("train: adaptive_max_epoch must be >= 0");
  if (per_domain_batch < 2)
    throw ConfigError("train: per_domain_batch must be >= 2 (each anchor needs an intra-domain partner)");
  if (checkpoint_interval < 0) throw ConfigError("train: checkpoint_interval must be >= 0");
  if (!(backbone.lr > 0.0)) throw ConfigError("train: backbone lr must be > 0");
  if (!(classifier.lr > 0.0)) throw ConfigError("train: classifier lr must be > 0");
  if (!(grad_clip >= 0.0)) throw ConfigError("train: grad_clip must be >= 0");
}

std::vector<int> classifier_schedule(int epochs, int interval, int max_epoch) {
  std::vector<int> out;
  for (int e = 1; e <= epochs; ++e)
    if (e % interval == 0 && e <= max_epoch) out.push_back(e);
  return out;
}

Trainer::Trainer(ModelConfig model, LossConfig loss, TrainConfig train)
    : model_(model), loss_(loss), train_(train) {
  model_.validate();
  loss_.validate(model_.num_domains);
  train_.validate();
  if (loss_.lambda1 > 0.0 && !model_.variation_branch)
    throw ConfigError("loss: lambda1 > 0 needs the variation branch (variation swaps drive the contrastive term)");
  if (model_.mask_ratio <= 0.0) throw ConfigError("model: mask_ratio must be > 0 for training");
  if (train_.mode == TrainMode::dg && model_.num_classes < 1)
    throw ConfigError("train: dg mode needs num_classes >= 1");
}

GroupMask Trainer::backbone_groups() const {
  GroupMask g{ParamGroup::semantic, ParamGroup::decoder};
  if (model_.variation_branch) g.set(ParamGroup::variation);
  if (train_.mode == TrainMode::dg) g.set(ParamGroup::label_head);
  return g;
}

TrainedState Trainer::init_state() const {
  return TrainedState{DisMae(model_, train_.seed), AdamW(train_.backbone), Sgd(train_.classifier), 0,
                      Rng::derive(train_.seed, {0x7EA1}), config_fingerprint(model_, loss_, train_)};
}

bool Trainer::classifier_scheduled(int epoch) const {
  return epoch >= 1 && epoch % train_.adaptive_interval == 0 && epoch <= train_.adaptive_max_epoch;
}

double Trainer::learning_rate(int epoch) const {
  if (train_.lr_schedule == LrSchedule::constant) return train_.backbone.lr;
  const double t = static_cast<double>(epoch - 1) / train_.epochs;
  return train_.backbone.lr * 0.5 * (1.0 + std::cos(std::numbers::pi * t));
}

ObjectiveTerms record_objective(Tape& tape, const DisMae& model, const PatchGrid& grid, const MaskedTokens& masked,
                                const ImageBatch& batch, const LossConfig& loss, TrainMode mode, Rng& rng) {
  const ModelConfig& cfg = model.config();
  const int B = batch.count;
  const DisMae::SemanticOutput sem = model.encode_semantic(tape, masked.visible, masked.plan);
  std::optional<Var> v0;
  if (cfg.variation_branch) v0 = model.encode_variation(tape, masked.visible, masked.plan);

  ObjectiveTerms out;
  out.probs = model.classify_domain(sem.cls.value());
  if (loss.lambda1 > 0.0) {
    const auto pairings = sample_pairings(batch.domains, loss, rng);
    for (const auto& p : pairings)
      if (p.partners.empty()) ++out.empty_negative_sets;
    SwapReconstructions swaps = swap_reconstructions(tape, model, sem.tokens, *v0, masked.plan, pairings);
    std::vector<int> target_rows;
    const int L = grid.num_patches();
    for (int a : swaps.anchor_of)
      for (int p = 0; p < L; ++p) target_rows.push_back(a * L + p);
    const Mat targets = gather_rows(grid.tokens, target_rows);
    Var dist = per_sample_recon_error(swaps.predictions, targets, swaps.plan);
    std::vector<int> anchor_rows(static_cast<std::size_t>(B));
    for (int i = 0; i < B; ++i) anchor_rows[static_cast<std::size_t>(i)] = i;
    out.rec = gamma_recon_loss(gather_rows(dist, anchor_rows), loss.gamma);
    Var terms = contrastive_terms(similarity(dist, loss.gamma), swaps.groups, loss.tau);
    const auto p = domain_propensity(out.probs, batch.domains, loss.p_clamp_min);
    const auto w = adaptive_weights(p, loss.weight_mode, cfg.num_domains, rng);
    out.con = adaptive_contrastive_loss(terms, w);
  } else {
    Var pred = model.decode(tape, sem.tokens, v0 ? &*v0 : nullptr, masked.plan);
    out.rec = gamma_recon_loss(per_sample_recon_error(pred, grid.tokens, masked.plan), loss.gamma);
    out.con = tape.constant(Mat(1, 1, 0.0));
  }

  if (mode == TrainMode::dg) {
    if (batch.labels.size() != static_cast<std::size_t>(B))
      throw DataError("dg training needs class labels on every sample; use udg mode for unlabeled data");
    Var logits = model.label_logits(tape, sem.cls);
    out.total = dg_objective(out.rec, out.con, logits, batch.labels, loss.lambda1, loss.lambda2);
    out.ce = cross_entropy(logits, batch.labels).scalar();
  } else {
    out.total = udg_objective(out.rec, out.con, loss.lambda1);
  }
  return out;
}

StepStats Trainer::backbone_step(TrainedState& state, const ImageBatch& batch, double lr) const {
  const DisMae& model = state.model;
  const PatchGrid grid = patchify(batch, model_);
  MaskedTokens masked = random_masking(grid, model_.mask_ratio, state.rng);

  Tape tape(backbone_groups());
  const ObjectiveTerms obj = record_objective(tape, model, grid, masked, batch, loss_, train_.mode, state.rng);

  StepStats st;
  st.domains = batch.domains;
  for (int i = 0; i < batch.count; ++i)
    st.propensity.push_back(obj.probs(i, batch.domains[static_cast<std::size_t>(i)]));
  st.empty_negative_sets = obj.empty_negative_sets;
  st.loss_ce = obj.ce;
  st.loss_rec = obj.rec.scalar();
  st.loss_con = obj.con.scalar();
  st.loss_total = obj.total.scalar();
  if (!std::isfinite(st.loss_total) || !std::isfinite(st.loss_rec) || !std::isfinite(st.loss_con)) {
    std::ostringstream os;
    os << "non-finite loss at epoch " << state.epoch + 1 << ": rec=" << st.loss_rec << " con=" << st.loss_con
       << " ce=" << st.loss_ce << " total=" << st.loss_total << "; batch domains:";
    for (int d : batch.domains) os << ' ' << d;
    throw NumericError(os.str());
  }

  tape.backward(obj.total);
  GradBuffer grads;
  tape.accumulate_param_grads(grads, model.params().size());
  const auto indices = model.params().indices_in(backbone_groups());
  st.grad_norm = clip_grad_norm(grads, indices, train_.grad_clip);
  if (!std::isfinite(st.grad_norm)) throw NumericError("non-finite gradient norm");
  state.backbone_opt.step(state.model.params(), grads, indices, lr);
  return st;
}

double Trainer::adaptive_classifier_step(TrainedState& state, const MultiDomainDataset& data, int epoch) const {
  if (!classifier_scheduled(epoch))
    throw ContractError("adaptive classifier step invoked at epoch " + std::to_string(epoch) +
                        ", outside the schedule (e mod T_ad == 0 and e <= E_ad)");
  auto batches = domain_balanced_batches(data, train_.per_domain_batch, train_.seed, epoch);
  if (train_.classifier_pass == ClassifierPass::single_batch && batches.size() > 1) batches.resize(1);
  const GroupMask cls_group{ParamGroup::domain_classifier};
  const auto indices = state.model.params().indices_in(cls_group);
  double total = 0.0;
  for (const auto& idx : batches) {
    const ImageBatch batch = data.batch(idx);
    const PatchGrid grid = patchify(batch, model_);
    MaskedTokens masked = random_masking(grid, model_.mask_ratio, state.rng);
    Mat s0;
    {
      Tape frozen;
      s0 = state.model.encode_semantic(frozen, masked.visible, masked.plan).cls.value();
    }
    Tape tape(cls_group);
    Var loss = cross_entropy(state.model.domain_logits(tape, tape.constant(std::move(s0))), batch.domains);
    if (!std::isfinite(loss.scalar())) throw NumericError("non-finite domain classifier loss");
    total += loss.scalar();
    tape.backward(loss);
    GradBuffer grads;
    tape.accumulate_param_grads(grads, state.model.params().size());
    state.classifier_opt.step(state.model.params(), grads, indices);
  }
  return batches.empty() ? 0.0 : total / static_cast<double>(batches.size());
}

namespace {

std::string fmt_value(double v) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.12g", v);
  return buf;
}

/// Keeps header + rows with epoch <= keep_epoch.
std::string truncated_log(const fs::path& path, int keep_epoch) {
  std::string out = "epoch,series,value\n";
  if (keep_epoch <= 0 || !fs::exists(path)) return out;
  std::istringstream in(read_file(path));
  std::string line;
  std::getline(in, line);
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    const int e = std::stoi(line.substr(0, line.find(',')));
    if (e <= keep_epoch) out += line + "\n";
  }
  return out;
}

}  // namespace

TrainedState Trainer::train(const MultiDomainDataset& data, const fs::path& run_dir,
                            std::optional<TrainedState> resume) const {
  if (data.num_domains() < 2)
    throw DataError("training needs at least 2 domains (intra-domain contrast is degenerate with one)");
  if (data.num_domains() != model_.num_domains)
    throw ConfigError("model.num_domains (" + std::to_string(model_.num_domains) + ") != training domains (" +
                      std::to_string(data.num_domains()) + ")");
  if (train_.mode == TrainMode::dg && !data.labeled())
    throw DataError("dg training needs labels on every sample; use udg mode for unlabeled data");

  TrainedState state = resume ? std::move(*resume) : init_state();
  if (state.fingerprint != config_fingerprint(model_, loss_, train_))
    throw ConfigError("resume state was produced under a different configuration");

  const fs::path log_path = run_dir / "logs" / "scalars.csv";
  std::string log = truncated_log(log_path, state.epoch);
  write_file(log_path, log);

  for (int e = state.epoch + 1; e <= train_.epochs; ++e) {
    const double lr = learning_rate(e);
    const auto batches = domain_balanced_batches(data, train_.per_domain_batch, train_.seed, e);
    double rec = 0.0, con = 0.0, ce = 0.0, tot = 0.0;
    int empty_sets = 0;
    std::vector<double> p_sum(static_cast<std::size_t>(model_.num_domains), 0.0);
    std::vector<int> p_cnt(static_cast<std::size_t>(model_.num_domains), 0);
    for (const auto& idx : batches) {
      const StepStats st = backbone_step(state, data.batch(idx), lr);
      rec += st.loss_rec;
      con += st.loss_con;
      ce += st.loss_ce;
      tot += st.loss_total;
      empty_sets += st.empty_negative_sets;
      for (std::size_t i = 0; i < st.propensity.size(); ++i) {
        p_sum[static_cast<std::size_t>(st.domains[i])] += st.propensity[i];
        ++p_cnt[static_cast<std::size_t>(st.domains[i])];
      }
    }
    if (classifier_scheduled(e)) adaptive_classifier_step(state, data, e);
    state.epoch = e;

    const double nb = std::max<double>(1.0, static_cast<double>(batches.size()));
    const std::string ep = std::to_string(e);
    log += ep + ",loss_rec," + fmt_value(rec / nb) + "\n";
    log += ep + ",loss_con," + fmt_value(con / nb) + "\n";
    log += ep + ",loss_total," + fmt_value(tot / nb) + "\n";
    if (train_.mode == TrainMode::dg) log += ep + ",loss_ce," + fmt_value(ce / nb) + "\n";
    for (int d = 0; d < model_.num_domains; ++d) {
      const auto k = static_cast<std::size_t>(d);
      log += ep + ",propensity/" + data.domain_names[k] + "," +
             fmt_value(p_cnt[k] ? p_sum[k] / p_cnt[k] : 0.0) + "\n";
    }
    if (empty_sets > 0)
      std::fprintf(stderr, "warning: epoch %d: %d anchor(s) had no eligible negatives\n", e, empty_sets);
    write_file(log_path, log);

    if (train_.checkpoint_interval > 0 && e % train_.checkpoint_interval == 0) {
      char name[32];
      std::snprintf(name, sizeof name, "epoch-%04d", e);
      checkpoint_save(state, run_dir / "checkpoints" / name);
    }
  }
  checkpoint_save(state, run_dir / "final");
  return state;
}

TrainedState train_udg(const Trainer& trainer, const MultiDomainDataset& data, const fs::path& run_dir,
                       std::optional<TrainedState> resume) {
  if (trainer.train_config().mode != TrainMode::udg) throw ConfigError("train_udg: train.mode must be 'udg'");
  return trainer.train(data, run_dir, std::move(resume));
}

TrainedState train_dg(const Trainer& trainer, const MultiDomainDataset& data, const fs::path& run_dir,
                      std::optional<TrainedState> resume) {
  if (trainer.train_config().mode != TrainMode::dg) throw ConfigError("train_dg: train.mode must be 'dg'");
  if (!data.labeled()) throw DataError("train_dg: dataset has no labels; use udg mode");
  return trainer.train(data, run_dir, std::move(resume));
}

}  // namespace dismae
