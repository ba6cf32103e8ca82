// Copyright (c) 2026, The dismae Authors
// SPDX-License-Identifier: Apache-2.0

#include <bit>
#include <cstring>
#include <map>

#include <nlohmann/json.hpp>

#include "dismae/config.hpp"
#include "dismae/error.hpp"
#include "dismae/hash.hpp"
#include "dismae/trainer.hpp"

namespace fs = std::filesystem;
using nlohmann::json;

namespace dismae {

static_assert(std::endian::native == std::endian::little, "checkpoint arrays are written as raw little-endian");

namespace {

constexpr const char* kFormat = "dismae-checkpoint/1";

std::string file_for(const std::string& name) {
  std::string f;
  for (char c : name) {
    if (c == '/') f += "__";
    else f += c;
  }
  return f + ".bin";
}

std::string bytes_of(const Mat& m) {
  std::string out(m.data.size() * sizeof(double), '\0');
  if (!m.data.empty()) std::memcpy(out.data(), m.data.data(), out.size());
  return out;
}

}  // namespace

void checkpoint_save(const TrainedState& state, const fs::path& dir) {
  fs::create_directories(dir);
  const ParameterStore& store = state.model.params();
  json arrays = json::array();
  auto emit = [&](const std::string& name, const Mat& m) {
    const std::string file = file_for(name);
    const std::string bytes = bytes_of(m);
    write_file(dir / file, bytes);
    arrays.push_back({{"name", name},
                      {"file", file},
                      {"shape", {m.rows, m.cols}},
                      {"dtype", "float64_le"},
                      {"sha256", sha256_hex(bytes)}});
  };
  auto slot = [](const std::vector<Mat>& v, int i) -> const Mat* {
    if (i >= static_cast<int>(v.size()) || v[static_cast<std::size_t>(i)].empty()) return nullptr;
    return &v[static_cast<std::size_t>(i)];
  };
  for (int i = 0; i < store.size(); ++i) emit("param/" + store[i].name, store[i].value);
  for (int i = 0; i < store.size(); ++i) {
    if (const Mat* m = slot(state.backbone_opt.first_moment, i)) emit("adamw.m/" + store[i].name, *m);
    if (const Mat* v = slot(state.backbone_opt.second_moment, i)) emit("adamw.v/" + store[i].name, *v);
    if (const Mat* b = slot(state.classifier_opt.momentum, i)) emit("sgd.momentum/" + store[i].name, *b);
  }
  json manifest;
  manifest["format"] = kFormat;
  manifest["epoch"] = state.epoch;
  manifest["fingerprint"] = state.fingerprint;
  manifest["rng_state"] = state.rng.state();
  manifest["adamw_steps"] = state.backbone_opt.steps;
  manifest["arrays"] = std::move(arrays);
  write_file(dir / "manifest.json", manifest.dump(2) + "\n");
}

TrainedState checkpoint_load(const fs::path& dir, const ModelConfig& model, const LossConfig& loss,
                             const TrainConfig& train) {
  const fs::path mpath = dir / "manifest.json";
  if (!fs::exists(mpath)) throw DataError("checkpoint manifest missing: " + mpath.string());
  json manifest;
  try {
    manifest = json::parse(read_file(mpath));
  } catch (const json::exception& e) {
    throw DataError("checkpoint manifest unreadable: " + std::string(e.what()));
  }
  if (manifest.value("format", "") != kFormat) throw DataError("unsupported checkpoint format in " + mpath.string());
  const std::string expect = config_fingerprint(model, loss, train);
  if (manifest.at("fingerprint").get<std::string>() != expect)
    throw DataError("checkpoint fingerprint mismatch: " + dir.string() +
                    " was written under a different model/loss/train configuration");

  Trainer trainer(model, loss, train);
  TrainedState state = trainer.init_state();
  ParameterStore& store = state.model.params();

  std::map<std::string, Mat> arrays;
  for (const json& a : manifest.at("arrays")) {
    const std::string name = a.at("name");
    const fs::path file = dir / a.at("file").get<std::string>();
    if (!fs::exists(file)) throw DataError("checkpoint array missing: " + name);
    const std::string bytes = read_file(file);
    if (sha256_hex(bytes) != a.at("sha256").get<std::string>())
      throw DataError("checkpoint array hash mismatch: " + name);
    const int rows = a.at("shape")[0], cols = a.at("shape")[1];
    Mat m(rows, cols);
    if (bytes.size() != m.data.size() * sizeof(double)) throw DataError("checkpoint array size mismatch: " + name);
    if (!bytes.empty()) std::memcpy(m.data.data(), bytes.data(), bytes.size());
    arrays.emplace(name, std::move(m));
  }

  auto take = [&](const std::string& name, const Mat& like) -> std::optional<Mat> {
    auto it = arrays.find(name);
    if (it == arrays.end()) return std::nullopt;
    if (!it->second.same_shape(like)) throw DataError("checkpoint array shape mismatch: " + name);
    return std::move(it->second);
  };
  auto put = [&](std::vector<Mat>& slots, int i, Mat m) {
    if (static_cast<int>(slots.size()) < store.size()) slots.resize(static_cast<std::size_t>(store.size()));
    slots[static_cast<std::size_t>(i)] = std::move(m);
  };
  for (int i = 0; i < store.size(); ++i) {
    Parameter& p = store[i];
    auto v = take("param/" + p.name, p.value);
    if (!v) throw DataError("checkpoint array missing: param/" + p.name);
    p.value = std::move(*v);
    if (auto m = take("adamw.m/" + p.name, p.value)) put(state.backbone_opt.first_moment, i, std::move(*m));
    if (auto s = take("adamw.v/" + p.name, p.value)) put(state.backbone_opt.second_moment, i, std::move(*s));
    if (auto b = take("sgd.momentum/" + p.name, p.value)) put(state.classifier_opt.momentum, i, std::move(*b));
  }
  state.epoch = manifest.at("epoch");
  state.backbone_opt.steps = manifest.at("adamw_steps");
  state.rng.set_state(manifest.at("rng_state").get<std::string>());
  return state;
}

}  // namespace dismae
