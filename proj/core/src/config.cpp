// Copyright (c) 2026, The dismae Authors
// SPDX-License-Identifier: Apache-2.0

#include "dismae/config.hpp"

#include <cstdlib>
#include <fstream>
#include <set>
#include <sstream>

#include "dismae/error.hpp"
#include "dismae/hash.hpp"

namespace dismae {

using nlohmann::json;

namespace {

// Tracks which keys of an object were consumed so leftovers can be reported.
class Section {
 public:
  Section(const json& j, std::string name) : j_(j), name_(std::move(name)) {
    if (!j_.is_object()) throw ConfigError(name_ + ": expected a JSON object");
  }

  template <typename T>
  void get(const char* key, T& out) {
    seen_.insert(key);
    auto it = j_.find(key);
    if (it == j_.end() || it->is_null()) return;
    try {
      if constexpr (std::is_same_v<T, bool>) {
        if (!it->is_boolean()) throw ConfigError("");
      } else if constexpr (std::is_integral_v<T>) {
        if (!it->is_number_integer()) throw ConfigError("");
        if constexpr (std::is_unsigned_v<T>) {
          if (it->is_number_integer() && !it->is_number_unsigned() && it->template get<std::int64_t>() < 0)
            throw ConfigError("");
        }
      } else if constexpr (std::is_floating_point_v<T>) {
        if (!it->is_number()) throw ConfigError("");
      } else if constexpr (std::is_same_v<T, std::string>) {
        if (!it->is_string()) throw ConfigError("");
      }
      out = it->template get<T>();
    } catch (const std::exception&) {
      throw ConfigError(name_ + "." + key + ": wrong type (" + std::string(it->type_name()) + ")");
    }
  }

  template <typename F>
  void get_with(const char* key, F&& f) {
    seen_.insert(key);
    auto it = j_.find(key);
    if (it == j_.end() || it->is_null()) return;
    f(*it, name_ + "." + key);
  }

  std::string get_token(const char* key, std::string fallback) {
    get(key, fallback);
    return fallback;
  }

  void finish() const {
    for (auto it = j_.begin(); it != j_.end(); ++it) {
      if (!seen_.count(it.key())) throw ConfigError(name_ + ": unknown key '" + it.key() + "'");
    }
  }

 private:
  const json& j_;
  std::string name_;
  std::set<std::string> seen_;
};

std::vector<std::string> string_list(const json& j, const std::string& where) {
  if (!j.is_array()) throw ConfigError(where + ": expected an array of strings");
  std::vector<std::string> out;
  for (const auto& e : j) {
    if (!e.is_string()) throw ConfigError(where + ": expected an array of strings");
    out.push_back(e.get<std::string>());
  }
  return out;
}

std::vector<Rgb> color_list(const json& j, const std::string& where) {
  if (!j.is_array()) throw ConfigError(where + ": expected an array of [r,g,b] triples");
  std::vector<Rgb> out;
  for (const auto& e : j) {
    if (!e.is_array() || e.size() != 3) throw ConfigError(where + ": expected an array of [r,g,b] triples");
    Rgb c{};
    for (int k = 0; k < 3; ++k) {
      if (!e[k].is_number()) throw ConfigError(where + ": color components must be numbers");
      c[k] = e[k].get<double>();
    }
    out.push_back(c);
  }
  return out;
}

json colors_to_json(const std::vector<Rgb>& cs) {
  json a = json::array();
  for (const auto& c : cs) a.push_back({c[0], c[1], c[2]});
  return a;
}

}  // namespace

TrainMode parse_train_mode(std::string_view s) {
  if (s == "udg") return TrainMode::udg;
  if (s == "dg") return TrainMode::dg;
  throw ConfigError("unknown train mode '" + std::string(s) + "' (expected udg|dg)");
}
std::string to_string(TrainMode m) { return m == TrainMode::udg ? "udg" : "dg"; }

LrSchedule parse_lr_schedule(std::string_view s) {
  if (s == "constant") return LrSchedule::constant;
  if (s == "cosine") return LrSchedule::cosine;
  throw ConfigError("unknown lr schedule '" + std::string(s) + "' (expected constant|cosine)");
}
std::string to_string(LrSchedule s) { return s == LrSchedule::constant ? "constant" : "cosine"; }

ClassifierPass parse_classifier_pass(std::string_view s) {
  if (s == "full") return ClassifierPass::full;
  if (s == "single_batch") return ClassifierPass::single_batch;
  throw ConfigError("unknown classifier pass '" + std::string(s) + "' (expected full|single_batch)");
}
std::string to_string(ClassifierPass p) { return p == ClassifierPass::full ? "full" : "single_batch"; }

// ---- to_json -----------------------------------------------------------------

json to_json(const ModelConfig& c) {
  return json{{"image_size", c.image_size},         {"channels", c.channels},
              {"patch_size", c.patch_size},         {"embed_dim", c.embed_dim},
              {"semantic_depth", c.semantic_depth}, {"variation_depth", c.variation_depth},
              {"decoder_depth", c.decoder_depth},   {"decoder_dim", c.decoder_dim},
              {"num_heads", c.num_heads},           {"mlp_ratio", c.mlp_ratio},
              {"mask_ratio", c.mask_ratio},         {"num_domains", c.num_domains},
              {"num_classes", c.num_classes},       {"variation_branch", c.variation_branch}};
}

json to_json(const LossConfig& c) {
  return json{{"gamma", c.gamma},
              {"tau", c.tau},
              {"lambda1", c.lambda1},
              {"lambda2", c.lambda2},
              {"weight_mode", to_string(c.weight_mode)},
              {"p_clamp_min", c.p_clamp_min},
              {"max_negatives", c.max_negatives},
              {"negatives_scope", to_string(c.negatives_scope)}};
}

json to_json(const TrainConfig& c) {
  return json{{"epochs", c.epochs},
              {"adaptive_max_epoch", c.adaptive_max_epoch},
              {"adaptive_interval", c.adaptive_interval},
              {"backbone",
               {{"lr", c.backbone.lr},
                {"beta1", c.backbone.beta1},
                {"beta2", c.backbone.beta2},
                {"eps", c.backbone.eps},
                {"weight_decay", c.backbone.weight_decay}}},
              {"classifier",
               {{"lr", c.classifier.lr}, {"momentum", c.classifier.momentum}, {"weight_decay", c.classifier.weight_decay}}},
              {"per_domain_batch", c.per_domain_batch},
              {"seed", c.seed},
              {"checkpoint_interval", c.checkpoint_interval},
              {"mode", to_string(c.mode)},
              {"lr_schedule", to_string(c.lr_schedule)},
              {"classifier_pass", to_string(c.classifier_pass)},
              {"grad_clip", c.grad_clip}};
}

json factor_spec_to_json(const FactorSpec& spec) {
  json domains = json::array();
  for (const auto& d : spec.domains) {
    domains.push_back({{"name", d.name},
                       {"foreground", colors_to_json(d.foreground)},
                       {"background", colors_to_json(d.background)},
                       {"texture", d.texture}});
  }
  return json{{"num_classes", spec.num_classes},
              {"domains", domains},
              {"samples_per_class_per_domain", spec.samples_per_class_per_domain},
              {"image_size", spec.image_size},
              {"noise_std", spec.noise_std},
              {"seed", spec.seed}};
}

json to_json(const DataConfig& c) {
  json j{{"root", c.root},
         {"labeled", c.labeled},
         {"train_domains", c.train_domains},
         {"test_domains", c.test_domains},
         {"val_fraction", c.val_fraction},
         {"split_seed", c.split_seed}};
  j["spec"] = c.spec ? factor_spec_to_json(*c.spec) : json(nullptr);
  return j;
}

json to_json(const ProtocolConfig& c) {
  return json{{"label_fraction", c.label_fraction},
              {"probe_threshold", c.probe_threshold},
              {"probe",
               {{"batch_size", c.probe.batch_size},
                {"epochs", c.probe.epochs},
                {"momentum", c.probe.momentum},
                {"weight_decay", c.probe.weight_decay},
                {"lr_multiplier", c.probe.lr_multiplier}}},
              {"finetune",
               {{"batch_size", c.finetune.batch_size},
                {"epochs", c.finetune.epochs},
                {"weight_decay", c.finetune.weight_decay},
                {"lr_multiplier", c.finetune.lr_multiplier}}},
              {"seed", c.seed}};
}

json to_json(const RunConfig& c) {
  return json{{"model", to_json(c.model)}, {"loss", to_json(c.loss)},  {"train", to_json(c.train)},
              {"data", to_json(c.data)},   {"eval", to_json(c.eval)}, {"output_dir", c.output_dir}};
}

// ---- from_json ---------------------------------------------------------------

ModelConfig model_config_from_json(const json& j) {
  ModelConfig c;
  Section s(j, "model");
  s.get("image_size", c.image_size);
  s.get("channels", c.channels);
  s.get("patch_size", c.patch_size);
  s.get("embed_dim", c.embed_dim);
  s.get("semantic_depth", c.semantic_depth);
  s.get("variation_depth", c.variation_depth);
  s.get("decoder_depth", c.decoder_depth);
  s.get("decoder_dim", c.decoder_dim);
  s.get("num_heads", c.num_heads);
  s.get("mlp_ratio", c.mlp_ratio);
  s.get("mask_ratio", c.mask_ratio);
  s.get("num_domains", c.num_domains);
  s.get("num_classes", c.num_classes);
  s.get("variation_branch", c.variation_branch);
  s.finish();
  return c;
}

LossConfig loss_config_from_json(const json& j) {
  LossConfig c;
  Section s(j, "loss");
  s.get("gamma", c.gamma);
  s.get("tau", c.tau);
  s.get("lambda1", c.lambda1);
  s.get("lambda2", c.lambda2);
  c.weight_mode = parse_weight_mode(s.get_token("weight_mode", to_string(c.weight_mode)));
  s.get("p_clamp_min", c.p_clamp_min);
  s.get("max_negatives", c.max_negatives);
  c.negatives_scope = parse_negatives_scope(s.get_token("negatives_scope", to_string(c.negatives_scope)));
  s.finish();
  return c;
}

TrainConfig train_config_from_json(const json& j) {
  TrainConfig c;
  Section s(j, "train");
  s.get("epochs", c.epochs);
  s.get("adaptive_max_epoch", c.adaptive_max_epoch);
  s.get("adaptive_interval", c.adaptive_interval);
  s.get_with("backbone", [&](const json& b, const std::string& where) {
    Section o(b, where);
    o.get("lr", c.backbone.lr);
    o.get("beta1", c.backbone.beta1);
    o.get("beta2", c.backbone.beta2);
    o.get("eps", c.backbone.eps);
    o.get("weight_decay", c.backbone.weight_decay);
    o.finish();
  });
  s.get_with("classifier", [&](const json& b, const std::string& where) {
    Section o(b, where);
    o.get("lr", c.classifier.lr);
    o.get("momentum", c.classifier.momentum);
    o.get("weight_decay", c.classifier.weight_decay);
    o.finish();
  });
  s.get("per_domain_batch", c.per_domain_batch);
  s.get("seed", c.seed);
  s.get("checkpoint_interval", c.checkpoint_interval);
  c.mode = parse_train_mode(s.get_token("mode", to_string(c.mode)));
  c.lr_schedule = parse_lr_schedule(s.get_token("lr_schedule", to_string(c.lr_schedule)));
  c.classifier_pass = parse_classifier_pass(s.get_token("classifier_pass", to_string(c.classifier_pass)));
  s.get("grad_clip", c.grad_clip);
  s.finish();
  return c;
}

FactorSpec factor_spec_from_json(const json& j) {
  FactorSpec spec;
  Section s(j, "spec");
  s.get("num_classes", spec.num_classes);
  s.get_with("domains", [&](const json& a, const std::string& where) {
    if (!a.is_array()) throw ConfigError(where + ": expected an array of palettes");
    spec.domains.clear();
    for (std::size_t i = 0; i < a.size(); ++i) {
      const std::string w = where + "[" + std::to_string(i) + "]";
      PaletteSpec p;
      Section o(a[i], w);
      o.get("name", p.name);
      o.get_with("foreground", [&](const json& c, const std::string& cw) { p.foreground = color_list(c, cw); });
      o.get_with("background", [&](const json& c, const std::string& cw) { p.background = color_list(c, cw); });
      o.get("texture", p.texture);
      o.finish();
      spec.domains.push_back(std::move(p));
    }
  });
  s.get("samples_per_class_per_domain", spec.samples_per_class_per_domain);
  s.get("image_size", spec.image_size);
  s.get("noise_std", spec.noise_std);
  s.get("seed", spec.seed);
  s.finish();
  if (spec.domains.empty()) spec.domains = default_factor_spec().domains;
  return spec;
}

DataConfig data_config_from_json(const json& j) {
  DataConfig c;
  Section s(j, "data");
  s.get("root", c.root);
  s.get("labeled", c.labeled);
  s.get_with("train_domains", [&](const json& a, const std::string& w) { c.train_domains = string_list(a, w); });
  s.get_with("test_domains", [&](const json& a, const std::string& w) { c.test_domains = string_list(a, w); });
  s.get("val_fraction", c.val_fraction);
  s.get("split_seed", c.split_seed);
  s.get_with("spec", [&](const json& a, const std::string&) { c.spec = factor_spec_from_json(a); });
  s.finish();
  return c;
}

ProtocolConfig protocol_config_from_json(const json& j) {
  ProtocolConfig c;
  Section s(j, "eval");
  s.get("label_fraction", c.label_fraction);
  s.get("probe_threshold", c.probe_threshold);
  s.get_with("probe", [&](const json& b, const std::string& where) {
    Section o(b, where);
    o.get("batch_size", c.probe.batch_size);
    o.get("epochs", c.probe.epochs);
    o.get("momentum", c.probe.momentum);
    o.get("weight_decay", c.probe.weight_decay);
    o.get("lr_multiplier", c.probe.lr_multiplier);
    o.finish();
  });
  s.get_with("finetune", [&](const json& b, const std::string& where) {
    Section o(b, where);
    o.get("batch_size", c.finetune.batch_size);
    o.get("epochs", c.finetune.epochs);
    o.get("weight_decay", c.finetune.weight_decay);
    o.get("lr_multiplier", c.finetune.lr_multiplier);
    o.finish();
  });
  s.get("seed", c.seed);
  s.finish();
  return c;
}

RunConfig run_config_from_json(const json& j) {
  RunConfig c;
  Section s(j, "config");
  s.get_with("model", [&](const json& v, const std::string&) { c.model = model_config_from_json(v); });
  s.get_with("loss", [&](const json& v, const std::string&) { c.loss = loss_config_from_json(v); });
  s.get_with("train", [&](const json& v, const std::string&) { c.train = train_config_from_json(v); });
  s.get_with("data", [&](const json& v, const std::string&) { c.data = data_config_from_json(v); });
  s.get_with("eval", [&](const json& v, const std::string&) { c.eval = protocol_config_from_json(v); });
  s.get("output_dir", c.output_dir);
  s.finish();
  c.validate();
  return c;
}

void RunConfig::validate() const {
  model.validate();
  loss.validate(model.num_domains);
  train.validate();
  eval.validate();
  if (!(data.val_fraction > 0.0 && data.val_fraction < 1.0))
    throw ConfigError("data.val_fraction must be in (0,1)");
  if (data.spec) data.spec->validate();
  for (const auto& t : data.test_domains) {
    for (const auto& s : data.train_domains) {
      if (s == t) throw ConfigError("data: domain '" + t + "' is listed as both train and test");
    }
  }
  if (!data.train_domains.empty() && static_cast<int>(data.train_domains.size()) != model.num_domains)
    throw ConfigError("data.train_domains has " + std::to_string(data.train_domains.size()) +
                      " entries but model.num_domains is " + std::to_string(model.num_domains));
}

json read_json_file(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot open config file " + path);
  try {
    return json::parse(in);
  } catch (const json::parse_error& e) {
    throw ConfigError(path + ": " + e.what());
  }
}

RunConfig load_run_config(const std::string& path) { return run_config_from_json(read_json_file(path)); }

void apply_seed_override(RunConfig& cfg, std::optional<std::uint64_t> flag_seed) {
  std::optional<std::uint64_t> seed = flag_seed;
  if (!seed) {
    if (const char* env = std::getenv("DISMAE_SEED"); env != nullptr && *env != '\0') {
      char* end = nullptr;
      const unsigned long long v = std::strtoull(env, &end, 10);
      if (end == nullptr || *end != '\0' || env[0] == '-')
        throw ConfigError(std::string("DISMAE_SEED is not a non-negative integer: ") + env);
      seed = v;
    }
  }
  if (seed) {
    cfg.train.seed = *seed;
    cfg.eval.seed = *seed;
  }
}

std::string config_fingerprint(const ModelConfig& model, const LossConfig& loss, const TrainConfig& train) {
  const json j{{"model", to_json(model)}, {"loss", to_json(loss)}, {"train", to_json(train)}};
  return sha256_hex(j.dump());
}

std::string resolved_config_text(const RunConfig& cfg) { return to_json(cfg).dump(2) + "\n"; }

}  // namespace dismae
