#pragma once

#include <charconv>
#include <cstdint>
#include <fstream>
#include <functional>
#include <sstream>
#include <string>
#include <utility>
#include <vector>

#include "mcmim/errors.hpp"
#include "mcmim/vit.hpp"

namespace mcmim {

// Flat key=value configuration. The desk preset is the default; the
// paper-vitb / paper-vitl presets mirror the published pre-training recipe
// and are usable but slow at toy scale.
struct TrainConfig {
  std::string preset = "desk";
  uint64_t seed = 1;

  // pre-training
  int epochs = 100;
  int batch_size = 32;
  double peak_lr = 1e-3;
  double min_lr = 1e-5;
  int warmup_epochs = 10;
  double weight_decay = 0.05;
  double adam_beta1 = 0.9;
  double adam_beta2 = 0.98;
  double adam_eps = 1e-8;
  double grad_clip = 3.0;
  std::string loss_mode = "mc";  // mc | hard
  int checkpoint_every = 0;      // epochs; 0 = final only

  // masking
  std::string mask_strategy = "random";  // random | block
  double mask_ratio = 0.75;

  // multi-choice targets
  double tau = 4.0;
  double omega = 0.8;

  // model
  int model_layers = 4;
  int model_dim = 128;
  int model_heads = 4;
  int model_patch = 8;
  int model_vocab = 512;

  // tokenizer
  int tokenizer_dim = 0;  // 0 = patch dimension (no pooling)
  int tokenizer_iters = 25;

  // data
  int data_train = 512;
  int data_test = 128;
  int data_classes = 4;
  int data_image_size = 32;
  std::string data_dir;  // optional PPM/PGM import directory

  // evaluation
  int probe_epochs = 30;
  double probe_lr = 0.01;
  int finetune_epochs = 20;
  double finetune_peak_lr = 1e-3;
  double finetune_min_lr = 1e-6;
  int finetune_warmup_epochs = 2;
  double finetune_layer_decay = 0.65;
  double finetune_weight_decay = 0.05;

  // recorded from the published fine-tuning recipe but unimplemented;
  // any non-zero value is rejected
  double finetune_label_smoothing = 0.0;
  double finetune_mixup = 0.0;
  double finetune_cutmix = 0.0;
  double finetune_stochastic_depth = 0.0;

  Arch arch() const {
    Arch a;
    a.layers = model_layers;
    a.dim = model_dim;
    a.heads = model_heads;
    a.patch = model_patch;
    a.vocab = model_vocab;
    a.channels = 3;
    a.grid_rows = data_image_size / model_patch;
    a.grid_cols = data_image_size / model_patch;
    return a;
  }

  int tokenizer_dim_resolved() const {
    return tokenizer_dim > 0 ? tokenizer_dim : arch().patch_dim();
  }
};

namespace detail {

inline int64_t parse_int(const std::string& key, const std::string& v) {
  int64_t out = 0;
  const auto res = std::from_chars(v.data(), v.data() + v.size(), out);
  if (res.ec != std::errc{} || res.ptr != v.data() + v.size())
    throw ConfigError("config key '" + key + "': not an integer: '" + v + "'");
  return out;
}

inline double parse_double(const std::string& key, const std::string& v) {
  try {
    size_t pos = 0;
    const double out = std::stod(v, &pos);
    if (pos != v.size()) throw std::invalid_argument(v);
    return out;
  } catch (const std::exception&) {
    throw ConfigError("config key '" + key + "': not a number: '" + v + "'");
  }
}

}  // namespace detail

inline void apply_preset(TrainConfig& cfg, const std::string& name) {
  if (name == "desk") {
    cfg = TrainConfig{};
    return;
  }
  if (name != "paper-vitb" && name != "paper-vitl")
    throw ConfigError("config key 'preset': unknown preset '" + name + "'");
  const bool large = name == "paper-vitl";
  cfg = TrainConfig{};
  cfg.preset = name;
  cfg.model_layers = large ? 24 : 12;
  cfg.model_dim = large ? 1024 : 768;
  cfg.model_heads = large ? 16 : 12;
  cfg.model_patch = 16;
  cfg.model_vocab = 8192;
  cfg.data_image_size = 224;
  cfg.epochs = 800;
  cfg.batch_size = 128;
  cfg.peak_lr = 1.5e-3;
  cfg.min_lr = 1e-5;
  cfg.warmup_epochs = 10;
  cfg.weight_decay = 0.05;
  cfg.adam_beta1 = 0.9;
  cfg.adam_beta2 = 0.98;
  cfg.adam_eps = 1e-8;
  cfg.grad_clip = large ? 1.0 : 3.0;
  cfg.mask_strategy = "random";
  cfg.mask_ratio = 0.75;
  cfg.tau = 4.0;
  cfg.omega = 0.8;
  cfg.finetune_epochs = large ? 50 : 100;
  cfg.finetune_warmup_epochs = large ? 5 : 20;
  cfg.finetune_peak_lr = 2e-3;
  cfg.finetune_layer_decay = large ? 0.75 : 0.65;
}

// Sets a single key. Unknown keys are rejected with the offending name.
inline void set_config_key(TrainConfig& c, const std::string& key, const std::string& v) {
  using detail::parse_double;
  using detail::parse_int;
  if (key == "preset") apply_preset(c, v);
  else if (key == "seed") c.seed = static_cast<uint64_t>(parse_int(key, v));
  else if (key == "epochs") c.epochs = static_cast<int>(parse_int(key, v));
  else if (key == "batch_size") c.batch_size = static_cast<int>(parse_int(key, v));
  else if (key == "peak_lr") c.peak_lr = parse_double(key, v);
  else if (key == "min_lr") c.min_lr = parse_double(key, v);
  else if (key == "warmup_epochs") c.warmup_epochs = static_cast<int>(parse_int(key, v));
  else if (key == "weight_decay") c.weight_decay = parse_double(key, v);
  else if (key == "adam_beta1") c.adam_beta1 = parse_double(key, v);
  else if (key == "adam_beta2") c.adam_beta2 = parse_double(key, v);
  else if (key == "adam_eps") c.adam_eps = parse_double(key, v);
  else if (key == "grad_clip") c.grad_clip = parse_double(key, v);
  else if (key == "loss.mode") c.loss_mode = v;
  else if (key == "checkpoint.every") c.checkpoint_every = static_cast<int>(parse_int(key, v));
  else if (key == "mask.strategy") c.mask_strategy = v;
  else if (key == "mask.ratio") c.mask_ratio = parse_double(key, v);
  else if (key == "target.tau") c.tau = parse_double(key, v);
  else if (key == "target.omega") c.omega = parse_double(key, v);
  else if (key == "model.layers") c.model_layers = static_cast<int>(parse_int(key, v));
  else if (key == "model.dim") c.model_dim = static_cast<int>(parse_int(key, v));
  else if (key == "model.heads") c.model_heads = static_cast<int>(parse_int(key, v));
  else if (key == "model.patch") c.model_patch = static_cast<int>(parse_int(key, v));
  else if (key == "model.vocab") c.model_vocab = static_cast<int>(parse_int(key, v));
  else if (key == "tokenizer.dim") c.tokenizer_dim = static_cast<int>(parse_int(key, v));
  else if (key == "tokenizer.iters") c.tokenizer_iters = static_cast<int>(parse_int(key, v));
  else if (key == "data.train") c.data_train = static_cast<int>(parse_int(key, v));
  else if (key == "data.test") c.data_test = static_cast<int>(parse_int(key, v));
  else if (key == "data.classes") c.data_classes = static_cast<int>(parse_int(key, v));
  else if (key == "data.image_size") c.data_image_size = static_cast<int>(parse_int(key, v));
  else if (key == "data.dir") c.data_dir = v;
  else if (key == "probe.epochs") c.probe_epochs = static_cast<int>(parse_int(key, v));
  else if (key == "probe.lr") c.probe_lr = parse_double(key, v);
  else if (key == "finetune.epochs") c.finetune_epochs = static_cast<int>(parse_int(key, v));
  else if (key == "finetune.peak_lr") c.finetune_peak_lr = parse_double(key, v);
  else if (key == "finetune.min_lr") c.finetune_min_lr = parse_double(key, v);
  else if (key == "finetune.warmup_epochs")
    c.finetune_warmup_epochs = static_cast<int>(parse_int(key, v));
  else if (key == "finetune.layer_decay") c.finetune_layer_decay = parse_double(key, v);
  else if (key == "finetune.weight_decay") c.finetune_weight_decay = parse_double(key, v);
  else if (key == "finetune.label_smoothing") c.finetune_label_smoothing = parse_double(key, v);
  else if (key == "finetune.mixup") c.finetune_mixup = parse_double(key, v);
  else if (key == "finetune.cutmix") c.finetune_cutmix = parse_double(key, v);
  else if (key == "finetune.stochastic_depth")
    c.finetune_stochastic_depth = parse_double(key, v);
  else throw ConfigError("unknown config key '" + key + "'");
}

namespace detail {

// Shortest round-trip representation; deterministic for CSV/manifest dumps.
inline std::string fmt_double(double v) {
  char buf[64];
  const auto res = std::to_chars(buf, buf + sizeof(buf), v);
  return std::string(buf, res.ptr);
}

}  // namespace detail

// Full key/value dump in declaration order; parsing the dump reproduces
// the config exactly.
inline std::vector<std::pair<std::string, std::string>> config_key_values(
    const TrainConfig& c) {
  using detail::fmt_double;
  std::vector<std::pair<std::string, std::string>> kv;
  kv.emplace_back("preset", c.preset);
  kv.emplace_back("seed", std::to_string(c.seed));
  kv.emplace_back("epochs", std::to_string(c.epochs));
  kv.emplace_back("batch_size", std::to_string(c.batch_size));
  kv.emplace_back("peak_lr", fmt_double(c.peak_lr));
  kv.emplace_back("min_lr", fmt_double(c.min_lr));
  kv.emplace_back("warmup_epochs", std::to_string(c.warmup_epochs));
  kv.emplace_back("weight_decay", fmt_double(c.weight_decay));
  kv.emplace_back("adam_beta1", fmt_double(c.adam_beta1));
  kv.emplace_back("adam_beta2", fmt_double(c.adam_beta2));
  kv.emplace_back("adam_eps", fmt_double(c.adam_eps));
  kv.emplace_back("grad_clip", fmt_double(c.grad_clip));
  kv.emplace_back("loss.mode", c.loss_mode);
  kv.emplace_back("checkpoint.every", std::to_string(c.checkpoint_every));
  kv.emplace_back("mask.strategy", c.mask_strategy);
  kv.emplace_back("mask.ratio", fmt_double(c.mask_ratio));
  kv.emplace_back("target.tau", fmt_double(c.tau));
  kv.emplace_back("target.omega", fmt_double(c.omega));
  kv.emplace_back("model.layers", std::to_string(c.model_layers));
  kv.emplace_back("model.dim", std::to_string(c.model_dim));
  kv.emplace_back("model.heads", std::to_string(c.model_heads));
  kv.emplace_back("model.patch", std::to_string(c.model_patch));
  kv.emplace_back("model.vocab", std::to_string(c.model_vocab));
  kv.emplace_back("tokenizer.dim", std::to_string(c.tokenizer_dim));
  kv.emplace_back("tokenizer.iters", std::to_string(c.tokenizer_iters));
  kv.emplace_back("data.train", std::to_string(c.data_train));
  kv.emplace_back("data.test", std::to_string(c.data_test));
  kv.emplace_back("data.classes", std::to_string(c.data_classes));
  kv.emplace_back("data.image_size", std::to_string(c.data_image_size));
  if (!c.data_dir.empty()) kv.emplace_back("data.dir", c.data_dir);
  kv.emplace_back("probe.epochs", std::to_string(c.probe_epochs));
  kv.emplace_back("probe.lr", fmt_double(c.probe_lr));
  kv.emplace_back("finetune.epochs", std::to_string(c.finetune_epochs));
  kv.emplace_back("finetune.peak_lr", fmt_double(c.finetune_peak_lr));
  kv.emplace_back("finetune.min_lr", fmt_double(c.finetune_min_lr));
  kv.emplace_back("finetune.warmup_epochs", std::to_string(c.finetune_warmup_epochs));
  kv.emplace_back("finetune.layer_decay", fmt_double(c.finetune_layer_decay));
  kv.emplace_back("finetune.weight_decay", fmt_double(c.finetune_weight_decay));
  kv.emplace_back("finetune.label_smoothing", fmt_double(c.finetune_label_smoothing));
  kv.emplace_back("finetune.mixup", fmt_double(c.finetune_mixup));
  kv.emplace_back("finetune.cutmix", fmt_double(c.finetune_cutmix));
  kv.emplace_back("finetune.stochastic_depth", fmt_double(c.finetune_stochastic_depth));
  return kv;
}

inline void validate_config(const TrainConfig& c) {
  auto fail = [](const std::string& key, const std::string& why) {
    throw ConfigError("config key '" + key + "': " + why);
  };
  if (c.epochs < 1) fail("epochs", "must be >= 1");
  if (c.batch_size < 1) fail("batch_size", "must be >= 1");
  if (c.peak_lr <= 0.0) fail("peak_lr", "must be positive");
  if (c.min_lr <= 0.0) fail("min_lr", "must be positive");
  if (c.min_lr > c.peak_lr) fail("min_lr", "must be <= peak_lr");
  if (c.warmup_epochs < 0 || c.warmup_epochs >= c.epochs)
    fail("warmup_epochs", "must be in [0, epochs)");
  if (c.weight_decay < 0.0) fail("weight_decay", "must be >= 0");
  if (c.adam_beta1 < 0.0 || c.adam_beta1 >= 1.0) fail("adam_beta1", "must be in [0,1)");
  if (c.adam_beta2 < 0.0 || c.adam_beta2 >= 1.0) fail("adam_beta2", "must be in [0,1)");
  if (c.adam_eps <= 0.0) fail("adam_eps", "must be positive");
  if (c.grad_clip < 0.0) fail("grad_clip", "must be >= 0 (0 disables clipping)");
  if (c.loss_mode != "mc" && c.loss_mode != "hard")
    fail("loss.mode", "must be 'mc' or 'hard'");
  if (c.checkpoint_every < 0) fail("checkpoint.every", "must be >= 0");
  if (c.mask_strategy != "random" && c.mask_strategy != "block")
    fail("mask.strategy", "must be 'random' or 'block'");
  if (c.mask_ratio <= 0.0 || c.mask_ratio >= 1.0) fail("mask.ratio", "must be in (0,1)");
  if (c.tau <= 0.0) fail("target.tau", "must be positive");
  if (c.omega < 0.0 || c.omega > 1.0) fail("target.omega", "must be in [0,1]");
  if (c.model_layers < 1) fail("model.layers", "must be >= 1");
  if (c.model_dim < 1) fail("model.dim", "must be >= 1");
  if (c.model_heads < 1 || c.model_dim % c.model_heads != 0)
    fail("model.heads", "must divide model.dim");
  if (c.model_patch < 1) fail("model.patch", "must be >= 1");
  if (c.model_vocab < 2) fail("model.vocab", "must be >= 2");
  if (c.tokenizer_dim < 0) fail("tokenizer.dim", "must be >= 0");
  if (c.tokenizer_iters < 1) fail("tokenizer.iters", "must be >= 1");
  if (c.data_train < 1) fail("data.train", "must be >= 1");
  if (c.data_test < 1) fail("data.test", "must be >= 1");
  if (c.data_classes < 2) fail("data.classes", "must be >= 2");
  if (c.data_image_size < c.model_patch || c.data_image_size % c.model_patch != 0)
    fail("data.image_size", "must be a positive multiple of model.patch");
  if (c.tokenizer_dim > 0 && c.arch().patch_dim() % c.tokenizer_dim != 0)
    fail("tokenizer.dim", "must divide the patch dimension");
  if (c.probe_epochs < 1) fail("probe.epochs", "must be >= 1");
  if (c.probe_lr <= 0.0) fail("probe.lr", "must be positive");
  if (c.finetune_epochs < 1) fail("finetune.epochs", "must be >= 1");
  if (c.finetune_peak_lr <= 0.0) fail("finetune.peak_lr", "must be positive");
  if (c.finetune_min_lr <= 0.0 || c.finetune_min_lr > c.finetune_peak_lr)
    fail("finetune.min_lr", "must be positive and <= finetune.peak_lr");
  if (c.finetune_warmup_epochs < 0 || c.finetune_warmup_epochs >= c.finetune_epochs)
    fail("finetune.warmup_epochs", "must be in [0, finetune.epochs)");
  if (c.finetune_layer_decay <= 0.0 || c.finetune_layer_decay > 1.0)
    fail("finetune.layer_decay", "must be in (0,1]");
  if (c.finetune_weight_decay < 0.0) fail("finetune.weight_decay", "must be >= 0");
  if (c.finetune_label_smoothing != 0.0)
    fail("finetune.label_smoothing", "recorded but unimplemented; must be 0");
  if (c.finetune_mixup != 0.0) fail("finetune.mixup", "recorded but unimplemented; must be 0");
  if (c.finetune_cutmix != 0.0)
    fail("finetune.cutmix", "recorded but unimplemented; must be 0");
  if (c.finetune_stochastic_depth != 0.0)
    fail("finetune.stochastic_depth", "recorded but unimplemented; must be 0");
}

// Parses a flat key=value file ('key value' or 'key=value', '#' comments).
// A 'preset' key is applied before all other keys regardless of position.
inline TrainConfig parse_config_text(const std::string& text,
                                     const std::vector<std::pair<std::string, std::string>>&
                                         overrides = {}) {
  std::vector<std::pair<std::string, std::string>> pairs;
  std::istringstream in(text);
  std::string line;
  int lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    const size_t hash = line.find('#');
    if (hash != std::string::npos) line.erase(hash);
    size_t b = line.find_first_not_of(" \t\r");
    if (b == std::string::npos) continue;
    size_t e = line.find_last_not_of(" \t\r");
    line = line.substr(b, e - b + 1);
    size_t sep = line.find_first_of("= \t");
    if (sep == std::string::npos)
      throw ConfigError("config line " + std::to_string(lineno) + ": expected 'key value'");
    const std::string key = line.substr(0, sep);
    size_t vb = line.find_first_not_of("= \t", sep);
    const std::string value = vb == std::string::npos ? "" : line.substr(vb);
    pairs.emplace_back(key, value);
  }
  for (const auto& kv : overrides) pairs.push_back(kv);

  TrainConfig cfg;
  for (const auto& [k, v] : pairs)
    if (k == "preset") apply_preset(cfg, v);
  for (const auto& [k, v] : pairs)
    if (k != "preset") set_config_key(cfg, k, v);
  validate_config(cfg);
  return cfg;
}

inline TrainConfig parse_config_file(const std::string& path,
                                     const std::vector<std::pair<std::string, std::string>>&
                                         overrides = {}) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot read config file: " + path);
  std::ostringstream ss;
  ss << in.rdbuf();
  return parse_config_text(ss.str(), overrides);
}

}  // namespace mcmim
