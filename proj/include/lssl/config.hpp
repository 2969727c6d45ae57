// Copyright 2026 The lssl Authors.
//
// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//     http://www.apache.org/licenses/LICENSE-2.0
//
// Unless required by applicable law or agreed to in writing, software
// distributed under the License is distributed on an "AS IS" BASIS,
// WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
// See the License for the specific language governing permissions and
// limitations under the License.


// Experiment configuration: one struct, addressed by dotted "section.key"
// names, read from INI files and --set overrides, written back as the
// effective-config snapshot.

#ifndef LSSL_CONFIG_HPP_
#define LSSL_CONFIG_HPP_

#include <boost/property_tree/ini_parser.hpp>
#include <boost/property_tree/ptree.hpp>

#include <charconv>
#include <cstdint>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <functional>
#include <map>
#include <sstream>
#include <string>
#include <vector>

#include "lssl/linalg.hpp"
#include "lssl/losses.hpp"
#include "lssl/report.hpp"

#ifndef LSSL_DEFAULT_MNIST_DIR
#define LSSL_DEFAULT_MNIST_DIR "data/mnist"
#endif

namespace lssl {

struct ExperimentConfig {
  // [run]
  std::string experiment = "verify-thm1";
  std::uint64_t seed = 0;
  int workers = 1;  // excluded from the hash: results do not depend on it

  // [data]
  std::string mnist_dir = LSSL_DEFAULT_MNIST_DIR;
  std::size_t train_limit = 0;    // 0: whole train split
  std::size_t heldout_limit = 0;  // 0: whole test split
  int crop = 14;
  int batch_size = 32;
  int batches = 32;
  bool flip = false;

  // [loss]
  std::string preset = "none";  // none | ff | phyll | scff | clapp
  std::string score = "softplus";
  double theta = 2.0;
  std::string form = "type2";
  std::string scheme = "same_layer_context";
  double lambda = 0.01;

  // [solver]
  double tol = 1e-8;
  int max_iters = 20000;

  // [ladder]
  int ladder_depth = 6;
  int ladder_width = 128;
  std::vector<std::string> ladder_conditions = {"full", "fixed_random_b", "non_orthogonal_w", "relu",
                                                "relu_non_orthogonal_w"};
  int ladder_seeds = 1;

  // [dfb]
  std::vector<int> dfb_widths = {128, 64, 32, 16, 8, 4};
  int dfb_samples = 100;
  int dfb_batches = 32;

  // [mlp]
  int mlp_depth = 6;
  int mlp_width = 512;
  int mlp_epochs = 20;
  std::size_t mlp_steps_per_epoch = 0;  // 0: one pass over the train split
  double mlp_lr = 5e-5;
  double mlp_b_lr = 5e-5;
  double mlp_optimal_b_lr = 1e-3;
  double mlp_lambda = 0.01;
  int mlp_eval_batches = 32;
  std::vector<std::string> mlp_conditions = {"fixed_random_b", "local", "local_dfb", "optimal_b"};
  std::vector<int> mlp_snapshots = {0, 20};

  // [epochs]
  std::vector<int> epoch_snapshots = {0, 5, 10, 15, 20};
  std::vector<std::string> epoch_conditions = {"local", "local_dfb"};

  // [conv]
  int conv_depth = 4;
  int conv_channels = 32;
  int conv_crop = 16;
  double conv_lambda = 0.02;
  int conv_batches = 16;
  std::string conv_mode = "flattened";  // flattened | grouped
  int conv_first_patch = 2;

  // [rank]
  std::vector<int> ranks = {128, 64, 32, 16, 8, 4, 2, 1};
  int rank_seeds = 5;
  int rank_batches = 1;
  std::string rank_method = "lbfgs";
  int rank_steps = 20000;
  double rank_tol = 1e-6;

  // [train]
  int train_depth = 3;
  int train_width = 512;
  std::string train_activation = "relu";
  std::string train_init = "uniform";
  std::string train_rule = "autodiff";  // autodiff | hebbian
  int train_epochs = 5;
  std::size_t train_steps_per_epoch = 0;
  std::string train_optimizer = "adam";
  double train_lr = 1e-4;
  double train_momentum = 0.0;
  double train_b_lr = 1e-4;
  std::vector<int> train_snapshots = {};

  // [probe]
  int probe_epochs = 10;
  double probe_lr = 1e-3;
  int probe_batch_size = 64;
  int probe_stride = 7;
  std::string probe_layers = "last";  // last | all
  bool probe_permute_labels = false;
  std::string probe_checkpoint;

  // [grad]
  int grad_configs = 20;
  int grad_width = 8;
  double grad_h = 1e-5;
  double grad_max_rel_error = 1e-5;
};

/// One addressable setting.
struct Setting {
  std::string key;
  std::function<std::string()> get;
  std::function<void(const std::string&)> set;
};

namespace detail {

inline std::string trim(const std::string& s) {
  const auto b = s.find_first_not_of(" \t\r\n");
  if (b == std::string::npos) return "";
  const auto e = s.find_last_not_of(" \t\r\n");
  return s.substr(b, e - b + 1);
}

inline std::vector<std::string> split_list(const std::string& s) {
  std::vector<std::string> out;
  if (trim(s).empty()) return out;
  std::stringstream in(s);
  std::string item;
  while (std::getline(in, item, ',')) out.push_back(trim(item));
  return out;
}

template <class T>
T parse_integer(const std::string& key, const std::string& text) {
  const std::string s = trim(text);
  T v{};
  auto [p, ec] = std::from_chars(s.data(), s.data() + s.size(), v);
  if (ec != std::errc() || p != s.data() + s.size() || s.empty())
    throw ConfigError(key + ": expected an integer, got '" + text + "'");
  return v;
}

inline double parse_double(const std::string& key, const std::string& text) {
  const std::string s = trim(text);
  char* end = nullptr;
  const double v = std::strtod(s.c_str(), &end);
  if (s.empty() || end != s.c_str() + s.size())
    throw ConfigError(key + ": expected a number, got '" + text + "'");
  return v;
}

inline bool parse_bool(const std::string& key, const std::string& text) {
  const std::string s = trim(text);
  if (s == "true" || s == "1" || s == "yes") return true;
  if (s == "false" || s == "0" || s == "no") return false;
  throw ConfigError(key + ": expected true or false, got '" + text + "'");
}

inline Setting bind_setting(std::string key, std::string& f) {
  return {key, [&f] { return f; }, [&f](const std::string& v) { f = trim(v); }};
}
inline Setting bind_setting(std::string key, double& f) {
  return {key, [&f] { return fmt(f); }, [&f, key](const std::string& v) { f = parse_double(key, v); }};
}
inline Setting bind_setting(std::string key, bool& f) {
  return {key, [&f] { return std::string(f ? "true" : "false"); },
          [&f, key](const std::string& v) { f = parse_bool(key, v); }};
}
template <class T>
  requires std::is_integral_v<T>
Setting bind_setting(std::string key, T& f) {
  return {key, [&f] { return std::to_string(f); },
          [&f, key](const std::string& v) { f = parse_integer<T>(key, v); }};
}
inline Setting bind_setting(std::string key, std::vector<int>& f) {
  return {key,
          [&f] {
            std::string s;
            for (std::size_t i = 0; i < f.size(); ++i) s += (i ? "," : "") + std::to_string(f[i]);
            return s;
          },
          [&f, key](const std::string& v) {
            f.clear();
            for (const auto& item : split_list(v)) f.push_back(parse_integer<int>(key, item));
          }};
}
inline Setting bind_setting(std::string key, std::vector<std::string>& f) {
  return {key,
          [&f] {
            std::string s;
            for (std::size_t i = 0; i < f.size(); ++i) s += (i ? "," : "") + f[i];
            return s;
          },
          [&f](const std::string& v) { f = split_list(v); }};
}

}  // namespace detail

/// Every setting of `c`, in snapshot order. The closures reference `c`.
inline std::vector<Setting> settings(ExperimentConfig& c) {
  using detail::bind_setting;
  return {
      bind_setting("run.experiment", c.experiment),
      bind_setting("run.seed", c.seed),
      bind_setting("run.workers", c.workers),
      bind_setting("data.mnist_dir", c.mnist_dir),
      bind_setting("data.train_limit", c.train_limit),
      bind_setting("data.heldout_limit", c.heldout_limit),
      bind_setting("data.crop", c.crop),
      bind_setting("data.batch_size", c.batch_size),
      bind_setting("data.batches", c.batches),
      bind_setting("data.flip", c.flip),
      bind_setting("loss.preset", c.preset),
      bind_setting("loss.score", c.score),
      bind_setting("loss.theta", c.theta),
      bind_setting("loss.form", c.form),
      bind_setting("loss.scheme", c.scheme),
      bind_setting("loss.lambda", c.lambda),
      bind_setting("solver.tol", c.tol),
      bind_setting("solver.max_iters", c.max_iters),
      bind_setting("ladder.depth", c.ladder_depth),
      bind_setting("ladder.width", c.ladder_width),
      bind_setting("ladder.conditions", c.ladder_conditions),
      bind_setting("ladder.seeds", c.ladder_seeds),
      bind_setting("dfb.widths", c.dfb_widths),
      bind_setting("dfb.samples", c.dfb_samples),
      bind_setting("dfb.batches", c.dfb_batches),
      bind_setting("mlp.depth", c.mlp_depth),
      bind_setting("mlp.width", c.mlp_width),
      bind_setting("mlp.epochs", c.mlp_epochs),
      bind_setting("mlp.steps_per_epoch", c.mlp_steps_per_epoch),
      bind_setting("mlp.lr", c.mlp_lr),
      bind_setting("mlp.b_lr", c.mlp_b_lr),
      bind_setting("mlp.optimal_b_lr", c.mlp_optimal_b_lr),
      bind_setting("mlp.lambda", c.mlp_lambda),
      bind_setting("mlp.eval_batches", c.mlp_eval_batches),
      bind_setting("mlp.conditions", c.mlp_conditions),
      bind_setting("mlp.snapshots", c.mlp_snapshots),
      bind_setting("epochs.snapshots", c.epoch_snapshots),
      bind_setting("epochs.conditions", c.epoch_conditions),
      bind_setting("conv.depth", c.conv_depth),
      bind_setting("conv.channels", c.conv_channels),
      bind_setting("conv.crop", c.conv_crop),
      bind_setting("conv.lambda", c.conv_lambda),
      bind_setting("conv.batches", c.conv_batches),
      bind_setting("conv.mode", c.conv_mode),
      bind_setting("conv.first_patch", c.conv_first_patch),
      bind_setting("rank.ranks", c.ranks),
      bind_setting("rank.seeds", c.rank_seeds),
      bind_setting("rank.batches", c.rank_batches),
      bind_setting("rank.method", c.rank_method),
      bind_setting("rank.steps", c.rank_steps),
      bind_setting("rank.tol", c.rank_tol),
      bind_setting("train.depth", c.train_depth),
      bind_setting("train.width", c.train_width),
      bind_setting("train.activation", c.train_activation),
      bind_setting("train.init", c.train_init),
      bind_setting("train.rule", c.train_rule),
      bind_setting("train.epochs", c.train_epochs),
      bind_setting("train.steps_per_epoch", c.train_steps_per_epoch),
      bind_setting("train.optimizer", c.train_optimizer),
      bind_setting("train.lr", c.train_lr),
      bind_setting("train.momentum", c.train_momentum),
      bind_setting("train.b_lr", c.train_b_lr),
      bind_setting("train.snapshots", c.train_snapshots),
      bind_setting("probe.epochs", c.probe_epochs),
      bind_setting("probe.lr", c.probe_lr),
      bind_setting("probe.batch_size", c.probe_batch_size),
      bind_setting("probe.stride", c.probe_stride),
      bind_setting("probe.layers", c.probe_layers),
      bind_setting("probe.permute_labels", c.probe_permute_labels),
      bind_setting("probe.checkpoint", c.probe_checkpoint),
      bind_setting("grad.configs", c.grad_configs),
      bind_setting("grad.width", c.grad_width),
      bind_setting("grad.h", c.grad_h),
      bind_setting("grad.max_rel_error", c.grad_max_rel_error),
  };
}

/// Sets one dotted key; unknown keys are a ConfigError.
inline void set_value(ExperimentConfig& c, const std::string& key, const std::string& value) {
  for (auto& s : settings(c))
    if (s.key == key) {
      s.set(value);
      return;
    }
  throw ConfigError("unknown config key '" + key + "'");
}

inline std::string get_value(const ExperimentConfig& c, const std::string& key) {
  ExperimentConfig copy = c;
  for (auto& s : settings(copy))
    if (s.key == key) return s.get();
  throw ConfigError("unknown config key '" + key + "'");
}

/// "key=value" override from the command line.
inline void apply_override(ExperimentConfig& c, const std::string& assignment) {
  const auto eq = assignment.find('=');
  if (eq == std::string::npos || eq == 0)
    throw ConfigError("override '" + assignment + "' is not of the form section.key=value");
  set_value(c, detail::trim(assignment.substr(0, eq)), assignment.substr(eq + 1));
}

/// Ordered (key, value) pairs of every setting.
inline std::vector<std::pair<std::string, std::string>> config_entries(const ExperimentConfig& c) {
  ExperimentConfig copy = c;
  std::vector<std::pair<std::string, std::string>> out;
  for (auto& s : settings(copy)) out.emplace_back(s.key, s.get());
  return out;
}

/// Hash of every result-relevant setting (run.workers excluded).
inline std::string config_hash(const ExperimentConfig& c) {
  std::string canon;
  for (const auto& [k, v] : config_entries(c))
    if (k != "run.workers") canon += k + "=" + v + "\n";
  return fnv1a_hex(canon);
}

/// INI text with one [section] per key prefix, in settings order.
inline std::string to_ini(const ExperimentConfig& c) {
  std::ostringstream out;
  std::string section;
  for (const auto& [k, v] : config_entries(c)) {
    const auto dot = k.find('.');
    const std::string sec = k.substr(0, dot);
    if (sec != section) {
      out << (section.empty() ? "" : "\n") << '[' << sec << "]\n";
      section = sec;
    }
    out << k.substr(dot + 1) << " = " << v << '\n';
  }
  return out.str();
}

/// Applies an INI file on top of `c`. Keys outside any section are rejected.
inline void load_ini(ExperimentConfig& c, const std::string& path) {
  if (!std::filesystem::exists(path)) throw ConfigError("config file not found: " + path);
  boost::property_tree::ptree tree;
  try {
    boost::property_tree::ini_parser::read_ini(path, tree);
  } catch (const boost::property_tree::ini_parser_error& e) {
    throw ConfigError("cannot parse config " + path + ": " + e.message() + " (line " +
                      std::to_string(e.line()) + ")");
  }
  for (const auto& [section, body] : tree) {
    if (body.empty()) throw ConfigError(path + ": key '" + section + "' is outside a [section]");
    for (const auto& [key, value] : body) {
      try {
        set_value(c, section + "." + key, value.data());
      } catch (const ConfigError& e) {
        throw ConfigError(path + ": " + e.what());
      }
    }
  }
}

// --- typed views -------------------------------------------------------------

inline ScoreFn score_from_config(const std::string& name, double theta) {
  switch (score_kind_from_string(name)) {
    case ScoreKind::LinearNeg: return ScoreFn::linear_neg();
    case ScoreKind::Softplus: return ScoreFn::softplus();
    case ScoreKind::Hinge: return ScoreFn::hinge();
    case ScoreKind::NegLogSigmoid: return ScoreFn::neg_log_sigmoid(theta);
  }
  throw ConfigError("unknown score function " + name);
}

inline LossForm loss_form_from_string(const std::string& s) {
  if (s == "type1") return LossForm::Type1;
  if (s == "type2") return LossForm::Type2;
  throw ConfigError("unknown loss form '" + s + "' (expected type1 or type2)");
}

/// The [loss] section as a LossConfig; a preset replaces the other keys.
inline LossConfig loss_config(const ExperimentConfig& c) {
  if (c.preset != "none") {
    static const std::map<std::string, Preset> presets = {{"ff", Preset::ForwardForward},
                                                          {"phyll", Preset::PhyLL},
                                                          {"scff", Preset::SCFF},
                                                          {"clapp", Preset::CLAPP}};
    const auto it = presets.find(c.preset);
    if (it == presets.end()) throw ConfigError("unknown loss preset '" + c.preset + "'");
    return LossConfig::from_preset(it->second, c.theta);
  }
  LossConfig l;
  l.f = score_from_config(c.score, c.theta);
  l.form = loss_form_from_string(c.form);
  l.scheme = reference_scheme_from_string(c.scheme);
  l.lambda = c.lambda;
  require(l.lambda >= 0.0, "loss.lambda must be >= 0");
  return l;
}

}  // namespace lssl

#endif  // LSSL_CONFIG_HPP_
