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


// lssl: command-line driver for the alignment and training experiments.
//
// Exit status: 0 success, 1 a gating check failed, 2 configuration or data
// error.

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "lssl/experiments.hpp"

namespace fs = std::filesystem;

namespace {

constexpr int kExitOk = 0;
constexpr int kExitCheckFailed = 1;
constexpr int kExitConfigError = 2;

struct Options {
  std::string config_path;
  std::vector<std::string> overrides;
  std::string out;
  std::optional<std::uint64_t> seed;
  std::optional<int> workers;
  bool dry_run = false;
};

void write_file(const fs::path& path, const std::string& text) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw lssl::ConfigError("cannot write " + path.string());
  out << text;
}

fs::path default_out(const std::string& experiment) {
  const char* root = std::getenv("LSSL_OUTPUT_ROOT");
  return fs::path(root && *root ? root : "runs") / experiment;
}

lssl::ExperimentConfig resolve(const std::string& sub, const Options& o) {
  lssl::ExperimentConfig c;
  c.mnist_dir = LSSL_DEFAULT_MNIST_DIR;
  if (!o.config_path.empty()) lssl::load_ini(c, o.config_path);
  for (const auto& kv : o.overrides) lssl::apply_override(c, kv);
  if (o.seed) c.seed = *o.seed;
  if (o.workers) c.workers = *o.workers;
  c.experiment = sub;
  lssl::require(c.workers >= 1, "run.workers must be >= 1");
  return c;
}

void print_checks(const lssl::AlignmentReport& r) {
  for (const auto& ch : r.checks)
    std::cerr << (ch.passed ? "PASS " : (ch.gating ? "FAIL " : "WARN ")) << ch.name << ": " << ch.detail << '\n';
}

int finish(const lssl::AlignmentReport& r, const fs::path& out, const lssl::ExperimentConfig& c,
           const std::string& probe_csv = "") {
  write_file(out / "report.json", r.to_json().dump(2) + "\n");
  if (!r.rows.empty()) write_file(out / "alignment.csv", r.alignment_csv());
  if (!probe_csv.empty()) write_file(out / "probe.csv", probe_csv);
  write_file(out / "config.ini", lssl::to_ini(c));
  print_checks(r);
  std::cerr << "wrote " << out.string() << '\n';
  return r.passed() ? kExitOk : kExitCheckFailed;
}

lssl::Network probe_target(const lssl::ExperimentConfig& c) {
  if (c.probe_checkpoint.empty()) return lssl::initial_train_network(c);
  std::ifstream in(c.probe_checkpoint);
  if (!in) throw lssl::ConfigError("cannot read checkpoint " + c.probe_checkpoint);
  const nlohmann::json j = nlohmann::json::parse(in);
  // Accepts either a bare network or a full training state.
  return j.contains("network") ? lssl::network_from_json(j.at("network")) : lssl::network_from_json(j);
}

int run(const std::string& sub, const Options& o) {
  const lssl::ExperimentConfig c = resolve(sub, o);
  if (o.dry_run) {
    std::cout << lssl::to_ini(c);
    return kExitOk;
  }
  const fs::path out = o.out.empty() ? default_out(sub) : fs::path(o.out);
  fs::create_directories(out);

  if (sub == "grad-check") return finish(lssl::run_grad_check(c), out, c);
  const lssl::ImageDataset train = lssl::load_split(c, true);
  if (sub == "verify-thm1") return finish(lssl::run_thm1_ladder(c, train), out, c);
  if (sub == "verify-dfb") return finish(lssl::run_dfb_comparison(c, train), out, c);
  if (sub == "conv-spatial") return finish(lssl::run_conv_spatial(c, train), out, c);
  if (sub == "rank-sweep") return finish(lssl::run_rank_sweep(c, train), out, c);

  const lssl::ImageDataset test = lssl::load_split(c, false);
  if (sub == "relu-mlp") return finish(lssl::run_relu_mlp_training(c, train, test), out, c);
  if (sub == "align-by-epoch") return finish(lssl::run_alignment_by_epoch(c, train, test), out, c);
  if (sub == "train") {
    const lssl::TrainRun r = lssl::run_train_and_probe(c, train, test, out.string());
    return finish(r.report, out, c, lssl::probe_csv(r.probes));
  }
  if (sub == "probe") {
    lssl::AlignmentReport rep = lssl::new_report(c, "probe");
    const std::vector<lssl::ProbeRow> rows{
        {c.probe_checkpoint.empty() ? "random_init" : "checkpoint",
         lssl::linear_probe(probe_target(c), train, test, lssl::probe_options(c))}};
    rep.metadata["probes"] = lssl::probe_json(rows);
    return finish(rep, out, c, lssl::probe_csv(rows));
  }
  throw lssl::ConfigError("unknown subcommand " + sub);
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Layerwise self-supervised learning: gradient alignment and training experiments"};
  app.require_subcommand(1);
  Options o;
  const std::vector<std::pair<std::string, std::string>> subs = {
      {"verify-thm1", "Layerwise vs end-to-end alignment ladder"},
      {"verify-dfb", "Direct feedback vs same-layer context"},
      {"relu-mlp", "Alignment after training a ReLU MLP"},
      {"conv-spatial", "Spatial feedback matrices in a convnet"},
      {"rank-sweep", "Alignment under rank-constrained feedback"},
      {"align-by-epoch", "Alignment at training snapshots"},
      {"train", "Local training followed by linear probes"},
      {"probe", "Linear probe on a checkpoint or a random init"},
      {"grad-check", "Analytic gradients vs central differences"},
  };
  for (const auto& [name, help] : subs) {
    CLI::App* s = app.add_subcommand(name, help);
    s->add_option("-c,--config", o.config_path, "INI config file");
    s->add_option("--set", o.overrides, "Override, section.key=value (repeatable)");
    s->add_option("-o,--out", o.out, "Output directory (default $LSSL_OUTPUT_ROOT/<cmd> or runs/<cmd>)");
    s->add_option("--seed", o.seed, "Run seed");
    s->add_option("--workers", o.workers, "Worker threads (results do not depend on it)");
    s->add_flag("--dry-run", o.dry_run, "Print the resolved config and exit");
  }
  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? kExitOk : kExitConfigError;
  }
  const std::string sub = app.get_subcommands().front()->get_name();
  try {
    return run(sub, o);
  } catch (const lssl::ConfigError& e) {
    std::cerr << "lssl " << sub << ": config error: " << e.what() << '\n';
  } catch (const lssl::DataError& e) {
    std::cerr << "lssl " << sub << ": data error: " << e.what() << '\n';
  } catch (const lssl::TrainingDiverged& e) {
    std::cerr << "lssl " << sub << ": " << e.what() << '\n';
    return kExitCheckFailed;
  } catch (const fs::filesystem_error& e) {
    std::cerr << "lssl " << sub << ": " << e.what() << '\n';
  }
  return kExitConfigError;
}
