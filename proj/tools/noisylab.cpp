/*
 * Copyright 2026 The noisylab Authors
 *
 * Licensed under the Apache License, Version 2.0 (the "License");
 * you may not use this file except in compliance with the License.
 * You may obtain a copy of the License at
 *
 *    http://www.apache.org/licenses/LICENSE-2.0
 *
 * Unless required by applicable law or agreed to in writing, software
 * distributed under the License is distributed on an "AS IS" BASIS,
 * WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
 * See the License for the specific language governing permissions and
 * limitations under the License.
 */

// noisylab command line.
//
//   noisylab run --config <path> [--override key=value]...
//   noisylab synth [--config <path>] [--override key=value]... --features F --labels L [--truth T] [--seed S]
//   noisylab inspect-noise --labels L --truth T [--out PREFIX]
//
// Exit codes: 0 success, 1 every run failed (or I/O failure), 2 config error.

#include <iostream>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "noisylab/experiment.hpp"

namespace {

constexpr int kExitOk = 0;
constexpr int kExitFailure = 1;
constexpr int kExitConfig = 2;

noisylab::Config load_config(const std::string& path, const std::vector<std::string>& overrides) {
  noisylab::Config file = path.empty() ? noisylab::Config{} : noisylab::Config::load(path);
  return noisylab::resolve_config(file, overrides);
}

int cmd_run(const std::string& config_path, const std::vector<std::string>& overrides) {
  const noisylab::ExperimentSpec spec = noisylab::spec_from_config(load_config(config_path, overrides));
  const noisylab::ExperimentResult r = noisylab::run_experiment(spec, &std::cerr);
  std::ifstream summary(std::filesystem::path(spec.output_dir) / "summary.txt");
  std::cout << summary.rdbuf();
  return r.exit_code;
}

int cmd_synth(const std::string& config_path, const std::vector<std::string>& overrides, const std::string& features,
              const std::string& labels, const std::string& truth, std::uint64_t seed) {
  const noisylab::ExperimentSpec spec = noisylab::spec_from_config(load_config(config_path, overrides));
  if (!std::holds_alternative<noisylab::SyntheticSource>(spec.source)) {
    throw noisylab::ConfigError("synth needs data = synthetic");
  }
  const noisylab::Replicate r = noisylab::make_replicate(spec, seed);
  noisylab::write_external(r.dataset, r.labels, features, labels,
                           truth.empty() ? std::nullopt : std::optional<std::string>(truth));
  std::cout << "wrote " << r.dataset.size() << " instances, " << r.dataset.dim() << " features, "
            << r.dataset.num_classes << " classes\n";
  return kExitOk;
}

int cmd_inspect(const std::string& labels_path, const std::string& truth_path, const std::string& out_prefix) {
  std::vector<std::string> names;
  auto lin = noisylab::io::open_in(labels_path);
  const noisylab::Matrix labels = noisylab::read_labels(lin, &names);
  auto tin = noisylab::io::open_in(truth_path);
  const auto truth = noisylab::read_truth(tin);
  if (truth.size() != labels.rows()) {
    throw noisylab::FormatError("row count mismatch: " + std::to_string(labels.rows()) + " label rows vs " +
                                std::to_string(truth.size()) + " truth lines");
  }
  for (std::size_t y : truth) {
    if (y >= labels.cols()) throw noisylab::FormatError("truth class " + std::to_string(y) + " out of range");
  }
  if (names.empty()) names = noisylab::default_class_names(labels.cols());
  const noisylab::NoiseMatrix nm =
      noisylab::empirical_noise_matrix(noisylab::argmax_rows(labels), truth, labels.cols());
  const noisylab::HeatmapCsv h = noisylab::emit_noise_heatmap_data(nm, names);
  std::cout << h.display;
  double diag = 0.0;
  for (std::size_t j = 0; j < nm.num_classes(); ++j) diag += nm.probs(j, j);
  std::cout << "mean per-class accuracy: " << noisylab::io::format_fixed(diag / nm.num_classes(), 4) << '\n';
  if (!out_prefix.empty()) {
    noisylab::io::open_out(out_prefix + ".csv") << h.data;
    noisylab::io::open_out(out_prefix + "_display.csv") << h.display;
  }
  return kExitOk;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"noisylab: training with noisy initial labels"};
  app.require_subcommand(1);

  std::string config_path;
  std::vector<std::string> overrides;

  auto* run = app.add_subcommand("run", "Run an experiment grid");
  run->add_option("--config", config_path, "key = value config file")->required();
  run->add_option("--override", overrides, "key=value, applied after the config file");

  std::string features, labels, truth, out_prefix;
  std::uint64_t seed = 1;
  auto* synth = app.add_subcommand("synth", "Write a synthetic dataset with noisy labels");
  synth->add_option("--config", config_path, "key = value config file (optional)");
  synth->add_option("--override", overrides, "key=value, applied after the config file");
  synth->add_option("--features", features, "output feature file")->required();
  synth->add_option("--labels", labels, "output label file")->required();
  synth->add_option("--truth", truth, "output truth file");
  synth->add_option("--seed", seed, "replicate seed");

  auto* inspect = app.add_subcommand("inspect-noise", "Empirical noise matrix of a label file");
  inspect->add_option("--labels", labels, "label file")->required();
  inspect->add_option("--truth", truth, "truth file")->required();
  inspect->add_option("--out", out_prefix, "write <prefix>.csv and <prefix>_display.csv");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? kExitOk : kExitConfig;
  }

  try {
    if (run->parsed()) return cmd_run(config_path, overrides);
    if (synth->parsed()) return cmd_synth(config_path, overrides, features, labels, truth, seed);
    return cmd_inspect(labels, truth, out_prefix);
  } catch (const noisylab::ConfigError& e) {
    std::cerr << "config error: " << e.what() << '\n';
    return kExitConfig;
  } catch (const noisylab::Error& e) {
    std::cerr << "error: " << e.what() << '\n';
    return kExitFailure;
  } catch (const std::filesystem::filesystem_error& e) {
    std::cerr << "error: " << e.what() << '\n';
    return kExitFailure;
  }
}
