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

#include <gtest/gtest.h>

#include <cstdlib>
#include <fstream>
#include <sstream>
#include <sys/wait.h>

#include "noisylab/experiment.hpp"
#include "test_util.hpp"

namespace noisylab {
namespace {

std::string slurp(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

Config tiny_config(const std::string& out) {
  std::istringstream in(
      "# small grid\n"
      "data = synthetic\n"
      "synth.classes = 3\n"
      "synth.per_class = 20\n"
      "synth.dim = 4\n"
      "noise.accuracy = 0.7, 0.5, 0.9\n"
      "train.epochs = 3\n"
      "train.batch_size = 16\n"
      "model.hidden = 8\n"
      "variants = c3l+ensemble\n"
      "seeds = 1\n");
  Config c = Config::parse(in);
  c.set("output", out);
  return c;
}

int run_cli(const std::string& args) {
  const int status = std::system((std::string(NOISYLAB_CLI) + " " + args + " >/dev/null 2>&1").c_str());
  return WIFEXITED(status) ? WEXITSTATUS(status) : -1;
}

TEST(Config, ParsesCommentsAndWhitespace) {
  std::istringstream in("a = 1  # trailing\n\n  b=two\n# only comment\n");
  const Config c = Config::parse(in);
  EXPECT_EQ(c.get("a", ""), "1");
  EXPECT_EQ(c.get("b", ""), "two");
  EXPECT_EQ(c.values().size(), 2u);
}

TEST(Config, RejectsMalformedLinesAndValues) {
  std::istringstream bad("just words\n");
  EXPECT_THROW(Config::parse(bad), ConfigError);
  Config c;
  c.set("x", "abc");
  EXPECT_THROW(c.get_double("x", 0.0), ConfigError);
  EXPECT_THROW(c.get_uint("x", 0), ConfigError);
  EXPECT_THROW(c.get_bool("x", false), ConfigError);
  EXPECT_THROW(c.apply_override("novalue"), ConfigError);
  EXPECT_THROW(Config::load("/nonexistent/cfg"), ConfigError);
}

TEST(Config, OverridesWinOverFileAndPreset) {
  Config file;
  file.set("preset", "paper-regime");
  file.set("train.epochs", "7");
  const Config c = resolve_config(file, {"train.epochs=9", "seeds=3,4"});
  EXPECT_EQ(c.get("train.epochs", ""), "9");
  EXPECT_EQ(c.get("seeds", ""), "3,4");
  EXPECT_EQ(c.get("synth.classes", ""), "10");
}

TEST(Config, UnknownKeysAndPresetsAreErrors) {
  Config file;
  file.set("train.epoch", "3");
  EXPECT_THROW(resolve_config(file, {}), ConfigError);
  Config p;
  p.set("preset", "nope");
  EXPECT_THROW(resolve_config(p, {}), ConfigError);
}

TEST(Spec, DefaultsMatchTheMethodHyperparameters) {
  Config c;
  c.set("output", "x");
  const ExperimentSpec s = spec_from_config(c);
  EXPECT_EQ(s.train.batch_size, 128u);
  EXPECT_EQ(s.train.lr_head, 0.01);
  EXPECT_EQ(s.train.lr_backbone, 0.001);
  EXPECT_EQ(s.train.momentum, 0.9);
  EXPECT_EQ(s.train.loss_cfg.temperature, 0.07);
  EXPECT_EQ(s.train.loss_cfg.lambda, 1.0);
  EXPECT_EQ(s.train.rescale.tau, 2.0);
  ASSERT_EQ(s.variants.size(), 1u);
  EXPECT_EQ(s.variants[0].name(), "c3l+ensemble");
}

TEST(Spec, Validation) {
  Config c = tiny_config("x");
  c.set("seeds", "1,1");
  EXPECT_THROW(spec_from_config(c), ConfigError);
  c = tiny_config("x");
  c.set("variants", "");
  EXPECT_THROW(spec_from_config(c), ConfigError);
  c = tiny_config("x");
  c.set("noise.accuracy", "0.5,0.5");
  EXPECT_THROW(spec_from_config(c), ConfigError);
  c = tiny_config("x");
  c.set("variants", "c3l+average");
  EXPECT_THROW(spec_from_config(c), ConfigError);
  c = tiny_config("x");
  c.set("train.batch_size", "1");
  EXPECT_THROW(spec_from_config(c), ConfigError);
  c = tiny_config("x");
  c.set("data", "external");
  EXPECT_THROW(spec_from_config(c), ConfigError);
}

TEST(Spec, PaperRegimePreset) {
  Config c = resolve_config(Config{}, {"preset=paper-regime"});
  const ExperimentSpec s = spec_from_config(c);
  const auto& src = std::get<SyntheticSource>(s.source);
  const NoiseMatrix nm = induced_matrix(src.noise, 10);
  double mean = 0.0;
  for (std::size_t j = 0; j < 10; ++j) mean += nm.probs(j, j) / 10.0;
  EXPECT_NEAR(mean, 0.55, 1e-12);
  EXPECT_DOUBLE_EQ(nm.probs(5, 5), 0.01);
  EXPECT_DOUBLE_EQ(nm.probs(7, 7), 0.95);
  EXPECT_EQ(s.seeds.size(), 5u);
}

TEST(TargetedNoise, RowsAreStochasticAndConcentrated) {
  const std::vector<double> acc{0.5, 0.8, 0.2, 0.9};
  const std::vector<double> to{1, 2, 3, 0};
  const NoiseMatrix nm = targeted_noise_matrix(acc, to, 0.6);
  EXPECT_NO_THROW(nm.validate());
  EXPECT_DOUBLE_EQ(nm.probs(0, 1), 0.5 * 0.6);
  EXPECT_DOUBLE_EQ(nm.probs(0, 2), 0.5 * 0.4 / 2.0);
  EXPECT_THROW(targeted_noise_matrix(acc, std::vector<double>{0, 2, 3, 0}, 0.6), ConfigError);
  EXPECT_THROW(targeted_noise_matrix(acc, std::vector<double>{1, 2}, 0.6), ConfigError);
}

TEST(ConfusionPairSyntax, Parses) {
  const ConfusionPairs cp = parse_pairs("0:1:0.25; 2:0:0.5");
  ASSERT_EQ(cp.pairs.size(), 2u);
  EXPECT_EQ(cp.pairs[1].from, 2u);
  EXPECT_EQ(cp.pairs[1].mass, 0.5);
  EXPECT_THROW(parse_pairs("0:1"), ConfigError);
}

TEST(Heatmap, IdentityDisplayRows) {
  const NoiseMatrix nm{Matrix::identity(2), {false, false}};
  const std::vector<std::string> names{"a", "b"};
  const HeatmapCsv h = emit_noise_heatmap_data(nm, names);
  EXPECT_EQ(h.display, "true\\label,a,b\na,1.00,0.00\nb,0.00,1.00\n");
}

TEST(Heatmap, DiagonalCarriesPerClassAccuracy) {
  const std::vector<double> acc{0.6, 0.5, 0.45, 0.7, 0.3, 0.01, 0.55, 0.95, 0.8, 0.64};
  const NoiseMatrix nm = noise_matrix_from_accuracy(acc);
  const HeatmapCsv h = emit_noise_heatmap_data(nm, default_class_names(10));
  std::istringstream in(h.display);
  const Heatmap back = read_noise_heatmap(in);
  EXPECT_EQ(back.probs(5, 5), 0.01);
  EXPECT_EQ(back.probs(7, 7), 0.95);
}

TEST(Heatmap, FullPrecisionRoundTrip) {
  std::mt19937_64 rng(70);
  const NoiseMatrix nm{testing::random_probs(rng, 6, 6), std::vector<bool>(6, false)};
  const auto names = default_class_names(6);
  std::istringstream in(emit_noise_heatmap_data(nm, names).data);
  const Heatmap back = read_noise_heatmap(in);
  EXPECT_LE(max_abs_diff(back.probs, nm.probs), 1e-15);
  EXPECT_EQ(back.names, names);
}

TEST(Heatmap, NameCountMismatch) {
  const NoiseMatrix nm{Matrix::identity(3), {}};
  const std::vector<std::string> names{"a", "b"};
  EXPECT_THROW(emit_noise_heatmap_data(nm, names), FormatError);
}

TEST(RunReportCsv, RoundTrip) {
  RunReport r;
  for (std::size_t e = 1; e <= 3; ++e) {
    EpochRecord rec;
    rec.epoch = e;
    rec.accuracy = 0.1 * e + 1e-17;
    rec.label_accuracy = 0.3 / e;
    rec.per_class_accuracy = {0.5, std::nan(""), 1.0 / 3.0};
    rec.mean_kl = 1.0 / (e + 7.0);
    rec.mean_cc = 2.5;
    rec.flip_rate = 0.125;
    r.append(rec);
  }
  std::stringstream ss;
  write_run_report(ss, r, 3);
  const RunReport back = read_run_report(ss);
  ASSERT_EQ(back.epochs.size(), 3u);
  for (std::size_t e = 0; e < 3; ++e) {
    EXPECT_EQ(back.epochs[e].accuracy, r.epochs[e].accuracy);
    EXPECT_EQ(back.epochs[e].label_accuracy, r.epochs[e].label_accuracy);
    EXPECT_EQ(back.epochs[e].mean_kl, r.epochs[e].mean_kl);
    EXPECT_EQ(back.epochs[e].per_class_accuracy[2], 1.0 / 3.0);
    EXPECT_TRUE(std::isnan(back.epochs[e].per_class_accuracy[1]));
  }
}

TEST(RunExperiment, SingleVariantSingleSeed) {
  testing::TempDir dir("exp1");
  const ExperimentSpec spec = spec_from_config(tiny_config(dir.path().string()));
  const ExperimentResult r = run_experiment(spec);
  EXPECT_EQ(r.exit_code, 0);
  ASSERT_EQ(r.outcomes.size(), 1u);
  ASSERT_EQ(r.summary.size(), 1u);
  EXPECT_EQ(r.summary[0].runs, 1u);
  std::size_t reports = 0;
  for (const auto& e : std::filesystem::directory_iterator(dir.path() / "runs")) {
    const std::string name = e.path().filename().string();
    if (name.find(".timing.") == std::string::npos) ++reports;
  }
  EXPECT_EQ(reports, 1u);
  std::ifstream summary(dir.file("summary.csv"));
  EXPECT_EQ(io::read_lines(summary).size(), 2u);  // header + one row
  std::ifstream run(dir.file("runs/c3l+ensemble_seed1.csv"));
  EXPECT_EQ(read_run_report(run).epochs.size(), 3u);
  std::ifstream nm(dir.file("noise_matrix.csv"));
  EXPECT_EQ(read_noise_heatmap(nm).probs.rows(), 3u);
  std::ifstream curves(dir.file("curves.csv"));
  EXPECT_EQ(io::read_lines(curves).size(), 4u);
}

TEST(RunExperiment, RepeatedRunsAreByteIdentical) {
  testing::TempDir a("expa");
  testing::TempDir b("expb");
  Config ca = tiny_config(a.path().string());
  ca.set("variants", "c3l+ensemble,kl_only+pseudo");
  ca.set("seeds", "4,5");
  Config cb = ca;
  cb.set("output", b.path().string());
  run_experiment(spec_from_config(ca));
  cb.set("threads", "2");
  run_experiment(spec_from_config(cb));
  for (const char* f : {"summary.csv", "curves.csv", "noise_matrix.csv", "runs/c3l+ensemble_seed4.csv",
                        "runs/kl_only+pseudo_seed5.csv"}) {
    EXPECT_EQ(slurp(a.file(f)), slurp(b.file(f))) << f;
  }
}

TEST(RunExperiment, SummaryMeanEqualsMeanOfRunFinals) {
  testing::TempDir dir("expmean");
  Config c = tiny_config(dir.path().string());
  c.set("seeds", "1,2,3");
  const ExperimentResult r = run_experiment(spec_from_config(c));
  double sum = 0.0;
  for (std::uint64_t s : {1, 2, 3}) {
    std::ifstream in(dir.file("runs/c3l+ensemble_seed" + std::to_string(s) + ".csv"));
    sum += *read_run_report(in).last().accuracy;
  }
  EXPECT_NEAR(r.summary[0].mean_accuracy, sum / 3.0, 1e-12);
  std::ifstream csv(dir.file("summary.csv"));
  const auto lines = io::read_lines(csv);
  EXPECT_NEAR(io::parse_double(io::split(lines[1].text)[3], 2), sum / 3.0, 1e-12);
}

TEST(RunExperiment, AllRunsFailingGivesExitOne) {
  testing::TempDir dir("expfail");
  Config c = tiny_config(dir.path().string());
  c.set("train.lr_head", "1e200");
  c.set("train.lr_backbone", "1e200");
  const ExperimentResult r = run_experiment(spec_from_config(c));
  EXPECT_EQ(r.exit_code, 1);
  EXPECT_EQ(r.summary[0].failed, 1u);
  EXPECT_NE(slurp(dir.file("summary.txt")).find("failed"), std::string::npos);
}

TEST(RunExperiment, ExternalDataSource) {
  testing::TempDir dir("expext");
  SynthConfig sc;
  sc.num_classes = 3;
  sc.per_class_count = 15;
  sc.feature_dim = 4;
  const Dataset ds = generate_gaussian_mixture(sc);
  write_external(ds, inject_noise(ds, PerClassAccuracy{{0.8, 0.6, 0.7}}, 0.9, 1), dir.file("f.csv"),
                 dir.file("l.csv"), dir.file("t.csv"));
  Config c = tiny_config(dir.file("out"));
  c.set("data", "external");
  c.set("data.features", dir.file("f.csv"));
  c.set("data.labels", dir.file("l.csv"));
  c.set("data.truth", dir.file("t.csv"));
  const ExperimentResult r = run_experiment(spec_from_config(c));
  EXPECT_EQ(r.exit_code, 0);
  EXPECT_TRUE(std::filesystem::exists(dir.file("out/noise_matrix_display.csv")));
}

TEST(Cli, ExitCodes) {
  testing::TempDir dir("cli");
  {
    std::ofstream cfg(dir.file("ok.cfg"));
    const Config ok = tiny_config(dir.file("out"));
    for (const auto& [k, v] : ok.values()) cfg << k << " = " << v << '\n';
    std::ofstream bad(dir.file("bad.cfg"));
    bad << "train.epochs = zero\n";
  }
  EXPECT_EQ(run_cli("run --config " + dir.file("ok.cfg")), 0);
  EXPECT_TRUE(std::filesystem::exists(dir.file("out/summary.txt")));
  EXPECT_EQ(run_cli("run --config " + dir.file("bad.cfg")), 2);
  EXPECT_EQ(run_cli("run --config " + dir.file("missing.cfg")), 2);
  EXPECT_EQ(run_cli("run --config " + dir.file("ok.cfg") + " --override nokey=1"), 2);
  EXPECT_EQ(run_cli("run"), 2);
  EXPECT_EQ(run_cli("run --config " + dir.file("ok.cfg") + " --override train.lr_head=1e200 --override "
                    "train.lr_backbone=1e200"),
            1);
}

TEST(Cli, SynthThenInspectNoise) {
  testing::TempDir dir("clisynth");
  const std::string f = dir.file("f.csv"), l = dir.file("l.csv"), t = dir.file("t.csv");
  ASSERT_EQ(run_cli("synth --override synth.classes=3 --override synth.dim=3 --override synth.per_class=40 "
                    "--override noise.accuracy=0.9,0.5,0.1 --features " + f + " --labels " + l + " --truth " + t),
            0);
  const ExternalData back = load_external(f, l, t);
  EXPECT_EQ(back.dataset.size(), 120u);
  ASSERT_EQ(run_cli("inspect-noise --labels " + l + " --truth " + t + " --out " + dir.file("nm")), 0);
  std::ifstream in(dir.file("nm.csv"));
  const Heatmap h = read_noise_heatmap(in);
  EXPECT_EQ(h.probs.rows(), 3u);
  EXPECT_EQ(run_cli("inspect-noise --labels " + l + " --truth " + dir.file("missing.csv")), 1);
}

}  // namespace
}  // namespace noisylab
