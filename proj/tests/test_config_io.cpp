#include <gtest/gtest.h>

#include <cmath>
#include <filesystem>

#include "cetrec/ablation.hpp"
#include "cetrec/config.hpp"
#include "cetrec/errors.hpp"
#include "cetrec/io.hpp"
#include "support.hpp"

using namespace cetrec;
namespace fs = std::filesystem;

namespace {

fs::path scratch(const std::string& name) {
  const fs::path p = fs::temp_directory_path() / ("cetrec_cfg_" + name);
  fs::remove_all(p);
  fs::create_directories(p);
  return p;
}

std::string error_of(const std::function<void()>& f) {
  try {
    f();
  } catch (const ConfigError& e) {
    return e.what();
  }
  return "";
}

}  // namespace

TEST(Config, JsonRoundTrip) {
  ExperimentConfig c;
  c.model.pe_mode = PeMode::SinPE;
  c.model.d_model = 48;
  c.train.lambda = 0.5;
  c.train.regime = Regime::FreezeLora;
  c.data.n_users = 123;
  c.data.split_ratio = {7, 2, 1};
  c.eval.mode = InferenceMode::Generate;
  c.seeds = {4, 9};
  const nlohmann::json j = experiment_config_to_json(c);
  EXPECT_EQ(experiment_config_from_json(j), c);
  EXPECT_EQ(experiment_config_from_json(nlohmann::json::parse(j.dump())), c);
}

TEST(Config, MissingKeysKeepDefaults) {
  const ExperimentConfig c = experiment_config_from_json(nlohmann::json::parse(R"({"train": {"epochs": 2}})"));
  EXPECT_EQ(c.train.epochs, 2);
  ExperimentConfig d;
  d.train.epochs = 2;
  EXPECT_EQ(c, d);
}

TEST(Config, UnknownFieldIsNamed) {
  const std::string msg = error_of([] {
    (void)experiment_config_from_json(nlohmann::json::parse(R"({"train": {"lamda": 1.0}})"));
  });
  EXPECT_NE(msg.find("train.lamda: unknown field"), std::string::npos) << msg;
  EXPECT_NE(error_of([] { (void)experiment_config_from_json(nlohmann::json::parse(R"({"optim": {}})")); })
                .find("optim"),
            std::string::npos);
}

TEST(Config, WrongTypeIsNamed) {
  std::string msg = error_of([] {
    (void)experiment_config_from_json(nlohmann::json::parse(R"({"model": {"d_model": "big"}})"));
  });
  EXPECT_NE(msg.find("model.d_model"), std::string::npos) << msg;
  msg = error_of([] {
    (void)experiment_config_from_json(nlohmann::json::parse(R"({"model": {"pe_mode": "alibi"}})"));
  });
  EXPECT_NE(msg.find("model.pe_mode"), std::string::npos) << msg;
  msg = error_of([] {
    (void)experiment_config_from_json(nlohmann::json::parse(R"({"data": {"seed": -3}})"));
  });
  EXPECT_NE(msg.find("data.seed"), std::string::npos) << msg;
}

TEST(Config, LoadReportsBadFiles) {
  const fs::path dir = scratch("load");
  EXPECT_THROW(load_experiment_config(dir / "absent.json"), Error);
  write_text(dir / "bad.json", "{ not json");
  EXPECT_THROW(load_experiment_config(dir / "bad.json"), ConfigError);
  write_text(dir / "ok.json", R"({"seeds": [5]})");
  EXPECT_EQ(load_experiment_config(dir / "ok.json").seeds, (std::vector<std::uint64_t>{5}));
}

TEST(Io, DatasetRoundTrip) {
  GeneratorConfig g;
  g.n_users = 40;
  g.steps_per_user = 12;
  const Dataset d = generate_dataset(g);
  const fs::path dir = scratch("dataset");
  write_dataset(dir, d);
  const Dataset back = read_dataset(dir);
  EXPECT_EQ(back.catalog.items(), d.catalog.items());
  EXPECT_EQ(back.sequences, d.sequences);
  EXPECT_EQ(back.split.train, d.split.train);
  EXPECT_EQ(back.split.validation, d.split.validation);
  EXPECT_EQ(back.split.test, d.split.test);
  EXPECT_EQ(back.split.ratio, d.split.ratio);
  fs::remove(dir / files::kSplits);
  try {
    (void)read_dataset(dir);
    FAIL();
  } catch (const IoError& e) {
    EXPECT_NE(std::string(e.what()).find(files::kSplits), std::string::npos);
  }
}

TEST(Io, Sha256KnownVectors) {
  EXPECT_EQ(sha256_hex(""), "e3b0c44298fc1c149afbf4c8996fb92427ae41e4649b934ca495991b7852b855");
  EXPECT_EQ(sha256_hex("abc"), "ba7816bf8f01cfea414140de5dae2223b00361a396177a9cb410ff61f20015ad");
  const fs::path dir = scratch("sha");
  write_text(dir / "f", "abc");
  EXPECT_EQ(sha256_file(dir / "f"), sha256_hex("abc"));
}

TEST(Io, ManifestHashesOutputs) {
  const fs::path dir = scratch("manifest");
  write_text(dir / "a.txt", "abc");
  write_manifest(dir, {"test", nlohmann::json{{"x", 1}}, {1, 2}, {}, {dir / "a.txt"}});
  const nlohmann::json m = read_json(dir / files::kManifest);
  EXPECT_EQ(m.dump().find(sha256_hex("abc")) != std::string::npos, true);
  EXPECT_EQ(m.dump().find(kToolVersion) != std::string::npos, true);
}

TEST(Ablation, CellConfigs) {
  const ExperimentConfig base;
  ASSERT_EQ(ablation_cells().size(), 5u);
  for (const CellSpec& cell : ablation_cells()) {
    const ExperimentConfig c = cell_config(base, cell, 11);
    EXPECT_EQ(c.model.pe_mode, cell.pe_mode);
    EXPECT_EQ(c.model.temporal_enabled, cell.temporal_enabled);
    EXPECT_EQ(c.train.lambda == 0.0, !cell.counterfactual);
    EXPECT_EQ(c.train.seed, 11u);
    EXPECT_NO_THROW(c.validate());
  }
  const ExperimentConfig wo = cell_config(base, ablation_cell("wo_both"), 1);
  EXPECT_FALSE(wo.model.temporal_enabled);
  EXPECT_EQ(wo.train.lambda, 0.0);
  EXPECT_EQ(wo.model.pe_mode, PeMode::RoPE);
  EXPECT_EQ(cell_config(base, ablation_cell("cetrec_sinpe"), 1).model.pe_mode, PeMode::SinPE);
  EXPECT_THROW(ablation_cell("nope"), UsageError);
}

TEST(Ablation, SummaryStatistics) {
  const std::vector<double> v{1.0, 2.0, 4.0};
  const MetricSummary s = summarize_values(v);
  EXPECT_DOUBLE_EQ(s.mean, 7.0 / 3.0);
  const double var = ((1 - 7.0 / 3) * (1 - 7.0 / 3) + (2 - 7.0 / 3) * (2 - 7.0 / 3) + (4 - 7.0 / 3) * (4 - 7.0 / 3)) / 2;
  EXPECT_NEAR(s.se, std::sqrt(var / 3.0), 1e-15);
  const std::vector<double> one{0.5};
  EXPECT_EQ(summarize_values(one).se, 0.0);
}

TEST(Ablation, MetricsCsvRoundTrip) {
  std::vector<RunResult> runs(2);
  runs[0].tag = "cetrec_rope";
  runs[0].seed = 1;
  runs[0].metrics.hr5 = 0.25;
  runs[0].metrics.hr10 = 0.5;
  runs[0].metrics.ndcg5 = 0.125;
  runs[0].metrics.ndcg10 = 0.2;
  runs[0].metrics.n_examples = 40;
  runs[1] = runs[0];
  runs[1].seed = 2;
  runs[1].metrics.hr5 = 0.75;
  const std::string csv = metrics_csv(runs);
  const auto rows = parse_metrics_csv(csv);
  ASSERT_EQ(rows.size(), 2u);
  EXPECT_EQ(rows[0].cell, "cetrec_rope");
  EXPECT_EQ(rows[1].seed, 2u);
  EXPECT_EQ(rows[1].hr5, 0.75);
  EXPECT_EQ(rows[0].ndcg10, 0.2);
  EXPECT_EQ(rows[0].n_examples, 40u);

  const ReportTable t = report_table(rows);
  ASSERT_EQ(t.cells, (std::vector<std::string>{"cetrec_rope"}));
  EXPECT_EQ(t.n_runs[0], 2u);
  EXPECT_DOUBLE_EQ(t.metrics[0][0].mean, 0.5);
  EXPECT_NEAR(t.metrics[0][0].se, 0.25, 1e-15);
  EXPECT_THROW(parse_metrics_csv("cell,seed\nx,1\n"), Error);
}
