#pragma once

#include <cstdint>
#include <array>
#include <functional>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "cetrec/config.hpp"
#include "cetrec/datagen.hpp"
#include "cetrec/evaluation.hpp"
#include "cetrec/training.hpp"

namespace cetrec {

/// One variant of the ablation matrix.
struct CellSpec {
  std::string name;
  PeMode pe_mode = PeMode::RoPE;
  bool temporal_enabled = true;
  bool counterfactual = true;  // false: λ forced to 0
};

/// cetrec_sinpe, cetrec_rope, wo_ct_sinpe, wo_ct_rope, wo_both (RoPE, no
/// temporal embedding, λ = 0).
const std::vector<CellSpec>& ablation_cells();
const CellSpec& ablation_cell(std::string_view name);

/// Base config with the cell's switches applied and every seed set to `seed`.
ExperimentConfig cell_config(const ExperimentConfig& base, const CellSpec& cell, std::uint64_t seed);

struct RunResult {
  std::string tag;
  std::uint64_t seed = 0;
  ExperimentConfig config;
  std::vector<EpochLog> epochs;
  int best_epoch = 0;
  std::optional<Model> model;
  MetricsReport metrics;
  std::optional<SensitivityReport> sensitivity;
  double test_probe = 0.0;  // causal-effect probe on the evaluated test examples
};

struct RunOptions {
  bool with_sensitivity = true;
  EpochCallback on_epoch;
};

/// Train from a fresh seeded init, evaluate on the test split, probe.
RunResult run_experiment(const RecTask& task, const DatasetSplit& split, const ExperimentConfig& config,
                         const std::string& tag, const RunOptions& options = {});

/// Everything needed to score a trained model on the test split.
RunResult evaluate_trained(const RecTask& task, const DatasetSplit& split, const ExperimentConfig& config,
                           const Model& model, const std::string& tag, bool with_sensitivity);

using ProgressCallback = std::function<void(const RunResult&)>;

/// Every cell for every seed on the same data. Cells and seeds run in a fixed
/// order so outputs are reproducible.
std::vector<RunResult> run_ablations(const RecTask& task, const DatasetSplit& split, const ExperimentConfig& base,
                                     std::span<const std::uint64_t> seeds, const ProgressCallback& progress = {});

struct MetricSummary {
  double mean = 0.0;
  double se = 0.0;  // sample standard deviation / sqrt(n); 0 for n = 1
};

struct CellSummary {
  std::string cell;
  std::size_t n_runs = 0;
  MetricSummary hr5, hr10, ndcg5, ndcg10;
  std::optional<MetricSummary> change_rate;  // mean over metrics, then over seeds
  MetricSummary test_probe;

  [[nodiscard]] const MetricSummary& metric(std::string_view name) const;
};

MetricSummary summarize_values(std::span<const double> values);
/// Per cell, in order of first appearance.
std::vector<CellSummary> summarize(std::span<const RunResult> runs);

/// Header plus one row per run: cell,seed,hr5,hr10,ndcg5,ndcg10,n_examples.
std::string metrics_csv(std::span<const RunResult> runs);
/// Rows parsed back from metrics_csv text (used by report).
struct MetricsRow {
  std::string cell;
  std::uint64_t seed = 0;
  double hr5 = 0.0, hr10 = 0.0, ndcg5 = 0.0, ndcg10 = 0.0;
  std::size_t n_examples = 0;
};
std::vector<MetricsRow> parse_metrics_csv(std::string_view text);

nlohmann::json metrics_report_to_json(const MetricsReport& report);
nlohmann::json sensitivity_to_json(const SensitivityReport& report);
nlohmann::json epoch_log_to_json(const EpochLog& log);
/// Nested summary: per cell means/SE plus every run.
nlohmann::json runs_to_json(std::span<const RunResult> runs);

/// Table rows = cells, columns = metric means (± SE) from merged CSV rows.
struct ReportTable {
  std::vector<std::string> cells;
  std::vector<std::array<MetricSummary, 4>> metrics;  // hr5, hr10, ndcg5, ndcg10
  std::vector<std::size_t> n_runs;
};
ReportTable report_table(std::span<const MetricsRow> rows);
std::string report_table_csv(const ReportTable& table);
nlohmann::json report_table_json(const ReportTable& table);

}  // namespace cetrec
