#pragma once

#include <filesystem>
#include <functional>
#include <optional>
#include <string>
#include <vector>

#include "cetrec/ablation.hpp"
#include "cetrec/config.hpp"

namespace cetrec {

/// Progress lines for long commands (stderr in the CLI, silent in tests).
using LogSink = std::function<void(const std::string&)>;

/// catalog.json, sequences.jsonl, splits.json, manifest.json.
void cmd_gen_data(const ExperimentConfig& config, const std::filesystem::path& out);

/// checkpoint.bin, epochs.jsonl, manifest.json. The checkpoint metadata holds
/// the resolved experiment config.
void cmd_train(const ExperimentConfig& config, const std::filesystem::path& data, const std::filesystem::path& out,
               const LogSink& log = {});

/// Settings a command may override on top of the checkpoint's own config.
struct EvalOverrides {
  std::optional<ExperimentConfig> config;  // refused if its pe_mode differs
  std::optional<InferenceMode> mode;
  std::optional<std::size_t> test_limit;
};

/// metrics.csv, metrics.json, manifest.json.
MetricsReport cmd_eval(const std::filesystem::path& checkpoint, const std::filesystem::path& data,
                       const std::filesystem::path& out, const EvalOverrides& overrides = {});

/// sensitivity.json, manifest.json.
SensitivityReport cmd_probe(const std::filesystem::path& checkpoint, const std::filesystem::path& data,
                            const std::filesystem::path& out, const EvalOverrides& overrides = {});

/// Full matrix: metrics.csv (one row per cell and seed), metrics.json,
/// sensitivity.json, epochs.jsonl, manifest.json, plus runs/<cell>_seed<N>/.
std::vector<RunResult> cmd_ablate(const ExperimentConfig& config, const std::filesystem::path& data,
                                  const std::filesystem::path& out, const LogSink& log = {});

/// Merges metrics.csv files found in `inputs` (directories or files) into a
/// table written as CSV and JSON next to `out`.
ReportTable cmd_report(const std::vector<std::filesystem::path>& inputs, const std::filesystem::path& out);

/// Loads a checkpoint and its recorded experiment config, applying overrides.
struct LoadedRun {
  Model model;
  ExperimentConfig config;
};
LoadedRun load_run(const std::filesystem::path& checkpoint, const EvalOverrides& overrides);

}  // namespace cetrec
