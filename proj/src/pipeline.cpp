#include "cetrec/pipeline.hpp"

#include <cstdio>

#include "cetrec/errors.hpp"
#include "cetrec/io.hpp"

namespace cetrec {

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

void say(const LogSink& log, const std::string& line) {
  if (log) {
    log(line);
  }
}

std::string fixed(double v, int digits = 4) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.*f", digits, v);
  return buf;
}

std::string epoch_line(const EpochLog& l) {
  return l.phase + " epoch " + std::to_string(l.epoch) + ": l_ta " + fixed(l.l_ta) +
         (l.l_ct ? ", l_ct " + fixed(*l.l_ct) : std::string()) + ", val_l_ta " + fixed(l.val_l_ta) + ", ce_probe " +
         fixed(l.ce_probe) + ", val_hr5 " + fixed(l.val_hr5);
}

std::vector<fs::path> data_files(const fs::path& data) {
  return {data / files::kCatalog, data / files::kSequences, data / files::kSplits};
}

RecTask load_task(const Dataset& ds) { return RecTask::make(ds.catalog); }

}  // namespace

void cmd_gen_data(const ExperimentConfig& config, const fs::path& out) {
  config.validate();
  const Dataset ds = generate_dataset(config.data);
  write_dataset(out, ds);
  write_manifest(out, {"gen-data", experiment_config_to_json(config), {config.data.seed}, {}, data_files(out)});
}

void cmd_train(const ExperimentConfig& requested, const fs::path& data, const fs::path& out, const LogSink& log) {
  requested.validate();
  const Dataset ds = read_dataset(data);
  const RecTask task = load_task(ds);
  ExperimentConfig config = requested;
  config.model.vocab_size = task.vocab.size();
  fs::create_directories(out);
  Model init = initial_model(config.model, task, config.train.seed, config.train.regime);
  std::string epochs;
  const TrainResult result = train(std::move(init), {&task, ds.split.train, ds.split.validation}, config.train,
                                   [&](const EpochLog& l) {
                                     epochs += epoch_log_to_json(l).dump() + "\n";
                                     say(log, epoch_line(l));
                                   });
  Checkpoint ck{result.model.config(), result.model.params(), result.model.adapter(), config.train.seed,
                json{{"experiment", experiment_config_to_json(config)}, {"best_epoch", result.best_epoch}}.dump()};
  save_checkpoint(out / files::kCheckpoint, ck);
  write_text(out / files::kEpochs, epochs);
  write_manifest(out, {"train", experiment_config_to_json(config), {config.train.seed}, data_files(data),
                       {out / files::kCheckpoint, out / files::kEpochs}});
}

LoadedRun load_run(const fs::path& checkpoint, const EvalOverrides& overrides) {
  if (!fs::exists(checkpoint)) {
    throw IoError("checkpoint " + checkpoint.string() + " does not exist");
  }
  Checkpoint ck = load_checkpoint(checkpoint);
  const json meta = json::parse(ck.metadata_json);
  ExperimentConfig config =
      meta.contains("experiment") ? experiment_config_from_json(meta.at("experiment")) : ExperimentConfig{};
  if (overrides.config) {
    if (overrides.config->model.pe_mode != ck.config.pe_mode) {
      throw ConfigError("refusing to evaluate: config pe_mode '" + to_string(overrides.config->model.pe_mode) +
                        "' differs from checkpoint pe_mode '" + to_string(ck.config.pe_mode) + "'");
    }
    config.eval = overrides.config->eval;
  }
  if (overrides.mode) {
    config.eval.mode = *overrides.mode;
  }
  if (overrides.test_limit) {
    config.eval.test_limit = *overrides.test_limit;
  }
  config.model = ck.config;
  return {Model(ck.config, std::move(ck.params), std::move(ck.adapter)), config};
}

namespace {

void check_vocab(const Model& model, const RecTask& task) {
  if (model.config().vocab_size != task.vocab.size()) {
    throw ConfigError("checkpoint vocabulary size " + std::to_string(model.config().vocab_size) +
                      " does not match the data's vocabulary " + std::to_string(task.vocab.size()));
  }
}

}  // namespace

MetricsReport cmd_eval(const fs::path& checkpoint, const fs::path& data, const fs::path& out,
                       const EvalOverrides& overrides) {
  const LoadedRun run = load_run(checkpoint, overrides);
  const Dataset ds = read_dataset(data);
  const RecTask task = load_task(ds);
  check_vocab(run.model, task);
  MetricsReport report = evaluate(run.model, task, ds.split.test, run.config.eval.options());
  report.tag = to_string(run.config.eval.mode);
  report.seed = run.config.train.seed;
  RunResult r;
  r.tag = report.tag;
  r.seed = report.seed;
  r.metrics = report;
  fs::create_directories(out);
  write_text(out / files::kMetricsCsv, metrics_csv(std::span(&r, 1)));
  write_json(out / files::kMetricsJson, metrics_report_to_json(report));
  std::vector<fs::path> inputs = data_files(data);
  inputs.push_back(checkpoint);
  write_manifest(out, {"eval", experiment_config_to_json(run.config), {run.config.train.seed}, inputs,
                       {out / files::kMetricsCsv, out / files::kMetricsJson}});
  return report;
}

SensitivityReport cmd_probe(const fs::path& checkpoint, const fs::path& data, const fs::path& out,
                            const EvalOverrides& overrides) {
  const LoadedRun run = load_run(checkpoint, overrides);
  const Dataset ds = read_dataset(data);
  const RecTask task = load_task(ds);
  check_vocab(run.model, task);
  const SensitivityReport report = sensitivity_probe(run.model, task, ds.split.test, run.config.eval.options());
  fs::create_directories(out);
  write_json(out / files::kSensitivity, sensitivity_to_json(report));
  std::vector<fs::path> inputs = data_files(data);
  inputs.push_back(checkpoint);
  write_manifest(out, {"probe", experiment_config_to_json(run.config), {run.config.train.seed}, inputs,
                       {out / files::kSensitivity}});
  return report;
}

std::vector<RunResult> cmd_ablate(const ExperimentConfig& config, const fs::path& data, const fs::path& out,
                                  const LogSink& log) {
  config.validate();
  const Dataset ds = read_dataset(data);
  const RecTask task = load_task(ds);
  fs::create_directories(out / "runs");
  std::vector<RunResult> runs;
  std::string epochs;
  json sensitivity = json::array();
  for (const CellSpec& cell : ablation_cells()) {
    for (std::uint64_t seed : config.seeds) {
      const ExperimentConfig cfg = cell_config(config, cell, seed);
      say(log, "cell " + cell.name + " seed " + std::to_string(seed));
      RunOptions opts;
      opts.on_epoch = [&](const EpochLog& l) {
        json j = epoch_log_to_json(l);
        j["cell"] = cell.name;
        j["seed"] = seed;
        epochs += j.dump() + "\n";
        say(log, "  " + epoch_line(l));
      };
      RunResult r = run_experiment(task, ds.split, cfg, cell.name, opts);
      say(log, "  test hr5 " + fixed(r.metrics.hr5) + ", ndcg5 " + fixed(r.metrics.ndcg5) + ", change rate " +
                   (r.sensitivity && r.sensitivity->mean_change_rate() ? fixed(*r.sensitivity->mean_change_rate())
                                                                       : std::string("undefined")));
      const fs::path dir = out / "runs" / (cell.name + "_seed" + std::to_string(seed));
      fs::create_directories(dir);
      save_checkpoint(dir / files::kCheckpoint,
                      {r.model->config(), r.model->params(), r.model->adapter(), seed,
                       json{{"experiment", experiment_config_to_json(cfg)}, {"best_epoch", r.best_epoch}}.dump()});
      write_json(dir / files::kMetricsJson, metrics_report_to_json(r.metrics));
      write_manifest(dir, {"ablate-cell", experiment_config_to_json(cfg), {seed}, data_files(data),
                           {dir / files::kCheckpoint, dir / files::kMetricsJson}});
      json s = r.sensitivity ? sensitivity_to_json(*r.sensitivity) : json(nullptr);
      sensitivity.push_back({{"cell", cell.name}, {"seed", seed}, {"report", s}});
      r.model.reset();
      runs.push_back(std::move(r));
    }
  }
  write_text(out / files::kMetricsCsv, metrics_csv(runs));
  write_json(out / files::kMetricsJson, runs_to_json(runs));
  write_json(out / files::kSensitivity, sensitivity);
  write_text(out / files::kEpochs, epochs);
  write_manifest(out, {"ablate", experiment_config_to_json(config), config.seeds, data_files(data),
                       {out / files::kMetricsCsv, out / files::kMetricsJson, out / files::kSensitivity,
                        out / files::kEpochs}});
  return runs;
}

ReportTable cmd_report(const std::vector<fs::path>& inputs, const fs::path& out) {
  if (inputs.empty()) {
    throw UsageError("report needs at least one input");
  }
  std::vector<MetricsRow> rows;
  for (const auto& in : inputs) {
    const fs::path csv = fs::is_directory(in) ? in / files::kMetricsCsv : in;
    if (!fs::exists(csv)) {
      throw IoError("report input " + csv.string() + " does not exist");
    }
    const auto part = parse_metrics_csv(read_text(csv));
    rows.insert(rows.end(), part.begin(), part.end());
  }
  const ReportTable table = report_table(rows);
  if (!out.parent_path().empty()) {
    fs::create_directories(out.parent_path());
  }
  fs::path csv_path = out;
  fs::path json_path = out;
  if (out.extension() == ".json") {
    csv_path.replace_extension(".csv");
  } else {
    json_path.replace_extension(".json");
  }
  write_text(csv_path, report_table_csv(table));
  write_json(json_path, report_table_json(table));
  return table;
}

}  // namespace cetrec
