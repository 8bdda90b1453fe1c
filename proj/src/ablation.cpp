#include "cetrec/ablation.hpp"

#include <cmath>
#include <cstdio>
#include <map>
#include <sstream>

#include "cetrec/errors.hpp"

namespace cetrec {

using nlohmann::json;

const std::vector<CellSpec>& ablation_cells() {
  static const std::vector<CellSpec> cells = {
      {"cetrec_sinpe", PeMode::SinPE, true, true},  {"cetrec_rope", PeMode::RoPE, true, true},
      {"wo_ct_sinpe", PeMode::SinPE, true, false},  {"wo_ct_rope", PeMode::RoPE, true, false},
      {"wo_both", PeMode::RoPE, false, false},
  };
  return cells;
}

const CellSpec& ablation_cell(std::string_view name) {
  for (const auto& c : ablation_cells()) {
    if (c.name == name) {
      return c;
    }
  }
  throw UsageError("unknown ablation cell '" + std::string(name) + "'");
}

ExperimentConfig cell_config(const ExperimentConfig& base, const CellSpec& cell, std::uint64_t seed) {
  ExperimentConfig c = base;
  c.model.pe_mode = cell.pe_mode;
  c.model.temporal_enabled = cell.temporal_enabled;
  if (!cell.counterfactual) {
    c.train.lambda = 0.0;
  }
  c.train.seed = seed;
  c.seeds = {seed};
  return c;
}

RunResult evaluate_trained(const RecTask& task, const DatasetSplit& split, const ExperimentConfig& config,
                           const Model& model, const std::string& tag, bool with_sensitivity) {
  RunResult r;
  r.tag = tag;
  r.seed = config.train.seed;
  r.config = config;
  const EvalOptions opts = config.eval.options();
  const auto test = head(split.test, opts.limit);
  if (with_sensitivity) {
    r.sensitivity = sensitivity_probe(model, task, test, opts);
    r.metrics = r.sensitivity->original;
  } else {
    r.metrics = evaluate(model, task, test, opts);
  }
  r.metrics.tag = tag;
  r.metrics.seed = r.seed;
  std::vector<PromptEncoding> enc;
  for (const Example& ex : test) {
    enc.push_back(task.encode(ex));
  }
  double probe = 0.0;
  constexpr std::size_t kChunk = 32;
  for (std::size_t i = 0; i < enc.size(); i += kChunk) {
    const auto chunk = std::span<const PromptEncoding>(enc).subspan(i, std::min(kChunk, enc.size() - i));
    probe += causal_effect_probe(model, chunk) * static_cast<double>(chunk.size());
  }
  r.test_probe = enc.empty() ? 0.0 : probe / static_cast<double>(enc.size());
  return r;
}

RunResult run_experiment(const RecTask& task, const DatasetSplit& split, const ExperimentConfig& config,
                         const std::string& tag, const RunOptions& options) {
  config.validate();
  Model init = initial_model(config.model, task, config.train.seed, config.train.regime);
  TrainData data{&task, split.train, split.validation};
  TrainResult trained = train(std::move(init), data, config.train, options.on_epoch);
  RunResult r = evaluate_trained(task, split, config, trained.model, tag, options.with_sensitivity);
  r.epochs = std::move(trained.log);
  r.best_epoch = trained.best_epoch;
  r.model = std::move(trained.model);
  return r;
}

std::vector<RunResult> run_ablations(const RecTask& task, const DatasetSplit& split, const ExperimentConfig& base,
                                     std::span<const std::uint64_t> seeds, const ProgressCallback& progress) {
  std::vector<RunResult> out;
  for (const CellSpec& cell : ablation_cells()) {
    for (std::uint64_t seed : seeds) {
      const ExperimentConfig cfg = cell_config(base, cell, seed);
      out.push_back(run_experiment(task, split, cfg, cell.name));
      if (progress) {
        progress(out.back());
      }
    }
  }
  return out;
}

MetricSummary summarize_values(std::span<const double> values) {
  MetricSummary s;
  if (values.empty()) {
    return s;
  }
  const auto n = static_cast<double>(values.size());
  for (double v : values) {
    s.mean += v;
  }
  s.mean /= n;
  if (values.size() > 1) {
    double ss = 0.0;
    for (double v : values) {
      ss += (v - s.mean) * (v - s.mean);
    }
    s.se = std::sqrt(ss / (n - 1.0)) / std::sqrt(n);
  }
  return s;
}

const MetricSummary& CellSummary::metric(std::string_view name) const {
  if (name == "hr5") {
    return hr5;
  }
  if (name == "hr10") {
    return hr10;
  }
  if (name == "ndcg5") {
    return ndcg5;
  }
  if (name == "ndcg10") {
    return ndcg10;
  }
  throw UsageError("unknown metric '" + std::string(name) + "'");
}

std::vector<CellSummary> summarize(std::span<const RunResult> runs) {
  std::vector<std::string> order;
  std::map<std::string, std::vector<const RunResult*>> by_cell;
  for (const auto& r : runs) {
    if (!by_cell.contains(r.tag)) {
      order.push_back(r.tag);
    }
    by_cell[r.tag].push_back(&r);
  }
  std::vector<CellSummary> out;
  for (const auto& name : order) {
    const auto& rs = by_cell[name];
    CellSummary s;
    s.cell = name;
    s.n_runs = rs.size();
    auto collect = [&](auto get) {
      std::vector<double> v;
      for (const RunResult* r : rs) {
        v.push_back(get(*r));
      }
      return summarize_values(v);
    };
    s.hr5 = collect([](const RunResult& r) { return r.metrics.hr5; });
    s.hr10 = collect([](const RunResult& r) { return r.metrics.hr10; });
    s.ndcg5 = collect([](const RunResult& r) { return r.metrics.ndcg5; });
    s.ndcg10 = collect([](const RunResult& r) { return r.metrics.ndcg10; });
    s.test_probe = collect([](const RunResult& r) { return r.test_probe; });
    std::vector<double> rates;
    for (const RunResult* r : rs) {
      if (r->sensitivity) {
        if (const auto m = r->sensitivity->mean_change_rate()) {
          rates.push_back(*m);
        }
      }
    }
    if (!rates.empty()) {
      s.change_rate = summarize_values(rates);
    }
    out.push_back(s);
  }
  return out;
}

namespace {

std::string fmt(double v) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.10f", v);
  return buf;
}

}  // namespace

std::string metrics_csv(std::span<const RunResult> runs) {
  std::string out = "cell,seed,hr5,hr10,ndcg5,ndcg10,n_examples\n";
  for (const auto& r : runs) {
    const MetricsReport& m = r.metrics;
    out += r.tag + "," + std::to_string(r.seed) + "," + fmt(m.hr5) + "," + fmt(m.hr10) + "," + fmt(m.ndcg5) + "," +
           fmt(m.ndcg10) + "," + std::to_string(m.n_examples) + "\n";
  }
  return out;
}

std::vector<MetricsRow> parse_metrics_csv(std::string_view text) {
  std::istringstream in{std::string(text)};
  std::string line;
  std::vector<MetricsRow> rows;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.empty() || line_no == 1) {
      if (line_no == 1 && line.rfind("cell,seed,", 0) != 0) {
        throw IoError("metrics CSV: unexpected header '" + line + "'");
      }
      continue;
    }
    std::vector<std::string> f;
    std::stringstream ls(line);
    std::string cell;
    while (std::getline(ls, cell, ',')) {
      f.push_back(cell);
    }
    if (f.size() != 7) {
      throw IoError("metrics CSV line " + std::to_string(line_no) + ": expected 7 fields");
    }
    try {
      rows.push_back({f[0], std::stoull(f[1]), std::stod(f[2]), std::stod(f[3]), std::stod(f[4]), std::stod(f[5]),
                      static_cast<std::size_t>(std::stoull(f[6]))});
    } catch (const std::exception&) {
      throw IoError("metrics CSV line " + std::to_string(line_no) + ": malformed number");
    }
  }
  return rows;
}

json metrics_report_to_json(const MetricsReport& m) {
  return {{"tag", m.tag},       {"seed", m.seed},     {"n_examples", m.n_examples}, {"hr5", m.hr5},
          {"hr10", m.hr10},     {"ndcg5", m.ndcg5},   {"ndcg10", m.ndcg10}};
}

json sensitivity_to_json(const SensitivityReport& s) {
  json entries = json::array();
  for (const auto& e : s.entries) {
    entries.push_back({{"metric", e.metric},
                       {"original", e.original},
                       {"reversed", e.reversed},
                       {"change_rate", e.change_rate ? json(*e.change_rate) : json(nullptr)},
                       {"defined", e.change_rate.has_value()}});
  }
  const auto mean = s.mean_change_rate();
  return {{"entries", entries},
          {"mean_change_rate", mean ? json(*mean) : json(nullptr)},
          {"original", metrics_report_to_json(s.original)},
          {"reversed", metrics_report_to_json(s.reversed)}};
}

json epoch_log_to_json(const EpochLog& log) {
  return {{"epoch", log.epoch},
          {"phase", log.phase},
          {"l_ta", log.l_ta},
          {"l_ct", log.l_ct ? json(*log.l_ct) : json(nullptr)},
          {"total", log.total},
          {"ce_probe", log.ce_probe},
          {"val_l_ta", log.val_l_ta},
          {"val_hr5", log.val_hr5}};
}

namespace {

json summary_json(const MetricSummary& s) { return {{"mean", s.mean}, {"se", s.se}}; }

}  // namespace

json runs_to_json(std::span<const RunResult> runs) {
  json cells = json::array();
  for (const auto& s : summarize(runs)) {
    cells.push_back({{"cell", s.cell},
                     {"n_runs", s.n_runs},
                     {"hr5", summary_json(s.hr5)},
                     {"hr10", summary_json(s.hr10)},
                     {"ndcg5", summary_json(s.ndcg5)},
                     {"ndcg10", summary_json(s.ndcg10)},
                     {"change_rate", s.change_rate ? summary_json(*s.change_rate) : json(nullptr)},
                     {"test_probe", summary_json(s.test_probe)}});
  }
  json list = json::array();
  for (const auto& r : runs) {
    json entry = {{"cell", r.tag},
                  {"seed", r.seed},
                  {"metrics", metrics_report_to_json(r.metrics)},
                  {"test_probe", r.test_probe},
                  {"best_epoch", r.best_epoch}};
    entry["sensitivity"] = r.sensitivity ? sensitivity_to_json(*r.sensitivity) : json(nullptr);
    list.push_back(std::move(entry));
  }
  return {{"cells", cells}, {"runs", list}};
}

ReportTable report_table(std::span<const MetricsRow> rows) {
  ReportTable t;
  std::map<std::string, std::array<std::vector<double>, 4>> values;
  for (const auto& r : rows) {
    if (!values.contains(r.cell)) {
      t.cells.push_back(r.cell);
    }
    auto& v = values[r.cell];
    v[0].push_back(r.hr5);
    v[1].push_back(r.hr10);
    v[2].push_back(r.ndcg5);
    v[3].push_back(r.ndcg10);
  }
  for (const auto& cell : t.cells) {
    const auto& v = values[cell];
    t.metrics.push_back({summarize_values(v[0]), summarize_values(v[1]), summarize_values(v[2]),
                         summarize_values(v[3])});
    t.n_runs.push_back(v[0].size());
  }
  return t;
}

std::string report_table_csv(const ReportTable& t) {
  std::string out = "variant,n_runs,hr5,hr5_se,hr10,hr10_se,ndcg5,ndcg5_se,ndcg10,ndcg10_se\n";
  for (std::size_t i = 0; i < t.cells.size(); ++i) {
    out += t.cells[i] + "," + std::to_string(t.n_runs[i]);
    for (const auto& m : t.metrics[i]) {
      out += "," + fmt(m.mean) + "," + fmt(m.se);
    }
    out += "\n";
  }
  return out;
}

json report_table_json(const ReportTable& t) {
  json rows = json::array();
  for (std::size_t i = 0; i < t.cells.size(); ++i) {
    json row = {{"variant", t.cells[i]}, {"n_runs", t.n_runs[i]}};
    for (std::size_t k = 0; k < 4; ++k) {
      row[std::string(kMetricNames[k])] = summary_json(t.metrics[i][k]);
    }
    rows.push_back(std::move(row));
  }
  return {{"columns", {"hr5", "hr10", "ndcg5", "ndcg10"}}, {"rows", rows}};
}

}  // namespace cetrec
