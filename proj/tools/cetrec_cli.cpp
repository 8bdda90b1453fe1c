// Command-line front end. Settings resolve as flag > config file > default.

#include <CLI11.hpp>

#include <cstdio>
#include <iostream>
#include <sstream>

#include "cetrec/errors.hpp"
#include "cetrec/pipeline.hpp"

namespace fs = std::filesystem;
using namespace cetrec;

namespace {

constexpr int kExitFailure = 1;
constexpr int kExitUsage = 2;
constexpr int kExitInvariant = 3;

ExperimentConfig load_config(const std::string& path) {
  return path.empty() ? ExperimentConfig{} : load_experiment_config(path);
}

void log_line(const std::string& line) { std::cerr << line << std::endl; }

std::vector<std::uint64_t> parse_seeds(const std::string& list) {
  std::vector<std::uint64_t> seeds;
  std::stringstream ss(list);
  std::string item;
  while (std::getline(ss, item, ',')) {
    try {
      std::size_t used = 0;
      seeds.push_back(std::stoull(item, &used));
      if (used != item.size()) {
        throw std::invalid_argument(item);
      }
    } catch (const std::exception&) {
      throw ConfigError("--seeds: '" + item + "' is not a non-negative integer");
    }
  }
  if (seeds.empty()) {
    throw ConfigError("--seeds: empty list");
  }
  return seeds;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Temporal-order aware recommender lab: data generation, training, evaluation, ablations"};
  app.require_subcommand(1);

  std::string config_path;
  std::string out_dir;
  std::string data_dir;
  std::string ckpt;

  auto* gen = app.add_subcommand("gen-data", "Generate the synthetic catalog, sequences and splits");
  gen->add_option("--config", config_path, "Experiment config (JSON)")->check(CLI::ExistingFile);
  gen->add_option("--out", out_dir, "Output directory")->required();
  std::optional<std::uint64_t> data_seed;
  gen->add_option("--seed", data_seed, "Overrides data.seed");

  auto* tr = app.add_subcommand("train", "Train one model");
  tr->add_option("--config", config_path, "Experiment config (JSON)")->check(CLI::ExistingFile);
  tr->add_option("--data", data_dir, "Data directory from gen-data")->required();
  tr->add_option("--out", out_dir, "Output directory")->required();
  std::optional<double> lambda;
  std::optional<std::string> pe;
  std::optional<std::string> regime;
  std::optional<std::uint64_t> train_seed;
  std::optional<int> epochs;
  tr->add_option("--lambda", lambda, "Overrides train.lambda");
  tr->add_option("--pe", pe, "Overrides model.pe_mode")->check(CLI::IsMember({"sinpe", "rope"}));
  tr->add_option("--regime", regime, "Overrides train.regime")->check(CLI::IsMember({"scratch", "freeze+lora"}));
  tr->add_option("--seed", train_seed, "Overrides train.seed");
  tr->add_option("--epochs", epochs, "Overrides train.epochs");

  std::optional<std::string> mode;
  std::optional<std::size_t> test_limit;
  auto* ev = app.add_subcommand("eval", "Evaluate a checkpoint on the test split");
  ev->add_option("--ckpt", ckpt, "Checkpoint file")->required()->check(CLI::ExistingFile);
  ev->add_option("--data", data_dir, "Data directory")->required();
  ev->add_option("--config", config_path, "Config whose eval section overrides the checkpoint's")
      ->check(CLI::ExistingFile);
  ev->add_option("--mode", mode, "Overrides eval.mode")->check(CLI::IsMember({"rank", "generate"}));
  ev->add_option("--test-limit", test_limit, "Overrides eval.test_limit");
  ev->add_option("--out", out_dir, "Output directory (default: <ckpt dir>/eval)");

  auto* pr = app.add_subcommand("probe", "Reversed-sequence sensitivity probe");
  pr->add_option("--ckpt", ckpt, "Checkpoint file")->required()->check(CLI::ExistingFile);
  pr->add_option("--data", data_dir, "Data directory")->required();
  pr->add_option("--config", config_path, "Config whose eval section overrides the checkpoint's")
      ->check(CLI::ExistingFile);
  pr->add_option("--test-limit", test_limit, "Overrides eval.test_limit");
  pr->add_option("--out", out_dir, "Output directory (default: <ckpt dir>/probe)");

  std::optional<std::string> seeds;
  auto* ab = app.add_subcommand("ablate", "Run every ablation cell for every seed");
  ab->add_option("--config", config_path, "Experiment config (JSON)")->check(CLI::ExistingFile);
  ab->add_option("--data", data_dir, "Data directory")->required();
  ab->add_option("--seeds", seeds, "Comma-separated seeds, overrides the config's seed list");
  ab->add_option("--out", out_dir, "Output directory")->required();

  std::vector<std::string> inputs;
  std::string report_out;
  auto* rep = app.add_subcommand("report", "Merge metrics.csv files into one variant x metric table");
  rep->add_option("--in", inputs, "Directories or metrics.csv files")->required();
  rep->add_option("--out", report_out, "Output path (.csv or .json; the sibling format is written too)")
      ->required();

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    // --help and friends keep their own code; malformed invocations are usage errors
    const int code = app.exit(e);
    return code == 0 ? 0 : kExitUsage;
  }

  try {
    if (gen->parsed()) {
      ExperimentConfig c = load_config(config_path);
      if (data_seed) {
        c.data.seed = *data_seed;
      }
      cmd_gen_data(c, out_dir);
    } else if (tr->parsed()) {
      ExperimentConfig c = load_config(config_path);
      if (lambda) {
        c.train.lambda = *lambda;
      }
      if (pe) {
        c.model.pe_mode = pe_mode_from_string(*pe);
      }
      if (regime) {
        c.train.regime = regime_from_string(*regime);
      }
      if (train_seed) {
        c.train.seed = *train_seed;
      }
      if (epochs) {
        c.train.epochs = *epochs;
      }
      c.validate();
      cmd_train(c, data_dir, out_dir, log_line);
    } else if (ev->parsed() || pr->parsed()) {
      EvalOverrides o;
      if (!config_path.empty()) {
        o.config = load_config(config_path);
      }
      if (mode) {
        o.mode = inference_mode_from_string(*mode);
      }
      o.test_limit = test_limit;
      const fs::path ck(ckpt);
      if (ev->parsed()) {
        const auto m = cmd_eval(ck, data_dir, out_dir.empty() ? ck.parent_path() / "eval" : fs::path(out_dir), o);
        std::printf("hr5 %.6f hr10 %.6f ndcg5 %.6f ndcg10 %.6f (n=%zu)\n", m.hr5, m.hr10, m.ndcg5, m.ndcg10,
                    m.n_examples);
      } else {
        const auto s = cmd_probe(ck, data_dir, out_dir.empty() ? ck.parent_path() / "probe" : fs::path(out_dir), o);
        for (const auto& e : s.entries) {
          if (e.change_rate) {
            std::printf("%s original %.6f reversed %.6f change_rate %.6f\n", e.metric.c_str(), e.original,
                        e.reversed, *e.change_rate);
          } else {
            std::printf("%s original %.6f reversed %.6f change_rate undefined\n", e.metric.c_str(), e.original,
                        e.reversed);
          }
        }
      }
    } else if (ab->parsed()) {
      ExperimentConfig c = load_config(config_path);
      if (seeds) {
        c.seeds = parse_seeds(*seeds);
      }
      c.validate();
      const auto runs = cmd_ablate(c, data_dir, out_dir, log_line);
      for (const auto& s : summarize(runs)) {
        std::printf("%-14s hr5 %.4f (se %.4f) ndcg5 %.4f change_rate %s\n", s.cell.c_str(), s.hr5.mean, s.hr5.se,
                    s.ndcg5.mean, s.change_rate ? std::to_string(s.change_rate->mean).c_str() : "undefined");
      }
    } else if (rep->parsed()) {
      std::vector<fs::path> paths(inputs.begin(), inputs.end());
      const ReportTable t = cmd_report(paths, report_out);
      std::fputs(report_table_csv(t).c_str(), stdout);
    }
  } catch (const ConfigError& e) {
    std::cerr << "config error: " << e.what() << "\n";
    return kExitUsage;
  } catch (const UsageError& e) {
    std::cerr << "usage error: " << e.what() << "\n";
    return kExitUsage;
  } catch (const InvariantError& e) {
    std::cerr << "invariant violated: " << e.what() << "\n";
    return kExitInvariant;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kExitFailure;
  }
  return 0;
}
