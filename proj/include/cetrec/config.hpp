#pragma once

#include <cstdint>
#include <filesystem>
#include <vector>

#include <nlohmann/json.hpp>

#include "cetrec/datagen.hpp"
#include "cetrec/evaluation.hpp"
#include "cetrec/model.hpp"
#include "cetrec/training.hpp"

namespace cetrec {

struct EvalConfig {
  InferenceMode mode = InferenceMode::Rank;
  std::size_t test_limit = 0;  // 0 = whole test split
  std::size_t per_pass = 4;
  std::size_t beam_width = 5;
  std::size_t max_tokens = 8;

  [[nodiscard]] EvalOptions options() const;
  bool operator==(const EvalConfig&) const = default;
};

/// The single JSON document accepted by every command. Sections: data, model,
/// train, eval, plus the seed list used by ablate.
struct ExperimentConfig {
  GeneratorConfig data;
  ModelConfig model;
  TrainConfig train;
  EvalConfig eval;
  std::vector<std::uint64_t> seeds{1, 2, 3};

  void validate() const;
  bool operator==(const ExperimentConfig&) const = default;
};

nlohmann::json model_config_to_json(const ModelConfig& config);
/// Missing keys keep `base` values; unknown keys and wrong types throw
/// ConfigError naming the field.
ModelConfig model_config_from_json(const nlohmann::json& j, const ModelConfig& base = {});

nlohmann::json generator_config_to_json(const GeneratorConfig& config);
GeneratorConfig generator_config_from_json(const nlohmann::json& j, const GeneratorConfig& base = {});

nlohmann::json train_config_to_json(const TrainConfig& config);
TrainConfig train_config_from_json(const nlohmann::json& j, const TrainConfig& base = {});

nlohmann::json eval_config_to_json(const EvalConfig& config);
EvalConfig eval_config_from_json(const nlohmann::json& j, const EvalConfig& base = {});

nlohmann::json experiment_config_to_json(const ExperimentConfig& config);
ExperimentConfig experiment_config_from_json(const nlohmann::json& j, const ExperimentConfig& base = {});

ExperimentConfig load_experiment_config(const std::filesystem::path& path);

}  // namespace cetrec
