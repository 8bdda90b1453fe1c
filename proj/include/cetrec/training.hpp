#pragma once

#include <cstddef>
#include <cstdint>
#include <functional>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "cetrec/datagen.hpp"
#include "cetrec/evaluation.hpp"
#include "cetrec/model.hpp"

namespace cetrec {

enum class Regime { Scratch, FreezeLora };
std::string to_string(Regime regime);
Regime regime_from_string(std::string_view s);

struct TrainConfig {
  double lambda = 1.0;
  double learning_rate = 1e-4;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double adam_eps = 1e-8;
  double weight_decay = 0.01;  // applied to matrices only
  int epochs = 10;
  std::size_t batch_size = 16;
  std::uint64_t seed = 1;
  Regime regime = Regime::Scratch;
  bool detach_counterfactual = false;
  int patience = 3;
  int pretrain_epochs = 2;        // freeze+lora: λ=0 base epochs on order-shuffled windows
  std::size_t train_limit = 0;    // examples per epoch, 0 = whole split
  std::size_t val_limit = 0;      // validation examples scored per epoch, 0 = all

  void validate() const;
  bool operator==(const TrainConfig&) const = default;
};

inline constexpr double kLambdaGrid[] = {0.01, 0.1, 0.5, 1.0, 10.0};

struct LossBreakdown {
  double l_ta = 0.0;
  std::optional<double> l_ct;  // absent when the counterfactual pass is skipped
  double total = 0.0;
  double ce_probe = 0.0;
};

/// Graph of the objective on a tape. Rows of every example in the batch, in
/// both worlds when needed, share one packed forward.
struct ObjectiveGraph {
  Var l_ta;
  std::optional<Var> l_ct;
  Var total;
  double ce_probe = 0.0;  // only when requested and both worlds were run
};

struct ObjectiveOptions {
  double lambda = 1.0;
  bool detach_counterfactual = false;
  bool with_probe = false;
  /// Debug hook for tests: feed the factual rows as the "counterfactual" too.
  bool counterfactual_is_factual = false;
};

ObjectiveGraph build_objective(Tape& tape, const Model& model, const BoundParams& bound,
                               std::span<const PromptEncoding> batch, const ObjectiveOptions& options);

/// Mean over examples of the mean per-token factual cross-entropy.
double temporal_aware_loss(const Model& model, std::span<const PromptEncoding> batch);
/// Cross-entropy of softmax(z_factual - z_counterfactual); ConfigError when
/// temporal embeddings are disabled.
double counterfactual_loss(const Model& model, std::span<const PromptEncoding> batch);
/// λ = 0 skips the counterfactual pass.
LossBreakdown combined_loss(const Model& model, std::span<const PromptEncoding> batch, double lambda);
/// Mean total-variation distance between factual and counterfactual
/// next-token distributions; 0 when temporal embeddings are disabled.
double causal_effect_probe(const Model& model, std::span<const PromptEncoding> batch);

/// Per-token reference for the tests: plain forward per example, no packing.
double reference_temporal_aware_loss(const Model& model, std::span<const PromptEncoding> batch);

/// Hand-written AdamW over a list of tensors.
class AdamW {
 public:
  AdamW(double lr, double beta1, double beta2, double eps, double weight_decay);
  /// `decay[i]` selects decoupled weight decay for params[i].
  void step(std::span<Tensor* const> params, std::span<const Tensor> grads, const std::vector<bool>& decay);
  [[nodiscard]] long steps() const { return t_; }

 private:
  double lr_, beta1_, beta2_, eps_, wd_;
  long t_ = 0;
  std::vector<Tensor> m_, v_;
};

struct EpochLog {
  int epoch = 0;
  double l_ta = 0.0;
  std::optional<double> l_ct;
  double total = 0.0;
  double ce_probe = 0.0;
  double val_l_ta = 0.0;
  double val_hr5 = 0.0;
  std::string phase = "train";  // "pretrain" for the freeze+lora base stage
};

struct TrainResult {
  Model model;  // best by validation HR@5
  std::vector<EpochLog> log;
  int best_epoch = 0;
};

struct TrainData {
  const RecTask* task = nullptr;
  std::span<const Example> train;
  std::span<const Example> validation;
};

using EpochCallback = std::function<void(const EpochLog&)>;

/// Deterministic given (initial model, data, config).
TrainResult train(Model initial, const TrainData& data, const TrainConfig& config,
                  const EpochCallback& on_epoch = {});

/// Fresh model for a task: sized vocabulary, seeded init, adapter for the
/// freeze+lora regime.
Model initial_model(ModelConfig config, const RecTask& task, std::uint64_t seed, Regime regime);

}  // namespace cetrec
