#include "cetrec/training.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <string>

#include "cetrec/errors.hpp"

namespace cetrec {

namespace {

constexpr std::uint64_t kShufflePurpose = 0x5f1e;
constexpr std::uint64_t kPretrainPurpose = 0x93e7;
constexpr std::uint64_t kAdapterPurpose = 0xada9;
constexpr std::size_t kEvalChunk = 32;

}  // namespace

std::string to_string(Regime regime) { return regime == Regime::Scratch ? "scratch" : "freeze+lora"; }

Regime regime_from_string(std::string_view s) {
  if (s == "scratch") {
    return Regime::Scratch;
  }
  if (s == "freeze+lora") {
    return Regime::FreezeLora;
  }
  throw ConfigError("regime must be 'scratch' or 'freeze+lora', got '" + std::string(s) + "'");
}

void TrainConfig::validate() const {
  if (!(lambda >= 0.0) || !std::isfinite(lambda)) {
    throw ConfigError("train.lambda must be a finite non-negative number");
  }
  if (!(learning_rate > 0.0)) {
    throw ConfigError("train.learning_rate must be positive");
  }
  if (!(beta1 >= 0.0 && beta1 < 1.0) || !(beta2 >= 0.0 && beta2 < 1.0) || !(adam_eps > 0.0)) {
    throw ConfigError("train: betas must lie in [0, 1) and adam_eps must be positive");
  }
  if (weight_decay < 0.0) {
    throw ConfigError("train.weight_decay must be non-negative");
  }
  if (epochs < 0 || pretrain_epochs < 0) {
    throw ConfigError("train.epochs and train.pretrain_epochs must be non-negative");
  }
  if (batch_size == 0) {
    throw ConfigError("train.batch_size must be positive");
  }
  if (patience < 1) {
    throw ConfigError("train.patience must be at least 1");
  }
}

ObjectiveGraph build_objective(Tape& tape, const Model& model, const BoundParams& bound,
                               std::span<const PromptEncoding> batch, const ObjectiveOptions& options) {
  if (batch.empty()) {
    throw UsageError("objective over an empty batch");
  }
  if (options.lambda < 0.0) {
    throw ConfigError("lambda must be non-negative");
  }
  const bool temporal = model.config().temporal_enabled;
  if (options.lambda > 0.0 && !temporal) {
    throw ConfigError("counterfactual loss requires temporal embeddings");
  }
  const bool need_cf = (options.lambda > 0.0 || options.with_probe) && temporal;
  const bool own_cf_rows = need_cf && !options.counterfactual_is_factual;

  std::vector<SequenceRequest> requests;
  for (const auto& e : batch) {
    if (e.target_token_ids.empty()) {
      throw UsageError("training example without target tokens");
    }
    requests.push_back({&e, World::Factual});
  }
  if (own_cf_rows) {
    for (const auto& e : batch) {
      requests.push_back({&e, World::Counterfactual});
    }
  }
  const PackedBatch packed = pack_teacher_forced(requests, true);

  const std::size_t b = batch.size();
  std::vector<int> f_rows;
  std::vector<int> c_rows;
  std::vector<int> targets;
  std::vector<double> weights;
  for (std::size_t i = 0; i < b; ++i) {
    const auto& tgt = batch[i].target_token_ids;
    const double w = 1.0 / (static_cast<double>(tgt.size()) * static_cast<double>(b));
    for (std::size_t j = 0; j < tgt.size(); ++j) {
      f_rows.push_back(packed.prediction_rows[i][j]);
      if (own_cf_rows) {
        c_rows.push_back(packed.prediction_rows[b + i][j]);
      }
      targets.push_back(tgt[j]);
      weights.push_back(w);
    }
  }

  const Var h = model.hidden(tape, bound, packed.input);
  const Var zf = model.logits(bound, h, f_rows);
  ObjectiveGraph g;
  g.l_ta = softmax_cross_entropy(zf, targets, weights);
  g.total = g.l_ta;
  if (!need_cf) {
    return g;
  }
  Var zc = own_cf_rows ? model.logits(bound, h, c_rows) : zf;
  if (options.detach_counterfactual) {
    zc = tape.constant(zc.value());
  }
  if (options.with_probe) {
    const Tensor pf = softmax_rows(zf.value());
    const Tensor pc = softmax_rows(zc.value());
    double probe = 0.0;
    for (std::size_t r = 0; r < pf.rows(); ++r) {
      double tv = 0.0;
      for (std::size_t c = 0; c < pf.cols(); ++c) {
        tv += std::abs(pf(r, c) - pc(r, c));
      }
      probe += weights[r] * 0.5 * tv;
    }
    g.ce_probe = probe;
  }
  if (options.lambda > 0.0) {
    g.l_ct = softmax_cross_entropy(sub(zf, zc), targets, weights);
    g.total = add(g.l_ta, scale(*g.l_ct, options.lambda));
  }
  return g;
}

double temporal_aware_loss(const Model& model, std::span<const PromptEncoding> batch) {
  Tape tape;
  const BoundParams bound = model.bind(tape, false, false);
  return build_objective(tape, model, bound, batch, {.lambda = 0.0}).l_ta.value().item();
}

double counterfactual_loss(const Model& model, std::span<const PromptEncoding> batch) {
  if (!model.config().temporal_enabled) {
    throw ConfigError("counterfactual loss requires temporal embeddings");
  }
  Tape tape;
  const BoundParams bound = model.bind(tape, false, false);
  return build_objective(tape, model, bound, batch, {.lambda = 1.0}).l_ct->value().item();
}

LossBreakdown combined_loss(const Model& model, std::span<const PromptEncoding> batch, double lambda) {
  Tape tape;
  const BoundParams bound = model.bind(tape, false, false);
  const ObjectiveGraph g =
      build_objective(tape, model, bound, batch, {.lambda = lambda, .with_probe = lambda > 0.0});
  LossBreakdown out;
  out.l_ta = g.l_ta.value().item();
  if (g.l_ct) {
    out.l_ct = g.l_ct->value().item();
  }
  out.total = g.total.value().item();
  out.ce_probe = g.ce_probe;
  return out;
}

double causal_effect_probe(const Model& model, std::span<const PromptEncoding> batch) {
  if (!model.config().temporal_enabled) {
    return 0.0;
  }
  Tape tape;
  const BoundParams bound = model.bind(tape, false, false);
  return build_objective(tape, model, bound, batch, {.lambda = 0.0, .with_probe = true}).ce_probe;
}

double reference_temporal_aware_loss(const Model& model, std::span<const PromptEncoding> batch) {
  if (batch.empty()) {
    throw UsageError("objective over an empty batch");
  }
  double total = 0.0;
  for (const auto& e : batch) {
    const Tensor logp = log_softmax_rows(model.forward(e, World::Factual));
    const std::size_t p = e.prompt_length();
    double ex = 0.0;
    for (std::size_t j = 0; j < e.target_token_ids.size(); ++j) {
      ex -= logp(p - 1 + j, static_cast<std::size_t>(e.target_token_ids[j]));
    }
    total += ex / static_cast<double>(e.target_token_ids.size());
  }
  return total / static_cast<double>(batch.size());
}

AdamW::AdamW(double lr, double beta1, double beta2, double eps, double weight_decay)
    : lr_(lr), beta1_(beta1), beta2_(beta2), eps_(eps), wd_(weight_decay) {}

void AdamW::step(std::span<Tensor* const> params, std::span<const Tensor> grads, const std::vector<bool>& decay) {
  if (params.size() != grads.size() || params.size() != decay.size()) {
    throw DimensionError("AdamW: parameter, gradient and decay lists differ in length");
  }
  if (m_.empty()) {
    for (const Tensor* p : params) {
      m_.push_back(Tensor::zeros(p->shape()));
      v_.push_back(Tensor::zeros(p->shape()));
    }
  }
  if (m_.size() != params.size()) {
    throw DimensionError("AdamW: parameter list changed between steps");
  }
  ++t_;
  const double c1 = 1.0 - std::pow(beta1_, static_cast<double>(t_));
  const double c2 = 1.0 - std::pow(beta2_, static_cast<double>(t_));
  for (std::size_t i = 0; i < params.size(); ++i) {
    Tensor& p = *params[i];
    const Tensor& g = grads[i];
    if (!g.same_shape(p)) {
      throw DimensionError("AdamW: gradient " + g.shape_string() + " for parameter " + p.shape_string());
    }
    double* m = m_[i].ptr();
    double* v = v_[i].ptr();
    double* w = p.ptr();
    const double* gr = g.ptr();
    const double wd = decay[i] ? wd_ : 0.0;
    for (std::size_t j = 0; j < p.size(); ++j) {
      m[j] = beta1_ * m[j] + (1.0 - beta1_) * gr[j];
      v[j] = beta2_ * v[j] + (1.0 - beta2_) * gr[j] * gr[j];
      const double mh = m[j] / c1;
      const double vh = v[j] / c2;
      w[j] -= lr_ * (mh / (std::sqrt(vh) + eps_) + wd * w[j]);
    }
  }
}

Model initial_model(ModelConfig config, const RecTask& task, std::uint64_t seed, Regime regime) {
  config.vocab_size = task.vocab.size();
  config.validate();
  ModelParams params = ModelParams::init(config, seed);
  std::optional<LoraAdapter> adapter;
  if (regime == Regime::FreezeLora) {
    adapter = LoraAdapter::init(config, derive_rng(seed, kAdapterPurpose).next_u64());
  }
  return Model(config, std::move(params), std::move(adapter));
}

namespace {

std::vector<PromptEncoding> encode_all(const RecTask& task, std::span<const Example> examples) {
  std::vector<PromptEncoding> out;
  out.reserve(examples.size());
  for (const Example& ex : examples) {
    out.push_back(task.encode(ex));
  }
  return out;
}

template <typename F>
double chunked_mean(std::span<const PromptEncoding> encodings, F&& f) {
  double total = 0.0;
  for (std::size_t i = 0; i < encodings.size(); i += kEvalChunk) {
    const auto chunk = encodings.subspan(i, std::min(kEvalChunk, encodings.size() - i));
    total += f(chunk) * static_cast<double>(chunk.size());
  }
  return encodings.empty() ? 0.0 : total / static_cast<double>(encodings.size());
}

struct Trainable {
  std::vector<Tensor*> tensors;
  std::vector<bool> decay;
  std::vector<std::size_t> var_index;  // into bound.base then bound.adapter
};

Trainable trainable_params(Model& model, bool train_base, bool train_adapter) {
  Trainable t;
  std::size_t idx = 0;
  for (auto& [name, tensor] : model.params().named()) {
    if (train_base) {
      t.tensors.push_back(tensor);
      t.decay.push_back(tensor->shape().size() == 2);
      t.var_index.push_back(idx);
    }
    ++idx;
  }
  if (model.adapter() && train_adapter) {
    for (auto& [name, tensor] : model.adapter()->named()) {
      t.tensors.push_back(tensor);
      t.decay.push_back(true);
      t.var_index.push_back(idx);
      ++idx;
    }
  }
  return t;
}

struct PhaseSpec {
  std::string phase;
  bool train_base = true;
  bool train_adapter = false;
  double lambda = 0.0;
  bool shuffle_windows = false;
  int epochs = 0;
  std::uint64_t purpose = kShufflePurpose;
};

}  // namespace

namespace {

TrainResult run_phase(Model model, const TrainData& data, const TrainConfig& config, const PhaseSpec& spec,
                      const EpochCallback& on_epoch) {
  const RecTask& task = *data.task;
  std::vector<Example> train_examples(data.train.begin(), data.train.end());
  const std::vector<PromptEncoding> base_encodings = encode_all(task, train_examples);
  const auto val_examples = head(data.validation, config.val_limit);
  const std::vector<PromptEncoding> val_encodings = encode_all(task, val_examples);

  AdamW opt(config.learning_rate, config.beta1, config.beta2, config.adam_eps, config.weight_decay);
  Trainable trainable = trainable_params(model, spec.train_base, spec.train_adapter);

  TrainResult result{model, {}, 0};
  double best_hr = -1.0;
  int stale = 0;
  std::vector<PromptEncoding> shuffled;
  for (int epoch = 1; epoch <= spec.epochs; ++epoch) {
    Pcg32 rng = derive_rng(config.seed, spec.purpose, static_cast<std::uint64_t>(epoch));
    std::vector<std::size_t> order(base_encodings.size());
    std::iota(order.begin(), order.end(), std::size_t{0});
    rng.shuffle(order);
    if (config.train_limit > 0 && order.size() > config.train_limit) {
      order.resize(config.train_limit);
    }
    const std::vector<PromptEncoding>* source = &base_encodings;
    if (spec.shuffle_windows) {
      shuffled.clear();
      for (const Example& ex : train_examples) {
        Example s = ex;
        rng.shuffle(s.window);
        shuffled.push_back(task.encode(s));
      }
      source = &shuffled;
    }

    EpochLog log;
    log.epoch = epoch;
    log.phase = spec.phase;
    double sum_ta = 0.0;
    double sum_ct = 0.0;
    double sum_total = 0.0;
    std::size_t steps = 0;
    std::vector<PromptEncoding> batch;
    for (std::size_t start = 0; start < order.size(); start += config.batch_size) {
      batch.clear();
      for (std::size_t i = start; i < std::min(order.size(), start + config.batch_size); ++i) {
        batch.push_back((*source)[order[i]]);
      }
      const std::size_t step = steps + 1;
      try {
        Tape tape;
        const BoundParams bound = model.bind(tape, spec.train_base, spec.train_adapter);
        const ObjectiveGraph g =
            build_objective(tape, model, bound, batch,
                            {.lambda = spec.lambda, .detach_counterfactual = config.detach_counterfactual});
        const double total = g.total.value().item();
        if (!std::isfinite(total)) {
          throw NonFiniteError("loss is " + std::to_string(total));
        }
        tape.backward(g.total);
        std::vector<Tensor> grads;
        grads.reserve(trainable.tensors.size());
        for (std::size_t idx : trainable.var_index) {
          const Var v = idx < bound.base.size() ? bound.base[idx] : bound.adapter[idx - bound.base.size()];
          grads.push_back(tape.grad(v));
        }
        opt.step(trainable.tensors, grads, trainable.decay);
        sum_ta += g.l_ta.value().item();
        if (g.l_ct) {
          sum_ct += g.l_ct->value().item();
        }
        sum_total += total;
      } catch (const NonFiniteError& e) {
        throw NonFiniteError("training diverged in " + spec.phase + " epoch " + std::to_string(epoch) + " step " +
                             std::to_string(step) + ": " + e.what());
      }
      ++steps;
    }
    if (steps > 0) {
      log.l_ta = sum_ta / static_cast<double>(steps);
      if (spec.lambda > 0.0) {
        log.l_ct = sum_ct / static_cast<double>(steps);
      }
      log.total = sum_total / static_cast<double>(steps);
    }
    log.val_l_ta = chunked_mean(val_encodings, [&](auto c) { return temporal_aware_loss(model, c); });
    log.ce_probe = chunked_mean(val_encodings, [&](auto c) { return causal_effect_probe(model, c); });
    log.val_hr5 = val_examples.empty() ? 0.0 : evaluate(model, task, val_examples).hr5;
    result.log.push_back(log);
    if (on_epoch) {
      on_epoch(log);
    }
    if (log.val_hr5 > best_hr) {
      best_hr = log.val_hr5;
      result.model = model;
      result.best_epoch = epoch;
      stale = 0;
    } else if (++stale >= config.patience) {
      break;
    }
  }
  return result;
}

}  // namespace

TrainResult train(Model initial, const TrainData& data, const TrainConfig& config, const EpochCallback& on_epoch) {
  config.validate();
  if (data.task == nullptr) {
    throw UsageError("train: no task");
  }
  if (data.validation.empty()) {
    throw UsageError("train: validation split is empty");
  }
  if (initial.config().vocab_size != data.task->vocab.size()) {
    throw ConfigError("train: model vocabulary " + std::to_string(initial.config().vocab_size) +
                      " does not match task vocabulary " + std::to_string(data.task->vocab.size()));
  }
  if (config.lambda > 0.0 && !initial.config().temporal_enabled) {
    throw ConfigError("train: lambda > 0 requires temporal embeddings");
  }
  std::vector<EpochLog> log;
  if (config.regime == Regime::FreezeLora) {
    if (!initial.adapter()) {
      throw ConfigError("train: freeze+lora regime needs a model with an adapter");
    }
    if (config.pretrain_epochs > 0) {
      PhaseSpec pre{"pretrain", true, false, 0.0, true, config.pretrain_epochs, kPretrainPurpose};
      TrainResult r = run_phase(std::move(initial), data, config, pre, on_epoch);
      initial = std::move(r.model);
      log = std::move(r.log);
    }
  }
  PhaseSpec main_phase{"train", config.regime == Regime::Scratch, config.regime == Regime::FreezeLora,
                       config.lambda, false, config.epochs, kShufflePurpose};
  TrainResult r = run_phase(std::move(initial), data, config, main_phase, on_epoch);
  log.insert(log.end(), r.log.begin(), r.log.end());
  r.log = std::move(log);
  return r;
}

}  // namespace cetrec
