#include <gtest/gtest.h>

#include <cmath>

#include "cetrec/errors.hpp"
#include "cetrec/training.hpp"
#include "support.hpp"

using namespace cetrec;
using namespace cetrec::testing;

namespace {

std::vector<PromptEncoding> encode_all(const RecTask& task, const std::vector<Example>& examples) {
  std::vector<PromptEncoding> out;
  for (const Example& e : examples) {
    out.push_back(task.encode(e));
  }
  return out;
}

// Independent L_CT: per example, per target token, CE of softmax(z_f - z_cf).
double oracle_counterfactual_loss(const Model& m, const std::vector<PromptEncoding>& batch) {
  double total = 0.0;
  for (const PromptEncoding& e : batch) {
    const Tensor f = m.forward(e, World::Factual);
    const Tensor cf = m.forward(e, World::Counterfactual);
    double ex = 0.0;
    for (std::size_t j = 0; j < e.target_token_ids.size(); ++j) {
      const std::size_t r = e.prompt_length() - 1 + j;
      std::vector<long double> d(f.cols());
      long double mx = -1e300L;
      for (std::size_t c = 0; c < f.cols(); ++c) {
        d[c] = static_cast<long double>(f(r, c)) - cf(r, c);
        mx = std::max(mx, d[c]);
      }
      long double z = 0.0L;
      for (long double x : d) {
        z += std::exp(x - mx);
      }
      ex += static_cast<double>(mx + std::log(z) - d[static_cast<std::size_t>(e.target_token_ids[j])]);
    }
    total += ex / static_cast<double>(e.target_token_ids.size());
  }
  return total / static_cast<double>(batch.size());
}

std::vector<Tensor> flatten(const Model& m) {
  std::vector<Tensor> out;
  for (const auto& [name, t] : m.params().named()) {
    out.push_back(*t);
  }
  if (m.adapter()) {
    for (const auto& [name, t] : m.adapter()->named()) {
      out.push_back(*t);
    }
  }
  return out;
}

TrainConfig tiny_train_config(double lambda, int epochs) {
  TrainConfig c;
  c.lambda = lambda;
  c.epochs = epochs;
  c.learning_rate = 1e-2;
  c.batch_size = 2;
  c.patience = 100;
  return c;
}

}  // namespace

TEST(TrainConfig, Validation) {
  TrainConfig c;
  EXPECT_NO_THROW(c.validate());
  c.lambda = -0.1;
  EXPECT_THROW(c.validate(), ConfigError);
  c = {};
  c.batch_size = 0;
  EXPECT_THROW(c.validate(), ConfigError);
  c = {};
  c.epochs = -1;
  EXPECT_THROW(c.validate(), ConfigError);
  EXPECT_EQ(regime_from_string("freeze+lora"), Regime::FreezeLora);
  EXPECT_EQ(to_string(Regime::Scratch), "scratch");
  EXPECT_THROW(regime_from_string("lora"), ConfigError);
}

TEST(Objective, LambdaZeroIsExactlyTemporalAware) {
  const RecTask task = tiny_task();
  const Model m = tiny_model();
  const auto batch = encode_all(task, tiny_examples());
  const LossBreakdown b = combined_loss(m, batch, 0.0);
  EXPECT_FALSE(b.l_ct.has_value());
  EXPECT_EQ(b.total, b.l_ta);
  EXPECT_EQ(b.l_ta, temporal_aware_loss(m, batch));
}

TEST(Objective, Decomposition) {
  const RecTask task = tiny_task();
  const auto batch = encode_all(task, tiny_examples());
  for (PeMode mode : {PeMode::SinPE, PeMode::RoPE}) {
    const Model m = tiny_model(mode);
    for (double lambda : kLambdaGrid) {
      const LossBreakdown b = combined_loss(m, batch, lambda);
      ASSERT_TRUE(b.l_ct.has_value());
      EXPECT_NEAR(b.total - lambda * *b.l_ct - b.l_ta, 0.0, 1e-12);
      EXPECT_GE(*b.l_ct, 0.0);
    }
  }
}

TEST(Objective, TemporalAwareMatchesPerTokenOracle) {
  const RecTask task = tiny_task();
  const auto batch = encode_all(task, tiny_examples());
  for (PeMode mode : {PeMode::SinPE, PeMode::RoPE}) {
    const Model m = tiny_model(mode);
    EXPECT_NEAR(temporal_aware_loss(m, batch), reference_temporal_aware_loss(m, batch), 1e-12);
  }
}

TEST(Objective, CounterfactualMatchesOracle) {
  const RecTask task = tiny_task();
  const auto batch = encode_all(task, tiny_examples());
  for (PeMode mode : {PeMode::SinPE, PeMode::RoPE}) {
    const Model m = tiny_model(mode);
    EXPECT_NEAR(counterfactual_loss(m, batch), oracle_counterfactual_loss(m, batch), 1e-12);
  }
}

TEST(Objective, UniformModelGivesLogV) {
  const RecTask task = tiny_task();
  ModelParams p = ModelParams::init(tiny_config(), 1);
  for (double& x : p.output_head.data()) {
    x = 0.0;
  }
  const Model m(tiny_config(), p);
  EXPECT_NEAR(temporal_aware_loss(m, encode_all(task, tiny_examples())), std::log(40.0), 1e-12);
}

TEST(Objective, SingleItemHistoriesGiveLogV) {
  const RecTask task = tiny_task();
  std::vector<PromptEncoding> batch;
  for (int i = 0; i < 10; ++i) {
    batch.push_back(task.encode(std::vector<int>{i}, (i + 3) % 10));
  }
  for (PeMode mode : {PeMode::SinPE, PeMode::RoPE}) {
    const Model m = tiny_model(mode);
    EXPECT_NEAR(counterfactual_loss(m, batch), std::log(40.0), 1e-9);
    EXPECT_EQ(causal_effect_probe(m, batch), 0.0);
  }
}

TEST(Objective, SelfDifferenceGivesLogV) {
  const RecTask task = tiny_task();
  const auto batch = encode_all(task, tiny_examples());
  const Model m = tiny_model();
  Tape tape;
  const BoundParams b = m.bind(tape, false, false);
  ObjectiveOptions o;
  o.lambda = 1.0;
  o.counterfactual_is_factual = true;
  const ObjectiveGraph g = build_objective(tape, m, b, batch, o);
  ASSERT_TRUE(g.l_ct.has_value());
  EXPECT_NEAR(g.l_ct->value().item(), std::log(40.0), 1e-12);
}

TEST(Objective, TemporalDisabled) {
  const RecTask task = tiny_task();
  const auto batch = encode_all(task, tiny_examples());
  const Model m = tiny_model(PeMode::RoPE, false);
  EXPECT_THROW(counterfactual_loss(m, batch), ConfigError);
  EXPECT_THROW(combined_loss(m, batch, 1.0), ConfigError);
  EXPECT_EQ(causal_effect_probe(m, batch), 0.0);
  EXPECT_NO_THROW(combined_loss(m, batch, 0.0));
}

TEST(Objective, EmptyBatch) {
  const Model m = tiny_model();
  EXPECT_THROW(temporal_aware_loss(m, {}), UsageError);
  EXPECT_THROW(combined_loss(m, {}, 1.0), UsageError);
}

TEST(Objective, ProbeIsPositiveForLongHistories) {
  const RecTask task = tiny_task();
  const auto batch = encode_all(task, tiny_examples());
  const double p = causal_effect_probe(tiny_model(), batch);
  EXPECT_GT(p, 0.0);
  EXPECT_LE(p, 1.0);
}

TEST(Objective, FactualPartIsUnaffectedByLambda) {
  const RecTask task = tiny_task();
  const auto batch = encode_all(task, tiny_examples());
  const Model m = tiny_model();
  EXPECT_NEAR(combined_loss(m, batch, 1.0).l_ta, combined_loss(m, batch, 0.0).l_ta, 1e-12);
}

TEST(Objective, GradientOfCombinedObjective) {
  const RecTask task = tiny_task();
  const auto batch = encode_all(task, tiny_examples());
  for (PeMode mode : {PeMode::SinPE, PeMode::RoPE}) {
    const Model m = tiny_model(mode, true, 7);
    const std::size_t nb = m.params().named().size();
    const GradCheckResult r = grad_check(
        [&](Tape& tape, std::span<const Var> p) {
          ObjectiveOptions o;
          o.lambda = 0.7;
          return build_objective(tape, m, m.bind_vars(p.first(nb), p.subspan(nb)), batch, o).total;
        },
        flatten(m));
    EXPECT_LT(r.max_rel_error, 1e-4) << to_string(mode) << " param " << r.param_index << " coord " << r.coord_index;
  }
}

TEST(Objective, GradientWithAdapter) {
  const RecTask task = tiny_task();
  const auto batch = encode_all(task, tiny_examples());
  Model m = tiny_model(PeMode::RoPE, true, 8, true);
  Pcg32 rng(1);
  for (auto& [name, t] : m.adapter()->named()) {
    for (double& x : t->data()) {
      x = 0.1 * rng.normal();
    }
  }
  const std::size_t nb = m.params().named().size();
  const GradCheckResult r = grad_check(
      [&](Tape& tape, std::span<const Var> p) {
        return build_objective(tape, m, m.bind_vars(p.first(nb), p.subspan(nb)), batch, {}).total;
      },
      flatten(m));
  EXPECT_LT(r.max_rel_error, 1e-4);
}

TEST(AdamW, MatchesHandArithmetic) {
  AdamW opt(0.1, 0.9, 0.999, 1e-8, 0.01);
  Tensor w = Tensor::matrix({{1.0, -2.0}});
  Tensor bias = Tensor::matrix({{0.5}});
  std::vector<Tensor*> params{&w, &bias};
  const std::vector<Tensor> g1{Tensor::matrix({{0.5, 0.1}}), Tensor::matrix({{-0.2}})};
  opt.step(params, g1, {true, false});
  // step 1: bias-corrected moments equal g and g^2, so the step is lr * sign(g)
  EXPECT_NEAR(w[0], 1.0 - 0.1 * (0.5 / (0.5 + 1e-8) + 0.01 * 1.0), 1e-15);
  EXPECT_NEAR(w[1], -2.0 - 0.1 * (0.1 / (0.1 + 1e-8) + 0.01 * -2.0), 1e-15);
  EXPECT_NEAR(bias[0], 0.5 + 0.1 * (0.2 / (0.2 + 1e-8)), 1e-15);

  const double w0 = w[0];
  const std::vector<Tensor> g2{Tensor::matrix({{-0.3, 0.0}}), Tensor::matrix({{0.0}})};
  opt.step(params, g2, {true, false});
  const double m = 0.9 * 0.05 + 0.1 * -0.3;
  const double v = 0.999 * 0.001 * 0.25 + 0.001 * 0.09;
  const double mh = m / (1 - 0.81), vh = v / (1 - 0.999 * 0.999);
  EXPECT_NEAR(w[0], w0 - 0.1 * (mh / (std::sqrt(vh) + 1e-8) + 0.01 * w0), 1e-14);
  EXPECT_EQ(opt.steps(), 2);
}

TEST(Train, ZeroEpochsReturnsInitialModel) {
  const RecTask task = tiny_task();
  const auto ex = tiny_examples();
  const Model init = tiny_model();
  const TrainResult r = train(init, {&task, ex, ex}, tiny_train_config(1.0, 0));
  EXPECT_EQ(r.model.params().checksum(), init.params().checksum());
  EXPECT_TRUE(r.log.empty());
}

TEST(Train, SameSeedIsBitIdentical) {
  const RecTask task = tiny_task();
  const auto ex = tiny_examples();
  const TrainConfig c = tiny_train_config(1.0, 2);
  const TrainResult a = train(tiny_model(), {&task, ex, ex}, c);
  const TrainResult b = train(tiny_model(), {&task, ex, ex}, c);
  EXPECT_EQ(a.model.params().checksum(), b.model.params().checksum());
  ASSERT_EQ(a.log.size(), b.log.size());
  for (std::size_t i = 0; i < a.log.size(); ++i) {
    EXPECT_EQ(a.log[i].total, b.log[i].total);
    EXPECT_EQ(a.log[i].val_hr5, b.log[i].val_hr5);
    EXPECT_EQ(a.log[i].ce_probe, b.log[i].ce_probe);
  }
  EXPECT_NE(a.model.params().checksum(), tiny_model().params().checksum());
}

TEST(Train, LogDecompositionAndLearning) {
  const RecTask task = tiny_task();
  const auto ex = tiny_examples();
  const double lambda = 0.5;
  const TrainResult r = train(tiny_model(), {&task, ex, ex}, tiny_train_config(lambda, 12));
  ASSERT_EQ(r.log.size(), 12u);
  for (const EpochLog& l : r.log) {
    ASSERT_TRUE(l.l_ct.has_value());
    EXPECT_NEAR(l.total - lambda * *l.l_ct - l.l_ta, 0.0, 1e-12);
  }
  EXPECT_LE(r.log[static_cast<std::size_t>(r.best_epoch) - 1].val_l_ta, r.log.front().val_l_ta);
  EXPECT_LT(r.log.back().val_l_ta, r.log.front().val_l_ta);
  // after fitting these windows the order-attributable logits point at the targets
  const auto batch = encode_all(task, {ex[0], ex[1], ex[3]});
  EXPECT_LT(counterfactual_loss(r.model, batch), std::log(40.0));
}

TEST(Train, FreezeLoraKeepsBaseChecksum) {
  const RecTask task = tiny_task();
  const auto ex = tiny_examples();
  TrainConfig c = tiny_train_config(1.0, 3);
  c.regime = Regime::FreezeLora;
  c.pretrain_epochs = 0;
  const Model init = tiny_model(PeMode::RoPE, true, 3, true);
  const TrainResult r = train(init, {&task, ex, ex}, c);
  EXPECT_EQ(r.model.params().checksum(), init.params().checksum());
  double moved = 0.0;
  const auto before = init.adapter()->named();
  const auto after = r.model.adapter()->named();
  for (std::size_t i = 0; i < before.size(); ++i) {
    moved += max_abs_diff(*before[i].second, *after[i].second);
  }
  EXPECT_GT(moved, 0.0);
}

TEST(Train, FreezeLoraPretrainPhaseIsLogged) {
  const RecTask task = tiny_task();
  const auto ex = tiny_examples();
  TrainConfig c = tiny_train_config(1.0, 1);
  c.regime = Regime::FreezeLora;
  c.pretrain_epochs = 2;
  const TrainResult r = train(initial_model(tiny_config(), task, 3, Regime::FreezeLora), {&task, ex, ex}, c);
  ASSERT_EQ(r.log.size(), 3u);
  EXPECT_EQ(r.log[0].phase, "pretrain");
  EXPECT_FALSE(r.log[0].l_ct.has_value());
  EXPECT_EQ(r.log[2].phase, "train");
}

TEST(Train, InitialModelMatchesTask) {
  const RecTask task = tiny_task();
  ModelConfig c = tiny_config();
  c.vocab_size = 0;
  const Model m = initial_model(c, task, 1, Regime::Scratch);
  EXPECT_EQ(m.config().vocab_size, task.vocab.size());
  EXPECT_FALSE(m.adapter().has_value());
  EXPECT_TRUE(initial_model(c, task, 1, Regime::FreezeLora).adapter().has_value());
}
