#pragma once

#include <cmath>
#include <vector>

#include "cetrec/evaluation.hpp"
#include "cetrec/model.hpp"
#include "cetrec/training.hpp"

namespace cetrec::testing {

/// Ten hand-written titles; with the games template the vocabulary has
/// exactly 40 words.
inline Catalog tiny_catalog() {
  const char* titles[] = {"Nova Quest",   "Nova Quest II", "Nova Quest III", "Iron Drift",  "Iron Drift II",
                          "Silent Maze",  "Ember Harvest", "Pixel Voyage",   "Frost Mech",  "Royal Maze"};
  std::vector<Item> items;
  for (int i = 0; i < 10; ++i) {
    Item it;
    it.item_id = i;
    it.title = titles[i];
    it.genre = i % 3;
    items.push_back(it);
  }
  items[0].franchise = 0;
  items[0].part = 1;
  items[1].franchise = 0;
  items[1].part = 2;
  items[2].franchise = 0;
  items[2].part = 3;
  items[3].franchise = 1;
  items[3].part = 1;
  items[4].franchise = 1;
  items[4].part = 2;
  return Catalog(std::move(items));
}

inline RecTask tiny_task() { return RecTask::make(tiny_catalog()); }

inline ModelConfig tiny_config(PeMode mode = PeMode::RoPE, bool temporal = true) {
  ModelConfig c;
  c.n_layers = 1;
  c.d_model = 16;
  c.n_heads = 2;
  c.d_ff = 32;
  c.vocab_size = 40;
  c.max_position = 256;
  c.max_context = 128;
  c.pe_mode = mode;
  c.temporal_enabled = temporal;
  c.lora_rank = 2;
  c.lora_alpha = 4.0;
  return c;
}

inline Model tiny_model(PeMode mode = PeMode::RoPE, bool temporal = true, std::uint64_t seed = 3,
                        bool with_adapter = false) {
  const ModelConfig c = tiny_config(mode, temporal);
  std::optional<LoraAdapter> adapter;
  if (with_adapter) {
    adapter = LoraAdapter::init(c, seed + 100);
  }
  return Model(c, ModelParams::init(c, seed), adapter);
}

/// Random normal tensor of the given shape.
inline Tensor random_tensor(std::vector<std::size_t> shape, Pcg32& rng, double scale = 1.0) {
  Tensor t = Tensor::zeros(std::move(shape));
  for (double& x : t.data()) {
    x = scale * rng.normal();
  }
  return t;
}

inline std::vector<Example> tiny_examples() {
  return {
      {0, {0, 1}, 2, 2, 0},
      {1, {3, 5, 6}, 4, 3, 0},
      {2, {7}, 8, 1, 0},
      {3, {9, 0, 3, 5}, 1, 4, 0},
  };
}

inline double max_abs_diff(const Tensor& a, const Tensor& b) {
  double m = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    m = std::max(m, std::abs(a[i] - b[i]));
  }
  return m;
}

}  // namespace cetrec::testing
