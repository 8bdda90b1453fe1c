#pragma once

#include <array>
#include <cstddef>
#include <cstdint>
#include <vector>

#include "cetrec/encoding.hpp"
#include "cetrec/rng.hpp"

namespace cetrec {

/// Synthetic catalog + behaviour parameters. Recency is counted in steps.
struct GeneratorConfig {
  int n_genres = 10;
  int franchises_per_genre = 5;
  int parts_per_franchise = 4;
  int standalone_per_genre = 10;
  int n_users = 2000;
  int steps_per_user = 30;
  double drift = 0.15;           // per-step probability the focus genre is redrawn
  int recency_window = 5;        // steps within which a franchise entry boosts its sequel
  double franchise_boost = 8.0;  // sampling-weight multiplier for that sequel
  int min_window = 3;
  int max_window = 10;
  std::array<int, 3> split_ratio{8, 1, 1};
  std::uint64_t seed = 7;

  void validate() const;
  [[nodiscard]] int catalog_size() const {
    return n_genres * (franchises_per_genre * parts_per_franchise + standalone_per_genre);
  }
  bool operator==(const GeneratorConfig&) const = default;
};

/// One (history window, next item) training or evaluation example.
struct Example {
  int user_id = 0;
  std::vector<int> window;
  int target = 0;
  int draw_time = 0;  // index of the target in the user's trajectory
  int start = 0;      // index of the first window item

  bool operator==(const Example&) const = default;
};

struct DatasetSplit {
  std::vector<Example> train;
  std::vector<Example> validation;
  std::vector<Example> test;
  std::array<int, 3> ratio{8, 1, 1};
};

Catalog generate_catalog(const GeneratorConfig& config);

/// Full trajectory of one user. Deterministic in (config.seed, user_id).
InteractionSequence simulate_user(const GeneratorConfig& config, const Catalog& catalog, int user_id);

/// Item ids whose sampling weight is boosted at the next step given the
/// consumed history (at most one: the sequel of the most recent franchise
/// entry inside the recency window).
std::vector<int> boosted_sequels(const GeneratorConfig& config, const Catalog& catalog, std::span<const int> history);

/// Sliding windows: one per target index t >= min_window, of length drawn
/// uniformly from [min_window, min(max_window, t)].
std::vector<Example> window_examples(const InteractionSequence& trajectory, int min_window, int max_window,
                                     Pcg32& rng);

/// Stable sort by (draw_time, user_id, start) then contiguous ratio split.
DatasetSplit chronological_split(std::vector<Example> examples, std::array<int, 3> ratio = {8, 1, 1});

struct Dataset {
  Catalog catalog;
  std::vector<InteractionSequence> sequences;
  DatasetSplit split;
};

Dataset generate_dataset(const GeneratorConfig& config);

struct OrderCertificate {
  double accuracy_last = 0.0;    // bigram oracle keyed on the true last item
  double accuracy_random = 0.0;  // same oracle keyed on a random history item
  std::size_t n_test = 0;
  [[nodiscard]] double gap_points() const { return 100.0 * (accuracy_last - accuracy_random); }
};

/// Bigram transition counts from the train split, top-1 accuracy on test.
OrderCertificate order_sensitivity_certificate(const DatasetSplit& split, const Catalog& catalog, std::uint64_t seed);

}  // namespace cetrec
