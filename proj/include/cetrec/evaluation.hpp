#pragma once

#include <cstddef>
#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "cetrec/datagen.hpp"
#include "cetrec/encoding.hpp"
#include "cetrec/model.hpp"

namespace cetrec {

/// Catalog plus the prompt template and vocabulary derived from it.
struct RecTask {
  Catalog catalog;
  PromptTemplate tmpl;
  Vocabulary vocab;

  static RecTask make(Catalog catalog, PromptTemplate tmpl = PromptTemplate::games());
  [[nodiscard]] PromptEncoding encode(std::span<const int> window, std::optional<int> target) const;
  [[nodiscard]] PromptEncoding encode(const Example& example) const { return encode(example.window, example.target); }
};

struct RankedList {
  std::vector<int> items;      // best first
  std::vector<double> scores;  // aligned with items, unrounded
};

/// Items of the catalog not present in the window, in catalog order.
std::vector<int> candidate_set(const Catalog& catalog, std::span<const int> window);

/// Likelihood ranking: every candidate is scored by the mean log-probability
/// of its title tokens and <eos> appended after the prompt. Scores are
/// rounded to a 2^-30 grid before sorting so ranks do not depend on the
/// packing's floating-point summation order; ties go to the lower item_id.
RankedList rank_items(const Model& model, const RecTask& task, std::span<const int> window);

/// rank_items over many windows, several per packed forward pass.
std::vector<RankedList> rank_batch(const Model& model, const RecTask& task,
                                   std::span<const std::vector<int>> windows, std::size_t per_pass = 4);

/// Unrounded score of one candidate, computed from a plain forward pass.
double candidate_log_likelihood(const Model& model, const RecTask& task, std::span<const int> window, int item_id);

double quantize_score(double score);

/// 1-based rank of `target`; ProtocolError if absent.
std::size_t rank_of(const RankedList& ranked, int target);
int hr_at_k(const RankedList& ranked, int target, std::size_t k);
double ndcg_at_k(const RankedList& ranked, int target, std::size_t k);

struct MetricsReport {
  double hr5 = 0.0;
  double hr10 = 0.0;
  double ndcg5 = 0.0;
  double ndcg10 = 0.0;
  std::size_t n_examples = 0;
  std::string tag;
  std::uint64_t seed = 0;

  /// Throws InvariantError unless 0 <= NDCG@K <= HR@K <= 1 and HR@5 <= HR@10.
  void check() const;
  [[nodiscard]] double metric(std::string_view name) const;
};

inline constexpr std::string_view kMetricNames[] = {"hr5", "hr10", "ndcg5", "ndcg10"};

/// Mean metrics of pre-computed rankings.
MetricsReport aggregate(std::span<const RankedList> ranked, std::span<const Example> examples);

enum class InferenceMode { Rank, Generate };
std::string to_string(InferenceMode mode);
InferenceMode inference_mode_from_string(std::string_view s);

struct GenerationConfig {
  std::size_t beam_width = 5;
  std::size_t max_tokens = 8;
};

struct GeneratedTitle {
  std::vector<int> tokens;  // without <eos>
  std::string text;
  double score = 0.0;  // mean token log-probability
  bool truncated = false;
};

/// Beam search over title tokens; returns beam_width finished hypotheses,
/// best first.
std::vector<GeneratedTitle> generate_titles(const Model& model, const RecTask& task, std::span<const int> window,
                                            const GenerationConfig& config = {});

/// Levenshtein distance divided by the longer length (0 for two empty strings).
double normalized_edit_distance(std::string_view a, std::string_view b);

struct Grounding {
  int best = -1;
  int second = -1;
  double best_distance = 0.0;
  double second_distance = 0.0;
};

/// Nearest and second-nearest catalog titles, skipping `exclude`; ties go to
/// the lower item_id.
Grounding ground_title(std::string_view text, const Catalog& catalog, std::span<const int> exclude = {});

struct GroundedLists {
  std::vector<GeneratedTitle> generations;
  std::vector<int> top5;
  std::vector<int> top10;
  bool any_truncated = false;
};

/// Top-5 from each generation's best match in generation order (deduplicated,
/// backfilled from `ranking`); Top-10 appends the second-best matches in
/// generation order, again deduplicated and backfilled.
GroundedLists ground_generations(std::vector<GeneratedTitle> generations, const Catalog& catalog,
                                 std::span<const int> window, const RankedList& ranking);

GroundedLists generate_and_ground(const Model& model, const RecTask& task, std::span<const int> window,
                                  const GenerationConfig& config = {});

/// A grounded top-10 as a RankedList (the remaining candidates follow in
/// ranking order so every target has a rank).
RankedList grounded_ranking(const GroundedLists& lists, const RankedList& ranking);

struct EvalOptions {
  InferenceMode mode = InferenceMode::Rank;
  std::size_t limit = 0;  // 0 = all examples
  std::size_t per_pass = 4;
  GenerationConfig generation;
};

/// First `limit` examples in split order (all when limit is 0).
std::span<const Example> head(std::span<const Example> examples, std::size_t limit);

MetricsReport evaluate(const Model& model, const RecTask& task, std::span<const Example> examples,
                       const EvalOptions& options = {});

struct SensitivityEntry {
  std::string metric;
  double original = 0.0;
  double reversed = 0.0;
  std::optional<double> change_rate;  // absent when original == 0
};

struct SensitivityReport {
  std::vector<SensitivityEntry> entries;
  MetricsReport original;
  MetricsReport reversed;

  [[nodiscard]] const SensitivityEntry& entry(std::string_view metric) const;
  /// Mean change rate over the defined entries (nullopt if none).
  [[nodiscard]] std::optional<double> mean_change_rate() const;
};

SensitivityReport sensitivity_report(const MetricsReport& original, const MetricsReport& reversed);

/// Every window reversed, targets kept; metrics recomputed.
SensitivityReport sensitivity_probe(const Model& model, const RecTask& task, std::span<const Example> examples,
                                    const EvalOptions& options = {});

}  // namespace cetrec
