#pragma once

#include <cstddef>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <unordered_map>
#include <utility>
#include <vector>

namespace cetrec {

struct Item {
  int item_id = 0;
  std::string title;
  int genre = 0;
  std::optional<int> franchise;
  std::optional<int> part;  // sequel index, 1-based

  bool operator==(const Item&) const = default;
};

/// Item universe with O(1) lookup by id.
class Catalog {
 public:
  Catalog() = default;
  explicit Catalog(std::vector<Item> items);

  [[nodiscard]] const std::vector<Item>& items() const { return items_; }
  [[nodiscard]] std::size_t size() const { return items_.size(); }
  [[nodiscard]] const Item& at(int item_id) const;
  [[nodiscard]] bool contains(int item_id) const { return index_.contains(item_id); }
  [[nodiscard]] std::vector<const Item*> lookup(std::span<const int> ids) const;

 private:
  std::vector<Item> items_;
  std::unordered_map<int, std::size_t> index_;
};

/// A user's chronological interaction list. `draw_time` is the step counter
/// of the final interaction and drives chronological splitting.
struct InteractionSequence {
  int user_id = 0;
  std::vector<int> items;
  int draw_time = 0;
  bool truncated = false;

  bool operator==(const InteractionSequence&) const = default;
};

/// Instruction template with a single history slot.
struct PromptTemplate {
  static constexpr std::string_view kHistorySlot = "<His_Seq>";

  std::string instruction;
  std::string input;  // must contain kHistorySlot exactly once
  std::string response_marker;
  std::string separator = ", ";

  /// The video-game tuning template.
  static PromptTemplate games();
};

struct CharSpan {
  std::size_t begin = 0;  // byte offsets, end exclusive
  std::size_t end = 0;
  bool operator==(const CharSpan&) const = default;
};

struct RenderedPrompt {
  std::string text;
  std::vector<CharSpan> item_spans;  // one per history item, in order
};

RenderedPrompt render_prompt(std::span<const Item* const> history, const PromptTemplate& tmpl);

/// Closed word-level vocabulary. Id 0 is the end-of-title terminator.
class Vocabulary {
 public:
  static constexpr int kEos = 0;
  static constexpr std::string_view kEosWord = "<eos>";

  Vocabulary();
  explicit Vocabulary(std::vector<std::string> words);

  /// Vocabulary covering the template and every catalog title.
  static Vocabulary build(const PromptTemplate& tmpl, const Catalog& catalog);

  [[nodiscard]] int id(std::string_view word) const;
  [[nodiscard]] bool contains(std::string_view word) const;
  [[nodiscard]] const std::string& word(int id) const;
  [[nodiscard]] std::size_t size() const { return words_.size(); }
  [[nodiscard]] const std::vector<std::string>& words() const { return words_; }

 private:
  void add(std::string_view word);

  std::vector<std::string> words_;
  std::unordered_map<std::string, int> ids_;
};

/// Splits on whitespace; each of , . : ; ! ? is a token of its own.
std::vector<std::pair<std::string_view, CharSpan>> split_words(std::string_view text);

struct TokenizedText {
  std::vector<int> ids;
  std::vector<CharSpan> spans;  // character span of each token
};

TokenizedText tokenize(std::string_view text, const Vocabulary& vocab);
std::string detokenize(std::span<const int> ids, const Vocabulary& vocab);
/// Token range [first, last) covering a character span.
std::pair<std::size_t, std::size_t> token_range(const TokenizedText& tokens, CharSpan span);

struct ItemSpan {
  std::size_t begin = 0;  // token range, end exclusive
  std::size_t end = 0;
  int ordinal = 0;        // 1..n over history items
  bool operator==(const ItemSpan&) const = default;
};

using TemporalIndices = std::vector<std::optional<int>>;

/// Tokenised instruction input x with its answer y.
struct PromptEncoding {
  std::vector<int> token_ids;        // prompt tokens, response marker included
  std::vector<int> token_positions;  // 0-based p_t for prompt tokens
  std::vector<ItemSpan> item_spans;
  TemporalIndices temporal_indices;  // per prompt token
  std::vector<int> target_token_ids; // title tokens of the target + <eos>

  [[nodiscard]] std::size_t prompt_length() const { return token_ids.size(); }
};

/// Index k (1-based) on every token of the k-th item span, absent elsewhere.
TemporalIndices assign_temporal_indices(const PromptEncoding& encoding);

/// Every present index collapsed onto the first item's index.
TemporalIndices counterfactual_indices(const TemporalIndices& factual);

/// Renders, tokenises and indexes one history; `target` may be null for
/// inference-time prompts.
PromptEncoding encode_example(std::span<const Item* const> history, const Item* target, const PromptTemplate& tmpl,
                              const Vocabulary& vocab);

PromptEncoding encode_example(const Catalog& catalog, std::span<const int> history, std::optional<int> target,
                              const PromptTemplate& tmpl, const Vocabulary& vocab);

/// Title tokens followed by <eos>.
std::vector<int> title_tokens(const Item& item, const Vocabulary& vocab);

}  // namespace cetrec
