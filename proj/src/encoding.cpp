#include "cetrec/encoding.hpp"

#include <algorithm>

#include "cetrec/errors.hpp"

namespace cetrec {

namespace {

constexpr std::string_view kPunctuation = ",.:;!?";

bool is_space(char c) { return c == ' ' || c == '\t' || c == '\n' || c == '\r'; }
bool is_punct(char c) { return kPunctuation.find(c) != std::string_view::npos; }

}  // namespace

// ---------------------------------------------------------------------------
// Catalog

Catalog::Catalog(std::vector<Item> items) : items_(std::move(items)) {
  for (std::size_t i = 0; i < items_.size(); ++i) {
    if (items_[i].title.empty()) {
      throw InvariantError("item " + std::to_string(items_[i].item_id) + " has an empty title");
    }
    if (!index_.emplace(items_[i].item_id, i).second) {
      throw InvariantError("duplicate item_id " + std::to_string(items_[i].item_id));
    }
  }
}

const Item& Catalog::at(int item_id) const {
  const auto it = index_.find(item_id);
  if (it == index_.end()) {
    throw IndexError("unknown item_id " + std::to_string(item_id));
  }
  return items_[it->second];
}

std::vector<const Item*> Catalog::lookup(std::span<const int> ids) const {
  std::vector<const Item*> out;
  out.reserve(ids.size());
  for (int id : ids) {
    out.push_back(&at(id));
  }
  return out;
}

// ---------------------------------------------------------------------------
// Template and rendering

PromptTemplate PromptTemplate::games() {
  PromptTemplate t;
  t.instruction =
      "Given a list of video games the user has played before, please recommend a new video game that the user "
      "likes to the user.";
  t.input = "The user has played the following video games before: <His_Seq>";
  t.response_marker = "Output:";
  return t;
}

RenderedPrompt render_prompt(std::span<const Item* const> history, const PromptTemplate& tmpl) {
  if (history.empty()) {
    throw UsageError("render_prompt: history is empty");
  }
  const auto slot = tmpl.input.find(PromptTemplate::kHistorySlot);
  if (slot == std::string::npos ||
      tmpl.input.find(PromptTemplate::kHistorySlot, slot + 1) != std::string::npos) {
    throw ConfigError("prompt template input must contain exactly one " + std::string(PromptTemplate::kHistorySlot));
  }
  RenderedPrompt out;
  out.text = tmpl.instruction;
  if (!out.text.empty()) {
    out.text += ' ';
  }
  out.text += tmpl.input.substr(0, slot);
  for (std::size_t i = 0; i < history.size(); ++i) {
    const std::string& title = history[i]->title;
    if (title.empty() || std::any_of(title.begin(), title.end(), is_punct) ||
        title.find(PromptTemplate::kHistorySlot) != std::string::npos) {
      throw UsageError("render_prompt: title '" + title + "' contains a template delimiter");
    }
    if (i > 0) {
      out.text += tmpl.separator;
    }
    const std::size_t begin = out.text.size();
    out.text += title;
    out.item_spans.push_back({begin, out.text.size()});
  }
  out.text += tmpl.input.substr(slot + PromptTemplate::kHistorySlot.size());
  return out;
}

// ---------------------------------------------------------------------------
// Vocabulary and tokenizer

Vocabulary::Vocabulary() { add(kEosWord); }

Vocabulary::Vocabulary(std::vector<std::string> words) {
  if (words.empty() || words.front() != kEosWord) {
    throw VocabularyError("vocabulary must start with " + std::string(kEosWord));
  }
  for (const auto& w : words) {
    if (ids_.contains(w)) {
      throw VocabularyError("duplicate vocabulary word '" + w + "'");
    }
    add(w);
  }
}

void Vocabulary::add(std::string_view word) {
  if (ids_.contains(std::string(word))) {
    return;
  }
  ids_.emplace(std::string(word), static_cast<int>(words_.size()));
  words_.emplace_back(word);
}

Vocabulary Vocabulary::build(const PromptTemplate& tmpl, const Catalog& catalog) {
  Vocabulary v;
  for (const std::string* text : {&tmpl.instruction, &tmpl.input, &tmpl.response_marker, &tmpl.separator}) {
    std::string cleaned = *text;
    if (const auto slot = cleaned.find(PromptTemplate::kHistorySlot); slot != std::string::npos) {
      cleaned.replace(slot, PromptTemplate::kHistorySlot.size(), " ");
    }
    for (const auto& [word, span] : split_words(cleaned)) {
      v.add(word);
    }
  }
  for (const Item& item : catalog.items()) {
    for (const auto& [word, span] : split_words(item.title)) {
      v.add(word);
    }
  }
  return v;
}

int Vocabulary::id(std::string_view word) const {
  const auto it = ids_.find(std::string(word));
  if (it == ids_.end()) {
    throw VocabularyError("out-of-vocabulary word '" + std::string(word) + "'");
  }
  return it->second;
}

bool Vocabulary::contains(std::string_view word) const { return ids_.contains(std::string(word)); }

const std::string& Vocabulary::word(int id) const {
  if (id < 0 || static_cast<std::size_t>(id) >= words_.size()) {
    throw IndexError("token id " + std::to_string(id) + " outside vocabulary of " + std::to_string(words_.size()));
  }
  return words_[static_cast<std::size_t>(id)];
}

std::vector<std::pair<std::string_view, CharSpan>> split_words(std::string_view text) {
  std::vector<std::pair<std::string_view, CharSpan>> out;
  std::size_t i = 0;
  while (i < text.size()) {
    if (is_space(text[i])) {
      ++i;
      continue;
    }
    if (is_punct(text[i])) {
      out.emplace_back(text.substr(i, 1), CharSpan{i, i + 1});
      ++i;
      continue;
    }
    std::size_t j = i;
    while (j < text.size() && !is_space(text[j]) && !is_punct(text[j])) {
      ++j;
    }
    out.emplace_back(text.substr(i, j - i), CharSpan{i, j});
    i = j;
  }
  return out;
}

TokenizedText tokenize(std::string_view text, const Vocabulary& vocab) {
  TokenizedText out;
  for (const auto& [word, span] : split_words(text)) {
    out.ids.push_back(vocab.id(word));
    out.spans.push_back(span);
  }
  return out;
}

std::string detokenize(std::span<const int> ids, const Vocabulary& vocab) {
  std::string out;
  for (int id : ids) {
    const std::string& w = vocab.word(id);
    const bool punct = w.size() == 1 && is_punct(w[0]);
    if (!out.empty() && !punct) {
      out += ' ';
    }
    out += w;
  }
  return out;
}

std::pair<std::size_t, std::size_t> token_range(const TokenizedText& tokens, CharSpan span) {
  std::size_t first = tokens.spans.size();
  std::size_t last = 0;
  for (std::size_t t = 0; t < tokens.spans.size(); ++t) {
    const CharSpan& s = tokens.spans[t];
    if (s.begin >= span.begin && s.end <= span.end) {
      first = std::min(first, t);
      last = std::max(last, t + 1);
    }
  }
  if (first >= last) {
    throw InvariantError("character span [" + std::to_string(span.begin) + ", " + std::to_string(span.end) +
                         ") covers no token");
  }
  return {first, last};
}

// ---------------------------------------------------------------------------
// Encoding

TemporalIndices assign_temporal_indices(const PromptEncoding& encoding) {
  TemporalIndices out(encoding.token_ids.size());
  std::size_t prev_end = 0;
  int prev_ordinal = 0;
  for (const ItemSpan& span : encoding.item_spans) {
    if (span.begin >= span.end || span.end > out.size()) {
      throw InvariantError("item span [" + std::to_string(span.begin) + ", " + std::to_string(span.end) +
                           ") is empty or out of range");
    }
    if (span.begin < prev_end) {
      throw InvariantError("item spans overlap or are out of order at token " + std::to_string(span.begin));
    }
    if (span.ordinal != prev_ordinal + 1) {
      throw InvariantError("item ordinals must run 1..n, got " + std::to_string(span.ordinal) + " after " +
                           std::to_string(prev_ordinal));
    }
    for (std::size_t t = span.begin; t < span.end; ++t) {
      out[t] = span.ordinal;
    }
    prev_end = span.end;
    prev_ordinal = span.ordinal;
  }
  return out;
}

TemporalIndices counterfactual_indices(const TemporalIndices& factual) {
  TemporalIndices out(factual.size());
  for (std::size_t t = 0; t < factual.size(); ++t) {
    if (factual[t].has_value()) {
      out[t] = 1;
    }
  }
  return out;
}

std::vector<int> title_tokens(const Item& item, const Vocabulary& vocab) {
  auto ids = tokenize(item.title, vocab).ids;
  ids.push_back(Vocabulary::kEos);
  return ids;
}

PromptEncoding encode_example(std::span<const Item* const> history, const Item* target, const PromptTemplate& tmpl,
                              const Vocabulary& vocab) {
  const RenderedPrompt rendered = render_prompt(history, tmpl);
  const TokenizedText tokens = tokenize(rendered.text, vocab);
  PromptEncoding enc;
  enc.token_ids = tokens.ids;
  for (std::size_t i = 0; i < rendered.item_spans.size(); ++i) {
    const auto [first, last] = token_range(tokens, rendered.item_spans[i]);
    enc.item_spans.push_back({first, last, static_cast<int>(i + 1)});
  }
  const TokenizedText marker = tokenize(tmpl.response_marker, vocab);
  enc.token_ids.insert(enc.token_ids.end(), marker.ids.begin(), marker.ids.end());
  enc.token_positions.resize(enc.token_ids.size());
  for (std::size_t t = 0; t < enc.token_positions.size(); ++t) {
    enc.token_positions[t] = static_cast<int>(t);
  }
  enc.temporal_indices = assign_temporal_indices(enc);
  if (target != nullptr) {
    enc.target_token_ids = title_tokens(*target, vocab);
  }
  return enc;
}

PromptEncoding encode_example(const Catalog& catalog, std::span<const int> history, std::optional<int> target,
                              const PromptTemplate& tmpl, const Vocabulary& vocab) {
  const auto items = catalog.lookup(history);
  const Item* t = target.has_value() ? &catalog.at(*target) : nullptr;
  return encode_example(items, t, tmpl, vocab);
}

}  // namespace cetrec
