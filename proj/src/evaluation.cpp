#include "cetrec/evaluation.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <map>
#include <numeric>
#include <string>
#include <unordered_set>

#include "cetrec/errors.hpp"

namespace cetrec {

RecTask RecTask::make(Catalog catalog, PromptTemplate tmpl) {
  RecTask task;
  task.vocab = Vocabulary::build(tmpl, catalog);
  task.catalog = std::move(catalog);
  task.tmpl = std::move(tmpl);
  return task;
}

PromptEncoding RecTask::encode(std::span<const int> window, std::optional<int> target) const {
  return encode_example(catalog, window, target, tmpl, vocab);
}

std::vector<int> candidate_set(const Catalog& catalog, std::span<const int> window) {
  const std::unordered_set<int> seen(window.begin(), window.end());
  std::vector<int> out;
  out.reserve(catalog.size());
  for (const Item& item : catalog.items()) {
    if (!seen.contains(item.item_id)) {
      out.push_back(item.item_id);
    }
  }
  return out;
}

double quantize_score(double score) {
  constexpr double kGrid = 1073741824.0;  // 2^30
  return std::round(score * kGrid) / kGrid;
}

namespace {

/// Prefix tree over title token sequences. Node 0 is the root (the prompt's
/// last row); every other node is one title token.
struct TitleTrie {
  std::vector<int> parent;
  std::vector<int> token;
  std::vector<int> depth;
  std::vector<std::vector<int>> paths;    // per catalog position: node of each title token
  std::vector<std::vector<int>> tokens;   // per catalog position: title tokens (no eos)

  explicit TitleTrie(const RecTask& task) {
    parent.push_back(-1);
    token.push_back(-1);
    depth.push_back(0);
    std::map<std::pair<int, int>, int> children;
    for (const Item& item : task.catalog.items()) {
      std::vector<int> toks = title_tokens(item, task.vocab);
      toks.pop_back();  // <eos>
      std::vector<int> path;
      int node = 0;
      for (int tok : toks) {
        auto [it, inserted] = children.try_emplace({node, tok}, static_cast<int>(parent.size()));
        if (inserted) {
          parent.push_back(node);
          token.push_back(tok);
          depth.push_back(depth[static_cast<std::size_t>(node)] + 1);
        }
        node = it->second;
        path.push_back(node);
      }
      paths.push_back(std::move(path));
      tokens.push_back(std::move(toks));
    }
  }
  [[nodiscard]] std::size_t nodes() const { return parent.size(); }
};

RankedList sort_candidates(const Catalog& catalog, std::span<const int> window, const std::vector<double>& scores) {
  const std::unordered_set<int> seen(window.begin(), window.end());
  struct Scored {
    double key;
    double score;
    int id;
  };
  std::vector<Scored> scored;
  for (std::size_t i = 0; i < catalog.items().size(); ++i) {
    const int id = catalog.items()[i].item_id;
    if (!seen.contains(id)) {
      scored.push_back({quantize_score(scores[i]), scores[i], id});
    }
  }
  if (scored.empty()) {
    throw UsageError("rank_items: candidate set is empty");
  }
  std::sort(scored.begin(), scored.end(),
            [](const Scored& a, const Scored& b) { return a.key != b.key ? a.key > b.key : a.id < b.id; });
  RankedList out;
  for (const Scored& s : scored) {
    out.items.push_back(s.id);
    out.scores.push_back(s.score);
  }
  return out;
}

}  // namespace

std::vector<RankedList> rank_batch(const Model& model, const RecTask& task,
                                   std::span<const std::vector<int>> windows, std::size_t per_pass) {
  const TitleTrie trie(task);
  const std::size_t n_items = task.catalog.size();
  per_pass = std::max<std::size_t>(per_pass, 1);
  std::vector<RankedList> out;
  out.reserve(windows.size());
  for (std::size_t begin = 0; begin < windows.size(); begin += per_pass) {
    const std::size_t end = std::min(windows.size(), begin + per_pass);
    std::vector<PromptEncoding> encodings;
    for (std::size_t i = begin; i < end; ++i) {
      encodings.push_back(task.encode(windows[i], std::nullopt));
    }
    std::vector<SequenceRequest> requests;
    for (const auto& e : encodings) {
      requests.push_back({&e, World::Factual});
    }
    const PackedBatch prompts = pack_teacher_forced(requests, true);
    PackBuilder builder(prompts.input);
    // node_rows[i][n]: packed row of trie node n for example i
    std::vector<std::vector<int>> node_rows(encodings.size());
    for (std::size_t i = 0; i < encodings.size(); ++i) {
      const int last = prompts.last_prompt_rows[i];
      const int last_pos = encodings[i].token_positions.back();
      auto& rows = node_rows[i];
      rows.resize(trie.nodes());
      rows[0] = last;
      for (std::size_t n = 1; n < trie.nodes(); ++n) {
        rows[n] = builder.append_row(rows[static_cast<std::size_t>(trie.parent[n])], trie.token[n],
                                     last_pos + trie.depth[n], std::nullopt);
      }
    }
    const PackedInput input = builder.finish();
    Tape tape;
    const BoundParams bound = model.bind(tape, false, false);
    const Var h = model.hidden(tape, bound, input);
    std::vector<int> rows;
    for (const auto& r : node_rows) {
      rows.insert(rows.end(), r.begin(), r.end());
    }
    const Tensor logp = log_softmax_rows(model.logits(bound, h, rows).value());
    const std::size_t nodes = trie.nodes();
    for (std::size_t i = 0; i < encodings.size(); ++i) {
      const std::size_t base = i * nodes;
      std::vector<double> scores(n_items);
      for (std::size_t c = 0; c < n_items; ++c) {
        const auto& path = trie.paths[c];
        const auto& toks = trie.tokens[c];
        double total = 0.0;
        std::size_t prev = 0;
        for (std::size_t j = 0; j < toks.size(); ++j) {
          total += logp(base + prev, static_cast<std::size_t>(toks[j]));
          prev = static_cast<std::size_t>(path[j]);
        }
        total += logp(base + prev, Vocabulary::kEos);
        scores[c] = total / static_cast<double>(toks.size() + 1);
      }
      out.push_back(sort_candidates(task.catalog, windows[begin + i], scores));
    }
  }
  return out;
}

RankedList rank_items(const Model& model, const RecTask& task, std::span<const int> window) {
  const std::vector<std::vector<int>> one{std::vector<int>(window.begin(), window.end())};
  return std::move(rank_batch(model, task, one, 1).front());
}

double candidate_log_likelihood(const Model& model, const RecTask& task, std::span<const int> window, int item_id) {
  const PromptEncoding enc = task.encode(window, item_id);
  const Tensor logp = log_softmax_rows(model.forward(enc, World::Factual));
  const std::size_t p = enc.prompt_length();
  double total = 0.0;
  for (std::size_t j = 0; j < enc.target_token_ids.size(); ++j) {
    total += logp(p - 1 + j, static_cast<std::size_t>(enc.target_token_ids[j]));
  }
  return total / static_cast<double>(enc.target_token_ids.size());
}

std::size_t rank_of(const RankedList& ranked, int target) {
  const auto it = std::find(ranked.items.begin(), ranked.items.end(), target);
  if (it == ranked.items.end()) {
    throw ProtocolError("target item " + std::to_string(target) + " is not in the candidate list");
  }
  return static_cast<std::size_t>(it - ranked.items.begin()) + 1;
}

int hr_at_k(const RankedList& ranked, int target, std::size_t k) { return rank_of(ranked, target) <= k ? 1 : 0; }

double ndcg_at_k(const RankedList& ranked, int target, std::size_t k) {
  const std::size_t r = rank_of(ranked, target);
  return r <= k ? 1.0 / std::log2(static_cast<double>(r) + 1.0) : 0.0;
}

void MetricsReport::check() const {
  const auto bad = [](double x) { return !(x >= 0.0 && x <= 1.0); };
  if (bad(hr5) || bad(hr10) || bad(ndcg5) || bad(ndcg10) || ndcg5 > hr5 || ndcg10 > hr10 || hr5 > hr10) {
    throw InvariantError("metrics violate 0 <= NDCG@K <= HR@K <= 1, HR@5 <= HR@10 (hr5 " + std::to_string(hr5) +
                         ", hr10 " + std::to_string(hr10) + ", ndcg5 " + std::to_string(ndcg5) + ", ndcg10 " +
                         std::to_string(ndcg10) + ")");
  }
}

double MetricsReport::metric(std::string_view name) const {
  if (name == "hr5") {
    return hr5;
  }
  if (name == "hr10") {
    return hr10;
  }
  if (name == "ndcg5") {
    return ndcg5;
  }
  if (name == "ndcg10") {
    return ndcg10;
  }
  throw UsageError("unknown metric '" + std::string(name) + "'");
}

MetricsReport aggregate(std::span<const RankedList> ranked, std::span<const Example> examples) {
  if (ranked.size() != examples.size()) {
    throw DimensionError("aggregate: " + std::to_string(ranked.size()) + " rankings for " +
                         std::to_string(examples.size()) + " examples");
  }
  if (examples.empty()) {
    throw UsageError("cannot compute metrics over zero examples");
  }
  MetricsReport r;
  for (std::size_t i = 0; i < examples.size(); ++i) {
    const int t = examples[i].target;
    r.hr5 += hr_at_k(ranked[i], t, 5);
    r.hr10 += hr_at_k(ranked[i], t, 10);
    r.ndcg5 += ndcg_at_k(ranked[i], t, 5);
    r.ndcg10 += ndcg_at_k(ranked[i], t, 10);
  }
  const auto n = static_cast<double>(examples.size());
  r.hr5 /= n;
  r.hr10 /= n;
  r.ndcg5 /= n;
  r.ndcg10 /= n;
  r.n_examples = examples.size();
  r.check();
  return r;
}

std::string to_string(InferenceMode mode) { return mode == InferenceMode::Rank ? "rank" : "generate"; }

InferenceMode inference_mode_from_string(std::string_view s) {
  if (s == "rank") {
    return InferenceMode::Rank;
  }
  if (s == "generate") {
    return InferenceMode::Generate;
  }
  throw ConfigError("mode must be 'rank' or 'generate', got '" + std::string(s) + "'");
}

std::vector<GeneratedTitle> generate_titles(const Model& model, const RecTask& task, std::span<const int> window,
                                            const GenerationConfig& config) {
  if (config.beam_width == 0 || config.max_tokens == 0) {
    throw ConfigError("generation: beam_width and max_tokens must be positive");
  }
  const PromptEncoding enc = task.encode(window, std::nullopt);
  const SequenceRequest req{&enc, World::Factual};
  const PackedBatch prompt = pack_teacher_forced(std::span(&req, 1), false);
  const int last_row = prompt.last_prompt_rows.front();
  const int last_pos = enc.token_positions.back();

  struct Hyp {
    std::vector<int> tokens;
    double logp = 0.0;
  };
  std::vector<Hyp> live{Hyp{}};
  std::vector<GeneratedTitle> finished;
  const auto make_title = [&](const Hyp& h, bool truncated, double extra) {
    GeneratedTitle g;
    g.tokens = h.tokens;
    g.text = detokenize(h.tokens, task.vocab);
    g.score = (h.logp + extra) / static_cast<double>(h.tokens.size() + (truncated ? 0 : 1));
    g.truncated = truncated;
    return g;
  };
  for (std::size_t step = 0; step < config.max_tokens && !live.empty() && finished.size() < config.beam_width;
       ++step) {
    PackBuilder builder(prompt.input);
    std::vector<int> ends;
    for (const Hyp& h : live) {
      int parent = last_row;
      for (std::size_t j = 0; j < h.tokens.size(); ++j) {
        parent = builder.append_row(parent, h.tokens[j], last_pos + 1 + static_cast<int>(j), std::nullopt);
      }
      ends.push_back(parent);
    }
    const PackedInput input = builder.finish();
    Tape tape;
    const BoundParams bound = model.bind(tape, false, false);
    const Tensor logp = log_softmax_rows(model.logits(bound, model.hidden(tape, bound, input), ends).value());
    struct Cand {
      double logp;
      std::size_t hyp;
      int token;
    };
    std::vector<Cand> cands;
    for (std::size_t h = 0; h < live.size(); ++h) {
      for (std::size_t v = 0; v < logp.cols(); ++v) {
        cands.push_back({live[h].logp + logp(h, v), h, static_cast<int>(v)});
      }
    }
    std::sort(cands.begin(), cands.end(), [](const Cand& a, const Cand& b) {
      if (a.logp != b.logp) {
        return a.logp > b.logp;
      }
      return a.hyp != b.hyp ? a.hyp < b.hyp : a.token < b.token;
    });
    std::vector<Hyp> next;
    for (const Cand& c : cands) {
      if (next.size() + finished.size() >= config.beam_width) {
        break;
      }
      const Hyp& h = live[c.hyp];
      if (c.token == Vocabulary::kEos) {
        if (!h.tokens.empty()) {
          finished.push_back(make_title(h, false, c.logp - h.logp));
        }
        continue;
      }
      Hyp n = h;
      n.tokens.push_back(c.token);
      n.logp = c.logp;
      next.push_back(std::move(n));
    }
    live = std::move(next);
  }
  for (const Hyp& h : live) {
    if (finished.size() >= config.beam_width) {
      break;
    }
    finished.push_back(make_title(h, true, 0.0));
  }
  std::stable_sort(finished.begin(), finished.end(),
                   [](const GeneratedTitle& a, const GeneratedTitle& b) { return a.score > b.score; });
  return finished;
}

double normalized_edit_distance(std::string_view a, std::string_view b) {
  const std::size_t longest = std::max(a.size(), b.size());
  if (longest == 0) {
    return 0.0;
  }
  std::vector<std::size_t> prev(b.size() + 1);
  std::vector<std::size_t> cur(b.size() + 1);
  std::iota(prev.begin(), prev.end(), std::size_t{0});
  for (std::size_t i = 1; i <= a.size(); ++i) {
    cur[0] = i;
    for (std::size_t j = 1; j <= b.size(); ++j) {
      const std::size_t sub = prev[j - 1] + (a[i - 1] == b[j - 1] ? 0 : 1);
      cur[j] = std::min({prev[j] + 1, cur[j - 1] + 1, sub});
    }
    std::swap(prev, cur);
  }
  return static_cast<double>(prev[b.size()]) / static_cast<double>(longest);
}

Grounding ground_title(std::string_view text, const Catalog& catalog, std::span<const int> exclude) {
  const std::unordered_set<int> skip(exclude.begin(), exclude.end());
  Grounding g;
  double best = std::numeric_limits<double>::infinity();
  double second = best;
  // catalog order is ascending item_id for generated catalogs; compare ids explicitly anyway
  for (const Item& item : catalog.items()) {
    if (skip.contains(item.item_id)) {
      continue;
    }
    const double d = normalized_edit_distance(text, item.title);
    const auto better = [&](double dist, int id) { return d < dist || (d == dist && item.item_id < id); };
    if (g.best < 0 || better(best, g.best)) {
      g.second = g.best;
      second = best;
      g.best = item.item_id;
      best = d;
    } else if (g.second < 0 || better(second, g.second)) {
      g.second = item.item_id;
      second = d;
    }
  }
  g.best_distance = best;
  g.second_distance = second;
  return g;
}

GroundedLists ground_generations(std::vector<GeneratedTitle> generations, const Catalog& catalog,
                                 std::span<const int> window, const RankedList& ranking) {
  GroundedLists out;
  std::vector<Grounding> matches;
  for (const auto& g : generations) {
    matches.push_back(ground_title(g.text, catalog, window));
    out.any_truncated = out.any_truncated || g.truncated;
  }
  const auto push_unique = [](std::vector<int>& list, int id) {
    if (id >= 0 && std::find(list.begin(), list.end(), id) == list.end()) {
      list.push_back(id);
    }
  };
  const auto backfill = [&](std::vector<int>& list, std::size_t n) {
    for (int id : ranking.items) {
      if (list.size() >= n) {
        break;
      }
      push_unique(list, id);
    }
  };
  for (const auto& m : matches) {
    if (out.top5.size() < 5) {
      push_unique(out.top5, m.best);
    }
  }
  backfill(out.top5, 5);
  out.top10 = out.top5;
  for (const auto& m : matches) {
    if (out.top10.size() < 10) {
      push_unique(out.top10, m.second);
    }
  }
  backfill(out.top10, 10);
  out.generations = std::move(generations);
  return out;
}

GroundedLists generate_and_ground(const Model& model, const RecTask& task, std::span<const int> window,
                                  const GenerationConfig& config) {
  const RankedList ranking = rank_items(model, task, window);
  return ground_generations(generate_titles(model, task, window, config), task.catalog, window, ranking);
}

RankedList grounded_ranking(const GroundedLists& lists, const RankedList& ranking) {
  RankedList out;
  out.items = lists.top10;
  for (int id : ranking.items) {
    if (std::find(out.items.begin(), out.items.end(), id) == out.items.end()) {
      out.items.push_back(id);
    }
  }
  for (std::size_t i = 0; i < out.items.size(); ++i) {
    out.scores.push_back(-static_cast<double>(i));
  }
  return out;
}

std::span<const Example> head(std::span<const Example> examples, std::size_t limit) {
  return limit == 0 || limit >= examples.size() ? examples : examples.first(limit);
}

MetricsReport evaluate(const Model& model, const RecTask& task, std::span<const Example> examples,
                       const EvalOptions& options) {
  const auto subset = head(examples, options.limit);
  std::vector<std::vector<int>> windows;
  for (const Example& ex : subset) {
    windows.push_back(ex.window);
  }
  std::vector<RankedList> ranked = rank_batch(model, task, windows, options.per_pass);
  if (options.mode == InferenceMode::Generate) {
    for (std::size_t i = 0; i < subset.size(); ++i) {
      const auto lists = ground_generations(generate_titles(model, task, windows[i], options.generation),
                                            task.catalog, windows[i], ranked[i]);
      ranked[i] = grounded_ranking(lists, ranked[i]);
    }
  }
  return aggregate(ranked, subset);
}

const SensitivityEntry& SensitivityReport::entry(std::string_view metric) const {
  for (const auto& e : entries) {
    if (e.metric == metric) {
      return e;
    }
  }
  throw UsageError("no sensitivity entry for '" + std::string(metric) + "'");
}

std::optional<double> SensitivityReport::mean_change_rate() const {
  double total = 0.0;
  int n = 0;
  for (const auto& e : entries) {
    if (e.change_rate) {
      total += *e.change_rate;
      ++n;
    }
  }
  if (n == 0) {
    return std::nullopt;
  }
  return total / n;
}

SensitivityReport sensitivity_report(const MetricsReport& original, const MetricsReport& reversed) {
  SensitivityReport r;
  r.original = original;
  r.reversed = reversed;
  for (std::string_view name : kMetricNames) {
    SensitivityEntry e;
    e.metric = std::string(name);
    e.original = original.metric(name);
    e.reversed = reversed.metric(name);
    if (e.original > 0.0) {
      e.change_rate = (e.original - e.reversed) / e.original;
    }
    r.entries.push_back(std::move(e));
  }
  return r;
}

SensitivityReport sensitivity_probe(const Model& model, const RecTask& task, std::span<const Example> examples,
                                    const EvalOptions& options) {
  const auto subset = head(examples, options.limit);
  std::vector<Example> reversed(subset.begin(), subset.end());
  for (Example& ex : reversed) {
    std::reverse(ex.window.begin(), ex.window.end());
  }
  EvalOptions all = options;
  all.limit = 0;
  return sensitivity_report(evaluate(model, task, subset, all), evaluate(model, task, reversed, all));
}

}  // namespace cetrec
