#include "cetrec/datagen.hpp"

#include <algorithm>
#include <map>
#include <set>
#include <string>
#include <unordered_map>
#include <unordered_set>

#include "cetrec/errors.hpp"

namespace cetrec {

namespace {

constexpr std::uint64_t kCatalogPurpose = 0xca7a;
constexpr std::uint64_t kUserPurpose = 0x05e2;
constexpr std::uint64_t kWindowPurpose = 0x3d0;
constexpr std::uint64_t kCertificatePurpose = 0xce27;

const std::vector<std::vector<std::string>>& genre_nouns() {
  static const std::vector<std::vector<std::string>> nouns = {
      {"Drift", "Rally", "Speedway", "Circuit"},       {"Puzzle", "Blocks", "Riddle", "Maze"},
      {"Nightmare", "Haunting", "Asylum", "Dread"},    {"Quest", "Legends", "Kingdom", "Dragon"},
      {"Odyssey", "Frontier", "Starship", "Colony"},   {"League", "Striker", "Slam", "Champions"},
      {"Infiltrator", "Agent", "Heist", "Shadows"},    {"Harvest", "Valley", "Ranch", "Orchard"},
      {"Buccaneer", "Voyage", "Corsair", "Treasure"},  {"Mech", "Android", "Automaton", "Circuitry"},
  };
  return nouns;
}

const std::vector<std::string>& franchise_names() {
  static const std::vector<std::string> names = {
      "Nova",    "Iron",     "Crystal", "Thunder",  "Pixel",   "Ember",   "Frost",   "Solar",   "Lunar",
      "Rogue",   "Titan",    "Echo",    "Vortex",   "Neon",    "Astral",  "Cobalt",  "Crimson", "Golden",
      "Savage",  "Mystic",   "Arcane",  "Steel",    "Velvet",  "Radiant", "Scarlet", "Azure",   "Primal",
      "Phantom", "Galactic", "Quantum", "Stellar",  "Hyper",   "Mega",    "Ultra",   "Royal",   "Sacred",
      "Omega",   "Alpha",    "Blaze",   "Storm",    "Raven",   "Falcon",  "Viper",   "Onyx",    "Jade",
      "Ruby",    "Sapphire", "Granite", "Cinder",   "Aurora",  "Zenith",  "Apex",    "Halo",    "Orbit",
      "Prism",   "Tempest",  "Wraith",  "Griffin",  "Comet",   "Nimbus",
  };
  return names;
}

const std::vector<std::string>& standalone_adjectives() {
  static const std::vector<std::string> adjectives = {
      "Silent", "Wild",   "Hidden",  "Broken", "Final",  "Eternal", "Hollow", "Ancient", "Frozen", "Burning",
      "Lost",   "Bright", "Dark",    "Secret", "Lonely", "Endless", "Quiet",  "Rapid",   "Grand",  "Little",
      "Brave",  "Crazy",  "Distant", "Tiny",   "Super",  "Mighty",  "Lucky",  "Shining", "Misty",  "Rusty",
  };
  return adjectives;
}

std::string roman(int n) {
  static const std::pair<int, const char*> table[] = {{1000, "M"}, {900, "CM"}, {500, "D"}, {400, "CD"},
                                                      {100, "C"},  {90, "XC"},  {50, "L"},  {40, "XL"},
                                                      {10, "X"},   {9, "IX"},   {5, "V"},   {4, "IV"},
                                                      {1, "I"}};
  std::string out;
  for (const auto& [value, glyph] : table) {
    while (n >= value) {
      out += glyph;
      n -= value;
    }
  }
  return out;
}

std::string noun_for(int genre, std::uint32_t pick) {
  const auto& nouns = genre_nouns();
  if (static_cast<std::size_t>(genre) < nouns.size()) {
    const auto& pool = nouns[static_cast<std::size_t>(genre)];
    return pool[pick % pool.size()];
  }
  return "Genre" + std::to_string(genre) + "Kind" + std::to_string(pick % 4);
}

}  // namespace

void GeneratorConfig::validate() const {
  if (n_genres < 1 || franchises_per_genre < 0 || parts_per_franchise < 1 || standalone_per_genre < 0) {
    throw ConfigError("data: genre/franchise/part counts must be non-negative (n_genres, parts >= 1)");
  }
  if (catalog_size() < 1) {
    throw ConfigError("data: catalog would be empty");
  }
  if (n_users < 1 || steps_per_user < 1) {
    throw ConfigError("data: n_users and steps_per_user must be positive");
  }
  if (drift < 0.0 || drift > 1.0) {
    throw ConfigError("data: drift must be in [0, 1]");
  }
  if (recency_window < 1 || franchise_boost < 1.0) {
    throw ConfigError("data: recency_window must be >= 1 and franchise_boost >= 1");
  }
  if (min_window < 1 || max_window < min_window) {
    throw ConfigError("data: need 1 <= min_window <= max_window");
  }
  if (split_ratio[0] < 1 || split_ratio[1] < 0 || split_ratio[2] < 0) {
    throw ConfigError("data: split_ratio entries must be non-negative with a positive train share");
  }
}

Catalog generate_catalog(const GeneratorConfig& config) {
  config.validate();
  Pcg32 rng = derive_rng(config.seed, kCatalogPurpose);
  const auto& names = franchise_names();
  const auto& adjectives = standalone_adjectives();

  std::vector<std::string> name_order = names;
  rng.shuffle(name_order);
  std::size_t next_name = 0;
  auto take_name = [&]() {
    const std::size_t i = next_name++;
    if (i < name_order.size()) {
      return name_order[i];
    }
    return name_order[i % name_order.size()] + std::to_string(i / name_order.size());
  };

  std::vector<Item> items;
  std::set<std::string> titles;
  int next_id = 0;
  int franchise_id = 0;
  for (int g = 0; g < config.n_genres; ++g) {
    for (int f = 0; f < config.franchises_per_genre; ++f, ++franchise_id) {
      const std::string base = take_name() + " " + noun_for(g, rng.next_u32());
      for (int p = 1; p <= config.parts_per_franchise; ++p) {
        Item item;
        item.item_id = next_id++;
        item.title = p == 1 ? base : base + " " + roman(p);
        item.genre = g;
        item.franchise = franchise_id;
        item.part = p;
        titles.insert(item.title);
        items.push_back(std::move(item));
      }
    }
    for (int s = 0; s < config.standalone_per_genre; ++s) {
      std::string title;
      for (int attempt = 0;; ++attempt) {
        std::string adj = adjectives[rng.below(static_cast<std::uint32_t>(adjectives.size()))];
        if (attempt > 64) {
          adj += std::to_string(attempt);
        }
        title = adj + " " + noun_for(g, rng.next_u32());
        if (!titles.contains(title)) {
          break;
        }
      }
      titles.insert(title);
      Item item;
      item.item_id = next_id++;
      item.title = title;
      item.genre = g;
      items.push_back(std::move(item));
    }
  }
  return Catalog(std::move(items));
}

std::vector<int> boosted_sequels(const GeneratorConfig& config, const Catalog& catalog,
                                 std::span<const int> history) {
  const std::size_t w = static_cast<std::size_t>(config.recency_window);
  const std::size_t lo = history.size() > w ? history.size() - w : 0;
  for (std::size_t i = history.size(); i > lo; --i) {
    const Item& item = catalog.at(history[i - 1]);
    if (!item.franchise) {
      continue;
    }
    // Most recent franchise entry inside the window: its sequel is boosted.
    const int sequel_part = *item.part + 1;
    if (sequel_part > config.parts_per_franchise) {
      return {};
    }
    const int sequel_id = item.item_id + 1;
    if (catalog.contains(sequel_id) && catalog.at(sequel_id).franchise == item.franchise &&
        catalog.at(sequel_id).part == sequel_part &&
        std::find(history.begin(), history.end(), sequel_id) == history.end()) {
      return {sequel_id};
    }
    return {};
  }
  return {};
}

InteractionSequence simulate_user(const GeneratorConfig& config, const Catalog& catalog, int user_id) {
  Pcg32 rng = derive_rng(config.seed, kUserPurpose, static_cast<std::uint64_t>(user_id));
  std::vector<std::vector<int>> by_genre(static_cast<std::size_t>(config.n_genres));
  for (const Item& item : catalog.items()) {
    by_genre[static_cast<std::size_t>(item.genre)].push_back(item.item_id);
  }
  InteractionSequence seq;
  seq.user_id = user_id;
  std::unordered_set<int> consumed;
  int focus = static_cast<int>(rng.below(static_cast<std::uint32_t>(config.n_genres)));
  std::vector<int> candidates;
  std::vector<double> weights;
  for (int step = 0; step < config.steps_per_user; ++step) {
    if (step > 0 && rng.uniform() < config.drift) {
      focus = static_cast<int>(rng.below(static_cast<std::uint32_t>(config.n_genres)));
    }
    const auto boosted = boosted_sequels(config, catalog, seq.items);
    candidates.clear();
    weights.clear();
    for (int id : by_genre[static_cast<std::size_t>(focus)]) {
      if (consumed.contains(id)) {
        continue;
      }
      const Item& item = catalog.at(id);
      // a sequel becomes available once its predecessor has been played
      if (item.part && *item.part > 1 && !consumed.contains(id - 1)) {
        continue;
      }
      candidates.push_back(id);
      const bool boost = std::find(boosted.begin(), boosted.end(), id) != boosted.end();
      weights.push_back(boost ? config.franchise_boost : 1.0);
    }
    if (candidates.empty()) {
      seq.truncated = true;
      break;
    }
    double total = 0.0;
    for (double w : weights) {
      total += w;
    }
    double u = rng.uniform() * total;
    std::size_t pick = candidates.size() - 1;
    for (std::size_t i = 0; i < candidates.size(); ++i) {
      if (u < weights[i]) {
        pick = i;
        break;
      }
      u -= weights[i];
    }
    seq.items.push_back(candidates[pick]);
    consumed.insert(candidates[pick]);
  }
  seq.draw_time = static_cast<int>(seq.items.size()) - 1;
  return seq;
}

std::vector<Example> window_examples(const InteractionSequence& trajectory, int min_window, int max_window,
                                     Pcg32& rng) {
  std::vector<Example> out;
  const int len = static_cast<int>(trajectory.items.size());
  for (int t = min_window; t < len; ++t) {
    const int l = rng.range(min_window, std::min(max_window, t));
    Example ex;
    ex.user_id = trajectory.user_id;
    ex.start = t - l;
    ex.window.assign(trajectory.items.begin() + ex.start, trajectory.items.begin() + t);
    ex.target = trajectory.items[static_cast<std::size_t>(t)];
    ex.draw_time = t;
    out.push_back(std::move(ex));
  }
  return out;
}

DatasetSplit chronological_split(std::vector<Example> examples, std::array<int, 3> ratio) {
  if (examples.size() < 10) {
    throw UsageError("chronological_split needs at least 10 examples, got " + std::to_string(examples.size()));
  }
  const long total_ratio = ratio[0] + ratio[1] + ratio[2];
  if (ratio[0] < 1 || ratio[1] < 0 || ratio[2] < 0) {
    throw UsageError("chronological_split: invalid ratio");
  }
  std::stable_sort(examples.begin(), examples.end(), [](const Example& a, const Example& b) {
    if (a.draw_time != b.draw_time) {
      return a.draw_time < b.draw_time;
    }
    if (a.user_id != b.user_id) {
      return a.user_id < b.user_id;
    }
    return a.start < b.start;
  });
  const std::size_t n = examples.size();
  const std::size_t n_train = n * static_cast<std::size_t>(ratio[0]) / static_cast<std::size_t>(total_ratio);
  const std::size_t n_trval =
      n * static_cast<std::size_t>(ratio[0] + ratio[1]) / static_cast<std::size_t>(total_ratio);
  DatasetSplit split;
  split.ratio = ratio;
  const auto begin = examples.begin();
  split.train.assign(begin, begin + static_cast<std::ptrdiff_t>(n_train));
  split.validation.assign(begin + static_cast<std::ptrdiff_t>(n_train), begin + static_cast<std::ptrdiff_t>(n_trval));
  split.test.assign(begin + static_cast<std::ptrdiff_t>(n_trval), examples.end());
  return split;
}

Dataset generate_dataset(const GeneratorConfig& config) {
  config.validate();
  Dataset ds;
  ds.catalog = generate_catalog(config);
  std::vector<Example> examples;
  for (int u = 0; u < config.n_users; ++u) {
    ds.sequences.push_back(simulate_user(config, ds.catalog, u));
    Pcg32 rng = derive_rng(config.seed, kWindowPurpose, static_cast<std::uint64_t>(u));
    auto ex = window_examples(ds.sequences.back(), config.min_window, config.max_window, rng);
    examples.insert(examples.end(), std::make_move_iterator(ex.begin()), std::make_move_iterator(ex.end()));
  }
  ds.split = chronological_split(std::move(examples), config.split_ratio);
  return ds;
}

OrderCertificate order_sensitivity_certificate(const DatasetSplit& split, const Catalog& catalog,
                                               std::uint64_t seed) {
  std::unordered_map<int, std::map<int, long>> counts;
  std::map<int, long> popularity;
  for (const Example& ex : split.train) {
    for (std::size_t i = 0; i < ex.window.size(); ++i) {
      const int next = i + 1 < ex.window.size() ? ex.window[i + 1] : ex.target;
      ++counts[ex.window[i]][next];
    }
    ++popularity[ex.target];
  }
  auto predict = [&](int source, const std::vector<int>& window) {
    auto allowed = [&](int id) { return std::find(window.begin(), window.end(), id) == window.end(); };
    int best = -1;
    long best_count = 0;
    if (const auto it = counts.find(source); it != counts.end()) {
      for (const auto& [id, c] : it->second) {  // ascending id: first max wins ties
        if (allowed(id) && c > best_count) {
          best = id;
          best_count = c;
        }
      }
    }
    if (best >= 0) {
      return best;
    }
    for (const auto& [id, c] : popularity) {
      if (allowed(id) && c > best_count) {
        best = id;
        best_count = c;
      }
    }
    if (best >= 0) {
      return best;
    }
    for (const Item& item : catalog.items()) {
      if (allowed(item.item_id)) {
        return item.item_id;
      }
    }
    return -1;
  };
  Pcg32 rng = derive_rng(seed, kCertificatePurpose);
  OrderCertificate cert;
  long hit_last = 0;
  long hit_random = 0;
  for (const Example& ex : split.test) {
    if (ex.window.empty()) {
      continue;
    }
    const int random_item = ex.window[rng.below(static_cast<std::uint32_t>(ex.window.size()))];
    hit_last += predict(ex.window.back(), ex.window) == ex.target ? 1 : 0;
    hit_random += predict(random_item, ex.window) == ex.target ? 1 : 0;
    ++cert.n_test;
  }
  if (cert.n_test > 0) {
    cert.accuracy_last = static_cast<double>(hit_last) / static_cast<double>(cert.n_test);
    cert.accuracy_random = static_cast<double>(hit_random) / static_cast<double>(cert.n_test);
  }
  return cert;
}

}  // namespace cetrec
