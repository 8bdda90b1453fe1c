#include <gtest/gtest.h>

#include <algorithm>
#include <map>
#include <set>

#include "cetrec/datagen.hpp"
#include "cetrec/errors.hpp"

using namespace cetrec;

namespace {

const Dataset& default_dataset() {
  static const Dataset ds = generate_dataset(GeneratorConfig{});
  return ds;
}

std::vector<Example> synthetic_examples(int n, int draw_time_mod) {
  std::vector<Example> out;
  for (int i = 0; i < n; ++i) {
    out.push_back({i % 7, {1, 2, 3}, 4, draw_time_mod ? (i * 37) % draw_time_mod : 0, i % 5});
  }
  return out;
}

}  // namespace

TEST(Catalog, DefaultSizeAndTitles) {
  const GeneratorConfig cfg;
  const Catalog c = generate_catalog(cfg);
  EXPECT_EQ(cfg.catalog_size(), 300);
  ASSERT_EQ(c.size(), 300u);
  const Vocabulary v = Vocabulary::build(PromptTemplate::games(), c);
  std::set<std::string> titles;
  std::map<int, std::vector<int>> parts;
  for (const Item& it : c.items()) {
    EXPECT_GE(tokenize(it.title, v).ids.size(), 2u) << it.title;
    titles.insert(it.title);
    if (it.franchise) {
      parts[*it.franchise].push_back(*it.part);
    }
  }
  EXPECT_EQ(titles.size(), 300u);
  EXPECT_EQ(parts.size(), 50u);
  for (const auto& [f, ps] : parts) {
    EXPECT_EQ(ps, (std::vector<int>{1, 2, 3, 4})) << f;
  }
}

TEST(Catalog, Deterministic) {
  const Catalog a = generate_catalog(GeneratorConfig{});
  const Catalog b = generate_catalog(GeneratorConfig{});
  EXPECT_EQ(a.items(), b.items());
  GeneratorConfig other;
  other.seed = 8;
  EXPECT_NE(a.items(), generate_catalog(other).items());
}

TEST(Catalog, ManyGenresStillTokenize) {
  GeneratorConfig cfg;
  cfg.n_genres = 13;
  const Catalog c = generate_catalog(cfg);
  EXPECT_EQ(c.size(), static_cast<std::size_t>(cfg.catalog_size()));
  const Vocabulary v = Vocabulary::build(PromptTemplate::games(), c);
  for (const Item& it : c.items()) {
    EXPECT_GE(tokenize(it.title, v).ids.size(), 2u);
  }
}

TEST(GeneratorConfig, Validation) {
  GeneratorConfig c;
  c.drift = 1.5;
  EXPECT_THROW(c.validate(), ConfigError);
  c = {};
  c.max_window = 2;
  EXPECT_THROW(c.validate(), ConfigError);
  c = {};
  c.n_users = 0;
  EXPECT_THROW(c.validate(), ConfigError);
}

TEST(SimulateUser, HugeBoostPlaysFranchiseInOrder) {
  GeneratorConfig cfg;
  cfg.n_genres = 1;
  cfg.standalone_per_genre = 0;
  cfg.franchise_boost = 1e15;
  cfg.recency_window = 100;
  cfg.steps_per_user = 12;
  cfg.drift = 0.0;
  const Catalog c = generate_catalog(cfg);
  for (int u = 0; u < 20; ++u) {
    const InteractionSequence s = simulate_user(cfg, c, u);
    ASSERT_EQ(s.items.size(), 12u);
    for (int block = 0; block < 3; ++block) {
      const Item& first = c.at(s.items[static_cast<std::size_t>(block * 4)]);
      ASSERT_TRUE(first.franchise.has_value());
      for (int j = 0; j < 4; ++j) {
        const Item& it = c.at(s.items[static_cast<std::size_t>(block * 4 + j)]);
        EXPECT_EQ(it.franchise, first.franchise);
        EXPECT_EQ(it.part, j + 1);
      }
    }
  }
}

TEST(SimulateUser, NoDriftKeepsOneGenre) {
  GeneratorConfig cfg;
  cfg.drift = 0.0;
  const Catalog c = generate_catalog(cfg);
  for (int u = 0; u < 50; ++u) {
    const InteractionSequence s = simulate_user(cfg, c, u);
    std::set<int> genres;
    for (int id : s.items) {
      genres.insert(c.at(id).genre);
    }
    EXPECT_EQ(genres.size(), 1u);
    EXPECT_EQ(s.items.size(), 30u);
  }
}

TEST(SimulateUser, NoRepeatsAndTruncation) {
  GeneratorConfig cfg;
  cfg.n_genres = 2;
  cfg.franchises_per_genre = 1;
  cfg.standalone_per_genre = 2;
  cfg.drift = 0.0;
  cfg.steps_per_user = 30;
  const Catalog c = generate_catalog(cfg);
  const InteractionSequence s = simulate_user(cfg, c, 0);
  EXPECT_TRUE(s.truncated);
  EXPECT_EQ(s.items.size(), 6u);
  EXPECT_EQ(std::set<int>(s.items.begin(), s.items.end()).size(), s.items.size());
  EXPECT_EQ(s.draw_time, 5);
}

TEST(SimulateUser, SequelBoostIsVisibleInSamples) {
  // P(next = part j+1) when part j is the most recent franchise entry inside
  // the window, against the same event when part j was played but is stale.
  GeneratorConfig cfg;
  cfg.n_users = 4000;
  const Catalog c = generate_catalog(cfg);
  long recent_n = 0, recent_hit = 0, stale_n = 0, stale_hit = 0, steps = 0;
  for (int u = 0; u < cfg.n_users; ++u) {
    const InteractionSequence s = simulate_user(cfg, c, u);
    for (std::size_t t = 1; t < s.items.size(); ++t) {
      ++steps;
      std::set<int> seen(s.items.begin(), s.items.begin() + static_cast<long>(t));
      std::optional<int> recent;
      for (std::size_t back = 1; back <= std::min<std::size_t>(t, 5); ++back) {
        const Item& it = c.at(s.items[t - back]);
        if (it.franchise) {
          recent = it.item_id;
          break;
        }
      }
      for (int id : seen) {
        const Item& it = c.at(id);
        if (!it.franchise || *it.part == 4 || seen.contains(id + 1)) {
          continue;
        }
        const bool hit = s.items[t] == id + 1;
        if (recent && *recent == id) {
          ++recent_n;
          recent_hit += hit;
        } else {
          ++stale_n;
          stale_hit += hit;
        }
      }
    }
  }
  EXPECT_GE(steps, 100000);
  ASSERT_GT(recent_n, 1000);
  ASSERT_GT(stale_n, 1000);
  const double recent_rate = static_cast<double>(recent_hit) / static_cast<double>(recent_n);
  const double stale_rate = static_cast<double>(stale_hit) / static_cast<double>(stale_n);
  EXPECT_GE(recent_rate / stale_rate, 3.0) << recent_rate << " vs " << stale_rate;
}

TEST(Windows, ShortTrajectories) {
  Pcg32 rng(1);
  InteractionSequence s{0, {1, 2, 3}, 2, false};
  EXPECT_TRUE(window_examples(s, 3, 10, rng).empty());
  s.items = {1, 2, 3, 4};
  const auto ex = window_examples(s, 3, 10, rng);
  ASSERT_EQ(ex.size(), 1u);
  EXPECT_EQ(ex[0].window, (std::vector<int>{1, 2, 3}));
  EXPECT_EQ(ex[0].target, 4);
  EXPECT_EQ(ex[0].draw_time, 3);
}

TEST(Windows, ContiguousAndBounded) {
  const Dataset& ds = default_dataset();
  std::map<int, const InteractionSequence*> by_user;
  for (const auto& s : ds.sequences) {
    by_user[s.user_id] = &s;
  }
  std::set<std::size_t> lengths;
  for (const auto* part : {&ds.split.train, &ds.split.validation, &ds.split.test}) {
    for (const Example& e : *part) {
      ASSERT_GE(e.window.size(), 3u);
      ASSERT_LE(e.window.size(), 10u);
      lengths.insert(e.window.size());
      const auto& items = by_user.at(e.user_id)->items;
      for (std::size_t i = 0; i < e.window.size(); ++i) {
        ASSERT_EQ(items[static_cast<std::size_t>(e.start) + i], e.window[i]);
      }
      ASSERT_EQ(static_cast<std::size_t>(e.start) + e.window.size(), static_cast<std::size_t>(e.draw_time));
      ASSERT_EQ(items[static_cast<std::size_t>(e.draw_time)], e.target);
      ASSERT_EQ(std::find(e.window.begin(), e.window.end(), e.target), e.window.end());
    }
  }
  EXPECT_EQ(lengths.size(), 8u);
}

TEST(Split, EightyTenTen) {
  const DatasetSplit s = chronological_split(synthetic_examples(100, 13));
  EXPECT_EQ(s.train.size(), 80u);
  EXPECT_EQ(s.validation.size(), 10u);
  EXPECT_EQ(s.test.size(), 10u);
  int max_train = 0, min_val = 1 << 30, max_val = 0, min_test = 1 << 30;
  for (const auto& e : s.train) max_train = std::max(max_train, e.draw_time);
  for (const auto& e : s.validation) {
    min_val = std::min(min_val, e.draw_time);
    max_val = std::max(max_val, e.draw_time);
  }
  for (const auto& e : s.test) min_test = std::min(min_test, e.draw_time);
  EXPECT_LE(max_train, min_val);
  EXPECT_LE(max_val, min_test);
}

TEST(Split, TiesBreakByUserThenStart) {
  auto ex = synthetic_examples(100, 0);
  const DatasetSplit a = chronological_split(ex);
  std::reverse(ex.begin(), ex.end());
  const DatasetSplit b = chronological_split(ex);
  EXPECT_EQ(a.train.size(), 80u);
  EXPECT_EQ(a.test.size(), 10u);
  EXPECT_EQ(a.train, b.train);
  EXPECT_EQ(a.test, b.test);
  for (std::size_t i = 1; i < a.train.size(); ++i) {
    const auto& p = a.train[i - 1];
    const auto& q = a.train[i];
    EXPECT_TRUE(p.user_id < q.user_id || (p.user_id == q.user_id && p.start <= q.start));
  }
}

TEST(Split, TooFewExamples) { EXPECT_THROW(chronological_split(synthetic_examples(9, 3)), UsageError); }

TEST(Split, GeneratedDataIsChronological) {
  const DatasetSplit& s = default_dataset().split;
  const std::size_t n = s.train.size() + s.validation.size() + s.test.size();
  EXPECT_EQ(s.train.size(), n * 8 / 10);
  EXPECT_EQ(s.train.size() + s.validation.size(), n * 9 / 10);
  int max_train = 0, min_test = 1 << 30;
  for (const auto& e : s.train) max_train = std::max(max_train, e.draw_time);
  for (const auto& e : s.test) min_test = std::min(min_test, e.draw_time);
  EXPECT_LE(max_train, min_test);
}

TEST(Dataset, Deterministic) {
  GeneratorConfig cfg;
  cfg.n_users = 200;
  const Dataset a = generate_dataset(cfg);
  const Dataset b = generate_dataset(cfg);
  EXPECT_EQ(a.sequences, b.sequences);
  EXPECT_EQ(a.split.train, b.split.train);
  EXPECT_EQ(a.split.test, b.split.test);
}

TEST(Certificate, LastItemBeatsRandomItem) {
  const Dataset& ds = default_dataset();
  const OrderCertificate cert = order_sensitivity_certificate(ds.split, ds.catalog, 1);
  EXPECT_EQ(cert.n_test, ds.split.test.size());
  EXPECT_GE(cert.gap_points(), 5.0);

  // Independent bigram oracle. The random-item accuracy is compared with its
  // expectation over every history position.
  std::map<int, std::map<int, long>> counts;
  std::map<int, long> pop;
  for (const Example& e : ds.split.train) {
    for (std::size_t i = 0; i < e.window.size(); ++i) {
      ++counts[e.window[i]][i + 1 < e.window.size() ? e.window[i + 1] : e.target];
    }
    ++pop[e.target];
  }
  auto predict = [&](int src, const std::vector<int>& window) {
    auto ok = [&](int id) { return std::find(window.begin(), window.end(), id) == window.end(); };
    int best = -1;
    long bc = 0;
    for (const auto& [id, c] : counts[src]) {
      if (ok(id) && c > bc) {
        best = id;
        bc = c;
      }
    }
    if (best < 0) {
      for (const auto& [id, c] : pop) {
        if (ok(id) && c > bc) {
          best = id;
          bc = c;
        }
      }
    }
    return best;
  };
  double last = 0.0, random = 0.0;
  for (const Example& e : ds.split.test) {
    last += predict(e.window.back(), e.window) == e.target;
    double r = 0.0;
    for (int src : e.window) {
      r += predict(src, e.window) == e.target;
    }
    random += r / static_cast<double>(e.window.size());
  }
  const double n = static_cast<double>(ds.split.test.size());
  EXPECT_DOUBLE_EQ(cert.accuracy_last, last / n);
  EXPECT_NEAR(cert.accuracy_random, random / n, 0.02);
}
