#include <gtest/gtest.h>

#include <cmath>

#include "cetrec/errors.hpp"
#include "cetrec/positional.hpp"
#include "cetrec/rng.hpp"
#include "support.hpp"

using namespace cetrec;

namespace {

long double sinpe_ld(int k, std::size_t d, std::size_t i) {
  const long double angle = static_cast<long double>(k) /
                            std::pow(10000.0L, static_cast<long double>(2 * (i / 2)) / static_cast<long double>(d));
  return i % 2 == 0 ? std::sin(angle) : std::cos(angle);
}

std::vector<double> random_vec(std::size_t n, Pcg32& rng) {
  std::vector<double> v(n);
  for (double& x : v) {
    x = rng.normal();
  }
  return v;
}

double dot(const std::vector<double>& a, const std::vector<double>& b) {
  double s = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    s += a[i] * b[i];
  }
  return s;
}

}  // namespace

TEST(SinPE, KnownRows) {
  EXPECT_EQ(sinpe(0, 4), (std::vector<double>{0, 1, 0, 1}));
  const std::vector<double> r = sinpe(1, 4);
  const double expected[] = {0.841471, 0.540302, 0.010000, 0.999950};
  for (int i = 0; i < 4; ++i) {
    EXPECT_NEAR(r[i], expected[i], 5e-7);
  }
}

TEST(SinPE, MatchesHighPrecision) {
  for (std::size_t d : {4u, 16u, 64u}) {
    const SinusoidalTable table(40, d);
    for (int k : {0, 1, 2, 17, 40}) {
      const auto direct = sinpe(k, d);
      const auto row = table.row(k);
      for (std::size_t i = 0; i < d; ++i) {
        EXPECT_NEAR(direct[i], static_cast<double>(sinpe_ld(k, d, i)), 1e-12);
        EXPECT_EQ(row[i], direct[i]);
      }
    }
  }
}

TEST(SinPE, RowNorm) {
  const SinusoidalTable table(300, 64);
  for (int k = 0; k <= 300; ++k) {
    double s = 0.0;
    for (double x : table.row(k)) {
      s += x * x;
    }
    EXPECT_NEAR(std::sqrt(s), std::sqrt(32.0), 1e-9);
  }
}

TEST(SinPE, AngleAddition) {
  // the first pair rotates by exactly one radian per index step
  const auto p1 = sinpe(1, 8);
  const auto p2 = sinpe(2, 8);
  EXPECT_NEAR(p2[0], p1[0] * std::cos(1.0) + p1[1] * std::sin(1.0), 1e-15);
  EXPECT_NEAR(p2[1], p1[1] * std::cos(1.0) - p1[0] * std::sin(1.0), 1e-15);
}

TEST(SinPE, OddDimensionIsAConfigError) {
  EXPECT_THROW(sinpe(1, 5), ConfigError);
  EXPECT_THROW(SinusoidalTable(4, 7), ConfigError);
}

TEST(Rope, PositionZeroIsIdentity) {
  Pcg32 rng(1);
  const RotaryTable table(64, 8);
  const auto v = random_vec(8, rng);
  EXPECT_EQ(rope_apply(v, 0, table), v);
}

TEST(Rope, PreservesNorm) {
  Pcg32 rng(2);
  const RotaryTable table(512, 16);
  for (int i = 0; i < 100; ++i) {
    const auto v = random_vec(16, rng);
    const auto r = rope_apply(v, static_cast<int>(rng.below(513)), table);
    EXPECT_NEAR(std::sqrt(dot(r, r)), std::sqrt(dot(v, v)), 1e-12);
  }
}

TEST(Rope, BlocksAreOrthonormal) {
  const RotaryTable table(200, 16);
  for (int p = 0; p <= 200; p += 7) {
    for (std::size_t t = 0; t < 8; ++t) {
      const double c = table.cos(p, t), s = table.sin(p, t);
      EXPECT_NEAR(c * c + s * s, 1.0, 1e-12);
    }
  }
}

TEST(Rope, RelativeDistanceOnly) {
  Pcg32 rng(3);
  const RotaryTable table(64, 16);
  const auto q = random_vec(16, rng);
  const auto k = random_vec(16, rng);
  EXPECT_NEAR(dot(rope_apply(q, 5, table), rope_apply(k, 3, table)),
              dot(rope_apply(q, 7, table), rope_apply(k, 5, table)), 1e-9);
}

TEST(Rope, GlobalShiftInvariance) {
  Pcg32 rng(4);
  const RotaryTable table(1024, 16);
  for (int i = 0; i < 1000; ++i) {
    const auto q = random_vec(16, rng);
    const auto k = random_vec(16, rng);
    const int m = static_cast<int>(rng.below(400));
    const int n = static_cast<int>(rng.below(400));
    const int shift = static_cast<int>(rng.below(500));
    const double a = dot(rope_apply(q, m, table), rope_apply(k, n, table));
    const double b = dot(rope_apply(q, m + shift, table), rope_apply(k, n + shift, table));
    EXPECT_LT(std::abs(a - b), 1e-9);
  }
}

TEST(Rope, PositionOutsideTable) {
  const RotaryTable table(10, 4);
  const std::vector<double> v{1, 2, 3, 4};
  EXPECT_THROW(rope_apply(v, 11, table), IndexError);
  EXPECT_NO_THROW(rope_apply(v, 10, table));
}

TEST(Rope, TapePrimitiveMatchesVectorForm) {
  Pcg32 rng(5);
  const RotaryTable table(64, 4);
  const Tensor x = cetrec::testing::random_tensor({3, 8}, rng);
  const std::vector<int> pos{0, 9, 40};
  Tape tape;
  const Tensor y = rope(tape.constant(x), pos, 2, table).value();
  for (std::size_t r = 0; r < 3; ++r) {
    for (std::size_t h = 0; h < 2; ++h) {
      const std::vector<double> head(x.ptr() + r * 8 + h * 4, x.ptr() + r * 8 + h * 4 + 4);
      const auto rot = rope_apply(head, pos[r], table);
      for (std::size_t i = 0; i < 4; ++i) {
        EXPECT_EQ(y(r, h * 4 + i), rot[i]);
      }
    }
  }
  const double err = grad_check(
                         [&](Tape& t, std::span<const Var> p) {
                           return sum(mul(rope(p[0], pos, 2, table), t.constant(x)));
                         },
                         {x})
                         .max_rel_error;
  EXPECT_LT(err, 1e-4);
}

TEST(EffectivePosition, Arithmetic) {
  EXPECT_EQ(effective_position(12, std::nullopt, 16), 12);
  EXPECT_EQ(effective_position(12, 3, 16), 60);
  EXPECT_EQ(effective_position(12, 1, 16), 28);
}

TEST(ComposeInputEmbedding, Sums) {
  Pcg32 rng(6);
  const auto x = random_vec(8, rng), p = random_vec(8, rng), k = random_vec(8, rng);
  const auto without = compose_input_embedding(x, p, std::nullopt);
  const auto with = compose_input_embedding(x, p, std::span<const double>(k));
  for (std::size_t i = 0; i < 8; ++i) {
    EXPECT_EQ(without[i], x[i] + p[i]);
    EXPECT_EQ(with[i], (x[i] + p[i]) + k[i]);
  }
  const std::vector<double> z(8, 0.0);
  EXPECT_EQ(compose_input_embedding(z, z, std::span<const double>(z)), z);
  const std::vector<double> short_vec(4, 0.0);
  EXPECT_THROW(compose_input_embedding(x, short_vec, std::nullopt), DimensionError);
}
