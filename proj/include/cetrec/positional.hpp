#pragma once

#include <cstddef>
#include <optional>
#include <span>
#include <vector>

#include "cetrec/numerics.hpp"

namespace cetrec {

/// Sinusoidal embedding vector for index k:
///   p[2t] = sin(k / 10000^(2t/d)), p[2t+1] = cos(k / 10000^(2t/d)).
std::vector<double> sinpe(int k, std::size_t dim);

/// Precomputed sinusoidal rows for indices 0..max_index. One table serves both
/// token positions and item-level temporal indices.
class SinusoidalTable {
 public:
  SinusoidalTable(int max_index, std::size_t dim);

  [[nodiscard]] std::span<const double> row(int k) const;
  [[nodiscard]] int max_index() const { return max_index_; }
  [[nodiscard]] std::size_t dim() const { return dim_; }

 private:
  int max_index_;
  std::size_t dim_;
  std::vector<double> rows_;
};

/// cos/sin of the rotary angles position / 10000^(2t/head_dim) for every
/// position in [0, max_position] and pair t.
class RotaryTable {
 public:
  RotaryTable(int max_position, std::size_t head_dim);

  [[nodiscard]] double cos(int position, std::size_t pair) const { return cos_[index(position, pair)]; }
  [[nodiscard]] double sin(int position, std::size_t pair) const { return sin_[index(position, pair)]; }
  [[nodiscard]] int max_position() const { return max_position_; }
  [[nodiscard]] std::size_t head_dim() const { return head_dim_; }
  /// Throws IndexError when position is outside the table.
  void check(int position) const;

 private:
  [[nodiscard]] std::size_t index(int position, std::size_t pair) const {
    return static_cast<std::size_t>(position) * (head_dim_ / 2) + pair;
  }

  int max_position_;
  std::size_t head_dim_;
  std::vector<double> cos_;
  std::vector<double> sin_;
};

/// Rotates consecutive pairs (v[2t], v[2t+1]) of one head vector.
std::vector<double> rope_apply(std::span<const double> vec, int position, const RotaryTable& table);

/// Rotary position of a token: t + stride * k for item tokens, t otherwise.
int effective_position(int token_position, std::optional<int> temporal_index, int stride);

/// I_t = x_t + p_t + p_k, with p_k treated as zero when absent.
std::vector<double> compose_input_embedding(std::span<const double> token_embedding,
                                            std::span<const double> position_embedding,
                                            std::optional<std::span<const double>> temporal_embedding);

/// Tape primitive: rotates every head of every row of x by its row position.
Var rope(Var x, std::span<const int> positions, std::size_t n_heads, const RotaryTable& table);

}  // namespace cetrec
