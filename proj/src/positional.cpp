#include "cetrec/positional.hpp"

#include <cmath>
#include <string>

#include "cetrec/errors.hpp"

namespace cetrec {

namespace {

double inverse_frequency(std::size_t pair, std::size_t dim) {
  return 1.0 / std::pow(10000.0, static_cast<double>(2 * pair) / static_cast<double>(dim));
}

void require_even(std::size_t dim, const char* what) {
  if (dim == 0 || dim % 2 != 0) {
    throw ConfigError(std::string(what) + " dimension must be even and positive, got " + std::to_string(dim));
  }
}

}  // namespace

std::vector<double> sinpe(int k, std::size_t dim) {
  require_even(dim, "sinusoidal embedding");
  if (k < 0) {
    throw IndexError("sinusoidal index must be non-negative, got " + std::to_string(k));
  }
  std::vector<double> out(dim);
  for (std::size_t t = 0; t < dim / 2; ++t) {
    const double angle = static_cast<double>(k) * inverse_frequency(t, dim);
    out[2 * t] = std::sin(angle);
    out[2 * t + 1] = std::cos(angle);
  }
  return out;
}

SinusoidalTable::SinusoidalTable(int max_index, std::size_t dim) : max_index_(max_index), dim_(dim) {
  require_even(dim, "sinusoidal table");
  rows_.reserve(static_cast<std::size_t>(max_index + 1) * dim);
  for (int k = 0; k <= max_index; ++k) {
    const auto r = sinpe(k, dim);
    rows_.insert(rows_.end(), r.begin(), r.end());
  }
}

std::span<const double> SinusoidalTable::row(int k) const {
  if (k < 0 || k > max_index_) {
    throw IndexError("sinusoidal index " + std::to_string(k) + " outside table [0, " + std::to_string(max_index_) +
                     "]");
  }
  return {rows_.data() + static_cast<std::size_t>(k) * dim_, dim_};
}

RotaryTable::RotaryTable(int max_position, std::size_t head_dim) : max_position_(max_position), head_dim_(head_dim) {
  require_even(head_dim, "rotary head");
  const std::size_t pairs = head_dim / 2;
  cos_.resize(static_cast<std::size_t>(max_position + 1) * pairs);
  sin_.resize(cos_.size());
  for (int m = 0; m <= max_position; ++m) {
    for (std::size_t t = 0; t < pairs; ++t) {
      const double angle = static_cast<double>(m) * inverse_frequency(t, head_dim);
      cos_[index(m, t)] = std::cos(angle);
      sin_[index(m, t)] = std::sin(angle);
    }
  }
}

void RotaryTable::check(int position) const {
  if (position < 0 || position > max_position_) {
    throw IndexError("rotary position " + std::to_string(position) + " exceeds table size " +
                     std::to_string(max_position_));
  }
}

std::vector<double> rope_apply(std::span<const double> vec, int position, const RotaryTable& table) {
  if (vec.size() != table.head_dim()) {
    throw DimensionError("rope_apply: vector of length " + std::to_string(vec.size()) + " for head dimension " +
                         std::to_string(table.head_dim()));
  }
  table.check(position);
  std::vector<double> out(vec.size());
  for (std::size_t t = 0; t < vec.size() / 2; ++t) {
    const double c = table.cos(position, t);
    const double s = table.sin(position, t);
    out[2 * t] = vec[2 * t] * c - vec[2 * t + 1] * s;
    out[2 * t + 1] = vec[2 * t] * s + vec[2 * t + 1] * c;
  }
  return out;
}

int effective_position(int token_position, std::optional<int> temporal_index, int stride) {
  return temporal_index.has_value() ? token_position + stride * *temporal_index : token_position;
}

std::vector<double> compose_input_embedding(std::span<const double> token_embedding,
                                            std::span<const double> position_embedding,
                                            std::optional<std::span<const double>> temporal_embedding) {
  if (position_embedding.size() != token_embedding.size() ||
      (temporal_embedding && temporal_embedding->size() != token_embedding.size())) {
    throw DimensionError("compose_input_embedding: embedding dimensions differ");
  }
  std::vector<double> out(token_embedding.size());
  for (std::size_t i = 0; i < out.size(); ++i) {
    out[i] = token_embedding[i] + position_embedding[i];
    if (temporal_embedding) {
      out[i] += (*temporal_embedding)[i];
    }
  }
  return out;
}

Var rope(Var x, std::span<const int> positions, std::size_t n_heads, const RotaryTable& table) {
  const Tensor& xv = x.value();
  const std::size_t n = xv.rows();
  const std::size_t d = xv.cols();
  if (positions.size() != n) {
    throw DimensionError("rope: " + std::to_string(positions.size()) + " positions for " + xv.shape_string());
  }
  if (n_heads == 0 || d != n_heads * table.head_dim()) {
    throw DimensionError("rope: width " + std::to_string(d) + " is not " + std::to_string(n_heads) + " heads of " +
                         std::to_string(table.head_dim()));
  }
  for (int p : positions) {
    table.check(p);
  }
  const std::size_t dh = table.head_dim();
  Tensor out = Tensor::zeros(xv.shape());
  for (std::size_t r = 0; r < n; ++r) {
    for (std::size_t h = 0; h < n_heads; ++h) {
      const double* src = xv.ptr() + r * d + h * dh;
      double* dst = out.ptr() + r * d + h * dh;
      for (std::size_t t = 0; t < dh / 2; ++t) {
        const double c = table.cos(positions[r], t);
        const double s = table.sin(positions[r], t);
        dst[2 * t] = src[2 * t] * c - src[2 * t + 1] * s;
        dst[2 * t + 1] = src[2 * t] * s + src[2 * t + 1] * c;
      }
    }
  }
  return x.tape->push("rope", std::move(out), {x},
                      [x = x.id, pos = std::vector<int>(positions.begin(), positions.end()), &table, n_heads, d,
                       dh](Tape& t, int self) {
                        // transpose of the rotation
                        const Tensor& g = t.grad_of(self);
                        Tensor& gx = t.grad_buffer(x);
                        for (std::size_t r = 0; r < pos.size(); ++r) {
                          for (std::size_t h = 0; h < n_heads; ++h) {
                            const double* src = g.ptr() + r * d + h * dh;
                            double* dst = gx.ptr() + r * d + h * dh;
                            for (std::size_t p = 0; p < dh / 2; ++p) {
                              const double c = table.cos(pos[r], p);
                              const double s = table.sin(pos[r], p);
                              dst[2 * p] += src[2 * p] * c + src[2 * p + 1] * s;
                              dst[2 * p + 1] += -src[2 * p] * s + src[2 * p + 1] * c;
                            }
                          }
                        }
                      });
}

}  // namespace cetrec
