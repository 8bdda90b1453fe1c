#include "cetrec/numerics.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>
#include <sstream>

#include <Eigen/Dense>

#include "cetrec/errors.hpp"

namespace cetrec {

namespace {

using RowMatrix = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using MapConst = Eigen::Map<const RowMatrix>;
using MapMut = Eigen::Map<RowMatrix>;

MapConst view(const Tensor& t) {
  return {t.ptr(), static_cast<Eigen::Index>(t.rows()), static_cast<Eigen::Index>(t.cols())};
}

MapMut view(Tensor& t) {
  return {t.ptr(), static_cast<Eigen::Index>(t.rows()), static_cast<Eigen::Index>(t.cols())};
}

std::size_t product(const std::vector<std::size_t>& shape) {
  return std::accumulate(shape.begin(), shape.end(), std::size_t{1}, std::multiplies<>());
}

[[noreturn]] void shape_error(std::string_view op, const Tensor& a, const Tensor& b) {
  throw DimensionError(std::string(op) + ": incompatible shapes " + a.shape_string() + " and " +
                       b.shape_string());
}

Tensor like(const Tensor& t) { return Tensor::zeros(t.shape()); }

Tape& tape_of(Var a) {
  if (a.tape == nullptr) {
    throw UsageError("operation on a detached Var");
  }
  return *a.tape;
}

Tape& tape_of(Var a, Var b) {
  if (a.tape != b.tape) {
    throw UsageError("operands recorded on different tapes");
  }
  return tape_of(a);
}

}  // namespace

// ---------------------------------------------------------------------------
// Tensor

Tensor::Tensor(std::vector<std::size_t> shape, std::vector<double> data)
    : shape_(std::move(shape)), data_(std::move(data)) {
  if (product(shape_) != data_.size()) {
    throw DimensionError("tensor shape " + shape_string() + " does not match data length " +
                         std::to_string(data_.size()));
  }
}

Tensor Tensor::zeros(std::vector<std::size_t> shape) {
  const auto n = product(shape);
  return {std::move(shape), std::vector<double>(n, 0.0)};
}

Tensor Tensor::scalar(double value) { return {{}, {value}}; }

Tensor Tensor::matrix(std::size_t rows, std::size_t cols, std::vector<double> data) {
  return {{rows, cols}, std::move(data)};
}

Tensor Tensor::matrix(std::initializer_list<std::initializer_list<double>> rows) {
  const std::size_t r = rows.size();
  const std::size_t c = r == 0 ? 0 : rows.begin()->size();
  std::vector<double> data;
  data.reserve(r * c);
  for (const auto& row : rows) {
    if (row.size() != c) {
      throw DimensionError("ragged matrix literal");
    }
    data.insert(data.end(), row.begin(), row.end());
  }
  return {{r, c}, std::move(data)};
}

std::size_t Tensor::rows() const {
  if (shape_.size() <= 1) {
    return 1;
  }
  return product(std::vector<std::size_t>(shape_.begin(), shape_.end() - 1));
}

std::size_t Tensor::cols() const { return shape_.empty() ? 1 : shape_.back(); }

double Tensor::item() const {
  if (data_.size() != 1) {
    throw DimensionError("item() on tensor of shape " + shape_string());
  }
  return data_[0];
}

std::string Tensor::shape_string() const {
  std::ostringstream os;
  os << '[';
  for (std::size_t i = 0; i < shape_.size(); ++i) {
    os << (i ? "x" : "") << shape_[i];
  }
  os << ']';
  return os.str();
}

const Tensor& Var::value() const { return tape->value(id); }

// ---------------------------------------------------------------------------
// Tape

Var Tape::leaf(Tensor value, bool requires_grad) {
  Node node;
  node.value = std::move(value);
  node.requires_grad = requires_grad;
  nodes_.push_back(std::move(node));
  return {this, static_cast<int>(nodes_.size() - 1)};
}

Var Tape::push(std::string_view op, Tensor value, std::initializer_list<Var> inputs, BackwardFn backward) {
  const auto data = value.data();
  for (std::size_t i = 0; i < data.size(); ++i) {
    if (!std::isfinite(data[i])) {
      throw NonFiniteError(std::string(op) + " produced a non-finite value at flat index " + std::to_string(i));
    }
  }
  Node node;
  node.value = std::move(value);
  for (const Var& in : inputs) {
    if (in.tape != this) {
      throw UsageError(std::string(op) + ": input recorded on a different tape");
    }
    node.requires_grad = node.requires_grad || requires_grad(in.id);
  }
  if (node.requires_grad) {
    node.backward = std::move(backward);
  }
  nodes_.push_back(std::move(node));
  return {this, static_cast<int>(nodes_.size() - 1)};
}

Tensor& Tape::grad_buffer(int id) {
  Node& node = nodes_[static_cast<std::size_t>(id)];
  if (!node.has_grad) {
    node.grad = Tensor::zeros(node.value.shape());
    node.has_grad = true;
  }
  return node.grad;
}

Tensor Tape::grad(Var v) const {
  const Node& node = nodes_[static_cast<std::size_t>(v.id)];
  if (node.has_grad) {
    return node.grad;
  }
  return Tensor::zeros(node.value.shape());
}

void Tape::backward(Var loss) {
  if (loss.tape != this) {
    throw UsageError("backward: loss recorded on a different tape");
  }
  if (backward_done_) {
    throw BackwardError("backward called twice on the same tape without reset_grads()");
  }
  if (value(loss).size() != 1) {
    throw DimensionError("backward requires a scalar loss, got shape " + value(loss).shape_string());
  }
  backward_done_ = true;
  grad_buffer(loss.id)[0] = 1.0;
  for (int id = loss.id; id >= 0; --id) {
    Node& node = nodes_[static_cast<std::size_t>(id)];
    if (node.has_grad && node.backward) {
      node.backward(*this, id);
    }
  }
}

void Tape::reset_grads() {
  for (Node& node : nodes_) {
    node.grad = Tensor();
    node.has_grad = false;
  }
  backward_done_ = false;
}

// ---------------------------------------------------------------------------
// Primitives

Var matmul(Var a, Var b) {
  Tape& tape = tape_of(a, b);
  const Tensor& av = a.value();
  const Tensor& bv = b.value();
  if (av.shape().size() != 2 || bv.shape().size() != 2 || av.cols() != bv.rows()) {
    shape_error("matmul", av, bv);
  }
  Tensor out = Tensor::zeros({av.rows(), bv.cols()});
  view(out).noalias() = view(av) * view(bv);
  return tape.push("matmul", std::move(out), {a, b}, [a = a.id, b = b.id](Tape& t, int self) {
    const auto g = view(t.grad_of(self));
    if (t.requires_grad(a)) {
      view(t.grad_buffer(a)).noalias() += g * view(t.value(b)).transpose();
    }
    if (t.requires_grad(b)) {
      view(t.grad_buffer(b)).noalias() += view(t.value(a)).transpose() * g;
    }
  });
}

Var linear(Var x, Var w) {
  Tape& tape = tape_of(x, w);
  const Tensor& xv = x.value();
  const Tensor& wv = w.value();
  if (wv.shape().size() != 2 || xv.cols() != wv.cols()) {
    shape_error("linear", xv, wv);
  }
  Tensor out = Tensor::zeros({xv.rows(), wv.rows()});
  view(out).noalias() = view(xv) * view(wv).transpose();
  return tape.push("linear", std::move(out), {x, w}, [x = x.id, w = w.id](Tape& t, int self) {
    const auto g = view(t.grad_of(self));
    if (t.requires_grad(x)) {
      view(t.grad_buffer(x)).noalias() += g * view(t.value(w));
    }
    if (t.requires_grad(w)) {
      view(t.grad_buffer(w)).noalias() += g.transpose() * view(t.value(x));
    }
  });
}

Var add(Var a, Var b) {
  Tape& tape = tape_of(a, b);
  const Tensor& av = a.value();
  const Tensor& bv = b.value();
  if (!av.same_shape(bv)) {
    shape_error("add", av, bv);
  }
  Tensor out = av;
  view(out) += view(bv);
  return tape.push("add", std::move(out), {a, b}, [a = a.id, b = b.id](Tape& t, int self) {
    const auto g = view(t.grad_of(self));
    if (t.requires_grad(a)) {
      view(t.grad_buffer(a)) += g;
    }
    if (t.requires_grad(b)) {
      view(t.grad_buffer(b)) += g;
    }
  });
}

Var sub(Var a, Var b) {
  Tape& tape = tape_of(a, b);
  const Tensor& av = a.value();
  const Tensor& bv = b.value();
  if (!av.same_shape(bv)) {
    shape_error("sub", av, bv);
  }
  Tensor out = av;
  view(out) -= view(bv);
  return tape.push("sub", std::move(out), {a, b}, [a = a.id, b = b.id](Tape& t, int self) {
    const auto g = view(t.grad_of(self));
    if (t.requires_grad(a)) {
      view(t.grad_buffer(a)) += g;
    }
    if (t.requires_grad(b)) {
      view(t.grad_buffer(b)) -= g;
    }
  });
}

Var mul(Var a, Var b) {
  Tape& tape = tape_of(a, b);
  const Tensor& av = a.value();
  const Tensor& bv = b.value();
  if (!av.same_shape(bv)) {
    shape_error("mul", av, bv);
  }
  Tensor out = av;
  view(out).array() *= view(bv).array();
  return tape.push("mul", std::move(out), {a, b}, [a = a.id, b = b.id](Tape& t, int self) {
    const auto g = view(t.grad_of(self));
    if (t.requires_grad(a)) {
      view(t.grad_buffer(a)).array() += g.array() * view(t.value(b)).array();
    }
    if (t.requires_grad(b)) {
      view(t.grad_buffer(b)).array() += g.array() * view(t.value(a)).array();
    }
  });
}

Var scale(Var a, double factor) {
  Tape& tape = tape_of(a);
  Tensor out = a.value();
  view(out) *= factor;
  return tape.push("scale", std::move(out), {a}, [a = a.id, factor](Tape& t, int self) {
    view(t.grad_buffer(a)) += factor * view(t.grad_of(self));
  });
}

Var add_rowwise(Var x, Var row) {
  Tape& tape = tape_of(x, row);
  const Tensor& xv = x.value();
  const Tensor& rv = row.value();
  if (rv.rows() != 1 || rv.cols() != xv.cols()) {
    shape_error("add_rowwise", xv, rv);
  }
  Tensor out = xv;
  view(out).rowwise() += view(rv).row(0);
  return tape.push("add_rowwise", std::move(out), {x, row}, [x = x.id, r = row.id](Tape& t, int self) {
    const auto g = view(t.grad_of(self));
    if (t.requires_grad(x)) {
      view(t.grad_buffer(x)) += g;
    }
    if (t.requires_grad(r)) {
      view(t.grad_buffer(r)).row(0) += g.colwise().sum();
    }
  });
}

Var sum(Var a) {
  Tape& tape = tape_of(a);
  double total = 0.0;
  for (double v : a.value().data()) {
    total += v;
  }
  return tape.push("sum", Tensor::scalar(total), {a}, [a = a.id](Tape& t, int self) {
    const double g = t.grad_of(self)[0];
    for (double& v : t.grad_buffer(a).data()) {
      v += g;
    }
  });
}

Var silu(Var a) {
  Tape& tape = tape_of(a);
  Tensor out = a.value();
  for (double& v : out.data()) {
    v = v / (1.0 + std::exp(-v));
  }
  return tape.push("silu", std::move(out), {a}, [a = a.id](Tape& t, int self) {
    const auto x = t.value(a).data();
    const auto g = t.grad_of(self).data();
    auto ga = t.grad_buffer(a).data();
    for (std::size_t i = 0; i < x.size(); ++i) {
      const double s = 1.0 / (1.0 + std::exp(-x[i]));
      ga[i] += g[i] * s * (1.0 + x[i] * (1.0 - s));
    }
  });
}

Var rms_norm(Var x, Var gain, double eps) {
  Tape& tape = tape_of(x, gain);
  const Tensor& xv = x.value();
  const Tensor& gv = gain.value();
  if (gv.size() != xv.cols()) {
    shape_error("rms_norm", xv, gv);
  }
  const std::size_t n = xv.rows();
  const std::size_t d = xv.cols();
  std::vector<double> inv_rms(n);
  Tensor out = like(xv);
  for (std::size_t r = 0; r < n; ++r) {
    const double* xr = xv.ptr() + r * d;
    double ms = 0.0;
    for (std::size_t c = 0; c < d; ++c) {
      ms += xr[c] * xr[c];
    }
    inv_rms[r] = 1.0 / std::sqrt(ms / static_cast<double>(d) + eps);
    double* yr = out.ptr() + r * d;
    for (std::size_t c = 0; c < d; ++c) {
      yr[c] = xr[c] * inv_rms[r] * gv[c];
    }
  }
  return tape.push("rms_norm", std::move(out), {x, gain},
                   [x = x.id, g = gain.id, inv_rms = std::move(inv_rms), n, d](Tape& t, int self) {
                     const Tensor& xv = t.value(x);
                     const Tensor& gv = t.value(g);
                     const Tensor& up = t.grad_of(self);
                     const bool need_x = t.requires_grad(x);
                     const bool need_g = t.requires_grad(g);
                     Tensor* gx = need_x ? &t.grad_buffer(x) : nullptr;
                     Tensor* gg = need_g ? &t.grad_buffer(g) : nullptr;
                     for (std::size_t r = 0; r < n; ++r) {
                       const double* xr = xv.ptr() + r * d;
                       const double* ur = up.ptr() + r * d;
                       const double s = inv_rms[r];
                       if (gg != nullptr) {
                         for (std::size_t c = 0; c < d; ++c) {
                           (*gg)[c] += ur[c] * xr[c] * s;
                         }
                       }
                       if (gx != nullptr) {
                         // dx = s * (dxhat - xhat * mean(dxhat * xhat))
                         double dot = 0.0;
                         for (std::size_t c = 0; c < d; ++c) {
                           dot += ur[c] * gv[c] * xr[c] * s;
                         }
                         dot /= static_cast<double>(d);
                         double* gr = gx->ptr() + r * d;
                         for (std::size_t c = 0; c < d; ++c) {
                           gr[c] += s * (ur[c] * gv[c] - xr[c] * s * dot);
                         }
                       }
                     }
                   });
}

Var embedding(Var table, std::span<const int> ids) {
  Tape& tape = tape_of(table);
  const Tensor& tv = table.value();
  const std::size_t vocab = tv.rows();
  const std::size_t d = tv.cols();
  Tensor out = Tensor::zeros({ids.size(), d});
  for (std::size_t i = 0; i < ids.size(); ++i) {
    if (ids[i] < 0 || static_cast<std::size_t>(ids[i]) >= vocab) {
      throw IndexError("embedding: id " + std::to_string(ids[i]) + " outside table of " + std::to_string(vocab) +
                       " rows");
    }
    std::copy_n(tv.ptr() + static_cast<std::size_t>(ids[i]) * d, d, out.ptr() + i * d);
  }
  return tape.push("embedding", std::move(out), {table},
                   [table = table.id, ids = std::vector<int>(ids.begin(), ids.end()), d](Tape& t, int self) {
                     const Tensor& g = t.grad_of(self);
                     Tensor& gt = t.grad_buffer(table);
                     for (std::size_t i = 0; i < ids.size(); ++i) {
                       double* dst = gt.ptr() + static_cast<std::size_t>(ids[i]) * d;
                       const double* src = g.ptr() + i * d;
                       for (std::size_t c = 0; c < d; ++c) {
                         dst[c] += src[c];
                       }
                     }
                   });
}

Var gather_rows(Var x, std::span<const int> rows) {
  Tape& tape = tape_of(x);
  const Tensor& xv = x.value();
  const std::size_t d = xv.cols();
  Tensor out = Tensor::zeros({rows.size(), d});
  for (std::size_t i = 0; i < rows.size(); ++i) {
    if (rows[i] < 0 || static_cast<std::size_t>(rows[i]) >= xv.rows()) {
      throw IndexError("gather_rows: row " + std::to_string(rows[i]) + " outside " + xv.shape_string());
    }
    std::copy_n(xv.ptr() + static_cast<std::size_t>(rows[i]) * d, d, out.ptr() + i * d);
  }
  return tape.push("gather_rows", std::move(out), {x},
                   [x = x.id, rows = std::vector<int>(rows.begin(), rows.end()), d](Tape& t, int self) {
                     const Tensor& g = t.grad_of(self);
                     Tensor& gx = t.grad_buffer(x);
                     for (std::size_t i = 0; i < rows.size(); ++i) {
                       double* dst = gx.ptr() + static_cast<std::size_t>(rows[i]) * d;
                       const double* src = g.ptr() + i * d;
                       for (std::size_t c = 0; c < d; ++c) {
                         dst[c] += src[c];
                       }
                     }
                   });
}

// ---------------------------------------------------------------------------
// Attention

AttentionLayout AttentionLayout::causal(std::size_t n) {
  std::vector<int> parents(n);
  for (std::size_t r = 0; r < n; ++r) {
    parents[r] = static_cast<int>(r) - 1;
  }
  return from_parents(std::move(parents));
}

AttentionLayout AttentionLayout::from_parents(std::vector<int> parents) {
  AttentionLayout layout;
  const std::size_t n = parents.size();
  std::vector<std::size_t> depth(n, 1);
  for (std::size_t r = 0; r < n; ++r) {
    const int p = parents[r];
    if (p >= static_cast<int>(r) || p < -1) {
      throw InvariantError("attention layout: parent of row " + std::to_string(r) + " is " + std::to_string(p) +
                           " (must precede it)");
    }
    if (p >= 0) {
      depth[r] = depth[static_cast<std::size_t>(p)] + 1;
    }
  }
  layout.offsets_.resize(n + 1, 0);
  for (std::size_t r = 0; r < n; ++r) {
    layout.offsets_[r + 1] = layout.offsets_[r] + depth[r];
  }
  layout.visible_.resize(layout.offsets_[n]);
  for (std::size_t r = 0; r < n; ++r) {
    // walk the ancestor chain backwards, filling from the end
    std::size_t pos = layout.offsets_[r + 1];
    int cur = static_cast<int>(r);
    while (cur >= 0) {
      layout.visible_[--pos] = cur;
      cur = parents[static_cast<std::size_t>(cur)];
    }
  }
  layout.parents_ = std::move(parents);
  return layout;
}

Var masked_attention(Var q, Var k, Var v, std::shared_ptr<const AttentionLayout> layout, std::size_t n_heads) {
  Tape& tape = tape_of(q, k);
  tape_of(q, v);
  const Tensor& qv = q.value();
  const Tensor& kv = k.value();
  const Tensor& vv = v.value();
  if (!qv.same_shape(kv)) {
    shape_error("masked_attention(q,k)", qv, kv);
  }
  if (!qv.same_shape(vv)) {
    shape_error("masked_attention(q,v)", qv, vv);
  }
  const std::size_t n = qv.rows();
  const std::size_t d = qv.cols();
  if (layout == nullptr || layout->rows() != n) {
    throw DimensionError("masked_attention: layout rows do not match " + qv.shape_string());
  }
  if (n_heads == 0 || d % n_heads != 0) {
    throw DimensionError("masked_attention: width " + std::to_string(d) + " not divisible by " +
                         std::to_string(n_heads) + " heads");
  }
  const std::size_t dh = d / n_heads;
  const double inv_sqrt = 1.0 / std::sqrt(static_cast<double>(dh));

  // probs laid out as [visible-slot][head]
  std::vector<double> probs(layout->total_visible() * n_heads);
  Tensor out = like(qv);
  std::vector<double> scores;
  std::size_t slot = 0;
  for (std::size_t r = 0; r < n; ++r) {
    const auto vis = layout->visible(r);
    scores.resize(vis.size());
    for (std::size_t h = 0; h < n_heads; ++h) {
      const double* qr = qv.ptr() + r * d + h * dh;
      double mx = -std::numeric_limits<double>::infinity();
      for (std::size_t j = 0; j < vis.size(); ++j) {
        const double* kr = kv.ptr() + static_cast<std::size_t>(vis[j]) * d + h * dh;
        double s = 0.0;
        for (std::size_t c = 0; c < dh; ++c) {
          s += qr[c] * kr[c];
        }
        scores[j] = s * inv_sqrt;
        mx = std::max(mx, scores[j]);
      }
      double z = 0.0;
      for (double& s : scores) {
        s = std::exp(s - mx);
        z += s;
      }
      double* orow = out.ptr() + r * d + h * dh;
      for (std::size_t j = 0; j < vis.size(); ++j) {
        const double p = scores[j] / z;
        probs[(slot + j) * n_heads + h] = p;
        const double* vr = vv.ptr() + static_cast<std::size_t>(vis[j]) * d + h * dh;
        for (std::size_t c = 0; c < dh; ++c) {
          orow[c] += p * vr[c];
        }
      }
    }
    slot += vis.size();
  }

  return tape.push(
      "masked_attention", std::move(out), {q, k, v},
      [q = q.id, k = k.id, v = v.id, layout = std::move(layout), probs = std::move(probs), n, d, dh, n_heads,
       inv_sqrt](Tape& t, int self) {
        const Tensor& qv = t.value(q);
        const Tensor& kv = t.value(k);
        const Tensor& vv = t.value(v);
        const Tensor& up = t.grad_of(self);
        // Materialise all three buffers; fan-out within one op is summed here.
        Tensor& gq = t.grad_buffer(q);
        Tensor& gk = t.grad_buffer(k);
        Tensor& gv = t.grad_buffer(v);
        std::vector<double> dp;
        std::size_t slot = 0;
        for (std::size_t r = 0; r < n; ++r) {
          const auto vis = layout->visible(r);
          dp.resize(vis.size());
          for (std::size_t h = 0; h < n_heads; ++h) {
            const double* ur = up.ptr() + r * d + h * dh;
            double dot = 0.0;
            for (std::size_t j = 0; j < vis.size(); ++j) {
              const std::size_t row = static_cast<std::size_t>(vis[j]);
              const double p = probs[(slot + j) * n_heads + h];
              const double* vr = vv.ptr() + row * d + h * dh;
              double* gvr = gv.ptr() + row * d + h * dh;
              double s = 0.0;
              for (std::size_t c = 0; c < dh; ++c) {
                s += ur[c] * vr[c];
                gvr[c] += p * ur[c];
              }
              dp[j] = s;
              dot += p * s;
            }
            const double* qr = qv.ptr() + r * d + h * dh;
            double* gqr = gq.ptr() + r * d + h * dh;
            for (std::size_t j = 0; j < vis.size(); ++j) {
              const std::size_t row = static_cast<std::size_t>(vis[j]);
              const double ds = probs[(slot + j) * n_heads + h] * (dp[j] - dot) * inv_sqrt;
              const double* kr = kv.ptr() + row * d + h * dh;
              double* gkr = gk.ptr() + row * d + h * dh;
              for (std::size_t c = 0; c < dh; ++c) {
                gqr[c] += ds * kr[c];
                gkr[c] += ds * qr[c];
              }
            }
          }
          slot += vis.size();
        }
      });
}

// ---------------------------------------------------------------------------
// Losses and value helpers

Tensor softmax_rows(const Tensor& logits) {
  Tensor out = logits;
  const std::size_t n = logits.rows();
  const std::size_t v = logits.cols();
  for (std::size_t r = 0; r < n; ++r) {
    double* row = out.ptr() + r * v;
    const double mx = *std::max_element(row, row + v);
    double z = 0.0;
    for (std::size_t c = 0; c < v; ++c) {
      row[c] = std::exp(row[c] - mx);
      z += row[c];
    }
    for (std::size_t c = 0; c < v; ++c) {
      row[c] /= z;
    }
  }
  return out;
}

Tensor log_softmax_rows(const Tensor& logits) {
  Tensor out = logits;
  const std::size_t n = logits.rows();
  const std::size_t v = logits.cols();
  for (std::size_t r = 0; r < n; ++r) {
    double* row = out.ptr() + r * v;
    const double mx = *std::max_element(row, row + v);
    double z = 0.0;
    for (std::size_t c = 0; c < v; ++c) {
      z += std::exp(row[c] - mx);
    }
    const double lse = mx + std::log(z);
    for (std::size_t c = 0; c < v; ++c) {
      row[c] -= lse;
    }
  }
  return out;
}

Var softmax_cross_entropy(Var logits, std::span<const int> targets, std::span<const double> weights) {
  Tape& tape = tape_of(logits);
  const Tensor& lv = logits.value();
  const std::size_t n = lv.rows();
  const std::size_t vocab = lv.cols();
  if (targets.size() != n || weights.size() != n) {
    throw DimensionError("softmax_cross_entropy: " + std::to_string(targets.size()) + " targets and " +
                         std::to_string(weights.size()) + " weights for logits " + lv.shape_string());
  }
  for (int t : targets) {
    if (t < 0 || static_cast<std::size_t>(t) >= vocab) {
      throw IndexError("softmax_cross_entropy: target " + std::to_string(t) + " outside vocabulary of " +
                       std::to_string(vocab));
    }
  }
  Tensor probs = softmax_rows(lv);
  double loss = 0.0;
  for (std::size_t r = 0; r < n; ++r) {
    const double* row = lv.ptr() + r * vocab;
    const double mx = *std::max_element(row, row + vocab);
    double z = 0.0;
    for (std::size_t c = 0; c < vocab; ++c) {
      z += std::exp(row[c] - mx);
    }
    loss += weights[r] * (mx + std::log(z) - row[static_cast<std::size_t>(targets[r])]);
  }
  return tape.push("softmax_cross_entropy", Tensor::scalar(loss), {logits},
                   [l = logits.id, probs = std::move(probs), tg = std::vector<int>(targets.begin(), targets.end()),
                    w = std::vector<double>(weights.begin(), weights.end()), vocab](Tape& t, int self) {
                     const double g = t.grad_of(self)[0];
                     Tensor& gl = t.grad_buffer(l);
                     for (std::size_t r = 0; r < tg.size(); ++r) {
                       const double f = g * w[r];
                       const double* p = probs.ptr() + r * vocab;
                       double* dst = gl.ptr() + r * vocab;
                       for (std::size_t c = 0; c < vocab; ++c) {
                         dst[c] += f * p[c];
                       }
                       dst[static_cast<std::size_t>(tg[r])] -= f;
                     }
                   });
}

Var softmax_cross_entropy(Var logits_row, int target) {
  if (logits_row.value().rows() != 1) {
    throw DimensionError("softmax_cross_entropy: expected a single row, got " + logits_row.value().shape_string());
  }
  const int targets[] = {target};
  const double weights[] = {1.0};
  return softmax_cross_entropy(logits_row, targets, weights);
}

// ---------------------------------------------------------------------------
// Gradient check

GradCheckResult grad_check(const ScalarFunction& f, const std::vector<Tensor>& params, double eps) {
  auto evaluate = [&](const std::vector<Tensor>& ps, bool with_grad, std::vector<Tensor>* grads) {
    Tape tape;
    std::vector<Var> vars;
    vars.reserve(ps.size());
    for (const Tensor& p : ps) {
      vars.push_back(tape.leaf(p, with_grad));
    }
    Var out = f(tape, vars);
    const double value = out.value().item();
    if (with_grad) {
      tape.backward(out);
      for (const Var& v : vars) {
        grads->push_back(tape.grad(v));
      }
    }
    return value;
  };

  std::vector<Tensor> analytic;
  evaluate(params, true, &analytic);

  GradCheckResult result;
  std::vector<Tensor> work = params;
  for (std::size_t p = 0; p < work.size(); ++p) {
    for (std::size_t i = 0; i < work[p].size(); ++i) {
      const double orig = work[p][i];
      double plus = 0.0;
      double minus = 0.0;
      try {
        work[p][i] = orig + eps;
        plus = evaluate(work, false, nullptr);
        work[p][i] = orig - eps;
        minus = evaluate(work, false, nullptr);
      } catch (const NonFiniteError& e) {
        throw NonFiniteError("grad_check: parameter " + std::to_string(p) + " coordinate " + std::to_string(i) +
                             ": " + e.what());
      }
      work[p][i] = orig;
      const double numeric = (plus - minus) / (2.0 * eps);
      const double a = analytic[p][i];
      const double rel = std::abs(a - numeric) / (std::abs(a) + std::abs(numeric) + 1e-12);
      if (!std::isfinite(numeric)) {
        throw NonFiniteError("grad_check: non-finite numeric gradient at parameter " + std::to_string(p) +
                             " coordinate " + std::to_string(i));
      }
      if (rel > result.max_rel_error) {
        result = {rel, p, i, a, numeric};
      }
    }
  }
  return result;
}

}  // namespace cetrec
