// SPDX-License-Identifier: Apache-2.0
//
// Minimal batched reverse-mode differentiation.
//
// Values on the tape are row-major matrices whose rows index batch entries
// (points). Trainable parameters live in a ParamStore as one flat buffer with
// a mirrored gradient buffer; ops that read parameters accumulate into that
// buffer during the backward sweep. Accumulation is additive: callers zero the
// gradients between steps.
#pragma once

#include "sdf/core.hpp"

#include <algorithm>
#include <cmath>
#include <functional>
#include <numeric>
#include <optional>
#include <random>
#include <span>
#include <string>
#include <thread>
#include <utility>
#include <vector>

namespace sdf::ad {

enum class ParamGroup { mlp, grid, codes };

inline const char* group_name(ParamGroup g) {
  switch (g) {
    case ParamGroup::mlp: return "mlp";
    case ParamGroup::grid: return "grid";
    case ParamGroup::codes: return "codes";
  }
  return "?";
}

struct ParamId {
  std::size_t index = static_cast<std::size_t>(-1);
  bool valid() const noexcept { return index != static_cast<std::size_t>(-1); }
  friend bool operator==(ParamId, ParamId) = default;
};

using Shape = std::vector<std::size_t>;

inline std::size_t shape_count(const Shape& s) {
  return std::accumulate(s.begin(), s.end(), std::size_t{1}, std::multiplies<>());
}

class ParamStore {
 public:
  struct Entry {
    std::string name;
    Shape shape;
    ParamGroup group;
    std::size_t offset;
    std::size_t count;
  };

  ParamId add(std::string name, Shape shape, ParamGroup group) {
    if (find(name)) throw InvalidArgument("ParamStore: duplicate parameter " + name);
    const std::size_t count = shape_count(shape);
    entries_.push_back({std::move(name), std::move(shape), group, values_.size(), count});
    values_.resize(values_.size() + count, 0.0);
    grads_.resize(values_.size(), 0.0);
    return {entries_.size() - 1};
  }

  std::optional<ParamId> find(const std::string& name) const {
    for (std::size_t i = 0; i < entries_.size(); ++i)
      if (entries_[i].name == name) return ParamId{i};
    return std::nullopt;
  }

  const Entry& entry(ParamId id) const { return entries_.at(id.index); }
  const std::vector<Entry>& entries() const noexcept { return entries_; }
  std::size_t size() const noexcept { return entries_.size(); }
  std::size_t total_count() const noexcept { return values_.size(); }

  std::span<double> values(ParamId id) {
    const auto& e = entry(id);
    return {values_.data() + e.offset, e.count};
  }
  std::span<const double> values(ParamId id) const {
    const auto& e = entry(id);
    return {values_.data() + e.offset, e.count};
  }
  std::span<double> grads(ParamId id) {
    const auto& e = entry(id);
    return {grads_.data() + e.offset, e.count};
  }
  std::span<const double> grads(ParamId id) const {
    const auto& e = entry(id);
    return {grads_.data() + e.offset, e.count};
  }

  std::span<double> all_values() noexcept { return values_; }
  std::span<const double> all_values() const noexcept { return values_; }
  std::span<double> all_grads() noexcept { return grads_; }
  std::span<const double> all_grads() const noexcept { return grads_; }

  /// View a parameter as a (rows x cols) row-major matrix, rows*cols == count.
  Eigen::Map<Matrix> matrix(ParamId id, std::size_t rows, std::size_t cols) {
    auto v = values(id);
    check_view(v.size(), rows, cols);
    return {v.data(), static_cast<Eigen::Index>(rows), static_cast<Eigen::Index>(cols)};
  }
  Eigen::Map<const Matrix> matrix(ParamId id, std::size_t rows, std::size_t cols) const {
    auto v = values(id);
    check_view(v.size(), rows, cols);
    return {v.data(), static_cast<Eigen::Index>(rows), static_cast<Eigen::Index>(cols)};
  }
  Eigen::Map<Matrix> grad_matrix(ParamId id, std::size_t rows, std::size_t cols) {
    auto g = grads(id);
    check_view(g.size(), rows, cols);
    return {g.data(), static_cast<Eigen::Index>(rows), static_cast<Eigen::Index>(cols)};
  }

  void zero_grad() { std::fill(grads_.begin(), grads_.end(), 0.0); }

  /// Incremented on every parameter update; cached forward values compare it.
  std::uint64_t version() const noexcept { return version_; }
  void bump_version() noexcept { ++version_; }

 private:
  static void check_view(std::size_t count, std::size_t rows, std::size_t cols) {
    if (rows * cols != count) throw InvalidArgument("ParamStore: matrix view shape mismatch");
  }

  std::vector<Entry> entries_;
  std::vector<double> values_;
  std::vector<double> grads_;
  std::uint64_t version_ = 0;
};

class Tape;

/// Handle to a node on a tape.
struct Var {
  Tape* tape = nullptr;
  std::size_t id = 0;

  const Matrix& value() const;
  Eigen::Index rows() const { return value().rows(); }
  Eigen::Index cols() const { return value().cols(); }
};

class Tape {
 public:
  using BackwardFn = std::function<void(Tape&, const Matrix& out_grad)>;

  Tape() = default;
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  /// Records a node. `backward` receives the node's accumulated gradient and
  /// must propagate it to inputs (via add_grad) and parameters.
  Var push(Matrix value, BackwardFn backward = {}) {
    if (consumed_) throw StateError("Tape: recording on a consumed tape; call reset() first");
    nodes_.push_back({std::move(value), Matrix(), std::move(backward)});
    return {this, nodes_.size() - 1};
  }

  Var constant(Matrix value) { return push(std::move(value)); }

  const Matrix& value(std::size_t id) const { return nodes_.at(id).value; }
  const Matrix& value(Var v) const { return value(v.id); }

  void add_grad(Var v, const Matrix& g) {
    auto& n = nodes_.at(v.id);
    if (n.grad.size() == 0) {
      n.grad = g;
    } else {
      n.grad += g;
    }
  }

  /// Gradient of a node after backward(); zero if the node was unreachable.
  Matrix grad(Var v) const {
    const auto& n = nodes_.at(v.id);
    if (n.grad.size() == 0) return Matrix::Zero(n.value.rows(), n.value.cols());
    return n.grad;
  }

  /// Reverse sweep from `output` seeded with `output_grad`. Visits nodes in
  /// exact reverse recording order. A tape can be swept once per forward.
  void backward(Var output, const Matrix& output_grad) {
    if (consumed_) throw StateError("Tape: backward called twice without a new forward");
    if (output.tape != this) throw InvalidArgument("Tape: output belongs to another tape");
    const auto& out = nodes_.at(output.id).value;
    if (output_grad.rows() != out.rows() || output_grad.cols() != out.cols())
      throw InvalidArgument("Tape: output_grad shape mismatch");
    consumed_ = true;
    add_grad(output, output_grad);
    for (std::size_t i = output.id + 1; i-- > 0;) {
      auto& n = nodes_[i];
      if (n.grad.size() == 0 || !n.backward) continue;
      // Inputs always precede their consumers, so n.grad is final here.
      n.backward(*this, n.grad);
    }
  }

  /// Seeds a scalar (1x1) output with 1.
  void backward(Var scalar_output) {
    backward(scalar_output, Matrix::Ones(1, 1));
  }

  bool consumed() const noexcept { return consumed_; }
  std::size_t size() const noexcept { return nodes_.size(); }

  void reset() {
    nodes_.clear();
    consumed_ = false;
  }

 private:
  struct Node {
    Matrix value;
    Matrix grad;
    BackwardFn backward;
  };
  std::vector<Node> nodes_;
  bool consumed_ = false;
};

inline const Matrix& Var::value() const { return tape->value(id); }

inline void backward(Tape& tape, Var output, const Matrix& output_grad) {
  tape.backward(output, output_grad);
}

// ---------------------------------------------------------------------------
// Deterministic reduction
//
// Sums are formed over fixed blocks of kReduceBlock elements, then the block
// partials are added in block order. The block layout does not depend on the
// number of worker threads, so threaded and sequential calls return bitwise
// identical results. Relative deviation from a naive left-to-right sum is
// bounded by roughly n * eps, below 1e-10 for any practical n.

inline constexpr std::size_t kReduceBlock = 512;

inline double reduce_sum(std::span<const double> x, unsigned threads = 0) {
  const std::size_t n_blocks = (x.size() + kReduceBlock - 1) / kReduceBlock;
  std::vector<double> partial(n_blocks, 0.0);
  auto run = [&](std::size_t b0, std::size_t b1) {
    for (std::size_t b = b0; b < b1; ++b) {
      const std::size_t lo = b * kReduceBlock;
      const std::size_t hi = std::min(x.size(), lo + kReduceBlock);
      double s = 0.0;
      for (std::size_t i = lo; i < hi; ++i) s += x[i];
      partial[b] = s;
    }
  };
  if (threads <= 1 || n_blocks < 2) {
    run(0, n_blocks);
  } else {
    std::vector<std::thread> pool;
    const std::size_t per = (n_blocks + threads - 1) / threads;
    for (std::size_t b = 0; b < n_blocks; b += per)
      pool.emplace_back(run, b, std::min(n_blocks, b + per));
    for (auto& t : pool) t.join();
  }
  double total = 0.0;
  for (double p : partial) total += p;
  return total;
}

inline double reduce_sum(const Matrix& m, unsigned threads = 0) {
  return reduce_sum(std::span<const double>(m.data(), static_cast<std::size_t>(m.size())), threads);
}

// ---------------------------------------------------------------------------
// Primitive ops

inline void check_same_shape(const Matrix& a, const Matrix& b, const char* op) {
  if (a.rows() != b.rows() || a.cols() != b.cols())
    throw InvalidArgument(std::string(op) + ": shape mismatch");
}

/// input (B x Cin) * W (Cin x Cout) + b (Cout), with W and b read from the store.
inline Var forward_linear(Var input, ParamStore& store, ParamId weight, ParamId bias) {
  Tape& tape = *input.tape;
  const auto& ws = store.entry(weight).shape;
  if (ws.size() != 2) throw InvalidArgument("forward_linear: weight must be 2-D");
  const std::size_t cin = ws[0], cout = ws[1];
  if (static_cast<std::size_t>(input.cols()) != cin)
    throw InvalidArgument("forward_linear: input width does not match weight rows");
  if (store.entry(bias).count != cout) throw InvalidArgument("forward_linear: bias size mismatch");
  const auto W = store.matrix(weight, cin, cout);
  const auto b = store.matrix(bias, 1, cout);
  Matrix out = input.value() * W;
  out.rowwise() += b.row(0);
  return tape.push(std::move(out), [input, &store, weight, bias, cin, cout](Tape& t, const Matrix& g) {
    const auto W = store.matrix(weight, cin, cout);
    t.add_grad(input, g * W.transpose());
    store.grad_matrix(weight, cin, cout).noalias() += t.value(input).transpose() * g;
    store.grad_matrix(bias, 1, cout) += g.colwise().sum();
  });
}

enum class ActivationKind { sine, relu };

struct Activation {
  ActivationKind kind = ActivationKind::relu;
  double w0 = 30.0;

  static Activation sine(double w0) { return {ActivationKind::sine, w0}; }
  static Activation relu() { return {ActivationKind::relu, 0.0}; }
};

inline Var activation(Var x, Activation act) {
  Tape& tape = *x.tape;
  if (act.kind == ActivationKind::sine) {
    if (!(act.w0 > 0.0)) throw InvalidArgument("activation: sine requires w0 > 0");
    const double w0 = act.w0;
    Matrix out = (w0 * x.value().array()).sin().matrix();
    return tape.push(std::move(out), [x, w0](Tape& t, const Matrix& g) {
      t.add_grad(x, (g.array() * w0 * (w0 * t.value(x).array()).cos()).matrix());
    });
  }
  Matrix out = x.value().cwiseMax(0.0);
  return tape.push(std::move(out), [x](Tape& t, const Matrix& g) {
    t.add_grad(x, (g.array() * (t.value(x).array() > 0.0).cast<double>()).matrix());
  });
}

inline Var add(Var a, Var b) {
  check_same_shape(a.value(), b.value(), "add");
  return a.tape->push(a.value() + b.value(), [a, b](Tape& t, const Matrix& g) {
    t.add_grad(a, g);
    t.add_grad(b, g);
  });
}

inline Var sub(Var a, Var b) {
  check_same_shape(a.value(), b.value(), "sub");
  return a.tape->push(a.value() - b.value(), [a, b](Tape& t, const Matrix& g) {
    t.add_grad(a, g);
    t.add_grad(b, -g);
  });
}

inline Var mul(Var a, Var b) {
  check_same_shape(a.value(), b.value(), "mul");
  return a.tape->push(a.value().cwiseProduct(b.value()), [a, b](Tape& t, const Matrix& g) {
    t.add_grad(a, g.cwiseProduct(t.value(b)));
    t.add_grad(b, g.cwiseProduct(t.value(a)));
  });
}

inline Var scale(Var a, double s) {
  return a.tape->push(s * a.value(), [a, s](Tape& t, const Matrix& g) { t.add_grad(a, s * g); });
}

/// sum_k coeffs[k] * terms[k]; all terms share a shape.
inline Var lincomb(std::span<const Var> terms, std::span<const double> coeffs) {
  if (terms.empty() || terms.size() != coeffs.size())
    throw InvalidArgument("lincomb: terms and coefficients must be non-empty and equal length");
  Matrix out = coeffs[0] * terms[0].value();
  for (std::size_t k = 1; k < terms.size(); ++k) {
    check_same_shape(out, terms[k].value(), "lincomb");
    out += coeffs[k] * terms[k].value();
  }
  std::vector<Var> ts(terms.begin(), terms.end());
  std::vector<double> cs(coeffs.begin(), coeffs.end());
  return terms[0].tape->push(std::move(out), [ts, cs](Tape& t, const Matrix& g) {
    for (std::size_t k = 0; k < ts.size(); ++k)
      if (cs[k] != 0.0) t.add_grad(ts[k], cs[k] * g);
  });
}

inline Var concat_cols(std::span<const Var> parts) {
  if (parts.empty()) throw InvalidArgument("concat_cols: no inputs");
  const Eigen::Index rows = parts[0].rows();
  Eigen::Index cols = 0;
  for (const auto& p : parts) {
    if (p.rows() != rows) throw InvalidArgument("concat_cols: row count mismatch");
    cols += p.cols();
  }
  Matrix out(rows, cols);
  Eigen::Index c = 0;
  for (const auto& p : parts) {
    out.middleCols(c, p.cols()) = p.value();
    c += p.cols();
  }
  std::vector<Var> ps(parts.begin(), parts.end());
  return parts[0].tape->push(std::move(out), [ps](Tape& t, const Matrix& g) {
    Eigen::Index c = 0;
    for (const auto& p : ps) {
      const Eigen::Index w = t.value(p).cols();
      if (w > 0) t.add_grad(p, g.middleCols(c, w));
      c += w;
    }
  });
}

inline Var concat_rows(std::span<const Var> parts) {
  if (parts.empty()) throw InvalidArgument("concat_rows: no inputs");
  const Eigen::Index cols = parts[0].cols();
  Eigen::Index rows = 0;
  for (const auto& p : parts) {
    if (p.cols() != cols) throw InvalidArgument("concat_rows: column count mismatch");
    rows += p.rows();
  }
  Matrix out(rows, cols);
  Eigen::Index r = 0;
  for (const auto& p : parts) {
    out.middleRows(r, p.rows()) = p.value();
    r += p.rows();
  }
  std::vector<Var> ps(parts.begin(), parts.end());
  return parts[0].tape->push(std::move(out), [ps](Tape& t, const Matrix& g) {
    Eigen::Index r = 0;
    for (const auto& p : ps) {
      const Eigen::Index h = t.value(p).rows();
      if (h > 0) t.add_grad(p, g.middleRows(r, h));
      r += h;
    }
  });
}

inline Var slice_cols(Var x, Eigen::Index begin, Eigen::Index count) {
  if (begin < 0 || count < 0 || begin + count > x.cols())
    throw InvalidArgument("slice_cols: range out of bounds");
  Matrix out = x.value().middleCols(begin, count);
  const Eigen::Index total = x.cols();
  return x.tape->push(std::move(out), [x, begin, count, total](Tape& t, const Matrix& g) {
    Matrix full = Matrix::Zero(g.rows(), total);
    full.middleCols(begin, count) = g;
    t.add_grad(x, full);
  });
}

inline Var gather_rows(Var x, std::vector<std::size_t> rows) {
  Matrix out(static_cast<Eigen::Index>(rows.size()), x.cols());
  for (std::size_t i = 0; i < rows.size(); ++i) {
    if (rows[i] >= static_cast<std::size_t>(x.rows())) throw InvalidArgument("gather_rows: index out of range");
    out.row(static_cast<Eigen::Index>(i)) = x.value().row(static_cast<Eigen::Index>(rows[i]));
  }
  return x.tape->push(std::move(out), [x, rows = std::move(rows)](Tape& t, const Matrix& g) {
    Matrix full = Matrix::Zero(t.value(x).rows(), t.value(x).cols());
    for (std::size_t i = 0; i < rows.size(); ++i)
      full.row(static_cast<Eigen::Index>(rows[i])) += g.row(static_cast<Eigen::Index>(i));
    t.add_grad(x, full);
  });
}

/// Sum of all entries as a 1x1 node.
inline Var sum_all(Var x) {
  Matrix out(1, 1);
  out(0, 0) = reduce_sum(x.value());
  const Eigen::Index r = x.rows(), c = x.cols();
  return x.tape->push(std::move(out), [x, r, c](Tape& t, const Matrix& g) {
    t.add_grad(x, Matrix::Constant(r, c, g(0, 0)));
  });
}

/// Read a parameter into the tape as a (rows x cols) node.
inline Var param_leaf(Tape& tape, ParamStore& store, ParamId id, std::size_t rows, std::size_t cols) {
  Matrix v = store.matrix(id, rows, cols);
  return tape.push(std::move(v), [&store, id, rows, cols](Tape&, const Matrix& g) {
    store.grad_matrix(id, rows, cols) += g;
  });
}

// ---------------------------------------------------------------------------
// Finite-difference verification

struct FdReport {
  double max_rel_error = 0.0;
  std::size_t worst_index = 0;
  double worst_analytic = 0.0;
  double worst_numeric = 0.0;
};

/// Compares analytic gradients against central differences at `samples`
/// randomly chosen coordinates of the store's flat parameter buffer.
///
/// `loss_and_grad` must zero the store's gradients, evaluate, backprop, and
/// return the scalar loss. The relative error at a coordinate is
/// |a - f| / max(|a|, |f|), falling back to the absolute error |a - f| when
/// both magnitudes are below 1e-8.
inline FdReport fd_check(const std::function<double(ParamStore&)>& loss_and_grad, ParamStore& store,
                         double eps, std::size_t samples, std::uint64_t seed = 0) {
  if (!(eps > 0.0)) throw InvalidArgument("fd_check: eps must be positive");
  const std::size_t n = store.total_count();
  if (n == 0) return {};
  const double base = loss_and_grad(store);
  if (!std::isfinite(base)) throw NumericError("fd_check: non-finite loss at base point", 0);
  const std::vector<double> analytic(store.all_grads().begin(), store.all_grads().end());

  std::vector<std::size_t> coords(n);
  std::iota(coords.begin(), coords.end(), std::size_t{0});
  std::mt19937_64 rng(seed);
  if (samples < n) {
    std::shuffle(coords.begin(), coords.end(), rng);
    coords.resize(samples);
  }

  FdReport rep;
  auto vals = store.all_values();
  for (std::size_t idx : coords) {
    const double orig = vals[idx];
    vals[idx] = orig + eps;
    const double fp = loss_and_grad(store);
    vals[idx] = orig - eps;
    const double fm = loss_and_grad(store);
    vals[idx] = orig;
    if (!std::isfinite(fp) || !std::isfinite(fm))
      throw NumericError("fd_check: non-finite loss at coordinate " + std::to_string(idx), idx);
    const double numeric = (fp - fm) / (2.0 * eps);
    const double a = analytic[idx];
    const double mag = std::max(std::abs(a), std::abs(numeric));
    const double err = mag < 1e-8 ? std::abs(a - numeric) : std::abs(a - numeric) / mag;
    if (err >= rep.max_rel_error) rep = {err, idx, a, numeric};
  }
  // Leave the store's gradient buffer holding the base-point gradient.
  std::copy(analytic.begin(), analytic.end(), store.all_grads().begin());
  return rep;
}

}  // namespace sdf::ad
