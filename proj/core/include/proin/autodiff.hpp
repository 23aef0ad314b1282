#pragma once

// Reverse-mode differentiation over dense row-major matrices.
//
// A Tape records every primitive applied to Vars. Values are computed eagerly;
// Tape::backward walks the records in reverse and accumulates vector-Jacobian
// products. Nodes whose inputs are all constants are recorded as constants and
// never receive gradient.

#include <Eigen/Core>

#include <cstdint>
#include <functional>
#include <map>
#include <span>
#include <string>
#include <vector>

namespace proin::ad {

using Matrix = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using Index = Eigen::Index;

// Every tensor in the engine is rank 2; rank-1 quantities are stored as 1 x n.
using Tensor = Matrix;

std::string shape_string(const Matrix& m);

class Tape;

class Var {
 public:
  Var() = default;

  const Matrix& value() const;
  Index rows() const { return value().rows(); }
  Index cols() const { return value().cols(); }
  bool valid() const { return tape_ != nullptr; }
  Tape* tape() const { return tape_; }
  int id() const { return id_; }

 private:
  friend class Tape;
  Var(Tape* tape, int id) : tape_(tape), id_(id) {}

  Tape* tape_ = nullptr;
  int id_ = -1;
};

// Named parameters with a gradient slot each. Iteration order is the
// lexicographic order of paths, which fixes the order of every reduction
// done over parameters.
class ParamStore {
 public:
  void add(const std::string& path, Matrix value);
  bool contains(const std::string& path) const;

  const Matrix& value(const std::string& path) const;
  Matrix& value(const std::string& path);
  const Matrix& grad(const std::string& path) const;
  Matrix& grad(const std::string& path);

  std::vector<std::string> paths() const;
  std::size_t size() const { return entries_.size(); }
  std::size_t scalar_count() const;

  void zero_grad();
  double grad_norm() const;
  void scale_grad(double factor);

  // Adds `other`'s gradients into this store. Both stores must hold the same
  // paths with the same shapes.
  void accumulate_grad(const ParamStore& other);

  template <typename Fn>
  void for_each(Fn&& fn) {
    for (auto& [path, e] : entries_) fn(path, e.value, e.grad);
  }
  template <typename Fn>
  void for_each(Fn&& fn) const {
    for (const auto& [path, e] : entries_) fn(path, e.value, e.grad);
  }

 private:
  struct Entry {
    Matrix value;
    Matrix grad;
  };
  const Entry& entry(const std::string& path) const;
  Entry& entry(const std::string& path);

  std::map<std::string, Entry> entries_;
};

class Tape {
 public:
  using Backward = std::function<void(Tape&, const Matrix& out_grad)>;

  Tape() = default;
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  Var constant(Matrix value);
  Var scalar(double value);

  // Leaf that receives gradient; read it back with grad() after backward().
  Var variable(Matrix value);

  // Binds a ParamStore entry. The same path binds to one node per tape; the
  // value is referenced, not copied, so the store must outlive the tape.
  // All parameters of one tape must come from the same store.
  Var param(const ParamStore& store, const std::string& path);

  // Records an op. `parents` decide whether the result needs gradient.
  Var record(Matrix value, std::initializer_list<Var> parents, Backward backward);
  Var record(Matrix value, std::span<const Var> parents, Backward backward);

  const Matrix& value(int id) const;
  bool requires_grad(int id) const { return nodes_[id].requires_grad; }

  // Adds `contribution` into the gradient of node `id` (no-op for constants).
  void accumulate(int id, const Matrix& contribution);
  Matrix& grad_slot(int id);
  // Evaluates `expr` into the gradient of `id`, skipping the zero fill when
  // nothing has flowed in yet.
  template <class Expr>
  void accumulate_expr(int id, const Expr& expr) {
    Node& n = nodes_[id];
    if (!n.requires_grad) return;
    if (n.has_grad) {
      n.grad.noalias() += expr;
    } else {
      n.grad.noalias() = expr;
      n.has_grad = true;
    }
  }

  // Seeds d(root)/d(root) = 1 and propagates. Root must be 1 x 1.
  void backward(const Var& root);

  // Gradient of a node after backward(); zero matrix if nothing flowed in.
  Matrix grad(const Var& v) const;

  // Adds gradients of every bound parameter into store.grad(path).
  void accumulate_param_grads(ParamStore& store) const;

  std::size_t size() const { return nodes_.size(); }

 private:
  struct Node {
    Matrix own;
    const Matrix* external = nullptr;
    Matrix grad;
    bool has_grad = false;
    bool requires_grad = false;
    Backward backward;
    const Matrix& value() const { return external ? *external : own; }
  };

  std::vector<Node> nodes_;
  std::map<std::string, int> bound_params_;
  const ParamStore* store_ = nullptr;
};

// ---- primitives ----------------------------------------------------------

Var matmul(const Var& a, const Var& b);
Var add(const Var& a, const Var& b);
Var sub(const Var& a, const Var& b);
Var mul(const Var& a, const Var& b);
Var scale(const Var& a, double factor);
Var add_scalar(const Var& a, double c);
// a (n x m) + row (1 x m) broadcast over rows.
Var add_row(const Var& a, const Var& row);
Var relu(const Var& a);
Var tanh(const Var& a);
Var sigmoid(const Var& a);
Var square(const Var& a);
// Elementwise smooth-L1: 0.5 x^2 for |x| < 1, |x| - 0.5 otherwise.
Var smooth_l1(const Var& a);
Var sum(const Var& a);

Var concat_cols(std::span<const Var> parts);
Var concat_rows(std::span<const Var> parts);
Var slice_cols(const Var& a, Index start, Index count);
Var slice_rows(const Var& a, Index start, Index count);

// out.row(r) = a.row(index[r]).
Var gather_rows(const Var& a, std::span<const int> index);
// out.row(index[r]) += a.row(r); out has `out_rows` rows.
Var scatter_add_rows(const Var& a, std::span<const int> index, Index out_rows);

// Per-channel softmax over the rows that share a segment id. Every channel of
// every nonempty segment sums to one. Segments without rows produce nothing.
Var segment_softmax(const Var& a, std::span<const int> segment, Index segments);

// Softmax across the columns of each row.
Var row_softmax(const Var& a);

// Cumulative sum over time of an interleaved trajectory row
// (x1, y1, x2, y2, ...): out[:, 2t + c] = sum_{s <= t} a[:, 2s + c].
Var cumsum_steps(const Var& a, Index channels = 2);

// Value and gradient slot without any record; the result is a constant.
Var detach(const Var& a);

// ---- composite layers -----------------------------------------------------

struct RecurrentState {
  Var hidden;
  Var cell;
};

// One step of a gated recurrent cell (input, forget, candidate, output gates,
// in that column order). input_w: in x 4h, hidden_w: h x 4h, bias: 1 x 4h.
RecurrentState recurrent_step(const Var& x, const RecurrentState& state, const Var& input_w,
                              const Var& hidden_w, const Var& bias);

// Evaluates `loss` on a fresh tape, zeroes and fills params' gradients, and
// returns the loss value. Parameters that the loss never touches keep a zero
// gradient.
double value_and_grad(const std::function<Var(Tape&)>& loss, ParamStore& params);

}  // namespace proin::ad
