#include "proin/autodiff.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <sstream>
#include <stdexcept>

namespace proin::ad {

std::string shape_string(const Matrix& m) {
  std::ostringstream os;
  os << "[" << m.rows() << " x " << m.cols() << "]";
  return os.str();
}

const Matrix& Var::value() const {
  if (!tape_) throw std::logic_error("Var: use of unbound variable");
  return tape_->value(id_);
}

// ---- ParamStore ----------------------------------------------------------

void ParamStore::add(const std::string& path, Matrix value) {
  if (entries_.count(path)) throw std::invalid_argument("ParamStore: duplicate path '" + path + "'");
  Matrix grad = Matrix::Zero(value.rows(), value.cols());
  entries_.emplace(path, Entry{std::move(value), std::move(grad)});
}

bool ParamStore::contains(const std::string& path) const { return entries_.count(path) != 0; }

const ParamStore::Entry& ParamStore::entry(const std::string& path) const {
  auto it = entries_.find(path);
  if (it == entries_.end()) throw std::out_of_range("ParamStore: unknown path '" + path + "'");
  return it->second;
}

ParamStore::Entry& ParamStore::entry(const std::string& path) {
  auto it = entries_.find(path);
  if (it == entries_.end()) throw std::out_of_range("ParamStore: unknown path '" + path + "'");
  return it->second;
}

const Matrix& ParamStore::value(const std::string& path) const { return entry(path).value; }
Matrix& ParamStore::value(const std::string& path) { return entry(path).value; }
const Matrix& ParamStore::grad(const std::string& path) const { return entry(path).grad; }
Matrix& ParamStore::grad(const std::string& path) { return entry(path).grad; }

std::vector<std::string> ParamStore::paths() const {
  std::vector<std::string> out;
  out.reserve(entries_.size());
  for (const auto& [path, e] : entries_) out.push_back(path);
  return out;
}

std::size_t ParamStore::scalar_count() const {
  std::size_t n = 0;
  for (const auto& [path, e] : entries_) n += static_cast<std::size_t>(e.value.size());
  return n;
}

void ParamStore::zero_grad() {
  for (auto& [path, e] : entries_) e.grad.setZero();
}

double ParamStore::grad_norm() const {
  double sq = 0.0;
  for (const auto& [path, e] : entries_) sq += e.grad.squaredNorm();
  return std::sqrt(sq);
}

void ParamStore::scale_grad(double factor) {
  for (auto& [path, e] : entries_) e.grad *= factor;
}

void ParamStore::accumulate_grad(const ParamStore& other) {
  if (other.entries_.size() != entries_.size())
    throw std::invalid_argument("ParamStore: accumulate_grad over mismatched stores");
  auto it = entries_.begin();
  for (const auto& [path, e] : other.entries_) {
    if (it->first != path) throw std::invalid_argument("ParamStore: path mismatch at '" + path + "'");
    it->second.grad += e.grad;
    ++it;
  }
}

// ---- Tape ----------------------------------------------------------------

Var Tape::constant(Matrix value) {
  Node n;
  n.own = std::move(value);
  nodes_.push_back(std::move(n));
  return Var(this, static_cast<int>(nodes_.size()) - 1);
}

Var Tape::scalar(double value) {
  Matrix m(1, 1);
  m(0, 0) = value;
  return constant(std::move(m));
}

Var Tape::variable(Matrix value) {
  Node n;
  n.own = std::move(value);
  n.requires_grad = true;
  nodes_.push_back(std::move(n));
  return Var(this, static_cast<int>(nodes_.size()) - 1);
}

Var Tape::param(const ParamStore& store, const std::string& path) {
  if (store_ && store_ != &store) throw std::logic_error("Tape::param: a tape binds parameters of one store only");
  store_ = &store;
  if (auto it = bound_params_.find(path); it != bound_params_.end()) return Var(this, it->second);
  Node n;
  n.external = &store.value(path);
  n.requires_grad = true;
  nodes_.push_back(std::move(n));
  const int id = static_cast<int>(nodes_.size()) - 1;
  bound_params_.emplace(path, id);
  return Var(this, id);
}

Var Tape::record(Matrix value, std::initializer_list<Var> parents, Backward backward) {
  return record(std::move(value), std::span<const Var>(parents.begin(), parents.size()),
                std::move(backward));
}

Var Tape::record(Matrix value, std::span<const Var> parents, Backward backward) {
  Node n;
  n.own = std::move(value);
  for (const Var& p : parents) {
    if (p.tape() != this) throw std::logic_error("Tape: operand recorded on another tape");
    if (nodes_[p.id()].requires_grad) n.requires_grad = true;
  }
  if (n.requires_grad) n.backward = std::move(backward);
  nodes_.push_back(std::move(n));
  return Var(this, static_cast<int>(nodes_.size()) - 1);
}

const Matrix& Tape::value(int id) const { return nodes_[id].value(); }

Matrix& Tape::grad_slot(int id) {
  Node& n = nodes_[id];
  if (!n.has_grad) {
    n.grad = Matrix::Zero(n.value().rows(), n.value().cols());
    n.has_grad = true;
  }
  return n.grad;
}

void Tape::accumulate(int id, const Matrix& contribution) {
  if (!nodes_[id].requires_grad) return;
  accumulate_expr(id, contribution);
}

void Tape::backward(const Var& root) {
  if (root.tape() != this) throw std::logic_error("Tape::backward: root from another tape");
  const Matrix& v = value(root.id());
  if (v.rows() != 1 || v.cols() != 1)
    throw std::invalid_argument("Tape::backward: loss must be scalar, got " + shape_string(v));
  for (auto& n : nodes_) {
    n.has_grad = false;
    n.grad.resize(0, 0);
  }
  if (!nodes_[root.id()].requires_grad) return;
  grad_slot(root.id())(0, 0) = 1.0;
  for (int i = root.id(); i >= 0; --i) {
    Node& n = nodes_[i];
    if (!n.has_grad || !n.backward) continue;
    n.backward(*this, n.grad);
  }
}

Matrix Tape::grad(const Var& v) const {
  const Node& n = nodes_[v.id()];
  if (n.has_grad) return n.grad;
  return Matrix::Zero(n.value().rows(), n.value().cols());
}

void Tape::accumulate_param_grads(ParamStore& store) const {
  for (const auto& [path, id] : bound_params_) {
    const Node& n = nodes_[id];
    if (n.has_grad) store.grad(path) += n.grad;
  }
}

// ---- primitives ----------------------------------------------------------

namespace {

void require_same_shape(const char* op, const Matrix& a, const Matrix& b) {
  if (a.rows() != b.rows() || a.cols() != b.cols())
    throw std::invalid_argument(std::string(op) + ": shape mismatch " + shape_string(a) + " vs " +
                                shape_string(b));
}

Tape& tape_of(const Var& a) {
  if (!a.tape()) throw std::logic_error("op on unbound variable");
  return *a.tape();
}

}  // namespace

Var matmul(const Var& a, const Var& b) {
  const Matrix& av = a.value();
  const Matrix& bv = b.value();
  if (av.cols() != bv.rows())
    throw std::invalid_argument("matmul: inner dimensions disagree " + shape_string(av) + " x " +
                                shape_string(bv));
  Matrix out(av.rows(), bv.cols());
  out.noalias() = av * bv;
  const int ia = a.id(), ib = b.id();
  return tape_of(a).record(std::move(out), {a, b}, [ia, ib](Tape& t, const Matrix& g) {
    t.accumulate_expr(ia, g * t.value(ib).transpose());
    t.accumulate_expr(ib, t.value(ia).transpose() * g);
  });
}

Var add(const Var& a, const Var& b) {
  require_same_shape("add", a.value(), b.value());
  const int ia = a.id(), ib = b.id();
  return tape_of(a).record(a.value() + b.value(), {a, b}, [ia, ib](Tape& t, const Matrix& g) {
    t.accumulate(ia, g);
    t.accumulate(ib, g);
  });
}

Var sub(const Var& a, const Var& b) {
  require_same_shape("sub", a.value(), b.value());
  const int ia = a.id(), ib = b.id();
  return tape_of(a).record(a.value() - b.value(), {a, b}, [ia, ib](Tape& t, const Matrix& g) {
    t.accumulate(ia, g);
    if (t.requires_grad(ib)) t.grad_slot(ib) -= g;
  });
}

Var mul(const Var& a, const Var& b) {
  require_same_shape("mul", a.value(), b.value());
  const int ia = a.id(), ib = b.id();
  Matrix out = a.value().cwiseProduct(b.value());
  return tape_of(a).record(std::move(out), {a, b}, [ia, ib](Tape& t, const Matrix& g) {
    t.accumulate_expr(ia, g.cwiseProduct(t.value(ib)));
    t.accumulate_expr(ib, g.cwiseProduct(t.value(ia)));
  });
}

Var scale(const Var& a, double factor) {
  const int ia = a.id();
  return tape_of(a).record(a.value() * factor, {a},
                           [ia, factor](Tape& t, const Matrix& g) { t.accumulate_expr(ia, g * factor); });
}

Var add_scalar(const Var& a, double c) {
  const int ia = a.id();
  Matrix out = a.value().array() + c;
  return tape_of(a).record(std::move(out), {a}, [ia](Tape& t, const Matrix& g) { t.accumulate(ia, g); });
}

Var add_row(const Var& a, const Var& row) {
  const Matrix& av = a.value();
  const Matrix& rv = row.value();
  if (rv.rows() != 1 || rv.cols() != av.cols())
    throw std::invalid_argument("add_row: expected 1 x " + std::to_string(av.cols()) + " row, got " +
                                shape_string(rv));
  Matrix out = av.rowwise() + rv.row(0);
  const int ia = a.id(), ir = row.id();
  return tape_of(a).record(std::move(out), {a, row}, [ia, ir](Tape& t, const Matrix& g) {
    t.accumulate(ia, g);
    t.accumulate_expr(ir, g.colwise().sum());
  });
}

Var relu(const Var& a) {
  Matrix out = a.value().cwiseMax(0.0);
  const int ia = a.id();
  return tape_of(a).record(std::move(out), {a}, [ia](Tape& t, const Matrix& g) {
    const Matrix& x = t.value(ia);
    t.accumulate_expr(ia, (x.array() > 0.0).select(g.array(), 0.0).matrix());
  });
}

Var tanh(const Var& a) {
  Matrix out = a.value().array().tanh();
  const int ia = a.id();
  Tape& t = tape_of(a);
  const int io = static_cast<int>(t.size());
  return t.record(std::move(out), {a}, [ia, io](Tape& tp, const Matrix& g) {
    const Matrix& y = tp.value(io);
    tp.grad_slot(ia).array() += g.array() * (1.0 - y.array().square());
  });
}

Var sigmoid(const Var& a) {
  Matrix out = (1.0 + (-a.value().array()).exp()).inverse();
  const int ia = a.id();
  Tape& t = tape_of(a);
  const int io = static_cast<int>(t.size());
  return t.record(std::move(out), {a}, [ia, io](Tape& tp, const Matrix& g) {
    const Matrix& y = tp.value(io);
    tp.grad_slot(ia).array() += g.array() * y.array() * (1.0 - y.array());
  });
}

Var square(const Var& a) {
  Matrix out = a.value().array().square();
  const int ia = a.id();
  return tape_of(a).record(std::move(out), {a}, [ia](Tape& t, const Matrix& g) {
    t.grad_slot(ia).array() += 2.0 * g.array() * t.value(ia).array();
  });
}

Var smooth_l1(const Var& a) {
  const Matrix& x = a.value();
  Matrix out = (x.array().abs() < 1.0).select(0.5 * x.array().square(), x.array().abs() - 0.5);
  const int ia = a.id();
  return tape_of(a).record(std::move(out), {a}, [ia](Tape& t, const Matrix& g) {
    const auto xa = t.value(ia).array();
    t.grad_slot(ia).array() += g.array() * (xa.abs() < 1.0).select(xa, xa.sign());
  });
}

Var sum(const Var& a) {
  Matrix out(1, 1);
  out(0, 0) = a.value().sum();
  const int ia = a.id();
  return tape_of(a).record(std::move(out), {a},
                           [ia](Tape& t, const Matrix& g) { t.grad_slot(ia).array() += g(0, 0); });
}

Var concat_cols(std::span<const Var> parts) {
  if (parts.empty()) throw std::invalid_argument("concat_cols: no operands");
  const Index rows = parts[0].rows();
  Index cols = 0;
  for (const Var& p : parts) {
    if (p.rows() != rows)
      throw std::invalid_argument("concat_cols: row mismatch " + shape_string(parts[0].value()) + " vs " +
                                  shape_string(p.value()));
    cols += p.cols();
  }
  Matrix out(rows, cols);
  std::vector<int> ids;
  std::vector<Index> offsets;
  Index c = 0;
  for (const Var& p : parts) {
    out.middleCols(c, p.cols()) = p.value();
    ids.push_back(p.id());
    offsets.push_back(c);
    c += p.cols();
  }
  return tape_of(parts[0]).record(std::move(out), parts, [ids, offsets](Tape& t, const Matrix& g) {
    for (std::size_t i = 0; i < ids.size(); ++i) {
      if (!t.requires_grad(ids[i])) continue;
      Matrix& slot = t.grad_slot(ids[i]);
      slot += g.middleCols(offsets[i], slot.cols());
    }
  });
}

Var concat_rows(std::span<const Var> parts) {
  if (parts.empty()) throw std::invalid_argument("concat_rows: no operands");
  const Index cols = parts[0].cols();
  Index rows = 0;
  for (const Var& p : parts) {
    if (p.cols() != cols)
      throw std::invalid_argument("concat_rows: column mismatch " + shape_string(parts[0].value()) + " vs " +
                                  shape_string(p.value()));
    rows += p.rows();
  }
  Matrix out(rows, cols);
  std::vector<int> ids;
  std::vector<Index> offsets;
  Index r = 0;
  for (const Var& p : parts) {
    out.middleRows(r, p.rows()) = p.value();
    ids.push_back(p.id());
    offsets.push_back(r);
    r += p.rows();
  }
  return tape_of(parts[0]).record(std::move(out), parts, [ids, offsets](Tape& t, const Matrix& g) {
    for (std::size_t i = 0; i < ids.size(); ++i) {
      if (!t.requires_grad(ids[i])) continue;
      Matrix& slot = t.grad_slot(ids[i]);
      slot += g.middleRows(offsets[i], slot.rows());
    }
  });
}

Var slice_cols(const Var& a, Index start, Index count) {
  if (start < 0 || count < 0 || start + count > a.cols())
    throw std::invalid_argument("slice_cols: range out of bounds for " + shape_string(a.value()));
  Matrix out = a.value().middleCols(start, count);
  const int ia = a.id();
  return tape_of(a).record(std::move(out), {a}, [ia, start, count](Tape& t, const Matrix& g) {
    t.grad_slot(ia).middleCols(start, count) += g;
  });
}

Var slice_rows(const Var& a, Index start, Index count) {
  if (start < 0 || count < 0 || start + count > a.rows())
    throw std::invalid_argument("slice_rows: range out of bounds for " + shape_string(a.value()));
  Matrix out = a.value().middleRows(start, count);
  const int ia = a.id();
  return tape_of(a).record(std::move(out), {a}, [ia, start, count](Tape& t, const Matrix& g) {
    t.grad_slot(ia).middleRows(start, count) += g;
  });
}

Var gather_rows(const Var& a, std::span<const int> index) {
  const Matrix& av = a.value();
  Matrix out(static_cast<Index>(index.size()), av.cols());
  for (std::size_t r = 0; r < index.size(); ++r) {
    if (index[r] < 0 || index[r] >= av.rows())
      throw std::out_of_range("gather_rows: index " + std::to_string(index[r]) + " outside " +
                              shape_string(av));
    out.row(static_cast<Index>(r)) = av.row(index[r]);
  }
  std::vector<int> idx(index.begin(), index.end());
  const int ia = a.id();
  return tape_of(a).record(std::move(out), {a}, [ia, idx = std::move(idx)](Tape& t, const Matrix& g) {
    Matrix& slot = t.grad_slot(ia);
    for (std::size_t r = 0; r < idx.size(); ++r) slot.row(idx[r]) += g.row(static_cast<Index>(r));
  });
}

Var scatter_add_rows(const Var& a, std::span<const int> index, Index out_rows) {
  const Matrix& av = a.value();
  if (static_cast<Index>(index.size()) != av.rows())
    throw std::invalid_argument("scatter_add_rows: " + std::to_string(index.size()) + " indices for " +
                                shape_string(av));
  Matrix out = Matrix::Zero(out_rows, av.cols());
  for (std::size_t r = 0; r < index.size(); ++r) {
    if (index[r] < 0 || index[r] >= out_rows)
      throw std::out_of_range("scatter_add_rows: index " + std::to_string(index[r]) + " outside " +
                              std::to_string(out_rows) + " rows");
    out.row(index[r]) += av.row(static_cast<Index>(r));
  }
  std::vector<int> idx(index.begin(), index.end());
  const int ia = a.id();
  return tape_of(a).record(std::move(out), {a}, [ia, idx = std::move(idx)](Tape& t, const Matrix& g) {
    Matrix& slot = t.grad_slot(ia);
    for (std::size_t r = 0; r < idx.size(); ++r) slot.row(static_cast<Index>(r)) += g.row(idx[r]);
  });
}

Var segment_softmax(const Var& a, std::span<const int> segment, Index segments) {
  const Matrix& av = a.value();
  if (static_cast<Index>(segment.size()) != av.rows())
    throw std::invalid_argument("segment_softmax: " + std::to_string(segment.size()) + " segment ids for " +
                                shape_string(av));
  const Index cols = av.cols();
  Matrix maxv = Matrix::Constant(segments, cols, -std::numeric_limits<double>::infinity());
  for (std::size_t r = 0; r < segment.size(); ++r) {
    if (segment[r] < 0 || segment[r] >= segments)
      throw std::out_of_range("segment_softmax: segment id " + std::to_string(segment[r]) + " out of range");
    maxv.row(segment[r]) = maxv.row(segment[r]).cwiseMax(av.row(static_cast<Index>(r)));
  }
  Matrix out(av.rows(), cols);
  Matrix denom = Matrix::Zero(segments, cols);
  for (std::size_t r = 0; r < segment.size(); ++r) {
    const Index ri = static_cast<Index>(r);
    out.row(ri) = (av.row(ri) - maxv.row(segment[r])).array().exp();
    denom.row(segment[r]) += out.row(ri);
  }
  for (std::size_t r = 0; r < segment.size(); ++r) {
    const Index ri = static_cast<Index>(r);
    out.row(ri).array() /= denom.row(segment[r]).array();
  }
  std::vector<int> seg(segment.begin(), segment.end());
  Tape& t = tape_of(a);
  const int ia = a.id();
  const int io = static_cast<int>(t.size());
  return t.record(std::move(out), {a}, [ia, io, segments, seg = std::move(seg)](Tape& tp, const Matrix& g) {
    const Matrix& y = tp.value(io);
    Matrix dot = Matrix::Zero(segments, y.cols());
    for (std::size_t r = 0; r < seg.size(); ++r) {
      const Index ri = static_cast<Index>(r);
      dot.row(seg[r]) += y.row(ri).cwiseProduct(g.row(ri));
    }
    Matrix& slot = tp.grad_slot(ia);
    for (std::size_t r = 0; r < seg.size(); ++r) {
      const Index ri = static_cast<Index>(r);
      slot.row(ri).array() += y.row(ri).array() * (g.row(ri) - dot.row(seg[r])).array();
    }
  });
}

Var row_softmax(const Var& a) {
  const Matrix& av = a.value();
  Matrix out(av.rows(), av.cols());
  for (Index r = 0; r < av.rows(); ++r) {
    const double m = av.row(r).maxCoeff();
    out.row(r) = (av.row(r).array() - m).exp();
    out.row(r) /= out.row(r).sum();
  }
  Tape& t = tape_of(a);
  const int ia = a.id();
  const int io = static_cast<int>(t.size());
  return t.record(std::move(out), {a}, [ia, io](Tape& tp, const Matrix& g) {
    const Matrix& y = tp.value(io);
    Matrix& slot = tp.grad_slot(ia);
    for (Index r = 0; r < y.rows(); ++r) {
      const double dot = y.row(r).dot(g.row(r));
      slot.row(r).array() += y.row(r).array() * (g.row(r).array() - dot);
    }
  });
}

Var cumsum_steps(const Var& a, Index channels) {
  const Matrix& av = a.value();
  if (channels <= 0 || av.cols() % channels != 0)
    throw std::invalid_argument("cumsum_steps: " + shape_string(av) + " not divisible into " +
                                std::to_string(channels) + " channels");
  Matrix out = av;
  for (Index c = channels; c < av.cols(); ++c) out.col(c) += out.col(c - channels);
  const int ia = a.id();
  return tape_of(a).record(std::move(out), {a}, [ia, channels](Tape& t, const Matrix& g) {
    Matrix rev = g;
    for (Index c = rev.cols() - channels - 1; c >= 0; --c) rev.col(c) += rev.col(c + channels);
    t.grad_slot(ia) += rev;
  });
}

Var detach(const Var& a) { return tape_of(a).constant(a.value()); }

// ---- composites -----------------------------------------------------------

RecurrentState recurrent_step(const Var& x, const RecurrentState& state, const Var& input_w,
                              const Var& hidden_w, const Var& bias) {
  const Index h = hidden_w.rows();
  if (hidden_w.cols() != 4 * h || input_w.cols() != 4 * h || bias.cols() != 4 * h)
    throw std::invalid_argument("recurrent_step: gate widths disagree (hidden " + std::to_string(h) + ")");
  Var pre = add_row(add(matmul(x, input_w), matmul(state.hidden, hidden_w)), bias);
  Var in_gate = sigmoid(slice_cols(pre, 0, h));
  Var forget_gate = sigmoid(slice_cols(pre, h, h));
  Var candidate = tanh(slice_cols(pre, 2 * h, h));
  Var out_gate = sigmoid(slice_cols(pre, 3 * h, h));
  Var cell = add(mul(forget_gate, state.cell), mul(in_gate, candidate));
  Var hidden = mul(out_gate, tanh(cell));
  return {hidden, cell};
}

double value_and_grad(const std::function<Var(Tape&)>& loss, ParamStore& params) {
  Tape tape;
  Var out = loss(tape);
  if (out.rows() != 1 || out.cols() != 1)
    throw std::invalid_argument("value_and_grad: loss must be scalar, got " + shape_string(out.value()));
  params.zero_grad();
  tape.backward(out);
  tape.accumulate_param_grads(params);
  return out.value()(0, 0);
}

}  // namespace proin::ad
