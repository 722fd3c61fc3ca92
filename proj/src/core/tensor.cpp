#include "clusterseq/core/tensor.hpp"

#include "clusterseq/core/error.hpp"

#include <algorithm>
#include <cmath>
#include <sstream>

namespace clusterseq {

std::string_view to_string(ErrorCode code) {
  switch (code) {
    case ErrorCode::dimension: return "dimension_error";
    case ErrorCode::domain: return "domain_error";
    case ErrorCode::index: return "index_error";
    case ErrorCode::configuration: return "configuration_error";
    case ErrorCode::contract: return "contract_error";
    case ErrorCode::evaluation: return "evaluation_error";
    case ErrorCode::io: return "io_error";
    case ErrorCode::format: return "format_error";
    case ErrorCode::empty_corpus: return "empty_corpus_error";
    case ErrorCode::split: return "split_error";
    case ErrorCode::episode: return "episode_error";
    case ErrorCode::sampling: return "sampling_error";
    case ErrorCode::training: return "training_error";
    case ErrorCode::compatibility: return "compatibility_error";
    case ErrorCode::spec: return "spec_error";
  }
  return "error";
}

std::string shape_string(const Matrix& m) {
  std::ostringstream out;
  out << '[' << m.rows() << 'x' << m.cols() << ']';
  return out.str();
}

Activation parse_activation(std::string_view name) {
  if (name == "identity" || name == "linear") return Activation::identity;
  if (name == "relu") return Activation::relu;
  if (name == "sigmoid") return Activation::sigmoid;
  if (name == "tanh") return Activation::tanh;
  fail(ErrorCode::configuration, "unknown activation '" + std::string(name) + "'");
}

std::string_view to_string(Activation kind) {
  switch (kind) {
    case Activation::identity: return "identity";
    case Activation::relu: return "relu";
    case Activation::sigmoid: return "sigmoid";
    case Activation::tanh: return "tanh";
  }
  return "identity";
}

// ---------------------------------------------------------------------------
// Var / Tape

const Matrix& Var::value() const {
  if (!tape_) fail(ErrorCode::contract, "use of an unbound Var");
  return tape_->value(id_);
}

Scalar Var::scalar() const {
  const Matrix& v = value();
  if (v.size() != 1) fail(ErrorCode::contract, "expected a scalar node, got " + shape_string(v));
  return v(0, 0);
}

bool Var::requires_grad() const { return tape_ && tape_->requires_grad(id_); }

Var Tape::leaf(Matrix value, bool requires_grad) {
  nodes_.push_back(Node{std::move(value), Matrix(), nullptr, requires_grad, false});
  return Var(this, nodes_.size() - 1);
}

Var Tape::record(Matrix value, std::initializer_list<Var> inputs, BackwardFn backward) {
  return record(std::move(value), std::span<const Var>(inputs.begin(), inputs.size()),
                std::move(backward));
}

Var Tape::record(Matrix value, std::span<const Var> inputs, BackwardFn backward) {
  bool needs = false;
  for (const Var& in : inputs) {
    check_owner(in);
    needs = needs || nodes_[in.id()].requires_grad;
  }
  nodes_.push_back(Node{std::move(value), Matrix(), needs ? std::move(backward) : nullptr, needs, false});
  return Var(this, nodes_.size() - 1);
}

void Tape::check_owner(Var v) const {
  if (v.tape() != this) fail(ErrorCode::contract, "Var belongs to a different tape");
}

void Tape::accumulate(std::size_t id, const Matrix& contribution) {
  Node& node = nodes_[id];
  if (!node.requires_grad) return;
  if (!node.has_grad) {
    node.grad = contribution;
    node.has_grad = true;
  } else {
    node.grad += contribution;
  }
}

void Tape::backward(Var loss) {
  check_owner(loss);
  if (loss.value().size() != 1) {
    fail(ErrorCode::contract, "backward needs a scalar loss, got " + shape_string(loss.value()));
  }
  if (!std::isfinite(loss.scalar())) fail(ErrorCode::contract, "backward on a non-finite loss");
  Seed seed{loss, Matrix::Ones(1, 1)};
  backward(std::span<const Seed>(&seed, 1));
}

void Tape::backward(std::span<const Seed> seeds) {
  std::size_t top = 0;
  for (const Seed& s : seeds) {
    check_owner(s.node);
    const Matrix& v = s.node.value();
    if (s.grad.rows() != v.rows() || s.grad.cols() != v.cols()) {
      fail(ErrorCode::dimension,
           "seed gradient " + shape_string(s.grad) + " does not match node " + shape_string(v));
    }
    accumulate(s.node.id(), s.grad);
    top = std::max(top, s.node.id() + 1);
  }
  sweep(top);
}

void Tape::sweep(std::size_t top) {
  for (std::size_t i = top; i-- > 0;) {
    Node& node = nodes_[i];
    if (node.has_grad && node.backward) node.backward(*this, i);
  }
}

Matrix Tape::gradient(Var v) const {
  check_owner(v);
  const Node& node = nodes_[v.id()];
  if (node.has_grad) return node.grad;
  return Matrix::Zero(node.value.rows(), node.value.cols());
}

// ---------------------------------------------------------------------------
// Ops

namespace {

Tape& tape_of(Var a) {
  if (!a.valid()) fail(ErrorCode::contract, "use of an unbound Var");
  return *a.tape();
}

void require_same_shape(const char* op, Var a, Var b) {
  if (a.rows() != b.rows() || a.cols() != b.cols()) {
    fail(ErrorCode::dimension, std::string(op) + ": shape mismatch " + shape_string(a.value()) +
                                   " vs " + shape_string(b.value()));
  }
}

}  // namespace

Var matmul(Var a, Var b) {
  if (a.cols() != b.rows()) {
    fail(ErrorCode::dimension,
         "matmul: inner dimensions differ " + shape_string(a.value()) + " x " + shape_string(b.value()));
  }
  Tape& t = tape_of(a);
  const std::size_t ia = a.id(), ib = b.id();
  return t.record(a.value() * b.value(), {a, b}, [ia, ib](Tape& tp, std::size_t self) {
    const Matrix& g = tp.grad(self);
    if (tp.requires_grad(ia)) tp.accumulate(ia, g * tp.value(ib).transpose());
    if (tp.requires_grad(ib)) tp.accumulate(ib, tp.value(ia).transpose() * g);
  });
}

Var transpose(Var a) {
  Tape& t = tape_of(a);
  const std::size_t ia = a.id();
  return t.record(a.value().transpose(), {a}, [ia](Tape& tp, std::size_t self) {
    tp.accumulate(ia, tp.grad(self).transpose());
  });
}

Var add(Var a, Var b) {
  require_same_shape("add", a, b);
  Tape& t = tape_of(a);
  const std::size_t ia = a.id(), ib = b.id();
  return t.record(a.value() + b.value(), {a, b}, [ia, ib](Tape& tp, std::size_t self) {
    tp.accumulate(ia, tp.grad(self));
    tp.accumulate(ib, tp.grad(self));
  });
}

Var sub(Var a, Var b) {
  require_same_shape("sub", a, b);
  Tape& t = tape_of(a);
  const std::size_t ia = a.id(), ib = b.id();
  return t.record(a.value() - b.value(), {a, b}, [ia, ib](Tape& tp, std::size_t self) {
    tp.accumulate(ia, tp.grad(self));
    if (tp.requires_grad(ib)) tp.accumulate(ib, -tp.grad(self));
  });
}

Var hadamard(Var a, Var b) {
  require_same_shape("hadamard", a, b);
  Tape& t = tape_of(a);
  const std::size_t ia = a.id(), ib = b.id();
  return t.record(a.value().cwiseProduct(b.value()), {a, b}, [ia, ib](Tape& tp, std::size_t self) {
    const Matrix& g = tp.grad(self);
    if (tp.requires_grad(ia)) tp.accumulate(ia, g.cwiseProduct(tp.value(ib)));
    if (tp.requires_grad(ib)) tp.accumulate(ib, g.cwiseProduct(tp.value(ia)));
  });
}

Var scale(Var a, Scalar factor) {
  Tape& t = tape_of(a);
  const std::size_t ia = a.id();
  return t.record(a.value() * factor, {a}, [ia, factor](Tape& tp, std::size_t self) {
    tp.accumulate(ia, tp.grad(self) * factor);
  });
}

Var shift(Var a, Scalar offset) {
  Tape& t = tape_of(a);
  const std::size_t ia = a.id();
  return t.record(a.value().array() + offset, {a}, [ia](Tape& tp, std::size_t self) {
    tp.accumulate(ia, tp.grad(self));
  });
}

Var sum(Var a) {
  Tape& t = tape_of(a);
  const std::size_t ia = a.id();
  Matrix out(1, 1);
  out(0, 0) = a.value().sum();
  return t.record(std::move(out), {a}, [ia](Tape& tp, std::size_t self) {
    const Matrix& v = tp.value(ia);
    tp.accumulate(ia, Matrix::Constant(v.rows(), v.cols(), tp.grad(self)(0, 0)));
  });
}

Var activate(Var v, Activation kind) {
  Tape& t = tape_of(v);
  const std::size_t iv = v.id();
  const Matrix& x = v.value();
  Matrix y;
  switch (kind) {
    case Activation::identity: y = x; break;
    case Activation::relu: y = x.cwiseMax(0.0); break;
    case Activation::sigmoid: y = (1.0 + (-x.array()).exp()).inverse().matrix(); break;
    case Activation::tanh: y = x.array().tanh().matrix(); break;
  }
  return t.record(std::move(y), {v}, [iv, kind](Tape& tp, std::size_t self) {
    const Matrix& g = tp.grad(self);
    const Matrix& x = tp.value(iv);
    const Matrix& y = tp.value(self);
    switch (kind) {
      case Activation::identity: tp.accumulate(iv, g); break;
      case Activation::relu:
        tp.accumulate(iv, (x.array() > 0.0).select(g, 0.0).matrix());
        break;
      case Activation::sigmoid:
        tp.accumulate(iv, (g.array() * y.array() * (1.0 - y.array())).matrix());
        break;
      case Activation::tanh:
        tp.accumulate(iv, (g.array() * (1.0 - y.array().square())).matrix());
        break;
    }
  });
}

namespace {

// Softmax of each column of `x` (columns are the distributions).
Matrix softmax_columns(const Matrix& x) {
  Matrix y(x.rows(), x.cols());
  for (Eigen::Index c = 0; c < x.cols(); ++c) {
    const Scalar peak = x.col(c).maxCoeff();
    y.col(c) = (x.col(c).array() - peak).exp().matrix();
    y.col(c) /= y.col(c).sum();
  }
  return y;
}

}  // namespace

Var softmax(Var v) {
  if (v.value().size() == 0) fail(ErrorCode::domain, "softmax of an empty array");
  Tape& t = tape_of(v);
  const std::size_t iv = v.id();
  const bool row_wise = v.cols() > 1;
  Matrix y = row_wise ? Matrix(softmax_columns(v.value().transpose()).transpose())
                      : softmax_columns(v.value());
  return t.record(std::move(y), {v}, [iv, row_wise](Tape& tp, std::size_t self) {
    const Matrix& g = tp.grad(self);
    const Matrix& y = tp.value(self);
    Matrix dx(y.rows(), y.cols());
    if (row_wise) {
      for (Eigen::Index r = 0; r < y.rows(); ++r) {
        const Scalar dot = g.row(r).dot(y.row(r));
        dx.row(r) = y.row(r).cwiseProduct((g.row(r).array() - dot).matrix());
      }
    } else {
      const Scalar dot = g.col(0).dot(y.col(0));
      dx.col(0) = y.col(0).cwiseProduct((g.col(0).array() - dot).matrix());
    }
    tp.accumulate(iv, dx);
  });
}

Var concat(Var a, Var b) {
  if (a.cols() != b.cols()) {
    fail(ErrorCode::dimension,
         "concat: column counts differ " + shape_string(a.value()) + " ; " + shape_string(b.value()));
  }
  Tape& t = tape_of(a);
  const std::size_t ia = a.id(), ib = b.id();
  const Eigen::Index na = a.rows(), nb = b.rows();
  Matrix out(na + nb, a.cols());
  out.topRows(na) = a.value();
  out.bottomRows(nb) = b.value();
  return t.record(std::move(out), {a, b}, [ia, ib, na, nb](Tape& tp, std::size_t self) {
    const Matrix& g = tp.grad(self);
    if (tp.requires_grad(ia)) tp.accumulate(ia, g.topRows(na));
    if (tp.requires_grad(ib)) tp.accumulate(ib, g.bottomRows(nb));
  });
}

Var l2_distance(Var a, Var b) {
  require_same_shape("l2_distance", a, b);
  Tape& t = tape_of(a);
  const std::size_t ia = a.id(), ib = b.id();
  Matrix out(1, 1);
  out(0, 0) = (a.value() - b.value()).norm();
  return t.record(std::move(out), {a, b}, [ia, ib](Tape& tp, std::size_t self) {
    const Scalar d = tp.value(self)(0, 0);
    if (d == 0.0) return;
    const Matrix unit = (tp.value(ia) - tp.value(ib)) * (tp.grad(self)(0, 0) / d);
    tp.accumulate(ia, unit);
    if (tp.requires_grad(ib)) tp.accumulate(ib, -unit);
  });
}

Var kl_divergence(Var p, Var q, Scalar eps) {
  require_same_shape("kl_divergence", p, q);
  const Matrix& pv = p.value();
  if ((pv.array() < 0.0).any() || (q.value().array() < 0.0).any()) {
    fail(ErrorCode::domain, "kl_divergence: negative probability");
  }
  Tape& t = tape_of(p);
  const std::size_t ip = p.id(), iq = q.id();
  const Matrix qc = q.value().cwiseMax(eps);
  Scalar total = 0.0;
  for (Eigen::Index i = 0; i < pv.size(); ++i) {
    const Scalar pi = pv.data()[i];
    if (pi > 0.0) total += pi * std::log(pi / qc.data()[i]);
  }
  Matrix out(1, 1);
  out(0, 0) = total;
  return t.record(std::move(out), {p, q}, [ip, iq, eps](Tape& tp, std::size_t self) {
    const Scalar g = tp.grad(self)(0, 0);
    const Matrix& pv = tp.value(ip);
    const Matrix& qv = tp.value(iq);
    if (tp.requires_grad(ip)) {
      Matrix dp = Matrix::Zero(pv.rows(), pv.cols());
      for (Eigen::Index i = 0; i < pv.size(); ++i) {
        const Scalar pi = pv.data()[i];
        if (pi > 0.0) dp.data()[i] = g * (std::log(pi / std::max(qv.data()[i], eps)) + 1.0);
      }
      tp.accumulate(ip, dp);
    }
    if (tp.requires_grad(iq)) {
      Matrix dq = Matrix::Zero(qv.rows(), qv.cols());
      for (Eigen::Index i = 0; i < qv.size(); ++i) {
        if (qv.data()[i] > eps) dq.data()[i] = -g * pv.data()[i] / qv.data()[i];
      }
      tp.accumulate(iq, dq);
    }
  });
}

Var lookup_embedding(Var table, Eigen::Index id) {
  if (id < 0 || id >= table.rows()) {
    fail(ErrorCode::index, "lookup_embedding: id " + std::to_string(id) + " outside table of " +
                               std::to_string(table.rows()) + " rows");
  }
  Tape& t = tape_of(table);
  const std::size_t it = table.id();
  return t.record(table.value().row(id).transpose(), {table}, [it, id](Tape& tp, std::size_t self) {
    const Matrix& v = tp.value(it);
    Matrix g = Matrix::Zero(v.rows(), v.cols());
    g.row(id) = tp.grad(self).transpose();
    tp.accumulate(it, g);
  });
}

Var slice_rows(Var v, Eigen::Index start, Eigen::Index count) {
  if (start < 0 || count < 0 || start + count > v.rows()) {
    fail(ErrorCode::dimension, "slice_rows: rows [" + std::to_string(start) + ", " +
                                   std::to_string(start + count) + ") outside " + shape_string(v.value()));
  }
  Tape& t = tape_of(v);
  const std::size_t iv = v.id();
  return t.record(v.value().middleRows(start, count), {v}, [iv, start, count](Tape& tp, std::size_t self) {
    const Matrix& x = tp.value(iv);
    Matrix g = Matrix::Zero(x.rows(), x.cols());
    g.middleRows(start, count) = tp.grad(self);
    tp.accumulate(iv, g);
  });
}

Var row(Var m, Eigen::Index i) {
  if (i < 0 || i >= m.rows()) {
    fail(ErrorCode::index, "row " + std::to_string(i) + " outside " + shape_string(m.value()));
  }
  Tape& t = tape_of(m);
  const std::size_t im = m.id();
  return t.record(m.value().row(i).transpose(), {m}, [im, i](Tape& tp, std::size_t self) {
    const Matrix& x = tp.value(im);
    Matrix g = Matrix::Zero(x.rows(), x.cols());
    g.row(i) = tp.grad(self).transpose();
    tp.accumulate(im, g);
  });
}

namespace {

Var stack(std::span<const Var> parts, bool as_rows) {
  if (parts.empty()) fail(ErrorCode::dimension, "stack of zero vectors");
  const Eigen::Index d = parts.front().rows();
  for (const Var& p : parts) {
    if (p.cols() != 1 || p.rows() != d) {
      fail(ErrorCode::dimension, "stack: expected vectors of length " + std::to_string(d) + ", got " +
                                     shape_string(p.value()));
    }
  }
  Tape& t = tape_of(parts.front());
  const auto n = static_cast<Eigen::Index>(parts.size());
  Matrix out(d, n);
  std::vector<std::size_t> ids;
  ids.reserve(parts.size());
  for (Eigen::Index k = 0; k < n; ++k) {
    out.col(k) = parts[static_cast<std::size_t>(k)].value();
    ids.push_back(parts[static_cast<std::size_t>(k)].id());
  }
  if (as_rows) out.transposeInPlace();
  return t.record(std::move(out), parts, [ids = std::move(ids), as_rows](Tape& tp, std::size_t self) {
    const Matrix& g = tp.grad(self);
    for (std::size_t k = 0; k < ids.size(); ++k) {
      const auto c = static_cast<Eigen::Index>(k);
      if (as_rows) {
        tp.accumulate(ids[k], g.row(c).transpose());
      } else {
        tp.accumulate(ids[k], g.col(c));
      }
    }
  });
}

}  // namespace

Var stack_columns(std::span<const Var> columns) { return stack(columns, false); }
Var stack_rows(std::span<const Var> rows) { return stack(rows, true); }

Var detach(Var v) { return tape_of(v).constant(v.value()); }

}  // namespace clusterseq
