#include "clusterseq/core/parameters.hpp"

#include "clusterseq/core/error.hpp"

namespace clusterseq {

void ParameterStore::add(const std::string& name, Matrix value, int rank, Partition partition) {
  if (entries_.count(name)) fail(ErrorCode::configuration, "duplicate parameter '" + name + "'");
  if (rank == 1 && value.cols() != 1) {
    fail(ErrorCode::dimension, "vector parameter '" + name + "' has shape " + shape_string(value));
  }
  entries_.emplace(name, Parameter{std::move(value), rank, partition});
}

const Parameter& ParameterStore::at(const std::string& name) const {
  auto it = entries_.find(name);
  if (it == entries_.end()) fail(ErrorCode::index, "unknown parameter '" + name + "'");
  return it->second;
}

Parameter& ParameterStore::at(const std::string& name) {
  auto it = entries_.find(name);
  if (it == entries_.end()) fail(ErrorCode::index, "unknown parameter '" + name + "'");
  return it->second;
}

std::size_t ParameterStore::scalar_count() const {
  std::size_t n = 0;
  for (const auto& [name, p] : entries_) n += static_cast<std::size_t>(p.value.size());
  return n;
}

ParameterStore ParameterStore::subset(Partition partition) const {
  ParameterStore out;
  for (const auto& [name, p] : entries_) {
    if (p.partition == partition) out.entries_.emplace(name, p);
  }
  return out;
}

void ParameterStore::apply_gradients(const GradientMap& gradients, Scalar rate) {
  for (const auto& [name, g] : gradients) {
    auto it = entries_.find(name);
    if (it == entries_.end()) continue;
    Matrix& v = it->second.value;
    if (g.rows() != v.rows() || g.cols() != v.cols()) {
      fail(ErrorCode::dimension, "gradient for '" + name + "' has shape " + shape_string(g) +
                                     ", parameter is " + shape_string(v));
    }
    v -= rate * g;
  }
}

bool ParameterStore::all_finite() const {
  for (const auto& [name, p] : entries_) {
    if (!p.value.allFinite()) return false;
  }
  return true;
}

GradientMap zeros_like(const ParameterStore& store) {
  GradientMap out;
  for (const auto& [name, p] : store) out.emplace(name, Matrix::Zero(p.value.rows(), p.value.cols()));
  return out;
}

void accumulate(GradientMap& into, const GradientMap& from) {
  for (const auto& [name, g] : from) {
    auto it = into.find(name);
    if (it == into.end()) {
      into.emplace(name, g);
    } else {
      it->second += g;
    }
  }
}

bool all_finite(const GradientMap& gradients) {
  for (const auto& [name, g] : gradients) {
    if (!g.allFinite()) return false;
  }
  return true;
}

Binder::Binder(Tape& tape, const ParameterStore& base, const ParameterStore* overlay, Predicate trainable)
    : tape_(tape), base_(base), overlay_(overlay), trainable_(std::move(trainable)) {}

const Parameter& Binder::parameter(const std::string& name) const {
  if (overlay_ && overlay_->contains(name)) return overlay_->at(name);
  return base_.at(name);
}

bool Binder::is_trainable(const std::string& name) const {
  return !trainable_ || trainable_(name, parameter(name));
}

Var Binder::operator()(const std::string& name) {
  auto it = bound_.find(name);
  if (it != bound_.end()) return it->second;
  const Parameter& p = parameter(name);
  Var v = tape_.leaf(p.value, is_trainable(name));
  bound_.emplace(name, v);
  return v;
}

GradientMap Binder::gradients() const {
  GradientMap out;
  auto collect = [&](const ParameterStore& store) {
    for (const auto& [name, p] : store) {
      if (out.count(name) || !is_trainable(name)) continue;
      auto it = bound_.find(name);
      const Parameter& visible = parameter(name);
      out.emplace(name, it != bound_.end() ? tape_.gradient(it->second)
                                           : Matrix::Zero(visible.value.rows(), visible.value.cols()));
    }
  };
  if (overlay_) collect(*overlay_);
  collect(base_);
  return out;
}

GradientMap backward(Var loss, const Binder& binder) {
  binder.tape().backward(loss);
  return binder.gradients();
}

}  // namespace clusterseq
