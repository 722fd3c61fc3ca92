#pragma once

#include "clusterseq/core/tensor.hpp"

#include <cstdint>
#include <functional>
#include <map>
#include <string>

namespace clusterseq {

/// Which side of the meta-learning split a parameter sits on.
enum class Partition : std::uint8_t {
  unassigned = 0,
  adapted = 1,  // per-task, updated by the inner loop
  shared = 2,   // common to all tasks
};

struct Parameter {
  Matrix value;
  /// 1 for vectors (stored n x 1), 2 for matrices.
  int rank = 2;
  Partition partition = Partition::unassigned;
};

/// parameter name -> gradient of identical shape
using GradientMap = std::map<std::string, Matrix>;

/// Named parameters, ordered by name so iteration is deterministic.
class ParameterStore {
 public:
  using Entries = std::map<std::string, Parameter>;

  void add(const std::string& name, Matrix value, int rank, Partition partition = Partition::unassigned);
  void add_vector(const std::string& name, Vector value, Partition partition = Partition::unassigned) {
    add(name, Matrix(std::move(value)), 1, partition);
  }

  bool contains(const std::string& name) const { return entries_.count(name) != 0; }
  const Parameter& at(const std::string& name) const;
  Parameter& at(const std::string& name);
  const Matrix& value(const std::string& name) const { return at(name).value; }

  const Entries& entries() const { return entries_; }
  Entries::const_iterator begin() const { return entries_.begin(); }
  Entries::const_iterator end() const { return entries_.end(); }
  std::size_t size() const { return entries_.size(); }
  std::size_t scalar_count() const;

  /// Copy holding only the parameters with the given partition.
  ParameterStore subset(Partition partition) const;

  /// value -= rate * gradient for every entry present in `gradients`.
  void apply_gradients(const GradientMap& gradients, Scalar rate);

  bool all_finite() const;

 private:
  Entries entries_;
};

GradientMap zeros_like(const ParameterStore& store);
void accumulate(GradientMap& into, const GradientMap& from);
bool all_finite(const GradientMap& gradients);

/// Binds stored parameters onto a tape on first use. Values come from the
/// overlay when it has the name, from the base store otherwise. Parameters
/// selected by the trainable predicate become gradient-carrying leaves; the
/// rest are constants.
class Binder {
 public:
  using Predicate = std::function<bool(const std::string&, const Parameter&)>;

  Binder(Tape& tape, const ParameterStore& base, const ParameterStore* overlay = nullptr,
         Predicate trainable = nullptr);

  Var operator()(const std::string& name);

  Tape& tape() const { return tape_; }
  const Parameter& parameter(const std::string& name) const;
  bool is_trainable(const std::string& name) const;

  /// Gradients for every trainable parameter visible through the binder;
  /// parameters never touched by the graph map to zeros.
  GradientMap gradients() const;

 private:
  Tape& tape_;
  const ParameterStore& base_;
  const ParameterStore* overlay_;
  Predicate trainable_;
  std::map<std::string, Var> bound_;
};

/// Reverse sweep from `loss`, collecting gradients by parameter name.
GradientMap backward(Var loss, const Binder& binder);

}  // namespace clusterseq
