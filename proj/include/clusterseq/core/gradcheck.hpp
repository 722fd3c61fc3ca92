#pragma once

#include "clusterseq/core/parameters.hpp"

#include <functional>
#include <string>

namespace clusterseq {

/// Builds a scalar graph from bound parameters.
using ScalarGraph = std::function<Var(Binder&)>;

struct GradientCheckReport {
  double max_relative_error = 0.0;
  std::string worst_parameter;
  Eigen::Index worst_index = -1;
  double analytic = 0.0;
  double numeric = 0.0;
  std::size_t coordinates = 0;
};

enum class Stencil {
  central,     // (f(x+h) - f(x-h)) / 2h
  five_point,  // (-f(x+2h) + 8f(x+h) - 8f(x-h) + f(x-2h)) / 12h
};

/// Compares backward() against finite differences on every coordinate of
/// every selected parameter. Relative error uses the denominator
/// max(|analytic|, |numeric|, floor).
GradientCheckReport check_gradients(const ScalarGraph& f, const ParameterStore& point, double h,
                                    const Binder::Predicate& select = nullptr, Stencil stencil = Stencil::central,
                                    double floor = 1e-8);

}  // namespace clusterseq
