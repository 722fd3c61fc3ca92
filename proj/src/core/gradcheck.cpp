#include "clusterseq/core/gradcheck.hpp"

#include "clusterseq/core/error.hpp"

#include <algorithm>
#include <cmath>

namespace clusterseq {

namespace {

double evaluate(const ScalarGraph& f, const ParameterStore& point) {
  Tape tape;
  Binder binder(tape, point, nullptr, [](const std::string&, const Parameter&) { return false; });
  const double value = f(binder).scalar();
  if (!std::isfinite(value)) fail(ErrorCode::evaluation, "gradient check: non-finite function value");
  return value;
}

}  // namespace

GradientCheckReport check_gradients(const ScalarGraph& f, const ParameterStore& point, double h,
                                    const Binder::Predicate& select, Stencil stencil,
                                    double floor) {
  GradientMap analytic;
  {
    Tape tape;
    Binder binder(tape, point, nullptr, select);
    Var loss = f(binder);
    if (!std::isfinite(loss.scalar())) fail(ErrorCode::evaluation, "gradient check: non-finite loss");
    analytic = backward(loss, binder);
  }

  GradientCheckReport report;
  ParameterStore probe = point;
  for (const auto& [name, grad] : analytic) {
    Matrix& value = probe.at(name).value;
    for (Eigen::Index i = 0; i < value.size(); ++i) {
      const double saved = value.data()[i];
      auto at = [&](double offset) {
        value.data()[i] = saved + offset;
        return evaluate(f, probe);
      };
      double numeric = 0.0;
      if (stencil == Stencil::central) {
        numeric = (at(h) - at(-h)) / (2.0 * h);
      } else {
        numeric = (-at(2 * h) + 8.0 * at(h) - 8.0 * at(-h) + at(-2 * h)) / (12.0 * h);
      }
      value.data()[i] = saved;

      const double exact = grad.data()[i];
      const double denom = std::max({std::abs(exact), std::abs(numeric), floor});
      const double err = std::abs(exact - numeric) / denom;
      ++report.coordinates;
      if (err > report.max_relative_error || report.worst_index < 0) {
        report.max_relative_error = err;
        report.worst_parameter = name;
        report.worst_index = i;
        report.analytic = exact;
        report.numeric = numeric;
      }
    }
  }
  return report;
}

}  // namespace clusterseq
