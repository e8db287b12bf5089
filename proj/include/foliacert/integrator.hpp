#pragma once

#include <functional>
#include <span>

#include "foliacert/field_spec.hpp"

namespace foliacert {

struct IntegratorOptions {
  double tol = 1e-10;       // used as both absolute and relative tolerance
  double initial_step = 1e-3;
  double min_step = 1e-14;  // relative to max(1, |t|)
  long max_steps = 50'000'000;

  /// Throws ValidationError unless tol lies in [1e-13, 1e-6].
  void validate() const;
};

/// Autonomous right-hand side y' = F(y).
using Rhs = std::function<void(std::span<const double> y, std::span<double> dy)>;

/// One accepted step [t0, t1] with states and derivatives at both ends; enough for cubic
/// Hermite dense output.
struct StepRecord {
  double t0, t1;
  std::span<const double> y0, f0, y1, f1;
};
using StepObserver = std::function<void(const StepRecord&)>;

/// Cubic Hermite interpolant inside an accepted step.
void hermite(const StepRecord& step, double t, std::span<double> out);

/// Dormand–Prince 5(4) with FSAL and PI step control. Integrates from y(0) = y0 to time t
/// (negative t integrates backwards). Throws NumericalError with the failure time when the step
/// size underflows or the state stops being finite.
Vec integrate(const Rhs& f, const Vec& y0, double t, const IntegratorOptions& opts,
              const StepObserver& observer = {});

/// The flow map X_t(x0) of a vector field.
Vec integrate_flow(const VectorFieldSpec& spec, const Vec& x0, double t,
                   const IntegratorOptions& opts = {});

/// Jointly integrates x' = G(x), V' = DG(x) V for a d x k frame V. Returns (x(t), V(t)).
std::pair<Vec, Mat> integrate_variational(const VectorFieldSpec& spec, const Vec& x0,
                                          const Mat& frame, double t,
                                          const IntegratorOptions& opts = {});

}  // namespace foliacert
