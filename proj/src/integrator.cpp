#include "foliacert/integrator.hpp"

#include <algorithm>
#include <cmath>
#include <sstream>

#include "foliacert/errors.hpp"

namespace foliacert {

void IntegratorOptions::validate() const {
  if (!(tol >= 1e-13 && tol <= 1e-6)) {
    std::ostringstream os;
    os << "integrator tolerance " << tol << " outside [1e-13, 1e-6]";
    throw ValidationError(os.str());
  }
  if (!(initial_step > 0) || !(min_step > 0) || max_steps <= 0) {
    throw ValidationError("integrator step settings must be positive");
  }
}

void hermite(const StepRecord& s, double t, std::span<double> out) {
  const double h = s.t1 - s.t0;
  const double th = (t - s.t0) / h;
  const double h00 = (1 + 2 * th) * (1 - th) * (1 - th);
  const double h10 = th * (1 - th) * (1 - th);
  const double h01 = th * th * (3 - 2 * th);
  const double h11 = th * th * (th - 1);
  for (std::size_t i = 0; i < out.size(); ++i) {
    out[i] = h00 * s.y0[i] + h10 * h * s.f0[i] + h01 * s.y1[i] + h11 * h * s.f1[i];
  }
}

namespace {

// Dormand–Prince 5(4) tableau.
constexpr double c2 = 1.0 / 5, c3 = 3.0 / 10, c4 = 4.0 / 5, c5 = 8.0 / 9;
constexpr double a21 = 1.0 / 5;
constexpr double a31 = 3.0 / 40, a32 = 9.0 / 40;
constexpr double a41 = 44.0 / 45, a42 = -56.0 / 15, a43 = 32.0 / 9;
constexpr double a51 = 19372.0 / 6561, a52 = -25360.0 / 2187, a53 = 64448.0 / 6561, a54 = -212.0 / 729;
constexpr double a61 = 9017.0 / 3168, a62 = -355.0 / 33, a63 = 46732.0 / 5247, a64 = 49.0 / 176,
                 a65 = -5103.0 / 18656;
constexpr double b1 = 35.0 / 384, b3 = 500.0 / 1113, b4 = 125.0 / 192, b5 = -2187.0 / 6784, b6 = 11.0 / 84;
constexpr double e1 = 71.0 / 57600, e3 = -71.0 / 16695, e4 = 71.0 / 1920, e5 = -17253.0 / 339200,
                 e6 = 22.0 / 525, e7 = -1.0 / 40;

}  // namespace

Vec integrate(const Rhs& rhs, const Vec& y0, double t, const IntegratorOptions& opts,
              const StepObserver& observer) {
  opts.validate();
  const Eigen::Index n = y0.size();
  Vec y = y0;
  if (t == 0) return y;
  if (!y.allFinite()) throw NumericalError("non-finite initial state");

  const double sign = t > 0 ? 1.0 : -1.0;
  const double t_end = std::abs(t);
  auto f = [&](const Vec& in, Vec& out) {
    rhs({in.data(), static_cast<std::size_t>(n)}, {out.data(), static_cast<std::size_t>(n)});
    if (sign < 0) out = -out;
  };

  Vec k1(n), k2(n), k3(n), k4(n), k5(n), k6(n), k7(n), tmp(n), y_new(n);
  f(y, k1);
  double s = 0;
  double h = std::min(opts.initial_step, t_end);
  double prev_err = 1e-4;
  long steps = 0;

  while (s < t_end) {
    if (++steps > opts.max_steps) {
      throw NumericalError("step budget exhausted at t = " + std::to_string(sign * s));
    }
    bool last = false;
    if (s + h >= t_end || t_end - (s + h) < 1e-12 * h) {
      h = t_end - s;
      last = true;
    }
    if (h < opts.min_step * std::max(1.0, s)) {
      throw NumericalError("step size underflow at t = " + std::to_string(sign * s));
    }

    tmp = y + h * a21 * k1;
    f(tmp, k2);
    tmp = y + h * (a31 * k1 + a32 * k2);
    f(tmp, k3);
    tmp = y + h * (a41 * k1 + a42 * k2 + a43 * k3);
    f(tmp, k4);
    tmp = y + h * (a51 * k1 + a52 * k2 + a53 * k3 + a54 * k4);
    f(tmp, k5);
    tmp = y + h * (a61 * k1 + a62 * k2 + a63 * k3 + a64 * k4 + a65 * k5);
    f(tmp, k6);
    y_new = y + h * (b1 * k1 + b3 * k3 + b4 * k4 + b5 * k5 + b6 * k6);
    f(y_new, k7);

    double err = 0;
    for (Eigen::Index i = 0; i < n; ++i) {
      const double e = h * (e1 * k1[i] + e3 * k3[i] + e4 * k4[i] + e5 * k5[i] + e6 * k6[i] + e7 * k7[i]);
      const double scale = opts.tol + opts.tol * std::max(std::abs(y[i]), std::abs(y_new[i]));
      err += (e / scale) * (e / scale);
    }
    err = std::sqrt(err / static_cast<double>(n));
    if (!std::isfinite(err) || !y_new.allFinite()) {
      if (h <= opts.min_step * std::max(1.0, s)) {
        throw NumericalError("state became non-finite at t = " + std::to_string(sign * s));
      }
      h *= 0.1;
      continue;
    }

    if (err <= 1.0) {
      if (observer) {
        StepRecord rec{sign * s, sign * (s + h),
                       {y.data(), static_cast<std::size_t>(n)},
                       {k1.data(), static_cast<std::size_t>(n)},
                       {y_new.data(), static_cast<std::size_t>(n)},
                       {k7.data(), static_cast<std::size_t>(n)}};
        observer(rec);
      }
      s = last ? t_end : s + h;
      y.swap(y_new);
      k1.swap(k7);
      // PI controller (Hairer–Wanner constants).
      const double e = std::max(err, 1e-10);
      double factor = 0.9 * std::pow(e, -0.7 / 5) * std::pow(prev_err, 0.4 / 5);
      factor = std::clamp(factor, 0.2, 10.0);
      prev_err = e;
      h *= factor;
    } else {
      h *= std::max(0.2, 0.9 * std::pow(err, -0.2));
    }
  }
  return y;
}

Vec integrate_flow(const VectorFieldSpec& spec, const Vec& x0, double t, const IntegratorOptions& opts) {
  if (x0.size() != spec.dimension()) throw ValidationError("initial point has the wrong dimension");
  Rhs rhs = [&spec](std::span<const double> y, std::span<double> dy) { spec.eval(y, dy); };
  return integrate(rhs, x0, t, opts);
}

std::pair<Vec, Mat> integrate_variational(const VectorFieldSpec& spec, const Vec& x0, const Mat& frame,
                                          double t, const IntegratorOptions& opts) {
  const int d = spec.dimension();
  if (x0.size() != d || frame.rows() != d) throw ValidationError("variational state has the wrong dimension");
  const Eigen::Index k = frame.cols();
  Vec y(d + d * k);
  y.head(d) = x0;
  for (Eigen::Index j = 0; j < k; ++j) y.segment(d + d * j, d) = frame.col(j);

  Mat jac(d, d);
  Rhs rhs = [&spec, &jac, d, k](std::span<const double> yy, std::span<double> dy) {
    const auto x = yy.first(static_cast<std::size_t>(d));
    spec.eval(x, dy.first(static_cast<std::size_t>(d)));
    spec.eval_jacobian(x, jac);
    Eigen::Map<const Mat> v(yy.data() + d, d, k);
    Eigen::Map<Mat> dv(dy.data() + d, d, k);
    dv.noalias() = jac * v;
  };
  const Vec out = integrate(rhs, y, t, opts);
  Mat v(d, k);
  for (Eigen::Index j = 0; j < k; ++j) v.col(j) = out.segment(d + d * j, d);
  return {out.head(d), v};
}

}  // namespace foliacert
