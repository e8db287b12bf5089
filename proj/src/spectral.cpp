#include "foliacert/spectral.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <optional>
#include <random>

#include "foliacert/errors.hpp"
#include "foliacert/parallel.hpp"

namespace foliacert {

bool Box::contains(const Vec& x, double slack) const {
  for (int i = 0; i < dimension(); ++i) {
    if (x[i] < lo[i] - slack || x[i] > hi[i] + slack) return false;
  }
  return true;
}

std::string to_string(Membership m) {
  switch (m) {
    case Membership::declared_in: return "declared-in";
    case Membership::declared_out: return "declared-out";
    case Membership::unknown: return "unknown";
  }
  return "unknown";
}

namespace {

constexpr double kNewtonTol = 1e-10;
constexpr double kMergeDistance = 1e-6;

std::optional<Vec> newton(const VectorFieldSpec& spec, Vec x, const Box& box) {
  const double diameter = (box.hi - box.lo).norm();
  Vec g = eval_field(spec, x);
  for (int it = 0; it < 60; ++it) {
    if (!g.allFinite()) return std::nullopt;
    if (g.norm() <= kNewtonTol * 1e-2) break;
    const Mat j = eval_jacobian(spec, x);
    Eigen::FullPivLU<Mat> lu(j);
    if (!lu.isInvertible()) return std::nullopt;
    Vec step = lu.solve(g);
    // Damp wild steps so seeds do not jump across the whole search box.
    const double len = step.norm();
    if (len > 0.25 * diameter) step *= 0.25 * diameter / len;
    x -= step;
    g = eval_field(spec, x);
    if (step.norm() <= 1e-15 * std::max(1.0, x.norm())) break;
  }
  if (!g.allFinite() || g.norm() > kNewtonTol) return std::nullopt;
  // seeds come from the box; roots may lie outside it, but not further than one diameter
  if (!box.contains(x, diameter)) return std::nullopt;
  return x;
}

bool lex_less(const Vec& a, const Vec& b) {
  for (Eigen::Index i = 0; i < a.size(); ++i) {
    if (a[i] != b[i]) return a[i] < b[i];
  }
  return false;
}

}  // namespace

EquilibriumSearch find_equilibria(const VectorFieldSpec& spec, const Box& box, int grid_density, int jobs) {
  const int d = spec.dimension();
  if (box.dimension() != d) throw ValidationError("search box dimension differs from the field dimension");
  if (grid_density < 1) throw ValidationError("grid density must be positive");
  for (int i = 0; i < d; ++i) {
    if (!(box.hi[i] > box.lo[i])) throw ValidationError("search box is degenerate");
  }

  std::size_t total = 1;
  for (int i = 0; i < d; ++i) total *= static_cast<std::size_t>(grid_density);

  std::vector<std::optional<Vec>> roots(total);
  parallel_for(total, jobs, [&](std::size_t idx) {
    Vec seed(d);
    std::size_t rest = idx;
    for (int i = 0; i < d; ++i) {
      const auto k = static_cast<double>(rest % static_cast<std::size_t>(grid_density));
      rest /= static_cast<std::size_t>(grid_density);
      // cell centres, so no seed sits exactly on a symmetric plane by accident of the grid
      seed[i] = box.lo[i] + (k + 0.5) / grid_density * (box.hi[i] - box.lo[i]);
    }
    roots[idx] = newton(spec, seed, box);
  });

  std::vector<Vec> found;
  for (auto& r : roots) {
    if (r) found.push_back(*r);
  }
  std::sort(found.begin(), found.end(), lex_less);

  EquilibriumSearch out;
  for (const Vec& x : found) {
    bool merged = false;
    for (const Equilibrium& e : out.equilibria) {
      if ((e.location - x).norm() <= kMergeDistance) {
        merged = true;
        break;
      }
    }
    if (merged) continue;
    // Snap tiny coordinates so a root at 0 prints as 0 rather than 1e-300.
    Vec loc = x;
    for (int i = 0; i < d; ++i) {
      if (std::abs(loc[i]) < 1e-14) loc[i] = 0.0;
    }
    Equilibrium eq;
    eq.residual = eval_field(spec, loc).norm();
    if (eq.residual > eval_field(spec, x).norm()) {
      loc = x;
      eq.residual = eval_field(spec, x).norm();
    }
    eq.location = loc;
    out.equilibria.push_back(eq);
  }
  if (out.equilibria.empty()) out.warnings.push_back("no equilibria found from seeds in the search box");
  return out;
}

SpectralData eigen_data(const VectorFieldSpec& spec, const Equilibrium& eq) {
  const int d = spec.dimension();
  const Mat j = eval_jacobian(spec, eq.location);
  if (!j.allFinite()) throw NumericalError("Jacobian at the equilibrium is not finite");
  Eigen::EigenSolver<Mat> solver(j, true);
  if (solver.info() != Eigen::Success) throw NumericalError("eigenvalue iteration did not converge");

  const double scale = std::max(1.0, j.norm());
  std::vector<int> order(static_cast<std::size_t>(d));
  for (int i = 0; i < d; ++i) order[static_cast<std::size_t>(i)] = i;
  const auto& ev = solver.eigenvalues();
  std::sort(order.begin(), order.end(), [&](int a, int b) {
    const double ra = ev[a].real(), rb = ev[b].real();
    if (std::abs(ra - rb) > 1e-12 * scale) return ra < rb;
    return ev[a].imag() < ev[b].imag();
  });

  SpectralData sd;
  sd.location = eq.location;
  sd.eigenvectors.resize(d, d);
  for (int k = 0; k < d; ++k) {
    const int src = order[static_cast<std::size_t>(k)];
    sd.eigenvalues.push_back(ev[src]);
    sd.eigenvectors.col(k) = solver.eigenvectors().col(src).normalized();
  }

  sd.hyperbolic = std::all_of(sd.eigenvalues.begin(), sd.eigenvalues.end(),
                              [](const std::complex<double>& l) { return std::abs(l.real()) > 1e-8; });
  if (d == 3) {
    const bool real = std::all_of(sd.eigenvalues.begin(), sd.eigenvalues.end(),
                                  [&](const std::complex<double>& l) { return std::abs(l.imag()) <= 1e-12 * scale; });
    const double l1 = sd.eigenvalues[0].real(), l2 = sd.eigenvalues[1].real(), l3 = sd.eigenvalues[2].real();
    sd.lorenz_like = real && l1 < l2 && l2 < 0 && 0 < -l2 && -l2 < l3;
  }

  const int d_s = spec.stable_dim();
  const int negative = static_cast<int>(std::count_if(sd.eigenvalues.begin(), sd.eigenvalues.end(),
                                                      [](const std::complex<double>& l) { return l.real() < 0; }));
  if (negative != d_s && negative != d_s + spec.center_unstable_dim() - 1) {
    sd.warnings.push_back("equilibrium has " + std::to_string(negative) +
                          " eigenvalues with negative real part; the global d_s = " + std::to_string(d_s) +
                          " is used regardless");
  }
  if (!sd.hyperbolic) sd.warnings.push_back("equilibrium is not hyperbolic (|Re lambda| <= 1e-8)");
  return sd;
}

double equilibrium_margin(const SpectralData& sd, int d_s, double q) {
  const int d = static_cast<int>(sd.eigenvalues.size());
  if (d_s < 1 || d_s >= d) throw ValidationError("d_s must satisfy 1 <= d_s < d");
  return (sd.eigenvalues[0] - sd.eigenvalues[static_cast<std::size_t>(d_s)] + q * sd.eigenvalues.back()).real();
}

double equilibrium_q_bound(const SpectralData& sd, int d_s) {
  const int d = static_cast<int>(sd.eigenvalues.size());
  if (d_s < 1 || d_s >= d) throw ValidationError("d_s must satisfy 1 <= d_s < d");
  const double a = (sd.eigenvalues[0] - sd.eigenvalues[static_cast<std::size_t>(d_s)]).real();
  const double c = sd.eigenvalues.back().real();
  const double inf = std::numeric_limits<double>::infinity();
  if (c > 0) return std::max(-a / c, 0.0);
  if (c < 0) return inf;
  if (a < 0) return inf;
  throw BoundError("equilibrium condition undecidable: Re lambda_d = 0 and Re(lambda_1 - lambda_{d_s+1}) = 0");
}

Membership membership_heuristic(const VectorFieldSpec& spec, const Vec& equilibrium, const MembershipOptions& opts) {
  const int d = spec.dimension();
  std::mt19937_64 rng(opts.seed);
  std::normal_distribution<double> normal;
  Vec dir(d);
  for (int i = 0; i < d; ++i) dir[i] = normal(rng);
  Vec x = equilibrium + opts.offset * dir.normalized();

  bool escaped = false;
  bool returned = false;
  Vec probe(d);
  StepObserver watch = [&](const StepRecord& s) {
    if (returned) return;
    // check both ends and a few interior points of every step
    for (int k = 0; k <= 4; ++k) {
      const double t = s.t0 + (s.t1 - s.t0) * k / 4.0;
      hermite(s, t, {probe.data(), static_cast<std::size_t>(d)});
      const double r = (probe - equilibrium).norm();
      if (r > opts.escape) escaped = true;
      if (escaped && r < opts.radius) returned = true;
    }
  };
  Rhs rhs = [&spec](std::span<const double> y, std::span<double> dy) { spec.eval(y, dy); };
  const double chunk = 10.0;
  for (double t = 0; t < opts.horizon && !returned; t += chunk) {
    x = integrate(rhs, x, std::min(chunk, opts.horizon - t), opts.integrator, watch);
  }
  return returned ? Membership::declared_in : Membership::declared_out;
}

}  // namespace foliacert
