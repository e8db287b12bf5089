#pragma once

#include <string>
#include <vector>

#include "foliacert/region_bounds.hpp"
#include "foliacert/spectral.hpp"

namespace foliacert {

/// Outcome of testing one exponent q against the two strong-dissipativity clauses:
///   (a) Re(l1 - l_{d_s+1} + q l_d) < 0 at every equilibrium in the attractor,
///   (b) sup over the region of div G + (d_s q - 1) |DG|_2 < 0.
struct DissipativityCertificate {
  double q_tested = 0.0;
  std::vector<double> cond_a;  // one margin per equilibrium, same order as the input
  bool cond_a_vacuous = false; // no equilibria declared in the attractor
  double cond_b = 0.0;
  bool holds = false;
};

DissipativityCertificate check_q(int d_s, const std::vector<SpectralData>& equilibria_in,
                                 const BoundCertificate& bound, double q);

struct MaxQResult {
  bool certified = false;
  double q_max = 0.0;              // truncated to the q_tol grid; valid only when certified
  double q_bisect = 0.0;           // raw bisection end point (largest q known to hold)
  double q1 = 0.0;                 // equilibrium clause alone (+inf if unconstrained)
  double q2 = 0.0;                 // region clause alone (+inf if unconstrained)
  std::optional<double> q_closed;  // min(q1, q2) when clause (b) is affine in q
  bool ceiling_limited = false;
  std::string binding;             // "equilibria", "region", "ceiling" or the failure reason
};

/// Bisection for the largest q in (1/d_s, ceiling] at which check_q holds, to q_tol. The
/// reported q_max is truncated (never rounded up) to a multiple of q_tol.
MaxQResult max_certified_q(int d_s, const std::vector<SpectralData>& equilibria_in,
                           const BoundCertificate& bound, double q_tol, double ceiling = 2.0);

/// Truncates q down to a multiple of step (with a small tolerance for representation error).
double truncate_to(double q, double step);

}  // namespace foliacert
