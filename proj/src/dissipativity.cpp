#include "foliacert/dissipativity.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

#include "foliacert/errors.hpp"

namespace foliacert {

DissipativityCertificate check_q(int d_s, const std::vector<SpectralData>& equilibria_in,
                                 const BoundCertificate& bound, double q) {
  if (d_s < 1) throw ValidationError("d_s must be at least 1");
  if (!(q >= 1.0 / d_s)) throw ValidationError("q must be at least 1/d_s");
  DissipativityCertificate cert;
  cert.q_tested = q;
  cert.cond_a_vacuous = equilibria_in.empty();
  bool a_ok = true;
  for (const SpectralData& sd : equilibria_in) {
    const double m = equilibrium_margin(sd, d_s, q);
    cert.cond_a.push_back(m);
    if (!(m < 0)) a_ok = false;
  }
  cert.cond_b = bound.combined_sup(d_s * q - 1.0);
  cert.holds = a_ok && cert.cond_b < 0;
  return cert;
}

double truncate_to(double q, double step) {
  if (!(step > 0)) throw ValidationError("truncation step must be positive");
  // 1e-9 relative slack so 1.2786 / 1e-4 = 12785.99999 still lands on 12786
  return std::floor(q / step + 1e-9) * step;
}

namespace {

bool cond_a_holds(const DissipativityCertificate& c) {
  return std::all_of(c.cond_a.begin(), c.cond_a.end(), [](double m) { return m < 0; });
}

}  // namespace

MaxQResult max_certified_q(int d_s, const std::vector<SpectralData>& equilibria_in,
                           const BoundCertificate& bound, double q_tol, double ceiling) {
  if (!(q_tol > 0)) throw ValidationError("q_tol must be positive");
  const double lo_limit = 1.0 / d_s;
  if (!(ceiling > lo_limit)) throw ValidationError("smoothness ceiling must exceed 1/d_s");
  const double inf = std::numeric_limits<double>::infinity();

  MaxQResult out;
  out.q1 = inf;
  for (const SpectralData& sd : equilibria_in) out.q1 = std::min(out.q1, equilibrium_q_bound(sd, d_s));

  const bool affine = bound.region.kind != "generic-box";
  if (affine) {
    if (bound.frob_sup > 0) {
      out.q2 = (1.0 / d_s) * (1.0 - bound.div_sup / bound.frob_sup);
    } else {
      out.q2 = bound.div_sup < 0 ? inf : lo_limit;
    }
    if (bound.div_sup >= 0) out.q2 = lo_limit;  // clause (b) already fails at q = 1/d_s
    out.q_closed = std::min(out.q1, out.q2);
  } else {
    // clause (b) alone, by bisection
    auto b_holds = [&](double q) { return bound.combined_sup(d_s * q - 1.0) < 0; };
    if (!b_holds(lo_limit)) {
      out.q2 = lo_limit;
    } else if (b_holds(ceiling)) {
      out.q2 = inf;
    } else {
      double lo = lo_limit, hi = ceiling;
      while (hi - lo > q_tol / 4) {
        const double mid = 0.5 * (lo + hi);
        (b_holds(mid) ? lo : hi) = mid;
      }
      out.q2 = lo;
    }
  }

  const DissipativityCertificate at_lo = check_q(d_s, equilibria_in, bound, lo_limit);
  if (!at_lo.holds) {
    out.binding = !cond_a_holds(at_lo) ? "equilibria: clause (a) fails already at q = 1/d_s"
                                       : "region: div G + (d_s q - 1)|DG|_2 is not negative at q = 1/d_s";
    return out;
  }
  const DissipativityCertificate at_top = check_q(d_s, equilibria_in, bound, ceiling);
  if (at_top.holds) {
    out.certified = true;
    out.q_bisect = ceiling;
    out.q_max = ceiling;
    out.ceiling_limited = true;
    out.binding = "ceiling";
    return out;
  }

  double lo = lo_limit, hi = ceiling;
  DissipativityCertificate fail_cert = at_top;
  while (hi - lo > q_tol / 4) {
    const double mid = 0.5 * (lo + hi);
    DissipativityCertificate c = check_q(d_s, equilibria_in, bound, mid);
    if (c.holds) {
      lo = mid;
    } else {
      hi = mid;
      fail_cert = std::move(c);
    }
  }
  out.q_bisect = lo;
  out.q_max = truncate_to(lo, q_tol);
  out.binding = !cond_a_holds(fail_cert) ? "equilibria" : "region";
  if (!(out.q_max > lo_limit)) {
    out.binding = "no q > 1/d_s certifiable at tolerance q_tol; binding: " + out.binding;
    return out;
  }
  out.certified = true;
  return out;
}

}  // namespace foliacert
