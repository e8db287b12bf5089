#include "foliacert/region_bounds.hpp"

#include <algorithm>
#include <cmath>
#include <iomanip>
#include <limits>
#include <sstream>

#include <boost/multiprecision/cpp_dec_float.hpp>

#include "foliacert/errors.hpp"
#include "foliacert/parallel.hpp"

namespace foliacert {

namespace {

using Dec = boost::multiprecision::cpp_dec_float_50;

Dec to_dec(const Rational& r) { return Dec(numerator(r)) / Dec(denominator(r)); }

Dec dec_round_up(const Dec& x, int digits) {
  if (x == 0) return x;
  const int e = static_cast<int>(floor(log10(abs(x))).convert_to<double>());
  const Dec scale = pow(Dec(10), e - digits + 1);
  return ceil(x / scale) * scale;
}

Dec dec_round_down(const Dec& x, int digits) {
  if (x == 0) return x;
  const int e = static_cast<int>(floor(log10(abs(x))).convert_to<double>());
  const Dec scale = pow(Dec(10), e - digits + 1);
  return floor(x / scale) * scale;
}

// Nearest double, then nudged so the double is >= x.
double upper_double(const Dec& x) {
  double v = x.convert_to<double>();
  if (Dec(v) < x) v = std::nextafter(v, std::numeric_limits<double>::infinity());
  return v;
}

double lower_double(const Dec& x) {
  double v = x.convert_to<double>();
  if (Dec(v) > x) v = std::nextafter(v, -std::numeric_limits<double>::infinity());
  return v;
}

std::string dec_text(const Dec& x) {
  // up to 12 significant digits, trailing zeros trimmed; only used for rounded decimals
  std::ostringstream os;
  os << std::setprecision(12) << std::fixed << x;
  std::string s = os.str();
  if (s.find('.') != std::string::npos) {
    while (!s.empty() && s.back() == '0') s.pop_back();
    if (!s.empty() && s.back() == '.') s.pop_back();
  }
  return s;
}

std::string rational_text(const Rational& r) {
  std::ostringstream os;
  os << numerator(r);
  if (denominator(r) != 1) os << "/" << denominator(r);
  return os.str();
}

}  // namespace

double round_up_sig(double x, int digits) { return upper_double(dec_round_up(Dec(x), digits)); }
double round_down_sig(double x, int digits) { return lower_double(dec_round_down(Dec(x), digits)); }

double BoundCertificate::combined_sup(double c) const {
  if (c < 0) throw ValidationError("combined bound needs a nonnegative weight");
  if (region.kind == "generic-box" && spec && region.box) {
    return generic_sup_over_box(*spec, *region.box, BoxExpression::combined, region.grid, c).bound;
  }
  return div_sup + c * frob_sup;
}

Rational lorenz_ellipsoid_bound(const Rational& b, const Rational& r) {
  if (b <= 1) {
    throw BoundError("trapping ellipsoid needs b > 1 (got b = " + rational_text(b) + ")");
  }
  return b * b * r * r / (4 * (b - 1));
}

double lorenz_cross_bound(double r, double R_sq) {
  if (R_sq < 0) throw ValidationError("R^2 must be nonnegative");
  const double s = r + std::sqrt(R_sq);
  return s * s;
}

Quadratic dyer_quadratic(double sigma, double r, double lambda) {
  if (sigma != 10.0 || r != 28.0) {
    std::ostringstream os;
    os << "no x1 quadratic is known for sigma = " << sigma << ", r = " << r
       << "; supply one explicitly or use the generic box bound";
    throw BoundError(os.str());
  }
  // (10a - 28)^2 + a (20 - lambda)(2 - lambda)
  return {100.0, -560.0 + (20.0 - lambda) * (2.0 - lambda), 784.0};
}

double largest_real_root(const Quadratic& q) {
  if (q.alpha == 0) {
    if (q.beta == 0) throw BoundError("degenerate quadratic has no root");
    return -q.gamma / q.beta;
  }
  const double disc = q.beta * q.beta - 4 * q.alpha * q.gamma;
  if (disc < 0) throw BoundError("quadratic has no real root (negative discriminant)");
  const double s = std::sqrt(disc);
  const double t = -0.5 * (q.beta + (q.beta >= 0 ? s : -s));
  double r1 = t / q.alpha;
  double r2 = t != 0 ? q.gamma / t : r1;
  return std::max(r1, r2);
}

double dyer_quadratic_root(double sigma, double r, double lambda) {
  return largest_real_root(dyer_quadratic(sigma, r, lambda));
}

VectorFieldSpec lorenz_field(const Rational& sigma, const Rational& r, const Rational& b) {
  const Expr x1 = variable(0), x2 = variable(1), x3 = variable(2);
  return VectorFieldSpec::create({constant(sigma) * (x2 - x1), constant(r) * x1 - x2 - x1 * x3,
                                  x1 * x2 - constant(b) * x3},
                                 {{"sigma", sigma}, {"r", r}, {"b", b}}, 1);
}

BoundCertificate lorenz_chain(const Rational& sigma, const Rational& b, const Rational& r,
                              const LorenzChainOptions& opts) {
  const bool stepwise = opts.rounding == Rounding::stepwise;
  BoundCertificate cert;
  cert.region.kind = "lorenz-chain";
  cert.region.parameters = {{"sigma", to_double(sigma)}, {"b", to_double(b)}, {"r", to_double(r)}};
  auto& steps = cert.region.steps;

  const Rational R_sq_exact = lorenz_ellipsoid_bound(b, r);
  steps.push_back({"R^2", to_double(R_sq_exact), rational_text(R_sq_exact),
                   "trapping ellipsoid x2^2 + (x3 - r)^2 <= R^2 with R^2 = b^2 r^2 / (4(b - 1))"});

  const Rational const_exact = 2 * sigma * sigma + 1 + b * b;
  Dec constant = to_dec(const_exact);
  Dec V;

  if (r == 0) {
    steps.push_back({"V_bound", 0.0, "0",
                     "r = 0: the attractor is the origin, so V = 2 x1^2 + x2^2 + (x3 - r)^2 vanishes on it"});
    V = 0;
  } else {
    Dec R_sq = to_dec(R_sq_exact);
    if (stepwise) {
      R_sq = dec_round_up(R_sq, 5);
      steps.push_back({"R^2 (rounded up)", upper_double(R_sq), dec_text(R_sq), "R^2 rounded up at 5 significant digits"});
    }

    Dec cross = to_dec(r) + sqrt(R_sq);
    cross *= cross;
    if (stepwise) cross = dec_round_up(cross, 5);
    steps.push_back({"(r+R)^2", upper_double(cross), stepwise ? dec_text(cross) : "",
                     std::string("x2^2 + x3^2 <= (r + R)^2 inside the ellipsoid") +
                         (stepwise ? ", rounded up at 5 significant digits" : "")});

    const Quadratic quad = opts.dyer_override
                               ? *opts.dyer_override
                               : dyer_quadratic(to_double(sigma), to_double(r), opts.dyer_lambda);
    // Refine the double root in high precision so the rounded value is trustworthy.
    Dec a = largest_real_root(quad);
    {
      const Dec qa = quad.alpha, qb = quad.beta, qc = quad.gamma;
      for (int it = 0; it < 4; ++it) a -= (qa * a * a + qb * a + qc) / (2 * qa * a + qb);
    }
    if (!(a > 0)) throw BoundError("x1 quadratic root is not positive");
    std::ostringstream qtext;
    qtext << "largest root of " << quad.alpha << " a^2 + (" << quad.beta << ") a + " << quad.gamma;
    if (!opts.dyer_override) qtext << " = (10a - 28)^2 + a(20 - lambda)(2 - lambda), lambda = " << opts.dyer_lambda;
    if (stepwise) {
      a = dec_round_down(a, 5);
      qtext << ", rounded down at 5 significant digits";
    }
    steps.push_back({"a", lower_double(a), stepwise ? dec_text(a) : "", qtext.str()});

    Dec x1_sq = cross / a;
    if (stepwise) x1_sq = dec_round_up(x1_sq, 3);
    steps.push_back({"x1^2_bound", upper_double(x1_sq), stepwise ? dec_text(x1_sq) : "",
                     std::string("a x1^2 <= x2^2 + x3^2 on the attractor, so x1^2 <= (r+R)^2 / a") +
                         (stepwise ? ", rounded up at 3 significant digits" : "")});

    Dec R_sq_for_V = R_sq;
    if (stepwise) R_sq_for_V = dec_round_up(R_sq, 3);
    V = 2 * x1_sq + R_sq_for_V;
    if (stepwise) V = dec_round_up(V, 4);
    steps.push_back({"V_bound", upper_double(V), stepwise ? dec_text(V) : "",
                     std::string("V = 2 x1^2 + x2^2 + (x3 - r)^2 <= 2 x1^2_bound + R^2") +
                         (stepwise ? " (R^2 rounded up at 3 significant digits), rounded up at 4" : "")});
  }

  if (stepwise) constant = dec_round_up(constant, 5);
  steps.push_back({"frobenius_constant", upper_double(constant), stepwise ? dec_text(constant) : rational_text(const_exact),
                   std::string("|DG|_2^2 = 2 sigma^2 + 1 + b^2 + V(x)") +
                       (stepwise ? "; constant rounded up at 5 significant digits" : "")});

  const Dec frob_sq = constant + V;
  const Dec frob = sqrt(frob_sq);
  cert.frob_sup = upper_double(frob);
  steps.push_back({"frob_sup^2", upper_double(frob_sq), stepwise ? dec_text(frob_sq) : "",
                   "frobenius_constant + V_bound"});
  steps.push_back({"frob_sup", cert.frob_sup, "", "sqrt(frob_sup^2), rounded up to the next double"});

  const Rational div = -(sigma + 1 + b);
  cert.div_sup = upper_double(to_dec(div));
  steps.push_back({"div_sup", cert.div_sup, rational_text(div), "div G = -(sigma + 1 + b) identically"});
  return cert;
}

BoxSupResult generic_sup_over_box(const VectorFieldSpec& spec, const Box& box, BoxExpression kind, int grid,
                                  double c, int jobs) {
  const int d = spec.dimension();
  if (box.dimension() != d) throw ValidationError("box dimension differs from the field dimension");
  if (grid < 2) throw ValidationError("box grid needs at least 2 points per axis");
  for (int i = 0; i < d; ++i) {
    if (!std::isfinite(box.lo[i]) || !std::isfinite(box.hi[i]) || box.hi[i] < box.lo[i]) {
      throw ValidationError("box must be finite and nonempty");
    }
  }
  if (kind == BoxExpression::combined && c < 0) throw ValidationError("combined bound needs c >= 0");

  const JacobianForm& jac = spec.jacobian_form();
  std::vector<Interval> ibox;
  for (int i = 0; i < d; ++i) ibox.emplace_back(box.lo[i], box.hi[i]);

  // Lipschitz constants from interval enclosures of the first derivatives of div and of the
  // Jacobian entries (i.e. second derivatives of G).
  double L_div = 0.0;
  double L_frob = 0.0;
  try {
    if (kind != BoxExpression::frob) {
      double s = 0;
      for (int k = 0; k < d; ++k) {
        const double m = evaluate(derivative(jac.divergence, k), ibox).mag();
        s += m * m;
      }
      L_div = detail::up(std::sqrt(s));
    }
    if (kind != BoxExpression::div) {
      double s = 0;
      for (const auto& row : jac.entries) {
        for (const Expr& e : row) {
          for (int k = 0; k < d; ++k) {
            const double m = evaluate(derivative(e, k), ibox).mag();
            s += m * m;
          }
        }
      }
      L_frob = detail::up(std::sqrt(s));
    }
  } catch (const BoundError& e) {
    throw BoundError(std::string("Lipschitz constant unavailable on the box: ") + e.what());
  }
  if (!std::isfinite(L_div) || !std::isfinite(L_frob)) throw BoundError("Lipschitz constant unavailable on the box");

  double L = 0.0;
  switch (kind) {
    case BoxExpression::div: L = L_div; break;
    case BoxExpression::frob: L = L_frob; break;
    case BoxExpression::combined: L = L_div + c * L_frob; break;
  }

  // A symbolically constant expression is returned exactly.
  if (kind == BoxExpression::div && jac.divergence.constant_value()) {
    const double v = to_double(*jac.divergence.constant_value());
    return {v, v, 0.0, 0.0};
  }
  if (kind == BoxExpression::frob && jac.frobenius_sq.constant_value()) {
    const double v = std::sqrt(to_double(*jac.frobenius_sq.constant_value()));
    return {v == 0 ? 0.0 : detail::up(v), v, 0.0, 0.0};
  }

  Vec h(d);
  for (int i = 0; i < d; ++i) h[i] = (box.hi[i] - box.lo[i]) / (grid - 1);
  const double diameter = h.norm();

  // rows indexed by the first coordinate; each worker takes a slab
  const auto g = static_cast<std::size_t>(grid);
  std::size_t per_slab = 1;
  for (int i = 1; i < d; ++i) per_slab *= g;
  std::vector<double> slab_max(g, -std::numeric_limits<double>::infinity());
  parallel_for(g, jobs, [&](std::size_t i0) {
    Vec x(d);
    double best = -std::numeric_limits<double>::infinity();
    for (std::size_t rest = 0; rest < per_slab; ++rest) {
      x[0] = i0 + 1 == g ? box.hi[0] : box.lo[0] + static_cast<double>(i0) * h[0];
      std::size_t r = rest;
      for (int k = 1; k < d; ++k) {
        const std::size_t ik = r % g;
        r /= g;
        x[k] = ik + 1 == g ? box.hi[k] : box.lo[k] + static_cast<double>(ik) * h[k];
      }
      const std::span<const double> xs(x.data(), static_cast<std::size_t>(d));
      double v = 0;
      switch (kind) {
        case BoxExpression::div: v = spec.eval_divergence(xs); break;
        case BoxExpression::frob: v = std::sqrt(spec.eval_frobenius_sq(xs)); break;
        case BoxExpression::combined: v = spec.eval_divergence(xs) + c * std::sqrt(spec.eval_frobenius_sq(xs)); break;
      }
      best = std::max(best, v);
    }
    slab_max[i0] = best;
  });
  const double sample_max = *std::max_element(slab_max.begin(), slab_max.end());
  if (!std::isfinite(sample_max)) throw BoundError("expression is not finite on the box grid");

  double bound = sample_max + L * diameter / 2;
  // cover rounding in the sample evaluation
  bound += 16 * std::numeric_limits<double>::epsilon() * (std::abs(sample_max) + L * diameter);
  return {detail::up(bound), sample_max, L, diameter};
}

BoundCertificate generic_box_certificate(const VectorFieldSpec& spec, const Box& box, int grid, int jobs) {
  BoundCertificate cert;
  cert.region.kind = "generic-box";
  cert.region.box = box;
  cert.region.grid = grid;
  cert.spec = spec;
  const BoxSupResult div = generic_sup_over_box(spec, box, BoxExpression::div, grid, 0.0, jobs);
  const BoxSupResult frob = generic_sup_over_box(spec, box, BoxExpression::frob, grid, 0.0, jobs);
  cert.div_sup = div.bound;
  cert.frob_sup = frob.bound;
  std::ostringstream os;
  os << "max over a " << grid << "-point-per-axis grid + L h / 2 with L = " << div.lipschitz
     << " from interval bounds on grad div";
  cert.region.steps.push_back({"div_sup", div.bound, "", os.str()});
  os.str("");
  os << "max over a " << grid << "-point-per-axis grid + L h / 2 with L = " << frob.lipschitz
     << " from interval bounds on second derivatives of G";
  cert.region.steps.push_back({"frob_sup", frob.bound, "", os.str()});
  return cert;
}

}  // namespace foliacert
