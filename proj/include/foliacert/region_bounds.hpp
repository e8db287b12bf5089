#pragma once

#include <optional>
#include <string>
#include <vector>

#include "foliacert/field_spec.hpp"
#include "foliacert/spectral.hpp"

namespace foliacert {

/// One link of a bound chain: the value established and the inequality that produced it.
struct BoundStep {
  std::string name;
  double value = 0.0;
  std::string exact;       // exact rational text when the step is exact, else empty
  std::string provenance;
};

struct RegionBound {
  std::string kind;  // "lorenz-chain" or "generic-box"
  std::vector<std::pair<std::string, double>> parameters;
  std::optional<Box> box;
  int grid = 0;
  std::vector<BoundStep> steps;
};

/// Certified upper bounds on div G and on |DG|_2 (Frobenius norm) over a region containing the
/// attractor. For a generic box the combined expression div + c |DG|_2 can be bounded directly,
/// which is tighter than div_sup + c frob_sup when div is not constant.
struct BoundCertificate {
  double div_sup = 0.0;
  double frob_sup = 0.0;
  RegionBound region;
  std::optional<VectorFieldSpec> spec;  // set for generic-box certificates

  /// Upper bound on sup(div + c |DG|_2) over the region, c >= 0.
  double combined_sup(double c) const;
};

/// R^2 = b^2 r^2 / (4 (b - 1)), exact. Throws BoundError when b <= 1.
Rational lorenz_ellipsoid_bound(const Rational& b, const Rational& r);

/// (r + R)^2 with R = sqrt(R^2).
double lorenz_cross_bound(double r, double R_sq);

/// Coefficients of alpha a^2 + beta a + gamma.
struct Quadratic {
  double alpha = 0.0, beta = 0.0, gamma = 0.0;
};

/// The quadratic (10a - 28)^2 + a(20 - lambda)(2 - lambda) whose largest root bounds the x1
/// extent of the classical attractor. Only (sigma, r) = (10, 28) is known; anything else throws
/// BoundError asking for an explicit quadratic.
Quadratic dyer_quadratic(double sigma, double r, double lambda);

/// Largest real root via the cancellation-free quadratic formula. BoundError if none exists.
double largest_real_root(const Quadratic& q);

double dyer_quadratic_root(double sigma, double r, double lambda);

enum class Rounding {
  stepwise,  // intermediates rounded to the printed digits, always toward the safe side
  exact,  // full precision throughout
};

struct LorenzChainOptions {
  Rounding rounding = Rounding::stepwise;
  double dyer_lambda = 11.0;
  std::optional<Quadratic> dyer_override;  // user-supplied quadratic for non-classical parameters
};

/// R^2 -> (r+R)^2 -> a -> x1^2 -> V -> sup |DG|_2 for the Lorenz family
/// x1' = sigma(x2 - x1), x2' = r x1 - x2 - x1 x3, x3' = x1 x2 - b x3, using
/// |DG|_2^2 = 2 sigma^2 + 1 + b^2 + V(x), V = 2 x1^2 + x2^2 + (x3 - r)^2.
///
/// A sharper x3 bound sometimes quoted for this system (x3 <= 38 on the attractor) is known to be
/// wrong and is not used.
BoundCertificate lorenz_chain(const Rational& sigma, const Rational& b, const Rational& r,
                              const LorenzChainOptions& opts = {});

/// The Lorenz field with the given parameters; used to check that a config's field really is
/// the family the chain applies to.
VectorFieldSpec lorenz_field(const Rational& sigma, const Rational& r, const Rational& b);

/// Rounds up (down) to the given number of significant decimal digits, exactly in decimal.
double round_up_sig(double x, int digits);
double round_down_sig(double x, int digits);

enum class BoxExpression { div, frob, combined };

struct BoxSupResult {
  double bound = 0.0;        // certified upper bound
  double sample_max = 0.0;   // max over the grid samples
  double lipschitz = 0.0;    // certified Lipschitz constant on the box
  double cell_diameter = 0.0;
};

/// max over a grid + L h / 2, with L from interval enclosures of symbolic second derivatives.
/// `c` is the weight of |DG|_2 for BoxExpression::combined. Throws BoundError if L cannot be
/// certified on the box.
BoxSupResult generic_sup_over_box(const VectorFieldSpec& spec, const Box& box, BoxExpression expr, int grid,
                                  double c = 0.0, int jobs = 0);

/// Bound certificate from generic_sup_over_box for div and |DG|_2.
BoundCertificate generic_box_certificate(const VectorFieldSpec& spec, const Box& box, int grid, int jobs = 0);

}  // namespace foliacert
