#pragma once

#include <complex>
#include <cstdint>
#include <string>
#include <vector>

#include "foliacert/field_spec.hpp"
#include "foliacert/integrator.hpp"

namespace foliacert {

/// Axis-aligned box [lo, hi] in R^d.
struct Box {
  Vec lo;
  Vec hi;

  int dimension() const { return static_cast<int>(lo.size()); }
  bool contains(const Vec& x, double slack = 0.0) const;
};

enum class Membership { declared_in, declared_out, unknown };
std::string to_string(Membership m);

struct Equilibrium {
  Vec location;
  double residual = 0.0;  // |G(location)|
  Membership in_attractor = Membership::unknown;
};

struct EquilibriumSearch {
  std::vector<Equilibrium> equilibria;  // sorted lexicographically by coordinates
  std::vector<std::string> warnings;
};

/// Newton's method from a grid_density^d lattice of seeds in the box. Converged roots within
/// 1e-6 of each other are merged; non-convergent seeds are dropped silently. A root may lie
/// outside the box, up to one box diameter away.
EquilibriumSearch find_equilibria(const VectorFieldSpec& spec, const Box& search_box, int grid_density,
                                  int jobs = 0);

struct SpectralData {
  Vec location;
  std::vector<std::complex<double>> eigenvalues;  // ascending real part, ties by imaginary part
  Eigen::MatrixXcd eigenvectors;                  // column j belongs to eigenvalues[j]
  bool hyperbolic = false;                        // every |Re lambda| > 1e-8
  bool lorenz_like = false;                       // d = 3, real, l1 < l2 < 0 < -l2 < l3
  std::vector<std::string> warnings;
};

/// Spectrum of DG at an equilibrium. The stable-count warning uses spec.stable_dim().
SpectralData eigen_data(const VectorFieldSpec& spec, const Equilibrium& eq);

/// Supremum of q > 0 with Re(l1 - l_{d_s+1} + q l_d) < 0; +inf if it holds for every q.
/// Throws BoundError in the undecidable case Re l_d = 0 = Re(l1 - l_{d_s+1}).
double equilibrium_q_bound(const SpectralData& sd, int d_s);

/// Re(l1 - l_{d_s+1} + q l_d).
double equilibrium_margin(const SpectralData& sd, int d_s, double q);

struct MembershipOptions {
  double radius = 0.5;     // return ball
  double offset = 0.1;     // seed distance from the equilibrium
  double horizon = 1000.0; // forward time watched
  double escape = 1.0;     // the orbit must first leave this ball before a return counts
  std::uint64_t seed = 1;
  IntegratorOptions integrator{};
};

/// Heuristic: declared-in when a forward orbit seeded near the equilibrium, after first leaving
/// the escape ball, comes back into the radius ball within the horizon; declared-out otherwise.
Membership membership_heuristic(const VectorFieldSpec& spec, const Vec& equilibrium,
                                const MembershipOptions& opts = {});

}  // namespace foliacert
