#pragma once

#include <cstdint>
#include <memory>
#include <string>
#include <vector>

#include "foliacert/cocycle.hpp"
#include "foliacert/errors.hpp"
#include "foliacert/field_spec.hpp"

namespace foliacert {

/// Chart maps fail the injectivity test on the requested disk; carries a smaller radius that is
/// expected to pass.
class ChartInjectivityError : public NumericalError {
 public:
  ChartInjectivityError(const std::string& msg, double suggested_rho)
      : NumericalError(msg), suggested_rho_(suggested_rho) {}
  double suggested_rho() const { return suggested_rho_; }

 private:
  double suggested_rho_;
};

/// Hadamard–Perron constants for a sequence of steps with stable norms lambda_n and
/// center-unstable co-norms mu_n.
struct HPConstants {
  double lambda_min = 0.0;
  double sigma = 0.0;
  double gamma = 0.0;
  double delta = 0.0;
  std::vector<double> lambda, mu, lambda_p, mu_p, nu;
  double nu_sup = 0.0;
  bool feasible = false;
  std::string failure;  // which inequality failed, when infeasible
};

/// gamma = min{1, sigma^{-1/2} - 1} / 2, delta = half its admissible bound,
/// lambda'_n = (1+gamma)(lambda_n + delta(1+gamma)), mu'_n = mu_n/(1+gamma) - delta and
/// nu_n = (lambda'_n + min(mu'_n, 1)) / 2. Feasible iff lambda'_n < nu_n < mu'_n for every n
/// and, when sup lambda_n < 1, also sup lambda'_n < 1 and sup nu_n < 1.
HPConstants hp_constants(const std::vector<double>& lambda, const std::vector<double>& mu, double sigma,
                         double lambda_min);

/// Smooth map between consecutive chart coordinate spaces with f(0) = 0.
class ChartStep {
 public:
  virtual ~ChartStep() = default;
  virtual Vec apply(const Vec& p) const = 0;
  virtual Mat jacobian(const Vec& p) const = 0;
  /// Size of the evaluation error of apply(); changes below it are not resolvable.
  virtual double noise() const { return 0.0; }
};

/// Affine chart p -> base + [Ps | Pcu] p.
struct ChartFrame {
  Vec base;
  Mat Ps;   // d x d_s
  Mat Pcu;  // d x d_cu, orthonormal complement of Ps
  double rho = 0.0;
  double C1 = 1.0;  // condition number of [Ps | Pcu]

  Mat basis() const;
  Vec to_ambient(const Vec& p) const;
};

struct ChartSequence {
  int d_s = 1;
  double T = 0.0;
  double rho = 0.0;
  std::vector<ChartFrame> frames;                     // n_steps + 1 charts
  std::vector<std::shared_ptr<const ChartStep>> steps;  // steps[n]: chart n -> chart n+1
  std::vector<double> lambda, mu;                     // |A_n| and co-norm of B_n of Df_n(0)
};

/// Charts at X_{nT}(x), n = 0..n_steps, with Ps = estimated E^s and Pcu its orthogonal
/// complement; f_n(p) = B_{n+1}^T (X_T(base_n + B_n p) - X_T(base_n)). Throws
/// ChartInjectivityError when the chart maps fail the injectivity test on D_rho.
ChartSequence build_charts(const VectorFieldSpec& spec, const Vec& x, double T, int n_steps, double rho,
                           const CocycleOptions& opts = {}, int jobs = 0);

/// Sufficient test that v -> pi_cu f(u, v) is injective on the rho-ball for every |u| <= rho:
/// |(D_v pi_cu f(0))^{-1} (D_v pi_cu f(u,v) - D_v pi_cu f(0))| < 1 at sampled points. Returns
/// the worst ratio found.
double chart_injectivity_ratio(const ChartStep& step, int d_s, int d, double rho, int samples,
                               std::uint64_t seed = 1);

/// Graph of phi: [-rho, rho]^{d_s} -> R^{d_cu} on a uniform grid with `n` nodes per axis and
/// multilinear interpolation; queries outside the disk are clamped to its boundary.
class GraphPatch {
 public:
  GraphPatch() = default;
  GraphPatch(int d_s, int d_cu, double rho, int n);

  int d_s() const { return d_s_; }
  int d_cu() const { return d_cu_; }
  double rho() const { return rho_; }
  int nodes_per_axis() const { return n_; }
  std::size_t size() const { return values_.size(); }

  Vec node(std::size_t k) const;  // stable coordinates of grid node k
  Vec& value(std::size_t k) { return values_[k]; }
  const Vec& value(std::size_t k) const { return values_[k]; }

  Vec operator()(const Vec& u) const;
  /// Central-difference slope of the interpolant; used as the Newton correction term.
  Mat derivative(const Vec& u) const;

  double lipschitz() const;       // discrete, over neighbouring nodes
  double sup_distance(const GraphPatch& other) const;

 private:
  int d_s_ = 1, d_cu_ = 2;
  double rho_ = 0.0;
  int n_ = 0;
  std::vector<Vec> values_;
};

struct HPOptions {
  int grid = 65;  // odd, so u = 0 is a node
  int max_iter = 100;
  double fix_tol = 1e-12;
  double newton_tol = 1e-15;  // relative to max(1, |v|)
  int newton_max = 50;
};

struct HPResult {
  std::vector<GraphPatch> patches;  // one per chart; the last one is the seed phi = 0
  std::vector<double> changes;      // sup-change per sweep
  int sweeps = 0;
  bool converged = false;
  double noise_floor = 0.0;         // max noise() over the steps; each chart is judged by its own
  bool noise_limited = false;       // converged at the noise floor rather than at fix_tol
  double invariance_defect = 0.0;   // sup dist(f_n(graph phi_n), graph phi_{n+1})
  double max_growth_ratio = 0.0;    // sup |f_n(q)| / (lambda'_n |q|) over q on the graphs (if hp given)
  double phi0_slope = 0.0;          // |D phi_0(0)| by central difference
};

/// Jacobi sweeps of the backward graph transform: phi_n <- pullback of phi_{n+1} through f_n,
/// starting from phi = 0, until the change of every phi_n is at most max(fix_tol, f_n.noise()).
/// Throws NumericalError when the change relative to that tolerance grows for 5 consecutive sweeps.
HPResult hadamard_perron(const std::vector<std::shared_ptr<const ChartStep>>& steps, int d_s, int d_cu, double rho,
                         const HPOptions& opts = {}, const HPConstants* hp = nullptr, int jobs = 0);

HPResult hadamard_perron(const ChartSequence& charts, const HPOptions& opts = {}, const HPConstants* hp = nullptr,
                         int jobs = 0);

struct LeafTestOptions {
  int samples = 8;          // leaf points on each side of the base point
  double cu_offset = 0.0;   // > 0 moves the test points off the leaf along Pcu (control case)
  double noise = 1e-9;      // separations below noise * max(1, |X_t x|) are not resolved
  IntegratorOptions integrator{};
};

struct LeafTestReport {
  std::vector<double> times;
  std::vector<double> ratios;  // sup_y d(X_t x, X_t y) / d(x, y), resolved times only
  double fitted_rate = 0.0;    // exp of the least-squares slope of log ratio vs t (t = 0 included)
  double fitted_C = 0.0;       // max_t ratio_t / nu_claim^t
  bool pass = false;
};

/// Forward contraction along a computed leaf, at t = 1..horizon. Once a separation falls
/// below the noise floor the floor itself is recorded (an upper bound) and later times are
/// dropped for that point. Passes when the fitted rate is below 1 and fitted_C <= 10.
LeafTestReport leaf_contraction_test(const VectorFieldSpec& spec, const ChartFrame& chart, const GraphPatch& leaf,
                                     int horizon, double nu_claim, const LeafTestOptions& opts = {});

/// Leaf as an ambient polyline (s, point) over the grid nodes (d_s = 1).
std::vector<std::pair<double, Vec>> leaf_polyline(const ChartFrame& chart, const GraphPatch& leaf);

/// Angle between the leaf tangent at the base point and the chart's stable direction.
double leaf_tangency_angle(const GraphPatch& leaf);

struct BlockMatrix {
  Mat A, B, C, D;  // s->s, cu->s, s->cu, cu->cu

  static BlockMatrix split(const Mat& h, int d_s);
  Mat full() const;
};

/// Gamma(l) = (C + D l)(A + B l)^{-1}. Throws NumericalError if A + B l is singular.
Mat linear_graph_transform(const BlockMatrix& h, const Mat& l);

/// Estimate of Lip(Gamma) on the unit disk {|l| <= 1}: maximum of probed difference quotients
/// and of sampled derivative norms.
double graph_transform_lipschitz(const BlockMatrix& h, int probes = 200, std::uint64_t seed = 1);

struct FiberSample {
  double log_lip = 0.0;        // log Lip(Gamma_x)
  double log_norm_inv = 0.0;   // log |Dh^{-1} on T_{hx}M| = log |DX_T(hx)|
  double log_product = 0.0;    // log_lip + q log_norm_inv
  double eta = 0.0;            // log bunching product over T at hx
  bool pass = false;
};

struct FiberReport {
  std::vector<FiberSample> samples;
  bool pass = false;
};

/// At each sample z (playing hx, with h = X_{-T}), the graph transform of Dh at x = X_T z in the
/// splitting E^s + E^cu, its Lipschitz constant, and the bunching exponent over [0, T] at z.
/// Passes when log_product < 0 and eta < 0 at every sample (with a 1e-9 margin).
FiberReport fiber_contraction_check(const VectorFieldSpec& spec, const std::vector<Vec>& samples, double q, double T,
                                    const CocycleOptions& opts = {}, int jobs = 0);

/// Affine transversal: point + span(columns).
struct Transversal {
  Vec point;
  Mat span;
};

struct HolonomyOptions {
  double rho = 0.15;
  double T = 1.0;
  int n_steps = 4;
  HPOptions hp{};
  CocycleOptions cocycle{};
};

struct HolonomyReport {
  std::vector<double> source;        // parameters along the source curve
  std::vector<Vec> target;           // coordinates in the target transversal (empty when missed)
  std::vector<bool> hit;
  double exponent = 0.0;             // fitted modulus-of-continuity exponent (EMPIRICAL)
  std::vector<std::string> notes;
};

/// Slides n_points points of the source curve (point + s * span.col(0), spacing apart) along
/// their computed stable leaves to the target transversal (dimension d_cu).
HolonomyReport holonomy_sample(const VectorFieldSpec& spec, const Transversal& source, const Transversal& target,
                               int n_points, double spacing, const HolonomyOptions& opts = {}, int jobs = 0);

}  // namespace foliacert
