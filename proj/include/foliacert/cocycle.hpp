#pragma once

#include <cstdint>
#include <ostream>
#include <string>
#include <vector>

#include "foliacert/field_spec.hpp"
#include "foliacert/integrator.hpp"

namespace foliacert {

/// Base point with a propagated tangent frame and the log stretching accumulated by the QR
/// renormalizations.
struct FlowState {
  Vec x;
  Mat frame;     // d x k, orthonormal right after a renormalization
  Vec log_norms; // per column
  double t = 0.0;
};

/// Integrates the base point and the frame jointly; every renorm_every time units the frame is
/// replaced by the Q factor of its QR decomposition and log|R_ii| is accumulated.
FlowState integrate_tangent(const VectorFieldSpec& spec, const Vec& x0, double t, const Mat& frame,
                            double renorm_every = 0.5, const IntegratorOptions& opts = {});

struct LyapunovOptions {
  double horizon = 500.0;
  double transient = 50.0;   // base-point transient discarded first
  double align = 20.0;       // frame pre-alignment before accumulating
  double renorm_every = 0.5;
  std::uint64_t seed = 1;
  IntegratorOptions integrator{};
};

struct LyapunovSpectrum {
  Vec exponents;         // ascending
  double horizon = 0.0;
  double tail_slope = 0.0;  // max |chi(T) - chi(T/2)| over the exponents
  bool converged = false;   // tail_slope <= 0.01
};

LyapunovSpectrum lyapunov_spectrum(const VectorFieldSpec& spec, const Vec& x0, const LyapunovOptions& opts = {});

struct CocycleOptions {
  double step = 0.1;      // length of one stored tangent map
  double t_back = 5.0;    // future used to converge E^s
  double t_fwd = 2.0;     // past used to converge E^cu
  double min_log_gap = 5.0;
  std::uint64_t seed = 1;
  IntegratorOptions integrator{};
};

/// An orbit segment stored as base points p_0..p_n (spacing `step`) and one-step tangent maps
/// M_i = DX_step(p_i). Both invariant bundles are estimated along the whole segment: E^s by
/// pulling a frame back from the far end (dominant for the inverse cocycle), E^cu by pushing a
/// frame forward from the start. Estimates are good away from the respective ends.
class CocycleTrack {
 public:
  /// Orbit of y over [0, length].
  static CocycleTrack from(const VectorFieldSpec& spec, const Vec& y, double length, const CocycleOptions& opts);

  /// Track through x covering [-past, future] in x's time; the past point is found by backward
  /// integration (keep `past` short: backward errors grow like the strongest contraction).
  static CocycleTrack around(const VectorFieldSpec& spec, const Vec& x, double past, double future,
                             const CocycleOptions& opts);

  int size() const { return static_cast<int>(points_.size()); }  // number of base points
  double step() const { return step_; }
  int origin() const { return origin_; }  // index of the point the track was built around
  int steps_for(double t) const;          // t / step, checked to be an integer

  const Vec& point(int i) const { return points_[static_cast<std::size_t>(i)]; }
  const Mat& map(int i) const { return maps_[static_cast<std::size_t>(i)]; }
  const Mat& Es(int i) const { return es_[static_cast<std::size_t>(i)]; }
  const Mat& Ecu(int i) const { return ecu_[static_cast<std::size_t>(i)]; }

  /// log of the operator norms over [i, i + k]: |DX_t|E^s|, |DX_{-t}|E^cu at the end|, |DX_t|E^cu|.
  struct LogNorms {
    double ns = 0.0, ncu_inv = 0.0, ncu = 0.0;
  };
  LogNorms log_norms(int i, int k) const;

  /// log |det DX_t restricted to E^cu| over [i, i + k].
  double log_det_cu(int i, int k) const;

  /// Pull back v from point i + k to point i; returns the image and adds log growth to *log_scale.
  Vec pull_back(const Vec& v, int i, int k, double* log_scale = nullptr) const;
  Vec push_forward(const Vec& v, int i, int k, double* log_scale = nullptr) const;

  /// DX_t from point i to point i + k, and its inverse (short windows only: no rescaling).
  Mat product(int i, int k) const;
  Mat inverse_product(int i, int k) const;

  /// Accumulated log gap between E^cu and E^s growth along the whole track (QR of a full frame).
  double log_gap() const { return log_gap_; }

 private:
  void estimate_bundles(int d_s, std::uint64_t seed);

  double step_ = 0.1;
  int origin_ = 0;
  std::vector<Vec> points_;
  std::vector<Mat> maps_;
  std::vector<Eigen::PartialPivLU<Mat>> lus_;
  std::vector<Mat> es_, ecu_;
  std::vector<Mat> rs_;   // pull-back R factors: es_[i] * rs_[i] = M_i^{-1} es_[i+1] (d_s x d_s)
  std::vector<Mat> rcu_;  // push R factors: ecu_[i+1] * rcu_[i] = M_i ecu_[i] (d_cu x d_cu)
  double log_gap_ = 0.0;
};

struct Splitting {
  Mat Es;   // d x d_s, orthonormal columns
  Mat Ecu;  // d x d_cu, orthonormal columns
  double angle_margin = 0.0;  // smallest principal angle between the two
};

/// Smallest principal angle between the column spans of A and B (orthonormal or not).
double principal_angle(const Mat& A, const Mat& B);
/// Largest principal angle between two subspaces of equal dimension (0 when they coincide).
double subspace_distance(const Mat& A, const Mat& B);

/// E^s at x from the inverse cocycle over t_back. Throws NumericalError when the measured
/// domination gap over the window is below opts.min_log_gap.
Mat estimate_Es(const VectorFieldSpec& spec, const Vec& x, double t_back, const CocycleOptions& opts = {});

/// E^cu at x pushed forward from X_{-t_fwd}(x).
Mat estimate_Ecu(const VectorFieldSpec& spec, const Vec& x, double t_fwd, const CocycleOptions& opts = {});

Splitting estimate_splitting(const VectorFieldSpec& spec, const Vec& x, const CocycleOptions& opts = {});

struct FiniteTimeNorms {
  double ns = 0.0;       // |DX_t restricted to E^s_x|
  double ncu_inv = 0.0;  // |DX_{-t} restricted to E^cu at X_t x|
  double ncu = 0.0;      // |DX_t restricted to E^cu_x|
  double log_ns = 0.0, log_ncu_inv = 0.0, log_ncu = 0.0;
};

/// Norms along a track built around x (E^s converged from the future, E^cu from the past).
FiniteTimeNorms finite_time_norms(const VectorFieldSpec& spec, const Vec& x, double t, const CocycleOptions& opts = {});

/// Norms for a prescribed splitting at x, pushing both frames forward. Only stable for short t
/// or for exactly invariant splittings.
FiniteTimeNorms finite_time_norms(const VectorFieldSpec& spec, const Vec& x, double t, const Splitting& split,
                                  const IntegratorOptions& opts = {});

FiniteTimeNorms norms_from_logs(const CocycleTrack::LogNorms& l);

/// log(ns * ncu_inv * ncu^q).
double eta(const FiniteTimeNorms& n, double q);
double eta(const VectorFieldSpec& spec, const Vec& x, double t, double q, const CocycleOptions& opts = {});

/// t^{-1} log|det DX_t on E^cu_x|. For d_cu > 2 the minimum over `planes` random 2-planes in
/// E^cu (seeded) is returned instead.
double sectional_expansion_estimate(const VectorFieldSpec& spec, const Vec& x, double t,
                                    const CocycleOptions& opts = {}, int planes = 32);
double sectional_expansion_estimate(const VectorFieldSpec& spec, const Vec& x, double t, const Splitting& split,
                                    const IntegratorOptions& opts = {}, int planes = 32);

struct ConeParams {
  double a = 0.25;  // half-width, (0, 1/4]
};

struct ConeReport {
  double worst_stable_ratio = 0.0;  // over sampled boundary directions of the stable cone at X_t x
  double worst_cu_ratio = 0.0;      // over sampled boundary directions of the cu cone at x
  double min_backward_expansion = 0.0;  // min |DX_{-t} v| / |v| over the stable-cone samples
  bool pass = false;
  bool inconclusive = false;        // t below T_emp
};

ConeReport cone_invariance_check(const VectorFieldSpec& spec, const Vec& x, double t, const ConeParams& cone,
                                 int n_dirs, double t_emp, const CocycleOptions& opts = {});

/// Smallest multiple of `quantum` at which max over the samples of |DX_t|E^s| <= 1/150.
double empirical_T(const VectorFieldSpec& spec, const std::vector<Vec>& samples, const CocycleOptions& opts = {},
                   double quantum = 0.5, double t_max = 20.0, int jobs = 0);

/// `count` points of a forward orbit, after `transient`, spaced `spacing` apart.
std::vector<Vec> sample_attractor(const VectorFieldSpec& spec, const Vec& x0, int count, double transient = 50.0,
                                  double spacing = 1.0, const IntegratorOptions& opts = {});

/// CSV dump `t,x1,...,xd` of a trajectory sampled every dt (17 significant digits).
void write_trajectory_csv(std::ostream& os, const VectorFieldSpec& spec, const Vec& x0, double t, double dt,
                          const IntegratorOptions& opts = {});

std::string format_double(double v);  // 17 significant digits

}  // namespace foliacert
