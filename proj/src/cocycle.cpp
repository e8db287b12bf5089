#include "foliacert/cocycle.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <functional>
#include <limits>
#include <random>

#include "foliacert/errors.hpp"
#include "foliacert/parallel.hpp"

namespace foliacert {

std::string format_double(double v) {
  char buf[40];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

namespace {

// Thin QR with a nonnegative diagonal in R, so frames vary continuously along an orbit.
void thin_qr(const Mat& w, Mat& q, Mat& r) {
  const Eigen::Index k = w.cols();
  Eigen::HouseholderQR<Mat> qr(w);
  q = qr.householderQ() * Mat::Identity(w.rows(), k);
  r = qr.matrixQR().topRows(k).triangularView<Eigen::Upper>();
  for (Eigen::Index j = 0; j < k; ++j) {
    if (r(j, j) < 0) {
      r.row(j) *= -1;
      q.col(j) *= -1;
    }
  }
}

Mat random_frame(int d, int k, std::mt19937_64& rng) {
  std::normal_distribution<double> normal;
  Mat m(d, k);
  for (int j = 0; j < k; ++j) {
    for (int i = 0; i < d; ++i) m(i, j) = normal(rng);
  }
  Mat q, r;
  thin_qr(m, q, r);
  return q;
}

// log of the largest and smallest singular values of a product of upper-triangular factors,
// accumulated with rescaling. For triangular factors the determinant is the product of the
// diagonals, which gives the smallest singular value without cancellation.
struct TriProduct {
  Mat p;
  double log_scale = 0.0;
  double log_det = 0.0;

  explicit TriProduct(Eigen::Index m) : p(Mat::Identity(m, m)) {}

  void left_multiply(const Mat& r) {
    p = r * p;
    absorb(r);
  }
  void right_multiply(const Mat& r) {
    p = p * r;
    absorb(r);
  }
  void absorb(const Mat& r) {
    for (Eigen::Index j = 0; j < r.rows(); ++j) log_det += std::log(std::abs(r(j, j)));
    const double s = p.cwiseAbs().maxCoeff();
    if (s > 0 && std::isfinite(s)) {
      p /= s;
      log_scale += std::log(s);
    }
  }
  double log_smax() const {
    if (p.rows() == 1) return log_det;
    Eigen::JacobiSVD<Mat> svd(p);
    return std::log(svd.singularValues()[0]) + log_scale;
  }
  double log_smin() const {
    const Eigen::Index m = p.rows();
    if (m == 1) return log_det;
    Eigen::JacobiSVD<Mat> svd(p);
    double others = 0;
    for (Eigen::Index k = 0; k + 1 < m; ++k) others += std::log(svd.singularValues()[k]) + log_scale;
    return log_det - others;
  }
};


}  // namespace

FlowState integrate_tangent(const VectorFieldSpec& spec, const Vec& x0, double t, const Mat& frame,
                            double renorm_every, const IntegratorOptions& opts) {
  if (!(renorm_every > 0)) throw ValidationError("renormalization interval must be positive");
  if (frame.rows() != spec.dimension()) throw ValidationError("frame has the wrong dimension");
  Eigen::ColPivHouseholderQR<Mat> rank_check(frame);
  if (rank_check.rank() < frame.cols()) throw ValidationError("tangent frame is not of full column rank");

  FlowState st;
  st.x = x0;
  st.log_norms = Vec::Zero(frame.cols());
  Mat r;
  thin_qr(frame, st.frame, r);
  for (Eigen::Index j = 0; j < r.rows(); ++j) st.log_norms[j] += std::log(r(j, j));

  const double dir = t >= 0 ? 1.0 : -1.0;
  double done = 0;
  const double total = std::abs(t);
  while (done < total) {
    const double h = std::min(renorm_every, total - done);
    auto [x, v] = integrate_variational(spec, st.x, st.frame, dir * h, opts);
    st.x = x;
    thin_qr(v, st.frame, r);
    for (Eigen::Index j = 0; j < r.rows(); ++j) st.log_norms[j] += std::log(r(j, j));
    done += h;
    if (total - done < 1e-12 * std::max(1.0, total)) done = total;
  }
  st.t = t;
  return st;
}

LyapunovSpectrum lyapunov_spectrum(const VectorFieldSpec& spec, const Vec& x0, const LyapunovOptions& opts) {
  if (!(opts.horizon > 0) || !(opts.renorm_every > 0)) throw ValidationError("Lyapunov horizon and cadence must be positive");
  const int d = spec.dimension();
  std::mt19937_64 rng(opts.seed);
  Vec x = integrate_flow(spec, x0, opts.transient, opts.integrator);
  Mat q = random_frame(d, d, rng);
  Mat r;

  double t = 0;
  while (t < opts.align) {
    const double h = std::min(opts.renorm_every, opts.align - t);
    auto [xn, v] = integrate_variational(spec, x, q, h, opts.integrator);
    x = xn;
    thin_qr(v, q, r);
    t += h;
  }

  Vec sums = Vec::Zero(d), half = Vec::Zero(d);
  const long chunks = std::lround(std::ceil(opts.horizon / opts.renorm_every - 1e-9));
  double elapsed = 0, half_time = 0;
  for (long c = 0; c < chunks; ++c) {
    const double h = std::min(opts.renorm_every, opts.horizon - elapsed);
    auto [xn, v] = integrate_variational(spec, x, q, h, opts.integrator);
    x = xn;
    thin_qr(v, q, r);
    for (int j = 0; j < d; ++j) sums[j] += std::log(r(j, j));
    elapsed += h;
    if (c + 1 == chunks / 2) {
      half = sums;
      half_time = elapsed;
    }
  }

  LyapunovSpectrum out;
  out.horizon = elapsed;
  Vec chi = sums / elapsed;
  Vec chi_half = half_time > 0 ? Vec(half / half_time) : chi;
  std::vector<std::pair<double, double>> pairs;
  for (int j = 0; j < d; ++j) pairs.emplace_back(chi[j], chi_half[j]);
  std::sort(pairs.begin(), pairs.end());
  out.exponents.resize(d);
  for (int j = 0; j < d; ++j) {
    out.exponents[j] = pairs[static_cast<std::size_t>(j)].first;
    out.tail_slope = std::max(out.tail_slope, std::abs(pairs[static_cast<std::size_t>(j)].first -
                                                        pairs[static_cast<std::size_t>(j)].second));
  }
  out.converged = out.tail_slope <= 0.01;
  return out;
}

// ---------------------------------------------------------------------------------------------
// CocycleTrack

int CocycleTrack::steps_for(double t) const {
  const double k = t / step_;
  const long r = std::lround(k);
  if (std::abs(k - static_cast<double>(r)) > 1e-9 * std::max(1.0, k) || r < 0) {
    throw ValidationError("time " + format_double(t) + " is not a multiple of the cocycle step " + format_double(step_));
  }
  return static_cast<int>(r);
}

CocycleTrack CocycleTrack::from(const VectorFieldSpec& spec, const Vec& y, double length, const CocycleOptions& opts) {
  if (!(opts.step > 0)) throw ValidationError("cocycle step must be positive");
  CocycleTrack tr;
  tr.step_ = opts.step;
  const int n = tr.steps_for(length);
  const int d = spec.dimension();
  tr.points_.reserve(static_cast<std::size_t>(n + 1));
  tr.maps_.reserve(static_cast<std::size_t>(n));
  tr.points_.push_back(y);
  const Mat eye = Mat::Identity(d, d);
  for (int i = 0; i < n; ++i) {
    auto [x, m] = integrate_variational(spec, tr.points_.back(), eye, opts.step, opts.integrator);
    tr.maps_.push_back(std::move(m));
    tr.lus_.emplace_back(tr.maps_.back());
    tr.points_.push_back(std::move(x));
  }
  tr.estimate_bundles(spec.stable_dim(), opts.seed);
  return tr;
}

CocycleTrack CocycleTrack::around(const VectorFieldSpec& spec, const Vec& x, double past, double future,
                                  const CocycleOptions& opts) {
  const Vec y = past > 0 ? integrate_flow(spec, x, -past, opts.integrator) : x;
  CocycleTrack tr = from(spec, y, past + future, opts);
  tr.origin_ = tr.steps_for(past);
  return tr;
}

void CocycleTrack::estimate_bundles(int d_s, std::uint64_t seed) {
  const int n = static_cast<int>(maps_.size());
  const int d = static_cast<int>(points_.front().size());
  const int d_cu = d - d_s;
  std::mt19937_64 rng(seed);
  es_.assign(static_cast<std::size_t>(n + 1), Mat());
  ecu_.assign(static_cast<std::size_t>(n + 1), Mat());
  rs_.assign(static_cast<std::size_t>(n), Mat());
  rcu_.assign(static_cast<std::size_t>(n), Mat());

  es_[static_cast<std::size_t>(n)] = random_frame(d, d_s, rng);
  for (int i = n - 1; i >= 0; --i) {
    const auto ui = static_cast<std::size_t>(i);
    const Mat w = lus_[ui].solve(es_[ui + 1]);
    thin_qr(w, es_[ui], rs_[ui]);
  }

  ecu_[0] = random_frame(d, d_cu, rng);
  Mat full = random_frame(d, d, rng);
  Mat r;
  double grow_cu = 0, grow_s = 0;
  for (int i = 0; i < n; ++i) {
    const auto ui = static_cast<std::size_t>(i);
    thin_qr(maps_[ui] * ecu_[ui], ecu_[ui + 1], rcu_[ui]);
    thin_qr(maps_[ui] * full, full, r);
    grow_cu += std::log(r(d_cu - 1, d_cu - 1));
    grow_s += std::log(r(d_cu, d_cu));
  }
  log_gap_ = grow_cu - grow_s;
}

CocycleTrack::LogNorms CocycleTrack::log_norms(int i, int k) const {
  if (i < 0 || k < 0 || i + k >= size()) throw ValidationError("cocycle window outside the track");
  const Eigen::Index d_s = es_.front().cols(), d_cu = ecu_.front().cols();
  TriProduct ps(d_s), pcu(d_cu);
  for (int j = i; j < i + k; ++j) {
    ps.right_multiply(rs_[static_cast<std::size_t>(j)]);    // R_i R_{i+1} ... : DX_{-t} on E^s
    pcu.left_multiply(rcu_[static_cast<std::size_t>(j)]);   // ... R_{i+1} R_i : DX_t on E^cu
  }
  LogNorms out;
  out.ns = -ps.log_smin();
  out.ncu = pcu.log_smax();
  out.ncu_inv = -pcu.log_smin();
  return out;
}

double CocycleTrack::log_det_cu(int i, int k) const {
  if (i < 0 || k < 0 || i + k >= size()) throw ValidationError("cocycle window outside the track");
  double s = 0;
  for (int j = i; j < i + k; ++j) {
    const Mat& r = rcu_[static_cast<std::size_t>(j)];
    for (Eigen::Index m = 0; m < r.rows(); ++m) s += std::log(std::abs(r(m, m)));
  }
  return s;
}

Vec CocycleTrack::pull_back(const Vec& v, int i, int k, double* log_scale) const {
  if (i < 0 || k < 0 || i + k >= size()) throw ValidationError("cocycle window outside the track");
  Vec w = v;
  double acc = 0;
  for (int j = i + k - 1; j >= i; --j) {
    w = lus_[static_cast<std::size_t>(j)].solve(w);
    const double n = w.norm();
    acc += std::log(n);
    w /= n;
  }
  if (log_scale) *log_scale += acc;
  return w;
}

Vec CocycleTrack::push_forward(const Vec& v, int i, int k, double* log_scale) const {
  if (i < 0 || k < 0 || i + k >= size()) throw ValidationError("cocycle window outside the track");
  Vec w = v;
  double acc = 0;
  for (int j = i; j < i + k; ++j) {
    w = maps_[static_cast<std::size_t>(j)] * w;
    const double n = w.norm();
    acc += std::log(n);
    w /= n;
  }
  if (log_scale) *log_scale += acc;
  return w;
}

Mat CocycleTrack::product(int i, int k) const {
  if (i < 0 || k < 0 || i + k >= size()) throw ValidationError("cocycle window outside the track");
  const Eigen::Index d = points_.front().size();
  Mat p = Mat::Identity(d, d);
  for (int j = i; j < i + k; ++j) p = maps_[static_cast<std::size_t>(j)] * p;
  return p;
}

Mat CocycleTrack::inverse_product(int i, int k) const {
  if (i < 0 || k < 0 || i + k >= size()) throw ValidationError("cocycle window outside the track");
  const Eigen::Index d = points_.front().size();
  Mat p = Mat::Identity(d, d);
  for (int j = i + k - 1; j >= i; --j) p = lus_[static_cast<std::size_t>(j)].solve(p);
  return p;
}

// ---------------------------------------------------------------------------------------------

double principal_angle(const Mat& a, const Mat& b) {
  Mat qa, qb, r;
  thin_qr(a, qa, r);
  thin_qr(b, qb, r);
  Eigen::JacobiSVD<Mat> svd(qa.transpose() * qb);
  const double c = std::min(1.0, svd.singularValues()[0]);
  // the smallest angle; for nearly parallel subspaces fall back to the sine formula
  if (c > 0.9) {
    Eigen::JacobiSVD<Mat> s2((Mat::Identity(a.rows(), a.rows()) - qa * qa.transpose()) * qb);
    const auto& sv = s2.singularValues();
    return std::asin(std::min(1.0, sv[sv.size() - 1]));
  }
  return std::acos(c);
}

double subspace_distance(const Mat& a, const Mat& b) {
  if (a.cols() != b.cols()) throw ValidationError("subspace distance needs equal dimensions");
  Mat qa, qb, r;
  thin_qr(a, qa, r);
  thin_qr(b, qb, r);
  const Mat resid = qb - qa * (qa.transpose() * qb);
  Eigen::JacobiSVD<Mat> svd(resid);
  return std::asin(std::min(1.0, svd.singularValues()[0]));
}

Mat estimate_Es(const VectorFieldSpec& spec, const Vec& x, double t_back, const CocycleOptions& opts) {
  const CocycleTrack tr = CocycleTrack::from(spec, x, t_back, opts);
  if (tr.log_gap() < opts.min_log_gap) {
    throw NumericalError("domination gap too small over t_back = " + format_double(t_back) +
                         ": measured log gap " + format_double(tr.log_gap()) + " < " + format_double(opts.min_log_gap));
  }
  return tr.Es(0);
}

Mat estimate_Ecu(const VectorFieldSpec& spec, const Vec& x, double t_fwd, const CocycleOptions& opts) {
  const CocycleTrack tr = CocycleTrack::around(spec, x, t_fwd, 0.0, opts);
  if (tr.log_gap() < opts.min_log_gap) {
    throw NumericalError("domination gap too small over t_fwd = " + format_double(t_fwd) +
                         ": measured log gap " + format_double(tr.log_gap()) + " < " + format_double(opts.min_log_gap));
  }
  return tr.Ecu(tr.origin());
}

Splitting estimate_splitting(const VectorFieldSpec& spec, const Vec& x, const CocycleOptions& opts) {
  Splitting s;
  s.Es = estimate_Es(spec, x, opts.t_back, opts);
  s.Ecu = estimate_Ecu(spec, x, opts.t_fwd, opts);
  s.angle_margin = principal_angle(s.Es, s.Ecu);
  return s;
}

FiniteTimeNorms norms_from_logs(const CocycleTrack::LogNorms& l) {
  FiniteTimeNorms n;
  n.log_ns = l.ns;
  n.log_ncu_inv = l.ncu_inv;
  n.log_ncu = l.ncu;
  n.ns = std::exp(l.ns);
  n.ncu_inv = std::exp(l.ncu_inv);
  n.ncu = std::exp(l.ncu);
  return n;
}

FiniteTimeNorms finite_time_norms(const VectorFieldSpec& spec, const Vec& x, double t, const CocycleOptions& opts) {
  const CocycleTrack tr = CocycleTrack::around(spec, x, opts.t_fwd, t + opts.t_back, opts);
  return norms_from_logs(tr.log_norms(tr.origin(), tr.steps_for(t)));
}

FiniteTimeNorms finite_time_norms(const VectorFieldSpec& spec, const Vec& x, double t, const Splitting& split,
                                  const IntegratorOptions& opts) {
  Mat es, ecu, q, r;
  thin_qr(split.Es, es, r);
  thin_qr(split.Ecu, ecu, r);
  // images expressed in orthonormal coordinates of their own spans at X_t x
  const Mat vs = integrate_variational(spec, x, es, t, opts).second;
  const Mat vc = integrate_variational(spec, x, ecu, t, opts).second;
  TriProduct ps(es.cols()), pc(ecu.cols());
  thin_qr(vs, q, r);
  ps.left_multiply(r);
  thin_qr(vc, q, r);
  pc.left_multiply(r);
  CocycleTrack::LogNorms l;
  l.ns = ps.log_smax();
  l.ncu = pc.log_smax();
  l.ncu_inv = -pc.log_smin();
  return norms_from_logs(l);
}

double eta(const FiniteTimeNorms& n, double q) { return n.log_ns + n.log_ncu_inv + q * n.log_ncu; }

double eta(const VectorFieldSpec& spec, const Vec& x, double t, double q, const CocycleOptions& opts) {
  return eta(finite_time_norms(spec, x, t, opts), q);
}

namespace {

// Minimum over 2-planes inside E^cu of the average log area growth; for d_cu = 2 the plane is
// E^cu itself.
double plane_min_log_det(const Mat& ecu, double t, const std::function<Mat(const Mat&, int)>& step_map, int steps,
                         int planes, std::uint64_t seed) {
  const Eigen::Index d_cu = ecu.cols();
  if (d_cu == 2) planes = 1;
  std::mt19937_64 rng(seed);
  double best = std::numeric_limits<double>::infinity();
  for (int p = 0; p < planes; ++p) {
    Mat f = d_cu == 2 ? ecu : Mat(ecu * random_frame(static_cast<int>(d_cu), 2, rng));
    double s = 0;
    Mat q, r;
    for (int j = 0; j < steps; ++j) {
      thin_qr(step_map(f, j), q, r);
      s += std::log(r(0, 0)) + std::log(r(1, 1));
      f = q;
    }
    best = std::min(best, s / t);
  }
  return best;
}

}  // namespace

double sectional_expansion_estimate(const VectorFieldSpec& spec, const Vec& x, double t, const CocycleOptions& opts,
                                    int planes) {
  if (!(t > 0)) throw ValidationError("sectional expansion needs t > 0");
  const CocycleTrack tr = CocycleTrack::around(spec, x, opts.t_fwd, t, opts);
  const int i0 = tr.origin();
  const int k = tr.steps_for(t);
  if (tr.Ecu(i0).cols() == 2) return tr.log_det_cu(i0, k) / t;
  return plane_min_log_det(tr.Ecu(i0), t,
                           [&](const Mat& f, int j) { return Mat(tr.map(i0 + j) * f); }, k, planes, opts.seed);
}

double sectional_expansion_estimate(const VectorFieldSpec& spec, const Vec& x, double t, const Splitting& split,
                                    const IntegratorOptions& opts, int planes) {
  if (!(t > 0)) throw ValidationError("sectional expansion needs t > 0");
  const int steps = std::max(1, static_cast<int>(std::ceil(t / 0.5 - 1e-9)));
  const double h = t / steps;
  Vec base = x;
  std::vector<Vec> bases{x};
  for (int j = 0; j < steps; ++j) {
    base = integrate_flow(spec, base, h, opts);
    bases.push_back(base);
  }
  return plane_min_log_det(split.Ecu, t,
                           [&](const Mat& f, int j) {
                             return integrate_variational(spec, bases[static_cast<std::size_t>(j)], f, h, opts).second;
                           },
                           steps, planes, 1);
}

ConeReport cone_invariance_check(const VectorFieldSpec& spec, const Vec& x, double t, const ConeParams& cone,
                                 int n_dirs, double t_emp, const CocycleOptions& opts) {
  if (!(cone.a > 0 && cone.a <= 0.25)) throw ValidationError("cone half-width must lie in (0, 1/4]");
  if (n_dirs < 1) throw ValidationError("need at least one cone direction");
  const CocycleTrack tr = CocycleTrack::around(spec, x, opts.t_fwd, t + opts.t_back, opts);
  const int i = tr.origin();
  const int k = tr.steps_for(t);
  const int d = spec.dimension();
  const int d_s = spec.stable_dim();
  const int d_cu = d - d_s;

  auto split_coords = [&](int idx, const Vec& v) {
    Mat s(d, d);
    s << tr.Es(idx), tr.Ecu(idx);
    const Vec c = s.fullPivLu().solve(v);
    return std::pair<Vec, Vec>{c.head(d_s), c.tail(d_cu)};
  };

  std::mt19937_64 rng(opts.seed);
  std::normal_distribution<double> normal;
  auto unit = [&](int m) {
    Vec u(m);
    for (int j = 0; j < m; ++j) u[j] = normal(rng);
    return Vec(u.normalized());
  };

  ConeReport rep;
  rep.min_backward_expansion = std::numeric_limits<double>::infinity();
  for (int n = 0; n < n_dirs; ++n) {
    // stable cone boundary at X_t x, pulled back to x
    Vec v = tr.Es(i + k) * unit(d_s) + cone.a * tr.Ecu(i + k) * unit(d_cu);
    const double vn = v.norm();
    double log_growth = 0;
    const Vec w = tr.pull_back(v / vn, i, k, &log_growth);
    auto [cs, ccu] = split_coords(i, w);
    rep.worst_stable_ratio = std::max(rep.worst_stable_ratio, ccu.norm() / cs.norm());
    rep.min_backward_expansion = std::min(rep.min_backward_expansion, std::exp(log_growth));

    // center-unstable cone boundary at x, pushed to X_t x
    Vec u = cone.a * tr.Es(i) * unit(d_s) + tr.Ecu(i) * unit(d_cu);
    const Vec z = tr.push_forward(u.normalized(), i, k);
    auto [zs, zcu] = split_coords(i + k, z);
    rep.worst_cu_ratio = std::max(rep.worst_cu_ratio, zs.norm() / zcu.norm());
  }
  rep.pass = rep.worst_stable_ratio <= cone.a && rep.worst_cu_ratio <= cone.a;
  rep.inconclusive = !rep.pass && t < t_emp;
  return rep;
}

double empirical_T(const VectorFieldSpec& spec, const std::vector<Vec>& samples, const CocycleOptions& opts,
                   double quantum, double t_max, int jobs) {
  if (samples.empty()) throw ValidationError("empirical T needs at least one sample");
  const double target = -std::log(150.0);
  const int levels = static_cast<int>(std::floor(t_max / quantum + 1e-9));
  std::vector<std::vector<double>> log_ns(samples.size());
  parallel_for(samples.size(), jobs, [&](std::size_t s) {
    const CocycleTrack tr = CocycleTrack::around(spec, samples[s], 0.0, levels * quantum + opts.t_back, opts);
    for (int m = 1; m <= levels; ++m) log_ns[s].push_back(tr.log_norms(tr.origin(), tr.steps_for(m * quantum)).ns);
  });
  for (int m = 1; m <= levels; ++m) {
    double worst = -std::numeric_limits<double>::infinity();
    for (const auto& v : log_ns) worst = std::max(worst, v[static_cast<std::size_t>(m - 1)]);
    if (worst <= target) return m * quantum;
  }
  throw NumericalError("stable contraction never reached 1/150 within t = " + format_double(t_max));
}

std::vector<Vec> sample_attractor(const VectorFieldSpec& spec, const Vec& x0, int count, double transient,
                                  double spacing, const IntegratorOptions& opts) {
  if (count < 0 || !(spacing > 0)) throw ValidationError("invalid attractor sampling request");
  std::vector<Vec> out;
  Vec x = integrate_flow(spec, x0, transient, opts);
  for (int k = 0; k < count; ++k) {
    out.push_back(x);
    if (k + 1 < count) x = integrate_flow(spec, x, spacing, opts);
  }
  return out;
}

void write_trajectory_csv(std::ostream& os, const VectorFieldSpec& spec, const Vec& x0, double t, double dt,
                          const IntegratorOptions& opts) {
  if (!(dt > 0)) throw ValidationError("sampling interval must be positive");
  const int d = spec.dimension();
  os << "t";
  for (int i = 1; i <= d; ++i) os << ",x" << i;
  os << "\n";
  Vec x = x0;
  const long n = std::lround(std::floor(t / dt + 1e-9));
  for (long k = 0; k <= n; ++k) {
    os << format_double(k * dt);
    for (int i = 0; i < d; ++i) os << "," << format_double(x[i]);
    os << "\n";
    if (k < n) x = integrate_flow(spec, x, dt, opts);
  }
}

}  // namespace foliacert
