#include "foliacert/foliation.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <random>
#include <sstream>

#include "foliacert/errors.hpp"
#include "foliacert/parallel.hpp"

namespace foliacert {

namespace {

double smax(const Mat& m) {
  if (m.size() == 0) return 0.0;
  Eigen::JacobiSVD<Mat> svd(m);
  return svd.singularValues()[0];
}

double smin(const Mat& m) {
  Eigen::JacobiSVD<Mat> svd(m);
  return svd.singularValues()[svd.singularValues().size() - 1];
}

// Flip columns so each has a positive largest-magnitude entry; keeps frames reproducible.
void normalize_signs(Mat& m) {
  for (Eigen::Index j = 0; j < m.cols(); ++j) {
    Eigen::Index k = 0;
    m.col(j).cwiseAbs().maxCoeff(&k);
    if (m(k, j) < 0) m.col(j) *= -1;
  }
}

Mat complement(const Mat& es) {
  const Eigen::Index d = es.rows(), k = es.cols();
  Eigen::HouseholderQR<Mat> qr(es);
  Mat q = qr.householderQ() * Mat::Identity(d, d);
  Mat c = q.rightCols(d - k);
  normalize_signs(c);
  return c;
}

std::string fmt(double v) {
  std::ostringstream os;
  os.precision(6);
  os << v;
  return os.str();
}

}  // namespace

// ---------------------------------------------------------------------------------------------

HPConstants hp_constants(const std::vector<double>& lambda, const std::vector<double>& mu, double sigma,
                         double lambda_min) {
  if (lambda.empty() || lambda.size() != mu.size()) throw ValidationError("lambda and mu sequences must have equal, nonzero length");
  if (!(lambda_min > 0)) throw ValidationError("lambda_min must be positive");
  if (!(sigma > 0)) throw ValidationError("sigma must be positive");
  HPConstants hp;
  hp.lambda_min = lambda_min;
  hp.sigma = sigma;
  hp.lambda = lambda;
  hp.mu = mu;
  auto fail = [&](std::string why) {
    hp.feasible = false;
    hp.failure = std::move(why);
    return hp;
  };
  if (!(sigma < 1)) return fail("gamma < min{1, sigma^{-1/2} - 1} has no positive solution (sigma >= 1)");
  for (std::size_t n = 0; n < lambda.size(); ++n) {
    if (!(mu[n] > 0)) return fail("mu_" + std::to_string(n) + " is not positive");
    if (lambda[n] < lambda_min * (1 - 1e-12)) return fail("lambda_" + std::to_string(n) + " < lambda_min");
    if (lambda[n] / mu[n] > sigma * (1 + 1e-12)) return fail("lambda_" + std::to_string(n) + " / mu_" + std::to_string(n) + " > sigma");
  }
  const double g = std::min(1.0, 1.0 / std::sqrt(sigma) - 1.0);
  hp.gamma = 0.5 * g;
  const double gm = hp.gamma;
  const double b1 = (1.0 / sigma - 1.0) / (gm + 1.0 / gm + 2.0);
  const double b2 = (1.0 / sigma - (1 + gm) * (1 + gm)) / ((2 + gm) * (1 + gm));
  const double dbound = lambda_min * std::min(b1, b2);
  if (!(dbound > 0)) return fail("delta bound is not positive");
  hp.delta = 0.5 * dbound;
  double sup_lambda = 0, sup_lp = 0;
  hp.nu_sup = 0;
  for (std::size_t n = 0; n < lambda.size(); ++n) {
    const double lp = (1 + gm) * (lambda[n] + hp.delta * (1 + gm));
    const double mp = mu[n] / (1 + gm) - hp.delta;
    const double nu = 0.5 * (lp + std::min(mp, 1.0));
    hp.lambda_p.push_back(lp);
    hp.mu_p.push_back(mp);
    hp.nu.push_back(nu);
    sup_lambda = std::max(sup_lambda, lambda[n]);
    sup_lp = std::max(sup_lp, lp);
    hp.nu_sup = std::max(hp.nu_sup, nu);
    if (!(lp < nu && nu < mp)) {
      return fail("lambda'_" + std::to_string(n) + " < nu_" + std::to_string(n) + " < mu'_" + std::to_string(n) +
                  " fails (" + fmt(lp) + ", " + fmt(nu) + ", " + fmt(mp) + ")");
    }
  }
  if (sup_lambda < 1) {
    if (!(sup_lp < 1)) return fail("sup lambda'_n = " + fmt(sup_lp) + " is not below 1");
    if (!(hp.nu_sup < 1)) return fail("sup nu_n = " + fmt(hp.nu_sup) + " is not below 1");
  }
  hp.feasible = true;
  return hp;
}

// ---------------------------------------------------------------------------------------------
// Charts

Mat ChartFrame::basis() const {
  Mat b(Ps.rows(), Ps.cols() + Pcu.cols());
  b << Ps, Pcu;
  return b;
}

Vec ChartFrame::to_ambient(const Vec& p) const { return base + basis() * p; }

namespace {

class FlowChartStep : public ChartStep {
 public:
  FlowChartStep(const VectorFieldSpec& spec, const ChartFrame& from, const ChartFrame& to, double T,
                const IntegratorOptions& opts)
      : spec_(spec), base_(from.base), b_(from.basis()), bt_next_(to.basis().transpose()), T_(T), opts_(opts) {
    anchor_ = integrate_flow(spec_, base_, T_, opts_);
  }

  Vec apply(const Vec& p) const override {
    return bt_next_ * (integrate_flow(spec_, base_ + b_ * p, T_, opts_) - anchor_);
  }

  Mat jacobian(const Vec& p) const override {
    return bt_next_ * integrate_variational(spec_, base_ + b_ * p, b_, T_, opts_).second;
  }

  // a few local tolerances at the scale of the image
  double noise() const override { return 10 * opts_.tol * (1 + anchor_.norm()); }

 private:
  VectorFieldSpec spec_;
  Vec base_;
  Mat b_, bt_next_;
  double T_;
  IntegratorOptions opts_;
  Vec anchor_;
};

}  // namespace

double chart_injectivity_ratio(const ChartStep& step, int d_s, int d, double rho, int samples, std::uint64_t seed) {
  const int d_cu = d - d_s;
  const Mat b0 = step.jacobian(Vec::Zero(d)).bottomRightCorner(d_cu, d_cu);
  const Eigen::PartialPivLU<Mat> lu(b0);
  std::vector<Vec> pts;
  for (int j = 0; j < d; ++j) {
    for (double s : {-1.0, 1.0}) {
      Vec p = Vec::Zero(d);
      p[j] = s * rho;
      pts.push_back(p);
    }
  }
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> normal;
  std::uniform_real_distribution<double> unif;
  for (int k = 0; k < samples; ++k) {
    Vec u(d_s), v(d_cu);
    for (auto& c : u) c = normal(rng);
    for (auto& c : v) c = normal(rng);
    u *= rho * std::pow(unif(rng), 1.0 / d_s) / u.norm();
    v *= rho * std::pow(unif(rng), 1.0 / d_cu) / v.norm();
    Vec p(d);
    p << u, v;
    pts.push_back(p);
  }
  double worst = 0;
  for (const Vec& p : pts) {
    const Mat bv = step.jacobian(p).bottomRightCorner(d_cu, d_cu);
    worst = std::max(worst, smax(lu.solve(bv - b0)));
  }
  return worst;
}

ChartSequence build_charts(const VectorFieldSpec& spec, const Vec& x, double T, int n_steps, double rho,
                           const CocycleOptions& opts, int jobs) {
  if (n_steps < 1) throw ValidationError("need at least one chart step");
  if (!(rho > 0)) throw ValidationError("chart radius must be positive");
  if (!(T > 0)) throw ValidationError("chart time T must be positive");
  const int d = spec.dimension(), d_s = spec.stable_dim();
  CocycleTrack track = CocycleTrack::from(spec, x, n_steps * T + opts.t_back, opts);
  const int k = track.steps_for(T);

  ChartSequence cs;
  cs.d_s = d_s;
  cs.T = T;
  cs.rho = rho;
  for (int n = 0; n <= n_steps; ++n) {
    ChartFrame f;
    f.base = track.point(n * k);
    f.Ps = track.Es(n * k);
    normalize_signs(f.Ps);
    f.Pcu = complement(f.Ps);
    f.rho = rho;
    Eigen::JacobiSVD<Mat> svd(f.basis());
    f.C1 = svd.singularValues()[0] / svd.singularValues()[d - 1];
    cs.frames.push_back(std::move(f));
  }
  const auto N = static_cast<std::size_t>(n_steps);
  cs.steps.resize(N);
  cs.lambda.resize(N);
  cs.mu.resize(N);
  std::vector<double> ratios(N);
  parallel_for(N, jobs, [&](std::size_t n) {
    auto step = std::make_shared<FlowChartStep>(spec, cs.frames[n], cs.frames[n + 1], T, opts.integrator);
    const Mat df = cs.frames[n + 1].basis().transpose() * track.product(static_cast<int>(n) * k, k) *
                   cs.frames[n].basis();
    cs.lambda[n] = smax(df.topLeftCorner(d_s, d_s));
    cs.mu[n] = smin(df.bottomRightCorner(d - d_s, d - d_s));
    ratios[n] = chart_injectivity_ratio(*step, d_s, d, rho, 8, opts.seed + n);
    cs.steps[n] = std::move(step);
  });
  const auto worst = std::max_element(ratios.begin(), ratios.end());
  if (!(*worst < 1)) {
    const double suggestion = rho / (2 * *worst);
    throw ChartInjectivityError("chart map " + std::to_string(worst - ratios.begin()) +
                                    " fails the injectivity test on the radius-" + fmt(rho) +
                                    " disk (perturbation ratio " + fmt(*worst) + "); try rho <= " + fmt(suggestion),
                                suggestion);
  }
  return cs;
}

// ---------------------------------------------------------------------------------------------
// GraphPatch

GraphPatch::GraphPatch(int d_s, int d_cu, double rho, int n) : d_s_(d_s), d_cu_(d_cu), rho_(rho), n_(n) {
  if (d_s < 1 || d_cu < 1) throw ValidationError("graph dimensions must be positive");
  if (n < 2) throw ValidationError("graph grid needs at least 2 nodes per axis");
  if (!(rho > 0)) throw ValidationError("graph radius must be positive");
  std::size_t total = 1;
  for (int j = 0; j < d_s; ++j) total *= static_cast<std::size_t>(n);
  values_.assign(total, Vec::Zero(d_cu));
}

Vec GraphPatch::node(std::size_t k) const {
  Vec u(d_s_);
  const double h = 2 * rho_ / (n_ - 1);
  for (int j = 0; j < d_s_; ++j) {
    u[j] = -rho_ + h * static_cast<double>(k % static_cast<std::size_t>(n_));
    k /= static_cast<std::size_t>(n_);
  }
  return u;
}

Vec GraphPatch::operator()(const Vec& u) const {
  const double h = 2 * rho_ / (n_ - 1);
  std::vector<int> cell(static_cast<std::size_t>(d_s_));
  std::vector<double> w(static_cast<std::size_t>(d_s_));
  for (int j = 0; j < d_s_; ++j) {
    const double c = (std::clamp(u[j], -rho_, rho_) + rho_) / h;
    int i = std::min(static_cast<int>(std::floor(c)), n_ - 2);
    i = std::max(i, 0);
    cell[static_cast<std::size_t>(j)] = i;
    w[static_cast<std::size_t>(j)] = std::clamp(c - i, 0.0, 1.0);
  }
  Vec out = Vec::Zero(d_cu_);
  for (unsigned corner = 0; corner < (1u << d_s_); ++corner) {
    double weight = 1;
    std::size_t idx = 0, stride = 1;
    for (int j = 0; j < d_s_; ++j) {
      const bool hi = (corner >> j) & 1u;
      const auto uj = static_cast<std::size_t>(j);
      weight *= hi ? w[uj] : 1 - w[uj];
      idx += static_cast<std::size_t>(cell[uj] + (hi ? 1 : 0)) * stride;
      stride *= static_cast<std::size_t>(n_);
    }
    if (weight != 0) out += weight * values_[idx];
  }
  return out;
}

Mat GraphPatch::derivative(const Vec& u) const {
  const double h = 2 * rho_ / (n_ - 1);
  Mat m(d_cu_, d_s_);
  for (int j = 0; j < d_s_; ++j) {
    Vec a = u, b = u;
    a[j] = std::min(u[j] + h, rho_);
    b[j] = std::max(u[j] - h, -rho_);
    m.col(j) = ((*this)(a) - (*this)(b)) / (a[j] - b[j]);
  }
  return m;
}

double GraphPatch::lipschitz() const {
  const double h = 2 * rho_ / (n_ - 1);
  double lip = 0;
  std::size_t stride = 1;
  for (int j = 0; j < d_s_; ++j) {
    for (std::size_t k = 0; k < values_.size(); ++k) {
      if ((k / stride) % static_cast<std::size_t>(n_) == static_cast<std::size_t>(n_ - 1)) continue;
      lip = std::max(lip, (values_[k + stride] - values_[k]).norm() / h);
    }
    stride *= static_cast<std::size_t>(n_);
  }
  return lip;
}

double GraphPatch::sup_distance(const GraphPatch& other) const {
  if (other.values_.size() != values_.size()) throw ValidationError("graph grids differ");
  double s = 0;
  for (std::size_t k = 0; k < values_.size(); ++k) s = std::max(s, (values_[k] - other.values_[k]).norm());
  return s;
}

// ---------------------------------------------------------------------------------------------
// Graph transform

namespace {

// Solves pi_cu f(u, v) = phi(pi_s f(u, v)) for v by a chord iteration started at v0.
Vec pull_back_point(const ChartStep& f, const GraphPatch& phi, const Vec& u, const Vec& v0, int d_s, int d_cu,
                    const HPOptions& o) {
  Vec p(d_s + d_cu);
  p << u, v0;
  const Mat j = f.jacobian(p);
  Vec img = f.apply(p);
  const Mat chord = j.bottomRightCorner(d_cu, d_cu) - phi.derivative(img.head(d_s)) * j.topRightCorner(d_s, d_cu);
  Eigen::PartialPivLU<Mat> lu(chord);
  Vec v = v0;
  double prev = std::numeric_limits<double>::infinity();
  for (int it = 0; it < o.newton_max; ++it) {
    const Vec r = img.tail(d_cu) - phi(img.head(d_s));
    const Vec dv = lu.solve(r);
    if (!dv.allFinite()) throw NumericalError("graph transform Newton step is not finite");
    v -= dv;
    const double step = dv.norm();
    const double scale = std::max(1.0, v.norm());
    if (step <= o.newton_tol * scale) break;
    // stagnation at the evaluation noise floor
    if (step <= 1e-6 * scale && step > 0.5 * prev) break;
    prev = step;
    p.tail(d_cu) = v;
    img = f.apply(p);
  }
  return v;
}

}  // namespace

HPResult hadamard_perron(const std::vector<std::shared_ptr<const ChartStep>>& steps, int d_s, int d_cu, double rho,
                         const HPOptions& opts, const HPConstants* hp, int jobs) {
  if (steps.empty()) throw ValidationError("no chart steps");
  if (opts.grid < 3 || opts.grid % 2 == 0) throw ValidationError("graph grid must be odd and at least 3");
  if (!(opts.fix_tol > 0)) throw ValidationError("fix_tol must be positive");
  if (opts.max_iter < 1) throw ValidationError("max_iter must be positive");
  if (hp && !hp->feasible) throw ValidationError("Hadamard-Perron constants are infeasible: " + hp->failure);
  const std::size_t N = steps.size();
  HPResult res;
  res.patches.assign(N + 1, GraphPatch(d_s, d_cu, rho, opts.grid));
  const std::size_t G = res.patches.front().size();
  std::vector<double> tol(N);
  for (std::size_t n = 0; n < N; ++n) {
    res.noise_floor = std::max(res.noise_floor, steps[n]->noise());
    tol[n] = std::max(opts.fix_tol, steps[n]->noise());
  }
  int growth = 0;
  double prev_excess = std::numeric_limits<double>::infinity();
  for (int sweep = 1; sweep <= opts.max_iter; ++sweep) {
    std::vector<GraphPatch> next = res.patches;
    parallel_for(N * G, jobs, [&](std::size_t job) {
      const std::size_t n = job / G, k = job % G;
      const Vec u = res.patches[n].node(k);
      next[n].value(k) = pull_back_point(*steps[n], res.patches[n + 1], u, res.patches[n].value(k), d_s, d_cu, opts);
    });
    // change, and change relative to the per-chart tolerance
    double change = 0, excess = 0;
    bool below_fix_tol = true;
    for (std::size_t n = 0; n < N; ++n) {
      const double c = next[n].sup_distance(res.patches[n]);
      change = std::max(change, c);
      excess = std::max(excess, c / tol[n]);
      below_fix_tol = below_fix_tol && c <= opts.fix_tol;
    }
    res.patches = std::move(next);
    res.changes.push_back(change);
    res.sweeps = sweep;
    if (excess <= 1) {
      res.converged = true;
      res.noise_limited = !below_fix_tol;
      break;
    }
    if (excess > prev_excess) {
      if (++growth >= 5) {
        throw NumericalError("graph transform is not contracting: the sup-change grew for 5 consecutive sweeps "
                             "(last ratio " + fmt(excess / prev_excess) + ")");
      }
    } else {
      growth = 0;
    }
    prev_excess = excess;
  }

  std::vector<double> defect(N, 0.0), growth_ratio(N, 0.0);
  parallel_for(N, jobs, [&](std::size_t n) {
    for (std::size_t k = 0; k < G; ++k) {
      const Vec u = res.patches[n].node(k);
      Vec p(d_s + d_cu);
      p << u, res.patches[n].value(k);
      const Vec img = steps[n]->apply(p);
      defect[n] = std::max(defect[n], (img.tail(d_cu) - res.patches[n + 1](img.head(d_s))).norm());
      if (hp && p.norm() > 0 && n < hp->lambda_p.size()) {
        growth_ratio[n] = std::max(growth_ratio[n], img.norm() / (hp->lambda_p[n] * p.norm()));
      }
    }
  });
  res.invariance_defect = *std::max_element(defect.begin(), defect.end());
  res.max_growth_ratio = *std::max_element(growth_ratio.begin(), growth_ratio.end());
  res.phi0_slope = smax(res.patches.front().derivative(Vec::Zero(d_s)));
  return res;
}

HPResult hadamard_perron(const ChartSequence& charts, const HPOptions& opts, const HPConstants* hp, int jobs) {
  const int d = static_cast<int>(charts.frames.front().base.size());
  return hadamard_perron(charts.steps, charts.d_s, d - charts.d_s, charts.rho, opts, hp, jobs);
}

// ---------------------------------------------------------------------------------------------
// Leaves

std::vector<std::pair<double, Vec>> leaf_polyline(const ChartFrame& chart, const GraphPatch& leaf) {
  if (leaf.d_s() != 1) throw ValidationError("leaf polylines need d_s = 1");
  std::vector<std::pair<double, Vec>> out;
  for (std::size_t k = 0; k < leaf.size(); ++k) {
    const Vec u = leaf.node(k);
    Vec p(1 + leaf.d_cu());
    p << u, leaf.value(k);
    out.emplace_back(u[0], chart.to_ambient(p));
  }
  return out;
}

double leaf_tangency_angle(const GraphPatch& leaf) {
  return std::atan(smax(leaf.derivative(Vec::Zero(leaf.d_s()))));
}

LeafTestReport leaf_contraction_test(const VectorFieldSpec& spec, const ChartFrame& chart, const GraphPatch& leaf,
                                     int horizon, double nu_claim, const LeafTestOptions& opts) {
  if (horizon < 1) throw ValidationError("horizon must be at least 1");
  if (!(nu_claim > 0)) throw ValidationError("nu_claim must be positive");
  if (opts.samples < 1) throw ValidationError("need at least one leaf sample");
  const int d_s = leaf.d_s(), d_cu = leaf.d_cu();

  // test points: u along each stable axis at fractions of rho, both signs
  std::vector<Vec> ys;
  for (int j = 0; j < d_s; ++j) {
    for (int s = 1; s <= opts.samples; ++s) {
      for (double sign : {-1.0, 1.0}) {
        Vec u = Vec::Zero(d_s);
        u[j] = sign * leaf.rho() * s / opts.samples;
        Vec v = leaf(u);
        v[0] += opts.cu_offset;
        Vec p(d_s + d_cu);
        p << u, v;
        ys.push_back(chart.to_ambient(p));
      }
    }
  }
  std::vector<Vec> xs(static_cast<std::size_t>(horizon + 1));
  xs[0] = chart.base;
  for (int t = 1; t <= horizon; ++t) xs[static_cast<std::size_t>(t)] = integrate_flow(spec, xs[static_cast<std::size_t>(t - 1)], 1.0, opts.integrator);

  std::vector<double> sup(static_cast<std::size_t>(horizon + 1), 0.0);
  std::vector<bool> resolved(static_cast<std::size_t>(horizon + 1), false);
  for (Vec y : ys) {
    const double d0 = (y - chart.base).norm();
    if (!(d0 > 0)) continue;
    for (int t = 1; t <= horizon; ++t) {
      const auto ut = static_cast<std::size_t>(t);
      y = integrate_flow(spec, y, 1.0, opts.integrator);
      const double floor = opts.noise * std::max(1.0, xs[ut].norm());
      const double dist = (y - xs[ut]).norm();
      resolved[ut] = true;
      if (dist <= floor) {
        sup[ut] = std::max(sup[ut], floor / d0);
        break;
      }
      sup[ut] = std::max(sup[ut], dist / d0);
    }
  }

  LeafTestReport rep;
  std::vector<double> ts{0.0}, ls{0.0};
  rep.fitted_C = 1.0;
  for (int t = 1; t <= horizon; ++t) {
    const auto ut = static_cast<std::size_t>(t);
    if (!resolved[ut]) continue;
    rep.times.push_back(t);
    rep.ratios.push_back(sup[ut]);
    ts.push_back(t);
    ls.push_back(std::log(sup[ut]));
    rep.fitted_C = std::max(rep.fitted_C, std::exp(std::log(sup[ut]) - t * std::log(nu_claim)));
  }
  const double n = static_cast<double>(ts.size());
  double mt = 0, ml = 0;
  for (std::size_t i = 0; i < ts.size(); ++i) {
    mt += ts[i] / n;
    ml += ls[i] / n;
  }
  double sxy = 0, sxx = 0;
  for (std::size_t i = 0; i < ts.size(); ++i) {
    sxy += (ts[i] - mt) * (ls[i] - ml);
    sxx += (ts[i] - mt) * (ts[i] - mt);
  }
  rep.fitted_rate = std::exp(sxy / sxx);
  rep.pass = rep.fitted_rate < 1 && rep.fitted_C <= 10;
  return rep;
}

// ---------------------------------------------------------------------------------------------
// Linear graph transform

BlockMatrix BlockMatrix::split(const Mat& h, int d_s) {
  const Eigen::Index d = h.rows(), c = d - d_s;
  return {h.topLeftCorner(d_s, d_s), h.topRightCorner(d_s, c), h.bottomLeftCorner(c, d_s), h.bottomRightCorner(c, c)};
}

Mat BlockMatrix::full() const {
  Mat h(A.rows() + C.rows(), A.cols() + B.cols());
  h << A, B, C, D;
  return h;
}

Mat linear_graph_transform(const BlockMatrix& h, const Mat& l) {
  const Mat m = h.A + h.B * l;
  Eigen::FullPivLU<Mat> lu(m);
  if (!lu.isInvertible() || smin(m) <= 1e-14 * std::max(1.0, smax(m))) {
    throw NumericalError("graph transform undefined: A + B l is singular");
  }
  return (h.C + h.D * l) * lu.inverse();
}

double graph_transform_lipschitz(const BlockMatrix& h, int probes, std::uint64_t seed) {
  const Eigen::Index d_s = h.A.rows(), d_cu = h.D.rows();
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> normal;
  std::uniform_real_distribution<double> unif;
  auto sample = [&] {
    Mat l(d_cu, d_s);
    for (Eigen::Index i = 0; i < l.size(); ++i) l.data()[i] = normal(rng);
    return Mat(l * (std::pow(unif(rng), 0.5) / smax(l)));
  };
  auto derivative_norm = [&](const Mat& l) {
    const Mat minv = (h.A + h.B * l).inverse();
    const Mat g = (h.C + h.D * l) * minv;
    // sup over |Delta| <= 1 of |(D - g B) Delta M^{-1}| = |D - g B| |M^{-1}|
    return smax(h.D - g * h.B) * smax(minv);
  };
  double lip = derivative_norm(Mat::Zero(d_cu, d_s));
  for (int k = 0; k < probes; ++k) {
    const Mat l1 = sample(), l2 = sample();
    const double dl = smax(l1 - l2);
    if (dl > 0) lip = std::max(lip, smax(linear_graph_transform(h, l1) - linear_graph_transform(h, l2)) / dl);
    lip = std::max(lip, derivative_norm(l1));
  }
  return lip;
}

FiberReport fiber_contraction_check(const VectorFieldSpec& spec, const std::vector<Vec>& samples, double q, double T,
                                    const CocycleOptions& opts, int jobs) {
  if (samples.empty()) throw ValidationError("no samples");
  if (!(T > 0)) throw ValidationError("T must be positive");
  const int d_s = spec.stable_dim();
  FiberReport rep;
  rep.samples.resize(samples.size());
  parallel_for(samples.size(), jobs, [&](std::size_t s) {
    const CocycleTrack tr = CocycleTrack::around(spec, samples[s], opts.t_fwd, T + opts.t_back, opts);
    const int i = tr.origin(), k = tr.steps_for(T);
    Mat sz(spec.dimension(), spec.dimension()), sx(spec.dimension(), spec.dimension());
    sz << tr.Es(i), tr.Ecu(i);
    sx << tr.Es(i + k), tr.Ecu(i + k);
    const Mat dh = sz.partialPivLu().solve(tr.inverse_product(i, k) * sx);
    FiberSample& f = rep.samples[s];
    f.log_lip = std::log(graph_transform_lipschitz(BlockMatrix::split(dh, d_s), 64, opts.seed + s));
    f.log_norm_inv = std::log(smax(tr.product(i, k)));
    f.log_product = f.log_lip + q * f.log_norm_inv;
    f.eta = eta(norms_from_logs(tr.log_norms(i, k)), q);
    f.pass = f.log_product < -1e-9 && f.eta < -1e-9;
  });
  rep.pass = std::all_of(rep.samples.begin(), rep.samples.end(), [](const FiberSample& f) { return f.pass; });
  return rep;
}

// ---------------------------------------------------------------------------------------------
// Holonomy

HolonomyReport holonomy_sample(const VectorFieldSpec& spec, const Transversal& source, const Transversal& target,
                               int n_points, double spacing, const HolonomyOptions& opts, int jobs) {
  if (n_points < 2) throw ValidationError("holonomy needs at least 2 points");
  if (!(spacing > 0)) throw ValidationError("holonomy spacing must be positive");
  if (spec.stable_dim() != 1) throw ValidationError("holonomy sampling supports d_s = 1");
  const int d = spec.dimension();
  if (source.span.rows() != d || source.span.cols() < 1) throw ValidationError("source transversal has the wrong shape");
  if (target.span.rows() != d || target.span.cols() != spec.center_unstable_dim()) {
    throw ValidationError("target transversal must have dimension d_cu");
  }
  Eigen::HouseholderQR<Mat> qr(target.span);
  const Vec normal = (qr.householderQ() * Mat::Identity(d, d)).col(d - 1);

  HolonomyReport rep;
  const auto n = static_cast<std::size_t>(n_points);
  rep.source.resize(n);
  rep.target.assign(n, Vec());
  rep.hit.assign(n, false);
  std::vector<std::string> notes(n);
  parallel_for(n, jobs, [&](std::size_t k) {
    const double s = (static_cast<double>(k) - 0.5 * (n_points - 1)) * spacing;
    rep.source[k] = s;
    const Vec p = source.point + s * source.span.col(0).normalized();
    const ChartSequence cs = build_charts(spec, p, opts.T, opts.n_steps, opts.rho, opts.cocycle, 1);
    const HPResult hp = hadamard_perron(cs, opts.hp, nullptr, 1);
    const auto line = leaf_polyline(cs.frames.front(), hp.patches.front());
    for (std::size_t m = 0; m + 1 < line.size(); ++m) {
      const double g0 = normal.dot(line[m].second - target.point);
      const double g1 = normal.dot(line[m + 1].second - target.point);
      if ((g0 <= 0 && g1 > 0) || (g0 >= 0 && g1 < 0)) {
        const double w = g0 / (g0 - g1);
        const Vec y = (1 - w) * line[m].second + w * line[m + 1].second;
        rep.target[k] = target.span.colPivHouseholderQr().solve(y - target.point);
        rep.hit[k] = true;
        return;
      }
    }
    notes[k] = "leaf through source point " + std::to_string(k) + " misses the target transversal";
  });
  for (auto& s : notes) {
    if (!s.empty()) rep.notes.push_back(std::move(s));
  }

  std::vector<double> lx, ly;
  for (std::size_t a = 0; a < n; ++a) {
    for (std::size_t b = a + 1; b < n; ++b) {
      if (!rep.hit[a] || !rep.hit[b]) continue;
      const double dy = (rep.target[a] - rep.target[b]).norm();
      if (dy <= 0) continue;
      lx.push_back(std::log(std::abs(rep.source[a] - rep.source[b])));
      ly.push_back(std::log(dy));
    }
  }
  if (lx.size() < 2) {
    rep.exponent = std::numeric_limits<double>::quiet_NaN();
    rep.notes.push_back("too few leaf intersections to fit an exponent");
    return rep;
  }
  double mx = 0, my = 0;
  for (std::size_t i = 0; i < lx.size(); ++i) {
    mx += lx[i];
    my += ly[i];
  }
  mx /= static_cast<double>(lx.size());
  my /= static_cast<double>(lx.size());
  double sxy = 0, sxx = 0;
  for (std::size_t i = 0; i < lx.size(); ++i) {
    sxy += (lx[i] - mx) * (ly[i] - my);
    sxx += (lx[i] - mx) * (lx[i] - mx);
  }
  rep.exponent = sxx > 0 ? sxy / sxx : std::numeric_limits<double>::quiet_NaN();
  return rep;
}

}  // namespace foliacert
