#include <cmath>
#include <functional>
#include <random>

#include "doctest.h"
#include "foliacert/foliation.hpp"
#include "foliacert/region_bounds.hpp"

using namespace foliacert;

namespace {

VectorFieldSpec lorenz() { return lorenz_field(Rational(10), Rational(28), Rational(8, 3)); }
VectorFieldSpec diag() { return parse_field("dx1 = -2*x1\ndx2 = x2\ndx3 = 3*x3"); }

Vec v3(double a, double b, double c) {
  Vec v(3);
  v << a, b, c;
  return v;
}

// planar map (u, v) -> (g(u, v), h(u, v)) with hand-written derivatives
class PlanarStep : public ChartStep {
 public:
  using F = std::function<Vec(double, double)>;
  using J = std::function<Mat(double, double)>;
  PlanarStep(F f, J j) : f_(std::move(f)), j_(std::move(j)) {}
  Vec apply(const Vec& p) const override { return f_(p[0], p[1]); }
  Mat jacobian(const Vec& p) const override { return j_(p[0], p[1]); }

 private:
  F f_;
  J j_;
};

Vec v2(double a, double b) {
  Vec v(2);
  v << a, b;
  return v;
}

Mat m2(double a, double b, double c, double d) {
  Mat m(2, 2);
  m << a, b, c, d;
  return m;
}

std::vector<std::shared_ptr<const ChartStep>> repeat(std::shared_ptr<const ChartStep> s, int n) {
  return std::vector<std::shared_ptr<const ChartStep>>(static_cast<std::size_t>(n), s);
}

// truncated power series in u
using Series = std::vector<double>;
constexpr int kOrder = 12;

Series mul(const Series& a, const Series& b) {
  Series c(kOrder + 1, 0.0);
  for (int i = 0; i <= kOrder; ++i) {
    for (int j = 0; i + j <= kOrder; ++j) c[i + j] += a[i] * b[j];
  }
  return c;
}

Series compose(const Series& outer, const Series& inner) {
  Series out(kOrder + 1, 0.0), pw(kOrder + 1, 0.0);
  pw[0] = 1;
  for (int i = 0; i <= kOrder; ++i) {
    for (int j = 0; j <= kOrder; ++j) out[j] += outer[i] * pw[j];
    pw = mul(pw, inner);
  }
  return out;
}

double eval(const Series& s, double u) {
  double r = 0;
  for (int i = kOrder; i >= 0; --i) r = r * u + s[i];
  return r;
}

// stable manifold of (u, v) -> (u/3 + v^2/100, 2v + u^2): phi(u) = (phi(u/3 + phi(u)^2/100) - u^2)/2
Series stable_series() {
  Series phi(kOrder + 1, 0.0);
  for (int it = 0; it < 60; ++it) {
    Series inner = mul(phi, phi);
    for (double& c : inner) c /= 100;
    inner[1] += 1.0 / 3.0;
    Series next = compose(phi, inner);
    next[2] -= 1;
    for (double& c : next) c /= 2;
    phi = next;
  }
  return phi;
}

Mat random_matrix(std::mt19937_64& rng, int r, int c) {
  std::normal_distribution<double> n;
  Mat m(r, c);
  for (Eigen::Index i = 0; i < m.size(); ++i) m.data()[i] = n(rng);
  return m;
}

double opnorm(const Mat& m) { return Eigen::JacobiSVD<Mat>(m).singularValues()[0]; }

}  // namespace

TEST_CASE("hp_constants: worked example") {
  const HPConstants hp = hp_constants({0.2}, {2.0}, 0.1, 0.2);
  REQUIRE(hp.feasible);
  CHECK(hp.gamma == doctest::Approx(0.5));
  // delta bound = lambda_min * min{(1/sigma - 1)/(gamma + 1/gamma + 2), (1/sigma - (1+gamma)^2)/((2+gamma)(1+gamma))}
  CHECK(hp.delta == doctest::Approx(0.5 * 0.2 * std::min(9.0 / 4.5, 7.75 / 3.75)));
  CHECK(hp.delta == doctest::Approx(0.2));
  CHECK(hp.lambda_p[0] == doctest::Approx(0.75));
  CHECK(hp.mu_p[0] == doctest::Approx(2.0 / 1.5 - 0.2));
  CHECK(hp.nu[0] == doctest::Approx(0.875));
  CHECK(hp.nu_sup == doctest::Approx(0.875));

  const HPConstants bad = hp_constants({0.2}, {2.0}, 1.0, 0.2);
  CHECK_FALSE(bad.feasible);
  CHECK_FALSE(bad.failure.empty());
  // lambda / mu above sigma
  CHECK_FALSE(hp_constants({0.5}, {2.0}, 0.1, 0.2).feasible);
  CHECK_THROWS_AS(hp_constants({0.2}, {2.0, 3.0}, 0.1, 0.2), ValidationError);
}

TEST_CASE("property: feasible constants satisfy the ordering") {
  std::mt19937_64 rng(5);
  std::uniform_real_distribution<double> lam(0.01, 0.5), mu(1.0, 20.0);
  int feasible = 0;
  for (int k = 0; k < 300; ++k) {
    std::vector<double> l(5), m(5);
    double lmin = 1, ratio = 0;
    for (int n = 0; n < 5; ++n) {
      l[n] = lam(rng);
      m[n] = mu(rng);
      lmin = std::min(lmin, l[n]);
      ratio = std::max(ratio, l[n] / m[n]);
    }
    const HPConstants hp = hp_constants(l, m, ratio, lmin);
    if (!hp.feasible) continue;
    ++feasible;
    CHECK(hp.gamma > 0);
    CHECK(hp.delta > 0);
    for (int n = 0; n < 5; ++n) {
      CHECK(hp.lambda_p[n] < hp.nu[n]);
      CHECK(hp.nu[n] < hp.mu_p[n]);
      CHECK(hp.lambda_p[n] > l[n]);
      CHECK(hp.mu_p[n] < m[n]);
    }
    CHECK(hp.nu_sup < 1);
  }
  CHECK(feasible > 100);
}

TEST_CASE("hadamard_perron: saddle with an invariant axis gives phi = 0") {
  auto f = std::make_shared<PlanarStep>([](double u, double v) { return v2(u / 3 + v * v / 100, 2 * v); },
                                        [](double, double v) { return m2(1.0 / 3, v / 50, 0, 2); });
  HPOptions o;
  o.grid = 33;
  const HPResult r = hadamard_perron(repeat(f, 10), 1, 1, 0.5, o);
  REQUIRE(r.converged);
  for (std::size_t k = 0; k < r.patches.front().size(); ++k) CHECK(std::abs(r.patches.front().value(k)[0]) <= 1e-14);
  CHECK(r.invariance_defect <= 1e-14);
}

TEST_CASE("hadamard_perron: block-diagonal linear steps converge in one sweep") {
  auto f = std::make_shared<PlanarStep>([](double u, double v) { return v2(u / 3, 2 * v); },
                                        [](double, double) { return m2(1.0 / 3, 0, 0, 2); });
  const HPResult r = hadamard_perron(repeat(f, 6), 1, 1, 0.5);
  CHECK(r.converged);
  CHECK(r.sweeps == 1);
  CHECK(r.changes.front() == 0.0);
  CHECK(r.phi0_slope == 0.0);
}

TEST_CASE("hadamard_perron: quadratic coupling against the series oracle") {
  auto f = std::make_shared<PlanarStep>(
      [](double u, double v) { return v2(u / 3 + v * v / 100, 2 * v + u * u); },
      [](double u, double v) { return m2(1.0 / 3, v / 50, 2 * u, 2); });
  HPOptions o;
  o.grid = 801;
  const HPResult r = hadamard_perron(repeat(f, 30), 1, 1, 0.1, o);
  REQUIRE(r.converged);
  const Series phi = stable_series();
  CHECK(phi[2] == doctest::Approx(-9.0 / 17.0).epsilon(1e-3));
  double worst = 0;
  const GraphPatch& g = r.patches.front();
  for (std::size_t k = 0; k < g.size(); ++k) {
    const double u = g.node(k)[0];
    worst = std::max(worst, std::abs(g.value(k)[0] - eval(phi, u)));
  }
  CHECK(worst <= 1e-8);
}

TEST_CASE("hadamard_perron: decoupled quadratic has phi = -(9/17) u^2") {
  auto f = std::make_shared<PlanarStep>([](double u, double v) { return v2(u / 3, 2 * v + u * u); },
                                        [](double u, double) { return m2(1.0 / 3, 0, 2 * u, 2); });
  HPOptions o;
  o.grid = 41;
  const HPResult r = hadamard_perron(repeat(f, 30), 1, 1, 0.1, o);
  REQUIRE(r.converged);
  const GraphPatch& g = r.patches.front();
  double worst = 0;
  for (std::size_t k = 0; k < g.size(); ++k) {
    const double u = g.node(k)[0];
    worst = std::max(worst, std::abs(g.value(k)[0] + 9.0 / 17.0 * u * u));
  }
  // u/3 falls between nodes, so interpolation of a parabola costs h^2/8 per pull back
  const double h = 0.2 / 40;
  CHECK(worst <= h * h);
}

TEST_CASE("hadamard_perron: validation") {
  auto f = std::make_shared<PlanarStep>([](double u, double v) { return v2(u / 3, 2 * v); },
                                        [](double, double) { return m2(1.0 / 3, 0, 0, 2); });
  HPOptions o;
  o.grid = 64;
  CHECK_THROWS_AS(hadamard_perron(repeat(f, 2), 1, 1, 0.5, o), ValidationError);
  const HPConstants bad = hp_constants({0.2}, {2.0}, 1.0, 0.2);
  CHECK_THROWS_AS(hadamard_perron(repeat(f, 2), 1, 1, 0.5, {}, &bad), ValidationError);
}

TEST_CASE("property: graph transform maps graphs to graphs") {
  std::mt19937_64 rng(11);
  int checked = 0;
  for (int k = 0; k < 1000; ++k) {
    const int d_s = 1 + k % 2, d = 3 + k % 3;
    const Mat h = random_matrix(rng, d, d);
    const Mat l = random_matrix(rng, d - d_s, d_s);
    const BlockMatrix b = BlockMatrix::split(h, d_s);
    Mat g;
    try {
      g = linear_graph_transform(b, l);
    } catch (const NumericalError&) {
      continue;
    }
    const Mat u = random_matrix(rng, d_s, 1);
    Vec p(d);
    p << u, l * u;
    const Vec img = h * p;
    const Vec expect = g * img.head(d_s);
    CHECK((img.tail(d - d_s) - expect).norm() <= 1e-10 * std::max(1.0, img.norm()) * std::max(1.0, opnorm(g)));
    ++checked;
  }
  CHECK(checked > 900);
  CHECK(BlockMatrix::split(m2(1, 2, 3, 4), 1).full() == m2(1, 2, 3, 4));
}

TEST_CASE("graph transform: B = C = 0 and the Lipschitz bound") {
  std::mt19937_64 rng(3);
  for (int k = 0; k < 50; ++k) {
    BlockMatrix b;
    b.A = random_matrix(rng, 1, 1).array() + 3.0;
    b.B = Mat::Zero(1, 2);
    b.C = Mat::Zero(2, 1);
    b.D = random_matrix(rng, 2, 2);
    const Mat l = random_matrix(rng, 2, 1);
    CHECK((linear_graph_transform(b, l) - b.D * l * b.A.inverse()).norm() <= 1e-12 * (1 + l.norm()) * (1 + b.D.norm()));
    CHECK(graph_transform_lipschitz(b) ==
          doctest::Approx(opnorm(b.D) * opnorm(b.A.inverse())).epsilon(1e-9));
  }
  // A = I, |B|, |C| <= delta, |D| <= lambda: Lip <= (lambda + delta^2)/(1 - delta)^2 <= (lambda + 2 delta)/(1 - delta)^2
  std::uniform_real_distribution<double> unif(0.0, 1.0);
  for (int k = 0; k < 200; ++k) {
    const double delta = 0.3 * unif(rng), lambda = unif(rng);
    BlockMatrix b;
    b.A = Mat::Identity(1, 1);
    b.B = random_matrix(rng, 1, 2);
    b.B *= delta / opnorm(b.B);
    b.C = random_matrix(rng, 2, 1);
    b.C *= delta / opnorm(b.C);
    b.D = random_matrix(rng, 2, 2);
    b.D *= lambda / opnorm(b.D);
    CHECK(graph_transform_lipschitz(b) <= (lambda + 2 * delta) / ((1 - delta) * (1 - delta)) * (1 + 1e-12));
  }
  BlockMatrix sing{Mat::Identity(1, 1), Mat::Ones(1, 1), Mat::Zero(1, 1), Mat::Identity(1, 1)};
  CHECK_THROWS_AS(linear_graph_transform(sing, -Mat::Ones(1, 1)), NumericalError);
}

TEST_CASE("graph transform fixed point is E^s along Lorenz") {
  const VectorFieldSpec s = lorenz();
  const Vec z = integrate_flow(s, v3(1, 1, 1), 50);
  const Mat es = estimate_Es(s, z, 10.0);
  // fixed ambient basis [es | complement] at every point of the orbit
  Mat basis = Eigen::HouseholderQR<Mat>(es).householderQ() * Mat::Identity(3, 3);
  basis.col(0) = es.col(0);
  const Mat binv = basis.inverse();
  const int N = 8;
  std::vector<Vec> orbit{z};
  for (int n = 0; n < N; ++n) orbit.push_back(integrate_flow(s, orbit.back(), 1.0));
  Mat l = Mat::Zero(2, 1);
  for (int n = N - 1; n >= 0; --n) {
    const Mat m = integrate_variational(s, orbit[static_cast<std::size_t>(n)], Mat::Identity(3, 3), 1.0).second;
    l = linear_graph_transform(BlockMatrix::split(binv * m.inverse() * basis, 1), l);
  }
  Vec dir(3);
  dir << 1, l(0, 0), l(1, 0);
  CHECK(principal_angle(basis * dir, es) <= 1e-4);
}

TEST_CASE("fiber contraction on the linear saddle") {
  CocycleOptions o;
  o.t_back = 12;
  o.t_fwd = 12;
  const std::vector<Vec> pts{v3(0.1, 0.1, 0.1), v3(-0.2, 0.05, 0)};
  // Lip Gamma = |D| |A^{-1}| = e^{-1} e^{-2}, |DX_1| = e^3: the product is exactly 1 at q = 1
  const FiberReport at1 = fiber_contraction_check(diag(), pts, 1.0, 1.0, o);
  for (const auto& f : at1.samples) {
    CHECK(f.log_lip == doctest::Approx(-3.0).epsilon(1e-6));
    CHECK(f.log_norm_inv == doctest::Approx(3.0).epsilon(1e-9));
    CHECK(std::abs(f.log_product) <= 1e-6);
    CHECK(std::abs(f.eta) <= 1e-6);
  }
  CHECK(fiber_contraction_check(diag(), pts, 0.9, 1.0, o).pass);
  CHECK_FALSE(fiber_contraction_check(diag(), pts, 1.1, 1.0, o).pass);
  CHECK_THROWS_AS(fiber_contraction_check(diag(), {}, 1.0, 1.0, o), ValidationError);
}

TEST_CASE("charts on the linear saddle and the leaf contraction test") {
  const Vec x = v3(0.1, 0, 0);
  const ChartSequence cs = build_charts(diag(), x, 1.0, 5, 0.01);
  REQUIRE(cs.frames.size() == 6);
  for (std::size_t n = 0; n < cs.lambda.size(); ++n) {
    CHECK(cs.lambda[n] == doctest::Approx(std::exp(-2.0)).epsilon(1e-6));
    CHECK(cs.mu[n] == doctest::Approx(std::exp(1.0)).epsilon(1e-6));
  }
  const HPResult hp = hadamard_perron(cs);
  REQUIRE(hp.converged);
  CHECK(leaf_tangency_angle(hp.patches.front()) <= 1e-6);

  const LeafTestReport rep = leaf_contraction_test(diag(), cs.frames.front(), hp.patches.front(), 6, 0.2);
  CHECK(rep.pass);
  REQUIRE(rep.ratios.size() == 6);
  for (std::size_t i = 0; i < rep.ratios.size(); ++i) {
    CHECK(rep.ratios[i] == doctest::Approx(std::exp(-2.0 * rep.times[i])).epsilon(1e-5));
  }
  CHECK(rep.fitted_rate == doctest::Approx(std::exp(-2.0)).epsilon(1e-5));

  LeafTestOptions off;
  off.cu_offset = 1e-3;
  CHECK_FALSE(leaf_contraction_test(diag(), cs.frames.front(), hp.patches.front(), 6, 0.2, off).pass);

  const auto line = leaf_polyline(cs.frames.front(), hp.patches.front());
  REQUIRE(line.size() == hp.patches.front().size());
  for (const auto& [s, p] : line) {
    CHECK(std::abs(std::abs(p[0] - 0.1) - std::abs(s)) <= 1e-9);
    CHECK(v3(0, p[1], p[2]).norm() <= 1e-9);
  }
}

TEST_CASE("build_charts reports injectivity failures with a smaller radius") {
  const Vec x = integrate_flow(lorenz(), v3(1, 1, 1), 50);
  try {
    build_charts(lorenz(), x, 1.0, 2, 5.0);
    FAIL("expected an injectivity failure");
  } catch (const ChartInjectivityError& e) {
    CHECK(e.suggested_rho() < 5.0);
    CHECK(e.suggested_rho() > 0);
  }
  CHECK_THROWS_AS(build_charts(lorenz(), x, 1.0, 0, 0.01), ValidationError);
}

TEST_CASE("holonomy along straight stable leaves is a translation") {
  Transversal src{v3(0, 0.01, 0.01), v3(0, 1, 0)};
  Mat plane(3, 2);
  plane << 0, 0, 1, 0, 0, 1;
  Transversal dst{v3(0.05, 0, 0), plane};
  HolonomyOptions o;
  o.rho = 0.1;
  const HolonomyReport r = holonomy_sample(diag(), src, dst, 5, 0.01, o);
  for (std::size_t k = 0; k < r.hit.size(); ++k) {
    REQUIRE(r.hit[k]);
    CHECK(std::abs(r.target[k][0] - (0.01 + r.source[k])) <= 1e-6);
    CHECK(std::abs(r.target[k][1] - 0.01) <= 1e-6);
  }
  CHECK(r.exponent == doctest::Approx(1.0).epsilon(1e-4));
  CHECK_THROWS_AS(holonomy_sample(diag(), src, dst, 1, 0.01, o), ValidationError);
}
