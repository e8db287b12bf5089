#include "foliacert/commands.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <limits>
#include <sstream>

#include "foliacert/errors.hpp"
#include "foliacert/foliation.hpp"
#include "foliacert/parallel.hpp"

namespace foliacert {

namespace fs = std::filesystem;

// ---------------------------------------------------------------------------------------------
// Config

namespace {

Vec to_vec(const Json& j, const char* what) {
  if (!j.is_array() || j.empty()) throw ValidationError(std::string(what) + " must be a nonempty array of numbers");
  Vec v(static_cast<Eigen::Index>(j.size()));
  for (std::size_t i = 0; i < j.size(); ++i) {
    if (!j[i].is_number()) throw ValidationError(std::string(what) + " must contain numbers only");
    v[static_cast<Eigen::Index>(i)] = j[i].get<double>();
  }
  return v;
}

Box to_box(const Json& j, const char* what) {
  if (!j.is_object() || !j.contains("lo") || !j.contains("hi")) {
    throw ValidationError(std::string(what) + " needs \"lo\" and \"hi\"");
  }
  Box b{to_vec(j["lo"], what), to_vec(j["hi"], what)};
  if (b.lo.size() != b.hi.size()) throw ValidationError(std::string(what) + ": lo and hi differ in length");
  for (Eigen::Index i = 0; i < b.lo.size(); ++i) {
    if (!(b.lo[i] < b.hi[i])) throw ValidationError(std::string(what) + " is degenerate");
  }
  return b;
}

Rational json_rational(const Json& j, const std::string& name) {
  if (j.is_string()) return parse_rational(j.get<std::string>());
  if (j.is_number_integer()) return Rational(j.get<long long>());
  if (j.is_number()) return parse_rational(format_double(j.get<double>()));
  throw ValidationError("parameter '" + name + "' must be a number or a rational string");
}

template <class T>
T get_or(const Json& j, const char* key, T fallback) {
  if (!j.contains(key)) return fallback;
  try {
    return j.at(key).get<T>();
  } catch (const nlohmann::json::exception&) {
    throw ValidationError(std::string("config key '") + key + "' has the wrong type");
  }
}

double positive(double v, const char* what) {
  if (!(v > 0) || !std::isfinite(v)) throw ValidationError(std::string(what) + " must be positive");
  return v;
}

Membership parse_membership(const std::string& s) {
  if (s == "in") return Membership::declared_in;
  if (s == "out") return Membership::declared_out;
  throw ValidationError("membership must be \"in\" or \"out\" (got \"" + s + "\")");
}

std::string read_file(const fs::path& p) {
  std::ifstream in(p);
  if (!in) throw ValidationError("cannot read " + p.string());
  std::stringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

}  // namespace

RunConfig RunConfig::load(const fs::path& path) {
  Json j;
  try {
    j = Json::parse(read_file(path));
  } catch (const nlohmann::json::parse_error& e) {
    throw ValidationError("config " + path.string() + " is not valid JSON: " + e.what());
  }
  return from_json(j, path.parent_path());
}

namespace {

RunConfig parse_config(const Json& j, const fs::path& base_dir) {
  if (!j.is_object()) throw ValidationError("config must be a JSON object");
  RunConfig c;
  c.echo = j;
  c.base_dir = base_dir;
  if (j.contains("field")) {
    c.field_text = j["field"].get<std::string>();
    c.field_source = "inline";
  } else if (j.contains("field_file")) {
    const fs::path p = base_dir / j["field_file"].get<std::string>();
    c.field_text = read_file(p);
    c.field_source = j["field_file"].get<std::string>();
  } else {
    throw ValidationError("config needs \"field_file\" or \"field\"");
  }
  if (j.contains("parameters")) {
    for (const auto& [k, v] : j["parameters"].items()) c.overrides.emplace_back(k, json_rational(v, k));
  }
  if (j.contains("stable_dim")) c.stable_dim = j["stable_dim"].get<int>();
  c.smoothness_ceiling = positive(get_or(j, "smoothness_ceiling", 2.0), "smoothness_ceiling");

  const Json eq = j.value("equilibria", Json::object());
  c.grid_density = get_or(eq, "grid_density", 5);
  if (c.grid_density < 1) throw ValidationError("grid_density must be at least 1");
  if (eq.contains("search_box")) c.search_box = to_box(eq["search_box"], "search_box");
  c.default_membership = get_or(eq, "default_membership", std::string("heuristic"));
  if (c.default_membership != "heuristic" && c.default_membership != "in" && c.default_membership != "out") {
    throw ValidationError("default_membership must be \"heuristic\", \"in\" or \"out\"");
  }
  for (const Json& d : eq.value("declarations", Json::array())) {
    Declaration dec;
    dec.location = to_vec(d.at("location"), "declaration location");
    dec.membership = parse_membership(d.at("membership").get<std::string>());
    dec.tolerance = positive(get_or(d, "tolerance", 1e-3), "declaration tolerance");
    c.declarations.push_back(std::move(dec));
  }

  const Json rg = j.value("region", Json::object());
  c.region.mode = get_or(rg, "mode", std::string("lorenz-chain"));
  if (c.region.mode != "lorenz-chain" && c.region.mode != "generic-box") {
    throw ValidationError("region mode must be \"lorenz-chain\" or \"generic-box\"");
  }
  const Json names = rg.value("parameter_names", Json::object());
  c.region.sigma_name = get_or(names, "sigma", std::string("sigma"));
  c.region.r_name = get_or(names, "r", std::string("r"));
  c.region.b_name = get_or(names, "b", std::string("b"));
  c.region.dyer_lambda = get_or(rg, "dyer_lambda", 11.0);
  if (rg.contains("dyer_quadratic")) {
    const Vec q = to_vec(rg["dyer_quadratic"], "dyer_quadratic");
    if (q.size() != 3) throw ValidationError("dyer_quadratic needs three coefficients [alpha, beta, gamma]");
    c.region.dyer_override = Quadratic{q[0], q[1], q[2]};
  }
  if (rg.contains("box")) c.region.box = to_box(rg["box"], "region box");
  if (rg.contains("fallback_box")) c.region.fallback_box = to_box(rg["fallback_box"], "fallback_box");
  c.region.grid = get_or(rg, "grid", 64);
  if (c.region.grid < 2) throw ValidationError("region grid must be at least 2");
  if (c.region.mode == "generic-box" && !c.region.box) throw ValidationError("generic-box region needs \"box\"");

  c.q_tol = positive(get_or(j, "q_tol", 1e-4), "q_tol");
  const Json integ = j.value("integrator", Json::object());
  c.integrator.tol = get_or(integ, "tol", c.integrator.tol);
  c.integrator.validate();
  c.seed = get_or<std::uint64_t>(j, "seed", 1);

  if (j.contains("initial_point")) c.initial_point = to_vec(j["initial_point"], "initial_point");
  for (const Json& p : j.value("sample_points", Json::array())) c.sample_points.push_back(to_vec(p, "sample point"));
  const Json sm = j.value("samples", Json::object());
  c.attractor_samples = get_or(sm, "attractor", 100);
  if (c.attractor_samples < 1) throw ValidationError("samples.attractor must be at least 1");
  c.transient = get_or(sm, "transient", 50.0);
  if (c.transient < 0) throw ValidationError("samples.transient must be nonnegative");
  c.lyapunov_horizon = positive(get_or(sm, "lyapunov_horizon", 200.0), "samples.lyapunov_horizon");
  c.empirical = get_or(j, "empirical", false);

  const Json co = j.value("cocycle", Json::object());
  c.cocycle.t_back = positive(get_or(co, "t_back", 5.0), "cocycle.t_back");
  c.cocycle.t_fwd = positive(get_or(co, "t_fwd", 2.0), "cocycle.t_fwd");
  c.cocycle.min_log_gap = positive(get_or(co, "min_log_gap", 5.0), "cocycle.min_log_gap");

  const Json fo = j.value("foliation", Json::object());
  c.foliation.T = positive(get_or(fo, "T", 1.0), "foliation.T");
  c.foliation.rho = positive(get_or(fo, "rho", 0.01), "foliation.rho");
  c.foliation.grid = get_or(fo, "grid", 65);
  c.foliation.n_steps = get_or(fo, "n_steps", 50);
  c.foliation.horizon = get_or(fo, "horizon", 10);
  c.foliation.fix_tol = positive(get_or(fo, "fix_tol", 1e-9), "foliation.fix_tol");
  c.foliation.max_shrinks = get_or(fo, "max_shrinks", 3);
  if (c.foliation.max_shrinks < 0) throw ValidationError("foliation.max_shrinks must be nonnegative");
  if (c.foliation.n_steps < 1 || c.foliation.horizon < 1) throw ValidationError("foliation n_steps and horizon must be positive");

  const Json out = j.value("outputs", Json::object());
  if (out.contains("report")) c.report_path = (base_dir / out["report"].get<std::string>()).string();

  // catch field errors at load time
  const VectorFieldSpec spec = c.field();
  if (c.search_box.lo.size() == 0) {
    c.search_box = Box{Vec::Constant(spec.dimension(), -20.0), Vec::Constant(spec.dimension(), 20.0)};
  }
  if (c.search_box.dimension() != spec.dimension()) throw ValidationError("search_box dimension differs from the field");
  if (c.initial_point.size() == 0) c.initial_point = Vec::Constant(spec.dimension(), 1.0);
  if (c.initial_point.size() != spec.dimension()) throw ValidationError("initial_point dimension differs from the field");
  for (const Vec& p : c.sample_points) {
    if (p.size() != spec.dimension()) throw ValidationError("sample point dimension differs from the field");
  }
  for (const Declaration& d : c.declarations) {
    if (d.location.size() != spec.dimension()) throw ValidationError("declaration dimension differs from the field");
  }
  return c;
}

}  // namespace

RunConfig RunConfig::from_json(const Json& j, const fs::path& base_dir) {
  try {
    return parse_config(j, base_dir);
  } catch (const nlohmann::json::exception& e) {
    // wrong value types surface here
    throw ValidationError(std::string("malformed config: ") + e.what());
  }
}

VectorFieldSpec RunConfig::field() const {
  VectorFieldSpec spec = parse_field(field_text, overrides);
  if (stable_dim && *stable_dim != spec.stable_dim()) {
    std::vector<Expr> comps = spec.components();
    spec = VectorFieldSpec::create(std::move(comps), spec.parameters(), *stable_dim);
  }
  return spec;
}

std::vector<Vec> read_points(const fs::path& path) {
  std::istringstream in(read_file(path));
  std::vector<Vec> out;
  std::string line;
  int lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (auto h = line.find('#'); h != std::string::npos) line.resize(h);
    std::replace(line.begin(), line.end(), ',', ' ');
    std::istringstream ls(line);
    std::vector<double> vals;
    std::string tok;
    while (ls >> tok) {
      try {
        std::size_t used = 0;
        vals.push_back(std::stod(tok, &used));
        if (used != tok.size()) throw std::invalid_argument(tok);
      } catch (const std::exception&) {
        throw ValidationError(path.string() + ":" + std::to_string(lineno) + ": not a number: " + tok);
      }
    }
    if (vals.empty()) continue;
    out.push_back(Eigen::Map<Vec>(vals.data(), static_cast<Eigen::Index>(vals.size())));
  }
  if (out.empty()) throw ValidationError(path.string() + " contains no points");
  return out;
}

// ---------------------------------------------------------------------------------------------
// Pipeline stages

namespace {

using Clock = std::chrono::steady_clock;

double seconds_since(Clock::time_point t0) { return std::chrono::duration<double>(Clock::now() - t0).count(); }

Json vec_json(const Vec& v) {
  Json a = Json::array();
  for (double x : v) a.push_back(x);
  return a;
}

CocycleOptions cocycle_options(const RunConfig& cfg, std::uint64_t seed) {
  CocycleOptions co = cfg.cocycle;
  co.seed = seed;
  co.integrator = cfg.integrator;
  return co;
}

std::vector<Vec> attractor_samples(const VectorFieldSpec& spec, const RunConfig& cfg, int count) {
  if (!cfg.sample_points.empty()) {
    std::vector<Vec> out;
    for (int i = 0; i < count; ++i) out.push_back(cfg.sample_points[static_cast<std::size_t>(i) % cfg.sample_points.size()]);
    return out;
  }
  return sample_attractor(spec, cfg.initial_point, count, cfg.transient, 1.0, cfg.integrator);
}

struct SpectralStage {
  EquilibriumSearch search;
  std::vector<SpectralData> data;
  std::vector<Membership> membership;
  std::vector<std::string> source;
  std::vector<SpectralData> in_attractor;
};

SpectralStage run_spectral(const VectorFieldSpec& spec, const RunConfig& cfg, int jobs) {
  SpectralStage st;
  st.search = find_equilibria(spec, cfg.search_box, cfg.grid_density, jobs);
  for (const Equilibrium& e : st.search.equilibria) {
    st.data.push_back(eigen_data(spec, e));
    Membership m = Membership::unknown;
    std::string src;
    for (const Declaration& d : cfg.declarations) {
      if ((d.location - e.location).norm() <= d.tolerance * std::max(1.0, d.location.norm())) {
        m = d.membership;
        src = "declared";
        break;
      }
    }
    if (m == Membership::unknown) {
      if (cfg.default_membership == "heuristic") {
        MembershipOptions mo;
        mo.seed = cfg.seed;
        mo.integrator = cfg.integrator;
        m = membership_heuristic(spec, e.location, mo);
        src = "heuristic (return to the 0.5-ball of a nearby forward orbit)";
      } else {
        m = parse_membership(cfg.default_membership);
        src = "config default";
      }
    }
    st.membership.push_back(m);
    st.source.push_back(src);
    if (m == Membership::declared_in) st.in_attractor.push_back(st.data.back());
  }
  return st;
}

Json spectral_json(const VectorFieldSpec& spec, const SpectralStage& st) {
  Json j;
  j["tag"] = kConditional;
  j["warnings"] = st.search.warnings;
  Json eqs = Json::array();
  for (std::size_t i = 0; i < st.data.size(); ++i) {
    const SpectralData& sd = st.data[i];
    Json e;
    e["location"] = vec_json(sd.location);
    e["residual"] = st.search.equilibria[i].residual;
    e["membership"] = to_string(st.membership[i]);
    e["membership_source"] = st.source[i];
    Json ev = Json::array();
    double tr = 0;
    for (const auto& l : sd.eigenvalues) {
      ev.push_back(Json{{"re", l.real()}, {"im", l.imag()}});
      tr += l.real();
    }
    e["eigenvalues"] = ev;
    e["eigenvalue_sum"] = with_provenance(tr, "sum of Re eigenvalues of DG");
    e["divergence"] = with_provenance(divergence(spec, sd.location), "trace of DG at the equilibrium");
    e["hyperbolic"] = sd.hyperbolic;
    e["lorenz_like"] = sd.lorenz_like;
    try {
      e["q_bound"] = with_provenance(equilibrium_q_bound(sd, spec.stable_dim()),
                                     "sup q with Re(l1 - l_{d_s+1} + q l_d) < 0");
    } catch (const BoundError& err) {
      e["q_bound"] = with_provenance(std::numeric_limits<double>::quiet_NaN(), err.what());
    }
    e["warnings"] = sd.warnings;
    eqs.push_back(std::move(e));
  }
  j["equilibria"] = std::move(eqs);
  return j;
}

struct BoundStage {
  BoundCertificate cert;
  std::vector<std::string> notes;
  std::string rounding;
};

BoundStage run_bound(const VectorFieldSpec& spec, const RunConfig& cfg, bool exact, int jobs) {
  BoundStage st;
  const RegionConfig& rc = cfg.region;
  if (rc.mode == "generic-box") {
    if (rc.box->dimension() != spec.dimension()) throw ValidationError("region box dimension differs from the field");
    st.cert = generic_box_certificate(spec, *rc.box, rc.grid, jobs);
    st.rounding = "outward (certified grid bound)";
    return st;
  }
  auto param = [&](const std::string& name) {
    const Rational* p = spec.parameter(name);
    if (!p) throw ValidationError("lorenz-chain region needs the field parameter '" + name + "'");
    return *p;
  };
  const Rational sigma = param(rc.sigma_name), r = param(rc.r_name), b = param(rc.b_name);
  if (!structurally_equal(spec, lorenz_field(sigma, r, b))) {
    throw ValidationError("lorenz-chain region applies only to the Lorenz family; the field differs");
  }
  if (!rc.dyer_override) {
    try {
      (void)dyer_quadratic(to_double(sigma), to_double(r), rc.dyer_lambda);
    } catch (const BoundError& e) {
      if (!rc.fallback_box) throw;
      lorenz_ellipsoid_bound(b, r);  // the trapping region must still exist
      st.notes.push_back(std::string("x1 quadratic unavailable (") + e.what() + "); generic box fallback used");
      st.cert = generic_box_certificate(spec, *rc.fallback_box, rc.grid, jobs);
      st.rounding = "outward (certified grid bound)";
      return st;
    }
  }
  LorenzChainOptions lo;
  lo.rounding = exact ? Rounding::exact : Rounding::stepwise;
  lo.dyer_lambda = rc.dyer_lambda;
  lo.dyer_override = rc.dyer_override;
  st.cert = lorenz_chain(sigma, b, r, lo);
  st.rounding = exact ? "exact" : "stepwise";
  return st;
}

Json bound_json(const BoundStage& st) {
  const BoundCertificate& c = st.cert;
  Json j;
  j["tag"] = kConditional;
  j["kind"] = c.region.kind;
  j["rounding"] = st.rounding;
  Json params = Json::object();
  for (const auto& [k, v] : c.region.parameters) params[k] = v;
  j["parameters"] = params;
  if (c.region.box) j["box"] = Json{{"lo", vec_json(c.region.box->lo)}, {"hi", vec_json(c.region.box->hi)}};
  if (c.region.grid > 0) j["grid"] = c.region.grid;
  Json steps = Json::array();
  for (const BoundStep& s : c.region.steps) {
    Json e;
    e["name"] = s.name;
    e["value"] = s.value;
    if (!s.exact.empty()) e["exact"] = s.exact;
    e["provenance"] = s.provenance;
    steps.push_back(std::move(e));
  }
  j["steps"] = std::move(steps);
  j["div_sup"] = with_provenance(c.div_sup, "certified sup of div G over the region");
  j["frob_sup"] = with_provenance(c.frob_sup, "certified sup of |DG|_2 over the region");
  j["notes"] = st.notes;
  return j;
}

Json certificate_json(const DissipativityCertificate& c) {
  Json j;
  j["q_tested"] = c.q_tested;
  Json a = Json::array();
  for (double m : c.cond_a) a.push_back(m);
  j["cond_a"] = with_provenance(0, "Re(l1 - l_{d_s+1} + q l_d) per equilibrium in the attractor");
  j["cond_a"]["value"] = a;
  j["cond_a_vacuous"] = c.cond_a_vacuous;
  j["cond_b"] = with_provenance(c.cond_b, "sup over the region of div G + (d_s q - 1)|DG|_2");
  j["holds"] = c.holds;
  return j;
}

struct CoreResult {
  Json sections = Json::object();
  Json timings = Json::object();
  std::string status;  // certified, not-certified, failed
  std::string failed_stage, error;
  bool config_error = false;
  MaxQResult mq;
};

CoreResult certify_core(const RunConfig& cfg, double q_tol, bool exact, int jobs) {
  CoreResult out;
  std::string stage = "field_spec";
  try {
    auto t0 = Clock::now();
    const VectorFieldSpec spec = cfg.field();
    Json fj;
    fj["source"] = cfg.field_source;
    fj["dimension"] = spec.dimension();
    fj["stable_dim"] = spec.stable_dim();
    Json params = Json::object();
    for (const auto& [k, v] : spec.parameters()) params[k] = v.str();
    fj["parameters"] = params;
    fj["text"] = serialize_field(spec);
    out.sections["field"] = fj;

    stage = "spectral";
    t0 = Clock::now();
    const SpectralStage sp = run_spectral(spec, cfg, jobs);
    out.sections["spectral"] = spectral_json(spec, sp);
    out.timings["spectral"] = seconds_since(t0);

    stage = "region_bounds";
    t0 = Clock::now();
    const BoundStage bs = run_bound(spec, cfg, exact, jobs);
    out.sections["bound"] = bound_json(bs);
    out.timings["region_bounds"] = seconds_since(t0);

    stage = "dissipativity";
    t0 = Clock::now();
    const int d_s = spec.stable_dim();
    out.mq = max_certified_q(d_s, sp.in_attractor, bs.cert, q_tol, cfg.smoothness_ceiling);
    Json dj;
    dj["tag"] = kConditional;
    dj["d_s"] = d_s;
    dj["q_tol"] = q_tol;
    dj["ceiling"] = cfg.smoothness_ceiling;
    dj["q1"] = with_provenance(out.mq.q1, "equilibrium clause alone");
    dj["q2"] = with_provenance(out.mq.q2, "region clause alone");
    if (out.mq.q_closed) dj["q_closed"] = with_provenance(*out.mq.q_closed, "min(q1, (1/d_s)(1 - div_sup/frob_sup))");
    dj["q_bisect"] = with_provenance(out.mq.q_bisect, "largest q found to hold by bisection");
    dj["ceiling_limited"] = out.mq.ceiling_limited;
    dj["binding"] = out.mq.binding;
    dj["certified"] = out.mq.certified;
    if (out.mq.certified) dj["certificate"] = certificate_json(check_q(d_s, sp.in_attractor, bs.cert, out.mq.q_max));
    out.sections["dissipativity"] = dj;
    out.timings["dissipativity"] = seconds_since(t0);

    Json h;
    h["tag"] = kConditional;
    if (out.mq.certified) {
      h["q_max"] = with_provenance(out.mq.q_max, "largest q on the q_tol grid satisfying both strong-dissipativity "
                                                 "clauses (truncated, never rounded up)");
      std::ostringstream st;
      st << "the stable foliation is at least C^" << format_double(out.mq.q_max);
      h["statement"] = st.str();
    } else {
      h["q_max"] = nullptr;
      h["statement"] = "no q > 1/d_s certified: " + out.mq.binding;
    }
    h["conditionality"] = kConditionality;
    out.sections["headline"] = h;
    out.status = out.mq.certified ? "certified" : "not-certified";
  } catch (const ParseError& e) {
    out.status = "failed";
    out.failed_stage = stage;
    out.error = e.what();
    out.config_error = true;
  } catch (const ValidationError& e) {
    out.status = "failed";
    out.failed_stage = stage;
    out.error = e.what();
    out.config_error = true;
  } catch (const Error& e) {
    out.status = "failed";
    out.failed_stage = stage;
    out.error = e.what();
  }
  return out;
}

Json report_header(const char* command, const RunConfig& cfg, std::uint64_t seed) {
  Json r;
  r["version"] = kVersion;
  r["command"] = command;
  r["status"] = "";
  r["seed"] = seed;
  r["config"] = cfg.echo;
  return r;
}

Json eta_stats(const std::vector<double>& v) {
  Json j;
  double mn = std::numeric_limits<double>::infinity(), mx = -mn, sum = 0;
  int neg = 0;
  for (double x : v) {
    mn = std::min(mn, x);
    mx = std::max(mx, x);
    sum += x;
    if (x < 0) ++neg;
  }
  j["min"] = mn;
  j["mean"] = sum / static_cast<double>(v.size());
  j["max"] = mx;
  j["negative"] = neg;
  j["count"] = v.size();
  return j;
}

Json empirical_section(const VectorFieldSpec& spec, const RunConfig& cfg, double q, int jobs) {
  Json j;
  j["tag"] = kEmpirical;
  LyapunovOptions lo;
  lo.horizon = cfg.lyapunov_horizon;
  lo.transient = cfg.transient;
  lo.seed = cfg.seed;
  lo.integrator = cfg.integrator;
  const LyapunovSpectrum ls = lyapunov_spectrum(spec, cfg.initial_point, lo);
  Json lj;
  lj["tag"] = kEmpirical;
  lj["exponents"] = vec_json(ls.exponents);
  lj["sum"] = ls.exponents.sum();
  lj["horizon"] = ls.horizon;
  lj["tail_slope"] = ls.tail_slope;
  lj["converged"] = ls.converged;
  j["lyapunov"] = lj;

  const std::vector<Vec> samples = attractor_samples(spec, cfg, std::min(cfg.attractor_samples, 20));
  const CocycleOptions co = cocycle_options(cfg, cfg.seed);
  std::vector<double> etas(samples.size()), sect(samples.size());
  std::vector<ConeReport> cones(samples.size());
  const double t = 20.0;
  parallel_for(samples.size(), jobs, [&](std::size_t i) {
    etas[i] = eta(spec, samples[i], t, q, co);
    sect[i] = sectional_expansion_estimate(spec, samples[i], 2.0, co);
    cones[i] = cone_invariance_check(spec, samples[i], 2.0, ConeParams{}, 16, 0.0, co);
  });
  Json ej = eta_stats(etas);
  ej["t"] = t;
  ej["q"] = q;
  ej["tag"] = kEmpirical;
  j["eta"] = ej;
  Json sj = eta_stats(sect);
  sj.erase("negative");
  sj["tag"] = kEmpirical;
  j["sectional_expansion"] = sj;
  int cone_pass = 0;
  double worst = 0;
  for (const ConeReport& c : cones) {
    cone_pass += c.pass ? 1 : 0;
    worst = std::max(worst, c.worst_stable_ratio);
  }
  j["cones"] = Json{{"tag", kEmpirical}, {"t", 2.0}, {"pass", cone_pass}, {"count", cones.size()},
                    {"worst_stable_ratio", worst}};
  return j;
}

}  // namespace

// ---------------------------------------------------------------------------------------------
// Commands

CommandResult cmd_certify(const RunConfig& cfg, const CertifyOptions& opts) {
  const auto t0 = Clock::now();
  const double q_tol = opts.q_tol ? positive(*opts.q_tol, "q_tol") : cfg.q_tol;
  CoreResult core = certify_core(cfg, q_tol, opts.exact, opts.jobs);
  CommandResult res;
  Json& r = res.report;
  r = report_header("certify", cfg, cfg.seed);
  r["status"] = core.status;
  r["rounding"] = opts.exact ? "exact" : "stepwise";
  if (core.status == "failed") {
    r["failed_stage"] = core.failed_stage;
    r["error"] = core.error;
  }
  for (const auto& [k, v] : core.sections.items()) r[k] = v;
  if (cfg.empirical && core.status != "failed") {
    const auto te = Clock::now();
    try {
      r["empirical"] = empirical_section(cfg.field(), cfg, core.mq.certified ? core.mq.q_max : 1.0, opts.jobs);
    } catch (const Error& e) {
      r["empirical"] = Json{{"tag", kEmpirical}, {"error", e.what()}};
    }
    core.timings["empirical"] = seconds_since(te);
  }
  if (!opts.canonical) {
    core.timings["total"] = seconds_since(t0);
    r["timings"] = core.timings;
  }
  if (core.status == "certified") {
    res.exit_code = kExitOk;
  } else if (core.status == "not-certified") {
    res.exit_code = kExitRefuted;
  } else {
    res.exit_code = core.config_error ? kExitConfig : kExitInconclusive;
  }
  return res;
}

CommandResult cmd_bunching(const RunConfig& cfg, const BunchingOptions& opts) {
  const auto t0 = Clock::now();
  if (opts.t_list.empty()) throw ValidationError("bunching needs at least one time");
  for (double t : opts.t_list) {
    if (!(t > 0)) throw ValidationError("bunching times must be positive");
  }
  const std::uint64_t seed = opts.seed.value_or(cfg.seed);
  const int n = opts.samples.value_or(cfg.attractor_samples);
  if (n < 1) throw ValidationError("sample count must be positive");
  CommandResult res;
  Json& r = res.report;
  r = report_header("bunching", cfg, seed);
  r["q"] = opts.q;
  r["tag"] = kEmpirical;
  try {
    const VectorFieldSpec spec = cfg.field();
    const std::vector<Vec> samples = attractor_samples(spec, cfg, n);
    const CocycleOptions co = cocycle_options(cfg, seed);
    std::vector<double> ts = opts.t_list;
    std::sort(ts.begin(), ts.end());
    Json rows = Json::array();
    std::vector<double> last;
    for (double t : ts) {
      std::vector<double> etas(samples.size());
      parallel_for(samples.size(), opts.jobs, [&](std::size_t i) { etas[i] = eta(spec, samples[i], t, opts.q, co); });
      Json row{{"t", t}};
      row.update(eta_stats(etas));
      rows.push_back(row);
      last = etas;
    }
    r["eta"] = rows;
    const bool pass = std::all_of(last.begin(), last.end(), [](double e) { return e < 0; });
    r["status"] = pass ? "pass" : "fail";
    r["criterion"] = "eta_t < 0 at every sample for the largest t";
    res.exit_code = pass ? kExitOk : kExitRefuted;
  } catch (const ValidationError& e) {
    r["status"] = "failed";
    r["error"] = e.what();
    res.exit_code = kExitConfig;
  } catch (const Error& e) {
    r["status"] = "failed";
    r["error"] = e.what();
    res.exit_code = kExitInconclusive;
  }
  if (!opts.canonical) r["timings"] = Json{{"total", seconds_since(t0)}};
  return res;
}

CommandResult cmd_foliate(const RunConfig& cfg, const FoliateOptions& opts) {
  const auto t0 = Clock::now();
  if (opts.points.empty()) throw ValidationError("no base points");
  const VectorFieldSpec spec = cfg.field();
  for (const Vec& p : opts.points) {
    if (p.size() != spec.dimension()) throw ValidationError("base point dimension differs from the field");
  }
  FoliationConfig fc = cfg.foliation;
  if (opts.rho) fc.rho = positive(*opts.rho, "rho");
  if (opts.grid) fc.grid = *opts.grid;
  if (opts.n_steps) fc.n_steps = *opts.n_steps;
  if (fc.grid < 3 || fc.grid % 2 == 0) throw ValidationError("grid must be odd and at least 3");
  if (!opts.out_dir.empty()) fs::create_directories(opts.out_dir);
  const CocycleOptions co = cocycle_options(cfg, cfg.seed);

  const std::size_t n = opts.points.size();
  std::vector<Json> rows(n);
  std::vector<int> state(n, 0);  // 0 error, 1 refuted, 2 pass
  parallel_for(n, opts.jobs, [&](std::size_t k) {
    Json row;
    row["base"] = vec_json(opts.points[k]);
    try {
      // shrink the radius on injectivity failure, as suggested by the chart builder
      double rho = fc.rho;
      int shrinks = 0;
      std::optional<ChartSequence> built;
      while (!built) {
        try {
          built = build_charts(spec, opts.points[k], fc.T, fc.n_steps, rho, co, 1);
        } catch (const ChartInjectivityError& e) {
          if (shrinks >= fc.max_shrinks) throw;
          rho = e.suggested_rho();
          ++shrinks;
        }
      }
      const ChartSequence& cs = *built;
      row["rho_used"] = rho;
      row["rho_shrinks"] = shrinks;
      double lmin = std::numeric_limits<double>::infinity(), sig = 0;
      for (std::size_t i = 0; i < cs.lambda.size(); ++i) {
        lmin = std::min(lmin, cs.lambda[i]);
        sig = std::max(sig, cs.lambda[i] / cs.mu[i]);
      }
      const HPConstants hp = hp_constants(cs.lambda, cs.mu, sig * (1 + 1e-9), lmin);
      row["hp_constants"] = Json{{"lambda_min", lmin},    {"sigma", hp.sigma},      {"gamma", hp.gamma},
                                 {"delta", hp.delta},     {"nu_sup", hp.nu_sup},    {"feasible", hp.feasible},
                                 {"failure", hp.failure}, {"max_C1", cs.frames.front().C1}};
      if (!hp.feasible) throw NumericalError("Hadamard-Perron constants infeasible: " + hp.failure);
      HPOptions ho;
      ho.grid = fc.grid;
      ho.fix_tol = fc.fix_tol;
      const HPResult hr = hadamard_perron(cs, ho, &hp, 1);
      Json hj;
      hj["sweeps"] = hr.sweeps;
      hj["converged"] = hr.converged;
      hj["noise_floor"] = hr.noise_floor;
      hj["noise_limited"] = hr.noise_limited;
      hj["changes"] = hr.changes;
      hj["invariance_defect"] = hr.invariance_defect;
      hj["max_growth_ratio"] = hr.max_growth_ratio;
      hj["phi0_slope"] = hr.phi0_slope;
      hj["lipschitz"] = hr.patches.front().lipschitz();
      row["graph_transform"] = hj;

      const GraphPatch& leaf = hr.patches.front();
      const ChartFrame& chart = cs.frames.front();
      Mat tangent = chart.Ps + chart.Pcu * leaf.derivative(Vec::Zero(leaf.d_s()));
      const Mat es = estimate_Es(spec, opts.points[k], co.t_back, co);
      row["tangency_angle"] = principal_angle(tangent, es);

      const double nu = std::pow(hp.nu_sup, 1.0 / fc.T);
      LeafTestOptions lo;
      lo.integrator = cfg.integrator;
      const LeafTestReport lt = leaf_contraction_test(spec, chart, leaf, fc.horizon, nu, lo);
      row["leaf_test"] = Json{{"tag", kEmpirical}, {"nu_claim", nu},          {"times", lt.times},
                              {"ratios", lt.ratios}, {"fitted_rate", lt.fitted_rate}, {"fitted_C", lt.fitted_C},
                              {"pass", lt.pass}};
      lo.cu_offset = 0.1 * rho;
      const LeafTestReport lc = leaf_contraction_test(spec, chart, leaf, fc.horizon, nu, lo);
      row["off_leaf_control"] = Json{{"tag", kEmpirical}, {"cu_offset", lo.cu_offset}, {"fitted_rate", lc.fitted_rate},
                                     {"fitted_C", lc.fitted_C}, {"pass", lc.pass}};
      if (!opts.out_dir.empty() && leaf.d_s() == 1) {
        const fs::path p = opts.out_dir / ("leaf_" + std::to_string(k) + ".csv");
        std::ofstream os(p);
        os << "s";
        for (int i = 1; i <= spec.dimension(); ++i) os << ",x" << i;
        os << "\n";
        for (const auto& [s, x] : leaf_polyline(chart, leaf)) {
          os << format_double(s);
          for (double v : x) os << "," << format_double(v);
          os << "\n";
        }
        row["leaf_csv"] = p.filename().string();
      }
      const bool ok = hr.converged && lt.pass;
      row["status"] = ok ? "pass" : "fail";
      state[k] = ok ? 2 : 1;
    } catch (const Error& e) {
      row["status"] = "failed";
      row["error"] = e.what();
    }
    rows[k] = std::move(row);
  });

  CommandResult res;
  Json& r = res.report;
  r = report_header("foliate", cfg, cfg.seed);
  r["tag"] = kEmpirical;
  r["foliation"] = Json{{"T", fc.T}, {"rho", fc.rho}, {"grid", fc.grid}, {"n_steps", fc.n_steps},
                        {"horizon", fc.horizon}, {"fix_tol", fc.fix_tol}, {"max_shrinks", fc.max_shrinks}};
  r["points"] = rows;
  const auto passed = std::count(state.begin(), state.end(), 2);
  const auto errored = std::count(state.begin(), state.end(), 0);
  r["passed"] = passed;
  r["failed"] = static_cast<long>(n) - passed;
  if (passed > 0) {
    r["status"] = passed == static_cast<long>(n) ? "pass" : "partial";
    res.exit_code = kExitOk;
  } else if (errored == static_cast<long>(n)) {
    r["status"] = "failed";
    res.exit_code = kExitInconclusive;
  } else {
    r["status"] = "fail";
    res.exit_code = kExitRefuted;
  }
  if (!opts.canonical) r["timings"] = Json{{"total", seconds_since(t0)}};
  return res;
}

SweepResult cmd_sweep(const RunConfig& cfg, const SweepOptions& opts) {
  const auto t0 = Clock::now();
  if (opts.steps < 1) throw ValidationError("sweep needs at least one step");
  if (opts.param.empty()) throw ValidationError("sweep needs a parameter name");
  {
    const VectorFieldSpec spec = cfg.field();
    if (!spec.parameter(opts.param)) throw ValidationError("field has no parameter '" + opts.param + "'");
  }
  const auto n = static_cast<std::size_t>(opts.steps);
  std::vector<double> values(n);
  std::vector<CoreResult> results(n);
  for (std::size_t i = 0; i < n; ++i) {
    values[i] = n == 1 ? opts.from : opts.from + (opts.to - opts.from) * static_cast<double>(i) / static_cast<double>(n - 1);
  }
  parallel_for(n, opts.jobs, [&](std::size_t i) {
    RunConfig c = cfg;
    char buf[40];
    std::snprintf(buf, sizeof buf, "%.15g", values[i]);
    std::erase_if(c.overrides, [&](const auto& kv) { return kv.first == opts.param; });
    c.overrides.emplace_back(opts.param, parse_rational(buf));
    results[i] = certify_core(c, cfg.q_tol, false, 1);
  });

  SweepResult out;
  std::ostringstream csv;
  csv << opts.param << ",q_max,status\n";
  Json rows = Json::array();
  Json flags = Json::array();
  std::optional<double> prev;
  bool all = true;
  for (std::size_t i = 0; i < n; ++i) {
    const CoreResult& cr = results[i];
    const bool ok = cr.status == "certified";
    all = all && ok;
    csv << format_double(values[i]) << ",";
    if (ok) csv << format_double(cr.mq.q_max);
    csv << "," << cr.status << "\n";
    Json row{{"value", values[i]}, {"status", cr.status}};
    row["q_max"] = ok ? Json(cr.mq.q_max) : Json(nullptr);
    if (ok) row["region"] = cr.sections["bound"]["kind"];
    if (!cr.error.empty()) row["error"] = cr.failed_stage + ": " + cr.error;
    rows.push_back(row);
    if (ok) {
      if (!std::isfinite(cr.mq.q_max)) flags.push_back("non-finite q_max at " + format_double(values[i]));
      if (prev && std::abs(cr.mq.q_max - *prev) > 0.5) flags.push_back("q_max jumps by more than 0.5 at " + format_double(values[i]));
      prev = cr.mq.q_max;
    }
  }
  out.csv = csv.str();
  Json& r = out.result.report;
  r = report_header("sweep", cfg, cfg.seed);
  r["status"] = all ? "certified" : "partial";
  r["parameter"] = opts.param;
  r["rows"] = rows;
  r["flags"] = flags;
  if (!opts.canonical) r["timings"] = Json{{"total", seconds_since(t0)}};
  out.result.exit_code = all ? kExitOk : kExitRefuted;
  return out;
}

}  // namespace foliacert
