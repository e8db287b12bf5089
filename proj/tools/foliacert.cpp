#include <fstream>
#include <iostream>
#include <sstream>

#include "CLI11.hpp"
#include "foliacert/commands.hpp"
#include "foliacert/errors.hpp"
#include "foliacert/parallel.hpp"

using namespace foliacert;

namespace {

std::vector<double> parse_list(const std::string& s) {
  std::vector<double> out;
  std::stringstream ss(s);
  std::string tok;
  while (std::getline(ss, tok, ',')) {
    try {
      out.push_back(std::stod(tok));
    } catch (const std::exception&) {
      throw ValidationError("not a number in list: '" + tok + "'");
    }
  }
  return out;
}

void emit(const CommandResult& res, const std::string& out, bool text) {
  if (!out.empty()) {
    std::ofstream os(out);
    if (!os) throw ValidationError("cannot write " + out);
    write_json(os, res.report);
  }
  if (text) {
    std::cout << to_text(res.report);
  } else {
    write_json(std::cout, res.report);
  }
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Certifies smoothness of stable foliations of sectional hyperbolic attractors"};
  app.require_subcommand(1);
  int jobs = 0;
  bool canonical = false, text = false;
  app.add_option("--jobs", jobs, "worker threads (default: FC_JOBS or all cores)");
  app.add_flag("--canonical", canonical, "omit timings so identical runs are byte-identical");
  app.add_flag("--text", text, "print the flat text mirror instead of JSON");

  std::string config;
  std::string out;

  auto* certify = app.add_subcommand("certify", "strong-dissipativity certificate and maximal q");
  double q_tol = 0;
  bool exact = false;
  certify->add_option("--config", config, "run configuration (JSON)")->required();
  certify->add_option("--q-tol", q_tol, "bisection tolerance on q");
  certify->add_flag("--exact", exact, "carry full precision through the bound chain");
  certify->add_option("--out", out, "report path");

  auto* bunching = app.add_subcommand("bunching", "sampled bunching exponents eta_t");
  double q = 1.0;
  std::string t_list = "20";
  int samples = 0;
  std::uint64_t seed = 0;
  bunching->add_option("--config", config)->required();
  bunching->add_option("--q", q, "smoothness exponent")->required();
  bunching->add_option("--t", t_list, "comma-separated times");
  bunching->add_option("--samples", samples, "attractor samples");
  bunching->add_option("--seed", seed, "frame seed");
  bunching->add_option("--out", out, "report path");

  auto* foliate = app.add_subcommand("foliate", "local stable leaves at base points");
  std::string points, out_dir;
  double rho = 0;
  int grid = 0, n_steps = 0;
  foliate->add_option("--config", config)->required();
  foliate->add_option("--points", points, "base points, one per line")->required();
  foliate->add_option("--rho", rho, "chart radius");
  foliate->add_option("--grid", grid, "graph nodes per stable axis (odd)");
  foliate->add_option("--steps", n_steps, "charts along each orbit");
  foliate->add_option("--leaf-dir", out_dir, "directory for leaf CSV polylines");
  foliate->add_option("--out", out, "report path");

  auto* sweep = app.add_subcommand("sweep", "q_max along a parameter range");
  std::string param, csv;
  double from = 0, to = 0;
  int steps = 1;
  sweep->add_option("--config", config)->required();
  sweep->add_option("--param", param, "field parameter")->required();
  sweep->add_option("--from", from)->required();
  sweep->add_option("--to", to)->required();
  sweep->add_option("--steps", steps)->required();
  sweep->add_option("--csv", csv, "CSV output path (default: stdout)");
  sweep->add_option("--out", out, "report path");

  CLI11_PARSE(app, argc, argv);
  if (jobs <= 0) jobs = default_jobs();

  try {
    const RunConfig cfg = RunConfig::load(config);
    if (certify->parsed()) {
      CertifyOptions o;
      if (certify->count("--q-tol")) o.q_tol = q_tol;
      o.exact = exact;
      o.canonical = canonical;
      o.jobs = jobs;
      const CommandResult res = cmd_certify(cfg, o);
      emit(res, out.empty() ? cfg.report_path : out, text);
      return res.exit_code;
    }
    if (bunching->parsed()) {
      BunchingOptions o;
      o.q = q;
      o.t_list = parse_list(t_list);
      if (bunching->count("--samples")) o.samples = samples;
      if (bunching->count("--seed")) o.seed = seed;
      o.canonical = canonical;
      o.jobs = jobs;
      const CommandResult res = cmd_bunching(cfg, o);
      emit(res, out, text);
      return res.exit_code;
    }
    if (foliate->parsed()) {
      FoliateOptions o;
      o.points = read_points(points);
      if (foliate->count("--rho")) o.rho = rho;
      if (foliate->count("--grid")) o.grid = grid;
      if (foliate->count("--steps")) o.n_steps = n_steps;
      o.out_dir = out_dir;
      o.canonical = canonical;
      o.jobs = jobs;
      const CommandResult res = cmd_foliate(cfg, o);
      emit(res, out, text);
      return res.exit_code;
    }
    SweepOptions o;
    o.param = param;
    o.from = from;
    o.to = to;
    o.steps = steps;
    o.canonical = canonical;
    o.jobs = jobs;
    const SweepResult res = cmd_sweep(cfg, o);
    if (csv.empty()) {
      std::cout << res.csv;
    } else {
      std::ofstream(csv) << res.csv;
    }
    if (!out.empty()) std::ofstream(out) << to_json_text(res.result.report);
    return res.result.exit_code;
  } catch (const ValidationError& e) {
    std::cerr << "config error: " << e.what() << "\n";
    return kExitConfig;
  } catch (const ParseError& e) {
    std::cerr << "field parse error: " << e.what() << "\n";
    return kExitConfig;
  } catch (const Error& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kExitInconclusive;
  }
}
