#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include "foliacert/cocycle.hpp"
#include "foliacert/dissipativity.hpp"
#include "foliacert/field_spec.hpp"
#include "foliacert/region_bounds.hpp"
#include "foliacert/report.hpp"
#include "foliacert/spectral.hpp"

namespace foliacert {

enum ExitCode : int { kExitOk = 0, kExitRefuted = 2, kExitInconclusive = 3, kExitConfig = 4 };

struct Declaration {
  Vec location;
  Membership membership = Membership::unknown;
  double tolerance = 1e-3;  // relative to max(1, |location|)
};

struct RegionConfig {
  std::string mode = "lorenz-chain";  // or "generic-box"
  std::string sigma_name = "sigma", r_name = "r", b_name = "b";
  double dyer_lambda = 11.0;
  std::optional<Quadratic> dyer_override;
  std::optional<Box> box;           // generic-box region
  std::optional<Box> fallback_box;  // used when the Lorenz chain has no x1 bound for the parameters
  int grid = 64;
};

struct FoliationConfig {
  double T = 1.0;
  double rho = 0.01;
  int grid = 65;
  int n_steps = 50;
  int horizon = 10;
  double fix_tol = 1e-9;
  int max_shrinks = 3;  // radius reductions allowed after an injectivity failure
};

/// Run configuration, read from JSON. Relative paths are resolved against the config file.
struct RunConfig {
  std::filesystem::path base_dir;
  std::string field_text;
  std::string field_source;  // path or "inline"
  VectorFieldSpec::Parameters overrides;
  std::optional<int> stable_dim;
  double smoothness_ceiling = 2.0;

  Box search_box;
  int grid_density = 5;
  std::vector<Declaration> declarations;
  std::string default_membership = "heuristic";  // "heuristic", "in" or "out"

  RegionConfig region;
  double q_tol = 1e-4;
  IntegratorOptions integrator{};
  std::uint64_t seed = 1;

  Vec initial_point;                 // seed of attractor samples
  std::vector<Vec> sample_points;    // explicit samples, used instead of an orbit when given
  int attractor_samples = 100;
  double transient = 50.0;
  bool empirical = false;            // add Lyapunov / bunching / cone sections to certify
  double lyapunov_horizon = 200.0;
  FoliationConfig foliation;
  CocycleOptions cocycle{};          // bundle-estimation windows; seed and integrator are set per run
  std::string report_path;           // default output of certify

  Json echo;  // the config as read

  /// Throws ValidationError (or ParseError from the field) on malformed input.
  static RunConfig load(const std::filesystem::path& path);
  static RunConfig from_json(const Json& j, const std::filesystem::path& base_dir);

  VectorFieldSpec field() const;
};

struct CommandResult {
  Json report;
  int exit_code = kExitOk;
};

struct CertifyOptions {
  std::optional<double> q_tol;
  bool exact = false;
  bool canonical = false;
  int jobs = 0;
};

CommandResult cmd_certify(const RunConfig& cfg, const CertifyOptions& opts = {});

struct BunchingOptions {
  double q = 1.0;
  std::vector<double> t_list{20.0};
  std::optional<int> samples;
  std::optional<std::uint64_t> seed;
  bool canonical = false;
  int jobs = 0;
};

CommandResult cmd_bunching(const RunConfig& cfg, const BunchingOptions& opts);

struct FoliateOptions {
  std::vector<Vec> points;
  std::optional<double> rho;
  std::optional<int> grid;
  std::optional<int> n_steps;
  std::filesystem::path out_dir;  // leaf CSVs; empty = none written
  bool canonical = false;
  int jobs = 0;
};

CommandResult cmd_foliate(const RunConfig& cfg, const FoliateOptions& opts);

struct SweepOptions {
  std::string param;
  double from = 0.0, to = 0.0;
  int steps = 1;
  bool canonical = false;
  int jobs = 0;
};

struct SweepResult {
  std::string csv;  // param,q_max,status
  CommandResult result;
};

SweepResult cmd_sweep(const RunConfig& cfg, const SweepOptions& opts);

/// Points, one per line, separated by whitespace or commas; '#' starts a comment.
std::vector<Vec> read_points(const std::filesystem::path& path);

}  // namespace foliacert
