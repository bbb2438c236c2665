#pragma once

#include "odrid/selection.hpp"
#include "odrid/systems.hpp"

#include "json.hpp"

#include <Eigen/Core>

#include <cstdint>
#include <map>
#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

namespace odrid {

/// Error with a machine-readable code, reported by the CLI as JSON.
class AppError : public std::runtime_error {
 public:
  AppError(std::string code, const std::string& msg)
      : std::runtime_error(msg), code_(std::move(code)) {}
  const std::string& code() const { return code_; }

 private:
  std::string code_;
};

struct BenchmarkGrid {
  std::vector<double> noise_levels;
  std::vector<double> T_values;
  std::vector<std::uint64_t> seeds;
};

/// Fully resolved run configuration. `sigma_x` empty means "auto" (the value
/// recorded at noise injection).
struct RunConfig {
  std::string system;  // empty when input_csv is used
  std::map<std::string, double> system_params;
  std::string input_csv;
  int state_dim = 0;
  int poly_order = 2;
  bool include_constant = true;
  int fd_order = 6;
  double dt = 0.01;
  double T = 10.0;
  double noise_level = 0.0;
  std::uint64_t seed = 0;
  std::optional<double> sigma_x;
  std::vector<double> sigma_x_per_state;
  double sigma_dt = 1e-3;
  double sigma_p = 100.0;
  /// Diagnostic limit of the hard-constrained formulation: forces sigma_dt = 1e-8.
  bool hard_constraint = false;
  SolverOptions solver;
  SelectionOptions selection;
  BenchmarkGrid grid;
  int workers = 1;

  static RunConfig from_json(const nlohmann::json& j);
  nlohmann::json to_json() const;
  LibrarySpec library() const;
  Hyperparameters hyperparameters(double sigma_x_auto) const;
  double effective_sigma_dt() const { return hard_constraint ? 1e-8 : sigma_dt; }
};

RunConfig load_config(const std::string& path);

// CSV trajectories: header t,x1,...,xD, 17 significant digits.
void write_trajectory_csv(const std::string& path, const Eigen::VectorXd& times,
                          const Eigen::MatrixXd& X);
struct Trajectory {
  Eigen::VectorXd times;
  Eigen::MatrixXd X;
  double dt = 0.0;
};
/// Parses and validates (uniform sampling within 1e-9 relative, finite values).
Trajectory read_trajectory_csv(const std::string& path);

/// Data for a run: simulated from cfg.system or read from cfg.input_csv.
TimeSeriesData prepare_data(const RunConfig& cfg);

/// Noise scale used for sigma_x "auto" on noiseless data, relative to the
/// flattened signal std (a zero sigma_x would make the data term singular).
inline constexpr double kNoiselessSigmaRatio = 1e-3;

/// The recorded noise std, or kNoiselessSigmaRatio * std(X_hat) when it is zero.
double auto_sigma_x(const TimeSeriesData& d);

/// "dx2/dt = 27.99*x1 - 0.99*x2 - 1.00*x1*x3"
std::vector<std::string> equation_strings(const Model& model);

struct FitOutput {
  TimeSeriesData data;
  SelectionResult selection;
  std::optional<Eigen::MatrixXd> xi_true;
  nlohmann::json report;
};

/// Whole fit workflow; fills the JSON report (see README for the schema).
FitOutput run_fit(const RunConfig& cfg);

struct CellResult {
  double noise_level = 0.0;
  double T = 0.0;
  std::uint64_t seed = 0;
  bool success = false;
  double param_error = -1.0;  // -1 when the recovered mask is wrong
  double log_evidence = 0.0;
  int n_terms = 0;
  double wall_time = 0.0;
  std::string error;
  Model chosen;
  Eigen::MatrixXd x_star;
  TimeSeriesData data;
};

CellResult run_cell(const RunConfig& base, double noise_level, double T, std::uint64_t seed);
/// Cells in row-major (noise, T, seed) order, evaluated by `workers` threads.
std::vector<CellResult> run_benchmark(const RunConfig& cfg);
void write_benchmark_csv(const std::string& path, const std::vector<CellResult>& cells);
void write_summary_csv(const std::string& path, const std::vector<CellResult>& cells);

struct CheckResult {
  std::string name;
  bool passed = false;
  std::string detail;
};
/// Fast invariant suite. `corrupt_stencil` perturbs the finite-difference
/// weights used by the checks (fault injection).
std::vector<CheckResult> run_checks(bool corrupt_stencil = false);

void write_json(const std::string& path, const nlohmann::json& j);

}  // namespace odrid
