#pragma once

#include "odrid/dictionary.hpp"

#include <Eigen/Core>

#include <cstdint>
#include <functional>
#include <map>
#include <optional>
#include <string>
#include <vector>

namespace odrid {

struct Model;

/// One nonzero coefficient of a ground-truth polynomial right-hand side.
struct TrueTerm {
  Exponents exponents;
  int equation = 0;
  double coefficient = 0.0;
};

/// Library and hyperparameter defaults used for a benchmark system.
struct RecommendedSettings {
  double dt = 0.01;
  double T = 10.0;
  int poly_order = 2;
  bool include_constant = true;
  int fd_order = 6;
  double sigma_dt = 1e-3;
  double sigma_p = 100.0;
};

struct SystemDef {
  std::string name;
  int state_dim = 0;
  std::map<std::string, double> params;
  Eigen::VectorXd x0;
  std::function<Eigen::VectorXd(const Eigen::VectorXd&)> rhs;
  std::vector<TrueTerm> true_terms;
  RecommendedSettings defaults;

  /// M x D coefficient matrix reproducing `rhs` in `spec`. Throws if any true
  /// term is missing from the library.
  Eigen::MatrixXd xi_true(const LibrarySpec& spec) const;
};

/// "lorenz63", "vanderpol", "rossler", "decay" (x' = -rate*x) or
/// "linear" (x' = a*x). Unknown names throw. `params` overrides defaults.
SystemDef make_system(const std::string& name, const std::map<std::string, double>& params = {});

std::vector<std::string> system_names();

struct TimeSeriesData {
  Eigen::VectorXd times;
  Eigen::MatrixXd X_hat;
  std::optional<Eigen::MatrixXd> X_clean;
  double dt = 0.0;
  double sigma_x = 0.0;
  double noise_level = 0.0;
  std::uint64_t seed = 0;

  int n_samples() const { return static_cast<int>(X_hat.rows()); }
  int state_dim() const { return static_cast<int>(X_hat.cols()); }
};

/// Classical RK4 at step dt/fine_substeps, recorded every dt for
/// floor(T/dt)+1 samples starting at t = 0.
TimeSeriesData integrate(const SystemDef& system, double dt, double T, int fine_substeps = 10);

/// Population standard deviation of every entry of X.
double flattened_std(const Eigen::MatrixXd& X);

/// Adds i.i.d. N(0, sigma_x^2) with sigma_x = noise_level * flattened_std(X_clean).
///
/// Normal deviates come from std::mt19937_64 seeded with `seed`, turned into
/// pairs by the Box-Muller transform (u1 = (a+1)/2^53, u2 = b/2^53 from the top
/// 53 bits of consecutive draws), filled row by row. Both mt19937_64 and this
/// transform are fully specified, so output is bit-identical across platforms
/// with IEEE doubles and a conforming libm.
TimeSeriesData add_noise(const TimeSeriesData& clean, double noise_level, std::uint64_t seed);

/// Mask = nonzero pattern of the system's true coefficients in `spec`.
Model ground_truth_model(const SystemDef& system, const LibrarySpec& spec);

}  // namespace odrid
