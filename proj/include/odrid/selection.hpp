#pragma once

#include "odrid/collocation.hpp"
#include "odrid/dictionary.hpp"
#include "odrid/evidence.hpp"
#include "odrid/odr.hpp"

#include <Eigen/Core>

#include <cstdint>
#include <vector>

namespace odrid {

struct SelectionOptions {
  int n_bootstrap = 100;
  int n_multistart = 8;
  /// Ridge regularizer relative to trace(Theta^T Theta) / M.
  double ridge_lambda = 1e-6;
  int patience = 3;
  int trial_max_iterations = 100;
  int full_max_iterations = 300;
  std::uint64_t seed = 0;
  /// Worker threads for the candidates of one round (<= 0: hardware concurrency).
  int workers = 1;
  /// Remove whole library rows (a term from every equation) instead of single entries.
  bool row_wise = false;
  /// Draw bootstrap rows with replacement; false uses every row in each member.
  bool resample = true;
  SolverOptions solver;
  EvidenceOptions evidence;

  void validate() const;
};

struct TraceEntry {
  int step = 0;
  std::vector<int> removed;  // coefficient ids; empty for the full-library fit
  int n_active = 0;
  double log_evidence = 0.0;
  bool converged = false;
};

struct CandidateLog {
  int step = 0;
  std::vector<int> removed;
  bool converged = false;
  int iterations = 0;
  double log_evidence = 0.0;
};

struct SelectionResult {
  Model chosen;
  FitResult chosen_fit;
  EvidenceResult chosen_evidence;
  std::vector<TraceEntry> trace;
  std::vector<CandidateLog> candidates;
  FitResult full_fit;
  int total_fits = 0;
  double wall_time = 0.0;
  std::string stop_reason;
};

/// Bootstrap ridge regressions of L_dt X_hat on L_I Theta(X_hat). Returns
/// n_multistart ensemble members followed by the element-wise ensemble median.
std::vector<Eigen::MatrixXd> bootstrap_linear_init(const Eigen::MatrixXd& x_hat,
                                                   const CollocationOperators& ops,
                                                   const LibrarySpec& spec,
                                                   const SelectionOptions& opts);

/// Multistart full-library fit; returns the converged result with the lowest
/// loss, or the lowest-loss result if none converged.
FitResult fit_full_library(const Eigen::MatrixXd& x_hat, const CollocationOperators& ops,
                           const LibrarySpec& spec, const Hyperparameters& hyper,
                           const SelectionOptions& opts,
                           std::vector<FitResult>* all_starts = nullptr);

/// Greedy backward elimination by log-evidence, starting from `start` if given
/// (otherwise from fit_full_library). The start model may be any mask.
SelectionResult greedy_select(const Eigen::MatrixXd& x_hat, const CollocationOperators& ops,
                              const LibrarySpec& spec, const Hyperparameters& hyper,
                              const SelectionOptions& opts, const FitResult* start = nullptr);

/// |Xi - Xi_true|_F / |Xi_true|_F.
double param_error(const Eigen::MatrixXd& xi, const Eigen::MatrixXd& xi_true);

/// Exact equality of the sparsity patterns.
bool same_support(const Eigen::MatrixXd& xi, const Eigen::MatrixXd& xi_true);

}  // namespace odrid
