#pragma once

#include "odrid/banded.hpp"
#include "odrid/collocation.hpp"
#include "odrid/odr.hpp"

#include <Eigen/Core>

#include <string>

namespace odrid {

enum class EvidenceMethod { gauss_newton, full_hessian };

std::string to_string(EvidenceMethod m);

struct EvidenceOptions {
  EvidenceMethod method = EvidenceMethod::gauss_newton;
  /// Keep the eta * d2eta/dX2 and eta * d2eta/dXi dX terms in the sensitivity
  /// system. Without them the system matrix is the Gauss-Newton inner Hessian.
  bool include_curvature = true;
  /// Relative step for the finite-difference full Hessian.
  double fd_step = 1e-5;
};

struct EvidenceResult {
  double log_evidence = 0.0;
  Eigen::MatrixXd hessian;        // d2L / dXi dXi over active entries
  Eigen::MatrixXd xi_covariance;  // inverse of hessian (empty when not PD)
  EvidenceMethod method = EvidenceMethod::gauss_newton;
  bool positive_definite = false;
  /// False when the curvature-augmented sensitivity system was indefinite and
  /// the Gauss-Newton inner Hessian was used instead.
  bool curvature_used = false;
};

struct Sensitivity {
  RowMatrix dx_dxi;  // (n_samples*D) x N_xi, rows indexed k*D + e
  bool curvature_used = false;
};

/// dX*/dXi at a converged fit: solves A S = -d2L/dX dXi with the banded
/// factorization. Throws std::runtime_error if A is not positive definite
/// even without the curvature terms.
Sensitivity solve_dx_dxi(const FitResult& fit, const Eigen::MatrixXd& x_hat,
                         const CollocationOperators& ops, const Hyperparameters& hyper,
                         bool include_curvature = true);

Eigen::MatrixXd gauss_newton_hessian(const FitResult& fit, const RowMatrix& dx_dxi,
                                     const Eigen::MatrixXd& x_hat,
                                     const CollocationOperators& ops,
                                     const Hyperparameters& hyper);

/// Central differences of dL/dXi along X = X*(Xi), each point re-solving the
/// inner problem warm-started from fit.x_star.
Eigen::MatrixXd full_hessian_fd(const FitResult& fit, const Eigen::MatrixXd& x_hat,
                                const CollocationOperators& ops, const Hyperparameters& hyper,
                                double rel_step = 1e-5);

/// -(L + N/2 (log 2pi + 2 log sp) + 1/2 log|H / 2pi|); -inf if H is not PD.
double log_evidence(double loss_total, const Eigen::MatrixXd& hessian, double sigma_p);

EvidenceResult compute_evidence(const FitResult& fit, const Eigen::MatrixXd& x_hat,
                                const CollocationOperators& ops, const Hyperparameters& hyper,
                                const EvidenceOptions& opts = {});

}  // namespace odrid
