#include "odrid/evidence.hpp"

#include <Eigen/Cholesky>

#include <cmath>
#include <limits>
#include <numbers>
#include <stdexcept>

namespace odrid {

std::string to_string(EvidenceMethod m) {
  return m == EvidenceMethod::gauss_newton ? "gauss_newton" : "full_hessian";
}

Sensitivity solve_dx_dxi(const FitResult& fit, const Eigen::MatrixXd& x_hat,
                         const CollocationOperators& ops, const Hyperparameters& hyper,
                         bool include_curvature) {
  OdrObjective obj(x_hat, ops, hyper, fit.model);
  const Eigen::VectorXd xi = fit.model.active_values();
  Sensitivity out;
  BandCholesky chol;
  NormalSystem ns = obj.normal_system(fit.x_star, xi, true, include_curvature);
  out.curvature_used = include_curvature;
  if (!chol.compute(ns.A)) {
    if (!include_curvature) throw std::runtime_error("sensitivity system is not positive definite");
    // The curvature terms made A indefinite; fall back to the Gauss-Newton block.
    ns = obj.normal_system(fit.x_star, xi, true, false);
    out.curvature_used = false;
    if (!chol.compute(ns.A)) throw std::runtime_error("sensitivity system is not positive definite");
  }
  out.dx_dxi = -ns.C;
  chol.solve_in_place(out.dx_dxi);
  return out;
}

Eigen::MatrixXd gauss_newton_hessian(const FitResult& fit, const RowMatrix& dx_dxi,
                                     const Eigen::MatrixXd& x_hat,
                                     const CollocationOperators& ops,
                                     const Hyperparameters& hyper) {
  OdrObjective obj(x_hat, ops, hyper, fit.model);
  const Eigen::VectorXd xi = fit.model.active_values();
  const int D = obj.state_dim();
  Eigen::MatrixXd G = obj.eta_state_product(fit.x_star, xi, dx_dxi);
  G += obj.eta_coefficient_jacobian(fit.x_star);
  Eigen::MatrixXd H = G.transpose() * G / (hyper.sigma_dt * hyper.sigma_dt);
  // Data term, weighted per state column.
  for (int e = 0; e < D; ++e) {
    const double w = 1.0 / (hyper.sigma_x_for(e) * hyper.sigma_x_for(e));
    Eigen::MatrixXd Se(obj.n_samples(), dx_dxi.cols());
    for (int k = 0; k < obj.n_samples(); ++k) Se.row(k) = dx_dxi.row(k * D + e);
    H.noalias() += w * Se.transpose() * Se;
  }
  H.diagonal().array() += 1.0 / (hyper.sigma_p * hyper.sigma_p);
  return 0.5 * (H + H.transpose());
}

Eigen::MatrixXd full_hessian_fd(const FitResult& fit, const Eigen::MatrixXd& x_hat,
                                const CollocationOperators& ops, const Hyperparameters& hyper,
                                double rel_step) {
  const Eigen::VectorXd xi = fit.model.active_values();
  const int na = static_cast<int>(xi.size());
  SolverOptions inner;
  inner.max_iterations = 200;
  inner.g_tol = 1e-14;
  inner.f_tol = 0.0;
  inner.x_tol = 1e-14;
  auto total_gradient = [&](const Eigen::VectorXd& v) {
    Model m = fit.model;
    m.set_active_values(v);
    const FitResult r = solve_states(fit.x_star, x_hat, ops, hyper, m, inner);
    OdrObjective obj(x_hat, ops, hyper, m);
    // dL/dXi = partial derivative at the inner optimum (dL/dX = 0 there).
    return obj.coefficient_gradient(r.x_star, v);
  };
  Eigen::MatrixXd H(na, na);
  for (int c = 0; c < na; ++c) {
    const double h = rel_step * (1.0 + std::abs(xi[c]));
    Eigen::VectorXd p = xi, q = xi;
    p[c] += h;
    q[c] -= h;
    H.col(c) = (total_gradient(p) - total_gradient(q)) / (2.0 * h);
  }
  return 0.5 * (H + H.transpose());
}

double log_evidence(double loss_total, const Eigen::MatrixXd& hessian, double sigma_p) {
  const int n = static_cast<int>(hessian.rows());
  Eigen::LLT<Eigen::MatrixXd> llt(hessian);
  if (llt.info() != Eigen::Success) return -std::numeric_limits<double>::infinity();
  double logdet = 0.0;
  for (int i = 0; i < n; ++i) {
    const double l = llt.matrixLLT()(i, i);
    if (!(l > 0.0)) return -std::numeric_limits<double>::infinity();
    logdet += 2.0 * std::log(l);
  }
  const double log2pi = std::log(2.0 * std::numbers::pi);
  return -(loss_total + 0.5 * n * (log2pi + 2.0 * std::log(sigma_p)) +
           0.5 * (logdet - n * log2pi));
}

EvidenceResult compute_evidence(const FitResult& fit, const Eigen::MatrixXd& x_hat,
                                const CollocationOperators& ops, const Hyperparameters& hyper,
                                const EvidenceOptions& opts) {
  EvidenceResult out;
  out.method = opts.method;
  if (opts.method == EvidenceMethod::gauss_newton) {
    const Sensitivity s = solve_dx_dxi(fit, x_hat, ops, hyper, opts.include_curvature);
    out.curvature_used = s.curvature_used;
    out.hessian = gauss_newton_hessian(fit, s.dx_dxi, x_hat, ops, hyper);
  } else {
    out.hessian = full_hessian_fd(fit, x_hat, ops, hyper, opts.fd_step);
    out.curvature_used = true;
  }
  out.log_evidence = log_evidence(fit.loss_total, out.hessian, hyper.sigma_p);
  out.positive_definite = std::isfinite(out.log_evidence);
  if (out.positive_definite) {
    const int n = static_cast<int>(out.hessian.rows());
    out.xi_covariance = out.hessian.llt().solve(Eigen::MatrixXd::Identity(n, n));
  }
  return out;
}

}  // namespace odrid
