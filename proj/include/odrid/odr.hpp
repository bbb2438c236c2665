#pragma once

#include "odrid/banded.hpp"
#include "odrid/collocation.hpp"
#include "odrid/dictionary.hpp"

#include <Eigen/Core>
#include <Eigen/SparseCore>

#include <string>
#include <utility>
#include <vector>

namespace odrid {

/// Upper bound on the state dimension (fixed-size scratch buffers).
inline constexpr int kMaxStateDim = 16;

/// Noise and prior scales weighting the three loss terms.
struct Hyperparameters {
  double sigma_x = 1.0;
  double sigma_dt = 1e-3;
  double sigma_p = 100.0;
  /// Optional per-state measurement std; overrides sigma_x when non-empty.
  Eigen::VectorXd sigma_x_per_state;

  double sigma_x_for(int state) const {
    return sigma_x_per_state.size() > 0 ? sigma_x_per_state[state] : sigma_x;
  }
  void validate(int state_dim) const;
};

/// Active-coefficient mask over the M x D coefficient matrix.
///
/// Coefficients are identified by id = d * M + m (equation-major); every list
/// of active coefficients in this library is sorted by id.
struct Model {
  LibrarySpec spec;
  Eigen::Array<bool, Eigen::Dynamic, Eigen::Dynamic> mask;
  Eigen::MatrixXd xi;

  static Model full(const LibrarySpec& spec);
  static Model from_mask(const LibrarySpec& spec,
                         const Eigen::Array<bool, Eigen::Dynamic, Eigen::Dynamic>& mask);

  int num_terms() const { return spec.num_terms(); }
  int state_dim() const { return spec.state_dim; }
  int n_active() const { return static_cast<int>(mask.count()); }
  int id(int m, int d) const { return d * num_terms() + m; }
  int term_of(int id) const { return id % num_terms(); }
  int equation_of(int id) const { return id / num_terms(); }

  std::vector<int> active() const;
  Eigen::VectorXd active_values() const;
  void set_active_values(const Eigen::VectorXd& v);
  /// Copy with coefficient `id` switched off (and zeroed).
  Model without(int id) const;
  /// Zero every inactive entry of xi.
  void apply_mask();
};

struct LossParts {
  double data = 0.0;
  double model = 0.0;
  double prior = 0.0;
  double total() const { return data + model + prior; }
};

struct SolverOptions {
  double g_tol = 1e-8;
  double x_tol = 1e-10;
  double f_tol = 1e-12;
  int max_iterations = 300;
  /// Initial damping. With `scaled_damping` the damping matrix is
  /// lambda * diag(J^T J) and this is lambda itself; otherwise the damping is
  /// lambda * I with lambda = lm_lambda0 * max diag(J^T J).
  double lm_lambda0 = 1e-3;
  bool scaled_damping = false;
  /// Use the exact Hessian (Gauss-Newton plus residual curvature) in the step.
  bool second_order = false;
  double lambda_increase = 10.0;
  double lambda_decrease = 0.1;
  /// Add the second-order geodesic correction to each LM step; the corrected
  /// step is rejected when |accel| exceeds acceleration_ratio * |velocity| / 2.
  bool geodesic_acceleration = true;
  double acceleration_ratio = 0.75;
};

struct FitResult {
  Eigen::MatrixXd x_star;
  Model model;
  double loss_total = 0.0;
  double loss_data = 0.0;
  double loss_model = 0.0;
  double loss_prior = 0.0;
  bool converged = false;
  int iterations = 0;
  double grad_inf_norm = 0.0;
  double wall_time = 0.0;
  std::string stop_reason;
  /// Loss after every accepted step, starting with the initial loss.
  std::vector<double> loss_history;
};

/// Normal equations of the Gauss-Newton model at one point. The unknown vector
/// is (vec(X), active xi) with vec(X)[k*D + e] = X(k, e).
struct NormalSystem {
  SymBandMatrix A;    // X-X block of J^T J
  RowMatrix C;        // X-xi block, (n_samples*D) x N_xi
  Eigen::MatrixXd E;  // xi-xi block
  Eigen::VectorXd gx;
  Eigen::VectorXd gxi;
  LossParts loss;
};

/// Soft-constrained orthogonal distance regression loss
///   |X - X_hat|^2 / 2 sx^2 + |L_dt X - L_I Theta(X) Xi|^2 / 2 sdt^2 + |Xi|^2 / 2 sp^2
/// for a fixed active set, written as a stacked residual
///   r = [ (X - X_hat)/sx ; eta/sdt ; xi_active/sp ].
class OdrObjective {
 public:
  OdrObjective(const Eigen::MatrixXd& x_hat, const CollocationOperators& ops,
               const Hyperparameters& hyper, const Model& model);

  int n_samples() const { return n_samples_; }
  int state_dim() const { return D_; }
  int n_states() const { return n_samples_ * D_; }
  int n_active() const { return static_cast<int>(active_.size()); }
  int n_residuals() const { return n_states() + ops_.n_rows * D_ + n_active(); }
  int x_bandwidth() const { return ops_.order * D_; }
  const std::vector<int>& active() const { return active_; }
  const Model& model() const { return model_; }
  const CollocationOperators& ops() const { return ops_; }
  const Hyperparameters& hyper() const { return hyper_; }

  /// Model residual eta = L_dt X - L_I Theta(X) Xi, N x D.
  Eigen::MatrixXd eta(const Eigen::MatrixXd& X, const Eigen::VectorXd& xi_active) const;
  LossParts loss(const Eigen::MatrixXd& X, const Eigen::VectorXd& xi_active) const;
  Eigen::VectorXd residual(const Eigen::MatrixXd& X, const Eigen::VectorXd& xi_active) const;
  Eigen::SparseMatrix<double, Eigen::RowMajor> jacobian(const Eigen::MatrixXd& X,
                                                        const Eigen::VectorXd& xi_active) const;
  /// Gauss-Newton normal equations. With `with_xi` false, C/E/gxi are left
  /// empty. `with_curvature` adds the eta * d2eta terms of the exact Hessian
  /// to the X-X and X-xi blocks (eta is linear in xi, so E is already exact).
  NormalSystem normal_system(const Eigen::MatrixXd& X, const Eigen::VectorXd& xi_active,
                             bool with_xi = true, bool with_curvature = false) const;

  /// Exact X-X Hessian of the loss: the Gauss-Newton block plus the
  /// eta * d2eta/dX2 curvature (block diagonal in time).
  SymBandMatrix state_hessian(const Eigen::MatrixXd& X, const Eigen::VectorXd& xi_active,
                              bool include_curvature = true) const;
  /// d2L / dX dxi, (n_samples*D) x N_xi, optionally including eta * d2eta/dxi dX.
  RowMatrix cross_hessian(const Eigen::MatrixXd& X, const Eigen::VectorXd& xi_active,
                                bool include_curvature = true) const;
  /// d eta / dX applied to a block of state directions: returns (N*D) x cols.
  Eigen::MatrixXd eta_state_product(const Eigen::MatrixXd& X, const Eigen::VectorXd& xi_active,
                                    const RowMatrix& V) const;
  /// d eta / d xi, (N*D) x N_xi.
  Eigen::MatrixXd eta_coefficient_jacobian(const Eigen::MatrixXd& X) const;
  /// J^T v for a residual-space vector v, split into (states, active xi).
  std::pair<Eigen::VectorXd, Eigen::VectorXd> jacobian_transpose_product(
      const Eigen::MatrixXd& X, const Eigen::VectorXd& xi_active, const Eigen::VectorXd& v) const;
  /// dL/d xi at (X, xi).
  Eigen::VectorXd coefficient_gradient(const Eigen::MatrixXd& X,
                                       const Eigen::VectorXd& xi_active) const;

  /// Full M x D coefficient matrix with the active entries replaced.
  Eigen::MatrixXd expand(const Eigen::VectorXd& xi_active) const;

 private:
  void local_eval(const Eigen::MatrixXd& X, int k, const Eigen::MatrixXd& Xi, double* theta,
                  double* jtheta, double* f, double* jf) const;

  const Eigen::MatrixXd& x_hat_;
  const CollocationOperators& ops_;
  Hyperparameters hyper_;
  Model model_;
  std::vector<int> active_;
  // Active coefficient positions grouped by equation: (position in active_, term).
  std::vector<std::vector<std::pair<int, int>>> by_equation_;
  int n_samples_ = 0;
  int D_ = 0;
  int M_ = 0;
};

Eigen::VectorXd flatten_states(const Eigen::MatrixXd& X);
Eigen::MatrixXd unflatten_states(const Eigen::VectorXd& v, int n_samples, int state_dim);

/// Levenberg-Marquardt on (X, active xi) with the banded/Schur normal-equation solve.
/// Never throws on non-convergence; inspect FitResult::converged.
FitResult solve_odr(const Eigen::MatrixXd& init_x, const Eigen::VectorXd& init_xi,
                    const Eigen::MatrixXd& x_hat, const CollocationOperators& ops,
                    const Hyperparameters& hyper, const Model& model,
                    const SolverOptions& opts = {});

/// Minimizes over X only with the coefficients of `model` held fixed (the
/// inner problem X*(Xi)).
FitResult solve_states(const Eigen::MatrixXd& init_x, const Eigen::MatrixXd& x_hat,
                       const CollocationOperators& ops, const Hyperparameters& hyper,
                       const Model& model, const SolverOptions& opts = {});

}  // namespace odrid
