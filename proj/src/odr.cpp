#include "odrid/odr.hpp"

#include <Eigen/Cholesky>

#include <algorithm>
#include <chrono>
#include <cmath>
#include <limits>
#include <stdexcept>
#include <string>

namespace odrid {

void Hyperparameters::validate(int state_dim) const {
  if (!(sigma_x > 0.0) && sigma_x_per_state.size() == 0)
    throw std::invalid_argument("sigma_x must be positive");
  if (!(sigma_dt > 0.0)) throw std::invalid_argument("sigma_dt must be positive");
  if (!(sigma_p > 0.0)) throw std::invalid_argument("sigma_p must be positive");
  if (sigma_x_per_state.size() > 0) {
    if (sigma_x_per_state.size() != state_dim)
      throw std::invalid_argument("sigma_x_per_state length must equal the state dimension");
    if ((sigma_x_per_state.array() <= 0.0).any())
      throw std::invalid_argument("sigma_x_per_state entries must be positive");
  }
}

// ---------------------------------------------------------------------------
// Model

Model Model::full(const LibrarySpec& spec) {
  Model m;
  m.spec = spec;
  m.mask.setConstant(spec.num_terms(), spec.state_dim, true);
  m.xi = Eigen::MatrixXd::Zero(spec.num_terms(), spec.state_dim);
  return m;
}

Model Model::from_mask(const LibrarySpec& spec,
                       const Eigen::Array<bool, Eigen::Dynamic, Eigen::Dynamic>& mask) {
  if (mask.rows() != spec.num_terms() || mask.cols() != spec.state_dim)
    throw std::invalid_argument("mask shape does not match the library");
  Model m;
  m.spec = spec;
  m.mask = mask;
  m.xi = Eigen::MatrixXd::Zero(spec.num_terms(), spec.state_dim);
  return m;
}

std::vector<int> Model::active() const {
  std::vector<int> ids;
  const int M = num_terms();
  for (int d = 0; d < state_dim(); ++d)
    for (int m = 0; m < M; ++m)
      if (mask(m, d)) ids.push_back(id(m, d));
  return ids;
}

Eigen::VectorXd Model::active_values() const {
  const auto ids = active();
  Eigen::VectorXd v(ids.size());
  for (std::size_t c = 0; c < ids.size(); ++c) v[c] = xi(term_of(ids[c]), equation_of(ids[c]));
  return v;
}

void Model::set_active_values(const Eigen::VectorXd& v) {
  const auto ids = active();
  if (static_cast<std::size_t>(v.size()) != ids.size())
    throw std::invalid_argument("set_active_values: size mismatch");
  xi.setZero(num_terms(), state_dim());
  for (std::size_t c = 0; c < ids.size(); ++c) xi(term_of(ids[c]), equation_of(ids[c])) = v[c];
}

Model Model::without(int id) const {
  Model m = *this;
  m.mask(term_of(id), equation_of(id)) = false;
  m.xi(term_of(id), equation_of(id)) = 0.0;
  return m;
}

void Model::apply_mask() {
  for (int d = 0; d < state_dim(); ++d)
    for (int m = 0; m < num_terms(); ++m)
      if (!mask(m, d)) xi(m, d) = 0.0;
}

// ---------------------------------------------------------------------------
// Flattening

Eigen::VectorXd flatten_states(const Eigen::MatrixXd& X) {
  Eigen::VectorXd v(X.size());
  const auto D = X.cols();
  for (Eigen::Index k = 0; k < X.rows(); ++k)
    for (Eigen::Index e = 0; e < D; ++e) v[k * D + e] = X(k, e);
  return v;
}

Eigen::MatrixXd unflatten_states(const Eigen::VectorXd& v, int n_samples, int state_dim) {
  Eigen::MatrixXd X(n_samples, state_dim);
  for (int k = 0; k < n_samples; ++k)
    for (int e = 0; e < state_dim; ++e) X(k, e) = v[k * state_dim + e];
  return X;
}

// ---------------------------------------------------------------------------
// Objective

OdrObjective::OdrObjective(const Eigen::MatrixXd& x_hat, const CollocationOperators& ops,
                           const Hyperparameters& hyper, const Model& model)
    : x_hat_(x_hat), ops_(ops), hyper_(hyper), model_(model) {
  n_samples_ = static_cast<int>(x_hat.rows());
  D_ = static_cast<int>(x_hat.cols());
  M_ = model.num_terms();
  if (model.state_dim() != D_) throw std::invalid_argument("model/data state dimension mismatch");
  if (D_ < 1 || D_ > kMaxStateDim)
    throw std::invalid_argument("state dimension must be in 1.." + std::to_string(kMaxStateDim));
  if (ops.n_samples != n_samples_)
    throw std::invalid_argument("collocation operators built for " +
                                std::to_string(ops.n_samples) + " samples, data has " +
                                std::to_string(n_samples_));
  hyper_.validate(D_);
  active_ = model.active();
  by_equation_.assign(D_, {});
  for (std::size_t c = 0; c < active_.size(); ++c)
    by_equation_[model.equation_of(active_[c])].emplace_back(static_cast<int>(c),
                                                             model.term_of(active_[c]));
}

Eigen::MatrixXd OdrObjective::expand(const Eigen::VectorXd& xi_active) const {
  if (xi_active.size() != n_active())
    throw std::invalid_argument("coefficient vector has " + std::to_string(xi_active.size()) +
                                " entries, model has " + std::to_string(n_active()) + " active");
  Eigen::MatrixXd Xi = Eigen::MatrixXd::Zero(M_, D_);
  for (int c = 0; c < n_active(); ++c)
    Xi(model_.term_of(active_[c]), model_.equation_of(active_[c])) = xi_active[c];
  return Xi;
}

void OdrObjective::local_eval(const Eigen::MatrixXd& X, int k, const Eigen::MatrixXd& Xi,
                              double* theta, double* jtheta, double* f, double* jf) const {
  double x[kMaxStateDim];
  for (int e = 0; e < D_; ++e) x[e] = X(k, e);
  eval_theta_row(model_.spec, x, theta);
  if (jtheta) eval_theta_jacobian_row(model_.spec, x, jtheta);
  for (int d = 0; d < D_; ++d) {
    double s = 0.0;
    for (int m = 0; m < M_; ++m) s += theta[m] * Xi(m, d);
    f[d] = s;
    if (jf) {
      for (int e = 0; e < D_; ++e) {
        double t = 0.0;
        for (int m = 0; m < M_; ++m) t += jtheta[m * D_ + e] * Xi(m, d);
        jf[d * D_ + e] = t;
      }
    }
  }
}

Eigen::MatrixXd OdrObjective::eta(const Eigen::MatrixXd& X,
                                  const Eigen::VectorXd& xi_active) const {
  const Eigen::MatrixXd Xi = expand(xi_active);
  const int N = ops_.n_rows;
  Eigen::MatrixXd out(N, D_);
  std::vector<double> theta(M_), f(D_);
  for (int i = 0; i < N; ++i) {
    local_eval(X, ops_.center(i), Xi, theta.data(), nullptr, f.data(), nullptr);
    for (int d = 0; d < D_; ++d) {
      double s = 0.0;
      for (int q = 0; q <= ops_.order; ++q) s += ops_.weights[q] * X(i + q, d);
      out(i, d) = s - f[d];
    }
  }
  return out;
}

LossParts OdrObjective::loss(const Eigen::MatrixXd& X, const Eigen::VectorXd& xi_active) const {
  LossParts L;
  for (int e = 0; e < D_; ++e) {
    const double w = 1.0 / (hyper_.sigma_x_for(e) * hyper_.sigma_x_for(e));
    L.data += 0.5 * w * (X.col(e) - x_hat_.col(e)).squaredNorm();
  }
  L.model = 0.5 * eta(X, xi_active).squaredNorm() / (hyper_.sigma_dt * hyper_.sigma_dt);
  L.prior = 0.5 * xi_active.squaredNorm() / (hyper_.sigma_p * hyper_.sigma_p);
  return L;
}

Eigen::VectorXd OdrObjective::residual(const Eigen::MatrixXd& X,
                                       const Eigen::VectorXd& xi_active) const {
  Eigen::VectorXd r(n_residuals());
  for (int k = 0; k < n_samples_; ++k)
    for (int e = 0; e < D_; ++e)
      r[k * D_ + e] = (X(k, e) - x_hat_(k, e)) / hyper_.sigma_x_for(e);
  const Eigen::MatrixXd H = eta(X, xi_active);
  const int off = n_states();
  for (int i = 0; i < ops_.n_rows; ++i)
    for (int d = 0; d < D_; ++d) r[off + i * D_ + d] = H(i, d) / hyper_.sigma_dt;
  const int off2 = off + ops_.n_rows * D_;
  for (int c = 0; c < n_active(); ++c) r[off2 + c] = xi_active[c] / hyper_.sigma_p;
  for (Eigen::Index j = 0; j < r.size(); ++j) {
    if (!std::isfinite(r[j]))
      throw std::runtime_error("non-finite residual entry at index " + std::to_string(j));
  }
  return r;
}

Eigen::SparseMatrix<double, Eigen::RowMajor> OdrObjective::jacobian(
    const Eigen::MatrixXd& X, const Eigen::VectorXd& xi_active) const {
  const Eigen::MatrixXd Xi = expand(xi_active);
  const int n = n_states();
  const int N = ops_.n_rows;
  std::vector<Eigen::Triplet<double>> trip;
  trip.reserve(n + N * D_ * (ops_.order + 1 + D_ + M_) + n_active());
  for (int k = 0; k < n_samples_; ++k)
    for (int e = 0; e < D_; ++e) trip.emplace_back(k * D_ + e, k * D_ + e, 1.0 / hyper_.sigma_x_for(e));
  std::vector<double> theta(M_), jtheta(M_ * D_), f(D_), jf(D_ * D_);
  const double s = 1.0 / hyper_.sigma_dt;
  for (int i = 0; i < N; ++i) {
    const int k = ops_.center(i);
    local_eval(X, k, Xi, theta.data(), jtheta.data(), f.data(), jf.data());
    for (int d = 0; d < D_; ++d) {
      const int row = n + i * D_ + d;
      for (int q = 0; q <= ops_.order; ++q) trip.emplace_back(row, (i + q) * D_ + d, ops_.weights[q] * s);
      for (int e = 0; e < D_; ++e) trip.emplace_back(row, k * D_ + e, -jf[d * D_ + e] * s);
      for (const auto& [pos, m] : by_equation_[d]) trip.emplace_back(row, n + pos, -theta[m] * s);
    }
  }
  const int off2 = n + N * D_;
  for (int c = 0; c < n_active(); ++c) trip.emplace_back(off2 + c, n + c, 1.0 / hyper_.sigma_p);
  Eigen::SparseMatrix<double, Eigen::RowMajor> J(n_residuals(), n + n_active());
  J.setFromTriplets(trip.begin(), trip.end());  // duplicates are summed
  return J;
}

NormalSystem OdrObjective::normal_system(const Eigen::MatrixXd& X,
                                         const Eigen::VectorXd& xi_active, bool with_xi,
                                         bool with_curvature) const {
  const Eigen::MatrixXd Xi = expand(xi_active);
  const int n = n_states();
  const int N = ops_.n_rows;
  const int na = n_active();
  const int h = ops_.half();
  NormalSystem ns;
  ns.A = SymBandMatrix(n, x_bandwidth());
  ns.gx = Eigen::VectorXd::Zero(n);
  if (with_xi) {
    ns.C = RowMatrix::Zero(n, na);
    ns.E = Eigen::MatrixXd::Zero(na, na);
    ns.gxi = Eigen::VectorXd::Zero(na);
  }

  for (int k = 0; k < n_samples_; ++k) {
    for (int e = 0; e < D_; ++e) {
      const double w = 1.0 / (hyper_.sigma_x_for(e) * hyper_.sigma_x_for(e));
      const double z = X(k, e) - x_hat_(k, e);
      const int j = k * D_ + e;
      ns.A.add(j, j, w);
      ns.gx[j] += w * z;
      ns.loss.data += 0.5 * w * z * z;
    }
  }

  const double inv = 1.0 / (hyper_.sigma_dt * hyper_.sigma_dt);
  std::vector<double> theta(M_), jtheta(M_ * D_), f(D_), jf(D_ * D_), hess(M_ * D_ * D_);
  std::vector<double> et(D_);
  Eigen::MatrixXd gram = Eigen::MatrixXd::Zero(M_, M_);
  std::vector<int> idx(ops_.order + D_);
  std::vector<double> val(ops_.order + D_);
  for (int i = 0; i < N; ++i) {
    const int k = i + h;
    local_eval(X, k, Xi, theta.data(), jtheta.data(), f.data(), jf.data());
    if (with_xi) {
      // Library Gram matrix, lower triangle; E is assembled from it below.
      for (int m = 0; m < M_; ++m)
        for (int m2 = 0; m2 <= m; ++m2) gram(m, m2) += theta[m] * theta[m2];
    }
    for (int d = 0; d < D_; ++d) {
      double eid = -f[d];
      for (int q = 0; q <= ops_.order; ++q) eid += ops_.weights[q] * X(i + q, d);
      et[d] = eid;
      ns.loss.model += 0.5 * inv * eid * eid;

      // Sparse row of d eta_{i,d} / dX: stencil entries plus the local chain term.
      int cnt = 0;
      for (int q = 0; q <= ops_.order; ++q) {
        if (q == h) continue;
        idx[cnt] = (i + q) * D_ + d;
        val[cnt++] = ops_.weights[q];
      }
      for (int e = 0; e < D_; ++e) {
        idx[cnt] = k * D_ + e;
        val[cnt++] = -jf[d * D_ + e] + (e == d ? ops_.weights[h] : 0.0);
      }
      for (int p = 0; p < cnt; ++p) {
        const double vp = val[p] * inv;
        ns.gx[idx[p]] += vp * eid;
        for (int q = 0; q <= p; ++q) ns.A.add(idx[p], idx[q], vp * val[q]);
      }
      if (!with_xi) continue;
      for (const auto& [pos, m] : by_equation_[d]) {
        const double jx = -theta[m] * inv;
        ns.gxi[pos] += jx * eid;
        for (int p = 0; p < cnt; ++p) ns.C(idx[p], pos) += val[p] * jx;
        if (with_curvature) {
          for (int g = 0; g < D_; ++g) ns.C(k * D_ + g, pos) -= inv * eid * jtheta[m * D_ + g];
        }
      }
    }
    if (!with_curvature) continue;
    // eta . d2eta/dX2 lives on the diagonal time block of sample k.
    double x[kMaxStateDim];
    for (int e = 0; e < D_; ++e) x[e] = X(k, e);
    eval_theta_hessian_row(model_.spec, x, hess.data());
    for (int e = 0; e < D_; ++e) {
      for (int g = 0; g <= e; ++g) {
        double v = 0.0;
        for (int d = 0; d < D_; ++d) {
          double c = 0.0;
          for (int m = 0; m < M_; ++m) c += hess[(m * D_ + e) * D_ + g] * Xi(m, d);
          v -= et[d] * c;
        }
        ns.A.add(k * D_ + e, k * D_ + g, v * inv);
      }
    }
  }

  const double ip = 1.0 / (hyper_.sigma_p * hyper_.sigma_p);
  ns.loss.prior = 0.5 * ip * xi_active.squaredNorm();
  if (with_xi) {
    for (int d = 0; d < D_; ++d) {
      for (const auto& [pos, m] : by_equation_[d]) {
        for (const auto& [pos2, m2] : by_equation_[d])
          ns.E(pos, pos2) = inv * (m >= m2 ? gram(m, m2) : gram(m2, m));
      }
    }
    for (int c = 0; c < na; ++c) {
      ns.E(c, c) += ip;
      ns.gxi[c] += ip * xi_active[c];
    }
  }
  return ns;
}

SymBandMatrix OdrObjective::state_hessian(const Eigen::MatrixXd& X,
                                          const Eigen::VectorXd& xi_active,
                                          bool include_curvature) const {
  return std::move(normal_system(X, xi_active, false, include_curvature).A);
}

RowMatrix OdrObjective::cross_hessian(const Eigen::MatrixXd& X,
                                            const Eigen::VectorXd& xi_active,
                                            bool include_curvature) const {
  return std::move(normal_system(X, xi_active, true, include_curvature).C);
}

Eigen::MatrixXd OdrObjective::eta_state_product(const Eigen::MatrixXd& X,
                                                const Eigen::VectorXd& xi_active,
                                                const RowMatrix& V) const {
  const Eigen::MatrixXd Xi = expand(xi_active);
  const int N = ops_.n_rows;
  const int h = ops_.half();
  RowMatrix out = RowMatrix::Zero(N * D_, V.cols());
  std::vector<double> theta(M_), jtheta(M_ * D_), f(D_), jf(D_ * D_);
  for (int i = 0; i < N; ++i) {
    const int k = i + h;
    local_eval(X, k, Xi, theta.data(), jtheta.data(), f.data(), jf.data());
    for (int d = 0; d < D_; ++d) {
      auto row = out.row(i * D_ + d);
      for (int q = 0; q <= ops_.order; ++q)
        if (ops_.weights[q] != 0.0) row += ops_.weights[q] * V.row((i + q) * D_ + d);
      for (int e = 0; e < D_; ++e) row -= jf[d * D_ + e] * V.row(k * D_ + e);
    }
  }
  return out;
}

Eigen::MatrixXd OdrObjective::eta_coefficient_jacobian(const Eigen::MatrixXd& X) const {
  const int N = ops_.n_rows;
  Eigen::MatrixXd J = Eigen::MatrixXd::Zero(N * D_, n_active());
  std::vector<double> theta(M_);
  double x[kMaxStateDim];
  for (int i = 0; i < N; ++i) {
    const int k = ops_.center(i);
    for (int e = 0; e < D_; ++e) x[e] = X(k, e);
    eval_theta_row(model_.spec, x, theta.data());
    for (int d = 0; d < D_; ++d)
      for (const auto& [pos, m] : by_equation_[d]) J(i * D_ + d, pos) = -theta[m];
  }
  return J;
}

std::pair<Eigen::VectorXd, Eigen::VectorXd> OdrObjective::jacobian_transpose_product(
    const Eigen::MatrixXd& X, const Eigen::VectorXd& xi_active, const Eigen::VectorXd& v) const {
  if (v.size() != n_residuals()) throw std::invalid_argument("residual vector has the wrong length");
  const Eigen::MatrixXd Xi = expand(xi_active);
  const int n = n_states();
  Eigen::VectorXd gx(n), gxi = Eigen::VectorXd::Zero(n_active());
  for (int k = 0; k < n_samples_; ++k)
    for (int e = 0; e < D_; ++e) gx[k * D_ + e] = v[k * D_ + e] / hyper_.sigma_x_for(e);
  std::vector<double> theta(M_), jtheta(M_ * D_), f(D_), jf(D_ * D_);
  const double s = 1.0 / hyper_.sigma_dt;
  for (int i = 0; i < ops_.n_rows; ++i) {
    const int k = ops_.center(i);
    local_eval(X, k, Xi, theta.data(), jtheta.data(), f.data(), jf.data());
    for (int d = 0; d < D_; ++d) {
      const double w = v[n + i * D_ + d] * s;
      for (int q = 0; q <= ops_.order; ++q) gx[(i + q) * D_ + d] += ops_.weights[q] * w;
      for (int e = 0; e < D_; ++e) gx[k * D_ + e] -= jf[d * D_ + e] * w;
      for (const auto& [pos, m] : by_equation_[d]) gxi[pos] -= theta[m] * w;
    }
  }
  const int off2 = n + ops_.n_rows * D_;
  for (int c = 0; c < n_active(); ++c) gxi[c] += v[off2 + c] / hyper_.sigma_p;
  return {gx, gxi};
}

Eigen::VectorXd OdrObjective::coefficient_gradient(const Eigen::MatrixXd& X,
                                                   const Eigen::VectorXd& xi_active) const {
  const Eigen::MatrixXd H = eta(X, xi_active);
  Eigen::VectorXd flat(H.size());
  for (int i = 0; i < H.rows(); ++i)
    for (int d = 0; d < D_; ++d) flat[i * D_ + d] = H(i, d);
  const double inv = 1.0 / (hyper_.sigma_dt * hyper_.sigma_dt);
  return eta_coefficient_jacobian(X).transpose() * flat * inv +
         xi_active / (hyper_.sigma_p * hyper_.sigma_p);
}

// ---------------------------------------------------------------------------
// Levenberg-Marquardt

namespace {

FitResult run_lm(const Eigen::MatrixXd& init_x, const Eigen::VectorXd& init_xi,
                 const Eigen::MatrixXd& x_hat, const CollocationOperators& ops,
                 const Hyperparameters& hyper, const Model& model, const SolverOptions& opts,
                 bool with_xi) {
  const auto t0 = std::chrono::steady_clock::now();
  OdrObjective obj(x_hat, ops, hyper, model);
  if (init_x.rows() != x_hat.rows() || init_x.cols() != x_hat.cols())
    throw std::invalid_argument("initial state has the wrong shape");
  if (!init_x.allFinite() || !init_xi.allFinite())
    throw std::invalid_argument("initial values must be finite");
  if (obj.n_active() < 1) throw std::invalid_argument("model must have at least one active term");

  const int D = obj.state_dim();
  const int ns_ = obj.n_samples();
  const int na = obj.n_active();

  Eigen::MatrixXd X = init_x;
  Eigen::VectorXd xi = init_xi;
  NormalSystem sys = obj.normal_system(X, xi, with_xi, opts.second_order);
  double L = sys.loss.total();

  FitResult res;
  res.loss_history.push_back(L);

  double maxdiag = sys.A.diagonal().maxCoeff();
  if (with_xi) maxdiag = std::max(maxdiag, sys.E.diagonal().maxCoeff());
  const double unit = opts.scaled_damping ? 1.0 : maxdiag;
  double lambda = opts.lm_lambda0 * unit;
  const double lambda_floor = 1e-16 * unit;
  const double lambda_ceiling = 1e32 * unit;

  auto grad_norm = [&]() {
    double g = sys.gx.lpNorm<Eigen::Infinity>();
    if (with_xi && na > 0) g = std::max(g, sys.gxi.lpNorm<Eigen::Infinity>());
    return g;
  };

  BandCholesky chol;
  RowMatrix W;
  int iter = 0;
  for (;;) {
    if (!std::isfinite(L)) {
      res.stop_reason = "non-finite loss";
      break;
    }
    if (grad_norm() <= opts.g_tol * (1.0 + std::abs(L))) {
      res.converged = true;
      res.stop_reason = "gradient";
      break;
    }
    if (iter >= opts.max_iterations) {
      res.stop_reason = "max_iterations";
      break;
    }
    ++iter;

    const double shift = opts.scaled_damping ? 0.0 : lambda;
    const double rel_shift = opts.scaled_damping ? lambda : 0.0;
    if (!chol.compute(sys.A, shift, rel_shift)) {
      lambda *= opts.lambda_increase;
      continue;
    }
    Eigen::LLT<Eigen::MatrixXd> llt;
    Eigen::VectorXd s;
    if (with_xi) {
      // K = E - C^T A^-1 C = E - W^T W with W = L^-1 S C (forward sweep only).
      W = sys.C;
      chol.forward_in_place(W);
      Eigen::MatrixXd K = sys.E;
      K.noalias() -= W.transpose() * W;
      K.diagonal() += shift * Eigen::VectorXd::Ones(na) + rel_shift * sys.E.diagonal();
      // Jacobi-equilibrate the reduced system before factoring.
      s = K.diagonal().cwiseAbs().cwiseMax(1e-300).cwiseSqrt().cwiseInverse();
      llt.compute(s.asDiagonal() * K * s.asDiagonal());
      if (llt.info() != Eigen::Success || !(K.diagonal().array() > 0).all()) {
        lambda *= opts.lambda_increase;
        continue;
      }
    }
    // -(damped normal matrix)^{-1} [bx; bxi] through the Schur complement.
    auto solve = [&](const Eigen::VectorXd& bx, const Eigen::VectorXd& bxi, Eigen::VectorXd& ox,
                     Eigen::VectorXd& oxi) {
      if (with_xi) {
        Eigen::VectorXd u = bx;
        chol.forward_in_place(u);
        oxi = s.asDiagonal() * llt.solve(s.asDiagonal() * (-bxi + W.transpose() * u));
        ox = bx + sys.C * oxi;
      } else {
        oxi = Eigen::VectorXd::Zero(na);
        ox = bx;
      }
      chol.solve_in_place(ox);
      ox = -ox;
    };
    Eigen::VectorXd dx, dxi;
    solve(sys.gx, sys.gxi, dx, dxi);

    if (opts.geodesic_acceleration) {
      // Second directional derivative of the residual along the step, by a
      // central difference; exact when the library is quadratic.
      const double h = 0.1;
      const Eigen::MatrixXd dX = unflatten_states(dx, ns_, D);
      bool ok = true;
      Eigen::VectorXd rvv;
      try {
        rvv = (obj.residual(X + h * dX, xi + h * dxi) - 2.0 * obj.residual(X, xi) +
               obj.residual(X - h * dX, xi - h * dxi)) / (h * h);
      } catch (const std::runtime_error&) {
        ok = false;
      }
      if (ok) {
        const auto [jx, jxi] = obj.jacobian_transpose_product(X, xi, rvv);
        Eigen::VectorXd ax, axi;
        solve(jx, jxi, ax, axi);
        const double ratio = 2.0 * std::sqrt(ax.squaredNorm() + axi.squaredNorm()) /
                             std::sqrt(dx.squaredNorm() + dxi.squaredNorm());
        if (ratio <= opts.acceleration_ratio) {
          dx += 0.5 * ax;
          dxi += 0.5 * axi;
        } else {
          ok = false;
        }
      }
      if (!ok) {
        lambda *= opts.lambda_increase;
        if (lambda > lambda_ceiling) {
          res.stop_reason = "damping";
          break;
        }
        continue;
      }
    }

    const double step_sq = dx.squaredNorm() + dxi.squaredNorm();

    const Eigen::MatrixXd Xn = X + unflatten_states(dx, ns_, D);
    const Eigen::VectorXd xin = xi + dxi;
    const double Ln = obj.loss(Xn, xin).total();
    const double step_norm = std::sqrt(step_sq);
    const double z_norm = std::sqrt(X.squaredNorm() + xi.squaredNorm());
    const bool tiny_step = step_norm <= opts.x_tol * (z_norm + opts.x_tol);

    if (std::isfinite(Ln) && Ln < L) {
      const double rel_decrease = (L - Ln) / std::max(std::abs(L), 1e-300);
      X = Xn;
      xi = xin;
      sys = obj.normal_system(X, xi, with_xi, opts.second_order);
      L = sys.loss.total();
      res.loss_history.push_back(L);
      lambda = std::max(lambda * opts.lambda_decrease, lambda_floor);
      if (tiny_step) {
        res.converged = true;
        res.stop_reason = "step";
        break;
      }
      if (rel_decrease <= opts.f_tol) {
        res.converged = true;
        res.stop_reason = "loss";
        break;
      }
    } else {
      lambda *= opts.lambda_increase;
      if (tiny_step) {
        res.converged = true;
        res.stop_reason = "step";
        break;
      }
      if (lambda > lambda_ceiling) {
        res.stop_reason = "damping";
        break;
      }
    }
  }

  Model out_model = model;
  if (with_xi) out_model.set_active_values(xi);
  res.x_star = std::move(X);
  res.model = std::move(out_model);
  res.loss_data = sys.loss.data;
  res.loss_model = sys.loss.model;
  res.loss_prior = sys.loss.prior;
  res.loss_total = sys.loss.total();
  res.iterations = iter;
  res.grad_inf_norm = grad_norm();
  res.wall_time =
      std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  return res;
}

}  // namespace

FitResult solve_odr(const Eigen::MatrixXd& init_x, const Eigen::VectorXd& init_xi,
                    const Eigen::MatrixXd& x_hat, const CollocationOperators& ops,
                    const Hyperparameters& hyper, const Model& model,
                    const SolverOptions& opts) {
  return run_lm(init_x, init_xi, x_hat, ops, hyper, model, opts, true);
}

FitResult solve_states(const Eigen::MatrixXd& init_x, const Eigen::MatrixXd& x_hat,
                       const CollocationOperators& ops, const Hyperparameters& hyper,
                       const Model& model, const SolverOptions& opts) {
  return run_lm(init_x, model.active_values(), x_hat, ops, hyper, model, opts, false);
}

}  // namespace odrid
