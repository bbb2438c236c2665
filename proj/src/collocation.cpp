#include "odrid/collocation.hpp"

#include <stdexcept>
#include <string>

namespace odrid {

std::vector<double> central_difference_weights(int order) {
  switch (order) {
    case 2:
      return {-1.0 / 2, 0.0, 1.0 / 2};
    case 4:
      return {1.0 / 12, -2.0 / 3, 0.0, 2.0 / 3, -1.0 / 12};
    case 6:
      return {-1.0 / 60, 3.0 / 20, -3.0 / 4, 0.0, 3.0 / 4, -3.0 / 20, 1.0 / 60};
    case 8:
      return {1.0 / 280, -4.0 / 105, 1.0 / 5, -4.0 / 5, 0.0,
              4.0 / 5,   -1.0 / 5,   4.0 / 105, -1.0 / 280};
    default:
      throw std::invalid_argument("finite-difference order must be one of 2, 4, 6, 8; got " +
                                  std::to_string(order));
  }
}

CollocationOperators build_fd_operators(int order, int n_samples, double dt) {
  if (order % 2 != 0) throw std::invalid_argument("finite-difference order must be even");
  if (!(dt > 0.0)) throw std::invalid_argument("dt must be positive");
  if (n_samples <= order) {
    throw std::invalid_argument("need more than " + std::to_string(order) +
                                " samples for an order-" + std::to_string(order) + " stencil");
  }
  CollocationOperators ops;
  ops.order = order;
  ops.n_samples = n_samples;
  ops.n_rows = n_samples - order;
  ops.dt = dt;
  ops.weights = central_difference_weights(order);
  for (double& w : ops.weights) w /= dt;
  return ops;
}

Eigen::SparseMatrix<double, Eigen::RowMajor> CollocationOperators::L_dt() const {
  Eigen::SparseMatrix<double, Eigen::RowMajor> L(n_rows, n_samples);
  L.reserve(Eigen::VectorXi::Constant(n_rows, bandwidth()));
  for (int i = 0; i < n_rows; ++i)
    for (int s = 0; s <= order; ++s) L.insert(i, i + s) = weights[s];
  L.makeCompressed();
  return L;
}

Eigen::SparseMatrix<double, Eigen::RowMajor> CollocationOperators::L_I() const {
  Eigen::SparseMatrix<double, Eigen::RowMajor> L(n_rows, n_samples);
  L.reserve(Eigen::VectorXi::Constant(n_rows, 1));
  for (int i = 0; i < n_rows; ++i) L.insert(i, center(i)) = 1.0;
  L.makeCompressed();
  return L;
}

std::pair<Eigen::MatrixXd, Eigen::MatrixXd> apply(const CollocationOperators& ops,
                                                  const Eigen::MatrixXd& X) {
  if (X.rows() != ops.n_samples) {
    throw std::invalid_argument("apply: X has " + std::to_string(X.rows()) +
                                " rows, operators expect " + std::to_string(ops.n_samples));
  }
  Eigen::MatrixXd dX = Eigen::MatrixXd::Zero(ops.n_rows, X.cols());
  for (int i = 0; i < ops.n_rows; ++i)
    for (int s = 0; s <= ops.order; ++s) dX.row(i) += ops.weights[s] * X.row(i + s);
  Eigen::MatrixXd IX = X.middleRows(ops.half(), ops.n_rows);
  return {std::move(dX), std::move(IX)};
}

}  // namespace odrid
