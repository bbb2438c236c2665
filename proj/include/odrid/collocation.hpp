#pragma once

#include <Eigen/Core>
#include <Eigen/SparseCore>

#include <utility>
#include <vector>

namespace odrid {

/// Banded finite-difference collocation pair (L_I, L_dt), interior points only.
///
/// Row i of L_dt applies `weights` to samples i .. i+order; row i of L_I picks
/// sample i + order/2. Both are N x n_samples with N = n_samples - order.
struct CollocationOperators {
  int order = 0;
  int n_samples = 0;
  int n_rows = 0;
  double dt = 0.0;
  /// order+1 stencil weights, already divided by dt. The centre weight is a
  /// stored zero so every row has the same band width.
  std::vector<double> weights;

  int bandwidth() const { return order + 1; }
  int half() const { return order / 2; }
  /// Sample index that row i collocates at.
  int center(int row) const { return row + order / 2; }

  Eigen::SparseMatrix<double, Eigen::RowMajor> L_dt() const;
  Eigen::SparseMatrix<double, Eigen::RowMajor> L_I() const;
};

/// Standard central-difference first-derivative coefficients (unit spacing).
std::vector<double> central_difference_weights(int order);

CollocationOperators build_fd_operators(int order, int n_samples, double dt);

/// Returns (L_dt X, L_I X).
std::pair<Eigen::MatrixXd, Eigen::MatrixXd> apply(const CollocationOperators& ops,
                                                  const Eigen::MatrixXd& X);

}  // namespace odrid
