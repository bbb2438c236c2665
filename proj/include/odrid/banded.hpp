#pragma once

#include <Eigen/Core>

#include <utility>
#include <vector>

namespace odrid {

using RowMatrix = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

/// Symmetric matrix with half bandwidth `bw`, lower triangle stored by rows:
/// row i keeps columns i-bw .. i.
class SymBandMatrix {
 public:
  SymBandMatrix() = default;
  SymBandMatrix(int n, int bw);

  int size() const { return n_; }
  int bandwidth() const { return bw_; }

  void set_zero();
  /// Adds v to entries (i, j) and (j, i). Requires |i - j| <= bw.
  void add(int i, int j, double v) {
    if (i < j) std::swap(i, j);
    at(i, j) += v;
  }
  double operator()(int i, int j) const;
  void add_diagonal(double v);

  Eigen::VectorXd diagonal() const;
  Eigen::VectorXd multiply(const Eigen::VectorXd& x) const;
  Eigen::MatrixXd to_dense() const;

  // Raw access for the factorization: element (i, j), i >= j, i - j <= bw.
  double& at(int i, int j) { return data_[static_cast<std::size_t>(i) * (bw_ + 1) + (j - i + bw_)]; }
  double at(int i, int j) const {
    return data_[static_cast<std::size_t>(i) * (bw_ + 1) + (j - i + bw_)];
  }

 private:
  int n_ = 0;
  int bw_ = 0;
  std::vector<double> data_;
};

/// Banded Cholesky with symmetric Jacobi equilibration: factors
/// S A' S = L L^T with A' the shifted matrix and S = diag(1/sqrt(a'_ii)). O(n bw^2).
class BandCholesky {
 public:
  /// Factors A + shift I + relative_shift diag(A). Returns false if the
  /// equilibrated matrix is not numerically positive definite.
  bool compute(const SymBandMatrix& A, double shift = 0.0, double relative_shift = 0.0);

  void solve_in_place(Eigen::VectorXd& b) const;
  /// Solves for every column of a row-major right-hand side block.
  void solve_in_place(RowMatrix& B) const;

  /// With A' = S^-1 L L^T S^-1 (S the equilibration scaling): B <- L^-1 S B,
  /// so that B^T B = B0^T A'^-1 B0.
  void forward_in_place(RowMatrix& B) const;
  void forward_in_place(Eigen::VectorXd& b) const;

  /// log det of the shifted matrix.
  double log_determinant() const;

  bool ok() const { return ok_; }

 private:
  SymBandMatrix L_;
  Eigen::VectorXd scale_;
  bool ok_ = false;
};

}  // namespace odrid
