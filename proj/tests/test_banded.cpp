#include "doctest.h"
#include "odrid/banded.hpp"

#include <Eigen/Dense>

#include <random>

using namespace odrid;

namespace {

SymBandMatrix random_spd(int n, int bw, std::mt19937_64& g) {
  std::normal_distribution<double> nd;
  SymBandMatrix A(n, bw);
  // B B^T with B lower banded of bandwidth bw/2 keeps A within the band.
  Eigen::MatrixXd B = Eigen::MatrixXd::Zero(n, n);
  for (int i = 0; i < n; ++i)
    for (int j = std::max(0, i - bw / 2); j <= i; ++j) B(i, j) = nd(g);
  Eigen::MatrixXd D = B * B.transpose();
  D.diagonal().array() += 0.5;
  for (int i = 0; i < n; ++i)
    for (int j = std::max(0, i - bw); j <= i; ++j) A.add(i, j, i == j ? D(i, j) : D(i, j));
  return A;
}

}  // namespace

TEST_CASE("band storage round trip") {
  SymBandMatrix A(5, 2);
  A.add(3, 1, 2.0);
  A.add(1, 3, 1.0);
  A.add(2, 2, 4.0);
  CHECK(A(3, 1) == 3.0);
  CHECK(A(1, 3) == 3.0);
  CHECK(A(0, 4) == 0.0);
  const Eigen::MatrixXd D = A.to_dense();
  CHECK(D == D.transpose());
  const Eigen::VectorXd x = Eigen::VectorXd::LinSpaced(5, 1, 5);
  CHECK((A.multiply(x) - D * x).norm() < 1e-14);
}

TEST_CASE("banded Cholesky matches dense LLT") {
  std::mt19937_64 g(2);
  for (int trial = 0; trial < 5; ++trial) {
    const int n = 40, bw = 6;
    const SymBandMatrix A = random_spd(n, bw, g);
    const Eigen::MatrixXd D = A.to_dense();
    BandCholesky c;
    REQUIRE(c.compute(A));
    Eigen::VectorXd b = Eigen::VectorXd::Random(n);
    Eigen::VectorXd x = b;
    c.solve_in_place(x);
    CHECK((D * x - b).norm() < 1e-10 * b.norm() * D.norm());
    Eigen::LLT<Eigen::MatrixXd> llt(D);
    const double ld = 2.0 * llt.matrixL().toDenseMatrix().diagonal().array().log().sum();
    CHECK(c.log_determinant() == doctest::Approx(ld).epsilon(1e-12));

    RowMatrix B = RowMatrix::Random(n, 3);
    RowMatrix X = B;
    c.solve_in_place(X);
    CHECK((D * X - B).norm() < 1e-10 * B.norm() * D.norm());

    // B^T A^-1 B from the forward half-solve.
    RowMatrix W = B;
    c.forward_in_place(W);
    const Eigen::MatrixXd ref = B.transpose() * D.llt().solve(Eigen::MatrixXd(B));
    CHECK((W.transpose() * W - ref).norm() < 1e-10 * ref.norm());

    // Shifts.
    REQUIRE(c.compute(A, 2.0, 0.5));
    Eigen::MatrixXd Ds = D;
    Ds.diagonal() = D.diagonal() * 1.5 + Eigen::VectorXd::Constant(n, 2.0);
    Eigen::VectorXd y = b;
    c.solve_in_place(y);
    CHECK((Ds * y - b).norm() < 1e-10 * b.norm() * Ds.norm());
  }
}

TEST_CASE("indefinite matrices are reported") {
  SymBandMatrix A(3, 1);
  A.add(0, 0, 1.0);
  A.add(1, 1, 1.0);
  A.add(2, 2, 1.0);
  A.add(1, 0, 2.0);
  BandCholesky c;
  CHECK_FALSE(c.compute(A));
  CHECK_FALSE(c.ok());
}
