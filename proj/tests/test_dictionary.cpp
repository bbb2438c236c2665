#include "doctest.h"
#include "odrid/dictionary.hpp"

#include <cmath>
#include <random>
#include <set>

using namespace odrid;

namespace {

// Straightforward reference: pow() per factor.
double monomial(const Exponents& e, const Eigen::VectorXd& x) {
  double v = 1.0;
  for (std::size_t j = 0; j < e.size(); ++j) v *= std::pow(x[j], e[j]);
  return v;
}

}  // namespace

TEST_CASE("term list for three states, order two") {
  const LibrarySpec s = enumerate_terms(3, 2, true);
  REQUIRE(s.num_terms() == 10);
  const std::vector<std::string> names = {"1", "x1", "x2", "x3", "x1^2", "x1*x2", "x1*x3", "x2^2", "x2*x3", "x3^2"};
  for (int m = 0; m < 10; ++m) CHECK(s.term_name(m) == names[m]);
  CHECK(enumerate_terms(2, 3, true).num_terms() == 10);
  CHECK(enumerate_terms(3, 2, false).num_terms() == 9);
  CHECK(enumerate_terms(3, 2, false).term_name(0) == "x1");
}

TEST_CASE("term count formula and uniqueness, D <= 6, p <= 5") {
  for (int D = 1; D <= 6; ++D) {
    for (int p = 1; p <= 5; ++p) {
      // Count exponent vectors with total degree <= p by brute force.
      long long count = 0;
      std::vector<int> e(D, 0);
      while (true) {
        int tot = 0;
        for (int v : e) tot += v;
        if (tot <= p) ++count;
        int j = 0;
        while (j < D && ++e[j] > p) e[j++] = 0;
        if (j == D) break;
      }
      const LibrarySpec with = enumerate_terms(D, p, true);
      const LibrarySpec without = enumerate_terms(D, p, false);
      CHECK(with.num_terms() == count);
      CHECK(without.num_terms() == count - 1);
      std::set<Exponents> uniq(with.terms.begin(), with.terms.end());
      CHECK(uniq.size() == with.terms.size());
      for (std::size_t m = 1; m < with.terms.size(); ++m) {
        int a = 0, b = 0;
        for (int v : with.terms[m - 1]) a += v;
        for (int v : with.terms[m]) b += v;
        CHECK(a <= b);
      }
    }
  }
}

TEST_CASE("invalid library arguments") {
  CHECK_THROWS_AS(enumerate_terms(0, 2, true), std::invalid_argument);
  CHECK_THROWS_AS(enumerate_terms(2, 0, true), std::invalid_argument);
}

TEST_CASE("theta evaluation examples") {
  const LibrarySpec s = enumerate_terms(3, 2, true);
  Eigen::MatrixXd X(2, 3);
  X << 1, 2, 3, 0, 0, 0;
  const Eigen::MatrixXd T = eval_theta(s, X);
  const double row0[] = {1, 1, 2, 3, 1, 2, 3, 4, 6, 9};
  for (int m = 0; m < 10; ++m) {
    CHECK(T(0, m) == row0[m]);
    CHECK(T(1, m) == (m == 0 ? 1.0 : 0.0));
  }
  const LibrarySpec s1 = enumerate_terms(2, 1, true);
  Eigen::MatrixXd Y(1, 2);
  Y << -8, 8;
  const Eigen::MatrixXd T1 = eval_theta(s1, Y);
  CHECK(T1(0, 0) == 1.0);
  CHECK(T1(0, 1) == -8.0);
  CHECK(T1(0, 2) == 8.0);
  CHECK_THROWS_AS(eval_theta(s, Eigen::MatrixXd::Zero(2, 2)), std::invalid_argument);
}

TEST_CASE("theta matches the pow reference and the row variant") {
  std::mt19937_64 g(11);
  std::normal_distribution<double> n(0.0, 1.5);
  const LibrarySpec s = enumerate_terms(3, 4, true);
  Eigen::MatrixXd X(20, 3);
  for (int k = 0; k < 20; ++k)
    for (int e = 0; e < 3; ++e) X(k, e) = n(g);
  const Eigen::MatrixXd T = eval_theta(s, X);
  std::vector<double> row(s.num_terms());
  for (int k = 0; k < 20; ++k) {
    const Eigen::VectorXd x = X.row(k).transpose();
    double buf[3] = {x[0], x[1], x[2]};
    eval_theta_row(s, buf, row.data());
    for (int m = 0; m < s.num_terms(); ++m) {
      CHECK(T(k, m) == doctest::Approx(monomial(s.terms[m], x)).epsilon(1e-13));
      CHECK(row[m] == T(k, m));
    }
  }
}

TEST_CASE("jacobian examples") {
  const LibrarySpec s = enumerate_terms(2, 2, true);
  const int x1x2 = s.find({1, 1});
  const int x1sq = s.find({2, 0});
  const Eigen::MatrixXd J = eval_theta_jacobian(s, Eigen::Vector2d(2.0, 3.0));
  CHECK(J(x1x2, 0) == 3.0);
  CHECK(J(x1x2, 1) == 2.0);
  CHECK(J.row(0).isZero());
  CHECK(eval_theta_jacobian(s, Eigen::Vector2d(1.5, -4.0))(x1sq, 0) == 3.0);
}

TEST_CASE("jacobian against central differences") {
  std::mt19937_64 g(5);
  std::uniform_real_distribution<double> u(-3.0, 3.0);
  const LibrarySpec s = enumerate_terms(3, 3, true);
  for (int trial = 0; trial < 20; ++trial) {
    Eigen::VectorXd x(3);
    for (int e = 0; e < 3; ++e) x[e] = u(g);
    const Eigen::MatrixXd J = eval_theta_jacobian(s, x);
    for (int e = 0; e < 3; ++e) {
      const double h = 1e-5 * std::max(1.0, std::abs(x[e]));
      Eigen::VectorXd xp = x, xm = x;
      xp[e] += h;
      xm[e] -= h;
      for (int m = 0; m < s.num_terms(); ++m) {
        const double fd = (monomial(s.terms[m], xp) - monomial(s.terms[m], xm)) / (2 * h);
        CHECK(std::abs(J(m, e) - fd) <= 1e-7 * std::max(1.0, std::abs(fd)));
      }
    }
  }
}

TEST_CASE("hessian examples, symmetry and FD") {
  const LibrarySpec s = enumerate_terms(2, 3, true);
  const Eigen::Vector2d x(0.7, -1.3);
  const auto H = eval_theta_hessian(s, x);
  const int x1sq = s.find({2, 0}), x1x2 = s.find({1, 1});
  CHECK(H[x1sq](0, 0) == 2.0);
  CHECK(H[x1sq](0, 1) == 0.0);
  CHECK(H[x1sq](1, 1) == 0.0);
  CHECK(H[x1x2](0, 1) == 1.0);
  for (int m = 0; m < s.num_terms(); ++m) {
    CHECK(H[m] == H[m].transpose());
    int deg = 0;
    for (int v : s.terms[m]) deg += v;
    if (deg <= 1) CHECK(H[m].isZero());
    for (int e = 0; e < 2; ++e) {
      const double h = 1e-5;
      Eigen::VectorXd xp = x, xm = x;
      xp[e] += h;
      xm[e] -= h;
      const Eigen::VectorXd fd =
          (eval_theta_jacobian(s, xp).row(m) - eval_theta_jacobian(s, xm).row(m)).transpose() / (2 * h);
      CHECK((H[m].col(e) - fd).norm() <= 1e-7 * std::max(1.0, fd.norm()));
    }
  }
  std::vector<double> buf(s.num_terms() * 4);
  const double xr[2] = {x[0], x[1]};
  eval_theta_hessian_row(s, xr, buf.data());
  for (int m = 0; m < s.num_terms(); ++m)
    for (int e = 0; e < 2; ++e)
      for (int f = 0; f < 2; ++f) CHECK(buf[(m * 2 + e) * 2 + f] == H[m](e, f));
}
