#pragma once

#include <Eigen/Core>

#include <string>
#include <vector>

namespace odrid {

using Exponents = std::vector<int>;

/// Polynomial candidate library. Terms are ordered by total degree, then
/// lexicographically (descending exponent of x1, then x2, ...) within a degree,
/// so for three states the degree-2 block reads x1^2, x1x2, x1x3, x2^2, x2x3, x3^2.
struct LibrarySpec {
  int state_dim = 0;
  int poly_order = 0;
  bool include_constant = true;
  std::vector<Exponents> terms;

  int num_terms() const { return static_cast<int>(terms.size()); }

  /// Index of the term with the given exponents, or -1.
  int find(const Exponents& e) const;

  /// "1", "x1", "x1*x2", "x3^2".
  std::string term_name(int m) const;
};

LibrarySpec enumerate_terms(int state_dim, int poly_order, bool include_constant);

/// Binomial coefficient C(n, k).
long long binomial(int n, int k);

/// Row k, column m holds prod_j X(k, j)^e_mj, with 0^0 = 1.
Eigen::MatrixXd eval_theta(const LibrarySpec& spec, const Eigen::MatrixXd& X);

/// Single-state evaluation into a preallocated vector of length M.
void eval_theta_row(const LibrarySpec& spec, const double* x, double* out);

/// M x D matrix of first partials d(monomial m)/dx_e.
Eigen::MatrixXd eval_theta_jacobian(const LibrarySpec& spec, const Eigen::VectorXd& x);

/// Row-major M x D output buffer variant used on the hot path.
void eval_theta_jacobian_row(const LibrarySpec& spec, const double* x, double* out);

/// Second partials; element m is the symmetric D x D Hessian of monomial m.
std::vector<Eigen::MatrixXd> eval_theta_hessian(const LibrarySpec& spec,
                                                const Eigen::VectorXd& x);

/// Row-major M x D x D output buffer variant.
void eval_theta_hessian_row(const LibrarySpec& spec, const double* x, double* out);

}  // namespace odrid
