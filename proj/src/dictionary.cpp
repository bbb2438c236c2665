#include "odrid/dictionary.hpp"

#include <algorithm>
#include <functional>
#include <sstream>
#include <stdexcept>

namespace odrid {

namespace {

inline double ipow(double x, int e) {
  double r = 1.0;
  for (int i = 0; i < e; ++i) r *= x;
  return r;
}

// All exponent vectors of total degree `deg`, descending lexicographic.
void degree_block(int D, int deg, std::vector<Exponents>& out) {
  Exponents e(D, 0);
  std::function<void(int, int)> rec = [&](int j, int left) {
    if (j == D - 1) {
      e[j] = left;
      out.push_back(e);
      return;
    }
    for (int k = left; k >= 0; --k) {
      e[j] = k;
      rec(j + 1, left - k);
    }
  };
  rec(0, deg);
}

}  // namespace

long long binomial(int n, int k) {
  if (k < 0 || k > n) return 0;
  long long r = 1;
  for (int i = 1; i <= k; ++i) r = r * (n - k + i) / i;
  return r;
}

int LibrarySpec::find(const Exponents& e) const {
  auto it = std::find(terms.begin(), terms.end(), e);
  return it == terms.end() ? -1 : static_cast<int>(it - terms.begin());
}

std::string LibrarySpec::term_name(int m) const {
  const auto& e = terms.at(m);
  std::ostringstream os;
  bool first = true;
  for (int j = 0; j < state_dim; ++j) {
    if (e[j] == 0) continue;
    if (!first) os << '*';
    os << 'x' << (j + 1);
    if (e[j] > 1) os << '^' << e[j];
    first = false;
  }
  if (first) return "1";
  return os.str();
}

LibrarySpec enumerate_terms(int state_dim, int poly_order, bool include_constant) {
  if (state_dim < 1) throw std::invalid_argument("enumerate_terms: state_dim must be >= 1");
  if (poly_order < 1) throw std::invalid_argument("enumerate_terms: poly_order must be >= 1");
  LibrarySpec spec;
  spec.state_dim = state_dim;
  spec.poly_order = poly_order;
  spec.include_constant = include_constant;
  for (int deg = include_constant ? 0 : 1; deg <= poly_order; ++deg) {
    degree_block(state_dim, deg, spec.terms);
  }
  return spec;
}

void eval_theta_row(const LibrarySpec& spec, const double* x, double* out) {
  const int D = spec.state_dim;
  for (std::size_t m = 0; m < spec.terms.size(); ++m) {
    const auto& e = spec.terms[m];
    double v = 1.0;
    for (int j = 0; j < D; ++j) v *= ipow(x[j], e[j]);
    out[m] = v;
  }
}

Eigen::MatrixXd eval_theta(const LibrarySpec& spec, const Eigen::MatrixXd& X) {
  if (X.cols() != spec.state_dim) {
    throw std::invalid_argument("eval_theta: X has " + std::to_string(X.cols()) +
                                " columns, library expects " +
                                std::to_string(spec.state_dim));
  }
  const int M = spec.num_terms();
  const int D = spec.state_dim;
  Eigen::MatrixXd out(X.rows(), M);
  std::vector<double> x(D), row(M);
  for (Eigen::Index k = 0; k < X.rows(); ++k) {
    for (int j = 0; j < D; ++j) x[j] = X(k, j);
    eval_theta_row(spec, x.data(), row.data());
    for (int m = 0; m < M; ++m) out(k, m) = row[m];
  }
  return out;
}

void eval_theta_jacobian_row(const LibrarySpec& spec, const double* x, double* out) {
  const int D = spec.state_dim;
  for (std::size_t m = 0; m < spec.terms.size(); ++m) {
    const auto& e = spec.terms[m];
    for (int f = 0; f < D; ++f) {
      double v = 0.0;
      if (e[f] > 0) {
        v = e[f] * ipow(x[f], e[f] - 1);
        for (int j = 0; j < D; ++j) {
          if (j != f) v *= ipow(x[j], e[j]);
        }
      }
      out[m * D + f] = v;
    }
  }
}

Eigen::MatrixXd eval_theta_jacobian(const LibrarySpec& spec, const Eigen::VectorXd& x) {
  if (x.size() != spec.state_dim) {
    throw std::invalid_argument("eval_theta_jacobian: state dimension mismatch");
  }
  const int M = spec.num_terms();
  const int D = spec.state_dim;
  std::vector<double> buf(static_cast<std::size_t>(M) * D);
  eval_theta_jacobian_row(spec, x.data(), buf.data());
  Eigen::MatrixXd J(M, D);
  for (int m = 0; m < M; ++m)
    for (int f = 0; f < D; ++f) J(m, f) = buf[m * D + f];
  return J;
}

void eval_theta_hessian_row(const LibrarySpec& spec, const double* x, double* out) {
  const int D = spec.state_dim;
  for (std::size_t m = 0; m < spec.terms.size(); ++m) {
    const auto& e = spec.terms[m];
    double* H = out + m * D * D;
    for (int f = 0; f < D; ++f) {
      for (int g = f; g < D; ++g) {
        double v = 0.0;
        if (f == g) {
          if (e[f] >= 2) {
            v = e[f] * (e[f] - 1) * ipow(x[f], e[f] - 2);
            for (int j = 0; j < D; ++j)
              if (j != f) v *= ipow(x[j], e[j]);
          }
        } else if (e[f] >= 1 && e[g] >= 1) {
          v = e[f] * ipow(x[f], e[f] - 1) * e[g] * ipow(x[g], e[g] - 1);
          for (int j = 0; j < D; ++j)
            if (j != f && j != g) v *= ipow(x[j], e[j]);
        }
        H[f * D + g] = v;
        H[g * D + f] = v;
      }
    }
  }
}

std::vector<Eigen::MatrixXd> eval_theta_hessian(const LibrarySpec& spec,
                                                const Eigen::VectorXd& x) {
  if (x.size() != spec.state_dim) {
    throw std::invalid_argument("eval_theta_hessian: state dimension mismatch");
  }
  const int M = spec.num_terms();
  const int D = spec.state_dim;
  std::vector<double> buf(static_cast<std::size_t>(M) * D * D);
  eval_theta_hessian_row(spec, x.data(), buf.data());
  std::vector<Eigen::MatrixXd> out(M, Eigen::MatrixXd(D, D));
  for (int m = 0; m < M; ++m)
    for (int f = 0; f < D; ++f)
      for (int g = 0; g < D; ++g) out[m](f, g) = buf[(m * D + f) * D + g];
  return out;
}

}  // namespace odrid
