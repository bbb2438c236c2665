#include "odrid/banded.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>

namespace odrid {

namespace {

// y -= a * x; restrict lets the compiler vectorize.
inline void axpy_sub(double* __restrict y, const double* __restrict x, double a, Eigen::Index n) {
  for (Eigen::Index c = 0; c < n; ++c) y[c] -= a * x[c];
}

// Four partial sums so the short band dot products pipeline.
inline double dot(const double* __restrict a, const double* __restrict b, int n) {
  double s0 = 0.0, s1 = 0.0, s2 = 0.0, s3 = 0.0;
  int k = 0;
  for (; k + 4 <= n; k += 4) {
    s0 += a[k] * b[k];
    s1 += a[k + 1] * b[k + 1];
    s2 += a[k + 2] * b[k + 2];
    s3 += a[k + 3] * b[k + 3];
  }
  for (; k < n; ++k) s0 += a[k] * b[k];
  return (s0 + s1) + (s2 + s3);
}

}  // namespace

SymBandMatrix::SymBandMatrix(int n, int bw)
    : n_(n), bw_(bw), data_(static_cast<std::size_t>(n) * (bw + 1), 0.0) {
  if (n < 0 || bw < 0) throw std::invalid_argument("SymBandMatrix: negative size");
}

void SymBandMatrix::set_zero() { std::fill(data_.begin(), data_.end(), 0.0); }

double SymBandMatrix::operator()(int i, int j) const {
  if (i < j) std::swap(i, j);
  if (i - j > bw_) return 0.0;
  return at(i, j);
}

void SymBandMatrix::add_diagonal(double v) {
  for (int i = 0; i < n_; ++i) at(i, i) += v;
}

Eigen::VectorXd SymBandMatrix::diagonal() const {
  Eigen::VectorXd d(n_);
  for (int i = 0; i < n_; ++i) d[i] = at(i, i);
  return d;
}

Eigen::VectorXd SymBandMatrix::multiply(const Eigen::VectorXd& x) const {
  Eigen::VectorXd y = Eigen::VectorXd::Zero(n_);
  for (int i = 0; i < n_; ++i) {
    const int j0 = std::max(0, i - bw_);
    for (int j = j0; j < i; ++j) {
      const double a = at(i, j);
      y[i] += a * x[j];
      y[j] += a * x[i];
    }
    y[i] += at(i, i) * x[i];
  }
  return y;
}

Eigen::MatrixXd SymBandMatrix::to_dense() const {
  Eigen::MatrixXd M = Eigen::MatrixXd::Zero(n_, n_);
  for (int i = 0; i < n_; ++i) {
    for (int j = std::max(0, i - bw_); j <= i; ++j) {
      M(i, j) = at(i, j);
      M(j, i) = at(i, j);
    }
  }
  return M;
}

bool BandCholesky::compute(const SymBandMatrix& A, double shift, double relative_shift) {
  const int n = A.size();
  const int bw = A.bandwidth();
  L_ = A;
  scale_.resize(n);
  ok_ = false;
  for (int i = 0; i < n; ++i) {
    const double d = A.at(i, i) * (1.0 + relative_shift) + shift;
    if (!(d > 0.0) || !std::isfinite(d)) return false;
    scale_[i] = 1.0 / std::sqrt(d);
  }
  for (int i = 0; i < n; ++i) {
    const int j0 = std::max(0, i - bw);
    for (int j = j0; j <= i; ++j) L_.at(i, j) *= scale_[i] * scale_[j];
    L_.at(i, i) += (shift + relative_shift * A.at(i, i)) * scale_[i] * scale_[i];
  }
  // Row-oriented left-looking factorization; rows of L are contiguous.
  for (int i = 0; i < n; ++i) {
    const int k0 = std::max(0, i - bw);
    double* Li = &L_.at(i, k0);
    for (int j = k0; j <= i; ++j) {
      const int kk = std::max(k0, j - bw);
      const double* Lj = &L_.at(j, kk);
      const double* Lik = Li + (kk - k0);
      const double s = L_.at(i, j) - dot(Lik, Lj, j - kk);
      if (j < i) {
        L_.at(i, j) = s / L_.at(j, j);
      } else {
        if (!(s > 0.0) || !std::isfinite(s)) return false;
        L_.at(i, i) = std::sqrt(s);
      }
    }
  }
  ok_ = true;
  return true;
}

void BandCholesky::solve_in_place(Eigen::VectorXd& b) const {
  const int n = L_.size();
  const int bw = L_.bandwidth();
  for (int i = 0; i < n; ++i) b[i] *= scale_[i];
  for (int i = 0; i < n; ++i) {
    const int k0 = std::max(0, i - bw);
    double s = b[i];
    for (int k = k0; k < i; ++k) s -= L_.at(i, k) * b[k];
    b[i] = s / L_.at(i, i);
  }
  for (int i = n - 1; i >= 0; --i) {
    b[i] /= L_.at(i, i);
    const double bi = b[i];
    const int k0 = std::max(0, i - bw);
    for (int k = k0; k < i; ++k) b[k] -= L_.at(i, k) * bi;
  }
  for (int i = 0; i < n; ++i) b[i] *= scale_[i];
}

void BandCholesky::solve_in_place(RowMatrix& B) const {
  const int n = L_.size();
  const int bw = L_.bandwidth();
  const Eigen::Index m = B.cols();
  double* b = B.data();
  for (int i = 0; i < n; ++i) {
    double* bi = b + i * m;
    const double s = scale_[i];
    for (Eigen::Index c = 0; c < m; ++c) bi[c] *= s;
  }
  // Raw row loops: Eigen row expressions cost more than the arithmetic here.
  for (int i = 0; i < n; ++i) {
    double* bi = b + i * m;
    for (int k = std::max(0, i - bw); k < i; ++k) {
      const double l = L_.at(i, k);
      axpy_sub(bi, b + k * m, l, m);
    }
    const double inv = 1.0 / L_.at(i, i);
    for (Eigen::Index c = 0; c < m; ++c) bi[c] *= inv;
  }
  for (int i = n - 1; i >= 0; --i) {
    double* bi = b + i * m;
    const double inv = 1.0 / L_.at(i, i);
    for (Eigen::Index c = 0; c < m; ++c) bi[c] *= inv;
    for (int k = std::max(0, i - bw); k < i; ++k) {
      const double l = L_.at(i, k);
      axpy_sub(b + k * m, bi, l, m);
    }
  }
  for (int i = 0; i < n; ++i) {
    double* bi = b + i * m;
    const double s = scale_[i];
    for (Eigen::Index c = 0; c < m; ++c) bi[c] *= s;
  }
}

void BandCholesky::forward_in_place(RowMatrix& B) const {
  const int n = L_.size();
  const int bw = L_.bandwidth();
  const Eigen::Index m = B.cols();
  double* b = B.data();
  for (int i = 0; i < n; ++i) {
    double* bi = b + i * m;
    const double s = scale_[i];
    for (Eigen::Index c = 0; c < m; ++c) bi[c] *= s;
    for (int k = std::max(0, i - bw); k < i; ++k) {
      const double l = L_.at(i, k);
      axpy_sub(bi, b + k * m, l, m);
    }
    const double inv = 1.0 / L_.at(i, i);
    for (Eigen::Index c = 0; c < m; ++c) bi[c] *= inv;
  }
}

void BandCholesky::forward_in_place(Eigen::VectorXd& b) const {
  const int n = L_.size();
  const int bw = L_.bandwidth();
  for (int i = 0; i < n; ++i) {
    double s = b[i] * scale_[i];
    for (int k = std::max(0, i - bw); k < i; ++k) s -= L_.at(i, k) * b[k];
    b[i] = s / L_.at(i, i);
  }
}

double BandCholesky::log_determinant() const {
  double ld = 0.0;
  for (int i = 0; i < L_.size(); ++i) ld += 2.0 * std::log(L_.at(i, i)) - 2.0 * std::log(scale_[i]);
  return ld;
}

}  // namespace odrid
