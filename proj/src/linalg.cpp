#include "curveclust/linalg.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>

namespace curveclust {

using Eigen::Index;
using Eigen::MatrixXd;
using Eigen::VectorXd;

PivotedCholesky::PivotedCholesky(const MatrixXd& a, double rel_tol) {
  if (a.rows() != a.cols()) throw std::invalid_argument("pivoted Cholesky needs a square matrix");
  const Index n = a.rows();
  // symmetric diagonal scaling first, so the tolerance compares pivots on a
  // common scale even when blocks differ by many orders of magnitude
  scale_ = VectorXd::Ones(n);
  for (Index i = 0; i < n; ++i)
    if (a(i, i) > 0.0) scale_(i) = 1.0 / std::sqrt(a(i, i));
  MatrixXd w = scale_.asDiagonal() * a * scale_.asDiagonal();
  perm_.resize(n);
  for (Index i = 0; i < n; ++i) perm_(i) = static_cast<int>(i);
  l_ = MatrixXd::Zero(n, n);

  const double max_diag = n > 0 ? w.diagonal().maxCoeff() : 0.0;
  const double threshold = rel_tol * std::max(max_diag, 0.0);
  rank_ = 0;
  if (!(max_diag > 0.0)) {
    l_.resize(n, 0);
    return;
  }

  for (Index k = 0; k < n; ++k) {
    Index piv = k;
    double best = w(k, k);
    for (Index i = k + 1; i < n; ++i)
      if (w(i, i) > best) {
        best = w(i, i);
        piv = i;
      }
    if (!(best > threshold)) break;

    if (piv != k) {
      // symmetric swap of row/col k and piv in the working matrix and in L
      w.row(k).swap(w.row(piv));
      w.col(k).swap(w.col(piv));
      l_.row(k).swap(l_.row(piv));
      std::swap(perm_(k), perm_(piv));
    }

    const double d = std::sqrt(w(k, k));
    l_(k, k) = d;
    const Index rest = n - k - 1;
    if (rest > 0) {
      l_.col(k).tail(rest) = w.col(k).tail(rest) / d;
      w.bottomRightCorner(rest, rest).noalias() -=
          l_.col(k).tail(rest) * l_.col(k).tail(rest).transpose();
    }
    ++rank_;
  }
  l_.conservativeResize(n, rank_);
}

bool PivotedCholesky::pivot_dropped(Index original_index) const {
  for (Index k = 0; k < rank_; ++k)
    if (perm_(k) == original_index) return false;
  return true;
}

MatrixXd PivotedCholesky::solve(const MatrixXd& b) const {
  const Index n = size();
  MatrixXd bp(rank_, b.cols());
  for (Index k = 0; k < rank_; ++k) bp.row(k) = scale_(perm_(k)) * b.row(perm_(k));
  const auto l11 = l_.topRows(rank_).triangularView<Eigen::Lower>();
  l11.solveInPlace(bp);
  l11.transpose().solveInPlace(bp);
  MatrixXd x = MatrixXd::Zero(n, b.cols());
  for (Index k = 0; k < rank_; ++k) x.row(perm_(k)) = scale_(perm_(k)) * bp.row(k);
  return x;
}

VectorXd PivotedCholesky::solve(const VectorXd& b) const {
  return solve(MatrixXd(b)).col(0);
}

MatrixXd PivotedCholesky::generalized_inverse() const {
  return solve(MatrixXd(MatrixXd::Identity(size(), size())));
}

double PivotedCholesky::trace_product(const MatrixXd& g) const {
  // tr(L11^{-1} G11 L11^{-T}) with G11 the retained pivot block of P^T G P
  MatrixXd g11(rank_, rank_);
  for (Index i = 0; i < rank_; ++i)
    for (Index j = 0; j < rank_; ++j)
      g11(i, j) = scale_(perm_(i)) * g(perm_(i), perm_(j)) * scale_(perm_(j));
  const auto l11 = l_.topRows(rank_).triangularView<Eigen::Lower>();
  l11.solveInPlace(g11);                      // L^{-1} G
  MatrixXd t = g11.transpose();               // G L^{-T}
  l11.solveInPlace(t);                        // L^{-1} G L^{-T}
  return t.trace();
}

double PivotedCholesky::inverse_quadratic(const VectorXd& x) const {
  VectorXd xp(rank_);
  for (Index k = 0; k < rank_; ++k) xp(k) = scale_(perm_(k)) * x(perm_(k));
  l_.topRows(rank_).triangularView<Eigen::Lower>().solveInPlace(xp);
  return xp.squaredNorm();
}

MatrixXd PivotedCholesky::unpermuted_factor() const {
  MatrixXd f(size(), rank_);
  for (Index k = 0; k < size(); ++k) f.row(perm_(k)) = l_.row(k) / scale_(perm_(k));
  return f;
}

namespace {

MatrixXd geninv_from_factor(const MatrixXd& f) {
  if (f.cols() == 0) return MatrixXd::Zero(f.rows(), f.rows());
  const MatrixXd m = (f.transpose() * f).ldlt().solve(MatrixXd::Identity(f.cols(), f.cols()));
  return f * m * m * f.transpose();
}

}  // namespace

MatrixXd pseudo_inverse(const MatrixXd& c, double tol) {
  if (c.rows() != c.cols()) throw std::invalid_argument("pseudo_inverse expects a square matrix");
  const Index n = c.rows();
  if (n == 0) return c;
  const double scale = c.cwiseAbs().maxCoeff();
  if (scale == 0.0) return MatrixXd::Zero(n, n);

  const PivotedCholesky chol(c, tol);
  const MatrixXd f = chol.unpermuted_factor();
  const double recon = (c - f * f.transpose()).cwiseAbs().maxCoeff();
  if (recon <= std::sqrt(tol) * scale) return geninv_from_factor(f);

  // indefinite: C^+ = (C^T C)^+ C^T, and C^T C is PSD
  const MatrixXd g = c.transpose() * c;
  const PivotedCholesky gchol(g, tol * tol);
  return geninv_from_factor(gchol.unpermuted_factor()) * c.transpose();
}

double penrose_residual(const MatrixXd& c, const MatrixXd& c_plus) {
  const double c_scale = std::max(c.cwiseAbs().maxCoeff(), 1e-300);
  const double p_scale = std::max(c_plus.cwiseAbs().maxCoeff(), 1e-300);
  const MatrixXd cc = c * c_plus;
  const MatrixXd pc = c_plus * c;
  // projections are dimensionless; the other two are scaled by their matrix
  double r = (cc * c - c).cwiseAbs().maxCoeff() / c_scale;
  r = std::max(r, (pc * c_plus - c_plus).cwiseAbs().maxCoeff() / p_scale);
  r = std::max(r, (cc - cc.transpose()).cwiseAbs().maxCoeff());
  r = std::max(r, (pc - pc.transpose()).cwiseAbs().maxCoeff());
  return r;
}

}  // namespace curveclust
