#pragma once

// Reference computations that share no code with the library. Each one takes
// the slow, explicit route: full matrices, SVD pseudo-inverses, quadrature,
// extended precision where cancellation would otherwise bite.

#include "curveclust/dataspec.hpp"
#include "curveclust/pls_solver.hpp"

#include <Eigen/Dense>

#include <algorithm>
#include <cmath>
#include <functional>
#include <numbers>
#include <random>
#include <vector>

namespace oracle {

using Eigen::Index;
using Eigen::MatrixXd;
using Eigen::VectorXd;
using curveclust::FunctionalDataset;
using curveclust::Knot;
using curveclust::Structure;

inline double simpson(const std::function<double(double)>& f, double a, double b, double fa, double fm,
                      double fb, double whole, double tol, int depth) {
  const double m = 0.5 * (a + b);
  const double lm = f(0.5 * (a + m)), rm = f(0.5 * (m + b));
  const double left = (m - a) / 6.0 * (fa + 4.0 * lm + fm);
  const double right = (b - m) / 6.0 * (fm + 4.0 * rm + fb);
  if (depth <= 0 || std::abs(left + right - whole) <= 15.0 * tol)
    return left + right + (left + right - whole) / 15.0;
  return simpson(f, a, m, fa, lm, fm, left, tol / 2, depth - 1) +
         simpson(f, m, b, fm, rm, fb, right, tol / 2, depth - 1);
}

// Adaptive Simpson on [a, b].
inline double integrate(const std::function<double(double)>& f, double a, double b, double tol = 1e-13) {
  const double fa = f(a), fb = f(b), fm = f(0.5 * (a + b));
  return simpson(f, a, b, fa, fm, fb, (b - a) / 6.0 * (fa + 4.0 * fm + fb), tol, 50);
}

inline double cross_quadrature(double t1, double t2) {
  return integrate([&](double u) { return std::max(t1 - u, 0.0) * std::max(t2 - u, 0.0); }, 0.0, 1.0);
}

// Same integral expanded as a polynomial in m = min(s, t).
inline double cross(double s, double t) {
  const double m = std::min(s, t);
  return s * t * m - (s + t) * m * m / 2.0 + m * m * m / 3.0;
}

inline VectorXd basis(double t, int tau, int a, Structure st) {
  std::vector<double> v{1.0, t};
  for (int j = 1; j < a; ++j) v.push_back((tau == j ? 1.0 : 0.0) - 1.0 / a);
  if (st == Structure::Interaction)
    for (int j = 1; j < a; ++j) v.push_back(((tau == j ? 1.0 : 0.0) - 1.0 / a) * t);
  return Eigen::Map<VectorXd>(v.data(), static_cast<Index>(v.size()));
}

inline double kernel(const Knot& x1, const Knot& x2, int a, double theta12) {
  const double k = cross(x1.t, x2.t);
  return k + theta12 * ((x1.tau == x2.tau ? 1.0 : 0.0) - 1.0 / a) * k;
}

// Pseudo-inverse through the SVD, singular values below rel_tol * max dropped.
inline MatrixXd pinv(const MatrixXd& m, double rel_tol = 1e-12) {
  Eigen::JacobiSVD<MatrixXd> svd(m, Eigen::ComputeFullU | Eigen::ComputeFullV);
  const VectorXd& s = svd.singularValues();
  const double cut = s.size() > 0 ? rel_tol * s(0) : 0.0;
  VectorXd inv = VectorXd::Zero(s.size());
  for (Index i = 0; i < s.size(); ++i)
    if (s(i) > cut) inv(i) = 1.0 / s(i);
  return svd.matrixV().leftCols(s.size()) * inv.asDiagonal() * svd.matrixU().leftCols(s.size()).transpose();
}

// Symmetric pseudo-inverse from the eigendecomposition.
inline MatrixXd spectral_pinv(const MatrixXd& c, double rel_tol = 1e-10) {
  Eigen::SelfAdjointEigenSolver<MatrixXd> es(c);
  const VectorXd& ev = es.eigenvalues();
  const double cut = rel_tol * ev.cwiseAbs().maxCoeff();
  VectorXd inv = VectorXd::Zero(ev.size());
  for (Index i = 0; i < ev.size(); ++i)
    if (std::abs(ev(i)) > cut) inv(i) = 1.0 / ev(i);
  return es.eigenvectors() * inv.asDiagonal() * es.eigenvectors().transpose();
}

struct Explicit {
  MatrixXd S, R, Q, Z;  // Z: N x n*p block diagonal
  std::vector<Knot> knots;
  VectorXd y;
  VectorXd row_w;       // observation weights
};

// Every observation point becomes a knot; nothing is dropped or merged.
inline Explicit explicit_design(const FunctionalDataset& data, int p, double theta12) {
  const auto& dom = data.domain();
  const int a = dom.factor_levels;
  Explicit e;
  e.knots = data.knots();
  const auto N = static_cast<Index>(data.total_obs());
  const auto T = static_cast<Index>(e.knots.size());
  const auto n = static_cast<Index>(data.n_subjects());
  const Index m = basis(0.5, 1, a, dom.structure).size();
  e.S.resize(N, m);
  e.R.resize(N, T);
  e.Z = MatrixXd::Zero(N, n * p);
  e.y.resize(N);
  Index r = 0;
  for (Index i = 0; i < n; ++i) {
    for (const auto& o : data.subjects()[static_cast<std::size_t>(i)].obs) {
      e.S.row(r) = basis(o.t, o.tau, a, dom.structure).transpose();
      for (Index j = 0; j < T; ++j)
        e.R(r, j) = kernel({o.t, o.tau}, e.knots[static_cast<std::size_t>(j)], a, theta12);
      e.Z(r, i * p) = 1.0;
      if (p == 2) e.Z(r, i * p + 1) = o.t;
      e.y(r) = o.y;
      ++r;
    }
  }
  e.Q.resize(T, T);
  for (Index j = 0; j < T; ++j)
    for (Index k = 0; k < T; ++k)
      e.Q(j, k) = kernel(e.knots[static_cast<std::size_t>(j)], e.knots[static_cast<std::size_t>(k)], a, theta12);
  return e;
}

struct HendersonSolution {
  VectorXd fitted;  // S d + R c + Z b
  VectorXd b;
  MatrixXd A;       // smoothing matrix on the weighted scale
  double trace = 0.0;
  double rss = 0.0;
  double gcv = 0.0;
};

// Minimizes sum_i w_i (|y_i - S_i d - R_i c - Z_i b_i|^2 + b_i' Omega b_i) + N lambda c'Qc
// with one dense pseudo-inverse of the whole block system.
inline HendersonSolution henderson(const FunctionalDataset& data, int p, double theta12, double lambda,
                                   const MatrixXd& omega, const VectorXd& subject_w) {
  const Explicit e = explicit_design(data, p, theta12);
  const Index N = e.S.rows(), m = e.S.cols(), T = e.R.cols(), np = e.Z.cols();
  const auto n = static_cast<Index>(data.n_subjects());
  VectorXd w(N);
  for (Index i = 0; i < n; ++i) {
    const auto lo = static_cast<Index>(data.offset(static_cast<std::size_t>(i)));
    const auto len = static_cast<Index>(data.subjects()[static_cast<std::size_t>(i)].obs.size());
    w.segment(lo, len).setConstant(subject_w(i));
  }
  MatrixXd X(N, m + T + np);
  X << e.S, e.R, e.Z;
  MatrixXd P = MatrixXd::Zero(m + T + np, m + T + np);
  P.block(m, m, T, T) = static_cast<double>(N) * lambda * e.Q;
  for (Index i = 0; i < n; ++i) P.block(m + T + i * p, m + T + i * p, p, p) = subject_w(i) * omega;
  const MatrixXd M = X.transpose() * w.asDiagonal() * X + P;
  const MatrixXd Mp = pinv(M);
  const VectorXd coef = Mp * (X.transpose() * (w.asDiagonal() * e.y));

  HendersonSolution s;
  s.fitted = X * coef;
  s.b = coef.tail(np);
  const VectorXd sw = w.cwiseSqrt();
  s.A = sw.asDiagonal() * X * Mp * X.transpose() * sw.asDiagonal();
  s.trace = s.A.trace();
  const VectorXd yw = sw.asDiagonal() * e.y;
  s.rss = (yw - s.A * yw).squaredNorm();
  const double nn = static_cast<double>(N);
  s.gcv = (s.rss / nn) / std::pow((nn - s.trace) / nn, 2);
  return s;
}

// log N(y; mean, Z B Z' + sigma2 I) from the dense covariance.
inline double mvn_logpdf(const VectorXd& y, const VectorXd& mean, const MatrixXd& Z, const MatrixXd& B,
                         double sigma2) {
  const Index n = y.size();
  const MatrixXd cov = Z * B * Z.transpose() + sigma2 * MatrixXd::Identity(n, n);
  Eigen::LLT<MatrixXd> llt(cov);
  const VectorXd r = y - mean;
  const VectorXd half = llt.matrixL().solve(r);
  double logdet = 0.0;
  for (Index i = 0; i < n; ++i) logdet += 2.0 * std::log(llt.matrixL()(i, i));
  return -0.5 * (static_cast<double>(n) * std::log(2.0 * std::numbers::pi) + logdet + half.squaredNorm());
}

// Posterior of mu(x) + z'b under the Gaussian prior whose limit defines the
// penalized fit: d ~ N(0, tau2 I), smooth part ~ GP(0, s R_M) with
// s = sigma2 / (N lambda), b_i ~ N(0, sigma2 Omega^{-1} / w_i), noise sigma2 / w_i.
// tau2 is finite (1e8 times the response scale), computed in long double.
struct GaussianPosterior {
  std::vector<double> mean, variance;
};

inline GaussianPosterior diffuse_posterior(const FunctionalDataset& data, int p, double theta12, double lambda,
                                           const MatrixXd& omega, double sigma2, const VectorXd& subject_w,
                                           const std::vector<Knot>& grid, const MatrixXd& zq) {
  using LMat = Eigen::Matrix<long double, Eigen::Dynamic, Eigen::Dynamic>;
  using LVec = Eigen::Matrix<long double, Eigen::Dynamic, 1>;
  const Explicit e = explicit_design(data, p, theta12);
  const auto& dom = data.domain();
  const int a = dom.factor_levels;
  const Index N = e.S.rows(), np = e.Z.cols();
  const auto n = static_cast<Index>(data.n_subjects());

  const long double scale = std::max<long double>(1.0L, e.y.cwiseAbs2().mean());
  const long double tau2 = 1e8L * scale;
  const long double s_smooth = sigma2 / (static_cast<double>(N) * lambda);
  const MatrixXd omega_inv = omega.inverse();
  LMat Bblk = LMat::Zero(np, np);
  for (Index i = 0; i < n; ++i)
    Bblk.block(i * p, i * p, p, p) = (sigma2 * omega_inv / subject_w(i)).cast<long double>();

  const LMat S = e.S.cast<long double>();
  const LMat Z = e.Z.cast<long double>();
  // smooth part: covariance s * xi(u)^T Q^+ xi(v) over the knot representers
  const LMat Qp = pinv(e.Q).cast<long double>();
  const LMat R = e.R.cast<long double>();
  const LMat K = R * Qp * R.transpose();
  LMat cov = tau2 * S * S.transpose() + s_smooth * K + Z * Bblk * Z.transpose();
  Index r = 0;
  for (Index i = 0; i < n; ++i)
    for (std::size_t j = 0; j < data.subjects()[static_cast<std::size_t>(i)].obs.size(); ++j, ++r)
      cov(r, r) += sigma2 / subject_w(i);
  Eigen::LDLT<LMat> ldlt(cov);
  const LVec y = e.y.cast<long double>();
  const LVec alpha = ldlt.solve(y);

  GaussianPosterior out;
  for (std::size_t g = 0; g < grid.size(); ++g) {
    const LVec phi = basis(grid[g].t, grid[g].tau, a, dom.structure).cast<long double>();
    LVec z = LVec::Zero(np);
    if (zq.cols() == 1) z = zq.col(0).cast<long double>();
    if (zq.cols() > 1) z = zq.col(static_cast<Index>(g)).cast<long double>();
    LVec xi(e.knots.size());
    for (std::size_t j = 0; j < e.knots.size(); ++j) xi(static_cast<Index>(j)) = kernel(e.knots[j], grid[g], a, theta12);
    const LVec qxi = Qp * xi;
    const LVec cfy = tau2 * S * phi + s_smooth * (R * qxi) + Z * (Bblk * z);
    const long double vf = tau2 * phi.squaredNorm() + s_smooth * xi.dot(qxi) + z.dot(Bblk * z);
    out.mean.push_back(static_cast<double>(cfy.dot(alpha)));
    out.variance.push_back(static_cast<double>(vf - cfy.dot(ldlt.solve(cfy))));
  }
  return out;
}

// Small random dataset: n subjects, 2..max_obs observations each on a shared
// time lattice so knots repeat across subjects.
inline FunctionalDataset random_dataset(std::mt19937_64& rng, int n, int max_obs, int a, Structure st,
                                        bool include_zero = false) {
  std::uniform_int_distribution<int> count(3, max_obs);
  std::uniform_int_distribution<int> slot(include_zero ? 0 : 1, 12);
  std::uniform_int_distribution<int> level(1, a);
  std::normal_distribution<double> noise(0.0, 0.3);
  std::vector<curveclust::Subject> subjects;
  for (int i = 0; i < n; ++i) {
    curveclust::Subject s;
    s.id = "u" + std::to_string(i);
    const double shift = noise(rng);
    const int k = count(rng);
    for (int j = 0; j < k; ++j) {
      const double t = slot(rng) / 12.0;
      const int tau = level(rng);
      s.obs.push_back({t, tau, std::sin(4.0 * t) + 0.5 * tau + shift + noise(rng)});
    }
    subjects.push_back(std::move(s));
  }
  curveclust::DomainSpec d;
  d.factor_levels = a;
  d.structure = st;
  return FunctionalDataset(std::move(subjects), d);
}

// Backward error of the weighted block system in the solver's own coordinates.
inline double normal_residual(const curveclust::Design& ds, const VectorXd& y, const VectorXd& w,
                              const curveclust::SmoothingParams& sp, const curveclust::PLSSolution& sol) {
  const Index N = ds.rows(), m = ds.m(), T = ds.T(), p = ds.p(), n = ds.n_subjects();
  MatrixXd Zb = MatrixXd::Zero(N, n * p);
  VectorXd rw(N);
  for (Index i = 0; i < n; ++i) {
    Zb.block(ds.offsets[i], i * p, ds.subject_rows(i), p) = ds.Z.middleRows(ds.offsets[i], ds.subject_rows(i));
    rw.segment(ds.offsets[i], ds.subject_rows(i)).setConstant(w(i));
  }
  MatrixXd X(N, m + T + n * p);
  X << ds.S, ds.R(sp.theta12), Zb;
  MatrixXd P = MatrixXd::Zero(X.cols(), X.cols());
  P.block(m, m, T, T) = static_cast<double>(N) * sp.lambda * ds.Q(sp.theta12);
  for (Index i = 0; i < n; ++i) P.block(m + T + i * p, m + T + i * p, p, p) = w(i) * sp.omega;
  const MatrixXd M = X.transpose() * rw.asDiagonal() * X + P;
  const VectorXd rhs = X.transpose() * (rw.asDiagonal() * y);
  VectorXd x(X.cols());
  x << sol.d, sol.c, sol.b;
  // zero-weight subjects have no equation for their b
  for (Index i = 0; i < n; ++i)
    if (w(i) == 0.0) x.segment(m + T + i * p, p).setZero();
  return (M * x - rhs).norm() / (M.norm() * x.norm() + rhs.norm());
}

}  // namespace oracle
