#include "curveclust/pls_solver.hpp"

#include "curveclust/errors.hpp"

#include <cmath>
#include <string>

namespace curveclust {

using Eigen::Index;
using Eigen::MatrixXd;
using Eigen::VectorXd;

Design Design::build(const FunctionalDataset& data, const RandomEffectSpec& re,
                     std::size_t knot_cap) {
  Design d;
  d.domain = data.domain();
  d.re = re;
  d.knots = model_knots(data, knot_cap);
  d.knots_capped = d.knots.size() < model_knots(data, 0).size();

  auto comps = gram_components(d.domain, data, d.knots);
  d.S = std::move(comps.S);
  d.R_main = std::move(comps.R_main);
  d.R_inter = std::move(comps.R_inter);
  d.Q_main = std::move(comps.Q_main);
  d.Q_inter = std::move(comps.Q_inter);

  d.Z.resize(static_cast<Index>(data.total_obs()), re.p());
  d.offsets.reserve(data.n_subjects() + 1);
  for (std::size_t i = 0; i < data.n_subjects(); ++i) {
    const auto off = static_cast<Index>(data.offset(i));
    d.offsets.push_back(off);
    const MatrixXd zi = design_Z(data.subjects()[i], re);
    d.Z.middleRows(off, zi.rows()) = zi;
  }
  d.offsets.push_back(static_cast<Index>(data.total_obs()));
  return d;
}

MatrixXd Design::R(double theta12) const {
  if (!has_interaction() || theta12 == 0.0) return R_main;
  return R_main + theta12 * R_inter;
}

MatrixXd Design::Q(double theta12) const {
  if (!has_interaction() || theta12 == 0.0) return Q_main;
  return Q_main + theta12 * Q_inter;
}

VectorXd Design::population_fit(const VectorXd& d, const VectorXd& c, double theta12) const {
  VectorXd out = S * d + R_main * c;
  if (has_interaction() && theta12 != 0.0) out.noalias() += theta12 * (R_inter * c);
  return out;
}

double gcv_ratio(double rss, double trace_A, Index n_rows) {
  const double n = static_cast<double>(n_rows);
  const double resid_df = n - trace_A;
  if (!(resid_df > 1e-8 * n))
    throw NumericalError(NumericalError::Kind::DegenerateTrace,
                         "tr(I - A) = " + std::to_string(resid_df) + " is degenerate");
  const double denom = resid_df / n;
  return (rss / n) / (denom * denom);
}

double PLSSolution::gcv() const { return gcv_ratio(rss, trace_A, n_rows); }

namespace {

// Lower Cholesky factor of a small SPD matrix.
MatrixXd small_chol(const MatrixXd& m) {
  Eigen::LLT<MatrixXd> llt(m);
  if (llt.info() != Eigen::Success)
    throw NumericalError(NumericalError::Kind::SingularSystem, "random-effect block is not SPD");
  return llt.matrixL();
}

bool all_finite(const VectorXd& v) { return v.allFinite(); }

}  // namespace

PenalizedProblem::PenalizedProblem(std::shared_ptr<const Design> design, VectorXd y,
                                   VectorXd subject_weights)
    : design_(std::move(design)), y_(std::move(y)), w_(std::move(subject_weights)) {
  if (!design_) throw std::invalid_argument("PenalizedProblem: null design");
  const Design& ds = *design_;
  if (y_.size() != ds.rows())
    throw std::invalid_argument("PenalizedProblem: response length does not match design");
  if (w_.size() != ds.n_subjects())
    throw std::invalid_argument("PenalizedProblem: one weight per subject required");
  if (!all_finite(y_))
    throw NumericalError(NumericalError::Kind::NonFiniteInput, "non-finite response");
  if (!all_finite(w_) || (w_.array() < 0.0).any())
    throw NumericalError(NumericalError::Kind::NonFiniteInput, "weights must be finite and >= 0");

  const Index m = ds.m();
  const Index T = ds.T();
  const Index p = ds.p();
  dim_ = m + T;

  for (Index i = 0; i < ds.n_subjects(); ++i)
    if (w_(i) > 0.0) active_.push_back(i);
  if (active_.empty())
    throw NumericalError(NumericalError::Kind::SingularSystem, "no subject has positive weight");

  Index active_rows = 0;
  for (auto i : active_) active_rows += ds.subject_rows(i);

  MatrixXd xm(active_rows, dim_);
  MatrixXd xi;
  if (ds.has_interaction()) xi = MatrixXd::Zero(active_rows, dim_);
  VectorXd yw(active_rows);
  a_main_.resize(dim_, static_cast<Index>(active_.size()) * p);
  if (ds.has_interaction()) a_inter_.resize(dim_, a_main_.cols());
  ztz_.reserve(active_.size());
  zty_.reserve(active_.size());

  Index r = 0;
  for (std::size_t j = 0; j < active_.size(); ++j) {
    const Index i = active_[j];
    const Index off = ds.offsets[i];
    const Index ni = ds.subject_rows(i);
    const double sw = std::sqrt(w_(i));
    const auto zi = ds.Z.middleRows(off, ni);

    xm.block(r, 0, ni, m) = ds.S.middleRows(off, ni);
    xm.block(r, m, ni, T) = ds.R_main.middleRows(off, ni);
    a_main_.middleCols(static_cast<Index>(j) * p, p).noalias() = xm.middleRows(r, ni).transpose() * zi;
    if (ds.has_interaction()) {
      xi.block(r, m, ni, T) = ds.R_inter.middleRows(off, ni);
      a_inter_.middleCols(static_cast<Index>(j) * p, p).noalias() =
          xi.middleRows(r, ni).transpose() * zi;
    }
    ztz_.push_back(zi.transpose() * zi);
    zty_.push_back(zi.transpose() * y_.segment(off, ni));

    yw.segment(r, ni) = sw * y_.segment(off, ni);
    xm.middleRows(r, ni) *= sw;
    if (ds.has_interaction()) xi.middleRows(r, ni) *= sw;
    r += ni;
  }

  g_mm_ = MatrixXd::Zero(dim_, dim_);
  g_mm_.selfadjointView<Eigen::Lower>().rankUpdate(xm.transpose());
  g_mm_ = g_mm_.selfadjointView<Eigen::Lower>();
  h_m_ = xm.transpose() * yw;
  if (ds.has_interaction()) {
    g_ii_ = MatrixXd::Zero(dim_, dim_);
    g_ii_.selfadjointView<Eigen::Lower>().rankUpdate(xi.transpose());
    g_ii_ = g_ii_.selfadjointView<Eigen::Lower>();
    g_mi_ = xm.transpose() * xi;
    h_i_ = xi.transpose() * yw;
  }
  ywy_ = yw.squaredNorm();

  const PivotedCholesky s_block(g_mm_.topLeftCorner(m, m));
  s_rank_deficient_ = s_block.rank() < m;
}

void PenalizedProblem::validate(const SmoothingParams& params) const {
  if (!(params.lambda > 0.0) || !std::isfinite(params.lambda))
    throw NumericalError(NumericalError::Kind::NonFiniteInput, "lambda must be positive and finite");
  if (!(params.theta12 >= 0.0) || !std::isfinite(params.theta12))
    throw NumericalError(NumericalError::Kind::NonFiniteInput, "theta12 must be finite and >= 0");
  if (params.theta12 != 0.0 && !design_->has_interaction())
    throw std::invalid_argument("theta12 != 0 requires an interaction design");
  const Index p = design_->p();
  if (params.omega.rows() != p || params.omega.cols() != p)
    throw std::invalid_argument("omega must be p x p");
  if (!params.omega.allFinite())
    throw NumericalError(NumericalError::Kind::NonFiniteInput, "omega is not finite");
  if (s_rank_deficient_)
    throw NumericalError(NumericalError::Kind::SingularSystem,
                         "null-space basis is rank deficient on the weighted rows");
}

struct PenalizedProblem::Profiled {
  MatrixXd g;    // G(theta)
  MatrixXd h;    // profiled (d, c) block
  MatrixXd g2;   // X^T W M^2 X, for the trace
  VectorXd hv;   // X^T W y
  VectorXd rhs;  // X^T W M y
  MatrixXd a;    // X^T Z per active subject
  std::vector<MatrixXd> d_inv, k2;
  double trace_b = 0.0;
  PivotedCholesky chol;
  VectorXd f;
};

PenalizedProblem::Profiled PenalizedProblem::profile(const SmoothingParams& params,
                                                     bool want_g2) const {
  validate(params);
  const Design& ds = *design_;
  const Index p = ds.p();
  const Index T = ds.T();
  const double th = params.theta12;
  const auto na = static_cast<Index>(active_.size());

  Profiled pr;
  if (th != 0.0) {
    pr.g = g_mm_ + th * (g_mi_ + g_mi_.transpose()) + (th * th) * g_ii_;
    pr.hv = h_m_ + th * h_i_;
    pr.a = a_main_ + th * a_inter_;
  } else {
    pr.g = g_mm_;
    pr.hv = h_m_;
    pr.a = a_main_;
  }

  MatrixXd u1(dim_, na * p);
  MatrixXd u2;
  if (want_g2) u2.resize(dim_, na * p);
  pr.rhs = pr.hv;
  pr.d_inv.reserve(active_.size());
  pr.k2.reserve(active_.size());
  const MatrixXd two_omega = 2.0 * params.omega;
  for (Index j = 0; j < na; ++j) {
    const double w = w_(active_[static_cast<std::size_t>(j)]);
    const double sw = std::sqrt(w);
    const MatrixXd& ztz = ztz_[static_cast<std::size_t>(j)];
    const MatrixXd dmat = ztz + params.omega;
    Eigen::LLT<MatrixXd> llt(dmat);
    if (llt.info() != Eigen::Success)
      throw NumericalError(NumericalError::Kind::SingularSystem, "Z'Z + Omega is not SPD");
    MatrixXd dinv = llt.solve(MatrixXd::Identity(p, p));
    dinv = 0.5 * (dinv + dinv.transpose());
    const auto aj = pr.a.middleCols(j * p, p);

    pr.trace_b += (dinv * ztz).trace();
    u1.middleCols(j * p, p).noalias() = sw * (aj * small_chol(dinv));
    pr.rhs.noalias() -= w * (aj * (dinv * zty_[static_cast<std::size_t>(j)]));
    MatrixXd k2 = dinv * (ztz + two_omega) * dinv;
    k2 = 0.5 * (k2 + k2.transpose());
    if (want_g2) u2.middleCols(j * p, p).noalias() = sw * (aj * small_chol(k2));
    pr.d_inv.push_back(std::move(dinv));
    pr.k2.push_back(std::move(k2));
  }

  pr.h = pr.g;
  pr.h.selfadjointView<Eigen::Lower>().rankUpdate(u1, -1.0);
  pr.h = MatrixXd(pr.h.selfadjointView<Eigen::Lower>());
  const double n_lambda = static_cast<double>(n_rows()) * params.lambda;
  pr.h.bottomRightCorner(T, T) += n_lambda * ds.Q(th);

  if (want_g2) {
    pr.g2 = pr.g;
    pr.g2.selfadjointView<Eigen::Lower>().rankUpdate(u2, -1.0);
    pr.g2 = MatrixXd(pr.g2.selfadjointView<Eigen::Lower>());
  }

  pr.chol = PivotedCholesky(pr.h);
  for (Index k = 0; k < ds.m(); ++k)
    if (pr.chol.pivot_dropped(k))
      throw NumericalError(NumericalError::Kind::SingularSystem,
                           "null-space coefficient " + std::to_string(k) + " is not identifiable");
  pr.f = pr.chol.solve(pr.rhs);
  if (!pr.f.allFinite())
    throw NumericalError(NumericalError::Kind::SingularSystem, "non-finite solution");
  return pr;
}

PenalizedProblem::Summary PenalizedProblem::summarize(const SmoothingParams& params) const {
  const Profiled pr = profile(params, true);
  const Index p = design_->p();
  double rss = ywy_ - 2.0 * pr.f.dot(pr.hv) + pr.f.dot(pr.g * pr.f);
  for (std::size_t j = 0; j < active_.size(); ++j) {
    const VectorXd u = zty_[j] - pr.a.middleCols(static_cast<Index>(j) * p, p).transpose() * pr.f;
    rss -= w_(active_[j]) * u.dot(pr.k2[j] * u);
  }
  Summary s;
  s.rss = std::max(rss, 0.0);
  s.trace_A = pr.trace_b + pr.chol.trace_product(pr.g2);
  return s;
}

// Residual of the full system at (f, b(f)) with b eliminated exactly; returns
// its norm and the profiled right-hand side of the correction.
// With lambda near its lower bound |c| runs to 1e4 while the fit is O(1), so
// the double solve alone leaves ~1e-9 noise in fitted values.
double PenalizedProblem::residual(const Profiled& pr, const VectorXd& f, const SmoothingParams& params,
                                  VectorXd& correction_rhs) const {
  using Real = long double;
  const Design& ds = *design_;
  const Index m = ds.m();
  const Index T = ds.T();
  const Index p = ds.p();
  const double th = params.theta12;
  const bool inter = ds.has_interaction() && th != 0.0;

  std::vector<Real> rf(static_cast<std::size_t>(dim_), 0.0L);
  std::vector<Real> e;
  double norm2 = 0.0;
  correction_rhs = VectorXd::Zero(dim_);
  for (std::size_t j = 0; j < active_.size(); ++j) {
    const Index i = active_[j];
    const Index off = ds.offsets[i];
    const Index ni = ds.subject_rows(i);
    const double w = w_(i);
    const auto aj = pr.a.middleCols(static_cast<Index>(j) * p, p);
    const VectorXd bi = pr.d_inv[j] * (zty_[j] - aj.transpose() * f);

    e.assign(static_cast<std::size_t>(ni), 0.0L);
    for (Index r = 0; r < ni; ++r) {
      const Index row = off + r;
      Real v = y_(row);
      for (Index k = 0; k < m; ++k) v -= static_cast<Real>(ds.S(row, k)) * f(k);
      for (Index k = 0; k < T; ++k) {
        Real x = ds.R_main(row, k);
        if (inter) x += static_cast<Real>(th) * ds.R_inter(row, k);
        v -= x * f(m + k);
      }
      for (Index k = 0; k < p; ++k) v -= static_cast<Real>(ds.Z(row, k)) * bi(k);
      e[static_cast<std::size_t>(r)] = v;
    }
    for (Index r = 0; r < ni; ++r) {
      const Index row = off + r;
      const Real we = w * e[static_cast<std::size_t>(r)];
      for (Index k = 0; k < m; ++k) rf[static_cast<std::size_t>(k)] += we * ds.S(row, k);
      for (Index k = 0; k < T; ++k) {
        Real x = ds.R_main(row, k);
        if (inter) x += static_cast<Real>(th) * ds.R_inter(row, k);
        rf[static_cast<std::size_t>(m + k)] += we * x;
      }
    }
    // random-effect rows divided by w: Z'e - Omega b
    VectorXd rb(p);
    for (Index k = 0; k < p; ++k) {
      Real v = 0.0L;
      for (Index r = 0; r < ni; ++r) v += static_cast<Real>(ds.Z(off + r, k)) * e[static_cast<std::size_t>(r)];
      for (Index l = 0; l < p; ++l) v -= static_cast<Real>(params.omega(k, l)) * bi(l);
      rb(k) = static_cast<double>(v);
    }
    norm2 += w * w * rb.squaredNorm();
    correction_rhs.noalias() -= w * (aj * (pr.d_inv[j] * rb));
  }
  const MatrixXd q = ds.Q(th);
  const Real n_lambda = static_cast<Real>(n_rows()) * params.lambda;
  for (Index k = 0; k < T; ++k) {
    Real v = 0.0L;
    for (Index l = 0; l < T; ++l) v += static_cast<Real>(q(k, l)) * f(m + l);
    rf[static_cast<std::size_t>(m + k)] -= n_lambda * v;
  }
  for (Index k = 0; k < dim_; ++k) {
    const double v = static_cast<double>(rf[static_cast<std::size_t>(k)]);
    norm2 += v * v;
    correction_rhs(k) += v;
  }
  return std::sqrt(norm2);
}

void PenalizedProblem::refine(Profiled& pr, const SmoothingParams& params) const {
  constexpr int kMaxSteps = 3;
  VectorXd rhs;
  double norm = residual(pr, pr.f, params, rhs);
  for (int step = 0; step < kMaxSteps && norm > 0.0; ++step) {
    const VectorXd f = pr.f + pr.chol.solve(rhs);
    VectorXd next_rhs;
    const double next = residual(pr, f, params, next_rhs);
    // dropped pivots can leave a residual the correction cannot reach
    if (!(next < norm)) break;
    pr.f = f;
    rhs = std::move(next_rhs);
    norm = next;
  }
}

FactoredSystem PenalizedProblem::factorize(const SmoothingParams& params) const {
  Profiled pr = profile(params, true);
  refine(pr, params);
  const Design& ds = *design_;
  const Index m = ds.m();
  const Index T = ds.T();
  const Index p = ds.p();

  FactoredSystem fs;
  PLSSolution& sol = fs.solution;
  sol.d = pr.f.head(m);
  sol.c = pr.f.tail(T);
  sol.b = VectorXd::Zero(ds.n_subjects() * p);
  sol.fitted = ds.population_fit(sol.d, sol.c, params.theta12);
  sol.n_rows = n_rows();
  double rss = 0.0;
  for (std::size_t j = 0; j < active_.size(); ++j) {
    const Index i = active_[j];
    const Index off = ds.offsets[i];
    const Index ni = ds.subject_rows(i);
    const VectorXd u = zty_[j] - pr.a.middleCols(static_cast<Index>(j) * p, p).transpose() * pr.f;
    const VectorXd bi = pr.d_inv[j] * u;
    sol.b.segment(i * p, p) = bi;
    sol.fitted.segment(off, ni).noalias() += ds.Z.middleRows(off, ni) * bi;
    rss += w_(i) * (y_.segment(off, ni) - sol.fitted.segment(off, ni)).squaredNorm();
  }
  sol.rss = rss;
  sol.trace_A = pr.trace_b + pr.chol.trace_product(pr.g2);

  // per-subject D^{-1} in full subject indexing; inactive subjects keep an empty matrix
  fs.d_inv.assign(static_cast<std::size_t>(ds.n_subjects()), MatrixXd());
  fs.a = MatrixXd::Zero(dim_, ds.n_subjects() * p);
  for (std::size_t j = 0; j < active_.size(); ++j) {
    const Index i = active_[j];
    fs.d_inv[static_cast<std::size_t>(i)] = std::move(pr.d_inv[j]);
    fs.a.middleCols(i * p, p) = pr.a.middleCols(static_cast<Index>(j) * p, p);
  }
  fs.h_chol = std::move(pr.chol);
  fs.weights = w_;
  return fs;
}

PLSSolution PenalizedProblem::solve(const SmoothingParams& params) const {
  return factorize(params).solution;
}

PLSSolution solve(const PenalizedSystem& system) {
  return PenalizedProblem(system).solve(system.params);
}

double smoothing_trace(const PenalizedSystem& system) {
  return PenalizedProblem(system).summarize(system.params).trace_A;
}

}  // namespace curveclust
