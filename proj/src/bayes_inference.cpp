#include "curveclust/bayes_inference.hpp"

#include "curveclust/errors.hpp"
#include "curveclust/linalg.hpp"

#include <boost/math/distributions/normal.hpp>

#include <cmath>
#include <stdexcept>

namespace curveclust {

using Eigen::Index;
using Eigen::MatrixXd;
using Eigen::VectorXd;

double normal_quantile(double p) {
  if (!(p > 0.0 && p < 1.0)) throw std::invalid_argument("normal_quantile: p must lie in (0, 1)");
  return boost::math::quantile(boost::math::normal_distribution<double>(), p);
}

PosteriorFit::PosteriorFit(const PenalizedProblem& problem, const SmoothingParams& params,
                           double sigma2)
    : design_(problem.design_ptr()),
      model_(problem.design().domain, ThetaWeights{1.0, params.theta12}),
      params_(params),
      sigma2_(sigma2),
      fs_(problem.factorize(params)) {
  if (!(sigma2 >= 0.0) || !std::isfinite(sigma2))
    throw std::invalid_argument("PosteriorFit: sigma2 must be finite and >= 0");
  omega_inv_ = params.omega.llt().solve(MatrixXd::Identity(params.omega.rows(), params.omega.cols()));
}

VectorXd PosteriorFit::fixed_row(const Knot& x) const {
  const Design& ds = *design_;
  VectorXd g(ds.m() + ds.T());
  g.head(ds.m()) = model_.eval_basis(x.t, x.tau);
  for (Index j = 0; j < ds.T(); ++j) {
    const Knot& s = ds.knots[static_cast<std::size_t>(j)];
    g(ds.m() + j) = model_.eval_kernel(s.t, s.tau, x.t, x.tau);
  }
  return g;
}

double PosteriorFit::mean(const Knot& x, const VectorXd& z) const {
  const Design& ds = *design_;
  const VectorXd g = fixed_row(x);
  double v = g.head(ds.m()).dot(fs_.solution.d) + g.tail(ds.T()).dot(fs_.solution.c);
  if (z.size() > 0) {
    if (z.size() != fs_.solution.b.size()) throw std::invalid_argument("z must have n*p entries");
    v += z.dot(fs_.solution.b);
  }
  return v;
}

double PosteriorFit::variance(const Knot& x, const VectorXd& z) const {
  const Design& ds = *design_;
  const Index p = ds.p();
  VectorXd v = fixed_row(x);
  double extra = 0.0;
  if (z.size() > 0) {
    if (z.size() != ds.n_subjects() * p) throw std::invalid_argument("z must have n*p entries");
    for (Index i = 0; i < ds.n_subjects(); ++i) {
      const VectorXd zi = z.segment(i * p, p);
      if (zi.isZero(0.0)) continue;
      const double w = fs_.weights(i);
      if (w > 0.0) {
        const MatrixXd& dinv = fs_.d_inv[static_cast<std::size_t>(i)];
        v.noalias() -= fs_.a.middleCols(i * p, p) * (dinv * zi);
        extra += zi.dot(dinv * zi) / w;
      } else {
        // no data on this subject: its effect keeps the prior variance
        extra += zi.dot(omega_inv_ * zi);
      }
    }
  }
  return sigma2_ * (fs_.h_chol.inverse_quadratic(v) + extra);
}

namespace {

VectorXd column_or_empty(const MatrixXd& z, std::size_t g) {
  if (z.cols() == 0) return {};
  if (z.cols() == 1) return z.col(0);
  return z.col(static_cast<Index>(g));
}

void check_query(const CurveQuery& q) {
  if (q.z.cols() > 1 && q.z.cols() != static_cast<Index>(q.grid.size()))
    throw std::invalid_argument("CurveQuery: z needs 0, 1 or one column per grid point");
}

double clip_variance(double v, int& clipped) {
  if (v < 0.0) {
    ++clipped;
    return 0.0;
  }
  return v;
}

}  // namespace

VectorXd posterior_mean(const PosteriorFit& fit, const CurveQuery& query) {
  check_query(query);
  VectorXd out(static_cast<Index>(query.grid.size()));
  for (std::size_t g = 0; g < query.grid.size(); ++g)
    out(static_cast<Index>(g)) = fit.mean(query.grid[g], column_or_empty(query.z, g));
  return out;
}

VectorXd posterior_variance(const PosteriorFit& fit, const CurveQuery& query, int* clipped) {
  check_query(query);
  int clips = 0;
  VectorXd out(static_cast<Index>(query.grid.size()));
  for (std::size_t g = 0; g < query.grid.size(); ++g)
    out(static_cast<Index>(g)) =
        clip_variance(fit.variance(query.grid[g], column_or_empty(query.z, g)), clips);
  if (clipped) *clipped = clips;
  return out;
}

VectorXd posterior_variance_display(const PosteriorFit& fit, const CurveQuery& query, int* clipped) {
  check_query(query);
  const Design& ds = fit.design();
  const Index m = ds.m();
  const Index T = ds.T();
  const Index p = ds.p();
  const VectorXd& w = fit.weights();
  const SmoothingParams& par = fit.params();
  const double n_lambda = static_cast<double>(ds.rows()) * par.lambda;
  const MatrixXd omega_inv = par.omega.llt().solve(MatrixXd::Identity(p, p));

  std::vector<Index> active;
  Index rows = 0;
  for (Index i = 0; i < ds.n_subjects(); ++i)
    if (w(i) > 0.0) {
      active.push_back(i);
      rows += ds.subject_rows(i);
    }
  const auto na = static_cast<Index>(active.size());

  const MatrixXd r_full = ds.R(par.theta12);
  MatrixXd s(rows, m), r(rows, T), z = MatrixXd::Zero(rows, na * p);
  Index at = 0;
  for (Index j = 0; j < na; ++j) {
    const Index i = active[static_cast<std::size_t>(j)];
    const Index off = ds.offsets[i];
    const Index ni = ds.subject_rows(i);
    const double sw = std::sqrt(w(i));
    s.middleRows(at, ni) = sw * ds.S.middleRows(off, ni);
    r.middleRows(at, ni) = sw * r_full.middleRows(off, ni);
    z.block(at, j * p, ni, p) = ds.Z.middleRows(off, ni);
    at += ni;
  }

  const MatrixXd q_plus = pseudo_inverse(ds.Q(par.theta12));
  const MatrixXd rq = r * q_plus;
  MatrixXd zo(rows, na * p);
  for (Index j = 0; j < na; ++j) zo.middleCols(j * p, p) = z.middleCols(j * p, p) * omega_inv;
  MatrixXd big_w = rq * r.transpose() + n_lambda * (zo * z.transpose());
  big_w.diagonal().array() += n_lambda;
  const Eigen::LLT<MatrixXd> wchol(big_w);
  if (wchol.info() != Eigen::Success)
    throw NumericalError(NumericalError::Kind::SingularSystem, "W is not positive definite");
  const MatrixXd winv_s = wchol.solve(s);
  const MatrixXd m_inv = (s.transpose() * winv_s).inverse();

  int clips = 0;
  VectorXd out(static_cast<Index>(query.grid.size()));
  for (std::size_t g = 0; g < query.grid.size(); ++g) {
    const VectorXd row = fit.fixed_row(query.grid[g]);
    const VectorXd phi = row.head(m);
    const VectorXd xi = row.tail(T);
    const VectorXd zq = column_or_empty(query.z, g);

    VectorXd zw = VectorXd::Zero(na * p);
    double prior_part = 0.0;
    if (zq.size() > 0) {
      for (Index i = 0, j = 0; i < ds.n_subjects(); ++i) {
        const VectorXd zi = zq.segment(i * p, p);
        if (w(i) > 0.0) {
          zw.segment(j * p, p) = zi / std::sqrt(w(i));
          ++j;
        } else {
          prior_part += zi.dot(omega_inv * zi);
        }
      }
    }
    VectorXd omega_zw(na * p);
    for (Index j = 0; j < na; ++j) omega_zw.segment(j * p, p) = omega_inv * zw.segment(j * p, p);

    const VectorXd a = rq * xi + n_lambda * (z * omega_zw);
    const VectorXd winv_a = wchol.solve(a);
    const VectorXd st_winv_a = winv_s.transpose() * a;
    const double proj = a.dot(winv_a) - st_winv_a.dot(m_inv * st_winv_a);
    const double display = xi.dot(q_plus * xi) + n_lambda * zw.dot(omega_zw) +
                           phi.dot(m_inv * phi) - 2.0 * phi.dot(m_inv * st_winv_a) - proj;
    const double var = fit.sigma2() / n_lambda * display + fit.sigma2() * prior_part;
    out(static_cast<Index>(g)) = clip_variance(var, clips);
  }
  if (clipped) *clipped = clips;
  return out;
}

CurveBand confidence_band(const PosteriorFit& fit, const CurveQuery& query) {
  if (!(query.alpha > 0.0 && query.alpha < 1.0))
    throw std::invalid_argument("alpha must lie in (0, 1)");
  CurveBand band;
  band.grid = query.grid;
  band.mean = posterior_mean(fit, query);
  band.variance = posterior_variance(fit, query, &band.clipped);
  const double q = normal_quantile(1.0 - query.alpha / 2.0);
  const VectorXd half = q * band.variance.array().sqrt();
  band.lower = band.mean - half;
  band.upper = band.mean + half;
  return band;
}

std::vector<CurveBand> cluster_bands(const MixtureContext& ctx, const ClusteringResult& result,
                                     const CurveQuery& query) {
  const MixtureState& st = result.state;
  const MatrixXd& fw = st.fit_weights.size() > 0 ? st.fit_weights : st.w;
  CurveQuery q = query;
  q.z.resize(0, 0);
  std::vector<CurveBand> out;
  for (std::size_t k = 0; k < st.clusters.size(); ++k) {
    const PenalizedProblem problem(ctx.design_ptr(), ctx.y(), fw.col(static_cast<Index>(k)));
    const PosteriorFit fit(problem, st.clusters[k].params, st.sigma2);
    out.push_back(confidence_band(fit, q));
  }
  return out;
}

std::vector<Knot> regular_grid(const DomainSpec& domain, int points) {
  if (points < 2) throw std::invalid_argument("regular_grid needs at least 2 points");
  std::vector<Knot> g;
  for (int tau = 1; tau <= domain.factor_levels; ++tau)
    for (int j = 0; j < points; ++j) g.push_back({static_cast<double>(j) / (points - 1), tau});
  return g;
}

}  // namespace curveclust
