#include "curveclust/gcv_tuning.hpp"

#include "curveclust/errors.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>

namespace curveclust {

using Eigen::MatrixXd;
using Eigen::VectorXd;

namespace {

constexpr double kInf = std::numeric_limits<double>::infinity();

double pow10(double x) { return std::pow(10.0, x); }

struct Bounds {
  std::vector<double> lo, hi;
};

Bounds make_bounds(bool has_theta, Eigen::Index p, const GCVOptions& o) {
  Bounds b;
  b.lo.push_back(o.log_lambda_min);
  b.hi.push_back(o.log_lambda_max);
  if (has_theta) {
    b.lo.push_back(o.log_theta_min);
    b.hi.push_back(o.log_theta_max);
  }
  if (p == 1) {
    b.lo.push_back(o.log_corr_min);
    b.hi.push_back(o.log_corr_max);
  } else {
    // log10 of a Cholesky diagonal entry is half the log10 of the variance ratio
    b.lo.insert(b.lo.end(), {o.log_corr_min / 2, -o.offdiag_bound, o.log_corr_min / 2});
    b.hi.insert(b.hi.end(), {o.log_corr_max / 2, o.offdiag_bound, o.log_corr_max / 2});
  }
  return b;
}

struct Evaluation {
  double score = kInf;
  double trace = 0.0;
};

class Objective {
 public:
  Objective(const PenalizedProblem& problem, bool has_theta)
      : problem_(problem), has_theta_(has_theta) {}

  Evaluation operator()(const std::vector<double>& x) {
    ++count_;
    const SmoothingParams params = TuningPoint::from_coords(x, has_theta_).to_params();
    try {
      const auto s = problem_.summarize(params);
      Evaluation e;
      e.score = gcv_ratio(s.rss, s.trace_A, problem_.n_rows());
      e.trace = s.trace_A;
      if (!std::isfinite(e.score)) e.score = kInf;
      return e;
    } catch (const NumericalError&) {
      return {};
    }
  }

  int count() const { return count_; }

 private:
  const PenalizedProblem& problem_;
  bool has_theta_;
  int count_ = 0;
};

bool better(double fa, const std::vector<double>& xa, double fb, const std::vector<double>& xb) {
  if (fa != fb) return fa < fb;
  return std::lexicographical_compare(xa.begin(), xa.end(), xb.begin(), xb.end());
}

struct Candidate {
  std::vector<double> x;
  Evaluation eval;
};

void clip(std::vector<double>& x, const Bounds& b) {
  for (std::size_t i = 0; i < x.size(); ++i) x[i] = std::clamp(x[i], b.lo[i], b.hi[i]);
}

VectorXd fd_gradient(Objective& f, const std::vector<double>& x, double fx, const Bounds& b,
                     double h) {
  VectorXd g(static_cast<Eigen::Index>(x.size()));
  for (std::size_t i = 0; i < x.size(); ++i) {
    const bool up_ok = x[i] + h <= b.hi[i];
    const bool down_ok = x[i] - h >= b.lo[i];
    std::vector<double> xp = x, xm = x;
    double fp = kInf, fm = kInf;
    if (up_ok) {
      xp[i] += h;
      fp = f(xp).score;
    }
    if (down_ok) {
      xm[i] -= h;
      fm = f(xm).score;
    }
    double gi = 0.0;
    if (std::isfinite(fp) && std::isfinite(fm))
      gi = (fp - fm) / (2 * h);
    else if (std::isfinite(fp) && std::isfinite(fx))
      gi = (fp - fx) / h;
    else if (std::isfinite(fm) && std::isfinite(fx))
      gi = (fx - fm) / h;
    g(static_cast<Eigen::Index>(i)) = gi;
  }
  return g;
}

// Box-constrained BFGS: coordinates pinned at a bound with the gradient
// pointing outward are frozen for the step.
Candidate bfgs(Objective& f, Candidate start, const Bounds& b, const GCVOptions& o) {
  const auto n = static_cast<Eigen::Index>(start.x.size());
  Candidate cur = std::move(start);
  if (!std::isfinite(cur.eval.score)) return cur;
  MatrixXd hinv = MatrixXd::Identity(n, n);
  VectorXd g = fd_gradient(f, cur.x, cur.eval.score, b, o.fd_step);

  for (int it = 0; it < o.max_iter; ++it) {
    std::vector<bool> active(static_cast<std::size_t>(n), false);
    for (Eigen::Index i = 0; i < n; ++i) {
      const auto k = static_cast<std::size_t>(i);
      if ((cur.x[k] <= b.lo[k] && g(i) > 0) || (cur.x[k] >= b.hi[k] && g(i) < 0)) active[k] = true;
    }
    VectorXd gf = g;
    for (Eigen::Index i = 0; i < n; ++i)
      if (active[static_cast<std::size_t>(i)]) gf(i) = 0.0;
    if (gf.norm() == 0.0) break;

    VectorXd dir = -(hinv * gf);
    for (Eigen::Index i = 0; i < n; ++i)
      if (active[static_cast<std::size_t>(i)]) dir(i) = 0.0;
    if (gf.dot(dir) >= 0.0) {
      hinv.setIdentity();
      dir = -gf;
    }

    Candidate next;
    bool accepted = false;
    double step = 1.0;
    for (int ls = 0; ls < 40; ++ls, step *= 0.5) {
      next.x = cur.x;
      for (Eigen::Index i = 0; i < n; ++i) next.x[static_cast<std::size_t>(i)] += step * dir(i);
      clip(next.x, b);
      double decrease = 0.0;
      for (Eigen::Index i = 0; i < n; ++i)
        decrease += gf(i) * (next.x[static_cast<std::size_t>(i)] - cur.x[static_cast<std::size_t>(i)]);
      if (next.x == cur.x) break;
      next.eval = f(next.x);
      if (std::isfinite(next.eval.score) &&
          next.eval.score <= cur.eval.score + 1e-4 * std::min(decrease, 0.0)) {
        accepted = true;
        break;
      }
    }
    if (!accepted) break;

    const double rel = std::abs(cur.eval.score - next.eval.score) / std::max(cur.eval.score, 1e-300);
    const VectorXd g_next = fd_gradient(f, next.x, next.eval.score, b, o.fd_step);
    VectorXd s(n);
    for (Eigen::Index i = 0; i < n; ++i)
      s(i) = next.x[static_cast<std::size_t>(i)] - cur.x[static_cast<std::size_t>(i)];
    const VectorXd yv = g_next - g;
    const double sy = s.dot(yv);
    if (sy > 1e-12 * s.norm() * yv.norm()) {
      const double rho = 1.0 / sy;
      const MatrixXd id = MatrixXd::Identity(n, n);
      hinv = (id - rho * s * yv.transpose()) * hinv * (id - rho * yv * s.transpose()) +
             rho * s * s.transpose();
    }
    cur = std::move(next);
    g = g_next;
    if (rel <= o.rel_tol) break;
  }
  return cur;
}

bool on_bound(const std::vector<double>& x, const Bounds& b) {
  for (std::size_t i = 0; i < x.size(); ++i)
    if (x[i] <= b.lo[i] || x[i] >= b.hi[i]) return true;
  return false;
}

}  // namespace

std::vector<double> TuningPoint::coords() const {
  std::vector<double> x{log_lambda};
  if (log_theta_ratio) x.push_back(*log_theta_ratio);
  x.insert(x.end(), log_corr.begin(), log_corr.end());
  return x;
}

TuningPoint TuningPoint::from_coords(const std::vector<double>& x, bool has_theta) {
  TuningPoint t;
  std::size_t i = 0;
  t.log_lambda = x.at(i++);
  if (has_theta) t.log_theta_ratio = x.at(i++);
  t.log_corr.assign(x.begin() + static_cast<std::ptrdiff_t>(i), x.end());
  return t;
}

SmoothingParams TuningPoint::to_params() const {
  SmoothingParams p;
  p.lambda = pow10(log_lambda);
  p.theta12 = log_theta_ratio ? pow10(*log_theta_ratio) : 0.0;
  if (log_corr.size() == 1) {
    p.omega = MatrixXd::Constant(1, 1, pow10(log_corr[0]));
  } else if (log_corr.size() == 3) {
    MatrixXd l = MatrixXd::Zero(2, 2);
    l(0, 0) = pow10(log_corr[0]);
    l(1, 0) = log_corr[1];
    l(1, 1) = pow10(log_corr[2]);
    p.omega = l * l.transpose();
  } else {
    throw std::invalid_argument("TuningPoint: log_corr must have 1 or 3 entries");
  }
  return p;
}

double gcv_score(const PenalizedProblem& problem, const SmoothingParams& params) {
  const auto s = problem.summarize(params);
  return gcv_ratio(s.rss, s.trace_A, problem.n_rows());
}

double gcv_score(const PenalizedSystem& system) {
  return gcv_score(PenalizedProblem(system), system.params);
}

std::vector<TuningPoint> coarse_grid(const Design& design, const GCVOptions& opts) {
  std::vector<TuningPoint> grid;
  std::vector<std::optional<double>> thetas{std::nullopt};
  if (design.has_interaction()) thetas = {-2.0, 0.0, 2.0};
  const std::vector<double> corr{-4.0, -2.0, 0.0, 2.0, 4.0};
  for (int i = 0; i < 7; ++i) {
    const double ll = opts.log_lambda_min + (opts.log_lambda_max - opts.log_lambda_min) * i / 6.0;
    for (const auto& th : thetas)
      for (double c : corr) {
        TuningPoint t;
        t.log_lambda = ll;
        t.log_theta_ratio = th;
        const double cc = std::clamp(c, opts.log_corr_min, opts.log_corr_max);
        if (design.p() == 1)
          t.log_corr = {cc};
        else
          t.log_corr = {cc / 2, 0.0, cc / 2};
        grid.push_back(std::move(t));
      }
  }
  return grid;
}

std::vector<double> grid_scores(const PenalizedProblem& problem,
                                const std::vector<TuningPoint>& grid) {
  Objective f(problem, problem.design().has_interaction());
  std::vector<double> out;
  out.reserve(grid.size());
  for (const auto& t : grid) out.push_back(f(t.coords()).score);
  return out;
}

GCVResult minimize_gcv(const PenalizedProblem& problem, const GCVOptions& opts) {
  if (problem.null_space_deficient())
    throw NumericalError(NumericalError::Kind::SingularSystem,
                         "null-space basis is rank deficient on the weighted rows");
  const Design& design = problem.design();
  const bool has_theta = design.has_interaction();
  const Bounds bounds = make_bounds(has_theta, design.p(), opts);
  Objective f(problem, has_theta);

  std::vector<Candidate> grid;
  for (const auto& t : coarse_grid(design, opts)) {
    auto x = t.coords();
    clip(x, bounds);
    Candidate c{x, f(x)};
    grid.push_back(std::move(c));
  }
  std::vector<std::size_t> order(grid.size());
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
    return better(grid[a].eval.score, grid[a].x, grid[b].eval.score, grid[b].x);
  });
  if (!std::isfinite(grid[order[0]].eval.score))
    throw NumericalError(NumericalError::Kind::OptimFailure,
                         "every coarse-grid GCV evaluation was degenerate");

  Candidate best = grid[order[0]];
  std::vector<Candidate> starts;
  for (std::size_t k = 0; k < order.size() && static_cast<int>(starts.size()) < opts.starts; ++k)
    if (std::isfinite(grid[order[k]].eval.score)) starts.push_back(grid[order[k]]);
  if (opts.warm_start) {
    auto x = opts.warm_start->coords();
    if (x.size() == bounds.lo.size()) {
      clip(x, bounds);
      Candidate c{x, f(x)};
      if (std::isfinite(c.eval.score)) starts.push_back(std::move(c));
    }
  }
  for (auto& s : starts) {
    Candidate r = bfgs(f, s, bounds, opts);
    if (better(r.eval.score, r.x, best.eval.score, best.x)) best = std::move(r);
  }

  GCVResult res;
  res.point = TuningPoint::from_coords(best.x, has_theta);
  res.params = res.point.to_params();
  res.score = best.eval.score;
  res.trace_A = best.eval.trace;
  res.evaluations = f.count();
  res.clipped = on_bound(best.x, bounds);
  return res;
}

GCVResult minimize_gcv(const VectorXd& y, const FunctionalDataset& data, const RandomEffectSpec& re,
                       const GCVOptions& opts, std::size_t knot_cap) {
  auto design = std::make_shared<const Design>(Design::build(data, re, knot_cap));
  const PenalizedProblem problem(design, y, VectorXd::Ones(design->n_subjects()));
  return minimize_gcv(problem, opts);
}

}  // namespace curveclust
