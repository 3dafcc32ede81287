#include "curveclust/mixture_em.hpp"

#include "curveclust/errors.hpp"
#include "curveclust/parallel.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <optional>
#include <sstream>

namespace curveclust {

using Eigen::Index;
using Eigen::MatrixXd;
using Eigen::VectorXd;

namespace {
constexpr double kLog2Pi = 1.8378770664093454835606594728112;
constexpr double kMinSigma2 = 1e-12;
}  // namespace

std::vector<RejectionStage> default_rc_schedule() {
  return {{5, 0.5}, {15, 0.1}, {std::numeric_limits<int>::max(), 0.05}};
}

double rc_threshold(const std::vector<RejectionStage>& schedule, int iteration) {
  if (schedule.empty()) return 0.0;
  for (const auto& s : schedule)
    if (iteration <= s.until) return s.c;
  return schedule.back().c;
}

void MixtureConfig::validate() const {
  if (K < 1) throw std::invalid_argument("K must be >= 1");
  if (chains < 1) throw std::invalid_argument("chains must be >= 1");
  if (stop_patience < 1) throw std::invalid_argument("stop_patience must be >= 1");
  if (max_iter < 1) throw std::invalid_argument("max_iter must be >= 1");
  for (const auto& s : rc_schedule)
    if (!(s.c >= 0.0 && s.c <= 1.0)) throw std::invalid_argument("rejection thresholds must lie in [0, 1]");
  if (!(min_cluster_weight >= 0.0)) throw std::invalid_argument("min_cluster_weight must be >= 0");
  if (kmeans_restarts < 1 || feature_grid < 2)
    throw std::invalid_argument("kmeans_restarts >= 1 and feature_grid >= 2 required");
}

MixtureContext::MixtureContext(const FunctionalDataset& data, const RandomEffectSpec& re,
                               std::size_t knot_cap)
    : data_(data),
      knot_cap_(knot_cap),
      design_(std::make_shared<const Design>(Design::build(data, re, knot_cap))),
      y_(data.responses()) {
  ztz_.reserve(data.n_subjects());
  for (Index i = 0; i < design_->n_subjects(); ++i) {
    const auto zi = design_->Z.middleRows(design_->offsets[i], design_->subject_rows(i));
    ztz_.push_back(zi.transpose() * zi);
  }
}

double uniform01(Rng& rng) { return static_cast<double>(rng() >> 11) * 0x1.0p-53; }

std::uint64_t splitmix64(std::uint64_t x) {
  x += 0x9E3779B97F4A7C15ULL;
  x = (x ^ (x >> 30)) * 0xBF58476D1CE4E5B9ULL;
  x = (x ^ (x >> 27)) * 0x94D049BB133111EBULL;
  return x ^ (x >> 31);
}

double subject_log_density(const MixtureContext& ctx, Index i, const VectorXd& mean,
                           const MatrixXd& omega, double sigma2) {
  if (!(sigma2 >= kMinSigma2))
    throw NumericalError(NumericalError::Kind::DegenerateCovariance,
                         "measurement variance " + std::to_string(sigma2) + " is degenerate");
  const Design& ds = ctx.design();
  const Index off = ds.offsets[i];
  const Index ni = ds.subject_rows(i);
  const VectorXd e = ctx.y().segment(off, ni) - mean.segment(off, ni);
  const VectorXd zte = ds.Z.middleRows(off, ni).transpose() * e;

  Eigen::LLT<MatrixXd> la(omega + ctx.ztz(i));
  Eigen::LLT<MatrixXd> lo(omega);
  if (la.info() != Eigen::Success || lo.info() != Eigen::Success)
    throw NumericalError(NumericalError::Kind::DegenerateCovariance, "random-effect ratio is not SPD");
  const MatrixXd la_l = la.matrixL();
  const MatrixXd lo_l = lo.matrixL();
  const double quad = (e.squaredNorm() - zte.dot(la.solve(zte))) / sigma2;
  const double logdet = static_cast<double>(ni) * std::log(sigma2) +
                        2.0 * la_l.diagonal().array().log().sum() -
                        2.0 * lo_l.diagonal().array().log().sum();
  return -0.5 * (static_cast<double>(ni) * kLog2Pi + logdet + quad);
}

EStepResult estep_full(const MixtureContext& ctx, const MixtureState& state) {
  const Index n = ctx.n();
  const auto K = static_cast<Index>(state.clusters.size());
  if (state.p.size() != K) throw std::invalid_argument("estep: mixing proportions do not match K");
  if (!(state.sigma2 >= kMinSigma2))
    throw NumericalError(NumericalError::Kind::DegenerateCovariance,
                         "measurement variance " + std::to_string(state.sigma2) + " is degenerate");
  EStepResult r;
  r.log_density.resize(n, K);
  r.w.resize(n, K);
  r.subject_loglik.resize(n);
  parallel_for(static_cast<std::size_t>(n), [&](std::size_t si) {
    const auto i = static_cast<Index>(si);
    for (Index k = 0; k < K; ++k) {
      const auto& cl = state.clusters[static_cast<std::size_t>(k)];
      r.log_density(i, k) = subject_log_density(ctx, i, cl.mean, cl.params.omega, state.sigma2);
    }
    VectorXd lw(K);
    for (Index k = 0; k < K; ++k)
      lw(k) = state.p(k) > 0.0 ? std::log(state.p(k)) + r.log_density(i, k)
                               : -std::numeric_limits<double>::infinity();
    const double mx = lw.maxCoeff();
    if (!std::isfinite(mx))
      throw NumericalError(NumericalError::Kind::DegenerateCovariance,
                           "subject has zero density under every cluster");
    const VectorXd ex = (lw.array() - mx).exp();
    const double s = ex.sum();
    r.w.row(i) = (ex / s).transpose();
    r.subject_loglik(i) = mx + std::log(s);
  });
  r.loglik = r.subject_loglik.sum();
  return r;
}

MatrixXd estep(const MixtureContext& ctx, const MixtureState& state) {
  return estep_full(ctx, state).w;
}

double observed_loglik(const MixtureContext& ctx, const MixtureState& state) {
  return estep_full(ctx, state).loglik;
}

MatrixXd rejection_control(const MatrixXd& w, double c, Rng& rng) {
  if (c <= 0.0) return w;
  MatrixXd out = w;
  for (Index i = 0; i < w.rows(); ++i) {
    for (Index k = 0; k < w.cols(); ++k) {
      const double v = w(i, k);
      if (v > c) continue;
      out(i, k) = (v > 0.0 && uniform01(rng) < v / c) ? c : 0.0;
    }
    double s = out.row(i).sum();
    if (s == 0.0) {
      Index arg = 0;
      w.row(i).maxCoeff(&arg);
      out(i, arg) = c;
      s = c;
    }
    out.row(i) /= s;
  }
  return out;
}

VectorXd update_mixing(const MatrixXd& w) {
  VectorXd p = w.colwise().sum().transpose() / static_cast<double>(w.rows());
  return p / p.sum();
}

std::vector<int> hard_labels(const MatrixXd& w) {
  std::vector<int> out(static_cast<std::size_t>(w.rows()));
  for (Index i = 0; i < w.rows(); ++i) {
    Index best = 0;
    for (Index k = 1; k < w.cols(); ++k)
      if (w(i, k) > w(i, best)) best = k;
    out[static_cast<std::size_t>(i)] = static_cast<int>(best);
  }
  return out;
}

MStepResult mstep(const MixtureContext& ctx, const MatrixXd& w, Phase phase,
                  const std::vector<TuningPoint>& frozen, const MixtureConfig& config) {
  const auto K = static_cast<std::size_t>(w.cols());
  if (w.rows() != ctx.n()) throw std::invalid_argument("mstep: weight rows must equal n");
  if (phase == Phase::FixedSmoothing && frozen.size() != K)
    throw std::invalid_argument("mstep: fixed smoothing needs one tuning point per cluster");
  for (std::size_t k = 0; k < K; ++k) {
    const double mass = w.col(static_cast<Index>(k)).sum();
    if (mass < config.min_cluster_weight)
      throw NumericalError(NumericalError::Kind::EmptyCluster,
                           "cluster " + std::to_string(k + 1) + " has effective size " +
                               std::to_string(mass));
  }

  MStepResult out;
  out.clusters.resize(K);
  parallel_for(K, [&](std::size_t k) {
    const PenalizedProblem problem(ctx.design_ptr(), ctx.y(), w.col(static_cast<Index>(k)));
    ClusterFit& fit = out.clusters[k];
    if (phase == Phase::AdaptiveSmoothing) {
      GCVOptions opts = config.gcv;
      if (frozen.size() == K) opts.warm_start = frozen[k];
      const GCVResult g = minimize_gcv(problem, opts);
      fit.tuning = g.point;
      fit.gcv = g.score;
    } else {
      fit.tuning = frozen[k];
    }
    fit.params = fit.tuning.to_params();
    const PLSSolution sol = problem.solve(fit.params);
    if (phase == Phase::FixedSmoothing) {
      try {
        fit.gcv = sol.gcv();
      } catch (const NumericalError&) {
        fit.gcv = std::numeric_limits<double>::quiet_NaN();
      }
    }
    fit.d = sol.d;
    fit.c = sol.c;
    fit.b = sol.b;
    fit.trace_A = sol.trace_A;
    fit.rss = sol.rss;
    fit.mean = ctx.design().population_fit(fit.d, fit.c, fit.params.theta12);
  });

  double rss = 0.0;
  for (const auto& f : out.clusters) rss += f.rss;
  out.sigma2 = rss / static_cast<double>(ctx.N());
  for (auto& f : out.clusters) {
    const MatrixXd omega_inv =
        f.params.omega.llt().solve(MatrixXd::Identity(f.params.omega.rows(), f.params.omega.cols()));
    f.B = out.sigma2 * omega_inv;
  }
  return out;
}

MatrixXd profile_features(const FunctionalDataset& data, int grid) {
  const int a = data.domain().factor_levels;
  MatrixXd f(static_cast<Index>(data.n_subjects()), static_cast<Index>(a) * grid);
  for (std::size_t i = 0; i < data.n_subjects(); ++i) {
    const auto& obs = data.subjects()[i].obs;
    double mean = 0.0;
    for (const auto& o : obs) mean += o.y;
    mean /= static_cast<double>(obs.size());
    for (int tau = 1; tau <= a; ++tau) {
      // replicate times are averaged before interpolation
      std::vector<std::pair<double, double>> pts;
      std::vector<int> counts;
      for (const auto& o : obs) {
        if (o.tau != tau) continue;
        if (!pts.empty() && pts.back().first == o.t) {
          pts.back().second += o.y;
          ++counts.back();
        } else {
          pts.emplace_back(o.t, o.y);
          counts.push_back(1);
        }
      }
      for (std::size_t j = 0; j < pts.size(); ++j) pts[j].second /= counts[j];
      for (int g = 0; g < grid; ++g) {
        const double t = static_cast<double>(g) / (grid - 1);
        double v = mean;
        if (!pts.empty()) {
          if (t <= pts.front().first) {
            v = pts.front().second;
          } else if (t >= pts.back().first) {
            v = pts.back().second;
          } else {
            auto it = std::upper_bound(pts.begin(), pts.end(), t,
                                       [](double x, const auto& p) { return x < p.first; });
            const auto& hi = *it;
            const auto& lo = *(it - 1);
            v = lo.second + (hi.second - lo.second) * (t - lo.first) / (hi.first - lo.first);
          }
        }
        f(static_cast<Index>(i), static_cast<Index>(tau - 1) * grid + g) = v;
      }
    }
  }
  return f;
}

namespace {

struct KMeansRun {
  std::vector<int> labels;
  double inertia = std::numeric_limits<double>::infinity();
};

KMeansRun lloyd(const MatrixXd& x, int K, Rng& rng) {
  const Index n = x.rows();
  MatrixXd centers(K, x.cols());
  // k-means++ seeding
  Index first = static_cast<Index>(uniform01(rng) * static_cast<double>(n));
  first = std::min(first, n - 1);
  centers.row(0) = x.row(first);
  VectorXd d2 = (x.rowwise() - centers.row(0)).rowwise().squaredNorm();
  for (int k = 1; k < K; ++k) {
    const double total = d2.sum();
    Index pick = 0;
    if (total > 0.0) {
      const double target = uniform01(rng) * total;
      double acc = 0.0;
      pick = n - 1;
      for (Index i = 0; i < n; ++i) {
        acc += d2(i);
        if (acc > target) {
          pick = i;
          break;
        }
      }
    } else {
      pick = std::min<Index>(static_cast<Index>(uniform01(rng) * static_cast<double>(n)), n - 1);
    }
    centers.row(k) = x.row(pick);
    d2 = d2.cwiseMin((x.rowwise() - centers.row(k)).rowwise().squaredNorm());
  }

  KMeansRun run;
  run.labels.assign(static_cast<std::size_t>(n), -1);
  for (int iter = 0; iter < 100; ++iter) {
    bool changed = false;
    VectorXd best_d(n);
    for (Index i = 0; i < n; ++i) {
      int best = 0;
      double bd = (x.row(i) - centers.row(0)).squaredNorm();
      for (int k = 1; k < K; ++k) {
        const double dd = (x.row(i) - centers.row(k)).squaredNorm();
        if (dd < bd) {
          bd = dd;
          best = k;
        }
      }
      best_d(i) = bd;
      if (run.labels[static_cast<std::size_t>(i)] != best) {
        run.labels[static_cast<std::size_t>(i)] = best;
        changed = true;
      }
    }
    run.inertia = best_d.sum();
    if (!changed) break;
    MatrixXd sums = MatrixXd::Zero(K, x.cols());
    std::vector<int> counts(static_cast<std::size_t>(K), 0);
    for (Index i = 0; i < n; ++i) {
      const int l = run.labels[static_cast<std::size_t>(i)];
      sums.row(l) += x.row(i);
      ++counts[static_cast<std::size_t>(l)];
    }
    for (int k = 0; k < K; ++k) {
      if (counts[static_cast<std::size_t>(k)] > 0) {
        centers.row(k) = sums.row(k) / counts[static_cast<std::size_t>(k)];
      } else {
        // empty cluster takes the point farthest from its center
        Index far = 0;
        best_d.maxCoeff(&far);
        centers.row(k) = x.row(far);
        best_d(far) = 0.0;
      }
    }
  }
  return run;
}

}  // namespace

std::vector<int> kmeans_partition(const MixtureContext& ctx, int K, Rng& rng, int restarts,
                                  int grid) {
  const FunctionalDataset& data = ctx.data();
  const auto n = static_cast<Index>(data.n_subjects());
  if (K < 1 || K > n) throw std::invalid_argument("kmeans: need 1 <= K <= n");
  const MatrixXd feats = profile_features(data, grid);

  // canonical subject order so the partition does not depend on input order
  std::vector<Index> order(static_cast<std::size_t>(n));
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(), [&](Index a, Index b) {
    const auto& ia = data.subjects()[static_cast<std::size_t>(a)].id;
    const auto& ib = data.subjects()[static_cast<std::size_t>(b)].id;
    if (ia != ib) return ia < ib;
    const auto ra = feats.row(a);
    const auto rb = feats.row(b);
    return std::lexicographical_compare(ra.begin(), ra.end(), rb.begin(), rb.end());
  });
  MatrixXd x(n, feats.cols());
  for (Index j = 0; j < n; ++j) x.row(j) = feats.row(order[static_cast<std::size_t>(j)]);

  KMeansRun best;
  for (int r = 0; r < restarts; ++r) {
    KMeansRun run = lloyd(x, K, rng);
    if (run.inertia < best.inertia) best = std::move(run);
  }
  std::vector<int> labels(static_cast<std::size_t>(n));
  for (Index j = 0; j < n; ++j)
    labels[static_cast<std::size_t>(order[static_cast<std::size_t>(j)])] = best.labels[static_cast<std::size_t>(j)];
  return labels;
}

MatrixXd soft_indicators(const std::vector<int>& labels, int K) {
  const auto n = static_cast<Index>(labels.size());
  if (K == 1) return MatrixXd::Ones(n, 1);
  MatrixXd w = MatrixXd::Constant(n, K, 0.1 / (K - 1));
  for (Index i = 0; i < n; ++i) w(i, labels[static_cast<std::size_t>(i)]) = 0.9;
  return w;
}

int tuning_parameter_count(const MixtureState& state) {
  int count = 0;
  for (const auto& c : state.clusters) count += static_cast<int>(c.tuning.size());
  return count;
}

double bic(double loglik, double sum_trace, int n_params, Index N) {
  return -2.0 * loglik + (sum_trace + n_params) * std::log(static_cast<double>(N));
}

double bic(const MixtureContext& ctx, const MixtureState& state) {
  double tr = 0.0;
  for (const auto& c : state.clusters) tr += c.trace_A;
  const int P = static_cast<int>(state.clusters.size()) - 1 + tuning_parameter_count(state) + 1;
  return bic(state.loglik, tr, P, ctx.N());
}

namespace {

std::vector<TuningPoint> tunings_of(const MixtureState& s) {
  std::vector<TuningPoint> out;
  for (const auto& c : s.clusters) out.push_back(c.tuning);
  return out;
}

// Hands a dead cluster the worst-fitting subject and its nearest neighbours
// in profile space.
MatrixXd reseed(const MixtureState& state, const MatrixXd& w, const MatrixXd& feats) {
  const Index n = w.rows();
  const Index K = w.cols();
  Index dead = 0;
  w.colwise().sum().minCoeff(&dead);

  Index worst = 0;
  if (state.subject_loglik.size() == n) {
    state.subject_loglik.minCoeff(&worst);
  } else {
    const auto labels = hard_labels(w);
    MatrixXd centers = MatrixXd::Zero(K, feats.cols());
    VectorXd mass = VectorXd::Zero(K);
    for (Index i = 0; i < n; ++i) {
      centers.row(labels[static_cast<std::size_t>(i)]) += feats.row(i);
      mass(labels[static_cast<std::size_t>(i)]) += 1.0;
    }
    double far = -1.0;
    for (Index i = 0; i < n; ++i) {
      const int l = labels[static_cast<std::size_t>(i)];
      const double dd = (feats.row(i) - centers.row(l) / mass(l)).squaredNorm();
      if (dd > far) {
        far = dd;
        worst = i;
      }
    }
  }

  const Index take = std::min<Index>(n, std::max<Index>(3, n / (2 * K)));
  std::vector<Index> idx(static_cast<std::size_t>(n));
  std::iota(idx.begin(), idx.end(), 0);
  VectorXd dist = (feats.rowwise() - feats.row(worst)).rowwise().squaredNorm();
  std::stable_sort(idx.begin(), idx.end(), [&](Index a, Index b) { return dist(a) < dist(b); });
  MatrixXd out = w;
  for (Index j = 0; j < take; ++j) {
    out.row(idx[static_cast<std::size_t>(j)]).setZero();
    out(idx[static_cast<std::size_t>(j)], dead) = 1.0;
  }
  return out;
}

MixtureState assemble_state(const MixtureContext& ctx, const MatrixXd& wr, MStepResult ms, int iter) {
  MixtureState s;
  s.p = update_mixing(wr);
  s.fit_weights = wr;
  s.sigma2 = ms.sigma2;
  s.clusters = std::move(ms.clusters);
  const EStepResult es = estep_full(ctx, s);
  s.w = es.w;
  s.loglik = es.loglik;
  s.subject_loglik = es.subject_loglik;
  s.iteration = iter;
  return s;
}

}  // namespace

ClusteringResult run_chain(const MixtureContext& ctx, const MixtureConfig& config, const MatrixXd& w0,
                           Rng& rng, int chain_id) {
  const int K = static_cast<int>(w0.cols());
  ClusteringResult res;
  res.chain_id = chain_id;
  ChainTrace trace;
  trace.chain_id = chain_id;

  Phase phase = config.phase;
  std::vector<TuningPoint> frozen = config.fixed_tuning;
  if (phase == Phase::FixedSmoothing && static_cast<int>(frozen.size()) != K)
    frozen = tunings_of(assemble_state(ctx, w0, mstep(ctx, w0, Phase::AdaptiveSmoothing, {}, config), 0));

  MixtureState state;
  state.w = w0;
  MixtureState best;
  bool have_best = false;
  bool reseeded = false;
  const MatrixXd feats = profile_features(ctx.data(), config.feature_grid);

  int iter = 0;
  int phase_iter = 0;
  int stale = 0;
  for (;;) {
    ++iter;
    ++phase_iter;
    MatrixXd wr = K == 1 ? state.w : rejection_control(state.w, rc_threshold(config.rc_schedule, iter), rng);
    MStepResult ms;
    try {
      ms = mstep(ctx, wr, phase, frozen, config);
    } catch (const NumericalError& e) {
      if (e.kind() != NumericalError::Kind::EmptyCluster || reseeded) throw;
      reseeded = true;
      trace.reseeded = true;
      wr = reseed(state, wr, feats);
      ms = mstep(ctx, wr, phase, frozen, config);
    }
    state = assemble_state(ctx, wr, std::move(ms), iter);
    trace.loglik.push_back(state.loglik);
    if (phase == Phase::AdaptiveSmoothing) frozen = tunings_of(state);

    const bool improving =
        !have_best || state.loglik > best.loglik + config.improve_tol * std::abs(best.loglik);
    if (improving) {
      best = state;
      have_best = true;
      stale = 0;
    } else {
      ++stale;
    }
    if (K == 1) break;
    if (stale >= config.stop_patience || phase_iter >= config.max_iter) {
      if (phase == Phase::FixedSmoothing) break;
      phase = Phase::FixedSmoothing;
      state = best;
      frozen = tunings_of(best);
      stale = 0;
      phase_iter = 0;
    }
  }

  res.state = std::move(best);
  res.hard_labels = hard_labels(res.state.w);
  res.history = trace.loglik;
  res.sum_trace = 0.0;
  for (const auto& c : res.state.clusters) res.sum_trace += c.trace_A;
  res.n_params = K - 1 + tuning_parameter_count(res.state) + 1;
  res.bic = bic(res.state.loglik, res.sum_trace, res.n_params, ctx.N());
  trace.bic = res.bic;
  res.chains.push_back(std::move(trace));
  return res;
}

namespace {

ClusteringResult run_em_ordered(const MixtureContext& ctx, const MixtureConfig& config) {
  if (config.K > ctx.n()) throw std::invalid_argument("K exceeds the number of subjects");
  const auto chains = static_cast<std::size_t>(config.chains);
  std::vector<ClusteringResult> results(chains);
  std::vector<ChainTrace> traces(chains);

  parallel_for(chains, [&](std::size_t ch) {
    const int id = static_cast<int>(ch);
    Rng rng(splitmix64(config.seed ^ splitmix64(ch + 1)));
    try {
      const auto labels =
          kmeans_partition(ctx, config.K, rng, config.kmeans_restarts, config.feature_grid);
      results[ch] = run_chain(ctx, config, soft_indicators(labels, config.K), rng, id);
      traces[ch] = results[ch].chains.front();
    } catch (const NumericalError& e) {
      traces[ch].chain_id = id;
      traces[ch].failed = true;
      traces[ch].error = e.what();
    }
  });

  std::optional<std::size_t> best;
  for (std::size_t ch = 0; ch < chains; ++ch) {
    if (traces[ch].failed) continue;
    if (!best || results[ch].bic < results[*best].bic) best = ch;
  }
  if (!best) {
    std::ostringstream msg;
    msg << "all " << chains << " chains failed";
    for (const auto& t : traces) msg << "; chain " << t.chain_id << ": " << t.error;
    throw ConvergenceError(msg.str());
  }
  ClusteringResult out = std::move(results[*best]);
  out.chains = std::move(traces);
  return out;
}

// Canonical subject j sits at position order[j] of the caller's data.
void restore_order(ClusteringResult& r, const Design& canon, const Design& orig,
                   const std::vector<std::size_t>& order) {
  const Index n = canon.n_subjects(), p = canon.p();
  auto rows = [&](MatrixXd& m) {
    if (m.rows() != n) return;
    MatrixXd out(m.rows(), m.cols());
    for (Index j = 0; j < n; ++j) out.row(static_cast<Index>(order[static_cast<std::size_t>(j)])) = m.row(j);
    m = std::move(out);
  };
  rows(r.state.w);
  rows(r.state.fit_weights);
  if (r.state.subject_loglik.size() == n) {
    VectorXd v(n);
    for (Index j = 0; j < n; ++j) v(static_cast<Index>(order[static_cast<std::size_t>(j)])) = r.state.subject_loglik(j);
    r.state.subject_loglik = std::move(v);
  }
  std::vector<int> labels(r.hard_labels.size());
  for (std::size_t j = 0; j < labels.size(); ++j) labels[order[j]] = r.hard_labels[j];
  r.hard_labels = std::move(labels);
  for (auto& c : r.state.clusters) {
    if (c.b.size() == n * p) {
      VectorXd b(c.b.size());
      for (Index j = 0; j < n; ++j)
        b.segment(static_cast<Index>(order[static_cast<std::size_t>(j)]) * p, p) = c.b.segment(j * p, p);
      c.b = std::move(b);
    }
    if (c.mean.size() == canon.rows()) {
      VectorXd m(c.mean.size());
      for (Index j = 0; j < n; ++j) {
        const Index i = static_cast<Index>(order[static_cast<std::size_t>(j)]);
        m.segment(orig.offsets[i], orig.subject_rows(i)) = c.mean.segment(canon.offsets[j], canon.subject_rows(j));
      }
      c.mean = std::move(m);
    }
  }
}

}  // namespace

ClusteringResult run_em(const MixtureContext& ctx, const MixtureConfig& config) {
  config.validate();
  const auto& subs = ctx.data().subjects();
  std::vector<std::size_t> order(subs.size());
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::stable_sort(order.begin(), order.end(),
                   [&](std::size_t a, std::size_t b) { return subs[a].id < subs[b].id; });
  if (std::is_sorted(order.begin(), order.end())) return run_em_ordered(ctx, config);
  const MixtureContext canon(ctx.data().subset(order), ctx.design().re, ctx.knot_cap());
  ClusteringResult r = run_em_ordered(canon, config);
  restore_order(r, canon.design(), ctx.design(), order);
  return r;
}

ClusteringResult run_em(const FunctionalDataset& data, const MixtureConfig& config) {
  const MixtureContext ctx(data, config.re, config.knot_cap);
  return run_em(ctx, config);
}

KSelection select_k(const MixtureContext& ctx, const std::vector<int>& k_range,
                    const MixtureConfig& config) {
  if (k_range.empty()) throw std::invalid_argument("select_k: empty K range");
  std::vector<int> ks = k_range;
  std::sort(ks.begin(), ks.end());
  ks.erase(std::unique(ks.begin(), ks.end()), ks.end());

  KSelection sel;
  std::optional<std::size_t> best;
  for (int K : ks) {
    MixtureConfig cfg = config;
    cfg.K = K;
    KSelectionRow row;
    row.K = K;
    ClusteringResult r;
    try {
      r = run_em(ctx, cfg);
      row.loglik = r.state.loglik;
      row.sum_trace = r.sum_trace;
      row.n_params = r.n_params;
      row.bic = r.bic;
    } catch (const ConvergenceError& e) {
      row.failed = true;
      row.error = e.what();
    }
    sel.table.push_back(row);
    sel.results.push_back(std::move(r));
    const std::size_t at = sel.table.size() - 1;
    if (!row.failed && (!best || row.bic < sel.table[*best].bic)) best = at;
  }
  if (!best) throw ConvergenceError("every K in the range failed");
  sel.best_K = sel.table[*best].K;
  return sel;
}

}  // namespace curveclust
