#include "curveclust/bayes_inference.hpp"
#include "curveclust/errors.hpp"
#include "curveclust/simbench.hpp"

#include "oracles.hpp"

#include <doctest.h>

#include <random>

using namespace curveclust;
using Eigen::Index;
using Eigen::MatrixXd;
using Eigen::VectorXd;

namespace {

std::shared_ptr<const Design> design_of(const FunctionalDataset& d, RandomEffect re = RandomEffect::Intercept) {
  return std::make_shared<const Design>(Design::build(d, {re}));
}

// grid of lattice and off-lattice points over every level
std::vector<Knot> probe_grid(int a) {
  std::vector<Knot> g;
  for (int tau = 1; tau <= a; ++tau)
    for (double t : {0.0, 0.13, 0.25, 0.5, 0.61, 0.9, 1.0}) g.push_back({t, tau});
  return g;
}

double rel_err(double x, double ref) { return std::abs(x - ref) / std::max(std::abs(ref), 1e-300); }

SimData cluster_subset(const SimData& sim, int label, std::size_t limit = 1000) {
  std::vector<std::size_t> idx;
  for (std::size_t i = 0; i < sim.labels.size() && idx.size() < limit; ++i)
    if (sim.labels[i] == label) idx.push_back(i);
  SimData out{sim.data.subset(idx), std::vector<int>(idx.size(), 0), {}, VectorXd(static_cast<Index>(idx.size()))};
  out.mu.resize(static_cast<Index>(out.data.total_obs()));
  Index r = 0;
  for (std::size_t j = 0; j < idx.size(); ++j) {
    out.b(static_cast<Index>(j)) = sim.b(static_cast<Index>(idx[j]));
    for (const auto& o : out.data.subjects()[j].obs) out.mu(r++) = sim_mean(label, o.t, o.tau - 1);
  }
  return out;
}

}  // namespace

TEST_CASE("posterior matches the diffuse-prior Gaussian process") {
  std::mt19937_64 rng(41);
  std::uniform_real_distribution<double> u(0.0, 1.0);
  int checked = 0;
  double worst_mean = 0.0, worst_var = 0.0;
  for (int rep = 0; rep < 24; ++rep) {
    const int a = 1 + rep % 3;
    const Structure st = a > 1 && rep % 2 ? Structure::Interaction : Structure::Additive;
    const RandomEffect re = rep % 4 == 3 ? RandomEffect::InterceptSlope : RandomEffect::Intercept;
    const int p = re == RandomEffect::InterceptSlope ? 2 : 1;
    const auto data = oracle::random_dataset(rng, 4, 8, a, st);
    const PenalizedProblem prob(design_of(data, re), data.responses(),
                                rep % 3 == 1 ? VectorXd(VectorXd::LinSpaced(4, 0.5, 1.5)) : VectorXd(VectorXd::Ones(4)));
    if (prob.null_space_deficient()) continue;
    SmoothingParams sp;
    sp.lambda = std::pow(10.0, -4.0 + 2.0 * u(rng));
    sp.theta12 = st == Structure::Interaction ? 0.3 + u(rng) : 0.0;
    sp.omega = MatrixXd::Identity(p, p) * (0.5 + u(rng));
    if (p == 2) sp.omega(0, 1) = sp.omega(1, 0) = 0.1;
    const double sigma2 = 0.2 + u(rng);
    const PosteriorFit fit(prob, sp, sigma2);

    CurveQuery q;
    q.grid = probe_grid(a);
    const Index np = 4 * p;
    // population curve, one shared subject effect, and a per-point mix
    std::vector<MatrixXd> zs{MatrixXd(np, 0), MatrixXd::Zero(np, 1), MatrixXd::Zero(np, static_cast<Index>(q.grid.size()))};
    zs[1](p, 0) = 1.0;
    for (Index g = 0; g < zs[2].cols(); ++g) {
      zs[2](((g % 4) * p), g) = 1.0;
      if (p == 2) zs[2]((g % 4) * p + 1, g) = q.grid[static_cast<std::size_t>(g)].t;
    }
    for (const auto& z : zs) {
      q.z = z;
      const auto ref = oracle::diffuse_posterior(data, p, sp.theta12, sp.lambda, sp.omega, sigma2, prob.weights(),
                                                 q.grid, z);
      const VectorXd m = posterior_mean(fit, q);
      const VectorXd v = posterior_variance(fit, q);
      for (std::size_t g = 0; g < q.grid.size(); ++g) {
        const auto gi = static_cast<Index>(g);
        worst_mean = std::max(worst_mean, std::abs(m(gi) - ref.mean[g]) / std::max(1.0, std::abs(ref.mean[g])));
        worst_var = std::max(worst_var, rel_err(v(gi), ref.variance[g]));
      }
    }
    ++checked;
  }
  CHECK(checked >= 20);
  CHECK(worst_mean <= 1e-4);
  CHECK(worst_var <= 1e-4);
}

TEST_CASE("posterior mean at data points reproduces the fitted values") {
  std::mt19937_64 rng(42);
  const auto data = oracle::random_dataset(rng, 5, 7, 2, Structure::Additive);
  const PenalizedProblem prob(design_of(data), data.responses(), VectorXd::Ones(5));
  SmoothingParams sp;
  sp.lambda = 1e-3;
  sp.omega = MatrixXd::Constant(1, 1, 0.8);
  const PosteriorFit fit(prob, sp, 0.5);
  const auto& sol = fit.solution();
  Index r = 0;
  for (std::size_t i = 0; i < data.n_subjects(); ++i) {
    VectorXd z = VectorXd::Zero(5);
    z(static_cast<Index>(i)) = 1.0;
    for (const auto& o : data.subjects()[i].obs)
      CHECK(fit.mean({o.t, o.tau}, z) == doctest::Approx(sol.fitted(r++)).epsilon(1e-12));
  }
}

TEST_CASE("closed-form display and Henderson route agree") {
  std::mt19937_64 rng(43);
  for (int rep = 0; rep < 6; ++rep) {
    const int a = 1 + rep % 2;
    const Structure st = a == 2 && rep % 4 == 1 ? Structure::Interaction : Structure::Additive;
    const auto data = oracle::random_dataset(rng, 4, 7, a, st);
    VectorXd w = VectorXd::Ones(4);
    w(2) = rep % 2 ? 0.0 : 0.7;
    const PenalizedProblem prob(design_of(data), data.responses(), w);
    if (prob.null_space_deficient()) continue;
    SmoothingParams sp;
    sp.lambda = 1e-2;
    sp.theta12 = st == Structure::Interaction ? 1.2 : 0.0;
    sp.omega = MatrixXd::Constant(1, 1, 1.3);
    const PosteriorFit fit(prob, sp, 0.9);
    CurveQuery q;
    q.grid = probe_grid(a);
    for (int zc : {0, 1}) {
      q.z = MatrixXd::Zero(4, zc);
      if (zc) q.z(2, 0) = 1.0;
      const VectorXd h = posterior_variance(fit, q);
      const VectorXd d = posterior_variance_display(fit, q);
      for (Index g = 0; g < h.size(); ++g) CHECK(d(g) == doctest::Approx(h(g)).epsilon(1e-6));
    }
  }
}

TEST_CASE("band width uses the normal quantile") {
  CHECK(normal_quantile(0.975) == doctest::Approx(1.959963984540054).epsilon(1e-14));
  CHECK(normal_quantile(0.5) == 0.0);
  CHECK_THROWS_AS(normal_quantile(1.0), std::invalid_argument);

  std::mt19937_64 rng(44);
  const auto data = oracle::random_dataset(rng, 5, 7, 1, Structure::Additive);
  const PenalizedProblem prob(design_of(data), data.responses(), VectorXd::Ones(5));
  SmoothingParams sp;
  sp.lambda = 1e-3;
  sp.omega = MatrixXd::Constant(1, 1, 1.0);
  const PosteriorFit fit(prob, sp, 0.4);
  CurveQuery q;
  q.grid = regular_grid(data.domain(), 11);
  CHECK(q.grid.size() == 11);
  const CurveBand band = confidence_band(fit, q);
  CHECK(band.clipped == 0);
  for (Index g = 0; g < band.mean.size(); ++g) {
    const double half = (band.upper(g) - band.lower(g)) / 2.0;
    CHECK(half == doctest::Approx(1.959964 * std::sqrt(band.variance(g))).epsilon(1e-6));
    CHECK((band.upper(g) + band.lower(g)) / 2.0 == doctest::Approx(band.mean(g)).epsilon(1e-12));
  }
  q.alpha = 1.0 - 1e-12;
  const CurveBand thin = confidence_band(fit, q);
  CHECK((thin.upper - thin.lower).cwiseAbs().maxCoeff() <= 1e-9);
  q.alpha = 0.0;
  CHECK_THROWS_AS(confidence_band(fit, q), std::invalid_argument);
  q.alpha = 1.0;
  CHECK_THROWS_AS(confidence_band(fit, q), std::invalid_argument);
  q.alpha = 0.05;
  q.z = MatrixXd::Zero(5, 3);
  CHECK_THROWS_AS(confidence_band(fit, q), std::invalid_argument);
}

TEST_CASE("variance is unchanged by subject reordering") {
  std::mt19937_64 rng(45);
  const auto data = oracle::random_dataset(rng, 5, 7, 2, Structure::Additive);
  auto subs = data.subjects();
  std::reverse(subs.begin(), subs.end());
  const FunctionalDataset rev(subs, data.domain());
  SmoothingParams sp;
  sp.lambda = 1e-3;
  sp.omega = MatrixXd::Constant(1, 1, 2.0);
  const PosteriorFit a(PenalizedProblem(design_of(data), data.responses(), VectorXd::Ones(5)), sp, 1.0);
  const PosteriorFit b(PenalizedProblem(design_of(rev), rev.responses(), VectorXd::Ones(5)), sp, 1.0);
  CurveQuery q;
  q.grid = probe_grid(2);
  const VectorXd va = posterior_variance(a, q), vb = posterior_variance(b, q);
  for (Index g = 0; g < va.size(); ++g) CHECK(va(g) == doctest::Approx(vb(g)).epsilon(1e-10));
}

TEST_CASE("cluster bands for a single cluster equal the plain band") {
  SimScenario sc;
  sc.cluster_sizes = {8, 8, 8, 8};
  sc.seed = 46;
  const SimData sim = generate(sc);
  const MixtureContext ctx(sim.data, {});
  MixtureConfig cfg;
  cfg.K = 1;
  cfg.chains = 1;
  const ClusteringResult r = run_em(ctx, cfg);
  CurveQuery q;
  q.grid = regular_grid(sim.data.domain(), 9);
  const auto bands = cluster_bands(ctx, r, q);
  REQUIRE(bands.size() == 1);
  const PenalizedProblem prob(ctx.design_ptr(), ctx.y(), VectorXd::Ones(ctx.n()));
  const CurveBand ref = confidence_band(PosteriorFit(prob, r.state.clusters[0].params, r.state.sigma2), q);
  CHECK((bands[0].mean - ref.mean).cwiseAbs().maxCoeff() <= 1e-12);
  CHECK((bands[0].variance - ref.variance).cwiseAbs().maxCoeff() <= 1e-12);
}

TEST_CASE("simulated cluster: band covers the true mean and narrows with more subjects") {
  SimScenario sc;
  sc.seed = 47;
  const SimData sim = generate(sc);
  const SimData sub = cluster_subset(sim, 2);
  const auto ds = design_of(sub.data);
  const PenalizedProblem prob(ds, sub.data.responses(), VectorXd::Ones(ds->n_subjects()));
  const GCVResult g = minimize_gcv(prob);
  const auto sol = prob.solve(g.params);
  const double sigma2 = sol.rss / static_cast<double>(ds->rows());
  const PosteriorFit fit(prob, g.params, sigma2);

  CurveQuery q;
  q.grid = regular_grid(sub.data.domain(), 31);
  const CurveBand band = confidence_band(fit, q);
  int covered = 0;
  for (std::size_t k = 0; k < q.grid.size(); ++k) {
    const double truth = sim_mean(2, q.grid[k].t, q.grid[k].tau - 1);
    const auto ki = static_cast<Index>(k);
    if (truth >= band.lower(ki) && truth <= band.upper(ki)) ++covered;
  }
  // soft check: the band is pointwise and the intercepts shift the level
  CHECK(covered >= static_cast<int>(0.8 * static_cast<double>(q.grid.size())));
  CHECK(fit.mean({1.0, 1}, {}) == doctest::Approx(-2.0).epsilon(0.25));

  // same prior (N lambda fixed), fewer subjects: the posterior gets wider
  const SimData few = cluster_subset(sim, 2, 10);
  const auto dsf = design_of(few.data);
  SmoothingParams spf = g.params;
  spf.lambda *= static_cast<double>(ds->rows()) / static_cast<double>(dsf->rows());
  const PosteriorFit small(PenalizedProblem(dsf, few.data.responses(), VectorXd::Ones(dsf->n_subjects())), spf,
                           sigma2);
  const VectorXd v_all = posterior_variance(fit, q), v_few = posterior_variance(small, q);
  for (Index k = 0; k < v_all.size(); ++k) CHECK(v_all(k) <= v_few(k) * (1.0 + 1e-9));
  CHECK(v_all.mean() < v_few.mean());
}
