#include "curveclust/errors.hpp"
#include "curveclust/rkhs.hpp"

#include "oracles.hpp"

#include <doctest.h>

#include <random>

using namespace curveclust;
using Eigen::MatrixXd;
using Eigen::VectorXd;

namespace {

DomainSpec domain(int a, Structure st) {
  DomainSpec d;
  d.factor_levels = a;
  d.structure = st;
  return d;
}

double min_rel_eigen(const MatrixXd& q) {
  Eigen::SelfAdjointEigenSolver<MatrixXd> es(q);
  return es.eigenvalues().minCoeff() / es.eigenvalues().maxCoeff();
}

}  // namespace

TEST_CASE("cubic_cross closed form") {
  CHECK(cubic_cross(0.0, 0.7) == 0.0);
  CHECK(cubic_cross(1.0, 1.0) == doctest::Approx(1.0 / 3.0).epsilon(1e-15));
  CHECK(cubic_cross(0.5, 1.0) == doctest::Approx(5.0 / 48.0).epsilon(1e-15));
  CHECK_THROWS_AS(cubic_cross(-0.01, 0.5), DomainError);
  CHECK_THROWS_AS(cubic_cross(0.5, 1.01), DomainError);
}

TEST_CASE("cubic_cross agrees with adaptive quadrature") {
  CHECK(oracle::cross_quadrature(0.5, 1.0) == doctest::Approx(5.0 / 48.0).epsilon(1e-12));
  std::mt19937_64 rng(17);
  std::uniform_real_distribution<double> u(0.0, 1.0);
  for (int i = 0; i < 200; ++i) {
    const double a = u(rng), b = u(rng);
    CHECK(cubic_cross(a, b) == doctest::Approx(oracle::cross_quadrature(a, b)).epsilon(1e-11));
    CHECK(cubic_cross(a, b) == cubic_cross(b, a));
  }
}

TEST_CASE("kernel values for a two-level interaction model") {
  const KernelModel m(domain(2, Structure::Interaction), {1.0, 1.0});
  CHECK(m.eval_kernel(1.0, 1, 1.0, 1) == doctest::Approx(0.5).epsilon(1e-15));
  CHECK(m.eval_kernel(1.0, 1, 1.0, 2) == doctest::Approx(1.0 / 6.0).epsilon(1e-15));
  CHECK(m.eval_kernel(0.3, 2, 0.8, 1) == m.eval_kernel(0.8, 1, 0.3, 2));
}

TEST_CASE("additive kernel ignores the factor") {
  const KernelModel m(domain(3, Structure::Additive), {1.0, 0.0});
  for (int t1 = 1; t1 <= 3; ++t1)
    for (int t2 = 1; t2 <= 3; ++t2) CHECK(m.eval_kernel(0.4, t1, 0.9, t2) == cubic_cross(0.4, 0.9));
  // theta12 = 0 inside an interaction model reproduces the additive values
  const KernelModel i0(domain(3, Structure::Interaction), {1.0, 0.0});
  CHECK(i0.eval_kernel(0.4, 1, 0.9, 2) == m.eval_kernel(0.4, 1, 0.9, 2));
  CHECK_THROWS_AS(KernelModel(domain(2, Structure::Additive), {1.0, 0.5}), std::invalid_argument);
  CHECK_THROWS_AS(KernelModel(domain(2, Structure::Interaction), {0.0, 0.5}), std::invalid_argument);
}

TEST_CASE("kernel is linear in both theta weights") {
  const auto d = domain(2, Structure::Interaction);
  const KernelModel a(d, {1.0, 0.5}), b(d, {2.0, 1.0}), c(d, {1.0, 2.0});
  CHECK(b.eval_kernel(0.3, 1, 0.6, 1) == doctest::Approx(2.0 * a.eval_kernel(0.3, 1, 0.6, 1)).epsilon(1e-14));
  const double k = cubic_cross(0.3, 0.6);
  CHECK(c.eval_kernel(0.3, 1, 0.6, 2) - a.eval_kernel(0.3, 1, 0.6, 2) ==
        doctest::Approx(1.5 * (-0.5) * k).epsilon(1e-13));
}

TEST_CASE("basis order and dimensions") {
  const KernelModel in(domain(2, Structure::Interaction), {1.0, 1.0});
  CHECK(in.m() == 4);
  const VectorXd bi = in.eval_basis(0.5, 1);
  CHECK(bi(0) == 1.0);
  CHECK(bi(1) == 0.5);
  CHECK(bi(2) == 0.5);
  CHECK(bi(3) == 0.25);

  const KernelModel ad(domain(2, Structure::Additive), {1.0, 0.0});
  CHECK(ad.m() == 3);
  const VectorXd ba = ad.eval_basis(0.5, 2);
  CHECK(ba(2) == -0.5);
  // the additive basis is the leading part of the interaction basis
  CHECK(ad.eval_basis(0.3, 2) == in.eval_basis(0.3, 2).head(3));

  const KernelModel one(domain(1, Structure::Additive), {1.0, 0.0});
  CHECK(one.m() == 2);
  CHECK(null_space_dim(domain(4, Structure::Interaction)) == 8);
  CHECK(null_space_dim(domain(4, Structure::Additive)) == 5);
  CHECK_THROWS_AS(in.eval_basis(1.2, 1), DomainError);
  CHECK_THROWS_AS(in.eval_basis(0.2, 3), DomainError);
}

TEST_CASE("factor contrasts sum to zero over levels") {
  for (int a = 2; a <= 5; ++a) {
    const KernelModel m(domain(a, Structure::Interaction), {1.0, 1.0});
    VectorXd total = VectorXd::Zero(m.m());
    for (int tau = 1; tau <= a; ++tau) total += m.eval_basis(0.7, tau);
    // constant and time columns add up to a and 0.7a, every contrast to 0
    CHECK(total(0) == doctest::Approx(a));
    for (int j = 2; j < m.m(); ++j) CHECK(std::abs(total(j)) < 1e-14);
  }
}

TEST_CASE("gram matrices against elementwise oracles") {
  std::mt19937_64 rng(3);
  const auto data = oracle::random_dataset(rng, 4, 6, 2, Structure::Interaction, true);
  const KernelModel m(data.domain(), {1.0, 0.7});
  const auto g = gram_matrices(m, data);
  const auto e = oracle::explicit_design(data, 1, 0.7);
  CHECK((g.S - e.S).cwiseAbs().maxCoeff() < 1e-14);
  CHECK((g.R - e.R).cwiseAbs().maxCoeff() < 1e-14);
  CHECK((g.Q - e.Q).cwiseAbs().maxCoeff() < 1e-14);
  CHECK((g.Q - g.Q.transpose()).cwiseAbs().maxCoeff() == 0.0);

  // rows of R at observations sitting on knots are rows of Q
  Eigen::Index r = 0;
  for (const auto& s : data.subjects())
    for (const auto& o : s.obs) {
      const auto it = std::find(data.knots().begin(), data.knots().end(), Knot{o.t, o.tau});
      const auto j = static_cast<Eigen::Index>(it - data.knots().begin());
      CHECK((g.R.row(r) - g.Q.row(j)).cwiseAbs().maxCoeff() == 0.0);
      ++r;
    }
}

TEST_CASE("three knots additive: Q is the cubic_cross matrix") {
  std::vector<Subject> subs{{"a", {{0.2, 1, 0.0}, {0.5, 1, 0.0}, {0.9, 1, 0.0}}}};
  const FunctionalDataset data(subs, domain(1, Structure::Additive));
  const auto g = gram_matrices(KernelModel(data.domain(), {1.0, 0.0}), data);
  const double t[3] = {0.2, 0.5, 0.9};
  for (int i = 0; i < 3; ++i)
    for (int j = 0; j < 3; ++j) CHECK(g.Q(i, j) == cubic_cross(t[i], t[j]));
}

TEST_CASE("gram matrices are positive semi-definite on random knot sets") {
  std::mt19937_64 rng(11);
  std::uniform_real_distribution<double> u(0.0, 1.0);
  std::uniform_real_distribution<double> th(0.0, 5.0);
  for (int rep = 0; rep < 30; ++rep) {
    const int a = 1 + rep % 3;
    const Structure st = a > 1 && rep % 2 ? Structure::Interaction : Structure::Additive;
    std::vector<Subject> subs(1);
    subs[0].id = "x";
    for (int j = 0; j < 25; ++j) subs[0].obs.push_back({u(rng), 1 + j % a, 0.0});
    const FunctionalDataset data(subs, domain(a, st));
    const double t12 = st == Structure::Interaction ? th(rng) : 0.0;
    const auto g = gram_matrices(KernelModel(data.domain(), {1.0, t12}), data);
    CHECK(min_rel_eigen(g.Q) >= -1e-10);
  }
}

TEST_CASE("gram components recombine into the theta-weighted matrices") {
  std::mt19937_64 rng(8);
  const auto data = oracle::random_dataset(rng, 3, 6, 3, Structure::Interaction);
  const auto c = gram_components(data.domain(), data, data.knots());
  const auto g = gram_matrices(KernelModel(data.domain(), {1.0, 2.5}), data);
  CHECK((c.R_main + 2.5 * c.R_inter - g.R).cwiseAbs().maxCoeff() < 1e-14);
  CHECK((c.Q_main + 2.5 * c.Q_inter - g.Q).cwiseAbs().maxCoeff() < 1e-14);
}

TEST_CASE("knot selection: zero time dropped, additive levels merged, cap respected") {
  std::vector<Subject> subs{{"a", {{0.0, 1, 0.0}, {0.5, 1, 0.0}, {0.5, 2, 0.0}, {1.0, 2, 0.0}}}};
  const FunctionalDataset add(subs, domain(2, Structure::Additive));
  CHECK(add.knots().size() == 4);
  CHECK(model_knots(add, 0).size() == 2);
  const FunctionalDataset inter(subs, domain(2, Structure::Interaction));
  CHECK(model_knots(inter, 0).size() == 3);

  std::vector<Knot> many;
  for (int i = 1; i <= 500; ++i) many.push_back({i / 500.0, 1});
  const auto capped = subsample_knots(many, 200);
  CHECK(capped.size() == 200);
  CHECK(capped.front() == many.front());
  CHECK(capped.back() == many.back());
  CHECK(subsample_knots(many, 0).size() == 500);
  CHECK(subsample_knots(many, 600).size() == 500);
}
