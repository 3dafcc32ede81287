#include "curveclust/rkhs.hpp"

#include "curveclust/errors.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>
#include <string>

namespace curveclust {

double cubic_cross(double t1, double t2) {
  if (!(t1 >= 0.0 && t1 <= 1.0) || !(t2 >= 0.0 && t2 <= 1.0))
    throw DomainError("cubic_cross: arguments must lie in [0, 1]");
  const double s = std::min(t1, t2);
  const double g = std::max(t1, t2);
  return s * s * (3.0 * g - s) / 6.0;
}

KernelModel::KernelModel(DomainSpec domain, ThetaWeights theta)
    : domain_(domain), theta_(theta), m_(null_space_dim(domain)) {
  domain_.validate();
  if (!(theta_.theta1 > 0.0) || !std::isfinite(theta_.theta1))
    throw std::invalid_argument("theta1 must be positive");
  if (!(theta_.theta12 >= 0.0) || !std::isfinite(theta_.theta12))
    throw std::invalid_argument("theta12 must be non-negative");
  if (domain_.structure == Structure::Additive && theta_.theta12 != 0.0)
    throw std::invalid_argument("additive structure requires theta12 = 0");
}

void KernelModel::check_point(double t, int tau) const {
  if (!(t >= 0.0 && t <= 1.0)) throw DomainError("time outside [0, 1]");
  if (tau < 1 || tau > domain_.factor_levels)
    throw DomainError("factor level " + std::to_string(tau) + " outside 1.." +
                      std::to_string(domain_.factor_levels));
}

double KernelModel::contrast(int tau1, int tau2) const {
  return (tau1 == tau2 ? 1.0 : 0.0) - 1.0 / domain_.factor_levels;
}

Eigen::VectorXd KernelModel::eval_basis(double t, int tau) const {
  check_point(t, tau);
  const int a = domain_.factor_levels;
  Eigen::VectorXd phi(m_);
  phi(0) = 1.0;
  phi(1) = t;
  for (int j = 1; j < a; ++j) phi(1 + j) = contrast(j, tau);
  if (domain_.structure == Structure::Interaction)
    for (int j = 1; j < a; ++j) phi(a + j) = contrast(j, tau) * t;
  return phi;
}

double KernelModel::eval_kernel(double t1, int tau1, double t2, int tau2) const {
  check_point(t1, tau1);
  check_point(t2, tau2);
  const double k = cubic_cross(t1, t2);
  if (theta_.theta12 == 0.0) return theta_.theta1 * k;
  return theta_.theta1 * k + theta_.theta12 * contrast(tau1, tau2) * k;
}

GramMatrices gram_matrices(const KernelModel& model, const FunctionalDataset& data,
                           const std::vector<Knot>& knots) {
  const auto N = static_cast<Eigen::Index>(data.total_obs());
  const auto T = static_cast<Eigen::Index>(knots.size());
  GramMatrices g;
  g.S.resize(N, model.m());
  g.R.resize(N, T);
  g.Q.resize(T, T);
  Eigen::Index r = 0;
  for (const auto& s : data.subjects()) {
    for (const auto& o : s.obs) {
      g.S.row(r) = model.eval_basis(o.t, o.tau).transpose();
      for (Eigen::Index j = 0; j < T; ++j) {
        const auto& kn = knots[static_cast<std::size_t>(j)];
        g.R(r, j) = model.eval_kernel(o.t, o.tau, kn.t, kn.tau);
      }
      ++r;
    }
  }
  for (Eigen::Index j = 0; j < T; ++j)
    for (Eigen::Index k = 0; k <= j; ++k) {
      const auto& a = knots[static_cast<std::size_t>(j)];
      const auto& b = knots[static_cast<std::size_t>(k)];
      g.Q(j, k) = g.Q(k, j) = model.eval_kernel(a.t, a.tau, b.t, b.tau);
    }
  return g;
}

GramComponents gram_components(const DomainSpec& domain, const FunctionalDataset& data,
                               const std::vector<Knot>& knots) {
  const KernelModel model(domain, ThetaWeights{1.0, 0.0});
  GramComponents c;
  {
    auto g = gram_matrices(model, data, knots);
    c.S = std::move(g.S);
    c.R_main = std::move(g.R);
    c.Q_main = std::move(g.Q);
  }
  if (domain.structure == Structure::Interaction) {
    const auto N = c.R_main.rows();
    const auto T = c.R_main.cols();
    c.R_inter.resize(N, T);
    Eigen::Index r = 0;
    for (const auto& s : data.subjects())
      for (const auto& o : s.obs) {
        for (Eigen::Index j = 0; j < T; ++j)
          c.R_inter(r, j) = model.contrast(o.tau, knots[static_cast<std::size_t>(j)].tau) *
                            c.R_main(r, j);
        ++r;
      }
    c.Q_inter.resize(T, T);
    for (Eigen::Index j = 0; j < T; ++j)
      for (Eigen::Index k = 0; k < T; ++k)
        c.Q_inter(j, k) = model.contrast(knots[static_cast<std::size_t>(j)].tau,
                                         knots[static_cast<std::size_t>(k)].tau) *
                          c.Q_main(j, k);
  }
  return c;
}

std::vector<Knot> subsample_knots(const std::vector<Knot>& all, std::size_t cap) {
  if (cap == 0 || all.size() <= cap) return all;
  std::vector<Knot> picked;
  picked.reserve(cap);
  const double step = cap > 1 ? static_cast<double>(all.size() - 1) / static_cast<double>(cap - 1) : 0.0;
  for (std::size_t j = 0; j < cap; ++j) {
    const auto idx = static_cast<std::size_t>(std::llround(step * static_cast<double>(j)));
    picked.push_back(all[std::min(idx, all.size() - 1)]);
  }
  return picked;
}

std::vector<Knot> select_knots(const FunctionalDataset& data, std::size_t cap) {
  return subsample_knots(data.knots(), cap);
}

std::vector<Knot> model_knots(const FunctionalDataset& data, std::size_t cap) {
  std::vector<Knot> keep;
  if (data.domain().structure == Structure::Additive) {
    std::vector<double> times;
    for (const auto& k : data.knots())
      if (k.t > 0.0) times.push_back(k.t);
    std::sort(times.begin(), times.end());
    times.erase(std::unique(times.begin(), times.end()), times.end());
    for (double t : times) keep.push_back({t, 1});
  } else {
    for (const auto& k : data.knots())
      if (k.t > 0.0) keep.push_back(k);
  }
  return subsample_knots(keep, cap);
}

}  // namespace curveclust
