#pragma once

#include "curveclust/mixture_em.hpp"
#include "curveclust/pls_solver.hpp"
#include "curveclust/rkhs.hpp"

#include <Eigen/Dense>

#include <memory>
#include <vector>

namespace curveclust {

// Grid points use normalized time. z has 0 columns (population curve), one
// column shared by every grid point, or one column per grid point; each
// column has n*p entries.
struct CurveQuery {
  std::vector<Knot> grid;
  Eigen::MatrixXd z;
  double alpha = 0.05;
};

struct CurveBand {
  std::vector<Knot> grid;
  Eigen::VectorXd mean, variance, lower, upper;
  int clipped = 0;  // negative variances set to 0
};

// Standard normal quantile.
double normal_quantile(double p);

// A weighted fit prepared for posterior evaluation. sigma2 is the measurement
// variance used to scale the posterior.
class PosteriorFit {
 public:
  PosteriorFit(const PenalizedProblem& problem, const SmoothingParams& params, double sigma2);

  const Design& design() const { return *design_; }
  const PLSSolution& solution() const { return fs_.solution; }
  const SmoothingParams& params() const { return params_; }
  double sigma2() const { return sigma2_; }
  const Eigen::VectorXd& weights() const { return fs_.weights; }

  // phi(x) and xi(x) stacked into an (m + T)-vector.
  Eigen::VectorXd fixed_row(const Knot& x) const;
  double mean(const Knot& x, const Eigen::VectorXd& z) const;
  // Var[mu(x) + z^T b | y] from the factored Henderson system.
  double variance(const Knot& x, const Eigen::VectorXd& z) const;

 private:
  std::shared_ptr<const Design> design_;
  KernelModel model_;
  SmoothingParams params_;
  double sigma2_;
  FactoredSystem fs_;
  Eigen::MatrixXd omega_inv_;
};

Eigen::VectorXd posterior_mean(const PosteriorFit& fit, const CurveQuery& query);
Eigen::VectorXd posterior_variance(const PosteriorFit& fit, const CurveQuery& query,
                                   int* clipped = nullptr);
// The closed-form display with an explicit N x N matrix
//   W = R Q^+ R^T + N lambda Z Omega^+ Z^T + N lambda I
// on the weighted rows. Dense in N; meant for small problems and cross-checks.
Eigen::VectorXd posterior_variance_display(const PosteriorFit& fit, const CurveQuery& query,
                                           int* clipped = nullptr);

CurveBand confidence_band(const PosteriorFit& fit, const CurveQuery& query);

// Population band per cluster from that cluster's weighted system.
std::vector<CurveBand> cluster_bands(const MixtureContext& ctx, const ClusteringResult& result,
                                     const CurveQuery& query);

// `points` equally spaced normalized times for each factor level, in (tau, t) order.
std::vector<Knot> regular_grid(const DomainSpec& domain, int points);

}  // namespace curveclust
