#pragma once

#include "curveclust/dataspec.hpp"

#include <Eigen/Dense>

#include <vector>

namespace curveclust {

// k(t1, t2) = \int_0^1 (t1 - u)_+ (t2 - u)_+ du, closed form. Throws DomainError
// outside [0, 1].
double cubic_cross(double t1, double t2);

struct ThetaWeights {
  double theta1 = 1.0;   // main-effect smooth weight
  double theta12 = 0.0;  // interaction smooth weight, 0 under Additive
};

// Time x nominal-factor smoothing-spline model:
//   basis  {1, t, I_j(tau) - 1/a (j < a), (I_j(tau) - 1/a) t (j < a, Interaction only)}
//   kernel theta1 k(t1,t2) + theta12 (I[tau1 == tau2] - 1/a) k(t1,t2)
class KernelModel {
 public:
  KernelModel(DomainSpec domain, ThetaWeights theta);

  const DomainSpec& domain() const { return domain_; }
  const ThetaWeights& theta() const { return theta_; }
  int m() const { return m_; }

  Eigen::VectorXd eval_basis(double t, int tau) const;
  double eval_kernel(double t1, int tau1, double t2, int tau2) const;

  // Factor multiplying k(t1,t2) in the interaction term: I[tau1 == tau2] - 1/a.
  double contrast(int tau1, int tau2) const;

 private:
  void check_point(double t, int tau) const;

  DomainSpec domain_;
  ThetaWeights theta_;
  int m_;
};

inline int null_space_dim(const DomainSpec& d) {
  return d.structure == Structure::Interaction ? 2 * d.factor_levels : d.factor_levels + 1;
}

struct GramMatrices {
  Eigen::MatrixXd S;  // N x m, basis at every observation
  Eigen::MatrixXd R;  // N x T, kernel between observations and knots
  Eigen::MatrixXd Q;  // T x T, kernel between knots
};

GramMatrices gram_matrices(const KernelModel& model, const FunctionalDataset& data,
                           const std::vector<Knot>& knots);
inline GramMatrices gram_matrices(const KernelModel& model, const FunctionalDataset& data) {
  return gram_matrices(model, data, data.knots());
}

// Theta-free pieces so R(theta) = theta1 * R_main + theta12 * R_inter (same for Q).
// R_inter/Q_inter are empty under Additive.
struct GramComponents {
  Eigen::MatrixXd S;
  Eigen::MatrixXd R_main, R_inter;
  Eigen::MatrixXd Q_main, Q_inter;
};

GramComponents gram_components(const DomainSpec& domain, const FunctionalDataset& data,
                               const std::vector<Knot>& knots);

// Uniform subsample of `cap` entries (all of them when cap is 0 or not exceeded).
std::vector<Knot> subsample_knots(const std::vector<Knot>& knots, std::size_t cap);
// Canonical knots, uniformly subsampled down to `cap` entries when there are more.
std::vector<Knot> select_knots(const FunctionalDataset& data, std::size_t cap);
// Knots that carry distinct representers: t = 0 is dropped (k(0, .) = 0) and,
// under Additive, levels sharing a time collapse to one knot since the kernel
// ignores tau. Subsampled to `cap`.
std::vector<Knot> model_knots(const FunctionalDataset& data, std::size_t cap);

}  // namespace curveclust
