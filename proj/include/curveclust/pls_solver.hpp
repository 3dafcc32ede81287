#pragma once

#include "curveclust/dataspec.hpp"
#include "curveclust/linalg.hpp"
#include "curveclust/rkhs.hpp"

#include <Eigen/Dense>

#include <memory>
#include <vector>

namespace curveclust {

inline constexpr std::size_t kDefaultKnotCap = 200;

// Theta-free design for one dataset. Rows are observations stacked subject by
// subject; the fixed-effect design for a given theta12 is
//   X(theta12) = [S, R_main + theta12 * R_inter].
struct Design {
  DomainSpec domain;
  RandomEffectSpec re;
  std::vector<Knot> knots;
  bool knots_capped = false;

  Eigen::MatrixXd S;                // N x m
  Eigen::MatrixXd R_main, R_inter;  // N x T (R_inter empty under Additive)
  Eigen::MatrixXd Q_main, Q_inter;  // T x T
  Eigen::MatrixXd Z;                // N x p, subject blocks stacked
  std::vector<Eigen::Index> offsets;  // n + 1 row offsets

  static Design build(const FunctionalDataset& data, const RandomEffectSpec& re,
                      std::size_t knot_cap = kDefaultKnotCap);

  Eigen::Index rows() const { return S.rows(); }
  Eigen::Index m() const { return S.cols(); }
  Eigen::Index T() const { return R_main.cols(); }
  Eigen::Index p() const { return Z.cols(); }
  Eigen::Index n_subjects() const { return static_cast<Eigen::Index>(offsets.size()) - 1; }
  Eigen::Index subject_rows(Eigen::Index i) const { return offsets[i + 1] - offsets[i]; }
  bool has_interaction() const { return R_inter.size() > 0; }

  Eigen::MatrixXd R(double theta12) const;
  Eigen::MatrixXd Q(double theta12) const;
  // S d + R(theta12) c for every row.
  Eigen::VectorXd population_fit(const Eigen::VectorXd& d, const Eigen::VectorXd& c,
                                 double theta12) const;
};

// Tuning quantities entering the penalized normal equations.
struct SmoothingParams {
  double lambda = 1.0;
  double theta12 = 0.0;
  Eigen::MatrixXd omega;  // p x p block of Omega = sigma^2 B^{-1}; must be SPD
};

// The weighted penalized Henderson system. Observation weights equal their
// subject's weight; subjects with weight 0 drop out of the fit.
struct PenalizedSystem {
  std::shared_ptr<const Design> design;
  Eigen::VectorXd y;                // N responses
  Eigen::VectorXd subject_weights;  // n entries in [0, 1]
  SmoothingParams params;
};

struct PLSSolution {
  Eigen::VectorXd d;       // m
  Eigen::VectorXd c;       // T
  Eigen::VectorXd b;       // n*p, unweighted scale; 0 for weight-0 subjects
  Eigen::VectorXd fitted;  // N: S d + R c + Z b
  double trace_A = 0.0;    // tr of the smoothing matrix of the weighted system
  double rss = 0.0;        // ||(I - A) y_w||^2
  Eigen::Index n_rows = 0; // N used in the GCV ratio (all rows of the dataset)

  // N^{-1} rss / (N^{-1} tr(I - A))^2; throws DegenerateTrace when tr(I - A) <= 1e-8 N.
  double gcv() const;
};

double gcv_ratio(double rss, double trace_A, Eigen::Index n_rows);

// A factorized system for one parameter setting. Holds what posterior
// inference needs beyond the coefficients.
struct FactoredSystem {
  PLSSolution solution;
  PivotedCholesky h_chol;              // profiled (d, c) block
  std::vector<Eigen::MatrixXd> d_inv;  // per subject (Z_i^T Z_i + Omega)^{-1}
  Eigen::MatrixXd a;                   // (m+T) x n*p: X_i(theta)^T Z_i blocks
  Eigen::VectorXd weights;
};

// Weighted cross-products for fixed (design, y, weights); repeated solves at
// different SmoothingParams cost O(n (m+T)^2) each.
class PenalizedProblem {
 public:
  PenalizedProblem(std::shared_ptr<const Design> design, Eigen::VectorXd y,
                   Eigen::VectorXd subject_weights);
  explicit PenalizedProblem(const PenalizedSystem& system)
      : PenalizedProblem(system.design, system.y, system.subject_weights) {}

  const Design& design() const { return *design_; }
  const std::shared_ptr<const Design>& design_ptr() const { return design_; }
  const Eigen::VectorXd& y() const { return y_; }
  const Eigen::VectorXd& weights() const { return w_; }
  Eigen::Index n_rows() const { return design_->rows(); }
  // Null-space columns are collinear on the positively weighted rows; every
  // solve throws SingularSystem.
  bool null_space_deficient() const { return s_rank_deficient_; }

  struct Summary {
    double rss = 0.0;
    double trace_A = 0.0;
  };
  // rss and trace only (no fitted vector); the inner loop of GCV.
  Summary summarize(const SmoothingParams& params) const;

  PLSSolution solve(const SmoothingParams& params) const;
  FactoredSystem factorize(const SmoothingParams& params) const;

 private:
  struct Profiled;
  Profiled profile(const SmoothingParams& params, bool want_g2) const;
  // Iterative refinement of pr.f against residuals of the unprofiled normal
  // equations accumulated in long double.
  void refine(Profiled& pr, const SmoothingParams& params) const;
  double residual(const Profiled& pr, const Eigen::VectorXd& f, const SmoothingParams& params,
                  Eigen::VectorXd& correction_rhs) const;
  void validate(const SmoothingParams& params) const;

  std::shared_ptr<const Design> design_;
  Eigen::VectorXd y_, w_;
  std::vector<Eigen::Index> active_;  // subjects with w > 0
  Eigen::Index dim_ = 0;              // m + T
  // G(theta) = g_mm + theta (g_mi + g_mi^T) + theta^2 g_ii, h(theta) = h_m + theta h_i
  Eigen::MatrixXd g_mm_, g_mi_, g_ii_;
  Eigen::VectorXd h_m_, h_i_;
  double ywy_ = 0.0;
  // per active subject: X^T Z (main and interaction parts), Z^T Z, Z^T y
  Eigen::MatrixXd a_main_, a_inter_;  // dim x (n_active * p)
  std::vector<Eigen::MatrixXd> ztz_;
  std::vector<Eigen::VectorXd> zty_;
  bool s_rank_deficient_ = false;
};

PLSSolution solve(const PenalizedSystem& system);
double smoothing_trace(const PenalizedSystem& system);

}  // namespace curveclust
