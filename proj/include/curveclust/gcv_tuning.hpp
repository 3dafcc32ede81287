#pragma once

#include "curveclust/pls_solver.hpp"

#include <optional>
#include <vector>

namespace curveclust {

// Tuning coordinates, all base-10 logs.
//   p = 1: log_corr = {log10 omega}, omega = sigma^2 / sigma_b^2
//   p = 2: log_corr = {log10 l11, l21, log10 l22} with Omega = L L^T
struct TuningPoint {
  double log_lambda = 0.0;
  std::optional<double> log_theta_ratio;  // log10 theta12/theta1; Interaction only
  std::vector<double> log_corr;

  std::vector<double> coords() const;
  static TuningPoint from_coords(const std::vector<double>& x, bool has_theta);
  SmoothingParams to_params() const;
  // Number of free tuning coordinates.
  std::size_t size() const { return 1 + (log_theta_ratio ? 1 : 0) + log_corr.size(); }
};

struct GCVOptions {
  double log_lambda_min = -8.0, log_lambda_max = 2.0;
  double log_corr_min = -4.0, log_corr_max = 4.0;
  double log_theta_min = -4.0, log_theta_max = 4.0;
  double offdiag_bound = 100.0;  // |l21| for p = 2
  int max_iter = 100;
  double rel_tol = 1e-7;
  int starts = 3;
  double fd_step = 1e-4;
  // Extra BFGS start, e.g. the previous EM iteration's choice.
  std::optional<TuningPoint> warm_start;
};

struct GCVResult {
  TuningPoint point;
  SmoothingParams params;
  double score = 0.0;
  double trace_A = 0.0;
  int evaluations = 0;
  bool clipped = false;  // some coordinate sits on a search bound
};

// V = N^{-1} ||(I - A) y_w||^2 / (N^{-1} tr(I - A))^2 for the system's own y.
double gcv_score(const PenalizedSystem& system);
double gcv_score(const PenalizedProblem& problem, const SmoothingParams& params);

// Coarse grid: 7 log-lambda values x 5 log-corr values (x 3 theta ratios under
// Interaction).
std::vector<TuningPoint> coarse_grid(const Design& design, const GCVOptions& opts = {});

// Scores for each grid point; degenerate evaluations give +inf.
std::vector<double> grid_scores(const PenalizedProblem& problem,
                                const std::vector<TuningPoint>& grid);

GCVResult minimize_gcv(const PenalizedProblem& problem, const GCVOptions& opts = {});
GCVResult minimize_gcv(const Eigen::VectorXd& y, const FunctionalDataset& data,
                       const RandomEffectSpec& re, const GCVOptions& opts = {},
                       std::size_t knot_cap = kDefaultKnotCap);

}  // namespace curveclust
