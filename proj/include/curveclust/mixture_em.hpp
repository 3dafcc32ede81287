#pragma once

#include "curveclust/gcv_tuning.hpp"
#include "curveclust/pls_solver.hpp"

#include <Eigen/Dense>

#include <cstdint>
#include <limits>
#include <memory>
#include <random>
#include <string>
#include <vector>

namespace curveclust {

enum class Phase { AdaptiveSmoothing, FixedSmoothing };

// Threshold c applies to iterations up to and including `until` (1-based);
// the last stage applies to every later iteration.
struct RejectionStage {
  int until = std::numeric_limits<int>::max();
  double c = 0.0;
};

std::vector<RejectionStage> default_rc_schedule();
double rc_threshold(const std::vector<RejectionStage>& schedule, int iteration);

struct MixtureConfig {
  int K = 4;
  int chains = 3;
  std::vector<RejectionStage> rc_schedule = default_rc_schedule();
  int stop_patience = 5;
  int max_iter = 100;
  std::uint64_t seed = 20240601;
  // FixedSmoothing skips the GCV phase; initial smoothing then comes from
  // `fixed_tuning` (one point per cluster) or a single GCV fit per cluster.
  Phase phase = Phase::AdaptiveSmoothing;
  std::vector<TuningPoint> fixed_tuning;

  RandomEffectSpec re;
  std::size_t knot_cap = kDefaultKnotCap;
  GCVOptions gcv;
  double min_cluster_weight = 2.0;
  double improve_tol = 1e-7;  // relative loglik gain that counts as improving
  int kmeans_restarts = 10;
  int feature_grid = 10;

  void validate() const;
};

// Shared per-dataset quantities.
class MixtureContext {
 public:
  MixtureContext(const FunctionalDataset& data, const RandomEffectSpec& re,
                 std::size_t knot_cap = kDefaultKnotCap);

  const FunctionalDataset& data() const { return data_; }
  const std::shared_ptr<const Design>& design_ptr() const { return design_; }
  const Design& design() const { return *design_; }
  const Eigen::VectorXd& y() const { return y_; }
  Eigen::Index n() const { return design_->n_subjects(); }
  Eigen::Index N() const { return design_->rows(); }
  const Eigen::MatrixXd& ztz(Eigen::Index i) const { return ztz_[static_cast<std::size_t>(i)]; }
  std::size_t knot_cap() const { return knot_cap_; }

 private:
  FunctionalDataset data_;
  std::size_t knot_cap_;
  std::shared_ptr<const Design> design_;
  Eigen::VectorXd y_;
  std::vector<Eigen::MatrixXd> ztz_;
};

struct ClusterFit {
  TuningPoint tuning;
  SmoothingParams params;   // lambda, theta12, Omega = sigma^2 B^{-1}
  Eigen::VectorXd d, c, b;  // b: n*p, weight-0 subjects 0
  Eigen::MatrixXd B;        // sigma^2 Omega^{-1}
  double trace_A = 0.0;
  double gcv = 0.0;
  double rss = 0.0;         // sum_i w_ik ||y_i - mu_k - Z_i b_ik||^2
  Eigen::VectorXd mean;     // mu_k at every observation
};

struct MixtureState {
  Eigen::VectorXd p;
  double sigma2 = 1.0;
  std::vector<ClusterFit> clusters;
  Eigen::MatrixXd w;            // E-step weights from the current clusters
  Eigen::MatrixXd fit_weights;  // weights the clusters were fitted with
  double loglik = -std::numeric_limits<double>::infinity();
  Eigen::VectorXd subject_loglik;
  int iteration = 0;
};

struct ChainTrace {
  int chain_id = 0;
  std::vector<double> loglik;
  bool failed = false;
  std::string error;
  bool reseeded = false;
  double bic = std::numeric_limits<double>::infinity();
};

struct ClusteringResult {
  MixtureState state;
  std::vector<int> hard_labels;
  double bic = 0.0;
  double sum_trace = 0.0;
  int n_params = 0;
  int chain_id = 0;
  std::vector<double> history;
  std::vector<ChainTrace> chains;
};

using Rng = std::mt19937_64;
// Uniform in [0, 1) from the top 53 bits.
double uniform01(Rng& rng);
std::uint64_t splitmix64(std::uint64_t x);

struct EStepResult {
  Eigen::MatrixXd w;
  Eigen::MatrixXd log_density;  // log phi(y_i; mu_k, Sigma_k)
  Eigen::VectorXd subject_loglik;
  double loglik = 0.0;
};

// log phi(y_i; mu, sigma^2 (I + Z Omega^{-1} Z^T)) through the p x p
// Woodbury identity.
double subject_log_density(const MixtureContext& ctx, Eigen::Index i, const Eigen::VectorXd& mean,
                           const Eigen::MatrixXd& omega, double sigma2);

EStepResult estep_full(const MixtureContext& ctx, const MixtureState& state);
Eigen::MatrixXd estep(const MixtureContext& ctx, const MixtureState& state);
double observed_loglik(const MixtureContext& ctx, const MixtureState& state);

Eigen::MatrixXd rejection_control(const Eigen::MatrixXd& w, double c, Rng& rng);
Eigen::VectorXd update_mixing(const Eigen::MatrixXd& w);

struct MStepResult {
  std::vector<ClusterFit> clusters;
  double sigma2 = 0.0;
};

// Weighted fits for every column of w. Under FixedSmoothing `frozen` supplies
// each cluster's tuning; under AdaptiveSmoothing it only warm-starts GCV.
MStepResult mstep(const MixtureContext& ctx, const Eigen::MatrixXd& w, Phase phase,
                  const std::vector<TuningPoint>& frozen, const MixtureConfig& config);

// Order-free initial partition from k-means++ on interpolated response profiles.
std::vector<int> kmeans_partition(const MixtureContext& ctx, int K, Rng& rng, int restarts,
                                  int grid);
Eigen::MatrixXd soft_indicators(const std::vector<int>& labels, int K);
Eigen::MatrixXd profile_features(const FunctionalDataset& data, int grid);

// Hard labels: argmax with ties to the lowest index.
std::vector<int> hard_labels(const Eigen::MatrixXd& w);

int tuning_parameter_count(const MixtureState& state);
double bic(double loglik, double sum_trace, int n_params, Eigen::Index N);
double bic(const MixtureContext& ctx, const MixtureState& state);

// One chain from a given initial weight matrix.
ClusteringResult run_chain(const MixtureContext& ctx, const MixtureConfig& config,
                           const Eigen::MatrixXd& w0, Rng& rng, int chain_id = 0);

// Chains run on the subjects sorted by id so that input order cannot change
// floating-point sums; per-subject rows come back in ctx order.
ClusteringResult run_em(const MixtureContext& ctx, const MixtureConfig& config);
ClusteringResult run_em(const FunctionalDataset& data, const MixtureConfig& config);

struct KSelectionRow {
  int K = 0;
  bool failed = false;
  std::string error;
  double loglik = 0.0;
  double sum_trace = 0.0;
  int n_params = 0;
  double bic = std::numeric_limits<double>::infinity();
};

struct KSelection {
  int best_K = 0;
  std::vector<KSelectionRow> table;
  std::vector<ClusteringResult> results;  // aligned with table; failed rows hold an empty result
};

// Runs run_em for each K; failed K values are reported in the table and only
// an all-failed range throws.
KSelection select_k(const MixtureContext& ctx, const std::vector<int>& k_range,
                    const MixtureConfig& config);

}  // namespace curveclust
