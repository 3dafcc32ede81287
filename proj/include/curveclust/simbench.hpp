#pragma once

#include "curveclust/dataspec.hpp"
#include "curveclust/mixture_em.hpp"

#include <Eigen/Dense>
#include <json.hpp>

#include <cstdint>
#include <vector>

namespace curveclust {

// Four clusters of curves over t_j = j / n_times, both factor levels per
// subject. Factor level tau in {0, 1} is stored as level tau + 1.
struct SimScenario {
  std::vector<int> cluster_sizes{30, 40, 50, 30};
  int n_times = 15;
  std::vector<double> variance{1.0, 1.2, 1.0, 1.2};
  std::vector<double> covariance{0.2, 0.4, 0.2, 0.4};
  std::uint64_t seed = 1;

  void validate() const;
};

// Cluster mean (cluster in 0..3) at time t and tau in {0, 1}.
double sim_mean(int cluster, double t, int tau);

struct SimData {
  FunctionalDataset data;  // Additive, a = 2, intercept random effect implied
  std::vector<int> labels; // true cluster, 0-based
  Eigen::VectorXd mu;      // cluster mean at every observation
  Eigen::VectorXd b;       // subject intercepts
  // mu + b at every observation
  Eigen::VectorXd signal() const;
};

SimData generate(const SimScenario& scenario);

// Hubert-Arabie index; both partitions trivial and equal gives 1.
double adjusted_rand(const std::vector<int>& u, const std::vector<int>& v);

// N^{-1} sum ||fitted_i - mu(x_i) - Z_i b_i||^2 against the generator's truth.
double oracle_loss(const Eigen::VectorXd& fitted, const SimData& truth);

// Type-7 sample quantile of unsorted values.
double quantile7(std::vector<double> values, double q);

struct BenchmarkRow {
  int replicate = 0;
  std::uint64_t seed = 0;
  double ari = 0.0;
  double sigma2 = 0.0;
  double loglik = 0.0;
  double bic = 0.0;
  double seconds = 0.0;
};

struct BenchmarkReport {
  int replicates = 0;
  std::vector<double> ari_values;
  double mean = 0.0, median = 0.0, iqr = 0.0;
  std::vector<double> runtimes;
  std::vector<BenchmarkRow> rows;
};

std::uint64_t replicate_seed(std::uint64_t base_seed, int replicate);

// K = 4 with the additive structure and an intercept random effect on each
// replicate; other EM settings come from em_config.
BenchmarkReport run_benchmark(int replicates, std::uint64_t base_seed, MixtureConfig em_config,
                              const SimScenario& scenario = {});

nlohmann::json to_json(const BenchmarkReport& report);

}  // namespace curveclust
