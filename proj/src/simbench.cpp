#include "curveclust/simbench.hpp"

#include "curveclust/parallel.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <map>
#include <numbers>
#include <random>
#include <stdexcept>

namespace curveclust {

using Eigen::Index;
using Eigen::VectorXd;

void SimScenario::validate() const {
  const std::size_t K = cluster_sizes.size();
  if (K == 0 || K > 4) throw std::invalid_argument("scenario: 1 to 4 clusters");
  if (variance.size() != K || covariance.size() != K)
    throw std::invalid_argument("scenario: one variance and covariance per cluster");
  if (n_times < 1) throw std::invalid_argument("scenario: n_times >= 1");
  for (std::size_t k = 0; k < K; ++k) {
    if (cluster_sizes[k] < 1) throw std::invalid_argument("scenario: empty cluster");
    if (!(covariance[k] >= 0.0 && covariance[k] < variance[k]))
      throw std::invalid_argument("scenario: need 0 <= covariance < variance");
  }
}

double sim_mean(int cluster, double t, int tau) {
  constexpr double pi = std::numbers::pi;
  const double ind = tau == 1 ? 1.0 : 0.0;
  switch (cluster) {
    case 0:
      return 3.0 * std::sin(6.0 * pi * t) * (1.0 - t) + 2.0 * ind - 1.0;
    case 1:
      return 3.0 * std::sin(6.0 * pi * t) * (1.0 - t);
    case 2:
      return 1980.0 * std::pow(t, 7) * std::pow(1.0 - t, 3) +
             858.0 * std::pow(t, 2) * std::pow(1.0 - t, 10) - 2.0;
    case 3:
      return 3.0 * std::sin(2.0 * pi * t) + 2.0 * ind - 1.0;
    default:
      throw std::invalid_argument("sim_mean: cluster must be 0..3");
  }
}

VectorXd SimData::signal() const {
  VectorXd out = mu;
  for (std::size_t i = 0; i < data.n_subjects(); ++i) {
    const auto off = static_cast<Index>(data.offset(i));
    const auto ni = static_cast<Index>(data.subjects()[i].obs.size());
    out.segment(off, ni).array() += b(static_cast<Index>(i));
  }
  return out;
}

SimData generate(const SimScenario& sc) {
  sc.validate();
  std::mt19937_64 rng(sc.seed);
  std::normal_distribution<double> normal(0.0, 1.0);

  std::vector<Subject> subjects;
  std::vector<int> labels;
  std::vector<double> intercepts;
  int id = 0;
  for (std::size_t k = 0; k < sc.cluster_sizes.size(); ++k) {
    const double sd_b = std::sqrt(sc.covariance[k]);
    const double sd_e = std::sqrt(sc.variance[k] - sc.covariance[k]);
    for (int s = 0; s < sc.cluster_sizes[k]; ++s) {
      Subject subj;
      char buf[16];
      std::snprintf(buf, sizeof buf, "s%03d", ++id);
      subj.id = buf;
      const double bi = sd_b * normal(rng);
      for (int tau = 0; tau <= 1; ++tau)
        for (int j = 1; j <= sc.n_times; ++j) {
          const double t = static_cast<double>(j) / sc.n_times;
          subj.obs.push_back({t, tau + 1, sim_mean(static_cast<int>(k), t, tau) + bi + sd_e * normal(rng)});
        }
      subjects.push_back(std::move(subj));
      labels.push_back(static_cast<int>(k));
      intercepts.push_back(bi);
    }
  }

  SimData out;
  out.data = FunctionalDataset(std::move(subjects), DomainSpec{1.0, 2, Structure::Additive});
  out.labels = std::move(labels);
  out.b = Eigen::Map<const VectorXd>(intercepts.data(), static_cast<Index>(intercepts.size()));
  out.mu.resize(static_cast<Index>(out.data.total_obs()));
  for (std::size_t i = 0; i < out.data.n_subjects(); ++i) {
    Index r = static_cast<Index>(out.data.offset(i));
    for (const auto& o : out.data.subjects()[i].obs) out.mu(r++) = sim_mean(out.labels[i], o.t, o.tau - 1);
  }
  return out;
}

double adjusted_rand(const std::vector<int>& u, const std::vector<int>& v) {
  if (u.size() != v.size())
    throw std::invalid_argument("LengthMismatch: partitions have different lengths");
  if (u.size() < 2) throw std::invalid_argument("adjusted_rand needs at least 2 items");
  std::map<std::pair<int, int>, long long> cells;
  std::map<int, long long> rows, cols;
  for (std::size_t i = 0; i < u.size(); ++i) {
    ++cells[{u[i], v[i]}];
    ++rows[u[i]];
    ++cols[v[i]];
  }
  auto pairs = [](long long x) { return static_cast<__int128>(x) * (x - 1) / 2; };
  __int128 sij = 0, sa = 0, sb = 0;
  for (const auto& [key, c] : cells) sij += pairs(c);
  for (const auto& [key, c] : rows) sa += pairs(c);
  for (const auto& [key, c] : cols) sb += pairs(c);
  const __int128 total = pairs(static_cast<long long>(u.size()));
  // (index - expected) / (max - expected), scaled by 2 * C(n, 2)
  const __int128 num = 2 * (total * sij - sa * sb);
  const __int128 den = total * (sa + sb) - 2 * sa * sb;
  if (den == 0) return 1.0;
  return static_cast<double>(static_cast<long double>(num) / static_cast<long double>(den));
}

double oracle_loss(const VectorXd& fitted, const SimData& truth) {
  if (fitted.size() != truth.mu.size()) throw std::invalid_argument("oracle_loss: length mismatch");
  return (fitted - truth.signal()).squaredNorm() / static_cast<double>(fitted.size());
}

double quantile7(std::vector<double> values, double q) {
  if (values.empty()) throw std::invalid_argument("quantile of an empty sample");
  std::sort(values.begin(), values.end());
  const double h = (static_cast<double>(values.size()) - 1.0) * q;
  const auto lo = static_cast<std::size_t>(std::floor(h));
  const std::size_t hi = std::min(lo + 1, values.size() - 1);
  return values[lo] + (h - static_cast<double>(lo)) * (values[hi] - values[lo]);
}

std::uint64_t replicate_seed(std::uint64_t base_seed, int replicate) {
  return splitmix64(base_seed + static_cast<std::uint64_t>(replicate));
}

BenchmarkReport run_benchmark(int replicates, std::uint64_t base_seed, MixtureConfig cfg,
                              const SimScenario& scenario) {
  if (replicates < 1) throw std::invalid_argument("replicates must be >= 1");
  cfg.K = 4;
  cfg.re = RandomEffectSpec{RandomEffect::Intercept};
  BenchmarkReport rep;
  rep.replicates = replicates;
  rep.rows.resize(static_cast<std::size_t>(replicates));
  parallel_for(static_cast<std::size_t>(replicates), [&](std::size_t r) {
    const auto start = std::chrono::steady_clock::now();
    SimScenario sc = scenario;
    sc.seed = replicate_seed(base_seed, static_cast<int>(r));
    const SimData sim = generate(sc);
    MixtureConfig c = cfg;
    c.seed = sc.seed;
    const ClusteringResult res = run_em(sim.data, c);
    BenchmarkRow& row = rep.rows[r];
    row.replicate = static_cast<int>(r);
    row.seed = sc.seed;
    row.ari = adjusted_rand(sim.labels, res.hard_labels);
    row.sigma2 = res.state.sigma2;
    row.loglik = res.state.loglik;
    row.bic = res.bic;
    row.seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
  });
  for (const auto& row : rep.rows) {
    rep.ari_values.push_back(row.ari);
    rep.runtimes.push_back(row.seconds);
  }
  double sum = 0.0;
  for (double a : rep.ari_values) sum += a;
  rep.mean = sum / replicates;
  rep.median = quantile7(rep.ari_values, 0.5);
  rep.iqr = quantile7(rep.ari_values, 0.75) - quantile7(rep.ari_values, 0.25);
  return rep;
}

nlohmann::json to_json(const BenchmarkReport& r) {
  nlohmann::json rows = nlohmann::json::array();
  for (const auto& row : r.rows)
    rows.push_back({{"replicate", row.replicate},
                    {"seed", row.seed},
                    {"ari", row.ari},
                    {"sigma2", row.sigma2},
                    {"loglik", row.loglik},
                    {"bic", row.bic},
                    {"seconds", row.seconds}});
  return {{"replicates", r.replicates},
          {"ari_values", r.ari_values},
          {"mean_ari", r.mean},
          {"median_ari", r.median},
          {"iqr_ari", r.iqr},
          {"runtimes", r.runtimes},
          {"rows", rows}};
}

}  // namespace curveclust
