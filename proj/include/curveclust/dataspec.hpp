#pragma once

#include <Eigen/Dense>

#include <optional>
#include <string>
#include <vector>

namespace curveclust {

enum class Structure { Interaction, Additive };

// Time runs over [0, t_max] on the original scale; internally every time is
// divided by t_max so kernels and penalties live on [0, 1].
struct DomainSpec {
  double t_max = 1.0;
  int factor_levels = 1;
  Structure structure = Structure::Additive;

  void validate() const;
};

struct Observation {
  double t = 0.0;  // normalized to [0, 1]
  int tau = 1;     // factor level in 1..a
  double y = 0.0;
};

struct Subject {
  std::string id;
  std::vector<Observation> obs;  // sorted by (tau, t)
};

struct Knot {
  double t = 0.0;
  int tau = 1;
  friend bool operator==(const Knot&, const Knot&) = default;
};

// Immutable after construction.
class FunctionalDataset {
 public:
  FunctionalDataset() = default;
  // Sorts each subject's observations, validates them against the domain and
  // builds the canonical knot list. Throws DataError.
  FunctionalDataset(std::vector<Subject> subjects, DomainSpec domain);

  const std::vector<Subject>& subjects() const { return subjects_; }
  const DomainSpec& domain() const { return domain_; }
  std::size_t n_subjects() const { return subjects_.size(); }
  std::size_t total_obs() const { return total_obs_; }
  // Distinct (t, tau) pairs in lexicographic (tau, t) order.
  const std::vector<Knot>& knots() const { return knots_; }
  // Row offset of subject i in the stacked N-vector.
  std::size_t offset(std::size_t i) const { return offsets_[i]; }

  Eigen::VectorXd responses() const;
  // Copy restricted to the given subject indices (same domain).
  FunctionalDataset subset(const std::vector<std::size_t>& indices) const;

 private:
  std::vector<Subject> subjects_;
  DomainSpec domain_;
  std::size_t total_obs_ = 0;
  std::vector<Knot> knots_;
  std::vector<std::size_t> offsets_;
};

enum class RandomEffect { Intercept, InterceptSlope };

struct RandomEffectSpec {
  RandomEffect kind = RandomEffect::Intercept;
  int p() const { return kind == RandomEffect::Intercept ? 1 : 2; }
};

// n_i x p random-effect design: rows [1] or [1, t_ij] on the normalized scale.
Eigen::MatrixXd design_Z(const Subject& subject, const RandomEffectSpec& re);

struct CsvSchema {
  std::string subject = "subject";
  std::string time = "time";
  std::optional<std::string> factor = std::string("factor");
  std::string response = "response";
};

struct LoadOptions {
  // When unset, t_max is the largest observed time and a is the largest level.
  std::optional<double> t_max;
  std::optional<int> factor_levels;
  Structure structure = Structure::Additive;
  // Divide times by t_max. Without normalization the input must already lie in [0, 1].
  bool normalize = true;
};

// Long-format CSV: one row per observation. A missing factor column yields a = 1
// and an additive structure. Empty or "NA" responses are skipped; a subject left
// with no observations is an EmptySubject error.
FunctionalDataset load_csv(const std::string& path, const CsvSchema& schema = {},
                           const LoadOptions& options = {});

// Writes `subject,time,factor,response` with times on the original scale and
// 17 significant digits so doubles survive the round trip.
void save_csv(const FunctionalDataset& data, const std::string& path);

// Quote-aware CSV helpers shared with the command-line outputs.
std::vector<std::string> split_csv_line(const std::string& line);
std::string csv_field(const std::string& s);

std::string to_string(Structure s);
Structure structure_from_string(const std::string& s);
std::string to_string(RandomEffect r);
RandomEffect random_effect_from_string(const std::string& s);

}  // namespace curveclust
