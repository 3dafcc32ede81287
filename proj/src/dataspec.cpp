#include "curveclust/dataspec.hpp"

#include "curveclust/errors.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <unordered_map>

namespace curveclust {

void DomainSpec::validate() const {
  if (!(t_max > 0.0) || !std::isfinite(t_max))
    throw DataError(DataError::Kind::Invalid, "t_max must be positive and finite");
  if (factor_levels < 1)
    throw DataError(DataError::Kind::Invalid, "factor_levels must be >= 1");
}

FunctionalDataset::FunctionalDataset(std::vector<Subject> subjects, DomainSpec domain)
    : subjects_(std::move(subjects)), domain_(domain) {
  domain_.validate();
  if (domain_.factor_levels == 1) domain_.structure = Structure::Additive;
  if (subjects_.empty()) throw DataError(DataError::Kind::Invalid, "dataset has no subjects");

  std::vector<Knot> all;
  offsets_.reserve(subjects_.size());
  for (auto& s : subjects_) {
    if (s.obs.empty())
      throw DataError(DataError::Kind::EmptySubject, "subject '" + s.id + "' has no observations");
    for (const auto& o : s.obs) {
      if (!(o.t >= 0.0 && o.t <= 1.0))
        throw DataError(DataError::Kind::OutOfDomain,
                        "subject '" + s.id + "': time outside the domain");
      if (o.tau < 1 || o.tau > domain_.factor_levels)
        throw DataError(DataError::Kind::OutOfDomain,
                        "subject '" + s.id + "': factor level outside 1..a");
      if (!std::isfinite(o.y))
        throw DataError(DataError::Kind::UnparseableValue,
                        "subject '" + s.id + "': non-finite response");
    }
    std::stable_sort(s.obs.begin(), s.obs.end(), [](const Observation& a, const Observation& b) {
      return a.tau != b.tau ? a.tau < b.tau : a.t < b.t;
    });
    offsets_.push_back(total_obs_);
    total_obs_ += s.obs.size();
    for (const auto& o : s.obs) all.push_back({o.t, o.tau});
  }

  std::sort(all.begin(), all.end(), [](const Knot& a, const Knot& b) {
    return a.tau != b.tau ? a.tau < b.tau : a.t < b.t;
  });
  all.erase(std::unique(all.begin(), all.end()), all.end());
  knots_ = std::move(all);
}

Eigen::VectorXd FunctionalDataset::responses() const {
  Eigen::VectorXd y(static_cast<Eigen::Index>(total_obs_));
  Eigen::Index r = 0;
  for (const auto& s : subjects_)
    for (const auto& o : s.obs) y(r++) = o.y;
  return y;
}

FunctionalDataset FunctionalDataset::subset(const std::vector<std::size_t>& indices) const {
  std::vector<Subject> picked;
  picked.reserve(indices.size());
  for (auto i : indices) picked.push_back(subjects_.at(i));
  return FunctionalDataset(std::move(picked), domain_);
}

Eigen::MatrixXd design_Z(const Subject& subject, const RandomEffectSpec& re) {
  const auto n = static_cast<Eigen::Index>(subject.obs.size());
  Eigen::MatrixXd z(n, re.p());
  for (Eigen::Index j = 0; j < n; ++j) {
    z(j, 0) = 1.0;
    if (re.p() == 2) z(j, 1) = subject.obs[static_cast<std::size_t>(j)].t;
  }
  return z;
}

std::vector<std::string> split_csv_line(const std::string& line) {
  std::vector<std::string> out;
  std::string cur;
  bool quoted = false;
  for (std::size_t i = 0; i < line.size(); ++i) {
    const char ch = line[i];
    if (quoted) {
      if (ch == '"') {
        if (i + 1 < line.size() && line[i + 1] == '"') {
          cur.push_back('"');
          ++i;
        } else {
          quoted = false;
        }
      } else {
        cur.push_back(ch);
      }
    } else if (ch == '"') {
      quoted = true;
    } else if (ch == ',') {
      out.push_back(std::move(cur));
      cur.clear();
    } else if (ch != '\r') {
      cur.push_back(ch);
    }
  }
  out.push_back(std::move(cur));
  return out;
}

std::string csv_field(const std::string& s) {
  if (s.find_first_of(",\"\n") == std::string::npos) return s;
  std::string q = "\"";
  for (char ch : s) {
    if (ch == '"') q.push_back('"');
    q.push_back(ch);
  }
  q.push_back('"');
  return q;
}

namespace {

std::string trim(const std::string& s) {
  const auto b = s.find_first_not_of(" \t");
  if (b == std::string::npos) return {};
  const auto e = s.find_last_not_of(" \t");
  return s.substr(b, e - b + 1);
}

bool parse_double(const std::string& s, double& out) {
  const std::string t = trim(s);
  if (t.empty()) return false;
  const char* first = t.data();
  if (*first == '+') ++first;
  const auto [ptr, ec] = std::from_chars(first, t.data() + t.size(), out);
  return ec == std::errc() && ptr == t.data() + t.size() && std::isfinite(out);
}

bool parse_int(const std::string& s, int& out) {
  const std::string t = trim(s);
  if (t.empty()) return false;
  const auto [ptr, ec] = std::from_chars(t.data(), t.data() + t.size(), out);
  if (ec == std::errc() && ptr == t.data() + t.size()) return true;
  // accept integral values written as reals, e.g. "2.0"
  double d = 0.0;
  if (parse_double(t, d) && d == std::floor(d) && std::abs(d) < 1e9) {
    out = static_cast<int>(d);
    return true;
  }
  return false;
}

bool is_missing(const std::string& s) {
  const std::string t = trim(s);
  return t.empty() || t == "NA" || t == "NaN" || t == "nan";
}

std::size_t column_index(const std::vector<std::string>& header, const std::string& name) {
  for (std::size_t i = 0; i < header.size(); ++i)
    if (trim(header[i]) == name) return i;
  throw DataError(DataError::Kind::MissingColumn, "missing column '" + name + "'");
}

}  // namespace

FunctionalDataset load_csv(const std::string& path, const CsvSchema& schema,
                           const LoadOptions& options) {
  std::ifstream in(path);
  if (!in) throw DataError(DataError::Kind::Invalid, "cannot open '" + path + "'");

  std::string line;
  if (!std::getline(in, line)) throw DataError(DataError::Kind::Invalid, "'" + path + "' is empty");
  if (line.size() >= 3 && line.compare(0, 3, "\xEF\xBB\xBF") == 0) line.erase(0, 3);
  const auto header = split_csv_line(line);

  const std::size_t c_subject = column_index(header, schema.subject);
  const std::size_t c_time = column_index(header, schema.time);
  const std::size_t c_response = column_index(header, schema.response);
  std::optional<std::size_t> c_factor;
  if (schema.factor) {
    const auto it = std::find_if(header.begin(), header.end(),
                                 [&](const std::string& h) { return trim(h) == *schema.factor; });
    if (it != header.end()) c_factor = static_cast<std::size_t>(it - header.begin());
  }

  struct Raw {
    double t;
    int tau;
    double y;
    long row;
  };
  std::vector<std::string> order;
  std::unordered_map<std::string, std::vector<Raw>> by_subject;
  std::unordered_map<std::string, bool> seen;

  long row = 0;
  while (std::getline(in, line)) {
    ++row;
    if (trim(line).empty()) continue;
    const auto cells = split_csv_line(line);
    const std::size_t need = std::max({c_subject, c_time, c_response, c_factor.value_or(0)});
    if (cells.size() <= need)
      throw DataError(DataError::Kind::UnparseableValue,
                      "row " + std::to_string(row) + ": too few fields", row);

    const std::string id = trim(cells[c_subject]);
    if (id.empty())
      throw DataError(DataError::Kind::UnparseableValue,
                      "row " + std::to_string(row) + ": empty subject id", row);
    if (!seen[id]) {
      seen[id] = true;
      order.push_back(id);
      by_subject[id];
    }
    if (is_missing(cells[c_response])) continue;

    Raw r{0.0, 1, 0.0, row};
    if (!parse_double(cells[c_time], r.t))
      throw DataError(DataError::Kind::UnparseableValue,
                      "row " + std::to_string(row) + ": cannot parse time '" + cells[c_time] + "'",
                      row);
    if (!parse_double(cells[c_response], r.y))
      throw DataError(DataError::Kind::UnparseableValue,
                      "row " + std::to_string(row) + ": cannot parse response '" +
                          cells[c_response] + "'",
                      row);
    if (c_factor && !parse_int(cells[*c_factor], r.tau))
      throw DataError(DataError::Kind::UnparseableValue,
                      "row " + std::to_string(row) + ": cannot parse factor '" +
                          cells[*c_factor] + "'",
                      row);
    by_subject[id].push_back(r);
  }

  double t_seen = 0.0;
  int a_seen = 1;
  for (const auto& [id, rows] : by_subject)
    for (const auto& r : rows) {
      t_seen = std::max(t_seen, r.t);
      a_seen = std::max(a_seen, r.tau);
    }

  DomainSpec domain;
  domain.structure = c_factor ? options.structure : Structure::Additive;
  domain.factor_levels = c_factor ? options.factor_levels.value_or(a_seen) : 1;
  if (options.t_max) {
    domain.t_max = *options.t_max;
  } else {
    domain.t_max = options.normalize ? (t_seen > 0.0 ? t_seen : 1.0) : 1.0;
  }
  domain.validate();
  const double scale = options.normalize ? domain.t_max : 1.0;
  if (!options.normalize) domain.t_max = 1.0;

  std::vector<Subject> subjects;
  subjects.reserve(order.size());
  for (const auto& id : order) {
    const auto& rows = by_subject[id];
    if (rows.empty()) throw DataError(DataError::Kind::EmptySubject, "subject '" + id + "' has no observations");
    Subject s;
    s.id = id;
    for (const auto& r : rows) {
      const double limit = options.normalize ? domain.t_max : 1.0;
      if (r.t < 0.0 || r.t > limit)
        throw DataError(DataError::Kind::OutOfDomain,
                        "row " + std::to_string(r.row) + ": time outside [0, " +
                            std::to_string(limit) + "]",
                        r.row);
      if (r.tau < 1 || r.tau > domain.factor_levels)
        throw DataError(DataError::Kind::OutOfDomain,
                        "row " + std::to_string(r.row) + ": factor level outside 1.." +
                            std::to_string(domain.factor_levels),
                        r.row);
      s.obs.push_back({std::min(1.0, r.t / scale), r.tau, r.y});
    }
    subjects.push_back(std::move(s));
  }
  return FunctionalDataset(std::move(subjects), domain);
}

void save_csv(const FunctionalDataset& data, const std::string& path) {
  std::ofstream out(path);
  if (!out) throw DataError(DataError::Kind::Invalid, "cannot write '" + path + "'");
  out << "subject,time,factor,response\n";
  char buf[128];
  for (const auto& s : data.subjects()) {
    for (const auto& o : s.obs) {
      std::snprintf(buf, sizeof buf, "%.17g,%d,%.17g", o.t * data.domain().t_max, o.tau, o.y);
      out << csv_field(s.id) << ',' << buf << '\n';
    }
  }
  if (!out) throw DataError(DataError::Kind::Invalid, "write failed for '" + path + "'");
}

std::string to_string(Structure s) { return s == Structure::Additive ? "additive" : "interaction"; }

Structure structure_from_string(const std::string& s) {
  if (s == "additive") return Structure::Additive;
  if (s == "interaction") return Structure::Interaction;
  throw DataError(DataError::Kind::Invalid, "unknown structure '" + s + "'");
}

std::string to_string(RandomEffect r) {
  return r == RandomEffect::Intercept ? "intercept" : "intercept-slope";
}

RandomEffect random_effect_from_string(const std::string& s) {
  if (s == "intercept") return RandomEffect::Intercept;
  if (s == "intercept-slope") return RandomEffect::InterceptSlope;
  throw DataError(DataError::Kind::Invalid, "unknown random effect '" + s + "'");
}

}  // namespace curveclust
