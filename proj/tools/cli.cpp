#include "cli.hpp"

#include "curveclust/bayes_inference.hpp"
#include "curveclust/dataspec.hpp"
#include "curveclust/errors.hpp"
#include "curveclust/gcv_tuning.hpp"
#include "curveclust/mixture_em.hpp"
#include "curveclust/pls_solver.hpp"
#include "curveclust/simbench.hpp"

#include <CLI11.hpp>

#include <chrono>
#include <cstdio>
#include <ctime>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <stdexcept>

namespace curveclust::cli {

namespace fs = std::filesystem;
using nlohmann::json;
using Eigen::Index;
using Eigen::MatrixXd;
using Eigen::VectorXd;

namespace {

class LockError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Exclusive ownership of an output directory for the life of a command.
class OutputLock {
 public:
  explicit OutputLock(const fs::path& dir) : path_(dir / ".curveclust.lock") {
    fs::create_directories(dir);
    std::FILE* f = std::fopen(path_.c_str(), "wx");
    if (!f) throw LockError("output directory '" + dir.string() + "' is locked by another run (" +
                            path_.string() + ")");
    std::fprintf(f, "locked\n");
    std::fclose(f);
  }
  ~OutputLock() {
    std::error_code ec;
    fs::remove(path_, ec);
  }
  OutputLock(const OutputLock&) = delete;
  OutputLock& operator=(const OutputLock&) = delete;

 private:
  fs::path path_;
};

struct Flags {
  std::optional<std::string> config, input, out, random_effect, from;
  std::optional<int> k, k_min, k_max, chains, replicates, grid_points;
  std::optional<std::uint64_t> seed;
  std::optional<double> alpha;
  bool additive = false, interaction = false;
};

json read_json(const fs::path& p) {
  std::ifstream in(p);
  if (!in) throw DataError(DataError::Kind::Invalid, "cannot open '" + p.string() + "'");
  try {
    return json::parse(in);
  } catch (const json::parse_error& e) {
    throw DataError(DataError::Kind::Invalid, "'" + p.string() + "' is not valid JSON: " + e.what());
  }
}

void write_json(const fs::path& p, const json& j) {
  std::ofstream out(p);
  out << j.dump(2) << '\n';
  if (!out) throw std::runtime_error("cannot write '" + p.string() + "'");
}

std::string fmt(double v) {
  char buf[40];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

std::string timestamp() {
  const std::time_t now = std::time(nullptr);
  char buf[32];
  std::strftime(buf, sizeof buf, "%Y-%m-%dT%H:%M:%SZ", std::gmtime(&now));
  return buf;
}

// Like a JSON merge patch, except that null is stored rather than deleting the key.
void merge_into(json& base, const json& patch) {
  if (!patch.is_object() || !base.is_object()) {
    base = patch;
    return;
  }
  for (auto it = patch.begin(); it != patch.end(); ++it) {
    if (base.contains(it.key()) && base[it.key()].is_object() && it.value().is_object())
      merge_into(base[it.key()], it.value());
    else
      base[it.key()] = it.value();
  }
}

json resolve(const Flags& f, const std::string& command) {
  json cfg = default_config();
  if (f.config) merge_into(cfg, read_json(*f.config));
  cfg["command"] = command;
  if (f.input) cfg["input"] = *f.input;
  if (f.out) cfg["out"] = *f.out;
  if (f.k && (f.k_min || f.k_max)) throw std::invalid_argument("--k excludes --k-min/--k-max");
  if (f.k) cfg["k"] = *f.k;
  if (f.k_min || f.k_max) cfg["k"] = nullptr;
  if (f.k_min) cfg["k_min"] = *f.k_min;
  if (f.k_max) cfg["k_max"] = *f.k_max;
  if (f.seed) cfg["seed"] = *f.seed;
  if (f.chains) cfg["em"]["chains"] = *f.chains;
  if (f.alpha) cfg["inference"]["alpha"] = *f.alpha;
  if (f.grid_points) cfg["inference"]["grid_points"] = *f.grid_points;
  if (f.additive && f.interaction)
    throw std::invalid_argument("--additive and --interaction are mutually exclusive");
  if (f.additive) cfg["domain"]["structure"] = "additive";
  if (f.interaction) cfg["domain"]["structure"] = "interaction";
  if (f.random_effect) cfg["random_effect"] = *f.random_effect;
  if (f.replicates) cfg["benchmark"]["replicates"] = *f.replicates;
  if (f.from) cfg["curves"]["from"] = *f.from;
  return cfg;
}

fs::path out_dir(const json& cfg) {
  const auto& o = cfg.at("out");
  if (o.is_null() || o.get<std::string>().empty()) throw std::invalid_argument("--out is required");
  return fs::path(o.get<std::string>());
}

FunctionalDataset load_input(const json& cfg) {
  const auto& in = cfg.at("input");
  if (in.is_null()) throw std::invalid_argument("--input is required");
  CsvSchema schema;
  const auto& cols = cfg.at("columns");
  schema.subject = cols.at("subject").get<std::string>();
  schema.time = cols.at("time").get<std::string>();
  schema.response = cols.at("response").get<std::string>();
  if (cols.at("factor").is_null())
    schema.factor.reset();
  else
    schema.factor = cols.at("factor").get<std::string>();
  LoadOptions opt;
  const auto& dom = cfg.at("domain");
  if (!dom.at("t_max").is_null()) opt.t_max = dom.at("t_max").get<double>();
  if (!dom.at("factor_levels").is_null()) opt.factor_levels = dom.at("factor_levels").get<int>();
  opt.structure = structure_from_string(dom.at("structure").get<std::string>());
  opt.normalize = dom.at("normalize").get<bool>();
  return load_csv(in.get<std::string>(), schema, opt);
}

RandomEffectSpec random_effect(const json& cfg) {
  return RandomEffectSpec{random_effect_from_string(cfg.at("random_effect").get<std::string>())};
}

MixtureConfig mixture_config(const json& cfg) {
  MixtureConfig m;
  const auto& em = cfg.at("em");
  m.chains = em.at("chains").get<int>();
  m.seed = cfg.at("seed").get<std::uint64_t>();
  m.stop_patience = em.at("patience").get<int>();
  m.max_iter = em.at("max_iter").get<int>();
  m.min_cluster_weight = em.at("min_cluster_weight").get<double>();
  m.kmeans_restarts = em.at("kmeans_restarts").get<int>();
  m.rc_schedule.clear();
  for (const auto& s : em.at("rc_schedule")) {
    RejectionStage st;
    st.c = s.at("c").get<double>();
    if (s.contains("until") && !s.at("until").is_null()) st.until = s.at("until").get<int>();
    m.rc_schedule.push_back(st);
  }
  m.re = random_effect(cfg);
  m.knot_cap = cfg.at("knot_cap").get<std::size_t>();
  return m;
}

std::vector<Knot> output_grid(const DomainSpec& domain, const json& cfg) {
  return regular_grid(domain, cfg.at("inference").at("grid_points").get<int>());
}

void write_band(const fs::path& p, const CurveBand& band, const DomainSpec& domain) {
  std::ofstream out(p);
  out << "factor,time,mean,variance,lower,upper\n";
  for (std::size_t g = 0; g < band.grid.size(); ++g) {
    const auto i = static_cast<Index>(g);
    out << band.grid[g].tau << ',' << fmt(band.grid[g].t * domain.t_max) << ',' << fmt(band.mean(i))
        << ',' << fmt(band.variance(i)) << ',' << fmt(band.lower(i)) << ',' << fmt(band.upper(i))
        << '\n';
  }
  if (!out) throw std::runtime_error("cannot write '" + p.string() + "'");
}

json matrix_json(const MatrixXd& m) {
  json rows = json::array();
  for (Index i = 0; i < m.rows(); ++i) {
    json r = json::array();
    for (Index j = 0; j < m.cols(); ++j) r.push_back(m(i, j));
    rows.push_back(r);
  }
  return rows;
}

MatrixXd matrix_from_json(const json& j) {
  const auto r = static_cast<Index>(j.size());
  const auto c = r > 0 ? static_cast<Index>(j.at(0).size()) : 0;
  MatrixXd m(r, c);
  for (Index i = 0; i < r; ++i)
    for (Index k = 0; k < c; ++k) m(i, k) = j.at(static_cast<std::size_t>(i)).at(static_cast<std::size_t>(k)).get<double>();
  return m;
}

std::vector<double> to_vec(const VectorXd& v) { return {v.data(), v.data() + v.size()}; }

json tuning_json(const TuningPoint& t) {
  json j{{"log10_lambda", t.log_lambda}, {"log_corr", t.log_corr}};
  j["log10_theta_ratio"] = t.log_theta_ratio ? json(*t.log_theta_ratio) : json(nullptr);
  return j;
}

TuningPoint tuning_from_json(const json& j) {
  TuningPoint t;
  t.log_lambda = j.at("log10_lambda").get<double>();
  if (!j.at("log10_theta_ratio").is_null()) t.log_theta_ratio = j.at("log10_theta_ratio").get<double>();
  t.log_corr = j.at("log_corr").get<std::vector<double>>();
  return t;
}

json domain_json(const DomainSpec& d) {
  return {{"t_max", d.t_max}, {"factor_levels", d.factor_levels}, {"structure", to_string(d.structure)}};
}

json manifest_base(const json& cfg, const std::chrono::steady_clock::time_point& start,
                   const std::string& started_at) {
  return {{"command", cfg.at("command")},
          {"version", kVersion},
          {"started_at", started_at},
          {"wall_seconds",
           std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count()},
          {"config", cfg}};
}

// ---- fit ----

struct SingleFit {
  std::shared_ptr<const Design> design;
  std::unique_ptr<PenalizedProblem> problem;
  SmoothingParams params;
  double sigma2 = 0.0;
};

json cmd_fit(const json& cfg, const fs::path& out) {
  const FunctionalDataset data = load_input(cfg);
  const RandomEffectSpec re = random_effect(cfg);
  auto design = std::make_shared<const Design>(
      Design::build(data, re, cfg.at("knot_cap").get<std::size_t>()));
  const PenalizedProblem problem(design, data.responses(), VectorXd::Ones(design->n_subjects()));
  const GCVResult g = minimize_gcv(problem);
  const PLSSolution sol = problem.solve(g.params);
  const double sigma2 = sol.rss / static_cast<double>(sol.n_rows);
  const PosteriorFit post(problem, g.params, sigma2);

  CurveQuery q;
  q.grid = output_grid(data.domain(), cfg);
  q.alpha = cfg.at("inference").at("alpha").get<double>();
  const CurveBand band = confidence_band(post, q);
  write_band(out / "curves.csv", band, data.domain());

  const MatrixXd omega_inv = g.params.omega.inverse();
  json knots = json::array();
  for (const auto& k : design->knots) knots.push_back({k.t * data.domain().t_max, k.tau});
  json effects = json::array();
  const Index p = design->p();
  for (std::size_t i = 0; i < data.n_subjects(); ++i)
    effects.push_back({{"subject", data.subjects()[i].id},
                       {"b", to_vec(sol.b.segment(static_cast<Index>(i) * p, p))}});
  json fit{{"domain", domain_json(data.domain())},
           {"random_effect", to_string(re.kind)},
           {"n_subjects", data.n_subjects()},
           {"N", data.total_obs()},
           {"T", design->T()},
           {"knots_capped", design->knots_capped},
           {"tuning", tuning_json(g.point)},
           {"lambda", g.params.lambda},
           {"theta12", g.params.theta12},
           {"omega", matrix_json(g.params.omega)},
           {"B", matrix_json(sigma2 * omega_inv)},
           {"sigma2", sigma2},
           {"d", to_vec(sol.d)},
           {"c", to_vec(sol.c)},
           {"knots", knots},
           {"trace_A", sol.trace_A},
           {"gcv_score", g.score},
           {"gcv_evaluations", g.evaluations},
           {"tuning_on_bound", g.clipped},
           {"variance_clipped", band.clipped},
           {"random_effects", effects}};
  write_json(out / "fit.json", fit);
  return {{"outputs", {"fit.json", "curves.csv"}},
          {"fit", {{"lambda", g.params.lambda}, {"theta12", g.params.theta12},
                   {"omega", matrix_json(g.params.omega)}, {"sigma2", sigma2},
                   {"trace_A", sol.trace_A}, {"gcv_score", g.score}}}};
}

// ---- cluster ----

std::vector<int> k_values(const json& cfg) {
  if (!cfg.at("k").is_null()) return {cfg.at("k").get<int>()};
  const int lo = cfg.at("k_min").is_null() ? 1 : cfg.at("k_min").get<int>();
  const int hi = cfg.at("k_max").is_null() ? lo : cfg.at("k_max").get<int>();
  if (lo < 1 || hi < lo) throw std::invalid_argument("need 1 <= k_min <= k_max");
  std::vector<int> ks;
  for (int k = lo; k <= hi; ++k) ks.push_back(k);
  return ks;
}

json cluster_json(const ClusterFit& c) {
  return {{"tuning", tuning_json(c.tuning)},
          {"lambda", c.params.lambda},
          {"theta12", c.params.theta12},
          {"omega", matrix_json(c.params.omega)},
          {"B", matrix_json(c.B)},
          {"trace_A", c.trace_A},
          {"gcv_score", std::isfinite(c.gcv) ? json(c.gcv) : json(nullptr)}};
}

void write_cluster_curves(const fs::path& out, const MixtureContext& ctx, const ClusteringResult& res,
                          const json& cfg, json& outputs) {
  CurveQuery q;
  q.grid = output_grid(ctx.data().domain(), cfg);
  q.alpha = cfg.at("inference").at("alpha").get<double>();
  const auto bands = cluster_bands(ctx, res, q);
  for (std::size_t k = 0; k < bands.size(); ++k) {
    const std::string name = "curves_" + std::to_string(k + 1) + ".csv";
    write_band(out / name, bands[k], ctx.data().domain());
    outputs.push_back(name);
  }
}

json cmd_cluster(const json& cfg, const fs::path& out) {
  const FunctionalDataset data = load_input(cfg);
  const MixtureConfig mc = mixture_config(cfg);
  const MixtureContext ctx(data, mc.re, mc.knot_cap);
  const KSelection sel = select_k(ctx, k_values(cfg), mc);

  std::size_t best_row = 0;
  for (std::size_t r = 0; r < sel.table.size(); ++r)
    if (sel.table[r].K == sel.best_K) best_row = r;
  const ClusteringResult& res = sel.results[best_row];
  const MatrixXd& w = res.state.w;

  {
    std::ofstream a(out / "assignments.csv");
    a << "subject,label";
    for (Index k = 0; k < w.cols(); ++k) a << ",w_" << k + 1;
    a << '\n';
    for (std::size_t i = 0; i < data.n_subjects(); ++i) {
      a << csv_field(data.subjects()[i].id) << ',' << res.hard_labels[i] + 1;
      for (Index k = 0; k < w.cols(); ++k) a << ',' << fmt(w(static_cast<Index>(i), k));
      a << '\n';
    }
    if (!a) throw std::runtime_error("cannot write assignments.csv");
  }
  {
    std::ofstream b(out / "bic.csv");
    b << "K,loglik,sum_trace,P,BIC,best,status\n";
    for (const auto& row : sel.table) {
      if (row.failed)
        b << row.K << ",,,,,0,failed\n";
      else
        b << row.K << ',' << fmt(row.loglik) << ',' << fmt(row.sum_trace) << ',' << row.n_params << ','
          << fmt(row.bic) << ',' << (row.K == sel.best_K ? 1 : 0) << ",ok\n";
    }
    if (!b) throw std::runtime_error("cannot write bic.csv");
  }
  json outputs = json::array({"assignments.csv", "bic.csv"});
  write_cluster_curves(out, ctx, res, cfg, outputs);

  json table = json::array();
  for (std::size_t r = 0; r < sel.table.size(); ++r) {
    const auto& row = sel.table[r];
    json traces = json::array();
    for (const auto& t : sel.results[r].chains)
      traces.push_back({{"chain", t.chain_id}, {"failed", t.failed}, {"error", t.error},
                        {"reseeded", t.reseeded}, {"loglik", t.loglik},
                        {"bic", std::isfinite(t.bic) ? json(t.bic) : json(nullptr)}});
    json entry{{"K", row.K}, {"failed", row.failed}, {"error", row.error}};
    if (!row.failed) {
      entry["loglik"] = row.loglik;
      entry["sum_trace"] = row.sum_trace;
      entry["P"] = row.n_params;
      entry["bic"] = row.bic;
      entry["chain"] = sel.results[r].chain_id;
      entry["chains"] = traces;
    }
    table.push_back(entry);
  }
  json clusters = json::array();
  for (const auto& c : res.state.clusters) clusters.push_back(cluster_json(c));
  return {{"outputs", outputs},
          {"best_K", sel.best_K},
          {"bic_table", table},
          {"selected",
           {{"K", sel.best_K},
            {"sigma2", res.state.sigma2},
            {"p", to_vec(res.state.p)},
            {"loglik", res.state.loglik},
            {"bic", res.bic},
            {"chain", res.chain_id},
            {"clusters", clusters},
            {"fit_weights", matrix_json(res.state.fit_weights)}}}};
}

// ---- simulate / benchmark ----

SimScenario scenario(const json& cfg) {
  SimScenario sc;
  const auto& s = cfg.at("simulate");
  sc.cluster_sizes = s.at("cluster_sizes").get<std::vector<int>>();
  sc.n_times = s.at("n_times").get<int>();
  sc.variance = s.at("variance").get<std::vector<double>>();
  sc.covariance = s.at("covariance").get<std::vector<double>>();
  sc.seed = cfg.at("seed").get<std::uint64_t>();
  return sc;
}

json cmd_simulate(const json& cfg, const fs::path& out) {
  const SimData sim = generate(scenario(cfg));
  save_csv(sim.data, (out / "data.csv").string());
  std::ofstream t(out / "truth.csv");
  t << "subject,label\n";
  for (std::size_t i = 0; i < sim.data.n_subjects(); ++i)
    t << csv_field(sim.data.subjects()[i].id) << ',' << sim.labels[i] + 1 << '\n';
  if (!t) throw std::runtime_error("cannot write truth.csv");
  return {{"outputs", {"data.csv", "truth.csv"}},
          {"n_subjects", sim.data.n_subjects()},
          {"N", sim.data.total_obs()}};
}

json cmd_benchmark(const json& cfg, const fs::path& out) {
  MixtureConfig mc = mixture_config(cfg);
  const auto& b = cfg.at("benchmark");
  const int reps = b.at("replicates").get<int>();
  const std::uint64_t base = cfg.at("seed").get<std::uint64_t>();
  const SimScenario sc = scenario(cfg);
  const BenchmarkReport rep = run_benchmark(reps, base, mc, sc);
  json report = to_json(rep);
  report["base_seed"] = base;
  report["K"] = 4;
  report["structure"] = "additive";
  report["random_effect"] = "intercept";
  write_json(out / "report.json", report);
  json outputs = json::array({"report.json"});
  if (b.at("dump_datasets").get<bool>()) {
    for (int r = 0; r < reps; ++r) {
      SimScenario s = sc;
      s.seed = replicate_seed(base, r);
      const std::string name = "replicate_" + std::to_string(r + 1) + ".csv";
      save_csv(generate(s).data, (out / name).string());
      outputs.push_back(name);
    }
  }
  return {{"outputs", outputs}, {"mean_ari", rep.mean}, {"median_ari", rep.median}, {"iqr_ari", rep.iqr}};
}

// ---- curves ----

json cmd_curves(const json& cfg, const fs::path& out, const Flags& flags) {
  const auto& from_j = cfg.at("curves").at("from");
  if (from_j.is_null()) throw std::invalid_argument("--from is required");
  const fs::path from = from_j.get<std::string>();
  const json manifest = read_json(from / "manifest.json");
  // Replays the stored run; only the inference flags and the input path can change.
  json stored = manifest.at("config");
  if (flags.alpha) stored["inference"]["alpha"] = *flags.alpha;
  if (flags.grid_points) stored["inference"]["grid_points"] = *flags.grid_points;
  if (flags.input) stored["input"] = *flags.input;

  const std::string command = stored.at("command").get<std::string>();
  const FunctionalDataset data = load_input(stored);
  json outputs = json::array();
  if (command == "fit") {
    const json fit = read_json(from / "fit.json");
    const RandomEffectSpec re = random_effect(stored);
    auto design = std::make_shared<const Design>(
        Design::build(data, re, stored.at("knot_cap").get<std::size_t>()));
    const PenalizedProblem problem(design, data.responses(), VectorXd::Ones(design->n_subjects()));
    SmoothingParams params;
    params.lambda = fit.at("lambda").get<double>();
    params.theta12 = fit.at("theta12").get<double>();
    params.omega = matrix_from_json(fit.at("omega"));
    const PosteriorFit post(problem, params, fit.at("sigma2").get<double>());
    CurveQuery q;
    q.grid = output_grid(data.domain(), stored);
    q.alpha = stored.at("inference").at("alpha").get<double>();
    write_band(out / "curves.csv", confidence_band(post, q), data.domain());
    outputs.push_back("curves.csv");
  } else if (command == "cluster") {
    const json& sel = manifest.at("selected");
    const MixtureConfig mc = mixture_config(stored);
    const MixtureContext ctx(data, mc.re, mc.knot_cap);
    ClusteringResult res;
    res.state.sigma2 = sel.at("sigma2").get<double>();
    res.state.fit_weights = matrix_from_json(sel.at("fit_weights"));
    for (const auto& c : sel.at("clusters")) {
      ClusterFit f;
      f.tuning = tuning_from_json(c.at("tuning"));
      f.params.lambda = c.at("lambda").get<double>();
      f.params.theta12 = c.at("theta12").get<double>();
      f.params.omega = matrix_from_json(c.at("omega"));
      res.state.clusters.push_back(std::move(f));
    }
    write_cluster_curves(out, ctx, res, stored, outputs);
  } else {
    throw std::invalid_argument("'" + from.string() + "' holds a '" + command +
                                "' run; curves needs a fit or cluster run");
  }
  return {{"outputs", outputs}, {"source", from.string()}, {"source_command", command}};
}

void add_common(CLI::App* sub, Flags& f) {
  sub->add_option("--config", f.config, "JSON configuration file");
  sub->add_option("--out", f.out, "Output directory");
  sub->add_option("--seed", f.seed, "Random seed");
}

void add_data(CLI::App* sub, Flags& f) {
  sub->add_option("--input", f.input, "Long-format CSV: subject,time,factor,response");
  sub->add_flag("--additive", f.additive, "Drop the time x factor interaction");
  sub->add_flag("--interaction", f.interaction, "Keep the time x factor interaction");
  sub->add_option("--random-effect", f.random_effect, "intercept or intercept-slope")
      ->check(CLI::IsMember({"intercept", "intercept-slope"}));
}

void add_inference(CLI::App* sub, Flags& f) {
  sub->add_option("--alpha", f.alpha, "Band coverage complement in (0, 1)");
  sub->add_option("--grid-points", f.grid_points, "Curve grid points per factor level");
}

void add_em(CLI::App* sub, Flags& f) {
  sub->add_option("--chains", f.chains, "Independent EM chains");
}

}  // namespace

json default_config() {
  return json::parse(R"({
    "command": null,
    "input": null,
    "out": null,
    "seed": 1,
    "columns": {"subject": "subject", "time": "time", "factor": "factor", "response": "response"},
    "domain": {"t_max": null, "factor_levels": null, "structure": "additive", "normalize": true},
    "random_effect": "intercept",
    "knot_cap": 200,
    "k": null,
    "k_min": 1,
    "k_max": 6,
    "em": {
      "chains": 3,
      "rc_schedule": [{"until": 5, "c": 0.5}, {"until": 15, "c": 0.1}, {"until": null, "c": 0.05}],
      "patience": 5,
      "max_iter": 100,
      "min_cluster_weight": 2.0,
      "kmeans_restarts": 10
    },
    "inference": {"grid_points": 101, "alpha": 0.05},
    "simulate": {
      "cluster_sizes": [30, 40, 50, 30],
      "n_times": 15,
      "variance": [1.0, 1.2, 1.0, 1.2],
      "covariance": [0.2, 0.4, 0.2, 0.4]
    },
    "benchmark": {"replicates": 10, "dump_datasets": false},
    "curves": {"from": null}
  })");
}

int run(int argc, const char* const* argv) {
  CLI::App app{"Clustering of functional data with penalized mixed-effect spline mixtures"};
  app.set_version_flag("--version", kVersion);
  app.require_subcommand(1);
  Flags f;

  auto* fit = app.add_subcommand("fit", "Single-cluster GCV fit with Bayesian bands");
  add_common(fit, f);
  add_data(fit, f);
  add_inference(fit, f);

  auto* cluster = app.add_subcommand("cluster", "Mixture EM clustering with BIC over K");
  add_common(cluster, f);
  add_data(cluster, f);
  add_inference(cluster, f);
  add_em(cluster, f);
  cluster->add_option("--k", f.k, "Number of clusters");
  cluster->add_option("--k-min", f.k_min, "Smallest K for BIC selection");
  cluster->add_option("--k-max", f.k_max, "Largest K for BIC selection");

  auto* simulate = app.add_subcommand("simulate", "Write a simulated four-cluster dataset");
  add_common(simulate, f);

  auto* bench = app.add_subcommand("benchmark", "Adjusted Rand index over simulated replicates");
  add_common(bench, f);
  add_em(bench, f);
  bench->add_option("--replicates", f.replicates, "Number of replicates");

  auto* curves = app.add_subcommand("curves", "Recompute curve bands from a fit or cluster run");
  add_common(curves, f);
  add_inference(curves, f);
  curves->add_option("--from", f.from, "Directory of an earlier fit or cluster run");
  curves->add_option("--input", f.input, "Override the stored input path");

  try {
    app.parse(argc, argv);
  } catch (const CLI::Success& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    app.exit(e);
    return kDataFailure;
  }

  std::string command;
  for (auto* s : {fit, cluster, simulate, bench, curves})
    if (s->parsed()) command = s->get_name();

  try {
    const auto start = std::chrono::steady_clock::now();
    const std::string started_at = timestamp();
    json cfg = resolve(f, command);
    if (command == "curves" && cfg.at("out").is_null() && !cfg.at("curves").at("from").is_null())
      cfg["out"] = cfg.at("curves").at("from");
    const fs::path out = out_dir(cfg);
    const OutputLock lock(out);
    // curves writes into an earlier run's directory; keep that run's files intact
    const bool replay = command == "curves";
    write_json(out / (replay ? "config.curves.json" : "config.resolved.json"), cfg);

    json result;
    if (command == "fit")
      result = cmd_fit(cfg, out);
    else if (command == "cluster")
      result = cmd_cluster(cfg, out);
    else if (command == "simulate")
      result = cmd_simulate(cfg, out);
    else if (command == "benchmark")
      result = cmd_benchmark(cfg, out);
    else
      result = cmd_curves(cfg, out, f);

    const fs::path manifest_name = replay ? "manifest.curves.json" : "manifest.json";
    json manifest = manifest_base(cfg, start, started_at);
    manifest.update(result);
    write_json(out / manifest_name, manifest);
    return kOk;
  } catch (const DataError& e) {
    std::cerr << "data error: " << e.what() << '\n';
    return kDataFailure;
  } catch (const DomainError& e) {
    std::cerr << "data error: " << e.what() << '\n';
    return kDataFailure;
  } catch (const json::exception& e) {
    std::cerr << "configuration error: " << e.what() << '\n';
    return kDataFailure;
  } catch (const std::invalid_argument& e) {
    std::cerr << "invalid input: " << e.what() << '\n';
    return kDataFailure;
  } catch (const NumericalError& e) {
    std::cerr << "numerical failure: " << e.what() << '\n';
    return kNumericalFailure;
  } catch (const ConvergenceError& e) {
    std::cerr << "convergence failure: " << e.what() << '\n';
    return kConvergenceFailure;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return kOther;
  }
}

int run(const std::vector<std::string>& args) {
  std::vector<const char*> argv;
  argv.reserve(args.size());
  for (const auto& a : args) argv.push_back(a.c_str());
  return run(static_cast<int>(argv.size()), argv.data());
}

}  // namespace curveclust::cli
