#pragma once

#include <algorithm>
#include <atomic>
#include <chrono>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <optional>
#include <set>
#include <string>
#include <thread>
#include <vector>

#include <json.hpp>

#include "dualavg/cda.hpp"
#include "dualavg/dda.hpp"
#include "dualavg/instance_io.hpp"
#include "dualavg/network.hpp"
#include "dualavg/objectives.hpp"
#include "dualavg/ratefit.hpp"
#include "dualavg/table.hpp"

namespace dualavg {

using json = nlohmann::json;

// ---------------------------------------------------------------------------
// Configuration

struct SetSpec {
  std::string type = "ball";  // "ball" (centered at 0) or "box" (same bounds in every coordinate)
  double radius = 1.0;
  double lower = -1.0;
  double upper = 1.0;

  bool operator==(const SetSpec&) const = default;
};

struct ProblemSpec {
  std::string family = "pca";  // "pca" | "quadratic"
  int n = 10;
  int rows = 10;
  int dim = 50;
  std::uint64_t seed = 1;
  bool convex = true;
  SetSpec set;
  std::string x0 = "random";             // "random" (normal draw projected onto the set) | "zero"
  std::optional<std::string> instance;  // instance JSON file; overrides the generator fields

  bool operator==(const ProblemSpec&) const = default;
};

struct NetworkSpec {
  std::string model = "bernoulli";  // "bernoulli" | "gossip" | "perfect" | "static"
  double p = 0.1;
  std::optional<double> tau;                           // Laplacian scale, defaults to n
  std::uint64_t seed = 2;
  std::optional<std::vector<std::vector<int>>> edges;  // 1-based pairs; absent = complete graph
  std::optional<std::vector<std::vector<double>>> matrix;  // "static" only
  long beta_samples = kDefaultBetaSamples;
  std::optional<double> beta;  // skip estimation and use this value

  bool operator==(const NetworkSpec&) const = default;
};

struct AlgorithmSpec {
  std::string method = "dda";  // "cda" | "dda" | "dpga"
  std::optional<double> a;     // absent: certified (dda: a_max, cda: 1/L)
  double eta = 1e-4;           // dpga
  long rounds = 2000;
  bool monitors = true;
  bool early_stop = false;  // cda

  bool operator==(const AlgorithmSpec&) const = default;
};

struct OutputSpec {
  std::string dir = "results";
  bool per_seed = true;

  bool operator==(const OutputSpec&) const = default;
};

struct ExperimentConfig {
  std::string name = "custom";
  ProblemSpec problem;
  NetworkSpec network;
  AlgorithmSpec algorithm;
  std::vector<std::uint64_t> seeds{0};
  OutputSpec output;
  bool paper_scale = false;  // heavy run, refused unless explicitly allowed

  bool operator==(const ExperimentConfig&) const = default;
};

namespace detail {

/// Reads the keys of one JSON object, rejecting unknown keys and wrong types.
class StrictObject {
 public:
  StrictObject(const json& j, std::string path) : j_(j), path_(std::move(path)) {
    if (!j_.is_object()) throw ConfigError(path_ + ": expected an object");
  }

  template <typename T>
  void get(const char* key, T& out) {
    if (!j_.contains(key)) return;
    used_.insert(key);
    out = convert<T>(j_.at(key), path_ + "." + key);
  }

  template <typename T>
  void get(const char* key, std::optional<T>& out) {
    if (!j_.contains(key)) return;
    used_.insert(key);
    if (j_.at(key).is_null()) out.reset();
    else out = convert<T>(j_.at(key), path_ + "." + key);
  }

  const json* sub(const char* key) {
    if (!j_.contains(key)) return nullptr;
    used_.insert(key);
    return &j_.at(key);
  }

  void finish() const {
    for (const auto& [key, _] : j_.items())
      if (!used_.count(key)) throw ConfigError(path_ + ": unknown key '" + key + "'");
  }

 private:
  template <typename T>
  static T convert(const json& v, const std::string& where) {
    bool ok = false;
    if constexpr (std::is_same_v<T, bool>) ok = v.is_boolean();
    else if constexpr (std::is_same_v<T, std::string>) ok = v.is_string();
    else if constexpr (std::is_unsigned_v<T>) ok = v.is_number_unsigned();
    else if constexpr (std::is_integral_v<T>) ok = v.is_number_integer();
    else if constexpr (std::is_floating_point_v<T>) ok = v.is_number();
    else ok = v.is_array();
    if (!ok) throw ConfigError(where + ": wrong type (" + std::string(v.type_name()) + ")");
    try {
      return v.get<T>();
    } catch (const json::exception& e) {
      throw ConfigError(where + ": " + e.what());
    }
  }

  const json& j_;
  std::string path_;
  std::set<std::string> used_;
};

}  // namespace detail

inline json to_json(const ExperimentConfig& c) {
  json set{{"type", c.problem.set.type}};
  if (c.problem.set.type == "box") {
    set["lower"] = c.problem.set.lower;
    set["upper"] = c.problem.set.upper;
  } else {
    set["radius"] = c.problem.set.radius;
  }
  json problem{{"family", c.problem.family}, {"n", c.problem.n}, {"rows", c.problem.rows},
               {"dim", c.problem.dim},       {"seed", c.problem.seed}, {"convex", c.problem.convex},
               {"set", set},                 {"x0", c.problem.x0}};
  if (c.problem.instance) problem["instance"] = *c.problem.instance;

  json network{{"model", c.network.model}, {"p", c.network.p}, {"seed", c.network.seed},
               {"beta_samples", c.network.beta_samples}};
  if (c.network.tau) network["tau"] = *c.network.tau;
  if (c.network.edges) network["edges"] = *c.network.edges;
  if (c.network.matrix) network["matrix"] = *c.network.matrix;
  if (c.network.beta) network["beta"] = *c.network.beta;

  json algorithm{{"method", c.algorithm.method},   {"eta", c.algorithm.eta},
                 {"rounds", c.algorithm.rounds},   {"monitors", c.algorithm.monitors},
                 {"early_stop", c.algorithm.early_stop}};
  algorithm["a"] = c.algorithm.a ? json(*c.algorithm.a) : json("certified");

  return json{{"name", c.name},
              {"problem", problem},
              {"network", network},
              {"algorithm", algorithm},
              {"seeds", c.seeds},
              {"output", {{"dir", c.output.dir}, {"per_seed", c.output.per_seed}}},
              {"paper_scale", c.paper_scale}};
}

inline void validate(const ExperimentConfig& c) {
  auto fail = [](const std::string& m) { throw ConfigError(m); };
  const auto& p = c.problem;
  if (p.family != "pca" && p.family != "quadratic") fail("problem.family must be \"pca\" or \"quadratic\"");
  if (p.n < 1 || p.dim < 1 || (p.family == "pca" && p.rows < 1)) fail("problem: n, rows, dim must be >= 1");
  if (p.set.type == "ball") {
    if (!(p.set.radius > 0.0)) fail("problem.set.radius must be positive");
  } else if (p.set.type == "box") {
    if (!(p.set.lower <= p.set.upper)) fail("problem.set: lower must not exceed upper");
  } else {
    fail("problem.set.type must be \"ball\" or \"box\"");
  }
  if (p.x0 != "random" && p.x0 != "zero") fail("problem.x0 must be \"random\" or \"zero\"");

  const auto& n = c.network;
  static const std::set<std::string> models{"bernoulli", "gossip", "perfect", "static"};
  if (!models.count(n.model)) fail("network.model must be one of bernoulli, gossip, perfect, static");
  if (!(n.p >= 0.0 && n.p <= 1.0)) fail("network.p must lie in [0, 1]");
  if (n.tau && !(*n.tau > 0.0)) fail("network.tau must be positive");
  if (n.beta_samples < 1) fail("network.beta_samples must be >= 1");
  if (n.beta && !(*n.beta >= 0.0)) fail("network.beta must be nonnegative");
  if (n.model == "static" && !n.matrix) fail("network.matrix is required for the static model");
  if (n.edges)
    for (const auto& e : *n.edges)
      if (e.size() != 2) fail("network.edges entries must be [u, v] pairs");

  const auto& a = c.algorithm;
  if (a.method != "cda" && a.method != "dda" && a.method != "dpga")
    fail("algorithm.method must be \"cda\", \"dda\" or \"dpga\"");
  if (a.a && !(*a.a > 0.0)) fail("algorithm.a must be positive");
  if (!(a.eta >= 0.0)) fail("algorithm.eta must be nonnegative");
  if (a.rounds < 0) fail("algorithm.rounds must be >= 0");
  if (c.seeds.empty()) fail("seeds must not be empty");
  if (c.output.dir.empty()) fail("output.dir must not be empty");
}

inline ExperimentConfig config_from_json(const json& j) {
  ExperimentConfig c;
  detail::StrictObject top(j, "config");
  top.get("name", c.name);
  if (const json* pj = top.sub("problem")) {
    detail::StrictObject o(*pj, "problem");
    o.get("family", c.problem.family);
    o.get("n", c.problem.n);
    o.get("rows", c.problem.rows);
    o.get("dim", c.problem.dim);
    o.get("seed", c.problem.seed);
    o.get("convex", c.problem.convex);
    o.get("x0", c.problem.x0);
    o.get("instance", c.problem.instance);
    if (const json* sj = o.sub("set")) {
      detail::StrictObject s(*sj, "problem.set");
      s.get("type", c.problem.set.type);
      s.get("radius", c.problem.set.radius);
      s.get("lower", c.problem.set.lower);
      s.get("upper", c.problem.set.upper);
      s.finish();
    }
    o.finish();
  }
  if (const json* nj = top.sub("network")) {
    detail::StrictObject o(*nj, "network");
    o.get("model", c.network.model);
    o.get("p", c.network.p);
    o.get("tau", c.network.tau);
    o.get("seed", c.network.seed);
    o.get("edges", c.network.edges);
    o.get("matrix", c.network.matrix);
    o.get("beta_samples", c.network.beta_samples);
    o.get("beta", c.network.beta);
    o.finish();
  }
  if (const json* aj = top.sub("algorithm")) {
    detail::StrictObject o(*aj, "algorithm");
    if (aj->contains("a") && (*aj)["a"].is_string()) {
      if ((*aj)["a"] != "certified") throw ConfigError("algorithm.a: expected a number or \"certified\"");
      json copy = *aj;
      copy.erase("a");
      detail::StrictObject rest(copy, "algorithm");
      rest.get("method", c.algorithm.method);
      rest.get("eta", c.algorithm.eta);
      rest.get("rounds", c.algorithm.rounds);
      rest.get("monitors", c.algorithm.monitors);
      rest.get("early_stop", c.algorithm.early_stop);
      rest.finish();
    } else {
      o.get("method", c.algorithm.method);
      o.get("a", c.algorithm.a);
      o.get("eta", c.algorithm.eta);
      o.get("rounds", c.algorithm.rounds);
      o.get("monitors", c.algorithm.monitors);
      o.get("early_stop", c.algorithm.early_stop);
      o.finish();
    }
  }
  top.get("seeds", c.seeds);
  if (const json* oj = top.sub("output")) {
    detail::StrictObject o(*oj, "output");
    o.get("dir", c.output.dir);
    o.get("per_seed", c.output.per_seed);
    o.finish();
  }
  top.get("paper_scale", c.paper_scale);
  top.finish();
  validate(c);
  return c;
}

inline ExperimentConfig load_config(const std::string& path) {
  std::ifstream is(path);
  if (!is) throw ConfigError("cannot read config " + path);
  try {
    return config_from_json(json::parse(is));
  } catch (const json::parse_error& e) {
    throw ConfigError(path + ": " + e.what());
  }
}

// ---------------------------------------------------------------------------
// Presets

struct Preset {
  std::string name;
  std::string description;
  ExperimentConfig config;
};

inline std::vector<Preset> presets() {
  std::vector<Preset> out;
  std::vector<std::uint64_t> ten(10);
  for (std::size_t k = 0; k < ten.size(); ++k) ten[k] = k;

  ExperimentConfig pca;
  pca.name = "reproduce-pca";
  pca.problem = ProblemSpec{};  // pca, n=10, 10x50, unit ball, random x0
  pca.network = NetworkSpec{};  // bernoulli p=0.1 on the complete graph, tau=n
  pca.algorithm.method = "dda";
  pca.algorithm.rounds = 2000;
  pca.seeds = ten;
  pca.output.dir = "results/reproduce-pca";
  out.push_back({pca.name, "desk-scale distributed PCA: n=10, M_i 10x50, Bernoulli p=0.1, certified a, 10 seeds", pca});

  ExperimentConfig paper = pca;
  paper.name = "reproduce-pca-paper";
  paper.problem.n = 50;
  paper.problem.rows = 30;
  paper.problem.dim = 500;
  paper.algorithm.a = 1.0;
  paper.output.dir = "results/reproduce-pca-paper";
  paper.paper_scale = true;
  out.push_back({paper.name, "full-size distributed PCA: n=50, M_i 30x500, a=1 (uncertified); needs --paper-scale",
                 paper});

  ExperimentConfig dpga = pca;
  dpga.name = "dpga-pca";
  dpga.algorithm.method = "dpga";
  dpga.algorithm.eta = 1e-4;
  dpga.output.dir = "results/dpga-pca";
  out.push_back({dpga.name, "projected-gradient baseline on the desk PCA setup, eta=1e-4", dpga});

  ExperimentConfig cda;
  cda.name = "cda-quadratic";
  cda.problem.family = "quadratic";
  cda.problem.n = 5;
  cda.problem.dim = 10;
  cda.problem.seed = 3;
  cda.problem.convex = true;
  cda.algorithm.method = "cda";
  cda.algorithm.rounds = 5000;
  cda.seeds = {0};
  cda.output.dir = "results/cda-quadratic";
  out.push_back({cda.name, "centralized dual averaging on a convex ball-constrained quadratic, a=1/L, f* from oracle",
                 cda});
  return out;
}

inline ExperimentConfig preset(const std::string& name) {
  for (const auto& p : presets())
    if (p.name == name) return p.config;
  throw ConfigError("unknown preset '" + name + "'");
}

// ---------------------------------------------------------------------------
// Building blocks from a config

inline FeasibleSet build_set(const ProblemSpec& p, Eigen::Index dim) {
  if (p.set.type == "box")
    return FeasibleSet::box(Vector::Constant(dim, p.set.lower), Vector::Constant(dim, p.set.upper));
  return FeasibleSet::ball(dim, p.set.radius);
}

inline ObjectiveSplit build_objective(const ProblemSpec& p) {
  if (p.instance) return load_instance(*p.instance);
  return p.family == "pca" ? pca_instance(p.n, p.rows, p.dim, p.seed)
                           : quadratic_instance(p.n, p.dim, p.seed, p.convex);
}

inline Vector build_x0(const ProblemSpec& p, const FeasibleSet& set) {
  if (p.x0 == "zero") return project(set, Vector::Zero(set.dimension()));
  return random_initial_point(set, p.seed);
}

inline MixingModel build_model(const NetworkSpec& s, int n) {
  std::optional<Supergraph> graph;
  if (s.model == "bernoulli" || s.model == "gossip") {
    if (s.edges) {
      std::vector<std::pair<int, int>> e;
      for (const auto& uv : *s.edges) e.emplace_back(uv.at(0) - 1, uv.at(1) - 1);
      try {
        graph.emplace(n, std::move(e));
      } catch (const std::invalid_argument& ex) {
        throw ConfigError(std::string("network.edges: ") + ex.what());
      }
    } else {
      graph = Supergraph::complete(n);
    }
  }
  try {
    if (s.model == "bernoulli") return MixingModel::bernoulli(*graph, s.p, s.tau);
    if (s.model == "gossip") return MixingModel::gossip(*graph);
    if (s.model == "perfect") return MixingModel::perfect(n);
    const auto& rows = *s.matrix;
    Matrix p(static_cast<Eigen::Index>(rows.size()), static_cast<Eigen::Index>(rows.size()));
    for (std::size_t i = 0; i < rows.size(); ++i) {
      if (rows[i].size() != rows.size()) throw ConfigError("network.matrix must be square");
      for (std::size_t j = 0; j < rows.size(); ++j)
        p(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(j)) = rows[i][j];
    }
    if (p.rows() != n) throw ConfigError("network.matrix size does not match problem.n");
    if (!verify_doubly_stochastic(p)) throw ConfigError("network.matrix is not doubly stochastic");
    return MixingModel::fixed(std::move(p));
  } catch (const ConfigError&) {
    throw;
  } catch (const std::invalid_argument& ex) {
    throw ConfigError(std::string("network: ") + ex.what());
  }
}

/// Estimate used for every seed of an experiment, drawn from its own stream.
inline BetaEstimate network_beta(const NetworkSpec& s, const MixingModel& model) {
  if (s.beta) {
    BetaEstimate b;
    b.beta = b.first_half = b.second_half = *s.beta;
    b.flagged = *s.beta >= 1.0;
    b.message = "supplied in config";
    return b;
  }
  Rng rng = make_rng(s.seed, 0xBE7A);
  return beta_estimate(model, s.beta_samples, rng);
}

/// Per-run network seed for seed-list entry k.
inline std::uint64_t run_network_seed(const NetworkSpec& s, std::uint64_t k) { return stream_seed(s.seed, k); }

// ---------------------------------------------------------------------------
// Certification report

inline json certify_report(const MixingModel& model, const BetaEstimate& beta, double lipschitz) {
  const auto cert = certify_stepsize_dda(lipschitz, beta.beta);
  json r{{"model", model.name()},
         {"n", model.nodes()},
         {"L", lipschitz},
         {"beta", beta.beta},
         {"beta_first_half", beta.first_half},
         {"beta_second_half", beta.second_half},
         {"beta_spread", beta.spread},
         {"beta_samples", beta.samples},
         {"beta_deterministic", beta.deterministic},
         {"beta_flagged", beta.flagged},
         {"feasible", cert.feasible},
         {"message", cert.message}};
  if (!beta.message.empty()) r["beta_message"] = beta.message;
  auto num = [](double v) { return std::isfinite(v) ? json(v) : json(format_double(v)); };
  r["beta_step_bound"] = num(cert.beta_step_bound);
  if (cert.feasible) {
    r["a_max"] = cert.a_max;
    r["a_limit"] = cert.a_limit;
    r["rho_M_at_a_max"] = cert.rho_at_a_max;
  }
  return r;
}

// ---------------------------------------------------------------------------
// Running

struct SeedRun {
  std::uint64_t seed = 0;
  std::uint64_t network_seed = 0;
  Table table;
  std::vector<Monitor> monitors;
  bool aborted = false;
  std::string abort_reason;
  bool diverged = false;
  std::optional<long> stationary_at;
  double wall_seconds = 0.0;
};

struct ExperimentResult {
  ExperimentConfig config;
  double lipschitz = 0.0;
  double a = 0.0;  // eta for dpga
  std::string a_source;
  std::optional<double> f_lower;
  std::string f_lower_source;
  std::optional<BetaEstimate> beta;
  double rho_m = std::numeric_limits<double>::quiet_NaN();
  double pi_sq = std::numeric_limits<double>::quiet_NaN();
  double C = std::numeric_limits<double>::quiet_NaN();
  double f_x0 = 0.0;
  std::vector<SeedRun> runs;
  Table mean;
  Table stddev;
  std::optional<RateFit> fit;
  std::vector<std::string> warnings;
  double wall_seconds = 0.0;

  bool any_aborted() const {
    return std::any_of(runs.begin(), runs.end(), [](const SeedRun& r) { return r.aborted; });
  }
};

/// Mean and sample standard deviation per row and column over runs that share
/// the column layout; rows beyond the shortest run are dropped.
inline std::pair<Table, Table> aggregate_tables(const std::vector<Table>& tables) {
  if (tables.empty()) throw std::invalid_argument("aggregate_tables: no tables");
  std::size_t rows = tables.front().rows.size();
  for (const auto& t : tables) {
    if (t.columns != tables.front().columns) throw std::invalid_argument("aggregate_tables: column mismatch");
    rows = std::min(rows, t.rows.size());
  }
  Table mean{tables.front().columns, {}}, sd{tables.front().columns, {}};
  const auto k = static_cast<double>(tables.size());
  for (std::size_t r = 0; r < rows; ++r) {
    std::vector<double> m(mean.columns.size(), 0.0), s(mean.columns.size(), 0.0);
    for (std::size_t c = 0; c < m.size(); ++c) {
      for (const auto& t : tables) m[c] += t.rows[r][c];
      m[c] /= k;
      if (tables.size() > 1) {
        for (const auto& t : tables) s[c] += (t.rows[r][c] - m[c]) * (t.rows[r][c] - m[c]);
        s[c] = std::sqrt(s[c] / (k - 1.0));
      }
    }
    mean.rows.push_back(std::move(m));
    sd.rows.push_back(std::move(s));
  }
  return {mean, sd};
}

/// t, then <column>_mean and <column>_std for every other column.
/// A cost column (cost or f) also gets <column>_times_n: the un-averaged sum of local costs.
inline Table aggregate_layout(const Table& mean, const Table& sd, int n) {
  Table out;
  out.columns.push_back("t");
  std::vector<std::size_t> keep;
  for (std::size_t c = 0; c < mean.columns.size(); ++c) {
    if (mean.columns[c] == "t") continue;
    keep.push_back(c);
    out.columns.push_back(mean.columns[c] + "_mean");
    out.columns.push_back(mean.columns[c] + "_std");
  }
  std::optional<std::size_t> cost;
  for (const char* name : {"cost", "f"})
    if (!cost && mean.has_column(name)) cost = mean.column_index(name);
  if (cost) {
    out.columns.push_back(mean.columns[*cost] + "_times_n_mean");
    out.columns.push_back(mean.columns[*cost] + "_times_n_std");
  }
  const auto tk = mean.column_index("t");
  for (std::size_t r = 0; r < mean.rows.size(); ++r) {
    std::vector<double> row{mean.rows[r][tk]};
    for (auto c : keep) {
      row.push_back(mean.rows[r][c]);
      row.push_back(sd.rows[r][c]);
    }
    if (cost) {
      row.push_back(n * mean.rows[r][*cost]);
      row.push_back(n * sd.rows[r][*cost]);
    }
    out.rows.push_back(std::move(row));
  }
  return out;
}

namespace detail {

/// Runs fn(k) for k in [0, count) on up to `threads` workers.
template <typename Fn>
void parallel_for(std::size_t count, unsigned threads, Fn fn) {
  threads = std::max(1u, std::min<unsigned>(threads, static_cast<unsigned>(count)));
  if (threads == 1) {
    for (std::size_t k = 0; k < count; ++k) fn(k);
    return;
  }
  std::atomic<std::size_t> next{0};
  std::vector<std::exception_ptr> errors(count);
  std::vector<std::thread> pool;
  for (unsigned w = 0; w < threads; ++w)
    pool.emplace_back([&] {
      for (std::size_t k = next++; k < count; k = next++) {
        try {
          fn(k);
        } catch (...) {
          errors[k] = std::current_exception();
        }
      }
    });
  for (auto& t : pool) t.join();
  for (auto& e : errors)
    if (e) std::rethrow_exception(e);
}

inline double seconds_since(std::chrono::steady_clock::time_point t0) {
  return std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
}

}  // namespace detail

/// Runs every seed of the experiment (in parallel when `threads` > 1) and
/// aggregates the traces. Does not touch the filesystem.
inline ExperimentResult run_experiment(const ExperimentConfig& config, unsigned threads = 0) {
  validate(config);
  const auto t0 = std::chrono::steady_clock::now();
  if (threads == 0) threads = std::max(1u, std::thread::hardware_concurrency());

  ExperimentResult res;
  res.config = config;
  const ObjectiveSplit obj = build_objective(config.problem);
  const FeasibleSet set = build_set(config.problem, obj.dimension());
  const Vector x0 = build_x0(config.problem, set);
  const int n = static_cast<int>(obj.size());
  res.lipschitz = obj.lipschitz();
  res.f_x0 = obj.value(x0);
  for (const auto& f : obj.locals())
    if (!f.lipschitz_converged()) {
      res.warnings.push_back("power iteration for a local Lipschitz constant hit its iteration cap");
      break;
    }

  const bool convex_quadratic = obj.spec() && obj.spec()->family == "quadratic" && obj.spec()->convex;
  if (convex_quadratic) {
    const auto oracle = projected_gradient_oracle(obj, set, x0);
    res.f_lower = oracle.value;
    res.f_lower_source = oracle.converged ? "projected-gradient oracle" : "projected-gradient oracle (not converged)";
    if (!oracle.converged) res.warnings.push_back("f* oracle did not converge; eq6_bound may be inexact");
  } else {
    try {
      res.f_lower = objective_lower_bound(obj, set);
      res.f_lower_source = "analytic lower bound";
    } catch (const std::invalid_argument&) {
    }
  }

  const std::string& method = config.algorithm.method;
  std::optional<MixingModel> model;
  if (method != "cda") {
    if (!config.problem.instance && config.problem.n != n) throw ConfigError("problem.n does not match the instance");
    model = build_model(config.network, n);
  }

  if (method == "cda") {
    res.a = config.algorithm.a.value_or(1.0 / res.lipschitz);
    res.a_source = config.algorithm.a ? "config" : "1/L";
    const auto report = validate_stepsize_cda(res.a, res.lipschitz);
    if (!report.ok) res.warnings.push_back("step size violates a < 2/L: " + report.message);
  } else if (method == "dda") {
    res.beta = network_beta(config.network, *model);
    if (res.beta->flagged) res.warnings.push_back("beta >= 1: the network does not contract (or is under-sampled)");
    if (config.algorithm.a) {
      res.a = *config.algorithm.a;
      res.a_source = "config";
    } else {
      const auto cert = certify_stepsize_dda(res.lipschitz, res.beta->beta);
      if (!cert.feasible) throw InfeasibleError("step-size certification failed: " + cert.message);
      res.a = cert.a_max;
      res.a_source = "certified";
    }
    if (!dda_stepsize_admissible(res.a, res.lipschitz, res.beta->beta))
      res.warnings.push_back("step size a=" + format_double(res.a) + " is not certified for L=" +
                             format_double(res.lipschitz) + ", beta=" + format_double(res.beta->beta));
    if (res.beta->beta < 1.0) res.rho_m = rho_M(res.a, res.lipschitz, res.beta->beta);
    res.pi_sq = pi_squared(obj, x0);
    if (res.f_lower) {
      try {
        res.C = theorem2_C(res.lipschitz, res.beta->beta, res.a, res.pi_sq, res.f_x0, *res.f_lower, n);
      } catch (const InfeasibleError&) {
      }
    }
  } else {
    res.a = config.algorithm.eta;
    res.a_source = "eta";
  }

  res.runs.resize(config.seeds.size());
  detail::parallel_for(config.seeds.size(), threads, [&](std::size_t k) {
    const auto ts = std::chrono::steady_clock::now();
    SeedRun& run = res.runs[k];
    run.seed = config.seeds[k];
    run.network_seed = run_network_seed(config.network, run.seed);
    if (method == "cda") {
      CdaOptions o;
      o.rounds = config.algorithm.rounds;
      o.f_lower = res.f_lower;
      o.early_stop = config.algorithm.early_stop;
      o.monitors = config.algorithm.monitors;
      const auto trace = run_cda(obj, ProximalSetup(x0, res.a), set, o);
      run.table = trace.table();
      run.monitors = trace.monitors;
    } else if (method == "dda") {
      DdaOptions o;
      o.rounds = config.algorithm.rounds;
      o.network_seed = run.network_seed;
      o.beta = res.beta->beta;
      o.f_lower = res.f_lower;
      o.monitors = config.algorithm.monitors;
      const auto trace = run_dda(obj, ProximalSetup(x0, res.a), set, *model, o);
      run.table = trace.table();
      run.monitors = trace.monitors;
      run.aborted = trace.aborted;
      run.abort_reason = trace.abort_reason;
      run.stationary_at = trace.stationary_at;
    } else {
      DpgaOptions o;
      o.rounds = config.algorithm.rounds;
      o.eta = config.algorithm.eta;
      o.network_seed = run.network_seed;
      const auto trace = dpga_baseline(obj, set, x0, *model, o);
      run.table = trace.table();
      run.diverged = trace.diverged;
    }
    run.wall_seconds = detail::seconds_since(ts);
  });

  std::vector<Table> tables;
  for (const auto& r : res.runs) tables.push_back(r.table);
  std::tie(res.mean, res.stddev) = aggregate_tables(tables);
  for (const char* col : {"min_residual", "min_grad_map_sq"}) {
    if (!res.mean.has_column(col) || res.mean.rows.size() < 3) continue;
    try {
      res.fit = ratefit(res.mean, col);
    } catch (const std::exception& e) {
      res.warnings.push_back(std::string("rate fit skipped: ") + e.what());
    }
    break;
  }
  res.wall_seconds = detail::seconds_since(t0);
  return res;
}

inline json monitors_json(const std::vector<Monitor>& ms) {
  json out = json::array();
  for (const auto& m : ms)
    out.push_back({{"name", m.name},
                   {"checks", m.checks},
                   {"violations", m.violations},
                   {"worst_excess", m.worst_excess},
                   {"first_violation", m.first_violation}});
  return out;
}

inline json summary_json(const ExperimentResult& r) {
  auto num = [](double v) { return std::isfinite(v) ? json(v) : json(nullptr); };
  json s{{"config", to_json(r.config)},
         {"L", r.lipschitz},
         {r.config.algorithm.method == "dpga" ? "eta" : "a", r.a},
         {"step_source", r.a_source},
         {"f_x0", r.f_x0},
         {"f_lower", r.f_lower ? json(*r.f_lower) : json(nullptr)},
         {"f_lower_source", r.f_lower_source},
         {"wall_time_seconds", r.wall_seconds},
         {"warnings", r.warnings}};
  if (r.beta) {
    s["beta"] = r.beta->beta;
    s["beta_spread"] = r.beta->spread;
    s["rho_M"] = num(r.rho_m);
    s["pi_sq"] = num(r.pi_sq);
    s["C"] = num(r.C);
  }
  if (!r.mean.rows.empty()) {
    json fin;
    const auto& last = r.mean.rows.back();
    for (std::size_t c = 0; c < r.mean.columns.size(); ++c) fin[r.mean.columns[c]] = num(last[c]);
    const int n = r.runs.empty() ? 1 : r.config.problem.n;
    for (const char* cost : {"cost", "f"})
      if (r.mean.has_column(cost)) fin[std::string(cost) + "_times_n"] = num(n * last[r.mean.column_index(cost)]);
    s["final_mean"] = fin;
  }
  if (r.fit)
    s["ratefit"] = {{"column", r.fit->column}, {"slope", r.fit->slope}, {"intercept", r.fit->intercept},
                    {"r2", r.fit->r2},         {"window", {r.fit->t_first, r.fit->t_last}}};
  json runs = json::array();
  for (const auto& run : r.runs) {
    json j{{"seed", run.seed},         {"network_seed", run.network_seed}, {"rows", run.table.rows.size()},
           {"aborted", run.aborted},   {"diverged", run.diverged},         {"wall_time_seconds", run.wall_seconds},
           {"monitors", monitors_json(run.monitors)}};
    if (run.aborted) j["abort_reason"] = run.abort_reason;
    if (run.stationary_at) j["stationary_at"] = *run.stationary_at;
    runs.push_back(std::move(j));
  }
  s["runs"] = std::move(runs);
  return s;
}

/// Writes config.json, per-seed traces, aggregate.{csv,dat,json} and summary.json into `dir`.
inline void write_experiment(const ExperimentResult& r, const std::filesystem::path& dir) {
  std::filesystem::create_directories(dir);
  auto open = [&](const std::string& name) {
    std::ofstream os(dir / name);
    if (!os) throw std::runtime_error("cannot write " + (dir / name).string());
    return os;
  };
  open("config.json") << to_json(r.config).dump(2) << '\n';
  if (r.config.output.per_seed)
    for (const auto& run : r.runs) {
      auto os = open("seed_" + std::to_string(run.seed) + ".csv");
      write_csv(os, run.table);
    }
  const Table agg = aggregate_layout(r.mean, r.stddev, r.config.problem.n);
  {
    auto os = open("aggregate.csv");
    write_csv(os, agg);
  }
  {
    auto os = open("aggregate.dat");
    write_gnuplot(os, agg);
  }
  json aj{{"t", r.mean.column("t")}, {"mean", json::object()}, {"std", json::object()}};
  for (const auto& c : r.mean.columns) {
    if (c == "t") continue;
    json m = json::array(), s = json::array();
    for (double v : r.mean.column(c)) m.push_back(std::isfinite(v) ? json(v) : json(nullptr));
    for (double v : r.stddev.column(c)) s.push_back(std::isfinite(v) ? json(v) : json(nullptr));
    aj["mean"][c] = std::move(m);
    aj["std"][c] = std::move(s);
  }
  open("aggregate.json") << aj.dump() << '\n';
  open("summary.json") << summary_json(r).dump(2) << '\n';
}

}  // namespace dualavg
