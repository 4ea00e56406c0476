// dualavg: run dual-averaging experiments, certify step sizes, fit rates.
//
// Exit codes: 0 ok, 2 configuration or input error, 3 numerical failure
// (aborted run, infeasible certification).

#include <cstdlib>
#include <fstream>
#include <iostream>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "dualavg/dualavg.hpp"

namespace {

constexpr int kExitOk = 0;
constexpr int kExitConfig = 2;
constexpr int kExitNumerical = 3;
constexpr const char* kOutputEnv = "DUALAVG_OUTPUT_DIR";

std::vector<std::uint64_t> parse_seed_list(const std::string& text) {
  // "0,1,2" or "0-9"
  std::vector<std::uint64_t> out;
  std::stringstream ss(text);
  std::string item;
  while (std::getline(ss, item, ',')) {
    if (item.empty()) continue;
    const auto dash = item.find('-');
    try {
      if (dash == std::string::npos) {
        out.push_back(std::stoull(item));
      } else {
        const auto lo = std::stoull(item.substr(0, dash));
        const auto hi = std::stoull(item.substr(dash + 1));
        if (hi < lo) throw dualavg::ConfigError("bad seed range '" + item + "'");
        for (auto s = lo; s <= hi; ++s) out.push_back(s);
      }
    } catch (const std::logic_error&) {
      throw dualavg::ConfigError("bad seed list entry '" + item + "'");
    }
  }
  if (out.empty()) throw dualavg::ConfigError("empty seed list");
  return out;
}

struct Source {
  std::string config_path;
  std::string preset_name;

  std::optional<dualavg::ExperimentConfig> load() const {
    if (!config_path.empty() && !preset_name.empty())
      throw dualavg::ConfigError("--config and --preset are mutually exclusive");
    if (!config_path.empty()) return dualavg::load_config(config_path);
    if (!preset_name.empty()) return dualavg::preset(preset_name);
    return std::nullopt;
  }
};

int cmd_run(const Source& src, std::optional<long> rounds, const std::string& seeds, const std::string& output,
            unsigned threads, bool paper_scale, bool quiet) {
  auto cfg = src.load();
  if (!cfg) throw dualavg::ConfigError("run needs --config FILE or --preset NAME");
  if (rounds) cfg->algorithm.rounds = *rounds;
  if (!seeds.empty()) cfg->seeds = parse_seed_list(seeds);
  if (const char* env = std::getenv(kOutputEnv); env && *env) cfg->output.dir = env;
  if (!output.empty()) cfg->output.dir = output;
  dualavg::validate(*cfg);
  if (cfg->paper_scale && !paper_scale)
    throw dualavg::ConfigError("'" + cfg->name + "' is a paper-scale run; pass --paper-scale to allow it");

  const auto res = dualavg::run_experiment(*cfg, threads);
  dualavg::write_experiment(res, cfg->output.dir);

  if (!quiet) {
    std::cout << "experiment  " << cfg->name << " (" << cfg->algorithm.method << ", " << res.runs.size()
              << " seeds, " << cfg->algorithm.rounds << " rounds)\n";
    std::cout << "output      " << cfg->output.dir << "\n";
    std::cout << "L           " << res.lipschitz << "\n";
    std::cout << (cfg->algorithm.method == "dpga" ? "eta         " : "a           ") << res.a << " (" << res.a_source
              << ")\n";
    if (res.beta) {
      std::cout << "beta        " << res.beta->beta << "\n";
      std::cout << "rho(M)      " << res.rho_m << "\n";
      std::cout << "pi^2        " << res.pi_sq << "\n";
      std::cout << "C           " << res.C << "\n";
    }
    if (!res.mean.rows.empty()) {
      const auto& last = res.mean.rows.back();
      for (std::size_t c = 1; c < res.mean.columns.size(); ++c)
        std::cout << "final mean  " << res.mean.columns[c] << " = " << last[c] << "\n";
    }
    if (res.fit)
      std::cout << "rate fit    " << res.fit->column << ": slope " << res.fit->slope << ", r^2 " << res.fit->r2
                << " over t in [" << res.fit->t_first << ", " << res.fit->t_last << "]\n";
    long violations = 0;
    for (const auto& run : res.runs)
      for (const auto& m : run.monitors) violations += m.violations;
    std::cout << "monitors    " << violations << " violation(s)\n";
    for (const auto& w : res.warnings) std::cerr << "warning: " << w << "\n";
  }
  if (res.any_aborted()) {
    for (const auto& run : res.runs)
      if (run.aborted) std::cerr << "seed " << run.seed << ": " << run.abort_reason << "\n";
    return kExitNumerical;
  }
  return kExitOk;
}

struct CertifyFlags {
  std::optional<double> lipschitz;
  std::string model = "bernoulli";
  int n = 10;
  double p = 0.1;
  std::optional<double> tau;
  std::uint64_t seed = 2;
  long samples = dualavg::kDefaultBetaSamples;
};

int cmd_certify(const Source& src, const CertifyFlags& f, bool as_json) {
  auto cfg = src.load();
  dualavg::NetworkSpec net;
  int n = f.n;
  double lip = 0.0;
  if (cfg) {
    net = cfg->network;
    const auto obj = dualavg::build_objective(cfg->problem);
    n = static_cast<int>(obj.size());
    lip = f.lipschitz.value_or(obj.lipschitz());
  } else {
    if (!f.lipschitz) throw dualavg::ConfigError("certify needs --L (or a --config/--preset to compute it)");
    lip = *f.lipschitz;
    net.model = f.model;
    net.p = f.p;
    net.tau = f.tau;
    net.seed = f.seed;
    net.beta_samples = f.samples;
    if (net.model == "static") {
      std::vector<std::vector<double>> eye(static_cast<std::size_t>(n), std::vector<double>(static_cast<std::size_t>(n)));
      for (int i = 0; i < n; ++i) eye[static_cast<std::size_t>(i)][static_cast<std::size_t>(i)] = 1.0;
      net.matrix = eye;  // the only static matrix expressible by flags: identity
    }
  }
  if (!(lip > 0.0)) throw dualavg::ConfigError("L must be positive");
  if (n < 1) throw dualavg::ConfigError("n must be >= 1");
  const auto model = dualavg::build_model(net, n);
  const auto beta = dualavg::network_beta(net, model);
  const auto report = dualavg::certify_report(model, beta, lip);
  if (as_json) {
    std::cout << report.dump(2) << "\n";
  } else {
    std::cout << "model         " << model.name() << " (n=" << n << ")\n";
    std::cout << "L             " << lip << "\n";
    std::cout << "beta          " << beta.beta << (beta.deterministic ? " (exact)" : "") << "\n";
    if (!beta.deterministic)
      std::cout << "beta halves   " << beta.first_half << ", " << beta.second_half << " (spread " << beta.spread
                << ", " << beta.samples << " samples)\n";
    std::cout << "beta bound    " << report["beta_step_bound"] << "\n";
    if (report["feasible"].get<bool>()) {
      std::cout << "a_max         " << report["a_max"].get<double>() << "\n";
      std::cout << "rho(M)        " << report["rho_M_at_a_max"].get<double>() << "\n";
    }
    std::cout << (report["feasible"].get<bool>() ? "certified     " : "INFEASIBLE    ")
              << report["message"].get<std::string>() << "\n";
    if (beta.flagged) std::cout << "flag          beta >= 1: assumption violated or under-sampled\n";
  }
  return report["feasible"].get<bool>() ? kExitOk : kExitNumerical;
}

int cmd_ratefit(const std::string& path, const std::string& column) {
  std::ifstream is(path);
  if (!is) throw dualavg::ConfigError("cannot read " + path);
  dualavg::Table table;
  try {
    table = dualavg::read_csv(is);
  } catch (const std::runtime_error& e) {
    throw dualavg::ConfigError(path + ": " + e.what());
  }
  const auto fit = dualavg::ratefit(table, column);
  const nlohmann::json out{{"column", fit.column}, {"slope", fit.slope},  {"intercept", fit.intercept},
                           {"r2", fit.r2},         {"points", fit.points}, {"window", {fit.t_first, fit.t_last}}};
  std::cout << out.dump(2) << "\n";
  return kExitOk;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Dual averaging for smooth nonconvex problems: centralized and distributed runs, "
               "step-size certification and rate fits."};
  app.require_subcommand(1);

  Source run_src;
  std::optional<long> rounds;
  std::string seeds, output;
  unsigned threads = 0;
  bool paper_scale = false, quiet = false;
  auto* run = app.add_subcommand("run", "run an experiment and write traces, aggregates and a summary");
  run->add_option("--config", run_src.config_path, "experiment config (JSON)");
  run->add_option("--preset", run_src.preset_name, "named preset (see 'presets list')");
  run->add_option("--rounds", rounds, "override the round budget");
  run->add_option("--seeds", seeds, "override the seed list, e.g. 0-9 or 1,4,7");
  run->add_option("--output", output, std::string("output directory (overrides ") + kOutputEnv + " and the config)");
  run->add_option("--threads", threads, "worker threads (0 = hardware concurrency)");
  run->add_flag("--paper-scale", paper_scale, "allow paper-scale presets");
  run->add_flag("--quiet", quiet, "print nothing on success");

  Source cert_src;
  CertifyFlags cf;
  bool cert_json = false;
  auto* certify = app.add_subcommand("certify", "estimate beta and the largest certified DDA step size");
  certify->add_option("--config", cert_src.config_path, "take network and L from an experiment config");
  certify->add_option("--preset", cert_src.preset_name, "take network and L from a preset");
  certify->add_option("--L", cf.lipschitz, "gradient Lipschitz constant");
  certify->add_option("--model", cf.model, "bernoulli | gossip | perfect | static (identity)")
      ->check(CLI::IsMember({"bernoulli", "gossip", "perfect", "static"}));
  certify->add_option("--n", cf.n, "number of agents");
  certify->add_option("--p", cf.p, "edge activation probability (bernoulli)");
  certify->add_option("--tau", cf.tau, "Laplacian scale (bernoulli, default n)");
  certify->add_option("--seed", cf.seed, "network seed");
  certify->add_option("--samples", cf.samples, "Monte Carlo samples for beta");
  certify->add_flag("--json", cert_json, "print the report as JSON");

  std::string trace_path, column;
  auto* rate = app.add_subcommand("ratefit", "fit log(min metric) against log(t) over the second half of a trace");
  rate->add_option("trace", trace_path, "trace CSV")->required();
  rate->add_option("--column", column, "column to fit (default min_residual, then min_grad_map_sq)");

  auto* pre = app.add_subcommand("presets", "list or show the built-in experiment presets");
  pre->require_subcommand(1);
  auto* pre_list = pre->add_subcommand("list", "list preset names");
  std::string show_name;
  auto* pre_show = pre->add_subcommand("show", "print a preset as a config file");
  pre_show->add_option("name", show_name)->required();

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int rc = app.exit(e);
    return rc == 0 ? kExitOk : kExitConfig;
  }

  try {
    if (*run) return cmd_run(run_src, rounds, seeds, output, threads, paper_scale, quiet);
    if (*certify) return cmd_certify(cert_src, cf, cert_json);
    if (*rate) return cmd_ratefit(trace_path, column);
    if (*pre_list) {
      for (const auto& p : dualavg::presets()) std::cout << p.name << "\t" << p.description << "\n";
      return kExitOk;
    }
    if (*pre_show) {
      std::cout << dualavg::to_json(dualavg::preset(show_name)).dump(2) << "\n";
      return kExitOk;
    }
  } catch (const dualavg::ConfigError& e) {
    std::cerr << "config error: " << e.what() << "\n";
    return kExitConfig;
  } catch (const dualavg::InfeasibleError& e) {
    std::cerr << "infeasible: " << e.what() << "\n";
    return kExitNumerical;
  } catch (const dualavg::NumericalError& e) {
    std::cerr << "numerical failure: " << e.what() << "\n";
    return kExitNumerical;
  } catch (const std::invalid_argument& e) {
    std::cerr << "invalid input: " << e.what() << "\n";
    return kExitConfig;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
  return kExitOk;
}
