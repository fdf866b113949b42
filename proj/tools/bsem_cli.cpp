#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <map>
#include <sstream>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "bsem/artifact.hpp"
#include "bsem/engine.hpp"
#include "bsem/error.hpp"
#include "bsem/likelihood.hpp"
#include "bsem/report.hpp"

namespace {

std::string read_file(const std::string& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw bsem::Error("cannot read " + path);
  std::ostringstream ss;
  ss << is.rdbuf();
  return ss.str();
}

// --model takes either a file path or literal syntax
std::string model_argument(const std::string& arg) {
  if (std::filesystem::exists(arg)) return read_file(arg);
  if (arg.find('=') == std::string::npos && arg.find('~') == std::string::npos)
    throw bsem::Error("--model: no such file and not model syntax: " + arg);
  return arg;
}

struct FitArgs {
  std::string model, table, data, group, out = "bsem_run";
  std::vector<std::string> group_equal, dp_pairs;
  std::string cp = "srs", inits = "prior", convergence = "manual";
  int chains = 3, adapt = 1000, burnin = 4000, sample = 10000, threads = 0, ppp_reps = 1000;
  std::uint64_t seed = 1;
  bool no_fit = false, export_loglik = false;
};

void add_model_options(CLI::App* cmd, FitArgs& a) {
  cmd->add_option("--model,-m", a.model, "model syntax or a file containing it");
  cmd->add_option("--table", a.table, "parameter table csv (alternative to --model)");
  cmd->add_option("--data,-d", a.data, "data csv")->required();
  cmd->add_option("--group,-g", a.group, "grouping column");
  cmd->add_option("--group-equal", a.group_equal, "constrain across groups: loadings, intercepts");
  cmd->add_option("--dp", a.dp_pairs, "default prior override, key=prior (repeatable)");
  cmd->add_option("--cp", a.cp, "covariance parameterization: srs or fa")
      ->check(CLI::IsMember({"srs", "fa"}));
}

bsem::FitOptions to_options(const FitArgs& a) {
  bsem::FitOptions opt;
  if (!a.table.empty()) {
    const bsem::Dataset raw = bsem::load_csv(a.data, a.group);
    opt.table_in = bsem::table_from_csv(read_file(a.table), bsem::group_levels(raw));
  } else if (!a.model.empty()) {
    opt.model_text = model_argument(a.model);
  } else {
    throw bsem::Error("one of --model or --table is required");
  }
  opt.data_path = a.data;
  opt.group_column = a.group;
  opt.group_equal = a.group_equal;
  for (const std::string& kv : a.dp_pairs) {
    const auto eq = kv.find('=');
    if (eq == std::string::npos) throw bsem::Error("--dp expects key=prior, got " + kv);
    opt.dp[kv.substr(0, eq)] = kv.substr(eq + 1);
  }
  opt.cp = a.cp;
  opt.mcmc.chains = a.chains;
  opt.mcmc.adapt = a.adapt;
  opt.mcmc.burnin = a.burnin;
  opt.mcmc.sample = a.sample;
  opt.mcmc.seed = a.seed;
  opt.mcmc.inits = a.inits;
  opt.mcmc.auto_converge = a.convergence == "auto";
  opt.mcmc.threads = a.threads;
  opt.ppp_reps = a.ppp_reps;
  opt.compute_fit = !a.no_fit;
  return opt;
}

void export_loglik_csv(const bsem::FitResult& r, const std::string& path) {
  std::ofstream os(path, std::ios::binary);
  if (!os) throw bsem::Error("cannot write " + path);
  char buf[40];
  for (const Eigen::MatrixXd& d : r.mcmc.draws) {
    for (int t = 0; t < d.rows(); ++t) {
      const Eigen::VectorXd lf = bsem::casewise_loglik(r.table, r.data, d.row(t).transpose());
      for (int i = 0; i < lf.size(); ++i) {
        std::snprintf(buf, sizeof(buf), "%.17g", lf[i]);
        os << (i ? "," : "") << buf;
      }
      os << "\n";
    }
  }
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"bayesian structural equation models"};
  app.require_subcommand(1);

  FitArgs fa;
  CLI::App* fit = app.add_subcommand("fit", "estimate a model and write a run directory");
  add_model_options(fit, fa);
  fit->add_option("--chains", fa.chains, "number of chains")->check(CLI::PositiveNumber);
  fit->add_option("--adapt", fa.adapt, "adaptation iterations");
  fit->add_option("--burnin", fa.burnin, "burnin iterations");
  fit->add_option("--sample", fa.sample, "sampling iterations")->check(CLI::PositiveNumber);
  fit->add_option("--seed", fa.seed, "rng seed");
  fit->add_option("--inits", fa.inits, "prior or simple")
      ->check(CLI::IsMember({"prior", "simple"}));
  fit->add_option("--convergence", fa.convergence, "manual or auto burnin extension")
      ->check(CLI::IsMember({"manual", "auto"}));
  fit->add_option("--out,-o", fa.out, "run directory");
  fit->add_option("--threads", fa.threads, "chain threads, 0 = one per chain");
  fit->add_option("--ppp-reps", fa.ppp_reps, "posterior predictive replications");
  fit->add_flag("--no-fit-measures", fa.no_fit, "skip fit measure computation");
  fit->add_flag("--export-loglik", fa.export_loglik, "write casewise log likelihoods");

  std::string run_dir;
  double hpd_prob = 0.95;
  CLI::App* summary = app.add_subcommand("summary", "print the posterior summary of a run");
  summary->add_option("run", run_dir, "run directory")->required();
  summary->add_option("--hpd-prob", hpd_prob, "credible interval mass");

  CLI::App* fitmeas = app.add_subcommand("fitmeasures", "print the fit measures of a run");
  fitmeas->add_option("run", run_dir, "run directory")->required();

  FitArgs ia;
  CLI::App* inspect = app.add_subcommand("inspect", "print the parameter table without fitting");
  add_model_options(inspect, ia);

  std::string plot_params, plot_kind = "trace", plot_out = "plot.svg";
  CLI::App* plot = app.add_subcommand("plot", "write trace or autocorrelation plots");
  plot->add_option("run", run_dir, "run directory")->required();
  plot->add_option("--params", plot_params, "comma-separated parameter names (default all)");
  plot->add_option("--kind", plot_kind, "trace or autocorr")
      ->check(CLI::IsMember({"trace", "autocorr"}));
  plot->add_option("--out,-o", plot_out, "output svg path");

  CLI11_PARSE(app, argc, argv);

  try {
    if (fit->parsed()) {
      bsem::FitOptions opt = to_options(fa);
      opt.mcmc.on_phase = [](const std::string& msg) { std::cerr << msg << "\n"; };
      const bsem::FitResult result = bsem::fit_model(opt);
      bsem::save_run(fa.out, result);
      if (fa.export_loglik)
        export_loglik_csv(result, (std::filesystem::path(fa.out) / "loglik.csv").string());
      std::cout << bsem::render_summary(result);
      if (result.has_fit) std::cout << "\n" << bsem::render_fitmeasures(result.fit);
      std::cout << "\nrun written to " << fa.out << "\n";
      return result.mcmc.convergence.converged ? 0 : 3;
    }
    if (summary->parsed()) {
      bsem::FitResult result = bsem::load_run(run_dir);
      result.summary = bsem::summarize_result(result, hpd_prob);
      std::cout << bsem::render_summary(result);
      return 0;
    }
    if (fitmeas->parsed()) {
      const bsem::FitResult result = bsem::load_run(run_dir);
      if (!result.has_fit) throw bsem::Error("run has no fit measures (fitted with --no-fit-measures?)");
      std::cout << bsem::render_fitmeasures(result.fit);
      return 0;
    }
    if (inspect->parsed()) {
      bsem::FitOptions opt = to_options(ia);
      const bsem::Dataset raw = bsem::load_csv(opt.data_path, opt.group_column);
      const bsem::GroupInfo groups = bsem::group_levels(raw);
      bsem::ParameterTable table;
      if (opt.table_in) {
        table = *opt.table_in;
      } else {
        bsem::BuildOptions bopt;
        bopt.group_equal = opt.group_equal;
        table = bsem::build_table(bsem::parse_model(opt.model_text), groups, bopt);
      }
      std::cout << bsem::table_to_csv(table);
      std::cout << "free parameters: " << table.npar << "\n";
      return 0;
    }
    if (plot->parsed()) {
      const bsem::FitResult result = bsem::load_run(run_dir);
      std::vector<std::string> names;
      std::stringstream ss(plot_params);
      std::string tok;
      while (std::getline(ss, tok, ','))
        if (!tok.empty()) names.push_back(tok);
      std::ofstream os(plot_out, std::ios::binary);
      if (!os) throw bsem::Error("cannot write " + plot_out);
      os << bsem::render_plot_svg(result, names, plot_kind);
      std::cout << "plot written to " << plot_out << "\n";
      return 0;
    }
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
  return 0;
}
