#include "bsem/artifact.hpp"

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <limits>
#include <sstream>

#include <json.hpp>

#include "bsem/error.hpp"
#include "bsem/report.hpp"

namespace fs = std::filesystem;
using nlohmann::json;

namespace bsem {

namespace {

void write_file(const fs::path& path, const std::string& content) {
  std::ofstream os(path, std::ios::binary);
  if (!os) throw Error("cannot write " + path.string());
  os << content;
}

std::string read_file(const fs::path& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw Error("cannot read " + path.string());
  std::ostringstream ss;
  ss << is.rdbuf();
  return ss.str();
}

std::string draws_csv(const std::vector<std::string>& names, const Eigen::MatrixXd& draws) {
  std::ostringstream os;
  for (std::size_t j = 0; j < names.size(); ++j) os << (j ? "," : "") << names[j];
  os << "\n";
  char buf[40];
  for (int i = 0; i < draws.rows(); ++i) {
    for (int j = 0; j < draws.cols(); ++j) {
      std::snprintf(buf, sizeof(buf), "%.17g", draws(i, j));
      os << (j ? "," : "") << buf;
    }
    os << "\n";
  }
  return os.str();
}

Eigen::MatrixXd parse_draws_csv(const std::string& text, int ncols) {
  std::vector<double> vals;
  std::istringstream is(text);
  std::string line;
  std::getline(is, line);  // header
  int rows = 0;
  while (std::getline(is, line)) {
    if (line.empty()) continue;
    std::istringstream ls(line);
    std::string tok;
    int c = 0;
    while (std::getline(ls, tok, ',')) {
      vals.push_back(std::strtod(tok.c_str(), nullptr));
      ++c;
    }
    if (c != ncols) throw Error("draws file has a row with " + std::to_string(c) + " columns");
    ++rows;
  }
  Eigen::MatrixXd out(rows, ncols);
  for (int i = 0; i < rows; ++i)
    for (int j = 0; j < ncols; ++j) out(i, j) = vals[static_cast<std::size_t>(i) * ncols + j];
  return out;
}

json vector_json(const Eigen::VectorXd& v) {
  json arr = json::array();
  for (int i = 0; i < v.size(); ++i) arr.push_back(v[i]);
  return arr;
}

Eigen::VectorXd vector_from_json(const json& arr) {
  Eigen::VectorXd v(arr.size());
  for (std::size_t i = 0; i < arr.size(); ++i) v[static_cast<int>(i)] = arr[i].get<double>();
  return v;
}

json fit_json(const FitMeasures& fit) {
  json j;
  j["ppp"] = fit.ppp;
  j["logl"] = fit.logl;
  j["logl_sat"] = fit.logl_sat;
  j["dic"] = fit.dic;
  j["p_dic"] = fit.p_dic;
  j["waic"] = fit.waic;
  j["p_waic"] = fit.p_waic;
  j["looic"] = fit.looic;
  j["p_loo"] = fit.p_loo;
  j["margloglik"] = fit.margloglik;
  j["bic"] = fit.bic;
  j["npar"] = fit.npar;
  j["n_total"] = fit.n_total;
  j["pareto_k"] = vector_json(fit.pareto_k);
  j["warnings"] = fit.warnings;
  return j;
}

// NaN round-trips as json null
double num_or_nan(const json& j) {
  return j.is_null() ? std::numeric_limits<double>::quiet_NaN() : j.get<double>();
}

FitMeasures fit_from_json(const json& j) {
  FitMeasures fit;
  fit.ppp = num_or_nan(j.at("ppp"));
  fit.logl = num_or_nan(j.at("logl"));
  fit.logl_sat = num_or_nan(j.at("logl_sat"));
  fit.dic = num_or_nan(j.at("dic"));
  fit.p_dic = num_or_nan(j.at("p_dic"));
  fit.waic = num_or_nan(j.at("waic"));
  fit.p_waic = num_or_nan(j.at("p_waic"));
  fit.looic = num_or_nan(j.at("looic"));
  fit.p_loo = num_or_nan(j.at("p_loo"));
  fit.margloglik = num_or_nan(j.at("margloglik"));
  fit.bic = num_or_nan(j.at("bic"));
  fit.npar = j.at("npar").get<int>();
  fit.n_total = j.at("n_total").get<int>();
  fit.pareto_k = vector_from_json(j.at("pareto_k"));
  fit.warnings = j.at("warnings").get<std::vector<std::string>>();
  return fit;
}

}  // namespace

void save_run(const std::string& dir, const FitResult& result) {
  fs::create_directories(dir);
  const fs::path root(dir);
  const std::vector<std::string> names = result.table.free_names();

  write_file(root / "model.lav", result.model_text.empty() ? "" : result.model_text);
  write_file(root / "partable.csv", table_to_csv(result.table));

  std::string group_col = result.group_column;
  if (group_col.empty() && !result.data.groups.levels.empty()) group_col = "group";
  write_csv((root / "data.csv").string(), result.data, group_col);

  for (std::size_t c = 0; c < result.mcmc.draws.size(); ++c)
    write_file(root / ("draws_chain" + std::to_string(c + 1) + ".csv"),
               draws_csv(names, result.mcmc.draws[c]));

  json cfg;
  cfg["format"] = 1;
  cfg["group_column"] = group_col;
  cfg["cp"] = result.cp;
  json overrides = json::object();
  for (const std::string& k : result.dp.overridden) overrides[k] = result.dp.at(k).src;
  cfg["dp"] = overrides;
  cfg["group_equal"] = result.table.options.group_equal;
  cfg["groups"] = result.data.groups.levels;
  cfg["npar"] = result.table.npar;
  cfg["free_names"] = names;

  json sampler;
  sampler["chains"] = result.config.chains;
  sampler["adapt"] = result.config.adapt;
  sampler["burnin"] = result.config.burnin;
  sampler["sample"] = result.config.sample;
  sampler["seed"] = result.config.seed;
  sampler["inits"] = result.config.inits;
  sampler["auto_converge"] = result.config.auto_converge;
  sampler["auto_window"] = result.config.auto_window;
  sampler["auto_max_burnin"] = result.config.auto_max_burnin;
  sampler["psrf_threshold"] = result.config.psrf_threshold;
  sampler["threads"] = result.config.threads;
  cfg["sampler"] = sampler;

  json conv;
  conv["converged"] = result.mcmc.convergence.converged;
  conv["adapt_used"] = result.mcmc.convergence.adapt_used;
  conv["burnin_used"] = result.mcmc.convergence.burnin_used;
  conv["sample_used"] = result.mcmc.convergence.sample_used;
  conv["rhat"] = vector_json(result.mcmc.convergence.rhat);
  conv["warnings"] = result.mcmc.convergence.warnings;
  cfg["convergence"] = conv;

  json inits = json::array();
  for (const Eigen::VectorXd& v : result.mcmc.inits) inits.push_back(vector_json(v));
  cfg["inits"] = inits;
  json scales = json::array();
  for (const Eigen::VectorXd& v : result.mcmc.proposal_log_scale) scales.push_back(vector_json(v));
  cfg["proposal_log_scale"] = scales;
  cfg["warnings"] = result.warnings;

  write_file(root / "config.json", cfg.dump(2) + "\n");

  json sum = json::array();
  for (const SummaryRow& r : result.summary) {
    json row;
    row["name"] = r.name;
    row["mean"] = r.mean;
    row["sd"] = r.sd;
    row["pi_lower"] = r.hpd_lower;
    row["pi_upper"] = r.hpd_upper;
    row["rhat"] = r.rhat;
    row["neff"] = r.neff;
    row["prior"] = r.prior;
    sum.push_back(row);
  }
  write_file(root / "summary.json", sum.dump(2) + "\n");
  write_file(root / "summary.txt", render_summary(result));

  if (result.has_fit) {
    write_file(root / "fitmeasures.json", fit_json(result.fit).dump(2) + "\n");
    write_file(root / "fitmeasures.txt", render_fitmeasures(result.fit));
  }
}

FitResult load_run(const std::string& dir) {
  const fs::path root(dir);
  const json cfg = json::parse(read_file(root / "config.json"));

  FitResult out;
  out.group_column = cfg.at("group_column").get<std::string>();
  out.cp = cfg.at("cp").get<std::string>();
  std::map<std::string, std::string> overrides;
  for (const auto& [k, v] : cfg.at("dp").items()) overrides[k] = v.get<std::string>();
  out.dp = default_priors(overrides);

  GroupInfo groups;
  groups.levels = cfg.at("groups").get<std::vector<std::string>>();
  out.table = table_from_csv(read_file(root / "partable.csv"), groups);
  out.table.options.group_equal = cfg.at("group_equal").get<std::vector<std::string>>();
  out.model_text = read_file(root / "model.lav");

  const Dataset raw = load_csv((root / "data.csv").string(), out.group_column);
  out.data = bind_data(raw, out.table.manifests);

  const auto& sampler = cfg.at("sampler");
  out.config.chains = sampler.at("chains").get<int>();
  out.config.adapt = sampler.at("adapt").get<int>();
  out.config.burnin = sampler.at("burnin").get<int>();
  out.config.sample = sampler.at("sample").get<int>();
  out.config.seed = sampler.at("seed").get<std::uint64_t>();
  out.config.cp = out.cp;
  out.config.inits = sampler.at("inits").get<std::string>();
  out.config.auto_converge = sampler.at("auto_converge").get<bool>();
  out.config.auto_window = sampler.at("auto_window").get<int>();
  out.config.auto_max_burnin = sampler.at("auto_max_burnin").get<int>();
  out.config.psrf_threshold = sampler.at("psrf_threshold").get<double>();
  out.config.threads = sampler.at("threads").get<int>();

  const auto& conv = cfg.at("convergence");
  out.mcmc.convergence.converged = conv.at("converged").get<bool>();
  out.mcmc.convergence.adapt_used = conv.at("adapt_used").get<int>();
  out.mcmc.convergence.burnin_used = conv.at("burnin_used").get<int>();
  out.mcmc.convergence.sample_used = conv.at("sample_used").get<int>();
  out.mcmc.convergence.rhat = vector_from_json(conv.at("rhat"));
  out.mcmc.convergence.warnings = conv.at("warnings").get<std::vector<std::string>>();

  for (const auto& v : cfg.at("inits")) out.mcmc.inits.push_back(vector_from_json(v));
  for (const auto& v : cfg.at("proposal_log_scale"))
    out.mcmc.proposal_log_scale.push_back(vector_from_json(v));
  out.warnings = cfg.at("warnings").get<std::vector<std::string>>();

  for (int c = 1; c <= out.config.chains; ++c) {
    const fs::path p = root / ("draws_chain" + std::to_string(c) + ".csv");
    if (!fs::exists(p)) throw Error("missing " + p.string());
    out.mcmc.draws.push_back(parse_draws_csv(read_file(p), out.table.npar));
  }

  out.summary = summarize_result(out);

  const fs::path fitp = root / "fitmeasures.json";
  if (fs::exists(fitp)) {
    out.fit = fit_from_json(json::parse(read_file(fitp)));
    out.has_fit = true;
  }
  return out;
}

}  // namespace bsem
