#include "bsem/engine.hpp"

#include <algorithm>

#include "bsem/error.hpp"
#include "bsem/model_syntax.hpp"

namespace bsem {

FitResult fit_model(const FitOptions& opts) {
  if (opts.data_path.empty()) throw Error("no data file given");
  const Dataset raw_data = load_csv(opts.data_path, opts.group_column);

  FitResult out;
  out.group_column = opts.group_column;
  out.cp = opts.cp;
  out.dp = default_priors(opts.dp);

  const GroupInfo groups = group_levels(raw_data);
  if (opts.table_in) {
    out.table = *opts.table_in;
    if (out.table.ngroups() != groups.count())
      throw Error("parameter table was built for a different number of groups");
    out.model_text.clear();
  } else {
    if (opts.model_text.empty()) throw Error("no model syntax given");
    const RawModel model = parse_model(opts.model_text);
    BuildOptions bopt;
    bopt.group_equal = opts.group_equal;
    out.table = build_table(model, groups, bopt);
    out.model_text = print_model(model);
  }

  out.data = bind_data(raw_data, out.table.manifests);
  if (!(out.data.groups == groups) && groups.count() > 1)
    throw Error("a group lost all of its complete rows");
  for (const std::string& w : out.data.warnings) out.warnings.push_back(w);

  const ModelPlan plan = make_plan(out.table, out.dp, opts.cp);

  SamplerConfig cfg = opts.mcmc;
  cfg.cp = opts.cp;
  out.config = cfg;
  out.mcmc = run_mcmc(plan, out.data, cfg);
  out.config.adapt = out.mcmc.convergence.adapt_used;
  out.config.burnin = out.mcmc.convergence.burnin_used;
  out.config.sample = out.mcmc.convergence.sample_used;
  for (const std::string& w : out.mcmc.convergence.warnings) out.warnings.push_back(w);

  out.summary = summarize(out.table.free_names(), out.mcmc.draws, plan.prior_display);

  if (opts.compute_fit) {
    FitMeasureOptions fopt;
    fopt.ppp_reps = opts.ppp_reps;
    fopt.seed = cfg.seed;
    out.fit = compute_fit_measures(plan, out.data, out.mcmc.draws, fopt);
    out.has_fit = true;
    for (const std::string& w : out.fit.warnings) out.warnings.push_back(w);
  }
  return out;
}

std::vector<SummaryRow> summarize_result(const FitResult& result, double hpd_prob) {
  const ModelPlan plan = make_plan(result.table, result.dp, result.cp);
  return summarize(result.table.free_names(), result.mcmc.draws, plan.prior_display, hpd_prob);
}

}  // namespace bsem
