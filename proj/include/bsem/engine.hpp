#pragma once

#include <map>
#include <optional>
#include <string>
#include <vector>

#include "bsem/dataset.hpp"
#include "bsem/diagnostics.hpp"
#include "bsem/fit_measures.hpp"
#include "bsem/param_table.hpp"
#include "bsem/priors.hpp"
#include "bsem/sampler.hpp"

namespace bsem {

struct FitOptions {
  std::string model_text;                  // lavaan-style syntax
  std::optional<ParameterTable> table_in;  // pre-built table wins over model_text
  std::string data_path;
  std::string group_column;
  std::vector<std::string> group_equal;
  std::map<std::string, std::string> dp;  // default prior overrides
  std::string cp = "srs";
  SamplerConfig mcmc;
  int ppp_reps = 1000;
  bool compute_fit = true;
};

struct FitResult {
  ParameterTable table;
  BoundData data;
  McmcResult mcmc;
  std::vector<SummaryRow> summary;
  FitMeasures fit;
  bool has_fit = false;
  std::vector<std::string> warnings;
  std::string model_text;  // canonical form
  std::string group_column;
  std::string cp;
  DefaultPriors dp;
  SamplerConfig config;  // as run
};

FitResult fit_model(const FitOptions& opts);

// summary rows recomputed from an existing result (e.g. after reloading draws)
std::vector<SummaryRow> summarize_result(const FitResult& result, double hpd_prob = 0.95);

}  // namespace bsem
