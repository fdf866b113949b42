#pragma once

#include <array>
#include <cstdint>
#include <functional>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "bsem/dataset.hpp"
#include "bsem/expansion.hpp"
#include "bsem/param_table.hpp"
#include "bsem/priors.hpp"

namespace bsem {

enum class ParamKind {
  NuIntercept,
  AlphaIntercept,
  Loading,
  Regression,
  ManifestVar,
  LatentVar,
  Rho,
  BlockCell
};

enum class UpdateRule { ConjNormal, TruncNormal, ConjGammaPrec, Metropolis, Block, Derived };

enum class Transform { Identity, Log, Atanh, Logit };

struct Cell {
  int group = 1;  // 1-based
  int a = 0, b = 0;
  int side_pair = -1;  // Rho only: pair slot within the side expansion
};

struct ParamPlan {
  ParamKind kind = ParamKind::NuIntercept;
  ParamClass cls = ParamClass::Location;
  PriorSpec prior;
  UpdateRule rule = UpdateRule::ConjNormal;
  Transform transform = Transform::Identity;
  double lo = 0, hi = 0;  // inferential-scale support
  bool theta_side = true;  // Rho / pair-member flags
  bool pair_member = false;
  std::vector<Cell> cells;
  int block_id = -1;
};

struct BlockPlan {
  int group = 1;
  std::vector<int> members;  // latent indices
  double df0 = 0;            // prior degrees of freedom
  std::vector<std::array<int, 3>> cells;  // local i, local j, free index
};

// slot: a value that is either a free parameter or a fixed constant
struct Slot {
  int fi = 0;  // 1-based free index, 0 = fixed
  double fixed = 0.0;
};

struct ModelPlan {
  const ParameterTable* table = nullptr;
  DefaultPriors dp;
  std::string cp = "srs";
  std::vector<ParamPlan> params;           // per free index
  std::vector<std::string> prior_display;  // effective prior text per free index
  std::vector<SideExpansion> theta_side;   // per group
  std::vector<SideExpansion> psi_side;
  std::vector<BlockPlan> blocks;
  std::vector<std::vector<Slot>> theta_var;  // [group][manifest]
  std::vector<std::vector<Slot>> psi_var;    // [group][latent]
  std::vector<std::vector<Slot>> theta_rho;  // [group][pair]; fixed => covariance constant
  std::vector<std::vector<Slot>> psi_rho;

  bool has_phantom_pairs() const;
};

ModelPlan make_plan(const ParameterTable& table, const DefaultPriors& dp, const std::string& cp);

struct SamplerConfig {
  int chains = 3;
  int adapt = 1000;
  int burnin = 4000;
  int sample = 10000;
  std::uint64_t seed = 1;
  std::string cp = "srs";     // srs | fa
  std::string inits = "prior";  // prior | simple | user
  std::vector<Eigen::VectorXd> user_inits;  // inferential coords, one per chain
  bool auto_converge = false;
  int auto_window = 4000;
  int auto_max_burnin = 100000;
  double psrf_threshold = 1.2;
  int threads = 0;  // 0 = one per chain
  std::function<void(const std::string&)> on_phase;
};

struct ConvergenceReport {
  Eigen::VectorXd rhat;  // per free parameter, from the sampling phase
  std::vector<std::string> warnings;
  bool converged = true;
  int adapt_used = 0;
  int burnin_used = 0;
  int sample_used = 0;
};

struct McmcResult {
  std::vector<Eigen::MatrixXd> draws;  // per chain: sample x npar, inferential scale
  std::vector<Eigen::VectorXd> inits;  // per chain, inferential scale
  std::vector<Eigen::VectorXd> proposal_log_scale;  // per chain, frozen after adapt
  ConvergenceReport convergence;
};

McmcResult run_mcmc(const ModelPlan& plan, const BoundData& data, const SamplerConfig& config);

// conditional builders, shared by the sampler and its tests
struct NormalCond {
  double mean = 0, var = 0;
};
// prior N(mean0, 1/prec0) with gaussian observations: wsum2 = sum pred^2/noise,
// wsum_pr = sum pred*resid/noise where resid excludes this parameter's term
NormalCond normal_conditional(double mean0, double prec0, double wsum2, double wsum_pr);

struct GammaCond {
  double shape = 0, rate = 0;
};
// precision with Gamma(shape0, rate0) prior and n residuals with sum of squares ss
GammaCond gamma_precision_conditional(double shape0, double rate0, double ss, int n);

}  // namespace bsem
