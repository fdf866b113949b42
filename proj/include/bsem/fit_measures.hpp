#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "bsem/dataset.hpp"
#include "bsem/sampler.hpp"

namespace bsem {

struct WaicResult {
  double lppd = 0;
  double p_waic = 0;
  double waic = 0;
};

// log_f: n x S matrix of casewise log densities over pooled draws
WaicResult waic_from_loglik(const Eigen::MatrixXd& log_f);

struct GpdFit {
  double k = 0;      // Hosking sign convention; xi = -k
  double sigma = 0;
};

// probability-weighted moments on exceedances sorted ascending
GpdFit fit_gpd_pwm(const Eigen::VectorXd& exceedances);

struct LooResult {
  double elpd = 0;
  double p_loo = 0;
  double looic = 0;
  Eigen::VectorXd pareto_k;  // xi per observation
  int n_high_k = 0;          // xi > 0.7
};

LooResult psis_loo(const Eigen::MatrixXd& log_f);

struct FitMeasures {
  double ppp = 0;
  double logl = 0;      // marginal log likelihood at the posterior mean
  double logl_sat = 0;  // unstructured-moments maximum
  double dic = 0, p_dic = 0;
  double waic = 0, p_waic = 0;
  double looic = 0, p_loo = 0;
  double margloglik = 0;  // Laplace approximation of the log marginal likelihood
  double bic = 0;
  int npar = 0;
  int n_total = 0;
  Eigen::VectorXd pareto_k;
  std::vector<std::string> warnings;
};

struct FitMeasureOptions {
  int ppp_reps = 1000;     // cap on posterior predictive replications
  std::uint64_t seed = 1;  // ppp stream is derived from this
};

FitMeasures compute_fit_measures(const ModelPlan& plan, const BoundData& data,
                                 const std::vector<Eigen::MatrixXd>& draws,
                                 const FitMeasureOptions& opt);

// posterior mean over pooled chains
Eigen::VectorXd posterior_mean(const std::vector<Eigen::MatrixXd>& draws);

// log inverse-Wishart(identity, df) density over the distinct cells of sigma
double log_inv_wishart_identity(const Eigen::MatrixXd& sigma, double df);

// h(u) = log joint of sampled coordinates: priors plus marginal log likelihood
double laplace_objective(const ModelPlan& plan, const BoundData& data, const Eigen::VectorXd& u);

// Laplace evidence approximation around t_star (prior-variate scale, see
// laplace_coords) with curvature from a central-difference hessian of h;
// NaN with a warning pushed when the curvature is not usable
double laplace_margloglik(const ModelPlan& plan, const BoundData& data,
                          const Eigen::VectorXd& t_star, std::vector<std::string>& warnings);

// Laplace evidence with the dispersion taken from the mcmc output itself:
// (Q/2) log 2pi + 0.5 log|cov(draws)| + log prior + log likelihood at the
// posterior mean, priors evaluated on their declared variates
double margloglik_from_draws(const ModelPlan& plan, const BoundData& data,
                             const std::vector<Eigen::MatrixXd>& draws,
                             std::vector<std::string>& warnings);

// inferential draws -> sampled coordinates (covariances to correlations)
Eigen::VectorXd sampled_coords(const ModelPlan& plan, const Eigen::VectorXd& inferential);

// inferential values on each prior's declared variate: precision for untagged
// variances, sd under [sd], precision cells for wishart blocks; curvature is
// taken here because the variance scale loses concavity at skewed posterior
// means (inverse-gamma kernels with small shape are convex at their mean)
Eigen::VectorXd laplace_coords(const ModelPlan& plan, const Eigen::VectorXd& inferential);

}  // namespace bsem
