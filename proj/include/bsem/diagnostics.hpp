#pragma once

#include <string>
#include <vector>

#include <Eigen/Dense>

namespace bsem {

// classic (non-split) Gelman-Rubin factor; chains must share a length >= 2
double psrf(const std::vector<Eigen::VectorXd>& chains);

// normalized autocovariance, denominator n, lags 0..max_lag
Eigen::VectorXd autocorr(const Eigen::VectorXd& x, int max_lag);

// S / (1 + 2 sum rho_k), rho averaged over chains, truncated at the first
// non-positive lag, capped at S
double ess(const std::vector<Eigen::VectorXd>& chains);

// shortest interval containing ceil(prob * S) sorted draws; ties take the
// lowest start
std::pair<double, double> hpd(const Eigen::VectorXd& draws, double prob);

// gaussian-kernel density mode on a 512-point grid, Silverman bandwidth
double kde_mode(const Eigen::VectorXd& draws);

struct SummaryRow {
  std::string name;
  double mean = 0, sd = 0, hpd_lower = 0, hpd_upper = 0, rhat = 0, neff = 0;
  std::string prior;
};

// per-parameter posterior summary; draws are per-chain S x npar matrices
std::vector<SummaryRow> summarize(const std::vector<std::string>& names,
                                  const std::vector<Eigen::MatrixXd>& draws,
                                  const std::vector<std::string>& priors, double hpd_prob = 0.95);

}  // namespace bsem
