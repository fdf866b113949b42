#pragma once

#include <utility>
#include <vector>

#include <Eigen/Dense>

#include "bsem/param_table.hpp"
#include "bsem/priors.hpp"

namespace bsem {

// one off-diagonal cell routed through a phantom variable; r > c (0-based
// positions within the side), row_id points at the ~~ table row
struct PhantomPair {
  int r = 0, c = 0;
  int row_id = 0;
};

// covariance structure of one matrix side (theta or psi) in one group
struct SideExpansion {
  int dim = 0;
  std::vector<PhantomPair> pairs;
  std::vector<std::vector<int>> blocks;  // jointly-sampled components (psi side only)
};

// residual covariances always go through phantoms
SideExpansion analyze_theta(const ParameterTable& table, int group);

// exogenous complete components with stock priors become inverse-Wishart
// blocks; everything else goes through phantoms
SideExpansion analyze_psi(const ParameterTable& table, int group);

inline int sign_or_minus(double x) { return x > 0.0 ? 1 : -1; }  // sign(0) = -1

// phantom loadings and residual variances from inferential (variance,
// correlation) values; valid=false when a residual variance is not positive
struct SrsWork {
  Eigen::MatrixXd lam;        // dim x npairs, two nonzeros per column
  Eigen::VectorXd resid_var;  // length dim; non-members keep their variance
  bool valid = true;
};

SrsWork srs_forward(const SideExpansion& side, const Eigen::VectorXd& variances,
                    const Eigen::VectorXd& rho);

// lam diag(psi_d) lam' + diag(resid_var); srs uses psi_d = 1
Eigen::MatrixXd phantom_reconstruct(const Eigen::MatrixXd& lam, const Eigen::VectorXd& psi_d,
                                    const Eigen::VectorXd& resid_var);

// direct inferential covariance: cov_rc = rho sqrt(v_r v_c)
Eigen::MatrixXd inferential_cov(const SideExpansion& side, const Eigen::VectorXd& variances,
                                const Eigen::VectorXd& rho);

// univariate priors matched to inverse-Wishart(diag(s), df) marginals over a
// p-dimensional side: IG((df-p+1)/2, s_ii/2) on each variance (encoded as a
// gamma on the precision) and a symmetric rescaled beta on each correlation;
// requires df > p - 1
struct SrsPairPriors {
  PriorSpec variance;
  PriorSpec rho;
};

SrsPairPriors srs_matched_priors(double df, double s_ii, int p);

}  // namespace bsem
