#pragma once

#include <vector>

#include <Eigen/Dense>

#include "bsem/dataset.hpp"
#include "bsem/param_table.hpp"

namespace bsem {

struct ImpliedMoments {
  Eigen::VectorXd mu;
  Eigen::MatrixXd sigma;
};

// mu = nu + lambda (I-B)^-1 alpha, sigma = lambda (I-B)^-1 psi (I-B)^-T lambda' + theta
ImpliedMoments implied_moments(const GroupMatrices& g);

// per-case log density under the implied normal; -inf rows when sigma is not PD
Eigen::VectorXd casewise_loglik(const std::vector<ImpliedMoments>& moments, const BoundData& data);
Eigen::VectorXd casewise_loglik(const ParameterTable& table, const BoundData& data,
                                const Eigen::VectorXd& free_values);

double total_loglik(const ParameterTable& table, const BoundData& data,
                    const Eigen::VectorXd& free_values);

// unstructured-moments maximum: sum over groups of -n_g/2 (p log 2pi + log|S_g| + p)
double saturated_loglik(const BoundData& data);

// 2 (saturated - model), from raw moments; shared by observed and replicated data
double lrt_from_moments(const std::vector<ImpliedMoments>& moments,
                        const std::vector<int>& group_n,
                        const std::vector<Eigen::VectorXd>& means,
                        const std::vector<Eigen::MatrixXd>& covs);

double lrt(const ParameterTable& table, const BoundData& data, const Eigen::VectorXd& free_values);

}  // namespace bsem
