#include "bsem/likelihood.hpp"

#include <cmath>
#include <limits>

#include "bsem/error.hpp"

namespace bsem {

namespace {

constexpr double kLog2Pi = 1.8378770664093453;
constexpr double kNegInf = -std::numeric_limits<double>::infinity();

}  // namespace

ImpliedMoments implied_moments(const GroupMatrices& g) {
  const int m = static_cast<int>(g.beta.rows());
  ImpliedMoments out;
  if (m == 0) {
    out.mu = g.nu;
    out.sigma = g.theta;
    return out;
  }
  const Eigen::MatrixXd imb = Eigen::MatrixXd::Identity(m, m) - g.beta;
  Eigen::FullPivLU<Eigen::MatrixXd> lu(imb);
  if (!lu.isInvertible()) throw Error("(I - B) is singular; check the regression structure");
  const Eigen::MatrixXd a = lu.inverse();
  out.mu = g.nu + g.lambda * (a * g.alpha);
  const Eigen::MatrixXd apat = a * g.psi * a.transpose();
  out.sigma = g.lambda * apat * g.lambda.transpose() + g.theta;
  return out;
}

Eigen::VectorXd casewise_loglik(const std::vector<ImpliedMoments>& moments, const BoundData& data) {
  const int p = data.p();
  const int ngroup = static_cast<int>(moments.size());

  std::vector<Eigen::LLT<Eigen::MatrixXd>> llts;
  std::vector<double> logdets(static_cast<std::size_t>(ngroup), 0.0);
  std::vector<bool> ok(static_cast<std::size_t>(ngroup), true);
  for (int g = 0; g < ngroup; ++g) {
    llts.emplace_back(moments[static_cast<std::size_t>(g)].sigma);
    if (llts.back().info() != Eigen::Success) {
      ok[static_cast<std::size_t>(g)] = false;
      continue;
    }
    const Eigen::MatrixXd l = llts.back().matrixL();
    double ld = 0.0;
    for (int j = 0; j < p; ++j) ld += std::log(l(j, j));
    logdets[static_cast<std::size_t>(g)] = 2.0 * ld;
  }

  Eigen::VectorXd out(data.n());
  for (int i = 0; i < data.n(); ++i) {
    const int g = data.group_idx[static_cast<std::size_t>(i)];
    if (!ok[static_cast<std::size_t>(g)]) {
      out[i] = kNegInf;
      continue;
    }
    const Eigen::VectorXd d = data.y.row(i).transpose() - moments[static_cast<std::size_t>(g)].mu;
    const Eigen::VectorXd z = llts[static_cast<std::size_t>(g)].matrixL().solve(d);
    out[i] = -0.5 * (p * kLog2Pi + logdets[static_cast<std::size_t>(g)] + z.squaredNorm());
  }
  return out;
}

Eigen::VectorXd casewise_loglik(const ParameterTable& table, const BoundData& data,
                                const Eigen::VectorXd& free_values) {
  const std::vector<GroupMatrices> mats = realize(table, free_values);
  std::vector<ImpliedMoments> mom;
  mom.reserve(mats.size());
  for (const GroupMatrices& g : mats) mom.push_back(implied_moments(g));
  return casewise_loglik(mom, data);
}

double total_loglik(const ParameterTable& table, const BoundData& data,
                    const Eigen::VectorXd& free_values) {
  return casewise_loglik(table, data, free_values).sum();
}

double saturated_loglik(const BoundData& data) {
  const int p = data.p();
  double total = 0.0;
  for (int g = 0; g < data.groups.count(); ++g) {
    const int n = data.group_n[static_cast<std::size_t>(g)];
    const Eigen::MatrixXd s = data.group_cov(g, true);
    Eigen::LLT<Eigen::MatrixXd> llt(s);
    if (llt.info() != Eigen::Success)
      throw Error("group sample covariance is singular; saturated likelihood undefined");
    const Eigen::MatrixXd l = llt.matrixL();
    double ld = 0.0;
    for (int j = 0; j < p; ++j) ld += std::log(l(j, j));
    total += -0.5 * n * (p * kLog2Pi + 2.0 * ld + p);
  }
  return total;
}

double lrt_from_moments(const std::vector<ImpliedMoments>& moments,
                        const std::vector<int>& group_n,
                        const std::vector<Eigen::VectorXd>& means,
                        const std::vector<Eigen::MatrixXd>& covs) {
  double model = 0.0;
  double saturated = 0.0;
  for (std::size_t g = 0; g < moments.size(); ++g) {
    const int n = group_n[g];
    const int p = static_cast<int>(means[g].size());

    Eigen::LLT<Eigen::MatrixXd> sat(covs[g]);
    if (sat.info() != Eigen::Success) throw Error("singular sample covariance in lrt");
    const Eigen::MatrixXd ls = sat.matrixL();
    double ld_s = 0.0;
    for (int j = 0; j < p; ++j) ld_s += std::log(ls(j, j));
    saturated += -0.5 * n * (p * kLog2Pi + 2.0 * ld_s + p);

    Eigen::LLT<Eigen::MatrixXd> mod(moments[g].sigma);
    if (mod.info() != Eigen::Success) return std::numeric_limits<double>::infinity();
    const Eigen::MatrixXd lm = mod.matrixL();
    double ld_m = 0.0;
    for (int j = 0; j < p; ++j) ld_m += std::log(lm(j, j));
    const Eigen::MatrixXd sinv_s = mod.solve(covs[g]);
    const Eigen::VectorXd d = means[g] - moments[g].mu;
    const Eigen::VectorXd z = lm.triangularView<Eigen::Lower>().solve(d);
    model += -0.5 * n * (p * kLog2Pi + 2.0 * ld_m + sinv_s.trace() + z.squaredNorm());
  }
  return 2.0 * (saturated - model);
}

double lrt(const ParameterTable& table, const BoundData& data, const Eigen::VectorXd& free_values) {
  const std::vector<GroupMatrices> mats = realize(table, free_values);
  std::vector<ImpliedMoments> mom;
  std::vector<Eigen::VectorXd> means;
  std::vector<Eigen::MatrixXd> covs;
  for (int g = 0; g < data.groups.count(); ++g) {
    mom.push_back(implied_moments(mats[static_cast<std::size_t>(g)]));
    means.push_back(data.group_mean(g));
    covs.push_back(data.group_cov(g, true));
  }
  return lrt_from_moments(mom, data.group_n, means, covs);
}

}  // namespace bsem
