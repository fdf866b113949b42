#include "bsem/diagnostics.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

#include "bsem/error.hpp"

namespace bsem {

double psrf(const std::vector<Eigen::VectorXd>& chains) {
  const int m = static_cast<int>(chains.size());
  if (m < 2) throw Error("psrf needs at least two chains");
  const Eigen::Index n = chains[0].size();
  if (n < 2) throw Error("psrf needs chains of length >= 2");
  for (const Eigen::VectorXd& c : chains)
    if (c.size() != n) throw Error("psrf chains must share a length");

  double w = 0.0;
  Eigen::VectorXd means(m);
  for (int j = 0; j < m; ++j) {
    const double mu = chains[static_cast<std::size_t>(j)].mean();
    means[j] = mu;
    w += (chains[static_cast<std::size_t>(j)].array() - mu).square().sum() / (n - 1);
  }
  w /= m;
  const double grand = means.mean();
  const double b_over_n = (means.array() - grand).square().sum() / (m - 1);
  const double var_plus = (static_cast<double>(n - 1) / n) * w + b_over_n;
  if (w <= 0.0)
    return b_over_n > 0.0 ? std::numeric_limits<double>::infinity() : 1.0;
  return std::sqrt(var_plus / w);
}

Eigen::VectorXd autocorr(const Eigen::VectorXd& x, int max_lag) {
  const Eigen::Index n = x.size();
  if (n < 2) throw Error("autocorr needs at least two points");
  max_lag = std::min<int>(max_lag, static_cast<int>(n - 1));
  const double mu = x.mean();
  const Eigen::VectorXd d = x.array() - mu;
  const double g0 = d.squaredNorm() / n;
  Eigen::VectorXd rho(max_lag + 1);
  rho[0] = 1.0;
  if (g0 <= 0.0) {
    rho.setZero();
    rho[0] = 1.0;
    return rho;
  }
  for (int k = 1; k <= max_lag; ++k) {
    double gk = 0.0;
    for (Eigen::Index i = 0; i + k < n; ++i) gk += d[i] * d[i + k];
    rho[k] = gk / n / g0;
  }
  return rho;
}

double ess(const std::vector<Eigen::VectorXd>& chains) {
  if (chains.empty()) throw Error("ess needs at least one chain");
  const Eigen::Index n = chains[0].size();
  for (const Eigen::VectorXd& c : chains)
    if (c.size() != n) throw Error("ess chains must share a length");
  const double total = static_cast<double>(n) * chains.size();

  const int max_lag = static_cast<int>(n - 1);
  // average raw autocovariances across chains, each about its own mean
  Eigen::VectorXd gamma = Eigen::VectorXd::Zero(max_lag + 1);
  for (const Eigen::VectorXd& c : chains) {
    const Eigen::VectorXd d = c.array() - c.mean();
    for (int k = 0; k <= max_lag; ++k) {
      double gk = 0.0;
      for (Eigen::Index i = 0; i + k < n; ++i) gk += d[i] * d[i + k];
      gamma[k] += gk / n;
    }
  }
  gamma /= static_cast<double>(chains.size());
  if (gamma[0] <= 0.0) return total;

  double sum = 0.0;
  for (int k = 1; k <= max_lag; ++k) {
    const double rho = gamma[k] / gamma[0];
    if (rho <= 0.0) break;
    sum += rho;
  }
  return std::min(total, total / (1.0 + 2.0 * sum));
}

std::pair<double, double> hpd(const Eigen::VectorXd& draws, double prob) {
  const Eigen::Index s = draws.size();
  if (s < 1) throw Error("hpd needs draws");
  if (!(prob > 0.0 && prob <= 1.0)) throw Error("hpd prob must be in (0,1]");
  std::vector<double> x(draws.data(), draws.data() + s);
  std::sort(x.begin(), x.end());
  const Eigen::Index w = std::min<Eigen::Index>(
      s, static_cast<Eigen::Index>(std::ceil(prob * static_cast<double>(s))));
  if (w >= s) return {x.front(), x.back()};
  Eigen::Index best = 0;
  double best_width = x[static_cast<std::size_t>(w - 1)] - x[0];
  for (Eigen::Index j = 1; j + w <= s; ++j) {
    const double width = x[static_cast<std::size_t>(j + w - 1)] - x[static_cast<std::size_t>(j)];
    if (width < best_width) {
      best_width = width;
      best = j;
    }
  }
  return {x[static_cast<std::size_t>(best)], x[static_cast<std::size_t>(best + w - 1)]};
}

double kde_mode(const Eigen::VectorXd& draws) {
  const Eigen::Index s = draws.size();
  if (s < 2) return s == 1 ? draws[0] : 0.0;
  const double mu = draws.mean();
  const double sd = std::sqrt((draws.array() - mu).square().sum() / (s - 1));
  if (sd <= 0.0) return draws[0];
  const double h = 1.06 * sd * std::pow(static_cast<double>(s), -0.2);
  const double lo = draws.minCoeff() - 3.0 * h;
  const double hi = draws.maxCoeff() + 3.0 * h;
  const int grid = 512;
  double best_x = lo, best_f = -1.0;
  for (int gidx = 0; gidx < grid; ++gidx) {
    const double x = lo + (hi - lo) * gidx / (grid - 1);
    double f = 0.0;
    for (Eigen::Index i = 0; i < s; ++i) {
      const double z = (x - draws[i]) / h;
      f += std::exp(-0.5 * z * z);
    }
    if (f > best_f) {
      best_f = f;
      best_x = x;
    }
  }
  return best_x;
}

std::vector<SummaryRow> summarize(const std::vector<std::string>& names,
                                  const std::vector<Eigen::MatrixXd>& draws,
                                  const std::vector<std::string>& priors, double hpd_prob) {
  if (draws.empty()) throw Error("summarize needs draws");
  const Eigen::Index npar = draws[0].cols();
  if (static_cast<Eigen::Index>(names.size()) != npar)
    throw Error("summarize: name count does not match draw columns");

  std::vector<SummaryRow> out;
  for (Eigen::Index j = 0; j < npar; ++j) {
    Eigen::Index total = 0;
    for (const Eigen::MatrixXd& d : draws) total += d.rows();
    Eigen::VectorXd pooled(total);
    std::vector<Eigen::VectorXd> per_chain;
    Eigen::Index at = 0;
    for (const Eigen::MatrixXd& d : draws) {
      pooled.segment(at, d.rows()) = d.col(j);
      per_chain.push_back(d.col(j));
      at += d.rows();
    }
    SummaryRow row;
    row.name = names[static_cast<std::size_t>(j)];
    row.mean = pooled.mean();
    row.sd = total > 1 ? std::sqrt((pooled.array() - row.mean).square().sum() / (total - 1)) : 0.0;
    const auto [lo, hi] = hpd(pooled, hpd_prob);
    row.hpd_lower = lo;
    row.hpd_upper = hi;
    row.rhat = draws.size() >= 2 ? psrf(per_chain) : std::numeric_limits<double>::quiet_NaN();
    row.neff = ess(per_chain);
    if (j < static_cast<Eigen::Index>(priors.size())) row.prior = priors[static_cast<std::size_t>(j)];
    out.push_back(std::move(row));
  }
  return out;
}

}  // namespace bsem
