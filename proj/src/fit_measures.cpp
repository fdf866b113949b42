#include "bsem/fit_measures.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>
#include <sstream>

#include "bsem/error.hpp"
#include "bsem/likelihood.hpp"
#include "bsem/rng.hpp"

namespace bsem {

namespace {

constexpr double kNaN = std::numeric_limits<double>::quiet_NaN();
constexpr double kNegInf = -std::numeric_limits<double>::infinity();

double log_sum_exp(const Eigen::VectorXd& v) {
  const double m = v.maxCoeff();
  if (!std::isfinite(m)) return m;
  double acc = 0;
  for (int i = 0; i < v.size(); ++i) acc += std::exp(v[i] - m);
  return m + std::log(acc);
}

double slot_value(const Slot& slot, const Eigen::VectorXd& values) {
  return slot.fi > 0 ? values[slot.fi - 1] : slot.fixed;
}

// covariance slots hold rho in sampled coordinates; both directions walk the
// groups in ascending order so shared slots resolve identically to the
// sampler's recording fold
void fold_pairs(const ModelPlan& plan, Eigen::VectorXd& values, bool to_sampled) {
  const int G = plan.table->ngroups();
  for (int g = 0; g < G; ++g) {
    for (int side = 0; side < 2; ++side) {
      const bool theta = side == 0;
      const auto& rho_slots = theta ? plan.theta_rho[g] : plan.psi_rho[g];
      const auto& var_slots = theta ? plan.theta_var[g] : plan.psi_var[g];
      const auto& pairs = (theta ? plan.theta_side[g] : plan.psi_side[g]).pairs;
      for (std::size_t q = 0; q < pairs.size(); ++q) {
        const Slot& slot = rho_slots[q];
        if (slot.fi <= 0) continue;
        const double vr = slot_value(var_slots[pairs[q].r], values);
        const double vc = slot_value(var_slots[pairs[q].c], values);
        const double s = std::sqrt(std::max(vr * vc, 1e-300));
        double& x = values[slot.fi - 1];
        x = to_sampled ? x / s : x * s;
      }
    }
  }
}

Eigen::VectorXd inferential_from_sampled(const ModelPlan& plan, const Eigen::VectorXd& u) {
  Eigen::VectorXd out = u;
  fold_pairs(plan, out, false);
  return out;
}

}  // namespace

Eigen::VectorXd sampled_coords(const ModelPlan& plan, const Eigen::VectorXd& inferential) {
  Eigen::VectorXd out = inferential;
  fold_pairs(plan, out, true);
  return out;
}

Eigen::VectorXd posterior_mean(const std::vector<Eigen::MatrixXd>& draws) {
  if (draws.empty()) throw Error("posterior_mean: no draws");
  Eigen::VectorXd acc = Eigen::VectorXd::Zero(draws.front().cols());
  long total = 0;
  for (const Eigen::MatrixXd& d : draws) {
    acc += d.colwise().sum().transpose();
    total += d.rows();
  }
  if (total == 0) throw Error("posterior_mean: empty chains");
  return acc / static_cast<double>(total);
}

WaicResult waic_from_loglik(const Eigen::MatrixXd& log_f) {
  const int n = static_cast<int>(log_f.rows());
  const int S = static_cast<int>(log_f.cols());
  if (S < 2) throw Error("waic: need at least two draws");
  WaicResult out;
  const double logS = std::log(static_cast<double>(S));
  for (int i = 0; i < n; ++i) {
    const Eigen::VectorXd row = log_f.row(i).transpose();
    out.lppd += log_sum_exp(row) - logS;
    const double mean = row.mean();
    out.p_waic += (row.array() - mean).square().sum() / (S - 1);
  }
  out.waic = -2.0 * (out.lppd - out.p_waic);
  return out;
}

GpdFit fit_gpd_pwm(const Eigen::VectorXd& y) {
  const int M = static_cast<int>(y.size());
  GpdFit out{kNaN, kNaN};
  if (M < 2) return out;
  double a0 = 0, a1 = 0;
  for (int j = 0; j < M; ++j) {
    const double p = (j + 0.5) / M;
    a0 += y[j];
    a1 += (1.0 - p) * y[j];
  }
  a0 /= M;
  a1 /= M;
  const double den = 2.0 * a1 - a0;
  if (a0 <= 0 || std::abs(den) < 1e-300) return out;
  out.k = (a0 - 4.0 * a1) / den;
  out.sigma = a0 * (1.0 + out.k);
  if (!(out.sigma > 0)) out.k = out.sigma = kNaN;
  return out;
}

namespace {

// GPD quantile, Hosking sign; k -> 0 limit is exponential
double gpd_quantile(double p, double k, double sigma) {
  if (std::abs(k) < 1e-12) return -sigma * std::log1p(-p);
  return sigma / k * (1.0 - std::pow(1.0 - p, k));
}

}  // namespace

LooResult psis_loo(const Eigen::MatrixXd& log_f) {
  const int n = static_cast<int>(log_f.rows());
  const int S = static_cast<int>(log_f.cols());
  if (S < 2) throw Error("loo: need at least two draws");
  LooResult out;
  out.pareto_k = Eigen::VectorXd::Constant(n, kNaN);
  const double logS = std::log(static_cast<double>(S));
  const int M = std::min(static_cast<int>(std::ceil(0.2 * S)),
                         static_cast<int>(std::ceil(3.0 * std::sqrt(static_cast<double>(S)))));
  double lppd = 0;
  for (int i = 0; i < n; ++i) {
    const Eigen::VectorXd lf = log_f.row(i).transpose();
    lppd += log_sum_exp(lf) - logS;

    // raw importance weights 1/f, shifted so the largest is one
    Eigen::VectorXd lw = -lf;
    const double shift = lw.maxCoeff();
    Eigen::VectorXd w(S);
    for (int s = 0; s < S; ++s) w[s] = std::exp(lw[s] - shift);

    if (M >= 5 && M < S) {
      std::vector<int> idx(S);
      std::iota(idx.begin(), idx.end(), 0);
      std::sort(idx.begin(), idx.end(), [&](int a, int b) { return w[a] < w[b]; });
      const double cut = w[idx[S - M - 1]];
      Eigen::VectorXd exc(M);
      for (int j = 0; j < M; ++j) exc[j] = w[idx[S - M + j]] - cut;
      const double wmax = w[idx[S - 1]];
      const GpdFit fit = fit_gpd_pwm(exc);
      if (std::isfinite(fit.k) && fit.sigma > 0) {
        for (int j = 0; j < M; ++j) {
          const double q = cut + gpd_quantile((j + 0.5) / M, fit.k, fit.sigma);
          w[idx[S - M + j]] = std::min(q, wmax);
        }
        out.pareto_k[i] = -fit.k;
        if (-fit.k > 0.7) ++out.n_high_k;
      }
    }

    Eigen::VectorXd lw_s(S), lwf(S);
    for (int s = 0; s < S; ++s) {
      lw_s[s] = w[s] > 0 ? std::log(w[s]) : kNegInf;
      lwf[s] = lw_s[s] + lf[s];
    }
    out.elpd += log_sum_exp(lwf) - log_sum_exp(lw_s);
  }
  out.p_loo = lppd - out.elpd;
  out.looic = -2.0 * out.elpd;
  return out;
}

double log_inv_wishart_identity(const Eigen::MatrixXd& sigma, double df) {
  const int d = static_cast<int>(sigma.rows());
  Eigen::LLT<Eigen::MatrixXd> llt(sigma);
  if (llt.info() != Eigen::Success) return kNegInf;
  double logdet = 0;
  for (int i = 0; i < d; ++i) logdet += 2.0 * std::log(llt.matrixL()(i, i));
  const double trinv = llt.solve(Eigen::MatrixXd::Identity(d, d)).trace();
  double lgam = d * (d - 1) / 4.0 * std::log(M_PI);
  for (int j = 1; j <= d; ++j) lgam += std::lgamma(0.5 * (df + 1 - j));
  return -0.5 * (df + d + 1) * logdet - 0.5 * trinv - 0.5 * df * d * std::log(2.0) - lgam;
}

double laplace_objective(const ModelPlan& plan, const BoundData& data, const Eigen::VectorXd& u) {
  double h = 0;
  std::vector<bool> block_done(plan.blocks.size(), false);
  for (std::size_t q = 0; q < plan.params.size(); ++q) {
    const ParamPlan& pp = plan.params[q];
    if (pp.rule == UpdateRule::Derived) continue;
    if (pp.rule == UpdateRule::Block) {
      const std::size_t b = static_cast<std::size_t>(pp.block_id);
      if (block_done[b]) continue;
      block_done[b] = true;
      const BlockPlan& blk = plan.blocks[b];
      const int d = static_cast<int>(blk.members.size());
      Eigen::MatrixXd sig = Eigen::MatrixXd::Zero(d, d);
      for (const auto& cell : blk.cells) {
        sig(cell[0], cell[1]) = sig(cell[1], cell[0]) = u[cell[2] - 1];
      }
      h += log_inv_wishart_identity(sig, blk.df0);
      continue;
    }
    h += prior_log_density(pp.prior, pp.cls, u[static_cast<int>(q)]);
  }
  if (!std::isfinite(h)) return kNegInf;
  return h + total_loglik(*plan.table, data, inferential_from_sampled(plan, u));
}

Eigen::VectorXd laplace_coords(const ModelPlan& plan, const Eigen::VectorXd& inferential) {
  Eigen::VectorXd t = sampled_coords(plan, inferential);
  std::vector<bool> block_done(plan.blocks.size(), false);
  for (std::size_t q = 0; q < plan.params.size(); ++q) {
    const ParamPlan& pp = plan.params[q];
    const int qi = static_cast<int>(q);
    switch (pp.kind) {
      case ParamKind::ManifestVar:
      case ParamKind::LatentVar:
        // the prior's variate scale: precision under the BUGS convention,
        // sd/var under the matching tag
        if (pp.prior.tag == ScaleTag::Sd)
          t[qi] = std::sqrt(t[qi]);
        else if (pp.prior.tag == ScaleTag::None)
          t[qi] = 1.0 / t[qi];
        break;
      case ParamKind::BlockCell: {
        const std::size_t b = static_cast<std::size_t>(pp.block_id);
        if (block_done[b]) break;
        block_done[b] = true;
        const BlockPlan& blk = plan.blocks[b];
        const int d = static_cast<int>(blk.members.size());
        Eigen::MatrixXd sig = Eigen::MatrixXd::Zero(d, d);
        for (const auto& cell : blk.cells)
          sig(cell[0], cell[1]) = sig(cell[1], cell[0]) = t[cell[2] - 1];
        const Eigen::MatrixXd prec = sig.inverse();
        for (const auto& cell : blk.cells) t[cell[2] - 1] = prec(cell[0], cell[1]);
        break;
      }
      default:
        break;
    }
  }
  return t;
}

// h on the prior-variate scale: u(t) plus the log jacobian of the inverse map
static double laplace_objective_walk(const ModelPlan& plan, const BoundData& data,
                                     const Eigen::VectorXd& t) {
  Eigen::VectorXd u = t;
  double jac = 0;
  std::vector<bool> block_done(plan.blocks.size(), false);
  for (std::size_t q = 0; q < plan.params.size(); ++q) {
    const ParamPlan& pp = plan.params[q];
    const int qi = static_cast<int>(q);
    switch (pp.kind) {
      case ParamKind::ManifestVar:
      case ParamKind::LatentVar:
        if (pp.prior.tag == ScaleTag::Sd) {
          if (t[qi] <= 0) return kNegInf;
          u[qi] = t[qi] * t[qi];
          jac += std::log(2.0 * t[qi]);
        } else if (pp.prior.tag == ScaleTag::None) {
          if (t[qi] <= 0) return kNegInf;
          u[qi] = 1.0 / t[qi];
          jac += -2.0 * std::log(t[qi]);
        }
        break;
      case ParamKind::BlockCell: {
        const std::size_t b = static_cast<std::size_t>(pp.block_id);
        if (block_done[b]) break;
        block_done[b] = true;
        const BlockPlan& blk = plan.blocks[b];
        const int d = static_cast<int>(blk.members.size());
        Eigen::MatrixXd prec = Eigen::MatrixXd::Zero(d, d);
        for (const auto& cell : blk.cells)
          prec(cell[0], cell[1]) = prec(cell[1], cell[0]) = t[cell[2] - 1];
        Eigen::LLT<Eigen::MatrixXd> llt(prec);
        if (llt.info() != Eigen::Success) return kNegInf;
        const Eigen::MatrixXd sig = llt.solve(Eigen::MatrixXd::Identity(d, d));
        for (const auto& cell : blk.cells) u[cell[2] - 1] = sig(cell[0], cell[1]);
        double logdet_prec = 0;
        for (int i = 0; i < d; ++i) logdet_prec += 2.0 * std::log(llt.matrixL()(i, i));
        jac -= (d + 1) * logdet_prec;
        break;
      }
      default:
        break;
    }
  }
  const double h = laplace_objective(plan, data, u);
  return std::isfinite(h) ? h + jac : kNegInf;
}

double laplace_margloglik(const ModelPlan& plan, const BoundData& data,
                          const Eigen::VectorXd& t_star, std::vector<std::string>& warnings) {
  const int Q = static_cast<int>(t_star.size());
  const double h0 = laplace_objective_walk(plan, data, t_star);
  if (!std::isfinite(h0)) {
    warnings.push_back("margloglik: posterior mean lies outside the prior support");
    return kNaN;
  }
  Eigen::VectorXd step(Q);
  for (int i = 0; i < Q; ++i) step[i] = 1e-4 * std::max(1.0, std::abs(t_star[i]));

  auto at = [&](const Eigen::VectorXd& t) { return laplace_objective_walk(plan, data, t); };
  Eigen::MatrixXd H(Q, Q);
  Eigen::VectorXd t = t_star;
  for (int i = 0; i < Q; ++i) {
    t[i] = t_star[i] + step[i];
    const double fp = at(t);
    t[i] = t_star[i] - step[i];
    const double fm = at(t);
    t[i] = t_star[i];
    H(i, i) = (fp - 2.0 * h0 + fm) / (step[i] * step[i]);
    for (int j = i + 1; j < Q; ++j) {
      t[i] = t_star[i] + step[i];
      t[j] = t_star[j] + step[j];
      const double fpp = at(t);
      t[j] = t_star[j] - step[j];
      const double fpm = at(t);
      t[i] = t_star[i] - step[i];
      const double fmm = at(t);
      t[j] = t_star[j] + step[j];
      const double fmp = at(t);
      t[i] = t_star[i];
      t[j] = t_star[j];
      H(i, j) = H(j, i) = (fpp - fpm - fmp + fmm) / (4.0 * step[i] * step[j]);
    }
  }
  if (!H.allFinite()) {
    warnings.push_back("margloglik: curvature evaluation failed near the posterior mean");
    return kNaN;
  }
  Eigen::MatrixXd negH = -0.5 * (H + H.transpose());
  Eigen::LLT<Eigen::MatrixXd> llt(negH);
  if (llt.info() != Eigen::Success) {
    warnings.push_back("margloglik: negative hessian is not positive definite");
    return kNaN;
  }
  double half_logdet = 0;
  for (int i = 0; i < Q; ++i) half_logdet += std::log(llt.matrixL()(i, i));
  return 0.5 * Q * std::log(2.0 * M_PI) - half_logdet + h0;
}

// Wishart(identity, df) density of a precision matrix
static double log_wishart_identity(const Eigen::MatrixXd& prec, double df) {
  const int d = static_cast<int>(prec.rows());
  Eigen::LLT<Eigen::MatrixXd> llt(prec);
  if (llt.info() != Eigen::Success) return kNegInf;
  double logdet = 0;
  for (int i = 0; i < d; ++i) logdet += 2.0 * std::log(llt.matrixL()(i, i));
  double lgam = d * (d - 1) / 4.0 * std::log(M_PI);
  for (int j = 1; j <= d; ++j) lgam += std::lgamma(0.5 * (df + 1 - j));
  return 0.5 * (df - d - 1) * logdet - 0.5 * prec.trace() - 0.5 * df * d * std::log(2.0) - lgam;
}

// log prior at the posterior mean with every density on its declared variate
// and no change-of-variables terms: gamma at the precision, beta at the
// rescaled correlation, wishart at the inverted covariance block
static double declared_log_prior(const ModelPlan& plan, const Eigen::VectorXd& u_star) {
  const Eigen::VectorXd s = sampled_coords(plan, u_star);
  double lp = 0;
  std::vector<bool> block_done(plan.blocks.size(), false);
  for (std::size_t q = 0; q < plan.params.size(); ++q) {
    const ParamPlan& pp = plan.params[q];
    if (pp.rule == UpdateRule::Derived) continue;
    if (pp.rule == UpdateRule::Block) {
      const std::size_t b = static_cast<std::size_t>(pp.block_id);
      if (block_done[b]) continue;
      block_done[b] = true;
      const BlockPlan& blk = plan.blocks[b];
      const int d = static_cast<int>(blk.members.size());
      Eigen::MatrixXd sig = Eigen::MatrixXd::Zero(d, d);
      for (const auto& cell : blk.cells)
        sig(cell[0], cell[1]) = sig(cell[1], cell[0]) = u_star[cell[2] - 1];
      Eigen::LLT<Eigen::MatrixXd> llt(sig);
      if (llt.info() != Eigen::Success) return kNegInf;
      lp += log_wishart_identity(llt.solve(Eigen::MatrixXd::Identity(d, d)), blk.df0);
      continue;
    }
    lp += prior_log_density_declared(pp.prior, pp.cls, s[static_cast<int>(q)]);
  }
  return lp;
}

double margloglik_from_draws(const ModelPlan& plan, const BoundData& data,
                             const std::vector<Eigen::MatrixXd>& draws,
                             std::vector<std::string>& warnings) {
  long S = 0;
  for (const auto& ch : draws) S += ch.rows();
  const int Q = draws.empty() ? 0 : static_cast<int>(draws.front().cols());
  if (S <= Q || Q == 0) {
    warnings.push_back("margloglik: too few draws for a dispersion estimate");
    return kNaN;
  }
  Eigen::VectorXd u_star = Eigen::VectorXd::Zero(Q);
  for (const auto& ch : draws) u_star += ch.colwise().sum().transpose();
  u_star /= static_cast<double>(S);
  Eigen::MatrixXd C = Eigen::MatrixXd::Zero(Q, Q);
  for (const auto& ch : draws) {
    const Eigen::MatrixXd cen = ch.rowwise() - u_star.transpose();
    C.noalias() += cen.transpose() * cen;
  }
  C /= static_cast<double>(S - 1);

  const double lp = declared_log_prior(plan, u_star);
  if (!std::isfinite(lp)) {
    warnings.push_back("margloglik: posterior mean lies outside the prior support");
    return kNaN;
  }
  Eigen::LLT<Eigen::MatrixXd> llt(C);
  if (llt.info() != Eigen::Success) {
    warnings.push_back("margloglik: posterior covariance of the draws is degenerate");
    return kNaN;
  }
  double half_logdet = 0;
  for (int i = 0; i < Q; ++i) half_logdet += std::log(llt.matrixL()(i, i));
  if (!std::isfinite(half_logdet)) {
    warnings.push_back("margloglik: posterior covariance of the draws is degenerate");
    return kNaN;
  }
  const double ll = total_loglik(*plan.table, data, u_star);
  return 0.5 * Q * std::log(2.0 * M_PI) + half_logdet + lp + ll;
}

FitMeasures compute_fit_measures(const ModelPlan& plan, const BoundData& data,
                                 const std::vector<Eigen::MatrixXd>& draws,
                                 const FitMeasureOptions& opt) {
  const ParameterTable& table = *plan.table;
  FitMeasures out;
  out.npar = table.npar;
  out.n_total = data.n();

  long S_total = 0;
  for (const Eigen::MatrixXd& d : draws) S_total += d.rows();
  if (S_total < 2) throw Error("fit measures need at least two posterior draws");
  const int S = static_cast<int>(S_total);
  const int n = data.n();

  // casewise densities over the pooled draws drive everything below
  Eigen::MatrixXd log_f(n, S);
  Eigen::MatrixXd pooled(S, table.npar);
  {
    int s = 0;
    for (const Eigen::MatrixXd& d : draws) {
      for (int t = 0; t < d.rows(); ++t, ++s) {
        pooled.row(s) = d.row(t);
        log_f.col(s) = casewise_loglik(table, data, d.row(t).transpose());
      }
    }
  }
  const Eigen::VectorXd logl_draws = log_f.colwise().sum().transpose();

  const Eigen::VectorXd theta_hat = posterior_mean(draws);
  out.logl = total_loglik(table, data, theta_hat);
  out.logl_sat = saturated_loglik(data);
  out.p_dic = 2.0 * (out.logl - logl_draws.mean());
  out.dic = -2.0 * out.logl + 2.0 * out.p_dic;
  out.bic = -2.0 * out.logl + table.npar * std::log(static_cast<double>(out.n_total));

  const WaicResult w = waic_from_loglik(log_f);
  out.waic = w.waic;
  out.p_waic = w.p_waic;
  const LooResult loo = psis_loo(log_f);
  out.looic = loo.looic;
  out.p_loo = loo.p_loo;
  out.pareto_k = loo.pareto_k;
  if (loo.n_high_k > 0) {
    std::ostringstream os;
    os << "loo: " << loo.n_high_k << " observation(s) with pareto shape > 0.7";
    out.warnings.push_back(os.str());
  }

  // posterior predictive check over an evenly thinned subset
  const int R = std::min(S, std::max(0, opt.ppp_reps));
  if (R == 0) {
    out.ppp = kNaN;
  } else {
    Rng rng(opt.seed, 0x505050u);
    const int G = data.groups.count();
    const int p = data.p();
    int ge = 0;
    for (int j = 0; j < R; ++j) {
      const int sj = static_cast<int>(static_cast<long>(j) * S / R);
      const double obs = 2.0 * (out.logl_sat - logl_draws[sj]);
      const std::vector<GroupMatrices> mats = realize(table, pooled.row(sj).transpose());
      std::vector<ImpliedMoments> moments;
      moments.reserve(mats.size());
      for (const GroupMatrices& gm : mats) moments.push_back(implied_moments(gm));
      std::vector<Eigen::VectorXd> rep_mean(G);
      std::vector<Eigen::MatrixXd> rep_cov(G);
      bool ok = true;
      for (int g = 0; g < G && ok; ++g) {
        Eigen::LLT<Eigen::MatrixXd> llt(moments[g].sigma);
        if (llt.info() != Eigen::Success) {
          ok = false;
          break;
        }
        const Eigen::MatrixXd L = llt.matrixL();
        const int ng = data.group_n[g];
        Eigen::MatrixXd yrep(ng, p);
        Eigen::VectorXd z(p);
        for (int c = 0; c < ng; ++c) {
          for (int k = 0; k < p; ++k) z[k] = rng.normal();
          yrep.row(c) = (moments[g].mu + L * z).transpose();
        }
        rep_mean[g] = yrep.colwise().mean().transpose();
        Eigen::MatrixXd centered = yrep.rowwise() - rep_mean[g].transpose();
        rep_cov[g] = centered.transpose() * centered / ng;
      }
      if (!ok) continue;
      const double rep = lrt_from_moments(moments, data.group_n, rep_mean, rep_cov);
      if (rep >= obs) ++ge;
    }
    out.ppp = static_cast<double>(ge) / R;
  }

  if (plan.cp == "fa" && plan.has_phantom_pairs()) {
    out.margloglik = kNaN;
    out.warnings.push_back(
        "margloglik is not available under cp=\"fa\" with covariance parameters; use cp=\"srs\"");
  } else {
    out.margloglik = margloglik_from_draws(plan, data, draws, out.warnings);
  }
  return out;
}

}  // namespace bsem
