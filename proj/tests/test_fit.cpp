#include <doctest.h>

#include <cmath>

#include "bsem/dataset.hpp"
#include "bsem/error.hpp"
#include "bsem/fit_measures.hpp"
#include "bsem/likelihood.hpp"
#include "bsem/model_syntax.hpp"
#include "bsem/param_table.hpp"
#include "bsem/priors.hpp"
#include "bsem/rng.hpp"
#include "bsem/sampler.hpp"
#include "support.hpp"

using namespace bsem;

namespace {

BoundData inline_data(const std::string& csv, const std::vector<std::string>& vars) {
  testsup::TempFile f("fit", csv);
  return bind_data(load_csv(f.path), vars);
}

double log_norm_pdf(double x, double mu, double var) {
  return -0.5 * std::log(2.0 * M_PI * var) - 0.5 * (x - mu) * (x - mu) / var;
}

// mean-zero unit-variance conjugate setup: y_i ~ N(mu, 1), mu ~ N(0, 1);
// the evidence is N(0, I + J) evaluated at y
double conjugate_evidence(const std::vector<double>& y) {
  const double n = static_cast<double>(y.size());
  double ss = 0, s = 0;
  for (double v : y) {
    ss += v * v;
    s += v;
  }
  return -0.5 * n * std::log(2.0 * M_PI) - 0.5 * std::log(n + 1.0) -
         0.5 * (ss - s * s / (n + 1.0));
}

}  // namespace

TEST_CASE("waic hand example is exact") {
  // one observation, two draws with densities .2 and .4
  Eigen::MatrixXd log_f(1, 2);
  log_f << std::log(0.2), std::log(0.4);
  const WaicResult w = waic_from_loglik(log_f);
  CHECK(w.lppd == doctest::Approx(std::log(0.3)).epsilon(1e-12));
  CHECK(w.p_waic == doctest::Approx(0.5 * std::log(2.0) * std::log(2.0)).epsilon(1e-12));
  CHECK(w.waic ==
        doctest::Approx(-2.0 * std::log(0.3) + std::log(2.0) * std::log(2.0)).epsilon(1e-12));
}

TEST_CASE("identical draws carry no effective parameters") {
  Eigen::MatrixXd log_f(3, 5);
  for (int i = 0; i < 3; ++i)
    for (int s = 0; s < 5; ++s) log_f(i, s) = -1.3 - 0.2 * i;
  const WaicResult w = waic_from_loglik(log_f);
  CHECK(w.p_waic == 0.0);
  CHECK(w.waic == doctest::Approx(-2.0 * (-1.3 - 1.5 - 1.7)).epsilon(1e-12));

  const LooResult loo = psis_loo(log_f);
  CHECK(loo.p_loo == doctest::Approx(0.0).epsilon(1e-10));
  CHECK(loo.looic == doctest::Approx(w.waic).epsilon(1e-10));
  CHECK(loo.n_high_k == 0);
}

TEST_CASE("loo tracks waic on a well specified conjugate fit") {
  Rng rng(99);
  const int n = 30, S = 4000;
  std::vector<double> y(n);
  double sum_y = 0;
  for (int i = 0; i < n; ++i) {
    y[i] = rng.normal();
    sum_y += y[i];
  }
  const double post_mean = sum_y / (n + 1.0);
  const double post_sd = 1.0 / std::sqrt(n + 1.0);

  Eigen::MatrixXd log_f(n, S);
  for (int s = 0; s < S; ++s) {
    const double mu = post_mean + post_sd * rng.normal();
    for (int i = 0; i < n; ++i) log_f(i, s) = log_norm_pdf(y[i], mu, 1.0);
  }

  const WaicResult w = waic_from_loglik(log_f);
  const LooResult loo = psis_loo(log_f);
  CHECK(std::abs(loo.looic - w.waic) < 2.0);
  CHECK(w.p_waic > 0.0);
  CHECK(loo.p_loo > 0.0);
  CHECK(w.p_waic == doctest::Approx(1.0).epsilon(0.5));
  CHECK(loo.pareto_k.size() == n);
  CHECK(loo.pareto_k.maxCoeff() < 0.7);
  CHECK(loo.n_high_k == 0);
}

TEST_CASE("gpd fit recovers known tail shapes") {
  Rng rng(7);
  const int n = 20000;

  // xi = 0.2, sigma = 1 via inverse cdf
  Eigen::VectorXd x(n);
  for (int i = 0; i < n; ++i) {
    const double u = rng.uniform();
    x[i] = (std::pow(1.0 - u, -0.2) - 1.0) / 0.2;
  }
  std::sort(x.data(), x.data() + n);
  const GpdFit f1 = fit_gpd_pwm(x);
  CHECK(std::abs(-f1.k - 0.2) < 0.05);
  CHECK(f1.sigma == doctest::Approx(1.0).epsilon(0.05));

  // exponential tail has xi = 0
  Eigen::VectorXd e(n);
  for (int i = 0; i < n; ++i) e[i] = -2.0 * std::log(1.0 - rng.uniform());
  std::sort(e.data(), e.data() + n);
  const GpdFit f2 = fit_gpd_pwm(e);
  CHECK(std::abs(-f2.k) < 0.05);
  CHECK(f2.sigma == doctest::Approx(2.0).epsilon(0.05));
}

TEST_CASE("laplace evidence matches the conjugate closed form") {
  Rng rng(12);
  const int n = 12;
  std::vector<double> y(n);
  std::string csv = "y1\n";
  double sum_y = 0;
  for (int i = 0; i < n; ++i) {
    y[i] = 0.4 + rng.normal();
    sum_y += y[i];
    csv += std::to_string(y[i]) + "\n";
  }
  const BoundData data = inline_data(csv, {"y1"});

  // fixed unit variance, free mean with standard normal prior
  const ParameterTable t = build_table(parse_model("y1 ~ 1\ny1 ~~ 1*y1"), GroupInfo{});
  const ModelPlan plan = make_plan(t, default_priors({{"nu", "dnorm(0,1)"}}), "srs");

  Eigen::VectorXd t_star(1);
  t_star << sum_y / (n + 1.0);
  std::vector<std::string> warnings;
  const double lap = laplace_margloglik(plan, data, t_star, warnings);
  CHECK(warnings.empty());
  // h is exactly quadratic here, so only finite-difference noise remains
  CHECK(lap == doctest::Approx(conjugate_evidence(y)).epsilon(1e-3));

  // the draw-covariance variant converges to the same value
  const double post_sd = 1.0 / std::sqrt(n + 1.0);
  std::vector<Eigen::MatrixXd> draws(2, Eigen::MatrixXd(20000, 1));
  for (auto& d : draws)
    for (int s = 0; s < 20000; ++s) d(s, 0) = t_star[0] + post_sd * rng.normal();
  const double from_draws = margloglik_from_draws(plan, data, draws, warnings);
  CHECK(warnings.empty());
  CHECK(std::abs(from_draws - conjugate_evidence(y)) < 0.02);
}

TEST_CASE("laplace reports unusable curvature instead of lying") {
  // small-shape gamma on the variance itself: far right of the mode both the
  // prior kernel and the likelihood are convex, so the hessian check trips
  const BoundData data = inline_data("y1\n0.4\n-0.3\n0.2\n", {"y1"});
  const ParameterTable t = build_table(
      parse_model("y1 ~~ prior(\"dgamma(0.5,0.2)[var]\") * y1\ny1 ~ 0*1"), GroupInfo{});
  REQUIRE(t.npar == 1);
  const ModelPlan plan = make_plan(t, default_priors(), "srs");

  Eigen::VectorXd t_star(1);
  t_star << 50.0;
  std::vector<std::string> warnings;
  const double lap = laplace_margloglik(plan, data, t_star, warnings);
  CHECK(std::isnan(lap));
  CHECK(!warnings.empty());
}

TEST_CASE("degenerate draw sets yield nan with a warning") {
  Rng rng(5);
  std::string csv = "y1\n";
  for (int i = 0; i < 8; ++i) csv += std::to_string(rng.normal()) + "\n";
  const BoundData data = inline_data(csv, {"y1"});
  const ParameterTable t = build_table(parse_model("y1 ~ 1\ny1 ~~ 1*y1"), GroupInfo{});
  const ModelPlan plan = make_plan(t, default_priors(), "srs");

  // constant draws have zero dispersion
  std::vector<Eigen::MatrixXd> flat(1, Eigen::MatrixXd::Constant(100, 1, 0.3));
  std::vector<std::string> warnings;
  CHECK(std::isnan(margloglik_from_draws(plan, data, flat, warnings)));
  CHECK(!warnings.empty());

  // fewer draws than parameters cannot estimate a covariance
  std::vector<Eigen::MatrixXd> tiny(1, Eigen::MatrixXd::Constant(1, 1, 0.3));
  warnings.clear();
  CHECK(std::isnan(margloglik_from_draws(plan, data, tiny, warnings)));
  CHECK(!warnings.empty());
}

TEST_CASE("posterior mean pools chains by draw count") {
  std::vector<Eigen::MatrixXd> draws;
  Eigen::MatrixXd a(2, 2), b(4, 2);
  a << 1, 10, 3, 30;
  b << 5, 50, 5, 50, 5, 50, 5, 50;
  draws = {a, b};
  const Eigen::VectorXd m = posterior_mean(draws);
  CHECK(m[0] == doctest::Approx((1.0 + 3.0 + 4 * 5.0) / 6.0).epsilon(1e-15));
  CHECK(m[1] == doctest::Approx((10.0 + 30.0 + 4 * 50.0) / 6.0).epsilon(1e-15));
}

TEST_CASE("inverse wishart identity density reduces to inverse gamma in 1d") {
  // IW_1(sigma; I, df) equals IG(sigma; df/2, 1/2)
  for (double df : {3.0, 5.0}) {
    for (double s : {0.4, 1.0, 2.3}) {
      const double a = df / 2.0;
      const double b = 0.5;
      const double ig = a * std::log(b) - std::lgamma(a) - (a + 1.0) * std::log(s) - b / s;
      Eigen::MatrixXd sig(1, 1);
      sig << s;
      CHECK(log_inv_wishart_identity(sig, df) == doctest::Approx(ig).epsilon(1e-12));
    }
  }
}

TEST_CASE("full fit measures on a self generated model calibrate") {
  // simulate from a one-factor model, fit that same model, expect moderate ppp
  Rng gen(2718);
  std::string csv = "x1,x2,x3\n";
  const int n = 200;
  for (int i = 0; i < n; ++i) {
    const double f = gen.normal();
    csv += std::to_string(1.0 + f + 0.6 * gen.normal()) + "," +
           std::to_string(0.5 + 0.8 * f + 0.6 * gen.normal()) + "," +
           std::to_string(-0.3 + 1.2 * f + 0.6 * gen.normal()) + "\n";
  }
  const BoundData data = inline_data(csv, {"x1", "x2", "x3"});
  const ParameterTable t = build_table(parse_model("f =~ x1 + x2 + x3"), GroupInfo{});
  const ModelPlan plan = make_plan(t, default_priors(), "srs");

  SamplerConfig cfg;
  cfg.chains = 2;
  cfg.adapt = 500;
  cfg.burnin = 1000;
  cfg.sample = 2500;
  cfg.seed = 10;
  const McmcResult res = run_mcmc(plan, data, cfg);

  FitMeasureOptions fopt;
  fopt.ppp_reps = 400;
  fopt.seed = 10;
  const FitMeasures fm = compute_fit_measures(plan, data, res.draws, fopt);

  CHECK(fm.npar == 9);
  CHECK(fm.n_total == n);
  CHECK(fm.ppp > 0.25);
  CHECK(fm.ppp < 0.75);
  CHECK(fm.p_dic > 0.0);
  CHECK(fm.p_waic > 0.0);
  CHECK(fm.p_loo > 0.0);

  // information criteria agree with their shared ingredients
  CHECK(fm.dic == doctest::Approx(-2.0 * fm.logl + 2.0 * fm.p_dic).epsilon(1e-9));
  CHECK(fm.bic == doctest::Approx(-2.0 * fm.logl + fm.npar * std::log(double(n))).epsilon(1e-9));
  CHECK(std::abs(fm.looic - fm.waic) < 5.0);
  CHECK(fm.logl <= fm.logl_sat);
  CHECK(std::isfinite(fm.margloglik));
  CHECK(fm.margloglik < fm.logl);

  // the posterior-mean likelihood matches a direct evaluation
  const Eigen::VectorXd pm = posterior_mean(res.draws);
  CHECK(fm.logl == doctest::Approx(total_loglik(t, data, pm)).epsilon(1e-9));

  // same draws, same seed: identical measures
  const FitMeasures fm2 = compute_fit_measures(plan, data, res.draws, fopt);
  CHECK(fm2.ppp == fm.ppp);
  CHECK(fm2.waic == fm.waic);
  CHECK(fm2.margloglik == fm.margloglik);
}

TEST_CASE("factor mode with covariance pairs declines the evidence") {
  Rng gen(31);
  std::string csv = "x1,x2,x3\n";
  for (int i = 0; i < 60; ++i) {
    const double f = gen.normal();
    const double shared = 0.4 * gen.normal();
    csv += std::to_string(f + shared + 0.5 * gen.normal()) + "," +
           std::to_string(0.8 * f + shared + 0.5 * gen.normal()) + "," +
           std::to_string(0.9 * f + 0.5 * gen.normal()) + "\n";
  }
  const BoundData data = inline_data(csv, {"x1", "x2", "x3"});
  const ParameterTable t =
      build_table(parse_model("f =~ x1 + x2 + x3\nx1 ~~ x2"), GroupInfo{});
  const ModelPlan plan = make_plan(t, default_priors(), "fa");

  SamplerConfig cfg;
  cfg.chains = 2;
  cfg.adapt = 300;
  cfg.burnin = 600;
  cfg.sample = 1000;
  cfg.seed = 8;
  cfg.cp = "fa";
  const McmcResult res = run_mcmc(plan, data, cfg);

  FitMeasureOptions fopt;
  fopt.ppp_reps = 50;
  const FitMeasures fm = compute_fit_measures(plan, data, res.draws, fopt);
  CHECK(std::isnan(fm.margloglik));
  bool found = false;
  for (const std::string& w : fm.warnings)
    if (w.find("margloglik") != std::string::npos) found = true;
  CHECK(found);
  CHECK(std::isfinite(fm.waic));
}
