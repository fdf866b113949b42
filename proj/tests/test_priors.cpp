#include <doctest.h>

#include <cmath>
#include <vector>

#include "bsem/error.hpp"
#include "bsem/priors.hpp"
#include "bsem/rng.hpp"
#include "support.hpp"

using namespace bsem;

namespace {

// trapezoid integral of the inferential-scale density over a log grid,
// x = exp(t); covers heavy-tailed variance densities
double integrate_positive(const PriorSpec& spec, ParamClass cls, double t_lo, double t_hi,
                          int n) {
  double acc = 0;
  const double h = (t_hi - t_lo) / n;
  auto f = [&](double t) {
    const double x = std::exp(t);
    const double ld = prior_log_density(spec, cls, x);
    return std::isfinite(ld) ? std::exp(ld) * x : 0.0;
  };
  for (int i = 0; i <= n; ++i) {
    const double w = (i == 0 || i == n) ? 0.5 : 1.0;
    acc += w * f(t_lo + i * h);
  }
  return acc * h;
}

double integrate_linear(const PriorSpec& spec, ParamClass cls, double lo, double hi, int n) {
  double acc = 0;
  const double h = (hi - lo) / n;
  auto f = [&](double x) {
    const double ld = prior_log_density(spec, cls, x);
    return std::isfinite(ld) ? std::exp(ld) : 0.0;
  };
  for (int i = 0; i <= n; ++i) {
    const double w = (i == 0 || i == n) ? 0.5 : 1.0;
    acc += w * f(lo + i * h);
  }
  return acc * h;
}

}  // namespace

TEST_CASE("prior strings parse to families, tags, truncation") {
  PriorSpec p = parse_prior("dnorm(0,1e-2)");
  CHECK(p.family == PriorFamily::Normal);
  CHECK(p.p1 == 0.0);
  CHECK(p.p2 == 0.01);
  CHECK(p.tag == ScaleTag::None);
  CHECK(!p.trunc);

  p = parse_prior("dunif(0,20)[sd]");
  CHECK(p.family == PriorFamily::Uniform);
  CHECK(p.p1 == 0.0);
  CHECK(p.p2 == 20.0);
  CHECK(p.tag == ScaleTag::Sd);

  p = parse_prior("dlnorm(1,.1)[sd]");
  CHECK(p.family == PriorFamily::LogNormal);
  CHECK(p.p1 == 1.0);
  CHECK(p.p2 == 0.1);
  CHECK(p.tag == ScaleTag::Sd);

  p = parse_prior("dnorm(9,.25)T(0,18)");
  CHECK(p.family == PriorFamily::Normal);
  REQUIRE(p.trunc);
  CHECK(p.trunc->first == 0.0);
  CHECK(p.trunc->second == 18.0);

  p = parse_prior("dgamma(1,.5)");
  CHECK(p.family == PriorFamily::Gamma);
  CHECK(p.p2 == 0.5);

  p = parse_prior("dwish(iden,3)");
  CHECK(p.family == PriorFamily::Wishart);
  CHECK(p.p2 == 3.0);

  CHECK(parse_prior(" dbeta( 1 , 1 ) ") == parse_prior("dbeta(1,1)"));
}

TEST_CASE("unknown families and malformed strings are rejected") {
  CHECK_THROWS_AS(parse_prior("dfoo(1)"), Error);
  CHECK_THROWS_AS(parse_prior("dnorm(0)"), Error);
  CHECK_THROWS_AS(parse_prior("dnorm(0,1)[foo]"), Error);
  CHECK_THROWS_AS(parse_prior("dnorm(0,1)T(5)"), Error);
  CHECK_THROWS_AS(parse_prior(""), Error);
  CHECK_THROWS_AS(parse_prior("dunif(3,1)"), Error);
}

TEST_CASE("stock default table holds the documented entries") {
  const DefaultPriors dp = default_priors();
  CHECK(dp.at("nu") == parse_prior("dnorm(0,1e-3)"));
  CHECK(dp.at("alpha") == parse_prior("dnorm(0,1e-2)"));
  CHECK(dp.at("lambda") == parse_prior("dnorm(0,1e-2)"));
  CHECK(dp.at("beta") == parse_prior("dnorm(0,1e-2)"));
  CHECK(dp.at("itheta") == parse_prior("dgamma(1,.5)"));
  CHECK(dp.at("ipsi") == parse_prior("dgamma(1,.5)"));
  CHECK(dp.at("rho") == parse_prior("dbeta(1,1)"));
  CHECK(dp.at("ibpsi") == parse_prior("dwish(iden,3)"));
  CHECK(dp.overridden.empty());
}

TEST_CASE("overrides replace entries and are tracked") {
  const DefaultPriors dp = default_priors({{"nu", "dnorm(5,1e-2)"}});
  CHECK(dp.at("nu") == parse_prior("dnorm(5,1e-2)"));
  CHECK(dp.at("alpha") == parse_prior("dnorm(0,1e-2)"));
  CHECK(dp.overridden.count("nu") == 1);
  CHECK(dp.overridden.count("alpha") == 0);
  CHECK_THROWS_AS(default_priors({{"tau", "dnorm(0,1)"}}), Error);
  CHECK_THROWS_AS(default_priors({{"nu", "dfoo(1)"}}), Error);
}

TEST_CASE("log density worked values") {
  // standard normal at its mean
  const PriorSpec n01 = parse_prior("dnorm(0,1)");
  CHECK(prior_log_density(n01, ParamClass::Location, 0.0) ==
        doctest::Approx(-0.91893853320467274).epsilon(1e-12));

  // sd capped at 20: variance above 400 falls outside support
  const PriorSpec u20 = parse_prior("dunif(0,20)[sd]");
  CHECK(prior_log_density(u20, ParamClass::Variance, 400.01) ==
        -std::numeric_limits<double>::infinity());
  CHECK(std::isfinite(prior_log_density(u20, ParamClass::Variance, 399.9)));

  // flat beta on (-1,1) has constant density 1/2
  const PriorSpec b11 = parse_prior("dbeta(1,1)");
  CHECK(prior_log_density(b11, ParamClass::Correlation, 0.3) ==
        doctest::Approx(std::log(0.5)).epsilon(1e-12));
  CHECK(prior_log_density(b11, ParamClass::Correlation, -0.9) ==
        doctest::Approx(std::log(0.5)).epsilon(1e-12));
  CHECK(prior_log_density(b11, ParamClass::Correlation, 1.5) ==
        -std::numeric_limits<double>::infinity());
}

TEST_CASE("densities integrate to one on the inferential scale") {
  // precision-gamma prior as a density over the variance
  CHECK(integrate_positive(parse_prior("dgamma(1,.5)"), ParamClass::Variance, -30.0, 30.0,
                           400000) == doctest::Approx(1.0).epsilon(1e-6));
  CHECK(integrate_positive(parse_prior("dgamma(2,1)[var]"), ParamClass::Variance, -30.0, 30.0,
                           400000) == doctest::Approx(1.0).epsilon(1e-6));
  CHECK(integrate_positive(parse_prior("dlnorm(1,.1)[sd]"), ParamClass::Variance, -30.0, 30.0,
                           400000) == doctest::Approx(1.0).epsilon(1e-6));
  CHECK(integrate_positive(parse_prior("dunif(0,20)[sd]"), ParamClass::Variance, -30.0,
                           std::log(400.0), 400000) == doctest::Approx(1.0).epsilon(1e-6));
  CHECK(integrate_linear(parse_prior("dnorm(9,.25)T(0,18)"), ParamClass::Location, 0.0, 18.0,
                         200000) == doctest::Approx(1.0).epsilon(1e-6));
  CHECK(integrate_linear(parse_prior("dbeta(2,3)"), ParamClass::Correlation, -1.0, 1.0,
                         200000) == doctest::Approx(1.0).epsilon(1e-6));
}

TEST_CASE("declared density differs from the full density by the jacobian") {
  const PriorSpec prec = parse_prior("dgamma(2,1)");
  const PriorSpec sd = parse_prior("dlnorm(0,1)[sd]");
  const PriorSpec rho = parse_prior("dbeta(3,3)");
  for (double v : {0.3, 1.0, 2.7, 9.1}) {
    CHECK(prior_log_density(prec, ParamClass::Variance, v) ==
          doctest::Approx(prior_log_density_declared(prec, ParamClass::Variance, v) -
                          2.0 * std::log(v))
              .epsilon(1e-12));
    CHECK(prior_log_density(sd, ParamClass::Variance, v) ==
          doctest::Approx(prior_log_density_declared(sd, ParamClass::Variance, v) -
                          std::log(2.0 * std::sqrt(v)))
              .epsilon(1e-12));
  }
  for (double r : {-0.6, 0.0, 0.4}) {
    CHECK(prior_log_density(rho, ParamClass::Correlation, r) ==
          doctest::Approx(prior_log_density_declared(rho, ParamClass::Correlation, r) -
                          std::log(2.0))
              .epsilon(1e-12));
  }
  // location parameters have no transform
  const PriorSpec loc = parse_prior("dnorm(1,2)");
  CHECK(prior_log_density(loc, ParamClass::Location, 0.7) ==
        prior_log_density_declared(loc, ParamClass::Location, 0.7));
}

TEST_CASE("rescaled beta with equal shapes is symmetric") {
  const PriorSpec b = parse_prior("dbeta(2,2)");
  for (double r : {0.1, 0.35, 0.62, 0.9}) {
    CHECK(prior_log_density(b, ParamClass::Correlation, r) ==
          doctest::Approx(prior_log_density(b, ParamClass::Correlation, -r)).epsilon(1e-12));
  }
}

TEST_CASE("sampling moments match the declared distributions") {
  Rng rng(7);

  // precision gamma(1,.5): implied variance has no mean, but the precision does
  std::vector<double> prec;
  const PriorSpec g = parse_prior("dgamma(1,.5)");
  for (int i = 0; i < 100000; ++i) prec.push_back(1.0 / prior_sample(g, ParamClass::Variance, rng));
  const double mcse_g = 3.0 * std::sqrt(testsup::var_of(prec) / 100000.0);
  CHECK(std::abs(testsup::mean_of(prec) - 2.0) < mcse_g);

  // truncated normal intercept prior centers on 9
  std::vector<double> tn;
  const PriorSpec t = parse_prior("dnorm(9,.25)T(0,18)");
  for (int i = 0; i < 10000; ++i) {
    const double x = prior_sample(t, ParamClass::Location, rng);
    CHECK(x > 0.0);
    CHECK(x < 18.0);
    tn.push_back(x);
  }
  const double mcse_t = 3.0 * std::sqrt(testsup::var_of(tn) / 10000.0);
  CHECK(std::abs(testsup::mean_of(tn) - 9.0) < mcse_t);

  // sd-uniform samples live on (0, 400) as variances
  const PriorSpec u = parse_prior("dunif(0,20)[sd]");
  std::vector<double> uv;
  for (int i = 0; i < 20000; ++i) {
    const double v = prior_sample(u, ParamClass::Variance, rng);
    CHECK(v > 0.0);
    CHECK(v < 400.0);
    uv.push_back(std::sqrt(v));
  }
  const double mcse_u = 3.0 * std::sqrt(testsup::var_of(uv) / 20000.0);
  CHECK(std::abs(testsup::mean_of(uv) - 10.0) < mcse_u);

  // flat correlation prior: mean 0, range (-1,1)
  const PriorSpec b = parse_prior("dbeta(1,1)");
  std::vector<double> rv;
  for (int i = 0; i < 20000; ++i) {
    const double r = prior_sample(b, ParamClass::Correlation, rng);
    CHECK(r > -1.0);
    CHECK(r < 1.0);
    rv.push_back(r);
  }
  const double mcse_b = 3.0 * std::sqrt(testsup::var_of(rv) / 20000.0);
  CHECK(std::abs(testsup::mean_of(rv)) < mcse_b);
}

TEST_CASE("support intervals follow class and tag") {
  const auto loc = prior_support(parse_prior("dnorm(0,1)"), ParamClass::Location);
  CHECK(loc.first == -std::numeric_limits<double>::infinity());
  CHECK(loc.second == std::numeric_limits<double>::infinity());

  const auto var = prior_support(parse_prior("dgamma(1,.5)"), ParamClass::Variance);
  CHECK(var.first == 0.0);

  const auto sd20 = prior_support(parse_prior("dunif(0,20)[sd]"), ParamClass::Variance);
  CHECK(sd20.second == doctest::Approx(400.0));

  const auto tr = prior_support(parse_prior("dnorm(9,.25)T(0,18)"), ParamClass::Location);
  CHECK(tr.first == 0.0);
  CHECK(tr.second == 18.0);

  const auto rho = prior_support(parse_prior("dbeta(1,1)"), ParamClass::Correlation);
  CHECK(rho.first == -1.0);
  CHECK(rho.second == 1.0);
}
