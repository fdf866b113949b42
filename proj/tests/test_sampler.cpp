#include <doctest.h>

#include <cmath>

#include "bsem/dataset.hpp"
#include "bsem/diagnostics.hpp"
#include "bsem/error.hpp"
#include "bsem/model_syntax.hpp"
#include "bsem/param_table.hpp"
#include "bsem/priors.hpp"
#include "bsem/rng.hpp"
#include "bsem/sampler.hpp"
#include "support.hpp"

using namespace bsem;

namespace {

BoundData inline_data(const std::string& csv, const std::vector<std::string>& vars) {
  testsup::TempFile f("smp", csv);
  return bind_data(load_csv(f.path), vars);
}

std::string normal_csv(Rng& rng, const std::string& header, int n, double mu, double sd) {
  std::string out = header + "\n";
  for (int i = 0; i < n; ++i) out += std::to_string(mu + sd * rng.normal()) + "\n";
  return out;
}

double pooled_mean(const std::vector<Eigen::MatrixXd>& draws, int col) {
  return testsup::mean_of(testsup::pooled_column(draws, col));
}

int free_slot(const ParameterTable& t, const std::string& lhs, Op op, const std::string& rhs) {
  const ParameterRow* r = t.find(lhs, op, rhs, 1);
  REQUIRE(r);
  REQUIRE(r->free_index > 0);
  return r->free_index - 1;
}

// mcse from the pooled effective sample size
double mcse(const std::vector<Eigen::MatrixXd>& draws, int col) {
  std::vector<Eigen::VectorXd> chains;
  for (const auto& d : draws) chains.push_back(d.col(col));
  const std::vector<double> pooled = testsup::pooled_column(draws, col);
  return std::sqrt(testsup::var_of(pooled) / ess(chains));
}

}  // namespace

TEST_CASE("conjugate update closed forms") {
  // gamma precision: prior (1,.5), ten residuals with sum of squares 8
  const GammaCond g = gamma_precision_conditional(1.0, 0.5, 8.0, 10);
  CHECK(g.shape == doctest::Approx(6.0).epsilon(1e-15));
  CHECK(g.rate == doctest::Approx(4.5).epsilon(1e-15));

  // normal location: precision-weighted average of prior and data
  const NormalCond n = normal_conditional(1.0, 2.0, 3.0, 6.0);
  CHECK(n.prec == doctest::Approx(5.0).epsilon(1e-15));
  CHECK(n.mean == doctest::Approx((2.0 * 1.0 + 6.0) / 5.0).epsilon(1e-15));

  // zero observations collapse to the prior
  const NormalCond n0 = normal_conditional(-0.7, 4.0, 0.0, 0.0);
  CHECK(n0.mean == -0.7);
  CHECK(n0.prec == 4.0);
  const GammaCond g0 = gamma_precision_conditional(2.0, 1.5, 0.0, 0);
  CHECK(g0.shape == 2.0);
  CHECK(g0.rate == 1.5);
}

TEST_CASE("posterior of a known-variance mean matches the analytic answer") {
  // y ~ N(mu, 1) with mu ~ N(0,1): posterior N(sum y / (n+1), 1/(n+1))
  Rng gen(42);
  const int n = 20;
  double sum_y = 0.0;
  std::string csv = "y1\n";
  for (int i = 0; i < n; ++i) {
    const double y = 0.8 + gen.normal();
    sum_y += y;
    csv += std::to_string(y) + "\n";
  }
  const BoundData data = inline_data(csv, {"y1"});
  const ParameterTable t =
      build_table(parse_model("y1 ~ 1\ny1 ~~ 1*y1"), GroupInfo{});
  REQUIRE(t.npar == 1);

  const ModelPlan plan = make_plan(t, default_priors({{"nu", "dnorm(0,1)"}}), "srs");
  SamplerConfig cfg;
  cfg.chains = 3;
  cfg.adapt = 200;
  cfg.burnin = 500;
  cfg.sample = 4000;
  cfg.seed = 9;
  const McmcResult res = run_mcmc(plan, data, cfg);
  REQUIRE(res.draws.size() == 3);
  REQUIRE(res.draws[0].cols() == 1);
  REQUIRE(res.draws[0].rows() == 4000);

  const double post_mean = sum_y / (n + 1.0);
  const double post_var = 1.0 / (n + 1.0);
  CHECK(std::abs(pooled_mean(res.draws, 0) - post_mean) < 3.0 * mcse(res.draws, 0));
  const double sample_var = testsup::var_of(testsup::pooled_column(res.draws, 0));
  CHECK(sample_var == doctest::Approx(post_var).epsilon(0.15));
}

TEST_CASE("latent augmentation feeds the factor mean update correctly") {
  // single indicator with everything fixed except the latent intercept:
  // marginally y ~ N(alpha, 2), alpha ~ N(0,1) gives
  // posterior N((sum y/2)/(1 + n/2), 1/(1 + n/2))
  Rng gen(314);
  const int n = 40;
  double sum_y = 0.0;
  std::string csv = "y1\n";
  for (int i = 0; i < n; ++i) {
    const double y = 1.5 + std::sqrt(2.0) * gen.normal();
    sum_y += y;
    csv += std::to_string(y) + "\n";
  }
  const BoundData data = inline_data(csv, {"y1"});
  const ParameterTable t = build_table(
      parse_model("f =~ 1*y1\ny1 ~~ 1*y1\nf ~~ 1*f\ny1 ~ 0*1\nf ~ 1"), GroupInfo{});
  REQUIRE(t.npar == 1);

  const ModelPlan plan = make_plan(t, default_priors({{"alpha", "dnorm(0,1)"}}), "srs");
  SamplerConfig cfg;
  cfg.chains = 3;
  cfg.adapt = 200;
  cfg.burnin = 1000;
  cfg.sample = 5000;
  cfg.seed = 4;
  const McmcResult res = run_mcmc(plan, data, cfg);

  const double post_prec = 1.0 + n / 2.0;
  const double post_mean = (sum_y / 2.0) / post_prec;
  CHECK(std::abs(pooled_mean(res.draws, 0) - post_mean) < 3.0 * mcse(res.draws, 0));
  const double sample_var = testsup::var_of(testsup::pooled_column(res.draws, 0));
  CHECK(sample_var == doctest::Approx(1.0 / post_prec).epsilon(0.2));
}

TEST_CASE("parameters with no data information recover their priors") {
  // zero loading detaches the factor: psi and rho posteriors equal the priors
  Rng gen(5);
  const BoundData data = inline_data(normal_csv(gen, "y1", 30, 0.0, 1.0), {"y1"});
  const ParameterTable t = build_table(
      parse_model("f =~ 0*y1\nf ~~ f\ny1 ~~ y1\ny1 ~ 1"), GroupInfo{});

  // inverse-gamma(3,2) on the detached factor variance: mean 1, sd 1
  const ModelPlan plan = make_plan(t, default_priors({{"ipsi", "dgamma(3,2)"}}), "srs");
  SamplerConfig cfg;
  cfg.chains = 3;
  cfg.adapt = 300;
  cfg.burnin = 1000;
  cfg.sample = 8000;
  cfg.seed = 77;
  const McmcResult res = run_mcmc(plan, data, cfg);

  const int psi_col = free_slot(t, "f", Op::Covariance, "f");
  CHECK(std::abs(pooled_mean(res.draws, psi_col) - 1.0) < 3.0 * mcse(res.draws, psi_col));
}

TEST_CASE("a detached correlation recovers a symmetric prior") {
  Rng gen(6);
  std::string csv = "y1,y2\n";
  for (int i = 0; i < 25; ++i)
    csv += std::to_string(gen.normal()) + "," + std::to_string(gen.normal()) + "\n";
  const BoundData data = inline_data(csv, {"y1", "y2"});
  const ParameterTable t = build_table(parse_model(R"(
    f1 =~ 0*y1
    f2 =~ 0*y2
    f1 ~~ 1*f1
    f2 ~~ 1*f2
    f1 ~~ f2
    y1 ~~ y1
    y2 ~~ y2
    y1 ~ 1
    y2 ~ 1
  )"),
                                       GroupInfo{});

  const ModelPlan plan = make_plan(t, default_priors(), "srs");
  SamplerConfig cfg;
  cfg.chains = 3;
  cfg.adapt = 500;
  cfg.burnin = 1500;
  cfg.sample = 8000;
  cfg.seed = 21;
  const McmcResult res = run_mcmc(plan, data, cfg);

  const int rho_col = free_slot(t, "f1", Op::Covariance, "f2");
  // flat rescaled-beta prior: mean 0, sd 1/sqrt(3)
  CHECK(std::abs(pooled_mean(res.draws, rho_col)) < 3.0 * mcse(res.draws, rho_col));
  const double sd = std::sqrt(testsup::var_of(testsup::pooled_column(res.draws, rho_col)));
  CHECK(sd == doctest::Approx(1.0 / std::sqrt(3.0)).epsilon(0.1));
}

TEST_CASE("store shape follows the config") {
  Rng gen(8);
  const BoundData data = inline_data(normal_csv(gen, "x1", 25, 0.0, 1.0), {"x1"});
  const ParameterTable t = build_table(parse_model("x1 ~ 1\nx1 ~~ x1"), GroupInfo{});
  const ModelPlan plan = make_plan(t, default_priors(), "srs");

  SamplerConfig cfg;
  cfg.chains = 2;
  cfg.adapt = 100;
  cfg.burnin = 200;
  cfg.sample = 700;
  cfg.seed = 3;
  const McmcResult res = run_mcmc(plan, data, cfg);
  REQUIRE(res.draws.size() == 2);
  for (const auto& d : res.draws) {
    CHECK(d.rows() == 700);
    CHECK(d.cols() == t.npar);
  }
  REQUIRE(res.inits.size() == 2);
  CHECK(res.inits[0].size() == t.npar);
  // distinct chains start from distinct prior draws
  CHECK((res.inits[0] - res.inits[1]).cwiseAbs().maxCoeff() > 0.0);
}

TEST_CASE("same seed reproduces draws bitwise, serial or threaded") {
  Rng gen(15);
  std::string csv = "x1,x2,x3\n";
  for (int i = 0; i < 40; ++i) {
    const double f = gen.normal();
    csv += std::to_string(f + 0.5 * gen.normal()) + "," +
           std::to_string(0.8 * f + 0.5 * gen.normal()) + "," +
           std::to_string(0.6 * f + 0.5 * gen.normal()) + "\n";
  }
  const BoundData data = inline_data(csv, {"x1", "x2", "x3"});
  const ParameterTable t = build_table(parse_model("f =~ x1 + x2 + x3"), GroupInfo{});
  const ModelPlan plan = make_plan(t, default_priors(), "srs");

  SamplerConfig cfg;
  cfg.chains = 3;
  cfg.adapt = 150;
  cfg.burnin = 300;
  cfg.sample = 500;
  cfg.seed = 1234;
  cfg.threads = 1;
  const McmcResult serial = run_mcmc(plan, data, cfg);
  cfg.threads = 3;
  const McmcResult parallel = run_mcmc(plan, data, cfg);

  REQUIRE(serial.draws.size() == parallel.draws.size());
  for (std::size_t c = 0; c < serial.draws.size(); ++c)
    CHECK((serial.draws[c] - parallel.draws[c]).cwiseAbs().maxCoeff() == 0.0);

  // changing the seed changes the stream
  cfg.seed = 1235;
  const McmcResult other = run_mcmc(plan, data, cfg);
  CHECK((serial.draws[0] - other.draws[0]).cwiseAbs().maxCoeff() > 0.0);
}

TEST_CASE("proposal scales freeze after adaptation") {
  Rng gen(16);
  std::string csv = "x1,x2\n";
  for (int i = 0; i < 30; ++i) {
    const double f = gen.normal();
    csv += std::to_string(f + 0.6 * gen.normal()) + "," +
           std::to_string(f + 0.6 * gen.normal()) + "\n";
  }
  const BoundData data = inline_data(csv, {"x1", "x2"});
  // the residual correlation walks through a metropolis step
  const ParameterTable t =
      build_table(parse_model("f =~ x1 + x2\nx1 ~~ x2"), GroupInfo{});
  const ModelPlan plan = make_plan(t, default_priors(), "srs");

  SamplerConfig cfg;
  cfg.chains = 2;
  cfg.adapt = 400;
  cfg.burnin = 200;
  cfg.sample = 300;
  cfg.seed = 5;
  const McmcResult short_run = run_mcmc(plan, data, cfg);
  cfg.sample = 900;
  const McmcResult long_run = run_mcmc(plan, data, cfg);

  REQUIRE(!short_run.proposal_log_scale.empty());
  REQUIRE(short_run.proposal_log_scale.size() == long_run.proposal_log_scale.size());
  for (std::size_t c = 0; c < short_run.proposal_log_scale.size(); ++c)
    CHECK((short_run.proposal_log_scale[c] - long_run.proposal_log_scale[c])
              .cwiseAbs()
              .maxCoeff() == 0.0);

  // the first retained draws agree too: adaptation state is independent of
  // the sampling horizon
  CHECK((short_run.draws[0] - long_run.draws[0].topRows(300)).cwiseAbs().maxCoeff() == 0.0);
}

TEST_CASE("user inits are honored exactly") {
  Rng gen(19);
  const BoundData data = inline_data(normal_csv(gen, "x1", 20, 1.0, 1.0), {"x1"});
  const ParameterTable t = build_table(parse_model("x1 ~ 1\nx1 ~~ x1"), GroupInfo{});
  const ModelPlan plan = make_plan(t, default_priors(), "srs");

  SamplerConfig cfg;
  cfg.chains = 2;
  cfg.adapt = 100;
  cfg.burnin = 100;
  cfg.sample = 100;
  cfg.inits = "user";
  Eigen::VectorXd a(t.npar), b(t.npar);
  const int nu_col = free_slot(t, "x1", Op::Intercept, "1");
  const int th_col = free_slot(t, "x1", Op::Covariance, "x1");
  a[nu_col] = 0.4;
  a[th_col] = 2.0;
  b[nu_col] = 1.6;
  b[th_col] = 0.5;
  cfg.user_inits = {a, b};
  const McmcResult res = run_mcmc(plan, data, cfg);
  CHECK((res.inits[0] - a).cwiseAbs().maxCoeff() == 0.0);
  CHECK((res.inits[1] - b).cwiseAbs().maxCoeff() == 0.0);

  cfg.user_inits = {a};
  CHECK_THROWS_AS(run_mcmc(plan, data, cfg), Error);
}

TEST_CASE("simple inits come from the data moments") {
  const BoundData data =
      bind_data(load_csv(testsup::data_file("holzinger_swineford.csv")), {"x1", "x2", "x3"});
  const ParameterTable t = build_table(parse_model("f =~ x1 + x2 + x3"), GroupInfo{});
  const ModelPlan plan = make_plan(t, default_priors(), "srs");

  SamplerConfig cfg;
  cfg.chains = 2;
  cfg.adapt = 50;
  cfg.burnin = 50;
  cfg.sample = 50;
  cfg.inits = "simple";
  const McmcResult res = run_mcmc(plan, data, cfg);

  const Eigen::VectorXd mu = data.group_mean(0);
  const Eigen::MatrixXd S = data.group_cov(0, true);
  const int nu_col = free_slot(t, "x1", Op::Intercept, "1");
  const int th_col = free_slot(t, "x1", Op::Covariance, "x1");
  CHECK(res.inits[0][nu_col] == doctest::Approx(mu[0]).epsilon(1e-12));
  CHECK(res.inits[0][th_col] == doctest::Approx(0.5 * S(0, 0)).epsilon(1e-12));
  // both chains share the deterministic start
  CHECK((res.inits[0] - res.inits[1]).cwiseAbs().maxCoeff() == 0.0);
}

TEST_CASE("prior inits respect the documented clamps") {
  const BoundData data =
      bind_data(load_csv(testsup::data_file("holzinger_swineford.csv")), {"x1", "x2", "x3"});
  const ParameterTable t = build_table(parse_model("f =~ x1 + x2 + x3"), GroupInfo{});
  const ModelPlan plan = make_plan(t, default_priors(), "srs");

  SamplerConfig cfg;
  cfg.chains = 4;
  cfg.adapt = 50;
  cfg.burnin = 50;
  cfg.sample = 50;
  cfg.inits = "prior";
  cfg.seed = 31;
  const McmcResult res = run_mcmc(plan, data, cfg);

  const Eigen::VectorXd mu = data.group_mean(0);
  const Eigen::MatrixXd S = data.group_cov(0, true);
  const int l2 = free_slot(t, "f", Op::Loading, "x2");
  const int v1 = free_slot(t, "x1", Op::Covariance, "x1");
  const int n1 = free_slot(t, "x1", Op::Intercept, "1");
  for (const Eigen::VectorXd& init : res.inits) {
    CHECK(init[l2] >= 0.5);
    CHECK(init[l2] <= 1.5);
    CHECK(init[v1] >= 0.1);
    CHECK(init[v1] <= 10.0);
    CHECK(std::abs(init[n1] - mu[0]) <= 3.0 * std::sqrt(S(0, 0)) + 1e-12);
  }
}

TEST_CASE("srs and fa modes agree on inferential posteriors") {
  Rng gen(23);
  std::string csv = "x1,x2,x3\n";
  for (int i = 0; i < 80; ++i) {
    const double f = gen.normal();
    const double shared = 0.4 * gen.normal();
    csv += std::to_string(f + shared + 0.5 * gen.normal()) + "," +
           std::to_string(0.9 * f + shared + 0.5 * gen.normal()) + "," +
           std::to_string(0.7 * f + 0.5 * gen.normal()) + "\n";
  }
  const BoundData data = inline_data(csv, {"x1", "x2", "x3"});
  const ParameterTable t =
      build_table(parse_model("f =~ x1 + x2 + x3\nx1 ~~ x2"), GroupInfo{});

  SamplerConfig cfg;
  cfg.chains = 2;
  cfg.adapt = 500;
  cfg.burnin = 1500;
  cfg.sample = 5000;
  cfg.seed = 61;

  const ModelPlan srs_plan = make_plan(t, default_priors(), "srs");
  const McmcResult srs_res = run_mcmc(srs_plan, data, cfg);
  const ModelPlan fa_plan = make_plan(t, default_priors(), "fa");
  const McmcResult fa_res = run_mcmc(fa_plan, data, cfg);

  for (const char* name : {"x2", "x3"}) {
    const int col = free_slot(t, "f", Op::Loading, name);
    const double gap = std::abs(pooled_mean(srs_res.draws, col) - pooled_mean(fa_res.draws, col));
    CHECK(gap < 3.0 * (mcse(srs_res.draws, col) + mcse(fa_res.draws, col)));
  }
  const int cov_col = free_slot(t, "x1", Op::Covariance, "x2");
  const double cov_gap =
      std::abs(pooled_mean(srs_res.draws, cov_col) - pooled_mean(fa_res.draws, cov_col));
  CHECK(cov_gap < 3.0 * (mcse(srs_res.draws, cov_col) + mcse(fa_res.draws, cov_col)));
}

TEST_CASE("plan construction rejects unsupported setups") {
  const ParameterTable t = build_table(parse_model("f =~ x1 + x2 + x3"), GroupInfo{});
  CHECK_THROWS_AS(make_plan(t, default_priors(), "bogus"), Error);

  // fa mode cannot keep a fixed variance on a pair member
  const ParameterTable t2 = build_table(
      parse_model("f =~ x1 + x2 + x3\nx1 ~~ x2\nx1 ~~ 0.5*x1"), GroupInfo{});
  CHECK_THROWS_AS(make_plan(t2, default_priors(), "fa"), Error);
  CHECK_NOTHROW(make_plan(t2, default_priors(), "srs"));
}
