#include <doctest.h>

#include <cmath>

#include "bsem/dataset.hpp"
#include "bsem/likelihood.hpp"
#include "bsem/model_syntax.hpp"
#include "bsem/param_table.hpp"
#include "bsem/rng.hpp"
#include "support.hpp"

using namespace bsem;

namespace {

GroupMatrices direct_matrices(int p, int m) {
  GroupMatrices g;
  g.nu = Eigen::VectorXd::Zero(p);
  g.alpha = Eigen::VectorXd::Zero(m);
  g.lambda = Eigen::MatrixXd::Zero(p, m);
  g.beta = Eigen::MatrixXd::Zero(m, m);
  g.theta = Eigen::MatrixXd::Identity(p, p);
  g.psi = Eigen::MatrixXd::Identity(m, m);
  return g;
}

BoundData bind_inline(const std::string& csv, const std::vector<std::string>& vars) {
  testsup::TempFile f("lik", csv);
  return bind_data(load_csv(f.path), vars);
}

}  // namespace

TEST_CASE("implied moments of a single factor model") {
  GroupMatrices g = direct_matrices(2, 1);
  g.lambda << 1.0, 1.0;
  g.psi << 2.0;

  const ImpliedMoments im = implied_moments(g);
  CHECK(im.mu[0] == 0.0);
  CHECK(im.mu[1] == 0.0);
  CHECK(im.sigma(0, 0) == doctest::Approx(3.0).epsilon(1e-15));
  CHECK(im.sigma(1, 1) == doctest::Approx(3.0).epsilon(1e-15));
  CHECK(im.sigma(0, 1) == doctest::Approx(2.0).epsilon(1e-15));
}

TEST_CASE("structural paths propagate through the inverse") {
  // two latents, eta2 = 0.5 eta1 + zeta; lambda identity
  GroupMatrices g = direct_matrices(2, 2);
  g.lambda = Eigen::MatrixXd::Identity(2, 2);
  g.beta(1, 0) = 0.5;
  g.alpha << 1.0, 0.0;
  g.nu << 0.5, 0.0;

  const ImpliedMoments im = implied_moments(g);
  // mu = nu + lambda (I-B)^-1 alpha
  CHECK(im.mu[0] == doctest::Approx(1.5).epsilon(1e-15));
  CHECK(im.mu[1] == doctest::Approx(0.5).epsilon(1e-15));
  // var(eta2) = 0.25 + 1, cov = 0.5
  CHECK(im.sigma(1, 1) == doctest::Approx(1.25 + 1.0).epsilon(1e-15));
  CHECK(im.sigma(0, 1) == doctest::Approx(0.5).epsilon(1e-15));
}

TEST_CASE("casewise log density at the origin") {
  const BoundData d1 = bind_inline("y1\n0\n", {"y1"});
  GroupMatrices g1 = direct_matrices(1, 0);
  const Eigen::VectorXd l1 = casewise_loglik({implied_moments(g1)}, d1);
  REQUIRE(l1.size() == 1);
  CHECK(l1[0] == doctest::Approx(-0.91893853320467274).epsilon(1e-14));

  const BoundData d2 = bind_inline("y1,y2\n0,0\n", {"y1", "y2"});
  GroupMatrices g2 = direct_matrices(2, 0);
  const Eigen::VectorXd l2 = casewise_loglik({implied_moments(g2)}, d2);
  CHECK(l2[0] == doctest::Approx(-1.8378770664093453).epsilon(1e-14));
}

TEST_CASE("non positive definite sigma flags minus infinity") {
  const BoundData d = bind_inline("y1,y2\n0,0\n", {"y1", "y2"});
  GroupMatrices g = direct_matrices(2, 0);
  g.theta << 1.0, 2.0, 2.0, 1.0;
  const Eigen::VectorXd l = casewise_loglik({implied_moments(g)}, d);
  CHECK(l[0] == -std::numeric_limits<double>::infinity());
}

TEST_CASE("saturated log likelihood closed form on two points") {
  const BoundData d = bind_inline("y1\n1\n3\n", {"y1"});
  // ml variance of {1,3} is 1; -n/2 (log 2pi + log s2 + 1)
  const double expect = -1.0 * (std::log(2.0 * M_PI) + 0.0 + 1.0);
  CHECK(saturated_loglik(d) == doctest::Approx(expect).epsilon(1e-12));
}

TEST_CASE("theta scaling shifts the implied covariance linearly") {
  GroupMatrices g = direct_matrices(3, 1);
  g.lambda << 1.0, 0.8, 0.6;
  g.theta = Eigen::Vector3d(0.5, 1.0, 1.5).asDiagonal();
  const Eigen::MatrixXd base = implied_moments(g).sigma;

  const double c = 2.5;
  GroupMatrices g2 = g;
  g2.theta *= c;
  const Eigen::MatrixXd scaled = implied_moments(g2).sigma;
  CHECK(((scaled - base) - (c - 1.0) * g.theta).cwiseAbs().maxCoeff() <= 1e-14);
}

TEST_CASE("lrt is nonnegative and zero for a saturated model") {
  // just-identified two-variable model: free variances, covariance, intercepts
  const ParameterTable t =
      build_table(parse_model("y1 ~~ y2\ny1 ~~ y1\ny2 ~~ y2"), GroupInfo{});
  REQUIRE(t.npar == 5);

  const BoundData d = bind_inline(
      "y1,y2\n1.2,0.3\n-0.4,1.1\n0.9,-0.2\n2.0,0.8\n0.1,0.5\n-1.1,0.0\n", {"y1", "y2"});

  // stuff the ml moments straight into the free vector
  const Eigen::VectorXd mu = d.group_mean(0);
  const Eigen::MatrixXd S = d.group_cov(0, true);
  Eigen::VectorXd v(t.npar);
  v[t.find("y1", Op::Covariance, "y2", 1)->free_index - 1] = S(0, 1);
  v[t.find("y1", Op::Covariance, "y1", 1)->free_index - 1] = S(0, 0);
  v[t.find("y2", Op::Covariance, "y2", 1)->free_index - 1] = S(1, 1);
  v[t.find("y1", Op::Intercept, "1", 1)->free_index - 1] = mu[0];
  v[t.find("y2", Op::Intercept, "1", 1)->free_index - 1] = mu[1];

  CHECK(std::abs(lrt(t, d, v)) <= 1e-8);
  CHECK(total_loglik(t, d, v) == doctest::Approx(saturated_loglik(d)).epsilon(1e-10));

  // any other parameter value sits below the saturated maximum
  const int icov = t.find("y1", Op::Covariance, "y2", 1)->free_index - 1;
  const int iv1 = t.find("y1", Op::Covariance, "y1", 1)->free_index - 1;
  const int iv2 = t.find("y2", Op::Covariance, "y2", 1)->free_index - 1;
  Rng rng(5);
  for (int it = 0; it < 50; ++it) {
    Eigen::VectorXd w = v;
    w[icov] += 0.3 * rng.normal();
    w[iv1] = 0.2 + 2.0 * rng.uniform();
    w[iv2] = 0.2 + 2.0 * rng.uniform();
    w[t.find("y1", Op::Intercept, "1", 1)->free_index - 1] += rng.normal();
    if (std::abs(w[icov]) >= std::sqrt(w[iv1] * w[iv2])) continue;
    CHECK(lrt(t, d, w) >= -1e-8);
  }
}

TEST_CASE("total log likelihood is invariant to case order") {
  const ParameterTable t = build_table(parse_model("f =~ x1 + x2 + x3"), GroupInfo{});
  const BoundData fwd = bind_inline(
      "x1,x2,x3\n1,2,3\n4,5,6\n0,1,0\n2,2,2\n", {"x1", "x2", "x3"});
  const BoundData rev = bind_inline(
      "x1,x2,x3\n2,2,2\n0,1,0\n4,5,6\n1,2,3\n", {"x1", "x2", "x3"});

  Eigen::VectorXd v(t.npar);
  v << 0.9, 1.1, 2.1, 2.0, 1.0, 0.8, 0.7, 0.9, 1.2;
  CHECK(total_loglik(t, fwd, v) == doctest::Approx(total_loglik(t, rev, v)).epsilon(1e-12));

  // and equals the sum of casewise terms
  const Eigen::VectorXd cw = casewise_loglik(t, fwd, v);
  CHECK(total_loglik(t, fwd, v) == doctest::Approx(cw.sum()).epsilon(1e-12));
}
