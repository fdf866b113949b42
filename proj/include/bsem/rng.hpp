#pragma once

#include <cmath>
#include <cstdint>
#include <random>

#include <Eigen/Dense>
#include <boost/math/distributions/normal.hpp>

namespace bsem {

// Deterministic variate generator. Every distribution is derived from the
// mt19937_64 uniform stream through fixed algorithms, so a draw sequence
// depends only on (seed, stream, call order) and not on standard library
// internals. Chains get disjoint streams.
class Rng {
 public:
  explicit Rng(std::uint64_t seed, std::uint64_t stream = 0) {
    std::seed_seq ss{static_cast<std::uint32_t>(seed), static_cast<std::uint32_t>(seed >> 32),
                     static_cast<std::uint32_t>(stream), static_cast<std::uint32_t>(stream >> 32),
                     0x9e3779b9u};
    gen_.seed(ss);
  }

  // uniform on (0,1), endpoints excluded
  double uniform() {
    const double scale = 1.0 / 9007199254740992.0;  // 2^-53
    double u = static_cast<double>(gen_() >> 11) * scale;
    if (u <= 0.0) u = scale;
    if (u >= 1.0) u = 1.0 - scale;
    return u;
  }

  double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

  double normal() {
    static const boost::math::normal_distribution<double> nd(0.0, 1.0);
    return boost::math::quantile(nd, uniform());
  }

  double normal(double mean, double sd) { return mean + sd * normal(); }

  // Marsaglia-Tsang; rate parameterization
  double gamma(double shape, double rate) {
    if (shape < 1.0) {
      double u = uniform();
      return gamma(shape + 1.0, rate) * std::pow(u, 1.0 / shape);
    }
    const double d = shape - 1.0 / 3.0;
    const double c = 1.0 / std::sqrt(9.0 * d);
    for (;;) {
      double x, v;
      do {
        x = normal();
        v = 1.0 + c * x;
      } while (v <= 0.0);
      v = v * v * v;
      const double u = uniform();
      if (u < 1.0 - 0.0331 * x * x * x * x) return d * v / rate;
      if (std::log(u) < 0.5 * x * x + d * (1.0 - v + std::log(v))) return d * v / rate;
    }
  }

  double chisq(double df) { return gamma(0.5 * df, 0.5); }

  double beta(double a, double b) {
    const double x = gamma(a, 1.0);
    const double y = gamma(b, 1.0);
    return x / (x + y);
  }

  Eigen::VectorXd mvn(const Eigen::VectorXd& mean, const Eigen::MatrixXd& chol_lower) {
    Eigen::VectorXd z(mean.size());
    for (Eigen::Index i = 0; i < z.size(); ++i) z[i] = normal();
    return mean + chol_lower * z;
  }

  // Wishart(df, scale) via Bartlett, scale given by its lower Cholesky factor
  Eigen::MatrixXd wishart(double df, const Eigen::MatrixXd& scale_chol) {
    const Eigen::Index p = scale_chol.rows();
    Eigen::MatrixXd a = Eigen::MatrixXd::Zero(p, p);
    for (Eigen::Index i = 0; i < p; ++i) {
      a(i, i) = std::sqrt(chisq(df - static_cast<double>(i)));
      for (Eigen::Index j = 0; j < i; ++j) a(i, j) = normal();
    }
    const Eigen::MatrixXd la = scale_chol * a;
    return la * la.transpose();
  }

  // Sigma ~ InvWishart(scale, df): draw from Wishart(df, scale^-1) and invert
  Eigen::MatrixXd inv_wishart(double df, const Eigen::MatrixXd& scale) {
    const Eigen::MatrixXd prec_chol =
        Eigen::LLT<Eigen::MatrixXd>(scale.inverse()).matrixL();
    const Eigen::MatrixXd w = wishart(df, prec_chol);
    return w.inverse();
  }

  std::uint64_t raw() { return gen_(); }

 private:
  std::mt19937_64 gen_;
};

}  // namespace bsem
