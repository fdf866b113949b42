#pragma once

#include <map>
#include <optional>
#include <set>
#include <string>
#include <utility>

#include "bsem/rng.hpp"

namespace bsem {

enum class PriorFamily { Normal, LogNormal, Gamma, Beta, Uniform, Wishart };

// [sd] / [var] tags on variance-class parameters; None means the prior sits
// on the precision (BUGS convention)
enum class ScaleTag { None, Sd, Var };

// how the inferential value relates to the prior's own variate
enum class ParamClass { Location, Variance, Correlation };

struct PriorSpec {
  PriorFamily family = PriorFamily::Normal;
  double p1 = 0.0;  // dnorm/dlnorm: mean of the (log-)variate, dgamma: shape,
                    // dbeta: a, dunif: lower, dwish: unused (scale fixed to identity)
  double p2 = 0.0;  // dnorm/dlnorm: precision, dgamma: rate, dbeta: b,
                    // dunif: upper, dwish: degrees of freedom
  ScaleTag tag = ScaleTag::None;
  std::optional<std::pair<double, double>> trunc;  // on the family variate scale
  std::string src;  // verbatim text

  bool operator==(const PriorSpec& o) const {
    return family == o.family && p1 == o.p1 && p2 == o.p2 && tag == o.tag && trunc == o.trunc;
  }
};

// "dnorm(9,.25)T(0,18)", "dlnorm(1,.1)[sd]", "dwish(iden,3)" -> PriorSpec
PriorSpec parse_prior(const std::string& text);

// log density of the inferential value x: the variance itself for Variance
// (tag picks precision/sd/var variate), the correlation on (-1,1) for
// Correlation (beta variate rescaled), the natural value for Location.
// Truncation renormalized. -inf outside support.
double prior_log_density(const PriorSpec& spec, ParamClass cls, double x);

// density of the declared variate at the transformed inferential value, no
// change-of-variables term; the evidence approximation sums these as-is
double prior_log_density_declared(const PriorSpec& spec, ParamClass cls, double x);

// draw on the same inferential scale
double prior_sample(const PriorSpec& spec, ParamClass cls, Rng& rng);

// inferential-scale support interval (possibly infinite endpoints)
std::pair<double, double> prior_support(const PriorSpec& spec, ParamClass cls);

struct DefaultPriors {
  std::map<std::string, PriorSpec> entries;  // nu alpha lambda beta itheta ipsi rho ibpsi
  std::set<std::string> overridden;          // keys the user replaced

  const PriorSpec& at(const std::string& key) const;
};

// the stock table with user overrides applied; unknown keys and malformed
// strings raise
DefaultPriors default_priors(const std::map<std::string, std::string>& overrides = {});

}  // namespace bsem
