#include "bsem/priors.hpp"

#include <cctype>
#include <cmath>
#include <cstdlib>
#include <limits>

#include <boost/math/distributions/beta.hpp>
#include <boost/math/distributions/gamma.hpp>
#include <boost/math/distributions/lognormal.hpp>
#include <boost/math/distributions/normal.hpp>
#include <boost/math/distributions/uniform.hpp>

#include "bsem/error.hpp"

namespace bsem {

namespace {

constexpr double kInf = std::numeric_limits<double>::infinity();

struct Cursor {
  const std::string& s;
  std::size_t i = 0;
  void skip_ws() {
    while (i < s.size() && std::isspace(static_cast<unsigned char>(s[i]))) ++i;
  }
  bool eat(char c) {
    skip_ws();
    if (i < s.size() && s[i] == c) {
      ++i;
      return true;
    }
    return false;
  }
};

double parse_num(Cursor& c) {
  c.skip_ws();
  char* end = nullptr;
  const double v = std::strtod(c.s.c_str() + c.i, &end);
  if (end == c.s.c_str() + c.i) throw Error("prior '" + c.s + "': expected a number");
  c.i = static_cast<std::size_t>(end - c.s.c_str());
  return v;
}

std::string parse_word(Cursor& c) {
  c.skip_ws();
  std::string w;
  while (c.i < c.s.size() &&
         (std::isalnum(static_cast<unsigned char>(c.s[c.i])) || c.s[c.i] == '_'))
    w.push_back(c.s[c.i++]);
  return w;
}

// natural support of the family variate
std::pair<double, double> family_support(const PriorSpec& s) {
  switch (s.family) {
    case PriorFamily::Normal: return {-kInf, kInf};
    case PriorFamily::LogNormal: return {0.0, kInf};
    case PriorFamily::Gamma: return {0.0, kInf};
    case PriorFamily::Beta: return {0.0, 1.0};
    case PriorFamily::Uniform: return {s.p1, s.p2};
    case PriorFamily::Wishart: break;
  }
  throw Error("wishart prior has no scalar variate");
}

std::pair<double, double> variate_support(const PriorSpec& s) {
  auto [lo, hi] = family_support(s);
  if (s.trunc) {
    lo = std::max(lo, s.trunc->first);
    hi = std::min(hi, s.trunc->second);
    if (!(lo < hi)) throw Error("prior '" + s.src + "': truncation leaves empty support");
  }
  return {lo, hi};
}

double family_log_pdf(const PriorSpec& s, double u) {
  constexpr double kLog2Pi = 1.8378770664093453;
  switch (s.family) {
    case PriorFamily::Normal:
      return 0.5 * std::log(s.p2) - 0.5 * kLog2Pi - 0.5 * s.p2 * (u - s.p1) * (u - s.p1);
    case PriorFamily::LogNormal: {
      const double lu = std::log(u);
      return 0.5 * std::log(s.p2) - 0.5 * kLog2Pi - lu - 0.5 * s.p2 * (lu - s.p1) * (lu - s.p1);
    }
    case PriorFamily::Gamma:
      return s.p1 * std::log(s.p2) - std::lgamma(s.p1) + (s.p1 - 1.0) * std::log(u) - s.p2 * u;
    case PriorFamily::Beta:
      return std::lgamma(s.p1 + s.p2) - std::lgamma(s.p1) - std::lgamma(s.p2) +
             (s.p1 - 1.0) * std::log(u) + (s.p2 - 1.0) * std::log(1.0 - u);
    case PriorFamily::Uniform:
      return -std::log(s.p2 - s.p1);
    case PriorFamily::Wishart: break;
  }
  throw Error("wishart prior has no scalar density");
}

double family_cdf(const PriorSpec& s, double u) {
  using namespace boost::math;
  switch (s.family) {
    case PriorFamily::Normal: return cdf(normal_distribution<>(s.p1, 1.0 / std::sqrt(s.p2)), u);
    case PriorFamily::LogNormal:
      if (u <= 0.0) return 0.0;
      return cdf(lognormal_distribution<>(s.p1, 1.0 / std::sqrt(s.p2)), u);
    case PriorFamily::Gamma:
      if (u <= 0.0) return 0.0;
      return cdf(gamma_distribution<>(s.p1, 1.0 / s.p2), u);
    case PriorFamily::Beta:
      if (u <= 0.0) return 0.0;
      if (u >= 1.0) return 1.0;
      return cdf(beta_distribution<>(s.p1, s.p2), u);
    case PriorFamily::Uniform:
      return cdf(uniform_distribution<>(s.p1, s.p2), std::clamp(u, s.p1, s.p2));
    case PriorFamily::Wishart: break;
  }
  throw Error("wishart prior has no scalar cdf");
}

double family_quantile(const PriorSpec& s, double p) {
  using namespace boost::math;
  switch (s.family) {
    case PriorFamily::Normal: return quantile(normal_distribution<>(s.p1, 1.0 / std::sqrt(s.p2)), p);
    case PriorFamily::LogNormal: return quantile(lognormal_distribution<>(s.p1, 1.0 / std::sqrt(s.p2)), p);
    case PriorFamily::Gamma: return quantile(gamma_distribution<>(s.p1, 1.0 / s.p2), p);
    case PriorFamily::Beta: return quantile(beta_distribution<>(s.p1, s.p2), p);
    case PriorFamily::Uniform: return quantile(uniform_distribution<>(s.p1, s.p2), p);
    case PriorFamily::Wishart: break;
  }
  throw Error("wishart prior has no scalar quantile");
}

enum class Map { Natural, Precision, SdSquared, Rescale };

Map value_map(const PriorSpec& s, ParamClass cls) {
  switch (cls) {
    case ParamClass::Location:
      if (s.tag != ScaleTag::None)
        throw Error("prior '" + s.src + "': [sd]/[var] only applies to variance parameters");
      return Map::Natural;
    case ParamClass::Variance:
      if (s.tag == ScaleTag::Var) return Map::Natural;
      if (s.tag == ScaleTag::Sd) return Map::SdSquared;
      return Map::Precision;
    case ParamClass::Correlation:
      if (s.family != PriorFamily::Beta)
        throw Error("prior '" + s.src + "': correlation priors must be dbeta");
      if (s.tag != ScaleTag::None)
        throw Error("prior '" + s.src + "': [sd]/[var] not valid on a correlation");
      return Map::Rescale;
  }
  return Map::Natural;
}

void require_positive_variate(const PriorSpec& s, double lo) {
  if (lo < 0.0)
    throw Error("prior '" + s.src + "': variance-class prior needs positive support");
}

}  // namespace

PriorSpec parse_prior(const std::string& text) {
  PriorSpec spec;
  spec.src = text;
  Cursor c{text};

  const std::string name = parse_word(c);
  if (name == "dnorm") spec.family = PriorFamily::Normal;
  else if (name == "dlnorm") spec.family = PriorFamily::LogNormal;
  else if (name == "dgamma") spec.family = PriorFamily::Gamma;
  else if (name == "dbeta") spec.family = PriorFamily::Beta;
  else if (name == "dunif") spec.family = PriorFamily::Uniform;
  else if (name == "dwish") spec.family = PriorFamily::Wishart;
  else throw Error("prior '" + text + "': unknown family '" + name + "'");

  if (!c.eat('(')) throw Error("prior '" + text + "': expected '('");
  if (spec.family == PriorFamily::Wishart) {
    const std::string scale = parse_word(c);
    if (scale != "iden")
      throw Error("prior '" + text + "': dwish scale must be 'iden'");
  } else {
    spec.p1 = parse_num(c);
  }
  if (!c.eat(',')) throw Error("prior '" + text + "': expected ','");
  spec.p2 = parse_num(c);
  if (!c.eat(')')) throw Error("prior '" + text + "': expected ')'");

  for (;;) {
    c.skip_ws();
    if (c.eat('[')) {
      const std::string tag = parse_word(c);
      if (tag == "sd") spec.tag = ScaleTag::Sd;
      else if (tag == "var") spec.tag = ScaleTag::Var;
      else throw Error("prior '" + text + "': unknown tag [" + tag + "]");
      if (!c.eat(']')) throw Error("prior '" + text + "': expected ']'");
      continue;
    }
    c.skip_ws();
    if (c.i < text.size() && text[c.i] == 'T') {
      ++c.i;
      if (!c.eat('(')) throw Error("prior '" + text + "': expected '(' after T");
      const double lo = parse_num(c);
      if (!c.eat(',')) throw Error("prior '" + text + "': T(lo,hi) needs two bounds");
      const double hi = parse_num(c);
      if (!c.eat(')')) throw Error("prior '" + text + "': expected ')'");
      if (!(lo < hi)) throw Error("prior '" + text + "': empty truncation interval");
      spec.trunc = {lo, hi};
      continue;
    }
    break;
  }
  c.skip_ws();
  if (c.i != text.size()) throw Error("prior '" + text + "': trailing junk");

  switch (spec.family) {
    case PriorFamily::Normal:
    case PriorFamily::LogNormal:
      if (spec.p2 <= 0.0) throw Error("prior '" + text + "': precision must be positive");
      break;
    case PriorFamily::Gamma:
    case PriorFamily::Beta:
      if (spec.p1 <= 0.0 || spec.p2 <= 0.0)
        throw Error("prior '" + text + "': shape parameters must be positive");
      break;
    case PriorFamily::Uniform:
      if (!(spec.p1 < spec.p2)) throw Error("prior '" + text + "': needs lower < upper");
      break;
    case PriorFamily::Wishart:
      if (spec.p2 <= 0.0) throw Error("prior '" + text + "': df must be positive");
      if (spec.tag != ScaleTag::None || spec.trunc)
        throw Error("prior '" + text + "': dwish takes no tags or truncation");
      break;
  }
  return spec;
}

std::pair<double, double> prior_support(const PriorSpec& spec, ParamClass cls) {
  const Map m = value_map(spec, cls);
  auto [lo, hi] = variate_support(spec);
  switch (m) {
    case Map::Natural:
      if (cls == ParamClass::Variance) require_positive_variate(spec, lo);
      return {lo, hi};
    case Map::Precision:
      require_positive_variate(spec, lo);
      return {hi == kInf ? 0.0 : 1.0 / hi, lo == 0.0 ? kInf : 1.0 / lo};
    case Map::SdSquared:
      require_positive_variate(spec, lo);
      return {lo * lo, hi == kInf ? kInf : hi * hi};
    case Map::Rescale:
      return {2.0 * lo - 1.0, 2.0 * hi - 1.0};
  }
  return {lo, hi};
}

static double prior_log_density_impl(const PriorSpec& spec, ParamClass cls, double x,
                                     bool with_jac) {
  const Map m = value_map(spec, cls);
  auto [lo, hi] = variate_support(spec);
  if (cls == ParamClass::Variance) require_positive_variate(spec, lo);

  double u, log_jac;
  switch (m) {
    case Map::Natural:
      u = x;
      log_jac = 0.0;
      break;
    case Map::Precision:
      if (x <= 0.0) return -kInf;
      u = 1.0 / x;
      log_jac = -2.0 * std::log(x);
      break;
    case Map::SdSquared:
      if (x <= 0.0) return -kInf;
      u = std::sqrt(x);
      log_jac = -std::log(2.0 * u);
      break;
    case Map::Rescale:
      u = 0.5 * (x + 1.0);
      log_jac = -std::log(2.0);
      break;
    default:
      return -kInf;
  }
  if (u <= lo || u >= hi) {
    // closed endpoints are fine for distributions with density there
    if (!(u == lo && spec.family == PriorFamily::Uniform) && !(u == hi && spec.family == PriorFamily::Uniform))
      return -kInf;
  }
  double log_norm = 0.0;
  if (spec.trunc) {
    const double mass = family_cdf(spec, hi) - family_cdf(spec, lo);
    if (mass <= 0.0) return -kInf;
    log_norm = std::log(mass);
  }
  return family_log_pdf(spec, u) - log_norm + (with_jac ? log_jac : 0.0);
}

double prior_log_density(const PriorSpec& spec, ParamClass cls, double x) {
  return prior_log_density_impl(spec, cls, x, true);
}

double prior_log_density_declared(const PriorSpec& spec, ParamClass cls, double x) {
  return prior_log_density_impl(spec, cls, x, false);
}

double prior_sample(const PriorSpec& spec, ParamClass cls, Rng& rng) {
  const Map m = value_map(spec, cls);
  auto [lo, hi] = variate_support(spec);
  if (cls == ParamClass::Variance) require_positive_variate(spec, lo);

  double u;
  if (spec.trunc) {
    const double flo = family_cdf(spec, lo);
    const double fhi = family_cdf(spec, hi);
    if (fhi - flo < 1e-12)
      throw Error("prior '" + spec.src + "': truncation mass below 1e-12");
    u = family_quantile(spec, flo + rng.uniform() * (fhi - flo));
  } else {
    u = family_quantile(spec, rng.uniform());
  }
  u = std::clamp(u, std::nextafter(lo, hi), std::nextafter(hi, lo));
  switch (m) {
    case Map::Natural: return u;
    case Map::Precision: return 1.0 / u;
    case Map::SdSquared: return u * u;
    case Map::Rescale: return 2.0 * u - 1.0;
  }
  return u;
}

const PriorSpec& DefaultPriors::at(const std::string& key) const {
  auto it = entries.find(key);
  if (it == entries.end()) throw Error("no default prior entry '" + key + "'");
  return it->second;
}

DefaultPriors default_priors(const std::map<std::string, std::string>& overrides) {
  static const std::map<std::string, std::string> stock = {
      {"nu", "dnorm(0,1e-3)"},   {"alpha", "dnorm(0,1e-2)"}, {"lambda", "dnorm(0,1e-2)"},
      {"beta", "dnorm(0,1e-2)"}, {"itheta", "dgamma(1,.5)"}, {"ipsi", "dgamma(1,.5)"},
      {"rho", "dbeta(1,1)"},     {"ibpsi", "dwish(iden,3)"}};

  std::map<std::string, std::string> text = stock;
  DefaultPriors out;
  for (const auto& [key, value] : overrides) {
    if (!stock.count(key)) throw Error("unknown dpriors entry '" + key + "'");
    text[key] = value;
    out.overridden.insert(key);
  }

  for (const auto& [key, value] : text) out.entries[key] = parse_prior(value);

  // class sanity on the slots with a fixed role
  for (const char* k : {"nu", "alpha", "lambda", "beta"})
    prior_support(out.at(k), ParamClass::Location);
  for (const char* k : {"itheta", "ipsi"})
    prior_support(out.at(k), ParamClass::Variance);
  prior_support(out.at("rho"), ParamClass::Correlation);
  if (out.at("ibpsi").family != PriorFamily::Wishart)
    throw Error("dpriors entry 'ibpsi' must be a dwish prior");
  return out;
}

}  // namespace bsem
