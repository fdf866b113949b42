#pragma once

#include <optional>
#include <string>
#include <vector>

namespace bsem {

enum class Op { Loading, Regression, Covariance, Intercept };

// token as it appears in tables: =~ / ~ / ~~ / ~1
std::string op_token(Op op);

struct TermModifier {
  std::optional<double> fix;
  std::string label;
  std::string prior;  // verbatim prior string, empty if none
  std::optional<double> start;

  bool any() const { return fix || start || !label.empty() || !prior.empty(); }
  bool frees_parameter() const { return !label.empty() || !prior.empty(); }
  bool operator==(const TermModifier&) const = default;
};

struct Term {
  std::string var;  // "1" for the intercept pseudo-variable
  TermModifier mod;
  bool operator==(const Term&) const = default;
};

struct FormulaSpec {
  std::string lhs;
  Op op = Op::Regression;
  std::vector<Term> terms;
  int line = 0;

  bool operator==(const FormulaSpec& o) const {
    return lhs == o.lhs && op == o.op && terms == o.terms;
  }
};

struct RawModel {
  std::vector<FormulaSpec> formulas;

  // lhs of =~ formulas, in first-appearance order
  std::vector<std::string> latent_names() const;
  // every other variable mentioned, in first-appearance order
  std::vector<std::string> manifest_names() const;

  bool operator==(const RawModel& o) const { return formulas == o.formulas; }
};

// lavaan-style model text -> RawModel. Lines split on newline/semicolon,
// '#' comments stripped outside quotes, same (lhs, op) lines merged.
RawModel parse_model(const std::string& text);

// canonical text form; parse(print(m)) == m
std::string print_model(const RawModel& model);

}  // namespace bsem
