#include "bsem/model_syntax.hpp"

#include <algorithm>
#include <cctype>
#include <cstdlib>
#include <sstream>

#include "bsem/error.hpp"

namespace bsem {

std::string op_token(Op op) {
  switch (op) {
    case Op::Loading: return "=~";
    case Op::Regression: return "~";
    case Op::Covariance: return "~~";
    case Op::Intercept: return "~1";
  }
  return "?";
}

namespace {

[[noreturn]] void fail(int line, const std::string& msg) {
  throw Error("model syntax, line " + std::to_string(line) + ": " + msg);
}

bool ident_ok(const std::string& s) {
  if (s.empty()) return false;
  if (!(std::isalpha(static_cast<unsigned char>(s[0])) || s[0] == '.' || s[0] == '_')) return false;
  return std::all_of(s.begin(), s.end(), [](char c) {
    return std::isalnum(static_cast<unsigned char>(c)) || c == '.' || c == '_';
  });
}

bool parse_number(const std::string& s, double& out) {
  if (s.empty()) return false;
  char* end = nullptr;
  out = std::strtod(s.c_str(), &end);
  return end == s.c_str() + s.size();
}

// removes comments and whitespace outside double quotes, preserving newlines
std::string scrub(const std::string& text) {
  std::string out;
  out.reserve(text.size());
  bool quote = false;
  bool comment = false;
  for (char c : text) {
    if (c == '\n') {
      comment = false;
      out.push_back(c);
      continue;
    }
    if (comment) continue;
    if (c == '"') {
      quote = !quote;
      out.push_back(c);
      continue;
    }
    if (quote) {
      out.push_back(c);
      continue;
    }
    if (c == '#') {
      comment = true;
      continue;
    }
    if (std::isspace(static_cast<unsigned char>(c))) continue;
    out.push_back(c);
  }
  if (quote) throw Error("model syntax: unterminated quote");
  return out;
}

// split on a character at paren depth 0 outside quotes
std::vector<std::string> split_depth0(const std::string& s, char sep) {
  std::vector<std::string> parts;
  std::string cur;
  bool quote = false;
  int depth = 0;
  for (char c : s) {
    if (c == '"') quote = !quote;
    if (!quote) {
      if (c == '(') ++depth;
      if (c == ')') --depth;
      if (c == sep && depth == 0) {
        parts.push_back(cur);
        cur.clear();
        continue;
      }
    }
    cur.push_back(c);
  }
  parts.push_back(cur);
  return parts;
}

Term parse_term(const std::string& piece, int line) {
  const std::vector<std::string> bits = split_depth0(piece, '*');
  Term t;
  t.var = bits.back();
  if (t.var.empty()) fail(line, "empty variable in term '" + piece + "'");
  if (t.var != "1" && !ident_ok(t.var)) fail(line, "bad variable name '" + t.var + "'");
  for (std::size_t i = 0; i + 1 < bits.size(); ++i) {
    const std::string& m = bits[i];
    double num;
    if (m.rfind("prior(", 0) == 0 && m.back() == ')') {
      if (!t.mod.prior.empty()) fail(line, "duplicate prior modifier in '" + piece + "'");
      std::string inner = m.substr(6, m.size() - 7);
      if (inner.size() >= 2 && inner.front() == '"' && inner.back() == '"')
        inner = inner.substr(1, inner.size() - 2);
      if (inner.empty()) fail(line, "empty prior modifier in '" + piece + "'");
      t.mod.prior = inner;
    } else if (m.rfind("start(", 0) == 0 && m.back() == ')') {
      if (t.mod.start) fail(line, "duplicate start modifier in '" + piece + "'");
      if (!parse_number(m.substr(6, m.size() - 7), num))
        fail(line, "start() needs a numeric argument in '" + piece + "'");
      t.mod.start = num;
    } else if (parse_number(m, num)) {
      if (t.mod.fix) fail(line, "duplicate fixed value in '" + piece + "'");
      t.mod.fix = num;
    } else if (ident_ok(m)) {
      if (!t.mod.label.empty()) fail(line, "duplicate label in '" + piece + "'");
      t.mod.label = m;
    } else {
      fail(line, "unrecognized modifier '" + m + "'");
    }
  }
  if (t.mod.fix && !t.mod.label.empty())
    fail(line, "term '" + piece + "' has both a label and a fixed value");
  return t;
}

std::string render_number(double v) {
  std::ostringstream os;
  os.precision(15);
  os << v;
  return os.str();
}

std::string render_term(const Term& t) {
  std::string s;
  if (t.mod.fix) s += render_number(*t.mod.fix) + "*";
  if (!t.mod.label.empty()) s += t.mod.label + "*";
  if (!t.mod.prior.empty()) s += "prior(\"" + t.mod.prior + "\")*";
  if (t.mod.start) s += "start(" + render_number(*t.mod.start) + ")*";
  return s + t.var;
}

}  // namespace

RawModel parse_model(const std::string& text) {
  const std::string clean = scrub(text);
  RawModel model;

  auto merge_in = [&](FormulaSpec spec) {
    for (FormulaSpec& f : model.formulas) {
      if (f.lhs == spec.lhs && f.op == spec.op) {
        for (Term& t : spec.terms) f.terms.push_back(std::move(t));
        return;
      }
    }
    model.formulas.push_back(std::move(spec));
  };

  int line_no = 0;
  std::string line;
  std::istringstream lines(clean);
  while (std::getline(lines, line)) {
    ++line_no;
    for (const std::string& stmt : split_depth0(line, ';')) {
      if (stmt.empty()) continue;

      // locate the operator at depth 0 outside quotes
      std::size_t op_pos = std::string::npos;
      std::size_t op_len = 0;
      Op op = Op::Regression;
      {
        bool quote = false;
        int depth = 0;
        for (std::size_t i = 0; i < stmt.size(); ++i) {
          const char c = stmt[i];
          if (c == '"') quote = !quote;
          if (quote) continue;
          if (c == '(') ++depth;
          if (c == ')') --depth;
          if (depth != 0) continue;
          if (c == '=' && i + 1 < stmt.size() && stmt[i + 1] == '~') {
            op_pos = i;
            op_len = 2;
            op = Op::Loading;
            break;
          }
          if (c == '~') {
            op_pos = i;
            if (i + 1 < stmt.size() && stmt[i + 1] == '~') {
              op_len = 2;
              op = Op::Covariance;
            } else {
              op_len = 1;
              op = Op::Regression;
            }
            break;
          }
        }
      }
      if (op_pos == std::string::npos)
        fail(line_no, "no operator in '" + stmt + "'");

      const std::string lhs = stmt.substr(0, op_pos);
      const std::string rhs = stmt.substr(op_pos + op_len);
      if (!ident_ok(lhs)) fail(line_no, "bad left-hand side '" + lhs + "'");
      if (rhs.empty()) fail(line_no, "empty right-hand side in '" + stmt + "'");

      FormulaSpec reg{lhs, op, {}, line_no};
      FormulaSpec icept{lhs, Op::Intercept, {}, line_no};
      for (const std::string& piece : split_depth0(rhs, '+')) {
        Term t = parse_term(piece, line_no);
        if (t.var == "1") {
          if (op != Op::Regression)
            fail(line_no, "'1' is only valid on the right of '~'");
          icept.terms.push_back(std::move(t));
        } else {
          reg.terms.push_back(std::move(t));
        }
      }
      if (!icept.terms.empty()) {
        if (icept.terms.size() > 1) fail(line_no, "repeated intercept term");
        merge_in(std::move(icept));
      }
      if (!reg.terms.empty()) merge_in(std::move(reg));
    }
  }
  if (model.formulas.empty()) throw Error("model syntax: no formulas found");
  return model;
}

std::string print_model(const RawModel& model) {
  std::string out;
  for (const FormulaSpec& f : model.formulas) {
    out += f.lhs;
    switch (f.op) {
      case Op::Loading: out += " =~ "; break;
      case Op::Regression: out += " ~ "; break;
      case Op::Covariance: out += " ~~ "; break;
      case Op::Intercept: out += " ~ "; break;
    }
    for (std::size_t i = 0; i < f.terms.size(); ++i) {
      if (i) out += " + ";
      out += render_term(f.terms[i]);
    }
    out += "\n";
  }
  return out;
}

std::vector<std::string> RawModel::latent_names() const {
  std::vector<std::string> out;
  for (const FormulaSpec& f : formulas)
    if (f.op == Op::Loading && std::find(out.begin(), out.end(), f.lhs) == out.end())
      out.push_back(f.lhs);
  return out;
}

std::vector<std::string> RawModel::manifest_names() const {
  const std::vector<std::string> lat = latent_names();
  std::vector<std::string> out;
  auto add = [&](const std::string& v) {
    if (v == "1") return;
    if (std::find(lat.begin(), lat.end(), v) != lat.end()) return;
    if (std::find(out.begin(), out.end(), v) == out.end()) out.push_back(v);
  };
  for (const FormulaSpec& f : formulas) {
    if (f.op != Op::Loading) add(f.lhs);
    for (const Term& t : f.terms) add(t.var);
  }
  return out;
}

}  // namespace bsem
