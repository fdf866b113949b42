#include "bsem/param_table.hpp"

#include <algorithm>
#include <cmath>
#include <map>
#include <sstream>

#include "bsem/error.hpp"
#include "bsem/priors.hpp"

namespace bsem {

namespace {

bool contains(const std::vector<std::string>& v, const std::string& s) {
  return std::find(v.begin(), v.end(), s) != v.end();
}

bool wants(const BuildOptions& opt, const std::string& what) {
  return contains(opt.group_equal, what);
}

}  // namespace

int ParameterTable::manifest_index(const std::string& v) const {
  auto it = std::find(manifests.begin(), manifests.end(), v);
  return it == manifests.end() ? -1 : static_cast<int>(it - manifests.begin());
}

int ParameterTable::latent_index(const std::string& v) const {
  auto it = std::find(latents.begin(), latents.end(), v);
  return it == latents.end() ? -1 : static_cast<int>(it - latents.begin());
}

std::vector<bool> ParameterTable::latent_endogenous() const {
  std::vector<bool> endo(latents.size(), false);
  for (const ParameterRow& r : rows)
    if (r.op == Op::Regression) {
      const int li = latent_index(r.lhs);
      if (li >= 0) endo[static_cast<std::size_t>(li)] = true;
    }
  return endo;
}

const ParameterRow* ParameterTable::find(const std::string& lhs, Op op, const std::string& rhs,
                                         int group) const {
  for (const ParameterRow& r : rows) {
    if (r.group != group || r.op != op) continue;
    if (r.lhs == lhs && r.rhs == rhs) return &r;
    if (op == Op::Covariance && r.lhs == rhs && r.rhs == lhs) return &r;
  }
  return nullptr;
}

std::string ParameterTable::row_name(const ParameterRow& row) const {
  std::string name = row.op == Op::Intercept ? row.lhs + "~1"
                                             : row.lhs + op_token(row.op) + row.rhs;
  if (row.group > 1) name += ".g" + std::to_string(row.group);
  return name;
}

std::vector<const ParameterRow*> ParameterTable::free_rows() const {
  std::vector<const ParameterRow*> out(static_cast<std::size_t>(npar), nullptr);
  for (const ParameterRow& r : rows)
    if (r.free_index > 0 && !out[static_cast<std::size_t>(r.free_index - 1)])
      out[static_cast<std::size_t>(r.free_index - 1)] = &r;
  return out;
}

std::vector<std::string> ParameterTable::free_names() const {
  std::vector<std::string> out;
  for (const ParameterRow* r : free_rows()) out.push_back(row_name(*r));
  return out;
}

ParameterTable build_table(const RawModel& model, const GroupInfo& groups,
                           const BuildOptions& options) {
  for (const std::string& ge : options.group_equal)
    if (ge != "loadings" && ge != "intercepts")
      throw Error("group_equal supports 'loadings' and 'intercepts', got '" + ge + "'");

  ParameterTable table;
  table.latents = model.latent_names();
  table.manifests = model.manifest_names();
  table.groups = groups;
  table.options = options;
  if (table.manifests.empty()) throw Error("model has no observed variables");

  auto is_latent = [&](const std::string& v) { return contains(table.latents, v); };
  auto is_manifest = [&](const std::string& v) { return contains(table.manifests, v); };

  // structural validation
  for (const FormulaSpec& f : model.formulas) {
    switch (f.op) {
      case Op::Loading:
        for (const Term& t : f.terms)
          if (is_latent(t.var))
            throw Error("higher-order loading '" + f.lhs + " =~ " + t.var + "' not supported");
        break;
      case Op::Regression:
        if (!is_latent(f.lhs))
          throw Error("regression response '" + f.lhs + "' must be a latent variable");
        for (const Term& t : f.terms) {
          if (!is_latent(t.var))
            throw Error("regression predictor '" + t.var + "' must be a latent variable");
          if (t.var == f.lhs) throw Error("'" + f.lhs + "' cannot be regressed on itself");
        }
        break;
      case Op::Covariance:
        for (const Term& t : f.terms)
          if (is_latent(f.lhs) != is_latent(t.var))
            throw Error("covariance '" + f.lhs + " ~~ " + t.var +
                        "' mixes latent and observed variables");
        break;
      case Op::Intercept:
        break;
    }
  }

  const int ng = groups.count();
  int next_id = 1;

  auto push = [&](ParameterRow row) {
    row.id = next_id++;
    table.rows.push_back(std::move(row));
  };

  for (int g = 1; g <= ng; ++g) {
    // user rows, in specification order
    for (const FormulaSpec& f : model.formulas) {
      bool first_term = f.op == Op::Loading;
      for (const Term& t : f.terms) {
        ParameterRow row;
        row.lhs = f.lhs;
        row.op = f.op;
        row.rhs = f.op == Op::Intercept ? "1" : t.var;
        row.group = g;
        row.label = t.mod.label;
        row.prior = t.mod.prior;
        row.start = t.mod.start;
        row.from_user = true;
        if (table.find(row.lhs, row.op, row.rhs, g))
          throw Error("duplicate parameter '" + table.row_name(row) + "'");
        if (t.mod.fix) {
          row.free_index = 0;
          row.fixed_value = *t.mod.fix;
        } else if (first_term && !t.mod.frees_parameter()) {
          // first indicator pins the latent scale
          row.free_index = 0;
          row.fixed_value = 1.0;
        } else {
          row.free_index = -1;  // assigned below
        }
        first_term = false;
        push(std::move(row));
      }
    }

    auto add_default = [&](const std::string& lhs, Op op, const std::string& rhs, bool free,
                           double value) {
      if (table.find(lhs, op, rhs, g)) return;
      ParameterRow row;
      row.lhs = lhs;
      row.op = op;
      row.rhs = rhs;
      row.group = g;
      row.free_index = free ? -1 : 0;
      row.fixed_value = value;
      push(std::move(row));
    };

    for (const std::string& v : table.manifests) add_default(v, Op::Covariance, v, true, 0);
    for (const std::string& v : table.latents) add_default(v, Op::Covariance, v, true, 0);
    for (const std::string& v : table.manifests) add_default(v, Op::Intercept, "1", true, 0);
    for (const std::string& v : table.latents) add_default(v, Op::Intercept, "1", false, 0);

    std::vector<std::string> exo;
    {
      const std::vector<bool> endo = table.latent_endogenous();
      for (std::size_t i = 0; i < table.latents.size(); ++i)
        if (!endo[i]) exo.push_back(table.latents[i]);
    }
    for (std::size_t i = 0; i < exo.size(); ++i)
      for (std::size_t j = i + 1; j < exo.size(); ++j)
        add_default(exo[i], Op::Covariance, exo[j], true, 0);
  }

  // free index assignment: labels unify, group_equal ties later groups to group 1
  std::map<std::string, int> by_label;
  std::map<std::string, int> by_cell;  // "lhs|op|rhs" from group 1
  int next_free = 0;
  for (ParameterRow& row : table.rows) {
    if (row.free_index == 0) continue;
    const std::string cell = row.lhs + "|" + op_token(row.op) + "|" + row.rhs;
    int idx = 0;
    if (!row.label.empty() && by_label.count(row.label)) {
      idx = by_label.at(row.label);
    } else if (row.group > 1 && by_cell.count(cell)) {
      const bool tie =
          (row.op == Op::Loading && wants(options, "loadings")) ||
          (row.op == Op::Intercept && is_manifest(row.lhs) && wants(options, "intercepts"));
      idx = tie ? by_cell.at(cell) : 0;
    }
    if (idx == 0) idx = ++next_free;
    row.free_index = idx;
    if (!row.label.empty()) by_label.emplace(row.label, idx);
    if (row.group == 1) by_cell.emplace(cell, idx);
  }
  table.npar = next_free;

  // equality classes must be homogeneous
  std::vector<const ParameterRow*> firsts(static_cast<std::size_t>(table.npar), nullptr);
  for (const ParameterRow& row : table.rows) {
    if (row.free_index <= 0) continue;
    const ParameterRow*& f = firsts[static_cast<std::size_t>(row.free_index - 1)];
    if (!f) {
      f = &row;
      continue;
    }
    const bool same_kind = f->op == row.op && (f->lhs == f->rhs) == (row.lhs == row.rhs);
    if (!same_kind)
      throw Error("label '" + row.label + "' ties parameters of different kinds");
    if (!f->prior.empty() && !row.prior.empty() && f->prior != row.prior)
      throw Error("label '" + row.label + "' carries conflicting priors");
  }

  // row-level priors must match their parameter class
  for (const ParameterRow& row : table.rows) {
    if (row.prior.empty()) continue;
    const PriorSpec spec = parse_prior(row.prior);
    if (spec.family == PriorFamily::Wishart)
      throw Error("row prior '" + row.prior + "': dwish is only valid as a dpriors entry");
    ParamClass cls = ParamClass::Location;
    if (row.op == Op::Covariance) cls = row.lhs == row.rhs ? ParamClass::Variance : ParamClass::Correlation;
    prior_support(spec, cls);  // throws on incompatibility
  }

  return table;
}

std::vector<GroupMatrices> realize(const ParameterTable& table, const Eigen::VectorXd& free_values) {
  if (free_values.size() != table.npar)
    throw Error("free vector has length " + std::to_string(free_values.size()) + ", table needs " +
                std::to_string(table.npar));
  const int p = table.p();
  const int m = table.m();
  std::vector<GroupMatrices> out(static_cast<std::size_t>(table.ngroups()));
  for (GroupMatrices& g : out) {
    g.nu = Eigen::VectorXd::Zero(p);
    g.alpha = Eigen::VectorXd::Zero(m);
    g.lambda = Eigen::MatrixXd::Zero(p, m);
    g.beta = Eigen::MatrixXd::Zero(m, m);
    g.theta = Eigen::MatrixXd::Zero(p, p);
    g.psi = Eigen::MatrixXd::Zero(m, m);
  }

  for (const ParameterRow& row : table.rows) {
    const double v = row.free_index > 0 ? free_values[row.free_index - 1] : row.fixed_value;
    GroupMatrices& g = out[static_cast<std::size_t>(row.group - 1)];
    switch (row.op) {
      case Op::Loading:
        g.lambda(table.manifest_index(row.rhs), table.latent_index(row.lhs)) = v;
        break;
      case Op::Regression:
        g.beta(table.latent_index(row.lhs), table.latent_index(row.rhs)) = v;
        break;
      case Op::Covariance: {
        const bool latent = table.latent_index(row.lhs) >= 0;
        Eigen::MatrixXd& mat = latent ? g.psi : g.theta;
        const int i = latent ? table.latent_index(row.lhs) : table.manifest_index(row.lhs);
        const int j = latent ? table.latent_index(row.rhs) : table.manifest_index(row.rhs);
        mat(i, j) = v;
        mat(j, i) = v;
        break;
      }
      case Op::Intercept: {
        const int li = table.latent_index(row.lhs);
        if (li >= 0)
          g.alpha(li) = v;
        else
          g.nu(table.manifest_index(row.lhs)) = v;
        break;
      }
    }
  }
  return out;
}

Eigen::VectorXd extract_free(const ParameterTable& table, const std::vector<GroupMatrices>& mats) {
  Eigen::VectorXd out = Eigen::VectorXd::Zero(table.npar);
  std::vector<bool> seen(static_cast<std::size_t>(table.npar), false);
  for (const ParameterRow& row : table.rows) {
    if (row.free_index <= 0 || seen[static_cast<std::size_t>(row.free_index - 1)]) continue;
    const GroupMatrices& g = mats[static_cast<std::size_t>(row.group - 1)];
    double v = 0;
    switch (row.op) {
      case Op::Loading:
        v = g.lambda(table.manifest_index(row.rhs), table.latent_index(row.lhs));
        break;
      case Op::Regression:
        v = g.beta(table.latent_index(row.lhs), table.latent_index(row.rhs));
        break;
      case Op::Covariance: {
        const bool latent = table.latent_index(row.lhs) >= 0;
        const Eigen::MatrixXd& mat = latent ? g.psi : g.theta;
        const int i = latent ? table.latent_index(row.lhs) : table.manifest_index(row.lhs);
        const int j = latent ? table.latent_index(row.rhs) : table.manifest_index(row.rhs);
        v = mat(i, j);
        break;
      }
      case Op::Intercept: {
        const int li = table.latent_index(row.lhs);
        v = li >= 0 ? g.alpha(li) : g.nu(table.manifest_index(row.lhs));
        break;
      }
    }
    out[row.free_index - 1] = v;
    seen[static_cast<std::size_t>(row.free_index - 1)] = true;
  }
  return out;
}

std::string table_to_csv(const ParameterTable& table) {
  std::ostringstream os;
  os.precision(17);
  os << "id,lhs,op,rhs,group,free,value,label,prior,start\n";
  for (const ParameterRow& r : table.rows) {
    os << r.id << "," << r.lhs << "," << op_token(r.op) << ","
       << (r.op == Op::Intercept ? "1" : r.rhs) << "," << r.group << "," << r.free_index << ",";
    if (r.free_index == 0) os << r.fixed_value;
    os << "," << r.label << ",";
    if (!r.prior.empty()) os << "\"" << r.prior << "\"";
    os << ",";
    if (r.start) os << *r.start;
    os << "\n";
  }
  return os.str();
}

ParameterTable table_from_csv(const std::string& text, const GroupInfo& groups) {
  std::istringstream in(text);
  std::string line;
  if (!std::getline(in, line)) throw Error("empty parameter table");

  ParameterTable table;
  table.groups = groups;
  int max_free = 0;
  int line_no = 1;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.empty()) continue;
    // reuse the csv field splitter from the dataset loader semantics
    std::vector<std::string> f;
    {
      std::string cur;
      bool quote = false;
      for (char c : line) {
        if (c == '"') { quote = !quote; continue; }
        if (c == ',' && !quote) { f.push_back(cur); cur.clear(); continue; }
        if (c == '\r') continue;
        cur.push_back(c);
      }
      f.push_back(cur);
    }
    if (f.size() != 10)
      throw Error("parameter table line " + std::to_string(line_no) + ": expected 10 fields");
    ParameterRow r;
    r.id = std::stoi(f[0]);
    r.lhs = f[1];
    if (f[2] == "=~") r.op = Op::Loading;
    else if (f[2] == "~~") r.op = Op::Covariance;
    else if (f[2] == "~1") r.op = Op::Intercept;
    else if (f[2] == "~") r.op = Op::Regression;
    else throw Error("parameter table line " + std::to_string(line_no) + ": bad op '" + f[2] + "'");
    r.rhs = r.op == Op::Intercept ? "1" : f[3];
    r.group = std::stoi(f[4]);
    r.free_index = std::stoi(f[5]);
    if (r.free_index == 0 && !f[6].empty()) r.fixed_value = std::stod(f[6]);
    r.label = f[7];
    r.prior = f[8];
    if (!f[9].empty()) r.start = std::stod(f[9]);
    max_free = std::max(max_free, r.free_index);
    table.rows.push_back(std::move(r));
  }
  if (table.rows.empty()) throw Error("parameter table has no rows");
  table.npar = max_free;

  // variable sets follow row order, which preserves the original model order
  for (const ParameterRow& r : table.rows)
    if (r.op == Op::Loading && !contains(table.latents, r.lhs)) table.latents.push_back(r.lhs);
  auto note_manifest = [&](const std::string& v) {
    if (v == "1" || contains(table.latents, v) || contains(table.manifests, v)) return;
    table.manifests.push_back(v);
  };
  for (const ParameterRow& r : table.rows) {
    if (r.op == Op::Loading) {
      note_manifest(r.rhs);
    } else {
      note_manifest(r.lhs);
      if (r.op != Op::Intercept) note_manifest(r.rhs);
    }
  }

  std::vector<bool> seen(static_cast<std::size_t>(max_free), false);
  for (const ParameterRow& r : table.rows)
    if (r.free_index > 0) seen[static_cast<std::size_t>(r.free_index - 1)] = true;
  if (!std::all_of(seen.begin(), seen.end(), [](bool b) { return b; }))
    throw Error("parameter table free indices are not contiguous");
  for (const ParameterRow& r : table.rows)
    if (r.group < 1 || r.group > groups.count())
      throw Error("parameter table row " + std::to_string(r.id) + " names group " +
                  std::to_string(r.group) + " but data has " + std::to_string(groups.count()));
  return table;
}

}  // namespace bsem
