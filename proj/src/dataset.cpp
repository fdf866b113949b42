#include "bsem/dataset.hpp"

#include <algorithm>
#include <cmath>
#include <cstdlib>
#include <fstream>
#include <limits>
#include <sstream>

#include "bsem/error.hpp"

namespace bsem {

namespace {

std::vector<std::string> split_row(const std::string& line) {
  std::vector<std::string> out;
  std::string cur;
  bool quote = false;
  for (char c : line) {
    if (c == '"') {
      quote = !quote;
      continue;
    }
    if (c == ',' && !quote) {
      out.push_back(cur);
      cur.clear();
      continue;
    }
    if (c == '\r') continue;
    cur.push_back(c);
  }
  out.push_back(cur);
  for (std::string& s : out) {
    while (!s.empty() && std::isspace(static_cast<unsigned char>(s.front()))) s.erase(s.begin());
    while (!s.empty() && std::isspace(static_cast<unsigned char>(s.back()))) s.pop_back();
  }
  return out;
}

bool is_na(const std::string& s) { return s.empty() || s == "NA" || s == "NaN" || s == "nan"; }

}  // namespace

int Dataset::col_index(const std::string& name) const {
  auto it = std::find(columns.begin(), columns.end(), name);
  return it == columns.end() ? -1 : static_cast<int>(it - columns.begin());
}

Dataset load_csv(const std::string& path, const std::string& group_column) {
  std::ifstream in(path);
  if (!in) throw Error("cannot open data file '" + path + "'");

  std::string line;
  if (!std::getline(in, line)) throw Error("data file '" + path + "' is empty");
  std::vector<std::string> header = split_row(line);

  int group_col = -1;
  if (!group_column.empty()) {
    auto it = std::find(header.begin(), header.end(), group_column);
    if (it == header.end())
      throw Error("data file '" + path + "' has no group column '" + group_column + "'");
    group_col = static_cast<int>(it - header.begin());
  }

  Dataset ds;
  for (int j = 0; j < static_cast<int>(header.size()); ++j)
    if (j != group_col) ds.columns.push_back(header[j]);

  std::vector<std::vector<double>> rows;
  int row_no = 0;
  const double nan = std::numeric_limits<double>::quiet_NaN();
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    ++row_no;
    const std::vector<std::string> cells = split_row(line);
    if (cells.size() != header.size())
      throw Error("data file '" + path + "', row " + std::to_string(row_no) + ": expected " +
                  std::to_string(header.size()) + " fields, got " + std::to_string(cells.size()));
    std::vector<double> numeric;
    numeric.reserve(ds.columns.size());
    for (int j = 0; j < static_cast<int>(cells.size()); ++j) {
      if (j == group_col) {
        ds.group.push_back(cells[j]);
        continue;
      }
      const std::string& tok = cells[j];
      if (is_na(tok)) {
        numeric.push_back(nan);
        continue;
      }
      char* end = nullptr;
      const double v = std::strtod(tok.c_str(), &end);
      if (end != tok.c_str() + tok.size()) {
        ds.bad_cells.push_back({row_no, header[j], tok});
        numeric.push_back(nan);
      } else {
        numeric.push_back(v);
      }
    }
    rows.push_back(std::move(numeric));
  }
  if (rows.empty()) throw Error("data file '" + path + "' has no data rows");

  ds.values.resize(static_cast<Eigen::Index>(rows.size()), static_cast<Eigen::Index>(ds.columns.size()));
  for (Eigen::Index i = 0; i < ds.values.rows(); ++i)
    for (Eigen::Index j = 0; j < ds.values.cols(); ++j)
      ds.values(i, j) = rows[static_cast<std::size_t>(i)][static_cast<std::size_t>(j)];
  return ds;
}

GroupInfo group_levels(const Dataset& data) {
  GroupInfo out;
  for (const std::string& lvl : data.group)
    if (std::find(out.levels.begin(), out.levels.end(), lvl) == out.levels.end())
      out.levels.push_back(lvl);
  return out;
}

BoundData bind_data(const Dataset& data, const std::vector<std::string>& model_vars) {
  BoundData out;
  out.vars = model_vars;

  std::vector<int> cols;
  for (const std::string& v : model_vars) {
    const int idx = data.col_index(v);
    if (idx < 0) throw Error("data has no column '" + v + "'");
    cols.push_back(idx);
    for (const BadCell& bc : data.bad_cells)
      if (bc.column == v)
        throw Error("non-numeric value '" + bc.token + "' in column '" + v + "', row " +
                    std::to_string(bc.row));
  }

  const bool grouped = !data.group.empty();
  std::vector<int> keep;
  for (int i = 0; i < static_cast<int>(data.values.rows()); ++i) {
    bool complete = true;
    for (int c : cols)
      if (std::isnan(data.values(i, c))) complete = false;
    if (complete) keep.push_back(i);
  }
  out.n_dropped = static_cast<int>(data.values.rows()) - static_cast<int>(keep.size());
  if (out.n_dropped > 0)
    out.warnings.push_back("dropped " + std::to_string(out.n_dropped) +
                           " incomplete rows (listwise)");
  if (keep.empty()) throw Error("no complete rows for the model variables");

  if (grouped) {
    for (int i : keep) {
      const std::string& lvl = data.group[static_cast<std::size_t>(i)];
      if (std::find(out.groups.levels.begin(), out.groups.levels.end(), lvl) ==
          out.groups.levels.end())
        out.groups.levels.push_back(lvl);
    }
  }

  out.y.resize(static_cast<Eigen::Index>(keep.size()), static_cast<Eigen::Index>(cols.size()));
  out.group_idx.reserve(keep.size());
  for (int r = 0; r < static_cast<int>(keep.size()); ++r) {
    for (int c = 0; c < static_cast<int>(cols.size()); ++c)
      out.y(r, c) = data.values(keep[static_cast<std::size_t>(r)], cols[static_cast<std::size_t>(c)]);
    int g = 0;
    if (grouped) {
      const std::string& lvl = data.group[static_cast<std::size_t>(keep[static_cast<std::size_t>(r)])];
      g = static_cast<int>(std::find(out.groups.levels.begin(), out.groups.levels.end(), lvl) -
                           out.groups.levels.begin());
    }
    out.group_idx.push_back(g);
  }

  out.group_n.assign(static_cast<std::size_t>(out.groups.count()), 0);
  for (int g : out.group_idx) ++out.group_n[static_cast<std::size_t>(g)];
  for (int g = 0; g < out.groups.count(); ++g)
    if (out.group_n[static_cast<std::size_t>(g)] <= static_cast<int>(cols.size()))
      out.warnings.push_back("group " + std::to_string(g + 1) +
                             " has fewer rows than observed variables");
  return out;
}

Eigen::VectorXd BoundData::group_mean(int g) const {
  Eigen::VectorXd m = Eigen::VectorXd::Zero(p());
  int cnt = 0;
  for (int i = 0; i < n(); ++i)
    if (group_idx[static_cast<std::size_t>(i)] == g) {
      m += y.row(i).transpose();
      ++cnt;
    }
  if (cnt == 0) throw Error("empty group in group_mean");
  return m / cnt;
}

Eigen::MatrixXd BoundData::group_cov(int g, bool ml) const {
  const Eigen::VectorXd m = group_mean(g);
  Eigen::MatrixXd s = Eigen::MatrixXd::Zero(p(), p());
  int cnt = 0;
  for (int i = 0; i < n(); ++i)
    if (group_idx[static_cast<std::size_t>(i)] == g) {
      const Eigen::VectorXd d = y.row(i).transpose() - m;
      s += d * d.transpose();
      ++cnt;
    }
  const int div = ml ? cnt : cnt - 1;
  if (div <= 0) throw Error("group too small for a covariance");
  return s / div;
}

void write_csv(const std::string& path, const BoundData& data, const std::string& group_column) {
  std::ofstream out(path);
  if (!out) throw Error("cannot write '" + path + "'");
  out.precision(17);
  for (std::size_t j = 0; j < data.vars.size(); ++j) {
    if (j) out << ",";
    out << data.vars[j];
  }
  const bool grouped = !data.groups.levels.empty();
  if (grouped) out << "," << (group_column.empty() ? "group" : group_column);
  out << "\n";
  for (int i = 0; i < data.n(); ++i) {
    for (int j = 0; j < data.p(); ++j) {
      if (j) out << ",";
      out << data.y(i, j);
    }
    if (grouped)
      out << "," << data.groups.levels[static_cast<std::size_t>(data.group_idx[static_cast<std::size_t>(i)])];
    out << "\n";
  }
}

}  // namespace bsem
