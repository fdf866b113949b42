#pragma once

#include <string>
#include <vector>

#include <Eigen/Dense>

namespace bsem {

struct GroupInfo {
  std::vector<std::string> levels;  // first-appearance order
  int count() const { return static_cast<int>(levels.empty() ? 1 : levels.size()); }
  bool operator==(const GroupInfo&) const = default;
};

struct BadCell {
  int row = 0;  // 1-based data row (excluding header)
  std::string column;
  std::string token;
};

struct Dataset {
  std::vector<std::string> columns;
  Eigen::MatrixXd values;          // NaN for empty / NA / non-numeric cells
  std::vector<std::string> group;  // empty when no group column was named
  std::vector<BadCell> bad_cells;  // non-numeric tokens other than NA markers

  int col_index(const std::string& name) const;  // -1 if absent
};

Dataset load_csv(const std::string& path, const std::string& group_column = "");

// model-variable view: selects columns, drops incomplete rows, orders groups
struct BoundData {
  std::vector<std::string> vars;
  Eigen::MatrixXd y;  // n x p, complete cases
  std::vector<int> group_idx;
  GroupInfo groups;
  std::vector<int> group_n;
  int n_dropped = 0;
  std::vector<std::string> warnings;

  int n() const { return static_cast<int>(y.rows()); }
  int p() const { return static_cast<int>(y.cols()); }
  Eigen::VectorXd group_mean(int g) const;
  Eigen::MatrixXd group_cov(int g, bool ml = true) const;  // ml: divisor n
};

// first-appearance ordering of the group labels; empty when ungrouped
GroupInfo group_levels(const Dataset& data);

BoundData bind_data(const Dataset& data, const std::vector<std::string>& model_vars);

void write_csv(const std::string& path, const BoundData& data, const std::string& group_column);

}  // namespace bsem
