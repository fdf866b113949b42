#pragma once

#include <optional>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "bsem/dataset.hpp"
#include "bsem/model_syntax.hpp"

namespace bsem {

struct ParameterRow {
  int id = 0;  // 1-based, stable across serialization
  std::string lhs;
  Op op = Op::Regression;
  std::string rhs;  // "1" for intercepts
  int group = 1;    // 1-based
  int free_index = 0;  // 0 = fixed
  double fixed_value = 0.0;
  std::string label;
  std::string prior;  // row-level prior text, empty = use defaults
  std::optional<double> start;
  bool from_user = false;
};

struct BuildOptions {
  std::vector<std::string> group_equal;  // subset of {"loadings","intercepts"}
};

struct ParameterTable {
  std::vector<ParameterRow> rows;
  std::vector<std::string> manifests;
  std::vector<std::string> latents;
  GroupInfo groups;
  BuildOptions options;
  int npar = 0;

  int ngroups() const { return groups.count(); }
  int p() const { return static_cast<int>(manifests.size()); }
  int m() const { return static_cast<int>(latents.size()); }
  int manifest_index(const std::string& v) const;  // -1 if absent
  int latent_index(const std::string& v) const;

  // endogenous = appears as lhs of a latent regression
  std::vector<bool> latent_endogenous() const;

  const ParameterRow* find(const std::string& lhs, Op op, const std::string& rhs,
                           int group) const;  // ~~ matches both orientations

  std::string row_name(const ParameterRow& row) const;
  std::vector<std::string> free_names() const;           // one per free index
  std::vector<const ParameterRow*> free_rows() const;    // first row per free index
};

// identification defaults, group replication, equality constraints
ParameterTable build_table(const RawModel& model, const GroupInfo& groups,
                           const BuildOptions& options = {});

struct GroupMatrices {
  Eigen::VectorXd nu, alpha;
  Eigen::MatrixXd lambda, beta, theta, psi;
};

// free-parameter vector (inferential scale: covariances for off-diagonal
// rows) -> model matrices per group
std::vector<GroupMatrices> realize(const ParameterTable& table, const Eigen::VectorXd& free_values);

// inverse of realize on the free coordinates
Eigen::VectorXd extract_free(const ParameterTable& table, const std::vector<GroupMatrices>& mats);

std::string table_to_csv(const ParameterTable& table);
ParameterTable table_from_csv(const std::string& text, const GroupInfo& groups);

}  // namespace bsem
