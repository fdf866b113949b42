#include "bsem/expansion.hpp"

#include <cmath>

#include "bsem/error.hpp"

namespace bsem {

namespace {

// free or fixed-nonzero off-diagonal rows of one side, table order
std::vector<PhantomPair> offdiag_rows(const ParameterTable& table, int group, bool latent_side) {
  std::vector<PhantomPair> out;
  for (const ParameterRow& row : table.rows) {
    if (row.group != group || row.op != Op::Covariance || row.lhs == row.rhs) continue;
    const bool is_lat = table.latent_index(row.lhs) >= 0;
    if (is_lat != latent_side) continue;
    if (row.free_index == 0 && row.fixed_value == 0.0) continue;  // structural zero
    int a = latent_side ? table.latent_index(row.lhs) : table.manifest_index(row.lhs);
    int b = latent_side ? table.latent_index(row.rhs) : table.manifest_index(row.rhs);
    if (a < b) std::swap(a, b);
    out.push_back({a, b, row.id});
  }
  return out;
}

}  // namespace

SideExpansion analyze_theta(const ParameterTable& table, int group) {
  SideExpansion side;
  side.dim = table.p();
  side.pairs = offdiag_rows(table, group, false);
  return side;
}

SideExpansion analyze_psi(const ParameterTable& table, int group) {
  SideExpansion side;
  side.dim = table.m();
  std::vector<PhantomPair> pairs = offdiag_rows(table, group, true);
  if (pairs.empty()) return side;

  const std::vector<bool> endo = table.latent_endogenous();

  // connected components of the off-diagonal graph
  const int m = table.m();
  std::vector<int> comp(static_cast<std::size_t>(m), -1);
  int ncomp = 0;
  for (int seed = 0; seed < m; ++seed) {
    if (comp[static_cast<std::size_t>(seed)] >= 0) continue;
    bool touched = false;
    for (const PhantomPair& pp : pairs)
      if (pp.r == seed || pp.c == seed) touched = true;
    if (!touched) continue;
    const int id = ncomp++;
    std::vector<int> stack{seed};
    comp[static_cast<std::size_t>(seed)] = id;
    while (!stack.empty()) {
      const int v = stack.back();
      stack.pop_back();
      for (const PhantomPair& pp : pairs) {
        const int other = pp.r == v ? pp.c : (pp.c == v ? pp.r : -1);
        if (other >= 0 && comp[static_cast<std::size_t>(other)] < 0) {
          comp[static_cast<std::size_t>(other)] = id;
          stack.push_back(other);
        }
      }
    }
  }

  for (int id = 0; id < ncomp; ++id) {
    std::vector<int> members;
    for (int v = 0; v < m; ++v)
      if (comp[static_cast<std::size_t>(v)] == id) members.push_back(v);

    bool eligible = members.size() >= 2;
    for (int v : members)
      if (endo[static_cast<std::size_t>(v)]) eligible = false;

    // every pair inside must be a free, unlabeled, default-prior row
    int inside = 0;
    for (const PhantomPair& pp : pairs) {
      const bool in_r = comp[static_cast<std::size_t>(pp.r)] == id;
      const bool in_c = comp[static_cast<std::size_t>(pp.c)] == id;
      if (in_r != in_c) eligible = false;
      if (!in_r || !in_c) continue;
      ++inside;
      const ParameterRow* row = nullptr;
      for (const ParameterRow& r : table.rows)
        if (r.id == pp.row_id) row = &r;
      if (!row || row->free_index == 0 || !row->label.empty() || !row->prior.empty())
        eligible = false;
    }
    const int need = static_cast<int>(members.size() * (members.size() - 1) / 2);
    if (inside != need) eligible = false;

    // diagonal rows must also be stock
    for (int v : members) {
      const ParameterRow* row =
          table.find(table.latents[static_cast<std::size_t>(v)], Op::Covariance,
                     table.latents[static_cast<std::size_t>(v)], group);
      if (!row || row->free_index == 0 || !row->label.empty() || !row->prior.empty())
        eligible = false;
    }

    if (eligible) {
      side.blocks.push_back(members);
    } else {
      for (const PhantomPair& pp : pairs)
        if (comp[static_cast<std::size_t>(pp.r)] == id) side.pairs.push_back(pp);
    }
  }
  return side;
}

SrsWork srs_forward(const SideExpansion& side, const Eigen::VectorXd& variances,
                    const Eigen::VectorXd& rho) {
  const int dim = side.dim;
  const int np = static_cast<int>(side.pairs.size());
  if (variances.size() != dim) throw Error("srs_forward: variance vector has wrong length");
  if (rho.size() != np) throw Error("srs_forward: rho vector has wrong length");

  SrsWork work;
  work.lam = Eigen::MatrixXd::Zero(dim, np);
  work.resid_var = variances;

  Eigen::VectorXd abs_sum = Eigen::VectorXd::Zero(dim);
  for (int q = 0; q < np; ++q) {
    const PhantomPair& pp = side.pairs[static_cast<std::size_t>(q)];
    const double r = rho[q];
    const double a = std::abs(r);
    work.lam(pp.c, q) = std::sqrt(a * variances[pp.c]);
    work.lam(pp.r, q) = sign_or_minus(r) * std::sqrt(a * variances[pp.r]);
    abs_sum[pp.c] += a;
    abs_sum[pp.r] += a;
  }
  for (int i = 0; i < dim; ++i) {
    work.resid_var[i] = variances[i] * (1.0 - abs_sum[i]);
    if (variances[i] <= 0.0 || (abs_sum[i] > 0.0 && work.resid_var[i] <= 0.0)) work.valid = false;
  }
  return work;
}

Eigen::MatrixXd phantom_reconstruct(const Eigen::MatrixXd& lam, const Eigen::VectorXd& psi_d,
                                    const Eigen::VectorXd& resid_var) {
  Eigen::MatrixXd cov = lam * psi_d.asDiagonal() * lam.transpose();
  cov += Eigen::MatrixXd(resid_var.asDiagonal());
  return cov;
}

Eigen::MatrixXd inferential_cov(const SideExpansion& side, const Eigen::VectorXd& variances,
                                const Eigen::VectorXd& rho) {
  Eigen::MatrixXd cov = Eigen::MatrixXd(variances.asDiagonal());
  for (int q = 0; q < static_cast<int>(side.pairs.size()); ++q) {
    const PhantomPair& pp = side.pairs[static_cast<std::size_t>(q)];
    const double v = rho[q] * std::sqrt(variances[pp.r] * variances[pp.c]);
    cov(pp.r, pp.c) = v;
    cov(pp.c, pp.r) = v;
  }
  return cov;
}

SrsPairPriors srs_matched_priors(double df, double s_ii, int p) {
  const double shape = 0.5 * (df - p + 1.0);
  if (shape <= 0.0) throw Error("srs prior matching needs df > p - 1");
  SrsPairPriors out;
  out.variance.family = PriorFamily::Gamma;  // precision-scale encoding of IG(shape, s_ii/2)
  out.variance.p1 = shape;
  out.variance.p2 = 0.5 * s_ii;
  out.rho.family = PriorFamily::Beta;
  out.rho.p1 = shape;
  out.rho.p2 = shape;
  return out;
}

}  // namespace bsem
