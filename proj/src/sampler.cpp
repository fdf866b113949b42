#include "bsem/sampler.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <sstream>
#include <thread>

#include <boost/math/distributions/normal.hpp>

#include "bsem/diagnostics.hpp"
#include "bsem/error.hpp"

namespace bsem {

namespace {
constexpr double kNegInf = -std::numeric_limits<double>::infinity();
}

NormalCond normal_conditional(double mean0, double prec0, double wsum2, double wsum_pr) {
  const double prec = prec0 + wsum2;
  return {(prec0 * mean0 + wsum_pr) / prec, 1.0 / prec};
}

GammaCond gamma_precision_conditional(double shape0, double rate0, double ss, int n) {
  return {shape0 + 0.5 * n, rate0 + 0.5 * ss};
}

bool ModelPlan::has_phantom_pairs() const {
  for (const SideExpansion& s : theta_side)
    if (!s.pairs.empty()) return true;
  for (const SideExpansion& s : psi_side)
    if (!s.pairs.empty()) return true;
  return false;
}

// ---------------------------------------------------------------- plan

namespace {

const ParameterRow& row_by_id(const ParameterTable& table, int id) {
  for (const ParameterRow& r : table.rows)
    if (r.id == id) return r;
  throw Error("internal: row id not found");
}

Slot slot_of(const ParameterRow* row) {
  if (!row) return {0, 0.0};
  return row->free_index > 0 ? Slot{row->free_index, 0.0} : Slot{0, row->fixed_value};
}

std::string dp_key(ParamKind kind) {
  switch (kind) {
    case ParamKind::NuIntercept: return "nu";
    case ParamKind::AlphaIntercept: return "alpha";
    case ParamKind::Loading: return "lambda";
    case ParamKind::Regression: return "beta";
    case ParamKind::ManifestVar: return "itheta";
    case ParamKind::LatentVar: return "ipsi";
    case ParamKind::Rho: return "rho";
    case ParamKind::BlockCell: return "ibpsi";
  }
  return "nu";
}

Transform pick_transform(double lo, double hi) {
  const bool lo_inf = !std::isfinite(lo);
  const bool hi_inf = !std::isfinite(hi);
  if (lo_inf && hi_inf) return Transform::Identity;
  if (!lo_inf && hi_inf && lo == 0.0) return Transform::Log;
  if (!lo_inf && !hi_inf && lo == -1.0 && hi == 1.0) return Transform::Atanh;
  if (!lo_inf && !hi_inf) return Transform::Logit;
  return Transform::Identity;  // one-sided nonzero bound; prior rejects outside
}

}  // namespace

ModelPlan make_plan(const ParameterTable& table, const DefaultPriors& dp, const std::string& cp) {
  if (cp != "srs" && cp != "fa") throw Error("cp must be 'srs' or 'fa'");
  ModelPlan plan;
  plan.table = &table;
  plan.dp = dp;
  plan.cp = cp;

  const int G = table.ngroups();
  const int p = table.p();
  const int m = table.m();

  for (int g = 1; g <= G; ++g) {
    plan.theta_side.push_back(analyze_theta(table, g));
    plan.psi_side.push_back(analyze_psi(table, g));
  }
  for (int g = 1; g < G; ++g) {
    if (plan.theta_side[g].pairs.size() != plan.theta_side[0].pairs.size() ||
        plan.psi_side[g].pairs.size() != plan.psi_side[0].pairs.size() ||
        plan.psi_side[g].blocks != plan.psi_side[0].blocks)
      throw Error("covariance structure differs between groups");
  }

  plan.theta_var.resize(G);
  plan.psi_var.resize(G);
  plan.theta_rho.resize(G);
  plan.psi_rho.resize(G);
  for (int g = 0; g < G; ++g) {
    for (int j = 0; j < p; ++j) {
      const ParameterRow* row =
          table.find(table.manifests[j], Op::Covariance, table.manifests[j], g + 1);
      if (!row) throw Error("missing variance row for " + table.manifests[j]);
      plan.theta_var[g].push_back(slot_of(row));
    }
    for (int k = 0; k < m; ++k) {
      const ParameterRow* row =
          table.find(table.latents[k], Op::Covariance, table.latents[k], g + 1);
      if (!row) throw Error("missing variance row for " + table.latents[k]);
      plan.psi_var[g].push_back(slot_of(row));
    }
    for (const PhantomPair& pp : plan.theta_side[g].pairs)
      plan.theta_rho[g].push_back(slot_of(&row_by_id(table, pp.row_id)));
    for (const PhantomPair& pp : plan.psi_side[g].pairs)
      plan.psi_rho[g].push_back(slot_of(&row_by_id(table, pp.row_id)));
  }

  // inverse-Wishart blocks; member intercepts must be fixed so the
  // conditional of the block stays conjugate
  const bool ibpsi_user = dp.overridden.count("ibpsi") > 0;
  std::vector<int> block_of_fi(static_cast<std::size_t>(table.npar), -1);
  for (int g = 0; g < G; ++g) {
    for (const std::vector<int>& members : plan.psi_side[g].blocks) {
      BlockPlan bp;
      bp.group = g + 1;
      bp.members = members;
      bp.df0 = ibpsi_user ? dp.at("ibpsi").p2 : static_cast<double>(members.size()) + 1.0;
      for (std::size_t i = 0; i < members.size(); ++i) {
        const std::string& li = table.latents[static_cast<std::size_t>(members[i])];
        const ParameterRow* arow = table.find(li, Op::Intercept, "1", g + 1);
        if (arow && arow->free_index > 0)
          throw Error("free latent intercept inside a covariance block is unsupported");
        for (std::size_t j = i; j < members.size(); ++j) {
          const ParameterRow* row = table.find(
              li, Op::Covariance, table.latents[static_cast<std::size_t>(members[j])], g + 1);
          if (!row || row->free_index == 0) throw Error("internal: incomplete covariance block");
          bp.cells.push_back({static_cast<int>(i), static_cast<int>(j), row->free_index});
          block_of_fi[static_cast<std::size_t>(row->free_index - 1)] =
              static_cast<int>(plan.blocks.size());
        }
      }
      plan.blocks.push_back(std::move(bp));
    }
  }

  plan.params.resize(static_cast<std::size_t>(table.npar));
  plan.prior_display.resize(static_cast<std::size_t>(table.npar));
  std::vector<std::vector<const ParameterRow*>> rows_of(static_cast<std::size_t>(table.npar));
  for (const ParameterRow& r : table.rows)
    if (r.free_index > 0) rows_of[static_cast<std::size_t>(r.free_index - 1)].push_back(&r);

  for (int fi = 0; fi < table.npar; ++fi) {
    ParamPlan& pp = plan.params[static_cast<std::size_t>(fi)];
    const std::vector<const ParameterRow*>& rows = rows_of[static_cast<std::size_t>(fi)];
    if (rows.empty()) throw Error("internal: unused free index");
    const ParameterRow& first = *rows.front();

    if (block_of_fi[static_cast<std::size_t>(fi)] >= 0) {
      pp.kind = ParamKind::BlockCell;
      pp.cls = first.lhs == first.rhs ? ParamClass::Variance : ParamClass::Correlation;
      pp.rule = UpdateRule::Block;
      pp.block_id = block_of_fi[static_cast<std::size_t>(fi)];
      std::ostringstream os;
      os << "dwish(iden," << plan.blocks[static_cast<std::size_t>(pp.block_id)].df0 << ")";
      plan.prior_display[static_cast<std::size_t>(fi)] = os.str();
      continue;
    }

    const bool latent_lhs = table.latent_index(first.lhs) >= 0;
    switch (first.op) {
      case Op::Loading: pp.kind = ParamKind::Loading; break;
      case Op::Regression: pp.kind = ParamKind::Regression; break;
      case Op::Intercept:
        pp.kind = latent_lhs ? ParamKind::AlphaIntercept : ParamKind::NuIntercept;
        break;
      case Op::Covariance:
        if (first.lhs == first.rhs)
          pp.kind = latent_lhs ? ParamKind::LatentVar : ParamKind::ManifestVar;
        else
          pp.kind = ParamKind::Rho;
        break;
    }
    pp.cls = pp.kind == ParamKind::Rho
                 ? ParamClass::Correlation
                 : (pp.kind == ParamKind::ManifestVar || pp.kind == ParamKind::LatentVar
                        ? ParamClass::Variance
                        : ParamClass::Location);

    std::string prior_text;
    for (const ParameterRow* r : rows)
      if (!r->prior.empty()) prior_text = r->prior;
    pp.prior = prior_text.empty() ? dp.at(dp_key(pp.kind)) : parse_prior(prior_text);
    plan.prior_display[static_cast<std::size_t>(fi)] = pp.prior.src;
    std::tie(pp.lo, pp.hi) = prior_support(pp.prior, pp.cls);

    for (const ParameterRow* r : rows) {
      Cell cell;
      cell.group = r->group;
      switch (pp.kind) {
        case ParamKind::NuIntercept: cell.a = table.manifest_index(r->lhs); break;
        case ParamKind::AlphaIntercept: cell.a = table.latent_index(r->lhs); break;
        case ParamKind::Loading:
          cell.a = table.manifest_index(r->rhs);
          cell.b = table.latent_index(r->lhs);
          break;
        case ParamKind::Regression:
          cell.a = table.latent_index(r->lhs);
          cell.b = table.latent_index(r->rhs);
          break;
        case ParamKind::ManifestVar: cell.a = table.manifest_index(r->lhs); break;
        case ParamKind::LatentVar: cell.a = table.latent_index(r->lhs); break;
        case ParamKind::Rho: {
          const SideExpansion& side =
              latent_lhs ? plan.psi_side[static_cast<std::size_t>(r->group - 1)]
                         : plan.theta_side[static_cast<std::size_t>(r->group - 1)];
          for (std::size_t q = 0; q < side.pairs.size(); ++q)
            if (side.pairs[q].row_id == r->id) cell.side_pair = static_cast<int>(q);
          if (cell.side_pair < 0) throw Error("internal: covariance row missing its pair");
          break;
        }
        case ParamKind::BlockCell: break;
      }
      pp.cells.push_back(cell);
    }
    if (pp.kind == ParamKind::Rho) pp.theta_side = !latent_lhs;

    if (pp.kind == ParamKind::ManifestVar || pp.kind == ParamKind::LatentVar) {
      pp.theta_side = pp.kind == ParamKind::ManifestVar;
      for (const Cell& c : pp.cells) {
        const SideExpansion& side = pp.theta_side
                                        ? plan.theta_side[static_cast<std::size_t>(c.group - 1)]
                                        : plan.psi_side[static_cast<std::size_t>(c.group - 1)];
        for (const PhantomPair& pr : side.pairs)
          if (pr.r == c.a || pr.c == c.a) pp.pair_member = true;
      }
    }

    if (pp.kind == ParamKind::Rho) {
      pp.rule = UpdateRule::Metropolis;
    } else if (pp.cls == ParamClass::Variance) {
      const bool conj = !pp.pair_member && pp.prior.family == PriorFamily::Gamma &&
                        pp.prior.tag == ScaleTag::None && !pp.prior.trunc;
      pp.rule = conj ? UpdateRule::ConjGammaPrec : UpdateRule::Metropolis;
    } else {
      if (pp.prior.family == PriorFamily::Normal && !pp.prior.trunc)
        pp.rule = UpdateRule::ConjNormal;
      else if (pp.prior.family == PriorFamily::Normal || pp.prior.family == PriorFamily::Uniform)
        pp.rule = UpdateRule::TruncNormal;
      else
        pp.rule = UpdateRule::Metropolis;
    }
    if (cp == "fa" && (pp.kind == ParamKind::Rho || pp.pair_member)) {
      pp.rule = UpdateRule::Derived;
      plan.prior_display[static_cast<std::size_t>(fi)] = "";
    }
    pp.transform = pick_transform(pp.lo, pp.hi);
  }

  if (cp == "fa") {
    // every pair member and every pair covariance must be free so the
    // derived values have somewhere to live
    for (int g = 0; g < G; ++g) {
      auto check_side = [&](const SideExpansion& side, const std::vector<Slot>& rho_slots,
                            const std::vector<Slot>& var_slots) {
        for (std::size_t q = 0; q < side.pairs.size(); ++q) {
          const PhantomPair& pr = side.pairs[q];
          if (rho_slots[q].fi == 0)
            throw Error("cp=fa cannot honor a fixed covariance inside an expanded pair");
          if (var_slots[static_cast<std::size_t>(pr.r)].fi == 0 ||
              var_slots[static_cast<std::size_t>(pr.c)].fi == 0)
            throw Error("cp=fa cannot honor a fixed variance on a covariance pair member");
        }
      };
      check_side(plan.theta_side[static_cast<std::size_t>(g)],
                 plan.theta_rho[static_cast<std::size_t>(g)],
                 plan.theta_var[static_cast<std::size_t>(g)]);
      check_side(plan.psi_side[static_cast<std::size_t>(g)],
                 plan.psi_rho[static_cast<std::size_t>(g)],
                 plan.psi_var[static_cast<std::size_t>(g)]);
    }
  }
  return plan;
}

// ---------------------------------------------------------------- runtime

namespace {

struct GroupWork {
  Eigen::VectorXd nu, alpha;
  Eigen::MatrixXd lambda, beta;
  Eigen::VectorXd theta_var, psi_var;    // inferential variances
  Eigen::VectorXd theta_star, psi_star;  // working residual variances
  Eigen::MatrixXd lam_d;                 // p x vT phantom loadings
  Eigen::VectorXd psi_d_t;               // vT phantom variances
  Eigen::MatrixXd b_e;                   // m x vP
  Eigen::VectorXd psi_d_p;               // vP
  Eigen::VectorXd rho_t, rho_p;          // effective correlations
  std::vector<Eigen::MatrixXd> block_cov;
  std::vector<Eigen::LLT<Eigen::MatrixXd>> block_llt;
  std::vector<int> lat_block;  // -1 or local block index
  bool valid = true;
};

struct Chain {
  Eigen::VectorXd s;    // sampled coordinates, one per free index
  Eigen::MatrixXd eta;  // n x m latent scores
  Eigen::MatrixXd d_t;  // n x vT phantom scores, measurement side
  Eigen::MatrixXd d_p;  // n x vP phantom scores, structural side
  std::vector<Eigen::VectorXd> fa_t_lam_c, fa_t_lam_r, fa_t_psi, fa_t_resid;
  std::vector<Eigen::VectorXd> fa_p_lam_c, fa_p_lam_r, fa_p_psi, fa_p_resid;
  Eigen::VectorXd log_scale;
  Eigen::VectorXi acc, att;
  Rng rng{1, 0};
  std::vector<GroupWork> work;
  Eigen::VectorXd init_inferential;
};

// table rows resolved to integer coordinates once, so rebuilds never touch strings
struct Assign {
  enum class Target { Nu, Alpha, Lambda, Beta } target = Target::Nu;
  int i = 0, j = 0;
  Slot slot;
};

class Runtime {
 public:
  Runtime(const ModelPlan& plan, const BoundData& data, const SamplerConfig& config)
      : plan_(plan), data_(data), config_(config), table_(*plan.table) {
    G_ = table_.ngroups();
    p_ = table_.p();
    m_ = table_.m();
    vt_ = static_cast<int>(plan_.theta_side[0].pairs.size());
    vp_ = static_cast<int>(plan_.psi_side[0].pairs.size());

    cases_.resize(static_cast<std::size_t>(G_));
    for (int i = 0; i < data_.n(); ++i)
      cases_[static_cast<std::size_t>(data_.group_idx[static_cast<std::size_t>(i)])].push_back(i);

    assigns_.resize(static_cast<std::size_t>(G_));
    for (const ParameterRow& r : table_.rows) {
      if (r.op == Op::Covariance) continue;
      Assign a;
      switch (r.op) {
        case Op::Loading:
          a.target = Assign::Target::Lambda;
          a.i = table_.manifest_index(r.rhs);
          a.j = table_.latent_index(r.lhs);
          break;
        case Op::Regression:
          a.target = Assign::Target::Beta;
          a.i = table_.latent_index(r.lhs);
          a.j = table_.latent_index(r.rhs);
          break;
        case Op::Intercept: {
          const int li = table_.latent_index(r.lhs);
          if (li >= 0) {
            a.target = Assign::Target::Alpha;
            a.i = li;
          } else {
            a.target = Assign::Target::Nu;
            a.i = table_.manifest_index(r.lhs);
          }
          break;
        }
        default: break;
      }
      a.slot = r.free_index > 0 ? Slot{r.free_index, 0.0} : Slot{0, r.fixed_value};
      assigns_[static_cast<std::size_t>(r.group - 1)].push_back(a);
    }

    group_blocks_.resize(static_cast<std::size_t>(G_));
    for (std::size_t b = 0; b < plan_.blocks.size(); ++b)
      group_blocks_[static_cast<std::size_t>(plan_.blocks[b].group - 1)].push_back(
          static_cast<int>(b));
  }

  std::vector<Chain> make_chains() {
    std::vector<Chain> chains(static_cast<std::size_t>(config_.chains));
    for (int c = 0; c < config_.chains; ++c) {
      Chain& ch = chains[static_cast<std::size_t>(c)];
      ch.rng = Rng(config_.seed, static_cast<std::uint64_t>(c + 1));
      ch.s = initial_s(c, ch.rng);
      ch.eta = Eigen::MatrixXd::Zero(data_.n(), m_);
      ch.d_t = Eigen::MatrixXd::Zero(data_.n(), vt_);
      ch.d_p = Eigen::MatrixXd::Zero(data_.n(), vp_);
      ch.log_scale = Eigen::VectorXd::Constant(table_.npar, std::log(0.5));
      ch.acc = Eigen::VectorXi::Zero(table_.npar);
      ch.att = Eigen::VectorXi::Zero(table_.npar);
      init_fa_store(ch);
      ch.work.resize(static_cast<std::size_t>(G_));
      for (int g = 0; g < G_; ++g) build_work(ch, g);
      ch.init_inferential = inferential(ch);
    }
    return chains;
  }

  void iterate(Chain& ch, bool adapting, int batch_no) const {
    update_latents(ch);
    update_parameters(ch);
    if (adapting) maybe_adapt(ch, batch_no);
  }

  // correlations folded back to covariances for recording
  Eigen::VectorXd inferential(const Chain& ch) const {
    Eigen::VectorXd t = ch.s;
    for (int g = 0; g < G_; ++g) {
      const GroupWork& w = ch.work[static_cast<std::size_t>(g)];
      for (int q = 0; q < vt_; ++q) {
        const Slot& slot = plan_.theta_rho[static_cast<std::size_t>(g)][static_cast<std::size_t>(q)];
        if (slot.fi > 0) {
          const PhantomPair& pr =
              plan_.theta_side[static_cast<std::size_t>(g)].pairs[static_cast<std::size_t>(q)];
          t[slot.fi - 1] = w.rho_t[q] * std::sqrt(w.theta_var[pr.r] * w.theta_var[pr.c]);
        }
      }
      for (int q = 0; q < vp_; ++q) {
        const Slot& slot = plan_.psi_rho[static_cast<std::size_t>(g)][static_cast<std::size_t>(q)];
        if (slot.fi > 0) {
          const PhantomPair& pr =
              plan_.psi_side[static_cast<std::size_t>(g)].pairs[static_cast<std::size_t>(q)];
          t[slot.fi - 1] = w.rho_p[q] * std::sqrt(w.psi_var[pr.r] * w.psi_var[pr.c]);
        }
      }
    }
    return t;
  }

  void reset_counters(Chain& ch) const {
    ch.acc.setZero();
    ch.att.setZero();
  }

 private:
  const ModelPlan& plan_;
  const BoundData& data_;
  const SamplerConfig& config_;
  const ParameterTable& table_;
  int G_ = 0, p_ = 0, m_ = 0, vt_ = 0, vp_ = 0;
  std::vector<std::vector<int>> cases_;
  std::vector<std::vector<Assign>> assigns_;
  std::vector<std::vector<int>> group_blocks_;

  double slot_value(const Chain& ch, const Slot& slot) const {
    return slot.fi > 0 ? ch.s[slot.fi - 1] : slot.fixed;
  }

  // ---- working matrices ----

  void build_work(Chain& ch, int g) const {
    GroupWork& w = ch.work[static_cast<std::size_t>(g)];
    w.nu = Eigen::VectorXd::Zero(p_);
    w.alpha = Eigen::VectorXd::Zero(m_);
    w.lambda = Eigen::MatrixXd::Zero(p_, m_);
    w.beta = Eigen::MatrixXd::Zero(m_, m_);
    w.valid = true;

    for (const Assign& a : assigns_[static_cast<std::size_t>(g)]) {
      const double v = slot_value(ch, a.slot);
      switch (a.target) {
        case Assign::Target::Nu: w.nu[a.i] = v; break;
        case Assign::Target::Alpha: w.alpha[a.i] = v; break;
        case Assign::Target::Lambda: w.lambda(a.i, a.j) = v; break;
        case Assign::Target::Beta: w.beta(a.i, a.j) = v; break;
      }
    }

    w.theta_var.resize(p_);
    for (int j = 0; j < p_; ++j)
      w.theta_var[j] =
          slot_value(ch, plan_.theta_var[static_cast<std::size_t>(g)][static_cast<std::size_t>(j)]);
    w.psi_var.resize(m_);
    for (int k = 0; k < m_; ++k)
      w.psi_var[k] =
          slot_value(ch, plan_.psi_var[static_cast<std::size_t>(g)][static_cast<std::size_t>(k)]);

    build_side(ch, g, true, w);
    build_side(ch, g, false, w);

    w.lat_block.assign(static_cast<std::size_t>(m_), -1);
    w.block_cov.clear();
    w.block_llt.clear();
    for (int b : group_blocks_[static_cast<std::size_t>(g)]) {
      const BlockPlan& bp = plan_.blocks[static_cast<std::size_t>(b)];
      const int d = static_cast<int>(bp.members.size());
      Eigen::MatrixXd cov(d, d);
      for (const std::array<int, 3>& cell : bp.cells) {
        const double v = ch.s[cell[2] - 1];
        cov(cell[0], cell[1]) = v;
        cov(cell[1], cell[0]) = v;
      }
      const int local = static_cast<int>(w.block_cov.size());
      for (int a = 0; a < d; ++a)
        w.lat_block[static_cast<std::size_t>(bp.members[static_cast<std::size_t>(a)])] = local;
      w.block_cov.push_back(cov);
      w.block_llt.emplace_back(cov);
      if (w.block_llt.back().info() != Eigen::Success) w.valid = false;
    }
  }

  void build_side(Chain& ch, int g, bool theta, GroupWork& w) const {
    const SideExpansion& side = theta ? plan_.theta_side[static_cast<std::size_t>(g)]
                                      : plan_.psi_side[static_cast<std::size_t>(g)];
    const std::vector<Slot>& rho_slots = theta ? plan_.theta_rho[static_cast<std::size_t>(g)]
                                               : plan_.psi_rho[static_cast<std::size_t>(g)];
    const Eigen::VectorXd& var = theta ? w.theta_var : w.psi_var;
    const int dim = theta ? p_ : m_;
    const int np = static_cast<int>(side.pairs.size());

    Eigen::MatrixXd& lam = theta ? w.lam_d : w.b_e;
    Eigen::VectorXd& psi_d = theta ? w.psi_d_t : w.psi_d_p;
    Eigen::VectorXd& star = theta ? w.theta_star : w.psi_star;
    Eigen::VectorXd& rho = theta ? w.rho_t : w.rho_p;

    lam = Eigen::MatrixXd::Zero(dim, np);
    psi_d = Eigen::VectorXd::Ones(np);
    star = var;
    rho = Eigen::VectorXd::Zero(np);
    for (int i = 0; i < dim; ++i)
      if (var[i] <= 0.0) w.valid = false;
    if (np == 0) return;

    if (plan_.cp == "fa") {
      const Eigen::VectorXd& lam_c = theta ? ch.fa_t_lam_c[static_cast<std::size_t>(g)]
                                           : ch.fa_p_lam_c[static_cast<std::size_t>(g)];
      const Eigen::VectorXd& lam_r = theta ? ch.fa_t_lam_r[static_cast<std::size_t>(g)]
                                           : ch.fa_p_lam_r[static_cast<std::size_t>(g)];
      const Eigen::VectorXd& psid = theta ? ch.fa_t_psi[static_cast<std::size_t>(g)]
                                          : ch.fa_p_psi[static_cast<std::size_t>(g)];
      const Eigen::VectorXd& resid = theta ? ch.fa_t_resid[static_cast<std::size_t>(g)]
                                           : ch.fa_p_resid[static_cast<std::size_t>(g)];
      psi_d = psid;
      for (int q = 0; q < np; ++q) {
        const PhantomPair& pr = side.pairs[static_cast<std::size_t>(q)];
        lam(pr.c, q) = lam_c[q];
        lam(pr.r, q) = lam_r[q];
        star[pr.c] = resid[pr.c];
        star[pr.r] = resid[pr.r];
      }
      for (int q = 0; q < np; ++q) {
        const PhantomPair& pr = side.pairs[static_cast<std::size_t>(q)];
        const double cov = lam_c[q] * lam_r[q] * psid[q];
        const double denom = std::sqrt(var[pr.r] * var[pr.c]);
        rho[q] = denom > 0 ? cov / denom : 0.0;
      }
      return;
    }

    Eigen::VectorXd abs_sum = Eigen::VectorXd::Zero(dim);
    for (int q = 0; q < np; ++q) {
      const PhantomPair& pr = side.pairs[static_cast<std::size_t>(q)];
      const Slot& slot = rho_slots[static_cast<std::size_t>(q)];
      double r;
      if (slot.fi > 0) {
        r = ch.s[slot.fi - 1];
      } else {
        // fixed covariance: the correlation it implies moves with the variances
        const double denom = std::sqrt(var[pr.r] * var[pr.c]);
        r = denom > 0 ? slot.fixed / denom : 0.0;
      }
      if (!(r > -1.0 && r < 1.0)) w.valid = false;
      rho[q] = r;
      const double a = std::abs(r);
      lam(pr.c, q) = std::sqrt(a * std::max(var[pr.c], 0.0));
      lam(pr.r, q) = sign_or_minus(r) * std::sqrt(a * std::max(var[pr.r], 0.0));
      abs_sum[pr.c] += a;
      abs_sum[pr.r] += a;
    }
    for (int i = 0; i < dim; ++i) {
      star[i] = var[i] * (1.0 - abs_sum[i]);
      if (star[i] <= 0.0) w.valid = false;
    }
  }

  void init_fa_store(Chain& ch) const {
    ch.fa_t_lam_c.assign(static_cast<std::size_t>(G_), Eigen::VectorXd::Zero(vt_));
    ch.fa_t_lam_r.assign(static_cast<std::size_t>(G_), Eigen::VectorXd::Zero(vt_));
    ch.fa_t_psi.assign(static_cast<std::size_t>(G_), Eigen::VectorXd::Ones(vt_));
    ch.fa_t_resid.assign(static_cast<std::size_t>(G_), Eigen::VectorXd::Ones(p_));
    ch.fa_p_lam_c.assign(static_cast<std::size_t>(G_), Eigen::VectorXd::Zero(vp_));
    ch.fa_p_lam_r.assign(static_cast<std::size_t>(G_), Eigen::VectorXd::Zero(vp_));
    ch.fa_p_psi.assign(static_cast<std::size_t>(G_), Eigen::VectorXd::Ones(vp_));
    ch.fa_p_resid.assign(static_cast<std::size_t>(G_), Eigen::VectorXd::Ones(m_));
    if (plan_.cp != "fa") return;
    // seed the working decomposition from the srs form of the inits
    for (int g = 0; g < G_; ++g) {
      for (int j = 0; j < p_; ++j)
        ch.fa_t_resid[static_cast<std::size_t>(g)][j] = slot_value(
            ch, plan_.theta_var[static_cast<std::size_t>(g)][static_cast<std::size_t>(j)]);
      for (int k = 0; k < m_; ++k)
        ch.fa_p_resid[static_cast<std::size_t>(g)][k] = slot_value(
            ch, plan_.psi_var[static_cast<std::size_t>(g)][static_cast<std::size_t>(k)]);
      seed_fa_side(ch, g, true);
      seed_fa_side(ch, g, false);
    }
  }

  void seed_fa_side(Chain& ch, int g, bool theta) const {
    const SideExpansion& side = theta ? plan_.theta_side[static_cast<std::size_t>(g)]
                                      : plan_.psi_side[static_cast<std::size_t>(g)];
    const std::vector<Slot>& rho_slots = theta ? plan_.theta_rho[static_cast<std::size_t>(g)]
                                               : plan_.psi_rho[static_cast<std::size_t>(g)];
    Eigen::VectorXd& lam_c = theta ? ch.fa_t_lam_c[static_cast<std::size_t>(g)]
                                   : ch.fa_p_lam_c[static_cast<std::size_t>(g)];
    Eigen::VectorXd& lam_r = theta ? ch.fa_t_lam_r[static_cast<std::size_t>(g)]
                                   : ch.fa_p_lam_r[static_cast<std::size_t>(g)];
    Eigen::VectorXd& resid = theta ? ch.fa_t_resid[static_cast<std::size_t>(g)]
                                   : ch.fa_p_resid[static_cast<std::size_t>(g)];
    for (std::size_t q = 0; q < side.pairs.size(); ++q) {
      const PhantomPair& pr = side.pairs[q];
      const double rho = ch.s[rho_slots[q].fi - 1];
      lam_c[static_cast<Eigen::Index>(q)] = std::sqrt(std::abs(rho) * resid[pr.c]);
      lam_r[static_cast<Eigen::Index>(q)] =
          sign_or_minus(rho) * std::sqrt(std::abs(rho) * resid[pr.r]);
    }
    for (const PhantomPair& pr : side.pairs) {
      for (int idx : {pr.c, pr.r}) {
        double take = 0.0;
        for (std::size_t q = 0; q < side.pairs.size(); ++q)
          if (side.pairs[q].c == idx || side.pairs[q].r == idx)
            take += std::abs(ch.s[rho_slots[q].fi - 1]);
        resid[idx] *= std::max(1.0 - take, 0.05);
      }
    }
  }

  // ---- residuals ----

  double meas_resid(const Chain& ch, const GroupWork& w, int i, int j) const {
    double r = data_.y(i, j) - w.nu[j];
    for (int k = 0; k < m_; ++k)
      if (w.lambda(j, k) != 0.0) r -= w.lambda(j, k) * ch.eta(i, k);
    for (int q = 0; q < vt_; ++q)
      if (w.lam_d(j, q) != 0.0) r -= w.lam_d(j, q) * ch.d_t(i, q);
    return r;
  }

  double lat_resid(const Chain& ch, const GroupWork& w, int i, int k) const {
    double r = ch.eta(i, k) - w.alpha[k];
    for (int k2 = 0; k2 < m_; ++k2)
      if (w.beta(k, k2) != 0.0) r -= w.beta(k, k2) * ch.eta(i, k2);
    for (int q = 0; q < vp_; ++q)
      if (w.b_e(k, q) != 0.0) r -= w.b_e(k, q) * ch.d_p(i, q);
    return r;
  }

  // ---- latent updates ----

  void update_latents(Chain& ch) const {
    if (data_.n() == 0) return;
    for (int g = 0; g < G_; ++g) {
      const GroupWork& w = ch.work[static_cast<std::size_t>(g)];
      for (int i : cases_[static_cast<std::size_t>(g)]) {
        for (int k = 0; k < m_; ++k) {
          if (w.lat_block[static_cast<std::size_t>(k)] >= 0) continue;
          double prec = 1.0 / w.psi_star[k];
          double structural = w.alpha[k];
          for (int k2 = 0; k2 < m_; ++k2)
            if (w.beta(k, k2) != 0.0) structural += w.beta(k, k2) * ch.eta(i, k2);
          for (int q = 0; q < vp_; ++q)
            if (w.b_e(k, q) != 0.0) structural += w.b_e(k, q) * ch.d_p(i, q);
          double num = structural / w.psi_star[k];
          for (int j = 0; j < p_; ++j) {
            const double l = w.lambda(j, k);
            if (l == 0.0) continue;
            const double r = meas_resid(ch, w, i, j) + l * ch.eta(i, k);
            prec += l * l / w.theta_star[j];
            num += l * r / w.theta_star[j];
          }
          for (int k2 = 0; k2 < m_; ++k2) {
            const double b = w.beta(k2, k);
            if (b == 0.0) continue;
            const double r = lat_resid(ch, w, i, k2) + b * ch.eta(i, k);
            prec += b * b / w.psi_star[k2];
            num += b * r / w.psi_star[k2];
          }
          ch.eta(i, k) = num / prec + ch.rng.normal() / std::sqrt(prec);
        }

        const std::vector<int>& blocks_here = group_blocks_[static_cast<std::size_t>(g)];
        for (std::size_t local = 0; local < blocks_here.size(); ++local) {
          const BlockPlan& bp = plan_.blocks[static_cast<std::size_t>(blocks_here[local])];
          const std::vector<int>& mem = bp.members;
          const int d = static_cast<int>(mem.size());
          Eigen::MatrixXd prec = w.block_llt[local].solve(Eigen::MatrixXd::Identity(d, d));
          Eigen::VectorXd alpha_m(d);
          for (int a = 0; a < d; ++a) alpha_m[a] = w.alpha[mem[static_cast<std::size_t>(a)]];
          Eigen::VectorXd bvec = prec * alpha_m;
          for (int j = 0; j < p_; ++j) {
            Eigen::VectorXd lvec = Eigen::VectorXd::Zero(d);
            bool any = false;
            for (int a = 0; a < d; ++a) {
              lvec[a] = w.lambda(j, mem[static_cast<std::size_t>(a)]);
              if (lvec[a] != 0.0) any = true;
            }
            if (!any) continue;
            double r = data_.y(i, j) - w.nu[j];
            for (int k = 0; k < m_; ++k)
              if (w.lambda(j, k) != 0.0 &&
                  w.lat_block[static_cast<std::size_t>(k)] != static_cast<int>(local))
                r -= w.lambda(j, k) * ch.eta(i, k);
            for (int q = 0; q < vt_; ++q)
              if (w.lam_d(j, q) != 0.0) r -= w.lam_d(j, q) * ch.d_t(i, q);
            prec += lvec * lvec.transpose() / w.theta_star[j];
            bvec += lvec * (r / w.theta_star[j]);
          }
          for (int k2 = 0; k2 < m_; ++k2) {
            Eigen::VectorXd bv = Eigen::VectorXd::Zero(d);
            bool any = false;
            for (int a = 0; a < d; ++a) {
              bv[a] = w.beta(k2, mem[static_cast<std::size_t>(a)]);
              if (bv[a] != 0.0) any = true;
            }
            if (!any) continue;
            double r = ch.eta(i, k2) - w.alpha[k2];
            for (int k3 = 0; k3 < m_; ++k3)
              if (w.beta(k2, k3) != 0.0 &&
                  w.lat_block[static_cast<std::size_t>(k3)] != static_cast<int>(local))
                r -= w.beta(k2, k3) * ch.eta(i, k3);
            for (int q = 0; q < vp_; ++q)
              if (w.b_e(k2, q) != 0.0) r -= w.b_e(k2, q) * ch.d_p(i, q);
            prec += bv * bv.transpose() / w.psi_star[k2];
            bvec += bv * (r / w.psi_star[k2]);
          }
          Eigen::LLT<Eigen::MatrixXd> pllt(prec);
          const Eigen::VectorXd mean = pllt.solve(bvec);
          Eigen::VectorXd z(d);
          for (int a = 0; a < d; ++a) z[a] = ch.rng.normal();
          const Eigen::VectorXd draw = mean + pllt.matrixU().solve(z);
          for (int a = 0; a < d; ++a) ch.eta(i, mem[static_cast<std::size_t>(a)]) = draw[a];
        }

        for (int q = 0; q < vt_; ++q) {
          const PhantomPair& pr =
              plan_.theta_side[static_cast<std::size_t>(g)].pairs[static_cast<std::size_t>(q)];
          double prec = 1.0 / w.psi_d_t[q];
          double num = 0.0;
          for (int j : {pr.c, pr.r}) {
            const double l = w.lam_d(j, q);
            if (l == 0.0) continue;
            const double r = meas_resid(ch, w, i, j) + l * ch.d_t(i, q);
            prec += l * l / w.theta_star[j];
            num += l * r / w.theta_star[j];
          }
          ch.d_t(i, q) = num / prec + ch.rng.normal() / std::sqrt(prec);
        }

        for (int q = 0; q < vp_; ++q) {
          const PhantomPair& pr =
              plan_.psi_side[static_cast<std::size_t>(g)].pairs[static_cast<std::size_t>(q)];
          double prec = 1.0 / w.psi_d_p[q];
          double num = 0.0;
          for (int k : {pr.c, pr.r}) {
            const double l = w.b_e(k, q);
            if (l == 0.0) continue;
            const double r = lat_resid(ch, w, i, k) + l * ch.d_p(i, q);
            prec += l * l / w.psi_star[k];
            num += l * r / w.psi_star[k];
          }
          ch.d_p(i, q) = num / prec + ch.rng.normal() / std::sqrt(prec);
        }
      }
    }
  }

  // ---- parameter updates ----

  void rebuild_groups(Chain& ch, const std::vector<Cell>& cells) const {
    unsigned done = 0;  // bitmask over groups
    for (const Cell& c : cells) {
      const unsigned bit = 1u << ((c.group - 1) & 31);
      if (done & bit) continue;
      build_work(ch, c.group - 1);
      done |= bit;
    }
  }

  // weighted sums for the gaussian conditional of a location parameter;
  // residuals have this parameter's own contribution removed, where
  // work_value is whatever the working matrices currently hold for it
  void location_terms(const Chain& ch, const ParamPlan& pp, double work_value, double& wsum2,
                      double& wsum_pr) const {
    wsum2 = 0.0;
    wsum_pr = 0.0;
    for (const Cell& c : pp.cells) {
      const GroupWork& w = ch.work[static_cast<std::size_t>(c.group - 1)];
      switch (pp.kind) {
        case ParamKind::NuIntercept: {
          const int j = c.a;
          const double inv = 1.0 / w.theta_star[j];
          for (int i : cases_[static_cast<std::size_t>(c.group - 1)]) {
            const double r = meas_resid(ch, w, i, j) + w.nu[j];
            wsum2 += inv;
            wsum_pr += r * inv;
          }
          break;
        }
        case ParamKind::Loading: {
          const int j = c.a;
          const int k = c.b;
          const double inv = 1.0 / w.theta_star[j];
          for (int i : cases_[static_cast<std::size_t>(c.group - 1)]) {
            const double pred = ch.eta(i, k);
            const double r = meas_resid(ch, w, i, j) + work_value * pred;
            wsum2 += pred * pred * inv;
            wsum_pr += pred * r * inv;
          }
          break;
        }
        case ParamKind::AlphaIntercept: {
          const int k = c.a;
          const double inv = 1.0 / w.psi_star[k];
          for (int i : cases_[static_cast<std::size_t>(c.group - 1)]) {
            const double r = lat_resid(ch, w, i, k) + w.alpha[k];
            wsum2 += inv;
            wsum_pr += r * inv;
          }
          break;
        }
        case ParamKind::Regression: {
          const int kto = c.a;
          const int kfrom = c.b;
          const double inv = 1.0 / w.psi_star[kto];
          for (int i : cases_[static_cast<std::size_t>(c.group - 1)]) {
            const double pred = ch.eta(i, kfrom);
            const double r = lat_resid(ch, w, i, kto) + work_value * pred;
            wsum2 += pred * pred * inv;
            wsum_pr += pred * r * inv;
          }
          break;
        }
        default:
          throw Error("internal: location terms on a non-location parameter");
      }
    }
  }

  void location_update(Chain& ch, int fi) const {
    const ParamPlan& pp = plan_.params[static_cast<std::size_t>(fi)];
    double wsum2, wsum_pr;
    location_terms(ch, pp, ch.s[fi], wsum2, wsum_pr);

    double mean0 = 0.0, prec0 = 0.0;
    if (pp.prior.family == PriorFamily::Normal) {
      mean0 = pp.prior.p1;
      prec0 = pp.prior.p2;
    }
    if (prec0 + wsum2 <= 0.0) {
      ch.s[fi] = prior_sample(pp.prior, pp.cls, ch.rng);
      rebuild_groups(ch, pp.cells);
      return;
    }
    const NormalCond cond = normal_conditional(mean0, prec0, wsum2, wsum_pr);
    const double sd = std::sqrt(cond.var);
    double x;
    if (pp.rule == UpdateRule::TruncNormal) {
      const boost::math::normal_distribution<double> nd(0.0, 1.0);
      const double a = (pp.lo - cond.mean) / sd;
      const double b = (pp.hi - cond.mean) / sd;
      const double fa = std::isfinite(a) ? boost::math::cdf(nd, a) : 0.0;
      const double fb = std::isfinite(b) ? boost::math::cdf(nd, b) : 1.0;
      if (fb - fa < 1e-14) {
        x = std::clamp(cond.mean, pp.lo, pp.hi);
      } else {
        const double u = std::clamp(fa + ch.rng.uniform() * (fb - fa), 1e-16, 1.0 - 1e-16);
        x = std::clamp(cond.mean + sd * boost::math::quantile(nd, u), pp.lo, pp.hi);
      }
    } else {
      x = cond.mean + sd * ch.rng.normal();
    }
    ch.s[fi] = x;
    rebuild_groups(ch, pp.cells);
  }

  void gamma_update(Chain& ch, int fi) const {
    const ParamPlan& pp = plan_.params[static_cast<std::size_t>(fi)];
    double ss = 0.0;
    int count = 0;
    for (const Cell& c : pp.cells) {
      const GroupWork& w = ch.work[static_cast<std::size_t>(c.group - 1)];
      for (int i : cases_[static_cast<std::size_t>(c.group - 1)]) {
        const double r = pp.kind == ParamKind::ManifestVar ? meas_resid(ch, w, i, c.a)
                                                           : lat_resid(ch, w, i, c.a);
        ss += r * r;
        ++count;
      }
    }
    const GammaCond cond = gamma_precision_conditional(pp.prior.p1, pp.prior.p2, ss, count);
    ch.s[fi] = 1.0 / ch.rng.gamma(cond.shape, cond.rate);
    rebuild_groups(ch, pp.cells);
  }

  double column_loglik(const Chain& ch, const GroupWork& w, int g, int j, bool theta) const {
    const double star = theta ? w.theta_star[j] : w.psi_star[j];
    if (star <= 0.0) return kNegInf;
    const double log_star = std::log(star);
    double total = 0.0;
    for (int i : cases_[static_cast<std::size_t>(g)]) {
      const double r = theta ? meas_resid(ch, w, i, j) : lat_resid(ch, w, i, j);
      total += -0.5 * (log_star + r * r / star);
    }
    return total;
  }

  // columns whose conditional density involves this parameter
  std::vector<std::pair<int, int>> affected_columns(const ParamPlan& pp) const {
    std::vector<std::pair<int, int>> cols;
    auto add = [&](int g0, int j) {
      for (const std::pair<int, int>& c : cols)
        if (c.first == g0 && c.second == j) return;
      cols.push_back({g0, j});
    };
    for (const Cell& c : pp.cells) {
      const int g0 = c.group - 1;
      const SideExpansion& side = pp.theta_side ? plan_.theta_side[static_cast<std::size_t>(g0)]
                                                : plan_.psi_side[static_cast<std::size_t>(g0)];
      const std::vector<Slot>& rho_slots = pp.theta_side
                                               ? plan_.theta_rho[static_cast<std::size_t>(g0)]
                                               : plan_.psi_rho[static_cast<std::size_t>(g0)];
      if (pp.kind == ParamKind::Rho) {
        const PhantomPair& pr = side.pairs[static_cast<std::size_t>(c.side_pair)];
        add(g0, pr.r);
        add(g0, pr.c);
      } else {
        add(g0, c.a);
        // a fixed covariance ties this variance to the partner column
        // through the correlation it implies
        for (std::size_t q = 0; q < side.pairs.size(); ++q) {
          if (rho_slots[q].fi > 0) continue;
          const PhantomPair& pr = side.pairs[q];
          if (pr.r == c.a) add(g0, pr.c);
          if (pr.c == c.a) add(g0, pr.r);
        }
      }
    }
    return cols;
  }

  double mh_target(const Chain& ch, const ParamPlan& pp, double x, double work_value) const {
    const double prior = prior_log_density(pp.prior, pp.cls, x);
    if (!std::isfinite(prior)) return kNegInf;
    if (pp.cls == ParamClass::Location) {
      double wsum2, wsum_pr;
      location_terms(ch, pp, work_value, wsum2, wsum_pr);
      return prior - 0.5 * x * x * wsum2 + x * wsum_pr;
    }
    double total = prior;
    for (const std::pair<int, int>& c : affected_columns(pp)) {
      const GroupWork& w = ch.work[static_cast<std::size_t>(c.first)];
      if (!w.valid) return kNegInf;
      total += column_loglik(ch, w, c.first, c.second, pp.theta_side);
    }
    return total;
  }

  static double to_unconstrained(const ParamPlan& pp, double x) {
    switch (pp.transform) {
      case Transform::Identity: return x;
      case Transform::Log: return std::log(x);
      case Transform::Atanh: return std::atanh(x);
      case Transform::Logit: {
        const double u = (x - pp.lo) / (pp.hi - pp.lo);
        return std::log(u / (1.0 - u));
      }
    }
    return x;
  }

  static double from_unconstrained(const ParamPlan& pp, double z) {
    switch (pp.transform) {
      case Transform::Identity: return z;
      case Transform::Log: return std::exp(z);
      case Transform::Atanh: return std::tanh(z);
      case Transform::Logit: {
        const double u = 1.0 / (1.0 + std::exp(-z));
        return pp.lo + (pp.hi - pp.lo) * u;
      }
    }
    return z;
  }

  static double log_jacobian(const ParamPlan& pp, double x) {
    switch (pp.transform) {
      case Transform::Identity: return 0.0;
      case Transform::Log: return std::log(x);
      case Transform::Atanh: return std::log1p(-x * x);
      case Transform::Logit: return std::log((x - pp.lo) * (pp.hi - x) / (pp.hi - pp.lo));
    }
    return 0.0;
  }

  void mh_update(Chain& ch, int fi) const {
    const ParamPlan& pp = plan_.params[static_cast<std::size_t>(fi)];
    const double x0 = ch.s[fi];

    const double t0 = mh_target(ch, pp, x0, x0) + log_jacobian(pp, x0);
    const double z1 = to_unconstrained(pp, x0) + std::exp(ch.log_scale[fi]) * ch.rng.normal();
    const double x1 = from_unconstrained(pp, z1);

    double t1 = kNegInf;
    bool moved = false;
    if (std::isfinite(x1) && x1 > pp.lo && x1 < pp.hi) {
      ch.s[fi] = x1;
      moved = true;
      if (pp.cls != ParamClass::Location) rebuild_groups(ch, pp.cells);
      t1 = mh_target(ch, pp, x1, x0) + log_jacobian(pp, x1);
    }

    ++ch.att[fi];
    const bool accept = std::isfinite(t1) && std::log(ch.rng.uniform()) < t1 - t0;
    if (accept) {
      ++ch.acc[fi];
      if (pp.cls == ParamClass::Location) rebuild_groups(ch, pp.cells);
    } else {
      ch.s[fi] = x0;
      if (moved && pp.cls != ParamClass::Location) rebuild_groups(ch, pp.cells);
    }
  }

  void block_update(Chain& ch, int bid) const {
    const BlockPlan& bp = plan_.blocks[static_cast<std::size_t>(bid)];
    const int g0 = bp.group - 1;
    const GroupWork& w = ch.work[static_cast<std::size_t>(g0)];
    const int d = static_cast<int>(bp.members.size());
    Eigen::MatrixXd scatter = Eigen::MatrixXd::Identity(d, d);
    int n = 0;
    for (int i : cases_[static_cast<std::size_t>(g0)]) {
      Eigen::VectorXd zeta(d);
      for (int a = 0; a < d; ++a) {
        const int k = bp.members[static_cast<std::size_t>(a)];
        zeta[a] = ch.eta(i, k) - w.alpha[k];
      }
      scatter += zeta * zeta.transpose();
      ++n;
    }
    const Eigen::MatrixXd draw = ch.rng.inv_wishart(bp.df0 + n, scatter);
    for (const std::array<int, 3>& cell : bp.cells) ch.s[cell[2] - 1] = draw(cell[0], cell[1]);
    build_work(ch, g0);
  }

  void fa_update_side(Chain& ch, int g, bool theta) const {
    const SideExpansion& side = theta ? plan_.theta_side[static_cast<std::size_t>(g)]
                                      : plan_.psi_side[static_cast<std::size_t>(g)];
    if (side.pairs.empty()) return;
    Eigen::VectorXd& lam_c = theta ? ch.fa_t_lam_c[static_cast<std::size_t>(g)]
                                   : ch.fa_p_lam_c[static_cast<std::size_t>(g)];
    Eigen::VectorXd& lam_r = theta ? ch.fa_t_lam_r[static_cast<std::size_t>(g)]
                                   : ch.fa_p_lam_r[static_cast<std::size_t>(g)];
    Eigen::VectorXd& psi_d = theta ? ch.fa_t_psi[static_cast<std::size_t>(g)]
                                   : ch.fa_p_psi[static_cast<std::size_t>(g)];
    Eigen::VectorXd& resid_v = theta ? ch.fa_t_resid[static_cast<std::size_t>(g)]
                                     : ch.fa_p_resid[static_cast<std::size_t>(g)];
    const Eigen::MatrixXd& scores = theta ? ch.d_t : ch.d_p;

    // fixed working priors: N(0, var 1e4) loadings, gamma(1, .5) precisions
    for (std::size_t q = 0; q < side.pairs.size(); ++q) {
      const PhantomPair& pr = side.pairs[q];
      for (int which = 0; which < 2; ++which) {
        const GroupWork& w = ch.work[static_cast<std::size_t>(g)];
        const int j = which == 0 ? pr.c : pr.r;
        double& coef =
            which == 0 ? lam_c[static_cast<Eigen::Index>(q)] : lam_r[static_cast<Eigen::Index>(q)];
        const double star = theta ? w.theta_star[j] : w.psi_star[j];
        double wsum2 = 0.0, wsum_pr = 0.0;
        for (int i : cases_[static_cast<std::size_t>(g)]) {
          const double pred = scores(i, static_cast<Eigen::Index>(q));
          const double base = theta ? meas_resid(ch, w, i, j) : lat_resid(ch, w, i, j);
          const double r = base + coef * pred;
          wsum2 += pred * pred / star;
          wsum_pr += pred * r / star;
        }
        const NormalCond cond = normal_conditional(0.0, 1e-4, wsum2, wsum_pr);
        coef = cond.mean + std::sqrt(cond.var) * ch.rng.normal();
        build_work(ch, g);
      }
      double ss = 0.0;
      int n = 0;
      for (int i : cases_[static_cast<std::size_t>(g)]) {
        const double v = scores(i, static_cast<Eigen::Index>(q));
        ss += v * v;
        ++n;
      }
      const GammaCond cond = gamma_precision_conditional(1.0, 0.5, ss, n);
      psi_d[static_cast<Eigen::Index>(q)] = 1.0 / ch.rng.gamma(cond.shape, cond.rate);
      build_work(ch, g);
    }

    std::vector<int> members;
    for (const PhantomPair& pr : side.pairs)
      for (int j : {pr.c, pr.r})
        if (std::find(members.begin(), members.end(), j) == members.end()) members.push_back(j);
    for (int j : members) {
      const GroupWork& w = ch.work[static_cast<std::size_t>(g)];
      double ss = 0.0;
      int n = 0;
      for (int i : cases_[static_cast<std::size_t>(g)]) {
        const double r = theta ? meas_resid(ch, w, i, j) : lat_resid(ch, w, i, j);
        ss += r * r;
        ++n;
      }
      const GammaCond cond = gamma_precision_conditional(1.0, 0.5, ss, n);
      resid_v[j] = 1.0 / ch.rng.gamma(cond.shape, cond.rate);
      build_work(ch, g);
    }

    // fold the working decomposition back into the inferential coordinates
    const std::vector<Slot>& var_slots = theta ? plan_.theta_var[static_cast<std::size_t>(g)]
                                               : plan_.psi_var[static_cast<std::size_t>(g)];
    const std::vector<Slot>& rho_slots = theta ? plan_.theta_rho[static_cast<std::size_t>(g)]
                                               : plan_.psi_rho[static_cast<std::size_t>(g)];
    for (int j : members) {
      double v = resid_v[j];
      for (std::size_t q = 0; q < side.pairs.size(); ++q) {
        const PhantomPair& pr = side.pairs[q];
        const double psd = psi_d[static_cast<Eigen::Index>(q)];
        if (pr.c == j)
          v += lam_c[static_cast<Eigen::Index>(q)] * lam_c[static_cast<Eigen::Index>(q)] * psd;
        if (pr.r == j)
          v += lam_r[static_cast<Eigen::Index>(q)] * lam_r[static_cast<Eigen::Index>(q)] * psd;
      }
      ch.s[var_slots[static_cast<std::size_t>(j)].fi - 1] = v;
    }
    for (std::size_t q = 0; q < side.pairs.size(); ++q) {
      const PhantomPair& pr = side.pairs[q];
      const double cov = lam_c[static_cast<Eigen::Index>(q)] * lam_r[static_cast<Eigen::Index>(q)] *
                         psi_d[static_cast<Eigen::Index>(q)];
      const double denom = std::sqrt(ch.s[var_slots[static_cast<std::size_t>(pr.r)].fi - 1] *
                                     ch.s[var_slots[static_cast<std::size_t>(pr.c)].fi - 1]);
      ch.s[rho_slots[q].fi - 1] = denom > 0 ? cov / denom : 0.0;
    }
    build_work(ch, g);
  }

  void update_parameters(Chain& ch) const {
    std::vector<bool> block_done(plan_.blocks.size(), false);
    for (int fi = 0; fi < table_.npar; ++fi) {
      const ParamPlan& pp = plan_.params[static_cast<std::size_t>(fi)];
      switch (pp.rule) {
        case UpdateRule::ConjNormal:
        case UpdateRule::TruncNormal:
          location_update(ch, fi);
          break;
        case UpdateRule::ConjGammaPrec:
          gamma_update(ch, fi);
          break;
        case UpdateRule::Metropolis:
          mh_update(ch, fi);
          break;
        case UpdateRule::Block:
          if (!block_done[static_cast<std::size_t>(pp.block_id)]) {
            block_update(ch, pp.block_id);
            block_done[static_cast<std::size_t>(pp.block_id)] = true;
          }
          break;
        case UpdateRule::Derived:
          break;
      }
    }
    if (plan_.cp == "fa") {
      for (int g = 0; g < G_; ++g) {
        fa_update_side(ch, g, true);
        fa_update_side(ch, g, false);
      }
    }
  }

  void maybe_adapt(Chain& ch, int batch_no) const {
    // batches of 50 draws, step sizes steered toward 0.44 acceptance
    for (int fi = 0; fi < table_.npar; ++fi) {
      if (ch.att[fi] < 50) continue;
      const double rate = static_cast<double>(ch.acc[fi]) / ch.att[fi];
      const double delta = 0.8 / std::sqrt(static_cast<double>(batch_no));
      ch.log_scale[fi] = std::clamp(ch.log_scale[fi] + (rate > 0.44 ? delta : -delta), -8.0, 4.0);
      ch.acc[fi] = 0;
      ch.att[fi] = 0;
    }
  }

  // ---- initial values ----

  Eigen::VectorXd initial_s(int chain_idx, Rng& rng) const {
    Eigen::VectorXd s = Eigen::VectorXd::Zero(table_.npar);

    if (config_.inits == "user") {
      if (static_cast<int>(config_.user_inits.size()) <= chain_idx)
        throw Error("user inits: need one vector per chain");
      const Eigen::VectorXd& u = config_.user_inits[static_cast<std::size_t>(chain_idx)];
      if (u.size() != table_.npar)
        throw Error("user inits: expected length " + std::to_string(table_.npar));
      s = u;
      for (int g = 0; g < G_; ++g) {
        auto convert = [&](const SideExpansion& side, const std::vector<Slot>& rho_slots,
                           const std::vector<Slot>& var_slots) {
          for (std::size_t q = 0; q < side.pairs.size(); ++q) {
            if (rho_slots[q].fi == 0) continue;
            const PhantomPair& pr = side.pairs[q];
            const double vr = var_slots[static_cast<std::size_t>(pr.r)].fi > 0
                                  ? u[var_slots[static_cast<std::size_t>(pr.r)].fi - 1]
                                  : var_slots[static_cast<std::size_t>(pr.r)].fixed;
            const double vc = var_slots[static_cast<std::size_t>(pr.c)].fi > 0
                                  ? u[var_slots[static_cast<std::size_t>(pr.c)].fi - 1]
                                  : var_slots[static_cast<std::size_t>(pr.c)].fixed;
            const double denom = std::sqrt(vr * vc);
            if (!(denom > 0)) throw Error("user inits: nonpositive variance on a covariance pair");
            s[rho_slots[q].fi - 1] = u[rho_slots[q].fi - 1] / denom;
          }
        };
        convert(plan_.theta_side[static_cast<std::size_t>(g)],
                plan_.theta_rho[static_cast<std::size_t>(g)],
                plan_.theta_var[static_cast<std::size_t>(g)]);
        convert(plan_.psi_side[static_cast<std::size_t>(g)],
                plan_.psi_rho[static_cast<std::size_t>(g)],
                plan_.psi_var[static_cast<std::size_t>(g)]);
      }
    } else if (config_.inits == "simple") {
      for (int fi = 0; fi < table_.npar; ++fi) {
        const ParamPlan& pp = plan_.params[static_cast<std::size_t>(fi)];
        switch (pp.kind) {
          case ParamKind::Loading:
          case ParamKind::Regression:
            s[fi] = 1.0;
            break;
          case ParamKind::NuIntercept: {
            double total = 0.0;
            for (const Cell& c : pp.cells) total += data_.group_mean(c.group - 1)[c.a];
            s[fi] = total / static_cast<double>(pp.cells.size());
            break;
          }
          case ParamKind::AlphaIntercept:
            s[fi] = 0.0;
            break;
          case ParamKind::ManifestVar: {
            double total = 0.0;
            for (const Cell& c : pp.cells) total += data_.group_cov(c.group - 1)(c.a, c.a);
            s[fi] = std::max(0.5 * total / static_cast<double>(pp.cells.size()), 1e-3);
            break;
          }
          case ParamKind::LatentVar:
            s[fi] = 1.0;
            break;
          case ParamKind::Rho:
            s[fi] = 0.0;
            break;
          case ParamKind::BlockCell: {
            bool diag = false;
            for (const ParameterRow& r : table_.rows)
              if (r.free_index == fi + 1) {
                diag = r.lhs == r.rhs;
                break;
              }
            s[fi] = diag ? 1.0 : 0.0;
            break;
          }
        }
      }
    } else if (config_.inits == "prior") {
      std::vector<bool> block_seen(plan_.blocks.size(), false);
      for (int fi = 0; fi < table_.npar; ++fi) {
        const ParamPlan& pp = plan_.params[static_cast<std::size_t>(fi)];
        if (pp.kind == ParamKind::BlockCell) {
          if (!block_seen[static_cast<std::size_t>(pp.block_id)]) {
            const BlockPlan& bp = plan_.blocks[static_cast<std::size_t>(pp.block_id)];
            const int d = static_cast<int>(bp.members.size());
            // mean I/df0 keeps the starting matrix bounded
            const Eigen::MatrixXd draw =
                rng.inv_wishart(bp.df0 + d + 1.0, Eigen::MatrixXd::Identity(d, d));
            for (const std::array<int, 3>& cell : bp.cells) s[cell[2] - 1] = draw(cell[0], cell[1]);
            block_seen[static_cast<std::size_t>(pp.block_id)] = true;
          }
          continue;
        }
        double x = prior_sample(pp.prior, pp.cls, rng);
        if (pp.kind == ParamKind::Loading || pp.kind == ParamKind::Regression) {
          for (int tries = 0; tries < 100 && !(x > 0.5 && x < 1.5); ++tries)
            x = prior_sample(pp.prior, pp.cls, rng);
          if (!(x > 0.5 && x < 1.5)) x = 1.0;
        } else if (pp.kind == ParamKind::Rho) {
          for (int tries = 0; tries < 100 && !(x > -0.1 && x < 0.1); ++tries)
            x = prior_sample(pp.prior, pp.cls, rng);
          if (!(x > -0.1 && x < 0.1)) x = 0.0;
        } else if (pp.cls == ParamClass::Variance) {
          // extreme starting variances blur the basin of the identified mode
          for (int tries = 0; tries < 100 && !(x > 0.1 && x < 10.0); ++tries)
            x = prior_sample(pp.prior, pp.cls, rng);
          if (!(x > 0.1 && x < 10.0)) x = 1.0;
        } else if (pp.kind == ParamKind::NuIntercept) {
          // a far-off intercept poisons the first latent scan under a vague prior
          double m = 0.0, v = 0.0;
          for (const Cell& c : pp.cells) {
            m += data_.group_mean(c.group - 1)[c.a];
            v += data_.group_cov(c.group - 1)(c.a, c.a);
          }
          m /= static_cast<double>(pp.cells.size());
          v /= static_cast<double>(pp.cells.size());
          const double w = 3.0 * std::sqrt(std::max(v, 1e-8));
          for (int tries = 0; tries < 100 && std::abs(x - m) >= w; ++tries)
            x = prior_sample(pp.prior, pp.cls, rng);
          if (std::abs(x - m) >= w) x = m;
        } else if (pp.kind == ParamKind::AlphaIntercept) {
          for (int tries = 0; tries < 100 && std::abs(x) >= 2.0; ++tries)
            x = prior_sample(pp.prior, pp.cls, rng);
          if (std::abs(x) >= 2.0) x = 0.0;
        }
        s[fi] = x;
      }
    } else {
      throw Error("inits must be 'prior', 'simple' or 'user'");
    }

    if (config_.inits != "user") {
      // start() modifiers, given on the inferential scale
      for (const ParameterRow& r : table_.rows) {
        if (r.free_index <= 0 || !r.start) continue;
        if (plan_.params[static_cast<std::size_t>(r.free_index - 1)].kind == ParamKind::Rho)
          continue;
        s[r.free_index - 1] = *r.start;
      }
      for (const ParameterRow& r : table_.rows) {
        if (r.free_index <= 0 || !r.start) continue;
        const ParamPlan& pp = plan_.params[static_cast<std::size_t>(r.free_index - 1)];
        if (pp.kind != ParamKind::Rho) continue;
        const Cell& c = pp.cells.front();
        const int g0 = c.group - 1;
        const SideExpansion& side = pp.theta_side ? plan_.theta_side[static_cast<std::size_t>(g0)]
                                                  : plan_.psi_side[static_cast<std::size_t>(g0)];
        const std::vector<Slot>& vars = pp.theta_side
                                            ? plan_.theta_var[static_cast<std::size_t>(g0)]
                                            : plan_.psi_var[static_cast<std::size_t>(g0)];
        const PhantomPair& pr = side.pairs[static_cast<std::size_t>(c.side_pair)];
        const double vr = vars[static_cast<std::size_t>(pr.r)].fi > 0
                              ? s[vars[static_cast<std::size_t>(pr.r)].fi - 1]
                              : vars[static_cast<std::size_t>(pr.r)].fixed;
        const double vc = vars[static_cast<std::size_t>(pr.c)].fi > 0
                              ? s[vars[static_cast<std::size_t>(pr.c)].fi - 1]
                              : vars[static_cast<std::size_t>(pr.c)].fixed;
        const double denom = std::sqrt(std::max(vr * vc, 1e-12));
        s[r.free_index - 1] = std::clamp(*r.start / denom, -0.99, 0.99);
      }
    }

    // pull correlations inward until every phantom decomposition is valid
    for (int g = 0; g < G_; ++g) {
      auto repair = [&](const SideExpansion& side, const std::vector<Slot>& rho_slots) {
        if (side.pairs.empty()) return;
        for (int pass = 0; pass < 64; ++pass) {
          Eigen::VectorXd abs_sum = Eigen::VectorXd::Zero(side.dim);
          for (std::size_t q = 0; q < side.pairs.size(); ++q) {
            const double r = rho_slots[q].fi > 0 ? s[rho_slots[q].fi - 1] : 0.0;
            abs_sum[side.pairs[q].r] += std::abs(r);
            abs_sum[side.pairs[q].c] += std::abs(r);
          }
          const double worst = abs_sum.maxCoeff();
          if (worst < 0.95) break;
          for (const Slot& slot : rho_slots)
            if (slot.fi > 0) s[slot.fi - 1] *= 0.9 / worst;
        }
      };
      repair(plan_.theta_side[static_cast<std::size_t>(g)],
             plan_.theta_rho[static_cast<std::size_t>(g)]);
      repair(plan_.psi_side[static_cast<std::size_t>(g)],
             plan_.psi_rho[static_cast<std::size_t>(g)]);
    }
    return s;
  }
};

}  // namespace

// ---------------------------------------------------------------- driver

McmcResult run_mcmc(const ModelPlan& plan, const BoundData& data, const SamplerConfig& config) {
  if (config.chains < 1) throw Error("need at least one chain");
  if (config.sample < 1) throw Error("need a positive sample size");

  Runtime rt(plan, data, config);
  std::vector<Chain> chains = rt.make_chains();
  const int npar = plan.table->npar;

  auto phase = [&](int iters, bool adapting, std::vector<Eigen::MatrixXd>* record) {
    auto run_chain = [&](int c) {
      Chain& ch = chains[static_cast<std::size_t>(c)];
      for (int it = 0; it < iters; ++it) {
        rt.iterate(ch, adapting, it / 50 + 1);
        if (record)
          (*record)[static_cast<std::size_t>(c)].row(it) = rt.inferential(ch).transpose();
      }
    };
    const int nthreads =
        config.threads > 0 ? std::min(config.threads, config.chains) : config.chains;
    if (nthreads <= 1 || config.chains == 1) {
      for (int c = 0; c < config.chains; ++c) run_chain(c);
    } else {
      std::vector<std::thread> pool;
      pool.reserve(static_cast<std::size_t>(config.chains));
      for (int c = 0; c < config.chains; ++c) pool.emplace_back(run_chain, c);
      for (std::thread& t : pool) t.join();
    }
  };

  McmcResult out;
  ConvergenceReport& report = out.convergence;
  auto say = [&](const std::string& msg) {
    if (config.on_phase) config.on_phase(msg);
  };

  say("adapt " + std::to_string(config.adapt));
  phase(config.adapt, true, nullptr);
  report.adapt_used = config.adapt;
  for (Chain& ch : chains) rt.reset_counters(ch);

  if (config.auto_converge) {
    int burned = 0;
    bool settled = false;
    while (burned < config.auto_max_burnin) {
      const int window = std::min(config.auto_window, config.auto_max_burnin - burned);
      std::vector<Eigen::MatrixXd> scratch(static_cast<std::size_t>(config.chains),
                                           Eigen::MatrixXd::Zero(window, npar));
      say("burnin window " + std::to_string(window));
      phase(window, false, &scratch);
      burned += window;
      if (config.chains < 2) {
        settled = true;
        break;
      }
      double worst = 0.0;
      for (int j = 0; j < npar; ++j) {
        std::vector<Eigen::VectorXd> cols;
        cols.reserve(static_cast<std::size_t>(config.chains));
        for (const Eigen::MatrixXd& mat : scratch) cols.push_back(mat.col(j));
        worst = std::max(worst, psrf(cols));
      }
      say("window psrf max " + std::to_string(worst));
      if (worst < config.psrf_threshold) {
        settled = true;
        break;
      }
    }
    report.burnin_used = burned;
    if (!settled) {
      report.warnings.push_back("auto convergence: burnin cap reached before psrf settled");
      report.converged = false;
    }
  } else {
    say("burnin " + std::to_string(config.burnin));
    phase(config.burnin, false, nullptr);
    report.burnin_used = config.burnin;
  }

  say("sample " + std::to_string(config.sample));
  out.draws.assign(static_cast<std::size_t>(config.chains),
                   Eigen::MatrixXd::Zero(config.sample, npar));
  phase(config.sample, false, &out.draws);
  report.sample_used = config.sample;

  report.rhat = Eigen::VectorXd::Constant(npar, std::numeric_limits<double>::quiet_NaN());
  if (config.chains >= 2) {
    const std::vector<std::string> names = plan.table->free_names();
    for (int j = 0; j < npar; ++j) {
      std::vector<Eigen::VectorXd> cols;
      cols.reserve(static_cast<std::size_t>(config.chains));
      for (const Eigen::MatrixXd& mat : out.draws) cols.push_back(mat.col(j));
      report.rhat[j] = psrf(cols);
      if (report.rhat[j] > config.psrf_threshold) {
        report.warnings.push_back("psrf " + std::to_string(report.rhat[j]) + " for " +
                                  names[static_cast<std::size_t>(j)]);
        if (!config.auto_converge) report.converged = false;
      }
    }
  }

  for (Chain& ch : chains) {
    out.inits.push_back(ch.init_inferential);
    out.proposal_log_scale.push_back(ch.log_scale);
  }
  return out;
}

}  // namespace bsem
