#include "bsem/report.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <sstream>

#include "bsem/diagnostics.hpp"
#include "bsem/error.hpp"

namespace bsem {

namespace {

std::string fmt(double x, int width = 9, int prec = 3) {
  char buf[64];
  if (std::isnan(x))
    std::snprintf(buf, sizeof(buf), "%*s", width, "NA");
  else
    std::snprintf(buf, sizeof(buf), "%*.*f", width, prec, x);
  return buf;
}

std::string pad(const std::string& s, int width) {
  if (static_cast<int>(s.size()) >= width) return s;
  return s + std::string(static_cast<std::size_t>(width) - s.size(), ' ');
}

std::string right(const std::string& s, int width) {
  if (static_cast<int>(s.size()) >= width) return s;
  return std::string(static_cast<std::size_t>(width) - s.size(), ' ') + s;
}

struct RowView {
  const ParameterRow* row;
  const SummaryRow* stats;  // null for fixed rows
};

void print_row(std::ostream& os, const std::string& label, const RowView& rv) {
  os << "    " << pad(label, 14);
  if (rv.stats) {
    const SummaryRow& s = *rv.stats;
    os << fmt(s.mean) << fmt(s.sd) << fmt(s.hpd_lower) << fmt(s.hpd_upper) << fmt(s.rhat, 9)
       << right(std::to_string(static_cast<long>(std::llround(s.neff))), 8);
    if (!s.prior.empty()) os << "    " << s.prior;
  } else {
    os << fmt(rv.row->fixed_value);
  }
  os << "\n";
}

void print_header(std::ostream& os) {
  os << "    " << pad("", 14) << right("Estimate", 9) << right("Post.SD", 9) << right("pi.lower", 9)
     << right("pi.upper", 9) << right("Rhat", 9) << right("neff", 8) << "    Prior\n";
}

}  // namespace

std::string render_summary(const FitResult& result) {
  const ParameterTable& table = result.table;
  std::ostringstream os;

  os << "bsem results\n\n";
  os << "  Observations used                " << right(std::to_string(result.data.n()), 8) << "\n";
  if (result.data.n_dropped > 0)
    os << "  Rows dropped (incomplete)        " << right(std::to_string(result.data.n_dropped), 8)
       << "\n";
  if (table.ngroups() > 1) {
    for (int g = 0; g < table.ngroups(); ++g)
      os << "    " << pad(result.data.groups.levels[static_cast<std::size_t>(g)], 24)
         << right(std::to_string(result.data.group_n[static_cast<std::size_t>(g)]), 13) << "\n";
  }
  os << "  Free parameters                  " << right(std::to_string(table.npar), 8) << "\n\n";
  os << "  Number of chains                 " << right(std::to_string(result.config.chains), 8)
     << "\n";
  os << "  Adaptation iterations            " << right(std::to_string(result.config.adapt), 8)
     << "\n";
  os << "  Burnin iterations                " << right(std::to_string(result.config.burnin), 8)
     << "\n";
  os << "  Sample iterations                " << right(std::to_string(result.config.sample), 8)
     << "\n\n";
  const ConvergenceReport& conv = result.mcmc.convergence;
  double max_rhat = 0;
  for (int i = 0; i < conv.rhat.size(); ++i)
    if (std::isfinite(conv.rhat[i])) max_rhat = std::max(max_rhat, conv.rhat[i]);
  os << "  Largest PSRF                     " << right(fmt(max_rhat, 8), 8) << "\n";
  if (!conv.converged) os << "  WARNING: chains did not converge\n";
  os << "\n";

  // stats looked up per free index; repeated rows under equality constraints
  // show the shared posterior
  std::vector<const SummaryRow*> by_fi(static_cast<std::size_t>(table.npar), nullptr);
  for (std::size_t i = 0; i < result.summary.size() && i < by_fi.size(); ++i)
    by_fi[i] = &result.summary[i];
  auto view = [&](const ParameterRow& r) {
    RowView rv{&r, nullptr};
    if (r.free_index > 0) rv.stats = by_fi[static_cast<std::size_t>(r.free_index - 1)];
    return rv;
  };

  for (int g = 1; g <= table.ngroups(); ++g) {
    if (table.ngroups() > 1)
      os << "Group " << g << " [" << result.data.groups.levels[static_cast<std::size_t>(g - 1)]
         << "]:\n\n";

    bool any = false;
    std::string open_lhs;
    auto section = [&](const char* title) {
      os << title << ":\n";
      print_header(os);
      open_lhs.clear();
      any = true;
    };

    for (const ParameterRow& r : table.rows) {
      if (r.group != g || r.op != Op::Loading) continue;
      if (!any) section("Latent Variables");
      if (r.lhs != open_lhs) {
        os << "  " << r.lhs << " =~\n";
        open_lhs = r.lhs;
      }
      print_row(os, r.rhs, view(r));
    }
    if (any) os << "\n";

    any = false;
    for (const ParameterRow& r : table.rows) {
      if (r.group != g || r.op != Op::Regression) continue;
      if (!any) section("Regressions");
      if (r.lhs != open_lhs) {
        os << "  " << r.lhs << " ~\n";
        open_lhs = r.lhs;
      }
      print_row(os, r.rhs, view(r));
    }
    if (any) os << "\n";

    any = false;
    for (const ParameterRow& r : table.rows) {
      if (r.group != g || r.op != Op::Covariance || r.lhs == r.rhs) continue;
      if (!any) section("Covariances");
      if (r.lhs != open_lhs) {
        os << "  " << r.lhs << " ~~\n";
        open_lhs = r.lhs;
      }
      print_row(os, r.rhs, view(r));
    }
    if (any) os << "\n";

    any = false;
    for (const ParameterRow& r : table.rows) {
      if (r.group != g || r.op != Op::Intercept) continue;
      if (!any) section("Intercepts");
      print_row(os, r.lhs, view(r));
    }
    if (any) os << "\n";

    any = false;
    for (const ParameterRow& r : table.rows) {
      if (r.group != g || r.op != Op::Covariance || r.lhs != r.rhs) continue;
      if (!any) section("Variances");
      print_row(os, r.lhs, view(r));
    }
    if (any) os << "\n";
  }

  for (const std::string& w : result.warnings) os << "  note: " << w << "\n";
  return os.str();
}

std::string render_fitmeasures(const FitMeasures& fit) {
  std::ostringstream os;
  os << "Fit measures:\n\n";
  auto line = [&](const char* name, double v, int prec = 3) {
    os << "  " << pad(name, 14) << fmt(v, 12, prec) << "\n";
  };
  line("ppp", fit.ppp);
  line("logl", fit.logl);
  line("logl.sat", fit.logl_sat);
  line("dic", fit.dic);
  line("p.dic", fit.p_dic);
  line("waic", fit.waic);
  line("p.waic", fit.p_waic);
  line("looic", fit.looic);
  line("p.loo", fit.p_loo);
  line("margloglik", fit.margloglik);
  line("bic", fit.bic);
  os << "  " << pad("npar", 14) << right(std::to_string(fit.npar), 12) << "\n";
  os << "  " << pad("nobs", 14) << right(std::to_string(fit.n_total), 12) << "\n";
  int high = 0;
  for (int i = 0; i < fit.pareto_k.size(); ++i)
    if (fit.pareto_k[i] > 0.7) ++high;
  if (high > 0) os << "\n  " << high << " observation(s) with pareto shape > 0.7\n";
  for (const std::string& w : fit.warnings) os << "  note: " << w << "\n";
  return os.str();
}

namespace {

const char* kChainColors[] = {"#2066a8", "#c0392b", "#1e8449", "#8e44ad", "#d68910", "#117a65"};

void svg_text(std::ostringstream& os, double x, double y, const std::string& s, int size = 11,
              const char* anchor = "start") {
  os << "<text x=\"" << x << "\" y=\"" << y << "\" font-size=\"" << size
     << "\" font-family=\"sans-serif\" text-anchor=\"" << anchor << "\" fill=\"#333\">" << s
     << "</text>\n";
}

}  // namespace

std::string render_plot_svg(const FitResult& result, const std::vector<std::string>& params,
                            const std::string& kind) {
  if (kind != "trace" && kind != "autocorr") throw Error("unknown plot kind '" + kind + "'");
  const std::vector<std::string> names = result.table.free_names();
  std::vector<int> which;
  if (params.empty()) {
    for (int i = 0; i < static_cast<int>(names.size()); ++i) which.push_back(i);
  } else {
    for (const std::string& p : params) {
      const auto it = std::find(names.begin(), names.end(), p);
      if (it == names.end()) throw Error("unknown parameter '" + p + "'");
      which.push_back(static_cast<int>(it - names.begin()));
    }
  }

  const int panel_w = 760, panel_h = 150, mleft = 60, mright = 16, mtop = 24, mbot = 20;
  const int total_h = static_cast<int>(which.size()) * panel_h + 10;
  std::ostringstream os;
  os << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" << panel_w << "\" height=\"" << total_h
     << "\" viewBox=\"0 0 " << panel_w << " " << total_h << "\">\n";
  os << "<rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n";

  const int nchains = static_cast<int>(result.mcmc.draws.size());
  int panel = 0;
  for (int idx : which) {
    const double top = panel * panel_h + mtop;
    const double bottom = (panel + 1) * panel_h - mbot;
    const double left = mleft, rightx = panel_w - mright;
    svg_text(os, left, top - 8, names[static_cast<std::size_t>(idx)], 12);
    os << "<rect x=\"" << left << "\" y=\"" << top << "\" width=\"" << rightx - left
       << "\" height=\"" << bottom - top << "\" fill=\"none\" stroke=\"#999\"/>\n";

    if (kind == "trace") {
      double lo = 1e300, hi = -1e300;
      for (const Eigen::MatrixXd& d : result.mcmc.draws) {
        lo = std::min(lo, d.col(idx).minCoeff());
        hi = std::max(hi, d.col(idx).maxCoeff());
      }
      if (hi <= lo) hi = lo + 1;
      const double padv = 0.05 * (hi - lo);
      lo -= padv;
      hi += padv;
      svg_text(os, left - 4, top + 10, fmt(hi, 0), 10, "end");
      svg_text(os, left - 4, bottom, fmt(lo, 0), 10, "end");
      for (int c = 0; c < nchains; ++c) {
        const Eigen::MatrixXd& d = result.mcmc.draws[static_cast<std::size_t>(c)];
        const int S = static_cast<int>(d.rows());
        const int stride = std::max(1, S / 1500);
        os << "<polyline fill=\"none\" stroke=\"" << kChainColors[c % 6]
           << "\" stroke-width=\"0.7\" stroke-opacity=\"0.8\" points=\"";
        for (int s = 0; s < S; s += stride) {
          const double x = left + (rightx - left) * s / std::max(1, S - 1);
          const double y = bottom - (bottom - top) * (d(s, idx) - lo) / (hi - lo);
          os << fmt(x, 0, 1) << "," << fmt(y, 0, 1) << " ";
        }
        os << "\"/>\n";
      }
    } else {
      const int max_lag = 40;
      svg_text(os, left - 4, top + 10, "1", 10, "end");
      svg_text(os, left - 4, bottom, "0", 10, "end");
      for (int c = 0; c < nchains; ++c) {
        const Eigen::VectorXd rho =
            autocorr(result.mcmc.draws[static_cast<std::size_t>(c)].col(idx), max_lag);
        const double bw = (rightx - left) / ((max_lag + 1) * static_cast<double>(nchains) + 1);
        for (int l = 0; l <= max_lag; ++l) {
          const double v = std::clamp(rho[l], 0.0, 1.0);  // negative lags shown empty
          const double x = left + l * (rightx - left) / (max_lag + 1) + c * bw;
          const double y0 = bottom - (bottom - top) * v;
          const double h = (bottom - top) * v;
          os << "<rect x=\"" << fmt(x, 0, 1) << "\" y=\"" << fmt(y0, 0, 1) << "\" width=\""
             << fmt(bw * 0.85, 0, 2) << "\" height=\"" << fmt(std::max(h, 0.5), 0, 1)
             << "\" fill=\"" << kChainColors[c % 6] << "\" fill-opacity=\"0.85\"/>\n";
        }
      }
    }
    ++panel;
  }
  os << "</svg>\n";
  return os.str();
}

}  // namespace bsem
