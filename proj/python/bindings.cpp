#include <pybind11/eigen.h>
#include <pybind11/pybind11.h>
#include <pybind11/stl.h>

#include "bsem/artifact.hpp"
#include "bsem/engine.hpp"
#include "bsem/model_syntax.hpp"
#include "bsem/report.hpp"

namespace py = pybind11;
using namespace bsem;

PYBIND11_MODULE(_core, m) {
  m.doc() = "bayesian structural equation models";

  py::class_<SummaryRow>(m, "SummaryRow")
      .def_readonly("name", &SummaryRow::name)
      .def_readonly("mean", &SummaryRow::mean)
      .def_readonly("sd", &SummaryRow::sd)
      .def_readonly("pi_lower", &SummaryRow::hpd_lower)
      .def_readonly("pi_upper", &SummaryRow::hpd_upper)
      .def_readonly("rhat", &SummaryRow::rhat)
      .def_readonly("neff", &SummaryRow::neff)
      .def_readonly("prior", &SummaryRow::prior)
      .def("__repr__", [](const SummaryRow& r) {
        return "<SummaryRow " + r.name + " mean=" + std::to_string(r.mean) + ">";
      });

  py::class_<FitMeasures>(m, "FitMeasures")
      .def_readonly("ppp", &FitMeasures::ppp)
      .def_readonly("logl", &FitMeasures::logl)
      .def_readonly("logl_sat", &FitMeasures::logl_sat)
      .def_readonly("dic", &FitMeasures::dic)
      .def_readonly("p_dic", &FitMeasures::p_dic)
      .def_readonly("waic", &FitMeasures::waic)
      .def_readonly("p_waic", &FitMeasures::p_waic)
      .def_readonly("looic", &FitMeasures::looic)
      .def_readonly("p_loo", &FitMeasures::p_loo)
      .def_readonly("margloglik", &FitMeasures::margloglik)
      .def_readonly("bic", &FitMeasures::bic)
      .def_readonly("npar", &FitMeasures::npar)
      .def_readonly("n_total", &FitMeasures::n_total)
      .def_readonly("pareto_k", &FitMeasures::pareto_k)
      .def_readonly("warnings", &FitMeasures::warnings);

  py::class_<ConvergenceReport>(m, "ConvergenceReport")
      .def_readonly("rhat", &ConvergenceReport::rhat)
      .def_readonly("warnings", &ConvergenceReport::warnings)
      .def_readonly("converged", &ConvergenceReport::converged)
      .def_readonly("adapt_used", &ConvergenceReport::adapt_used)
      .def_readonly("burnin_used", &ConvergenceReport::burnin_used)
      .def_readonly("sample_used", &ConvergenceReport::sample_used);

  py::class_<FitResult>(m, "FitResult")
      .def_property_readonly("draws", [](const FitResult& r) { return r.mcmc.draws; })
      .def_property_readonly("inits", [](const FitResult& r) { return r.mcmc.inits; })
      .def_property_readonly("convergence",
                             [](const FitResult& r) { return r.mcmc.convergence; })
      .def_readonly("summary", &FitResult::summary)
      .def_readonly("fit", &FitResult::fit)
      .def_readonly("has_fit", &FitResult::has_fit)
      .def_readonly("warnings", &FitResult::warnings)
      .def_readonly("model_text", &FitResult::model_text)
      .def_property_readonly("npar", [](const FitResult& r) { return r.table.npar; })
      .def_property_readonly("free_names", [](const FitResult& r) { return r.table.free_names(); })
      .def_property_readonly("partable_csv",
                             [](const FitResult& r) { return table_to_csv(r.table); })
      .def("render_summary", [](const FitResult& r) { return render_summary(r); })
      .def("render_fitmeasures", [](const FitResult& r) {
        return r.has_fit ? render_fitmeasures(r.fit) : std::string();
      });

  m.def(
      "fit",
      [](const std::string& model, const std::string& data, const std::string& group,
         const std::vector<std::string>& group_equal, const std::map<std::string, std::string>& dp,
         const std::string& cp, int chains, int adapt, int burnin, int sample, std::uint64_t seed,
         const std::string& inits, bool auto_converge, int threads, int ppp_reps,
         bool compute_fit) {
        FitOptions opt;
        opt.model_text = model;
        opt.data_path = data;
        opt.group_column = group;
        opt.group_equal = group_equal;
        opt.dp = dp;
        opt.cp = cp;
        opt.mcmc.chains = chains;
        opt.mcmc.adapt = adapt;
        opt.mcmc.burnin = burnin;
        opt.mcmc.sample = sample;
        opt.mcmc.seed = seed;
        opt.mcmc.inits = inits;
        opt.mcmc.auto_converge = auto_converge;
        opt.mcmc.threads = threads;
        opt.ppp_reps = ppp_reps;
        opt.compute_fit = compute_fit;
        FitResult out;
        {
          py::gil_scoped_release release;
          out = fit_model(opt);
        }
        return out;
      },
      py::arg("model"), py::arg("data"), py::arg("group") = "",
      py::arg("group_equal") = std::vector<std::string>{},
      py::arg("dp") = std::map<std::string, std::string>{}, py::arg("cp") = "srs",
      py::arg("chains") = 3, py::arg("adapt") = 1000, py::arg("burnin") = 4000,
      py::arg("sample") = 10000, py::arg("seed") = 1, py::arg("inits") = "prior",
      py::arg("auto_converge") = false, py::arg("threads") = 0, py::arg("ppp_reps") = 1000,
      py::arg("compute_fit") = true);

  m.def(
      "partable",
      [](const std::string& model, const std::vector<std::string>& groups,
         const std::vector<std::string>& group_equal) {
        GroupInfo gi;
        gi.levels = groups;
        BuildOptions opt;
        opt.group_equal = group_equal;
        return table_to_csv(build_table(parse_model(model), gi, opt));
      },
      py::arg("model"), py::arg("groups") = std::vector<std::string>{},
      py::arg("group_equal") = std::vector<std::string>{});

  m.def("canonical_model", [](const std::string& model) { return print_model(parse_model(model)); });
  m.def("save_run", &save_run, py::arg("dir"), py::arg("result"));
  m.def("load_run", &load_run, py::arg("dir"));
}
