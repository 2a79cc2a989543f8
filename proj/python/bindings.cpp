#include "kronfit/config.hpp"
#include "kronfit/errors.hpp"
#include "kronfit/fitter.hpp"
#include "kronfit/inference.hpp"
#include "kronfit/likelihood.hpp"
#include "kronfit/report.hpp"
#include "kronfit/simulate.hpp"

#include <pybind11/eigen.h>
#include <pybind11/pybind11.h>
#include <pybind11/stl.h>

#include <optional>
#include <string>
#include <vector>

namespace py = pybind11;
using namespace kronfit;

namespace {

RunConfig run_config(const std::string& config_json) {
    return parse_config(Json::parse(config_json.empty() ? "{}" : config_json), ".");
}

CorrSpec spec_for(const std::string& text, const DistanceConstants& constants) {
    return unscale_decay(parse_factor_arg(text), constants);
}

std::string fit_json(const Dataset& ds, const std::string& factor1, const std::string& factor2,
                     const std::string& config_json) {
    const RunConfig cfg = run_config(config_json);
    const CorrSpec spec1 = spec_for(factor1, ds.constants1);
    const CorrSpec spec2 = spec_for(factor2, ds.constants2);
    FitResult fit;
    {
        py::gil_scoped_release release;
        fit = fit_ml(ds, spec1, spec2, cfg.fit);
    }
    return fit_report(ds, fit, cfg.fit, validate(ds)).dump();
}

std::string select_json(const Dataset& ds, const std::string& families1, const std::string& families2, bool backward,
                        double alpha, unsigned threads, const std::string& config_json) {
    const RunConfig cfg = run_config(config_json);
    const auto f1 = parse_family_list(families1);
    const auto f2 = parse_family_list(families2);
    SelectionGrid grid;
    std::optional<BackwardResult> reduction;
    {
        py::gil_scoped_release release;
        grid = structure_grid(ds, f1, f2, cfg.fit, threads);
        if (backward && grid.best) {
            reduction = backward_select(ds, cfg.terms, CorrSpec{grid.rows[grid.best->first], Eigen::VectorXd()},
                                        CorrSpec{grid.cols[grid.best->second], Eigen::VectorXd()}, alpha, cfg.fit);
        }
    }
    return select_report(ds, grid, cfg.fit, reduction, alpha).dump();
}

std::string surface_json(const std::string& factor1, const std::string& factor2, std::pair<double, double> range1,
                         std::pair<double, double> range2, int steps) {
    if (steps < 2) throw InputError("steps must be at least 2");
    const DistanceConstants c1{range1.first, range1.second};
    const DistanceConstants c2{range2.first, range2.second};
    auto grid = [steps](std::pair<double, double> r) {
        std::vector<double> v;
        for (int k = 0; k < steps; ++k) v.push_back(r.first + (r.second - r.first) * k / (steps - 1));
        return v;
    };
    return surface_report(correlation_surface(spec_for(factor1, c1), c1, spec_for(factor2, c2), c2, grid(range1),
                                              grid(range2)))
        .dump();
}

}  // namespace

PYBIND11_MODULE(_core, m) {
    m.doc() = "Kronecker-product correlation models for doubly repeated measures";

    // Translators run newest first, so the more specific InputError goes last.
    auto& base = py::register_exception<Error>(m, "KronfitError", PyExc_RuntimeError);
    py::register_exception<InputError>(m, "InputError", base.ptr());

    py::class_<Dataset>(m, "Dataset")
        .def_property_readonly("num_subjects", &Dataset::num_subjects)
        .def_property_readonly("n", &Dataset::n)
        .def_property_readonly("q", &Dataset::q)
        .def_readonly("covariate_names", &Dataset::covariate_names)
        .def_readonly("f2_levels", &Dataset::f2_levels)
        .def_property_readonly("distance_constants",
                               [](const Dataset& ds) {
                                   return py::make_tuple(py::make_tuple(ds.constants1.d_min, ds.constants1.d_max),
                                                         py::make_tuple(ds.constants2.d_min, ds.constants2.d_max));
                               })
        .def("design", &stacked_design, "Stacked design matrix, subjects in order, factor-1-major within subject")
        .def("response", &stacked_response)
        .def("__repr__", [](const Dataset& ds) {
            return "<kronfit.Dataset subjects=" + std::to_string(ds.num_subjects()) + " n=" + std::to_string(ds.n()) +
                   " q=" + std::to_string(ds.q()) + ">";
        });

    m.def(
        "load_dataset",
        [](const std::string& path, const std::string& config_json) {
            const RunConfig cfg = run_config(config_json);
            return load_dataset(path, cfg.ingest ? *cfg.ingest : default_ingest(path));
        },
        py::arg("path"), py::arg("config_json") = "");
    m.def(
        "simulate",
        [](const std::string& design_json, std::optional<std::uint64_t> seed) {
            SimDesign d = parse_sim_design(Json::parse(design_json));
            if (seed) d.seed = *seed;
            return sample_dataset(d);
        },
        py::arg("design_json"), py::arg("seed") = py::none());
    m.def("fit_json", &fit_json, py::arg("dataset"), py::arg("factor1") = "lear", py::arg("factor2") = "lear",
          py::arg("config_json") = "");
    m.def("select_json", &select_json, py::arg("dataset"), py::arg("families1") = "lear,de,ar1",
          py::arg("families2") = "lear,de,ar1", py::arg("backward") = false, py::arg("alpha") = 0.20,
          py::arg("threads") = 1, py::arg("config_json") = "");
    m.def(
        "validate_json", [](const Dataset& ds) { return validate_report(ds, validate(ds)).dump(); }, py::arg("dataset"));
    m.def("surface_json", &surface_json, py::arg("factor1"), py::arg("factor2"), py::arg("range1"), py::arg("range2"),
          py::arg("steps") = 11);
    m.def(
        "profile_loglik",
        [](const Dataset& ds, const Eigen::VectorXd& beta, const std::string& factor1, const std::string& factor2) {
            ThetaVector th;
            th.beta = beta;
            th.tau1 = spec_for(factor1, ds.constants1);
            th.tau2 = spec_for(factor2, ds.constants2);
            return profile_loglik(ds, th);
        },
        py::arg("dataset"), py::arg("beta"), py::arg("factor1"), py::arg("factor2"));
    m.def(
        "lear_correlation",
        [](double rho, double delta, double d, double d_min, double d_max) {
            return lear_corr(rho, delta, d, DistanceConstants{d_min, d_max});
        },
        py::arg("rho"), py::arg("delta"), py::arg("d"), py::arg("d_min"), py::arg("d_max"));
}
