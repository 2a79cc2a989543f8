#include "kronfit/report.hpp"

#include "kronfit/errors.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <map>
#include <sstream>

namespace kronfit {

namespace {

// NaN and infinities become null in the JSON document.
Json number(double v) { return std::isfinite(v) ? Json(v) : Json(nullptr); }

double value_of(const Json& j) { return j.is_number() ? j.get<double>() : std::nan(""); }

std::string fixed4(const Json& j) {
    if (!j.is_number()) return "NA";
    char buf[64];
    std::snprintf(buf, sizeof buf, "%.4f", j.get<double>());
    return buf;
}

std::string csv_number(const Json& j) { return j.is_number() ? format_double(j.get<double>()) : "NA"; }

std::string csv_field(const std::string& s) {
    if (s.find_first_of(",\"\n") == std::string::npos) return s;
    std::string out = "\"";
    for (char c : s) {
        if (c == '"') out += '"';
        out += c;
    }
    return out + "\"";
}

std::string pad(const std::string& s, std::size_t width, bool right) {
    if (s.size() >= width) return s;
    return right ? std::string(width - s.size(), ' ') + s : s + std::string(width - s.size(), ' ');
}

/// Plain table with a left-aligned first column and right-aligned numbers.
std::string table(const std::vector<std::string>& header, const std::vector<std::vector<std::string>>& rows) {
    std::vector<std::size_t> width(header.size());
    for (std::size_t c = 0; c < header.size(); ++c) width[c] = header[c].size();
    for (const auto& r : rows) {
        for (std::size_t c = 0; c < r.size(); ++c) width[c] = std::max(width[c], r[c].size());
    }
    std::ostringstream os;
    auto line = [&](const std::vector<std::string>& r) {
        for (std::size_t c = 0; c < r.size(); ++c) {
            if (c) os << "  ";
            os << pad(r[c], width[c], c > 0);
        }
        os << '\n';
    };
    line(header);
    for (const auto& r : rows) line(r);
    return os.str();
}

Json diagnostics_json(const std::vector<Diagnostic>& diagnostics) {
    Json out = Json::array();
    for (const auto& d : diagnostics) {
        out.push_back({{"severity", d.severity == Severity::Warning ? "warning" : "info"},
                       {"code", d.code},
                       {"message", d.message}});
    }
    return out;
}

Json constants_json(const DistanceConstants& c) { return {{"d_min", c.d_min}, {"d_max", c.d_max}}; }

Json factor_block(const CorrSpec& spec, const DistanceConstants& constants, const Eigen::VectorXd& se) {
    Json j;
    j["family"] = std::string(family_tag(spec.family));
    Json params = Json::array();
    const auto names = param_names(spec.family);
    for (std::size_t p = 0; p < names.size(); ++p) {
        const auto k = static_cast<Eigen::Index>(p);
        params.push_back({{"name", names[p]}, {"estimate", number(spec.params[k])}, {"se", number(se[k])}});
    }
    j["params"] = params;
    if (spec.family == CorrFamily::Lear) {
        const double span = constants.span();
        j["scaled_decay"] = {{"estimate", number(spec.params[1] / span)}, {"se", number(se[1] / span)}};
    }
    j["distance_constants"] = constants_json(constants);
    return j;
}

Json trace_json(const std::vector<TraceEntry>& trace) {
    Json out = Json::array();
    for (const auto& t : trace) {
        out.push_back({{"iteration", t.iteration},
                       {"loglik", number(t.loglik)},
                       {"max_gradient", number(t.max_gradient)},
                       {"step", number(t.step)}});
    }
    return out;
}

// ---- text renderers -------------------------------------------------------

std::vector<std::vector<std::string>> coefficient_rows(const Json& fit) {
    std::vector<std::vector<std::string>> rows;
    for (const auto& c : fit["coefficients"]) {
        rows.push_back({c["term"].get<std::string>(), fixed4(c["estimate"]), fixed4(c["se"]), fixed4(c["p_value"])});
    }
    return rows;
}

std::vector<std::vector<std::string>> covariance_rows(const Json& fit, bool full_precision) {
    auto fmt = [&](const Json& v) { return full_precision ? csv_number(v) : fixed4(v); };
    const Json& cov = fit["covariance"];
    std::vector<std::vector<std::string>> rows;
    rows.push_back({"sigma2", fmt(cov["sigma2"]["estimate"]), fmt(cov["sigma2"]["se"])});
    for (const char* key : {"factor1", "factor2"}) {
        const Json& f = cov[key];
        for (const auto& p : f["params"]) {
            const std::string name = p["name"].get<std::string>();
            const bool lear_delta = f.contains("scaled_decay") && name == "delta";
            if (lear_delta) {
                rows.push_back({std::string(key) + ".delta_scaled", fmt(f["scaled_decay"]["estimate"]),
                                fmt(f["scaled_decay"]["se"])});
                rows.push_back({std::string(key) + ".delta_raw", fmt(p["estimate"]), fmt(p["se"])});
            } else {
                rows.push_back({std::string(key) + "." + name, fmt(p["estimate"]), fmt(p["se"])});
            }
        }
    }
    return rows;
}

void render_fit_text(std::ostringstream& os, const Json& fit) {
    os << "Model: " << fit["model"]["factor1"].get<std::string>() << " (factor 1) x "
       << fit["model"]["factor2"].get<std::string>() << " (factor 2)\n";
    os << "Subjects: " << fit["data"]["subjects"] << ", observations: " << fit["data"]["observations"]
       << ", design columns: " << fit["data"]["covariates"] << '\n';
    os << "Status: " << (fit["converged"].get<bool>() ? "converged" : "NOT converged") << " after "
       << fit["iterations"] << " iteration(s)\n\n";

    os << "Estimates, standard errors, and p-values\n";
    os << table({"term", "Estimate", "SE", "p-value"}, coefficient_rows(fit)) << '\n';

    os << "Covariance parameters\n";
    os << table({"parameter", "Estimate", "SE"}, covariance_rows(fit, false)) << '\n';

    os << table({"criterion", "value"}, {{"log-likelihood", fixed4(fit["loglik"])},
                                         {"AIC", fixed4(fit["aic"])},
                                         {"BIC", fixed4(fit["bic"])},
                                         {"parameters", std::to_string(fit["num_params"].get<int>())}})
       << '\n';

    const Json& trace = fit["trace"];
    if (!trace.empty()) {
        os << "Iteration trace\n";
        std::vector<std::vector<std::string>> rows;
        for (const auto& t : trace) {
            char grad[32];
            const double g = value_of(t["max_gradient"]);
            std::snprintf(grad, sizeof grad, "%.3e", g);
            rows.push_back({std::to_string(t["iteration"].get<int>()), fixed4(t["loglik"]),
                            std::isfinite(g) ? grad : "NA", fixed4(t["step"])});
        }
        os << table({"iter", "loglik", "max|grad|", "step"}, rows) << '\n';
    }
    if (!fit["warnings"].empty()) {
        os << "Warnings\n";
        for (const auto& w : fit["warnings"]) os << "  - " << w.get<std::string>() << '\n';
        os << '\n';
    }
    if (fit.contains("diagnostics") && !fit["diagnostics"].empty()) {
        os << "Data diagnostics\n";
        for (const auto& d : fit["diagnostics"]) {
            os << "  [" << d["severity"].get<std::string>() << "] " << d["code"].get<std::string>() << ": "
               << d["message"].get<std::string>() << '\n';
        }
    }
}

void render_fit_csv(std::ostringstream& os, const Json& fit) {
    os << "# coefficients\nterm,estimate,se,f_statistic,p_value\n";
    for (const auto& c : fit["coefficients"]) {
        os << csv_field(c["term"].get<std::string>()) << ',' << csv_number(c["estimate"]) << ',' << csv_number(c["se"])
           << ',' << csv_number(c["f_statistic"]) << ',' << csv_number(c["p_value"]) << '\n';
    }
    os << "\n# covariance\nparameter,estimate,se\n";
    for (const auto& r : covariance_rows(fit, true)) os << r[0] << ',' << r[1] << ',' << r[2] << '\n';
    os << "\n# criteria\nquantity,value\n";
    os << "loglik," << csv_number(fit["loglik"]) << "\naic," << csv_number(fit["aic"]) << "\nbic,"
       << csv_number(fit["bic"]) << "\nnum_params," << fit["num_params"] << "\nconverged,"
       << (fit["converged"].get<bool>() ? 1 : 0) << "\niterations," << fit["iterations"] << '\n';
    os << "\n# trace\niteration,loglik,max_gradient,step\n";
    for (const auto& t : fit["trace"]) {
        os << t["iteration"] << ',' << csv_number(t["loglik"]) << ',' << csv_number(t["max_gradient"]) << ','
           << csv_number(t["step"]) << '\n';
    }
}

void render_grid_text(std::ostringstream& os, const Json& rep, const char* key, bool full_precision) {
    std::vector<std::string> header{"factor1 \\ factor2"};
    for (const auto& c : rep["families2"]) header.push_back(c.get<std::string>());
    std::vector<std::vector<std::string>> rows;
    for (std::size_t r = 0; r < rep["families1"].size(); ++r) {
        std::vector<std::string> row{rep["families1"][r].get<std::string>()};
        for (const auto& v : rep[key][r]) row.push_back(full_precision ? csv_number(v) : fixed4(v));
        rows.push_back(row);
    }
    if (full_precision) {
        for (std::size_t c = 0; c < header.size(); ++c) os << (c ? "," : "") << header[c];
        os << '\n';
        for (const auto& row : rows) {
            for (std::size_t c = 0; c < row.size(); ++c) os << (c ? "," : "") << row[c];
            os << '\n';
        }
    } else {
        os << table(header, rows);
    }
}

void render_select(std::ostringstream& os, const Json& rep, bool csv) {
    if (csv) {
        os << "# aic\n";
        render_grid_text(os, rep, "aic", true);
        os << "\n# bic\n";
        render_grid_text(os, rep, "bic", true);
        os << "\n# cells\nfactor1,factor2,fitted,converged,loglik,aic,bic,num_params,error\n";
        for (const auto& c : rep["cells"]) {
            os << c["factor1"].get<std::string>() << ',' << c["factor2"].get<std::string>() << ','
               << (c["fitted"].get<bool>() ? 1 : 0) << ',' << (c["converged"].get<bool>() ? 1 : 0) << ','
               << csv_number(c["loglik"]) << ',' << csv_number(c["aic"]) << ',' << csv_number(c["bic"]) << ','
               << c["num_params"] << ',' << csv_field(c["error"].get<std::string>()) << '\n';
        }
        os << "\n# best\nfactor1,factor2\n";
        if (!rep["best"].is_null()) {
            os << rep["best"]["factor1"].get<std::string>() << ',' << rep["best"]["factor2"].get<std::string>() << '\n';
        }
        if (rep.contains("backward")) {
            os << "\n# backward\nstep,term,f_statistic,num_df,p_value\n";
            for (const auto& s : rep["backward"]["removed"]) {
                os << s["step"] << ',' << csv_field(s["term"].get<std::string>()) << ',' << csv_number(s["f_statistic"])
                   << ',' << s["num_df"] << ',' << csv_number(s["p_value"]) << '\n';
            }
            os << '\n';
            render_fit_csv(os, rep["backward"]["final"]);
        }
        return;
    }
    os << "AIC by correlation structure\n";
    render_grid_text(os, rep, "aic", false);
    os << "\nBIC by correlation structure\n";
    render_grid_text(os, rep, "bic", false);
    bool any_issue = false;
    for (const auto& c : rep["cells"]) {
        if (c["fitted"].get<bool>() && c["converged"].get<bool>()) continue;
        if (!any_issue) os << "\nCells excluded from selection\n";
        any_issue = true;
        os << "  " << c["factor1"].get<std::string>() << " x " << c["factor2"].get<std::string>() << ": "
           << (c["fitted"].get<bool>() ? std::string("did not converge") : c["error"].get<std::string>()) << '\n';
    }
    os << "\nBest (minimum AIC among converged fits): ";
    if (rep["best"].is_null()) {
        os << "none\n";
    } else {
        os << rep["best"]["factor1"].get<std::string>() << " x " << rep["best"]["factor2"].get<std::string>() << '\n';
    }
    if (rep.contains("backward")) {
        const Json& b = rep["backward"];
        os << "\nBackward selection (alpha = " << fixed4(b["alpha"]) << ")\n";
        if (b["removed"].empty()) {
            os << "  no terms removed\n";
        } else {
            std::vector<std::vector<std::string>> rows;
            for (const auto& s : b["removed"]) {
                rows.push_back({std::to_string(s["step"].get<int>()), s["term"].get<std::string>(),
                                fixed4(s["f_statistic"]), std::to_string(s["num_df"].get<int>()), fixed4(s["p_value"])});
            }
            os << table({"step", "removed", "F", "df", "p-value"}, rows);
        }
        os << "\nFinal model\n";
        render_fit_text(os, b["final"]);
    }
}

void render_surface(std::ostringstream& os, const Json& rep, ReportFormat fmt) {
    const auto& d1 = rep["d1"];
    const auto& d2 = rep["d2"];
    if (fmt == ReportFormat::Csv) {
        os << "d1,d2,predicted\n";
        for (std::size_t i = 0; i < d1.size(); ++i) {
            for (std::size_t j = 0; j < d2.size(); ++j) {
                os << csv_number(d1[i]) << ',' << csv_number(d2[j]) << ',' << csv_number(rep["predicted"][i][j]) << '\n';
            }
        }
        if (!rep["observed"].empty()) {
            os << "\n# observed\nd1,d2,observed,pairs\n";
            for (const auto& o : rep["observed"]) {
                os << csv_number(o["d1"]) << ',' << csv_number(o["d2"]) << ',' << csv_number(o["correlation"]) << ','
                   << o["pairs"] << '\n';
            }
        }
        return;
    }
    os << "Predicted correlation: " << rep["factor1"]["family"].get<std::string>() << " (rows, factor-1 distance) x "
       << rep["factor2"]["family"].get<std::string>() << " (columns, factor-2 distance)\n";
    std::vector<std::string> header{"d1 \\ d2"};
    for (const auto& v : d2) header.push_back(fixed4(v));
    std::vector<std::vector<std::string>> rows;
    for (std::size_t i = 0; i < d1.size(); ++i) {
        std::vector<std::string> row{fixed4(d1[i])};
        for (const auto& v : rep["predicted"][i]) row.push_back(fixed4(v));
        rows.push_back(row);
    }
    os << table(header, rows);
    if (!rep["observed"].empty()) {
        os << "\nObserved pooled residual correlation\n";
        std::vector<std::vector<std::string>> orows;
        for (const auto& o : rep["observed"]) {
            orows.push_back({fixed4(o["d1"]), fixed4(o["d2"]), fixed4(o["correlation"]),
                             std::to_string(o["pairs"].get<std::size_t>())});
        }
        os << table({"d1", "d2", "observed", "pairs"}, orows);
    }
}

void render_validate(std::ostringstream& os, const Json& rep, bool csv) {
    if (csv) {
        os << "severity,code,message\n";
        for (const auto& d : rep["diagnostics"]) {
            os << d["severity"].get<std::string>() << ',' << d["code"].get<std::string>() << ','
               << csv_field(d["message"].get<std::string>()) << '\n';
        }
        return;
    }
    os << "Subjects: " << rep["data"]["subjects"] << ", observations: " << rep["data"]["observations"]
       << ", design columns: " << rep["data"]["covariates"] << '\n';
    for (const auto& d : rep["diagnostics"]) {
        os << "[" << d["severity"].get<std::string>() << "] " << d["code"].get<std::string>() << ": "
           << d["message"].get<std::string>() << '\n';
    }
    os << "Warnings: " << rep["warnings"] << '\n';
}

void render_truth(std::ostringstream& os, const Json& rep, bool csv) {
    const Json& t = rep["truth"];
    if (csv) {
        os << "parameter,value\n";
        for (std::size_t k = 0; k < t["beta"].size(); ++k) os << "beta" << k << ',' << csv_number(t["beta"][k]) << '\n';
        os << "sigma2," << csv_number(t["sigma2"]) << '\n';
        for (const char* key : {"factor1", "factor2"}) {
            const auto names = param_names(*parse_family(t[key]["family"].get<std::string>()));
            for (std::size_t p = 0; p < names.size(); ++p) {
                os << key << '.' << names[p] << ',' << csv_number(t[key]["params"][p]) << '\n';
            }
        }
        return;
    }
    os << "Simulated " << rep["data"]["subjects"] << " subjects, " << rep["data"]["observations"]
       << " observations (seed " << rep["seed"] << ")\n";
}

Json fit_data_block(const Dataset& ds) {
    return {{"subjects", ds.num_subjects()}, {"observations", ds.n()}, {"covariates", ds.q()}};
}

}  // namespace

ReportFormat parse_report_format(const std::string& tag) {
    if (tag == "text") return ReportFormat::Text;
    if (tag == "csv") return ReportFormat::Csv;
    if (tag == "json") return ReportFormat::Json;
    throw InputError("unknown format '" + tag + "' (expected text, csv, or json)");
}

Json fit_report(const Dataset& ds, const FitResult& fit, const FitOptions& opts,
                const std::vector<Diagnostic>& diagnostics) {
    Json j;
    j["command"] = "fit";
    j["data"] = fit_data_block(ds);
    j["model"] = {{"factor1", std::string(family_tag(fit.theta.tau1.family))},
                  {"factor2", std::string(family_tag(fit.theta.tau2.family))}};
    j["converged"] = fit.converged;
    j["iterations"] = fit.iterations;
    j["loglik"] = number(fit.loglik);
    j["aic"] = number(fit.aic);
    j["bic"] = number(fit.bic);
    j["num_params"] = fit.num_params;

    const Eigen::VectorXd se = fit.standard_errors();
    const auto q = fit.theta.beta.size();
    Json coefs = Json::array();
    for (Eigen::Index k = 0; k < q; ++k) {
        Json c;
        c["term"] = ds.covariate_names[static_cast<std::size_t>(k)];
        c["estimate"] = number(fit.theta.beta[k]);
        c["se"] = number(se[k]);
        try {
            Eigen::MatrixXd contrast = Eigen::MatrixXd::Zero(1, q);
            contrast(0, k) = 1.0;
            const WaldTest w = wald_f_test(fit, ds, contrast);
            c["f_statistic"] = number(w.statistic);
            c["p_value"] = number(w.p_value);
        } catch (const Error&) {
            c["f_statistic"] = nullptr;
            c["p_value"] = nullptr;
        }
        coefs.push_back(c);
    }
    j["coefficients"] = coefs;
    j["den_df"] = static_cast<double>(ds.n()) - static_cast<double>(q);

    const auto n1 = fit.theta.tau1.params.size();
    const auto n2 = fit.theta.tau2.params.size();
    Json cov;
    cov["sigma2"] = {{"estimate", number(fit.sigma2.value)}, {"se", number(std::sqrt(sigma2_variance(fit, ds)))}};
    cov["factor1"] = factor_block(fit.theta.tau1, fit.constants1, se.segment(q, n1));
    cov["factor2"] = factor_block(fit.theta.tau2, fit.constants2, se.segment(q + n1, n2));
    j["covariance"] = cov;

    Json flags = Json::array();
    for (const auto& f : negative_variance_diagnostic(fit, opts).flags) {
        flags.push_back({{"factor", f.factor},
                         {"parameter", f.parameter},
                         {"variance", number(f.variance)},
                         {"recommend_independence", f.recommend_independence}});
    }
    j["negative_variance"] = flags;
    j["warnings"] = fit.warnings;
    j["trace"] = trace_json(fit.trace);
    j["diagnostics"] = diagnostics_json(diagnostics);
    return j;
}

Json select_report(const Dataset& ds, const SelectionGrid& grid, const FitOptions& opts,
                   const std::optional<BackwardResult>& backward, double alpha) {
    Json j;
    j["command"] = "select";
    j["data"] = fit_data_block(ds);
    j["families1"] = Json::array();
    j["families2"] = Json::array();
    for (auto f : grid.rows) j["families1"].push_back(std::string(family_tag(f)));
    for (auto f : grid.cols) j["families2"].push_back(std::string(family_tag(f)));
    Json aic = Json::array();
    Json bic = Json::array();
    for (Eigen::Index r = 0; r < grid.aic.rows(); ++r) {
        Json ar = Json::array();
        Json br = Json::array();
        for (Eigen::Index c = 0; c < grid.aic.cols(); ++c) {
            ar.push_back(number(grid.aic(r, c)));
            br.push_back(number(grid.bic(r, c)));
        }
        aic.push_back(ar);
        bic.push_back(br);
    }
    j["aic"] = aic;
    j["bic"] = bic;
    Json cells = Json::array();
    for (const auto& c : grid.cells) {
        cells.push_back({{"factor1", std::string(family_tag(c.family1))},
                         {"factor2", std::string(family_tag(c.family2))},
                         {"fitted", c.fitted},
                         {"converged", c.converged},
                         {"loglik", c.fitted ? number(c.loglik) : Json(nullptr)},
                         {"aic", c.fitted ? number(c.aic) : Json(nullptr)},
                         {"bic", c.fitted ? number(c.bic) : Json(nullptr)},
                         {"num_params", c.num_params},
                         {"error", c.error}});
    }
    j["cells"] = cells;
    if (grid.best) {
        j["best"] = {{"factor1", std::string(family_tag(grid.rows[grid.best->first]))},
                     {"factor2", std::string(family_tag(grid.cols[grid.best->second]))}};
    } else {
        j["best"] = nullptr;
    }
    if (backward) {
        Json b;
        b["alpha"] = alpha;
        b["removed"] = Json::array();
        for (const auto& s : backward->removed) {
            b["removed"].push_back({{"step", s.step},
                                    {"term", s.term},
                                    {"f_statistic", number(s.statistic)},
                                    {"num_df", s.num_df},
                                    {"p_value", number(s.p_value)}});
        }
        b["kept"] = backward->kept_terms;
        b["final"] = fit_report(backward->data, backward->fit, opts, {});
        j["backward"] = b;
    }
    return j;
}

Json validate_report(const Dataset& ds, const std::vector<Diagnostic>& diagnostics) {
    Json j;
    j["command"] = "validate";
    j["data"] = fit_data_block(ds);
    j["distance_constants"] = {{"factor1", constants_json(ds.constants1)}, {"factor2", constants_json(ds.constants2)}};
    j["diagnostics"] = diagnostics_json(diagnostics);
    j["warnings"] = warning_count(diagnostics);
    return j;
}

Json truth_report(const SimDesign& design, const Dataset& ds) {
    const ThetaVector truth = true_theta(design, ds);
    Json j;
    j["command"] = "simulate";
    j["seed"] = design.seed;
    j["data"] = fit_data_block(ds);
    j["design"] = sim_design_to_json(design);
    Json t;
    t["beta"] = std::vector<double>(truth.beta.data(), truth.beta.data() + truth.beta.size());
    t["sigma2"] = design.sigma2_true;
    t["factor1"] = corr_spec_to_json(truth.tau1);
    t["factor2"] = corr_spec_to_json(truth.tau2);
    t["factor1"]["scaled_decay"] = number(scaled_decay(truth.tau1, ds.constants1));
    t["factor2"]["scaled_decay"] = number(scaled_decay(truth.tau2, ds.constants2));
    j["truth"] = t;
    j["distance_constants"] = {{"factor1", constants_json(ds.constants1)}, {"factor2", constants_json(ds.constants2)}};
    return j;
}

double factor_correlation(const CorrSpec& spec, double d, const DistanceConstants& constants) {
    if (d == 0.0) return 1.0;
    return eval_family(spec, d, constants);
}

CorrelationSurface correlation_surface(const CorrSpec& spec1, const DistanceConstants& c1, const CorrSpec& spec2,
                                       const DistanceConstants& c2, const std::vector<double>& d1,
                                       const std::vector<double>& d2) {
    spec1.check();
    spec2.check();
    CorrelationSurface s{spec1, spec2, c1, c2, d1, d2, Eigen::MatrixXd(static_cast<Eigen::Index>(d1.size()), static_cast<Eigen::Index>(d2.size())), {}};
    std::vector<double> r2(d2.size());
    for (std::size_t j = 0; j < d2.size(); ++j) r2[j] = factor_correlation(spec2, d2[j], c2);
    for (std::size_t i = 0; i < d1.size(); ++i) {
        const double r1 = factor_correlation(spec1, d1[i], c1);
        for (std::size_t j = 0; j < d2.size(); ++j) {
            s.predicted(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(j)) = r1 * r2[j];
        }
    }
    return s;
}

std::vector<CorrelationSurface::Observed> observed_correlations(const Dataset& ds) {
    const Eigen::VectorXd beta = ols_beta(ds);
    double ss = 0.0;
    std::size_t count = 0;
    std::vector<Eigen::VectorXd> resid;
    for (const auto& b : ds.subjects) {
        resid.push_back(b.y - b.X * beta);
        ss += resid.back().squaredNorm();
        count += static_cast<std::size_t>(b.y.size());
    }
    const double var = ss / static_cast<double>(count);
    if (!(var > 0.0)) throw DegenerateResiduals("residuals are identically zero; correlations undefined");
    // Keys rounded to 1e-9 so equal distances from different subjects pool together.
    std::map<std::pair<long long, long long>, std::pair<double, std::size_t>> bins;
    auto key = [](double d) { return static_cast<long long>(std::llround(d * 1e9)); };
    for (std::size_t i = 0; i < ds.subjects.size(); ++i) {
        const auto& b = ds.subjects[i];
        const Eigen::Index s = b.s();
        const Eigen::Index m = b.t() * s;
        for (Eigen::Index a = 0; a < m; ++a) {
            for (Eigen::Index c = a + 1; c < m; ++c) {
                auto& bin = bins[{key(b.dist1(a / s, c / s)), key(b.dist2(a % s, c % s))}];
                bin.first += resid[i][a] * resid[i][c];
                bin.second += 1;
            }
        }
    }
    std::vector<CorrelationSurface::Observed> out;
    for (const auto& [k, v] : bins) {
        out.push_back({static_cast<double>(k.first) * 1e-9, static_cast<double>(k.second) * 1e-9,
                       v.first / static_cast<double>(v.second) / var, v.second});
    }
    return out;
}

Json surface_report(const CorrelationSurface& s) {
    Json j;
    j["command"] = "surface";
    j["factor1"] = corr_spec_to_json(s.spec1);
    j["factor2"] = corr_spec_to_json(s.spec2);
    j["factor1"]["distance_constants"] = constants_json(s.constants1);
    j["factor2"]["distance_constants"] = constants_json(s.constants2);
    j["factor1"]["scaled_decay"] = number(scaled_decay(s.spec1, s.constants1));
    j["factor2"]["scaled_decay"] = number(scaled_decay(s.spec2, s.constants2));
    j["d1"] = s.d1;
    j["d2"] = s.d2;
    Json pred = Json::array();
    for (Eigen::Index i = 0; i < s.predicted.rows(); ++i) {
        Json row = Json::array();
        for (Eigen::Index k = 0; k < s.predicted.cols(); ++k) row.push_back(number(s.predicted(i, k)));
        pred.push_back(row);
    }
    j["predicted"] = pred;
    j["observed"] = Json::array();
    for (const auto& o : s.observed) {
        j["observed"].push_back({{"d1", o.d1}, {"d2", o.d2}, {"correlation", number(o.correlation)}, {"pairs", o.pairs}});
    }
    return j;
}

std::string render_report(const Json& report, ReportFormat format) {
    if (format == ReportFormat::Json) return report.dump(2) + "\n";
    std::ostringstream os;
    const std::string cmd = report.value("command", std::string());
    const bool csv = format == ReportFormat::Csv;
    if (cmd == "fit") {
        csv ? render_fit_csv(os, report) : render_fit_text(os, report);
    } else if (cmd == "select") {
        render_select(os, report, csv);
    } else if (cmd == "surface") {
        render_surface(os, report, format);
    } else if (cmd == "validate") {
        render_validate(os, report, csv);
    } else if (cmd == "simulate") {
        render_truth(os, report, csv);
    } else {
        throw Error("unknown report type '" + cmd + "'");
    }
    return os.str();
}

}  // namespace kronfit
