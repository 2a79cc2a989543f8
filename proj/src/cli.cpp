#include "kronfit/cli.hpp"

#include "kronfit/config.hpp"
#include "kronfit/errors.hpp"
#include "kronfit/fitter.hpp"
#include "kronfit/inference.hpp"
#include "kronfit/report.hpp"
#include "kronfit/simulate.hpp"

#include <CLI11.hpp>

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <string>
#include <thread>

namespace kronfit {

namespace fs = std::filesystem;

namespace {

struct CommonArgs {
    std::string data;
    std::string config;
    std::string factor1;
    std::string factor2;
    std::string out;
    std::string format = "text";
    int threads = 0;
};

void add_common(CLI::App* cmd, CommonArgs& args, bool needs_data) {
    auto* data = cmd->add_option("--data", args.data, "Long-format CSV (subject, f1, f2_id, y, covariates)");
    if (needs_data) data->required();
    cmd->add_option("--config", args.config, "JSON config file");
    cmd->add_option("--out", args.out, "Write the report here instead of stdout");
    cmd->add_option("--format", args.format, "Report format")->check(CLI::IsMember({"text", "csv", "json"}));
    cmd->add_option("--threads", args.threads, "Worker threads (default: KRONFIT_THREADS or 1)")
        ->check(CLI::NonNegativeNumber);
}

unsigned resolve_threads(int flag) {
    if (flag > 0) return static_cast<unsigned>(flag);
    if (const char* env = std::getenv("KRONFIT_THREADS")) {
        try {
            const int v = std::stoi(env);
            if (v > 0) return static_cast<unsigned>(v);
        } catch (const std::exception&) {
        }
        throw InputError(std::string("KRONFIT_THREADS must be a positive integer, got '") + env + "'");
    }
    return 1;
}

RunConfig config_for(const CommonArgs& args) {
    return args.config.empty() ? RunConfig{} : load_config(args.config);
}

Dataset dataset_for(const CommonArgs& args, const RunConfig& cfg) {
    const IngestConfig ingest = cfg.ingest ? *cfg.ingest : default_ingest(args.data);
    return load_dataset(args.data, ingest);
}

/// Command-line spec wins over the config; LEAR decay converted from scaled form.
CorrSpec choose_spec(const std::string& flag, const std::optional<CorrSpec>& from_config, CorrFamily fallback,
                     const DistanceConstants& constants) {
    CorrSpec spec{fallback, Eigen::VectorXd()};
    if (!flag.empty()) {
        spec = parse_factor_arg(flag);
    } else if (from_config) {
        spec = *from_config;
    }
    return unscale_decay(spec, constants);
}

void emit(const Json& report, const CommonArgs& args) {
    const std::string text = render_report(report, parse_report_format(args.format));
    if (args.out.empty()) {
        std::cout << text;
        std::cout.flush();
        return;
    }
    std::ofstream out(args.out, std::ios::binary);
    if (!out) throw InputError("cannot write report to '" + args.out + "'");
    out << text;
}

std::pair<double, double> parse_range(const std::string& text) {
    const auto colon = text.find(':');
    if (colon == std::string::npos) throw InputError("range must look like min:max, got '" + text + "'");
    try {
        const double lo = std::stod(text.substr(0, colon));
        const double hi = std::stod(text.substr(colon + 1));
        if (!(lo >= 0.0) || !(hi > lo)) throw InputError("range needs 0 <= min < max, got '" + text + "'");
        return {lo, hi};
    } catch (const std::invalid_argument&) {
        throw InputError("range must look like min:max, got '" + text + "'");
    }
}

std::vector<double> linspace(double lo, double hi, int steps) {
    std::vector<double> v(static_cast<std::size_t>(steps));
    for (int k = 0; k < steps; ++k) {
        v[static_cast<std::size_t>(k)] = steps == 1 ? lo : lo + (hi - lo) * k / (steps - 1);
    }
    return v;
}

int cmd_fit(const CommonArgs& args, const std::string& trace_path) {
    const RunConfig cfg = config_for(args);
    const Dataset ds = dataset_for(args, cfg);
    const auto diagnostics = validate(ds);
    const CorrSpec spec1 = choose_spec(args.factor1, cfg.factor1, CorrFamily::Lear, ds.constants1);
    const CorrSpec spec2 = choose_spec(args.factor2, cfg.factor2, CorrFamily::Lear, ds.constants2);
    require_constants_for(spec1.family, ds.constants1, "factor 1");
    require_constants_for(spec2.family, ds.constants2, "factor 2");

    FitOptions opts = cfg.fit;
    std::ofstream trace;
    if (!trace_path.empty()) {
        trace.open(trace_path, std::ios::binary);
        if (!trace) throw InputError("cannot write trace to '" + trace_path + "'");
        opts.on_iteration = [&trace](const TraceEntry& e) {
            Json j{{"iteration", e.iteration}, {"loglik", e.loglik}, {"max_gradient", e.max_gradient}, {"step", e.step}};
            trace << j.dump() << '\n';
        };
    }
    const FitResult fit = fit_ml(ds, spec1, spec2, opts);
    emit(fit_report(ds, fit, opts, diagnostics), args);
    if (!fit.converged) {
        std::cerr << "kronfit: optimizer did not converge after " << fit.iterations << " iteration(s)\n";
        return kExitNotConverged;
    }
    return kExitOk;
}

int cmd_select(const CommonArgs& args, const std::string& fam1, const std::string& fam2, bool backward,
               std::optional<double> alpha_flag) {
    const RunConfig cfg = config_for(args);
    const Dataset ds = dataset_for(args, cfg);
    std::vector<CorrFamily> families1 = parse_family_list("lear,de,ar1");
    std::vector<CorrFamily> families2 = families1;
    if (!fam1.empty()) {
        families1 = parse_family_list(fam1);
    } else if (!cfg.families1.empty()) {
        families1 = cfg.families1;
    }
    if (!fam2.empty()) {
        families2 = parse_family_list(fam2);
    } else if (!cfg.families2.empty()) {
        families2 = cfg.families2;
    }
    for (auto f : families1) require_constants_for(f, ds.constants1, "factor 1");
    for (auto f : families2) require_constants_for(f, ds.constants2, "factor 2");
    const double alpha = alpha_flag ? *alpha_flag : cfg.alpha.value_or(0.20);
    const bool run_backward = backward || cfg.backward;

    const SelectionGrid grid = structure_grid(ds, families1, families2, cfg.fit, resolve_threads(args.threads));
    std::optional<BackwardResult> reduction;
    if (run_backward && grid.best) {
        CorrSpec spec1{grid.rows[grid.best->first], Eigen::VectorXd()};
        CorrSpec spec2{grid.cols[grid.best->second], Eigen::VectorXd()};
        if (!args.factor1.empty() || cfg.factor1) spec1 = choose_spec(args.factor1, cfg.factor1, spec1.family, ds.constants1);
        if (!args.factor2.empty() || cfg.factor2) spec2 = choose_spec(args.factor2, cfg.factor2, spec2.family, ds.constants2);
        reduction = backward_select(ds, cfg.terms, spec1, spec2, alpha, cfg.fit);
    }
    emit(select_report(ds, grid, cfg.fit, reduction, alpha), args);
    for (const auto& c : grid.cells) {
        if (!c.fitted) {
            std::cerr << "kronfit: " << family_tag(c.family1) << " x " << family_tag(c.family2) << " failed: " << c.error
                      << '\n';
        }
    }
    if (!grid.best) {
        std::cerr << "kronfit: no structure converged\n";
        return kExitNotConverged;
    }
    if (reduction && !reduction->fit.converged) return kExitNotConverged;
    return kExitOk;
}

int cmd_surface(const CommonArgs& args, const std::string& fit_path, const std::string& range1,
                const std::string& range2, int steps) {
    const RunConfig cfg = config_for(args);
    std::optional<Dataset> ds;
    if (!args.data.empty()) ds = dataset_for(args, cfg);

    CorrSpec spec1;
    CorrSpec spec2;
    DistanceConstants c1;
    DistanceConstants c2;
    bool have_constants = false;
    if (!fit_path.empty()) {
        std::ifstream in(fit_path);
        if (!in) throw InputError("cannot open fit report '" + fit_path + "'");
        Json rep;
        try {
            rep = Json::parse(in);
        } catch (const nlohmann::json::parse_error& e) {
            throw InputError("fit report '" + fit_path + "' is not valid JSON: " + e.what());
        }
        if (rep.value("command", std::string()) == "select" && rep.contains("backward")) rep = rep["backward"]["final"];
        if (rep.value("command", std::string()) != "fit") throw InputError("'" + fit_path + "' is not a fit report");
        auto read_factor = [&](const Json& f, CorrSpec& spec, DistanceConstants& c) {
            spec.family = *parse_family(f["family"].get<std::string>());
            spec.params.resize(static_cast<Eigen::Index>(f["params"].size()));
            for (std::size_t p = 0; p < f["params"].size(); ++p) {
                spec.params[static_cast<Eigen::Index>(p)] = f["params"][p]["estimate"].get<double>();
            }
            c.d_min = f["distance_constants"]["d_min"].get<double>();
            c.d_max = f["distance_constants"]["d_max"].get<double>();
        };
        try {
            read_factor(rep["covariance"]["factor1"], spec1, c1);
            read_factor(rep["covariance"]["factor2"], spec2, c2);
        } catch (const nlohmann::json::exception&) {
            throw InputError("fit report '" + fit_path + "' lacks covariance estimates");
        }
        have_constants = true;
    } else {
        if (args.factor1.empty() || args.factor2.empty()) {
            throw InputError("surface needs --factor1 and --factor2 with parameters, or --fit");
        }
        spec1 = parse_factor_arg(args.factor1);
        spec2 = parse_factor_arg(args.factor2);
        if (spec1.params.size() != static_cast<Eigen::Index>(param_count(spec1.family)) ||
            spec2.params.size() != static_cast<Eigen::Index>(param_count(spec2.family))) {
            throw InputError("surface needs explicit parameters, e.g. --factor1 lear:0.9,0.5");
        }
        if (ds) {
            c1 = ds->constants1;
            c2 = ds->constants2;
            have_constants = true;
        }
    }
    std::pair<double, double> r1{c1.d_min, c1.d_max};
    std::pair<double, double> r2{c2.d_min, c2.d_max};
    if (!range1.empty()) r1 = parse_range(range1);
    if (!range2.empty()) r2 = parse_range(range2);
    if (!have_constants) {
        if (range1.empty() || range2.empty()) {
            throw InputError("surface needs --range1 and --range2 when neither --data nor --fit is given");
        }
        c1 = DistanceConstants{r1.first, r1.second};
        c2 = DistanceConstants{r2.first, r2.second};
        spec1 = unscale_decay(spec1, c1);
        spec2 = unscale_decay(spec2, c2);
    } else if (fit_path.empty()) {
        spec1 = unscale_decay(spec1, c1);
        spec2 = unscale_decay(spec2, c2);
    }
    if (steps < 2) throw InputError("--steps must be at least 2");
    CorrelationSurface surface =
        correlation_surface(spec1, c1, spec2, c2, linspace(r1.first, r1.second, steps), linspace(r2.first, r2.second, steps));
    if (ds) surface.observed = observed_correlations(*ds);
    emit(surface_report(surface), args);
    return kExitOk;
}

int cmd_simulate(const CommonArgs& args, std::optional<std::uint64_t> seed) {
    if (args.config.empty()) throw InputError("simulate needs --config with a \"simulate\" section");
    if (args.out.empty()) throw InputError("simulate needs --out for the CSV file");
    const RunConfig cfg = load_config(args.config);
    if (!cfg.simulate) throw InputError("config '" + args.config + "' has no \"simulate\" section");
    SimDesign design = *cfg.simulate;
    if (seed) design.seed = *seed;
    const Dataset ds = sample_dataset(design);

    const fs::path csv_path = args.out;
    {
        std::ofstream out(csv_path, std::ios::binary);
        if (!out) throw InputError("cannot write '" + csv_path.string() + "'");
        write_canonical_csv(out, ds);
    }
    {
        std::ofstream out(distance_sidecar(csv_path), std::ios::binary);
        if (!out) throw InputError("cannot write '" + distance_sidecar(csv_path).string() + "'");
        write_distance_csv(out, LevelDistances{ds.f2_levels, ds.f2_distance});
    }
    fs::path truth_path = csv_path;
    truth_path.replace_extension();
    truth_path = truth_path.string() + ".truth.json";
    const Json truth = truth_report(design, ds);
    {
        std::ofstream out(truth_path, std::ios::binary);
        if (!out) throw InputError("cannot write '" + truth_path.string() + "'");
        out << truth.dump(2) << '\n';
    }
    std::cout << render_report(truth, parse_report_format(args.format));
    return kExitOk;
}

int cmd_validate(const CommonArgs& args) {
    const RunConfig cfg = config_for(args);
    const Dataset ds = dataset_for(args, cfg);
    emit(validate_report(ds, validate(ds)), args);
    return kExitOk;
}

}  // namespace

int run_cli(int argc, char** argv) {
    CLI::App app{"Kronecker-product correlation models for doubly repeated measures"};
    app.require_subcommand(1);
    app.set_version_flag("--version", "kronfit 0.1.0");

    CommonArgs fit_args, sel_args, surf_args, sim_args, val_args;
    std::string trace_path;
    auto* fit = app.add_subcommand("fit", "Fit one correlation structure by maximum likelihood");
    add_common(fit, fit_args, true);
    fit->add_option("--factor1", fit_args.factor1, "Factor-1 family[:params], LEAR decay scaled (default lear)");
    fit->add_option("--factor2", fit_args.factor2, "Factor-2 family[:params] (default lear)");
    fit->add_option("--trace", trace_path, "Write one JSON line per iteration to this file");

    std::string fam1, fam2;
    bool backward = false;
    std::optional<double> alpha;
    auto* sel = app.add_subcommand("select", "AIC/BIC grid over structures, optional backward selection");
    add_common(sel, sel_args, true);
    sel->add_option("--families1", fam1, "Factor-1 families, comma-separated (default lear,de,ar1)");
    sel->add_option("--families2", fam2, "Factor-2 families, comma-separated (default lear,de,ar1)");
    sel->add_flag("--backward", backward, "Run backward covariate selection under the best structure");
    sel->add_option("--alpha", alpha, "Removal threshold for backward selection (default 0.20)")
        ->check(CLI::Range(0.0, 1.0));
    sel->add_option("--factor1", sel_args.factor1, "Override the factor-1 structure used for backward selection");
    sel->add_option("--factor2", sel_args.factor2, "Override the factor-2 structure used for backward selection");

    std::string fit_path, range1, range2;
    int steps = 11;
    auto* surf = app.add_subcommand("surface", "Predicted correlation over factor-1 x factor-2 distance");
    add_common(surf, surf_args, false);
    surf->add_option("--factor1", surf_args.factor1, "Factor-1 family:params");
    surf->add_option("--factor2", surf_args.factor2, "Factor-2 family:params");
    surf->add_option("--fit", fit_path, "Take parameters from a saved JSON fit report");
    surf->add_option("--range1", range1, "Factor-1 distance range min:max");
    surf->add_option("--range2", range2, "Factor-2 distance range min:max");
    surf->add_option("--steps", steps, "Grid points per axis (default 11)");

    std::optional<std::uint64_t> seed;
    auto* sim = app.add_subcommand("simulate", "Draw a dataset from a simulation design");
    add_common(sim, sim_args, false);
    sim->add_option("--seed", seed, "Override the design seed");

    auto* val = app.add_subcommand("validate", "Check a dataset and report diagnostics");
    add_common(val, val_args, true);

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        const int code = app.exit(e);
        return code == 0 ? kExitOk : kExitInputError;
    }

    try {
        if (*fit) return cmd_fit(fit_args, trace_path);
        if (*sel) return cmd_select(sel_args, fam1, fam2, backward, alpha);
        if (*surf) return cmd_surface(surf_args, fit_path, range1, range2, steps);
        if (*sim) return cmd_simulate(sim_args, seed);
        if (*val) return cmd_validate(val_args);
    } catch (const InputError& e) {
        std::cerr << "kronfit: input error: " << e.what() << '\n';
        return kExitInputError;
    } catch (const RankDeficient& e) {
        std::cerr << "kronfit: input error: " << e.what() << '\n';
        return kExitInputError;
    } catch (const SizeGuardError& e) {
        std::cerr << "kronfit: input error: " << e.what() << '\n';
        return kExitInputError;
    } catch (const DomainError& e) {
        std::cerr << "kronfit: input error: " << e.what() << '\n';
        return kExitInputError;
    } catch (const Error& e) {
        std::cerr << "kronfit: numeric failure: " << e.what() << '\n';
        return kExitNumericFailure;
    } catch (const std::exception& e) {
        std::cerr << "kronfit: internal failure: " << e.what() << '\n';
        return kExitNumericFailure;
    }
    return kExitInputError;
}

}  // namespace kronfit
