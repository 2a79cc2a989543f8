#include "kronfit/inference.hpp"

#include "kronfit/errors.hpp"
#include "kronfit/fdist.hpp"

#include <algorithm>
#include <atomic>
#include <cmath>
#include <limits>
#include <thread>

namespace kronfit {

WaldTest wald_f_test(const FitResult& fit, const Dataset& ds, const Eigen::MatrixXd& contrast) {
    const Eigen::Index q = fit.theta.beta.size();
    if (contrast.cols() != q) {
        throw InputError("contrast has " + std::to_string(contrast.cols()) + " columns, expected q = " + std::to_string(q));
    }
    const Eigen::Index c = contrast.rows();
    Eigen::FullPivLU<Eigen::MatrixXd> lu(contrast);
    if (c == 0 || c > q || lu.rank() != c) throw RankDeficient("contrast matrix must have full row rank");
    const Eigen::MatrixXd vbeta = fit.vcov.topLeftCorner(q, q);
    if (!vbeta.allFinite()) throw Error("variance of beta_hat is unavailable (singular information)");

    WaldTest test;
    test.contrast = contrast;
    test.estimate = contrast * fit.theta.beta;
    const Eigen::MatrixXd middle = contrast * vbeta * contrast.transpose();
    Eigen::LDLT<Eigen::MatrixXd> ldlt(middle);
    if (ldlt.info() != Eigen::Success || !(ldlt.vectorD().array() > 0.0).all()) {
        throw Error("C V C' is not positive definite; the Wald statistic is undefined");
    }
    test.statistic = std::max(0.0, test.estimate.dot(ldlt.solve(test.estimate)) / static_cast<double>(c));
    test.num_df = static_cast<int>(c);
    test.den_df = static_cast<double>(ds.n()) - static_cast<double>(q);
    if (!(test.den_df > 0.0)) throw InputError("n - q must be positive for the residual F approximation");
    test.p_value = f_upper_tail(test.statistic, static_cast<double>(c), test.den_df);
    return test;
}

WaldTest wald_term_test(const FitResult& fit, const Dataset& ds, const Term& term) {
    Eigen::MatrixXd contrast = Eigen::MatrixXd::Zero(static_cast<Eigen::Index>(term.columns.size()), fit.theta.beta.size());
    for (std::size_t i = 0; i < term.columns.size(); ++i) contrast(static_cast<Eigen::Index>(i), term.columns[i]) = 1.0;
    return wald_f_test(fit, ds, contrast);
}

double sigma2_variance(const FitResult& fit, const Dataset& ds) {
    const double s2 = fit.sigma2.value;
    return 2.0 * s2 * s2 / static_cast<double>(ds.n());
}

SelectionGrid structure_grid(const Dataset& ds, const std::vector<CorrFamily>& families1,
                             const std::vector<CorrFamily>& families2, const FitOptions& opts, unsigned threads) {
    if (families1.empty() || families2.empty()) throw InputError("structure grid needs at least one family per factor");
    SelectionGrid grid;
    grid.rows = families1;
    grid.cols = families2;
    const std::size_t nr = families1.size();
    const std::size_t nc = families2.size();
    grid.cells.resize(nr * nc);
    FitOptions cell_opts = opts;
    cell_opts.on_iteration = nullptr;

    auto run_cell = [&](std::size_t idx) {
        GridCell& cell = grid.cells[idx];
        cell.family1 = families1[idx / nc];
        cell.family2 = families2[idx % nc];
        try {
            FitResult fit = fit_ml(ds, cell.family1, cell.family2, cell_opts);
            cell.fitted = true;
            cell.converged = fit.converged;
            cell.loglik = fit.loglik;
            cell.aic = fit.aic;
            cell.bic = fit.bic;
            cell.num_params = fit.num_params;
            cell.fit = std::move(fit);
        } catch (const std::exception& e) {
            cell.error = e.what();
        }
    };

    const unsigned workers = std::max(1u, std::min<unsigned>(threads, static_cast<unsigned>(nr * nc)));
    if (workers == 1) {
        for (std::size_t i = 0; i < nr * nc; ++i) run_cell(i);
    } else {
        std::atomic<std::size_t> next{0};
        std::vector<std::thread> pool;
        for (unsigned w = 0; w < workers; ++w) {
            pool.emplace_back([&] {
                for (std::size_t i = next++; i < nr * nc; i = next++) run_cell(i);
            });
        }
        for (auto& th : pool) th.join();
    }

    const double nan = std::numeric_limits<double>::quiet_NaN();
    grid.aic = Eigen::MatrixXd::Constant(static_cast<Eigen::Index>(nr), static_cast<Eigen::Index>(nc), nan);
    grid.bic = grid.aic;
    for (std::size_t r = 0; r < nr; ++r) {
        for (std::size_t c = 0; c < nc; ++c) {
            const GridCell& cell = grid.cell(r, c);
            if (!cell.fitted) continue;
            grid.aic(static_cast<Eigen::Index>(r), static_cast<Eigen::Index>(c)) = cell.aic;
            grid.bic(static_cast<Eigen::Index>(r), static_cast<Eigen::Index>(c)) = cell.bic;
            if (!cell.converged) continue;
            if (!grid.best) {
                grid.best = {r, c};
                continue;
            }
            const GridCell& b = grid.cell(grid.best->first, grid.best->second);
            if (cell.aic < b.aic || (cell.aic == b.aic && cell.num_params < b.num_params)) grid.best = {r, c};
        }
    }
    return grid;
}

Dataset restrict_terms(const Dataset& ds, const std::vector<std::string>& terms) {
    std::vector<Eigen::Index> cols;
    for (const auto& term : ds.terms) {
        const bool intercept = term.name == kInterceptName;
        if (intercept || std::find(terms.begin(), terms.end(), term.name) != terms.end()) {
            cols.insert(cols.end(), term.columns.begin(), term.columns.end());
        }
    }
    for (const auto& name : terms) {
        const bool known = std::any_of(ds.terms.begin(), ds.terms.end(), [&](const Term& t) { return t.name == name; });
        if (!known) throw InputError("unknown model term '" + name + "'");
    }
    std::sort(cols.begin(), cols.end());
    return select_columns(ds, cols);
}

BackwardResult backward_select(const Dataset& ds, const std::vector<std::string>& initial_terms, const CorrSpec& spec1,
                               const CorrSpec& spec2, double alpha, const FitOptions& opts) {
    if (!(alpha >= 0.0 && alpha <= 1.0)) throw InputError("alpha must lie in [0, 1]");
    std::vector<std::string> current;
    if (initial_terms.empty()) {
        for (const auto& t : ds.terms) {
            if (t.name != kInterceptName) current.push_back(t.name);
        }
    } else {
        current = initial_terms;
        std::erase(current, std::string(kInterceptName));
    }
    BackwardResult result;
    std::optional<ThetaVector> warm;
    int step = 0;
    while (true) {
        Dataset data = restrict_terms(ds, current);
        std::optional<ThetaVector> start;
        if (warm) {
            // Correlation parameters carry over; beta restarts at OLS for the new design.
            ThetaVector th = starting_values(data, spec1.family, spec2.family);
            th.tau1 = warm->tau1;
            th.tau2 = warm->tau2;
            start = th;
        }
        FitResult fit = fit_ml(data, spec1, spec2, opts, start);
        warm = fit.theta;

        std::vector<std::pair<std::string, WaldTest>> tests;
        for (const auto& term : data.terms) {
            if (term.name == kInterceptName) continue;
            tests.emplace_back(term.name, wald_term_test(fit, data, term));
        }
        std::size_t worst = tests.size();
        for (std::size_t i = 0; i < tests.size(); ++i) {
            if (worst == tests.size() || tests[i].second.p_value > tests[worst].second.p_value) worst = i;
        }
        if (worst == tests.size() || !(tests[worst].second.p_value > alpha)) {
            result.kept_terms = current;
            result.data = std::move(data);
            result.fit = std::move(fit);
            result.final_tests = std::move(tests);
            return result;
        }
        const auto& [name, test] = tests[worst];
        result.removed.push_back(RemovalStep{++step, name, test.statistic, test.num_df, test.p_value});
        std::erase(current, name);
    }
}

}  // namespace kronfit
