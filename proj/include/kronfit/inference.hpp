#pragma once

#include "kronfit/corr_models.hpp"
#include "kronfit/data.hpp"
#include "kronfit/fitter.hpp"

#include <Eigen/Dense>

#include <optional>
#include <string>
#include <utility>
#include <vector>

namespace kronfit {

/// Wald statistic referred to F(c, n - q) (the residual F approximation).
struct WaldTest {
    Eigen::MatrixXd contrast;  ///< c x q
    Eigen::VectorXd estimate;  ///< C beta_hat
    double statistic = 0.0;
    int num_df = 0;
    double den_df = 0.0;
    double p_value = 1.0;
};

[[nodiscard]] WaldTest wald_f_test(const FitResult& fit, const Dataset& ds, const Eigen::MatrixXd& contrast);

/// Joint test that every column owned by `term` is zero.
[[nodiscard]] WaldTest wald_term_test(const FitResult& fit, const Dataset& ds, const Term& term);

/// Large-sample variance of sigma^2_hat: 2 sigma^4 / n.
[[nodiscard]] double sigma2_variance(const FitResult& fit, const Dataset& ds);

struct GridCell {
    CorrFamily family1 = CorrFamily::Independence;
    CorrFamily family2 = CorrFamily::Independence;
    bool fitted = false;  ///< false when the fit threw
    bool converged = false;
    double loglik = 0.0;
    double aic = 0.0;
    double bic = 0.0;
    std::size_t num_params = 0;
    std::string error;
    std::optional<FitResult> fit;
};

struct SelectionGrid {
    std::vector<CorrFamily> rows;  ///< factor-1 families
    std::vector<CorrFamily> cols;  ///< factor-2 families
    Eigen::MatrixXd aic;           ///< NaN where the fit failed
    Eigen::MatrixXd bic;
    std::vector<GridCell> cells;   ///< row-major
    std::optional<std::pair<std::size_t, std::size_t>> best;

    [[nodiscard]] const GridCell& cell(std::size_t r, std::size_t c) const { return cells[r * cols.size() + c]; }
};

/// Fits every (factor-1, factor-2) family pair on the same data. Best cell is
/// the minimum AIC among converged fits; ties go to fewer parameters, then
/// row-major order. Cells run on up to `threads` worker threads.
[[nodiscard]] SelectionGrid structure_grid(const Dataset& ds, const std::vector<CorrFamily>& families1,
                                           const std::vector<CorrFamily>& families2, const FitOptions& opts = {},
                                           unsigned threads = 1);

struct RemovalStep {
    int step = 0;
    std::string term;
    double statistic = 0.0;
    int num_df = 0;
    double p_value = 0.0;
};

struct BackwardResult {
    std::vector<RemovalStep> removed;  ///< in removal order
    std::vector<std::string> kept_terms;
    Dataset data;                      ///< final design
    FitResult fit;
    std::vector<std::pair<std::string, WaldTest>> final_tests;
};

/// Backward elimination: refit (covariance parameters re-estimated each step),
/// drop the term with the largest Wald p-value while that p exceeds alpha. The
/// intercept is never removed. `initial_terms` empty means every term in ds.
[[nodiscard]] BackwardResult backward_select(const Dataset& ds, const std::vector<std::string>& initial_terms,
                                             const CorrSpec& spec1, const CorrSpec& spec2, double alpha,
                                             const FitOptions& opts = {});

/// Dataset restricted to the named terms (plus the intercept).
[[nodiscard]] Dataset restrict_terms(const Dataset& ds, const std::vector<std::string>& terms);

}  // namespace kronfit
