#pragma once

#include "kronfit/corr_models.hpp"
#include "kronfit/data.hpp"
#include "kronfit/likelihood.hpp"

#include <Eigen/Dense>

#include <functional>
#include <optional>
#include <string>
#include <vector>

namespace kronfit {

struct TraceEntry {
    int iteration = 0;
    double loglik = 0.0;
    double max_gradient = 0.0;  ///< max-norm of the projected gradient
    double step = 0.0;          ///< accepted step length (0 for the starting point)
};

struct FitOptions {
    int max_iter = 100;
    double tol_loglik = 1e-8;  ///< relative change in the profile log-likelihood
    double tol_grad = 1e-6;    ///< max-norm of the projected gradient
    int step_halvings = 20;
    double bounds_margin = 1e-6;
    /// Upper bound on LEAR delta as a multiple of d_max - d_min; DE nu uses the same cap.
    double decay_cap_multiple = 50.0;
    /// Negative-variance diagnostic recommends an independence refit when rho is
    /// below this and (for LEAR) the scaled decay exceeds the next threshold.
    double diagnostic_rho_threshold = 0.2;
    double diagnostic_scaled_decay_threshold = 1.0;
    /// Called after every iteration (including the starting point) when set.
    std::function<void(const TraceEntry&)> on_iteration;

    void check() const;
};

struct ParameterBox {
    Eigen::VectorXd lower;
    Eigen::VectorXd upper;

    [[nodiscard]] bool contains(const Eigen::VectorXd& x) const;
};

[[nodiscard]] ParameterBox parameter_box(const Dataset& ds, CorrFamily f1, CorrFamily f2, const FitOptions& opts);

/// Typical magnitude of each flattened parameter, used to size difference steps.
[[nodiscard]] Eigen::VectorXd parameter_scale(const Dataset& ds, CorrFamily f1, CorrFamily f2);

struct FitResult {
    ThetaVector theta;  ///< beta_hat and tau_hat
    SigmaSqEstimate sigma2;
    double loglik = 0.0;
    Eigen::MatrixXd hessian;  ///< FD Hessian of the profile log-likelihood at theta
    Eigen::MatrixXd vcov;     ///< inverse of the negated Hessian, over (beta, tau)
    Eigen::VectorXd gradient;
    double aic = 0.0;
    double bic = 0.0;
    std::size_t num_params = 0;  ///< q + correlation parameters + 1
    std::size_t n = 0;
    bool converged = false;
    int iterations = 0;
    std::vector<TraceEntry> trace;
    std::vector<std::string> warnings;
    double scaled_decay1 = 0.0;  ///< delta / (d_max - d_min), factor 1 (NaN unless LEAR)
    double scaled_decay2 = 0.0;
    DistanceConstants constants1;
    DistanceConstants constants2;
    std::vector<std::string> names;  ///< flattened parameter names

    [[nodiscard]] const Eigen::VectorXd& beta() const noexcept { return theta.beta; }
    [[nodiscard]] Eigen::VectorXd standard_errors() const;
    [[nodiscard]] double max_gradient() const noexcept { return trace.empty() ? 0.0 : trace.back().max_gradient; }
};

/// OLS beta, nearest-lag residual correlations per factor, and AR(1)-equivalent
/// decay parameters. Throws RankDeficient for a rank-deficient design.
[[nodiscard]] ThetaVector starting_values(const Dataset& ds, CorrFamily f1, CorrFamily f2);

/// Ordinary least squares on the stacked design.
[[nodiscard]] Eigen::VectorXd ols_beta(const Dataset& ds);

/// Maximizes the profile log-likelihood over (beta, tau). Parameters already in
/// spec1/spec2 (when of the right length) seed the correlation parameters;
/// `start` overrides every starting value.
[[nodiscard]] FitResult fit_ml(const Dataset& ds, const CorrSpec& spec1, const CorrSpec& spec2,
                               const FitOptions& opts = {}, const std::optional<ThetaVector>& start = std::nullopt);

[[nodiscard]] inline FitResult fit_ml(const Dataset& ds, CorrFamily f1, CorrFamily f2, const FitOptions& opts = {}) {
    return fit_ml(ds, CorrSpec{f1, Eigen::VectorXd()}, CorrSpec{f2, Eigen::VectorXd()}, opts);
}

struct NegativeVarianceFlag {
    int factor = 0;  ///< 1 or 2
    std::string parameter;
    double variance = 0.0;
    bool recommend_independence = false;
    std::string message;
};

struct NegativeVarianceReport {
    std::vector<NegativeVarianceFlag> flags;

    [[nodiscard]] bool empty() const noexcept { return flags.empty(); }
    [[nodiscard]] bool fired_on(int factor) const noexcept;
};

/// Flags nonpositive (or undefined) sampling variances of correlation parameters.
[[nodiscard]] NegativeVarianceReport negative_variance_diagnostic(const FitResult& result,
                                                                  const FitOptions& opts = {});

}  // namespace kronfit
