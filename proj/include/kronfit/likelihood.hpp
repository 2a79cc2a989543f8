#pragma once

#include "kronfit/corr_models.hpp"
#include "kronfit/data.hpp"

#include <Eigen/Dense>

#include <functional>
#include <string>
#include <vector>

namespace kronfit {

/// Mean-model and correlation parameters. Flattened order: beta_1..beta_q, then
/// tau1 parameters, then tau2 parameters (each in its family's layout order).
struct ThetaVector {
    Eigen::VectorXd beta;
    CorrSpec tau1;
    CorrSpec tau2;

    [[nodiscard]] Eigen::Index size() const noexcept {
        return beta.size() + tau1.params.size() + tau2.params.size();
    }
    [[nodiscard]] Eigen::VectorXd flatten() const;
    /// Same families, new values from a flat vector.
    [[nodiscard]] ThetaVector with_values(const Eigen::VectorXd& flat) const;
    static ThetaVector unflatten(const Eigen::VectorXd& flat, std::size_t q, CorrFamily f1, CorrFamily f2);
};

/// sigma^2 estimate with its variance 2 sigma^4 / n (beta and tau treated as known).
struct SigmaSqEstimate {
    double value = 0.0;
    double variance = 0.0;

    static SigmaSqEstimate from(double value, std::size_t n) {
        return SigmaSqEstimate{value, 2.0 * value * value / static_cast<double>(n)};
    }
};

inline constexpr double kSigma2Floor = 1e-300;

[[nodiscard]] double loglik(const Dataset& ds, const ThetaVector& theta, double sigma2);
[[nodiscard]] double profile_sigma2(const Dataset& ds, const ThetaVector& theta);
[[nodiscard]] double profile_loglik(const Dataset& ds, const ThetaVector& theta);
[[nodiscard]] Eigen::VectorXd profile_gradient(const Dataset& ds, const ThetaVector& theta);

/// Everything one pass over the subjects produces.
struct ProfileEvaluation {
    double loglik = 0.0;
    double sigma2 = 0.0;
    double quad_sum = 0.0;    ///< sum_i r_i' (G_i (x) O_i)^-1 r_i
    double logdet_sum = 0.0;  ///< sum_i ln|G_i (x) O_i|
    Eigen::VectorXd gradient; ///< empty unless requested
};

[[nodiscard]] ProfileEvaluation evaluate_profile(const Dataset& ds, const ThetaVector& theta, bool with_gradient);

/// Generalized least squares beta for fixed correlation parameters, and the
/// sum of X_i' S_i^-1 X_i it was solved from.
struct GlsSolution {
    Eigen::VectorXd beta;
    Eigen::MatrixXd information;
};

[[nodiscard]] GlsSolution gls_beta(const Dataset& ds, const CorrSpec& tau1, const CorrSpec& tau2);

using ScalarFunction = std::function<double(const Eigen::VectorXd&)>;
using VectorFunction = std::function<Eigen::VectorXd(const Eigen::VectorXd&)>;

/// Central-difference Hessian of a scalar function, symmetrized. Step for
/// coordinate j is eps^(1/4) * max(|theta_j|, scale_j). A failed evaluation is
/// retried once with halved steps before the exception propagates.
[[nodiscard]] Eigen::MatrixXd fd_hessian(const ScalarFunction& f, const Eigen::VectorXd& theta0,
                                         const Eigen::VectorXd& scale);

/// Hessian from central differences of an analytic gradient, symmetrized. Step
/// for coordinate j is eps^(1/3) * max(|theta_j|, scale_j); near a bound in
/// [lower, upper] the difference becomes one-sided.
[[nodiscard]] Eigen::MatrixXd fd_jacobian_of_gradient(const VectorFunction& grad, const Eigen::VectorXd& theta0,
                                                      const Eigen::VectorXd& scale, const Eigen::VectorXd& lower,
                                                      const Eigen::VectorXd& upper);

/// Names in flattened order: design column names, then "f1.<param>", "f2.<param>".
[[nodiscard]] std::vector<std::string> theta_names(const Dataset& ds, CorrFamily f1, CorrFamily f2);

}  // namespace kronfit
