#pragma once

#include <Eigen/Dense>

#include <cstddef>
#include <string_view>

namespace kronfit {

/// Two factor correlation matrices whose Kronecker product gamma (x) omega is the
/// within-subject correlation. Vectors acted on by the pair are ordered
/// factor-1-major: element j*s + l pairs factor-1 index j with factor-2 index l.
struct KronPair {
    Eigen::MatrixXd gamma;  ///< t x t, factor 1
    Eigen::MatrixXd omega;  ///< s x s, factor 2

    [[nodiscard]] Eigen::Index t() const noexcept { return gamma.rows(); }
    [[nodiscard]] Eigen::Index s() const noexcept { return omega.rows(); }
};

inline constexpr std::size_t kDefaultDenseCap = 4096;

/// Smallest admissible Cholesky pivot for an n x n factor.
[[nodiscard]] inline double pd_tolerance(Eigen::Index n) noexcept {
    return 1e-10 * static_cast<double>(n);
}

/// Lower Cholesky factor; throws NotPositiveDefinite naming `name` when the
/// smallest pivot (squared diagonal of L) does not exceed pd_tolerance.
[[nodiscard]] Eigen::MatrixXd factor_cholesky(const Eigen::MatrixXd& m, std::string_view name = "factor");

/// Explicit product; block (j, k) equals gamma(j, k) * omega.
[[nodiscard]] Eigen::MatrixXd kron_dense(const KronPair& pair, std::size_t max_rows = kDefaultDenseCap);

/// s * ln|gamma| + t * ln|omega| from the factor Cholesky pivots.
[[nodiscard]] double kron_logdet(const KronPair& pair);

/// r' (gamma^-1 (x) omega^-1) r without forming the product.
[[nodiscard]] double kron_quadform(const Eigen::VectorXd& r, const KronPair& pair);

/// Lower factors (L_gamma, L_omega) with chol(gamma (x) omega) = L_gamma (x) L_omega.
[[nodiscard]] KronPair kron_cholesky(const KronPair& pair);

/// Cached factorization used by the likelihood: one Cholesky per factor.
class KronFactorization {
public:
    KronFactorization() = default;
    KronFactorization(const KronPair& pair, std::string_view gamma_name = "factor 1",
                      std::string_view omega_name = "factor 2");

    [[nodiscard]] Eigen::Index t() const noexcept { return chol_gamma_.rows(); }
    [[nodiscard]] Eigen::Index s() const noexcept { return chol_omega_.rows(); }
    [[nodiscard]] double logdet_gamma() const noexcept { return logdet_gamma_; }
    [[nodiscard]] double logdet_omega() const noexcept { return logdet_omega_; }
    [[nodiscard]] double logdet() const noexcept {
        return static_cast<double>(s()) * logdet_gamma_ + static_cast<double>(t()) * logdet_omega_;
    }
    [[nodiscard]] const Eigen::MatrixXd& chol_gamma() const noexcept { return chol_gamma_; }
    [[nodiscard]] const Eigen::MatrixXd& chol_omega() const noexcept { return chol_omega_; }

    /// (gamma (x) omega)^-1 r, returned reshaped as an s x t matrix.
    [[nodiscard]] Eigen::MatrixXd solve_reshaped(const Eigen::VectorXd& r) const;
    /// (gamma (x) omega)^-1 r as a vector.
    [[nodiscard]] Eigen::VectorXd solve(const Eigen::VectorXd& r) const;
    /// (gamma (x) omega)^-1 applied to each column of x.
    [[nodiscard]] Eigen::MatrixXd solve(const Eigen::MatrixXd& x) const;
    /// r' (gamma (x) omega)^-1 r via two triangular sweeps.
    [[nodiscard]] double quadform(const Eigen::VectorXd& r) const;
    /// (L_gamma (x) L_omega) z, the map used to draw correlated noise.
    [[nodiscard]] Eigen::VectorXd correlate(const Eigen::VectorXd& z) const;

private:
    void check_length(Eigen::Index len) const;

    Eigen::MatrixXd chol_gamma_;
    Eigen::MatrixXd chol_omega_;
    double logdet_gamma_ = 0.0;
    double logdet_omega_ = 0.0;
};

}  // namespace kronfit
