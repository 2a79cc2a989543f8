#pragma once

#include <Eigen/Dense>

#include <array>
#include <cstddef>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

namespace kronfit {

/// Stationary correlation families that are continuous functions of distance.
///
/// Parameter layout per family (the order used everywhere in the library):
///   LEAR         (rho, delta)   rho^(d_min + delta * (d - d_min) / (d_max - d_min))
///   AR1          (rho)          rho^d
///   DE           (rho, nu)      rho^(d^nu)
///   EXPONENTIAL  (phi)          exp(-d / phi)
///   GAUSSIAN     (phi)          exp(-d^2 / phi^2)
///   LINEAR       (phi)          (1 - phi d) 1[phi d <= 1]
///   SPHERICAL    (phi)          (1 - 3d/(2 phi) + d^3/(2 phi^3)) 1[d <= phi]
///   CS           (rho)          rho
///   INDEPENDENCE ()             0
enum class CorrFamily {
    Lear,
    Ar1,
    De,
    Exponential,
    Gaussian,
    Linear,
    Spherical,
    CompoundSymmetry,
    Independence,
};

inline constexpr std::array<CorrFamily, 9> kAllFamilies = {
    CorrFamily::Lear,        CorrFamily::Ar1,    CorrFamily::De,
    CorrFamily::Exponential, CorrFamily::Gaussian, CorrFamily::Linear,
    CorrFamily::Spherical,   CorrFamily::CompoundSymmetry, CorrFamily::Independence,
};

[[nodiscard]] std::size_t param_count(CorrFamily family) noexcept;

/// Lowercase tag used in configs and on the command line (lear, ar1, ...).
[[nodiscard]] std::string_view family_tag(CorrFamily family) noexcept;

/// Inverse of family_tag; case-insensitive. Returns nullopt for unknown tags.
[[nodiscard]] std::optional<CorrFamily> parse_family(std::string_view tag);

/// Human-readable parameter names, e.g. {"rho", "delta"} for LEAR.
[[nodiscard]] std::vector<std::string> param_names(CorrFamily family);

/// True when the family has a correlation-at-unit-distance parameter rho first.
[[nodiscard]] bool has_rho(CorrFamily family) noexcept;

struct DistanceConstants {
    double d_min = 0.0;
    double d_max = 1.0;

    [[nodiscard]] double span() const noexcept { return d_max - d_min; }
};

struct CorrSpec {
    CorrFamily family = CorrFamily::Independence;
    Eigen::VectorXd params;

    CorrSpec() = default;
    CorrSpec(CorrFamily f, Eigen::VectorXd p) : family(f), params(std::move(p)) {}
    CorrSpec(CorrFamily f, std::initializer_list<double> p);

    /// Throws DomainError if params violate the family constraints.
    void check() const;
};

/// LEAR correlation at an off-diagonal distance d.
[[nodiscard]] double lear_corr(double rho, double delta, double d, const DistanceConstants& constants);

/// Off-diagonal correlation for any family. The diagonal is never evaluated here.
[[nodiscard]] double eval_family(const CorrSpec& spec, double d, const DistanceConstants& constants);

/// Partial derivatives of eval_family with respect to each parameter, in layout order.
[[nodiscard]] Eigen::VectorXd eval_family_gradient(const CorrSpec& spec, double d,
                                                   const DistanceConstants& constants);

/// Factor correlation matrix with unit diagonal; checked for positive definiteness.
/// `factor_name` is used in error messages.
[[nodiscard]] Eigen::MatrixXd build_factor_matrix(const CorrSpec& spec, const Eigen::MatrixXd& distances,
                                                  const DistanceConstants& constants,
                                                  std::string_view factor_name = "factor");

/// Same matrix without the positive-definiteness check.
[[nodiscard]] Eigen::MatrixXd fill_factor_matrix(const CorrSpec& spec, const Eigen::MatrixXd& distances,
                                                 const DistanceConstants& constants);

/// Elementwise parameter derivatives of the factor matrix (zero diagonal), one per parameter.
[[nodiscard]] std::vector<Eigen::MatrixXd> factor_matrix_derivatives(const CorrSpec& spec,
                                                                     const Eigen::MatrixXd& distances,
                                                                     const DistanceConstants& constants);

/// delta / (d_max - d_min) for LEAR; NaN for every other family.
[[nodiscard]] double scaled_decay(const CorrSpec& spec, const DistanceConstants& constants);

/// Converts a LEAR spec whose decay is in scaled form (delta / (d_max - d_min))
/// to the raw delta used by the model. Other families are returned unchanged.
[[nodiscard]] CorrSpec unscale_decay(const CorrSpec& scaled, const DistanceConstants& constants);

}  // namespace kronfit
