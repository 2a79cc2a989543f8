#include "kronfit/corr_models.hpp"

#include "kronfit/errors.hpp"
#include "kronfit/kron_algebra.hpp"

#include <algorithm>
#include <cctype>
#include <cmath>
#include <limits>
#include <sstream>

namespace kronfit {

namespace {

constexpr double kLogRhoFloor = 1e-12;

double tolerance_for(const DistanceConstants& c) {
    return 1e-9 * std::max(1.0, std::abs(c.d_max));
}

// ln(rho) with the rho -> 0+ limit of rho^e ln(rho) folded to zero by callers.
double safe_log_rho(double rho) {
    return rho < kLogRhoFloor ? 0.0 : std::log(rho);
}

std::string describe(const CorrSpec& spec) {
    std::ostringstream os;
    os << family_tag(spec.family) << "(";
    for (Eigen::Index i = 0; i < spec.params.size(); ++i) {
        os << (i ? ", " : "") << spec.params[i];
    }
    os << ")";
    return os.str();
}

void require_rho(double rho, const CorrSpec& spec) {
    if (!(rho >= 0.0 && rho < 1.0)) {
        throw DomainError("rho must lie in [0, 1) for " + describe(spec));
    }
}

}  // namespace

std::size_t param_count(CorrFamily family) noexcept {
    switch (family) {
        case CorrFamily::Lear:
        case CorrFamily::De:
            return 2;
        case CorrFamily::Ar1:
        case CorrFamily::Exponential:
        case CorrFamily::Gaussian:
        case CorrFamily::Linear:
        case CorrFamily::Spherical:
        case CorrFamily::CompoundSymmetry:
            return 1;
        case CorrFamily::Independence:
            return 0;
    }
    return 0;
}

std::string_view family_tag(CorrFamily family) noexcept {
    switch (family) {
        case CorrFamily::Lear: return "lear";
        case CorrFamily::Ar1: return "ar1";
        case CorrFamily::De: return "de";
        case CorrFamily::Exponential: return "exponential";
        case CorrFamily::Gaussian: return "gaussian";
        case CorrFamily::Linear: return "linear";
        case CorrFamily::Spherical: return "spherical";
        case CorrFamily::CompoundSymmetry: return "cs";
        case CorrFamily::Independence: return "independence";
    }
    return "unknown";
}

std::optional<CorrFamily> parse_family(std::string_view tag) {
    std::string lowered;
    lowered.reserve(tag.size());
    for (unsigned char ch : tag) {
        lowered.push_back(static_cast<char>(std::tolower(ch)));
    }
    for (CorrFamily f : kAllFamilies) {
        if (family_tag(f) == lowered) {
            return f;
        }
    }
    return std::nullopt;
}

std::vector<std::string> param_names(CorrFamily family) {
    switch (family) {
        case CorrFamily::Lear: return {"rho", "delta"};
        case CorrFamily::De: return {"rho", "nu"};
        case CorrFamily::Ar1:
        case CorrFamily::CompoundSymmetry: return {"rho"};
        case CorrFamily::Exponential:
        case CorrFamily::Gaussian:
        case CorrFamily::Linear:
        case CorrFamily::Spherical: return {"phi"};
        case CorrFamily::Independence: return {};
    }
    return {};
}

bool has_rho(CorrFamily family) noexcept {
    return family == CorrFamily::Lear || family == CorrFamily::Ar1 || family == CorrFamily::De ||
           family == CorrFamily::CompoundSymmetry;
}

CorrSpec::CorrSpec(CorrFamily f, std::initializer_list<double> p) : family(f), params(static_cast<Eigen::Index>(p.size())) {
    Eigen::Index i = 0;
    for (double v : p) {
        params[i++] = v;
    }
}

void CorrSpec::check() const {
    if (static_cast<std::size_t>(params.size()) != param_count(family)) {
        std::ostringstream os;
        os << family_tag(family) << " expects " << param_count(family) << " parameter(s), got " << params.size();
        throw DomainError(os.str());
    }
    for (Eigen::Index i = 0; i < params.size(); ++i) {
        if (!std::isfinite(params[i])) {
            throw DomainError("non-finite parameter in " + describe(*this));
        }
    }
    switch (family) {
        case CorrFamily::Lear:
            require_rho(params[0], *this);
            if (params[1] < 0.0) throw DomainError("delta must be >= 0 for " + describe(*this));
            break;
        case CorrFamily::De:
            require_rho(params[0], *this);
            if (params[1] < 0.0) throw DomainError("nu must be >= 0 for " + describe(*this));
            break;
        case CorrFamily::Ar1:
        case CorrFamily::CompoundSymmetry:
            require_rho(params[0], *this);
            break;
        case CorrFamily::Exponential:
        case CorrFamily::Gaussian:
        case CorrFamily::Linear:
        case CorrFamily::Spherical:
            if (!(params[0] > 0.0)) throw DomainError("phi must be > 0 for " + describe(*this));
            break;
        case CorrFamily::Independence:
            break;
    }
}

double lear_corr(double rho, double delta, double d, const DistanceConstants& constants) {
    if (!(rho >= 0.0 && rho < 1.0)) throw DomainError("LEAR rho must lie in [0, 1)");
    if (!(delta >= 0.0)) throw DomainError("LEAR delta must be >= 0");
    if (!(constants.d_max > constants.d_min)) {
        throw DomainError("LEAR requires d_min < d_max (scaling denominator vanishes)");
    }
    const double tol = tolerance_for(constants);
    if (d < constants.d_min - tol || d > constants.d_max + tol) {
        std::ostringstream os;
        os << "distance " << d << " outside [" << constants.d_min << ", " << constants.d_max << "]";
        throw DomainError(os.str());
    }
    d = std::clamp(d, constants.d_min, constants.d_max);
    const double exponent = constants.d_min + delta * (d - constants.d_min) / constants.span();
    return std::pow(rho, exponent);
}

double eval_family(const CorrSpec& spec, double d, const DistanceConstants& constants) {
    spec.check();
    const auto& p = spec.params;
    switch (spec.family) {
        case CorrFamily::Lear:
            return lear_corr(p[0], p[1], d, constants);
        case CorrFamily::Ar1:
            return std::pow(p[0], d);
        case CorrFamily::De:
            return std::pow(p[0], std::pow(d, p[1]));
        case CorrFamily::Exponential:
            return std::exp(-d / p[0]);
        case CorrFamily::Gaussian:
            return std::exp(-(d * d) / (p[0] * p[0]));
        case CorrFamily::Linear:
            return p[0] * d <= 1.0 ? 1.0 - p[0] * d : 0.0;
        case CorrFamily::Spherical: {
            const double phi = p[0];
            if (!(d <= phi)) return 0.0;
            return 1.0 - 3.0 * d / (2.0 * phi) + (d * d * d) / (2.0 * phi * phi * phi);
        }
        case CorrFamily::CompoundSymmetry:
            return p[0];
        case CorrFamily::Independence:
            return 0.0;
    }
    return 0.0;
}

Eigen::VectorXd eval_family_gradient(const CorrSpec& spec, double d, const DistanceConstants& constants) {
    spec.check();
    const auto& p = spec.params;
    Eigen::VectorXd g(static_cast<Eigen::Index>(param_count(spec.family)));
    switch (spec.family) {
        case CorrFamily::Lear: {
            const double rho = p[0];
            const double value = lear_corr(rho, p[1], d, constants);
            const double frac = (std::clamp(d, constants.d_min, constants.d_max) - constants.d_min) / constants.span();
            const double exponent = constants.d_min + p[1] * frac;
            g[0] = exponent == 0.0 ? 0.0 : exponent * std::pow(rho, exponent - 1.0);
            g[1] = value * safe_log_rho(rho) * frac;
            break;
        }
        case CorrFamily::Ar1:
            g[0] = d == 0.0 ? 0.0 : d * std::pow(p[0], d - 1.0);
            break;
        case CorrFamily::De: {
            const double dn = std::pow(d, p[1]);
            const double value = std::pow(p[0], dn);
            g[0] = dn == 0.0 ? 0.0 : dn * std::pow(p[0], dn - 1.0);
            g[1] = d > 0.0 ? value * safe_log_rho(p[0]) * dn * std::log(d) : 0.0;
            break;
        }
        case CorrFamily::Exponential: {
            const double phi = p[0];
            g[0] = std::exp(-d / phi) * d / (phi * phi);
            break;
        }
        case CorrFamily::Gaussian: {
            const double phi = p[0];
            g[0] = std::exp(-(d * d) / (phi * phi)) * 2.0 * d * d / (phi * phi * phi);
            break;
        }
        case CorrFamily::Linear:
            g[0] = p[0] * d <= 1.0 ? -d : 0.0;
            break;
        case CorrFamily::Spherical: {
            const double phi = p[0];
            g[0] = d <= phi ? 1.5 * d / (phi * phi) - 1.5 * d * d * d / (phi * phi * phi * phi) : 0.0;
            break;
        }
        case CorrFamily::CompoundSymmetry:
            g[0] = 1.0;
            break;
        case CorrFamily::Independence:
            break;
    }
    return g;
}

Eigen::MatrixXd fill_factor_matrix(const CorrSpec& spec, const Eigen::MatrixXd& distances,
                                   const DistanceConstants& constants) {
    spec.check();
    if (distances.rows() != distances.cols()) {
        throw InputError("distance matrix must be square");
    }
    const Eigen::Index n = distances.rows();
    Eigen::MatrixXd m = Eigen::MatrixXd::Identity(n, n);
    for (Eigen::Index k = 0; k < n; ++k) {
        for (Eigen::Index j = k + 1; j < n; ++j) {
            const double v = eval_family(spec, distances(j, k), constants);
            m(j, k) = v;
            m(k, j) = v;
        }
    }
    return m;
}

Eigen::MatrixXd build_factor_matrix(const CorrSpec& spec, const Eigen::MatrixXd& distances,
                                    const DistanceConstants& constants, std::string_view factor_name) {
    Eigen::MatrixXd m = fill_factor_matrix(spec, distances, constants);
    // Throws NotPositiveDefinite when a pivot falls below tolerance.
    (void)factor_cholesky(m, factor_name);
    return m;
}

std::vector<Eigen::MatrixXd> factor_matrix_derivatives(const CorrSpec& spec, const Eigen::MatrixXd& distances,
                                                       const DistanceConstants& constants) {
    spec.check();
    const Eigen::Index n = distances.rows();
    const std::size_t np = param_count(spec.family);
    std::vector<Eigen::MatrixXd> out(np, Eigen::MatrixXd::Zero(n, n));
    for (Eigen::Index k = 0; k < n; ++k) {
        for (Eigen::Index j = k + 1; j < n; ++j) {
            const Eigen::VectorXd g = eval_family_gradient(spec, distances(j, k), constants);
            for (std::size_t p = 0; p < np; ++p) {
                out[p](j, k) = g[static_cast<Eigen::Index>(p)];
                out[p](k, j) = g[static_cast<Eigen::Index>(p)];
            }
        }
    }
    return out;
}

double scaled_decay(const CorrSpec& spec, const DistanceConstants& constants) {
    if (spec.family != CorrFamily::Lear || spec.params.size() != 2 || !(constants.span() > 0.0)) {
        return std::numeric_limits<double>::quiet_NaN();
    }
    return spec.params[1] / constants.span();
}

CorrSpec unscale_decay(const CorrSpec& scaled, const DistanceConstants& constants) {
    CorrSpec spec = scaled;
    if (spec.family == CorrFamily::Lear && spec.params.size() == 2) spec.params[1] *= constants.span();
    return spec;
}

}  // namespace kronfit
