#include "kronfit/likelihood.hpp"

#include "kronfit/errors.hpp"
#include "kronfit/kron_algebra.hpp"

#include <cmath>
#include <limits>
#include <numbers>

namespace kronfit {

namespace {

const double kLog2Pi = std::log(2.0 * std::numbers::pi);

KronFactorization factorize(const SubjectBlock& b, const Eigen::MatrixXd& gamma, const Eigen::MatrixXd& omega) {
    try {
        return KronFactorization(KronPair{gamma, omega});
    } catch (const NotPositiveDefinite& e) {
        throw NotPositiveDefinite("subject '" + b.subject_id + "': " + e.what());
    }
}

struct FactorMatrices {
    Eigen::MatrixXd gamma;
    Eigen::MatrixXd omega;
};

FactorMatrices factor_matrices(const Dataset& ds, const SubjectBlock& b, const CorrSpec& tau1, const CorrSpec& tau2) {
    return {fill_factor_matrix(tau1, b.dist1, ds.constants1), fill_factor_matrix(tau2, b.dist2, ds.constants2)};
}

Eigen::MatrixXd inverse_from_cholesky(const Eigen::MatrixXd& l) {
    Eigen::MatrixXd inv = Eigen::MatrixXd::Identity(l.rows(), l.cols());
    l.triangularView<Eigen::Lower>().solveInPlace(inv);
    l.triangularView<Eigen::Lower>().transpose().solveInPlace(inv);
    return inv;
}

// Elementwise sum of a .* b for symmetric operands.
double frobenius_dot(const Eigen::MatrixXd& a, const Eigen::MatrixXd& b) {
    return (a.array() * b.array()).sum();
}

}  // namespace

Eigen::VectorXd ThetaVector::flatten() const {
    Eigen::VectorXd out(size());
    out << beta, tau1.params, tau2.params;
    return out;
}

ThetaVector ThetaVector::with_values(const Eigen::VectorXd& flat) const {
    return unflatten(flat, static_cast<std::size_t>(beta.size()), tau1.family, tau2.family);
}

ThetaVector ThetaVector::unflatten(const Eigen::VectorXd& flat, std::size_t q, CorrFamily f1, CorrFamily f2) {
    const auto nq = static_cast<Eigen::Index>(q);
    const auto n1 = static_cast<Eigen::Index>(param_count(f1));
    const auto n2 = static_cast<Eigen::Index>(param_count(f2));
    if (flat.size() != nq + n1 + n2) {
        throw InputError("theta vector has length " + std::to_string(flat.size()) + ", expected " +
                         std::to_string(nq + n1 + n2));
    }
    ThetaVector theta;
    theta.beta = flat.head(nq);
    theta.tau1 = CorrSpec(f1, Eigen::VectorXd(flat.segment(nq, n1)));
    theta.tau2 = CorrSpec(f2, Eigen::VectorXd(flat.segment(nq + n1, n2)));
    return theta;
}

ProfileEvaluation evaluate_profile(const Dataset& ds, const ThetaVector& theta, bool with_gradient) {
    if (static_cast<std::size_t>(theta.beta.size()) != ds.q()) {
        throw InputError("beta has length " + std::to_string(theta.beta.size()) + " but the design has q = " +
                         std::to_string(ds.q()));
    }
    theta.tau1.check();
    theta.tau2.check();
    const Eigen::Index q = theta.beta.size();
    const Eigen::Index n1 = theta.tau1.params.size();
    const Eigen::Index n2 = theta.tau2.params.size();

    double quad_sum = 0.0;
    double logdet_sum = 0.0;
    Eigen::VectorXd xt_sinv_r = Eigen::VectorXd::Zero(q);
    Eigen::VectorXd dlogdet = Eigen::VectorXd::Zero(n1 + n2);
    Eigen::VectorXd dquad = Eigen::VectorXd::Zero(n1 + n2);

    for (const auto& b : ds.subjects) {
        const FactorMatrices m = factor_matrices(ds, b, theta.tau1, theta.tau2);
        const KronFactorization fac = factorize(b, m.gamma, m.omega);
        const Eigen::VectorXd r = b.y - b.X * theta.beta;
        logdet_sum += fac.logdet();
        if (!with_gradient) {
            quad_sum += fac.quadform(r);
            continue;
        }
        // A = O^-1 R G^-1 (s x t), the reshaped S^-1 r.
        const Eigen::MatrixXd a = fac.solve_reshaped(r);
        const Eigen::Map<const Eigen::VectorXd> a_vec(a.data(), a.size());
        quad_sum += r.dot(a_vec);
        xt_sinv_r.noalias() += b.X.transpose() * a_vec;

        const auto t = static_cast<double>(b.t());
        const auto s = static_cast<double>(b.s());
        if (n1 > 0) {
            const auto dg = factor_matrix_derivatives(theta.tau1, b.dist1, ds.constants1);
            const Eigen::MatrixXd gamma_inv = inverse_from_cholesky(fac.chol_gamma());
            const Eigen::MatrixXd middle = a.transpose() * m.omega * a;  // t x t
            for (Eigen::Index p = 0; p < n1; ++p) {
                dlogdet[p] += s * frobenius_dot(gamma_inv, dg[static_cast<std::size_t>(p)]);
                dquad[p] -= frobenius_dot(middle, dg[static_cast<std::size_t>(p)]);
            }
        }
        if (n2 > 0) {
            const auto dw = factor_matrix_derivatives(theta.tau2, b.dist2, ds.constants2);
            const Eigen::MatrixXd omega_inv = inverse_from_cholesky(fac.chol_omega());
            const Eigen::MatrixXd middle = a * m.gamma * a.transpose();  // s x s
            for (Eigen::Index p = 0; p < n2; ++p) {
                dlogdet[n1 + p] += t * frobenius_dot(omega_inv, dw[static_cast<std::size_t>(p)]);
                dquad[n1 + p] -= frobenius_dot(middle, dw[static_cast<std::size_t>(p)]);
            }
        }
    }

    const auto n = static_cast<double>(ds.n());
    if (!(quad_sum / n > kSigma2Floor)) {
        throw DegenerateResiduals("profiled sigma^2 underflows: every residual is zero");
    }
    ProfileEvaluation out;
    out.quad_sum = quad_sum;
    out.logdet_sum = logdet_sum;
    out.sigma2 = quad_sum / n;
    out.loglik = -0.5 * logdet_sum - 0.5 * n * std::log(quad_sum) + 0.5 * n * std::log(n) - 0.5 * n - 0.5 * n * kLog2Pi;
    if (with_gradient) {
        out.gradient.resize(q + n1 + n2);
        out.gradient.head(q) = xt_sinv_r / out.sigma2;
        out.gradient.tail(n1 + n2) = -0.5 * dlogdet - (0.5 * n / quad_sum) * dquad;
    }
    return out;
}

double loglik(const Dataset& ds, const ThetaVector& theta, double sigma2) {
    if (!(sigma2 > 0.0) || !std::isfinite(sigma2)) throw DomainError("sigma^2 must be positive and finite");
    if (static_cast<std::size_t>(theta.beta.size()) != ds.q()) throw InputError("beta length differs from q");
    theta.tau1.check();
    theta.tau2.check();
    double quad_sum = 0.0;
    double logdet_sum = 0.0;
    for (const auto& b : ds.subjects) {
        const FactorMatrices m = factor_matrices(ds, b, theta.tau1, theta.tau2);
        const KronFactorization fac = factorize(b, m.gamma, m.omega);
        const Eigen::VectorXd r = b.y - b.X * theta.beta;
        logdet_sum += fac.logdet();
        quad_sum += fac.quadform(r);
    }
    const auto n = static_cast<double>(ds.n());
    return -0.5 * n * kLog2Pi - 0.5 * (n * std::log(sigma2) + logdet_sum) - quad_sum / (2.0 * sigma2);
}

double profile_sigma2(const Dataset& ds, const ThetaVector& theta) {
    return evaluate_profile(ds, theta, false).sigma2;
}

double profile_loglik(const Dataset& ds, const ThetaVector& theta) {
    return evaluate_profile(ds, theta, false).loglik;
}

Eigen::VectorXd profile_gradient(const Dataset& ds, const ThetaVector& theta) {
    return evaluate_profile(ds, theta, true).gradient;
}

GlsSolution gls_beta(const Dataset& ds, const CorrSpec& tau1, const CorrSpec& tau2) {
    const auto q = static_cast<Eigen::Index>(ds.q());
    Eigen::MatrixXd info = Eigen::MatrixXd::Zero(q, q);
    Eigen::VectorXd rhs = Eigen::VectorXd::Zero(q);
    for (const auto& b : ds.subjects) {
        const FactorMatrices m = factor_matrices(ds, b, tau1, tau2);
        const KronFactorization fac = factorize(b, m.gamma, m.omega);
        const Eigen::MatrixXd sinv_x = fac.solve(b.X);
        info.noalias() += b.X.transpose() * sinv_x;
        rhs.noalias() += sinv_x.transpose() * b.y;
    }
    Eigen::LDLT<Eigen::MatrixXd> ldlt(info);
    const double scale = std::max(1.0, info.diagonal().cwiseAbs().maxCoeff());
    if (ldlt.info() != Eigen::Success || ldlt.vectorD().minCoeff() <= 1e-12 * scale) {
        throw RankDeficient("design is rank deficient: X' S^-1 X is singular");
    }
    return GlsSolution{ldlt.solve(rhs), std::move(info)};
}

Eigen::MatrixXd fd_hessian(const ScalarFunction& f, const Eigen::VectorXd& theta0, const Eigen::VectorXd& scale) {
    const Eigen::Index k = theta0.size();
    const double eps = std::numeric_limits<double>::epsilon();
    const double root = std::pow(eps, 0.25);
    Eigen::VectorXd h(k);
    for (Eigen::Index j = 0; j < k; ++j) {
        const double sj = j < scale.size() ? scale[j] : 1.0;
        h[j] = root * std::max(std::abs(theta0[j]), sj);
    }
    const double f0 = f(theta0);
    Eigen::MatrixXd hess(k, k);

    auto shifted = [&](Eigen::Index i, double di, Eigen::Index j, double dj) {
        Eigen::VectorXd x = theta0;
        x[i] += di;
        x[j] += dj;
        return f(x);
    };

    for (Eigen::Index i = 0; i < k; ++i) {
        for (Eigen::Index j = i; j < k; ++j) {
            auto second = [&](double hi, double hj) {
                if (i == j) {
                    const double fp = shifted(i, hi, i, 0.0);
                    const double fm = shifted(i, -hi, i, 0.0);
                    return (fp - 2.0 * f0 + fm) / (hi * hi);
                }
                const double fpp = shifted(i, hi, j, hj);
                const double fpm = shifted(i, hi, j, -hj);
                const double fmp = shifted(i, -hi, j, hj);
                const double fmm = shifted(i, -hi, j, -hj);
                return (fpp - fpm - fmp + fmm) / (4.0 * hi * hj);
            };
            double v = 0.0;
            try {
                v = second(h[i], h[j]);
            } catch (const Error&) {
                v = second(0.5 * h[i], 0.5 * h[j]);
            }
            hess(i, j) = v;
            hess(j, i) = v;
        }
    }
    return hess;
}

Eigen::MatrixXd fd_jacobian_of_gradient(const VectorFunction& grad, const Eigen::VectorXd& theta0,
                                        const Eigen::VectorXd& scale, const Eigen::VectorXd& lower,
                                        const Eigen::VectorXd& upper) {
    const Eigen::Index k = theta0.size();
    const double root = std::cbrt(std::numeric_limits<double>::epsilon());
    Eigen::MatrixXd jac(k, k);
    Eigen::VectorXd g0;
    auto center = [&]() -> const Eigen::VectorXd& {
        if (g0.size() == 0) g0 = grad(theta0);
        return g0;
    };
    for (Eigen::Index j = 0; j < k; ++j) {
        const double sj = j < scale.size() ? scale[j] : 1.0;
        double h = root * std::max(std::abs(theta0[j]), sj);
        auto column = [&](double step) -> Eigen::VectorXd {
            const bool up_ok = theta0[j] + step <= upper[j];
            const bool down_ok = theta0[j] - step >= lower[j];
            Eigen::VectorXd x = theta0;
            if (up_ok && down_ok) {
                x[j] = theta0[j] + step;
                const Eigen::VectorXd gp = grad(x);
                x[j] = theta0[j] - step;
                const Eigen::VectorXd gm = grad(x);
                return (gp - gm) / (2.0 * step);
            }
            if (up_ok) {
                x[j] = theta0[j] + step;
                return (grad(x) - center()) / step;
            }
            if (down_ok) {
                x[j] = theta0[j] - step;
                return (center() - grad(x)) / step;
            }
            throw DomainError("finite-difference step does not fit inside the parameter box");
        };
        try {
            jac.col(j) = column(h);
        } catch (const Error&) {
            h *= 0.5;
            jac.col(j) = column(h);
        }
    }
    return 0.5 * (jac + jac.transpose());
}

std::vector<std::string> theta_names(const Dataset& ds, CorrFamily f1, CorrFamily f2) {
    std::vector<std::string> names = ds.covariate_names;
    for (const auto& p : param_names(f1)) names.push_back("f1." + p);
    for (const auto& p : param_names(f2)) names.push_back("f2." + p);
    return names;
}

}  // namespace kronfit
