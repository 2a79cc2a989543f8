#include "kronfit/kron_algebra.hpp"

#include "kronfit/errors.hpp"

#include <sstream>
#include <string>

namespace kronfit {

Eigen::MatrixXd factor_cholesky(const Eigen::MatrixXd& m, std::string_view name) {
    if (m.rows() != m.cols()) {
        throw InputError(std::string(name) + ": correlation matrix must be square");
    }
    const Eigen::Index n = m.rows();
    if (n == 0) {
        return Eigen::MatrixXd(0, 0);
    }
    Eigen::LLT<Eigen::MatrixXd> llt(m);
    const double tol = pd_tolerance(n);
    if (llt.info() != Eigen::Success) {
        throw NotPositiveDefinite(std::string(name) + " correlation matrix is not positive definite");
    }
    Eigen::MatrixXd l = llt.matrixL();
    const double min_pivot = l.diagonal().array().square().minCoeff();
    if (!(min_pivot > tol)) {
        std::ostringstream os;
        os << name << " correlation matrix is not positive definite (smallest Cholesky pivot " << min_pivot
           << " <= " << tol << ")";
        throw NotPositiveDefinite(os.str());
    }
    return l;
}

Eigen::MatrixXd kron_dense(const KronPair& pair, std::size_t max_rows) {
    const Eigen::Index t = pair.t();
    const Eigen::Index s = pair.s();
    const auto rows = static_cast<std::size_t>(t * s);
    if (rows > max_rows) {
        std::ostringstream os;
        os << "kron_dense: " << rows << " rows exceeds the cap of " << max_rows;
        throw SizeGuardError(os.str());
    }
    Eigen::MatrixXd out(t * s, t * s);
    for (Eigen::Index k = 0; k < t; ++k) {
        for (Eigen::Index j = 0; j < t; ++j) {
            out.block(j * s, k * s, s, s) = pair.gamma(j, k) * pair.omega;
        }
    }
    return out;
}

double kron_logdet(const KronPair& pair) {
    return KronFactorization(pair).logdet();
}

double kron_quadform(const Eigen::VectorXd& r, const KronPair& pair) {
    return KronFactorization(pair).quadform(r);
}

KronPair kron_cholesky(const KronPair& pair) {
    return KronPair{factor_cholesky(pair.gamma, "factor 1"), factor_cholesky(pair.omega, "factor 2")};
}

KronFactorization::KronFactorization(const KronPair& pair, std::string_view gamma_name,
                                     std::string_view omega_name)
    : chol_gamma_(factor_cholesky(pair.gamma, gamma_name)), chol_omega_(factor_cholesky(pair.omega, omega_name)) {
    logdet_gamma_ = 2.0 * chol_gamma_.diagonal().array().log().sum();
    logdet_omega_ = 2.0 * chol_omega_.diagonal().array().log().sum();
}

void KronFactorization::check_length(Eigen::Index len) const {
    if (len != t() * s()) {
        std::ostringstream os;
        os << "dimension mismatch: vector of length " << len << " against a " << t() << "x" << s()
           << " Kronecker structure";
        throw InputError(os.str());
    }
}

Eigen::MatrixXd KronFactorization::solve_reshaped(const Eigen::VectorXd& r) const {
    check_length(r.size());
    // vec(R) with R s x t; (G (x) O)^-1 vec(R) = vec(O^-1 R G^-1).
    Eigen::MatrixXd a = Eigen::Map<const Eigen::MatrixXd>(r.data(), s(), t());
    chol_omega_.triangularView<Eigen::Lower>().solveInPlace(a);
    chol_omega_.triangularView<Eigen::Lower>().transpose().solveInPlace(a);
    Eigen::MatrixXd at = a.transpose();
    chol_gamma_.triangularView<Eigen::Lower>().solveInPlace(at);
    chol_gamma_.triangularView<Eigen::Lower>().transpose().solveInPlace(at);
    return at.transpose();
}

Eigen::VectorXd KronFactorization::solve(const Eigen::VectorXd& r) const {
    Eigen::MatrixXd a = solve_reshaped(r);
    return Eigen::Map<const Eigen::VectorXd>(a.data(), a.size());
}

Eigen::MatrixXd KronFactorization::solve(const Eigen::MatrixXd& x) const {
    Eigen::MatrixXd out(x.rows(), x.cols());
    for (Eigen::Index c = 0; c < x.cols(); ++c) {
        out.col(c) = solve(Eigen::VectorXd(x.col(c)));
    }
    return out;
}

double KronFactorization::quadform(const Eigen::VectorXd& r) const {
    check_length(r.size());
    // W = L_O^-1 R L_G^-T, so r' S^-1 r = ||W||_F^2.
    Eigen::MatrixXd w = Eigen::Map<const Eigen::MatrixXd>(r.data(), s(), t());
    chol_omega_.triangularView<Eigen::Lower>().solveInPlace(w);
    Eigen::MatrixXd wt = w.transpose();
    chol_gamma_.triangularView<Eigen::Lower>().solveInPlace(wt);
    return wt.squaredNorm();
}

Eigen::VectorXd KronFactorization::correlate(const Eigen::VectorXd& z) const {
    check_length(z.size());
    // (L_G (x) L_O) vec(Z) = vec(L_O Z L_G').
    Eigen::Map<const Eigen::MatrixXd> zm(z.data(), s(), t());
    Eigen::MatrixXd e = chol_omega_.triangularView<Eigen::Lower>() * zm;
    Eigen::MatrixXd out = e * chol_gamma_.transpose();
    return Eigen::Map<const Eigen::VectorXd>(out.data(), out.size());
}

}  // namespace kronfit
