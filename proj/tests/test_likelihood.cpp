#include "kronfit/errors.hpp"
#include "kronfit/likelihood.hpp"
#include "oracles.hpp"

#include <doctest.h>

#include <random>

using namespace kronfit;

namespace {

Eigen::VectorXd random_params(std::mt19937_64& rng, CorrFamily f, const DistanceConstants& c) {
    std::uniform_real_distribution<double> u(0.0, 1.0);
    switch (f) {
        case CorrFamily::Lear: return Eigen::Vector2d(0.1 + 0.8 * u(rng), c.span() * (0.2 + 2.0 * u(rng)));
        case CorrFamily::De: return Eigen::Vector2d(0.1 + 0.8 * u(rng), 0.5 + u(rng));
        case CorrFamily::Ar1: return Eigen::VectorXd::Constant(1, 0.1 + 0.8 * u(rng));
        case CorrFamily::CompoundSymmetry: return Eigen::VectorXd::Constant(1, 0.6 * u(rng));
        case CorrFamily::Exponential: return Eigen::VectorXd::Constant(1, 0.3 + 2.0 * u(rng));
        case CorrFamily::Gaussian: return Eigen::VectorXd::Constant(1, 0.3 + 0.5 * u(rng));
        case CorrFamily::Spherical: return Eigen::VectorXd::Constant(1, 0.5 + 2.0 * u(rng));
        case CorrFamily::Linear: return Eigen::VectorXd::Constant(1, 0.1 + 0.2 * u(rng));
        case CorrFamily::Independence: return Eigen::VectorXd();
    }
    return Eigen::VectorXd();
}

constexpr CorrFamily kTested[] = {CorrFamily::Lear, CorrFamily::Ar1, CorrFamily::De, CorrFamily::Exponential,
                                  CorrFamily::CompoundSymmetry, CorrFamily::Independence};

struct Instance {
    Dataset ds;
    ThetaVector theta;
};

Instance random_instance(std::mt19937_64& rng) {
    std::uniform_int_distribution<int> pick(0, 5);
    std::normal_distribution<double> z;
    Dataset ds = oracle::random_dataset(rng, 4, 5, 5, 3);
    const CorrFamily f1 = kTested[pick(rng)];
    const CorrFamily f2 = kTested[pick(rng)];
    ThetaVector th;
    th.beta = Eigen::Vector3d(1.0 + 0.3 * z(rng), 0.3 * z(rng), 0.3 * z(rng));
    th.tau1 = CorrSpec(f1, random_params(rng, f1, ds.constants1));
    th.tau2 = CorrSpec(f2, random_params(rng, f2, ds.constants2));
    return {std::move(ds), std::move(th)};
}

}  // namespace

TEST_CASE("loglik equals the dense multivariate normal log-density") {
    std::mt19937_64 rng(17);
    int checked = 0;
    for (int rep = 0; rep < 60; ++rep) {
        const Instance in = random_instance(rng);
        double got = 0.0;
        try {
            got = loglik(in.ds, in.theta, 1.7);
        } catch (const NotPositiveDefinite&) {
            continue;
        }
        const double expect = oracle::dense_loglik(in.ds, in.theta.beta, in.theta.tau1.family, in.theta.tau1.params,
                                                   in.theta.tau2.family, in.theta.tau2.params, 1.7);
        CHECK(std::abs(got - expect) <= 1e-9 * std::abs(expect));
        ++checked;
    }
    CHECK(checked >= 40);
}

TEST_CASE("profile log-likelihood is the log-likelihood at the profiled variance") {
    std::mt19937_64 rng(18);
    for (int rep = 0; rep < 40; ++rep) {
        const Instance in = random_instance(rng);
        try {
            const double s2 = profile_sigma2(in.ds, in.theta);
            const double lp = profile_loglik(in.ds, in.theta);
            CHECK(std::abs(lp - loglik(in.ds, in.theta, s2)) <= 1e-10 * std::abs(lp));
            // The profiled variance maximizes over sigma^2.
            CHECK(loglik(in.ds, in.theta, 1.05 * s2) < lp);
            CHECK(loglik(in.ds, in.theta, 0.95 * s2) < lp);
        } catch (const NotPositiveDefinite&) {
        }
    }
}

TEST_CASE("analytic profile gradient matches central differences") {
    std::mt19937_64 rng(19);
    for (int rep = 0; rep < 40; ++rep) {
        const Instance in = random_instance(rng);
        Eigen::VectorXd g;
        try {
            g = profile_gradient(in.ds, in.theta);
        } catch (const NotPositiveDefinite&) {
            continue;
        }
        const Eigen::VectorXd x = in.theta.flatten();
        for (Eigen::Index j = 0; j < x.size(); ++j) {
            const double h = 1e-5 * std::max(1.0, std::abs(x[j]));
            Eigen::VectorXd a = x, b = x;
            a[j] += h;
            b[j] -= h;
            const double fd =
                (profile_loglik(in.ds, in.theta.with_values(a)) - profile_loglik(in.ds, in.theta.with_values(b))) / (2 * h);
            CHECK(std::abs(g[j] - fd) <= 1e-6 * std::max(1.0, std::abs(fd)));
        }
    }
}

TEST_CASE("gls beta equals the dense GLS formula") {
    std::mt19937_64 rng(20);
    for (int rep = 0; rep < 30; ++rep) {
        const Instance in = random_instance(rng);
        try {
            const GlsSolution sol = gls_beta(in.ds, in.theta.tau1, in.theta.tau2);
            const Eigen::VectorXd expect = oracle::dense_gls(in.ds, in.theta.tau1.family, in.theta.tau1.params,
                                                             in.theta.tau2.family, in.theta.tau2.params);
            CHECK((sol.beta - expect).cwiseAbs().maxCoeff() <= 1e-9 * std::max(1.0, expect.cwiseAbs().maxCoeff()));
            // At the GLS beta the beta-block of the profile gradient vanishes.
            ThetaVector th = in.theta;
            th.beta = sol.beta;
            CHECK(profile_gradient(in.ds, th).head(3).cwiseAbs().maxCoeff() <= 1e-8);
        } catch (const NotPositiveDefinite&) {
        }
    }
}

TEST_CASE("independence structure reduces to least squares") {
    std::mt19937_64 rng(21);
    const Dataset ds = oracle::random_dataset(rng, 6, 4, 4, 2);
    const CorrSpec ind{CorrFamily::Independence, Eigen::VectorXd()};
    const GlsSolution sol = gls_beta(ds, ind, ind);
    Eigen::MatrixXd x(static_cast<Eigen::Index>(ds.n()), 2);
    Eigen::VectorXd y(static_cast<Eigen::Index>(ds.n()));
    Eigen::Index row = 0;
    for (const auto& b : ds.subjects) {
        x.middleRows(row, b.X.rows()) = b.X;
        y.segment(row, b.y.size()) = b.y;
        row += b.y.size();
    }
    const Eigen::VectorXd ols = (x.transpose() * x).ldlt().solve(x.transpose() * y);
    CHECK((sol.beta - ols).norm() <= 1e-12);
    const ThetaVector th{ols, ind, ind};
    CHECK(profile_sigma2(ds, th) == doctest::Approx((y - x * ols).squaredNorm() / static_cast<double>(ds.n())));
}

TEST_CASE("zero residuals are degenerate") {
    std::mt19937_64 rng(22);
    Dataset ds = oracle::random_dataset(rng, 3, 3, 3, 1);
    for (auto& b : ds.subjects) b.y.setConstant(2.0);
    const CorrSpec ar{CorrFamily::Ar1, {0.3}};
    const ThetaVector th{Eigen::VectorXd::Constant(1, 2.0), ar, ar};
    CHECK_THROWS_AS((void)profile_loglik(ds, th), DegenerateResiduals);
}

TEST_CASE("finite-difference Hessians are exact on quadratics") {
    Eigen::MatrixXd a(3, 3);
    a << -4, 1, 0.5, 1, -3, 0.2, 0.5, 0.2, -2;
    const Eigen::VectorXd b = Eigen::Vector3d(1, -2, 0.5);
    auto f = [&](const Eigen::VectorXd& x) { return 0.5 * x.dot(a * x) + b.dot(x); };
    auto g = [&](const Eigen::VectorXd& x) -> Eigen::VectorXd { return a * x + b; };
    const Eigen::VectorXd x0 = Eigen::Vector3d(0.3, 0.1, -0.4);
    const Eigen::VectorXd scale = Eigen::Vector3d::Ones();
    CHECK((fd_hessian(f, x0, scale) - a).cwiseAbs().maxCoeff() <= 1e-6);
    const Eigen::VectorXd lo = Eigen::Vector3d::Constant(-1.0);
    const Eigen::VectorXd hi = Eigen::Vector3d(1.0, 1.0, -0.4);
    CHECK((fd_jacobian_of_gradient(g, x0, scale, lo, hi) - a).cwiseAbs().maxCoeff() <= 1e-8);
}

TEST_CASE("theta layout round-trips") {
    const ThetaVector th{Eigen::Vector2d(1, 2), CorrSpec{CorrFamily::Lear, {0.5, 1.5}}, CorrSpec{CorrFamily::Ar1, {0.2}}};
    const Eigen::VectorXd flat = th.flatten();
    CHECK(flat.size() == 5);
    CHECK(flat[2] == 0.5);
    CHECK(flat[4] == 0.2);
    const ThetaVector back = ThetaVector::unflatten(flat, 2, CorrFamily::Lear, CorrFamily::Ar1);
    CHECK(back.tau1.params[1] == 1.5);
    CHECK_THROWS_AS((void)ThetaVector::unflatten(flat, 3, CorrFamily::Lear, CorrFamily::Ar1), InputError);
}
