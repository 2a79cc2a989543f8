#include "kronfit/errors.hpp"
#include "kronfit/fitter.hpp"
#include "kronfit/simulate.hpp"
#include "oracles.hpp"

#include <doctest.h>

#include <random>

using namespace kronfit;

namespace {

SimDesign lear_design(std::uint64_t seed, std::size_t subjects = 60) {
    SimDesign d;
    d.num_subjects = subjects;
    d.t_min = d.t_max = 4;
    d.s_min = d.s_max = 6;
    d.covariates = {{"x1", CovariateKind::SubjectNormal}};
    d.beta_true = Eigen::Vector2d(1.0, 0.5);
    d.spec1_true = CorrSpec{CorrFamily::Lear, {0.9, 0.5}};
    d.spec2_true = CorrSpec{CorrFamily::Lear, {0.9, 0.5}};
    d.seed = seed;
    return d;
}

}  // namespace

TEST_CASE("independence fit is ordinary least squares") {
    std::mt19937_64 rng(31);
    const Dataset ds = oracle::random_dataset(rng, 10, 4, 4, 3);
    const FitResult fit = fit_ml(ds, CorrFamily::Independence, CorrFamily::Independence);
    CHECK(fit.converged);
    const Eigen::MatrixXd x = stacked_design(ds);
    const Eigen::VectorXd y = stacked_response(ds);
    const Eigen::VectorXd ols = (x.transpose() * x).ldlt().solve(x.transpose() * y);
    CHECK((fit.beta() - ols).cwiseAbs().maxCoeff() <= 1e-8);
    CHECK(fit.sigma2.value == doctest::Approx((y - x * ols).squaredNorm() / static_cast<double>(ds.n())).epsilon(1e-10));
    CHECK(fit.num_params == 4);
    CHECK(fit.aic == doctest::Approx(-2.0 * fit.loglik + 8.0));
    CHECK(fit.bic == doctest::Approx(-2.0 * fit.loglik + 4.0 * std::log(static_cast<double>(ds.n()))));
}

TEST_CASE("starting values") {
    const Dataset ds = sample_dataset(lear_design(4));
    const ThetaVector th = starting_values(ds, CorrFamily::Lear, CorrFamily::Lear);
    const Eigen::MatrixXd x = stacked_design(ds);
    const Eigen::VectorXd r = stacked_response(ds) - x * th.beta;
    CHECK((x.transpose() * r).cwiseAbs().maxCoeff() <= 1e-8 * static_cast<double>(ds.n()));
    CHECK(th.tau1.params[0] >= 0.5);
    CHECK(th.tau1.params[0] <= 0.95);
    CHECK(th.tau1.params[1] == doctest::Approx(ds.constants1.span()));

    SimDesign noise = lear_design(5);
    noise.spec1_true = CorrSpec{CorrFamily::Independence, Eigen::VectorXd()};
    noise.spec2_true = CorrSpec{CorrFamily::Independence, Eigen::VectorXd()};
    const ThetaVector th0 = starting_values(sample_dataset(noise), CorrFamily::Ar1, CorrFamily::Ar1);
    CHECK(th0.tau1.params[0] <= 0.1);
    CHECK(th0.tau2.params[0] <= 0.1);
}

TEST_CASE("LEAR fit recovers the simulating parameters") {
    const Dataset ds = sample_dataset(lear_design(7, 200));
    const FitResult fit = fit_ml(ds, CorrFamily::Lear, CorrFamily::Lear);
    REQUIRE(fit.converged);
    const Eigen::VectorXd se = fit.standard_errors();
    const ThetaVector truth = true_theta(lear_design(7, 200), ds);
    const Eigen::VectorXd x = fit.theta.flatten();
    const Eigen::VectorXd t = truth.flatten();
    for (Eigen::Index j = 0; j < x.size(); ++j) CHECK(std::abs(x[j] - t[j]) <= 4.0 * se[j]);
    CHECK(fit.sigma2.value == doctest::Approx(1.0).epsilon(0.15));
    CHECK(fit.scaled_decay1 == doctest::Approx(fit.theta.tau1.params[1] / ds.constants1.span()));
}

TEST_CASE("trace is monotone and convergence implies a small gradient") {
    for (std::uint64_t seed : {11, 12, 13}) {
        const Dataset ds = sample_dataset(lear_design(seed));
        for (auto [f1, f2] : {std::pair{CorrFamily::Lear, CorrFamily::Lear}, std::pair{CorrFamily::De, CorrFamily::Ar1},
                              std::pair{CorrFamily::Exponential, CorrFamily::CompoundSymmetry}}) {
            int calls = 0;
            FitOptions opts;
            opts.on_iteration = [&](const TraceEntry&) { ++calls; };
            const FitResult fit = fit_ml(ds, f1, f2, opts);
            CHECK(calls == static_cast<int>(fit.trace.size()));
            for (std::size_t k = 1; k < fit.trace.size(); ++k) {
                CHECK(fit.trace[k].loglik >= fit.trace[k - 1].loglik - 1e-12 * std::abs(fit.trace[k - 1].loglik));
            }
            if (fit.converged) CHECK(fit.trace.back().max_gradient <= opts.tol_grad);
            const ParameterBox box = parameter_box(ds, f1, f2, opts);
            CHECK(box.contains(fit.theta.flatten()));
        }
    }
}

TEST_CASE("fits are reproducible bit for bit") {
    const Dataset ds = sample_dataset(lear_design(21));
    const FitResult a = fit_ml(ds, CorrFamily::Lear, CorrFamily::Lear);
    const FitResult b = fit_ml(ds, CorrFamily::Lear, CorrFamily::Lear);
    CHECK(a.theta.flatten() == b.theta.flatten());
    CHECK(a.loglik == b.loglik);
    CHECK(a.trace.size() == b.trace.size());
}

TEST_CASE("LEAR dominates its AR(1) boundary") {
    for (std::uint64_t seed : {31, 32, 33, 34}) {
        const Dataset ds = sample_dataset(lear_design(seed));
        const double lear = fit_ml(ds, CorrFamily::Lear, CorrFamily::Lear).loglik;
        CHECK(lear >= fit_ml(ds, CorrFamily::Ar1, CorrFamily::Ar1).loglik - 1e-6);
        CHECK(lear >= fit_ml(ds, CorrFamily::CompoundSymmetry, CorrFamily::CompoundSymmetry).loglik - 1e-6);
    }
}

TEST_CASE("tiny instance agrees with the grid-search oracle") {
    SimDesign d;
    d.num_subjects = 3;
    d.t_min = d.t_max = 2;
    d.s_min = d.s_max = 2;
    d.beta_true = Eigen::VectorXd::Constant(1, 1.0);
    d.spec1_true = CorrSpec{CorrFamily::Ar1, {0.5}};
    d.spec2_true = CorrSpec{CorrFamily::Ar1, {0.4}};
    d.seed = 77;
    const Dataset ds = sample_dataset(d);
    OracleOptions oo;
    oo.resolution = 2e-3;
    const OracleResult best = grid_search_oracle(ds, CorrFamily::Ar1, CorrFamily::Ar1, oo);
    const FitResult fit = fit_ml(ds, CorrFamily::Ar1, CorrFamily::Ar1);
    CHECK(fit.loglik >= best.value - 1e-9);
    if (fit.converged) {
        CHECK(std::abs(fit.theta.tau1.params[0] - best.theta.tau1.params[0]) <= 4e-3);
        CHECK(std::abs(fit.theta.tau2.params[0] - best.theta.tau2.params[0]) <= 4e-3);
    }
}

TEST_CASE("rank-deficient designs are rejected") {
    std::mt19937_64 rng(41);
    Dataset ds = oracle::random_dataset(rng, 5, 3, 3, 3);
    for (auto& b : ds.subjects) b.X.col(2) = 2.0 * b.X.col(1);
    CHECK_THROWS_AS((void)fit_ml(ds, CorrFamily::Ar1, CorrFamily::Ar1), RankDeficient);
}

TEST_CASE("negative-variance diagnostic") {
    const Dataset ds = sample_dataset(lear_design(51));
    const FitResult fit = fit_ml(ds, CorrFamily::Lear, CorrFamily::Lear);
    CHECK(negative_variance_diagnostic(fit).empty());

    FitResult forged = fit;
    forged.theta.tau2.params[0] = 0.05;
    forged.scaled_decay2 = 3.0;
    forged.vcov(4, 4) = -1e-3;
    const auto report = negative_variance_diagnostic(forged);
    REQUIRE(report.flags.size() == 1);
    CHECK(report.fired_on(2));
    CHECK_FALSE(report.fired_on(1));
    CHECK(report.flags[0].recommend_independence);
    CHECK(report.flags[0].message.find("independence") != std::string::npos);

    forged.scaled_decay2 = 0.5;
    CHECK_FALSE(negative_variance_diagnostic(forged).flags[0].recommend_independence);
}

TEST_CASE("explicit starting values and options are validated") {
    FitOptions bad;
    bad.tol_grad = 0.0;
    CHECK_THROWS_AS(bad.check(), InputError);
    const Dataset ds = sample_dataset(lear_design(61));
    require_constants_for(CorrFamily::Lear, ds.constants1, "factor 1");
    const FitResult fit = fit_ml(ds, CorrSpec{CorrFamily::Ar1, {0.8}}, CorrSpec{CorrFamily::Ar1, {0.8}});
    CHECK(fit.converged);
}
