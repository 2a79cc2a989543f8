#include "kronfit/corr_models.hpp"
#include "kronfit/errors.hpp"
#include "oracles.hpp"

#include <doctest.h>

#include <cmath>
#include <random>

using namespace kronfit;

TEST_CASE("family tags round-trip and parameter counts") {
    for (CorrFamily f : kAllFamilies) {
        CHECK(parse_family(family_tag(f)) == f);
        CHECK(param_names(f).size() == param_count(f));
    }
    CHECK(parse_family("LEAR") == CorrFamily::Lear);
    CHECK(parse_family("Ar1") == CorrFamily::Ar1);
    CHECK_FALSE(parse_family("toeplitz").has_value());
    CHECK(param_count(CorrFamily::Lear) == 2);
    CHECK(param_count(CorrFamily::Independence) == 0);
}

TEST_CASE("lear matches its defining formula") {
    std::mt19937_64 rng(11);
    std::uniform_real_distribution<double> u(0.0, 1.0);
    for (int rep = 0; rep < 500; ++rep) {
        const double dmin = 0.5 * u(rng);
        const double dmax = dmin + 0.1 + 5.0 * u(rng);
        const double rho = 0.999 * u(rng);
        const double delta = 4.0 * u(rng);
        const double d = dmin + (dmax - dmin) * u(rng);
        const double got = lear_corr(rho, delta, d, {dmin, dmax});
        CHECK(got == doctest::Approx(oracle::lear(rho, delta, d, dmin, dmax)).epsilon(1e-13));
    }
}

TEST_CASE("lear worked examples") {
    const DistanceConstants c{1.0, 5.0};
    CHECK(lear_corr(0.9, 4.0, 1.0, c) == doctest::Approx(0.9));
    CHECK(lear_corr(0.9, 4.0, 3.0, c) == doctest::Approx(0.729));
    CHECK(lear_corr(0.9, 0.0, 5.0, c) == doctest::Approx(0.9));
    CHECK(lear_corr(0.5, 8.0, 2.0, c) == doctest::Approx(0.125));
}

TEST_CASE("special-case reductions hold elementwise") {
    std::mt19937_64 rng(5);
    std::uniform_real_distribution<double> u(0.0, 1.0);
    for (int rep = 0; rep < 200; ++rep) {
        const Eigen::Index n = 2 + static_cast<Eigen::Index>(rep % 5);
        Eigen::MatrixXd dist(n, n);
        for (Eigen::Index i = 0; i < n; ++i) {
            dist(i, i) = 0.0;
            for (Eigen::Index j = 0; j < i; ++j) dist(i, j) = dist(j, i) = 0.2 + 4.0 * u(rng);
        }
        double lo = 1e300, hi = 0.0;
        for (Eigen::Index i = 0; i < n; ++i) {
            for (Eigen::Index j = 0; j < i; ++j) {
                lo = std::min(lo, dist(i, j));
                hi = std::max(hi, dist(i, j));
            }
        }
        if (hi - lo < 1e-6) hi = lo + 1.0;
        const DistanceConstants c{lo, hi};
        const double rho = 0.05 + 0.9 * u(rng);
        const auto ar1 = fill_factor_matrix(CorrSpec{CorrFamily::Ar1, {rho}}, dist, c);
        const auto lear_ar = fill_factor_matrix(CorrSpec{CorrFamily::Lear, {rho, c.span()}}, dist, c);
        const auto lear_cs = fill_factor_matrix(CorrSpec{CorrFamily::Lear, {rho, 0.0}}, dist, c);
        const auto cs = fill_factor_matrix(CorrSpec{CorrFamily::CompoundSymmetry, {std::pow(rho, lo)}}, dist, c);
        const auto de = fill_factor_matrix(CorrSpec{CorrFamily::De, {rho, 1.0}}, dist, c);
        const auto ex = fill_factor_matrix(CorrSpec{CorrFamily::Exponential, {-1.0 / std::log(rho)}}, dist, c);
        CHECK((lear_ar - ar1).cwiseAbs().maxCoeff() <= 1e-12);
        CHECK((lear_cs - cs).cwiseAbs().maxCoeff() <= 1e-12);
        CHECK((de - ar1).cwiseAbs().maxCoeff() <= 1e-12);
        CHECK((ex - ar1).cwiseAbs().maxCoeff() <= 1e-12);
    }
}

TEST_CASE("lear is monotone in the decay at fixed distance") {
    const DistanceConstants c{1.0, 4.0};
    for (double d : {1.5, 2.0, 3.0, 4.0}) {
        double prev = 2.0;
        for (double delta : {0.0, 0.5, 1.0, 3.0, 6.0, 12.0}) {
            const double v = lear_corr(0.8, delta, d, c);
            CHECK(v < prev);
            prev = v;
        }
    }
}

TEST_CASE("lear domain errors") {
    CHECK_THROWS_AS((void)lear_corr(0.5, 1.0, 2.0, {2.0, 2.0}), DomainError);
    CHECK_THROWS_AS((void)lear_corr(0.5, 1.0, 7.0, {1.0, 5.0}), DomainError);
    CHECK_THROWS_AS((void)lear_corr(0.5, 1.0, 0.5, {1.0, 5.0}), DomainError);
    CHECK_THROWS_AS((void)lear_corr(1.0, 1.0, 2.0, {1.0, 5.0}), DomainError);
    CHECK_THROWS_AS((void)lear_corr(0.5, -0.1, 2.0, {1.0, 5.0}), DomainError);
    CHECK_THROWS_AS(CorrSpec(CorrFamily::Ar1, {0.5, 0.2}).check(), DomainError);
    CHECK_THROWS_AS(CorrSpec(CorrFamily::Exponential, {0.0}).check(), DomainError);
}

TEST_CASE("parameter gradients agree with central differences") {
    std::mt19937_64 rng(3);
    std::uniform_real_distribution<double> u(0.0, 1.0);
    const DistanceConstants c{0.5, 4.0};
    for (CorrFamily f : kAllFamilies) {
        if (f == CorrFamily::Independence) continue;
        for (int rep = 0; rep < 40; ++rep) {
            CorrSpec spec{f, Eigen::VectorXd()};
            switch (param_count(f)) {
                case 2: spec.params = Eigen::Vector2d(0.1 + 0.8 * u(rng), 0.2 + 3.0 * u(rng)); break;
                default:
                    spec.params = Eigen::VectorXd::Constant(1, has_rho(f) ? 0.1 + 0.8 * u(rng) : 0.5 + 4.0 * u(rng));
            }
            const double d = c.d_min + c.span() * (0.01 + 0.98 * u(rng));
            if (f == CorrFamily::Linear && std::abs(spec.params[0] * d - 1.0) < 1e-3) continue;
            if (f == CorrFamily::Spherical && std::abs(d - spec.params[0]) < 1e-3) continue;
            const Eigen::VectorXd g = eval_family_gradient(spec, d, c);
            for (Eigen::Index p = 0; p < spec.params.size(); ++p) {
                const double h = 1e-6;
                CorrSpec a = spec, b = spec;
                a.params[p] += h;
                b.params[p] -= h;
                const double fd = (eval_family(a, d, c) - eval_family(b, d, c)) / (2 * h);
                CHECK(g[p] == doctest::Approx(fd).epsilon(1e-6).scale(1.0));
            }
        }
    }
}

TEST_CASE("factor matrices have unit diagonal, symmetry, and PD checks") {
    Eigen::MatrixXd dist(3, 3);
    dist << 0, 1, 2, 1, 0, 1, 2, 1, 0;
    const DistanceConstants c{1.0, 2.0};
    const auto m = build_factor_matrix(CorrSpec{CorrFamily::Lear, {0.7, 1.0}}, dist, c);
    CHECK(m.diagonal().isOnes());
    CHECK((m - m.transpose()).norm() == 0.0);
    CHECK(m(0, 2) == doctest::Approx(0.49));
    // Strong nearest-neighbour correlation with nothing at lag 2 is not PD.
    CHECK_THROWS_AS((void)build_factor_matrix(CorrSpec{CorrFamily::Lear, {0.9, 40.0}}, dist, c), NotPositiveDefinite);
    const auto ind = build_factor_matrix(CorrSpec{CorrFamily::Independence, Eigen::VectorXd()}, dist, c);
    CHECK(ind.isIdentity());
}

TEST_CASE("scaled decay") {
    CHECK(scaled_decay(CorrSpec{CorrFamily::Lear, {0.9, 2.0}}, {1.0, 5.0}) == doctest::Approx(0.5));
    CHECK(std::isnan(scaled_decay(CorrSpec{CorrFamily::Ar1, {0.9}}, {1.0, 5.0})));
    const CorrSpec raw = unscale_decay(CorrSpec{CorrFamily::Lear, {0.9, 0.5}}, {1.0, 5.0});
    CHECK(raw.params[1] == doctest::Approx(2.0));
}
