#include "kronfit/random.hpp"
#include "kronfit/simulate.hpp"
#include "oracles.hpp"

#include <boost/math/distributions/normal.hpp>
#include <doctest.h>

using namespace kronfit;

namespace {

using Block = std::array<std::uint32_t, 4>;

SimDesign small_design(std::size_t subjects, CorrSpec s1, CorrSpec s2, std::uint64_t seed) {
    SimDesign d;
    d.num_subjects = subjects;
    d.t_min = d.t_max = 2;
    d.s_min = d.s_max = 2;
    d.beta_true = Eigen::VectorXd::Zero(1);
    d.spec1_true = std::move(s1);
    d.spec2_true = std::move(s2);
    d.seed = seed;
    return d;
}

double correlation(const std::vector<double>& a, const std::vector<double>& b) {
    const auto n = static_cast<double>(a.size());
    double ma = 0, mb = 0;
    for (std::size_t i = 0; i < a.size(); ++i) {
        ma += a[i];
        mb += b[i];
    }
    ma /= n;
    mb /= n;
    double sab = 0, saa = 0, sbb = 0;
    for (std::size_t i = 0; i < a.size(); ++i) {
        sab += (a[i] - ma) * (b[i] - mb);
        saa += (a[i] - ma) * (a[i] - ma);
        sbb += (b[i] - mb) * (b[i] - mb);
    }
    return sab / std::sqrt(saa * sbb);
}

}  // namespace

TEST_CASE("Philox4x32-10 known-answer vectors") {
    CHECK(philox4x32({0, 0, 0, 0}, {0, 0}) == Block{0x6627e8d5, 0xe169c58d, 0xbc57ac4c, 0x9b00dbd8});
    CHECK(philox4x32({0xffffffff, 0xffffffff, 0xffffffff, 0xffffffff}, {0xffffffff, 0xffffffff}) ==
          Block{0x408f276d, 0x41c83b0e, 0xa20bc7c6, 0x6d5451fd});
    CHECK(philox4x32({0x243f6a88, 0x85a308d3, 0x13198a2e, 0x03707344}, {0xa4093822, 0x299f31d0}) ==
          Block{0xd16cfe09, 0x94fdcceb, 0x5001e420, 0x24126ea1});
}

TEST_CASE("normal quantile matches boost") {
    const boost::math::normal_distribution<double> n01;
    for (double p : {1e-300, 1e-20, 1e-10, 1e-5, 0.001, 0.02425, 0.1, 0.3, 0.5, 0.7, 0.9, 0.97575, 0.999, 1 - 1e-10}) {
        const double expect = boost::math::quantile(n01, p);
        CHECK(std::abs(normal_quantile(p) - expect) <= 1e-14 * std::max(1.0, std::abs(expect)));
    }
    CHECK(normal_quantile(0.5) == 0.0);
}

TEST_CASE("counter streams") {
    CounterRng a(9, 3, 1);
    CounterRng b(9, 3, 1);
    CounterRng c(9, 4, 1);
    for (int i = 0; i < 100; ++i) {
        const std::uint64_t x = a.next_u64();
        CHECK(x == b.next_u64());
        CHECK(x != c.next_u64());
    }
    CounterRng u(1, 0, 0);
    double mean = 0.0;
    for (int i = 0; i < 100000; ++i) {
        const double v = u.uniform();
        REQUIRE(v > 0.0);
        REQUIRE(v < 1.0);
        mean += v;
        const auto k = u.integer(-2, 3);
        REQUIRE(k >= -2);
        REQUIRE(k <= 3);
    }
    CHECK(mean / 100000.0 == doctest::Approx(0.5).epsilon(0.01));
}

TEST_CASE("simulation is deterministic and order independent") {
    SimDesign d = small_design(20, CorrSpec{CorrFamily::Ar1, {0.5}}, CorrSpec{CorrFamily::Ar1, {0.4}}, 5);
    const Dataset a = sample_dataset(d);
    const Dataset b = sample_dataset(d);
    for (std::size_t i = 0; i < a.subjects.size(); ++i) CHECK(a.subjects[i].y == b.subjects[i].y);
    d.num_subjects = 10;
    const Dataset prefix = sample_dataset(d);
    for (std::size_t i = 0; i < prefix.subjects.size(); ++i) CHECK(prefix.subjects[i].y == a.subjects[i].y);
    d.seed = 6;
    CHECK(sample_dataset(d).subjects[0].y != a.subjects[0].y);
}

TEST_CASE("tiny noise reproduces the mean") {
    SimDesign d = small_design(5, CorrSpec{CorrFamily::Ar1, {0.5}}, CorrSpec{CorrFamily::Ar1, {0.4}}, 8);
    d.covariates = {{"x", CovariateKind::RowNormal}, {"t", CovariateKind::Factor1}};
    d.beta_true = Eigen::Vector3d(1.0, -2.0, 0.5);
    d.sigma2_true = 1e-20;
    const Dataset ds = sample_dataset(d);
    for (const auto& b : ds.subjects) CHECK((b.y - b.X * d.beta_true).cwiseAbs().maxCoeff() <= 1e-8);
}

TEST_CASE("singleton variance and 2x2 correlations") {
    SimDesign one = small_design(20000, CorrSpec{CorrFamily::Ar1, {0.5}}, CorrSpec{CorrFamily::Ar1, {0.5}}, 10);
    one.t_min = one.t_max = one.s_min = one.s_max = 1;
    one.sigma2_true = 2.0;
    double ss = 0.0;
    const Dataset ds1 = sample_dataset(one);
    for (const auto& b : ds1.subjects) ss += b.y[0] * b.y[0];
    CHECK(ss / 20000.0 == doctest::Approx(2.0).epsilon(0.02));

    const SimDesign two = small_design(20000, CorrSpec{CorrFamily::Ar1, {0.6}}, CorrSpec{CorrFamily::Ar1, {0.5}}, 11);
    const Dataset ds = sample_dataset(two);
    std::array<std::vector<double>, 4> cols;
    for (const auto& b : ds.subjects) {
        REQUIRE(b.y.size() == 4);
        for (int k = 0; k < 4; ++k) cols[static_cast<std::size_t>(k)].push_back(b.y[k]);
    }
    // Index j*s + l: (0,0) (0,1) (1,0) (1,1).
    CHECK(std::abs(correlation(cols[0], cols[1]) - 0.5) <= 0.02);
    CHECK(std::abs(correlation(cols[0], cols[2]) - 0.6) <= 0.02);
    CHECK(std::abs(correlation(cols[0], cols[3]) - 0.3) <= 0.02);
    CHECK(std::abs(correlation(cols[1], cols[2]) - 0.3) <= 0.02);
}

TEST_CASE("scaled LEAR truth converts with the pooled span") {
    SimDesign d = small_design(30, CorrSpec{CorrFamily::Lear, {0.8, 0.5}}, CorrSpec{CorrFamily::Ar1, {0.4}}, 12);
    d.t_min = d.t_max = 4;
    d.time_step = 2.0;
    const Dataset ds = sample_dataset(d);
    const ThetaVector th = true_theta(d, ds);
    CHECK(ds.constants1.span() == doctest::Approx(4.0));
    CHECK(th.tau1.params[1] == doctest::Approx(2.0));
    CHECK(th.tau2.params[0] == 0.4);
}

TEST_CASE("grid-search oracle") {
    const SimDesign d = small_design(40, CorrSpec{CorrFamily::Ar1, {0.5}}, CorrSpec{CorrFamily::Ar1, {0.3}}, 13);
    const Dataset ds = sample_dataset(d);
    OracleOptions coarse;
    coarse.resolution = 0.02;
    OracleOptions fine;
    fine.resolution = 0.01;
    const OracleResult a = grid_search_oracle(ds, CorrFamily::Ar1, CorrFamily::Ar1, coarse);
    const OracleResult b = grid_search_oracle(ds, CorrFamily::Ar1, CorrFamily::Ar1, fine);
    CHECK(b.value >= a.value);
    CHECK(a.nodes == 50 * 50);
    CHECK(b.nodes == 100 * 100);
    CHECK(a.value == doctest::Approx(profile_loglik(ds, a.theta)).epsilon(1e-10));
    const Eigen::VectorXd dense = oracle::dense_gls(ds, CorrFamily::Ar1, a.theta.tau1.params, CorrFamily::Ar1,
                                                    a.theta.tau2.params);
    CHECK((a.theta.beta - dense).cwiseAbs().maxCoeff() <= 1e-10);
    CHECK((gls_beta(ds, a.theta.tau1, a.theta.tau2).beta - dense).cwiseAbs().maxCoeff() <= 1e-10);

    const SimDesign indep = small_design(400, CorrSpec{CorrFamily::Independence, Eigen::VectorXd()},
                                         CorrSpec{CorrFamily::Independence, Eigen::VectorXd()}, 14);
    const OracleResult z = grid_search_oracle(sample_dataset(indep), CorrFamily::Ar1, CorrFamily::Ar1, coarse);
    CHECK(z.theta.tau1.params[0] <= 0.15);
    CHECK(z.theta.tau2.params[0] <= 0.15);

    OracleOptions capped;
    capped.max_nodes = 10;
    CHECK_THROWS((void)grid_search_oracle(ds, CorrFamily::Ar1, CorrFamily::Ar1, capped));
}
