#include "kronfit/simulate.hpp"

#include "kronfit/errors.hpp"
#include "kronfit/kron_algebra.hpp"
#include "kronfit/random.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numbers>
#include <numeric>

namespace kronfit {

namespace {

std::vector<std::size_t> draw_subset(CounterRng& rng, std::size_t pool, std::size_t k) {
    std::vector<std::size_t> idx(pool);
    std::iota(idx.begin(), idx.end(), std::size_t{0});
    for (std::size_t i = 0; i < k; ++i) {
        const auto j = static_cast<std::size_t>(rng.integer(static_cast<std::int64_t>(i), static_cast<std::int64_t>(pool - 1)));
        std::swap(idx[i], idx[j]);
    }
    idx.resize(k);
    std::sort(idx.begin(), idx.end());
    return idx;
}

struct Axis {
    std::vector<Eigen::VectorXd> values;  // one parameter vector per node
};

Axis family_axis(CorrFamily family, const DistanceConstants& constants, const OracleOptions& opts) {
    const double res = opts.resolution;
    auto range = [&](double lo, double hi, double step) {
        std::vector<double> v;
        const auto count = static_cast<std::size_t>(std::floor((hi - lo) / step + 1e-9)) + 1;
        for (std::size_t k = 0; k < count; ++k) v.push_back(lo + static_cast<double>(k) * step);
        return v;
    };
    std::vector<double> rho = range(0.0, 1.0 - res, res);
    Axis axis;
    switch (family) {
        case CorrFamily::Independence:
            axis.values.emplace_back(0);
            break;
        case CorrFamily::Ar1:
        case CorrFamily::CompoundSymmetry:
            for (double r : rho) axis.values.push_back(Eigen::VectorXd::Constant(1, r));
            break;
        case CorrFamily::Lear:
        case CorrFamily::De: {
            const double unit = family == CorrFamily::Lear ? constants.span() : 1.0;
            const std::vector<double> decay = range(0.0, opts.decay_max * unit, res * unit);
            for (double r : rho) {
                for (double d : decay) axis.values.push_back((Eigen::VectorXd(2) << r, d).finished());
            }
            break;
        }
        case CorrFamily::Exponential:
        case CorrFamily::Gaussian:
        case CorrFamily::Linear:
        case CorrFamily::Spherical: {
            const double unit = constants.d_max > 0.0 ? constants.d_max : 1.0;
            for (double p : range(res * unit, opts.decay_max * unit, res * unit)) {
                axis.values.push_back(Eigen::VectorXd::Constant(1, p));
            }
            break;
        }
    }
    return axis;
}

}  // namespace

void SimDesign::check() const {
    if (num_subjects == 0) throw InputError("simulation needs at least one subject");
    if (t_min == 0 || t_min > t_max) throw InputError("factor-1 count range must satisfy 1 <= t_min <= t_max");
    if (s_min == 0 || s_min > s_max) throw InputError("factor-2 count range must satisfy 1 <= s_min <= s_max");
    if (time_sampler == TimeSampler::RandomSubset && time_levels != 0 && time_levels < t_max) {
        throw InputError("time_levels must be at least t_max");
    }
    if (space_levels != 0 && space_levels < s_max) throw InputError("space_levels must be at least s_max");
    if (!(time_step > 0.0) || !(space_step > 0.0)) throw InputError("coordinate steps must be positive");
    if (!(sigma2_true > 0.0) || !std::isfinite(sigma2_true)) throw InputError("sigma2 must be positive");
    if (beta_true.size() != static_cast<Eigen::Index>(covariates.size()) + 1) {
        throw InputError("beta has " + std::to_string(beta_true.size()) + " entries; expected intercept plus " +
                         std::to_string(covariates.size()) + " covariate(s)");
    }
    if (!beta_true.allFinite()) throw InputError("beta must be finite");
    spec1_true.check();
    spec2_true.check();
}

Dataset sample_dataset(const SimDesign& design) {
    design.check();
    const std::size_t nlev = design.space_levels ? design.space_levels : design.s_max;
    const std::size_t tpool = design.time_levels ? design.time_levels : design.t_max;

    // Global factor-2 layout.
    std::vector<std::pair<double, double>> pos(nlev);
    const auto side = static_cast<std::size_t>(std::ceil(std::sqrt(static_cast<double>(nlev))));
    for (std::size_t k = 0; k < nlev; ++k) {
        if (design.space_layout == SpaceLayout::Line) {
            pos[k] = {static_cast<double>(k) * design.space_step, 0.0};
        } else {
            pos[k] = {static_cast<double>(k % side) * design.space_step, static_cast<double>(k / side) * design.space_step};
        }
    }
    const auto L = static_cast<Eigen::Index>(nlev);
    Eigen::MatrixXd level_dist(L, L);
    std::vector<std::string> level_ids(nlev);
    for (Eigen::Index a = 0; a < L; ++a) {
        level_ids[static_cast<std::size_t>(a)] = std::to_string(a + 1);
        for (Eigen::Index b = 0; b < L; ++b) {
            const auto& pa = pos[static_cast<std::size_t>(a)];
            const auto& pb = pos[static_cast<std::size_t>(b)];
            level_dist(a, b) = std::hypot(pa.first - pb.first, pa.second - pb.second);
        }
    }

    // Layout pass: dimensions and coordinates for every subject.
    std::vector<SubjectBlock> blocks(design.num_subjects);
    std::vector<std::vector<std::size_t>> space_idx(design.num_subjects);
    const int width = static_cast<int>(std::to_string(design.num_subjects).size());
    for (std::size_t i = 0; i < design.num_subjects; ++i) {
        CounterRng rng(design.seed, static_cast<std::uint32_t>(i), 0);
        const auto t = static_cast<std::size_t>(rng.integer(static_cast<std::int64_t>(design.t_min), static_cast<std::int64_t>(design.t_max)));
        const auto s = static_cast<std::size_t>(rng.integer(static_cast<std::int64_t>(design.s_min), static_cast<std::int64_t>(design.s_max)));
        SubjectBlock& b = blocks[i];
        std::string id = std::to_string(i + 1);
        b.subject_id = "s" + std::string(static_cast<std::size_t>(width) - id.size(), '0') + id;
        std::vector<std::size_t> tidx(t);
        if (design.time_sampler == TimeSampler::Grid) {
            std::iota(tidx.begin(), tidx.end(), std::size_t{0});
        } else {
            tidx = draw_subset(rng, tpool, t);
        }
        for (std::size_t k : tidx) b.f1.push_back(static_cast<double>(k) * design.time_step);
        if (design.random_space_subset) {
            space_idx[i] = draw_subset(rng, nlev, s);
        } else {
            space_idx[i].resize(s);
            std::iota(space_idx[i].begin(), space_idx[i].end(), std::size_t{0});
        }
        const auto te = static_cast<Eigen::Index>(t);
        const auto se = static_cast<Eigen::Index>(s);
        b.dist1.resize(te, te);
        for (Eigen::Index j = 0; j < te; ++j) {
            for (Eigen::Index k = 0; k < te; ++k) b.dist1(j, k) = std::abs(b.f1[static_cast<std::size_t>(j)] - b.f1[static_cast<std::size_t>(k)]);
        }
        b.dist2.resize(se, se);
        for (Eigen::Index l = 0; l < se; ++l) {
            const std::size_t gl = space_idx[i][static_cast<std::size_t>(l)];
            b.f2_ids.push_back(level_ids[gl]);
            for (Eigen::Index m = 0; m < se; ++m) {
                b.dist2(l, m) = level_dist(static_cast<Eigen::Index>(gl), static_cast<Eigen::Index>(space_idx[i][static_cast<std::size_t>(m)]));
            }
        }
    }

    const auto [c1, c2] = compute_distance_constants(blocks);
    require_constants_for(design.spec1_true.family, c1, "factor 1");
    require_constants_for(design.spec2_true.family, c2, "factor 2");
    const CorrSpec spec1 = unscale_decay(design.spec1_true, c1);
    const CorrSpec spec2 = unscale_decay(design.spec2_true, c2);

    std::vector<std::string> names{kInterceptName};
    std::vector<Term> terms{Term{kInterceptName, {0}}};
    for (const auto& rule : design.covariates) {
        terms.push_back(Term{rule.name, {static_cast<Eigen::Index>(names.size())}});
        names.push_back(rule.name);
    }
    const auto q = static_cast<Eigen::Index>(names.size());
    const double sigma = std::sqrt(design.sigma2_true);

    for (std::size_t i = 0; i < design.num_subjects; ++i) {
        SubjectBlock& b = blocks[i];
        const Eigen::Index t = b.t();
        const Eigen::Index s = b.s();
        b.X.resize(t * s, q);
        b.X.col(0).setOnes();
        CounterRng cov_rng(design.seed, static_cast<std::uint32_t>(i), 1);
        for (std::size_t c = 0; c < design.covariates.size(); ++c) {
            const Eigen::Index col = static_cast<Eigen::Index>(c) + 1;
            switch (design.covariates[c].kind) {
                case CovariateKind::SubjectNormal:
                    b.X.col(col).setConstant(cov_rng.normal());
                    break;
                case CovariateKind::SubjectBinary:
                    b.X.col(col).setConstant(cov_rng.uniform() < 0.5 ? 0.0 : 1.0);
                    break;
                case CovariateKind::RowNormal:
                    for (Eigen::Index r = 0; r < t * s; ++r) b.X(r, col) = cov_rng.normal();
                    break;
                case CovariateKind::Factor1:
                    for (Eigen::Index j = 0; j < t; ++j) b.X.block(j * s, col, s, 1).setConstant(b.f1[static_cast<std::size_t>(j)]);
                    break;
            }
        }
        const KronFactorization fac(KronPair{build_factor_matrix(spec1, b.dist1, c1, "factor 1"),
                                             build_factor_matrix(spec2, b.dist2, c2, "factor 2")});
        CounterRng noise_rng(design.seed, static_cast<std::uint32_t>(i), 2);
        Eigen::VectorXd z(t * s);
        for (Eigen::Index k = 0; k < t * s; ++k) z[k] = noise_rng.normal();
        b.y = b.X * design.beta_true + sigma * fac.correlate(z);
    }
    return make_dataset(std::move(blocks), std::move(names), std::move(terms), std::move(level_ids), std::move(level_dist));
}

ThetaVector true_theta(const SimDesign& design, const Dataset& ds) {
    return ThetaVector{design.beta_true, unscale_decay(design.spec1_true, ds.constants1),
                       unscale_decay(design.spec2_true, ds.constants2)};
}

OracleResult grid_search_oracle(const Dataset& ds, CorrFamily f1, CorrFamily f2, const OracleOptions& opts) {
    if (!(opts.resolution > 0.0 && opts.resolution < 0.5)) throw InputError("oracle resolution must lie in (0, 0.5)");
    if (param_count(f1) + param_count(f2) > 4) throw SizeGuardError("oracle supports at most 4 correlation parameters");
    for (const auto& b : ds.subjects) {
        if (b.t() * b.s() > opts.max_dim) {
            throw SizeGuardError("oracle limited to t*s <= " + std::to_string(opts.max_dim) + "; subject '" +
                                 b.subject_id + "' has " + std::to_string(b.t() * b.s()));
        }
    }
    require_constants_for(f1, ds.constants1, "factor 1");
    require_constants_for(f2, ds.constants2, "factor 2");
    const Axis ax1 = family_axis(f1, ds.constants1, opts);
    const Axis ax2 = family_axis(f2, ds.constants2, opts);
    const double total = static_cast<double>(ax1.values.size()) * static_cast<double>(ax2.values.size());
    if (total > static_cast<double>(opts.max_nodes)) {
        throw SizeGuardError("oracle grid would have " + format_double(total) + " nodes (cap " +
                             std::to_string(opts.max_nodes) + ")");
    }

    const auto q = static_cast<Eigen::Index>(ds.q());
    const double n = static_cast<double>(ds.n());
    const double constant = 0.5 * n * (std::log(n) - 1.0 - std::log(2.0 * std::numbers::pi));
    OracleResult best;
    best.value = -std::numeric_limits<double>::infinity();
    std::vector<Eigen::MatrixXd> gammas(ds.num_subjects());
    for (const auto& p1 : ax1.values) {
        const CorrSpec spec1(f1, p1);
        for (std::size_t i = 0; i < ds.num_subjects(); ++i) {
            gammas[i] = fill_factor_matrix(spec1, ds.subjects[i].dist1, ds.constants1);
        }
        for (const auto& p2 : ax2.values) {
            ++best.nodes;
            const CorrSpec spec2(f2, p2);
            Eigen::MatrixXd xtx = Eigen::MatrixXd::Zero(q, q);
            Eigen::VectorXd xty = Eigen::VectorXd::Zero(q);
            double logdet = 0.0;
            bool ok = true;
            std::vector<Eigen::MatrixXd> wx(ds.num_subjects());
            std::vector<Eigen::VectorXd> wy(ds.num_subjects());
            for (std::size_t i = 0; i < ds.num_subjects(); ++i) {
                const auto& b = ds.subjects[i];
                const Eigen::MatrixXd omega = fill_factor_matrix(spec2, b.dist2, ds.constants2);
                const Eigen::MatrixXd sigma = kron_dense(KronPair{gammas[i], omega});
                Eigen::LLT<Eigen::MatrixXd> llt(sigma);
                if (llt.info() != Eigen::Success ||
                    llt.matrixLLT().diagonal().array().square().minCoeff() <= pd_tolerance(sigma.rows())) {
                    ok = false;
                    break;
                }
                logdet += 2.0 * llt.matrixLLT().diagonal().array().log().sum();
                wx[i] = llt.matrixL().solve(b.X);
                wy[i] = llt.matrixL().solve(b.y);
                xtx.noalias() += wx[i].transpose() * wx[i];
                xty.noalias() += wx[i].transpose() * wy[i];
            }
            if (!ok) continue;
            const Eigen::VectorXd beta = xtx.ldlt().solve(xty);
            double quad = 0.0;
            for (std::size_t i = 0; i < ds.num_subjects(); ++i) quad += (wy[i] - wx[i] * beta).squaredNorm();
            if (!(quad > 0.0)) continue;
            const double value = -0.5 * logdet - 0.5 * n * std::log(quad) + constant;
            if (value > best.value) {
                best.value = value;
                best.theta = ThetaVector{beta, spec1, spec2};
            }
        }
    }
    if (!std::isfinite(best.value)) throw NotPositiveDefinite("no oracle grid node gave a positive definite covariance");
    return best;
}

}  // namespace kronfit
