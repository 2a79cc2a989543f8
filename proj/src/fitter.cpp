#include "kronfit/fitter.hpp"

#include "kronfit/errors.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <set>
#include <sstream>

namespace kronfit {

namespace {

constexpr double kInf = std::numeric_limits<double>::infinity();

struct LagCorrelation {
    double corr = 0.05;
    double mean_distance = 0.0;
    bool any = false;
};

// Symmetrized correlation 2 sum(ab) / (sum a^2 + sum b^2) of residual pairs.
struct PairAccumulator {
    double ab = 0.0, aa = 0.0, bb = 0.0, dist = 0.0;
    std::size_t count = 0;

    void add(double a, double b, double d) {
        ab += a * b;
        aa += a * a;
        bb += b * b;
        dist += d;
        ++count;
    }
    [[nodiscard]] LagCorrelation result() const {
        LagCorrelation out;
        if (count == 0 || aa + bb <= 0.0) return out;
        out.any = true;
        out.corr = 2.0 * ab / (aa + bb);
        out.mean_distance = dist / static_cast<double>(count);
        return out;
    }
};

double median_offdiag(const std::vector<SubjectBlock>& subjects, bool factor1) {
    std::vector<double> d;
    for (const auto& b : subjects) {
        const Eigen::MatrixXd& m = factor1 ? b.dist1 : b.dist2;
        for (Eigen::Index k = 0; k < m.cols(); ++k) {
            for (Eigen::Index j = k + 1; j < m.rows(); ++j) d.push_back(m(j, k));
        }
    }
    if (d.empty()) return 0.0;
    auto mid = d.begin() + static_cast<std::ptrdiff_t>(d.size() / 2);
    std::nth_element(d.begin(), mid, d.end());
    return *mid;
}

// Solves 1 - 1.5x + 0.5x^3 = c for x in (0, 1).
double spherical_ratio(double c) {
    double lo = 0.0, hi = 1.0;
    for (int i = 0; i < 200; ++i) {
        const double mid = 0.5 * (lo + hi);
        const double v = 1.0 - 1.5 * mid + 0.5 * mid * mid * mid;
        (v > c ? lo : hi) = mid;
    }
    return 0.5 * (lo + hi);
}

Eigen::VectorXd initial_params(CorrFamily family, const LagCorrelation& lag, double median_distance,
                               const DistanceConstants& constants) {
    const double c = std::clamp(lag.corr, 0.05, 0.95);
    double rho_unit = c;
    if (lag.any && lag.mean_distance > 0.0) rho_unit = std::clamp(std::pow(c, 1.0 / lag.mean_distance), 0.05, 0.95);
    // Correlation at the median distance under the AR(1)-equivalent start.
    const double dbar = median_distance > 0.0 ? median_distance : 1.0;
    const double target = std::clamp(std::pow(rho_unit, dbar), 0.05, 0.95);
    switch (family) {
        case CorrFamily::Lear: {
            const double span = constants.span() > 0.0 ? constants.span() : 1.0;
            return Eigen::Vector2d(rho_unit, span);
        }
        case CorrFamily::Ar1: return Eigen::VectorXd::Constant(1, rho_unit);
        case CorrFamily::De: return Eigen::Vector2d(rho_unit, 1.0);
        case CorrFamily::CompoundSymmetry: return Eigen::VectorXd::Constant(1, c);
        case CorrFamily::Exponential: return Eigen::VectorXd::Constant(1, -dbar / std::log(target));
        case CorrFamily::Gaussian: return Eigen::VectorXd::Constant(1, dbar / std::sqrt(-std::log(target)));
        case CorrFamily::Linear: return Eigen::VectorXd::Constant(1, (1.0 - target) / dbar);
        case CorrFamily::Spherical: return Eigen::VectorXd::Constant(1, dbar / spherical_ratio(target));
        case CorrFamily::Independence: return Eigen::VectorXd();
    }
    return Eigen::VectorXd();
}

// Shrinks correlation parameters toward weaker dependence until every subject's
// factor matrices are positive definite.
ThetaVector make_feasible(const Dataset& ds, ThetaVector theta) {
    for (int attempt = 0; attempt < 30; ++attempt) {
        try {
            (void)evaluate_profile(ds, theta, false);
            return theta;
        } catch (const NotPositiveDefinite&) {
            for (CorrSpec* spec : {&theta.tau1, &theta.tau2}) {
                if (spec->params.size() == 0) continue;
                switch (spec->family) {
                    case CorrFamily::Lear:
                    case CorrFamily::Ar1:
                    case CorrFamily::De:
                    case CorrFamily::CompoundSymmetry: spec->params[0] *= 0.5; break;
                    case CorrFamily::Linear: spec->params[0] *= 2.0; break;
                    default: spec->params[0] *= 0.5; break;
                }
            }
        }
    }
    (void)evaluate_profile(ds, theta, false);  // rethrows the persistent failure
    return theta;
}

bool at_lower(double x, double lo) { return std::isfinite(lo) && x <= lo + 1e-12 * std::max(1.0, std::abs(lo)); }
bool at_upper(double x, double hi) { return std::isfinite(hi) && x >= hi - 1e-12 * std::max(1.0, std::abs(hi)); }

// Free coordinates: not pinned at a bound by a gradient pointing outward.
std::vector<Eigen::Index> free_set(const Eigen::VectorXd& x, const Eigen::VectorXd& g, const ParameterBox& box) {
    std::vector<Eigen::Index> out;
    for (Eigen::Index j = 0; j < x.size(); ++j) {
        const bool pinned = (at_lower(x[j], box.lower[j]) && g[j] < 0.0) || (at_upper(x[j], box.upper[j]) && g[j] > 0.0);
        if (!pinned) out.push_back(j);
    }
    return out;
}

double projected_max_gradient(const Eigen::VectorXd& x, const Eigen::VectorXd& g, const ParameterBox& box) {
    double m = 0.0;
    for (Eigen::Index j : free_set(x, g, box)) m = std::max(m, std::abs(g[j]));
    return m;
}

// Largest alpha in (0, 1] keeping x + alpha * dir inside the box.
double max_feasible_step(const Eigen::VectorXd& x, const Eigen::VectorXd& dir, const ParameterBox& box) {
    double alpha = 1.0;
    for (Eigen::Index j = 0; j < x.size(); ++j) {
        if (dir[j] > 0.0 && std::isfinite(box.upper[j])) alpha = std::min(alpha, (box.upper[j] - x[j]) / dir[j]);
        if (dir[j] < 0.0 && std::isfinite(box.lower[j])) alpha = std::min(alpha, (box.lower[j] - x[j]) / dir[j]);
    }
    return std::max(alpha, 0.0);
}

Eigen::VectorXd snap_to_box(Eigen::VectorXd x, const ParameterBox& box) {
    for (Eigen::Index j = 0; j < x.size(); ++j) {
        const double tol_lo = 1e-12 * std::max(1.0, std::abs(box.lower[j]));
        const double tol_hi = 1e-12 * std::max(1.0, std::abs(box.upper[j]));
        if (x[j] < box.lower[j] + tol_lo && x[j] > box.lower[j] - tol_lo) x[j] = box.lower[j];
        if (x[j] > box.upper[j] - tol_hi && x[j] < box.upper[j] + tol_hi) x[j] = box.upper[j];
    }
    return x;
}

// Newton direction on the free coordinates, ridge-shifted until -H_ff + lambda I is PD.
Eigen::VectorXd ascent_direction(const Eigen::MatrixXd& hessian, const Eigen::VectorXd& g,
                                 const std::vector<Eigen::Index>& free) {
    const auto nf = static_cast<Eigen::Index>(free.size());
    Eigen::VectorXd dir = Eigen::VectorXd::Zero(g.size());
    if (nf == 0) return dir;
    Eigen::MatrixXd neg_h(nf, nf);
    Eigen::VectorXd gf(nf);
    for (Eigen::Index a = 0; a < nf; ++a) {
        gf[a] = g[free[static_cast<std::size_t>(a)]];
        for (Eigen::Index b = 0; b < nf; ++b) {
            neg_h(a, b) = -hessian(free[static_cast<std::size_t>(a)], free[static_cast<std::size_t>(b)]);
        }
    }
    double lambda = 0.0;
    for (int attempt = 0; attempt < 200; ++attempt) {
        Eigen::MatrixXd m = neg_h;
        m.diagonal().array() += lambda;
        Eigen::LLT<Eigen::MatrixXd> llt(m);
        if (llt.info() == Eigen::Success && m.allFinite()) {
            const Eigen::VectorXd step = llt.solve(gf);
            if (step.allFinite() && step.dot(gf) > 0.0) {
                for (Eigen::Index a = 0; a < nf; ++a) dir[free[static_cast<std::size_t>(a)]] = step[a];
                return dir;
            }
        }
        lambda = lambda == 0.0 ? 1e-6 : 2.0 * lambda;
    }
    for (Eigen::Index a = 0; a < nf; ++a) dir[free[static_cast<std::size_t>(a)]] = gf[a];
    return dir;
}

std::string param_label(const std::vector<std::string>& names, Eigen::Index j) {
    return names[static_cast<std::size_t>(j)];
}

}  // namespace

void FitOptions::check() const {
    if (max_iter <= 0 || !(tol_loglik > 0.0) || !(tol_grad > 0.0) || step_halvings <= 0 || !(bounds_margin > 0.0) ||
        !(bounds_margin < 0.5) || !(decay_cap_multiple > 0.0)) {
        throw InputError("fit options must all be positive (and bounds_margin < 0.5)");
    }
}

bool ParameterBox::contains(const Eigen::VectorXd& x) const {
    return (x.array() >= lower.array()).all() && (x.array() <= upper.array()).all() && x.allFinite();
}

ParameterBox parameter_box(const Dataset& ds, CorrFamily f1, CorrFamily f2, const FitOptions& opts) {
    const auto q = static_cast<Eigen::Index>(ds.q());
    const auto n1 = static_cast<Eigen::Index>(param_count(f1));
    const auto n2 = static_cast<Eigen::Index>(param_count(f2));
    ParameterBox box{Eigen::VectorXd::Constant(q + n1 + n2, -kInf), Eigen::VectorXd::Constant(q + n1 + n2, kInf)};
    const double m = opts.bounds_margin;
    auto fill = [&](CorrFamily f, Eigen::Index off, const DistanceConstants& c) {
        switch (f) {
            case CorrFamily::Lear:
                box.lower[off] = m;
                box.upper[off] = 1.0 - m;
                box.lower[off + 1] = 0.0;
                box.upper[off + 1] = opts.decay_cap_multiple * (c.span() > 0.0 ? c.span() : 1.0);
                break;
            case CorrFamily::De:
                box.lower[off] = m;
                box.upper[off] = 1.0 - m;
                box.lower[off + 1] = 0.0;
                box.upper[off + 1] = opts.decay_cap_multiple;
                break;
            case CorrFamily::Ar1:
            case CorrFamily::CompoundSymmetry:
                box.lower[off] = m;
                box.upper[off] = 1.0 - m;
                break;
            case CorrFamily::Exponential:
            case CorrFamily::Gaussian:
            case CorrFamily::Linear:
            case CorrFamily::Spherical:
                box.lower[off] = m;
                break;
            case CorrFamily::Independence:
                break;
        }
    };
    fill(f1, q, ds.constants1);
    fill(f2, q + n1, ds.constants2);
    return box;
}

Eigen::VectorXd parameter_scale(const Dataset& ds, CorrFamily f1, CorrFamily f2) {
    const auto q = static_cast<Eigen::Index>(ds.q());
    const auto n1 = static_cast<Eigen::Index>(param_count(f1));
    const auto n2 = static_cast<Eigen::Index>(param_count(f2));
    Eigen::VectorXd scale = Eigen::VectorXd::Ones(q + n1 + n2);
    const Eigen::MatrixXd x = stacked_design(ds);
    const Eigen::VectorXd y = stacked_response(ds);
    const double rms_y = std::sqrt(y.squaredNorm() / static_cast<double>(std::max<Eigen::Index>(y.size(), 1)));
    for (Eigen::Index c = 0; c < q; ++c) {
        const double rms_x = std::sqrt(x.col(c).squaredNorm() / static_cast<double>(std::max<Eigen::Index>(x.rows(), 1)));
        if (rms_x > 0.0 && rms_y > 0.0) scale[c] = rms_y / rms_x;
    }
    auto fill = [&](CorrFamily f, Eigen::Index off, const DistanceConstants& c, bool first) {
        if (f == CorrFamily::Lear) scale[off + 1] = c.span() > 0.0 ? c.span() : 1.0;
        if (f == CorrFamily::Exponential || f == CorrFamily::Gaussian || f == CorrFamily::Spherical) {
            const double med = median_offdiag(ds.subjects, first);
            scale[off] = med > 0.0 ? med : 1.0;
        }
        if (f == CorrFamily::Linear) {
            const double med = median_offdiag(ds.subjects, first);
            scale[off] = med > 0.0 ? 1.0 / med : 1.0;
        }
    };
    fill(f1, q, ds.constants1, true);
    fill(f2, q + n1, ds.constants2, false);
    return scale;
}

Eigen::VectorXd FitResult::standard_errors() const {
    Eigen::VectorXd se(vcov.rows());
    for (Eigen::Index j = 0; j < vcov.rows(); ++j) {
        const double v = vcov(j, j);
        se[j] = v > 0.0 ? std::sqrt(v) : std::numeric_limits<double>::quiet_NaN();
    }
    return se;
}

Eigen::VectorXd ols_beta(const Dataset& ds) {
    const Eigen::MatrixXd x = stacked_design(ds);
    const Eigen::VectorXd y = stacked_response(ds);
    Eigen::ColPivHouseholderQR<Eigen::MatrixXd> qr(x);
    qr.setThreshold(1e-10);
    if (qr.rank() < x.cols()) {
        throw RankDeficient("design matrix has rank " + std::to_string(qr.rank()) + " < q = " +
                            std::to_string(x.cols()));
    }
    return qr.solve(y);
}

ThetaVector starting_values(const Dataset& ds, CorrFamily f1, CorrFamily f2) {
    ThetaVector theta;
    theta.beta = ols_beta(ds);
    PairAccumulator acc1;
    PairAccumulator acc2;
    for (const auto& b : ds.subjects) {
        const Eigen::VectorXd e = b.y - b.X * theta.beta;
        const Eigen::Index t = b.t();
        const Eigen::Index s = b.s();
        for (Eigen::Index j = 0; j + 1 < t; ++j) {
            for (Eigen::Index l = 0; l < s; ++l) acc1.add(e[j * s + l], e[(j + 1) * s + l], b.dist1(j, j + 1));
        }
        if (s >= 2) {
            std::set<std::pair<Eigen::Index, Eigen::Index>> pairs;
            for (Eigen::Index l = 0; l < s; ++l) {
                Eigen::Index nearest = -1;
                for (Eigen::Index m = 0; m < s; ++m) {
                    if (m != l && (nearest < 0 || b.dist2(l, m) < b.dist2(l, nearest))) nearest = m;
                }
                pairs.emplace(std::min(l, nearest), std::max(l, nearest));
            }
            for (const auto& [l, m] : pairs) {
                for (Eigen::Index j = 0; j < t; ++j) acc2.add(e[j * s + l], e[j * s + m], b.dist2(l, m));
            }
        }
    }
    theta.tau1 = CorrSpec(f1, initial_params(f1, acc1.result(), median_offdiag(ds.subjects, true), ds.constants1));
    theta.tau2 = CorrSpec(f2, initial_params(f2, acc2.result(), median_offdiag(ds.subjects, false), ds.constants2));
    return theta;
}

FitResult fit_ml(const Dataset& ds, const CorrSpec& spec1, const CorrSpec& spec2, const FitOptions& opts,
                 const std::optional<ThetaVector>& start) {
    opts.check();
    require_constants_for(spec1.family, ds.constants1, "factor 1");
    require_constants_for(spec2.family, ds.constants2, "factor 2");
    const CorrFamily f1 = spec1.family;
    const CorrFamily f2 = spec2.family;

    ThetaVector theta0;
    if (start) {
        theta0 = *start;
        if (theta0.tau1.family != f1 || theta0.tau2.family != f2) throw InputError("start vector has the wrong families");
    } else {
        theta0 = starting_values(ds, f1, f2);
        if (static_cast<std::size_t>(spec1.params.size()) == param_count(f1)) theta0.tau1 = spec1;
        if (static_cast<std::size_t>(spec2.params.size()) == param_count(f2)) theta0.tau2 = spec2;
    }
    const ParameterBox box = parameter_box(ds, f1, f2, opts);
    Eigen::VectorXd x0 = theta0.flatten();
    x0 = x0.cwiseMax(box.lower).cwiseMin(box.upper);
    theta0 = make_feasible(ds, theta0.with_values(x0));

    const Eigen::VectorXd scale = parameter_scale(ds, f1, f2);
    const auto grad_fn = [&](const Eigen::VectorXd& x) { return profile_gradient(ds, theta0.with_values(x)); };
    const auto value_fn = [&](const Eigen::VectorXd& x) { return profile_loglik(ds, theta0.with_values(x)); };
    auto hessian_at = [&](const Eigen::VectorXd& x) -> Eigen::MatrixXd {
        try {
            return fd_jacobian_of_gradient(grad_fn, x, scale, box.lower, box.upper);
        } catch (const Error&) {
            return fd_hessian(value_fn, x, scale);
        }
    };

    FitResult result;
    result.names = theta_names(ds, f1, f2);
    result.n = ds.n();
    result.constants1 = ds.constants1;
    result.constants2 = ds.constants2;

    Eigen::VectorXd x = theta0.flatten();
    ProfileEvaluation cur = evaluate_profile(ds, theta0, true);
    auto record = [&](int iteration, double step) {
        TraceEntry e{iteration, cur.loglik, projected_max_gradient(x, cur.gradient, box), step};
        result.trace.push_back(e);
        if (opts.on_iteration) opts.on_iteration(e);
    };
    record(0, 0.0);

    bool converged = result.trace.back().max_gradient <= opts.tol_grad;
    bool stalled = false;
    int iter = 0;
    while (!converged && iter < opts.max_iter) {
        ++iter;
        Eigen::MatrixXd hess;
        try {
            hess = hessian_at(x);
        } catch (const Error&) {
            hess = -Eigen::MatrixXd(scale.cwiseInverse().cwiseAbs2().asDiagonal());
        }
        const auto free = free_set(x, cur.gradient, box);
        bool accepted = false;
        double accepted_step = 0.0;
        ProfileEvaluation next;
        Eigen::VectorXd x_next;
        for (int pass = 0; pass < 2 && !accepted; ++pass) {
            Eigen::VectorXd dir;
            if (pass == 0) {
                dir = ascent_direction(hess, cur.gradient, free);
            } else {
                // Steepest ascent in scaled coordinates.
                dir = Eigen::VectorXd::Zero(x.size());
                for (Eigen::Index j : free) dir[j] = cur.gradient[j] * scale[j] * scale[j];
                const double gnorm = dir.lpNorm<Eigen::Infinity>();
                if (gnorm > 0.0) dir *= 0.1 / gnorm * std::max(1.0, scale.lpNorm<Eigen::Infinity>());
            }
            if (!dir.allFinite() || dir.lpNorm<Eigen::Infinity>() == 0.0) continue;
            double alpha = max_feasible_step(x, dir, box);
            if (alpha <= 0.0) continue;
            const double prev_proj = projected_max_gradient(x, cur.gradient, box);
            for (int h = 0; h <= opts.step_halvings; ++h, alpha *= 0.5) {
                Eigen::VectorXd cand = snap_to_box(x + alpha * dir, box);
                if (!box.contains(cand)) continue;
                try {
                    const ThetaVector th = theta0.with_values(cand);
                    const double value = profile_loglik(ds, th);
                    // Changes below `noise` are rounding; such steps must reduce the gradient instead.
                    const double noise = 1e-12 * std::max(1.0, std::abs(cur.loglik));
                    if (!std::isfinite(value) || value < cur.loglik - noise) continue;
                    ProfileEvaluation ev = evaluate_profile(ds, th, true);
                    if (value <= cur.loglik + noise && projected_max_gradient(cand, ev.gradient, box) >= prev_proj) continue;
                    next = std::move(ev);
                    x_next = std::move(cand);
                    accepted = true;
                    accepted_step = alpha;
                    break;
                } catch (const Error&) {
                    continue;
                }
            }
        }
        if (!accepted) {
            stalled = true;
            --iter;
            break;
        }
        const double change = std::abs(next.loglik - cur.loglik) / std::max(1.0, std::abs(cur.loglik));
        x = std::move(x_next);
        cur = std::move(next);
        record(iter, accepted_step);
        converged = change < opts.tol_loglik && result.trace.back().max_gradient <= opts.tol_grad;
    }
    if (stalled && result.trace.back().max_gradient <= opts.tol_grad) converged = true;

    result.theta = theta0.with_values(x);
    result.loglik = cur.loglik;
    result.gradient = cur.gradient;
    result.sigma2 = SigmaSqEstimate::from(cur.sigma2, ds.n());
    result.converged = converged;
    result.iterations = iter;
    result.num_params = result.theta.size() + 1;
    result.aic = -2.0 * result.loglik + 2.0 * static_cast<double>(result.num_params);
    result.bic = -2.0 * result.loglik + static_cast<double>(result.num_params) * std::log(static_cast<double>(ds.n()));
    result.scaled_decay1 = scaled_decay(result.theta.tau1, ds.constants1);
    result.scaled_decay2 = scaled_decay(result.theta.tau2, ds.constants2);

    const auto k = x.size();
    try {
        result.hessian = hessian_at(x);
    } catch (const Error& e) {
        result.hessian = Eigen::MatrixXd::Constant(k, k, std::numeric_limits<double>::quiet_NaN());
        result.warnings.push_back(std::string("Hessian unavailable at the estimate: ") + e.what());
    }
    Eigen::FullPivLU<Eigen::MatrixXd> lu(-result.hessian);
    if (result.hessian.allFinite() && lu.isInvertible()) {
        result.vcov = lu.inverse();
        result.vcov = 0.5 * (result.vcov + result.vcov.transpose()).eval();
    } else {
        result.vcov = Eigen::MatrixXd::Constant(k, k, std::numeric_limits<double>::quiet_NaN());
        result.warnings.push_back("negated Hessian is singular; variance estimates unavailable");
    }

    if (!converged) {
        std::ostringstream os;
        if (stalled) {
            os << "step halving found no ascent step after " << iter << " iteration(s); projected gradient max-norm "
               << result.max_gradient();
        } else {
            os << "no convergence within " << opts.max_iter << " iterations; projected gradient max-norm "
               << result.max_gradient();
        }
        os << " (a quasi-Newton refit may help)";
        result.warnings.push_back(os.str());
    }
    const auto q = static_cast<Eigen::Index>(ds.q());
    for (Eigen::Index j = q; j < k; ++j) {
        if (at_upper(x[j], box.upper[j]) && result.names[static_cast<std::size_t>(j)].find("rho") == std::string::npos) {
            result.warnings.push_back(param_label(result.names, j) + " reached its cap of " +
                                      std::to_string(box.upper[j]) +
                                      "; correlations beyond nearest neighbours are numerically zero");
        } else if (at_lower(x[j], box.lower[j]) || at_upper(x[j], box.upper[j])) {
            result.warnings.push_back(param_label(result.names, j) + " is on the boundary of its constraint box");
        }
    }
    if (f1 == CorrFamily::Lear && ds.constants1.d_min == 0.0) {
        result.warnings.push_back("factor 1 has d_min = 0 (duplicate positions); the LEAR exponent offset vanishes");
    }
    if (f2 == CorrFamily::Lear && ds.constants2.d_min == 0.0) {
        result.warnings.push_back("factor 2 has d_min = 0 (duplicate positions); the LEAR exponent offset vanishes");
    }
    for (const auto& flag : negative_variance_diagnostic(result, opts).flags) result.warnings.push_back(flag.message);
    return result;
}

bool NegativeVarianceReport::fired_on(int factor) const noexcept {
    return std::any_of(flags.begin(), flags.end(), [factor](const NegativeVarianceFlag& f) { return f.factor == factor; });
}

NegativeVarianceReport negative_variance_diagnostic(const FitResult& result, const FitOptions& opts) {
    NegativeVarianceReport report;
    const Eigen::Index q = result.theta.beta.size();
    const Eigen::Index n1 = result.theta.tau1.params.size();
    const Eigen::Index n2 = result.theta.tau2.params.size();
    auto check_factor = [&](int factor, const CorrSpec& spec, Eigen::Index offset, Eigen::Index count,
                            double scaled) {
        bool recommend = false;
        if (has_rho(spec.family) && spec.params[0] < opts.diagnostic_rho_threshold) {
            recommend = spec.family != CorrFamily::Lear || scaled > opts.diagnostic_scaled_decay_threshold;
        }
        for (Eigen::Index p = 0; p < count; ++p) {
            const Eigen::Index j = offset + p;
            const double v = j < result.vcov.rows() ? result.vcov(j, j) : std::numeric_limits<double>::quiet_NaN();
            if (v > 0.0) continue;
            NegativeVarianceFlag flag;
            flag.factor = factor;
            flag.parameter = result.names.empty() ? std::to_string(j) : result.names[static_cast<std::size_t>(j)];
            flag.variance = v;
            flag.recommend_independence = recommend;
            std::ostringstream os;
            os << "factor " << factor << ": nonpositive variance estimate (" << v << ") for " << flag.parameter;
            if (recommend) {
                os << "; small, quickly decaying correlation - refit factor " << factor << " as independence";
            }
            flag.message = os.str();
            report.flags.push_back(std::move(flag));
        }
    };
    check_factor(1, result.theta.tau1, q, n1, result.scaled_decay1);
    check_factor(2, result.theta.tau2, q + n1, n2, result.scaled_decay2);
    return report;
}

}  // namespace kronfit
