#pragma once

#include "kronfit/corr_models.hpp"
#include "kronfit/data.hpp"
#include "kronfit/likelihood.hpp"

#include <Eigen/Dense>

#include <cstddef>
#include <cstdint>
#include <string>
#include <vector>

namespace kronfit {

enum class TimeSampler {
    Grid,          ///< coordinates 0, step, ..., (t-1) step
    RandomSubset,  ///< t distinct sorted levels drawn from 0..time_levels-1, times step
};

enum class SpaceLayout {
    Line,     ///< levels on a line, spacing space_step
    Lattice,  ///< levels filling a square lattice row by row, spacing space_step
};

enum class CovariateKind {
    SubjectNormal,  ///< one N(0, 1) draw per subject
    SubjectBinary,  ///< one Bernoulli(1/2) draw per subject
    RowNormal,      ///< one N(0, 1) draw per measurement
    Factor1,        ///< the factor-1 coordinate
};

struct CovariateRule {
    std::string name;
    CovariateKind kind = CovariateKind::SubjectNormal;
};

struct SimDesign {
    std::size_t num_subjects = 100;
    std::size_t t_min = 4;
    std::size_t t_max = 4;
    std::size_t s_min = 6;
    std::size_t s_max = 6;
    TimeSampler time_sampler = TimeSampler::Grid;
    std::size_t time_levels = 0;  ///< pool size for RandomSubset; 0 means t_max
    double time_step = 1.0;
    SpaceLayout space_layout = SpaceLayout::Line;
    std::size_t space_levels = 0;  ///< global factor-2 levels; 0 means s_max
    double space_step = 1.0;
    bool random_space_subset = false;  ///< false: every subject uses the first s levels
    std::vector<CovariateRule> covariates;
    Eigen::VectorXd beta_true;  ///< intercept first, then one per covariate
    double sigma2_true = 1.0;
    /// True correlation parameters. The LEAR decay is given in scaled form
    /// delta / (d_max - d_min) and converted once the pooled constants are known.
    CorrSpec spec1_true{CorrFamily::Ar1, {0.5}};
    CorrSpec spec2_true{CorrFamily::Ar1, {0.5}};
    std::uint64_t seed = 1;

    void check() const;
};

/// Draws a dataset from the equal-variance Kronecker model. Subject i uses
/// random streams (seed, i, k): k = 0 for layout, 1 for covariates, 2 for noise.
[[nodiscard]] Dataset sample_dataset(const SimDesign& design);

/// Raw (unscaled) truth for a dataset drawn from `design`.
[[nodiscard]] ThetaVector true_theta(const SimDesign& design, const Dataset& ds);

struct OracleOptions {
    double resolution = 1e-3;
    std::size_t max_nodes = 20'000'000;
    Eigen::Index max_dim = 64;  ///< largest t * s per subject
    /// Per-family search ranges for non-rho parameters, as multiples of a
    /// natural unit: LEAR delta in units of d_max - d_min, DE nu absolute,
    /// range parameters in units of d_max.
    double decay_max = 5.0;
};

struct OracleResult {
    ThetaVector theta;
    double value = 0.0;  ///< profile log-likelihood at the best node
    std::size_t nodes = 0;
};

/// Exhaustive search of the profile log-likelihood over the correlation
/// parameters on a regular grid, with beta profiled by dense GLS at each node.
/// The likelihood is computed from explicit Kronecker products.
[[nodiscard]] OracleResult grid_search_oracle(const Dataset& ds, CorrFamily f1, CorrFamily f2,
                                              const OracleOptions& opts = {});

}  // namespace kronfit
