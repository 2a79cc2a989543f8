#pragma once

#include "kronfit/corr_models.hpp"

#include <Eigen/Dense>

#include <cstddef>
#include <iosfwd>
#include <map>
#include <optional>
#include <string>
#include <utility>
#include <vector>

namespace kronfit {

/// One subject's responses ordered factor-1-major: the s factor-2 measurements at
/// the first factor-1 level, then the s measurements at the second level, and so on.
struct SubjectBlock {
    std::string subject_id;
    Eigen::VectorXd y;
    Eigen::MatrixXd X;
    std::vector<double> f1;           ///< factor-1 coordinates, ascending
    std::vector<std::string> f2_ids;  ///< factor-2 level ids, in the dataset's global order
    Eigen::MatrixXd dist1;            ///< t x t
    Eigen::MatrixXd dist2;            ///< s x s

    [[nodiscard]] Eigen::Index t() const noexcept { return dist1.rows(); }
    [[nodiscard]] Eigen::Index s() const noexcept { return dist2.rows(); }
};

/// A named model term and the design columns it owns. Categorical covariates
/// own one indicator column per non-reference level.
struct Term {
    std::string name;
    std::vector<Eigen::Index> columns;
};

struct Dataset {
    std::vector<SubjectBlock> subjects;
    std::vector<std::string> covariate_names;  ///< one per column of X; column 0 is the intercept
    std::vector<Term> terms;                   ///< terms[0] is the intercept
    std::vector<std::string> f2_levels;        ///< global factor-2 order
    Eigen::MatrixXd f2_distance;               ///< distances between global factor-2 levels
    DistanceConstants constants1;
    DistanceConstants constants2;

    [[nodiscard]] std::size_t q() const noexcept { return covariate_names.size(); }
    [[nodiscard]] std::size_t n() const noexcept;
    [[nodiscard]] std::size_t num_subjects() const noexcept { return subjects.size(); }
};

inline constexpr const char* kInterceptName = "(Intercept)";

/// Level ids plus a square distance matrix between them.
struct LevelDistances {
    std::vector<std::string> ids;
    Eigen::MatrixXd distances;
};

/// Names the role of each CSV column.
struct IngestConfig {
    std::string subject_col = "subject";
    std::string factor1_col = "f1";
    /// Factor-2 level id column. May be empty when coordinates are given; ids are
    /// then derived from the coordinate tuple.
    std::string factor2_col = "f2_id";
    /// Factor-2 coordinate columns (Euclidean distance). Empty when a distance file is used.
    std::vector<std::string> factor2_coord_cols;
    std::string response_col = "y";
    /// Covariates in model order. When empty and auto_covariates is set, every
    /// column not claimed by another role is used, in header order.
    std::vector<std::string> covariates;
    bool auto_covariates = false;
    std::vector<std::string> categorical;
    std::map<std::string, std::string> reference_levels;
    std::optional<LevelDistances> factor2_distances;
};

/// Parsed CSV with 1-based source line numbers for each data row.
struct CsvTable {
    std::vector<std::string> header;
    std::vector<std::vector<std::string>> rows;
    std::vector<std::size_t> lines;

    [[nodiscard]] std::optional<std::size_t> column(const std::string& name) const;
};

[[nodiscard]] CsvTable read_csv(std::istream& in);

/// Square CSV matrix with a level-id header row and a level-id first column.
[[nodiscard]] LevelDistances read_distance_csv(std::istream& in);
void write_distance_csv(std::ostream& out, const LevelDistances& d);

[[nodiscard]] Dataset ingest_long_csv(std::istream& in, const IngestConfig& config);

/// Pooled minimum and maximum off-diagonal distances per factor. A factor with
/// no off-diagonal distances anywhere gets (0, 1).
[[nodiscard]] std::pair<DistanceConstants, DistanceConstants>
compute_distance_constants(const std::vector<SubjectBlock>& subjects);

/// Throws InputError when a LEAR-modeled factor has d_min == d_max.
void require_constants_for(CorrFamily family, const DistanceConstants& constants, std::string_view factor);

/// Assembles a dataset from blocks, checking shape invariants and pooling constants.
[[nodiscard]] Dataset make_dataset(std::vector<SubjectBlock> subjects, std::vector<std::string> covariate_names,
                                   std::vector<Term> terms, std::vector<std::string> f2_levels,
                                   Eigen::MatrixXd f2_distance);

/// Copy of the dataset keeping only the listed design columns (in the given order).
/// Terms are remapped; terms that lose all columns are dropped.
[[nodiscard]] Dataset select_columns(const Dataset& ds, const std::vector<Eigen::Index>& columns);

/// All rows of X stacked in subject order.
[[nodiscard]] Eigen::MatrixXd stacked_design(const Dataset& ds);
[[nodiscard]] Eigen::VectorXd stacked_response(const Dataset& ds);

enum class Severity { Info, Warning };

struct Diagnostic {
    Severity severity = Severity::Info;
    std::string code;
    std::string message;
};

[[nodiscard]] std::vector<Diagnostic> validate(const Dataset& ds);
[[nodiscard]] std::size_t warning_count(const std::vector<Diagnostic>& diagnostics);

/// Canonical long CSV: subject, f1, f2_id, y, then the non-intercept design columns.
void write_canonical_csv(std::ostream& out, const Dataset& ds);

/// Shortest decimal text that round-trips to the same double.
[[nodiscard]] std::string format_double(double v);

}  // namespace kronfit
