#pragma once

#include "kronfit/config.hpp"
#include "kronfit/data.hpp"
#include "kronfit/fitter.hpp"
#include "kronfit/inference.hpp"
#include "kronfit/simulate.hpp"

#include <optional>
#include <string>
#include <vector>

namespace kronfit {

enum class ReportFormat { Text, Csv, Json };

[[nodiscard]] ReportFormat parse_report_format(const std::string& tag);

/// Reports are built once as JSON (full precision); the text and CSV renderings
/// are derived from that document, so all three carry the same numbers.
[[nodiscard]] Json fit_report(const Dataset& ds, const FitResult& fit, const FitOptions& opts,
                              const std::vector<Diagnostic>& diagnostics);
[[nodiscard]] Json select_report(const Dataset& ds, const SelectionGrid& grid, const FitOptions& opts,
                                 const std::optional<BackwardResult>& backward, double alpha);
[[nodiscard]] Json validate_report(const Dataset& ds, const std::vector<Diagnostic>& diagnostics);
[[nodiscard]] Json truth_report(const SimDesign& design, const Dataset& ds);

/// Predicted correlation rho1(d1) * rho2(d2) on a grid of distances, with
/// optional pooled empirical correlations of OLS residuals for overlay.
struct CorrelationSurface {
    CorrSpec spec1;
    CorrSpec spec2;
    DistanceConstants constants1;
    DistanceConstants constants2;
    std::vector<double> d1;
    std::vector<double> d2;
    Eigen::MatrixXd predicted;  ///< d1.size() x d2.size()

    struct Observed {
        double d1 = 0.0;
        double d2 = 0.0;
        double correlation = 0.0;
        std::size_t pairs = 0;
    };
    std::vector<Observed> observed;
};

/// Factor correlation at distance d, 1 at d = 0.
[[nodiscard]] double factor_correlation(const CorrSpec& spec, double d, const DistanceConstants& constants);

[[nodiscard]] CorrelationSurface correlation_surface(const CorrSpec& spec1, const DistanceConstants& c1,
                                                     const CorrSpec& spec2, const DistanceConstants& c2,
                                                     const std::vector<double>& d1, const std::vector<double>& d2);

/// Empirical correlations of pooled OLS residuals grouped by exact (d1, d2) distance pairs.
[[nodiscard]] std::vector<CorrelationSurface::Observed> observed_correlations(const Dataset& ds);

[[nodiscard]] Json surface_report(const CorrelationSurface& surface);

[[nodiscard]] std::string render_report(const Json& report, ReportFormat format);

}  // namespace kronfit
