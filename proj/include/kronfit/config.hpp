#pragma once

#include "kronfit/corr_models.hpp"
#include "kronfit/data.hpp"
#include "kronfit/fitter.hpp"
#include "kronfit/simulate.hpp"

#include <json.hpp>

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

namespace kronfit {

using Json = nlohmann::ordered_json;

/// Everything a JSON config file may specify. LEAR decays in factor specs are in
/// scaled form (delta / (d_max - d_min)), as on the command line.
struct RunConfig {
    std::optional<IngestConfig> ingest;  ///< absent: canonical columns with auto covariates
    FitOptions fit;
    std::optional<CorrSpec> factor1;
    std::optional<CorrSpec> factor2;
    std::vector<CorrFamily> families1;
    std::vector<CorrFamily> families2;
    std::optional<double> alpha;
    bool backward = false;
    std::vector<std::string> terms;  ///< full model for backward selection; empty means all
    std::optional<SimDesign> simulate;
};

/// Parses a config document. Relative paths resolve against `base_dir`.
/// Unknown keys are rejected with InputError.
[[nodiscard]] RunConfig parse_config(const Json& doc, const std::filesystem::path& base_dir);
[[nodiscard]] RunConfig load_config(const std::filesystem::path& path);

/// Canonical columns (subject, f1, f2_id, y) with every other column a
/// covariate. A sibling file <stem>.f2dist.csv supplies factor-2 distances.
[[nodiscard]] IngestConfig default_ingest(const std::filesystem::path& data_path);

/// Sidecar path for factor-2 distances: data.csv -> data.f2dist.csv.
[[nodiscard]] std::filesystem::path distance_sidecar(const std::filesystem::path& data_path);

[[nodiscard]] LevelDistances load_distance_file(const std::filesystem::path& path);
[[nodiscard]] Dataset load_dataset(const std::filesystem::path& data_path, const IngestConfig& ingest);

/// "family" or "family:p1,p2"; LEAR decay scaled. Throws InputError.
[[nodiscard]] CorrSpec parse_factor_arg(const std::string& text);
/// Comma-separated family tags.
[[nodiscard]] std::vector<CorrFamily> parse_family_list(const std::string& text);

[[nodiscard]] SimDesign parse_sim_design(const Json& j);
[[nodiscard]] Json sim_design_to_json(const SimDesign& design);
[[nodiscard]] Json corr_spec_to_json(const CorrSpec& spec);

}  // namespace kronfit
