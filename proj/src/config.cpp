#include "kronfit/config.hpp"

#include "kronfit/errors.hpp"

#include <fstream>
#include <set>
#include <sstream>

namespace kronfit {

namespace fs = std::filesystem;

namespace {

void check_keys(const Json& obj, const std::string& where, std::initializer_list<const char*> allowed) {
    if (!obj.is_object()) throw InputError("config: '" + where + "' must be an object");
    const std::set<std::string> ok(allowed.begin(), allowed.end());
    for (const auto& [key, value] : obj.items()) {
        if (!ok.count(key)) throw InputError("config: unknown key '" + key + "' in '" + where + "'");
    }
}

template <class T>
T get_as(const Json& obj, const char* key, const std::string& where) {
    try {
        return obj.at(key).get<T>();
    } catch (const nlohmann::json::exception&) {
        throw InputError("config: '" + where + "." + key + "' has the wrong type");
    }
}

template <class T>
void read_opt(const Json& obj, const char* key, const std::string& where, T& out) {
    if (obj.contains(key)) out = get_as<T>(obj, key, where);
}

CorrFamily family_from(const std::string& tag) {
    auto f = parse_family(tag);
    if (!f) throw InputError("unknown correlation family '" + tag + "'");
    return *f;
}

CorrSpec spec_from_json(const Json& j, const std::string& where) {
    if (j.is_string()) return CorrSpec{family_from(j.get<std::string>()), Eigen::VectorXd()};
    check_keys(j, where, {"family", "params"});
    CorrSpec spec{family_from(get_as<std::string>(j, "family", where)), Eigen::VectorXd()};
    if (j.contains("params")) {
        const auto p = get_as<std::vector<double>>(j, "params", where);
        spec.params = Eigen::Map<const Eigen::VectorXd>(p.data(), static_cast<Eigen::Index>(p.size()));
        if (p.size() != param_count(spec.family)) {
            throw InputError("config: '" + where + "' family " + std::string(family_tag(spec.family)) + " takes " +
                             std::to_string(param_count(spec.family)) + " parameter(s), got " + std::to_string(p.size()));
        }
        try {
            spec.check();
        } catch (const DomainError& e) {
            throw InputError(std::string("config: '") + where + "': " + e.what());
        }
    }
    return spec;
}

std::pair<std::size_t, std::size_t> count_range(const Json& j, const std::string& where) {
    if (j.is_number_unsigned()) {
        const auto v = j.get<std::size_t>();
        return {v, v};
    }
    if (j.is_array() && j.size() == 2 && j[0].is_number_unsigned() && j[1].is_number_unsigned()) {
        return {j[0].get<std::size_t>(), j[1].get<std::size_t>()};
    }
    throw InputError("config: '" + where + "' must be a count or a [min, max] pair");
}

std::vector<CorrFamily> families_from(const Json& j, const std::string& where) {
    std::vector<CorrFamily> out;
    for (const auto& tag : get_as<std::vector<std::string>>(Json{{"v", j}}, "v", where)) out.push_back(family_from(tag));
    if (out.empty()) throw InputError("config: '" + where + "' must list at least one family");
    return out;
}

IngestConfig parse_ingest(const Json& j, const fs::path& base_dir) {
    check_keys(j, "data", {"subject", "factor1", "factor2", "factor2_coords", "response", "covariates",
                           "categorical", "reference_levels", "factor2_distance_file"});
    IngestConfig cfg;
    read_opt(j, "subject", "data", cfg.subject_col);
    read_opt(j, "factor1", "data", cfg.factor1_col);
    read_opt(j, "factor2", "data", cfg.factor2_col);
    read_opt(j, "factor2_coords", "data", cfg.factor2_coord_cols);
    read_opt(j, "response", "data", cfg.response_col);
    if (j.contains("covariates")) {
        cfg.covariates = get_as<std::vector<std::string>>(j, "covariates", "data");
    } else {
        cfg.auto_covariates = true;
    }
    read_opt(j, "categorical", "data", cfg.categorical);
    read_opt(j, "reference_levels", "data", cfg.reference_levels);
    if (j.contains("factor2_distance_file")) {
        fs::path p = get_as<std::string>(j, "factor2_distance_file", "data");
        if (p.is_relative()) p = base_dir / p;
        cfg.factor2_distances = load_distance_file(p);
    }
    return cfg;
}

void parse_fit_options(const Json& j, FitOptions& opts) {
    check_keys(j, "fit", {"max_iter", "tol_loglik", "tol_grad", "step_halvings", "bounds_margin",
                          "decay_cap_multiple", "diagnostic_rho_threshold", "diagnostic_scaled_decay_threshold"});
    read_opt(j, "max_iter", "fit", opts.max_iter);
    read_opt(j, "tol_loglik", "fit", opts.tol_loglik);
    read_opt(j, "tol_grad", "fit", opts.tol_grad);
    read_opt(j, "step_halvings", "fit", opts.step_halvings);
    read_opt(j, "bounds_margin", "fit", opts.bounds_margin);
    read_opt(j, "decay_cap_multiple", "fit", opts.decay_cap_multiple);
    read_opt(j, "diagnostic_rho_threshold", "fit", opts.diagnostic_rho_threshold);
    read_opt(j, "diagnostic_scaled_decay_threshold", "fit", opts.diagnostic_scaled_decay_threshold);
    try {
        opts.check();
    } catch (const Error& e) {
        throw InputError(std::string("config: ") + e.what());
    }
}

const char* covariate_kind_tag(CovariateKind k) {
    switch (k) {
        case CovariateKind::SubjectNormal: return "subject_normal";
        case CovariateKind::SubjectBinary: return "subject_binary";
        case CovariateKind::RowNormal: return "row_normal";
        case CovariateKind::Factor1: return "factor1";
    }
    return "subject_normal";
}

}  // namespace

SimDesign parse_sim_design(const Json& j) {
    const std::string w = "simulate";
    check_keys(j, w, {"subjects", "t", "s", "time", "space", "covariates", "beta", "sigma2", "factor1", "factor2", "seed"});
    SimDesign d;
    read_opt(j, "subjects", w, d.num_subjects);
    if (j.contains("t")) std::tie(d.t_min, d.t_max) = count_range(j["t"], w + ".t");
    if (j.contains("s")) std::tie(d.s_min, d.s_max) = count_range(j["s"], w + ".s");
    if (j.contains("time")) {
        const Json& t = j["time"];
        check_keys(t, w + ".time", {"sampler", "levels", "step"});
        const std::string sampler = t.value("sampler", std::string("grid"));
        if (sampler == "grid") {
            d.time_sampler = TimeSampler::Grid;
        } else if (sampler == "random") {
            d.time_sampler = TimeSampler::RandomSubset;
        } else {
            throw InputError("config: simulate.time.sampler must be 'grid' or 'random'");
        }
        read_opt(t, "levels", w + ".time", d.time_levels);
        read_opt(t, "step", w + ".time", d.time_step);
    }
    if (j.contains("space")) {
        const Json& s = j["space"];
        check_keys(s, w + ".space", {"layout", "levels", "step", "random_subset"});
        const std::string layout = s.value("layout", std::string("line"));
        if (layout == "line") {
            d.space_layout = SpaceLayout::Line;
        } else if (layout == "lattice") {
            d.space_layout = SpaceLayout::Lattice;
        } else {
            throw InputError("config: simulate.space.layout must be 'line' or 'lattice'");
        }
        read_opt(s, "levels", w + ".space", d.space_levels);
        read_opt(s, "step", w + ".space", d.space_step);
        read_opt(s, "random_subset", w + ".space", d.random_space_subset);
    }
    if (j.contains("covariates")) {
        for (const auto& c : j["covariates"]) {
            check_keys(c, w + ".covariates[]", {"name", "kind"});
            CovariateRule rule;
            rule.name = get_as<std::string>(c, "name", w + ".covariates[]");
            const std::string kind = c.value("kind", std::string("subject_normal"));
            bool found = false;
            for (auto k : {CovariateKind::SubjectNormal, CovariateKind::SubjectBinary, CovariateKind::RowNormal,
                           CovariateKind::Factor1}) {
                if (kind == covariate_kind_tag(k)) {
                    rule.kind = k;
                    found = true;
                }
            }
            if (!found) throw InputError("config: unknown covariate kind '" + kind + "'");
            d.covariates.push_back(rule);
        }
    }
    if (j.contains("beta")) {
        const auto b = get_as<std::vector<double>>(j, "beta", w);
        d.beta_true = Eigen::Map<const Eigen::VectorXd>(b.data(), static_cast<Eigen::Index>(b.size()));
    } else {
        d.beta_true = Eigen::VectorXd::Zero(static_cast<Eigen::Index>(d.covariates.size()) + 1);
    }
    read_opt(j, "sigma2", w, d.sigma2_true);
    for (const char* key : {"factor1", "factor2"}) {
        if (!j.contains(key)) continue;
        CorrSpec spec = spec_from_json(j[key], w + "." + key);
        if (spec.params.size() == 0 && param_count(spec.family) > 0) {
            throw InputError("config: simulate." + std::string(key) + " needs parameters");
        }
        (std::string(key) == "factor1" ? d.spec1_true : d.spec2_true) = spec;
    }
    read_opt(j, "seed", w, d.seed);
    try {
        d.check();
    } catch (const DomainError& e) {
        throw InputError(std::string("config: simulate: ") + e.what());
    }
    return d;
}

Json corr_spec_to_json(const CorrSpec& spec) {
    Json j;
    j["family"] = std::string(family_tag(spec.family));
    j["params"] = std::vector<double>(spec.params.data(), spec.params.data() + spec.params.size());
    return j;
}

Json sim_design_to_json(const SimDesign& d) {
    Json j;
    j["subjects"] = d.num_subjects;
    j["t"] = {d.t_min, d.t_max};
    j["s"] = {d.s_min, d.s_max};
    j["time"] = {{"sampler", d.time_sampler == TimeSampler::Grid ? "grid" : "random"},
                 {"levels", d.time_levels},
                 {"step", d.time_step}};
    j["space"] = {{"layout", d.space_layout == SpaceLayout::Line ? "line" : "lattice"},
                  {"levels", d.space_levels},
                  {"step", d.space_step},
                  {"random_subset", d.random_space_subset}};
    j["covariates"] = Json::array();
    for (const auto& c : d.covariates) j["covariates"].push_back({{"name", c.name}, {"kind", covariate_kind_tag(c.kind)}});
    j["beta"] = std::vector<double>(d.beta_true.data(), d.beta_true.data() + d.beta_true.size());
    j["sigma2"] = d.sigma2_true;
    j["factor1"] = corr_spec_to_json(d.spec1_true);
    j["factor2"] = corr_spec_to_json(d.spec2_true);
    j["seed"] = d.seed;
    return j;
}

RunConfig parse_config(const Json& doc, const fs::path& base_dir) {
    check_keys(doc, "config", {"data", "model", "fit", "simulate"});
    RunConfig cfg;
    if (doc.contains("data")) cfg.ingest = parse_ingest(doc["data"], base_dir);
    if (doc.contains("fit")) parse_fit_options(doc["fit"], cfg.fit);
    if (doc.contains("model")) {
        const Json& m = doc["model"];
        check_keys(m, "model", {"factor1", "factor2", "families1", "families2", "alpha", "backward", "terms"});
        if (m.contains("factor1")) cfg.factor1 = spec_from_json(m["factor1"], "model.factor1");
        if (m.contains("factor2")) cfg.factor2 = spec_from_json(m["factor2"], "model.factor2");
        if (m.contains("families1")) cfg.families1 = families_from(m["families1"], "model.families1");
        if (m.contains("families2")) cfg.families2 = families_from(m["families2"], "model.families2");
        if (m.contains("alpha")) {
            cfg.alpha = get_as<double>(m, "alpha", "model");
            if (!(*cfg.alpha > 0.0 && *cfg.alpha <= 1.0)) throw InputError("config: model.alpha must lie in (0, 1]");
        }
        read_opt(m, "backward", "model", cfg.backward);
        read_opt(m, "terms", "model", cfg.terms);
    }
    if (doc.contains("simulate")) cfg.simulate = parse_sim_design(doc["simulate"]);
    return cfg;
}

RunConfig load_config(const fs::path& path) {
    std::ifstream in(path);
    if (!in) throw InputError("cannot open config file '" + path.string() + "'");
    Json doc;
    try {
        doc = Json::parse(in);
    } catch (const nlohmann::json::parse_error& e) {
        throw InputError("config '" + path.string() + "' is not valid JSON: " + e.what());
    }
    return parse_config(doc, path.parent_path());
}

fs::path distance_sidecar(const fs::path& data_path) {
    fs::path p = data_path;
    p.replace_extension();
    return fs::path(p.string() + ".f2dist.csv");
}

IngestConfig default_ingest(const fs::path& data_path) {
    IngestConfig cfg;
    cfg.auto_covariates = true;
    const fs::path sidecar = distance_sidecar(data_path);
    if (fs::exists(sidecar)) cfg.factor2_distances = load_distance_file(sidecar);
    return cfg;
}

LevelDistances load_distance_file(const fs::path& path) {
    std::ifstream in(path);
    if (!in) throw InputError("cannot open distance file '" + path.string() + "'");
    try {
        return read_distance_csv(in);
    } catch (const InputError& e) {
        throw InputError(path.string() + ": " + e.what());
    }
}

Dataset load_dataset(const fs::path& data_path, const IngestConfig& ingest) {
    std::ifstream in(data_path);
    if (!in) throw InputError("cannot open data file '" + data_path.string() + "'");
    try {
        return ingest_long_csv(in, ingest);
    } catch (const InputError& e) {
        throw InputError(data_path.string() + ": " + e.what());
    }
}

CorrSpec parse_factor_arg(const std::string& text) {
    const auto colon = text.find(':');
    const std::string tag = text.substr(0, colon);
    CorrSpec spec{family_from(tag), Eigen::VectorXd()};
    if (colon == std::string::npos) return spec;
    std::vector<double> params;
    std::stringstream ss(text.substr(colon + 1));
    std::string item;
    while (std::getline(ss, item, ',')) {
        try {
            std::size_t used = 0;
            params.push_back(std::stod(item, &used));
            if (used != item.size()) throw std::invalid_argument(item);
        } catch (const std::exception&) {
            throw InputError("bad parameter '" + item + "' in '" + text + "'");
        }
    }
    if (params.size() != param_count(spec.family)) {
        throw InputError("family " + tag + " takes " + std::to_string(param_count(spec.family)) + " parameter(s), got " +
                         std::to_string(params.size()));
    }
    spec.params = Eigen::Map<const Eigen::VectorXd>(params.data(), static_cast<Eigen::Index>(params.size()));
    try {
        spec.check();
    } catch (const DomainError& e) {
        throw InputError("'" + text + "': " + e.what());
    }
    return spec;
}

std::vector<CorrFamily> parse_family_list(const std::string& text) {
    std::vector<CorrFamily> out;
    std::stringstream ss(text);
    std::string item;
    while (std::getline(ss, item, ',')) {
        if (!item.empty()) out.push_back(family_from(item));
    }
    if (out.empty()) throw InputError("empty family list");
    return out;
}

}  // namespace kronfit
