#include "kronfit/data.hpp"

#include "kronfit/errors.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <istream>
#include <limits>
#include <numeric>
#include <ostream>
#include <set>
#include <sstream>
#include <unordered_map>

namespace kronfit {

namespace {

std::string trim(std::string_view s) {
    std::size_t b = 0;
    std::size_t e = s.size();
    while (b < e && (s[b] == ' ' || s[b] == '\t')) ++b;
    while (e > b && (s[e - 1] == ' ' || s[e - 1] == '\t')) --e;
    return std::string(s.substr(b, e - b));
}

std::optional<double> parse_number(std::string_view text) {
    const std::string s = trim(text);
    if (s.empty()) return std::nullopt;
    double v = 0.0;
    const char* first = s.data();
    const char* last = s.data() + s.size();
    if (*first == '+') ++first;
    auto [ptr, ec] = std::from_chars(first, last, v);
    if (ec != std::errc() || ptr != last || !std::isfinite(v)) return std::nullopt;
    return v;
}

std::string line_prefix(std::size_t line) {
    return "line " + std::to_string(line) + ": ";
}

// Splits one logical CSV record starting at the current stream position.
// Quoted fields may contain commas, doubled quotes and newlines.
bool next_record(std::istream& in, std::vector<std::string>& fields, std::size_t& line) {
    fields.clear();
    std::string field;
    bool in_quotes = false;
    bool any = false;
    bool field_quoted = false;
    char ch = 0;
    while (in.get(ch)) {
        any = true;
        if (in_quotes) {
            if (ch == '"') {
                if (in.peek() == '"') {
                    in.get(ch);
                    field.push_back('"');
                } else {
                    in_quotes = false;
                }
            } else {
                if (ch == '\n') ++line;
                field.push_back(ch);
            }
            continue;
        }
        if (ch == '"' && trim(field).empty()) {
            in_quotes = true;
            field_quoted = true;
            field.clear();
        } else if (ch == ',') {
            fields.push_back(field_quoted ? field : trim(field));
            field.clear();
            field_quoted = false;
        } else if (ch == '\r') {
            // tolerate CRLF
        } else if (ch == '\n') {
            ++line;
            fields.push_back(field_quoted ? field : trim(field));
            return true;
        } else {
            field.push_back(ch);
        }
    }
    if (in_quotes) {
        throw InputError(line_prefix(line) + "unterminated quoted field");
    }
    if (!any) return false;
    fields.push_back(field_quoted ? field : trim(field));
    ++line;
    return true;
}

bool blank(const std::vector<std::string>& fields) {
    return std::all_of(fields.begin(), fields.end(), [](const std::string& f) { return f.empty(); });
}

struct RawRow {
    std::string subject;
    double f1 = 0.0;
    std::size_t f2 = 0;  // index into global level order
    double y = 0.0;
    std::vector<std::string> covariates;
    std::size_t line = 0;
};

std::string coordinate_id(const std::vector<double>& coords) {
    std::string id;
    for (std::size_t i = 0; i < coords.size(); ++i) {
        if (i) id += ';';
        id += format_double(coords[i]);
    }
    return id;
}

}  // namespace

std::size_t Dataset::n() const noexcept {
    std::size_t total = 0;
    for (const auto& s : subjects) total += static_cast<std::size_t>(s.y.size());
    return total;
}

std::optional<std::size_t> CsvTable::column(const std::string& name) const {
    for (std::size_t i = 0; i < header.size(); ++i) {
        if (header[i] == name) return i;
    }
    return std::nullopt;
}

std::string format_double(double v) {
    char buf[64];
    auto [ptr, ec] = std::to_chars(buf, buf + sizeof(buf), v);
    if (ec != std::errc()) return "nan";
    return std::string(buf, ptr);
}

CsvTable read_csv(std::istream& in) {
    CsvTable table;
    std::size_t line = 0;
    std::vector<std::string> fields;
    std::size_t start = 1;
    while (true) {
        start = line + 1;
        if (!next_record(in, fields, line)) {
            throw InputError("empty CSV: no header row");
        }
        if (!blank(fields)) break;
    }
    if (!fields.empty() && fields[0].size() >= 3 && fields[0].compare(0, 3, "\xEF\xBB\xBF") == 0) {
        fields[0] = fields[0].substr(3);
    }
    table.header = fields;
    std::set<std::string> seen;
    for (const auto& h : table.header) {
        if (h.empty()) throw InputError(line_prefix(start) + "empty column name in header");
        if (!seen.insert(h).second) throw InputError(line_prefix(start) + "duplicate column '" + h + "'");
    }
    while (true) {
        start = line + 1;
        if (!next_record(in, fields, line)) break;
        if (blank(fields)) continue;
        if (fields.size() != table.header.size()) {
            std::ostringstream os;
            os << line_prefix(start) << "expected " << table.header.size() << " fields, found " << fields.size();
            throw InputError(os.str());
        }
        table.rows.push_back(fields);
        table.lines.push_back(start);
    }
    return table;
}

LevelDistances read_distance_csv(std::istream& in) {
    const CsvTable table = read_csv(in);
    LevelDistances out;
    out.ids.assign(table.header.begin() + 1, table.header.end());
    const auto k = static_cast<Eigen::Index>(out.ids.size());
    if (static_cast<Eigen::Index>(table.rows.size()) != k) {
        throw InputError("distance file: expected " + std::to_string(k) + " rows, found " +
                         std::to_string(table.rows.size()));
    }
    out.distances.resize(k, k);
    for (Eigen::Index i = 0; i < k; ++i) {
        const auto& row = table.rows[static_cast<std::size_t>(i)];
        if (row[0] != out.ids[static_cast<std::size_t>(i)]) {
            throw InputError(line_prefix(table.lines[static_cast<std::size_t>(i)]) + "row label '" + row[0] +
                             "' does not match header level '" + out.ids[static_cast<std::size_t>(i)] + "'");
        }
        for (Eigen::Index j = 0; j < k; ++j) {
            auto v = parse_number(row[static_cast<std::size_t>(j + 1)]);
            if (!v || *v < 0.0) {
                throw InputError(line_prefix(table.lines[static_cast<std::size_t>(i)]) +
                                 "distance entries must be nonnegative numbers");
            }
            out.distances(i, j) = *v;
        }
    }
    for (Eigen::Index i = 0; i < k; ++i) {
        if (out.distances(i, i) != 0.0) throw InputError("distance file: diagonal must be zero");
        for (Eigen::Index j = 0; j < i; ++j) {
            if (std::abs(out.distances(i, j) - out.distances(j, i)) > 1e-12 * std::max(1.0, out.distances(i, j))) {
                throw InputError("distance file: matrix is not symmetric at (" + out.ids[static_cast<std::size_t>(i)] +
                                 ", " + out.ids[static_cast<std::size_t>(j)] + ")");
            }
        }
    }
    return out;
}

void write_distance_csv(std::ostream& out, const LevelDistances& d) {
    out << "level";
    for (const auto& id : d.ids) out << ',' << id;
    out << '\n';
    for (Eigen::Index i = 0; i < d.distances.rows(); ++i) {
        out << d.ids[static_cast<std::size_t>(i)];
        for (Eigen::Index j = 0; j < d.distances.cols(); ++j) out << ',' << format_double(d.distances(i, j));
        out << '\n';
    }
}

Dataset ingest_long_csv(std::istream& in, const IngestConfig& config) {
    const CsvTable table = read_csv(in);
    auto require = [&](const std::string& name, const char* role) {
        auto idx = table.column(name);
        if (!idx) throw InputError(std::string("missing ") + role + " column '" + name + "'");
        return *idx;
    };
    const std::size_t subject_col = require(config.subject_col, "subject");
    const std::size_t f1_col = require(config.factor1_col, "factor-1");
    const std::size_t y_col = require(config.response_col, "response");
    std::optional<std::size_t> f2_col;
    if (!config.factor2_col.empty()) f2_col = require(config.factor2_col, "factor-2");
    std::vector<std::size_t> coord_cols;
    for (const auto& c : config.factor2_coord_cols) coord_cols.push_back(require(c, "factor-2 coordinate"));

    std::vector<std::string> covariates = config.covariates;
    if (covariates.empty() && config.auto_covariates) {
        std::set<std::size_t> claimed{subject_col, f1_col, y_col};
        if (f2_col) claimed.insert(*f2_col);
        claimed.insert(coord_cols.begin(), coord_cols.end());
        for (std::size_t i = 0; i < table.header.size(); ++i) {
            if (!claimed.count(i)) covariates.push_back(table.header[i]);
        }
    }
    std::vector<std::size_t> cov_cols;
    for (const auto& c : covariates) cov_cols.push_back(require(c, "covariate"));
    std::set<std::string> categorical(config.categorical.begin(), config.categorical.end());
    for (const auto& c : categorical) {
        if (std::find(covariates.begin(), covariates.end(), c) == covariates.end()) {
            throw InputError("categorical column '" + c + "' is not among the covariates");
        }
    }

    // Global factor-2 level order.
    std::vector<std::string> levels;
    std::unordered_map<std::string, std::size_t> level_index;
    std::vector<std::vector<double>> level_coords;
    const bool from_file = config.factor2_distances.has_value();
    if (from_file) {
        levels = config.factor2_distances->ids;
        for (std::size_t i = 0; i < levels.size(); ++i) {
            if (!level_index.emplace(levels[i], i).second) {
                throw InputError("distance file: duplicate level '" + levels[i] + "'");
            }
        }
    }

    std::vector<RawRow> rows;
    rows.reserve(table.rows.size());
    for (std::size_t r = 0; r < table.rows.size(); ++r) {
        const auto& fields = table.rows[r];
        const std::size_t line = table.lines[r];
        RawRow row;
        row.line = line;
        row.subject = fields[subject_col];
        if (row.subject.empty()) throw InputError(line_prefix(line) + "empty subject id");
        auto f1 = parse_number(fields[f1_col]);
        if (!f1) throw InputError(line_prefix(line) + "non-numeric factor-1 coordinate '" + fields[f1_col] + "'");
        row.f1 = *f1;
        auto y = parse_number(fields[y_col]);
        if (!y) throw InputError(line_prefix(line) + "non-numeric response '" + fields[y_col] + "'");
        row.y = *y;

        std::vector<double> coords;
        for (std::size_t c : coord_cols) {
            auto v = parse_number(fields[c]);
            if (!v) throw InputError(line_prefix(line) + "non-numeric factor-2 coordinate '" + fields[c] + "'");
            coords.push_back(*v);
        }
        std::string id;
        if (f2_col) {
            id = fields[*f2_col];
            if (id.empty()) throw InputError(line_prefix(line) + "empty factor-2 level id");
        } else if (!coords.empty()) {
            id = coordinate_id(coords);
        } else {
            id = "1";
        }
        auto it = level_index.find(id);
        if (it == level_index.end()) {
            if (from_file) throw InputError(line_prefix(line) + "factor-2 level '" + id + "' not in distance file");
            it = level_index.emplace(id, levels.size()).first;
            levels.push_back(id);
            level_coords.push_back(coords);
        } else if (!from_file && !coords.empty() && level_coords[it->second] != coords) {
            throw InputError(line_prefix(line) + "factor-2 level '" + id + "' has inconsistent coordinates");
        }
        row.f2 = it->second;
        for (std::size_t c : cov_cols) row.covariates.push_back(fields[c]);
        rows.push_back(std::move(row));
    }
    if (rows.empty()) throw InputError("CSV has a header but no data rows");

    // Global factor-2 distances.
    const auto nlev = static_cast<Eigen::Index>(levels.size());
    Eigen::MatrixXd level_dist = Eigen::MatrixXd::Zero(nlev, nlev);
    if (from_file) {
        level_dist = config.factor2_distances->distances;
    } else if (!coord_cols.empty()) {
        for (Eigen::Index i = 0; i < nlev; ++i) {
            for (Eigen::Index j = 0; j < i; ++j) {
                double ss = 0.0;
                for (std::size_t c = 0; c < coord_cols.size(); ++c) {
                    const double diff = level_coords[static_cast<std::size_t>(i)][c] - level_coords[static_cast<std::size_t>(j)][c];
                    ss += diff * diff;
                }
                level_dist(i, j) = level_dist(j, i) = std::sqrt(ss);
            }
        }
    } else if (f2_col) {
        // Numeric level ids double as scalar coordinates.
        std::vector<double> pos(levels.size());
        for (std::size_t i = 0; i < levels.size(); ++i) {
            auto v = parse_number(levels[i]);
            if (!v) {
                throw InputError("factor-2 level '" + levels[i] +
                                 "' is not numeric; supply coordinates or a factor-2 distance file");
            }
            pos[i] = *v;
        }
        for (Eigen::Index i = 0; i < nlev; ++i) {
            for (Eigen::Index j = 0; j < nlev; ++j) {
                level_dist(i, j) = std::abs(pos[static_cast<std::size_t>(i)] - pos[static_cast<std::size_t>(j)]);
            }
        }
    }

    // Design columns.
    std::vector<std::string> names{kInterceptName};
    std::vector<Term> terms{Term{kInterceptName, {0}}};
    struct ColumnPlan {
        bool categorical = false;
        std::vector<std::string> levels;  // non-reference levels
    };
    std::vector<ColumnPlan> plans(covariates.size());
    for (std::size_t c = 0; c < covariates.size(); ++c) {
        Term term{covariates[c], {}};
        if (categorical.count(covariates[c])) {
            std::set<std::string> lv;
            for (const auto& row : rows) lv.insert(row.covariates[c]);
            std::string ref = *lv.begin();
            if (auto it = config.reference_levels.find(covariates[c]); it != config.reference_levels.end()) {
                if (!lv.count(it->second)) {
                    throw InputError("reference level '" + it->second + "' not observed in column '" + covariates[c] + "'");
                }
                ref = it->second;
            }
            plans[c].categorical = true;
            for (const auto& l : lv) {
                if (l == ref) continue;
                plans[c].levels.push_back(l);
                term.columns.push_back(static_cast<Eigen::Index>(names.size()));
                names.push_back(covariates[c] + "[" + l + "]");
            }
        } else {
            term.columns.push_back(static_cast<Eigen::Index>(names.size()));
            names.push_back(covariates[c]);
        }
        if (!term.columns.empty()) terms.push_back(std::move(term));
    }
    const auto q = static_cast<Eigen::Index>(names.size());

    auto design_row = [&](const RawRow& row) {
        Eigen::RowVectorXd x(q);
        x[0] = 1.0;
        Eigen::Index col = 1;
        for (std::size_t c = 0; c < covariates.size(); ++c) {
            if (plans[c].categorical) {
                for (const auto& l : plans[c].levels) x[col++] = row.covariates[c] == l ? 1.0 : 0.0;
            } else {
                auto v = parse_number(row.covariates[c]);
                if (!v) {
                    throw InputError(line_prefix(row.line) + "non-numeric value '" + row.covariates[c] +
                                     "' in covariate '" + covariates[c] + "' (declare it categorical?)");
                }
                x[col++] = *v;
            }
        }
        return x;
    };

    // Group by subject in order of first appearance.
    std::vector<std::string> order;
    std::unordered_map<std::string, std::vector<std::size_t>> groups;
    for (std::size_t r = 0; r < rows.size(); ++r) {
        auto [it, inserted] = groups.try_emplace(rows[r].subject);
        if (inserted) order.push_back(rows[r].subject);
        it->second.push_back(r);
    }

    std::vector<SubjectBlock> blocks;
    blocks.reserve(order.size());
    for (const auto& sid : order) {
        const auto& idx = groups[sid];
        std::set<double> f1_set;
        std::set<std::size_t> f2_set;
        std::map<std::pair<double, std::size_t>, std::size_t> cell;
        for (std::size_t r : idx) {
            const auto key = std::make_pair(rows[r].f1, rows[r].f2);
            if (auto [it, ok] = cell.emplace(key, r); !ok) {
                throw InputError(line_prefix(rows[r].line) + "duplicate measurement for subject '" + sid +
                                 "' at factor-1 " + format_double(rows[r].f1) + ", factor-2 level '" +
                                 levels[rows[r].f2] + "' (first seen on line " +
                                 std::to_string(rows[it->second].line) + ")");
            }
            f1_set.insert(rows[r].f1);
            f2_set.insert(rows[r].f2);
        }
        if (cell.size() != f1_set.size() * f2_set.size()) {
            std::ostringstream os;
            os << "subject '" << sid << "' violates the consistently-spaced layout:";
            for (double f1 : f1_set) {
                std::vector<std::string> missing;
                for (std::size_t f2 : f2_set) {
                    if (!cell.count({f1, f2})) missing.push_back(levels[f2]);
                }
                if (!missing.empty()) {
                    os << " factor-1 " << format_double(f1) << " lacks factor-2 level(s)";
                    for (const auto& m : missing) os << " '" << m << "'";
                    os << ';';
                }
            }
            throw InputError(os.str());
        }
        SubjectBlock b;
        b.subject_id = sid;
        b.f1.assign(f1_set.begin(), f1_set.end());
        const auto t = static_cast<Eigen::Index>(f1_set.size());
        const auto s = static_cast<Eigen::Index>(f2_set.size());
        std::vector<std::size_t> f2_order(f2_set.begin(), f2_set.end());
        for (std::size_t f2 : f2_order) b.f2_ids.push_back(levels[f2]);
        b.y.resize(t * s);
        b.X.resize(t * s, q);
        for (Eigen::Index j = 0; j < t; ++j) {
            for (Eigen::Index l = 0; l < s; ++l) {
                const std::size_t r = cell.at({b.f1[static_cast<std::size_t>(j)], f2_order[static_cast<std::size_t>(l)]});
                b.y[j * s + l] = rows[r].y;
                b.X.row(j * s + l) = design_row(rows[r]);
            }
        }
        b.dist1.resize(t, t);
        for (Eigen::Index j = 0; j < t; ++j) {
            for (Eigen::Index k = 0; k < t; ++k) b.dist1(j, k) = std::abs(b.f1[static_cast<std::size_t>(j)] - b.f1[static_cast<std::size_t>(k)]);
        }
        b.dist2.resize(s, s);
        for (Eigen::Index l = 0; l < s; ++l) {
            for (Eigen::Index m = 0; m < s; ++m) {
                b.dist2(l, m) = level_dist(static_cast<Eigen::Index>(f2_order[static_cast<std::size_t>(l)]),
                                           static_cast<Eigen::Index>(f2_order[static_cast<std::size_t>(m)]));
            }
        }
        blocks.push_back(std::move(b));
    }
    return make_dataset(std::move(blocks), std::move(names), std::move(terms), std::move(levels), std::move(level_dist));
}

std::pair<DistanceConstants, DistanceConstants> compute_distance_constants(const std::vector<SubjectBlock>& subjects) {
    auto pooled = [&](auto pick) {
        double lo = std::numeric_limits<double>::infinity();
        double hi = -std::numeric_limits<double>::infinity();
        for (const auto& b : subjects) {
            const Eigen::MatrixXd& d = pick(b);
            for (Eigen::Index k = 0; k < d.cols(); ++k) {
                for (Eigen::Index j = k + 1; j < d.rows(); ++j) {
                    lo = std::min(lo, d(j, k));
                    hi = std::max(hi, d(j, k));
                }
            }
        }
        if (!std::isfinite(lo)) return DistanceConstants{0.0, 1.0};
        return DistanceConstants{lo, hi};
    };
    return {pooled([](const SubjectBlock& b) -> const Eigen::MatrixXd& { return b.dist1; }),
            pooled([](const SubjectBlock& b) -> const Eigen::MatrixXd& { return b.dist2; })};
}

void require_constants_for(CorrFamily family, const DistanceConstants& constants, std::string_view factor) {
    if (family == CorrFamily::Lear && !(constants.d_max > constants.d_min)) {
        throw InputError(std::string(factor) + ": LEAR needs d_min < d_max, but every off-diagonal distance equals " +
                         format_double(constants.d_min));
    }
}

Dataset make_dataset(std::vector<SubjectBlock> subjects, std::vector<std::string> covariate_names,
                     std::vector<Term> terms, std::vector<std::string> f2_levels, Eigen::MatrixXd f2_distance) {
    if (subjects.empty()) throw InputError("dataset has no subjects");
    const auto q = static_cast<Eigen::Index>(covariate_names.size());
    for (const auto& b : subjects) {
        const Eigen::Index t = b.dist1.rows();
        const Eigen::Index s = b.dist2.rows();
        auto fail = [&](const std::string& what) { throw InputError("subject '" + b.subject_id + "': " + what); };
        if (t < 1 || s < 1) fail("needs at least one level of each factor");
        if (b.dist1.cols() != t || b.dist2.cols() != s) fail("distance matrices must be square");
        if (b.y.size() != t * s) fail("response length differs from t*s");
        if (b.X.rows() != t * s || b.X.cols() != q) fail("design matrix has the wrong shape");
        if (static_cast<Eigen::Index>(b.f1.size()) != t || static_cast<Eigen::Index>(b.f2_ids.size()) != s) {
            fail("level labels do not match the distance matrices");
        }
        for (const Eigen::MatrixXd* d : {&b.dist1, &b.dist2}) {
            if ((d->diagonal().array() != 0.0).any()) fail("distance matrix diagonal must be zero");
            if ((d->array() < 0.0).any()) fail("distances must be nonnegative");
            if (!d->isApprox(d->transpose(), 1e-12) && d->norm() > 0.0) fail("distance matrix must be symmetric");
        }
        if (!b.y.allFinite() || !b.X.allFinite()) fail("non-finite response or covariate");
    }
    Dataset ds;
    auto [c1, c2] = compute_distance_constants(subjects);
    ds.subjects = std::move(subjects);
    ds.covariate_names = std::move(covariate_names);
    ds.terms = std::move(terms);
    ds.f2_levels = std::move(f2_levels);
    ds.f2_distance = std::move(f2_distance);
    ds.constants1 = c1;
    ds.constants2 = c2;
    return ds;
}

Dataset select_columns(const Dataset& ds, const std::vector<Eigen::Index>& columns) {
    Dataset out = ds;
    std::vector<Eigen::Index> remap(ds.q(), -1);
    out.covariate_names.clear();
    for (std::size_t i = 0; i < columns.size(); ++i) {
        const Eigen::Index c = columns[i];
        if (c < 0 || static_cast<std::size_t>(c) >= ds.q()) throw InputError("column index out of range");
        remap[static_cast<std::size_t>(c)] = static_cast<Eigen::Index>(i);
        out.covariate_names.push_back(ds.covariate_names[static_cast<std::size_t>(c)]);
    }
    Eigen::VectorXi idx(static_cast<Eigen::Index>(columns.size()));
    for (std::size_t i = 0; i < columns.size(); ++i) idx[static_cast<Eigen::Index>(i)] = static_cast<int>(columns[i]);
    for (auto& b : out.subjects) {
        Eigen::MatrixXd x(b.X.rows(), idx.size());
        for (Eigen::Index i = 0; i < idx.size(); ++i) x.col(i) = b.X.col(idx[i]);
        b.X = std::move(x);
    }
    out.terms.clear();
    for (const auto& term : ds.terms) {
        Term t{term.name, {}};
        for (Eigen::Index c : term.columns) {
            if (remap[static_cast<std::size_t>(c)] >= 0) t.columns.push_back(remap[static_cast<std::size_t>(c)]);
        }
        if (!t.columns.empty()) out.terms.push_back(std::move(t));
    }
    return out;
}

Eigen::MatrixXd stacked_design(const Dataset& ds) {
    Eigen::MatrixXd x(static_cast<Eigen::Index>(ds.n()), static_cast<Eigen::Index>(ds.q()));
    Eigen::Index row = 0;
    for (const auto& b : ds.subjects) {
        x.middleRows(row, b.X.rows()) = b.X;
        row += b.X.rows();
    }
    return x;
}

Eigen::VectorXd stacked_response(const Dataset& ds) {
    Eigen::VectorXd y(static_cast<Eigen::Index>(ds.n()));
    Eigen::Index row = 0;
    for (const auto& b : ds.subjects) {
        y.segment(row, b.y.size()) = b.y;
        row += b.y.size();
    }
    return y;
}

std::vector<Diagnostic> validate(const Dataset& ds) {
    std::vector<Diagnostic> out;
    Eigen::Index tmin = std::numeric_limits<Eigen::Index>::max(), tmax = 0;
    Eigen::Index smin = tmin, smax = 0;
    std::size_t single_t = 0;
    std::size_t single_s = 0;
    bool dup1 = false;
    bool dup2 = false;
    for (const auto& b : ds.subjects) {
        tmin = std::min(tmin, b.t());
        tmax = std::max(tmax, b.t());
        smin = std::min(smin, b.s());
        smax = std::max(smax, b.s());
        single_t += b.t() == 1;
        single_s += b.s() == 1;
        auto has_zero_offdiag = [](const Eigen::MatrixXd& d) {
            for (Eigen::Index k = 0; k < d.cols(); ++k) {
                for (Eigen::Index j = k + 1; j < d.rows(); ++j) {
                    if (d(j, k) == 0.0) return true;
                }
            }
            return false;
        };
        dup1 = dup1 || has_zero_offdiag(b.dist1);
        dup2 = dup2 || has_zero_offdiag(b.dist2);
    }
    {
        std::ostringstream os;
        os << ds.num_subjects() << " subjects, n = " << ds.n() << " observations, q = " << ds.q()
           << " design columns; t in [" << tmin << ", " << tmax << "], s in [" << smin << ", " << smax << "]";
        out.push_back({Severity::Info, "dimensions", os.str()});
    }
    {
        std::ostringstream os;
        os << "factor 1 distances in [" << format_double(ds.constants1.d_min) << ", " << format_double(ds.constants1.d_max)
           << "], factor 2 distances in [" << format_double(ds.constants2.d_min) << ", "
           << format_double(ds.constants2.d_max) << "]";
        out.push_back({Severity::Info, "distance_constants", os.str()});
    }
    if (single_t > 0) {
        out.push_back({Severity::Info, "single_factor1_level",
                       std::to_string(single_t) + " subject(s) have one factor-1 level (1x1 factor-1 matrix)"});
    }
    if (single_s > 0) {
        out.push_back({Severity::Info, "single_factor2_level",
                       std::to_string(single_s) + " subject(s) have one factor-2 level (1x1 factor-2 matrix)"});
    }
    if (dup1) {
        out.push_back({Severity::Warning, "duplicate_positions",
                       "factor 1 has distinct measurements at distance 0; correlation matrices may be near-singular"});
    }
    if (dup2) {
        out.push_back({Severity::Warning, "duplicate_positions",
                       "factor 2 has distinct measurements at distance 0; correlation matrices may be near-singular"});
    }

    // Rank check on the stacked design with unit-norm columns.
    Eigen::MatrixXd x = stacked_design(ds);
    std::vector<std::string> zero_cols;
    for (Eigen::Index c = 0; c < x.cols(); ++c) {
        const double nrm = x.col(c).norm();
        if (nrm == 0.0) {
            zero_cols.push_back(ds.covariate_names[static_cast<std::size_t>(c)]);
        } else {
            x.col(c) /= nrm;
        }
    }
    if (static_cast<std::size_t>(x.rows()) < ds.q()) {
        out.push_back({Severity::Warning, "rank_deficient",
                       "fewer observations (" + std::to_string(x.rows()) + ") than design columns"});
    } else if (x.cols() > 0) {
        Eigen::JacobiSVD<Eigen::MatrixXd> svd(x, Eigen::ComputeFullV);
        const auto& sv = svd.singularValues();
        const double tol = 1e-10 * std::max(1.0, sv[0]);
        std::set<std::string> involved(zero_cols.begin(), zero_cols.end());
        Eigen::Index rank = 0;
        for (Eigen::Index i = 0; i < sv.size(); ++i) {
            if (sv[i] > tol) {
                ++rank;
                continue;
            }
            const Eigen::VectorXd v = svd.matrixV().col(i);
            for (Eigen::Index c = 0; c < v.size(); ++c) {
                if (std::abs(v[c]) > 1e-6) involved.insert(ds.covariate_names[static_cast<std::size_t>(c)]);
            }
        }
        if (rank < x.cols()) {
            std::ostringstream os;
            os << "stacked design has rank " << rank << " < q = " << x.cols() << "; linearly dependent columns:";
            for (const auto& name : involved) os << " '" << name << "'";
            out.push_back({Severity::Warning, "rank_deficient", os.str()});
        }
    }
    return out;
}

std::size_t warning_count(const std::vector<Diagnostic>& diagnostics) {
    return static_cast<std::size_t>(std::count_if(diagnostics.begin(), diagnostics.end(),
                                                  [](const Diagnostic& d) { return d.severity == Severity::Warning; }));
}

void write_canonical_csv(std::ostream& out, const Dataset& ds) {
    out << "subject,f1,f2_id,y";
    for (std::size_t c = 1; c < ds.q(); ++c) out << ',' << ds.covariate_names[c];
    out << '\n';
    for (const auto& b : ds.subjects) {
        const Eigen::Index s = b.s();
        for (Eigen::Index j = 0; j < b.t(); ++j) {
            for (Eigen::Index l = 0; l < s; ++l) {
                const Eigen::Index row = j * s + l;
                out << b.subject_id << ',' << format_double(b.f1[static_cast<std::size_t>(j)]) << ','
                    << b.f2_ids[static_cast<std::size_t>(l)] << ',' << format_double(b.y[row]);
                for (Eigen::Index c = 1; c < b.X.cols(); ++c) out << ',' << format_double(b.X(row, c));
                out << '\n';
            }
        }
    }
}

}  // namespace kronfit
