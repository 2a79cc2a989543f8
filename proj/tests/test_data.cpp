#include "kronfit/data.hpp"
#include "kronfit/errors.hpp"

#include <doctest.h>

#include <sstream>

using namespace kronfit;

namespace {

Dataset ingest(const std::string& csv, IngestConfig cfg = {}) {
    std::istringstream in(csv);
    if (cfg.covariates.empty()) cfg.auto_covariates = true;
    return ingest_long_csv(in, cfg);
}

std::string error_of(const std::string& csv, IngestConfig cfg = {}) {
    try {
        (void)ingest(csv, cfg);
    } catch (const InputError& e) {
        return e.what();
    }
    return "";
}

const char* kSmall =
    "subject,f1,f2_id,y,x\n"
    "a,0,1,1.0,0.5\n"
    "a,0,2,2.0,0.5\n"
    "a,1,1,3.0,0.5\n"
    "a,1,2,4.0,0.5\n"
    "b,0,1,5.0,1.5\n"
    "b,0,3,6.0,1.5\n"
    "b,2,1,7.0,1.5\n"
    "b,2,3,8.0,1.5\n";

}  // namespace

TEST_CASE("blocks are factor-1-major with pooled distance constants") {
    const Dataset ds = ingest(kSmall);
    REQUIRE(ds.num_subjects() == 2);
    CHECK(ds.n() == 8);
    CHECK(ds.q() == 2);
    CHECK(ds.covariate_names[0] == kInterceptName);
    CHECK(ds.covariate_names[1] == "x");
    const auto& a = ds.subjects[0];
    CHECK(a.y[0] == 1.0);
    CHECK(a.y[1] == 2.0);
    CHECK(a.y[2] == 3.0);
    CHECK(a.X(0, 1) == 0.5);
    const auto& b = ds.subjects[1];
    CHECK(b.dist1(0, 1) == 2.0);
    CHECK(b.dist2(0, 1) == 2.0);
    CHECK(ds.constants1.d_min == 1.0);
    CHECK(ds.constants1.d_max == 2.0);
    CHECK(ds.constants2.d_min == 1.0);
    CHECK(ds.constants2.d_max == 2.0);
}

TEST_CASE("row order within a subject does not matter") {
    const Dataset ds = ingest(
        "subject,f1,f2_id,y\n"
        "a,1,1,3\n"
        "a,1,2,4\n"
        "a,0,2,2\n"
        "a,0,1,1\n");
    CHECK(ds.subjects[0].y == Eigen::Vector4d(1, 2, 3, 4));
}

TEST_CASE("inconsistently spaced subject is rejected naming the gap") {
    const std::string msg = error_of(
        "subject,f1,f2_id,y\n"
        "a,0,1,1\n"
        "a,0,2,2\n"
        "a,1,1,3\n");
    CHECK(msg.find("'a'") != std::string::npos);
    CHECK(msg.find("lacks factor-2 level(s) '2'") != std::string::npos);
}

TEST_CASE("duplicate cells and malformed rows carry line numbers") {
    CHECK(error_of("subject,f1,f2_id,y\na,0,1,1\na,0,1,2\n").find("line 3") != std::string::npos);
    CHECK(error_of("subject,f1,f2_id,y\na,0,1,1\na,x,1,2\n").find("line 3") != std::string::npos);
    CHECK(error_of("subject,f1,f2_id,y\na,0,1\n").find("line 2") != std::string::npos);
    CHECK(error_of("subject,f1,y\na,0,1\n").find("factor-2") != std::string::npos);
}

TEST_CASE("categorical covariates use reference coding") {
    IngestConfig cfg;
    cfg.covariates = {"race"};
    cfg.categorical = {"race"};
    const std::string csv =
        "subject,f1,f2_id,y,race\n"
        "a,0,1,1,w\n"
        "b,0,1,2,b\n"
        "c,0,1,3,o\n";
    const Dataset ds = ingest(csv, cfg);
    REQUIRE(ds.q() == 3);
    CHECK(ds.covariate_names[1] == "race[o]");
    CHECK(ds.covariate_names[2] == "race[w]");
    REQUIRE(ds.terms.size() == 2);
    CHECK(ds.terms[1].columns.size() == 2);
    cfg.reference_levels["race"] = "w";
    const Dataset ds2 = ingest(csv, cfg);
    CHECK(ds2.covariate_names[1] == "race[b]");
}

TEST_CASE("distance file and coordinates") {
    std::istringstream dist("level,n,s\nn,0,3\ns,3,0\n");
    IngestConfig cfg;
    cfg.factor2_distances = read_distance_csv(dist);
    const Dataset ds = ingest("subject,f1,f2_id,y\na,0,n,1\na,0,s,2\na,1,n,1\na,1,s,2\n", cfg);
    CHECK(ds.subjects[0].dist2(0, 1) == 3.0);

    IngestConfig coords;
    coords.factor2_col = "";
    coords.factor2_coord_cols = {"px", "py"};
    const Dataset ds2 = ingest("subject,f1,px,py,y\na,0,0,0,1\na,0,3,4,2\n", coords);
    CHECK(ds2.subjects[0].dist2(0, 1) == 5.0);

    CHECK(error_of("subject,f1,f2_id,y\na,0,north,1\na,0,south,2\n").find("not numeric") != std::string::npos);
}

TEST_CASE("csv quoting, CRLF, and BOM") {
    const Dataset ds = ingest("\xEF\xBB\xBFsubject,f1,f2_id,y\r\n\"a,1\",0,1,1\r\n\"a,1\",0,2,2\r\n");
    CHECK(ds.subjects[0].subject_id == "a,1");
    CHECK(ds.n() == 2);
}

TEST_CASE("validate reports rank deficiency and single levels") {
    const Dataset ds = ingest(
        "subject,f1,f2_id,y,x,z\n"
        "a,0,1,1,1,2\n"
        "b,0,1,2,2,4\n"
        "c,0,1,4,3,6\n");
    const auto diags = validate(ds);
    bool rank = false, single = false;
    for (const auto& d : diags) {
        if (d.code == "rank_deficient") {
            rank = true;
            CHECK(d.severity == Severity::Warning);
            CHECK(d.message.find("x") != std::string::npos);
        }
        if (d.code == "single_factor1_level") single = true;
    }
    CHECK(rank);
    CHECK(single);
    CHECK(warning_count(diags) >= 1);
}

TEST_CASE("LEAR requires distinct distance constants") {
    CHECK_THROWS_AS(require_constants_for(CorrFamily::Lear, DistanceConstants{1.0, 1.0}, "factor 1"), InputError);
    CHECK_NOTHROW(require_constants_for(CorrFamily::Ar1, DistanceConstants{1.0, 1.0}, "factor 1"));
}

TEST_CASE("canonical csv round-trips") {
    const Dataset ds = ingest(kSmall);
    std::ostringstream out;
    write_canonical_csv(out, ds);
    const Dataset back = ingest(out.str());
    REQUIRE(back.num_subjects() == ds.num_subjects());
    for (std::size_t i = 0; i < ds.num_subjects(); ++i) {
        CHECK(back.subjects[i].y == ds.subjects[i].y);
        CHECK(back.subjects[i].X == ds.subjects[i].X);
        CHECK(back.subjects[i].dist2 == ds.subjects[i].dist2);
    }
    CHECK(format_double(0.1) == "0.1");
    CHECK(std::stod(format_double(1.0 / 3.0)) == 1.0 / 3.0);
}

TEST_CASE("select_columns remaps terms") {
    const Dataset ds = ingest(kSmall);
    const Dataset only = select_columns(ds, {0});
    CHECK(only.q() == 1);
    CHECK(only.terms.size() == 1);
    CHECK(only.subjects[0].X.cols() == 1);
}
