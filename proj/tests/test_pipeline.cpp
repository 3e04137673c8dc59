#include "carleman/pipeline.hpp"

#include "doctest.h"

#include <filesystem>
#include <fstream>
#include <sstream>

using namespace carleman;
namespace fs = std::filesystem;

namespace {

// Small enough to run every stage in a few seconds.
PipelineConfig tiny(const std::string& out) {
    PipelineConfig c = profile_config("desk");
    apply_scenario(c, "static");
    c.output = out;
    c.N = 3;
    c.forward_dx = 0.1;
    c.forward_dt = 0.05;
    c.hx = 0.25;
    c.ht = 2.0;
    c.inversion.max_iters = 15;
    c.probe_pairs = 3;
    c.center_times = {8.0};
    return c;
}

fs::path scratch(const std::string& name) {
    const fs::path p = fs::temp_directory_path() / ("carleman_test_" + name);
    fs::remove_all(p);
    return p;
}

std::string slurp(const fs::path& p) {
    std::ifstream in(p, std::ios::binary);
    std::ostringstream os;
    os << in.rdbuf();
    return os.str();
}

}  // namespace

TEST_CASE("config JSON round trip") {
    for (const char* prof : {"desk", "paper"}) {
        PipelineConfig c = profile_config(prof);
        c.eta = 1107.0 / 1280.0;
        c.A = 4.0 / 3.0;
        const auto j = to_json(c);
        const PipelineConfig back = config_from_json(nlohmann::json::parse(j.dump()));
        CHECK(to_json(back) == j);
        CHECK(back.eta == c.eta);
        CHECK(back.A == c.A);
        CHECK(config_hash(back) == config_hash(c));
    }
}

TEST_CASE("paper profile constants") {
    const auto c = profile_config("paper");
    CHECK(c.R == 0.5);
    CHECK(c.T == 12.0);
    CHECK(c.T_minus == 4.0);
    CHECK(c.T0 == 8.0);
    CHECK(c.sigma == 2.5);
    CHECK(c.h == 0.1);
    CHECK(c.eta == 1107.0 / 1280.0);
    CHECK(c.sources == 100);
    CHECK(c.noise_delta == 0.03);
    CHECK(c.hx == 0.05);
    CHECK(c.ht == 0.1);
    CHECK(validate_config(c).ok());
    CHECK_THROWS(profile_config("laptop"));
}

TEST_CASE("overrides and rejection") {
    nlohmann::json doc = nlohmann::json::object();
    apply_override(doc, "inversion.alpha=0.02");
    apply_override(doc, "target.scenario=cylinder");
    apply_override(doc, "seed=7");
    const auto c = config_from_json(doc);
    CHECK(c.inversion.alpha == 0.02);
    CHECK(c.scenario == "cylinder");
    CHECK(c.seed == 7u);

    CHECK_THROWS_AS(config_from_json(nlohmann::json{{"inversion", {{"alhpa", 0.1}}}}), std::invalid_argument);
    CHECK_THROWS_AS(config_from_json(nlohmann::json{{"basis", {{"N", "five"}}}}), std::invalid_argument);
    CHECK_THROWS(apply_override(doc, "no_equals_sign"));

    PipelineConfig bad = profile_config("desk");
    bad.inversion.alpha = 2.0;
    CHECK(!validate_config(bad).ok());
    bad = profile_config("desk");
    bad.forward_dt = 0.1;
    CHECK(!validate_config(bad).ok());
    bad = profile_config("desk");
    bad.T0 = 7.0;
    CHECK(!validate_config(bad).ok());
}

TEST_CASE("output location does not change the hash") {
    PipelineConfig a = profile_config("desk"), b = a;
    b.output = "elsewhere";
    b.threads = 3;
    CHECK(config_hash(a) == config_hash(b));
    b.seed += 1;
    CHECK(config_hash(a) != config_hash(b));
    CHECK(derived_seed(1, 0) != derived_seed(1, 1));
    CHECK(derived_seed(1, 5) == derived_seed(1, 5));
    CHECK(sha256_hex("abc") == "ba7816bf8f01cfea414140de5dae2223b00361a396177a9cb410ff61f20015ad");
}

TEST_CASE("stage names") {
    for (Stage s : {Stage::simulate, Stage::transform, Stage::invert, Stage::recover, Stage::evaluate, Stage::probe})
        CHECK(parse_stage(to_string(s)) == s);
    CHECK(to_string(Stage::probe) == "probe-convexity");
    CHECK_THROWS(parse_stage("fly"));
}

TEST_CASE("missing upstream artifact names the file") {
    const auto dir = scratch("missing");
    try {
        run_pipeline(tiny(dir.string()), {Stage::invert});
        FAIL("expected a stage error");
    } catch (const StageError& e) {
        CHECK(e.stage == "invert");
        CHECK(std::string(e.what()).find(".cwf") != std::string::npos);
    }
    fs::remove_all(dir);
}

TEST_CASE("tiny run is deterministic and reports") {
    const auto d1 = scratch("run1"), d2 = scratch("run2");
    std::vector<Stage> stages = all_stages();
    stages.push_back(Stage::probe);
    const Manifest m1 = run_pipeline(tiny(d1.string()), stages);
    const Manifest m2 = run_pipeline(tiny(d2.string()), stages);
    REQUIRE(m1.files.size() == m2.files.size());
    int data_files = 0;
    for (std::size_t i = 0; i < m1.files.size(); ++i) {
        CHECK(m1.files[i].path == m2.files[i].path);
        if (!m1.files[i].data) continue;
        ++data_files;
        INFO(m1.files[i].path);
        CHECK(m1.files[i].sha256 == m2.files[i].sha256);
    }
    CHECK(data_files > 5);
    for (const char* f : {"field.cwf", "a_comp.cwf", "metrics.json", "probe.json", "manifest.json", "report.txt"})
        CHECK(fs::exists(d1 / f));

    const std::string report = slurp(d1 / "report.txt");
    CHECK(report.find("contrast: correct 2.00 / computed ") != std::string::npos);
    CHECK(report == emit_report(d1.string()));

    // A downstream stage rerun replaces its own entries and keeps the rest.
    const Manifest m3 = run_pipeline(tiny(d1.string()), {Stage::evaluate});
    CHECK(m3.files.size() == m1.files.size());
    fs::remove_all(d1);
    fs::remove_all(d2);
}
