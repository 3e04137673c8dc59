#pragma once

#include "carleman/forward.hpp"
#include "carleman/geometry.hpp"
#include "carleman/inversion.hpp"
#include "carleman/recovery.hpp"

#include "json.hpp"

#include <cstdint>
#include <string>
#include <vector>

namespace carleman {

struct PipelineConfig {
    std::string profile = "desk";
    std::uint64_t seed = 20240611;
    int threads = 0;
    std::string output = "out";

    double R = 0.5;
    double T_minus = 4.0;
    double T = 12.0;
    double T0 = 8.0;
    double A = 4.0 / 3.0;
    int sources = 16;

    double sigma = 2.5;
    double h = 0.1;
    double eta = 1107.0 / 1280.0;
    double lambda = 3.0;

    std::string scenario = "ball";
    double a0 = 2.0;
    double background = 1.0;
    double radius = 0.1;
    double height = 0.2;

    double forward_dx = 1.0 / 40.0;
    double forward_dt = 1.0 / 160.0;
    int padding = 8;
    int sponge_cells = 12;
    std::string trace_interp = "tricubic";

    double noise_delta = 0.0;
    int N = 5;

    double hx = 0.1;
    double ht = 0.2;
    InversionConfig inversion;
    std::string reference = "background";  // or "none"

    int probe_pairs = 100;
    double probe_amplitude = 0.05;
    double probe_contrast_lambda = 0.0;

    double center_threshold = 0.5;
    std::vector<double> center_times{5, 6, 7, 8, 9, 10, 11};
};

PipelineConfig profile_config(const std::string& profile);
// Target shape and its size parameters for a named scenario.
void apply_scenario(PipelineConfig& cfg, const std::string& scenario);

nlohmann::json to_json(const PipelineConfig& cfg);
// Throws std::invalid_argument on unknown keys or wrong types.
PipelineConfig config_from_json(const nlohmann::json& j);
// "a.b.c=value"; the value is parsed as JSON when possible, else taken as a string.
void apply_override(nlohmann::json& doc, const std::string& assignment);

ValidationReport validate_config(const PipelineConfig& cfg);
// SHA-256 of the canonical JSON (output directory and thread count excluded).
std::string config_hash(const PipelineConfig& cfg);

std::string sha256_file(const std::string& path);
std::string sha256_hex(const std::string& bytes);

ProblemGeometry pipeline_geometry(const PipelineConfig& cfg);
CarlemanParams pipeline_carleman(const PipelineConfig& cfg, const ProblemGeometry& g);
TargetModel pipeline_target(const PipelineConfig& cfg);
SpaceTimeGrid pipeline_forward_grid(const PipelineConfig& cfg, const ProblemGeometry& g);
InversionGrid pipeline_inversion_grid(const PipelineConfig& cfg);

// Independent streams from the master seed.
std::uint64_t derived_seed(std::uint64_t master, std::uint64_t stream);

enum class Stage { simulate, transform, invert, recover, evaluate, probe };
Stage parse_stage(const std::string& s);
std::string to_string(Stage s);
const std::vector<Stage>& all_stages();

struct StageError : std::runtime_error {
    StageError(const std::string& stage, const std::string& what)
        : std::runtime_error("stage " + stage + ": " + what), stage(stage) {}
    std::string stage;
};

struct ManifestEntry {
    std::string path;  // relative to the output directory
    std::string sha256;
    std::uintmax_t bytes = 0;
    bool data = true;  // logs and reports are excluded from the determinism contract
};

struct Manifest {
    std::string config_hash;
    std::uint64_t seed = 0;
    std::vector<std::string> stages;
    std::vector<ManifestEntry> files;
};

nlohmann::json to_json(const Manifest& m);

// Runs the stages in pipeline order and rewrites manifest.json. Throws StageError.
Manifest run_pipeline(const PipelineConfig& cfg, const std::vector<Stage>& stages);

// report.txt from whatever artifacts exist in the output directory.
std::string emit_report(const std::string& out_dir);

}  // namespace carleman
