#include "carleman/pipeline.hpp"

#include "carleman/basis.hpp"
#include "carleman/parallel.hpp"
#include "carleman/problem.hpp"
#include "carleman/transform.hpp"

#include <openssl/evp.h>

#include <algorithm>
#include <chrono>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <random>
#include <set>
#include <sstream>
#include <stdexcept>

namespace fs = std::filesystem;
using nlohmann::json;

namespace carleman {

PipelineConfig profile_config(const std::string& profile) {
    PipelineConfig c;
    c.inversion.lambda = 3.0;
    c.inversion.alpha = 0.01;
    c.inversion.metric = Metric::jacobi;
    c.inversion.residual_form = ResidualForm::unscaled;
    if (profile == "desk") {
        c.profile = "desk";
        c.inversion.max_iters = 2000;
    } else if (profile == "paper") {
        c.profile = "paper";
        c.sources = 100;
        c.forward_dx = 1.0 / 160.0;
        c.forward_dt = 1.0 / 640.0;
        c.hx = 1.0 / 20.0;
        c.ht = 1.0 / 10.0;
        c.noise_delta = 0.03;
        c.inversion.max_iters = 20000;
    } else {
        throw std::invalid_argument("unknown profile: " + profile + " (expected paper or desk)");
    }
    return c;
}

void apply_scenario(PipelineConfig& cfg, const std::string& scenario) {
    const TargetModel m = preset_target(scenario);
    cfg.scenario = scenario;
    cfg.radius = m.radius;
    cfg.height = m.height;
}

json to_json(const PipelineConfig& c) {
    const InversionConfig& v = c.inversion;
    json j;
    j["profile"] = c.profile;
    j["seed"] = c.seed;
    j["threads"] = c.threads;
    j["output"] = c.output;
    j["geometry"] = {{"R", c.R}, {"T_minus", c.T_minus}, {"T", c.T}, {"T0", c.T0}, {"A", c.A}, {"sources", c.sources}};
    j["carleman"] = {{"sigma", c.sigma}, {"h", c.h}, {"eta", c.eta}, {"lambda", c.lambda}};
    j["target"] = {{"scenario", c.scenario}, {"a0", c.a0}, {"background", c.background}, {"radius", c.radius},
                   {"height", c.height}};
    j["forward"] = {{"dx", c.forward_dx}, {"dt", c.forward_dt}, {"padding", c.padding},
                    {"sponge_cells", c.sponge_cells}, {"interp", c.trace_interp}};
    j["noise"] = {{"delta", c.noise_delta}};
    j["basis"] = {{"N", c.N}};
    j["inversion"] = {{"hx", c.hx},
                      {"ht", c.ht},
                      {"alpha", v.alpha},
                      {"K", v.K},
                      {"gamma", v.gamma},
                      {"max_iters", v.max_iters},
                      {"grad_tol", v.grad_tol},
                      {"chi", to_string(v.chi)},
                      {"penalty_order", v.penalty_order},
                      {"metric", to_string(v.metric)},
                      {"metric_refresh", v.metric_refresh},
                      {"residual_form", to_string(v.residual_form)},
                      {"reference", c.reference},
                      {"power_iters", v.power_iters},
                      {"checkpoint_every", v.checkpoint_every},
                      {"abort_after_increases", v.abort_after_increases}};
    j["probe"] = {{"pairs", c.probe_pairs}, {"amplitude", c.probe_amplitude}, {"contrast_lambda", c.probe_contrast_lambda}};
    j["evaluate"] = {{"threshold", c.center_threshold}, {"center_times", c.center_times}};
    return j;
}

namespace {

void check_keys(const json& doc, const json& shape, const std::string& prefix) {
    if (!doc.is_object()) throw std::invalid_argument("config: " + (prefix.empty() ? "document" : prefix) + " must be an object");
    for (auto it = doc.begin(); it != doc.end(); ++it) {
        const std::string path = prefix.empty() ? it.key() : prefix + "." + it.key();
        if (!shape.contains(it.key())) throw std::invalid_argument("config: unknown key " + path);
        if (shape[it.key()].is_object()) check_keys(it.value(), shape[it.key()], path);
    }
}

template <class T>
void read(const json& j, const char* section, const char* key, T& out) {
    const json* node = &j;
    std::string path = key;
    if (section) {
        if (!j.contains(section)) return;
        node = &j.at(section);
        path = std::string(section) + "." + key;
    }
    if (!node->contains(key)) return;
    try {
        const json& v = node->at(key);
        if constexpr (std::is_floating_point_v<T>) {
            if (!v.is_number()) throw std::invalid_argument("expected a number");
        } else if constexpr (std::is_integral_v<T>) {
            if (!v.is_number_integer()) throw std::invalid_argument("expected an integer");
        }
        out = v.get<T>();
    } catch (const std::exception& e) {
        throw std::invalid_argument("config: bad value for " + path + ": " + e.what());
    }
}

}  // namespace

PipelineConfig config_from_json(const json& j) {
    std::string profile = "desk";
    if (j.contains("profile")) profile = j.at("profile").get<std::string>();
    PipelineConfig c = profile_config(profile);
    if (j.contains("target") && j["target"].contains("scenario"))
        apply_scenario(c, j["target"]["scenario"].get<std::string>());
    check_keys(j, to_json(c), "");
    read(j, nullptr, "seed", c.seed);
    read(j, nullptr, "threads", c.threads);
    read(j, nullptr, "output", c.output);
    read(j, "geometry", "R", c.R);
    read(j, "geometry", "T_minus", c.T_minus);
    read(j, "geometry", "T", c.T);
    read(j, "geometry", "T0", c.T0);
    read(j, "geometry", "A", c.A);
    read(j, "geometry", "sources", c.sources);
    read(j, "carleman", "sigma", c.sigma);
    read(j, "carleman", "h", c.h);
    read(j, "carleman", "eta", c.eta);
    read(j, "carleman", "lambda", c.lambda);
    read(j, "target", "scenario", c.scenario);
    read(j, "target", "a0", c.a0);
    read(j, "target", "background", c.background);
    read(j, "target", "radius", c.radius);
    read(j, "target", "height", c.height);
    read(j, "forward", "dx", c.forward_dx);
    read(j, "forward", "dt", c.forward_dt);
    read(j, "forward", "padding", c.padding);
    read(j, "forward", "sponge_cells", c.sponge_cells);
    read(j, "forward", "interp", c.trace_interp);
    read(j, "noise", "delta", c.noise_delta);
    read(j, "basis", "N", c.N);
    InversionConfig& v = c.inversion;
    std::string chi = to_string(v.chi), metric = to_string(v.metric), form = to_string(v.residual_form);
    read(j, "inversion", "hx", c.hx);
    read(j, "inversion", "ht", c.ht);
    read(j, "inversion", "alpha", v.alpha);
    read(j, "inversion", "K", v.K);
    read(j, "inversion", "gamma", v.gamma);
    read(j, "inversion", "max_iters", v.max_iters);
    read(j, "inversion", "grad_tol", v.grad_tol);
    read(j, "inversion", "chi", chi);
    read(j, "inversion", "penalty_order", v.penalty_order);
    read(j, "inversion", "metric", metric);
    read(j, "inversion", "metric_refresh", v.metric_refresh);
    read(j, "inversion", "residual_form", form);
    read(j, "inversion", "reference", c.reference);
    read(j, "inversion", "power_iters", v.power_iters);
    read(j, "inversion", "checkpoint_every", v.checkpoint_every);
    read(j, "inversion", "abort_after_increases", v.abort_after_increases);
    v.chi = parse_chi_mode(chi);
    v.metric = parse_metric(metric);
    v.residual_form = parse_residual_form(form);
    v.lambda = c.lambda;
    read(j, "probe", "pairs", c.probe_pairs);
    read(j, "probe", "amplitude", c.probe_amplitude);
    read(j, "probe", "contrast_lambda", c.probe_contrast_lambda);
    read(j, "evaluate", "threshold", c.center_threshold);
    read(j, "evaluate", "center_times", c.center_times);
    return c;
}

void apply_override(json& doc, const std::string& assignment) {
    const auto eq = assignment.find('=');
    if (eq == std::string::npos || eq == 0) throw std::invalid_argument("override must look like key.path=value: " + assignment);
    const std::string path = assignment.substr(0, eq), text = assignment.substr(eq + 1);
    json value = json::parse(text, nullptr, false);
    if (value.is_discarded()) value = text;
    json* node = &doc;
    std::size_t start = 0;
    for (;;) {
        const auto dot = path.find('.', start);
        const std::string key = path.substr(start, dot == std::string::npos ? std::string::npos : dot - start);
        if (key.empty()) throw std::invalid_argument("empty key in override: " + assignment);
        if (dot == std::string::npos) {
            (*node)[key] = value;
            return;
        }
        node = &(*node)[key];
        if (!node->is_object() && !node->is_null()) throw std::invalid_argument("override path crosses a value: " + path);
        start = dot + 1;
    }
}

ProblemGeometry pipeline_geometry(const PipelineConfig& c) {
    return make_geometry(c.R, c.T_minus, c.T, static_cast<std::size_t>(std::max(c.sources, 0)));
}

CarlemanParams pipeline_carleman(const PipelineConfig& c, const ProblemGeometry& g) {
    return make_carleman(g, c.sigma, c.h, c.lambda);
}

TargetModel pipeline_target(const PipelineConfig& c) {
    TargetModel m = preset_target(c.scenario);
    m.a0 = c.a0;
    m.background = c.background;
    m.radius = c.radius;
    m.height = c.height;
    return m;
}

SpaceTimeGrid pipeline_forward_grid(const PipelineConfig& c, const ProblemGeometry& g) {
    return make_forward_grid(g, c.forward_dx, c.forward_dt, c.padding, c.sponge_cells);
}

InversionGrid pipeline_inversion_grid(const PipelineConfig& c) {
    return make_inversion_grid(c.R, c.T_minus, c.T, c.hx, c.ht, c.inversion.penalty_order);
}

ValidationReport validate_config(const PipelineConfig& c) {
    ValidationReport rep;
    auto add = [&](std::string name, bool ok, std::string detail = {}) {
        rep.checks.push_back({std::move(name), ok, std::move(detail)});
    };
    auto near = [](double a, double b) { return std::abs(a - b) <= 1e-12 * std::max(1.0, std::abs(b)); };
    add("profile", c.profile == "desk" || c.profile == "paper", c.profile);
    add("sources", c.sources >= 1, std::to_string(c.sources));
    add("basis N in 1..16", c.N >= 1 && c.N <= 16, std::to_string(c.N));
    add("sources >= N", c.sources >= c.N, "the s-projection needs at least N samples");
    add("T0 = (T + T-)/2", near(c.T0, 0.5 * (c.T + c.T_minus)));
    add("A = (T - T-)/6", near(c.A, (c.T - c.T_minus) / 6.0));
    add("threads >= 0", c.threads >= 0);
    add("noise delta >= 0", c.noise_delta >= 0.0);
    add("forward steps > 0", c.forward_dx > 0.0 && c.forward_dt > 0.0);
    add("inversion steps > 0", c.hx > 0.0 && c.ht > 0.0);
    bool scenario_ok = true;
    try {
        const auto k = parse_target_kind(c.scenario);
        scenario_ok = k != TargetKind::custom;
    } catch (const std::exception&) {
        scenario_ok = false;
    }
    add("scenario", scenario_ok, c.scenario);
    add("a0 > 0 and background > 0", c.a0 > 0.0 && c.background > 0.0);
    add("target size > 0", c.radius > 0.0 && c.height > 0.0);
    bool interp_ok = true;
    try {
        parse_interp(c.trace_interp);
    } catch (const std::exception&) {
        interp_ok = false;
    }
    add("trace interpolation", interp_ok, c.trace_interp);
    const InversionConfig& v = c.inversion;
    add("alpha in [0, 1)", v.alpha >= 0.0 && v.alpha < 1.0, std::to_string(v.alpha));
    add("lambda >= 0", c.lambda >= 0.0);
    add("K >= 0 (0 = automatic)", v.K >= 0.0);
    add("gamma >= 0 (0 = automatic)", v.gamma >= 0.0);
    add("max_iters >= 0", v.max_iters >= 0);
    add("grad_tol > 0", v.grad_tol > 0.0);
    add("penalty order 2 or 4", v.penalty_order == 2 || v.penalty_order == 4);
    add("metric_refresh >= 0", v.metric_refresh >= 0);
    add("power_iters >= 1", v.power_iters >= 1);
    add("checkpoint_every >= 0", v.checkpoint_every >= 0);
    add("abort_after_increases >= 1", v.abort_after_increases >= 1);
    add("reference background|none", c.reference == "background" || c.reference == "none", c.reference);
    add("probe pairs >= 1", c.probe_pairs >= 1);
    add("probe amplitude > 0", c.probe_amplitude > 0.0);
    add("center threshold in (0, 1)", c.center_threshold > 0.0 && c.center_threshold < 1.0);
    if (!rep.ok()) return rep;

    const ProblemGeometry g = pipeline_geometry(c);
    const CarlemanParams carl = pipeline_carleman(c, g);
    add("eta = (sigma^2 - h)/(2A)^2", near(c.eta, carl.eta), std::to_string(carl.eta));
    for (auto& chk : validate_geometry(g, carl).checks) rep.checks.push_back(chk);
    try {
        validate_forward_grid(pipeline_forward_grid(c, g), g);
        add("forward grid", true);
    } catch (const std::exception& e) {
        add("forward grid", false, e.what());
    }
    try {
        const InversionGrid ig = pipeline_inversion_grid(c);
        bool aligned = true;
        for (int l = 0; l < ig.L; ++l) {
            const double m = ig.time(l) / c.forward_dt;
            aligned = aligned && std::abs(m - std::round(m)) < 1e-6;
        }
        add("inversion times on forward time levels", aligned);
        add("inversion grid has interior nodes", !ig.interior.empty());
    } catch (const std::exception& e) {
        add("inversion grid", false, e.what());
    }
    add("alpha >= 2 exp(-lambda h) (advisory)", true,
        alpha_advisory_ok(v, carl) ? "satisfied" : "not satisfied; reported only");
    return rep;
}

std::string sha256_hex(const std::string& bytes) {
    unsigned char md[EVP_MAX_MD_SIZE];
    unsigned int len = 0;
    if (EVP_Digest(bytes.data(), bytes.size(), md, &len, EVP_sha256(), nullptr) != 1)
        throw std::runtime_error("sha256 failed");
    std::ostringstream os;
    for (unsigned int i = 0; i < len; ++i) os << std::hex << std::setw(2) << std::setfill('0') << int(md[i]);
    return os.str();
}

std::string sha256_file(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw std::runtime_error("cannot read " + path);
    std::ostringstream ss;
    ss << in.rdbuf();
    return sha256_hex(ss.str());
}

std::string config_hash(const PipelineConfig& cfg) {
    json j = to_json(cfg);
    j.erase("output");
    j.erase("threads");
    return sha256_hex(j.dump());
}

std::uint64_t derived_seed(std::uint64_t master, std::uint64_t stream) {
    // splitmix64 finalizer over (master, stream)
    std::uint64_t z = master + 0x9e3779b97f4a7c15ULL * (stream + 1);
    z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
    z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
    return z ^ (z >> 31);
}

Stage parse_stage(const std::string& s) {
    if (s == "simulate") return Stage::simulate;
    if (s == "transform") return Stage::transform;
    if (s == "invert") return Stage::invert;
    if (s == "recover") return Stage::recover;
    if (s == "evaluate") return Stage::evaluate;
    if (s == "probe-convexity" || s == "probe") return Stage::probe;
    throw std::invalid_argument("unknown stage: " + s);
}

std::string to_string(Stage s) {
    switch (s) {
        case Stage::simulate: return "simulate";
        case Stage::transform: return "transform";
        case Stage::invert: return "invert";
        case Stage::recover: return "recover";
        case Stage::evaluate: return "evaluate";
        case Stage::probe: return "probe-convexity";
    }
    return "?";
}

const std::vector<Stage>& all_stages() {
    static const std::vector<Stage> s{Stage::simulate, Stage::transform, Stage::invert, Stage::recover, Stage::evaluate};
    return s;
}

json to_json(const Manifest& m) {
    json files = json::array();
    for (const auto& f : m.files)
        files.push_back({{"path", f.path}, {"sha256", f.sha256}, {"bytes", f.bytes}, {"kind", f.data ? "data" : "log"}});
    return {{"config_hash", m.config_hash}, {"seed", m.seed}, {"stages", m.stages}, {"files", files}};
}

namespace {

constexpr const char* kTraces = "traces.cwf";
constexpr const char* kTracesBg = "traces_background.cwf";
constexpr const char* kTracesNoisy = "traces_noisy.cwf";
constexpr const char* kBgField = "background_field.cwf";
constexpr const char* kTransformed = "transformed.cwf";
constexpr const char* kTransformedBg = "transformed_background.cwf";
constexpr const char* kField = "field.cwf";
constexpr const char* kIterations = "iterations.csv";
constexpr const char* kInversion = "inversion.json";
constexpr const char* kAcompCwf = "a_comp.cwf";
constexpr const char* kAcompCsv = "a_comp.csv";
constexpr const char* kMetrics = "metrics.json";
constexpr const char* kCenters = "centers.csv";
constexpr const char* kProbe = "probe.json";
constexpr const char* kReport = "report.txt";
constexpr const char* kTiming = "timing.json";
constexpr const char* kConfig = "config.json";
constexpr const char* kManifest = "manifest.json";

struct Context {
    const PipelineConfig& cfg;
    fs::path out;
    std::string hash;
    ProblemGeometry geom;
    CarlemanParams carl;
    BasisSet basis;
    CouplingTensors tensors;
    InversionGrid grid;
    std::vector<std::pair<std::string, bool>> produced;

    std::string path(const std::string& name) const { return (out / name).string(); }
    void record(const std::string& name, bool data = true) { produced.emplace_back(name, data); }
    std::string need(const std::string& name) const {
        const std::string p = path(name);
        if (!fs::exists(p)) throw std::runtime_error("missing upstream artifact " + p);
        return p;
    }
};

void write_json(const std::string& path, const json& j) {
    std::ofstream out(path);
    if (!out) throw std::runtime_error("cannot write " + path);
    out << j.dump(2) << '\n';
}

json read_json(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw std::runtime_error("cannot read " + path);
    return json::parse(in);
}

void stage_simulate(Context& ctx) {
    const PipelineConfig& c = ctx.cfg;
    const SpaceTimeGrid fgrid = pipeline_forward_grid(c, ctx.geom);
    const BoundaryNodes dirs = boundary_directions(ctx.grid);
    const std::vector<double> times = grid_times(ctx.grid);
    const Interp order = parse_interp(c.trace_interp);
    TargetModel bg;
    bg.kind = TargetKind::none;
    bg.background = c.background;

    CauchyTraces tr = generate_traces(ctx.geom, pipeline_target(c), fgrid, dirs, times, order);
    tr.meta["config_hash"] = ctx.hash;
    write_container(ctx.path(kTraces), to_container(tr));
    ctx.record(kTraces);

    CauchyTraces trb = generate_traces(ctx.geom, bg, fgrid, dirs, times, order);
    trb.meta["config_hash"] = ctx.hash;
    write_container(ctx.path(kTracesBg), to_container(trb));
    ctx.record(kTracesBg);

    const CoefficientVectorField Vb = sample_log_field(ctx.geom, bg, fgrid, ctx.grid, ctx.basis);
    Container fc = field_to_container(ctx.grid, Vb);
    fc.header["config_hash"] = ctx.hash;
    write_container(ctx.path(kBgField), fc);
    ctx.record(kBgField);

    if (c.noise_delta > 0.0) {
        CauchyTraces noisy = add_noise(tr, c.noise_delta, derived_seed(c.seed, 1));
        write_container(ctx.path(kTracesNoisy), to_container(noisy));
        ctx.record(kTracesNoisy);
    }
}

void stage_transform(Context& ctx) {
    const std::string src = ctx.cfg.noise_delta > 0.0 ? kTracesNoisy : kTraces;
    const CauchyTraces tr = traces_from_container(read_container(ctx.need(src)));
    const CauchyTraces trb = traces_from_container(read_container(ctx.need(kTracesBg)));
    TransformedTraces q = transform_traces(tr, ctx.basis);
    q.meta["config_hash"] = ctx.hash;
    write_container(ctx.path(kTransformed), to_container(q));
    ctx.record(kTransformed);
    TransformedTraces qb = transform_traces(trb, ctx.basis);
    qb.meta["config_hash"] = ctx.hash;
    write_container(ctx.path(kTransformedBg), to_container(qb));
    ctx.record(kTransformedBg);
}

struct InversionInputs {
    CoefficientVectorField background, initial;
};

InversionInputs load_inversion_inputs(const Context& ctx) {
    const TransformedTraces q = transformed_from_container(read_container(ctx.need(kTransformed)));
    const TransformedTraces qb = transformed_from_container(read_container(ctx.need(kTransformedBg)));
    InversionInputs in;
    in.background = field_from_container(read_container(ctx.need(kBgField)), ctx.grid);
    if (in.background.N != ctx.cfg.N) throw std::runtime_error("background field has a different basis size");
    in.initial = in.background;
    apply_boundary_data(ctx.grid, in.initial, q, qb);
    return in;
}

InversionConfig inversion_config(const PipelineConfig& c, double lambda) {
    InversionConfig v = c.inversion;
    v.lambda = lambda;
    return v;
}

Functional make_functional(const Context& ctx, const InversionConfig& v, const CoefficientVectorField& background) {
    CarlemanParams carl = ctx.carl;
    carl.lambda = v.lambda;
    Functional f(ctx.grid, ctx.geom, carl, ctx.tensors, v);
    if (ctx.cfg.reference == "background") f.set_target_residual(f.residual(background, false));
    return f;
}

void stage_invert(Context& ctx) {
    const InversionInputs in = load_inversion_inputs(ctx);
    InversionConfig v = inversion_config(ctx.cfg, ctx.cfg.lambda);
    if (v.checkpoint_every > 0) {
        fs::create_directories(ctx.out / "checkpoints");
        v.checkpoint_prefix = (ctx.out / "checkpoints" / "field").string();
    }
    const Functional f = make_functional(ctx, v, in.background);
    const MinimizeResult res = minimize(f, in.initial);

    Container fc = field_to_container(ctx.grid, res.field);
    fc.header["config_hash"] = ctx.hash;
    fc.header["iterations"] = static_cast<int>(res.log.size()) - 1;
    write_container(ctx.path(kField), fc);
    ctx.record(kField);
    write_iteration_log(ctx.path(kIterations), res.log);
    ctx.record(kIterations, false);
    if (v.checkpoint_every > 0)
        for (const auto& e : fs::directory_iterator(ctx.out / "checkpoints"))
            ctx.record((fs::path("checkpoints") / e.path().filename()).string());

    bool monotone = true;
    for (std::size_t i = 1; i < res.log.size(); ++i) monotone = monotone && res.log[i].J <= res.log[i - 1].J;
    json j;
    j["config_hash"] = ctx.hash;
    j["iterations"] = static_cast<int>(res.log.size()) - 1;
    j["converged"] = res.converged;
    j["stop_reason"] = res.stop_reason;
    j["gamma"] = res.gamma;
    j["lipschitz_estimate"] = res.lipschitz;
    j["K"] = res.K;
    j["projections"] = res.projections;
    j["max_pinned_change"] = res.max_pinned_change;
    j["J_initial"] = res.log.front().J;
    j["J_final"] = res.log.back().J;
    j["grad_norm_final"] = res.log.back().grad_norm;
    j["monotone"] = monotone;
    j["alpha_advisory_ok"] = alpha_advisory_ok(v, ctx.carl);
    j["degrees_of_freedom"] = ctx.grid.interior.size() * ctx.grid.L * ctx.cfg.N;
    write_json(ctx.path(kInversion), j);
    ctx.record(kInversion);
}

Container acomp_container(const ReconstructedCoefficient& rec) {
    Container c;
    const InversionGrid& g = rec.grid;
    c.header["kind"] = "a_comp";
    c.header["config_hash"] = rec.config_hash;
    c.header["iterations"] = rec.iterations;
    c.header["L"] = g.L;
    c.header["n"] = g.n;
    c.header["hx"] = g.hx;
    c.header["ht"] = g.ht;
    c.header["t0"] = g.t0;
    c.arrays.push_back({"a_comp", {static_cast<std::size_t>(g.L), g.spatial()}, rec.values});
    return c;
}

ReconstructedCoefficient acomp_from_container(const Container& c, const InversionGrid& g) {
    if (c.header.value("kind", "") != "a_comp") throw std::runtime_error("container does not hold a_comp");
    ReconstructedCoefficient rec;
    rec.grid = g;
    rec.values = c.get("a_comp").data;
    rec.config_hash = c.header.value("config_hash", "");
    rec.iterations = c.header.value("iterations", 0);
    if (rec.values.size() != g.nodes()) throw std::runtime_error("a_comp does not match the inversion grid");
    return rec;
}

void stage_recover(Context& ctx) {
    const Container fc = read_container(ctx.need(kField));
    const CoefficientVectorField V = field_from_container(fc, ctx.grid);
    ReconstructedCoefficient rec = recover_coefficient(ctx.grid, V, ctx.tensors);
    rec.config_hash = ctx.hash;
    rec.iterations = fc.header.value("iterations", 0);
    write_container(ctx.path(kAcompCwf), acomp_container(rec));
    ctx.record(kAcompCwf);
    write_coefficient_csv(ctx.path(kAcompCsv), rec);
    ctx.record(kAcompCsv);
    fs::create_directories(ctx.out / "vtk");
    for (const auto& p : write_coefficient_vtk((ctx.out / "vtk" / "a_comp").string(), rec))
        ctx.record(fs::relative(p, ctx.out).string());
}

void stage_evaluate(Context& ctx) {
    const PipelineConfig& c = ctx.cfg;
    const ReconstructedCoefficient rec = acomp_from_container(read_container(ctx.need(kAcompCwf)), ctx.grid);
    const TargetModel tm = pipeline_target(c);
    const FieldMetrics fm = field_error(rec, tm, ctx.geom, c.center_threshold);
    json j;
    j["config_hash"] = ctx.hash;
    j["scenario"] = c.scenario;
    j["relative_l2"] = fm.relative_l2;
    j["mask_max_error"] = fm.mask_max_error;
    const bool has_target = tm.kind != TargetKind::none;
    j["contrast_correct"] = has_target ? json(tm.a0 / tm.background) : json(nullptr);
    j["contrast_computed"] = has_target ? json(fm.contrast) : json(nullptr);
    const double miss = 2.0 * c.R;
    j["center_times"] = c.center_times;
    j["center_miss_penalty"] = miss;
    j["mean_center_error"] = has_target ? json(mean_center_error(fm, c.center_times, miss)) : json(nullptr);
    json centers = json::array();
    for (const auto& s : fm.centers) {
        json e{{"t", s.t}, {"found", s.found}};
        if (s.found) {
            e["computed"] = s.computed;
            e["exact"] = s.exact;
            e["distance"] = s.distance;
        }
        centers.push_back(e);
    }
    j["centers"] = centers;
    write_json(ctx.path(kMetrics), j);
    ctx.record(kMetrics);
    write_centers_csv(ctx.path(kCenters), fm);
    ctx.record(kCenters);
}

json probe_run(const Context& ctx, const InversionInputs& in, double lambda) {
    const PipelineConfig& c = ctx.cfg;
    const InversionConfig v = inversion_config(c, lambda);
    const Functional f = make_functional(ctx, v, in.background);
    const InversionGrid& g = ctx.grid;
    const int N = c.N;
    const double norm0 = std::sqrt(f.penalty_norm2(in.initial));
    const double K = v.K > 0.0 ? v.K : 10.0 * std::max(norm0, 1e-12);
    json values = json::array(), negatives = json::array();
    int nonneg = 0, in_ball = 0;
    double vmin = std::numeric_limits<double>::infinity();
    for (int p = 0; p < c.probe_pairs; ++p) {
        const std::uint64_t seed = derived_seed(c.seed, 1000 + static_cast<std::uint64_t>(p));
        std::mt19937_64 eng(seed);
        std::uniform_real_distribution<double> U(-1.0, 1.0);
        CoefficientVectorField V1 = in.initial, V2 = in.initial;
        for (int l = 0; l < g.L; ++l)
            for (int s : g.interior)
                for (int k = 0; k < N; ++k) {
                    V1.at(g, l, s, k) += c.probe_amplitude * U(eng);
                    V2.at(g, l, s, k) += c.probe_amplitude * U(eng);
                }
        if (std::sqrt(f.penalty_norm2(V1)) <= K && std::sqrt(f.penalty_norm2(V2)) <= K) ++in_ball;
        const double val = f.convexity_probe(V1, V2);
        values.push_back(val);
        vmin = std::min(vmin, val);
        if (val >= 0.0) {
            ++nonneg;
        } else {
            negatives.push_back({{"pair", p}, {"seed", seed}, {"value", val}});
        }
    }
    return {{"lambda", lambda}, {"alpha", v.alpha},         {"pairs", c.probe_pairs}, {"nonnegative", nonneg},
            {"in_ball", in_ball}, {"K", K}, {"min", vmin}, {"negatives", negatives}, {"values", values}};
}

void stage_probe(Context& ctx) {
    const InversionInputs in = load_inversion_inputs(ctx);
    json j;
    j["config_hash"] = ctx.hash;
    j["amplitude"] = ctx.cfg.probe_amplitude;
    j["paper"] = probe_run(ctx, in, ctx.cfg.lambda);
    j["contrast"] = probe_run(ctx, in, ctx.cfg.probe_contrast_lambda);
    write_json(ctx.path(kProbe), j);
    ctx.record(kProbe);
}

std::string fixed(double v, int digits) {
    std::ostringstream os;
    os << std::fixed << std::setprecision(digits) << v;
    return os.str();
}

}  // namespace

std::string emit_report(const std::string& out_dir) {
    const fs::path out(out_dir);
    std::ostringstream r;
    r << "Coefficient inverse problem: reconstruction report\n\n";
    if (fs::exists(out / kConfig)) {
        const json c = read_json((out / kConfig).string());
        r << "configuration\n";
        r << "  profile " << c.value("profile", "?") << ", scenario " << c["target"].value("scenario", "?")
          << ", seed " << c.value("seed", 0ULL) << "\n";
        r << "  R " << c["geometry"]["R"] << ", t in [" << c["geometry"]["T_minus"] << ", " << c["geometry"]["T"]
          << "], sources " << c["geometry"]["sources"] << ", N " << c["basis"]["N"] << "\n";
        r << "  lambda " << c["carleman"]["lambda"] << ", alpha " << c["inversion"]["alpha"] << ", noise delta "
          << c["noise"]["delta"] << "\n";
        r << "  forward dx " << c["forward"]["dx"] << ", dt " << c["forward"]["dt"] << "; inversion hx "
          << c["inversion"]["hx"] << ", ht " << c["inversion"]["ht"] << "\n";
        r << "  residual " << c["inversion"]["residual_form"].get<std::string>() << ", reference "
          << c["inversion"]["reference"].get<std::string>() << ", metric " << c["inversion"]["metric"].get<std::string>()
          << "\n\n";
    }
    if (fs::exists(out / kInversion)) {
        const json j = read_json((out / kInversion).string());
        r << "descent\n";
        r << "  iterations " << j["iterations"] << " (" << j["stop_reason"].get<std::string>() << "), gamma "
          << j["gamma"] << ", K " << j["K"] << ", projections " << j["projections"] << "\n";
        r << "  J " << j["J_initial"] << " -> " << j["J_final"] << ", final |grad J| " << j["grad_norm_final"]
          << ", monotone " << (j["monotone"].get<bool>() ? "yes" : "no") << "\n\n";
    }
    if (fs::exists(out / kMetrics)) {
        const json m = read_json((out / kMetrics).string());
        r << "reconstruction\n";
        if (!m["contrast_computed"].is_null())
            r << "  contrast: correct " << fixed(m["contrast_correct"].get<double>(), 2) << " / computed "
              << fixed(m["contrast_computed"].get<double>(), 2) << "\n";
        r << "  relative L2 error " << fixed(m["relative_l2"].get<double>(), 4) << ", max error on target "
          << fixed(m["mask_max_error"].get<double>(), 4) << "\n";
        r << "  center trajectory\n";
        r << "      t    exact (x, y, z)          computed (x, y, z)       distance\n";
        for (const auto& c : m["centers"]) {
            const double t = c["t"].get<double>();
            if (!c["found"].get<bool>()) {
                r << "    no target detected at t=" << fixed(t, 2) << "\n";
                continue;
            }
            auto vec = [&](const json& v) {
                return "(" + fixed(v[0].get<double>(), 3) + ", " + fixed(v[1].get<double>(), 3) + ", " +
                       fixed(v[2].get<double>(), 3) + ")";
            };
            r << "    " << std::setw(5) << fixed(t, 2) << "  " << std::left << std::setw(24) << vec(c["exact"])
              << std::setw(24) << vec(c["computed"]) << std::right << fixed(c["distance"].get<double>(), 4) << "\n";
        }
        if (!m["mean_center_error"].is_null())
            r << "  mean center error over the listed times " << fixed(m["mean_center_error"].get<double>(), 4)
              << "\n";
        r << "\n";
    }
    if (fs::exists(out / kProbe)) {
        const json p = read_json((out / kProbe).string());
        r << "convexity probe (amplitude " << p["amplitude"] << ")\n";
        for (const char* key : {"paper", "contrast"}) {
            const json& q = p[key];
            r << "  lambda " << q["lambda"] << ": " << q["nonnegative"] << "/" << q["pairs"]
              << " nonnegative, min " << q["min"] << ", pairs inside the K-ball " << q["in_ball"] << "\n";
        }
        r << "\n";
    }
    if (fs::exists(out / kTiming)) {
        const json t = read_json((out / kTiming).string());
        r << "timing\n";
        for (auto it = t.begin(); it != t.end(); ++it) r << "  " << it.key() << " " << fixed(it.value().get<double>(), 1) << " s\n";
    }
    return r.str();
}

Manifest run_pipeline(const PipelineConfig& cfg, const std::vector<Stage>& stages) {
    const ValidationReport rep = validate_config(cfg);
    if (!rep.ok()) throw std::invalid_argument("invalid configuration:\n" + rep.summary());
    set_threads(cfg.threads);
    fs::create_directories(cfg.output);

    Context ctx{cfg, fs::path(cfg.output), config_hash(cfg), {}, {}, {}, {}, {}, {}};
    ctx.geom = pipeline_geometry(cfg);
    ctx.carl = pipeline_carleman(cfg, ctx.geom);
    ctx.basis = build_basis(cfg.N, cfg.R);
    ctx.tensors = coupling_tensors(ctx.basis);
    ctx.grid = pipeline_inversion_grid(cfg);

    Manifest man;
    man.config_hash = ctx.hash;
    man.seed = cfg.seed;
    json timing = json::object();
    const fs::path mpath = ctx.out / kManifest;
    if (fs::exists(mpath)) {
        const json old = read_json(mpath.string());
        if (old.value("config_hash", "") == ctx.hash) {
            man.stages = old.value("stages", std::vector<std::string>{});
            for (const auto& f : old["files"])
                man.files.push_back({f["path"], f["sha256"], f["bytes"], f["kind"] == "data"});
        }
    }
    if (fs::exists(ctx.out / kTiming)) timing = read_json((ctx.out / kTiming).string());

    write_json(ctx.path(kConfig), to_json(cfg));
    ctx.record(kConfig, false);

    std::vector<Stage> order;
    for (Stage s : {Stage::simulate, Stage::transform, Stage::invert, Stage::recover, Stage::evaluate, Stage::probe})
        if (std::find(stages.begin(), stages.end(), s) != stages.end()) order.push_back(s);

    for (Stage s : order) {
        const auto t0 = std::chrono::steady_clock::now();
        try {
            switch (s) {
                case Stage::simulate: stage_simulate(ctx); break;
                case Stage::transform: stage_transform(ctx); break;
                case Stage::invert: stage_invert(ctx); break;
                case Stage::recover: stage_recover(ctx); break;
                case Stage::evaluate: stage_evaluate(ctx); break;
                case Stage::probe: stage_probe(ctx); break;
            }
        } catch (const std::exception& e) {
            throw StageError(to_string(s), e.what());
        }
        timing[to_string(s)] = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
        if (std::find(man.stages.begin(), man.stages.end(), to_string(s)) == man.stages.end())
            man.stages.push_back(to_string(s));
    }
    write_json(ctx.path(kTiming), timing);
    ctx.record(kTiming, false);
    {
        std::ofstream rep_out(ctx.path(kReport));
        rep_out << emit_report(cfg.output);
    }
    ctx.record(kReport, false);

    for (const auto& [name, data] : ctx.produced) {
        const std::string p = ctx.path(name);
        ManifestEntry e{name, sha256_file(p), fs::file_size(p), data};
        auto it = std::find_if(man.files.begin(), man.files.end(), [&](const ManifestEntry& f) { return f.path == name; });
        if (it != man.files.end()) {
            *it = e;
        } else {
            man.files.push_back(e);
        }
    }
    std::sort(man.files.begin(), man.files.end(), [](const auto& a, const auto& b) { return a.path < b.path; });
    write_json(mpath.string(), to_json(man));
    return man;
}

}  // namespace carleman
