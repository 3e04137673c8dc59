#include "carleman/pipeline.hpp"

#include "CLI11.hpp"

#include <fstream>
#include <iostream>

using namespace carleman;

namespace {

constexpr int kConfigInvalid = 2;
constexpr int kStageFailed = 3;

struct Options {
    std::string config_path, profile, scenario, out;
    double noise = -1.0;
    long long seed = -1;
    int threads = -1;
    std::vector<std::string> overrides;
};

nlohmann::json build_document(const Options& o) {
    nlohmann::json doc = nlohmann::json::object();
    if (!o.config_path.empty()) {
        std::ifstream in(o.config_path);
        if (!in) throw std::invalid_argument("cannot read config " + o.config_path);
        doc = nlohmann::json::parse(in);
    }
    if (!o.profile.empty()) doc["profile"] = o.profile;
    if (!o.scenario.empty()) doc["target"]["scenario"] = o.scenario;
    if (o.noise >= 0.0) doc["noise"]["delta"] = o.noise;
    if (o.seed >= 0) doc["seed"] = static_cast<std::uint64_t>(o.seed);
    if (o.threads >= 0) doc["threads"] = o.threads;
    if (!o.out.empty()) doc["output"] = o.out;
    for (const auto& a : o.overrides) apply_override(doc, a);
    return doc;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"Globally convergent reconstruction of a time-dependent coefficient from boundary data"};
    app.require_subcommand(1, 1);
    Options o;
    auto add_common = [&](CLI::App* sub) {
        sub->add_option("--config", o.config_path, "JSON configuration file");
        sub->add_option("--profile", o.profile, "parameter profile")->check(CLI::IsMember({"paper", "desk"}));
        sub->add_option("--scenario", o.scenario, "target preset")
            ->check(CLI::IsMember({"ball", "cylinder", "rotated", "static", "none"}));
        sub->add_option("--noise", o.noise, "multiplicative noise level delta")->check(CLI::NonNegativeNumber);
        sub->add_option("--seed", o.seed, "master seed")->check(CLI::NonNegativeNumber);
        sub->add_option("--threads", o.threads, "worker cap, 0 for the default")->check(CLI::NonNegativeNumber);
        sub->add_option("--out", o.out, "output directory");
        sub->add_option("--set", o.overrides, "dot-path override, e.g. inversion.alpha=0.02")->take_all();
    };
    const std::vector<std::pair<std::string, std::string>> commands{
        {"validate", "check the configuration and print the resolved document"},
        {"simulate", "forward solves, traces and optional noise"},
        {"transform", "log transform and basis projection of the traces"},
        {"invert", "gradient descent on the weighted functional"},
        {"recover", "reconstruct the coefficient from the minimizer"},
        {"evaluate", "metrics, center trajectory and report"},
        {"all", "every stage from simulate to evaluate"},
        {"probe-convexity", "strong convexity probe on random same-boundary pairs"}};
    std::vector<CLI::App*> subs;
    for (const auto& [name, help] : commands) {
        auto* sub = app.add_subcommand(name, help);
        add_common(sub);
        subs.push_back(sub);
    }
    CLI11_PARSE(app, argc, argv);
    const std::string cmd = app.get_subcommands().front()->get_name();

    PipelineConfig cfg;
    try {
        cfg = config_from_json(build_document(o));
        const ValidationReport rep = validate_config(cfg);
        if (!rep.ok()) {
            for (const auto& c : rep.checks)
                if (!c.passed) std::cerr << "invalid: " << c.name << (c.detail.empty() ? "" : " (" + c.detail + ")") << "\n";
            return kConfigInvalid;
        }
        if (cmd == "validate") {
            std::cout << rep.summary() << to_json(cfg).dump(2) << "\nconfig hash " << config_hash(cfg) << "\n";
            return 0;
        }
    } catch (const std::exception& e) {
        std::cerr << "invalid configuration: " << e.what() << "\n";
        return kConfigInvalid;
    }

    std::vector<Stage> stages;
    if (cmd == "all") {
        stages = all_stages();
    } else {
        stages.push_back(parse_stage(cmd));
    }
    try {
        const Manifest m = run_pipeline(cfg, stages);
        std::cout << "wrote " << m.files.size() << " files to " << cfg.output << " (config " << m.config_hash.substr(0, 12)
                  << ")\n";
        if (cmd == "evaluate" || cmd == "all") {
            std::ifstream rep(cfg.output + "/report.txt");
            std::cout << rep.rdbuf();
        }
    } catch (const StageError& e) {
        std::cerr << e.what() << "\n";
        return kStageFailed;
    } catch (const std::invalid_argument& e) {
        std::cerr << e.what() << "\n";
        return kConfigInvalid;
    } catch (const std::exception& e) {
        std::cerr << "failure: " << e.what() << "\n";
        return kStageFailed;
    }
    return 0;
}
