#include <cstdio>
#include <iostream>
#include <map>
#include <string>

#include <CLI11.hpp>

#include "mixtraffic/scenario.hpp"

using namespace mixtraffic;

namespace {

constexpr int kClean = 0;
constexpr int kViolations = 1;
constexpr int kConfigError = 2;

int cmd_run(const std::string& path, const std::string& out_dir, bool allow_violations, bool quiet) {
    ScenarioConfig c;
    try {
        c = load_config(path);
    } catch (const ConfigError& e) {
        std::cerr << "config error: " << e.what() << "\n";
        return kConfigError;
    }
    RunResult r;
    try {
        r = run_scenario(c);
    } catch (const std::exception& e) {
        std::cerr << "config error: " << path << ": " << e.what() << "\n";
        return kConfigError;
    }
    write_outputs(c, r, out_dir);
    if (!quiet) std::cout << r.summary;
    if (!r.violations.empty() && !allow_violations) return kViolations;
    return kClean;
}

int cmd_validate(const std::string& path) {
    try {
        const ScenarioConfig c = load_config(path);
        build_scenario(c);
        std::cout << path << ": ok\n";
        return kClean;
    } catch (const std::exception& e) {
        std::cerr << "config error: " << e.what() << "\n";
        return kConfigError;
    }
}

std::pair<double, double> parse_range(const std::string& s) {
    const auto dots = s.find("..");
    if (dots == std::string::npos) {
        const double v = std::stod(s);
        return {v, v};
    }
    return {std::stod(s.substr(0, dots)), std::stod(s.substr(dots + 2))};
}

int cmd_throughput(const std::string& range, double step, std::int64_t seed, int seeds,
                   std::optional<double> spacing, const std::string& config) {
    ScenarioConfig base = ring_throughput_config();
    std::vector<double> grid;
    try {
        if (!config.empty()) base = load_config(config);
        if (!base.generator || !base.sensor_x)
            throw ConfigError(config, 0, "throughput needs [generator] and measure.sensor_x");
        if (spacing) {
            base.platoon_spacing = *spacing;
            validate(base, config.empty() ? "throughput" : config);
        }
        const auto [lo, hi] = parse_range(range);
        if (lo < 0.0 || hi > 1.0) throw std::invalid_argument("fractions must lie in [0, 1]");
        grid = fraction_grid(lo, hi, step);
        if (seeds < 1) throw std::invalid_argument("--seeds must be at least 1");
    } catch (const std::exception& e) {
        std::cerr << "config error: " << e.what() << "\n";
        return kConfigError;
    }
    const auto points = throughput_sweep(base, grid, seed, seeds);
    std::cout << "fraction,seed,veh_per_h,violations\n";
    std::size_t violations = 0;
    for (const auto& p : points) {
        std::cout << format_g9(p.fraction) << ',' << p.seed << ',' << format_g9(p.veh_per_h) << ',' << p.violations
                  << '\n';
        violations += p.violations;
    }
    return violations ? kViolations : kClean;
}

int cmd_suite(const std::string& name, std::size_t seeds, std::uint64_t seed0) {
    const auto& names = suite_names();
    if (std::find(names.begin(), names.end(), name) == names.end()) {
        std::cerr << "config error: unknown suite '" << name << "'\n";
        return kConfigError;
    }
    const SuiteReport r = run_suite(name, seeds, seed0);
    std::cout << r.text();
    return r.passed() ? kClean : kViolations;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"Mixed-traffic microsimulator"};
    app.require_subcommand(1);

    std::string path, out_dir = ".";
    bool allow = false, quiet = false;
    auto* run = app.add_subcommand("run", "Run a scenario and write trace, violations and summary");
    run->add_option("config", path, "Scenario file")->required();
    run->add_option("--out", out_dir, "Directory for output files");
    run->add_flag("--allow-violations", allow, "Exit 0 even if violations were recorded");
    run->add_flag("--quiet", quiet, "Do not print the summary");

    auto* val = app.add_subcommand("validate", "Check a scenario file");
    val->add_option("config", path, "Scenario file")->required();

    std::string range = "0.0..1.0", config;
    double step = 0.1;
    std::int64_t seed = 1;
    int seeds = 1;
    std::optional<double> spacing;
    auto* tp = app.add_subcommand("throughput", "Ring throughput against IV fraction (CSV on stdout)");
    tp->add_option("--iv-fraction", range, "Fraction range A..B")->required();
    tp->add_option("--step", step, "Fraction step")->required();
    tp->add_option("--seed", seed, "First seed")->required();
    tp->add_option("--seeds", seeds, "Seeds per fraction");
    tp->add_option("--platoon-spacing", spacing, "Intra-platoon spacing (m)");
    tp->add_option("--config", config, "Base scenario instead of the built-in ring");

    std::string suite;
    std::size_t suite_seeds = 100;
    std::uint64_t seed0 = 1;
    auto* su = app.add_subcommand("suite", "Run a randomized property suite");
    su->add_option("name", suite, "safety-randomized | platoon-lifecycle | lanechange-gates")->required();
    su->add_option("--seeds", suite_seeds, "Seeds per scenario family")->required();
    su->add_option("--first-seed", seed0, "First seed");

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        const int rc = app.exit(e);
        return rc == 0 ? 0 : kConfigError;
    }
    if (*run) return cmd_run(path, out_dir, allow, quiet);
    if (*val) return cmd_validate(path);
    if (*tp) return cmd_throughput(range, step, seed, seeds, spacing, config);
    if (*su) return cmd_suite(suite, suite_seeds, seed0);
    return kConfigError;
}
