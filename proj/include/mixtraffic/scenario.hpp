#pragma once

#include <algorithm>
#include <atomic>
#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <functional>
#include <map>
#include <random>
#include <sstream>
#include <string>
#include <thread>
#include <vector>

#include "config.hpp"
#include "simulator.hpp"

namespace mixtraffic {

// ---- parallel map -----------------------------------------------------------

inline unsigned worker_count() {
    unsigned n = std::max(1u, std::thread::hardware_concurrency());
    if (const char* env = std::getenv("SIMCTL_THREADS")) {
        const long cap = std::strtol(env, nullptr, 10);
        if (cap >= 1) n = std::min<unsigned>(n, static_cast<unsigned>(cap));
    }
    return n;
}

// Runs fn(i) for i in [0, n); results are stored by index, so output order never depends on scheduling.
template <class T>
std::vector<T> parallel_map(std::size_t n, const std::function<T(std::size_t)>& fn, unsigned threads = worker_count()) {
    std::vector<T> out(n);
    std::atomic<std::size_t> next{0};
    auto work = [&] {
        for (std::size_t i = next++; i < n; i = next++) out[i] = fn(i);
    };
    threads = std::max(1u, std::min<unsigned>(threads, static_cast<unsigned>(std::max<std::size_t>(n, 1))));
    if (threads == 1) {
        work();
        return out;
    }
    std::vector<std::thread> pool;
    for (unsigned t = 0; t < threads; ++t) pool.emplace_back(work);
    for (auto& t : pool) t.join();
    return out;
}

// ---- building worlds --------------------------------------------------------

struct Scenario {
    WorldState world;
    SimConfig sim;
    std::vector<AgentSetup> setups;
    std::vector<SpeedEvent> events;
    std::int64_t slots = 0;
};

inline SimConfig sim_config(const ScenarioConfig& c) {
    SimConfig s;
    s.mode = c.mode;
    s.horizon = c.horizon;
    s.platoon.spacing = c.platoon_spacing;
    s.platoon.discount = c.discount;
    s.platoon.split_gap = c.split_gap;
    s.platoon.horizon = c.horizon;
    s.auto_join = c.auto_join;
    s.join_range = c.join_range;
    s.hv.v_des = c.hv_v_des;
    s.hv.gain = c.hv_gain;
    s.hv.headway = c.hv_headway;
    s.hv.lane_change_rate = c.hv_lane_change_rate;
    s.hv.lane_change_duration = c.hv_lane_change_duration;
    s.hv.lateral_gain = c.hv_lateral_gain;
    s.iv_cruise = c.iv_cruise;
    s.iv_lane_change_rate = c.iv_lane_change_rate;
    s.gates_enabled = c.gates_enabled;
    s.hv_rule_scale = c.hv_rule_scale;
    s.seed = static_cast<std::uint64_t>(c.seed);
    s.sensor_x = c.sensor_x;
    return s;
}

// Largest gap any rule could demand of this pair at these speeds, whatever contexts arise.
inline double conservative_requirement(const Capabilities& cap, double v_follow, double v_lead) {
    double r = cap.stopping()(v_follow, v_lead);
    for (const SeparationRule& rule :
         {cap.relative(cap.a_i), cap.relative(cap.a_h), cap.tightened(cap.a_h, cap.a_i)})
        r = std::max(r, rule(v_follow, v_lead));
    return r;
}

struct RosterOptions {
    int count = 20;
    double iv_fraction = 0.5;
    std::optional<double> spacing;
    std::optional<double> speed;
    double max_speed_fraction = 0.8;
};

// Vehicles per lane with ids in front-to-back order; lanes filled round-robin.
inline std::vector<Vehicle> generate_roster(const RosterOptions& o, const LimitSet& iv, const LimitSet& hv,
                                            const LaneGeometry& g, std::mt19937_64& rng) {
    const int n = std::max(0, o.count);
    const int ni = static_cast<int>(std::lround(o.iv_fraction * n));
    std::vector<bool> is_iv(static_cast<std::size_t>(n), false);
    for (int i = 0; i < ni; ++i) is_iv[static_cast<std::size_t>(i)] = true;
    std::shuffle(is_iv.begin(), is_iv.end(), rng);
    const Capabilities cap = Capabilities::from(iv, hv);
    std::uniform_real_distribution<double> speed(0.0, o.max_speed_fraction * iv.v_max);
    std::uniform_real_distribution<double> slack(1.0, 2.0);
    std::vector<Vehicle> out;
    std::map<int, std::pair<double, double>> tail;  // lane -> (x, v) of the last placed vehicle
    for (int i = 0; i < n; ++i) {
        Vehicle v;
        v.id = static_cast<VehicleId>(i);
        v.kind = is_iv[static_cast<std::size_t>(i)] ? VehicleKind::intelligent : VehicleKind::human;
        v.limits = v.is_iv() ? iv : hv;
        const int lane = g.min_lane + i % g.lane_count;
        v.beta = v.alpha = lane;
        v.pose.y = g.center_y(lane);
        v.v_prev = v.vx_prev = o.speed ? *o.speed : speed(rng);
        auto it = tail.find(lane);
        if (it == tail.end()) {
            v.pose.x = 0.0;
        } else {
            const auto [xl, vl] = it->second;
            const double gap = o.spacing ? *o.spacing : conservative_requirement(cap, v.v_prev, vl) * slack(rng);
            v.pose.x = xl - gap;
        }
        tail[lane] = {v.pose.x, v.v_prev};
        out.push_back(v);
    }
    // Shift so the rearmost vehicle sits at x = 0.
    double lo = 0.0;
    for (const auto& v : out) lo = std::min(lo, v.pose.x);
    for (auto& v : out) v.pose.x -= lo;
    return out;
}

inline Scenario build_scenario(const ScenarioConfig& c) {
    Scenario s;
    s.sim = sim_config(c);
    s.slots = c.slots();
    s.world.h = c.h;
    s.world.geometry = c.geometry();
    s.world.road.topology = c.topology;
    s.world.road.length = c.length;
    const LimitSet iv = c.limits(VehicleKind::intelligent), hv = c.limits(VehicleKind::human);
    if (c.generator) {
        std::mt19937_64 rng(static_cast<std::uint64_t>(c.seed));
        RosterOptions o;
        o.count = c.generator->count;
        o.iv_fraction = c.generator->iv_fraction;
        o.spacing = c.generator->spacing;
        o.speed = c.generator->speed;
        s.world.vehicles = generate_roster(o, iv, hv, s.world.geometry, rng);
        if (c.topology == Topology::ring) {
            double span = 0.0;
            for (const auto& v : s.world.vehicles) span = std::max(span, v.pose.x);
            if (span >= c.length) throw ConfigError("generator", 0, "generated vehicles do not fit on the ring");
        }
        s.setups.resize(s.world.vehicles.size());
    } else {
        std::map<int, std::vector<VehicleId>> groups;
        for (std::size_t i = 0; i < c.vehicles.size(); ++i) {
            const VehicleSpec& spec = c.vehicles[i];
            Vehicle v;
            v.id = static_cast<VehicleId>(i);
            v.kind = spec.kind;
            v.limits = spec.kind == VehicleKind::human ? hv : iv;
            v.pose.x = spec.x;
            v.pose.y = s.world.geometry.center_y(spec.lane);
            v.beta = v.alpha = spec.lane;
            v.v_prev = v.vx_prev = spec.v;
            s.world.vehicles.push_back(v);
            AgentSetup a;
            a.cruise = spec.cruise;
            a.v_des = spec.v_des;
            a.target_lane = spec.target_lane;
            s.setups.push_back(a);
            if (spec.platoon) groups[*spec.platoon].push_back(v.id);
        }
        for (auto& [g, members] : groups) s.sim.initial_platoons.push_back(members);
    }
    for (const auto& e : c.events)
        s.events.push_back({std::llround(e.at / c.h), static_cast<VehicleId>(e.id), e.speed});
    return s;
}

inline Simulator make_simulator(const Scenario& s) {
    Simulator sim(s.world, s.sim, s.setups);
    for (const auto& e : s.events) sim.schedule(e);
    return sim;
}

// ---- outputs ------------------------------------------------------------------

inline std::string format_g9(double v) {
    char buf[32];
    std::snprintf(buf, sizeof buf, "%.9g", v);
    return buf;
}

inline std::string trace_header() { return "t,id,kind,x,y,theta,v,state,beta,alpha,platoon\n"; }

inline std::string trace_row(const TraceRecord& r) {
    std::string s;
    s.reserve(96);
    s += format_g9(r.t);
    s += ',' + std::to_string(r.id) + ',' + to_string(r.kind) + ',';
    s += format_g9(r.pose.x) + ',' + format_g9(r.pose.y) + ',' + format_g9(r.pose.theta) + ',' + format_g9(r.v) + ',';
    s += std::string(to_string(r.state)) + ',' + std::to_string(r.beta) + ',' + std::to_string(r.alpha) + ',';
    if (r.platoon) s += std::to_string(*r.platoon);
    s += '\n';
    return s;
}

inline std::string violations_header() { return "t,kind,id_a,id_b,measured,required\n"; }

inline std::string violation_row(const Violation& v) {
    std::string s = format_g9(v.t) + ',' + to_string(v.kind) + ',' + std::to_string(v.id_a) + ',';
    if (v.id_b) s += std::to_string(*v.id_b);
    s += ',' + format_g9(v.measured) + ',' + format_g9(v.required) + '\n';
    return s;
}

struct RunResult {
    std::vector<Violation> violations;
    std::vector<LaneChangeRecord> lane_changes;
    double min_gap = 0.0;
    std::optional<double> throughput;
    std::string throughput_note;
    std::string trace_csv;
    std::string summary;
    std::size_t vehicles = 0;
};

struct RunOptions {
    bool keep_trace = true;
};

inline std::string summary_text(const ScenarioConfig& c, const RunResult& r) {
    std::ostringstream o;
    std::map<std::string, int> by_kind;
    for (const auto& v : r.violations) ++by_kind[to_string(v.kind)];
    int completed = 0;
    for (const auto& lc : r.lane_changes)
        if (lc.end_slot >= 0) ++completed;
    o << "scenario: " << c.name << "\n"
      << "seed: " << c.seed << "\n"
      << "duration_s: " << format_g9(c.duration) << "\n"
      << "vehicles: " << r.vehicles << "\n"
      << "min_gap_m: " << format_g9(r.min_gap) << "\n"
      << "lane_changes_started: " << r.lane_changes.size() << "\n"
      << "lane_changes_completed: " << completed << "\n"
      << "violations: " << r.violations.size() << "\n";
    for (const auto& [k, n] : by_kind) o << "  " << k << ": " << n << "\n";
    if (c.sensor_x) {
        if (r.throughput) o << "throughput_veh_per_h: " << format_g9(*r.throughput) << "\n";
        else o << "throughput_veh_per_h: unavailable (" << r.throughput_note << ")\n";
    }
    for (const auto& lc : r.lane_changes) {
        o << "lane_change: id=" << lc.id << " " << to_string(lc.kind) << " " << lc.from << "->" << lc.to
          << " start_t=" << format_g9(static_cast<double>(lc.start_slot) * c.h);
        if (lc.end_slot >= 0) o << " end_t=" << format_g9(static_cast<double>(lc.end_slot) * c.h);
        o << " gate=" << (lc.gated ? (lc.gate.passed ? "passed" : "failed") : "disabled") << "\n";
    }
    return o.str();
}

inline RunResult run_scenario(const ScenarioConfig& c, const RunOptions& opt = {}) {
    const Scenario s = build_scenario(c);
    Simulator sim = make_simulator(s);
    RunResult r;
    r.vehicles = s.world.vehicles.size();
    if (opt.keep_trace) {
        r.trace_csv = trace_header();
        sim.set_trace([&](const TraceRecord& t) { r.trace_csv += trace_row(t); }, c.trace_stride);
    }
    sim.run_slots(s.slots);
    r.violations = sim.violations();
    r.lane_changes = sim.lane_changes();
    r.min_gap = sim.min_gap();
    if (c.sensor_x) {
        try {
            r.throughput = sim.throughput(c.window);
        } catch (const WindowBeforeSteadyState& e) {
            r.throughput_note = e.what();
        }
    }
    r.summary = summary_text(c, r);
    return r;
}

inline void write_file(const std::filesystem::path& p, const std::string& text) {
    if (p.has_parent_path()) std::filesystem::create_directories(p.parent_path());
    std::ofstream out(p, std::ios::binary);
    if (!out) throw std::runtime_error("cannot write " + p.string());
    out << text;
}

inline void write_outputs(const ScenarioConfig& c, const RunResult& r, const std::filesystem::path& dir) {
    write_file(dir / c.trace_path, r.trace_csv);
    std::string v = violations_header();
    for (const auto& x : r.violations) v += violation_row(x);
    write_file(dir / c.violations_path, v);
    write_file(dir / c.summary_path, r.summary);
}

// ---- throughput sweep ---------------------------------------------------------

inline ScenarioConfig ring_throughput_config() {
    ScenarioConfig c;
    c.name = "ring-throughput";
    c.mode = TrafficMode::single_lane;
    c.topology = Topology::ring;
    c.length = 100.0;
    c.duration = 120.0;
    c.trace_stride = 100;
    c.auto_join = true;
    c.iv_cruise = 15.0;
    c.hv_v_des = 15.0;
    c.sensor_x = 0.0;
    c.window = 60.0;
    GeneratorSpec g;
    g.count = 20;
    g.iv_fraction = 0.0;
    g.spacing = 5.0;
    g.speed = 5.0;
    c.generator = g;
    return c;
}

struct ThroughputPoint {
    double fraction = 0.0;
    std::int64_t seed = 0;
    double veh_per_h = 0.0;
    std::size_t violations = 0;
};

inline ThroughputPoint throughput_point(ScenarioConfig c, double fraction, std::int64_t seed) {
    c.generator->iv_fraction = fraction;
    c.seed = seed;
    RunOptions opt;
    opt.keep_trace = false;
    const RunResult r = run_scenario(c, opt);
    if (!r.throughput) throw std::runtime_error(r.throughput_note);
    return {fraction, seed, *r.throughput, r.violations.size()};
}

inline std::vector<double> fraction_grid(double lo, double hi, double step) {
    if (!(step > 0.0) || hi < lo) throw std::invalid_argument("bad fraction range");
    std::vector<double> out;
    const long n = std::lround(std::floor((hi - lo) / step + 1e-9));
    for (long k = 0; k <= n; ++k) out.push_back(std::min(hi, lo + static_cast<double>(k) * step));
    return out;
}

inline std::vector<ThroughputPoint> throughput_sweep(const ScenarioConfig& base, const std::vector<double>& fractions,
                                                     std::int64_t seed0, int seeds) {
    const std::size_t n = fractions.size() * static_cast<std::size_t>(seeds);
    return parallel_map<ThroughputPoint>(n, [&](std::size_t i) {
        return throughput_point(base, fractions[i / static_cast<std::size_t>(seeds)],
                                seed0 + static_cast<std::int64_t>(i % static_cast<std::size_t>(seeds)));
    });
}

// ---- randomized suites --------------------------------------------------------

enum class SuiteFamily : std::uint8_t { all_iv, mixed, multi_lane, platoon_lifecycle, adversarial };

inline const char* to_string(SuiteFamily f) {
    static constexpr const char* names[] = {"all-iv", "mixed", "multi-lane", "platoon-lifecycle", "adversarial"};
    return names[static_cast<int>(f)];
}

// Roster and events for one seeded suite instance; the initial world is legal by construction.
inline Scenario suite_scenario(SuiteFamily f, std::uint64_t seed, double duration = 60.0) {
    std::mt19937_64 rng(seed * 0x9E3779B97F4A7C15ull + static_cast<std::uint64_t>(f));
    Scenario s;
    s.sim.seed = seed;
    s.world.h = 0.01;
    s.slots = std::llround(duration / s.world.h);
    const LimitSet iv = LimitSet::intelligent(), hv = LimitSet::human();
    std::uniform_int_distribution<int> count(10, 50);
    std::uniform_real_distribution<double> unit(0.0, 1.0);
    RosterOptions o;
    switch (f) {
        case SuiteFamily::all_iv:
            s.sim.mode = TrafficMode::single_lane;
            o.count = count(rng);
            o.iv_fraction = 1.0;
            break;
        case SuiteFamily::mixed:
            s.sim.mode = TrafficMode::single_lane;
            o.count = count(rng);
            o.iv_fraction = 0.1 * std::uniform_int_distribution<int>(1, 9)(rng);
            break;
        case SuiteFamily::multi_lane:
        case SuiteFamily::adversarial:
            s.sim.mode = TrafficMode::multi_lane;
            s.world.geometry.min_lane = -1;
            s.world.geometry.lane_count = 3;
            o.count = std::uniform_int_distribution<int>(9, 30)(rng);
            o.iv_fraction = 0.1 * std::uniform_int_distribution<int>(1, 9)(rng);
            break;
        case SuiteFamily::platoon_lifecycle:
            s.sim.mode = TrafficMode::single_lane;
            o.count = std::uniform_int_distribution<int>(3, 8)(rng);
            o.iv_fraction = 1.0;
            o.speed = 5.0 + 10.0 * unit(rng);
            break;
    }
    s.world.vehicles = generate_roster(o, iv, hv, s.world.geometry, rng);
    const auto n = s.world.vehicles.size();
    s.setups.resize(n);
    std::uniform_real_distribution<double> cruise(5.0, 0.8 * iv.v_max);
    for (std::size_t i = 0; i < n; ++i) {
        s.setups[i].cruise = cruise(rng);
        s.setups[i].v_des = cruise(rng);
    }
    std::uniform_int_distribution<std::int64_t> when(0, s.slots - 1);
    std::uniform_int_distribution<std::size_t> who(0, n ? n - 1 : 0);

    if (f == SuiteFamily::all_iv || f == SuiteFamily::mixed) {
        // Objective variants per vehicle; the front vehicle always cruises.
        std::uniform_int_distribution<int> kind(0, 3);
        for (std::size_t i = 1; i < n; ++i) {
            ObjectiveOverride ov;
            ov.kind = static_cast<ObjectiveKind>(kind(rng));
            ov.d = 2.5 + 3.0 * unit(rng);
            ov.target = ov.d + 10.0 * unit(rng);
            if (ov.kind != ObjectiveKind::follow) s.setups[i].objective = ov;
        }
        const int braking = std::uniform_int_distribution<int>(1, 4)(rng);
        for (int k = 0; k < braking; ++k) {
            const std::int64_t at = when(rng);
            const VehicleId id = k == 0 ? 0 : static_cast<VehicleId>(who(rng));
            s.events.push_back({at, id, 0.0});
            s.events.push_back({std::min(s.slots - 1, at + 300 + static_cast<std::int64_t>(unit(rng) * 1000)), id,
                                cruise(rng)});
        }
    }
    if (f == SuiteFamily::multi_lane) {
        s.sim.hv.lane_change_rate = 0.05;
        s.sim.iv_lane_change_rate = 0.05;
        const int braking = std::uniform_int_distribution<int>(0, 3)(rng);
        for (int k = 0; k < braking; ++k) {
            const std::int64_t at = when(rng);
            const VehicleId id = static_cast<VehicleId>(who(rng));
            s.events.push_back({at, id, 0.0});
            s.events.push_back({std::min(s.slots - 1, at + 500), id, cruise(rng)});
        }
    }
    if (f == SuiteFamily::adversarial) {
        if (seed % 2 == 0) {
            // Gates off, and every lane-0 vehicle asks for lane 1 at once.
            s.sim.gates_enabled = false;
            for (std::size_t i = 0; i < n; ++i) {
                if (s.world.vehicles[i].beta == 0) s.setups[i].target_lane = 1;
                if (s.world.vehicles[i].beta == -1) s.setups[i].target_lane = 0;
            }
        } else {
            // HVs keep a fraction of their gap and always want to go faster.
            s.sim.hv_rule_scale = 0.2 + 0.3 * unit(rng);
            s.sim.hv.headway = 0.0;
            for (std::size_t i = 0; i < n; ++i) {
                s.setups[i].v_des = iv.v_max;
                s.setups[i].cruise = 3.0;
            }
            s.world.vehicles[0].kind = VehicleKind::intelligent;
            s.world.vehicles[0].limits = iv;
            for (std::size_t i = 1; i < n; ++i) {
                s.world.vehicles[i].kind = VehicleKind::human;
                s.world.vehicles[i].limits = hv;
            }
            for (auto& v : s.world.vehicles) v.v_prev = v.vx_prev = std::min(v.v_prev, 10.0);
            // Respace: speeds changed, so gaps are re-derived from the conservative rule.
            const Capabilities cap = Capabilities::from(iv, hv);
            std::map<int, std::pair<double, double>> tail;
            for (auto& v : s.world.vehicles) {
                auto it = tail.find(v.beta);
                if (it != tail.end())
                    v.pose.x = it->second.first - conservative_requirement(cap, v.v_prev, it->second.second) * 1.2;
                tail[v.beta] = {v.pose.x, v.v_prev};
            }
        }
    }
    if (f == SuiteFamily::platoon_lifecycle) {
        // Everyone joins into one platoon, then the tail and one interior member split off.
        s.sim.auto_join = true;
        for (auto& a : s.setups) a.cruise = s.world.vehicles[0].v_prev;
    }
    return s;
}

struct InvariantResult {
    std::string name;
    std::size_t checked = 0;
    std::vector<std::uint64_t> counterexamples;
    bool expect_failures = false;

    bool passed() const { return expect_failures ? counterexamples.size() == checked : counterexamples.empty(); }
};

struct SuiteReport {
    std::string name;
    std::size_t scenarios = 0;
    std::vector<InvariantResult> invariants;

    bool passed() const {
        return std::all_of(invariants.begin(), invariants.end(), [](const auto& i) { return i.passed(); });
    }
    std::string text() const {
        std::ostringstream o;
        o << "suite " << name << ": " << scenarios << " scenarios\n";
        for (const auto& i : invariants) {
            o << (i.passed() ? "PASS " : "FAIL ") << i.name << " (" << i.checked << " checked";
            if (i.expect_failures) o << ", " << i.counterexamples.size() << " produced violations";
            else o << ", " << i.counterexamples.size() << " counterexamples";
            o << ")";
            if (!i.expect_failures && !i.counterexamples.empty()) {
                o << " seeds:";
                for (std::size_t k = 0; k < std::min<std::size_t>(10, i.counterexamples.size()); ++k)
                    o << " " << i.counterexamples[k];
            }
            o << "\n";
        }
        return o.str();
    }
};

struct ScenarioOutcome {
    std::uint64_t seed = 0;
    std::size_t collisions = 0;
    std::size_t breaches = 0;
    std::size_t iv_attributed = 0;
    std::size_t other = 0;
    std::size_t ungated_iv_changes = 0;
    std::size_t completed_changes = 0;
    std::size_t platoon_joins = 0;
    std::size_t splits = 0;
    double min_gap = 0.0;
};

inline ScenarioOutcome run_suite_scenario(SuiteFamily f, std::uint64_t seed, double duration = 60.0) {
    Scenario s = suite_scenario(f, seed, duration);
    Simulator sim = make_simulator(s);
    ScenarioOutcome out;
    out.seed = seed;
    if (f == SuiteFamily::platoon_lifecycle) {
        sim.run_slots(s.slots / 2);
        sim.set_auto_join(false);
        const Platoon* p = sim.platoons().platoon_of(0);
        if (p && sim.platoons().tasks().empty()) {
            out.platoon_joins = p->members.size();
            const PlatoonId id = p->id;
            std::size_t size = p->members.size();
            sim.platoons().request_split(id, size - 1, sim.world(), sim.slot());
            sim.run_slots(s.slots / 4);
            const Platoon* q = sim.platoons().find(id);
            if (sim.platoons().tasks().empty() && (q ? q->members.size() : 0) < size) {
                ++out.splits;
                if (q && q->members.size() >= 3) {
                    size = q->members.size();
                    sim.platoons().request_split(id, size / 2, sim.world(), sim.slot());
                    sim.run_slots(s.slots - s.slots / 2 - s.slots / 4);
                    q = sim.platoons().find(id);
                    if (sim.platoons().tasks().empty() && (q ? q->members.size() : 0) < size) ++out.splits;
                }
            }
        }
    } else {
        sim.run_slots(s.slots);
    }
    for (const auto& v : sim.violations()) {
        if (v.kind == ViolationKind::collision) ++out.collisions;
        else if (v.kind == ViolationKind::separation_breach) ++out.breaches;
        else ++out.other;
        if (v.kind == ViolationKind::collision || v.kind == ViolationKind::separation_breach) {
            const Vehicle* a = sim.world().find(v.id_a);
            if (!a || a->is_iv()) ++out.iv_attributed;
        }
    }
    for (const auto& lc : sim.lane_changes()) {
        if (lc.end_slot < 0) continue;
        ++out.completed_changes;
        if (lc.kind == VehicleKind::intelligent && (!lc.gated || !lc.gate.passed)) ++out.ungated_iv_changes;
    }
    out.min_gap = sim.min_gap();
    return out;
}

inline std::vector<ScenarioOutcome> run_family(SuiteFamily f, std::uint64_t seed0, std::size_t count,
                                               double duration = 60.0) {
    return parallel_map<ScenarioOutcome>(count, [&](std::size_t i) {
        return run_suite_scenario(f, seed0 + i, duration);
    });
}

inline const std::vector<std::string>& suite_names() {
    static const std::vector<std::string> names = {"safety-randomized", "platoon-lifecycle", "lanechange-gates"};
    return names;
}

inline SuiteReport run_suite(const std::string& name, std::size_t seeds, std::uint64_t seed0 = 1) {
    SuiteReport r;
    r.name = name;
    auto check = [&](const std::string& inv, const std::vector<ScenarioOutcome>& outs,
                     const std::function<bool(const ScenarioOutcome&)>& bad, bool expect = false) {
        InvariantResult ir;
        ir.name = inv;
        ir.expect_failures = expect;
        ir.checked = outs.size();
        for (const auto& o : outs)
            if (bad(o)) ir.counterexamples.push_back(o.seed);
        r.invariants.push_back(ir);
    };
    auto clean = [](const ScenarioOutcome& o) { return o.collisions + o.breaches + o.other > 0; };
    if (name == "safety-randomized") {
        const auto a = run_family(SuiteFamily::all_iv, seed0, seeds);
        const auto m = run_family(SuiteFamily::mixed, seed0, seeds);
        const auto l = run_family(SuiteFamily::multi_lane, seed0, seeds);
        r.scenarios = a.size() + m.size() + l.size();
        check("all-iv single lane: no violations", a, clean);
        check("mixed single lane: no violations", m, clean);
        check("three lanes: no collision or breach attributed to an IV", l,
              [](const ScenarioOutcome& o) { return o.iv_attributed > 0; });
        check("three lanes: every completed IV lane change passed its gate", l,
              [](const ScenarioOutcome& o) { return o.ungated_iv_changes > 0; });
    } else if (name == "platoon-lifecycle") {
        const auto p = run_family(SuiteFamily::platoon_lifecycle, seed0, seeds);
        r.scenarios = p.size();
        check("join, maintain and split cycle completes", p,
              [](const ScenarioOutcome& o) { return o.platoon_joins < 2 || o.splits == 0; });
        check("no violations", p, clean);
        check("min gap at least d_min - a_min h^2/2", p,
              [](const ScenarioOutcome& o) { return o.min_gap < min_platoon_spacing(LimitSet::intelligent()) - 1e-9; });
    } else if (name == "lanechange-gates") {
        const auto l = run_family(SuiteFamily::multi_lane, seed0, seeds);
        const auto adv = run_family(SuiteFamily::adversarial, seed0, seeds, 30.0);
        r.scenarios = l.size() + adv.size();
        check("gates on: every completed IV lane change passed its gate", l,
              [](const ScenarioOutcome& o) { return o.ungated_iv_changes > 0; });
        check("gates on: no collision or breach attributed to an IV", l,
              [](const ScenarioOutcome& o) { return o.iv_attributed > 0; });
        check("adversarial: monitor reports a violation", adv,
              [](const ScenarioOutcome& o) { return o.collisions + o.breaches + o.other > 0; }, true);
    } else {
        throw std::invalid_argument("unknown suite '" + name + "'");
    }
    return r;
}

}  // namespace mixtraffic
