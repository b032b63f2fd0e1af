// Acceptance checks. One PASS/FAIL line per criterion; exit status 1 if any fails.

#include <chrono>
#include <cstdio>
#include <functional>
#include <iostream>
#include <numeric>
#include <random>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "mixtraffic/scenario.hpp"
#include "oracles.hpp"

using namespace mixtraffic;

namespace {

struct Outcome {
    bool passed = false;
    std::string detail;
};

struct Criterion {
    int number;
    const char* name;
    std::function<Outcome(double)> run;
};

std::string fmt(const char* f, double a) {
    char buf[64];
    std::snprintf(buf, sizeof buf, f, a);
    return buf;
}

std::size_t scaled(std::size_t n, double scale) {
    return std::max<std::size_t>(1, static_cast<std::size_t>(std::llround(static_cast<double>(n) * scale)));
}

// ---- 1 -------------------------------------------------------------------------

Outcome formula_fidelity(double scale) {
    constexpr double kRel = 1e-9, kOde = 1e-9, kSeconds = 10.0;
    const auto t0 = std::chrono::steady_clock::now();
    std::mt19937_64 rng(20240101);
    std::uniform_real_distribution<double> vel(0.0, 42.0), ai(-12.0, -6.0), frac(0.0, 1.0), dmin(0.0, 5.0),
        hs(0.001, 0.1), pos(-500.0, 500.0), th(-0.5, 0.5), om(-5.0, 5.0);
    const std::size_t n = scaled(100000, scale);
    double worst_d0s = 0, worst_ds = 0, worst_d1s = 0, worst_vb = 0, worst_arc = 0, worst_ode = 0;
    for (std::size_t k = 0; k < n; ++k) {
        const double v = vel(rng), vl = vel(rng), a = ai(rng), h = hs(rng), dm = dmin(rng);
        const double a_i = a, a_h = a_i + frac(rng) * (-a_i - 0.5);
        worst_d0s = std::max(worst_d0s, oracle::rel_err(d0s(v, vl, a, h, dm), oracle::relative_distance(v, vl, a, h, dm)));
        worst_ds = std::max(worst_ds, oracle::rel_err(ds(v, a, h), oracle::stopping_distance(v, a, h)));
        worst_d1s = std::max(worst_d1s,
                             oracle::rel_err(d1s(v, vl, a_h, a_i, h, dm), oracle::tightened_distance(v, vl, a_h, a_i, h, dm)));

        LimitSet l;
        l.a_min = a;
        l.a_max = 1.0 + 5.0 * frac(rng);
        l.h = h;
        const VelocityBounds b = velocity_bounds(v, l);
        const double lo = v + a * h < 0.0 ? 0.0 : v + a * h;
        const double hi = v + l.a_max * h > l.v_max ? l.v_max : v + l.a_max * h;
        worst_vb = std::max({worst_vb, oracle::rel_err(b.lo, lo), oracle::rel_err(b.hi, hi)});

        const Pose p{pos(rng), pos(rng), th(rng)};
        const double w = k % 10 == 0 ? 0.0 : om(rng);
        const Pose q = step_pose(p, {v, w}, 0.01);
        const oracle::Pose r = oracle::arc_update({p.x, p.y, p.theta}, v, w, 0.01);
        worst_arc = std::max({worst_arc, oracle::rel_err(q.x, r.x), oracle::rel_err(q.y, r.y),
                              oracle::rel_err(q.theta, r.theta)});
        if (k % 100 == 0) {
            const oracle::Pose o = oracle::integrate_unicycle({p.x, p.y, p.theta}, v, w, 0.01, 1e-5);
            worst_ode = std::max({worst_ode, std::abs(q.x - o.x), std::abs(q.y - o.y)});
        }
    }
    const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    const double worst = std::max({worst_d0s, worst_ds, worst_d1s, worst_vb, worst_arc});
    Outcome o;
    o.passed = worst <= kRel && worst_ode <= kOde && secs < kSeconds;
    std::ostringstream d;
    d << n << " inputs; max rel err d0s " << fmt("%.2g", worst_d0s) << ", ds " << fmt("%.2g", worst_ds) << ", d1s "
      << fmt("%.2g", worst_d1s) << ", velocity_bounds " << fmt("%.2g", worst_vb) << ", step_pose "
      << fmt("%.2g", worst_arc) << " (tol 1e-9); step_pose vs ODE " << fmt("%.2g", worst_ode)
      << " m over " << (n + 99) / 100 << " inputs (tol 1e-9 m); " << fmt("%.1f", secs) << " s (limit 10 s)";
    o.detail = d.str();
    return o;
}

// ---- 2, 3, 4, 9 ----------------------------------------------------------------

Outcome no_violations(SuiteFamily f, std::size_t count) {
    const auto t0 = std::chrono::steady_clock::now();
    const auto outs = run_family(f, 1, count);
    const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    std::size_t collisions = 0, breaches = 0, other = 0;
    std::vector<std::uint64_t> bad;
    for (const auto& o : outs) {
        collisions += o.collisions;
        breaches += o.breaches;
        other += o.other;
        if (o.collisions + o.breaches > 0) bad.push_back(o.seed);
    }
    Outcome o;
    o.passed = bad.empty();
    std::ostringstream d;
    d << outs.size() << " scenarios x 60 s: " << collisions << " collisions, " << breaches << " breaches";
    if (other) d << " (" << other << " other violations)";
    for (std::size_t k = 0; k < std::min<std::size_t>(bad.size(), 10); ++k) d << (k ? " " : "; seeds: ") << bad[k];
    d << "; " << fmt("%.0f", secs) << " s (target 300 s, informational)";
    o.detail = d.str();
    return o;
}

Outcome lane_change_suite(double scale) {
    const auto t0 = std::chrono::steady_clock::now();
    const auto outs = run_family(SuiteFamily::multi_lane, 1, scaled(500, scale));
    const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    std::size_t iv_attr = 0, ungated = 0, completed = 0;
    std::vector<std::uint64_t> bad;
    for (const auto& o : outs) {
        iv_attr += o.iv_attributed;
        ungated += o.ungated_iv_changes;
        completed += o.completed_changes;
        if (o.iv_attributed + o.ungated_iv_changes > 0) bad.push_back(o.seed);
    }
    Outcome o;
    o.passed = bad.empty() && completed > 0;
    std::ostringstream d;
    d << outs.size() << " three-lane scenarios: " << iv_attr << " IV-attributed collisions/breaches, " << completed
      << " completed lane changes, " << ungated << " IV changes without a passing gate at initiation";
    for (std::size_t k = 0; k < std::min<std::size_t>(bad.size(), 10); ++k) d << (k ? " " : "; seeds: ") << bad[k];
    d << "; " << fmt("%.0f", secs) << " s";
    o.detail = d.str();
    return o;
}

Outcome monitor_soundness(double scale) {
    const auto outs = run_family(SuiteFamily::adversarial, 1, scaled(100, scale), 30.0);
    std::size_t flagged = 0;
    std::vector<std::uint64_t> silent;
    for (const auto& o : outs) {
        if (o.collisions + o.breaches + o.other > 0) ++flagged;
        else silent.push_back(o.seed);
    }
    Outcome o;
    o.passed = flagged == outs.size();
    std::ostringstream d;
    d << flagged << "/" << outs.size() << " adversarial scenarios produced at least one violation";
    for (std::size_t k = 0; k < std::min<std::size_t>(silent.size(), 10); ++k) d << (k ? " " : "; silent seeds: ") << silent[k];
    o.detail = d.str();
    return o;
}

// ---- 5 -------------------------------------------------------------------------

Outcome fallback_feasibility(double scale) {
    constexpr double kTol = 1e-9;
    const std::size_t target = scaled(10000, scale);
    const SuiteFamily families[] = {SuiteFamily::all_iv, SuiteFamily::mixed, SuiteFamily::multi_lane};
    struct Tally {
        std::size_t states = 0, checks = 0, failures = 0;
        double worst = std::numeric_limits<double>::infinity();
    };
    const std::size_t per_scenario = 20;
    const std::size_t scenarios = (target + per_scenario - 1) / per_scenario;
    const auto tallies = parallel_map<Tally>(scenarios, [&](std::size_t i) {
        Tally t;
        const std::uint64_t seed = 50000 + i;
        Scenario s = suite_scenario(families[i % 3], seed, 60.0);
        Simulator sim = make_simulator(s);
        std::mt19937_64 rng(seed);
        std::uniform_int_distribution<int> gap(1, 300);
        for (std::size_t k = 0; k < per_scenario; ++k) {
            sim.run_slots(gap(rng));
            if (!sim.violations().empty()) break;
            ++t.states;
            for (const auto& v : sim.world().vehicles) {
                if (!v.is_iv()) continue;
                const MpcProblem p = sim.hard_constraints(v.id);
                const MpcPlan fb = fallback_brake(p.v_prev, p.limits, p.horizon);
                std::vector<double> vel;
                double box = std::numeric_limits<double>::infinity();
                double prev = p.v_prev;
                for (const auto& c : fb.controls) {
                    const VelocityBounds b = velocity_bounds(prev, p.limits);
                    box = std::min({box, c.v - b.lo, b.hi - c.v});
                    vel.push_back(c.v);
                    prev = c.v;
                }
                const double slack = std::min(box, constraint_slack(p, vel));
                ++t.checks;
                t.worst = std::min(t.worst, slack);
                if (slack < -kTol) ++t.failures;
            }
        }
        return t;
    });
    Tally total;
    for (const auto& t : tallies) {
        total.states += t.states;
        total.checks += t.checks;
        total.failures += t.failures;
        total.worst = std::min(total.worst, t.worst);
    }
    Outcome o;
    o.passed = total.failures == 0 && total.states >= target * 9 / 10;
    std::ostringstream d;
    d << total.states << " monitor-clean states (" << total.checks << " IV checks): " << total.failures
      << " with braking slack < -1e-9; min slack " << fmt("%.3g", total.worst) << " m";
    o.detail = d.str();
    return o;
}

// ---- 6 -------------------------------------------------------------------------

std::vector<double> ranks(const std::vector<double>& x) {
    std::vector<std::size_t> idx(x.size());
    std::iota(idx.begin(), idx.end(), 0);
    std::sort(idx.begin(), idx.end(), [&](std::size_t a, std::size_t b) { return x[a] < x[b]; });
    std::vector<double> r(x.size());
    for (std::size_t i = 0; i < idx.size();) {
        std::size_t j = i;
        while (j + 1 < idx.size() && x[idx[j + 1]] == x[idx[i]]) ++j;
        for (std::size_t k = i; k <= j; ++k) r[idx[k]] = 0.5 * static_cast<double>(i + j);
        i = j + 1;
    }
    return r;
}

double spearman(const std::vector<double>& a, const std::vector<double>& b) {
    const auto ra = ranks(a), rb = ranks(b);
    const double n = static_cast<double>(a.size());
    const double ma = std::accumulate(ra.begin(), ra.end(), 0.0) / n, mb = std::accumulate(rb.begin(), rb.end(), 0.0) / n;
    double sab = 0, saa = 0, sbb = 0;
    for (std::size_t i = 0; i < ra.size(); ++i) {
        sab += (ra[i] - ma) * (rb[i] - mb);
        saa += (ra[i] - ma) * (ra[i] - ma);
        sbb += (rb[i] - mb) * (rb[i] - mb);
    }
    return sab / std::sqrt(saa * sbb);
}

Outcome ring_throughput(double scale) {
    constexpr double kRho = 0.9;
    const int seeds = static_cast<int>(scaled(10, scale));
    const ScenarioConfig base = ring_throughput_config();
    const std::vector<double> grid = fraction_grid(0.0, 1.0, 0.1);
    std::vector<ThroughputPoint> pts;
    std::string error;
    try {
        pts = throughput_sweep(base, grid, 1, seeds);
    } catch (const std::exception& e) {
        error = e.what();
    }
    Outcome o;
    if (!error.empty()) {
        o.detail = "throughput unavailable: " + error;
        return o;
    }
    std::vector<double> mean(grid.size(), 0.0);
    std::size_t violations = 0;
    for (std::size_t i = 0; i < pts.size(); ++i) {
        mean[i / static_cast<std::size_t>(seeds)] += pts[i].veh_per_h / seeds;
        violations += pts[i].violations;
    }
    const double rho = spearman(grid, mean);
    bool above = true;
    for (std::size_t i = 0; i < grid.size(); ++i)
        if (grid[i] >= 0.8 - 1e-12) above = above && mean[i] > mean[0];
    o.passed = rho > kRho && above && base.platoon_spacing == 2.5;
    std::ostringstream d;
    d << "ring " << base.length << " m, " << base.generator->count << " vehicles, " << seeds
      << " seeds per fraction; mean veh/h:";
    for (double m : mean) d << " " << fmt("%.0f", m);
    d << "; Spearman rho " << fmt("%.4f", rho) << " (need > 0.9); fractions >= 0.8 above all-HV: " << (above ? "yes" : "no");
    if (violations) d << "; " << violations << " violations";
    o.detail = d.str();
    return o;
}

// ---- 7 -------------------------------------------------------------------------

Outcome fig5_order(double) {
    const ScenarioConfig c = load_config(std::string(SCENARIO_DIR) + "/fig5.toml");
    const Scenario s = build_scenario(c);
    Simulator sim = make_simulator(s);
    constexpr VehicleId kA = 0, kHv = 2, kE = 4;
    std::map<VehicleId, std::int64_t> passed_by_hv, left_wait;
    std::map<VehicleId, bool> iv_blocked;
    bool wait_held = true;
    for (std::int64_t k = 0; k < s.slots; ++k) {
        sim.step();
        const WorldState& w = sim.world();
        const Vehicle* hv = w.find(kHv);
        for (VehicleId id : {kA, kE}) {
            const Vehicle* v = w.find(id);
            if (!v || !hv) continue;
            if (!passed_by_hv.count(id) && hv->pose.x > v->pose.x) passed_by_hv[id] = sim.slot();
            if (v->state == ProtocolState::wait && !passed_by_hv.count(id))
                if (const GateReport* g = sim.last_gate(id))
                    if (const GateCondition* iv = g->find("iv"); iv && iv->margin < 0.0) iv_blocked[id] = true;
            if (!left_wait.count(id) && v->state != ProtocolState::wait) {
                left_wait[id] = sim.slot();
                if (v->state != ProtocolState::processing) wait_held = false;
            }
        }
    }
    std::map<VehicleId, const LaneChangeRecord*> rec;
    for (const auto& lc : sim.lane_changes()) rec.emplace(lc.id, &lc);
    std::ostringstream d;
    bool ok = wait_held && sim.violations().empty();
    for (VehicleId id : {kA, kE}) {
        const auto it = rec.find(id);
        if (it == rec.end() || !passed_by_hv.count(id)) {
            ok = false;
            d << "vehicle " << id << ": no lane change or never passed; ";
            continue;
        }
        const LaneChangeRecord& lc = *it->second;
        const GateCondition* iv = lc.gate.find("iv");
        const bool after = lc.start_slot >= passed_by_hv[id];
        const bool margin = iv && iv->margin > 0.0;
        ok = ok && after && margin && iv_blocked[id] && lc.gated && lc.gate.passed && lc.end_slot >= 0;
        d << "lane " << (id == kA ? "1" : "-1") << " leader: passed by HV at t=" << fmt("%.2f", passed_by_hv[id] * c.h)
          << " s, (iv) negative before that: " << (iv_blocked[id] ? "yes" : "no") << ", starts t="
          << fmt("%.2f", lc.start_slot * c.h) << " s, (iv) margin "
          << (iv ? fmt("%.2f", iv->margin) : std::string("n/a")) << " m, completes "
          << (lc.end_slot >= 0 ? "t=" + fmt("%.2f", lc.end_slot * c.h) + " s" : std::string("never")) << "; ";
    }
    const auto hit = rec.find(kHv);
    if (hit == rec.end()) {
        ok = false;
        d << "HV: no lane change; ";
    } else {
        const LaneChangeRecord& lc = *hit->second;
        ok = ok && lc.gated && lc.gate.passed && lc.end_slot >= 0;
        d << "lane 0 HV: gate " << (lc.gate.passed ? "passed" : "failed") << " at t=" << fmt("%.2f", lc.start_slot * c.h)
          << " s, completes " << (lc.end_slot >= 0 ? "t=" + fmt("%.2f", lc.end_slot * c.h) + " s" : std::string("never"))
          << "; ";
    }
    d << sim.violations().size() << " violations";
    if (!wait_held) d << "; a leader left Wait without Processing";
    return {ok, d.str()};
}

// ---- 8 -------------------------------------------------------------------------

Outcome lemma_two(double scale) {
    constexpr double kW = 3.5;
    const std::size_t target = scaled(100, scale);
    std::mt19937_64 rng(77);
    std::uniform_real_distribution<double> vel(0.0, 42.0), acc(-10.0, -4.0);
    struct Sample {
        double v;
        LimitSet l;
        double T;
    };
    std::vector<Sample> samples;
    std::size_t drawn = 0;
    while (samples.size() < target && drawn < 1000000) {
        ++drawn;
        LimitSet l;
        l.a_min = acc(rng);
        const double v = vel(rng);
        if (const auto T = tmin_bound(v, l, kW)) samples.push_back({v, l, *T});
    }
    const auto slots = parallel_map<std::optional<int>>(samples.size(), [&](std::size_t i) {
        return simulate_lane_change(samples[i].v, samples[i].l, kW);
    });
    std::size_t bad = 0;
    double worst_ratio = 0.0;
    for (std::size_t i = 0; i < samples.size(); ++i) {
        if (!slots[i]) {
            ++bad;
            continue;
        }
        const double t = *slots[i] * samples[i].l.h;
        worst_ratio = std::max(worst_ratio, t / samples[i].T);
        if (t > samples[i].T) ++bad;
    }
    Outcome o;
    o.passed = bad == 0 && samples.size() == target;
    std::ostringstream d;
    d << samples.size() << " states with the bound defined (of " << drawn << " drawn): " << bad
      << " exceed T = v/|a_min|; max simulated/T " << fmt("%.3f", worst_ratio);
    o.detail = d.str();
    return o;
}

// ---- 10 ------------------------------------------------------------------------

Outcome determinism(double) {
    std::ostringstream d;
    bool ok = true;
    for (const char* name : {"fig4.toml", "fig5.toml", "single-lane.toml"}) {
        const ScenarioConfig c = load_config(std::string(SCENARIO_DIR) + "/" + name);
        const RunResult a = run_scenario(c), b = run_scenario(c);
        const bool same = a.trace_csv == b.trace_csv && !a.trace_csv.empty();
        ok = ok && same;
        d << name << " " << (same ? "identical" : "DIFFERENT") << " (" << a.trace_csv.size() << " bytes); ";
    }
    return {ok, d.str()};
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"Acceptance checks"};
    double scale = 1.0;
    std::vector<int> only;
    app.add_option("--scale", scale, "Scale sample counts (development runs only)")->check(CLI::PositiveNumber);
    app.add_option("--only", only, "Run only these criteria")->delimiter(',');
    CLI11_PARSE(app, argc, argv);

    const std::vector<Criterion> criteria = {
        {1, "formula fidelity", formula_fidelity},
        {2, "all-IV single-lane safety",
         [](double s) { return no_violations(SuiteFamily::all_iv, scaled(1000, s)); }},
        {3, "mixed single-lane safety", [](double s) { return no_violations(SuiteFamily::mixed, scaled(1000, s)); }},
        {4, "three-lane safety and gated lane changes", lane_change_suite},
        {5, "braking fallback feasible in clean states", fallback_feasibility},
        {6, "ring throughput rises with IV fraction", ring_throughput},
        {7, "three-lane lane-change ordering", fig5_order},
        {8, "lane change finishes within the lemma bound", lemma_two},
        {9, "monitor flags adversarial scenarios", monitor_soundness},
        {10, "deterministic traces", determinism},
    };
    if (scale != 1.0) std::cout << "note: sample counts scaled by " << scale << "\n";
    int failed = 0;
    for (const auto& c : criteria) {
        if (!only.empty() && std::find(only.begin(), only.end(), c.number) == only.end()) continue;
        const auto t0 = std::chrono::steady_clock::now();
        Outcome o;
        try {
            o = c.run(scale);
        } catch (const std::exception& e) {
            o = {false, std::string("exception: ") + e.what()};
        }
        const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
        if (!o.passed) ++failed;
        std::cout << (o.passed ? "PASS" : "FAIL") << " " << c.number << " " << c.name << ": " << o.detail << " ["
                  << fmt("%.1f", secs) << " s]" << std::endl;
    }
    return failed ? 1 : 0;
}
