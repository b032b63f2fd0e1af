#pragma once

#include <cmath>
#include <limits>
#include <map>
#include <mutex>
#include <optional>
#include <string_view>
#include <tuple>
#include <vector>

#include "core_types.hpp"
#include "kinematics.hpp"
#include "mpc.hpp"
#include "safety_sets.hpp"
#include "separation.hpp"

namespace mixtraffic {

enum class TrafficMode : std::uint8_t { single_lane, multi_lane };

// Braking capabilities shared by all rules of one scenario.
struct Capabilities {
    double a_i = -8.0;
    double a_h = -6.0;
    double h = 0.01;
    double d_min = 2.0;

    static Capabilities from(const LimitSet& iv, const LimitSet& hv) { return {iv.a_min, hv.a_min, iv.h, iv.d_min}; }

    SeparationRule relative(double a) const { return SeparationRule::relative(a, h, d_min); }
    SeparationRule stopping() const { return SeparationRule::stopping(a_h, h, d_min, a_i); }
    SeparationRule tightened(double a_follow, double a_lead) const {
        return SeparationRule::tightened(a_follow, a_lead, h, d_min);
    }
};

// What the follower knows about itself when choosing a rule.
struct FollowerContext {
    double a_eff = -8.0;
    std::optional<PlatoonId> platoon;
    // Frozen sets of a Processing IV.
    const SafetySets* frozen = nullptr;
};

// Gap rule the follower enforces against `lead` (which brakes no harder than a_lead).
inline SeparationRule following_rule(TrafficMode mode, const Vehicle& f, const FollowerContext& fc, const Vehicle& lead,
                                     double a_lead, const Capabilities& cap) {
    if (mode == TrafficMode::single_lane) {
        const bool mate = fc.platoon && lead.platoon && lead.platoon->platoon == *fc.platoon;
        if (fc.a_eff > a_lead && !mate) return cap.tightened(fc.a_eff, a_lead);
        return cap.relative(fc.a_eff);
    }
    if (f.is_hv()) return cap.stopping();
    if (f.state == ProtocolState::processing) {
        const bool unchanged = fc.frozen && lead.is_iv() && contains(fc.frozen->c_plus_i1, lead.id) &&
                               !contains(fc.frozen->c_star_i2, lead.id) && lead.state != ProtocolState::processing;
        return unchanged ? cap.relative(cap.a_i) : cap.stopping();
    }
    if (lead.is_hv() || treated_as_processing(lead)) return cap.stopping();
    return cap.relative(cap.a_i);
}

// The braking prediction is only sound for leads that stay on their lane; stopping rules
// do not depend on the lead's speed, so those leads are held at their current position.
inline bool frozen_prediction(const SeparationRule& r) { return r.form == SeparationForm::stopping; }

inline double hv_single_lane_separation(const Vehicle& hv, const Vehicle& lead) {
    return d0s(hv.v_prev, lead.vx_prev, hv.limits.a_min, hv.limits.h, hv.limits.d_min);
}

struct FollowingRequirement {
    const Vehicle* lead = nullptr;
    SeparationRule rule{};
    bool yield = false;
};

// Lead and gap rule for a Free or Wait IV in multi-lane traffic.
inline FollowingRequirement iv_following_requirement(const Vehicle& iv, const WorldState& world,
                                                     const Capabilities& cap) {
    FollowingRequirement r;
    const Vehicle* same = nearest_lead(iv, world);
    const Vehicle* yielder = nearest_ahead_if(iv, world, [&](const Vehicle& c) {
        return planned_lanes(c).contains(iv.beta) && treated_as_processing(c);
    });
    const Vehicle* lead = same;
    if (yielder && (!same || relative_x(world.road, iv.pose.x, yielder->pose.x) <
                                 relative_x(world.road, iv.pose.x, same->pose.x)))
        lead = yielder;
    if (!lead) return r;
    r.lead = lead;
    r.yield = treated_as_processing(*lead);
    FollowerContext fc;
    fc.a_eff = cap.a_i;
    r.rule = following_rule(TrafficMode::multi_lane, iv, fc, *lead, lead->limits.a_min, cap);
    return r;
}

struct GateCondition {
    const char* name = "";
    bool ok = true;
    double margin = std::numeric_limits<double>::infinity();
};

struct GateReport {
    bool passed = true;
    std::vector<GateCondition> conditions;
    std::optional<double> T_used;

    void add(const char* name, double margin) {
        for (auto& c : conditions)
            if (std::string_view(c.name) == name) {
                c.margin = std::min(c.margin, margin);
                c.ok = c.margin >= 0.0;
                passed = passed && c.ok;
                return;
            }
        conditions.push_back({name, margin >= 0.0, margin});
        passed = passed && margin >= 0.0;
    }
    void vacuous(const char* name) {
        for (const auto& c : conditions)
            if (std::string_view(c.name) == name) return;
        conditions.push_back({name, true, std::numeric_limits<double>::infinity()});
    }
    const GateCondition* find(const char* name) const {
        for (const auto& c : conditions)
            if (std::string_view(c.name) == name) return &c;
        return nullptr;
    }
};

inline double next_speed_high(const Vehicle& v) { return std::min(v.limits.v_max, v.v_prev + v.limits.a_max * v.limits.h); }

// Margin for a follower that planned this slot without knowing about the new lead.
inline double lookahead_margin(double gap, const Vehicle& follower, const SeparationRule& rule) {
    const double vf = next_speed_high(follower);
    return gap - follower.limits.h * vf - rule(vf, 0.0);
}

inline GateReport hv_lane_change_gate(const Vehicle& hv, const WorldState& world, const Capabilities& cap) {
    GateReport r;
    const int target = hv.alpha;
    const Vehicle* j1 = nearest_ahead_if(hv, world, [&](const Vehicle& c) { return lane_membership(c).contains(target); });
    const Vehicle* ci = nearest_behind_if(hv, world, [&](const Vehicle& c) { return lane_membership(c).contains(target); });
    const SeparationRule rule = cap.stopping();
    if (j1) r.add("i", world.road.forward_gap(hv.pose.x, j1->pose.x) - rule(hv.v_prev, 0.0));
    else r.vacuous("i");
    if (ci) r.add("ii", lookahead_margin(world.road.forward_gap(ci->pose.x, hv.pose.x), *ci, rule));
    else r.vacuous("ii");
    return r;
}

// Upper bound on the lane-change duration when its preconditions hold.
inline std::optional<double> tmin_bound(double v, const LimitSet& l, double W_l) {
    if (!(v > 0.0)) return std::nullopt;
    const double d = ds(v, l.a_min, l.h);
    if (!(d > 3.0 * W_l / std::sqrt(2.0))) return std::nullopt;
    const double c = std::clamp(std::cos(d / l.h), -1.0, 1.0);
    if (!(d * d * (1.0 - c) > 3.0 * W_l * W_l)) return std::nullopt;
    return v / -l.a_min;
}

// Slots for a lone vehicle at lane centre to complete a change of one lane at speed v.
inline std::optional<int> simulate_lane_change(double v, const LimitSet& l, double W_l, int horizon = 20,
                                               int max_slots = 6000) {
    LaneGeometry g;
    g.min_lane = 0;
    g.lane_count = 2;
    g.lane_width = W_l;
    Vehicle ego;
    ego.limits = l;
    ego.v_prev = v;
    ego.vx_prev = v;
    ego.beta = 0;
    ego.alpha = 1;
    ego.state = ProtocolState::processing;
    const double omega_cap = (l.theta_max - l.theta_min) / (20.0 * l.h);
    for (int slot = 1; slot <= max_slots; ++slot) {
        MpcProblem p;
        p.horizon = horizon;
        p.x = ego.pose.x;
        p.v_prev = ego.v_prev;
        p.limits = l;
        p.pose = ego.pose;
        p.lane_target_y = g.center_y(1);
        p.corridor_lo = g.center_y(0) - W_l / 2.0;
        p.corridor_hi = g.center_y(1) + W_l / 2.0;
        p.omega_cap = omega_cap;
        p.cruise_speed = v;
        const MpcPlan plan = plan_lane_change(p);
        const Control c = plan.controls.front();
        ego.pose = step_pose(ego.pose, c, l.h);
        ego.v_prev = c.v;
        if (lane_change_complete(ego, g)) return slot;
    }
    return std::nullopt;
}

// Duration used by condition (iv): the lemma bound when it applies, otherwise the simulated
// duration at the lower edge of a 0.5 m/s speed bucket times 1.5.
class LaneChangeDurations {
public:
    static constexpr double kBucket = 0.5;
    static constexpr double kSafety = 1.5;

    double fallback(double v, const LimitSet& l, double W_l, int horizon) {
        const long bucket = static_cast<long>(std::floor(v / kBucket));
        if (bucket <= 0) return std::numeric_limits<double>::infinity();
        const auto key = std::make_tuple(bucket, W_l, l.h, l.a_min, l.a_max, l.theta_max, l.theta_min, horizon);
        std::lock_guard<std::mutex> lock(mutex_);
        auto it = cache_.find(key);
        if (it != cache_.end()) return it->second;
        const auto slots = simulate_lane_change(bucket * kBucket, l, W_l, horizon);
        const double T = slots ? *slots * l.h * kSafety : std::numeric_limits<double>::infinity();
        cache_.emplace(key, T);
        return T;
    }

    double duration(double v, const LimitSet& l, double W_l, int horizon) {
        if (auto T = tmin_bound(v, l, W_l)) return *T;
        return fallback(v, l, W_l, horizon);
    }

    static LaneChangeDurations& shared() {
        static LaneChangeDurations d;
        return d;
    }

private:
    std::mutex mutex_;
    std::map<std::tuple<long, double, double, double, double, double, double, int>, double> cache_;
};

struct IvGateOptions {
    int horizon = 20;
    TrafficMode mode = TrafficMode::multi_lane;
};

inline GateReport iv_lane_change_gate(const Vehicle& iv, const SafetySets& sets, const WorldState& world,
                                      const Capabilities& cap, const IvGateOptions& opt = {}) {
    GateReport r;
    const Road& road = world.road;
    const double x = iv.pose.x;
    const double v = iv.v_prev;
    const SeparationRule rel = cap.relative(cap.a_i);
    const SeparationRule stop = cap.stopping();

    // (i) binding Free IV ahead.
    const Vehicle* cj = nullptr;
    double cj_key = 0.0;
    for (VehicleId id : sets.c_plus_i1) {
        const Vehicle* c = world.find(id);
        const double k = relative_x(road, x, c->pose.x) + ds(c->vx_prev, cap.a_i, cap.h);
        if (!cj || k < cj_key || (k == cj_key && c->id < cj->id)) {
            cj = c;
            cj_key = k;
        }
    }
    if (cj) r.add("i", relative_x(road, x, cj->pose.x) - rel(v, cj->vx_prev));
    else r.vacuous("i");

    // (ii) nearest of C*_I2 and the HVs ahead.
    const Vehicle* cl = nullptr;
    auto consider = [&](VehicleId id) {
        const Vehicle* c = world.find(id);
        const double d = relative_x(road, x, c->pose.x);
        if (!cl || d < relative_x(road, x, cl->pose.x)) cl = c;
    };
    for (VehicleId id : sets.c_star_i2) consider(id);
    for (VehicleId id : sets.c_plus_h) consider(id);
    if (cl) r.add("ii", relative_x(road, x, cl->pose.x) - stop(v, 0.0));
    else r.vacuous("ii");

    // (iii) IVs behind, with one slot of their travel.
    for (VehicleId id : sets.c_minus_i) {
        const Vehicle* c = world.find(id);
        r.add("iii", lookahead_margin(-relative_x(road, x, c->pose.x), *c, stop));
    }
    r.vacuous("iii");

    // (iv) HVs behind.
    if (!sets.c_minus_h.empty()) {
        const double T = LaneChangeDurations::shared().duration(v, iv.limits, world.geometry.lane_width, opt.horizon);
        r.T_used = T;
        const double vmax = iv.limits.v_max;
        for (VehicleId id : sets.c_minus_h) {
            const Vehicle* c = world.find(id);
            const double need = std::isfinite(T) ? vmax * T + stop(vmax, 0.0) : std::numeric_limits<double>::infinity();
            r.add("iv", -relative_x(road, x, c->pose.x) - need);
        }
    }
    r.vacuous("iv");

    // (v) nearest lane members ahead in both lanes, under the rules of a Processing IV.
    Vehicle processing = iv;
    processing.state = ProtocolState::processing;
    FollowerContext fc;
    fc.a_eff = cap.a_i;
    fc.frozen = &sets;
    for (int lane : planned_lanes(iv)) {
        const Vehicle* lead =
            nearest_ahead_if(iv, world, [&](const Vehicle& c) { return lane_membership(c).contains(lane); });
        if (!lead) continue;
        const SeparationRule rule = following_rule(opt.mode, processing, fc, *lead, lead->limits.a_min, cap);
        r.add("v", relative_x(road, x, lead->pose.x) - rule(v, lead->vx_prev));
    }
    r.vacuous("v");
    return r;
}

struct GateCandidate {
    VehicleId id = 0;
    const SafetySets* sets = nullptr;
    bool passed = false;
};

// Among contenders that passed in the same slot, one that has a passing contender in its
// C+_I2 defers to it (co-located pairs: lower id goes first). Returns the ids allowed to initiate.
inline std::vector<VehicleId> arbitrate_initiations(const std::vector<GateCandidate>& candidates) {
    std::vector<VehicleId> out;
    for (const auto& c : candidates) {
        if (!c.passed) continue;
        bool defer = false;
        for (const auto& o : candidates)
            if (o.id != c.id && o.passed && contains(c.sets->c_plus_i2, o.id) &&
                !(contains(o.sets->c_plus_i2, c.id) && c.id < o.id))
                defer = true;
        if (!defer) out.push_back(c.id);
    }
    return out;
}

}  // namespace mixtraffic
