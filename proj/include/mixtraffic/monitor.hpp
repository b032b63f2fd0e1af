#pragma once

#include <limits>
#include <optional>
#include <set>
#include <tuple>
#include <unordered_map>
#include <vector>

#include "protocols.hpp"
#include "safety_sets.hpp"

namespace mixtraffic {

enum class ViolationKind : std::uint8_t { collision, separation_breach, illegal_transition, infeasible_without_fallback };

inline const char* to_string(ViolationKind k) {
    switch (k) {
        case ViolationKind::collision: return "Collision";
        case ViolationKind::separation_breach: return "SeparationBreach";
        case ViolationKind::illegal_transition: return "IllegalTransition";
        case ViolationKind::infeasible_without_fallback: return "InfeasibleWithoutFallback";
    }
    return "?";
}

// id_a is the vehicle whose rule or protocol bound was violated.
struct Violation {
    double t = 0.0;
    ViolationKind kind = ViolationKind::collision;
    VehicleId id_a = 0;
    std::optional<VehicleId> id_b;
    double measured = 0.0;
    double required = 0.0;
};

struct MonitorInput {
    TrafficMode mode = TrafficMode::multi_lane;
    Capabilities cap{};
    // Indexed like the after-state vehicles.
    const std::vector<FollowerContext>* contexts = nullptr;
    double tolerance = 1e-9;
};

struct MonitorResult {
    std::vector<Violation> violations;
    double min_gap = std::numeric_limits<double>::infinity();
};

inline MonitorResult monitor(const WorldState& before, const WorldState& after, const MonitorInput& in) {
    MonitorResult out;
    const double t = after.time();
    std::unordered_map<VehicleId, std::size_t> bidx;
    for (std::size_t i = 0; i < before.vehicles.size(); ++i) bidx[before.vehicles[i].id] = i;
    auto was_member = [&](const Vehicle& v, int lane) {
        auto it = bidx.find(v.id);
        return it != bidx.end() && lane_membership(before.vehicles[it->second]).contains(lane);
    };
    std::set<std::tuple<int, VehicleId, VehicleId>> seen;
    auto report = [&](ViolationKind k, VehicleId a, VehicleId b, double measured, double required) {
        if (!seen.insert({static_cast<int>(k), a, b}).second) return;
        out.violations.push_back({t, k, a, b, measured, required});
    };

    const LaneIndex ia(after);
    const LaneIndex ib(before);
    const LaneGeometry& g = after.geometry;
    for (int lane = g.min_lane; lane <= g.max_lane(); ++lane) {
        // Pairs that were adjacent before the slot must not have passed through each other.
        for (std::size_t bi : ib.members(lane)) {
            const long bl = ib.lead(lane, bi);
            if (bl < 0) continue;
            const Vehicle& Fb = before.vehicles[bi];
            const Vehicle& Lb = before.vehicles[static_cast<std::size_t>(bl)];
            const Vehicle* Fa = after.find(Fb.id);
            const Vehicle* La = after.find(Lb.id);
            if (!Fa || !La) continue;
            if (!lane_membership(*Fa).contains(lane) || !lane_membership(*La).contains(lane)) continue;
            const double g0 = before.road.forward_gap(Fb.pose.x, Lb.pose.x);
            const double g1 = g0 + (La->pose.x - Lb.pose.x) - (Fa->pose.x - Fb.pose.x);
            if (g1 <= 0.0) {
                out.min_gap = std::min(out.min_gap, g1);
                report(ViolationKind::collision, Fb.id, Lb.id, g1, 0.0);
            }
        }
        for (std::size_t i : ia.members(lane)) {
            const long l = ia.lead(lane, i);
            if (l < 0) continue;
            const Vehicle& F = after.vehicles[i];
            const Vehicle& L = after.vehicles[static_cast<std::size_t>(l)];
            const double gap = after.road.forward_gap(F.pose.x, L.pose.x);
            out.min_gap = std::min(out.min_gap, gap);
            const bool lead_entered = !was_member(L, lane) && was_member(F, lane);
            const VehicleId a = lead_entered ? L.id : F.id;
            const VehicleId b = lead_entered ? F.id : L.id;
            if (gap <= 0.0) {
                report(ViolationKind::collision, a, b, gap, 0.0);
                continue;
            }
            FollowerContext fc;
            double a_lead = L.limits.a_min;
            if (in.contexts) {
                fc = (*in.contexts)[i];
                a_lead = (*in.contexts)[static_cast<std::size_t>(l)].a_eff;
            } else {
                fc.a_eff = F.limits.a_min;
                if (F.platoon) fc.platoon = F.platoon->platoon;
            }
            const SeparationRule rule = following_rule(in.mode, F, fc, L, a_lead, in.cap);
            const double req = rule(F.v_prev, L.vx_prev);
            if (gap < req - in.tolerance) report(ViolationKind::separation_breach, a, b, gap, req);
        }
    }

    for (const auto& v : after.vehicles) {
        auto it = bidx.find(v.id);
        if (it == bidx.end()) continue;
        const ProtocolState from = before.vehicles[it->second].state;
        if (!is_legal_transition(from, v.state))
            out.violations.push_back({t, ViolationKind::illegal_transition, v.id, std::nullopt,
                                      static_cast<double>(from), static_cast<double>(v.state)});
    }
    return out;
}

}  // namespace mixtraffic
