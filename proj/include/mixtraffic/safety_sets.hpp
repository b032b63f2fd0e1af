#pragma once

#include <algorithm>
#include <cmath>
#include <vector>

#include "core_types.hpp"

namespace mixtraffic {

struct SafetySets {
    std::vector<VehicleId> c_plus_i1;
    std::vector<VehicleId> c_plus_i2;
    std::vector<VehicleId> c_plus_h;
    std::vector<VehicleId> c_minus_i;
    std::vector<VehicleId> c_minus_h;
    std::vector<VehicleId> c_yield;
    std::vector<VehicleId> c_star_i2;

    bool operator==(const SafetySets&) const = default;
};

inline bool contains(const std::vector<VehicleId>& s, VehicleId id) {
    return std::find(s.begin(), s.end(), id) != s.end();
}

// Signed longitudinal offset of `to` relative to `from`; on a ring, wrapped into [-L/2, L/2).
inline double relative_x(const Road& road, double from, double to) {
    double d = to - from;
    if (road.topology == Topology::ring) {
        d = std::fmod(d + road.length / 2.0, road.length);
        if (d < 0.0) d += road.length;
        d -= road.length / 2.0;
    }
    return d;
}

// The lanes a vehicle plans to change from or to, {beta, alpha}.
inline LaneSet planned_lanes(const Vehicle& v) { return LaneSet(v.beta, v.alpha); }

// Processing, or an HV showing its turn signal.
inline bool treated_as_processing(const Vehicle& v) {
    return v.state == ProtocolState::processing || (v.is_hv() && v.turn_signal);
}

// Strict order along the road used for lead/follower queries; co-located vehicles order by id.
inline bool is_ahead(const Road& road, const Vehicle& ego, const Vehicle& c) {
    const double d = relative_x(road, ego.pose.x, c.pose.x);
    return d > 0.0 || (d == 0.0 && c.id > ego.id);
}

template <class Pred>
const Vehicle* nearest_ahead_if(const Vehicle& ego, const WorldState& world, Pred pred) {
    const Vehicle* best = nullptr;
    double best_gap = 0.0;
    for (const auto& c : world.vehicles) {
        if (c.id == ego.id || !pred(c)) continue;
        double gap = world.road.forward_gap(ego.pose.x, c.pose.x);
        if (world.road.topology != Topology::ring && gap < 0.0) continue;
        if (gap == 0.0 && c.id < ego.id) {
            if (world.road.topology != Topology::ring) continue;
            gap = world.road.length;
        }
        if (!best || gap < best_gap || (gap == best_gap && c.id < best->id)) {
            best = &c;
            best_gap = gap;
        }
    }
    return best;
}

template <class Pred>
const Vehicle* nearest_behind_if(const Vehicle& ego, const WorldState& world, Pred pred) {
    const Vehicle* best = nullptr;
    double best_gap = 0.0;
    for (const auto& c : world.vehicles) {
        if (c.id == ego.id || !pred(c)) continue;
        double gap = world.road.forward_gap(c.pose.x, ego.pose.x);
        if (world.road.topology != Topology::ring && gap < 0.0) continue;
        if (gap == 0.0 && c.id > ego.id) {
            if (world.road.topology != Topology::ring) continue;
            gap = world.road.length;
        }
        if (!best || gap < best_gap || (gap == best_gap && c.id > best->id)) {
            best = &c;
            best_gap = gap;
        }
    }
    return best;
}

// Nearest vehicle strictly ahead whose lane membership includes the ego's current lane.
inline const Vehicle* nearest_lead(const Vehicle& ego, const WorldState& world) {
    return nearest_ahead_if(ego, world, [&](const Vehicle& c) { return lane_membership(c).contains(ego.beta); });
}

inline const Vehicle* nearest_follower(const Vehicle& ego, const WorldState& world) {
    return nearest_behind_if(ego, world,
                             [&](const Vehicle& c) { return lane_membership(c).contains(ego.beta); });
}

inline SafetySets compute_sets(const Vehicle& ego, const WorldState& world) {
    SafetySets s;
    const LaneSet ego_lanes = planned_lanes(ego);
    for (const auto& c : world.vehicles) {
        if (c.id == ego.id) continue;
        const double d = relative_x(world.road, ego.pose.x, c.pose.x);
        const bool ahead = d >= 0.0;
        const bool behind = d <= 0.0;
        if (c.is_iv()) {
            if (ahead && ego_lanes.contains(c.beta) && c.state == ProtocolState::free) s.c_plus_i1.push_back(c.id);
            if (ahead && planned_lanes(c).intersects(ego_lanes) &&
                (c.state == ProtocolState::wait || c.state == ProtocolState::processing))
                s.c_plus_i2.push_back(c.id);
            if (behind && (ego_lanes.contains(c.beta) ||
                           (ego_lanes.contains(c.alpha) && c.state == ProtocolState::processing)))
                s.c_minus_i.push_back(c.id);
        } else {
            if (ahead) s.c_plus_h.push_back(c.id);
            if (behind) s.c_minus_h.push_back(c.id);
        }
        if (ahead && planned_lanes(c).contains(ego.beta) && treated_as_processing(c)) s.c_yield.push_back(c.id);
    }
    s.c_star_i2 = s.c_plus_i2;
    return s;
}

// Adds IVs of the current C+_I2 that are now Processing; the rest of `sets` stays frozen.
inline SafetySets update_c_star(SafetySets sets, const Vehicle& ego, const WorldState& world) {
    const SafetySets now = compute_sets(ego, world);
    for (VehicleId id : now.c_plus_i2) {
        const Vehicle* c = world.find(id);
        if (c && c->state == ProtocolState::processing && !contains(sets.c_star_i2, id))
            sets.c_star_i2.push_back(id);
    }
    return sets;
}

// Per-lane ordering of lane members, rebuilt once per slot.
class LaneIndex {
public:
    LaneIndex(const WorldState& world) : world_(&world) {
        const auto& g = world.geometry;
        lanes_.resize(static_cast<std::size_t>(g.lane_count));
        for (std::size_t i = 0; i < world.vehicles.size(); ++i)
            for (int lane : lane_membership(world.vehicles[i]))
                if (g.valid_lane(lane)) lanes_[lane - g.min_lane].push_back(i);
        for (auto& members : lanes_)
            std::sort(members.begin(), members.end(), [&](std::size_t a, std::size_t b) {
                const double xa = key(world.vehicles[a].pose.x), xb = key(world.vehicles[b].pose.x);
                return xa < xb || (xa == xb && world.vehicles[a].id < world.vehicles[b].id);
            });
    }

    // Vehicle indices in the lane, rear to front (ring: sorted by wrapped x).
    const std::vector<std::size_t>& members(int lane) const {
        static const std::vector<std::size_t> empty;
        if (!world_->geometry.valid_lane(lane)) return empty;
        return lanes_[lane - world_->geometry.min_lane];
    }

    // Index of the nearest member of `lane` strictly ahead of vehicle `i`, or -1.
    long lead(int lane, std::size_t i) const { return neighbor(lane, i, +1); }
    long follower(int lane, std::size_t i) const { return neighbor(lane, i, -1); }

private:
    double key(double x) const {
        const Road& r = world_->road;
        if (r.topology != Topology::ring) return x;
        double k = std::fmod(x, r.length);
        return k < 0.0 ? k + r.length : k;
    }

    long neighbor(int lane, std::size_t i, int dir) const {
        const auto& m = members(lane);
        if (m.empty()) return -1;
        const Vehicle& ego = world_->vehicles[i];
        const double xe = key(ego.pose.x);
        auto before = [&](std::size_t a) {
            const double xa = key(world_->vehicles[a].pose.x);
            return xa < xe || (xa == xe && world_->vehicles[a].id < ego.id);
        };
        // First member not before the ego.
        auto it = std::partition_point(m.begin(), m.end(), before);
        const bool ring = world_->road.topology == Topology::ring;
        long pos;
        if (dir > 0) {
            if (it != m.end() && *it == i) ++it;
            if (it == m.end()) {
                if (!ring) return -1;
                it = m.begin();
            }
            pos = static_cast<long>(*it);
        } else {
            if (it == m.begin()) {
                if (!ring) return -1;
                it = m.end();
            }
            --it;
            pos = static_cast<long>(*it);
        }
        return pos == static_cast<long>(i) ? -1 : pos;
    }

    const WorldState* world_;
    std::vector<std::vector<std::size_t>> lanes_;
};

}  // namespace mixtraffic
