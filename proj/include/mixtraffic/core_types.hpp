#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

namespace mixtraffic {

using VehicleId = std::uint32_t;
using PlatoonId = std::uint32_t;

enum class VehicleKind : std::uint8_t { human, intelligent };

enum class ProtocolState : std::uint8_t { free, wait, processing };

inline const char* to_string(VehicleKind k) { return k == VehicleKind::human ? "HV" : "IV"; }

inline const char* to_string(ProtocolState s) {
    switch (s) {
        case ProtocolState::free: return "free";
        case ProtocolState::wait: return "wait";
        case ProtocolState::processing: return "processing";
    }
    return "?";
}

struct LimitSet {
    double a_min = -8.0;
    double a_max = 4.0;
    double v_max = 42.0;
    double theta_min = -0.4;
    double theta_max = 0.4;
    double h = 0.01;
    double d_min = 2.0;

    void validate() const {
        if (!(a_min < 0.0)) throw std::invalid_argument("a_min must be negative");
        if (!(a_max > 0.0)) throw std::invalid_argument("a_max must be positive");
        if (!(v_max > 0.0)) throw std::invalid_argument("v_max must be positive");
        if (!(h > 0.0)) throw std::invalid_argument("h must be positive");
        if (!(d_min >= 0.0)) throw std::invalid_argument("d_min must be non-negative");
        if (!(theta_min <= 0.0 && 0.0 <= theta_max))
            throw std::invalid_argument("heading bounds must bracket zero");
    }

    static LimitSet intelligent() { return LimitSet{}; }
    static LimitSet human() {
        LimitSet l;
        l.a_min = -6.0;
        return l;
    }
};

struct Pose {
    double x = 0.0;
    double y = 0.0;
    double theta = 0.0;
};

struct Control {
    double v = 0.0;
    double omega = 0.0;
};

struct PlatoonSlot {
    PlatoonId platoon = 0;
    std::uint32_t position = 0;
};

struct Vehicle {
    VehicleId id = 0;
    VehicleKind kind = VehicleKind::intelligent;
    LimitSet limits{};
    Pose pose{};
    double v_prev = 0.0;
    // Longitudinal displacement over the last slot divided by h.
    double vx_prev = 0.0;
    int beta = 0;
    int alpha = 0;
    ProtocolState state = ProtocolState::free;
    bool turn_signal = false;
    std::int64_t signal_since = 0;
    std::optional<PlatoonSlot> platoon;

    bool is_iv() const { return kind == VehicleKind::intelligent; }
    bool is_hv() const { return kind == VehicleKind::human; }
};

// One or two lane indices.
class LaneSet {
public:
    LaneSet() = default;
    explicit LaneSet(int a) : lanes_{a, a}, count_(1) {}
    LaneSet(int a, int b) : lanes_{std::min(a, b), std::max(a, b)}, count_(a == b ? 1 : 2) {}

    bool contains(int lane) const {
        return (count_ > 0 && lanes_[0] == lane) || (count_ > 1 && lanes_[1] == lane);
    }
    bool intersects(const LaneSet& o) const {
        for (int i = 0; i < count_; ++i)
            if (o.contains(lanes_[i])) return true;
        return false;
    }
    int size() const { return count_; }
    const int* begin() const { return lanes_; }
    const int* end() const { return lanes_ + count_; }
    bool operator==(const LaneSet& o) const {
        return count_ == o.count_ && lanes_[0] == o.lanes_[0] && lanes_[1] == o.lanes_[1];
    }

private:
    int lanes_[2] = {0, 0};
    int count_ = 0;
};

inline LaneSet lane_membership(const Vehicle& v) {
    if (v.state == ProtocolState::processing) return LaneSet(v.beta, v.alpha);
    return LaneSet(v.beta);
}

struct LaneGeometry {
    int min_lane = 0;
    int lane_count = 1;
    double lane_width = 3.5;

    int max_lane() const { return min_lane + lane_count - 1; }
    bool valid_lane(int lane) const { return lane >= min_lane && lane <= max_lane(); }
    double center_y(int lane) const { return lane * lane_width; }

    void validate() const {
        if (lane_count < 1) throw std::invalid_argument("lane_count must be at least 1");
        if (!(lane_width > 0.0)) throw std::invalid_argument("lane_width must be positive");
    }
};

enum class Topology : std::uint8_t { straight, ring };

struct Road {
    Topology topology = Topology::straight;
    // Ring circumference, or straight-road end (0 means unbounded).
    double length = 0.0;

    // Signed distance from `from` forward to `to`; in [0, length) on a ring.
    double forward_gap(double from, double to) const {
        double d = to - from;
        if (topology == Topology::ring) {
            d = std::fmod(d, length);
            if (d < 0.0) d += length;
        }
        return d;
    }
};

struct WorldState {
    std::int64_t slot = 0;
    double h = 0.01;
    std::vector<Vehicle> vehicles;
    LaneGeometry geometry{};
    Road road{};

    double time() const { return static_cast<double>(slot) * h; }

    const Vehicle* find(VehicleId id) const {
        for (const auto& v : vehicles)
            if (v.id == id) return &v;
        return nullptr;
    }
    Vehicle* find(VehicleId id) {
        for (auto& v : vehicles)
            if (v.id == id) return &v;
        return nullptr;
    }
};

inline bool is_legal_transition(ProtocolState from, ProtocolState to) {
    if (from == to) return true;
    return (from == ProtocolState::free && to == ProtocolState::wait) ||
           (from == ProtocolState::wait && to == ProtocolState::processing) ||
           (from == ProtocolState::processing && to == ProtocolState::free);
}

inline bool lane_change_complete(const Vehicle& v, const LaneGeometry& g) {
    return v.state == ProtocolState::processing &&
           std::abs(v.pose.y - g.center_y(v.alpha)) < g.lane_width / 20.0 &&
           std::abs(v.pose.theta) < 1e-3;
}

}  // namespace mixtraffic
