#pragma once

#include <algorithm>
#include <cmath>

#include "core_types.hpp"

namespace mixtraffic {

inline constexpr double kStraightOmega = 1e-12;

inline Pose step_pose(const Pose& p, const Control& c, double h) {
    Pose out;
    out.theta = p.theta + c.omega * h;
    if (std::abs(c.omega) < kStraightOmega) {
        out.x = p.x + c.v * h * std::cos(p.theta);
        out.y = p.y + c.v * h * std::sin(p.theta);
        return out;
    }
    const double half = c.omega * h / 2.0;
    const double chord = 2.0 * (c.v / c.omega) * std::sin(half);
    out.x = p.x + chord * std::cos(p.theta + half);
    out.y = p.y + chord * std::sin(p.theta + half);
    return out;
}

struct VelocityBounds {
    double lo = 0.0;
    double hi = 0.0;
};

inline VelocityBounds velocity_bounds(double v_prev, const LimitSet& l) {
    VelocityBounds b;
    b.lo = std::max(0.0, v_prev + l.a_min * l.h);
    b.hi = std::min(l.v_max, v_prev + l.a_max * l.h);
    if (b.lo > b.hi) b.lo = b.hi;
    return b;
}

// Velocity after k+1 slots of braking at `a`, floored at standstill.
inline double braking_velocity(double v_prev, double a, double h, int k) {
    return std::max(0.0, v_prev + (k + 1) * a * h);
}

}  // namespace mixtraffic
