#pragma once

#include <algorithm>
#include <cmath>
#include <limits>
#include <stdexcept>

namespace mixtraffic {

inline double d0s(double v, double v_lead, double a_min, double h, double d_min) {
    if (!(a_min < 0.0)) throw std::domain_error("d0s: a_min must be negative");
    return (v * v - v_lead * v_lead) / (-2.0 * a_min) + (v - v_lead) * h - a_min * h * h / 2.0 + d_min;
}

inline double ds(double v, double a_min, double h) {
    if (!(a_min < 0.0)) throw std::domain_error("ds: a_min must be negative");
    return v * v / (-2.0 * a_min) + v * h - a_min * h * h / 2.0;
}

inline double d1s(double v, double v_lead, double a_h, double a_i, double h, double d_min) {
    if (!(a_h < 0.0) || a_i > a_h) throw std::domain_error("d1s: requires a_i <= a_h < 0");
    return v * v / (-2.0 * a_h) - v_lead * v_lead / (-2.0 * a_i) + (v - v_lead) * h -
           1.5 * (a_h - a_i) * h * h * (v_lead / (-a_i * h)) - a_h * h * h / 2.0 + d_min;
}

// Condition under which ds(v, a) >= d0s(v, v_lead, a, h, d_min) for every v.
inline bool dominance_condition(double v_lead, double a_min, double h, double d_min) {
    return v_lead * v_lead / (-2.0 * a_min) + v_lead * h >= d_min;
}

enum class SeparationForm : unsigned char { relative, stopping, tightened };

inline const char* to_string(SeparationForm f) {
    switch (f) {
        case SeparationForm::relative: return "relative";
        case SeparationForm::stopping: return "stopping";
        case SeparationForm::tightened: return "tightened";
    }
    return "?";
}

// A gap requirement R(v, v_lead) = max(floor, qa v^2 + qb v + c(v_lead)), each form
// invariant under braking of the follower at a_follow and the lead at a_lead.
struct SeparationRule {
    SeparationForm form = SeparationForm::relative;
    double a_follow = -8.0;
    double a_lead = -8.0;
    double h = 0.01;
    double d_min = 2.0;
    double extra = 0.0;

    // D0s clamped at its standstill value.
    static SeparationRule relative(double a, double h, double d_min) {
        return {SeparationForm::relative, a, a, h, d_min, 0.0};
    }
    // ds + d_min, lifted so that it is never below the standstill value of a_ref.
    static SeparationRule stopping(double a, double h, double d_min, double a_ref) {
        const double lift = std::max(0.0, (a - a_ref) * h * h / 2.0);
        return {SeparationForm::stopping, a, a, h, d_min, lift};
    }
    // D1s plus one slot of follower travel, clamped at D1s(0, 0).
    static SeparationRule tightened(double a_h, double a_i, double h, double d_min) {
        return {SeparationForm::tightened, a_h, a_i, h, d_min, 0.0};
    }

    double quad_a() const { return 1.0 / (-2.0 * a_follow); }
    double quad_b() const { return form == SeparationForm::tightened ? 2.0 * h : h; }

    double constant(double v_lead) const {
        switch (form) {
            case SeparationForm::relative:
                return -v_lead * v_lead / (-2.0 * a_lead) - v_lead * h - a_follow * h * h / 2.0 + d_min;
            case SeparationForm::stopping:
                return -a_follow * h * h / 2.0 + d_min + extra;
            case SeparationForm::tightened:
                return -v_lead * v_lead / (-2.0 * a_lead) - v_lead * h -
                       1.5 * (a_follow - a_lead) * h * h * (v_lead / (-a_lead * h)) - a_follow * h * h / 2.0 +
                       d_min;
        }
        return 0.0;
    }

    double floor() const { return constant(0.0); }

    double raw(double v, double v_lead) const { return quad_a() * v * v + quad_b() * v + constant(v_lead); }

    double operator()(double v, double v_lead) const { return std::max(floor(), raw(v, v_lead)); }

    // Largest v >= 0 with R(v, v_lead) + slope * v <= budget; negative when none exists.
    double max_speed(double v_lead, double budget, double slope) const {
        const double fl = floor();
        if (fl > budget) return -1.0;
        const double qa = quad_a();
        const double qb = quad_b() + slope;
        const double qc = constant(v_lead) - budget;
        double root;
        if (qc > 0.0) return -1.0;
        const double disc = qb * qb - 4.0 * qa * qc;
        root = -2.0 * qc / (qb + std::sqrt(disc));
        if (slope > 0.0) root = std::min(root, (budget - fl) / slope);
        return root;
    }
};

}  // namespace mixtraffic
