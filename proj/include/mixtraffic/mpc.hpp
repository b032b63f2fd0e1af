#pragma once

#include <Eigen/Cholesky>
#include <Eigen/Core>
#include <algorithm>
#include <array>
#include <cmath>
#include <limits>
#include <optional>
#include <stdexcept>
#include <string>
#include <variant>
#include <vector>

#include "core_types.hpp"
#include "kinematics.hpp"
#include "separation.hpp"

namespace mixtraffic {

inline constexpr int kMaxHorizon = 64;
inline constexpr double kConstraintTolerance = 1e-9;

struct Follow {
    std::vector<double> x_f;
};
struct Join {
    double d = 2.5;
    double discount = 0.1;
};
struct Maintain {
    double d = 2.5;
    double discount = 0.1;
};
struct Split {
    std::vector<double> d_f;
    double discount = 0.1;
};
struct LaneChange {
    double W = 0.0;
};

using Maneuver = std::variant<Follow, Join, Maintain, Split, LaneChange>;

inline const char* maneuver_name(const Maneuver& m) {
    static constexpr const char* names[] = {"follow", "join", "maintain", "split", "lane_change"};
    return names[m.index()];
}

inline double min_platoon_spacing(const LimitSet& l) { return l.d_min - l.a_min * l.h * l.h / 2.0; }

inline void validate_maneuver(const Maneuver& m, const LimitSet& l) {
    const double lb = min_platoon_spacing(l) - 1e-12;
    if (const auto* j = std::get_if<Join>(&m)) {
        if (j->d < lb) throw std::invalid_argument("join spacing below d_min - a_min h^2/2");
        if (!(j->discount > 0.0)) throw std::invalid_argument("discount must be positive");
    } else if (const auto* mt = std::get_if<Maintain>(&m)) {
        if (mt->d < lb) throw std::invalid_argument("maintain spacing below d_min - a_min h^2/2");
        if (!(mt->discount > 0.0)) throw std::invalid_argument("discount must be positive");
    } else if (const auto* s = std::get_if<Split>(&m)) {
        if (!(s->discount > 0.0)) throw std::invalid_argument("discount must be positive");
        for (std::size_t k = 1; k < s->d_f.size(); ++k)
            if (s->d_f[k] < s->d_f[k - 1]) throw std::invalid_argument("split spacings must be nondecreasing");
        if (!s->d_f.empty() && s->d_f.front() < lb)
            throw std::invalid_argument("split spacing below d_min - a_min h^2/2");
    }
}

struct Obstacle {
    VehicleId id = 0;
    double x = 0.0;
    double v_prev = 0.0;
    double a_brake = -8.0;
    bool frozen = false;
    SeparationRule rule{};
};

struct LeadReference {
    double x = 0.0;
    double v = 0.0;
};

struct MpcProblem {
    int horizon = 20;
    double x = 0.0;
    double v_prev = 0.0;
    LimitSet limits{};
    std::vector<Obstacle> obstacles;
    std::optional<LeadReference> reference;
    Maneuver objective = Follow{};

    // Lateral part, used by plan_lane_change.
    Pose pose{};
    double lane_target_y = 0.0;
    double corridor_lo = -std::numeric_limits<double>::infinity();
    double corridor_hi = std::numeric_limits<double>::infinity();
    double omega_cap = 4.0;
    std::optional<double> cruise_speed;

    // Optional starting point for the tracking QP (accelerations, length N-1).
    std::vector<double> warm_start;

    void set_lead(VehicleId id, double x_lead, double v_lead_prev, double a_lead, const SeparationRule& rule) {
        obstacles.push_back({id, x_lead, v_lead_prev, a_lead, false, rule});
    }
    void set_secondary_lead(VehicleId id, double x_lead, const SeparationRule& rule) {
        obstacles.push_back({id, x_lead, 0.0, rule.a_follow, true, rule});
    }
};

struct MpcPlan {
    std::vector<Control> controls;
    double objective_value = 0.0;
    bool feasible = false;
    // Tracking QP solution shifted by one slot, for MpcProblem::warm_start.
    std::vector<double> next_warm_start;
};

inline MpcPlan fallback_brake(double v_prev, const LimitSet& l, int N) {
    MpcPlan p;
    p.controls.resize(static_cast<std::size_t>(std::max(N, 0)));
    for (int k = 0; k < N; ++k) p.controls[k].v = braking_velocity(v_prev, l.a_min, l.h, k);
    p.feasible = true;
    return p;
}

namespace detail {

// Lead position at k+1 and velocity at step k, per obstacle.
inline void predict(const MpcProblem& p, std::vector<std::array<double, kMaxHorizon>>& xl,
                    std::vector<std::array<double, kMaxHorizon>>& vl) {
    const double h = p.limits.h;
    xl.resize(p.obstacles.size());
    vl.resize(p.obstacles.size());
    for (std::size_t o = 0; o < p.obstacles.size(); ++o) {
        const auto& ob = p.obstacles[o];
        double x = ob.x;
        for (int k = 0; k < p.horizon; ++k) {
            const double v = ob.frozen ? 0.0 : braking_velocity(ob.v_prev, ob.a_brake, h, k);
            if (!ob.frozen) x += v * h;
            vl[o][k] = v;
            xl[o][k] = x;
        }
    }
}

struct Workspace {
    std::vector<std::array<double, kMaxHorizon>> xl, vl;
};

inline Workspace& workspace() {
    thread_local Workspace w;
    return w;
}

// Minimum constraint slack of a velocity sequence under straight-line advance.
inline double slack(const MpcProblem& p, const Workspace& w, const double* v) {
    double s = std::numeric_limits<double>::infinity();
    double x = p.x;
    for (int k = 0; k < p.horizon; ++k) {
        x += v[k] * p.limits.h;
        for (std::size_t o = 0; o < p.obstacles.size(); ++o) {
            const double gap = w.xl[o][k] - x;
            s = std::min(s, gap - p.obstacles[o].rule(v[k], w.vl[o][k]));
        }
    }
    return s;
}

inline double speed_cap(const MpcProblem& p, const Workspace& w, int k, double x) {
    double cap = std::numeric_limits<double>::infinity();
    for (std::size_t o = 0; o < p.obstacles.size(); ++o)
        cap = std::min(cap, p.obstacles[o].rule.max_speed(w.vl[o][k], w.xl[o][k] - x, p.limits.h));
    return cap;
}

using QpMatrix = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::ColMajor, kMaxHorizon, kMaxHorizon>;
using QpVector = Eigen::Matrix<double, Eigen::Dynamic, 1, Eigen::ColMajor, kMaxHorizon, 1>;

struct HessianEntry {
    int n = 0;
    double h = 0.0;
    double alpha = 0.0;
    QpMatrix H;
};

// Hessian of sum_k w_k (x_k - r_k)^2 in the acceleration variables, cached per weight profile.
inline const QpMatrix& hessian(int n, double h, double alpha) {
    thread_local std::vector<HessianEntry> cache;
    for (const auto& e : cache)
        if (e.n == n && e.h == h && e.alpha == alpha) return e.H;
    HessianEntry e;
    e.n = n;
    e.h = h;
    e.alpha = alpha;
    e.H.resize(n, n);
    const double h4 = h * h * h * h;
    for (int i = 0; i < n; ++i)
        for (int j = 0; j < n; ++j) {
            double s = 0.0;
            for (int r = std::max(i, j); r < n; ++r)
                s += std::exp(-alpha * (r + 1)) * (r + 1 - i) * (r + 1 - j);
            e.H(i, j) = 2.0 * h4 * s;
        }
    if (cache.size() > 16) cache.erase(cache.begin());
    cache.push_back(std::move(e));
    return cache.back().H;
}

// Box-constrained least squares over accelerations. The free-variable step is solved
// through whichever of the free or active blocks is smaller.
class TrackingQp {
public:
    TrackingQp(int n, double h, double alpha, const double* w, const double* b, double lo, double hi)
        : n_(n), h_(h), alpha_(alpha), w_(w), b_(b), lo_(lo), hi_(hi) {
        double c_prev = 0.0, b_prev = 0.0;
        for (int i = 0; i < n_; ++i) {
            const double c = b_[i] - b_prev;
            ustar_[i] = (c - c_prev) / (h_ * h_);
            double sd = 0.0;
            for (int r = i; r < n_; ++r) sd += w_[r] * (r + 1 - i) * (r + 1 - i);
            diag_[i] = 2.0 * h_ * h_ * h_ * h_ * sd;
            c_prev = c;
            b_prev = b_[i];
        }
    }

    void gradient(const double* u, double* g) const {
        double s1 = 0.0, s2 = 0.0;
        std::array<double, kMaxHorizon> y{};
        for (int i = 0; i < n_; ++i) {
            s1 += u[i];
            s2 += s1;
            y[i] = 2.0 * w_[i] * (h_ * h_ * s2 - b_[i]);
        }
        double t1 = 0.0, t2 = 0.0;
        for (int m = n_ - 1; m >= 0; --m) {
            t1 += y[m];
            t2 += t1;
            g[m] = h_ * h_ * t2;
        }
    }

    // Primal active-set method over the bound constraints.
    void solve(double* u, const double* hint = nullptr, int max_iter = 4 * kMaxHorizon) const {
        std::array<signed char, kMaxHorizon> side{};
        std::array<bool, kMaxHorizon> active{};
        std::array<double, kMaxHorizon> g{}, z{};
        for (int i = 0; i < n_; ++i) {
            u[i] = std::clamp(hint ? hint[i] : ustar_[i], lo_, hi_);
            side[i] = u[i] <= lo_ ? -1 : (u[i] >= hi_ ? 1 : 0);
        }
        for (int it = 0; it < max_iter; ++it) {
            int n_active = 0;
            for (int i = 0; i < n_; ++i) {
                active[i] = side[i] != 0;
                n_active += active[i] ? 1 : 0;
            }
            if (n_active == n_) std::copy(u, u + n_, z.begin());
            else newton_point(u, active.data(), n_active, z.data());
            double step = 0.0;
            for (int i = 0; i < n_; ++i) step = std::max(step, std::abs(z[i] - u[i]));
            if (step < 1e-10) {
                gradient(u, g.data());
                int worst = -1;
                double worst_val = 1e-9;
                for (int i = 0; i < n_; ++i) {
                    const double m = side[i] * g[i] / diag_[i];
                    if (side[i] != 0 && m > worst_val) {
                        worst_val = m;
                        worst = i;
                    }
                }
                if (worst < 0) return;
                side[worst] = 0;
                continue;
            }
            double t = 1.0;
            int block = -1;
            for (int i = 0; i < n_; ++i) {
                if (active[i]) continue;
                const double d = z[i] - u[i];
                double r = 2.0;
                if (d < 0.0) r = (lo_ - u[i]) / d;
                else if (d > 0.0) r = (hi_ - u[i]) / d;
                if (r < t) {
                    t = r;
                    block = i;
                }
            }
            for (int i = 0; i < n_; ++i)
                if (!active[i]) u[i] = std::clamp(u[i] + t * (z[i] - u[i]), lo_, hi_);
            if (block >= 0) {
                side[block] = z[block] < u[block] ? -1 : 1;
                u[block] = side[block] < 0 ? lo_ : hi_;
            }
        }
    }

private:
    // M = (2 D^T W D)^{-1} is pentadiagonal; entry (a, b).
    double inv_entry(int a, int b) const {
        if (std::abs(a - b) > 2) return 0.0;
        static constexpr double coef[3] = {1.0, -2.0, 1.0};
        double s = 0.0;
        for (int da = 0; da < 3; ++da) {
            const int i = a - da;
            if (i < 0) continue;
            const int db = b - i;
            if (db < 0 || db > 2) continue;
            s += coef[da] * coef[db] / w_[i];
        }
        const double h4 = h_ * h_ * h_ * h_;
        return 0.5 * s / h4;
    }

    void newton_point(const double* u, const bool* active, int n_active, double* out) const {
        const int n_free = n_ - n_active;
        if (n_active == 0) {
            for (int i = 0; i < n_; ++i) out[i] = ustar_[i];
            return;
        }
        std::array<int, kMaxHorizon> A{}, F{};
        int na = 0, nf = 0;
        for (int i = 0; i < n_; ++i) {
            if (active[i]) A[na++] = i;
            else F[nf++] = i;
        }
        if (n_active <= n_free) {
            QpMatrix Maa(na, na);
            QpVector rhs(na);
            for (int r = 0; r < na; ++r) {
                for (int c = 0; c < na; ++c) Maa(r, c) = inv_entry(A[r], A[c]);
                rhs(r) = u[A[r]] - ustar_[A[r]];
            }
            const QpVector lambda = Eigen::LLT<QpMatrix>(Maa).solve(rhs);
            for (int i = 0; i < n_; ++i) out[i] = ustar_[i];
            for (int r = 0; r < na; ++r) {
                const int a = A[r];
                for (int i = std::max(0, a - 2); i <= std::min(n_ - 1, a + 2); ++i)
                    out[i] += inv_entry(i, a) * lambda(r);
            }
            for (int r = 0; r < na; ++r) out[A[r]] = u[A[r]];
        } else {
            const QpMatrix& H = hessian(n_, h_, alpha_);
            QpMatrix Hff(nf, nf);
            QpVector rhs(nf);
            for (int r = 0; r < nf; ++r) {
                for (int c = 0; c < nf; ++c) Hff(r, c) = H(F[r], F[c]);
                double s = 0.0;
                for (int c = 0; c < na; ++c) s += H(F[r], A[c]) * (u[A[c]] - ustar_[A[c]]);
                rhs(r) = -s;
            }
            const QpVector delta = Eigen::LLT<QpMatrix>(Hff).solve(rhs);
            for (int i = 0; i < n_; ++i) out[i] = u[i];
            for (int r = 0; r < nf; ++r) out[F[r]] = ustar_[F[r]] + delta(r);
        }
    }

    int n_;
    double h_, alpha_;
    const double* w_;
    const double* b_;
    double lo_, hi_;
    std::array<double, kMaxHorizon> ustar_{};
    std::array<double, kMaxHorizon> diag_{};
};

struct Tracking {
    double alpha = 0.0;
    std::array<double, kMaxHorizon> r{};
    std::array<double, kMaxHorizon> w{};
};

inline Tracking tracking_targets(const MpcProblem& p) {
    Tracking t;
    const int N = p.horizon;
    const double h = p.limits.h;
    auto hold = [&](int k) { return p.x + k * h * p.v_prev; };
    auto lead_nominal = [&](int k) { return p.reference->x + k * h * p.reference->v; };
    if (const auto* f = std::get_if<Follow>(&p.objective)) {
        for (int k = 0; k < N; ++k) {
            if (f->x_f.empty()) t.r[k] = hold(k);
            else t.r[k] = f->x_f[std::min<std::size_t>(k, f->x_f.size() - 1)];
            t.w[k] = 1.0;
        }
        return t;
    }
    double discount = 0.1;
    std::optional<double> d;
    const std::vector<double>* d_f = nullptr;
    if (const auto* j = std::get_if<Join>(&p.objective)) {
        discount = j->discount;
        d = j->d;
    } else if (const auto* m = std::get_if<Maintain>(&p.objective)) {
        discount = m->discount;
        d = m->d;
    } else if (const auto* s = std::get_if<Split>(&p.objective)) {
        discount = s->discount;
        d_f = &s->d_f;
    }
    t.alpha = discount;
    for (int k = 0; k < N; ++k) {
        t.w[k] = std::exp(-discount * k);
        if (!p.reference) {
            t.r[k] = hold(k);
        } else if (d) {
            t.r[k] = lead_nominal(k) - *d;
        } else if (d_f && !d_f->empty()) {
            t.r[k] = lead_nominal(k) - (*d_f)[std::min<std::size_t>(k, d_f->size() - 1)];
        } else {
            t.r[k] = hold(k);
        }
    }
    return t;
}

inline double tracking_cost(const MpcProblem& p, const Tracking& t, const std::vector<Control>& c) {
    double x = p.x, J = 0.0;
    for (int k = 0; k < p.horizon; ++k) {
        J += t.w[k] * (x - t.r[k]) * (x - t.r[k]);
        x += c[k].v * p.limits.h;
    }
    return J;
}

inline void check_problem(const MpcProblem& p) {
    if (p.horizon < 1 || p.horizon > kMaxHorizon) throw std::invalid_argument("horizon out of range");
}

}  // namespace detail

// Minimum slack of the separation constraints for a velocity sequence (straight-line advance).
inline double constraint_slack(const MpcProblem& p, const std::vector<double>& v) {
    detail::check_problem(p);
    if (static_cast<int>(v.size()) < p.horizon) throw std::invalid_argument("velocity sequence too short");
    auto& w = detail::workspace();
    detail::predict(p, w.xl, w.vl);
    return detail::slack(p, w, v.data());
}

inline MpcPlan plan_single_lane(const MpcProblem& p) {
    detail::check_problem(p);
    const int N = p.horizon;
    const LimitSet& l = p.limits;
    const double h = l.h;
    auto& w = detail::workspace();
    detail::predict(p, w.xl, w.vl);

    std::array<double, kMaxHorizon> v{};
    for (int k = 0; k < N; ++k) v[k] = braking_velocity(p.v_prev, l.a_min, h, k);
    if (detail::slack(p, w, v.data()) < -kConstraintTolerance) {
        MpcPlan plan = fallback_brake(p.v_prev, l, N);
        plan.feasible = false;
        return plan;
    }

    const detail::Tracking tr = detail::tracking_targets(p);
    const int n = N - 1;
    std::array<double, kMaxHorizon> desired{}, u{};
    if (n > 0) {
        std::array<double, kMaxHorizon> b{}, wt{};
        for (int i = 0; i < n; ++i) {
            b[i] = tr.r[i + 1] - p.x - (i + 1) * h * p.v_prev;
            wt[i] = tr.w[i + 1];
        }
        detail::TrackingQp qp(n, h, tr.alpha, wt.data(), b.data(), l.a_min, l.a_max);
        const bool warm = static_cast<int>(p.warm_start.size()) >= n;
        qp.solve(u.data(), warm ? p.warm_start.data() : nullptr);
        double vel = p.v_prev;
        for (int i = 0; i < n; ++i) {
            vel += h * u[i];
            desired[i] = vel;
        }
    }

    MpcPlan plan;
    plan.controls.resize(N);
    double x = p.x, vp = p.v_prev;
    for (int k = 0; k < N; ++k) {
        const VelocityBounds vb = velocity_bounds(vp, l);
        const double cap = detail::speed_cap(p, w, k, x);
        const double hi = std::max(vb.lo, std::min(vb.hi, cap));
        const double want = k < n ? desired[k] : vp;
        const double vk = std::clamp(want, vb.lo, hi);
        plan.controls[k].v = vk;
        x += vk * h;
        vp = vk;
    }
    plan.objective_value = detail::tracking_cost(p, tr, plan.controls);
    plan.feasible = true;
    if (n > 0) {
        plan.next_warm_start.resize(n);
        for (int i = 0; i + 1 < n; ++i) plan.next_warm_start[i] = u[i + 1];
        plan.next_warm_start[n - 1] = u[n - 1];
    }
    return plan;
}

namespace detail {

inline double lateral_cost(double y, double theta, double W) { return (y - W) * (y - W) + theta * theta; }

}  // namespace detail

// Steering back toward zero heading while braking.
inline MpcPlan lane_change_fallback(const MpcProblem& p) {
    MpcPlan plan = fallback_brake(p.v_prev, p.limits, p.horizon);
    double theta = p.pose.theta;
    const double h = p.limits.h;
    for (auto& c : plan.controls) {
        c.omega = std::clamp(-theta / h, -p.omega_cap, p.omega_cap);
        theta += c.omega * h;
    }
    plan.feasible = false;
    return plan;
}

inline MpcPlan plan_lane_change(const MpcProblem& p) {
    detail::check_problem(p);
    const int N = p.horizon;
    const LimitSet& l = p.limits;
    const double h = l.h;
    const double W = p.lane_target_y;
    auto& ws = detail::workspace();

    // Stage 1: longitudinal profile.
    std::vector<std::vector<double>> candidates;
    {
        MpcProblem track = p;
        const double cruise = p.cruise_speed.value_or(p.v_prev);
        Follow f;
        f.x_f.resize(N);
        for (int k = 0; k < N; ++k) f.x_f[k] = p.x + k * h * cruise;
        track.objective = f;
        const MpcPlan tp = plan_single_lane(track);
        if (!tp.feasible) return lane_change_fallback(p);
        std::vector<double> v(N);
        for (int k = 0; k < N; ++k) v[k] = tp.controls[k].v;
        candidates.push_back(std::move(v));
    }
    {
        std::vector<double> hold(N), accel(N), brake(N);
        double vh = p.v_prev, va = p.v_prev;
        for (int k = 0; k < N; ++k) {
            const VelocityBounds bh = velocity_bounds(vh, l);
            vh = std::clamp(p.v_prev, bh.lo, bh.hi);
            hold[k] = vh;
            va = velocity_bounds(va, l).hi;
            accel[k] = va;
            brake[k] = braking_velocity(p.v_prev, l.a_min, h, k);
        }
        candidates.push_back(std::move(hold));
        candidates.push_back(std::move(accel));
        candidates.push_back(std::move(brake));
    }
    detail::predict(p, ws.xl, ws.vl);
    const std::vector<double>* profile = nullptr;
    for (const auto& c : candidates)
        if (detail::slack(p, ws, c.data()) >= -kConstraintTolerance) {
            profile = &c;
            break;
        }
    if (!profile) return lane_change_fallback(p);
    const std::vector<double>& v = *profile;

    // Stage 2: bang-bang yaw-rate search, two switching phases then zero.
    const double cap = p.omega_cap;
    const double levels[3] = {-cap, 0.0, cap};
    auto in_bounds = [&](const Pose& q) {
        return q.theta >= l.theta_min - 1e-12 && q.theta <= l.theta_max + 1e-12 && q.y >= p.corridor_lo &&
               q.y <= p.corridor_hi;
    };
    // Cumulative straight-line travel for the zero-yaw tail.
    std::array<double, kMaxHorizon + 1> travel{};
    for (int k = 0; k < N; ++k) travel[k + 1] = travel[k] + v[k] * h;

    double best = std::numeric_limits<double>::infinity();
    int best_s1 = 1, best_s2 = 1, best_k1 = 0, best_k2 = 0;
    std::array<Pose, kMaxHorizon + 1> p1{}, p2{};
    std::array<double, kMaxHorizon + 1> j1{}, j2{};
    for (int s1 = 0; s1 < 3; ++s1) {
        p1[0] = p.pose;
        j1[0] = 0.0;
        int k1_max = N;
        for (int k = 0; k < N; ++k) {
            j1[k + 1] = j1[k] + detail::lateral_cost(p1[k].y, p1[k].theta, W);
            p1[k + 1] = step_pose(p1[k], {v[k], levels[s1]}, h);
            if (!in_bounds(p1[k + 1])) {
                k1_max = k;
                break;
            }
        }
        for (int k1 = 0; k1 <= k1_max; ++k1) {
            if (s1 == 1 && k1 > 0) break;
            for (int s2 = 0; s2 < 3; ++s2) {
                p2[k1] = p1[k1];
                j2[k1] = j1[k1];
                int k2_max = N;
                for (int k = k1; k < N; ++k) {
                    j2[k + 1] = j2[k] + detail::lateral_cost(p2[k].y, p2[k].theta, W);
                    p2[k + 1] = step_pose(p2[k], {v[k], levels[s2]}, h);
                    if (!in_bounds(p2[k + 1])) {
                        k2_max = k;
                        break;
                    }
                }
                for (int k2 = k1; k2 <= k2_max; ++k2) {
                    if (s2 == 1 && k2 > k1) break;
                    const Pose& q = p2[k2];
                    const double sn = std::sin(q.theta);
                    double J = j2[k2];
                    bool ok = true;
                    for (int k = k2; k < N; ++k) {
                        const double y = q.y + sn * (travel[k] - travel[k2]);
                        J += detail::lateral_cost(y, q.theta, W);
                    }
                    const double y_end = q.y + sn * (travel[N] - travel[k2]);
                    if (y_end < p.corridor_lo || y_end > p.corridor_hi) ok = false;
                    if (ok && J < best) {
                        best = J;
                        best_s1 = s1;
                        best_s2 = s2;
                        best_k1 = k1;
                        best_k2 = k2;
                    }
                }
            }
        }
    }
    if (!std::isfinite(best)) return lane_change_fallback(p);

    MpcPlan plan;
    plan.controls.resize(N);
    for (int k = 0; k < N; ++k) {
        plan.controls[k].v = v[k];
        plan.controls[k].omega = k < best_k1 ? levels[best_s1] : (k < best_k2 ? levels[best_s2] : 0.0);
    }
    plan.objective_value = best;
    plan.feasible = true;
    return plan;
}

}  // namespace mixtraffic
