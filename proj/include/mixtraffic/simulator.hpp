#pragma once

#include <algorithm>
#include <cmath>
#include <functional>
#include <limits>
#include <optional>
#include <random>
#include <stdexcept>
#include <string>
#include <unordered_map>
#include <vector>

#include "core_types.hpp"
#include "kinematics.hpp"
#include "monitor.hpp"
#include "mpc.hpp"
#include "platoon.hpp"
#include "protocols.hpp"
#include "safety_sets.hpp"

namespace mixtraffic {

struct HvModel {
    double v_des = 15.0;
    double gain = 2.0;
    // Time headway: the desired speed never exceeds (gap - d_min) / headway.
    double headway = 0.6;
    // Lane-change requests per second (Poisson clock).
    double lane_change_rate = 0.0;
    double lane_change_duration = 4.0;
    double lateral_gain = 1.5;
};

enum class ObjectiveKind : std::uint8_t { follow, join, maintain, split };

inline const char* to_string(ObjectiveKind k) {
    static constexpr const char* names[] = {"follow", "join", "maintain", "split"};
    return names[static_cast<int>(k)];
}

// An objective run against the nearest lead without platoon orchestration.
struct ObjectiveOverride {
    ObjectiveKind kind = ObjectiveKind::follow;
    double d = 2.5;
    double target = 8.0;
};

struct AgentSetup {
    std::optional<double> cruise;
    std::optional<double> v_des;
    std::optional<int> target_lane;
    std::optional<ObjectiveOverride> objective;
};

// Changes a vehicle's cruise speed (IV) or desired speed (HV) at a slot.
struct SpeedEvent {
    std::int64_t slot = 0;
    VehicleId id = 0;
    double speed = 0.0;
};

struct SimConfig {
    TrafficMode mode = TrafficMode::multi_lane;
    int horizon = 20;
    PlatoonParams platoon{};
    bool auto_join = false;
    double join_range = 50.0;
    HvModel hv{};
    double iv_cruise = 15.0;
    double iv_lane_change_rate = 0.0;
    // Diagnostics: lane changes start without gate checks / HVs keep only this fraction of their gap rule.
    bool gates_enabled = true;
    double hv_rule_scale = 1.0;
    std::uint64_t seed = 1;
    std::optional<double> sensor_x;
    // Platoons present at t = 0, head first.
    std::vector<std::vector<VehicleId>> initial_platoons;
};

struct TraceRecord {
    double t = 0.0;
    VehicleId id = 0;
    VehicleKind kind = VehicleKind::intelligent;
    Pose pose{};
    double v = 0.0;
    ProtocolState state = ProtocolState::free;
    int beta = 0;
    int alpha = 0;
    std::optional<PlatoonId> platoon;
    const char* objective = "";
};

struct LaneChangeRecord {
    VehicleId id = 0;
    VehicleKind kind = VehicleKind::intelligent;
    int from = 0;
    int to = 0;
    std::int64_t start_slot = 0;
    std::int64_t end_slot = -1;
    GateReport gate;
    bool gated = true;
};

class WindowBeforeSteadyState : public std::runtime_error {
public:
    WindowBeforeSteadyState(double window_start, double steady_since)
        : std::runtime_error("measurement window starts at t=" + std::to_string(window_start) +
                             " before steady state at t=" + std::to_string(steady_since)) {}
};

// Vehicles per hour crossing `sensor_x` (and its ring images) during the last `window` seconds of the trace.
inline double measure_throughput(const std::vector<TraceRecord>& trace, const Road& road, double sensor_x,
                                 double window, double steady_since = 0.0) {
    if (trace.empty()) return 0.0;
    double t_end = 0.0;
    for (const auto& r : trace) t_end = std::max(t_end, r.t);
    const double t0 = t_end - window;
    if (t0 < steady_since) throw WindowBeforeSteadyState(t0, steady_since);
    std::unordered_map<VehicleId, const TraceRecord*> last;
    long count = 0;
    for (const auto& r : trace) {
        auto it = last.find(r.id);
        if (it != last.end() && r.t > t0) {
            const double xa = it->second->pose.x, xb = r.pose.x;
            if (road.topology == Topology::ring)
                count += static_cast<long>(std::floor((xb - sensor_x) / road.length) -
                                           std::floor((xa - sensor_x) / road.length));
            else if (xa < sensor_x && sensor_x <= xb)
                ++count;
        }
        last[r.id] = &r;
    }
    return count * 3600.0 / window;
}

inline double omega_cap_for(const LimitSet& l) { return (l.theta_max - l.theta_min) / (20.0 * l.h); }

class Simulator {
public:
    using TraceSink = std::function<void(const TraceRecord&)>;

    struct Agent {
        double cruise = 0.0;
        double v_des = 0.0;
        std::optional<int> request;
        std::optional<ObjectiveOverride> objective;
        SafetySets frozen;
        std::vector<double> warm;
        std::optional<GateReport> gate;
        std::int64_t lc_start = 0;
        double y0 = 0.0;
        double y1 = 0.0;
        int lc_record = -1;
        const char* objective_name = "follow";
    };

    Simulator(WorldState world, SimConfig cfg, std::vector<AgentSetup> setups = {})
        : world_(std::move(world)), cfg_(std::move(cfg)), manager_(cfg_.platoon), rng_(cfg_.seed) {
        if (!setups.empty() && setups.size() != world_.vehicles.size())
            throw std::invalid_argument("one agent setup per vehicle required");
        for (const auto& v : world_.vehicles) {
            v.limits.validate();
            if (!world_.geometry.valid_lane(v.beta)) throw std::invalid_argument("vehicle outside the lane range");
        }
        const Vehicle* iv = nullptr;
        const Vehicle* hv = nullptr;
        for (const auto& v : world_.vehicles) (v.is_iv() ? iv : hv) = &v;
        iv_limits_ = iv ? iv->limits : LimitSet::intelligent();
        hv_limits_ = hv ? hv->limits : LimitSet::human();
        cap_ = Capabilities::from(iv_limits_, hv_limits_);
        omega_cap_ = omega_cap_for(iv_limits_);
        agents_.resize(world_.vehicles.size());
        for (std::size_t i = 0; i < agents_.size(); ++i) {
            const AgentSetup s = setups.empty() ? AgentSetup{} : setups[i];
            Agent& a = agents_[i];
            a.cruise = s.cruise.value_or(cfg_.iv_cruise);
            a.v_des = s.v_des.value_or(cfg_.hv.v_des);
            a.objective = s.objective;
            if (s.target_lane && *s.target_lane != world_.vehicles[i].beta) {
                if (!world_.geometry.valid_lane(*s.target_lane) || std::abs(*s.target_lane - world_.vehicles[i].beta) != 1)
                    throw std::invalid_argument("target lane must be an adjacent valid lane");
                enter_wait(world_.vehicles[i], *s.target_lane);
            }
        }
        for (const auto& members : cfg_.initial_platoons) manager_.create(members);
        manager_.sync(world_);
        if (!manager_.contiguous(world_)) throw std::invalid_argument("initial platoon members are not contiguous");
        refresh_contexts(world_);
        const MonitorResult m = monitor(world_, world_, monitor_input());
        for (const auto& v : m.violations) violations_.push_back(v);
        min_gap_ = m.min_gap;
    }

    const WorldState& world() const { return world_; }
    const SimConfig& config() const { return cfg_; }
    const Capabilities& capabilities() const { return cap_; }
    const std::vector<Violation>& violations() const { return violations_; }
    const std::vector<LaneChangeRecord>& lane_changes() const { return lane_changes_; }
    const std::vector<FollowerContext>& contexts() const { return contexts_; }
    PlatoonManager& platoons() { return manager_; }
    const PlatoonManager& platoons() const { return manager_; }
    double min_gap() const { return min_gap_; }
    std::int64_t slot() const { return world_.slot; }
    double time() const { return world_.time(); }

    const Agent& agent(VehicleId id) const { return agents_.at(index_of(id)); }

    const GateReport* last_gate(VehicleId id) const {
        const Agent& a = agent(id);
        return a.gate ? &*a.gate : nullptr;
    }

    // Time of the last platoon membership change; +inf while maneuvers are pending.
    double steady_since() const {
        if (!manager_.tasks().empty()) return std::numeric_limits<double>::infinity();
        return steady_since_;
    }

    void set_trace(TraceSink sink, int stride = 1) {
        trace_ = std::move(sink);
        stride_ = std::max(1, stride);
        if (world_.slot % stride_ == 0) emit_trace();
    }

    void schedule(const SpeedEvent& e) { events_.push_back(e); }

    // The separation constraints an IV plans against in the current state.
    MpcProblem hard_constraints(VehicleId id) const {
        const std::size_t i = index_of(id);
        return hard_problem(i, world_.vehicles[i], world_, LaneIndex(world_));
    }
    void set_auto_join(bool on) { cfg_.auto_join = on; }

    void request_lane_change(VehicleId id, int lane) {
        if (!world_.geometry.valid_lane(lane)) throw std::invalid_argument("invalid target lane");
        agents_.at(index_of(id)).request = lane;
    }

    // Counted sensor crossings per hour over the last `window` seconds.
    double throughput(double window) const {
        if (!cfg_.sensor_x) return 0.0;
        const double t0 = time() - window;
        if (t0 < steady_since()) throw WindowBeforeSteadyState(t0, steady_since());
        long n = 0;
        for (double t : crossings_)
            if (t > t0) ++n;
        return n * 3600.0 / window;
    }

    void run_slots(std::int64_t n) {
        for (std::int64_t k = 0; k < n; ++k) step();
    }

    void step() {
        const WorldState before = world_;
        WorldState next = world_;
        const std::int64_t slot = before.slot;
        for (const auto& e : events_)
            if (e.slot == slot) {
                Agent& a = agents_.at(index_of(e.id));
                a.cruise = e.speed;
                a.v_des = e.speed;
            }

        // HV decisions.
        for (std::size_t i = 0; i < next.vehicles.size(); ++i)
            if (next.vehicles[i].is_hv()) hv_decide(i, before, next);

        // Platoon orchestration and braking contexts.
        orchestrate(before, next);
        refresh_contexts(next);

        // IV sets and gates.
        iv_decide(before, next);

        // Controls.
        const LaneIndex index(before);
        std::vector<Control> controls(next.vehicles.size());
        std::vector<bool> infeasible(next.vehicles.size(), false);
        for (std::size_t i = 0; i < next.vehicles.size(); ++i) {
            bool bad = false;
            controls[i] = next.vehicles[i].is_iv() ? iv_control(i, before, next, index, bad)
                                                   : hv_control(i, before, next, index);
            infeasible[i] = bad;
        }

        // Apply with an independent box check.
        const double h = before.h;
        for (std::size_t i = 0; i < next.vehicles.size(); ++i) {
            Vehicle& v = next.vehicles[i];
            const Control& c = controls[i];
            const VelocityBounds vb = velocity_bounds(v.v_prev, v.limits);
            const Pose p = step_pose(v.pose, c, h);
            const bool box_ok = c.v >= vb.lo - 1e-9 && c.v <= vb.hi + 1e-9 && std::abs(c.omega) <= omega_cap_ + 1e-9 &&
                                p.theta >= v.limits.theta_min - 1e-9 && p.theta <= v.limits.theta_max + 1e-9;
            if (!box_ok || infeasible[i])
                violations_.push_back({(slot + 1) * h, ViolationKind::infeasible_without_fallback, v.id, std::nullopt,
                                       c.v, box_ok ? 0.0 : vb.hi});
            count_crossings(v.pose.x, p.x, (slot + 1) * h);
            v.vx_prev = (p.x - v.pose.x) / h;
            v.v_prev = c.v;
            v.pose = p;
        }
        next.slot = slot + 1;

        // Lane-change completion.
        for (std::size_t i = 0; i < next.vehicles.size(); ++i) {
            Vehicle& v = next.vehicles[i];
            if (!lane_change_complete(v, next.geometry)) continue;
            Agent& a = agents_[i];
            v.state = ProtocolState::free;
            v.beta = v.alpha;
            v.turn_signal = false;
            a.frozen = SafetySets{};
            a.warm.clear();
            if (a.lc_record >= 0) lane_changes_[a.lc_record].end_slot = next.slot;
            a.lc_record = -1;
        }

        despawn(next);
        const MonitorResult m = monitor(before, next, monitor_input());
        for (const auto& v : m.violations) violations_.push_back(v);
        min_gap_ = std::min(min_gap_, m.min_gap);
        world_ = std::move(next);
        if (trace_ && world_.slot % stride_ == 0) emit_trace();
    }

private:
    std::size_t index_of(VehicleId id) const {
        for (std::size_t i = 0; i < world_.vehicles.size(); ++i)
            if (world_.vehicles[i].id == id) return i;
        throw std::out_of_range("unknown vehicle id");
    }

    MonitorInput monitor_input() const {
        MonitorInput in;
        in.mode = cfg_.mode;
        in.cap = cap_;
        in.contexts = &contexts_;
        return in;
    }

    void enter_wait(Vehicle& v, int lane) {
        v.state = ProtocolState::wait;
        v.alpha = lane;
        if (v.is_hv()) {
            v.turn_signal = true;
            v.signal_since = world_.slot;
        }
    }

    std::optional<int> random_target(const Vehicle& v) {
        std::vector<int> options;
        for (int d : {-1, 1})
            if (world_.geometry.valid_lane(v.beta + d)) options.push_back(v.beta + d);
        if (options.empty()) return std::nullopt;
        std::uniform_int_distribution<std::size_t> pick(0, options.size() - 1);
        return options[pick(rng_)];
    }

    bool poisson_fires(double rate, double h) {
        if (rate <= 0.0) return false;
        std::uniform_real_distribution<double> u(0.0, 1.0);
        return u(rng_) < 1.0 - std::exp(-rate * h);
    }

    // ---- braking contexts -------------------------------------------------

    std::vector<FollowerContext> compute_contexts(const WorldState& w, const PlatoonManager& m) const {
        std::vector<FollowerContext> ctx(w.vehicles.size());
        const LaneIndex index(w);
        std::unordered_map<VehicleId, std::size_t> idx;
        for (std::size_t i = 0; i < w.vehicles.size(); ++i) idx[w.vehicles[i].id] = i;
        for (std::size_t i = 0; i < w.vehicles.size(); ++i) {
            const Vehicle& v = w.vehicles[i];
            ctx[i].a_eff = v.is_hv() ? v.limits.a_min : cap_.a_i;
            if (cfg_.mode == TrafficMode::single_lane && v.is_iv()) {
                const long f = index.follower(v.beta, i);
                if (f >= 0 && w.vehicles[static_cast<std::size_t>(f)].is_hv()) ctx[i].a_eff = cap_.a_h;
            }
        }
        for (const auto& p : m.platoons()) {
            const auto members = m.effective_members(p);
            auto tail = idx.find(members.back());
            if (tail == idx.end()) continue;
            const double a = ctx[tail->second].a_eff;
            for (VehicleId id : members) {
                auto it = idx.find(id);
                if (it == idx.end()) continue;
                ctx[it->second].platoon = p.id;
                ctx[it->second].a_eff = a;
            }
        }
        for (std::size_t i = 0; i < w.vehicles.size(); ++i)
            if (w.vehicles[i].state == ProtocolState::processing && w.vehicles[i].is_iv())
                ctx[i].frozen = &agents_[i].frozen;
        return ctx;
    }

    void refresh_contexts(const WorldState& w) { contexts_ = compute_contexts(w, manager_); }

    // Every lane pair whose rule changes under `candidate` must already satisfy the new rule.
    bool admissible(const PlatoonManager& candidate, const WorldState& w) const {
        WorldState trial = w;
        candidate.sync(trial);
        const auto now = compute_contexts(w, manager_);
        const auto after = compute_contexts(trial, candidate);
        const LaneIndex index(trial);
        const LaneGeometry& g = trial.geometry;
        for (int lane = g.min_lane; lane <= g.max_lane(); ++lane)
            for (std::size_t i : index.members(lane)) {
                const long l = index.lead(lane, i);
                if (l < 0) continue;
                const auto li = static_cast<std::size_t>(l);
                const Vehicle& F = trial.vehicles[i];
                const Vehicle& L = trial.vehicles[li];
                const SeparationRule r1 = following_rule(cfg_.mode, F, after[i], L, after[li].a_eff, cap_);
                const SeparationRule r0 = following_rule(cfg_.mode, w.vehicles[i], now[i], w.vehicles[li], now[li].a_eff, cap_);
                if (r1.form == r0.form && r1.a_follow == r0.a_follow && r1.a_lead == r0.a_lead) continue;
                if (trial.road.forward_gap(F.pose.x, L.pose.x) < r1(F.v_prev, L.vx_prev)) return false;
            }
        return true;
    }

    // ---- platoons ---------------------------------------------------------

    void orchestrate(const WorldState& before, WorldState& next) {
        bool changed = false;
        const LaneIndex index(before);
        // Drop maneuvers whose reference is no longer the actor's lead.
        for (const auto& t : std::vector<PlatoonTask>(manager_.tasks())) {
            const Vehicle* a = before.find(t.actor);
            const Vehicle* lead = a ? nearest_lead(*a, before) : nullptr;
            if (!lead || lead->id != t.reference) {
                manager_.cancel(t.actor);
                changed = true;
            }
        }
        // Completions.
        for (const auto& t : manager_.ready(before)) {
            if (t.kind == TaskKind::split) {
                PlatoonManager trial = manager_;
                trial.complete(t);
                if (!admissible(trial, before)) continue;
            }
            manager_.complete(t);
            changed = true;
        }
        // Split targets follow the requirement that will hold once the vehicle is released.
        for (const auto& t : manager_.tasks()) {
            if (t.kind != TaskKind::split) continue;
            PlatoonManager trial = manager_;
            trial.complete(t);
            WorldState w = before;
            trial.sync(w);
            const auto ctx = compute_contexts(w, trial);
            const Vehicle* a = w.find(t.actor);
            const Vehicle* r = w.find(t.reference);
            if (!a || !r) continue;
            const std::size_t ai = static_cast<std::size_t>(a - w.vehicles.data());
            const std::size_t ri = static_cast<std::size_t>(r - w.vehicles.data());
            const double need = following_rule(cfg_.mode, *a, ctx[ai], *r, ctx[ri].a_eff, cap_)(a->v_prev, r->vx_prev);
            manager_.set_target_gap(t.actor, std::max(cfg_.platoon.split_gap, need + 0.5));
        }
        if (cfg_.auto_join) {
            for (std::size_t i = 0; i < before.vehicles.size(); ++i) {
                const Vehicle& v = before.vehicles[i];
                if (!v.is_iv() || v.state != ProtocolState::free || manager_.busy(v.id)) continue;
                const long l = index.lead(v.beta, i);
                if (l < 0) continue;
                const Vehicle& lead = before.vehicles[static_cast<std::size_t>(l)];
                if (!lead.is_iv() || lead.state != ProtocolState::free || manager_.busy(lead.id)) continue;
                if (before.road.forward_gap(v.pose.x, lead.pose.x) > cfg_.join_range) continue;
                const Platoon* own = manager_.platoon_of(v.id);
                const Platoon* theirs = manager_.platoon_of(lead.id);
                if (own && theirs) continue;
                PlatoonManager trial = manager_;
                try {
                    if (!own) {
                        if (theirs && theirs->tail() != lead.id) continue;
                        const PlatoonId p = theirs ? theirs->id : trial.create({lead.id});
                        trial.request_join(before, v.id, p, JoinEnd::tail, before.slot);
                    } else {
                        if (own->head() != v.id) continue;
                        trial.request_join(before, lead.id, own->id, JoinEnd::head, before.slot);
                    }
                } catch (const PlatoonError&) {
                    continue;
                }
                if (!admissible(trial, before)) continue;
                manager_ = std::move(trial);
                changed = true;
            }
        }
        if (changed) steady_since_ = before.time();
        manager_.sync(next);
    }

    // ---- decisions --------------------------------------------------------

    void hv_decide(std::size_t i, const WorldState& before, WorldState& next) {
        Vehicle& v = next.vehicles[i];
        Agent& a = agents_[i];
        const double h = before.h;
        if (v.state == ProtocolState::free) {
            std::optional<int> target = a.request;
            a.request.reset();
            if (!target && poisson_fires(cfg_.hv.lane_change_rate, h)) target = random_target(v);
            if (target && *target != v.beta) enter_wait(v, *target);
            return;
        }
        if (v.state != ProtocolState::wait) return;
        // Others see the signal one slot late.
        if (before.slot - v.signal_since < 2) return;
        const Vehicle& ego = before.vehicles[i];
        const double window = ds(iv_limits_.v_max, hv_limits_.a_min, h) + hv_limits_.d_min + iv_limits_.v_max;
        for (const auto& c : before.vehicles) {
            if (c.id == ego.id || !c.is_hv() || c.state != ProtocolState::wait || !c.turn_signal || c.alpha != ego.alpha)
                continue;
            const double d = relative_x(before.road, ego.pose.x, c.pose.x);
            if ((d > 0.0 || (d == 0.0 && c.id < ego.id)) && d <= window) return;
        }
        GateReport r;
        if (cfg_.gates_enabled) {
            r = hv_lane_change_gate(ego, before, cap_);
            a.gate = r;
            if (!r.passed) return;
        }
        start_processing(i, next, r);
    }

    void start_processing(std::size_t i, WorldState& next, const GateReport& r) {
        Vehicle& v = next.vehicles[i];
        Agent& a = agents_[i];
        v.state = ProtocolState::processing;
        a.lc_start = next.slot;
        a.y0 = v.pose.y;
        a.y1 = next.geometry.center_y(v.alpha);
        a.warm.clear();
        LaneChangeRecord rec;
        rec.id = v.id;
        rec.kind = v.kind;
        rec.from = v.beta;
        rec.to = v.alpha;
        rec.start_slot = next.slot;
        rec.gate = r;
        rec.gated = cfg_.gates_enabled;
        a.lc_record = static_cast<int>(lane_changes_.size());
        lane_changes_.push_back(rec);
    }

    void iv_decide(const WorldState& before, WorldState& next) {
        const double h = before.h;
        std::vector<GateCandidate> candidates;
        std::vector<SafetySets> sets(next.vehicles.size());
        std::vector<GateReport> reports(next.vehicles.size());
        for (std::size_t i = 0; i < next.vehicles.size(); ++i) {
            Vehicle& v = next.vehicles[i];
            if (!v.is_iv()) continue;
            Agent& a = agents_[i];
            const Vehicle& ego = before.vehicles[i];
            if (ego.state == ProtocolState::processing) {
                a.frozen = update_c_star(a.frozen, ego, before);
                continue;
            }
            if (ego.state == ProtocolState::free) {
                std::optional<int> target = a.request;
                a.request.reset();
                if (!target && manager_.is_free_agent(v.id) && poisson_fires(cfg_.iv_lane_change_rate, h))
                    target = random_target(v);
                if (target && *target != v.beta && manager_.is_free_agent(v.id)) enter_wait(v, *target);
                continue;
            }
            sets[i] = compute_sets(ego, before);
            if (cfg_.gates_enabled) {
                IvGateOptions opt;
                opt.horizon = cfg_.horizon;
                opt.mode = cfg_.mode;
                reports[i] = iv_lane_change_gate(ego, sets[i], before, cap_, opt);
                a.gate = reports[i];
            }
            candidates.push_back({v.id, &sets[i], !cfg_.gates_enabled || reports[i].passed});
        }
        for (VehicleId id : arbitrate_initiations(candidates)) {
            const std::size_t i = index_of_in(next, id);
            agents_[i].frozen = sets[i];
            start_processing(i, next, reports[i]);
        }
        for (std::size_t i = 0; i < next.vehicles.size(); ++i)
            if (next.vehicles[i].state == ProtocolState::processing && next.vehicles[i].is_iv())
                contexts_[i].frozen = &agents_[i].frozen;
    }

    static std::size_t index_of_in(const WorldState& w, VehicleId id) {
        for (std::size_t i = 0; i < w.vehicles.size(); ++i)
            if (w.vehicles[i].id == id) return i;
        throw std::out_of_range("unknown vehicle id");
    }

    // ---- controls ---------------------------------------------------------

    double lead_x(const WorldState& w, const Vehicle& ego, const Vehicle& lead) const {
        return ego.pose.x + w.road.forward_gap(ego.pose.x, lead.pose.x);
    }

    void add_obstacle(MpcProblem& p, const WorldState& w, const Vehicle& ego, const Vehicle& lead, std::size_t li,
                      const SeparationRule& rule) const {
        const double x = lead_x(w, ego, lead);
        if (frozen_prediction(rule)) p.set_secondary_lead(lead.id, x, rule);
        else p.set_lead(lead.id, x, lead.vx_prev, contexts_[li].a_eff, rule);
    }

    // Adds the constraint only if braking can still satisfy it; other vehicles' gates cover the rest.
    void add_soft_obstacle(MpcProblem& p, const WorldState& w, const Vehicle& ego, const Vehicle& lead,
                           std::size_t li, const SeparationRule& rule) const {
        if (relative_x(w.road, ego.pose.x, lead.pose.x) < 0.0) return;
        for (const auto& o : p.obstacles)
            if (o.id == lead.id && o.rule.form == rule.form) return;
        add_obstacle(p, w, ego, lead, li, rule);
        if (constraint_slack(p, braking_profile(p)) < -kConstraintTolerance) p.obstacles.pop_back();
    }

    static std::vector<double> braking_profile(const MpcProblem& p) {
        std::vector<double> v(p.horizon);
        for (int k = 0; k < p.horizon; ++k) v[k] = braking_velocity(p.v_prev, p.limits.a_min, p.limits.h, k);
        return v;
    }

    FollowerContext context_of(std::size_t i) const { return contexts_[i]; }

    Maneuver objective_for(std::size_t i, const Vehicle& ego, const WorldState& before, const LaneIndex& index,
                           MpcProblem& p) {
        Agent& a = agents_[i];
        const int N = cfg_.horizon;
        const double h = before.h;
        if (a.objective && a.objective->kind != ObjectiveKind::follow) {
            const long l = index.lead(ego.beta, i);
            if (l >= 0) {
                const Vehicle& L = before.vehicles[static_cast<std::size_t>(l)];
                p.reference = LeadReference{lead_x(before, ego, L), L.vx_prev};
            }
            const auto& o = *a.objective;
            a.objective_name = to_string(o.kind);
            if (o.kind == ObjectiveKind::join) return Join{o.d, cfg_.platoon.discount};
            if (o.kind == ObjectiveKind::maintain) return Maintain{o.d, cfg_.platoon.discount};
            Split s;
            s.discount = cfg_.platoon.discount;
            const double step = (o.target - o.d) / N;
            s.d_f.resize(N);
            for (int k = 0; k < N; ++k)
                s.d_f[k] = std::min(o.target, o.d + (static_cast<double>(before.slot) + k + 1) * step);
            return s;
        }
        Maneuver m = manager_.objective(ego.id, ego.pose.x, a.cruise, h, before.slot);
        if (auto ref = manager_.reference_of(ego.id)) {
            if (const Vehicle* L = before.find(*ref)) p.reference = LeadReference{lead_x(before, ego, *L), L->vx_prev};
        }
        a.objective_name = maneuver_name(m);
        return m;
    }

    // Ego state and the obstacles of its membership leads: the pairs the monitor checks.
    MpcProblem hard_problem(std::size_t i, const Vehicle& ego, const WorldState& before, const LaneIndex& index) const {
        const FollowerContext& fc = contexts_[i];
        MpcProblem p;
        p.horizon = cfg_.horizon;
        p.x = ego.pose.x;
        p.v_prev = ego.v_prev;
        p.limits = ego.limits;
        p.limits.a_min = fc.a_eff;
        p.pose = ego.pose;
        p.omega_cap = omega_cap_;
        auto add_lane_lead = [&](int lane) {
            const long l = index.lead(lane, i);
            if (l < 0) return;
            const auto li = static_cast<std::size_t>(l);
            const Vehicle& L = before.vehicles[li];
            add_obstacle(p, before, ego, L, li, following_rule(cfg_.mode, ego, fc, L, contexts_[li].a_eff, cap_));
        };
        add_lane_lead(ego.beta);
        if (ego.state == ProtocolState::processing) add_lane_lead(ego.alpha);
        return p;
    }

    Control iv_control(std::size_t i, const WorldState& before, const WorldState& next, const LaneIndex& index,
                       bool& infeasible) {
        const Vehicle& ego = next.vehicles[i];
        Agent& a = agents_[i];
        const FollowerContext fc = context_of(i);
        MpcProblem p = hard_problem(i, ego, before, index);
        const std::size_t hard = p.obstacles.size();

        MpcPlan plan;
        if (ego.state == ProtocolState::processing) {
            const SafetySets& s = a.frozen;
            // c^j: binding Free IV of the frozen C+_I1.
            const Vehicle* cj = nullptr;
            double key = 0.0;
            for (VehicleId id : s.c_plus_i1) {
                const Vehicle* c = before.find(id);
                if (!c) continue;
                const double d = relative_x(before.road, ego.pose.x, c->pose.x);
                if (d < 0.0) continue;
                const double k = d + ds(c->vx_prev, cap_.a_i, before.h);
                if (!cj || k < key) {
                    cj = c;
                    key = k;
                }
            }
            if (cj) {
                const std::size_t ci = index_of_in(before, cj->id);
                add_soft_obstacle(p, before, ego, *cj, ci, following_rule(cfg_.mode, ego, fc, *cj, contexts_[ci].a_eff, cap_));
            }
            // c^l: nearest of C*_I2 and the HVs ahead.
            const Vehicle* cl = nullptr;
            auto consider = [&](const Vehicle* c) {
                if (!c) return;
                const double d = relative_x(before.road, ego.pose.x, c->pose.x);
                if (d < 0.0) return;
                if (!cl || d < relative_x(before.road, ego.pose.x, cl->pose.x)) cl = c;
            };
            for (VehicleId id : s.c_star_i2) consider(before.find(id));
            for (const auto& c : before.vehicles)
                if (c.is_hv()) consider(&c);
            if (cl) add_soft_obstacle(p, before, ego, *cl, index_of_in(before, cl->id), cap_.stopping());
            const LaneGeometry& g = next.geometry;
            p.lane_target_y = g.center_y(ego.alpha);
            p.corridor_lo = std::min(g.center_y(ego.beta), g.center_y(ego.alpha)) - g.lane_width / 2.0;
            p.corridor_hi = std::max(g.center_y(ego.beta), g.center_y(ego.alpha)) + g.lane_width / 2.0;
            p.cruise_speed = a.cruise;
            a.objective_name = "lane_change";
            plan = plan_lane_change(p);
        } else {
            if (cfg_.mode == TrafficMode::multi_lane) {
                const Vehicle* y = nearest_ahead_if(ego, before, [&](const Vehicle& c) {
                    return planned_lanes(c).contains(ego.beta) && treated_as_processing(c);
                });
                if (y) add_soft_obstacle(p, before, ego, *y, index_of_in(before, y->id), cap_.stopping());
            }
            p.objective = objective_for(i, ego, before, index, p);
            p.warm_start = a.warm;
            plan = plan_single_lane(p);
            a.warm = plan.next_warm_start;
            for (auto& c : plan.controls) c.omega = 0.0;
            if (!plan.controls.empty())
                plan.controls.front().omega = std::clamp(-ego.pose.theta / before.h, -omega_cap_, omega_cap_);
        }
        if (!plan.feasible) {
            a.warm.clear();
            MpcProblem hard_only = p;
            hard_only.obstacles.resize(hard);
            std::vector<double> v(p.horizon);
            for (int k = 0; k < p.horizon; ++k) v[k] = plan.controls[k].v;
            infeasible = constraint_slack(hard_only, v) < -kConstraintTolerance;
        }
        return plan.controls.front();
    }

    Control hv_control(std::size_t i, const WorldState& before, const WorldState& next, const LaneIndex& index) {
        const Vehicle& ego = next.vehicles[i];
        Agent& a = agents_[i];
        const FollowerContext fc = context_of(i);
        const double h = before.h;
        const LimitSet& l = ego.limits;
        const double scale = cfg_.hv_rule_scale;
        double target = a.v_des;
        double cap = std::numeric_limits<double>::infinity();
        auto lane_lead = [&](int lane) {
            const long li = index.lead(lane, i);
            if (li < 0) return;
            const Vehicle& L = before.vehicles[static_cast<std::size_t>(li)];
            const double gap = before.road.forward_gap(ego.pose.x, L.pose.x);
            target = std::min(target, std::max(0.0, (gap - l.d_min) / cfg_.hv.headway));
            const double aL = contexts_[static_cast<std::size_t>(li)].a_eff;
            const SeparationRule rule = following_rule(cfg_.mode, ego, fc, L, aL, cap_);
            double vL0 = 0.0, budget = gap;
            if (!frozen_prediction(rule)) {
                vL0 = braking_velocity(L.vx_prev, aL, h, 0);
                budget += vL0 * h;
            }
            cap = std::min(cap, rule.max_speed(vL0, budget / scale, h / scale));
        };
        lane_lead(ego.beta);
        if (ego.state == ProtocolState::processing) lane_lead(ego.alpha);
        a.objective_name = ego.state == ProtocolState::processing ? "lane_change" : "follow";
        const VelocityBounds vb = velocity_bounds(ego.v_prev, l);
        double v = std::clamp(ego.v_prev + cfg_.hv.gain * (target - ego.v_prev) * h, vb.lo, vb.hi);
        v = std::max(vb.lo, std::min(v, cap));

        double theta_des = 0.0;
        if (ego.state == ProtocolState::processing) {
            const double D = cfg_.hv.lane_change_duration;
            const double tau = std::min(D, (next.slot - a.lc_start + 1) * h);
            const double s = std::acos(-1.0) * tau / D;
            const double y_ref = a.y0 + (a.y1 - a.y0) * (1.0 - std::cos(s)) / 2.0;
            const double dy_ref = tau < D ? (a.y1 - a.y0) * std::acos(-1.0) / (2.0 * D) * std::sin(s) : 0.0;
            const double lateral = dy_ref + cfg_.hv.lateral_gain * (y_ref - ego.pose.y);
            theta_des = std::atan2(lateral, std::max(v, 0.5));
        }
        theta_des = std::clamp(theta_des, l.theta_min, l.theta_max);
        const double omega = std::clamp((theta_des - ego.pose.theta) / h, -omega_cap_, omega_cap_);
        return {v, omega};
    }

    // ---- bookkeeping ------------------------------------------------------

    void count_crossings(double xa, double xb, double t) {
        if (!cfg_.sensor_x) return;
        const double s = *cfg_.sensor_x;
        const Road& r = world_.road;
        long n = 0;
        if (r.topology == Topology::ring)
            n = static_cast<long>(std::floor((xb - s) / r.length) - std::floor((xa - s) / r.length));
        else if (xa < s && s <= xb)
            n = 1;
        for (long k = 0; k < n; ++k) crossings_.push_back(t);
    }

    void despawn(WorldState& next) {
        const Road& r = next.road;
        if (r.topology != Topology::straight || r.length <= 0.0) return;
        for (std::size_t i = next.vehicles.size(); i-- > 0;) {
            if (next.vehicles[i].pose.x <= r.length) continue;
            manager_.remove_vehicle(next.vehicles[i].id);
            next.vehicles.erase(next.vehicles.begin() + static_cast<long>(i));
            agents_.erase(agents_.begin() + static_cast<long>(i));
            contexts_.erase(contexts_.begin() + static_cast<long>(i));
        }
        manager_.sync(next);
    }

    void emit_trace() {
        for (std::size_t i = 0; i < world_.vehicles.size(); ++i) {
            const Vehicle& v = world_.vehicles[i];
            TraceRecord r;
            r.t = world_.time();
            r.id = v.id;
            r.kind = v.kind;
            r.pose = v.pose;
            r.v = v.v_prev;
            r.state = v.state;
            r.beta = v.beta;
            r.alpha = v.alpha;
            if (v.platoon) r.platoon = v.platoon->platoon;
            r.objective = agents_[i].objective_name;
            trace_(r);
        }
    }

    WorldState world_;
    SimConfig cfg_;
    PlatoonManager manager_;
    std::mt19937_64 rng_;
    LimitSet iv_limits_, hv_limits_;
    Capabilities cap_{};
    double omega_cap_ = 4.0;
    std::vector<Agent> agents_;
    std::vector<FollowerContext> contexts_;
    std::vector<Violation> violations_;
    std::vector<LaneChangeRecord> lane_changes_;
    std::vector<SpeedEvent> events_;
    std::vector<double> crossings_;
    double min_gap_ = std::numeric_limits<double>::infinity();
    double steady_since_ = 0.0;
    TraceSink trace_;
    int stride_ = 1;
};

}  // namespace mixtraffic
