#pragma once

#include <algorithm>
#include <cmath>
#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

#include "core_types.hpp"
#include "mpc.hpp"
#include "safety_sets.hpp"

namespace mixtraffic {

enum class PlatoonState : std::uint8_t { forming, steady, splitting };
enum class JoinEnd : std::uint8_t { tail, head };

enum class PlatoonErrorCode : std::uint8_t { not_adjacent, wrong_lane, not_free_agent, not_intelligent, no_such_platoon, no_such_member };

class PlatoonError : public std::runtime_error {
public:
    PlatoonError(PlatoonErrorCode code, const std::string& what) : std::runtime_error(what), code_(code) {}
    PlatoonErrorCode code() const { return code_; }

private:
    PlatoonErrorCode code_;
};

struct Platoon {
    PlatoonId id = 0;
    std::vector<VehicleId> members;  // head first
    double spacing = 2.5;
    PlatoonState state = PlatoonState::steady;

    VehicleId head() const { return members.front(); }
    VehicleId tail() const { return members.back(); }
    int index_of(VehicleId v) const {
        for (std::size_t i = 0; i < members.size(); ++i)
            if (members[i] == v) return static_cast<int>(i);
        return -1;
    }
};

enum class TaskKind : std::uint8_t { join_tail, join_head, split };

// An in-flight maneuver: `actor` runs the objective against `reference`.
struct PlatoonTask {
    TaskKind kind = TaskKind::join_tail;
    PlatoonId platoon = 0;
    VehicleId actor = 0;
    VehicleId reference = 0;
    VehicleId agent = 0;
    int split_index = 0;
    double target_gap = 0.0;
    std::int64_t started = 0;
};

struct PlatoonParams {
    double spacing = 2.5;
    double discount = 0.1;
    double join_tolerance = 0.05;
    double speed_tolerance = 0.05;
    double split_gap = 8.0;
    int horizon = 20;
};

class PlatoonManager {
public:
    explicit PlatoonManager(PlatoonParams p = {}) : params_(p) {}

    const PlatoonParams& params() const { return params_; }
    const std::vector<Platoon>& platoons() const { return platoons_; }
    const std::vector<PlatoonTask>& tasks() const { return tasks_; }

    const Platoon* find(PlatoonId id) const {
        for (const auto& p : platoons_)
            if (p.id == id) return &p;
        return nullptr;
    }
    const Platoon* platoon_of(VehicleId v) const {
        for (const auto& p : platoons_)
            if (p.index_of(v) >= 0) return &p;
        return nullptr;
    }
    const PlatoonTask* task_of(VehicleId v) const {
        for (const auto& t : tasks_)
            if (t.actor == v) return &t;
        return nullptr;
    }
    bool busy(VehicleId v) const {
        for (const auto& t : tasks_)
            if (t.actor == v || t.agent == v) return true;
        return false;
    }
    bool is_free_agent(VehicleId v) const { return !platoon_of(v) && !busy(v); }

    PlatoonId create(std::vector<VehicleId> members) {
        if (members.empty()) throw std::invalid_argument("platoon needs at least one member");
        for (VehicleId m : members)
            if (platoon_of(m)) throw PlatoonError(PlatoonErrorCode::not_free_agent, "vehicle already in a platoon");
        Platoon p;
        p.id = next_id_++;
        p.members = std::move(members);
        p.spacing = params_.spacing;
        platoons_.push_back(std::move(p));
        return platoons_.back().id;
    }

    // Tail: the agent's nearest lead must be the tail. Head: the head's nearest lead must be the agent.
    const PlatoonTask& request_join(const WorldState& world, VehicleId agent_id, PlatoonId platoon_id, JoinEnd end,
                                    std::int64_t slot = 0) {
        const Platoon* p = find(platoon_id);
        if (!p) throw PlatoonError(PlatoonErrorCode::no_such_platoon, "no such platoon");
        const Vehicle* agent = world.find(agent_id);
        if (!agent) throw PlatoonError(PlatoonErrorCode::no_such_member, "no such vehicle");
        if (!agent->is_iv()) throw PlatoonError(PlatoonErrorCode::not_intelligent, "only IVs join platoons");
        if (!is_free_agent(agent_id)) throw PlatoonError(PlatoonErrorCode::not_free_agent, "vehicle is not a free agent");
        const Vehicle* tail = world.find(p->tail());
        const Vehicle* head = world.find(p->head());
        if (agent->beta != head->beta || agent->state != ProtocolState::free)
            throw PlatoonError(PlatoonErrorCode::wrong_lane, "agent is not in the platoon's lane");
        PlatoonTask t;
        t.platoon = platoon_id;
        t.agent = agent_id;
        t.target_gap = p->spacing;
        t.started = slot;
        if (end == JoinEnd::tail) {
            const Vehicle* lead = nearest_lead(*agent, world);
            if (!lead || lead->id != tail->id)
                throw PlatoonError(PlatoonErrorCode::not_adjacent, "agent is not directly behind the tail");
            t.kind = TaskKind::join_tail;
            t.actor = agent_id;
            t.reference = tail->id;
        } else {
            const Vehicle* lead = nearest_lead(*head, world);
            if (!lead || lead->id != agent_id)
                throw PlatoonError(PlatoonErrorCode::not_adjacent, "agent is not directly ahead of the head");
            if (busy(head->id)) throw PlatoonError(PlatoonErrorCode::not_free_agent, "head is busy");
            t.kind = TaskKind::join_head;
            t.actor = head->id;
            t.reference = agent_id;
        }
        mutable_find(platoon_id)->state = PlatoonState::forming;
        tasks_.push_back(t);
        return tasks_.back();
    }

    // The member at `member_index` opens the gap to its predecessor; index 0 releases the head.
    const PlatoonTask& request_split(PlatoonId platoon_id, int member_index, const WorldState& world, std::int64_t slot = 0) {
        Platoon* p = mutable_find(platoon_id);
        if (!p) throw PlatoonError(PlatoonErrorCode::no_such_platoon, "no such platoon");
        const int n = static_cast<int>(p->members.size());
        if (member_index < 0 || member_index >= n)
            throw PlatoonError(PlatoonErrorCode::no_such_member, "member index out of range");
        if (n == 1) throw PlatoonError(PlatoonErrorCode::no_such_member, "cannot split a single vehicle");
        const int idx = std::max(member_index, 1);
        const VehicleId actor = p->members[idx];
        if (busy(actor)) throw PlatoonError(PlatoonErrorCode::not_free_agent, "member is busy");
        PlatoonTask t;
        t.kind = TaskKind::split;
        t.platoon = platoon_id;
        t.actor = actor;
        t.agent = actor;
        t.reference = p->members[idx - 1];
        t.split_index = idx;
        t.started = slot;
        t.target_gap = std::max(params_.split_gap, p->spacing);
        (void)world;
        p->state = PlatoonState::splitting;
        tasks_.push_back(t);
        return tasks_.back();
    }

    // Vehicle whose motion the ego's objective refers to, if any.
    std::optional<VehicleId> reference_of(VehicleId v) const {
        if (const PlatoonTask* t = task_of(v)) return t->reference;
        if (const Platoon* p = platoon_of(v)) {
            const int i = p->index_of(v);
            if (i > 0) return p->members[i - 1];
        }
        return std::nullopt;
    }

    Maneuver objective(VehicleId v, double x, double cruise, double h, std::int64_t slot) const {
        const int N = params_.horizon;
        if (const PlatoonTask* t = task_of(v)) {
            if (t->kind == TaskKind::split) {
                Split s;
                s.discount = params_.discount;
                const Platoon* p = find(t->platoon);
                const double d = p ? p->spacing : params_.spacing;
                const double step = (t->target_gap - d) / N;
                const double elapsed = static_cast<double>(slot - t->started);
                s.d_f.resize(N);
                for (int k = 0; k < N; ++k) s.d_f[k] = std::min(t->target_gap, d + (elapsed + k + 1) * step);
                return s;
            }
            return Join{t->target_gap, params_.discount};
        }
        if (const Platoon* p = platoon_of(v); p && p->head() != v) return Maintain{p->spacing, params_.discount};
        Follow f;
        f.x_f.resize(N);
        for (int k = 0; k < N; ++k) f.x_f[k] = x + k * h * cruise;
        return f;
    }

    // Tasks whose geometric completion condition holds in `world`.
    std::vector<PlatoonTask> ready(const WorldState& world) const {
        std::vector<PlatoonTask> out;
        for (const auto& t : tasks_) {
            const Vehicle* a = world.find(t.actor);
            const Vehicle* r = world.find(t.reference);
            if (!a || !r) continue;
            const double gap = world.road.forward_gap(a->pose.x, r->pose.x);
            if (t.kind == TaskKind::split) {
                if (gap >= t.target_gap - params_.join_tolerance) out.push_back(t);
            } else if (std::abs(gap - t.target_gap) <= params_.join_tolerance &&
                       std::abs(a->vx_prev - r->vx_prev) <= params_.speed_tolerance) {
                out.push_back(t);
            }
        }
        return out;
    }

    // Applies a task's membership change; returns false if the task is unknown.
    bool complete(const PlatoonTask& task) {
        auto it = std::find_if(tasks_.begin(), tasks_.end(), [&](const PlatoonTask& t) {
            return t.actor == task.actor && t.kind == task.kind && t.platoon == task.platoon;
        });
        if (it == tasks_.end()) return false;
        const PlatoonTask t = *it;
        tasks_.erase(it);
        Platoon* p = mutable_find(t.platoon);
        if (!p) return false;
        if (t.kind == TaskKind::join_tail) {
            p->members.push_back(t.agent);
        } else if (t.kind == TaskKind::join_head) {
            p->members.insert(p->members.begin(), t.agent);
        } else {
            const int idx = p->index_of(t.actor);
            if (idx > 0) {
                std::vector<VehicleId> rear(p->members.begin() + idx, p->members.end());
                p->members.erase(p->members.begin() + idx, p->members.end());
                if (rear.size() > 1) {
                    Platoon q;
                    q.id = next_id_++;
                    q.members = std::move(rear);
                    q.spacing = p->spacing;
                    platoons_.push_back(std::move(q));
                    p = mutable_find(t.platoon);
                }
            }
        }
        refresh_states();
        return true;
    }

    // Drops a task without changing membership.
    void cancel(VehicleId actor) {
        tasks_.erase(std::remove_if(tasks_.begin(), tasks_.end(), [&](const PlatoonTask& t) { return t.actor == actor; }),
                     tasks_.end());
        refresh_states();
    }

    // Removes a vehicle from its platoon (used when a vehicle leaves the road).
    void remove_vehicle(VehicleId v) {
        tasks_.erase(std::remove_if(tasks_.begin(), tasks_.end(),
                                    [&](const PlatoonTask& t) { return t.actor == v || t.agent == v || t.reference == v; }),
                     tasks_.end());
        for (auto& p : platoons_) {
            const int i = p.index_of(v);
            if (i < 0) continue;
            std::vector<VehicleId> rear(p.members.begin() + i + 1, p.members.end());
            p.members.erase(p.members.begin() + i, p.members.end());
            if (rear.size() > 1) {
                Platoon q;
                q.id = next_id_++;
                q.members = std::move(rear);
                q.spacing = p.spacing;
                platoons_.push_back(std::move(q));
            }
            break;
        }
        refresh_states();
    }

    // Members plus vehicles with a pending join, in road order. Joiners share the platoon's
    // braking context from the moment the join is accepted.
    std::vector<VehicleId> effective_members(const Platoon& p) const {
        std::vector<VehicleId> out;
        for (const auto& t : tasks_)
            if (t.platoon == p.id && t.kind == TaskKind::join_head) out.push_back(t.agent);
        out.insert(out.end(), p.members.begin(), p.members.end());
        for (const auto& t : tasks_)
            if (t.platoon == p.id && t.kind == TaskKind::join_tail) out.push_back(t.agent);
        return out;
    }

    void set_target_gap(VehicleId actor, double gap) {
        for (auto& t : tasks_)
            if (t.actor == actor) t.target_gap = gap;
    }

    // Writes effective membership into the vehicles' platoon slots.
    void sync(WorldState& world) const {
        for (auto& v : world.vehicles) v.platoon.reset();
        for (const auto& p : platoons_) {
            const auto members = effective_members(p);
            for (std::size_t i = 0; i < members.size(); ++i)
                if (Vehicle* v = world.find(members[i])) v->platoon = PlatoonSlot{p.id, static_cast<std::uint32_t>(i)};
        }
    }

    // No non-member lies between consecutive members in the platoon's lane.
    bool contiguous(const WorldState& world) const {
        for (const auto& p : platoons_)
            for (std::size_t i = 1; i < p.members.size(); ++i) {
                const Vehicle* f = world.find(p.members[i]);
                if (!f) return false;
                const Vehicle* lead = nearest_lead(*f, world);
                if (!lead || lead->id != p.members[i - 1]) return false;
            }
        return true;
    }

private:
    Platoon* mutable_find(PlatoonId id) {
        for (auto& p : platoons_)
            if (p.id == id) return &p;
        return nullptr;
    }

    void refresh_states() {
        // Lone vehicles without pending work are free agents again.
        platoons_.erase(std::remove_if(platoons_.begin(), platoons_.end(),
                                       [&](const Platoon& p) {
                                           if (p.members.size() > 1) return false;
                                           for (const auto& t : tasks_)
                                               if (t.platoon == p.id) return false;
                                           return true;
                                       }),
                        platoons_.end());
        for (auto& p : platoons_) {
            p.state = PlatoonState::steady;
            for (const auto& t : tasks_) {
                if (t.platoon != p.id) continue;
                p.state = t.kind == TaskKind::split ? PlatoonState::splitting : PlatoonState::forming;
            }
        }
    }

    PlatoonParams params_;
    std::vector<Platoon> platoons_;
    std::vector<PlatoonTask> tasks_;
    PlatoonId next_id_ = 1;
};

}  // namespace mixtraffic
