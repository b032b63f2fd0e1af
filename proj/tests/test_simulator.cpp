#include <gtest/gtest.h>

#include "mixtraffic/simulator.hpp"

using namespace mixtraffic;

namespace {

Vehicle make(VehicleId id, VehicleKind kind, double x, int lane, double v) {
    Vehicle c;
    c.id = id;
    c.kind = kind;
    c.limits = kind == VehicleKind::human ? LimitSet::human() : LimitSet::intelligent();
    c.pose.x = x;
    c.pose.y = lane * 3.5;
    c.beta = c.alpha = lane;
    c.v_prev = c.vx_prev = v;
    return c;
}

WorldState world(std::vector<Vehicle> vs, int lanes = 1, Topology topo = Topology::straight, double length = 0) {
    WorldState w;
    w.geometry.lane_count = lanes;
    w.road.topology = topo;
    w.road.length = length;
    w.vehicles = std::move(vs);
    return w;
}

std::size_t count(const Simulator& s, ViolationKind k) {
    std::size_t n = 0;
    for (const auto& v : s.violations())
        if (v.kind == k) ++n;
    return n;
}

}  // namespace

TEST(Simulator, LoneIvReachesCruise) {
    SimConfig cfg;
    cfg.iv_cruise = 20;
    Simulator sim(world({make(0, VehicleKind::intelligent, 0, 0, 10)}), cfg);
    sim.run_slots(1000);
    EXPECT_NEAR(sim.world().vehicles[0].v_prev, 20.0, 0.05);
    EXPECT_TRUE(sim.violations().empty());
}

TEST(Simulator, AccelerationBoundedPerSlot) {
    SimConfig cfg;
    cfg.iv_cruise = 30;
    Simulator sim(world({make(0, VehicleKind::intelligent, 0, 0, 0)}), cfg);
    double prev = 0;
    for (int k = 0; k < 300; ++k) {
        sim.step();
        const double v = sim.world().vehicles[0].v_prev;
        EXPECT_LE(v - prev, 4.0 * 0.01 + 1e-12);
        prev = v;
    }
}

TEST(Simulator, FollowerBrakesBehindStoppingLead) {
    SimConfig cfg;
    cfg.iv_cruise = 15;
    cfg.mode = TrafficMode::single_lane;
    Simulator sim(world({make(0, VehicleKind::intelligent, 30, 0, 15), make(1, VehicleKind::intelligent, 0, 0, 15)}),
                  cfg);
    sim.schedule({100, 0, 0.0});
    sim.run_slots(800);
    EXPECT_TRUE(sim.violations().empty());
    EXPECT_NEAR(sim.world().vehicles[0].v_prev, 0.0, 1e-9);
    EXPECT_NEAR(sim.world().vehicles[1].v_prev, 0.0, 1e-9);
    EXPECT_GE(sim.min_gap(), 2.0 - 1e-9);
}

TEST(Simulator, IllegalInitialGapReportedAtSlotZero) {
    SimConfig cfg;
    Simulator sim(world({make(0, VehicleKind::intelligent, 5, 0, 0), make(1, VehicleKind::intelligent, 0, 0, 20)}),
                  cfg);
    ASSERT_FALSE(sim.violations().empty());
    EXPECT_EQ(sim.violations()[0].kind, ViolationKind::separation_breach);
    EXPECT_DOUBLE_EQ(sim.violations()[0].t, 0.0);
    EXPECT_EQ(sim.violations()[0].id_a, 1u);
}

TEST(Simulator, WeakenedHvRuleIsAttributedToHv) {
    SimConfig cfg;
    cfg.hv_rule_scale = 0.3;
    cfg.hv.v_des = 30;
    cfg.hv.headway = 0.0;
    cfg.iv_cruise = 5;
    Simulator sim(world({make(0, VehicleKind::intelligent, 60, 0, 5), make(1, VehicleKind::human, 0, 0, 25)}), cfg);
    sim.run_slots(1500);
    ASSERT_GT(count(sim, ViolationKind::separation_breach) + count(sim, ViolationKind::collision), 0u);
    // Everything up to the first collision is the HV's fault.
    for (const auto& v : sim.violations()) {
        EXPECT_EQ(v.id_a, 1u) << to_string(v.kind) << " t=" << v.t;
        if (v.kind == ViolationKind::collision) break;
    }
}

TEST(Simulator, TailJoinConvergesFromThirtyMetres) {
    SimConfig cfg;
    cfg.mode = TrafficMode::single_lane;
    cfg.iv_cruise = 15;
    cfg.auto_join = true;
    Simulator sim(world({make(0, VehicleKind::intelligent, 32.5, 0, 15), make(1, VehicleKind::intelligent, 0, 0, 15)}),
                  cfg);
    sim.run_slots(3000);
    EXPECT_TRUE(sim.violations().empty());
    const Platoon* p = sim.platoons().platoon_of(1);
    ASSERT_NE(p, nullptr);
    EXPECT_EQ(p->members, (std::vector<VehicleId>{0, 1}));
    const auto& vs = sim.world().vehicles;
    EXPECT_NEAR(vs[0].pose.x - vs[1].pose.x, 2.5, 0.05);
    EXPECT_TRUE(sim.platoons().tasks().empty());
}

TEST(Simulator, RingThroughputCountsCrossings) {
    // One vehicle at 5 m/s on a 100 m ring crosses the sensor every 20 s: 180 veh/h.
    SimConfig cfg;
    cfg.iv_cruise = 5;
    cfg.sensor_x = 50;
    Simulator sim(world({make(0, VehicleKind::intelligent, 0, 0, 5)}, 1, Topology::ring, 100), cfg);
    std::vector<TraceRecord> trace;
    sim.set_trace([&](const TraceRecord& r) { trace.push_back(r); }, 10);
    sim.run_slots(12000);
    EXPECT_DOUBLE_EQ(sim.throughput(60.0), 180.0);
    EXPECT_DOUBLE_EQ(measure_throughput(trace, sim.world().road, 50, 60.0), 180.0);
    EXPECT_THROW(sim.throughput(200.0), WindowBeforeSteadyState);
}

TEST(Simulator, DeterministicForEqualSeeds) {
    auto run = [](std::uint64_t seed) {
        SimConfig cfg;
        cfg.seed = seed;
        cfg.hv.lane_change_rate = 0.2;
        cfg.iv_lane_change_rate = 0.2;
        std::vector<Vehicle> vs;
        for (int i = 0; i < 8; ++i)
            vs.push_back(make(i, i % 2 ? VehicleKind::human : VehicleKind::intelligent, 40.0 * (i / 2), i % 2, 12));
        Simulator sim(world(vs, 3), cfg);
        std::vector<TraceRecord> trace;
        sim.set_trace([&](const TraceRecord& r) { trace.push_back(r); }, 50);
        sim.run_slots(2000);
        return trace;
    };
    const auto a = run(7), b = run(7);
    ASSERT_EQ(a.size(), b.size());
    for (std::size_t i = 0; i < a.size(); ++i) {
        EXPECT_EQ(a[i].pose.x, b[i].pose.x);
        EXPECT_EQ(a[i].pose.y, b[i].pose.y);
        EXPECT_EQ(a[i].state, b[i].state);
    }
}

TEST(Simulator, HvLaneChangeCompletes) {
    SimConfig cfg;
    std::vector<AgentSetup> setups(1);
    setups[0].target_lane = 1;
    Simulator sim(world({make(0, VehicleKind::human, 0, 0, 12)}, 2), cfg, setups);
    sim.run_slots(1000);
    const Vehicle& v = sim.world().vehicles[0];
    EXPECT_EQ(v.state, ProtocolState::free);
    EXPECT_EQ(v.beta, 1);
    ASSERT_EQ(sim.lane_changes().size(), 1u);
    EXPECT_GT(sim.lane_changes()[0].end_slot, sim.lane_changes()[0].start_slot);
    EXPECT_TRUE(sim.violations().empty());
}

TEST(Simulator, IvLaneChangeCompletes) {
    SimConfig cfg;
    std::vector<AgentSetup> setups(1);
    setups[0].target_lane = 1;
    Simulator sim(world({make(0, VehicleKind::intelligent, 0, 0, 12)}, 2), cfg, setups);
    sim.run_slots(1000);
    const Vehicle& v = sim.world().vehicles[0];
    EXPECT_EQ(v.state, ProtocolState::free);
    EXPECT_EQ(v.beta, 1);
    EXPECT_NEAR(v.pose.y, 3.5, 3.5 / 20);
    EXPECT_TRUE(sim.violations().empty());
}
