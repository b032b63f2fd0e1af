#include <gtest/gtest.h>

#include <random>

#include "mixtraffic/kinematics.hpp"
#include "oracles.hpp"

using namespace mixtraffic;

TEST(StepPose, StraightBranch) {
    const Pose p = step_pose({0, 0, 0}, {10.0, 0.0}, 0.01);
    EXPECT_DOUBLE_EQ(p.x, 0.1);
    EXPECT_DOUBLE_EQ(p.y, 0.0);
    EXPECT_DOUBLE_EQ(p.theta, 0.0);
}

TEST(StepPose, PureRotation) {
    const Pose p = step_pose({0, 0, 0}, {0.0, 0.5}, 0.01);
    EXPECT_DOUBLE_EQ(p.x, 0.0);
    EXPECT_DOUBLE_EQ(p.y, 0.0);
    EXPECT_DOUBLE_EQ(p.theta, 0.005);
}

TEST(StepPose, ArcMatchesIntegratedOde) {
    const Pose p = step_pose({0, 0, 0}, {10.0, 0.5}, 0.01);
    const oracle::Pose q = oracle::integrate_unicycle({0, 0, 0}, 10.0, 0.5, 0.01);
    EXPECT_DOUBLE_EQ(p.theta, 0.005);
    EXPECT_NEAR(p.x, q.x, 1e-9);
    EXPECT_NEAR(p.y, q.y, 1e-9);
}

TEST(StepPose, RandomizedOdeConsistency) {
    std::mt19937_64 rng(11);
    std::uniform_real_distribution<double> pos(-100, 100), th(-0.5, 0.5), vel(0, 42), om(-5, 5);
    for (int i = 0; i < 200; ++i) {
        const Pose p{pos(rng), pos(rng), th(rng)};
        const double v = vel(rng), w = om(rng);
        const Pose a = step_pose(p, {v, w}, 0.01);
        const oracle::Pose b = oracle::integrate_unicycle({p.x, p.y, p.theta}, v, w, 0.01);
        ASSERT_NEAR(a.x, b.x, 1e-9);
        ASSERT_NEAR(a.y, b.y, 1e-9);
    }
}

TEST(StepPose, BranchContinuity) {
    std::mt19937_64 rng(3);
    std::uniform_real_distribution<double> th(-1, 1), vel(0, 42);
    for (int i = 0; i < 1000; ++i) {
        const Pose p{0, 0, th(rng)};
        const double v = vel(rng);
        const Pose a = step_pose(p, {v, 1e-9}, 0.01);
        const Pose b = step_pose(p, {v, 0.0}, 0.01);
        ASSERT_LT(std::abs(a.x - b.x), 1e-6);
        ASSERT_LT(std::abs(a.y - b.y), 1e-6);
    }
}

TEST(StepPose, HeadingAdditivityAndDisplacementBound) {
    std::mt19937_64 rng(5);
    std::uniform_real_distribution<double> th(-1, 1), vel(0, 42), om(-10, 10);
    for (int i = 0; i < 10000; ++i) {
        const Pose p{1.0, 2.0, th(rng)};
        const double v = vel(rng), w = i % 7 == 0 ? 0.0 : om(rng);
        const Pose q = step_pose(p, {v, w}, 0.01);
        ASSERT_EQ(q.theta, p.theta + w * 0.01);
        ASSERT_LE(std::hypot(q.x - p.x, q.y - p.y), v * 0.01 + 1e-12);
    }
}

TEST(VelocityBounds, Interior) {
    const VelocityBounds b = velocity_bounds(5.0, LimitSet{});
    EXPECT_NEAR(b.lo, 4.92, 1e-12);
    EXPECT_NEAR(b.hi, 5.04, 1e-12);
}

TEST(VelocityBounds, ClampedAtStandstillAndVmax) {
    EXPECT_EQ(velocity_bounds(0.0, LimitSet{}).lo, 0.0);
    EXPECT_EQ(velocity_bounds(42.0, LimitSet{}).hi, 42.0);
}
