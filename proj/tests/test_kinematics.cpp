#include "rehab/error.hpp"
#include "rehab/kinematics.hpp"

#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <random>

using namespace rehab::kinematics;
using rehab::protocol::ImuFrameRaw;
using rehab::protocol::SensorId;

namespace {

Quaternion elevation(double deg)
{
    return Quaternion(Eigen::AngleAxisd(-deg2rad(deg), Vector3::UnitY()));
}

Quaternion random_rotation(std::mt19937_64& rng, double max_deg)
{
    std::normal_distribution<double> n;
    Vector3 axis(n(rng), n(rng), n(rng));
    axis.normalize();
    const double angle = std::uniform_real_distribution<double>(0.0, max_deg)(rng);
    return Quaternion(Eigen::AngleAxisd(deg2rad(angle), axis));
}

StillnessMonitor still_monitor()
{
    StillnessMonitor m;
    for (std::uint32_t t = 0; t <= 1000; t += 10) {
        m.observe(SensorId::Thigh, t, 0.1);
        m.observe(SensorId::Calf, t, 0.1);
    }
    return m;
}

// Independent oracle: angle between knee-to-hip and knee-to-ankle from plain vectors.
double flexion_oracle(double thigh_elev, double calf_elev)
{
    const double a = deg2rad(thigh_elev);
    const double b = deg2rad(calf_elev);
    const double hip[3] = {-std::cos(a), 0.0, -std::sin(a)};
    const double ankle[3] = {std::cos(b), 0.0, std::sin(b)};
    const double dot = hip[0] * ankle[0] + hip[1] * ankle[1] + hip[2] * ankle[2];
    return rad2deg(std::acos(std::clamp(dot, -1.0, 1.0)));
}

} // namespace

TEST_CASE("stationary filter converges to level")
{
    for (double initial : {10.0, -30.0, 45.0}) {
        auto state = OrientationState::seeded(quaternion_from_euler({initial, -initial / 2, 0.0}), 0);
        for (std::uint32_t t = 10; t <= 5000; t += 10) {
            const auto f = ImuFrameRaw::from_physical(SensorId::Thigh, t, {0, 0, 0}, {0, 0, -1000});
            REQUIRE(update_orientation(state, f) == UpdateStatus::Integrated);
        }
        const auto e = euler_from_quaternion(state.attitude);
        CHECK(std::abs(e.roll) < 0.5);
        CHECK(std::abs(e.pitch) < 0.5);
        CHECK(std::abs(state.attitude.norm() - 1.0) < 1e-9);
    }
}

TEST_CASE("pure gyro integration")
{
    auto state = OrientationState::seeded(Quaternion::Identity(), 0, 1.0);
    for (std::uint32_t t = 10; t <= 1000; t += 10) {
        const auto f = ImuFrameRaw::from_physical(SensorId::Thigh, t, {10.0, 0, 0}, {0, 0, -1000});
        REQUIRE(update_orientation(state, f) == UpdateStatus::Integrated);
    }
    CHECK(std::abs(euler_from_quaternion(state.attitude).roll - 10.0) <= 0.01);
}

TEST_CASE("stale and gapped samples")
{
    auto state = OrientationState::seeded(Quaternion::Identity(), 100);
    const auto same = ImuFrameRaw::from_physical(SensorId::Thigh, 100, {50, 0, 0}, {0, 0, -1000});
    CHECK(update_orientation(state, same) == UpdateStatus::StaleSample);
    CHECK(state.attitude.isApprox(Quaternion::Identity()));

    // Gravity along body -y after a long gap: roll reseeds to +90.
    const auto later = ImuFrameRaw::from_physical(SensorId::Thigh, 500, {0, 0, 0}, {0, -1000, 0});
    CHECK(update_orientation(state, later) == UpdateStatus::Reseeded);
    CHECK(euler_from_quaternion(state.attitude).roll == doctest::Approx(90.0));

    OrientationState fresh;
    fresh.seed_heading_deg = 25.0;
    CHECK(update_orientation(fresh, later) == UpdateStatus::Reseeded);
    CHECK(euler_from_quaternion(fresh.attitude).yaw == doctest::Approx(25.0));
}

TEST_CASE("attitude from gravity reproduces the tilt")
{
    std::mt19937_64 rng(1);
    std::uniform_real_distribution<double> u(-80.0, 80.0);
    for (int i = 0; i < 200; ++i) {
        const EulerDeg e{u(rng), u(rng), u(rng)};
        const Quaternion q = quaternion_from_euler(e);
        const Vector3 g_body = q.conjugate() * Vector3(0, 0, -1);
        const auto back = euler_from_quaternion(attitude_from_gravity(g_body, e.yaw));
        CHECK(back.roll == doctest::Approx(e.roll));
        CHECK(back.pitch == doctest::Approx(e.pitch));
        CHECK(back.yaw == doctest::Approx(e.yaw));
    }
}

TEST_CASE("euler round trip, gimbal lock included")
{
    std::mt19937_64 rng(2);
    std::uniform_real_distribution<double> u(-179.0, 179.0);
    std::uniform_real_distribution<double> p(-89.0, 89.0);
    for (int i = 0; i < 500; ++i) {
        const EulerDeg e{u(rng), p(rng), u(rng)};
        const auto back = euler_from_quaternion(quaternion_from_euler(e));
        CHECK(back.roll == doctest::Approx(e.roll));
        CHECK(back.pitch == doctest::Approx(e.pitch));
        CHECK(back.yaw == doctest::Approx(e.yaw));
    }
    for (double pitch : {90.0, -90.0}) {
        const Quaternion q = quaternion_from_euler({20.0, pitch, 35.0});
        const auto back = euler_from_quaternion(q);
        CHECK(std::isfinite(back.roll));
        CHECK(std::isfinite(back.yaw));
        CHECK(rotation_angle_deg(quaternion_from_euler(back), q) < 1e-6);
    }
}

TEST_CASE("identity calibration gives a flat straight leg")
{
    const auto cal = calibrate(Quaternion::Identity(), Quaternion::Identity(), Vector3(0, 0, -1), still_monitor());
    const auto pose = compute_leg_pose(cal, Quaternion::Identity(), Quaternion::Identity(), 0);
    CHECK(pose.knee_flexion == doctest::Approx(180.0));
    CHECK(pose.thigh_elevation == doctest::Approx(0.0));
    CHECK(pose.calf_elevation == doctest::Approx(0.0));
}

TEST_CASE("mounting offsets calibrate out")
{
    std::mt19937_64 rng(3);
    for (int i = 0; i < 100; ++i) {
        const Quaternion mt = random_rotation(rng, 180.0);
        const Quaternion mc = random_rotation(rng, 180.0);
        const auto cal = calibrate(mt, mc, Vector3(0, 0, -1), still_monitor());
        const auto flat = compute_leg_pose(cal, mt, mc, 0);
        CHECK(flat.knee_flexion == doctest::Approx(180.0));
        CHECK(flat.thigh_elevation == doctest::Approx(0.0));
        CHECK(flat.calf_elevation == doctest::Approx(0.0));

        const double te = std::uniform_real_distribution<double>(-60, 60)(rng);
        const double ce = std::uniform_real_distribution<double>(-60, 60)(rng);
        const auto pose = compute_leg_pose(cal, elevation(te) * mt, elevation(ce) * mc, 0);
        CHECK(pose.thigh_elevation == doctest::Approx(te));
        CHECK(pose.calf_elevation == doctest::Approx(ce));
        CHECK(pose.knee_flexion == doctest::Approx(flexion_oracle(te, ce)));
    }
}

TEST_CASE("straight leg raise and a right-angle knee")
{
    const auto cal = calibrate(Quaternion::Identity(), Quaternion::Identity(), Vector3(0, 0, -1), still_monitor());
    const auto slr = compute_leg_pose(cal, elevation(30), elevation(30), 0);
    CHECK(slr.knee_flexion == doctest::Approx(180.0));
    CHECK(slr.calf_elevation == doctest::Approx(30.0));

    const auto bent = compute_leg_pose(cal, elevation(45), elevation(-45), 0);
    CHECK(std::abs(bent.knee_flexion - 90.0) < 1e-6);
    CHECK(std::abs(flexion_oracle(45, -45) - 90.0) < 1e-9);
}

TEST_CASE("calibration requires stillness")
{
    StillnessMonitor m;
    for (std::uint32_t t = 0; t <= 1000; t += 10) {
        m.observe(SensorId::Thigh, t, 0.1);
        m.observe(SensorId::Calf, t, t == 600 ? 3.0 : 0.1);
    }
    CHECK_FALSE(m.is_still());
    CHECK_THROWS_AS(calibrate(Quaternion::Identity(), Quaternion::Identity(), Vector3(0, 0, -1), m), rehab::NotStill);
    CHECK_THROWS_AS(calibrate(Quaternion::Identity(), Quaternion::Identity(), Vector3(0, 0, -1), StillnessMonitor{}),
                    rehab::NotStill);
}

TEST_CASE("calibration text round trip")
{
    std::mt19937_64 rng(4);
    CalibrationPose cal;
    cal.thigh_reference = random_rotation(rng, 90);
    cal.calf_reference = random_rotation(rng, 90);
    cal.bed_normal = Vector3(0.01, -0.02, 1.0).normalized();
    const auto back = parse_calibration(format_calibration(cal));
    CHECK(back.thigh_reference.isApprox(cal.thigh_reference, 1e-8));
    CHECK(back.calf_reference.isApprox(cal.calf_reference, 1e-8));
    CHECK(back.bed_normal.isApprox(cal.bed_normal, 1e-8));
    CHECK(format_calibration(back) == format_calibration(cal));
    CHECK_THROWS_AS(parse_calibration("C 1 0 0"), rehab::ParseError);
    CHECK_THROWS_AS(parse_calibration("X 1 0 0 0 1 0 0 0 0 0 1"), rehab::ParseError);
}

TEST_CASE("leg pose stays finite and in range")
{
    std::mt19937_64 rng(5);
    const auto cal = calibrate(Quaternion::Identity(), Quaternion::Identity(), Vector3(0, 0, -1), still_monitor());
    LegPose prev;
    for (std::uint32_t t = 0; t < 2000; ++t) {
        const auto pose = compute_leg_pose(cal, random_rotation(rng, 180), random_rotation(rng, 180), t, &prev);
        CHECK(pose.knee_flexion >= 0.0);
        CHECK(pose.knee_flexion <= 180.0);
        CHECK(std::abs(pose.thigh_elevation) <= 90.0);
        CHECK(std::abs(pose.calf_elevation) <= 90.0);
        CHECK(std::isfinite(pose.knee_angular_velocity));
        prev = pose;
    }
}

TEST_CASE("deviation conventions")
{
    LegPose p;
    p.calf_elevation = 30.0;
    CHECK(deviation(p, ExerciseSpec::standard(ExercisePose::StraightLegRaise)) == 0.0);
    p.knee_flexion = 100.0;  // bent to 80
    CHECK(deviation(p, ExerciseSpec::standard(ExercisePose::BedSupportedKneeBend)) == doctest::Approx(-10.0));
    p.knee_flexion = 175.0;
    CHECK(deviation(p, ExerciseSpec::standard(ExercisePose::KneeExtension)) == doctest::Approx(-5.0));
    p.thigh_elevation = 33.0;
    CHECK(deviation(p, ExerciseSpec::standard(ExercisePose::ProneStraightLegRaise)) == doctest::Approx(3.0));
}

TEST_CASE("exercise spec validation")
{
    auto s = ExerciseSpec::standard(ExercisePose::KneeExtension);
    CHECK_NOTHROW(s.validate());
    CHECK(s.hold_duration_ms() == 10000);
    s.target = 0.0;
    CHECK_THROWS_AS(s.validate(), rehab::ConfigError);
    s = ExerciseSpec::standard(ExercisePose::StraightLegRaise);
    s.hold_band = 6.0;
    CHECK_THROWS_AS(s.validate(), rehab::ConfigError);
    s = ExerciseSpec::standard(ExercisePose::StraightLegRaise);
    s.hold_duration_s = 0.0;
    CHECK_THROWS_AS(s.validate(), rehab::ConfigError);

    for (std::size_t i = 0; i < kExercisePoseCount; ++i) {
        const auto pose = static_cast<ExercisePose>(i);
        CHECK(exercise_pose_from_string(to_string(pose)) == pose);
    }
}
