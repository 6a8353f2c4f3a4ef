#include "rehab/kinematics.hpp"

#include "rehab/error.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdio>
#include <numbers>
#include <sstream>

namespace rehab::kinematics {
namespace {

constexpr double kOneG_mg = 1000.0;

double clamp_unit(double v) { return std::clamp(v, -1.0, 1.0); }

// Angle between two vectors in degrees, robust near 0 and 180.
double angle_between_deg(const Vector3& a, const Vector3& b)
{
    return rad2deg(std::atan2(a.cross(b).norm(), a.dot(b)));
}

double elevation_deg(const Vector3& axis, const Vector3& normal)
{
    return rad2deg(std::asin(clamp_unit(axis.dot(normal) / axis.norm())));
}

} // namespace

double deg2rad(double deg) { return deg * std::numbers::pi / 180.0; }
double rad2deg(double rad) { return rad * 180.0 / std::numbers::pi; }

Quaternion quaternion_from_euler(const EulerDeg& e)
{
    return Quaternion(Eigen::AngleAxisd(deg2rad(e.yaw), Vector3::UnitZ()) *
                      Eigen::AngleAxisd(deg2rad(e.pitch), Vector3::UnitY()) *
                      Eigen::AngleAxisd(deg2rad(e.roll), Vector3::UnitX()));
}

EulerDeg euler_from_quaternion(const Quaternion& qin)
{
    const Eigen::Matrix3d r = qin.normalized().toRotationMatrix();
    EulerDeg e;
    const double cos_pitch = std::hypot(r(0, 0), r(1, 0));
    e.pitch = rad2deg(std::atan2(-r(2, 0), cos_pitch));
    if (cos_pitch > 1e-9) {
        e.roll = rad2deg(std::atan2(r(2, 1), r(2, 2)));
        e.yaw = rad2deg(std::atan2(r(1, 0), r(0, 0)));
    } else {
        // Gimbal lock: only roll -/+ yaw is observable, put it all in yaw.
        e.roll = 0.0;
        e.yaw = rad2deg(std::atan2(-r(0, 1), r(1, 1)));
    }
    return e;
}

double rotation_angle_deg(const Quaternion& a, const Quaternion& b)
{
    const double d = std::abs(a.normalized().dot(b.normalized()));
    return rad2deg(2.0 * std::acos(std::min(1.0, d)));
}

OrientationState OrientationState::seeded(const Quaternion& attitude, std::uint32_t timestamp_ms, double alpha)
{
    OrientationState s;
    s.attitude = attitude.normalized();
    s.alpha = alpha;
    s.last_timestamp_ms = timestamp_ms;
    s.seed_heading_deg = euler_from_quaternion(s.attitude).yaw;
    return s;
}

Quaternion attitude_from_gravity(const Vector3& gravity_body, double heading_deg)
{
    const Vector3 g = gravity_body.normalized();
    EulerDeg e;
    e.roll = rad2deg(std::atan2(-g.y(), -g.z()));
    e.pitch = rad2deg(std::atan2(g.x(), std::hypot(g.y(), g.z())));
    e.yaw = heading_deg;
    return quaternion_from_euler(e);
}

UpdateStatus update_orientation(OrientationState& state, const protocol::ImuFrameRaw& sample)
{
    const std::uint32_t ts = sample.timestamp_ms;
    if (state.last_timestamp_ms && ts <= *state.last_timestamp_ms) {
        return UpdateStatus::StaleSample;
    }

    const Vector3 accel(sample.accel_mg[0], sample.accel_mg[1], sample.accel_mg[2]);
    const double accel_norm = accel.norm();

    if (!state.last_timestamp_ms || ts - *state.last_timestamp_ms > kMaxIntegrationStepMs) {
        const double heading =
            state.last_timestamp_ms ? euler_from_quaternion(state.attitude).yaw : state.seed_heading_deg;
        if (accel_norm > 1e-6) {
            state.attitude = attitude_from_gravity(accel, heading);
        }
        state.last_timestamp_ms = ts;
        return UpdateStatus::Reseeded;
    }

    const double dt = (ts - *state.last_timestamp_ms) / 1000.0;
    const Vector3 omega(deg2rad(sample.gyro_dps(0)), deg2rad(sample.gyro_dps(1)), deg2rad(sample.gyro_dps(2)));
    const double rate = omega.norm();
    if (rate > 0.0) {
        state.attitude = state.attitude * Quaternion(Eigen::AngleAxisd(rate * dt, omega / rate));
    }

    // Skip the gravity reference while the sensor is clearly accelerating.
    if (state.alpha < 1.0 && accel_norm > 0.5 * kOneG_mg && accel_norm < 1.5 * kOneG_mg) {
        const Vector3 measured_world = state.attitude * (accel / accel_norm);
        const Vector3 down(0.0, 0.0, -1.0);
        Vector3 axis = measured_world.cross(down);
        const double s = axis.norm();
        const double c = measured_world.dot(down);
        const double theta = std::atan2(s, c);
        if (s > 1e-12) {
            axis /= s;
        } else {
            axis = Vector3::UnitX();
        }
        if (theta > 0.0) {
            state.attitude = Quaternion(Eigen::AngleAxisd((1.0 - state.alpha) * theta, axis)) * state.attitude;
        }
    }
    state.attitude.normalize();
    state.last_timestamp_ms = ts;
    return UpdateStatus::Integrated;
}

void StillnessMonitor::observe(protocol::SensorId sensor, std::uint32_t timestamp_ms, double angular_rate_dps)
{
    Track& t = m_tracks[static_cast<std::size_t>(sensor)];
    if (std::abs(angular_rate_dps) < m_threshold_dps) {
        if (!t.still_since) {
            t.still_since = timestamp_ms;
        }
    } else {
        t.still_since.reset();
    }
    t.last = timestamp_ms;
}

bool StillnessMonitor::is_still() const
{
    return std::all_of(std::begin(m_tracks), std::end(m_tracks), [this](const Track& t) {
        return t.still_since && t.last && *t.last - *t.still_since >= m_required_ms;
    });
}

void StillnessMonitor::reset()
{
    m_tracks[0] = {};
    m_tracks[1] = {};
}

Vector3 CalibrationPose::leg_direction() const
{
    const Vector3 n = bed_normal.normalized();
    Vector3 u = Vector3::UnitX() - Vector3::UnitX().dot(n) * n;
    if (u.norm() < 1e-6) {
        u = Vector3::UnitY() - Vector3::UnitY().dot(n) * n;
    }
    return u.normalized();
}

CalibrationPose calibrate(const Quaternion& thigh, const Quaternion& calf, const Vector3& gravity_world,
                          const StillnessMonitor& stillness)
{
    if (!stillness.is_still()) {
        throw NotStill("calibration needs both sensors below 1 dps for at least 1 s");
    }
    if (gravity_world.norm() < 1e-9) {
        throw NumericalDegeneracy("gravity estimate has zero length");
    }
    CalibrationPose cal;
    cal.thigh_reference = thigh.normalized();
    cal.calf_reference = calf.normalized();
    cal.bed_normal = -gravity_world.normalized();
    return cal;
}

std::string format_calibration(const CalibrationPose& cal)
{
    const std::array<double, 11> v{cal.thigh_reference.w(), cal.thigh_reference.x(), cal.thigh_reference.y(),
                                   cal.thigh_reference.z(), cal.calf_reference.w(),  cal.calf_reference.x(),
                                   cal.calf_reference.y(),  cal.calf_reference.z(),  cal.bed_normal.x(),
                                   cal.bed_normal.y(),      cal.bed_normal.z()};
    std::string out = "C";
    char buf[40];
    for (double x : v) {
        std::snprintf(buf, sizeof buf, " %.9g", x);
        out += buf;
    }
    return out;
}

CalibrationPose parse_calibration(std::string_view line)
{
    std::istringstream is{std::string(line)};
    std::string tag;
    std::array<double, 11> v{};
    is >> tag;
    for (double& x : v) {
        is >> x;
    }
    std::string extra;
    if (tag != "C" || is.fail() || (is >> extra)) {
        throw ParseError("malformed calibration record");
    }
    CalibrationPose cal;
    cal.thigh_reference = Quaternion(v[0], v[1], v[2], v[3]);
    cal.calf_reference = Quaternion(v[4], v[5], v[6], v[7]);
    cal.bed_normal = Vector3(v[8], v[9], v[10]);
    if (cal.thigh_reference.norm() < 1e-6 || cal.calf_reference.norm() < 1e-6 || cal.bed_normal.norm() < 1e-6) {
        throw ParseError("calibration record has a zero-length component");
    }
    return cal;
}

LegPose compute_leg_pose(const CalibrationPose& cal, const Quaternion& thigh, const Quaternion& calf,
                         std::uint32_t timestamp_ms, const LegPose* previous)
{
    const Quaternion thigh_delta = thigh.normalized() * cal.thigh_reference.conjugate();
    const Quaternion calf_delta = calf.normalized() * cal.calf_reference.conjugate();
    const Vector3 u = cal.leg_direction();
    const Vector3 n = cal.bed_normal.normalized();

    const Vector3 thigh_axis = thigh_delta * u;
    const Vector3 calf_axis = calf_delta * u;
    if (thigh_axis.norm() < 1e-9 || calf_axis.norm() < 1e-9) {
        throw NumericalDegeneracy("segment axis has near-zero length");
    }

    LegPose pose;
    pose.timestamp_ms = timestamp_ms;
    pose.knee_flexion = angle_between_deg(-thigh_axis, calf_axis);
    pose.thigh_elevation = elevation_deg(thigh_axis, n);
    pose.calf_elevation = elevation_deg(calf_axis, n);

    if (previous && timestamp_ms > previous->timestamp_ms) {
        const double dt_ms = timestamp_ms - previous->timestamp_ms;
        const double raw = (pose.knee_flexion - previous->knee_flexion) / (dt_ms / 1000.0);
        const double gain = 1.0 - std::exp(-dt_ms / kVelocitySmoothingMs);
        pose.knee_angular_velocity = previous->knee_angular_velocity + gain * (raw - previous->knee_angular_velocity);
    } else if (previous) {
        pose.knee_angular_velocity = previous->knee_angular_velocity;
    }
    return pose;
}

ExerciseSpec ExerciseSpec::standard(ExercisePose pose, unsigned repetitions)
{
    ExerciseSpec spec;
    spec.pose = pose;
    spec.repetitions = repetitions;
    switch (pose) {
    case ExercisePose::StraightLegRaise:
        spec.controlled_angle = ControlledAngle::CalfElevation;
        spec.target = 30.0;
        break;
    case ExercisePose::ProneStraightLegRaise:
        spec.controlled_angle = ControlledAngle::ThighElevation;
        spec.target = 30.0;
        break;
    case ExercisePose::BedSupportedKneeBend:
        spec.controlled_angle = ControlledAngle::KneeBend;
        spec.target = 90.0;
        break;
    case ExercisePose::KneeExtension:
        spec.controlled_angle = ControlledAngle::KneeFlexion;
        spec.target = 180.0;
        break;
    }
    return spec;
}

void ExerciseSpec::validate() const
{
    if (!(target > 0.0 && target <= 180.0)) {
        throw ConfigError("exercise target must lie in (0, 180]");
    }
    if (!(hold_band > 0.0) || !(enter_band > 0.0)) {
        throw ConfigError("exercise bands must be positive");
    }
    if (hold_band > enter_band) {
        throw ConfigError("hold_band must not exceed enter_band");
    }
    if (!(hold_duration_s > 0.0) || hold_duration_s > 3600.0) {
        throw ConfigError("hold_duration must be positive and at most one hour");
    }
    if (repetitions == 0) {
        throw ConfigError("repetitions must be at least 1");
    }
}

std::uint32_t ExerciseSpec::hold_duration_ms() const
{
    return static_cast<std::uint32_t>(std::llround(hold_duration_s * 1000.0));
}

double controlled_angle(const LegPose& pose, ControlledAngle which)
{
    switch (which) {
    case ControlledAngle::KneeFlexion:
        return pose.knee_flexion;
    case ControlledAngle::KneeBend:
        return 180.0 - pose.knee_flexion;
    case ControlledAngle::ThighElevation:
        return pose.thigh_elevation;
    case ControlledAngle::CalfElevation:
        return pose.calf_elevation;
    }
    return 0.0;
}

double deviation(const LegPose& pose, const ExerciseSpec& spec)
{
    return controlled_angle(pose, spec.controlled_angle) - spec.target;
}

double nominal_rest_angle(ExercisePose pose)
{
    return pose == ExercisePose::KneeExtension ? 90.0 : 0.0;
}

std::string_view to_string(ExercisePose pose)
{
    switch (pose) {
    case ExercisePose::StraightLegRaise:
        return "straight_leg_raise";
    case ExercisePose::ProneStraightLegRaise:
        return "prone_straight_leg_raise";
    case ExercisePose::BedSupportedKneeBend:
        return "bed_supported_knee_bend";
    case ExercisePose::KneeExtension:
        return "knee_extension";
    }
    return "?";
}

std::string_view to_string(ControlledAngle angle)
{
    switch (angle) {
    case ControlledAngle::KneeFlexion:
        return "knee_flexion";
    case ControlledAngle::KneeBend:
        return "knee_bend";
    case ControlledAngle::ThighElevation:
        return "thigh_elevation";
    case ControlledAngle::CalfElevation:
        return "calf_elevation";
    }
    return "?";
}

std::optional<ExercisePose> exercise_pose_from_string(std::string_view name)
{
    for (std::uint8_t i = 0; i < kExercisePoseCount; ++i) {
        if (to_string(static_cast<ExercisePose>(i)) == name) {
            return static_cast<ExercisePose>(i);
        }
    }
    return std::nullopt;
}

std::optional<ControlledAngle> controlled_angle_from_string(std::string_view name)
{
    for (std::uint8_t i = 0; i < 4; ++i) {
        if (to_string(static_cast<ControlledAngle>(i)) == name) {
            return static_cast<ControlledAngle>(i);
        }
    }
    return std::nullopt;
}

} // namespace rehab::kinematics
