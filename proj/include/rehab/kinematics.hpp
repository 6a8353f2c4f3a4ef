#pragma once

// Orientation estimation, neutral-pose calibration and leg pose angles.
//
// Frames: the world frame is z-up with gravity along -z and its x axis running
// along the bed from hip to foot. A sensor quaternion rotates body vectors into
// the world frame. The accelerometer channel carries the gravity direction seen
// in the body frame, so a level sensor reads (0, 0, -1 g).

#include "rehab/protocol.hpp"

#include <Eigen/Geometry>

#include <cstdint>
#include <optional>
#include <string>
#include <string_view>

namespace rehab::kinematics {

using Quaternion = Eigen::Quaterniond;
using Vector3 = Eigen::Vector3d;

inline constexpr double kDefaultAlpha = 0.98;
inline constexpr std::uint32_t kMaxIntegrationStepMs = 100;
inline constexpr double kVelocitySmoothingMs = 50.0;

double deg2rad(double deg);
double rad2deg(double rad);

// ZYX (yaw-pitch-roll) Euler angles in degrees.
struct EulerDeg {
    double roll = 0.0;
    double pitch = 0.0;
    double yaw = 0.0;
};

Quaternion quaternion_from_euler(const EulerDeg& euler);
EulerDeg euler_from_quaternion(const Quaternion& q);

// Smallest rotation angle between two orientations, degrees.
double rotation_angle_deg(const Quaternion& a, const Quaternion& b);

struct OrientationState {
    Quaternion attitude = Quaternion::Identity();
    double alpha = kDefaultAlpha;
    std::optional<std::uint32_t> last_timestamp_ms;
    // Heading used whenever the filter (re)seeds from the accelerometer.
    double seed_heading_deg = 0.0;

    // A filter already holding `attitude` as of `timestamp_ms`.
    static OrientationState seeded(const Quaternion& attitude, std::uint32_t timestamp_ms,
                                   double alpha = kDefaultAlpha);
};

enum class UpdateStatus : std::uint8_t { Integrated, Reseeded, StaleSample };

// Complementary filter step: integrates the gyro, then rotates the estimate a
// fraction (1 - alpha) of the way toward the accelerometer's gravity direction.
// The correction axis is horizontal, so heading comes from the gyro alone.
// A sample whose timestamp does not advance is dropped (StaleSample); a gap
// longer than 100 ms reseeds tilt from the accelerometer.
[[nodiscard]] UpdateStatus update_orientation(OrientationState& state, const protocol::ImuFrameRaw& sample);

// Roll/pitch implied by a gravity reading (body frame, any scale), with the given heading.
Quaternion attitude_from_gravity(const Vector3& gravity_body, double heading_deg);

// Tracks how long each sensor has been below the motion threshold.
class StillnessMonitor {
public:
    explicit StillnessMonitor(double threshold_dps = 1.0, std::uint32_t required_ms = 1000)
        : m_threshold_dps(threshold_dps), m_required_ms(required_ms)
    {
    }

    void observe(protocol::SensorId sensor, std::uint32_t timestamp_ms, double angular_rate_dps);
    bool is_still() const;
    void reset();

private:
    struct Track {
        std::optional<std::uint32_t> still_since;
        std::optional<std::uint32_t> last;
    };

    double m_threshold_dps;
    std::uint32_t m_required_ms;
    Track m_tracks[2];
};

struct CalibrationPose {
    Quaternion thigh_reference = Quaternion::Identity();
    Quaternion calf_reference = Quaternion::Identity();
    Vector3 bed_normal = Vector3::UnitZ();

    // Horizontal direction of the leg at calibration: world x projected onto the bed plane.
    Vector3 leg_direction() const;
};

// Throws NotStill unless `stillness` reports both sensors still.
CalibrationPose calibrate(const Quaternion& thigh, const Quaternion& calf, const Vector3& gravity_world,
                          const StillnessMonitor& stillness);

// Calibration text record: "C tw tx ty tz cw cx cy cz nx ny nz", 9 significant digits.
std::string format_calibration(const CalibrationPose& cal);
CalibrationPose parse_calibration(std::string_view line);

struct LegPose {
    std::uint32_t timestamp_ms = 0;
    double knee_flexion = 180.0;   // 180 = straight
    double thigh_elevation = 0.0;  // above the bed plane
    double calf_elevation = 0.0;
    double knee_angular_velocity = 0.0;
};

// Thigh axis runs hip to knee and calf axis knee to ankle; flexion is the angle
// between knee-to-hip and knee-to-ankle, so a straight leg reads 180.
LegPose compute_leg_pose(const CalibrationPose& cal, const Quaternion& thigh, const Quaternion& calf,
                         std::uint32_t timestamp_ms, const LegPose* previous = nullptr);

enum class ExercisePose : std::uint8_t {
    StraightLegRaise = 0,
    ProneStraightLegRaise = 1,
    BedSupportedKneeBend = 2,
    KneeExtension = 3,
};
inline constexpr std::size_t kExercisePoseCount = 4;

enum class ControlledAngle : std::uint8_t {
    KneeFlexion,
    KneeBend,  // 180 - knee flexion
    ThighElevation,
    CalfElevation,
};

struct ExerciseSpec {
    ExercisePose pose = ExercisePose::StraightLegRaise;
    ControlledAngle controlled_angle = ControlledAngle::CalfElevation;
    double target = 30.0;
    double enter_band = 5.0;
    double hold_band = 2.0;
    double hold_duration_s = 10.0;
    unsigned repetitions = 1;

    // Targets 30/30/90/180 degrees on the angle each exercise is judged by.
    static ExerciseSpec standard(ExercisePose pose, unsigned repetitions = 1);

    // Throws ConfigError when an invariant does not hold.
    void validate() const;

    std::uint32_t hold_duration_ms() const;
};

double controlled_angle(const LegPose& pose, ControlledAngle which);

// Controlled angle minus target: negative means under-performed.
double deviation(const LegPose& pose, const ExerciseSpec& spec);

// Controlled angle at the start position of an exercise.
double nominal_rest_angle(ExercisePose pose);

std::string_view to_string(ExercisePose pose);
std::string_view to_string(ControlledAngle angle);
std::optional<ExercisePose> exercise_pose_from_string(std::string_view name);
std::optional<ControlledAngle> controlled_angle_from_string(std::string_view name);

} // namespace rehab::kinematics
