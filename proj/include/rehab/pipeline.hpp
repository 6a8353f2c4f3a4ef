#pragma once

// Frame-level driver: IMU frames in, leg poses through the session engine,
// haptic commands out. Shared by live streaming, replay and the simulator.

#include "rehab/feedback.hpp"
#include "rehab/kinematics.hpp"
#include "rehab/metrics.hpp"
#include "rehab/protocol.hpp"
#include "rehab/session.hpp"

#include <array>
#include <cstdint>
#include <map>
#include <optional>
#include <string>
#include <vector>

namespace rehab::pipeline {

struct PipelineConfig {
    double alpha = kinematics::kDefaultAlpha;
    double stillness_threshold_dps = 1.0;
    std::uint32_t stillness_ms = 1000;
    double seed_heading_deg = 0.0;

    void validate() const;
};

struct CommandRecord {
    std::uint32_t timestamp_ms = 0;
    protocol::HapticCommandFrame command;
    session::MovementPhase phase = session::MovementPhase::Understanding;
    double deviation = 0.0;
};

struct PoseRecord {
    std::uint32_t timestamp_ms = 0;
    session::MovementPhase phase = session::MovementPhase::Understanding;
    double angle = 0.0;
    double deviation = 0.0;
};

// "<ts> <channel> <actuator> <intensity> <duration_ms> <phase> <deviation>"
std::string format_command_record(const CommandRecord& r);
// "<ts> <phase> <angle> <deviation>"
std::string format_pose_record(const PoseRecord& r);

class Pipeline {
public:
    Pipeline(session::SessionConfig session, feedback::FeedbackPolicy policy, PipelineConfig config = {});

    // Returns the haptic commands triggered by this frame. Haptic frames are ignored.
    std::vector<protocol::HapticCommandFrame> on_frame(const protocol::Frame& frame);

    // Steps the engine with an already computed pose. on_frame ends up here.
    std::vector<protocol::HapticCommandFrame> on_pose(const kinematics::LegPose& pose);

    void on_decoder_diagnostic(const protocol::Diagnostic& d);
    void on_parse_error();

    // Replaces automatic calibration.
    void set_calibration(const kinematics::CalibrationPose& cal);
    const std::optional<kinematics::CalibrationPose>& calibration() const noexcept { return m_calibration; }
    // True once, right after the frame that established calibration.
    bool take_calibration_event();

    // End of input. Aborts the rep in progress and releases every actuator.
    std::vector<protocol::HapticCommandFrame> finish();

    const session::SessionEngine& engine() const noexcept { return m_engine; }
    const std::optional<kinematics::LegPose>& last_pose() const noexcept { return m_last_pose; }
    const std::vector<CommandRecord>& commands() const noexcept { return m_commands; }
    const std::vector<PoseRecord>& poses() const noexcept { return m_poses; }
    const std::map<std::string, std::size_t>& diagnostics() const noexcept { return m_diagnostics; }
    // Decoder or parse errors were seen.
    bool saw_corruption() const noexcept { return m_corrupt; }
    bool finished() const noexcept { return m_finished; }

    metrics::ReportMeta report_meta(std::string session_id, std::string patient_id, std::string config_hash) const;

private:
    struct SensorTrack {
        kinematics::OrientationState filter;
        std::optional<kinematics::Quaternion> attitude;
        std::optional<std::uint32_t> timestamp;
    };

    void count(const std::string& name) { ++m_diagnostics[name]; }
    std::vector<protocol::HapticCommandFrame> on_sensor(protocol::SensorId sensor, std::uint32_t ts,
                                                        const kinematics::Quaternion& q, std::optional<double> rate);
    std::vector<protocol::HapticCommandFrame> emit(const std::vector<protocol::HapticCommandFrame>& plan,
                                                   std::uint32_t ts, session::MovementPhase phase, double dev);

    session::SessionEngine m_engine;
    feedback::FeedbackPolicy m_policy;
    PipelineConfig m_config;
    feedback::CommandScheduler m_scheduler;
    kinematics::StillnessMonitor m_stillness;
    std::array<SensorTrack, 2> m_sensors;
    std::optional<kinematics::CalibrationPose> m_calibration;
    bool m_calibration_event = false;
    std::optional<kinematics::LegPose> m_last_pose;
    std::optional<std::uint32_t> m_first_step;
    std::vector<CommandRecord> m_commands;
    std::vector<PoseRecord> m_poses;
    std::map<std::string, std::size_t> m_diagnostics;
    bool m_corrupt = false;
    bool m_finished = false;
};

} // namespace rehab::pipeline
