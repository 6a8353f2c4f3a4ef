#include "rehab/pipeline.hpp"

#include "rehab/error.hpp"

#include <cmath>
#include <cstdio>
#include <type_traits>
#include <utility>

namespace rehab::pipeline {

using kinematics::Quaternion;
using protocol::HapticCommandFrame;
using protocol::SensorId;
using session::MovementPhase;

void PipelineConfig::validate() const
{
    if (!(alpha >= 0.0 && alpha <= 1.0)) {
        throw ConfigError("alpha must lie in [0, 1]");
    }
    if (!(stillness_threshold_dps > 0.0) || stillness_ms == 0) {
        throw ConfigError("stillness thresholds must be positive");
    }
    if (!std::isfinite(seed_heading_deg)) {
        throw ConfigError("seed_heading must be finite");
    }
}

std::string format_command_record(const CommandRecord& r)
{
    char buf[160];
    std::snprintf(buf, sizeof buf, "%u %s %s %u %u %s %.3f", r.timestamp_ms,
                  std::string(protocol::to_string(r.command.channel)).c_str(),
                  std::string(protocol::to_string(r.command.actuator)).c_str(), unsigned{r.command.intensity},
                  unsigned{r.command.duration_ms}, std::string(session::to_string(r.phase)).c_str(),
                  r.deviation);
    return buf;
}

std::string format_pose_record(const PoseRecord& r)
{
    char buf[128];
    std::snprintf(buf, sizeof buf, "%u %s %.3f %.3f", r.timestamp_ms, std::string(session::to_string(r.phase)).c_str(),
                  r.angle, r.deviation);
    return buf;
}

Pipeline::Pipeline(session::SessionConfig session, feedback::FeedbackPolicy policy, PipelineConfig config)
    : m_engine(std::move(session)),
      m_policy(std::move(policy)),
      m_config(config),
      m_stillness(config.stillness_threshold_dps, config.stillness_ms)
{
    m_policy.validate();
    m_config.validate();
    for (auto& s : m_sensors) {
        s.filter.alpha = m_config.alpha;
        s.filter.seed_heading_deg = m_config.seed_heading_deg;
    }
}

void Pipeline::on_decoder_diagnostic(const protocol::Diagnostic& d)
{
    count("decoder." + std::string(protocol::to_string(d.kind)));
    m_corrupt = true;
}

void Pipeline::on_parse_error()
{
    count("parse_error");
    m_corrupt = true;
}

void Pipeline::set_calibration(const kinematics::CalibrationPose& cal)
{
    m_calibration = cal;
}

bool Pipeline::take_calibration_event()
{
    return std::exchange(m_calibration_event, false);
}

std::vector<HapticCommandFrame> Pipeline::on_frame(const protocol::Frame& frame)
{
    if (m_finished) {
        return {};
    }
    return std::visit(
        [this](const auto& f) -> std::vector<HapticCommandFrame> {
            using T = std::decay_t<decltype(f)>;
            if constexpr (std::is_same_v<T, protocol::ImuFrameFiltered>) {
                SensorTrack& track = m_sensors[static_cast<std::size_t>(f.sensor)];
                const Quaternion q = kinematics::quaternion_from_euler({f.roll_deg(), f.pitch_deg(), f.yaw_deg()});
                std::optional<double> rate;
                if (track.attitude && track.timestamp && f.timestamp_ms > *track.timestamp) {
                    const double dt_s = (f.timestamp_ms - *track.timestamp) / 1000.0;
                    rate = kinematics::rotation_angle_deg(*track.attitude, q) / dt_s;
                }
                return on_sensor(f.sensor, f.timestamp_ms, q, rate);
            } else if constexpr (std::is_same_v<T, protocol::ImuFrameRaw>) {
                SensorTrack& track = m_sensors[static_cast<std::size_t>(f.sensor)];
                if (track.timestamp && f.timestamp_ms <= *track.timestamp) {
                    count("out_of_order_frame");
                    return {};
                }
                const auto status = kinematics::update_orientation(track.filter, f);
                if (status == kinematics::UpdateStatus::StaleSample) {
                    count("stale_sample");
                    return {};
                }
                const double rate = std::sqrt(f.gyro_dps(0) * f.gyro_dps(0) + f.gyro_dps(1) * f.gyro_dps(1) +
                                              f.gyro_dps(2) * f.gyro_dps(2));
                return on_sensor(f.sensor, f.timestamp_ms, track.filter.attitude, rate);
            } else {
                return {};
            }
        },
        frame);
}

std::vector<HapticCommandFrame> Pipeline::on_sensor(SensorId sensor, std::uint32_t ts, const Quaternion& q,
                                                    std::optional<double> rate)
{
    SensorTrack& track = m_sensors[static_cast<std::size_t>(sensor)];
    if (track.timestamp && ts <= *track.timestamp) {
        count("out_of_order_frame");
        return {};
    }
    track.attitude = q;
    track.timestamp = ts;
    if (rate) {
        m_stillness.observe(sensor, ts, *rate);
    }

    const SensorTrack& thigh = m_sensors[0];
    const SensorTrack& calf = m_sensors[1];
    if (!thigh.timestamp || !calf.timestamp || *thigh.timestamp != *calf.timestamp) {
        return {};
    }
    if (!m_calibration) {
        if (!m_stillness.is_still()) {
            return {};
        }
        const auto cal = kinematics::calibrate(*thigh.attitude, *calf.attitude, -kinematics::Vector3::UnitZ(),
                                               m_stillness);
        // Through the text form so a replay that reads the record back matches bit for bit.
        m_calibration = kinematics::parse_calibration(kinematics::format_calibration(cal));
        m_calibration_event = true;
    }
    const kinematics::LegPose pose = kinematics::compute_leg_pose(
        *m_calibration, *thigh.attitude, *calf.attitude, ts, m_last_pose ? &*m_last_pose : nullptr);
    m_last_pose = pose;
    return on_pose(pose);
}

std::vector<HapticCommandFrame> Pipeline::on_pose(const kinematics::LegPose& pose)
{
    if (m_engine.complete()) {
        return {};
    }
    const session::StepResult result = m_engine.step(pose);
    for (const auto& d : result.diagnostics) {
        count(d.issue == session::StepIssue::OutOfOrderSample ? "out_of_order_sample" : "gap_abort");
    }
    if (!result.accepted) {
        return {};
    }
    if (!m_first_step) {
        m_first_step = pose.timestamp_ms;
    }

    const auto& spec = m_engine.current_spec();
    const double angle = kinematics::controlled_angle(pose, spec.controlled_angle);
    const double dev = angle - spec.target;
    const MovementPhase phase = m_engine.complete() ? MovementPhase::Rest : m_engine.phase();
    m_poses.push_back({pose.timestamp_ms, phase, angle, dev});

    const std::uint32_t since = m_engine.phase_start_ms();
    const double elapsed_s = pose.timestamp_ms > since ? (pose.timestamp_ms - since) / 1000.0 : 0.0;
    return emit(feedback::plan_feedback(phase, dev, spec, m_policy, elapsed_s), pose.timestamp_ms, phase, dev);
}

std::vector<HapticCommandFrame> Pipeline::emit(const std::vector<HapticCommandFrame>& plan, std::uint32_t ts,
                                               MovementPhase phase, double dev)
{
    auto out = m_scheduler.diff(plan, ts);
    for (const auto& cmd : out) {
        m_commands.push_back({ts, cmd, phase, dev});
    }
    return out;
}

std::vector<HapticCommandFrame> Pipeline::finish()
{
    if (m_finished) {
        return {};
    }
    m_finished = true;
    m_engine.finish();
    if (!m_last_pose) {
        return {};
    }
    const auto ts = m_engine.last_timestamp().value_or(m_last_pose->timestamp_ms);
    return emit({}, ts, MovementPhase::Rest, 0.0);
}

metrics::ReportMeta Pipeline::report_meta(std::string session_id, std::string patient_id,
                                          std::string config_hash) const
{
    metrics::ReportMeta meta;
    meta.session_id = std::move(session_id);
    meta.patient_id = std::move(patient_id);
    meta.config_hash = std::move(config_hash);
    meta.start_ms = m_first_step;
    if (m_first_step) {
        meta.end_ms = m_engine.last_timestamp();
    }
    meta.diagnostics = m_diagnostics;
    return meta;
}

} // namespace rehab::pipeline
