#include "rehab/sim.hpp"

#include "rehab/error.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>

namespace rehab::sim {

using kinematics::ExercisePose;
using kinematics::Quaternion;
using kinematics::Vector3;
using protocol::Actuator;
using protocol::Channel;
using session::MovementPhase;

void PatientModel::validate() const
{
    const double values[] = {reaction_delay_s,     time_constant_s,   tremor_amplitude_deg,
                             tremor_frequency_hz,  fatigue_droop_dps, warning_response_latency_s,
                             mount_offset_max_deg};
    for (double v : values) {
        if (!(v >= 0.0) || !std::isfinite(v)) {
            throw ConfigError("patient parameters must be finite and nonnegative");
        }
    }
    if (!(time_constant_s > 0.0)) {
        throw ConfigError("patient time_constant must be positive");
    }
    if (!(malingering_factor > 0.0 && malingering_factor <= 1.0)) {
        throw ConfigError("malingering_factor must lie in (0, 1]");
    }
}

void DeviceModel::validate() const
{
    if (!(pump_time_constant_s > 0.0) || !(max_force_n > 0.0) || !(vibro_latency_ms >= 0.0) ||
        !(pump_bias_dps_per_n >= 0.0) || !(airbag_width_cm > 0.0) || !(airbag_length_cm > 0.0)) {
        throw ConfigError("device parameters must be positive");
    }
}

void patient_step(const PatientModel& model, PatientState& state, double dt_s, double bias_dps)
{
    const double decay = std::exp(-dt_s / model.time_constant_s);
    state.angle = state.intent + (state.angle - state.intent) * decay +
                  bias_dps * model.time_constant_s * (1.0 - decay);
}

namespace {

Quaternion elevation(double deg)
{
    // Positive elevation lifts the segment's +x end toward +z.
    return Quaternion(Eigen::AngleAxisd(-kinematics::deg2rad(deg), Vector3::UnitY()));
}

} // namespace

SegmentPose segment_pose(ExercisePose pose, double c)
{
    switch (pose) {
    case ExercisePose::StraightLegRaise:
        return {elevation(c), elevation(c)};
    case ExercisePose::ProneStraightLegRaise: {
        const Quaternion prone(Eigen::AngleAxisd(std::numbers::pi, Vector3::UnitX()));
        return {elevation(c) * prone, elevation(c) * prone};
    }
    case ExercisePose::BedSupportedKneeBend:
        return {elevation(c / 2.0), elevation(-c / 2.0)};
    case ExercisePose::KneeExtension:
        return {elevation(0.0), elevation(-(180.0 - c))};
    }
    return {Quaternion::Identity(), Quaternion::Identity()};
}

DeviceEmulator::DeviceEmulator(DeviceModel model, feedback::FeedbackPolicy policy)
    : m_model(model), m_policy(std::move(policy))
{
    m_model.validate();
}

void DeviceEmulator::receive(std::uint32_t now_ms, const protocol::HapticCommandFrame& cmd)
{
    const auto i = static_cast<std::size_t>(cmd.channel);
    switch (cmd.actuator) {
    case Actuator::PumpInflate:
        m_target[i] = m_model.max_force_n * cmd.intensity / 255.0;
        break;
    case Actuator::PumpDeflate:
        m_target[i] = 0.0;
        break;
    case Actuator::Vibro:
        if (cmd.intensity > 0) {
            m_pending_onsets.push_back(now_ms + static_cast<std::uint32_t>(std::lround(m_model.vibro_latency_ms)));
        }
        break;
    }
}

void DeviceEmulator::advance(double dt_s)
{
    const double gain = 1.0 - std::exp(-dt_s / m_model.pump_time_constant_s);
    for (std::size_t i = 0; i < m_force.size(); ++i) {
        m_force[i] += gain * (m_target[i] - m_force[i]);
    }
}

std::vector<std::uint32_t> DeviceEmulator::take_vibro_onsets(std::uint32_t now_ms)
{
    std::vector<std::uint32_t> out;
    while (!m_pending_onsets.empty() && m_pending_onsets.front() <= now_ms) {
        out.push_back(m_pending_onsets.front());
        m_pending_onsets.pop_front();
    }
    return out;
}

double DeviceEmulator::bias_dps(ExercisePose pose) const
{
    const auto& map = m_policy.channels_for(pose);
    return m_model.pump_bias_dps_per_n * (force(map.raise) - force(map.lower));
}

PatientController::PatientController(PatientModel model, session::SessionConfig config, std::uint64_t seed)
    : m_model(model), m_config(std::move(config))
{
    m_model.validate();
    Random rng(seed ^ 0x7472656d6f72ULL);
    m_tremor_phase = rng.uniform(0.0, 2.0 * std::numbers::pi);
    // Calibration needs the leg flat on the bed, whatever the first exercise.
    const bool flexion = m_config.exercises.at(0).controlled_angle == kinematics::ControlledAngle::KneeFlexion;
    m_state.angle = flexion ? 180.0 : 0.0;
    m_state.intent = m_state.angle;
}

double PatientController::rest() const
{
    return kinematics::nominal_rest_angle(pose());
}

double PatientController::raise_target() const
{
    const double target = m_config.exercises.at(m_exercise).target;
    return rest() + m_model.malingering_factor * (target - rest());
}

void PatientController::observe(std::uint32_t now_ms, const session::SessionEngine& engine)
{
    if (m_done || !engine.started()) {
        return;
    }
    if (engine.complete()) {
        m_done = true;
        m_pending.clear();
        m_state.intent = rest();
        return;
    }
    const std::size_t reps = engine.reps().size();
    const MovementPhase phase = engine.phase();
    if (!m_seen_reps) {
        // First sample after calibration: settle into the start position.
        m_state.angle = rest();
    }
    const bool new_rep_count = !m_seen_reps || *m_seen_reps != reps;
    const bool break_over = m_seen_phase == MovementPhase::Rest && phase != MovementPhase::Rest;
    m_seen_reps = reps;
    m_seen_phase = phase;

    if (new_rep_count && phase == MovementPhase::Rest) {
        // Repositioning for the next exercise happens at the start of the break.
        m_exercise = std::min(engine.exercise_index() + 1, m_config.exercises.size() - 1);
        m_state.angle = rest();
        m_state.intent = rest();
        m_pending.clear();
        m_waiting_to_raise = false;
        m_returning = false;
        m_holding = false;
        return;
    }
    if (new_rep_count || break_over) {
        m_exercise = engine.exercise_index();
        m_rep_start = now_ms;
        m_waiting_to_raise = true;
        m_returning = false;
        m_pending.clear();
        m_state.intent = rest();
    }
    m_holding = phase == MovementPhase::Holding;
    if (phase == MovementPhase::Retrieving && !m_returning) {
        m_returning = true;
        const auto when = now_ms + static_cast<std::uint32_t>(std::lround(m_model.reaction_delay_s * 1000.0));
        m_pending.emplace_back(when, rest());
    }
}

void PatientController::on_warning(std::uint32_t onset_ms)
{
    if (m_done || m_returning) {
        return;
    }
    const auto when =
        onset_ms + static_cast<std::uint32_t>(std::lround(m_model.warning_response_latency_s * 1000.0));
    m_pending.emplace_back(when, m_config.exercises.at(m_exercise).target);
}

double PatientController::advance(std::uint32_t now_ms, double dt_s, double bias_dps, bool tremor)
{
    std::stable_sort(m_pending.begin(), m_pending.end(),
                     [](const auto& a, const auto& b) { return a.first < b.first; });
    while (!m_pending.empty() && m_pending.front().first <= now_ms) {
        m_state.intent = m_pending.front().second;
        m_pending.erase(m_pending.begin());
    }
    const auto reaction_ms = static_cast<std::uint32_t>(std::lround(m_model.reaction_delay_s * 1000.0));
    if (m_waiting_to_raise && now_ms - m_rep_start >= reaction_ms && std::abs(m_state.angle - rest()) < 2.0) {
        m_waiting_to_raise = false;
        m_state.intent = raise_target();
    }
    if (m_holding && !m_returning) {
        const double target = m_config.exercises.at(m_exercise).target;
        const double toward_rest = target >= rest() ? -1.0 : 1.0;
        m_state.intent += toward_rest * m_model.fatigue_droop_dps * dt_s;
    }
    patient_step(m_model, m_state, dt_s, bias_dps);

    double measured = m_state.angle;
    if (tremor && m_model.tremor_amplitude_deg > 0.0) {
        const double t = now_ms / 1000.0;
        measured += m_model.tremor_amplitude_deg *
                    std::sin(2.0 * std::numbers::pi * m_model.tremor_frequency_hz * t + m_tremor_phase);
    }
    return measured;
}

namespace {

Quaternion random_mount(Random& rng, double max_deg)
{
    const double z = rng.uniform(-1.0, 1.0);
    const double phi = rng.uniform(0.0, 2.0 * std::numbers::pi);
    const double r = std::sqrt(std::max(0.0, 1.0 - z * z));
    const Vector3 axis(r * std::cos(phi), r * std::sin(phi), z);
    const double angle = kinematics::deg2rad(rng.uniform(0.0, max_deg));
    return Quaternion(Eigen::AngleAxisd(angle, axis));
}

double default_duration_limit(const session::SessionConfig& cfg)
{
    double total = 60.0;
    for (const auto& e : cfg.exercises) {
        total += e.repetitions * (cfg.thresholds.reach_timeout_s + e.hold_duration_s + 60.0);
    }
    total += cfg.inter_pose_break_s * static_cast<double>(cfg.exercises.size());
    return total;
}

} // namespace

SimResult run_closed_loop(const SimSetup& setup)
{
    setup.session.validate();
    Random rng(setup.seed);
    const std::array<Quaternion, 2> mounts = {random_mount(rng, setup.patient.mount_offset_max_deg),
                                              random_mount(rng, setup.patient.mount_offset_max_deg)};

    SimResult result{pipeline::Pipeline(setup.session, setup.feedback, setup.pipeline), {}, {}, {}, 0.0, 0.0, false};
    pipeline::Pipeline& pipe = result.pipeline;
    PatientController patient(setup.patient, setup.session, rng.next());
    DeviceEmulator device(setup.device, setup.feedback);
    protocol::StreamDecoder imu_decoder;
    protocol::StreamDecoder haptic_decoder;

    const double limit_s = setup.max_duration_s > 0.0 ? setup.max_duration_s : default_duration_limit(setup.session);
    const auto limit_ms = static_cast<std::uint64_t>(limit_s * 1000.0);
    const double dt_s = kTickMs / 1000.0;
    result.min_angle = result.max_angle = patient.true_angle();

    for (std::uint64_t t64 = 0;; t64 += kTickMs) {
        if (t64 > limit_ms) {
            result.hit_duration_limit = true;
            break;
        }
        const auto t = static_cast<std::uint32_t>(t64);

        device.advance(dt_s);
        for (std::uint32_t onset : device.take_vibro_onsets(t)) {
            patient.on_warning(onset);
        }
        // Tremor starts once the session does; calibration needs a still leg.
        const double angle = patient.advance(t, dt_s, device.bias_dps(patient.pose()), pipe.engine().started());
        result.min_angle = std::min(result.min_angle, patient.true_angle());
        result.max_angle = std::max(result.max_angle, patient.true_angle());

        const SegmentPose seg = segment_pose(patient.pose(), angle);
        const std::array<Quaternion, 2> sensors = {seg.thigh * mounts[0], seg.calf * mounts[1]};
        std::vector<std::uint8_t> bytes;
        for (std::size_t s = 0; s < 2; ++s) {
            const auto e = kinematics::euler_from_quaternion(sensors[s]);
            const auto frame = protocol::ImuFrameFiltered::from_degrees(static_cast<protocol::SensorId>(s), t, e.roll,
                                                                        e.pitch, e.yaw, protocol::kFlagCalibrated);
            protocol::append_frame(bytes, frame);
        }
        result.imu_stream.insert(result.imu_stream.end(), bytes.begin(), bytes.end());

        std::vector<protocol::HapticCommandFrame> commands;
        const auto decoded = imu_decoder.feed(bytes);
        for (const auto& d : decoded.diagnostics) {
            pipe.on_decoder_diagnostic(d);
        }
        for (const auto& frame : decoded.frames) {
            result.trace.push_back(protocol::format_record(frame));
            auto out = pipe.on_frame(frame);
            commands.insert(commands.end(), out.begin(), out.end());
            if (pipe.take_calibration_event()) {
                result.trace.push_back(kinematics::format_calibration(*pipe.calibration()));
            }
        }

        std::vector<std::uint8_t> haptic_bytes;
        for (const auto& cmd : commands) {
            protocol::append_frame(haptic_bytes, cmd);
        }
        result.haptic_stream.insert(result.haptic_stream.end(), haptic_bytes.begin(), haptic_bytes.end());
        for (const auto& frame : haptic_decoder.feed(haptic_bytes).frames) {
            if (const auto* cmd = std::get_if<protocol::HapticCommandFrame>(&frame)) {
                device.receive(t, *cmd);
            }
        }

        patient.observe(t, pipe.engine());
        if (pipe.engine().complete()) {
            break;
        }
    }

    const auto tail = pipe.finish();
    for (const auto& cmd : tail) {
        protocol::append_frame(result.haptic_stream, cmd);
    }
    return result;
}

} // namespace rehab::sim
