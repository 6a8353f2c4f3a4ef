#pragma once

// Closed-loop testbed: a synthetic patient following the session prompts, an
// actuator emulator, and the wiring through the real wire formats.
// Patient parameters are synthetic, not fitted to clinical data.

#include "rehab/feedback.hpp"
#include "rehab/kinematics.hpp"
#include "rehab/pipeline.hpp"
#include "rehab/protocol.hpp"
#include "rehab/session.hpp"

#include <array>
#include <cstdint>
#include <deque>
#include <optional>
#include <random>
#include <string>
#include <vector>

namespace rehab::sim {

inline constexpr std::uint32_t kTickMs = 10;

struct PatientModel {
    double reaction_delay_s = 0.8;
    double time_constant_s = 1.2;
    double tremor_amplitude_deg = 0.5;
    double tremor_frequency_hz = 8.0;
    double fatigue_droop_dps = 0.1;
    double malingering_factor = 1.0;
    double warning_response_latency_s = 0.4;
    // Upper bound on the random sensor-to-segment mounting rotation.
    double mount_offset_max_deg = 20.0;

    void validate() const;
};

struct DeviceModel {
    double pump_time_constant_s = 1.5;
    double max_force_n = 10.0;
    double vibro_latency_ms = 10.0;
    // Angular rate bias per newton of pump force.
    double pump_bias_dps_per_n = 0.05;
    double airbag_width_cm = 7.0;
    double airbag_length_cm = 8.0;

    void validate() const;
};

struct PatientState {
    double angle = 0.0;   // controlled angle without tremor
    double intent = 0.0;
};

// Exact discrete step of d(angle)/dt = (intent - angle) / tau + bias.
void patient_step(const PatientModel& model, PatientState& state, double dt_s, double bias_dps);

// Segment orientations (world frame) realizing a controlled angle in a pose.
struct SegmentPose {
    kinematics::Quaternion thigh;
    kinematics::Quaternion calf;
};
SegmentPose segment_pose(kinematics::ExercisePose pose, double controlled_angle_deg);

// Uniform doubles from a fixed engine, so runs match across standard libraries.
class Random {
public:
    explicit Random(std::uint64_t seed) : m_engine(seed) {}
    double uniform() { return static_cast<double>(m_engine() >> 11) * 0x1.0p-53; }
    double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }
    std::uint64_t next() { return m_engine(); }

private:
    std::mt19937_64 m_engine;
};

class DeviceEmulator {
public:
    DeviceEmulator(DeviceModel model, feedback::FeedbackPolicy policy);

    void receive(std::uint32_t now_ms, const protocol::HapticCommandFrame& cmd);
    void advance(double dt_s);

    // Vibro pulses that started at or before `now_ms` and were not yet reported.
    std::vector<std::uint32_t> take_vibro_onsets(std::uint32_t now_ms);

    double force(protocol::Channel channel) const { return m_force.at(static_cast<std::size_t>(channel)); }
    // Net push on the controlled angle of `pose`, deg/s.
    double bias_dps(kinematics::ExercisePose pose) const;

private:
    DeviceModel m_model;
    feedback::FeedbackPolicy m_policy;
    std::array<double, protocol::kChannelCount> m_force{};
    std::array<double, protocol::kChannelCount> m_target{};
    std::deque<std::uint32_t> m_pending_onsets;
};

// Follows the prompts an exercise display would give: wait, raise, hold,
// lower, and reacts to warnings after a latency.
class PatientController {
public:
    PatientController(PatientModel model, session::SessionConfig config, std::uint64_t seed);

    void observe(std::uint32_t now_ms, const session::SessionEngine& engine);
    void on_warning(std::uint32_t onset_ms);
    // Advances by one tick and returns the measured controlled angle.
    double advance(std::uint32_t now_ms, double dt_s, double bias_dps, bool tremor);

    kinematics::ExercisePose pose() const { return m_config.exercises.at(m_exercise).pose; }
    double true_angle() const { return m_state.angle; }
    const PatientState& state() const { return m_state; }

private:
    double rest() const;
    double raise_target() const;

    PatientModel m_model;
    session::SessionConfig m_config;
    PatientState m_state;
    double m_tremor_phase = 0.0;
    std::size_t m_exercise = 0;
    std::optional<std::size_t> m_seen_reps;
    session::MovementPhase m_seen_phase = session::MovementPhase::Understanding;
    std::uint32_t m_rep_start = 0;
    bool m_waiting_to_raise = false;
    bool m_returning = false;
    bool m_holding = false;
    bool m_done = false;
    std::vector<std::pair<std::uint32_t, double>> m_pending;  // (when, new intent)
};

struct SimSetup {
    PatientModel patient;
    DeviceModel device;
    session::SessionConfig session;
    feedback::FeedbackPolicy feedback;
    pipeline::PipelineConfig pipeline;
    std::uint64_t seed = 1;
    // 0 picks a bound from the session plan.
    double max_duration_s = 0.0;
};

struct SimResult {
    pipeline::Pipeline pipeline;
    std::vector<std::string> trace;        // line records, calibration included
    std::vector<std::uint8_t> imu_stream;  // encoded IMU frames
    std::vector<std::uint8_t> haptic_stream;
    double min_angle = 0.0;
    double max_angle = 0.0;
    bool hit_duration_limit = false;
};

SimResult run_closed_loop(const SimSetup& setup);

} // namespace rehab::sim
