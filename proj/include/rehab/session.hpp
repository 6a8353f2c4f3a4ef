#pragma once

#include "rehab/kinematics.hpp"

#include <cstddef>
#include <cstdint>
#include <optional>
#include <string_view>
#include <vector>

namespace rehab::session {

using kinematics::ExerciseSpec;
using kinematics::LegPose;

enum class MovementPhase : std::uint8_t { Understanding, Reaching, FineTuning, Holding, Retrieving, Rest };

std::string_view to_string(MovementPhase phase);

struct PhaseEvent {
    MovementPhase phase = MovementPhase::Understanding;
    std::uint32_t start_ms = 0;
    std::uint32_t end_ms = 0;
    LegPose entry_pose;
};

enum class RepOutcome : std::uint8_t { Completed, TimedOut, Aborted };

std::string_view to_string(RepOutcome outcome);

struct AngleSample {
    std::uint32_t timestamp_ms = 0;
    double angle = 0.0;
};

struct RepRecord {
    std::size_t exercise_index = 0;
    unsigned rep_index = 1;  // 1-based within its exercise
    std::vector<PhaseEvent> events;
    std::optional<double> hold_start_angle;
    std::optional<std::uint32_t> hold_start_ms;
    bool countdown_completed = false;
    RepOutcome outcome = RepOutcome::Aborted;
    double rest_angle = 0.0;
    // Controlled-angle samples inside [hold start, hold start + hold duration).
    std::vector<AngleSample> hold_trace;
};

struct PhaseThresholds {
    double v_start_dps = 5.0;
    double d_start_deg = 3.0;
    double v_hold_dps = 2.0;
    std::uint32_t stability_dwell_ms = 500;
    std::uint32_t start_dwell_ms = 300;
    double reach_timeout_s = 120.0;
    double retrieve_band_deg = 5.0;
    std::uint32_t max_gap_ms = 500;
    std::uint32_t rest_capture_ms = 1000;
    // Time constant of each of the two smoothing stages on the controlled angle rate.
    double velocity_smoothing_ms = 150.0;
};

struct SessionConfig {
    std::vector<ExerciseSpec> exercises;
    double inter_pose_break_s = 300.0;
    PhaseThresholds thresholds;

    // Throws ConfigError when an invariant does not hold.
    void validate() const;
};

// Median of the samples seen in the first part of a repetition.
class RestCapture {
public:
    void clear() { m_samples.clear(); }
    void add(double angle) { m_samples.push_back(angle); }
    bool empty() const { return m_samples.empty(); }
    std::size_t size() const { return m_samples.size(); }
    double median() const;

private:
    std::vector<double> m_samples;
};

// Rate of a sampled angle: a first-order low-pass on the angle, then an
// exponentially smoothed finite difference, both with time constant tau.
class RateEstimator {
public:
    explicit RateEstimator(double tau_ms = 150.0) : m_tau_ms(tau_ms) {}

    void reset(double angle);
    void update(double angle, double dt_ms);
    double rate() const { return m_rate; }

private:
    double m_tau_ms;
    double m_filtered = 0.0;
    double m_rate = 0.0;
};

enum class StepIssue : std::uint8_t { OutOfOrderSample, GapAbort };

struct StepDiagnostic {
    StepIssue issue;
    std::uint32_t timestamp_ms = 0;
};

struct StepResult {
    bool accepted = true;
    // Phases that ended while processing this sample, in order.
    std::vector<PhaseEvent> events;
    std::vector<RepOutcome> finished_reps;
    std::optional<double> countdown_s;
    std::vector<StepDiagnostic> diagnostics;
};

struct SessionProgress {
    std::size_t exercise_index = 0;  // 0-based
    std::size_t exercise_count = 0;
    unsigned rep = 1;                // 1-based
    unsigned repetitions = 0;
    MovementPhase phase = MovementPhase::Understanding;
    std::optional<double> countdown_s;
    bool complete = false;
};

// Deterministic per-repetition phase machine. All timing derives from sample
// timestamps; identical input sequences give identical events and records.
class SessionEngine {
public:
    explicit SessionEngine(SessionConfig config);

    // Throws SessionComplete once the final repetition has ended.
    StepResult step(const LegPose& pose);

    // End of input: a repetition in progress is recorded as Aborted.
    void finish();

    bool complete() const noexcept { return m_complete; }
    bool started() const noexcept { return m_started; }
    MovementPhase phase() const noexcept { return m_phase; }
    std::uint32_t phase_start_ms() const noexcept { return m_phase_start; }
    std::size_t exercise_index() const noexcept { return m_exercise; }
    const ExerciseSpec& current_spec() const { return m_config.exercises.at(m_exercise); }
    double rest_angle() const;
    double velocity() const noexcept { return m_rate.rate(); }
    std::optional<std::uint32_t> last_timestamp() const;

    const SessionConfig& config() const noexcept { return m_config; }
    const std::vector<RepRecord>& reps() const noexcept { return m_reps; }
    const std::vector<PhaseEvent>& rest_events() const noexcept { return m_rest_events; }

private:
    void begin_rep(std::uint32_t t, const LegPose& pose);
    void transition(MovementPhase next, std::uint32_t at, const LegPose& entry, StepResult& out);
    void end_rep(std::uint32_t t, RepOutcome outcome, const LegPose& pose, StepResult& out, bool continue_session);
    void process(const LegPose& pose, StepResult& out);
    double angle_of(const LegPose& pose) const;

    SessionConfig m_config;
    bool m_started = false;
    bool m_complete = false;
    std::size_t m_exercise = 0;
    unsigned m_rep_in_exercise = 0;
    MovementPhase m_phase = MovementPhase::Understanding;
    std::uint32_t m_phase_start = 0;
    LegPose m_phase_entry;
    std::uint32_t m_rep_start = 0;
    double m_rep_start_angle = 0.0;
    std::uint32_t m_last_ts = 0;
    LegPose m_last_pose;
    RestCapture m_capture;
    RateEstimator m_rate;
    std::optional<std::uint32_t> m_run_start;
    LegPose m_run_pose;
    std::optional<std::uint32_t> m_stable_since;
    std::uint32_t m_hold_start = 0;
    std::uint32_t m_break_end = 0;
    RepRecord m_current;
    std::vector<RepRecord> m_reps;
    std::vector<PhaseEvent> m_rest_events;
};

SessionProgress session_progress(const SessionEngine& engine);

} // namespace rehab::session
