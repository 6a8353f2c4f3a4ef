#include "rehab/session.hpp"

#include "rehab/error.hpp"

#include <algorithm>
#include <cmath>

namespace rehab::session {
namespace {

std::uint32_t seconds_to_ms(double s)
{
    return static_cast<std::uint32_t>(std::llround(s * 1000.0));
}

} // namespace

std::string_view to_string(MovementPhase phase)
{
    switch (phase) {
    case MovementPhase::Understanding:
        return "understanding";
    case MovementPhase::Reaching:
        return "reaching";
    case MovementPhase::FineTuning:
        return "fine_tuning";
    case MovementPhase::Holding:
        return "holding";
    case MovementPhase::Retrieving:
        return "retrieving";
    case MovementPhase::Rest:
        return "rest";
    }
    return "?";
}

std::string_view to_string(RepOutcome outcome)
{
    switch (outcome) {
    case RepOutcome::Completed:
        return "completed";
    case RepOutcome::TimedOut:
        return "timed_out";
    case RepOutcome::Aborted:
        return "aborted";
    }
    return "?";
}

void SessionConfig::validate() const
{
    if (exercises.empty()) {
        throw ConfigError("session needs at least one exercise");
    }
    for (const auto& e : exercises) {
        e.validate();
    }
    const auto& th = thresholds;
    if (!(inter_pose_break_s >= 0.0)) {
        throw ConfigError("inter_pose_break must not be negative");
    }
    if (!(th.v_start_dps > 0.0) || !(th.d_start_deg > 0.0) || !(th.v_hold_dps > 0.0) || th.stability_dwell_ms == 0 ||
        th.start_dwell_ms == 0 || !(th.reach_timeout_s > 0.0) || !(th.retrieve_band_deg > 0.0) || th.max_gap_ms == 0 ||
        th.rest_capture_ms == 0 || !(th.velocity_smoothing_ms > 0.0)) {
        throw ConfigError("phase thresholds must be positive");
    }
    if (!(th.v_hold_dps < th.v_start_dps)) {
        throw ConfigError("v_hold must be below v_start");
    }
}

double RestCapture::median() const
{
    if (m_samples.empty()) {
        return 0.0;
    }
    std::vector<double> s(m_samples);
    const std::size_t mid = s.size() / 2;
    std::nth_element(s.begin(), s.begin() + static_cast<std::ptrdiff_t>(mid), s.end());
    const double upper = s[mid];
    if (s.size() % 2 == 1) {
        return upper;
    }
    const double lower = *std::max_element(s.begin(), s.begin() + static_cast<std::ptrdiff_t>(mid));
    return 0.5 * (lower + upper);
}

void RateEstimator::reset(double angle)
{
    m_filtered = angle;
    m_rate = 0.0;
}

void RateEstimator::update(double angle, double dt_ms)
{
    if (dt_ms <= 0.0) {
        return;
    }
    const double gain = 1.0 - std::exp(-dt_ms / m_tau_ms);
    const double previous = m_filtered;
    m_filtered += gain * (angle - m_filtered);
    const double raw = (m_filtered - previous) / (dt_ms / 1000.0);
    m_rate += gain * (raw - m_rate);
}

SessionEngine::SessionEngine(SessionConfig config)
    : m_config(std::move(config)), m_rate(m_config.thresholds.velocity_smoothing_ms)
{
    m_config.validate();
}

double SessionEngine::angle_of(const LegPose& pose) const
{
    return kinematics::controlled_angle(pose, current_spec().controlled_angle);
}

double SessionEngine::rest_angle() const
{
    return m_capture.empty() ? m_rep_start_angle : m_capture.median();
}

std::optional<std::uint32_t> SessionEngine::last_timestamp() const
{
    if (!m_started) {
        return std::nullopt;
    }
    return m_last_ts;
}

void SessionEngine::begin_rep(std::uint32_t t, const LegPose& pose)
{
    m_current = RepRecord{};
    m_current.exercise_index = m_exercise;
    m_current.rep_index = m_rep_in_exercise + 1;
    m_phase = MovementPhase::Understanding;
    m_phase_start = t;
    m_phase_entry = pose;
    m_rep_start = t;
    m_rep_start_angle = angle_of(pose);
    m_capture.clear();
    m_run_start.reset();
    m_stable_since.reset();
}

void SessionEngine::transition(MovementPhase next, std::uint32_t at, const LegPose& entry, StepResult& out)
{
    PhaseEvent ev{m_phase, m_phase_start, at, m_phase_entry};
    m_current.events.push_back(ev);
    out.events.push_back(ev);
    m_phase = next;
    m_phase_start = at;
    m_phase_entry = entry;
}

void SessionEngine::end_rep(std::uint32_t t, RepOutcome outcome, const LegPose& pose, StepResult& out,
                            bool continue_session)
{
    PhaseEvent ev{m_phase, m_phase_start, t, m_phase_entry};
    m_current.events.push_back(ev);
    out.events.push_back(ev);
    m_current.outcome = outcome;
    m_current.rest_angle = rest_angle();
    m_reps.push_back(std::move(m_current));
    m_current = RepRecord{};
    out.finished_reps.push_back(outcome);
    ++m_rep_in_exercise;

    if (!continue_session) {
        m_complete = true;
        return;
    }
    if (m_rep_in_exercise < current_spec().repetitions) {
        begin_rep(t, pose);
        return;
    }
    if (m_exercise + 1 >= m_config.exercises.size()) {
        m_complete = true;
        return;
    }
    const std::uint32_t break_ms = seconds_to_ms(m_config.inter_pose_break_s);
    if (break_ms == 0) {
        ++m_exercise;
        m_rep_in_exercise = 0;
        m_rate.reset(angle_of(pose));
        begin_rep(t, pose);
        return;
    }
    m_phase = MovementPhase::Rest;
    m_phase_start = t;
    m_phase_entry = pose;
    m_break_end = t + break_ms;
}

StepResult SessionEngine::step(const LegPose& pose)
{
    if (m_complete) {
        throw SessionComplete("session already complete");
    }
    StepResult out;
    const std::uint32_t t = pose.timestamp_ms;
    const auto& th = m_config.thresholds;

    if (!m_started) {
        m_started = true;
        m_rate.reset(angle_of(pose));
        begin_rep(t, pose);
    } else if (t <= m_last_ts) {
        out.accepted = false;
        out.diagnostics.push_back({StepIssue::OutOfOrderSample, t});
        return out;
    } else if (m_phase != MovementPhase::Rest && t - m_last_ts > th.max_gap_ms) {
        out.diagnostics.push_back({StepIssue::GapAbort, t});
        end_rep(m_last_ts, RepOutcome::Aborted, m_last_pose, out, true);
        if (!m_complete) {
            m_rate.reset(angle_of(pose));
            if (m_phase == MovementPhase::Understanding) {
                begin_rep(t, pose);
            }
        }
    } else {
        m_rate.update(angle_of(pose), static_cast<double>(t - m_last_ts));
    }

    m_last_ts = t;
    m_last_pose = pose;
    if (!m_complete) {
        process(pose, out);
    }
    if (!m_complete && m_phase == MovementPhase::Holding) {
        const std::uint32_t deadline = m_hold_start + current_spec().hold_duration_ms();
        out.countdown_s = (deadline > t ? deadline - t : 0) / 1000.0;
    }
    return out;
}

void SessionEngine::process(const LegPose& pose, StepResult& out)
{
    const auto& th = m_config.thresholds;
    const std::uint32_t t = pose.timestamp_ms;

    if (m_phase == MovementPhase::Rest) {
        if (t < m_break_end) {
            return;
        }
        PhaseEvent ev{MovementPhase::Rest, m_phase_start, m_break_end, m_phase_entry};
        m_rest_events.push_back(ev);
        out.events.push_back(ev);
        ++m_exercise;
        m_rep_in_exercise = 0;
        m_rate.reset(angle_of(pose));
        begin_rep(m_break_end, pose);
    }

    const ExerciseSpec& spec = current_spec();
    const double angle = angle_of(pose);
    const double dev = angle - spec.target;
    const double v = m_rate.rate();

    if (t >= m_rep_start && t < m_rep_start + th.rest_capture_ms) {
        m_capture.add(angle);
    }

    const bool before_hold = m_phase == MovementPhase::Understanding || m_phase == MovementPhase::Reaching ||
                             m_phase == MovementPhase::FineTuning;
    if (before_hold && t - m_rep_start >= seconds_to_ms(th.reach_timeout_s)) {
        end_rep(t, RepOutcome::TimedOut, pose, out, true);
        return;
    }

    switch (m_phase) {
    case MovementPhase::Understanding: {
        const double rest = rest_angle();
        const double direction = spec.target >= rest ? 1.0 : -1.0;
        const bool moving = std::abs(angle - rest) > th.d_start_deg && direction * v > th.v_start_dps;
        if (!moving) {
            m_run_start.reset();
            break;
        }
        if (!m_run_start) {
            m_run_start = t;
            m_run_pose = pose;
        }
        if (t - *m_run_start >= th.start_dwell_ms) {
            transition(MovementPhase::Reaching, *m_run_start, m_run_pose, out);
        }
        break;
    }
    case MovementPhase::Reaching:
        if (std::abs(dev) <= spec.enter_band) {
            transition(MovementPhase::FineTuning, t, pose, out);
            const bool stable = std::abs(v) < th.v_hold_dps;
            m_stable_since = stable ? std::optional<std::uint32_t>(t) : std::nullopt;
        }
        break;
    case MovementPhase::FineTuning: {
        const bool stable = std::abs(v) < th.v_hold_dps && std::abs(dev) <= spec.enter_band;
        if (!stable) {
            m_stable_since.reset();
            break;
        }
        if (!m_stable_since) {
            m_stable_since = t;
        }
        if (t - *m_stable_since >= th.stability_dwell_ms) {
            transition(MovementPhase::Holding, t, pose, out);
            m_hold_start = t;
            m_current.hold_start_ms = t;
            m_current.hold_start_angle = angle;
            m_current.hold_trace.push_back({t, angle});
        }
        break;
    }
    case MovementPhase::Holding: {
        const std::uint32_t deadline = m_hold_start + spec.hold_duration_ms();
        if (t >= deadline) {
            m_current.countdown_completed = true;
            transition(MovementPhase::Retrieving, deadline, pose, out);
        } else {
            m_current.hold_trace.push_back({t, angle});
        }
        break;
    }
    case MovementPhase::Retrieving:
        if (std::abs(angle - rest_angle()) <= th.retrieve_band_deg) {
            end_rep(t, RepOutcome::Completed, pose, out, true);
        }
        break;
    case MovementPhase::Rest:
        break;
    }
}

void SessionEngine::finish()
{
    if (m_complete) {
        return;
    }
    if (m_started && m_phase != MovementPhase::Rest) {
        StepResult ignored;
        end_rep(m_last_ts, RepOutcome::Aborted, m_last_pose, ignored, false);
    }
    m_complete = true;
}

SessionProgress session_progress(const SessionEngine& engine)
{
    SessionProgress p;
    const auto& cfg = engine.config();
    p.exercise_index = engine.exercise_index();
    p.exercise_count = cfg.exercises.size();
    p.repetitions = engine.current_spec().repetitions;
    p.complete = engine.complete();
    p.phase = engine.phase();

    unsigned done = 0;
    for (const auto& rep : engine.reps()) {
        if (rep.exercise_index == p.exercise_index) {
            ++done;
        }
    }
    p.rep = std::min(done + 1, p.repetitions);
    if (!p.complete && p.phase == MovementPhase::Holding) {
        const auto& rep_in_progress = engine.phase_start_ms();
        const std::uint32_t deadline = rep_in_progress + engine.current_spec().hold_duration_ms();
        const std::uint32_t now = engine.last_timestamp().value_or(rep_in_progress);
        p.countdown_s = (deadline > now ? deadline - now : 0) / 1000.0;
    }
    return p;
}

} // namespace rehab::session
