#include "rehab/feedback.hpp"

#include "rehab/error.hpp"

#include <algorithm>
#include <cmath>
#include <optional>

namespace rehab::feedback {

using kinematics::ExercisePose;
using session::MovementPhase;

std::array<ChannelMap, kinematics::kExercisePoseCount> FeedbackPolicy::default_channel_map()
{
    std::array<ChannelMap, kinematics::kExercisePoseCount> map{};
    map[static_cast<std::size_t>(ExercisePose::StraightLegRaise)] = {Channel::CalfDown, Channel::CalfUp};
    map[static_cast<std::size_t>(ExercisePose::ProneStraightLegRaise)] = {Channel::ThighDown, Channel::ThighUp};
    map[static_cast<std::size_t>(ExercisePose::BedSupportedKneeBend)] = {Channel::CalfUp, Channel::CalfDown};
    map[static_cast<std::size_t>(ExercisePose::KneeExtension)] = {Channel::CalfDown, Channel::CalfUp};
    return map;
}

void FeedbackPolicy::validate() const
{
    if (!(ramp_time_s > 0.0)) {
        throw ConfigError("ramp_time must be positive");
    }
    if (vibro_pulse_ms == 0) {
        throw ConfigError("vibro_pulse must be positive");
    }
    for (const auto& m : channel_map) {
        if (m.raise == m.lower) {
            throw ConfigError("raise and lower channels must differ");
        }
        if (static_cast<std::size_t>(m.raise) >= protocol::kChannelCount ||
            static_cast<std::size_t>(m.lower) >= protocol::kChannelCount) {
            throw ConfigError("channel map entry out of range");
        }
    }
}

std::uint8_t ramp_intensity(double elapsed_s, double ramp_time_s)
{
    const double fraction = std::clamp(elapsed_s / ramp_time_s, 0.0, 1.0);
    // nearbyint honours the default round-to-nearest-even mode.
    return static_cast<std::uint8_t>(std::nearbyint(255.0 * fraction));
}

namespace {

std::vector<HapticCommandFrame> deflate(std::initializer_list<Channel> channels)
{
    std::vector<HapticCommandFrame> plan;
    for (Channel c : channels) {
        plan.push_back({c, Actuator::PumpDeflate, 0, 0});
    }
    return plan;
}

} // namespace

std::vector<HapticCommandFrame> plan_feedback(MovementPhase phase, double deviation,
                                              const kinematics::ExerciseSpec& spec, const FeedbackPolicy& policy,
                                              double elapsed_in_phase_s)
{
    const ChannelMap& map = policy.channels_for(spec.pose);
    const Channel toward_target = deviation < 0.0 ? map.raise : map.lower;

    switch (phase) {
    case MovementPhase::Reaching:
        if (!policy.pneumatic_enabled) {
            return deflate({map.raise, map.lower});
        }
        return {{toward_target, Actuator::PumpInflate, ramp_intensity(elapsed_in_phase_s, policy.ramp_time_s), 0}};

    case MovementPhase::FineTuning:
        if (policy.pneumatic_enabled && std::abs(deviation) > spec.hold_band) {
            return {{toward_target, Actuator::PumpInflate, ramp_intensity(elapsed_in_phase_s, policy.ramp_time_s), 0}};
        }
        return deflate({map.raise, map.lower});

    case MovementPhase::Holding: {
        if (!policy.vibro_enabled || std::abs(deviation) <= spec.hold_band) {
            return {};
        }
        // Pulses never outlast the countdown, so nothing buzzes after the hold.
        const double remaining_ms = spec.hold_duration_s * 1000.0 - elapsed_in_phase_s * 1000.0;
        if (remaining_ms <= 0.0) {
            return {};
        }
        const auto duration =
            static_cast<std::uint16_t>(std::min<double>(policy.vibro_pulse_ms, std::floor(remaining_ms)));
        if (duration == 0) {
            return {};
        }
        return {{toward_target, Actuator::Vibro, policy.vibro_intensity, duration}};
    }

    case MovementPhase::Understanding:
    case MovementPhase::Retrieving:
    case MovementPhase::Rest:
        break;
    }
    return deflate({Channel::ThighUp, Channel::ThighDown, Channel::CalfUp, Channel::CalfDown});
}

std::vector<HapticCommandFrame> CommandScheduler::diff(std::span<const HapticCommandFrame> plan,
                                                       std::uint32_t now_ms)
{
    std::array<std::optional<HapticCommandFrame>, protocol::kChannelCount> wanted{};
    for (const auto& cmd : plan) {
        wanted.at(index(cmd.channel)) = cmd;
    }

    std::vector<HapticCommandFrame> out;
    for (std::size_t i = 0; i < protocol::kChannelCount; ++i) {
        ChannelState& st = m_state[i];
        const auto channel = static_cast<Channel>(i);
        const auto& w = wanted[i];
        const bool wants_inflate = w && w->actuator == Actuator::PumpInflate;

        if (st.inflated && !wants_inflate) {
            out.push_back({channel, Actuator::PumpDeflate, 0, 0});
            st.inflated = false;
            st.intensity = 0;
        }
        if (!w) {
            continue;
        }
        if (wants_inflate) {
            if (!st.inflated || st.intensity != w->intensity) {
                out.push_back(*w);
                st.inflated = true;
                st.intensity = w->intensity;
            }
        } else if (w->actuator == Actuator::Vibro) {
            if (now_ms >= st.vibro_until) {
                out.push_back(*w);
                st.vibro_until = now_ms + w->duration_ms;
            }
        }
    }
    return out;
}

bool CommandScheduler::all_off(std::uint32_t now_ms) const
{
    return std::none_of(m_state.begin(), m_state.end(),
                        [now_ms](const ChannelState& s) { return s.inflated || s.vibro_until > now_ms; });
}

} // namespace rehab::feedback
