#pragma once

// Haptic guidance policy. Pneumatic pushes while reaching (and intermittently
// while fine-tuning), vibrotactile pulses while holding, silence otherwise.

#include "rehab/kinematics.hpp"
#include "rehab/protocol.hpp"
#include "rehab/session.hpp"

#include <array>
#include <cstdint>
#include <span>
#include <vector>

namespace rehab::feedback {

using protocol::Actuator;
using protocol::Channel;
using protocol::HapticCommandFrame;

// `raise` asks for a larger controlled angle, `lower` for a smaller one. For
// the airbags this is the strap on the side opposite the requested motion.
struct ChannelMap {
    Channel raise = Channel::CalfDown;
    Channel lower = Channel::CalfUp;
};

struct FeedbackPolicy {
    double ramp_time_s = 1.5;
    std::uint8_t vibro_intensity = 255;
    std::uint16_t vibro_pulse_ms = 300;
    bool pneumatic_enabled = true;
    bool vibro_enabled = true;
    std::array<ChannelMap, kinematics::kExercisePoseCount> channel_map = default_channel_map();

    static std::array<ChannelMap, kinematics::kExercisePoseCount> default_channel_map();

    const ChannelMap& channels_for(kinematics::ExercisePose pose) const
    {
        return channel_map.at(static_cast<std::size_t>(pose));
    }

    // Throws ConfigError when an invariant does not hold.
    void validate() const;
};

// Pump intensity after `elapsed_s` of a ramp, rounded half to even.
std::uint8_t ramp_intensity(double elapsed_s, double ramp_time_s);

// Desired actuator state for one sample. Channels not mentioned are off.
std::vector<HapticCommandFrame> plan_feedback(session::MovementPhase phase, double deviation,
                                              const kinematics::ExerciseSpec& spec, const FeedbackPolicy& policy,
                                              double elapsed_in_phase_s);

// Turns successive plans into the frames that change actuator state. Pumps are
// level-triggered; vibro pulses are re-sent only after the previous one expires.
class CommandScheduler {
public:
    std::vector<HapticCommandFrame> diff(std::span<const HapticCommandFrame> plan, std::uint32_t now_ms);

    bool pump_inflated(Channel channel) const { return m_state.at(index(channel)).inflated; }
    bool vibro_active(Channel channel, std::uint32_t now_ms) const
    {
        return m_state.at(index(channel)).vibro_until > now_ms;
    }
    // No pump inflated and no vibro pulse running at `now_ms`.
    bool all_off(std::uint32_t now_ms) const;

private:
    struct ChannelState {
        bool inflated = false;
        std::uint8_t intensity = 0;
        std::uint32_t vibro_until = 0;
    };

    static std::size_t index(Channel c) { return static_cast<std::size_t>(c); }

    std::array<ChannelState, protocol::kChannelCount> m_state{};
};

} // namespace rehab::feedback
