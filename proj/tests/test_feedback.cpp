#include "rehab/error.hpp"
#include "rehab/feedback.hpp"

#include <doctest.h>

using namespace rehab::feedback;
using rehab::kinematics::ExercisePose;
using rehab::kinematics::ExerciseSpec;
using rehab::session::MovementPhase;

namespace {

const ExerciseSpec kSlr = ExerciseSpec::standard(ExercisePose::StraightLegRaise);

bool is_inflate(const HapticCommandFrame& c) { return c.actuator == Actuator::PumpInflate; }

} // namespace

TEST_CASE("vibro warning below the hold band")
{
    const FeedbackPolicy policy;
    const auto plan = plan_feedback(MovementPhase::Holding, -3.0, kSlr, policy, 1.0);
    REQUIRE(plan.size() == 1);
    CHECK(plan[0].actuator == Actuator::Vibro);
    CHECK(plan[0].channel == policy.channels_for(ExercisePose::StraightLegRaise).raise);
    CHECK(plan[0].intensity == 255);
    CHECK(plan[0].duration_ms == 300);

    const auto above = plan_feedback(MovementPhase::Holding, 2.5, kSlr, policy, 1.0);
    REQUIRE(above.size() == 1);
    CHECK(above[0].channel == policy.channels_for(ExercisePose::StraightLegRaise).lower);
}

TEST_CASE("silence inside the hold band")
{
    const FeedbackPolicy policy;
    CHECK(plan_feedback(MovementPhase::Holding, 0.0, kSlr, policy, 1.0).empty());
    CHECK(plan_feedback(MovementPhase::Holding, 2.0, kSlr, policy, 1.0).empty());
    CHECK(plan_feedback(MovementPhase::Holding, -2.0, kSlr, policy, 1.0).empty());
}

TEST_CASE("vibro pulse is clipped to the remaining countdown")
{
    const FeedbackPolicy policy;
    const auto plan = plan_feedback(MovementPhase::Holding, -5.0, kSlr, policy, 9.85);
    REQUIRE(plan.size() == 1);
    CHECK(plan[0].duration_ms == 150);
    CHECK(plan_feedback(MovementPhase::Holding, -5.0, kSlr, policy, 10.0).empty());

    FeedbackPolicy off;
    off.vibro_enabled = false;
    CHECK(plan_feedback(MovementPhase::Holding, -5.0, kSlr, off, 1.0).empty());
}

TEST_CASE("pneumatic ramp while reaching")
{
    const FeedbackPolicy policy;
    const auto plan = plan_feedback(MovementPhase::Reaching, -20.0, kSlr, policy, 0.75);
    REQUIRE(plan.size() == 1);
    CHECK(is_inflate(plan[0]));
    CHECK(plan[0].channel == Channel::CalfDown);
    CHECK(plan[0].intensity == 128);

    CHECK(ramp_intensity(0.0, 1.5) == 0);
    CHECK(ramp_intensity(1.5, 1.5) == 255);
    CHECK(ramp_intensity(9.0, 1.5) == 255);
    CHECK(ramp_intensity(-1.0, 1.5) == 0);
    // 255 * 0.5 / 1.5 = 85 exactly; 255 * 0.25 = 63.75.
    CHECK(ramp_intensity(0.5, 1.5) == 85);
    CHECK(ramp_intensity(0.375, 1.5) == 64);

    const auto overshoot = plan_feedback(MovementPhase::Reaching, 4.0, kSlr, policy, 0.0);
    REQUIRE(overshoot.size() == 1);
    CHECK(overshoot[0].channel == Channel::CalfUp);
}

TEST_CASE("fine-tuning pushes only outside the hold band")
{
    const FeedbackPolicy policy;
    const auto out = plan_feedback(MovementPhase::FineTuning, -3.0, kSlr, policy, 0.2);
    REQUIRE(out.size() == 1);
    CHECK(is_inflate(out[0]));
    const auto in = plan_feedback(MovementPhase::FineTuning, -1.0, kSlr, policy, 0.2);
    for (const auto& c : in) {
        CHECK(c.actuator == Actuator::PumpDeflate);
    }
}

TEST_CASE("no inflation outside reaching and fine-tuning")
{
    const FeedbackPolicy policy;
    for (auto phase : {MovementPhase::Understanding, MovementPhase::Holding, MovementPhase::Retrieving,
                       MovementPhase::Rest}) {
        for (double dev : {-30.0, -3.0, 0.0, 3.0, 30.0}) {
            for (const auto& c : plan_feedback(phase, dev, kSlr, policy, 1.0)) {
                CHECK_FALSE(is_inflate(c));
                if (phase != MovementPhase::Holding) {
                    CHECK(c.actuator == Actuator::PumpDeflate);
                }
            }
        }
    }
    FeedbackPolicy no_pump;
    no_pump.pneumatic_enabled = false;
    for (const auto& c : plan_feedback(MovementPhase::Reaching, -20.0, kSlr, no_pump, 1.0)) {
        CHECK_FALSE(is_inflate(c));
    }
}

TEST_CASE("scheduler: identical plans are silent")
{
    CommandScheduler s;
    const std::vector<HapticCommandFrame> plan{{Channel::CalfDown, Actuator::PumpInflate, 100, 0}};
    CHECK(s.diff(plan, 0).size() == 1);
    CHECK(s.diff(plan, 10).empty());
    CHECK(s.pump_inflated(Channel::CalfDown));
}

TEST_CASE("scheduler: inflate then silence deflates each active channel")
{
    CommandScheduler s;
    const std::vector<HapticCommandFrame> plan{{Channel::CalfDown, Actuator::PumpInflate, 100, 0},
                                               {Channel::ThighUp, Actuator::PumpInflate, 50, 0}};
    s.diff(plan, 0);
    const auto out = s.diff({}, 10);
    REQUIRE(out.size() == 2);
    for (const auto& c : out) {
        CHECK(c.actuator == Actuator::PumpDeflate);
    }
    CHECK(out[0].channel == Channel::ThighUp);
    CHECK(out[1].channel == Channel::CalfDown);
    CHECK(s.all_off(10));

    // Deflate requests for idle channels produce nothing.
    const std::vector<HapticCommandFrame> deflate{{Channel::CalfUp, Actuator::PumpDeflate, 0, 0}};
    CHECK(s.diff(deflate, 20).empty());
}

TEST_CASE("scheduler: intensity changes are re-sent")
{
    CommandScheduler s;
    s.diff(std::vector<HapticCommandFrame>{{Channel::CalfDown, Actuator::PumpInflate, 10, 0}}, 0);
    const auto out = s.diff(std::vector<HapticCommandFrame>{{Channel::CalfDown, Actuator::PumpInflate, 11, 0}}, 10);
    REQUIRE(out.size() == 1);
    CHECK(out[0].intensity == 11);
}

TEST_CASE("scheduler: vibro retriggers once per pulse period")
{
    CommandScheduler s;
    const std::vector<HapticCommandFrame> plan{{Channel::CalfDown, Actuator::Vibro, 255, 300}};
    std::vector<std::uint32_t> sent;
    for (std::uint32_t t = 0; t < 1000; t += 10) {
        if (!s.diff(plan, t).empty()) {
            sent.push_back(t);
        }
        CHECK(s.vibro_active(Channel::CalfDown, t));
    }
    CHECK(sent == std::vector<std::uint32_t>{0, 300, 600, 900});
    CHECK_FALSE(s.all_off(1000 - 10));
    CHECK(s.all_off(1200));
}

TEST_CASE("policy validation")
{
    FeedbackPolicy p;
    CHECK_NOTHROW(p.validate());
    p.ramp_time_s = 0.0;
    CHECK_THROWS_AS(p.validate(), rehab::ConfigError);
    p = {};
    p.channel_map[0] = {Channel::CalfUp, Channel::CalfUp};
    CHECK_THROWS_AS(p.validate(), rehab::ConfigError);
}
