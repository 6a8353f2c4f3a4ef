#include "oracles/reference_codec.hpp"
#include "support/random_frames.hpp"

#include "rehab/error.hpp"
#include "rehab/protocol.hpp"

#include <doctest.h>

#include <algorithm>
#include <random>

using namespace rehab::protocol;
using Bytes = std::vector<std::uint8_t>;

namespace {

DecodeResult decode_all(const Bytes& bytes)
{
    StreamDecoder d;
    auto r = d.feed(bytes);
    auto tail = d.finish();
    r.diagnostics.insert(r.diagnostics.end(), tail.diagnostics.begin(), tail.diagnostics.end());
    return r;
}

std::size_t count_kind(const DecodeResult& r, DiagnosticKind kind)
{
    return static_cast<std::size_t>(
        std::count_if(r.diagnostics.begin(), r.diagnostics.end(), [&](const Diagnostic& d) { return d.kind == kind; }));
}

} // namespace

TEST_CASE("all-zero filtered frame")
{
    const Bytes expected{0xA5, 0x5A, 0, 0, 0, 0, 0, 0, 0, 0, 0, 0, 0, 0, 0, 0};
    CHECK(encode_imu_frame(ImuFrameFiltered{}) == expected);
}

TEST_CASE("filtered frame matches the reference encoder")
{
    const auto f = ImuFrameFiltered::from_degrees(SensorId::Calf, 1000, 0.0, 30.0, 0.0);
    const auto bytes = encode_imu_frame(f);
    REQUIRE(bytes.size() == kFilteredFrameSize);
    CHECK(bytes[9] == 0xB8);
    CHECK(bytes[10] == 0x0B);
    CHECK(bytes == oracle::filtered(1, 1000, 0, 3000, 0, 0));

    const auto g = ImuFrameFiltered::from_degrees(SensorId::Thigh, 0xDEADBEEF, -179.99, 12.345, 180.0, 1);
    CHECK(encode_imu_frame(g) == oracle::filtered(0, 0xDEADBEEF, -17999, 1235, 18000, 1));
}

TEST_CASE("raw gyro scaling")
{
    const auto f = ImuFrameRaw::from_physical(SensorId::Thigh, 5, {100.0, -0.3, 0.0}, {0.0, 12.0, -1000.0});
    CHECK(f.gyro_decidps[0] == 1000);
    const int gyro[3] = {1000, -3, 0};
    const int accel[3] = {0, 12, -1000};
    const auto bytes = encode_imu_frame(f);
    CHECK(bytes.size() == kRawFrameSize);
    CHECK(bytes == oracle::raw(0, 5, gyro, accel));
}

TEST_CASE("haptic byte examples")
{
    CHECK(encode_haptic_frame({Channel::ThighUp, Actuator::Vibro, 255, 0}) ==
          Bytes{0xB6, 0x6B, 0x00, 0x00, 0xFF, 0x00, 0x00, 0xFF});
    CHECK(encode_haptic_frame({Channel::CalfDown, Actuator::PumpDeflate, 0, 0}) ==
          Bytes{0xB6, 0x6B, 0x03, 0x02, 0x00, 0x00, 0x00, 0x01});
    CHECK(encode_haptic_frame({Channel::CalfUp, Actuator::PumpInflate, 128, 300}) == oracle::haptic(2, 1, 128, 300));
}

TEST_CASE("out-of-range fields throw")
{
    CHECK_THROWS_AS(ImuFrameFiltered::from_degrees(SensorId::Thigh, 0, 180.01, 0, 0), rehab::RangeError);
    CHECK_THROWS_AS(ImuFrameRaw::from_physical(SensorId::Thigh, 0, {2000.1, 0, 0}, {0, 0, 0}), rehab::RangeError);
    CHECK_THROWS_AS(ImuFrameRaw::from_physical(SensorId::Thigh, 0, {0, 0, 0}, {0, 16001, 0}), rehab::RangeError);

    ImuFrameFiltered bad;
    bad.roll_cdeg = 18001;
    CHECK_THROWS_AS(encode_imu_frame(bad), rehab::RangeError);
    HapticCommandFrame c;
    c.channel = static_cast<Channel>(4);
    CHECK_THROWS_AS(encode_haptic_frame(c), rehab::RangeError);
}

TEST_CASE("100 random frames round-trip through one stream")
{
    std::mt19937_64 rng(7);
    std::vector<Frame> frames;
    Bytes bytes;
    for (int i = 0; i < 100; ++i) {
        frames.push_back(testsupport::random_frame(rng));
        append_frame(bytes, frames.back());
    }
    const auto r = decode_all(bytes);
    CHECK(r.diagnostics.empty());
    CHECK(r.frames == frames);
}

TEST_CASE("flipped checksum bit")
{
    auto bytes = encode_imu_frame(ImuFrameFiltered::from_degrees(SensorId::Thigh, 42, 1, 2, 3));
    bytes.back() ^= 0x10;
    const auto r = decode_all(bytes);
    CHECK(r.frames.empty());
    CHECK(count_kind(r, DiagnosticKind::ChecksumMismatch) == 1);
}

TEST_CASE("garbage prefix then a valid frame")
{
    Bytes bytes{0x00, 0x13, 0xA5, 0x77, 0xB6};
    const HapticCommandFrame c{Channel::ThighDown, Actuator::PumpInflate, 90, 0};
    append_frame(bytes, c);
    const auto r = decode_all(bytes);
    REQUIRE(r.frames.size() == 1);
    CHECK(std::get<HapticCommandFrame>(r.frames[0]) == c);
    CHECK(count_kind(r, DiagnosticKind::ResyncSkip) >= 1);
    CHECK(r.diagnostics.front().offset == 0);
}

TEST_CASE("invalid fields are rejected with a diagnostic")
{
    SUBCASE("sensor id")
    {
        auto b = oracle::filtered(2, 0, 0, 0, 0, 0);
        CHECK(decode_all(b).frames.empty());
        CHECK(count_kind(decode_all(b), DiagnosticKind::InvalidField) == 1);
    }
    SUBCASE("reserved byte")
    {
        auto b = oracle::filtered(0, 0, 0, 0, 0, 0);
        b[14] = 1;
        b[15] ^= 1;
        CHECK(count_kind(decode_all(b), DiagnosticKind::InvalidField) == 1);
    }
    SUBCASE("angle beyond 180")
    {
        CHECK(count_kind(decode_all(oracle::filtered(0, 0, 18001, 0, 0, 0)), DiagnosticKind::InvalidField) == 1);
    }
    SUBCASE("gyro beyond 2000 dps")
    {
        const int gyro[3] = {20001, 0, 0};
        const int accel[3] = {0, 0, 0};
        CHECK(count_kind(decode_all(oracle::raw(1, 0, gyro, accel)), DiagnosticKind::InvalidField) == 1);
    }
    SUBCASE("actuator")
    {
        CHECK(count_kind(decode_all(oracle::haptic(0, 3, 0, 0)), DiagnosticKind::InvalidField) == 1);
    }
}

TEST_CASE("frames split across feeds")
{
    std::mt19937_64 rng(11);
    std::vector<Frame> frames;
    Bytes bytes;
    for (int i = 0; i < 50; ++i) {
        frames.push_back(testsupport::random_frame(rng));
        append_frame(bytes, frames.back());
    }
    StreamDecoder d;
    std::vector<Frame> out;
    std::size_t pos = 0;
    while (pos < bytes.size()) {
        const std::size_t n = std::min<std::size_t>(bytes.size() - pos, 1 + rng() % 13);
        auto r = d.feed(std::span(bytes).subspan(pos, n));
        CHECK(r.diagnostics.empty());
        out.insert(out.end(), r.frames.begin(), r.frames.end());
        pos += n;
    }
    CHECK(out == frames);
    CHECK(d.consumed() == bytes.size());
}

TEST_CASE("truncated tail is reported by finish")
{
    auto bytes = encode_haptic_frame({Channel::CalfUp, Actuator::Vibro, 255, 300});
    bytes.pop_back();
    StreamDecoder d;
    auto r = d.feed(bytes);
    CHECK(r.frames.empty());
    CHECK(r.diagnostics.empty());
    CHECK(d.buffered() == 7);
    auto tail = d.finish();
    REQUIRE(tail.diagnostics.size() == 1);
    CHECK(tail.diagnostics[0].kind == DiagnosticKind::TruncatedFrame);
    CHECK(tail.diagnostics[0].length == 7);
    CHECK(d.buffered() == 0);
}

TEST_CASE("random bytes never yield more frames than len/8")
{
    std::mt19937_64 rng(3);
    for (int trial = 0; trial < 50; ++trial) {
        Bytes b(1 + rng() % 4096);
        for (auto& x : b) {
            // Bias toward sync bytes so the frame paths are exercised.
            const auto u = rng() % 8;
            x = u == 0 ? 0xA5 : u == 1 ? 0xB6 : static_cast<std::uint8_t>(rng());
        }
        const auto r = decode_all(b);
        CHECK(r.frames.size() <= b.size() / kMinFrameSize);
    }
}

TEST_CASE("line records")
{
    const Frame f = ImuFrameFiltered::from_degrees(SensorId::Calf, 120, -1.5, 30.0, 179.99, 1);
    CHECK(format_record(f) == "F calf 120 -1.50 30.00 179.99 1");
    CHECK(parse_record(format_record(f)) == f);

    const Frame r = ImuFrameRaw::from_physical(SensorId::Thigh, 7, {100.0, -0.5, 0.0}, {1, -2, -1000});
    CHECK(format_record(r) == "R thigh 7 100.0 -0.5 0.0 1 -2 -1000");
    CHECK(parse_record(format_record(r)) == r);

    const Frame h = HapticCommandFrame{Channel::ThighUp, Actuator::PumpDeflate, 0, 0};
    CHECK(format_record(h) == "H thigh_up pump_deflate 0 0");
    CHECK(parse_record(format_record(h)) == h);

    std::mt19937_64 rng(5);
    for (int i = 0; i < 1000; ++i) {
        const auto x = testsupport::random_frame(rng);
        CHECK(parse_record(format_record(x)) == x);
    }

    CHECK_THROWS_AS(parse_record(""), rehab::ParseError);
    CHECK_THROWS_AS(parse_record("F calf 1 2"), rehab::ParseError);
    CHECK_THROWS_AS(parse_record("F knee 1 0 0 0 0"), rehab::ParseError);
    CHECK_THROWS_AS(parse_record("F calf 1 0 abc 0 0"), rehab::ParseError);
    CHECK_THROWS_AS(parse_record("F calf 1 0 190 0 0"), rehab::RangeError);
    CHECK_THROWS_AS(parse_record("H thigh_up vibro 256 0"), rehab::RangeError);
}

TEST_CASE("channel names")
{
    for (std::uint8_t i = 0; i < kChannelCount; ++i) {
        const auto c = static_cast<Channel>(i);
        CHECK(channel_from_string(to_string(c)) == c);
    }
    CHECK_FALSE(channel_from_string("knee").has_value());
}
