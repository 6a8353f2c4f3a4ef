#pragma once

// Wire formats for the IMU ingest link and the haptic command link.
//
//   Filtered IMU frame (16 bytes)
//     0-1   sync A5 5A
//     2     sensor id (0 thigh, 1 calf)
//     3-6   timestamp, ms since session start, little-endian
//     7-12  roll, pitch, yaw as signed centidegrees, little-endian
//     13    flags (bit0 = calibrated)
//     14    reserved, always 0x00
//     15    XOR of bytes 2..14
//
//   Raw IMU frame (20 bytes)
//     0-1   sync A5 5B
//     2-6   sensor id + timestamp as above
//     7-12  gyro x/y/z, signed, 0.1 deg/s per LSB
//     13-18 accel x/y/z, signed, milli-g
//     19    XOR of bytes 2..18
//
//   Haptic command frame (8 bytes)
//     0-1   sync B6 6B
//     2     channel, 3 actuator, 4 intensity
//     5-6   duration ms, little-endian (0 = until superseded)
//     7     XOR of bytes 2..6
//
// Line records (one frame per line, whitespace separated):
//     F <sensor> <timestamp_ms> <roll_deg> <pitch_deg> <yaw_deg> <flags>
//     R <sensor> <timestamp_ms> <gx_dps> <gy_dps> <gz_dps> <ax_mg> <ay_mg> <az_mg>
//     H <channel> <actuator> <intensity> <duration_ms>
// where <sensor> is thigh|calf, angles carry two decimals and gyro one.

#include <array>
#include <cstddef>
#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <variant>
#include <vector>

namespace rehab::protocol {

inline constexpr std::uint8_t kSyncImu = 0xA5;
inline constexpr std::uint8_t kSyncFiltered = 0x5A;
inline constexpr std::uint8_t kSyncRaw = 0x5B;
inline constexpr std::uint8_t kSyncHaptic0 = 0xB6;
inline constexpr std::uint8_t kSyncHaptic1 = 0x6B;

inline constexpr std::size_t kFilteredFrameSize = 16;
inline constexpr std::size_t kRawFrameSize = 20;
inline constexpr std::size_t kHapticFrameSize = 8;
inline constexpr std::size_t kMinFrameSize = kHapticFrameSize;

inline constexpr std::int32_t kMaxAngleCentideg = 18000;
inline constexpr std::int32_t kMaxGyroDecidps = 20000;
inline constexpr std::int32_t kMaxAccelMg = 16000;

inline constexpr std::uint8_t kFlagCalibrated = 0x01;

enum class SensorId : std::uint8_t { Thigh = 0, Calf = 1 };

enum class Channel : std::uint8_t { ThighUp = 0, ThighDown = 1, CalfUp = 2, CalfDown = 3 };
inline constexpr std::size_t kChannelCount = 4;

enum class Actuator : std::uint8_t { Vibro = 0, PumpInflate = 1, PumpDeflate = 2 };

struct ImuFrameFiltered {
    SensorId sensor = SensorId::Thigh;
    std::uint32_t timestamp_ms = 0;
    std::int16_t roll_cdeg = 0;
    std::int16_t pitch_cdeg = 0;
    std::int16_t yaw_cdeg = 0;
    std::uint8_t flags = 0;

    // Rounds to the nearest centidegree; throws RangeError outside [-180, 180].
    static ImuFrameFiltered from_degrees(SensorId sensor, std::uint32_t timestamp_ms, double roll,
                                         double pitch, double yaw, std::uint8_t flags = 0);

    double roll_deg() const noexcept { return roll_cdeg / 100.0; }
    double pitch_deg() const noexcept { return pitch_cdeg / 100.0; }
    double yaw_deg() const noexcept { return yaw_cdeg / 100.0; }

    friend bool operator==(const ImuFrameFiltered&, const ImuFrameFiltered&) = default;
};

struct ImuFrameRaw {
    SensorId sensor = SensorId::Thigh;
    std::uint32_t timestamp_ms = 0;
    std::array<std::int16_t, 3> gyro_decidps{};
    std::array<std::int16_t, 3> accel_mg{};

    static ImuFrameRaw from_physical(SensorId sensor, std::uint32_t timestamp_ms,
                                     const std::array<double, 3>& gyro_dps,
                                     const std::array<double, 3>& accel_mg);

    double gyro_dps(std::size_t axis) const { return gyro_decidps.at(axis) / 10.0; }

    friend bool operator==(const ImuFrameRaw&, const ImuFrameRaw&) = default;
};

struct HapticCommandFrame {
    Channel channel = Channel::ThighUp;
    Actuator actuator = Actuator::Vibro;
    std::uint8_t intensity = 0;
    std::uint16_t duration_ms = 0;

    friend bool operator==(const HapticCommandFrame&, const HapticCommandFrame&) = default;
};

using Frame = std::variant<ImuFrameFiltered, ImuFrameRaw, HapticCommandFrame>;

std::vector<std::uint8_t> encode_imu_frame(const ImuFrameFiltered& frame);
std::vector<std::uint8_t> encode_imu_frame(const ImuFrameRaw& frame);
std::vector<std::uint8_t> encode_haptic_frame(const HapticCommandFrame& cmd);
std::vector<std::uint8_t> encode_frame(const Frame& frame);

// Appends the encoding of `frame` to `out`.
void append_frame(std::vector<std::uint8_t>& out, const Frame& frame);

enum class DiagnosticKind : std::uint8_t { ResyncSkip, ChecksumMismatch, InvalidField, TruncatedFrame };

// `offset` is the absolute stream offset of the first affected byte.
struct Diagnostic {
    DiagnosticKind kind;
    std::uint64_t offset = 0;
    std::size_t length = 0;

    friend bool operator==(const Diagnostic&, const Diagnostic&) = default;
};

struct DecodeResult {
    std::vector<Frame> frames;
    std::vector<Diagnostic> diagnostics;
};

// Streaming decoder. A frame split across feed() calls is kept in the buffer
// until the rest arrives. Consecutive skipped bytes within one feed() are
// reported as a single ResyncSkip diagnostic.
class StreamDecoder {
public:
    DecodeResult feed(std::span<const std::uint8_t> bytes);

    // Reports any retained partial frame as TruncatedFrame and clears it.
    DecodeResult finish();

    std::size_t buffered() const noexcept { return m_buffer.size(); }
    std::uint64_t consumed() const noexcept { return m_offset; }

private:
    std::vector<std::uint8_t> m_buffer;
    std::uint64_t m_offset = 0;
};

DecodeResult decode_stream(std::span<const std::uint8_t> bytes, StreamDecoder& state);

std::string_view to_string(SensorId sensor);
std::string_view to_string(Channel channel);
std::string_view to_string(Actuator actuator);
std::string_view to_string(DiagnosticKind kind);
std::optional<Channel> channel_from_string(std::string_view name);

std::string format_record(const Frame& frame);

// Throws ParseError on malformed input and RangeError on out-of-range fields.
Frame parse_record(std::string_view line);

} // namespace rehab::protocol
