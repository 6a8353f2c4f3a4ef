#include "rehab/protocol.hpp"

#include "rehab/error.hpp"

#include <charconv>
#include <cmath>
#include <cstdio>
#include <sstream>

namespace rehab::protocol {
namespace {

std::uint8_t xor_range(std::span<const std::uint8_t> bytes, std::size_t first, std::size_t last)
{
    std::uint8_t acc = 0;
    for (std::size_t i = first; i <= last; ++i) {
        acc ^= bytes[i];
    }
    return acc;
}

void put_u16(std::vector<std::uint8_t>& out, std::uint16_t v)
{
    out.push_back(static_cast<std::uint8_t>(v & 0xFF));
    out.push_back(static_cast<std::uint8_t>(v >> 8));
}

void put_i16(std::vector<std::uint8_t>& out, std::int16_t v)
{
    put_u16(out, static_cast<std::uint16_t>(v));
}

void put_u32(std::vector<std::uint8_t>& out, std::uint32_t v)
{
    for (int i = 0; i < 4; ++i) {
        out.push_back(static_cast<std::uint8_t>((v >> (8 * i)) & 0xFF));
    }
}

std::uint16_t get_u16(std::span<const std::uint8_t> b, std::size_t at)
{
    return static_cast<std::uint16_t>(b[at] | (b[at + 1] << 8));
}

std::int16_t get_i16(std::span<const std::uint8_t> b, std::size_t at)
{
    return static_cast<std::int16_t>(get_u16(b, at));
}

std::uint32_t get_u32(std::span<const std::uint8_t> b, std::size_t at)
{
    return static_cast<std::uint32_t>(b[at]) | (static_cast<std::uint32_t>(b[at + 1]) << 8) |
           (static_cast<std::uint32_t>(b[at + 2]) << 16) | (static_cast<std::uint32_t>(b[at + 3]) << 24);
}

bool valid_sensor(std::uint8_t v) { return v <= 1; }
bool valid_channel(std::uint8_t v) { return v < kChannelCount; }
bool valid_actuator(std::uint8_t v) { return v <= 2; }

bool angle_in_range(std::int32_t cdeg) { return cdeg >= -kMaxAngleCentideg && cdeg <= kMaxAngleCentideg; }

void check_sensor(SensorId sensor)
{
    if (!valid_sensor(static_cast<std::uint8_t>(sensor))) {
        throw RangeError("sensor id out of range");
    }
}

std::int16_t to_fixed(double value, double scale, std::int32_t limit, const char* what)
{
    if (!std::isfinite(value)) {
        throw RangeError(std::string(what) + " is not finite");
    }
    const double scaled = std::round(value * scale);
    if (scaled < -limit || scaled > limit) {
        throw RangeError(std::string(what) + " exceeds wire range");
    }
    return static_cast<std::int16_t>(scaled);
}

void check_filtered(const ImuFrameFiltered& f)
{
    check_sensor(f.sensor);
    if (!angle_in_range(f.roll_cdeg) || !angle_in_range(f.pitch_cdeg) || !angle_in_range(f.yaw_cdeg)) {
        throw RangeError("angle exceeds +/-180.00 degrees");
    }
}

void check_raw(const ImuFrameRaw& f)
{
    check_sensor(f.sensor);
    for (auto g : f.gyro_decidps) {
        if (g < -kMaxGyroDecidps || g > kMaxGyroDecidps) {
            throw RangeError("gyro exceeds +/-2000 dps");
        }
    }
    for (auto a : f.accel_mg) {
        if (a < -kMaxAccelMg || a > kMaxAccelMg) {
            throw RangeError("accel exceeds +/-16000 mg");
        }
    }
}

void check_haptic(const HapticCommandFrame& c)
{
    if (!valid_channel(static_cast<std::uint8_t>(c.channel))) {
        throw RangeError("haptic channel out of range");
    }
    if (!valid_actuator(static_cast<std::uint8_t>(c.actuator))) {
        throw RangeError("actuator kind out of range");
    }
}

// Returns the frame length implied by a sync pair, or 0 if the pair is not a sync.
std::size_t frame_length(std::uint8_t b0, std::uint8_t b1)
{
    if (b0 == kSyncImu && b1 == kSyncFiltered) {
        return kFilteredFrameSize;
    }
    if (b0 == kSyncImu && b1 == kSyncRaw) {
        return kRawFrameSize;
    }
    if (b0 == kSyncHaptic0 && b1 == kSyncHaptic1) {
        return kHapticFrameSize;
    }
    return 0;
}

bool may_start_sync(std::uint8_t b) { return b == kSyncImu || b == kSyncHaptic0; }

// Parses a checksum-valid frame; returns false on an out-of-range field.
bool parse_body(std::span<const std::uint8_t> b, Frame& out)
{
    if (b[1] == kSyncFiltered && b[0] == kSyncImu) {
        if (!valid_sensor(b[2]) || b[14] != 0x00) {
            return false;
        }
        ImuFrameFiltered f;
        f.sensor = static_cast<SensorId>(b[2]);
        f.timestamp_ms = get_u32(b, 3);
        f.roll_cdeg = get_i16(b, 7);
        f.pitch_cdeg = get_i16(b, 9);
        f.yaw_cdeg = get_i16(b, 11);
        f.flags = b[13];
        if (!angle_in_range(f.roll_cdeg) || !angle_in_range(f.pitch_cdeg) || !angle_in_range(f.yaw_cdeg)) {
            return false;
        }
        out = f;
        return true;
    }
    if (b[1] == kSyncRaw && b[0] == kSyncImu) {
        if (!valid_sensor(b[2])) {
            return false;
        }
        ImuFrameRaw f;
        f.sensor = static_cast<SensorId>(b[2]);
        f.timestamp_ms = get_u32(b, 3);
        for (std::size_t i = 0; i < 3; ++i) {
            f.gyro_decidps[i] = get_i16(b, 7 + 2 * i);
            f.accel_mg[i] = get_i16(b, 13 + 2 * i);
            if (std::abs(f.gyro_decidps[i]) > kMaxGyroDecidps || std::abs(f.accel_mg[i]) > kMaxAccelMg) {
                return false;
            }
        }
        out = f;
        return true;
    }
    if (!valid_channel(b[2]) || !valid_actuator(b[3])) {
        return false;
    }
    HapticCommandFrame c;
    c.channel = static_cast<Channel>(b[2]);
    c.actuator = static_cast<Actuator>(b[3]);
    c.intensity = b[4];
    c.duration_ms = get_u16(b, 5);
    out = c;
    return true;
}

} // namespace

ImuFrameFiltered ImuFrameFiltered::from_degrees(SensorId sensor, std::uint32_t timestamp_ms, double roll,
                                                double pitch, double yaw, std::uint8_t flags)
{
    ImuFrameFiltered f;
    f.sensor = sensor;
    f.timestamp_ms = timestamp_ms;
    f.roll_cdeg = to_fixed(roll, 100.0, kMaxAngleCentideg, "roll");
    f.pitch_cdeg = to_fixed(pitch, 100.0, kMaxAngleCentideg, "pitch");
    f.yaw_cdeg = to_fixed(yaw, 100.0, kMaxAngleCentideg, "yaw");
    f.flags = flags;
    check_sensor(sensor);
    return f;
}

ImuFrameRaw ImuFrameRaw::from_physical(SensorId sensor, std::uint32_t timestamp_ms,
                                       const std::array<double, 3>& gyro_dps, const std::array<double, 3>& accel)
{
    ImuFrameRaw f;
    f.sensor = sensor;
    f.timestamp_ms = timestamp_ms;
    for (std::size_t i = 0; i < 3; ++i) {
        f.gyro_decidps[i] = to_fixed(gyro_dps[i], 10.0, kMaxGyroDecidps, "gyro");
        f.accel_mg[i] = to_fixed(accel[i], 1.0, kMaxAccelMg, "accel");
    }
    check_sensor(sensor);
    return f;
}

std::vector<std::uint8_t> encode_imu_frame(const ImuFrameFiltered& frame)
{
    check_filtered(frame);
    std::vector<std::uint8_t> out;
    out.reserve(kFilteredFrameSize);
    out.push_back(kSyncImu);
    out.push_back(kSyncFiltered);
    out.push_back(static_cast<std::uint8_t>(frame.sensor));
    put_u32(out, frame.timestamp_ms);
    put_i16(out, frame.roll_cdeg);
    put_i16(out, frame.pitch_cdeg);
    put_i16(out, frame.yaw_cdeg);
    out.push_back(frame.flags);
    out.push_back(0x00);
    out.push_back(xor_range(out, 2, 14));
    return out;
}

std::vector<std::uint8_t> encode_imu_frame(const ImuFrameRaw& frame)
{
    check_raw(frame);
    std::vector<std::uint8_t> out;
    out.reserve(kRawFrameSize);
    out.push_back(kSyncImu);
    out.push_back(kSyncRaw);
    out.push_back(static_cast<std::uint8_t>(frame.sensor));
    put_u32(out, frame.timestamp_ms);
    for (auto g : frame.gyro_decidps) {
        put_i16(out, g);
    }
    for (auto a : frame.accel_mg) {
        put_i16(out, a);
    }
    out.push_back(xor_range(out, 2, 18));
    return out;
}

std::vector<std::uint8_t> encode_haptic_frame(const HapticCommandFrame& cmd)
{
    check_haptic(cmd);
    std::vector<std::uint8_t> out;
    out.reserve(kHapticFrameSize);
    out.push_back(kSyncHaptic0);
    out.push_back(kSyncHaptic1);
    out.push_back(static_cast<std::uint8_t>(cmd.channel));
    out.push_back(static_cast<std::uint8_t>(cmd.actuator));
    out.push_back(cmd.intensity);
    put_u16(out, cmd.duration_ms);
    out.push_back(xor_range(out, 2, 6));
    return out;
}

std::vector<std::uint8_t> encode_frame(const Frame& frame)
{
    return std::visit(
        [](const auto& f) {
            using T = std::decay_t<decltype(f)>;
            if constexpr (std::is_same_v<T, HapticCommandFrame>) {
                return encode_haptic_frame(f);
            } else {
                return encode_imu_frame(f);
            }
        },
        frame);
}

void append_frame(std::vector<std::uint8_t>& out, const Frame& frame)
{
    const auto bytes = encode_frame(frame);
    out.insert(out.end(), bytes.begin(), bytes.end());
}

DecodeResult StreamDecoder::feed(std::span<const std::uint8_t> bytes)
{
    m_buffer.insert(m_buffer.end(), bytes.begin(), bytes.end());

    DecodeResult result;
    const std::span<const std::uint8_t> buf(m_buffer);
    std::size_t pos = 0;
    std::size_t skip_begin = 0;
    std::size_t skip_len = 0;

    auto flush_skip = [&] {
        if (skip_len > 0) {
            result.diagnostics.push_back({DiagnosticKind::ResyncSkip, m_offset + skip_begin, skip_len});
            skip_len = 0;
        }
    };
    auto skip_byte = [&] {
        if (skip_len == 0) {
            skip_begin = pos;
        }
        ++skip_len;
        ++pos;
    };

    while (pos < buf.size()) {
        if (!may_start_sync(buf[pos])) {
            skip_byte();
            continue;
        }
        if (pos + 1 >= buf.size()) {
            break;
        }
        const std::size_t len = frame_length(buf[pos], buf[pos + 1]);
        if (len == 0) {
            skip_byte();
            continue;
        }
        if (pos + len > buf.size()) {
            break;
        }
        const auto candidate = buf.subspan(pos, len);
        if (xor_range(candidate, 2, len - 2) != candidate[len - 1]) {
            flush_skip();
            result.diagnostics.push_back({DiagnosticKind::ChecksumMismatch, m_offset + pos, len});
            ++pos;
            continue;
        }
        Frame frame;
        if (!parse_body(candidate, frame)) {
            flush_skip();
            result.diagnostics.push_back({DiagnosticKind::InvalidField, m_offset + pos, len});
            ++pos;
            continue;
        }
        flush_skip();
        result.frames.push_back(frame);
        pos += len;
    }
    flush_skip();

    m_buffer.erase(m_buffer.begin(), m_buffer.begin() + static_cast<std::ptrdiff_t>(pos));
    m_offset += pos;
    return result;
}

DecodeResult StreamDecoder::finish()
{
    DecodeResult result;
    if (!m_buffer.empty()) {
        result.diagnostics.push_back({DiagnosticKind::TruncatedFrame, m_offset, m_buffer.size()});
        m_offset += m_buffer.size();
        m_buffer.clear();
    }
    return result;
}

DecodeResult decode_stream(std::span<const std::uint8_t> bytes, StreamDecoder& state)
{
    return state.feed(bytes);
}

std::string_view to_string(SensorId sensor)
{
    return sensor == SensorId::Thigh ? "thigh" : "calf";
}

std::string_view to_string(Channel channel)
{
    switch (channel) {
    case Channel::ThighUp:
        return "thigh_up";
    case Channel::ThighDown:
        return "thigh_down";
    case Channel::CalfUp:
        return "calf_up";
    case Channel::CalfDown:
        return "calf_down";
    }
    return "?";
}

std::string_view to_string(Actuator actuator)
{
    switch (actuator) {
    case Actuator::Vibro:
        return "vibro";
    case Actuator::PumpInflate:
        return "pump_inflate";
    case Actuator::PumpDeflate:
        return "pump_deflate";
    }
    return "?";
}

std::string_view to_string(DiagnosticKind kind)
{
    switch (kind) {
    case DiagnosticKind::ResyncSkip:
        return "resync_skip";
    case DiagnosticKind::ChecksumMismatch:
        return "checksum_mismatch";
    case DiagnosticKind::InvalidField:
        return "invalid_field";
    case DiagnosticKind::TruncatedFrame:
        return "truncated_frame";
    }
    return "?";
}

std::optional<Channel> channel_from_string(std::string_view name)
{
    for (std::uint8_t i = 0; i < kChannelCount; ++i) {
        if (to_string(static_cast<Channel>(i)) == name) {
            return static_cast<Channel>(i);
        }
    }
    return std::nullopt;
}

namespace {

std::string fixed(double v, int decimals)
{
    char buf[32];
    std::snprintf(buf, sizeof buf, "%.*f", decimals, v);
    return buf;
}

std::vector<std::string_view> split_ws(std::string_view line)
{
    std::vector<std::string_view> out;
    std::size_t i = 0;
    while (i < line.size()) {
        while (i < line.size() && (line[i] == ' ' || line[i] == '\t' || line[i] == '\r')) {
            ++i;
        }
        const std::size_t start = i;
        while (i < line.size() && line[i] != ' ' && line[i] != '\t' && line[i] != '\r') {
            ++i;
        }
        if (i > start) {
            out.push_back(line.substr(start, i - start));
        }
    }
    return out;
}

template <typename T>
T parse_int(std::string_view token, const char* what)
{
    T value{};
    const auto* end = token.data() + token.size();
    auto [ptr, ec] = std::from_chars(token.data(), end, value);
    if (ec != std::errc() || ptr != end) {
        throw ParseError(std::string("bad ") + what + " '" + std::string(token) + "'");
    }
    return value;
}

double parse_double(std::string_view token, const char* what)
{
    const std::string s(token);
    char* end = nullptr;
    const double v = std::strtod(s.c_str(), &end);
    if (s.empty() || end != s.c_str() + s.size() || !std::isfinite(v)) {
        throw ParseError(std::string("bad ") + what + " '" + s + "'");
    }
    return v;
}

SensorId parse_sensor(std::string_view token)
{
    if (token == "thigh") {
        return SensorId::Thigh;
    }
    if (token == "calf") {
        return SensorId::Calf;
    }
    throw ParseError("unknown sensor '" + std::string(token) + "'");
}

Channel parse_channel(std::string_view token)
{
    for (std::uint8_t i = 0; i < kChannelCount; ++i) {
        if (to_string(static_cast<Channel>(i)) == token) {
            return static_cast<Channel>(i);
        }
    }
    throw ParseError("unknown channel '" + std::string(token) + "'");
}

Actuator parse_actuator(std::string_view token)
{
    for (std::uint8_t i = 0; i <= 2; ++i) {
        if (to_string(static_cast<Actuator>(i)) == token) {
            return static_cast<Actuator>(i);
        }
    }
    throw ParseError("unknown actuator '" + std::string(token) + "'");
}

} // namespace

std::string format_record(const Frame& frame)
{
    std::ostringstream os;
    if (const auto* f = std::get_if<ImuFrameFiltered>(&frame)) {
        os << "F " << to_string(f->sensor) << ' ' << f->timestamp_ms << ' ' << fixed(f->roll_deg(), 2) << ' '
           << fixed(f->pitch_deg(), 2) << ' ' << fixed(f->yaw_deg(), 2) << ' ' << static_cast<int>(f->flags);
    } else if (const auto* r = std::get_if<ImuFrameRaw>(&frame)) {
        os << "R " << to_string(r->sensor) << ' ' << r->timestamp_ms;
        for (std::size_t i = 0; i < 3; ++i) {
            os << ' ' << fixed(r->gyro_dps(i), 1);
        }
        for (auto a : r->accel_mg) {
            os << ' ' << a;
        }
    } else {
        const auto& c = std::get<HapticCommandFrame>(frame);
        os << "H " << to_string(c.channel) << ' ' << to_string(c.actuator) << ' ' << static_cast<int>(c.intensity)
           << ' ' << c.duration_ms;
    }
    return os.str();
}

Frame parse_record(std::string_view line)
{
    const auto tok = split_ws(line);
    if (tok.empty()) {
        throw ParseError("empty record");
    }
    if (tok[0] == "F") {
        if (tok.size() != 7) {
            throw ParseError("filtered record needs 7 fields");
        }
        const auto flags = parse_int<unsigned>(tok[6], "flags");
        if (flags > 0xFF) {
            throw RangeError("flags exceed 8 bits");
        }
        return ImuFrameFiltered::from_degrees(parse_sensor(tok[1]), parse_int<std::uint32_t>(tok[2], "timestamp"),
                                              parse_double(tok[3], "roll"), parse_double(tok[4], "pitch"),
                                              parse_double(tok[5], "yaw"), static_cast<std::uint8_t>(flags));
    }
    if (tok[0] == "R") {
        if (tok.size() != 9) {
            throw ParseError("raw record needs 9 fields");
        }
        std::array<double, 3> gyro{};
        std::array<double, 3> accel{};
        for (std::size_t i = 0; i < 3; ++i) {
            gyro[i] = parse_double(tok[3 + i], "gyro");
            accel[i] = static_cast<double>(parse_int<int>(tok[6 + i], "accel"));
        }
        return ImuFrameRaw::from_physical(parse_sensor(tok[1]), parse_int<std::uint32_t>(tok[2], "timestamp"), gyro,
                                          accel);
    }
    if (tok[0] == "H") {
        if (tok.size() != 5) {
            throw ParseError("haptic record needs 5 fields");
        }
        const auto intensity = parse_int<unsigned>(tok[3], "intensity");
        const auto duration = parse_int<unsigned>(tok[4], "duration");
        if (intensity > 0xFF || duration > 0xFFFF) {
            throw RangeError("haptic field exceeds wire range");
        }
        return HapticCommandFrame{parse_channel(tok[1]), parse_actuator(tok[2]), static_cast<std::uint8_t>(intensity),
                                  static_cast<std::uint16_t>(duration)};
    }
    throw ParseError("unknown record type '" + std::string(tok[0]) + "'");
}

} // namespace rehab::protocol
