#include "rehab/config.hpp"

#include "rehab/error.hpp"

#include <charconv>
#include <cstdio>
#include <limits>
#include <set>
#include <type_traits>

namespace rehab::config {

using kinematics::ExercisePose;

session::SessionConfig Scenario::default_session()
{
    session::SessionConfig cfg;
    cfg.exercises = {kinematics::ExerciseSpec::standard(ExercisePose::StraightLegRaise, 2),
                     kinematics::ExerciseSpec::standard(ExercisePose::BedSupportedKneeBend, 2),
                     kinematics::ExerciseSpec::standard(ExercisePose::KneeExtension, 2)};
    return cfg;
}

void Scenario::validate() const
{
    session.validate();
    feedback.validate();
    pipeline.validate();
    patient.validate();
    device.validate();
    if (!(max_duration_s >= 0.0)) {
        throw ConfigError("max_duration_s must not be negative");
    }
}

sim::SimSetup Scenario::sim_setup() const
{
    sim::SimSetup s;
    s.patient = patient;
    s.device = device;
    s.session = session;
    s.feedback = feedback;
    s.pipeline = pipeline;
    s.seed = seed;
    s.max_duration_s = max_duration_s;
    return s;
}

Json to_json(const Scenario& s)
{
    Json doc;
    doc["session_id"] = s.session_id;
    doc["patient_id"] = s.patient_id;
    doc["seed"] = s.seed;
    doc["max_duration_s"] = s.max_duration_s;

    const auto& th = s.session.thresholds;
    Json session;
    session["inter_pose_break_s"] = s.session.inter_pose_break_s;
    session["thresholds"] = {{"v_start_dps", th.v_start_dps},
                             {"d_start_deg", th.d_start_deg},
                             {"v_hold_dps", th.v_hold_dps},
                             {"stability_dwell_ms", th.stability_dwell_ms},
                             {"start_dwell_ms", th.start_dwell_ms},
                             {"reach_timeout_s", th.reach_timeout_s},
                             {"retrieve_band_deg", th.retrieve_band_deg},
                             {"max_gap_ms", th.max_gap_ms},
                             {"rest_capture_ms", th.rest_capture_ms},
                             {"velocity_smoothing_ms", th.velocity_smoothing_ms}};
    Json exercises = Json::array();
    for (const auto& e : s.session.exercises) {
        exercises.push_back({{"pose", kinematics::to_string(e.pose)},
                             {"controlled_angle", kinematics::to_string(e.controlled_angle)},
                             {"target", e.target},
                             {"enter_band", e.enter_band},
                             {"hold_band", e.hold_band},
                             {"hold_duration_s", e.hold_duration_s},
                             {"repetitions", e.repetitions}});
    }
    session["exercises"] = exercises;
    doc["session"] = session;

    const auto& f = s.feedback;
    Json channel_map;
    for (std::size_t i = 0; i < kinematics::kExercisePoseCount; ++i) {
        const auto pose = static_cast<ExercisePose>(i);
        const auto& m = f.channels_for(pose);
        channel_map[std::string(kinematics::to_string(pose))] = {{"raise", protocol::to_string(m.raise)},
                                                                 {"lower", protocol::to_string(m.lower)}};
    }
    doc["feedback"] = {{"ramp_time_s", f.ramp_time_s},
                       {"vibro_intensity", f.vibro_intensity},
                       {"vibro_pulse_ms", f.vibro_pulse_ms},
                       {"pneumatic_enabled", f.pneumatic_enabled},
                       {"vibro_enabled", f.vibro_enabled},
                       {"channel_map", channel_map}};

    const auto& p = s.pipeline;
    doc["pipeline"] = {{"alpha", p.alpha},
                       {"stillness_threshold_dps", p.stillness_threshold_dps},
                       {"stillness_ms", p.stillness_ms},
                       {"seed_heading_deg", p.seed_heading_deg}};

    const auto& pm = s.patient;
    doc["patient"] = {{"reaction_delay_s", pm.reaction_delay_s},
                      {"time_constant_s", pm.time_constant_s},
                      {"tremor_amplitude_deg", pm.tremor_amplitude_deg},
                      {"tremor_frequency_hz", pm.tremor_frequency_hz},
                      {"fatigue_droop_dps", pm.fatigue_droop_dps},
                      {"malingering_factor", pm.malingering_factor},
                      {"warning_response_latency_s", pm.warning_response_latency_s},
                      {"mount_offset_max_deg", pm.mount_offset_max_deg}};

    const auto& d = s.device;
    doc["device"] = {{"pump_time_constant_s", d.pump_time_constant_s},
                     {"max_force_n", d.max_force_n},
                     {"vibro_latency_ms", d.vibro_latency_ms},
                     {"pump_bias_dps_per_n", d.pump_bias_dps_per_n},
                     {"airbag_width_cm", d.airbag_width_cm},
                     {"airbag_length_cm", d.airbag_length_cm}};
    return doc;
}

std::pair<std::size_t, std::size_t> line_column(std::string_view text, std::size_t offset)
{
    std::size_t line = 1;
    std::size_t column = 1;
    for (std::size_t i = 0; i < offset && i < text.size(); ++i) {
        if (text[i] == '\n') {
            ++line;
            column = 1;
        } else {
            ++column;
        }
    }
    return {line, column};
}

namespace {

[[noreturn]] void fail(const std::string& message, std::string_view key, std::string_view source)
{
    if (!source.empty() && !key.empty()) {
        const std::string quoted = "\"" + std::string(key) + "\"";
        const auto pos = source.find(quoted);
        if (pos != std::string_view::npos) {
            const auto [line, column] = line_column(source, pos);
            throw ConfigError(message + " (line " + std::to_string(line) + ", column " + std::to_string(column) + ")",
                              line, column);
        }
    }
    throw ConfigError(message);
}

class Reader {
public:
    Reader(const Json& j, std::string path, std::string_view source, std::string_view key = {})
        : m_json(j), m_path(std::move(path)), m_source(source)
    {
        if (!j.is_object()) {
            fail(where() + " must be an object", key, source);
        }
    }

    const Json* child(const char* key)
    {
        m_seen.insert(key);
        const auto it = m_json.find(key);
        return it == m_json.end() ? nullptr : &*it;
    }

    void read(const char* key, double& out)
    {
        if (const Json* v = child(key)) {
            if (!v->is_number()) {
                fail(name(key) + " must be a number", key, m_source);
            }
            out = v->get<double>();
        }
    }

    void read(const char* key, bool& out)
    {
        if (const Json* v = child(key)) {
            if (!v->is_boolean()) {
                fail(name(key) + " must be true or false", key, m_source);
            }
            out = v->get<bool>();
        }
    }

    void read(const char* key, std::string& out)
    {
        if (const Json* v = child(key)) {
            if (!v->is_string()) {
                fail(name(key) + " must be a string", key, m_source);
            }
            out = v->get<std::string>();
        }
    }

    template <typename T>
        requires std::is_unsigned_v<T>
    void read(const char* key, T& out)
    {
        if (const Json* v = child(key)) {
            if (!v->is_number_unsigned() || v->get<std::uint64_t>() > std::numeric_limits<T>::max()) {
                fail(name(key) + " must be an integer in [0, " + std::to_string(std::numeric_limits<T>::max()) + "]",
                     key, m_source);
            }
            out = static_cast<T>(v->get<std::uint64_t>());
        }
    }

    std::string name(const char* key) const { return m_path.empty() ? key : m_path + "." + key; }
    std::string_view source() const { return m_source; }

    void finish() const
    {
        for (const auto& [key, value] : m_json.items()) {
            if (!m_seen.contains(key)) {
                fail("unknown key '" + name(key.c_str()) + "'", key, m_source);
            }
        }
    }

private:
    std::string where() const { return m_path.empty() ? "document" : m_path; }

    const Json& m_json;
    std::string m_path;
    std::string_view m_source;
    std::set<std::string> m_seen;
};

ExercisePose read_pose(const Json& v, const std::string& path, std::string_view source)
{
    if (v.is_string()) {
        if (auto p = kinematics::exercise_pose_from_string(v.get<std::string>())) {
            return *p;
        }
    }
    fail(path + " must name an exercise pose", v.is_string() ? v.get<std::string>() : "", source);
}

protocol::Channel read_channel(Reader& r, const char* key, protocol::Channel fallback)
{
    const Json* v = r.child(key);
    if (!v) {
        return fallback;
    }
    if (v->is_string()) {
        if (auto c = protocol::channel_from_string(v->get<std::string>())) {
            return *c;
        }
    }
    fail(r.name(key) + " must name a channel", key, r.source());
}

kinematics::ExerciseSpec read_exercise(const Json& j, const std::string& path, std::string_view source)
{
    Reader r(j, path, source, "exercises");
    const Json* pose = r.child("pose");
    if (!pose) {
        fail(path + ".pose is required", "exercises", source);
    }
    auto e = kinematics::ExerciseSpec::standard(read_pose(*pose, path + ".pose", source));
    if (const Json* angle = r.child("controlled_angle")) {
        const auto parsed =
            angle->is_string() ? kinematics::controlled_angle_from_string(angle->get<std::string>()) : std::nullopt;
        if (!parsed) {
            fail(path + ".controlled_angle must name a controlled angle", "controlled_angle", source);
        }
        e.controlled_angle = *parsed;
    }
    r.read("target", e.target);
    r.read("enter_band", e.enter_band);
    r.read("hold_band", e.hold_band);
    r.read("hold_duration_s", e.hold_duration_s);
    r.read("repetitions", e.repetitions);
    r.finish();
    return e;
}

} // namespace

Scenario from_json(const Json& doc, std::string_view source)
{
    Scenario s;
    Reader top(doc, "", source);
    top.read("session_id", s.session_id);
    top.read("patient_id", s.patient_id);
    top.read("seed", s.seed);
    top.read("max_duration_s", s.max_duration_s);

    if (const Json* j = top.child("session")) {
        Reader r(*j, "session", source, "session");
        r.read("inter_pose_break_s", s.session.inter_pose_break_s);
        if (const Json* t = r.child("thresholds")) {
            auto& th = s.session.thresholds;
            Reader tr(*t, "session.thresholds", source, "thresholds");
            tr.read("v_start_dps", th.v_start_dps);
            tr.read("d_start_deg", th.d_start_deg);
            tr.read("v_hold_dps", th.v_hold_dps);
            tr.read("stability_dwell_ms", th.stability_dwell_ms);
            tr.read("start_dwell_ms", th.start_dwell_ms);
            tr.read("reach_timeout_s", th.reach_timeout_s);
            tr.read("retrieve_band_deg", th.retrieve_band_deg);
            tr.read("max_gap_ms", th.max_gap_ms);
            tr.read("rest_capture_ms", th.rest_capture_ms);
            tr.read("velocity_smoothing_ms", th.velocity_smoothing_ms);
            tr.finish();
        }
        if (const Json* ex = r.child("exercises")) {
            if (!ex->is_array()) {
                fail("session.exercises must be an array", "exercises", source);
            }
            s.session.exercises.clear();
            for (std::size_t i = 0; i < ex->size(); ++i) {
                s.session.exercises.push_back(
                    read_exercise((*ex)[i], "session.exercises." + std::to_string(i), source));
            }
        }
        r.finish();
    }

    if (const Json* j = top.child("feedback")) {
        auto& f = s.feedback;
        Reader r(*j, "feedback", source, "feedback");
        r.read("ramp_time_s", f.ramp_time_s);
        r.read("vibro_intensity", f.vibro_intensity);
        r.read("vibro_pulse_ms", f.vibro_pulse_ms);
        r.read("pneumatic_enabled", f.pneumatic_enabled);
        r.read("vibro_enabled", f.vibro_enabled);
        if (const Json* cm = r.child("channel_map")) {
            Reader cr(*cm, "feedback.channel_map", source, "channel_map");
            for (std::size_t i = 0; i < kinematics::kExercisePoseCount; ++i) {
                const auto pose = static_cast<ExercisePose>(i);
                const std::string pose_name(kinematics::to_string(pose));
                if (const Json* entry = cr.child(pose_name.c_str())) {
                    auto& m = f.channel_map[i];
                    Reader er(*entry, "feedback.channel_map." + pose_name, source, pose_name);
                    m.raise = read_channel(er, "raise", m.raise);
                    m.lower = read_channel(er, "lower", m.lower);
                    er.finish();
                }
            }
            cr.finish();
        }
        r.finish();
    }

    if (const Json* j = top.child("pipeline")) {
        auto& p = s.pipeline;
        Reader r(*j, "pipeline", source, "pipeline");
        r.read("alpha", p.alpha);
        r.read("stillness_threshold_dps", p.stillness_threshold_dps);
        r.read("stillness_ms", p.stillness_ms);
        r.read("seed_heading_deg", p.seed_heading_deg);
        r.finish();
    }

    if (const Json* j = top.child("patient")) {
        auto& pm = s.patient;
        Reader r(*j, "patient", source, "patient");
        r.read("reaction_delay_s", pm.reaction_delay_s);
        r.read("time_constant_s", pm.time_constant_s);
        r.read("tremor_amplitude_deg", pm.tremor_amplitude_deg);
        r.read("tremor_frequency_hz", pm.tremor_frequency_hz);
        r.read("fatigue_droop_dps", pm.fatigue_droop_dps);
        r.read("malingering_factor", pm.malingering_factor);
        r.read("warning_response_latency_s", pm.warning_response_latency_s);
        r.read("mount_offset_max_deg", pm.mount_offset_max_deg);
        r.finish();
    }

    if (const Json* j = top.child("device")) {
        auto& d = s.device;
        Reader r(*j, "device", source, "device");
        r.read("pump_time_constant_s", d.pump_time_constant_s);
        r.read("max_force_n", d.max_force_n);
        r.read("vibro_latency_ms", d.vibro_latency_ms);
        r.read("pump_bias_dps_per_n", d.pump_bias_dps_per_n);
        r.read("airbag_width_cm", d.airbag_width_cm);
        r.read("airbag_length_cm", d.airbag_length_cm);
        r.finish();
    }
    top.finish();
    s.validate();
    return s;
}

Json parse_json_text(std::string_view text)
{
    try {
        return Json::parse(text.begin(), text.end());
    } catch (const nlohmann::json::parse_error& e) {
        // e.byte is one past the offending character.
        const std::size_t offset = e.byte > 0 ? e.byte - 1 : 0;
        const auto [line, column] = line_column(text, offset);
        throw ConfigError("syntax error at line " + std::to_string(line) + ", column " + std::to_string(column), line,
                          column);
    }
}

void merge(Json& base, const Json& overlay)
{
    if (!base.is_object() || !overlay.is_object()) {
        base = overlay;
        return;
    }
    for (const auto& [key, value] : overlay.items()) {
        auto it = base.find(key);
        if (it == base.end()) {
            base[key] = value;
        } else {
            merge(*it, value);
        }
    }
}

void apply_override(Json& doc, std::string_view assignment)
{
    const auto eq = assignment.find('=');
    if (eq == std::string_view::npos || eq == 0) {
        throw ConfigError("override must look like key=value: '" + std::string(assignment) + "'");
    }
    const std::string_view path = assignment.substr(0, eq);
    const std::string_view text = assignment.substr(eq + 1);

    Json value;
    try {
        value = Json::parse(text.begin(), text.end());
    } catch (const nlohmann::json::parse_error&) {
        value = std::string(text);
    }

    Json* node = &doc;
    std::size_t start = 0;
    while (true) {
        const auto dot = path.find('.', start);
        const std::string segment(path.substr(start, dot == std::string_view::npos ? path.npos : dot - start));
        if (segment.empty()) {
            throw ConfigError("empty key segment in '" + std::string(path) + "'");
        }
        Json* next = nullptr;
        if (node->is_array()) {
            std::size_t index = 0;
            const auto [p, ec] = std::from_chars(segment.data(), segment.data() + segment.size(), index);
            if (ec != std::errc{} || p != segment.data() + segment.size() || index >= node->size()) {
                throw ConfigError("bad array index '" + segment + "' in '" + std::string(path) + "'");
            }
            next = &(*node)[index];
        } else {
            if (!node->is_object()) {
                *node = Json::object();
            }
            next = &(*node)[segment];
        }
        node = next;
        if (dot == std::string_view::npos) {
            break;
        }
        start = dot + 1;
    }
    *node = value;
}

std::string config_hash(const Scenario& s)
{
    const Json doc = to_json(s);
    Json canonical;
    canonical["session"] = doc.at("session");
    canonical["feedback"] = doc.at("feedback");
    canonical["pipeline"] = doc.at("pipeline");
    const std::string text = canonical.dump();
    std::uint64_t h = 0xcbf29ce484222325ULL;
    for (unsigned char c : text) {
        h ^= c;
        h *= 0x100000001b3ULL;
    }
    char buf[17];
    std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(h));
    return buf;
}

} // namespace rehab::config
