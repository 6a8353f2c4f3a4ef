#pragma once

// Scenario documents: JSON with every field optional. Layers are merged key by
// key (arrays replace), dotted overrides apply last, and unknown keys are
// rejected.

#include "rehab/feedback.hpp"
#include "rehab/pipeline.hpp"
#include "rehab/session.hpp"
#include "rehab/sim.hpp"

#include <json.hpp>

#include <cstdint>
#include <string>
#include <string_view>

namespace rehab::config {

using Json = nlohmann::ordered_json;

struct Scenario {
    std::string session_id = "session-0001";
    std::string patient_id = "patient-0001";
    std::uint64_t seed = 1;
    double max_duration_s = 0.0;
    session::SessionConfig session = default_session();
    feedback::FeedbackPolicy feedback;
    pipeline::PipelineConfig pipeline;
    sim::PatientModel patient;
    sim::DeviceModel device;

    // Straight leg raises, bed-supported knee bends and knee extensions, two reps each.
    static session::SessionConfig default_session();

    void validate() const;
    sim::SimSetup sim_setup() const;
};

Json to_json(const Scenario& s);

// Throws ConfigError on unknown keys or bad values. When `source` is the text
// the document came from, errors carry the line and column of the offending key.
Scenario from_json(const Json& doc, std::string_view source = {});

// Throws ConfigError with line/column on syntax errors.
Json parse_json_text(std::string_view text);

// Recursive object merge; everything else in `overlay` replaces `base`.
void merge(Json& base, const Json& overlay);

// "a.b.c=value". The value is read as JSON when it parses, else as a string.
// Numeric segments index arrays.
void apply_override(Json& doc, std::string_view assignment);

// FNV-1a 64 over the canonical form of the parts that shape a report
// (session, feedback, pipeline), as 16 hex digits.
std::string config_hash(const Scenario& s);

// Line and column (1-based) of a byte offset.
std::pair<std::size_t, std::size_t> line_column(std::string_view text, std::size_t offset);

} // namespace rehab::config
