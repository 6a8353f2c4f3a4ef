#pragma once

// Per-repetition metrics, session reports and the Wilcoxon signed-rank test.

#include "rehab/session.hpp"

#include <json.hpp>

#include <cstdint>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <vector>

namespace rehab::metrics {

inline constexpr double kEffectiveBandDeg = 2.0;
inline constexpr int kReportSchemaVersion = 1;
inline constexpr const char* kEngineVersion = "0.1.0";

struct RepMetrics {
    double understanding_time_s = 0.0;
    double angle_deviation_deg = 0.0;
    double effective_time_s = 0.0;
};

// Seconds within `band` of `reference`. Each sample counts until the next one,
// the last until `end_ms`.
double effective_time_s(std::span<const session::AngleSample> trace, double reference, std::uint32_t end_ms,
                        double band = kEffectiveBandDeg);

// Duration of the rep's Understanding phase, seconds.
double understanding_time_s(const session::RepRecord& rep);

// Throws IncompleteRep unless the rep is Completed.
RepMetrics compute_rep_metrics(const session::RepRecord& rep, const kinematics::ExerciseSpec& spec);

struct ReportMeta {
    std::string session_id = "session";
    std::string patient_id = "anonymous";
    std::string config_hash;
    std::optional<std::uint32_t> start_ms;
    std::optional<std::uint32_t> end_ms;
    std::map<std::string, std::size_t> diagnostics;
};

using Json = nlohmann::ordered_json;

// Report document. Aggregates are rounded to two decimals; per-rep rows keep
// full precision.
Json build_report(std::span<const session::RepRecord> reps, const session::SessionConfig& config,
                  const ReportMeta& meta);

// Serialized form written to disk: two-space indent, trailing newline.
std::string dump_report(const Json& report);

// Human-readable table of a report.
std::string format_summary(const Json& report);

double round2(double x);

enum class WilcoxonMethod : std::uint8_t { Exact, NormalApprox };

std::string_view to_string(WilcoxonMethod method);

struct WilcoxonResult {
    std::size_t n_effective = 0;
    double w = 0.0;  // min(W+, W-)
    double w_plus = 0.0;
    double w_minus = 0.0;
    double p_value = 1.0;
    std::optional<double> z;  // normal approximation only
    WilcoxonMethod method = WilcoxonMethod::Exact;
};

// Two-sided paired test on a[i] - b[i]. Zero differences are dropped and tied
// magnitudes share their average rank. Exact inference for up to 25 nonzero
// differences unless `force` says otherwise. Throws InsufficientData when fewer
// than 3 nonzero differences remain, and std::invalid_argument on unequal lengths.
WilcoxonResult wilcoxon_signed_rank(std::span<const double> a, std::span<const double> b,
                                    std::optional<WilcoxonMethod> force = std::nullopt);

// Same test on differences directly.
WilcoxonResult wilcoxon_signed_rank(std::span<const double> differences,
                                    std::optional<WilcoxonMethod> force = std::nullopt);

inline constexpr std::size_t kExactLimit = 25;

} // namespace rehab::metrics
