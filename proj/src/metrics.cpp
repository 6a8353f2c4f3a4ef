#include "rehab/metrics.hpp"

#include "rehab/error.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <numeric>
#include <stdexcept>

namespace rehab::metrics {

using session::MovementPhase;
using session::RepOutcome;
using session::RepRecord;

double round2(double x)
{
    const double r = std::round(x * 100.0) / 100.0;
    return r == 0.0 ? 0.0 : r;  // no "-0.0" in reports
}

double effective_time_s(std::span<const session::AngleSample> trace, double reference, std::uint32_t end_ms,
                        double band)
{
    std::int64_t inside_ms = 0;
    for (std::size_t i = 0; i < trace.size(); ++i) {
        const std::uint32_t from = trace[i].timestamp_ms;
        const std::uint32_t to = i + 1 < trace.size() ? trace[i + 1].timestamp_ms : end_ms;
        if (to <= from || std::abs(trace[i].angle - reference) > band) {
            continue;
        }
        inside_ms += to - from;
    }
    return static_cast<double>(inside_ms) / 1000.0;
}

double understanding_time_s(const RepRecord& rep)
{
    for (const auto& ev : rep.events) {
        if (ev.phase == MovementPhase::Understanding) {
            return (ev.end_ms - ev.start_ms) / 1000.0;
        }
    }
    return 0.0;
}

RepMetrics compute_rep_metrics(const RepRecord& rep, const kinematics::ExerciseSpec& spec)
{
    if (rep.outcome != RepOutcome::Completed || !rep.hold_start_angle || !rep.hold_start_ms) {
        throw IncompleteRep("metrics need a completed repetition");
    }
    RepMetrics m;
    m.understanding_time_s = understanding_time_s(rep);
    m.angle_deviation_deg = std::abs(*rep.hold_start_angle - spec.target);
    m.effective_time_s =
        effective_time_s(rep.hold_trace, *rep.hold_start_angle, *rep.hold_start_ms + spec.hold_duration_ms());
    return m;
}

namespace {

struct MeanSd {
    double mean = 0.0;
    std::optional<double> sd;
};

MeanSd mean_sd(const std::vector<double>& xs)
{
    MeanSd r;
    if (xs.empty()) {
        return r;
    }
    const double n = static_cast<double>(xs.size());
    r.mean = std::accumulate(xs.begin(), xs.end(), 0.0) / n;
    if (xs.size() > 1) {
        double ss = 0.0;
        for (double x : xs) {
            ss += (x - r.mean) * (x - r.mean);
        }
        r.sd = std::sqrt(ss / (n - 1.0));
    }
    return r;
}

Json stat_json(const std::vector<double>& xs)
{
    const MeanSd s = mean_sd(xs);
    Json j;
    j["mean"] = round2(s.mean);
    j["sd"] = s.sd ? Json(round2(*s.sd)) : Json(nullptr);
    return j;
}

Json optional_json(const std::optional<double>& v)
{
    return v ? Json(*v) : Json(nullptr);
}

} // namespace

Json build_report(std::span<const RepRecord> reps, const session::SessionConfig& config, const ReportMeta& meta)
{
    Json report;
    report["schema_version"] = kReportSchemaVersion;
    report["engine_version"] = kEngineVersion;
    report["config_hash"] = meta.config_hash;

    std::size_t completed = 0;
    std::size_t timed_out = 0;
    std::size_t aborted = 0;
    for (const auto& rep : reps) {
        switch (rep.outcome) {
        case RepOutcome::Completed:
            ++completed;
            break;
        case RepOutcome::TimedOut:
            ++timed_out;
            break;
        case RepOutcome::Aborted:
            ++aborted;
            break;
        }
    }

    Json session;
    session["id"] = meta.session_id;
    session["patient_id"] = meta.patient_id;
    session["start_ms"] = meta.start_ms ? Json(*meta.start_ms) : Json(nullptr);
    session["end_ms"] = meta.end_ms ? Json(*meta.end_ms) : Json(nullptr);
    const std::uint32_t duration_ms = meta.start_ms && meta.end_ms ? *meta.end_ms - *meta.start_ms : 0;
    session["total_duration_s"] = duration_ms / 1000.0;
    session["rep_count"] = reps.size();
    session["outcomes"] = {{"completed", completed}, {"timed_out", timed_out}, {"aborted", aborted}};
    Json diag = Json::object();
    for (const auto& [name, count] : meta.diagnostics) {
        diag[name] = count;
    }
    session["diagnostics"] = diag;
    report["session"] = session;

    Json exercises = Json::array();
    for (std::size_t i = 0; i < config.exercises.size(); ++i) {
        const auto& e = config.exercises[i];
        exercises.push_back({{"index", i},
                             {"pose", kinematics::to_string(e.pose)},
                             {"controlled_angle", kinematics::to_string(e.controlled_angle)},
                             {"target", e.target},
                             {"enter_band", e.enter_band},
                             {"hold_band", e.hold_band},
                             {"hold_duration_s", e.hold_duration_s},
                             {"repetitions", e.repetitions}});
    }
    report["exercises"] = exercises;

    struct Columns {
        std::vector<double> deviation;
        std::vector<double> effective;
        std::optional<double> understanding;
    };
    std::vector<Columns> columns(config.exercises.size());

    Json rows = Json::array();
    for (const auto& rep : reps) {
        const auto& spec = config.exercises.at(rep.exercise_index);
        Json row;
        row["exercise"] = rep.exercise_index;
        row["pose"] = kinematics::to_string(spec.pose);
        row["rep"] = rep.rep_index;
        row["outcome"] = session::to_string(rep.outcome);
        row["rest_angle"] = rep.rest_angle;
        row["hold_start_ms"] = rep.hold_start_ms ? Json(*rep.hold_start_ms) : Json(nullptr);
        row["hold_start_angle"] = optional_json(rep.hold_start_angle);
        row["countdown_completed"] = rep.countdown_completed;
        row["understanding_time_s"] = understanding_time_s(rep);
        if (rep.outcome == RepOutcome::Completed) {
            const RepMetrics m = compute_rep_metrics(rep, spec);
            row["angle_deviation_deg"] = m.angle_deviation_deg;
            row["effective_time_s"] = m.effective_time_s;
            auto& col = columns[rep.exercise_index];
            col.deviation.push_back(m.angle_deviation_deg);
            col.effective.push_back(m.effective_time_s);
            if (rep.rep_index == 1) {
                col.understanding = m.understanding_time_s;
            }
        } else {
            row["angle_deviation_deg"] = nullptr;
            row["effective_time_s"] = nullptr;
        }
        Json phases = Json::array();
        for (const auto& ev : rep.events) {
            phases.push_back(
                {{"phase", session::to_string(ev.phase)}, {"start_ms", ev.start_ms}, {"end_ms", ev.end_ms}});
        }
        row["phases"] = phases;
        rows.push_back(row);
    }
    report["reps"] = rows;

    Json aggregates = Json::array();
    for (std::size_t i = 0; i < columns.size(); ++i) {
        const auto& col = columns[i];
        if (col.deviation.empty()) {
            continue;
        }
        Json agg;
        agg["exercise"] = i;
        agg["pose"] = kinematics::to_string(config.exercises[i].pose);
        agg["completed"] = col.deviation.size();
        agg["understanding_time_s"] = col.understanding ? Json(round2(*col.understanding)) : Json(nullptr);
        agg["angle_deviation_deg"] = stat_json(col.deviation);
        agg["effective_time_s"] = stat_json(col.effective);
        aggregates.push_back(agg);
    }
    report["aggregates"] = aggregates;
    return report;
}

std::string dump_report(const Json& report)
{
    return report.dump(2) + "\n";
}

namespace {

std::string cell(const Json& v)
{
    if (v.is_null()) {
        return "-";
    }
    char buf[32];
    std::snprintf(buf, sizeof buf, "%.2f", v.get<double>());
    return buf;
}

} // namespace

std::string format_summary(const Json& report)
{
    std::string out;
    char line[256];
    const Json& s = report.at("session");
    const Json& o = s.at("outcomes");
    std::snprintf(line, sizeof line, "session %s  patient %s  duration %.2f s\n",
                  s.at("id").get<std::string>().c_str(), s.at("patient_id").get<std::string>().c_str(),
                  s.at("total_duration_s").get<double>());
    out += line;
    std::snprintf(line, sizeof line, "reps %zu  completed %zu  timed_out %zu  aborted %zu\n",
                  s.at("rep_count").get<std::size_t>(), o.at("completed").get<std::size_t>(),
                  o.at("timed_out").get<std::size_t>(), o.at("aborted").get<std::size_t>());
    out += line;
    std::snprintf(line, sizeof line, "%-26s %5s %12s %18s %18s\n", "pose", "done", "understand_s",
                  "deviation_deg", "effective_s");
    out += line;
    for (const auto& a : report.at("aggregates")) {
        const auto& dev = a.at("angle_deviation_deg");
        const auto& eff = a.at("effective_time_s");
        const std::string dev_s = cell(dev.at("mean")) + " +/- " + cell(dev.at("sd"));
        const std::string eff_s = cell(eff.at("mean")) + " +/- " + cell(eff.at("sd"));
        std::snprintf(line, sizeof line, "%-26s %5zu %12s %18s %18s\n", a.at("pose").get<std::string>().c_str(),
                      a.at("completed").get<std::size_t>(), cell(a.at("understanding_time_s")).c_str(),
                      dev_s.c_str(), eff_s.c_str());
        out += line;
    }
    return out;
}

std::string_view to_string(WilcoxonMethod method)
{
    return method == WilcoxonMethod::Exact ? "exact" : "normal_approx";
}

namespace {

// Exact two-sided p: distribution of the doubled positive-rank sum over all
// 2^n sign assignments, built by subset-sum counting.
double exact_p(const std::vector<int>& doubled_ranks, int doubled_w)
{
    const int total = std::accumulate(doubled_ranks.begin(), doubled_ranks.end(), 0);
    std::vector<double> counts(static_cast<std::size_t>(total) + 1, 0.0);
    counts[0] = 1.0;
    int reach = 0;
    for (int r : doubled_ranks) {
        for (int s = reach; s >= 0; --s) {
            if (counts[static_cast<std::size_t>(s)] != 0.0) {
                counts[static_cast<std::size_t>(s + r)] += counts[static_cast<std::size_t>(s)];
            }
        }
        reach += r;
    }
    double tail = 0.0;
    for (int s = 0; s <= doubled_w; ++s) {
        tail += counts[static_cast<std::size_t>(s)];
    }
    const double p = 2.0 * tail / std::ldexp(1.0, static_cast<int>(doubled_ranks.size()));
    return std::min(1.0, p);
}

} // namespace

WilcoxonResult wilcoxon_signed_rank(std::span<const double> differences, std::optional<WilcoxonMethod> force)
{
    std::vector<double> d;
    for (double x : differences) {
        if (x != 0.0) {
            d.push_back(x);
        }
    }
    const std::size_t n = d.size();
    if (n < 3) {
        throw InsufficientData("need at least 3 nonzero paired differences, have " + std::to_string(n));
    }

    std::vector<std::size_t> order(n);
    std::iota(order.begin(), order.end(), 0);
    std::sort(order.begin(), order.end(),
              [&](std::size_t i, std::size_t j) { return std::abs(d[i]) < std::abs(d[j]); });

    // Doubled average ranks keep tied ranks integral.
    std::vector<int> doubled(n);
    double tie_term = 0.0;
    for (std::size_t i = 0; i < n;) {
        std::size_t j = i;
        while (j + 1 < n && std::abs(d[order[j + 1]]) == std::abs(d[order[i]])) {
            ++j;
        }
        const int rank_sum_doubled = static_cast<int>(i + j + 2);  // (i+1) + (j+1)
        for (std::size_t k = i; k <= j; ++k) {
            doubled[order[k]] = rank_sum_doubled;
        }
        const double t = static_cast<double>(j - i + 1);
        tie_term += t * t * t - t;
        i = j + 1;
    }

    int plus2 = 0;
    int minus2 = 0;
    for (std::size_t i = 0; i < n; ++i) {
        (d[i] > 0.0 ? plus2 : minus2) += doubled[i];
    }

    WilcoxonResult r;
    r.n_effective = n;
    r.w_plus = plus2 / 2.0;
    r.w_minus = minus2 / 2.0;
    r.w = std::min(r.w_plus, r.w_minus);
    r.method = force.value_or(n <= kExactLimit ? WilcoxonMethod::Exact : WilcoxonMethod::NormalApprox);

    if (r.method == WilcoxonMethod::Exact) {
        r.p_value = exact_p(doubled, std::min(plus2, minus2));
        return r;
    }
    const double nn = static_cast<double>(n);
    const double mean = nn * (nn + 1.0) / 4.0;
    const double var = nn * (nn + 1.0) * (2.0 * nn + 1.0) / 24.0 - tie_term / 48.0;
    const double numerator = std::min(0.0, r.w - mean + 0.5);
    const double z = numerator / std::sqrt(var);
    r.z = z;
    r.p_value = std::min(1.0, std::erfc(-z / std::sqrt(2.0)));
    return r;
}

WilcoxonResult wilcoxon_signed_rank(std::span<const double> a, std::span<const double> b,
                                    std::optional<WilcoxonMethod> force)
{
    if (a.size() != b.size()) {
        throw std::invalid_argument("paired samples differ in length");
    }
    std::vector<double> diffs(a.size());
    for (std::size_t i = 0; i < a.size(); ++i) {
        diffs[i] = a[i] - b[i];
    }
    return wilcoxon_signed_rank(std::span<const double>(diffs), force);
}

} // namespace rehab::metrics
