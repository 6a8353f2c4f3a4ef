#include "oracles/wilcoxon_enum.hpp"
#include "support/hold_cases.hpp"

#include "rehab/error.hpp"
#include "rehab/metrics.hpp"

#include <doctest.h>

#include <cmath>
#include <random>

using namespace rehab::metrics;
using rehab::kinematics::ExercisePose;
using rehab::kinematics::ExerciseSpec;
using rehab::session::AngleSample;
using rehab::session::RepOutcome;
using rehab::session::RepRecord;
using rehab::session::SessionConfig;

TEST_CASE("hand-built hold traces")
{
    for (const auto& c : testsupport::hold_cases()) {
        CAPTURE(c.name);
        const auto m = compute_rep_metrics(c.rep, c.spec);
        CHECK(std::abs(m.angle_deviation_deg - c.expected_deviation) <= 0.01);
        CHECK(std::abs(m.effective_time_s - c.expected_effective) <= 0.01);
        CHECK(m.understanding_time_s == doctest::Approx(2.0));
    }
    const auto perfect = testsupport::hold_cases().front();
    const auto m = compute_rep_metrics(perfect.rep, perfect.spec);
    CHECK(m.angle_deviation_deg == 0.0);
    CHECK(m.effective_time_s == 10.0);
}

TEST_CASE("effective time is additive over a split")
{
    std::mt19937_64 rng(1);
    std::uniform_real_distribution<double> u(27.0, 33.0);
    std::vector<AngleSample> trace;
    for (std::uint32_t t = 0; t < 10000; t += 10 + static_cast<std::uint32_t>(rng() % 20)) {
        trace.push_back({t, u(rng)});
    }
    const double ref = 30.0;
    const double whole = effective_time_s(trace, ref, 10000);
    for (std::size_t cut = 1; cut < trace.size(); cut += 37) {
        const std::span<const AngleSample> all(trace);
        const double a = effective_time_s(all.first(cut), ref, trace[cut].timestamp_ms);
        const double b = effective_time_s(all.subspan(cut), ref, 10000);
        CHECK(a + b == doctest::Approx(whole));
    }
    CHECK(whole >= 0.0);
    CHECK(whole <= 10.0);
    CHECK(effective_time_s({}, ref, 10000) == 0.0);
}

TEST_CASE("incomplete reps have no metrics")
{
    RepRecord rep;
    rep.outcome = RepOutcome::TimedOut;
    CHECK_THROWS_AS(compute_rep_metrics(rep, ExerciseSpec::standard(ExercisePose::StraightLegRaise)),
                    rehab::IncompleteRep);
}

TEST_CASE("aggregates use the sample standard deviation")
{
    SessionConfig cfg;
    cfg.exercises.push_back(ExerciseSpec::standard(ExercisePose::StraightLegRaise, 2));
    auto a = testsupport::hold_cases()[0];
    auto b = a;
    a.rep.hold_start_angle = 31.0;
    b.rep.hold_start_angle = 27.0;
    b.rep.rep_index = 2;
    b.rep.events[0].end_ms = 4000;  // not rep 1, so not in understanding_time
    const std::vector<RepRecord> reps{a.rep, b.rep};
    ReportMeta meta;
    meta.config_hash = "abc";
    const auto report = build_report(reps, cfg, meta);
    REQUIRE(report["aggregates"].size() == 1);
    const auto& agg = report["aggregates"][0];
    CHECK(agg["completed"] == 2);
    CHECK(agg["angle_deviation_deg"]["mean"].get<double>() == 2.0);
    CHECK(agg["angle_deviation_deg"]["sd"].get<double>() == 1.41);
    CHECK(agg["understanding_time_s"].get<double>() == 2.0);
    CHECK(report["reps"].size() == 2);
    CHECK(report["reps"][1]["angle_deviation_deg"].get<double>() == doctest::Approx(3.0));

    // One rep: no spread.
    const std::vector<RepRecord> one{a.rep};
    CHECK(build_report(one, cfg, meta)["aggregates"][0]["angle_deviation_deg"]["sd"].is_null());
}

TEST_CASE("empty session report")
{
    SessionConfig cfg;
    cfg.exercises.push_back(ExerciseSpec::standard(ExercisePose::StraightLegRaise));
    const auto report = build_report({}, cfg, ReportMeta{});
    CHECK(report["schema_version"] == kReportSchemaVersion);
    CHECK(report["session"]["rep_count"] == 0);
    CHECK(report["session"]["outcomes"]["completed"] == 0);
    CHECK(report["session"]["outcomes"]["timed_out"] == 0);
    CHECK(report["session"]["outcomes"]["aborted"] == 0);
    CHECK(report["aggregates"].empty());
    CHECK(report["reps"].empty());
    CHECK(dump_report(report) == dump_report(build_report({}, cfg, ReportMeta{})));
    CHECK(dump_report(report).back() == '\n');
    CHECK_FALSE(format_summary(report).empty());
}

TEST_CASE("incomplete reps appear with null metrics")
{
    SessionConfig cfg;
    cfg.exercises.push_back(ExerciseSpec::standard(ExercisePose::StraightLegRaise));
    RepRecord timed_out;
    timed_out.outcome = RepOutcome::TimedOut;
    const std::vector<RepRecord> reps{timed_out};
    const auto report = build_report(reps, cfg, ReportMeta{});
    CHECK(report["session"]["outcomes"]["timed_out"] == 1);
    CHECK(report["reps"][0]["angle_deviation_deg"].is_null());
    CHECK(report["reps"][0]["outcome"] == "timed_out");
    CHECK(report["aggregates"].empty());
}

TEST_CASE("round2")
{
    CHECK(round2(1.414213) == 1.41);
    CHECK(round2(2.004) == 2.0);
    CHECK(!std::signbit(round2(-0.001)));
}

TEST_CASE("wilcoxon: five positive differences")
{
    const std::vector<double> d{1, 2, 3, 4, 5};
    const auto r = wilcoxon_signed_rank(d);
    CHECK(r.w == 0.0);
    CHECK(r.w_plus == 15.0);
    CHECK(r.n_effective == 5);
    CHECK(r.method == WilcoxonMethod::Exact);
    CHECK(r.p_value == doctest::Approx(0.0625));
    CHECK(oracle::wilcoxon_enumerate(d).p == doctest::Approx(0.0625));
}

TEST_CASE("wilcoxon: degenerate inputs")
{
    const std::vector<double> a{1, 2, 3, 4};
    CHECK_THROWS_AS(wilcoxon_signed_rank(a, a), rehab::InsufficientData);
    const std::vector<double> two{1, -2, 0, 0};
    CHECK_THROWS_AS(wilcoxon_signed_rank(two), rehab::InsufficientData);
    const std::vector<double> b{1, 2};
    CHECK_THROWS_AS(wilcoxon_signed_rank(a, b), std::invalid_argument);
}

TEST_CASE("wilcoxon: ties and zeros match enumeration")
{
    std::mt19937_64 rng(8);
    for (int i = 0; i < 200; ++i) {
        std::vector<double> d(3 + rng() % 10);
        for (auto& x : d) {
            x = static_cast<double>(static_cast<int>(rng() % 9) - 4);
        }
        const auto want = oracle::wilcoxon_enumerate(d);
        if (want.n < 3) {
            CHECK_THROWS_AS(wilcoxon_signed_rank(d), rehab::InsufficientData);
            continue;
        }
        const auto got = wilcoxon_signed_rank(d);
        CHECK(got.n_effective == want.n);
        CHECK(got.w == doctest::Approx(want.w));
        CHECK(got.p_value == doctest::Approx(want.p).epsilon(1e-12));
    }
}

TEST_CASE("wilcoxon: n = 30 uses the normal approximation")
{
    std::mt19937_64 rng(30);
    std::normal_distribution<double> n(0.3, 1.0);
    for (int trial = 0; trial < 5; ++trial) {
        std::vector<double> a(30);
        std::vector<double> b(30);
        for (std::size_t i = 0; i < 30; ++i) {
            a[i] = n(rng);
            b[i] = n(rng) - 0.3;
        }
        const auto r = wilcoxon_signed_rank(a, b);
        CHECK(r.method == WilcoxonMethod::NormalApprox);
        REQUIRE(r.z.has_value());
        std::vector<double> d(30);
        for (std::size_t i = 0; i < 30; ++i) {
            d[i] = a[i] - b[i];
        }
        CHECK(std::abs(r.p_value - oracle::wilcoxon_enumerate_split(d).p) <= 0.01);
        const auto exact = wilcoxon_signed_rank(d, WilcoxonMethod::Exact);
        CHECK(exact.p_value == doctest::Approx(oracle::wilcoxon_enumerate_split(d).p).epsilon(1e-9));
    }
}

TEST_CASE("wilcoxon: exact limit")
{
    std::vector<double> d;
    for (int i = 1; i <= 25; ++i) {
        d.push_back(i % 3 ? i : -i);
    }
    CHECK(wilcoxon_signed_rank(d).method == WilcoxonMethod::Exact);
    d.push_back(26);
    CHECK(wilcoxon_signed_rank(d).method == WilcoxonMethod::NormalApprox);
    CHECK(to_string(WilcoxonMethod::NormalApprox) == "normal_approx");
}
