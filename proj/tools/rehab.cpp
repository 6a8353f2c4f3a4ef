// rehab: simulate, replay, stream and analyze exercise sessions.
//
// Exit codes: 0 success, 2 usage or configuration error, 3 corrupt input data.

#include "rehab/config.hpp"
#include "rehab/error.hpp"
#include "rehab/metrics.hpp"
#include "rehab/pipeline.hpp"
#include "rehab/protocol.hpp"
#include "rehab/sim.hpp"

#include <CLI11.hpp>

#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <iterator>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

namespace fs = std::filesystem;
using rehab::config::Json;
using rehab::config::Scenario;

namespace {

constexpr int kExitOk = 0;
constexpr int kExitConfig = 2;
constexpr int kExitData = 3;

struct UsageError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

struct Common {
    std::string scenario_path;
    std::optional<std::uint64_t> seed;
    std::vector<std::string> overrides;
    std::string out_dir = "out";
    std::string haptic_log;
    std::string format = "summary";
    bool quiet = false;
};

std::string read_file(const std::string& path)
{
    std::ifstream in(path, std::ios::binary);
    if (!in) {
        throw UsageError("cannot read '" + path + "'");
    }
    return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

void write_file(const fs::path& path, const std::string& text)
{
    if (path.has_parent_path()) {
        fs::create_directories(path.parent_path());
    }
    std::ofstream out(path, std::ios::binary);
    out << text;
    if (!out) {
        throw UsageError("cannot write '" + path.string() + "'");
    }
}

Json parse_layer(const std::string& text, const std::string& origin)
{
    try {
        return rehab::config::parse_json_text(text);
    } catch (const rehab::ConfigError& e) {
        throw rehab::ConfigError(origin + ": " + e.what(), e.line(), e.column());
    }
}

// defaults < $REHAB_CONFIG < trace metadata < --scenario < --seed / --set
Scenario load_scenario(const Common& opts, const Json* trace_meta = nullptr)
{
    Json doc = rehab::config::to_json(Scenario{});
    std::string source;
    std::string origin = "configuration";
    if (const char* env = std::getenv("REHAB_CONFIG"); env && *env) {
        source = read_file(env);
        origin = env;
        rehab::config::merge(doc, parse_layer(source, origin));
    }
    if (trace_meta) {
        rehab::config::merge(doc, *trace_meta);
    }
    if (!opts.scenario_path.empty()) {
        source = read_file(opts.scenario_path);
        origin = opts.scenario_path;
        rehab::config::merge(doc, parse_layer(source, origin));
    }
    if (opts.seed) {
        doc["seed"] = *opts.seed;
    }
    for (const auto& o : opts.overrides) {
        rehab::config::apply_override(doc, o);
    }
    try {
        return rehab::config::from_json(doc, source);
    } catch (const rehab::ConfigError& e) {
        throw rehab::ConfigError(origin + ": " + e.what(), e.line(), e.column());
    }
}

rehab::pipeline::Pipeline make_pipeline(const Scenario& s)
{
    return rehab::pipeline::Pipeline(s.session, s.feedback, s.pipeline);
}

Json make_report(const rehab::pipeline::Pipeline& pipe, const Scenario& s)
{
    const auto meta = pipe.report_meta(s.session_id, s.patient_id, rehab::config::config_hash(s));
    return rehab::metrics::build_report(pipe.engine().reps(), pipe.engine().config(), meta);
}

std::string join_lines(const std::vector<std::string>& lines)
{
    std::string out;
    for (const auto& l : lines) {
        out += l;
        out += '\n';
    }
    return out;
}

// Report, command log and pose log; returns the report.
Json write_outputs(const Common& opts, const rehab::pipeline::Pipeline& pipe, const Scenario& s)
{
    const fs::path dir(opts.out_dir);
    const Json report = make_report(pipe, s);
    write_file(dir / "report.json", rehab::metrics::dump_report(report));

    std::vector<std::string> commands;
    for (const auto& c : pipe.commands()) {
        commands.push_back(rehab::pipeline::format_command_record(c));
    }
    write_file(opts.haptic_log.empty() ? dir / "commands.log" : fs::path(opts.haptic_log), join_lines(commands));

    std::vector<std::string> poses;
    for (const auto& p : pipe.poses()) {
        poses.push_back(rehab::pipeline::format_pose_record(p));
    }
    write_file(dir / "poses.log", join_lines(poses));

    if (opts.format == "report") {
        std::cout << rehab::metrics::dump_report(report);
    } else {
        std::cout << rehab::metrics::format_summary(report);
    }
    return report;
}

void print_diagnostics(const rehab::pipeline::Pipeline& pipe)
{
    for (const auto& [name, count] : pipe.diagnostics()) {
        std::cerr << "rehab: diagnostic " << name << " x" << count << "\n";
    }
}

int cmd_simulate(const Common& opts)
{
    const Scenario s = load_scenario(opts);
    rehab::sim::SimResult result = rehab::sim::run_closed_loop(s.sim_setup());
    const fs::path dir(opts.out_dir);

    std::vector<std::string> trace;
    trace.push_back("M " + rehab::config::to_json(s).dump());
    trace.insert(trace.end(), result.trace.begin(), result.trace.end());
    write_file(dir / "trace.txt", join_lines(trace));
    write_file(dir / "trace.imubin", std::string(result.imu_stream.begin(), result.imu_stream.end()));

    write_outputs(opts, result.pipeline, s);
    if (result.hit_duration_limit) {
        std::cerr << "rehab: simulation stopped at the duration limit\n";
    }
    if (!opts.quiet) {
        print_diagnostics(result.pipeline);
    }
    return kExitOk;
}

int cmd_replay(const Common& opts, const std::string& trace_path)
{
    const std::string text = read_file(trace_path);
    std::vector<std::string> lines;
    {
        std::istringstream in(text);
        for (std::string line; std::getline(in, line);) {
            if (!line.empty() && line.back() == '\r') {
                line.pop_back();
            }
            lines.push_back(line);
        }
    }

    std::optional<Json> meta;
    for (const auto& line : lines) {
        if (line.rfind("M ", 0) == 0) {
            meta = parse_layer(line.substr(2), trace_path + " metadata");
            break;
        }
    }
    const Scenario s = load_scenario(opts, meta ? &*meta : nullptr);
    auto pipe = make_pipeline(s);

    for (std::size_t i = 0; i < lines.size(); ++i) {
        const std::string& line = lines[i];
        if (line.empty() || line[0] == '#' || line[0] == 'M') {
            continue;
        }
        try {
            if (line[0] == 'C') {
                pipe.set_calibration(rehab::kinematics::parse_calibration(line));
            } else {
                pipe.on_frame(rehab::protocol::parse_record(line));
            }
        } catch (const rehab::Error& e) {
            pipe.on_parse_error();
            if (!opts.quiet) {
                std::cerr << "rehab: " << trace_path << ":" << i + 1 << ": " << e.what() << "\n";
            }
        }
    }
    pipe.finish();
    write_outputs(opts, pipe, s);
    if (!opts.quiet) {
        print_diagnostics(pipe);
    }
    return pipe.saw_corruption() ? kExitData : kExitOk;
}

void print_progress(const rehab::pipeline::Pipeline& pipe)
{
    const auto& engine = pipe.engine();
    const auto p = rehab::session::session_progress(engine);
    char buf[160];
    std::snprintf(buf, sizeof buf, "[%8.1f s] %s %zu/%zu rep %u/%u %s", engine.last_timestamp().value_or(0) / 1000.0,
                  std::string(rehab::kinematics::to_string(engine.current_spec().pose)).c_str(), p.exercise_index + 1,
                  p.exercise_count, p.rep, p.repetitions, std::string(rehab::session::to_string(p.phase)).c_str());
    std::string line = buf;
    if (p.countdown_s) {
        std::snprintf(buf, sizeof buf, " countdown %.1f s", *p.countdown_s);
        line += buf;
    }
    std::cerr << line << "\n";
}

int cmd_stream(const Common& opts, const std::string& source)
{
    const Scenario s = load_scenario(opts);
    auto pipe = make_pipeline(s);

    std::ifstream file;
    std::istream* in = &std::cin;
    if (source != "-") {
        file.open(source, std::ios::binary);
        if (!file) {
            throw UsageError("cannot read '" + source + "'");
        }
        in = &file;
    }

    rehab::protocol::StreamDecoder decoder;
    std::optional<std::uint32_t> next_progress;
    const auto consume = [&](const rehab::protocol::DecodeResult& r) {
        for (const auto& d : r.diagnostics) {
            pipe.on_decoder_diagnostic(d);
            if (!opts.quiet) {
                std::cerr << "rehab: " << rehab::protocol::to_string(d.kind) << " at byte " << d.offset << " ("
                          << d.length << " bytes)\n";
            }
        }
        for (const auto& f : r.frames) {
            pipe.on_frame(f);
            const auto ts = pipe.engine().last_timestamp();
            if (opts.quiet || !ts || pipe.engine().complete()) {
                continue;
            }
            // Two updates per second of stream time.
            if (!next_progress || *ts >= *next_progress) {
                print_progress(pipe);
                next_progress = *ts - *ts % 500 + 500;
            }
        }
    };

    std::vector<char> chunk(4096);
    while (*in) {
        in->read(chunk.data(), static_cast<std::streamsize>(chunk.size()));
        const auto got = static_cast<std::size_t>(in->gcount());
        if (got == 0) {
            break;
        }
        consume(decoder.feed(std::span(reinterpret_cast<const std::uint8_t*>(chunk.data()), got)));
    }
    consume(decoder.finish());
    pipe.finish();
    write_outputs(opts, pipe, s);
    return pipe.saw_corruption() ? kExitData : kExitOk;
}

// Mean of one metric over a report's completed reps.
std::optional<double> report_metric(const Json& report, const std::string& metric)
{
    double sum = 0.0;
    std::size_t n = 0;
    for (const auto& rep : report.at("reps")) {
        if (rep.at("outcome") != "completed") {
            continue;
        }
        if (metric == "understanding_time" && rep.at("rep") != 1) {
            continue;
        }
        const auto& v = rep.at(metric + (metric == "angle_deviation" ? "_deg" : "_s"));
        if (v.is_null()) {
            continue;
        }
        sum += v.get<double>();
        ++n;
    }
    if (n == 0) {
        return std::nullopt;
    }
    return sum / static_cast<double>(n);
}

int cmd_analyze(const std::vector<std::string>& a, const std::vector<std::string>& b, const std::string& metric)
{
    if (a.size() != b.size()) {
        throw UsageError("report sets differ in size (" + std::to_string(a.size()) + " vs " +
                         std::to_string(b.size()) + ")");
    }
    std::vector<double> xs;
    std::vector<double> ys;
    for (std::size_t i = 0; i < a.size(); ++i) {
        const auto value = [&](const std::string& path) {
            Json report;
            try {
                report = Json::parse(read_file(path));
                if (auto v = report_metric(report, metric)) {
                    return *v;
                }
            } catch (const nlohmann::json::exception& e) {
                throw rehab::ParseError(path + ": " + e.what());
            }
            throw rehab::InsufficientData(path + ": no completed repetitions");
        };
        xs.push_back(value(a[i]));
        ys.push_back(value(b[i]));
    }
    try {
        const auto r = rehab::metrics::wilcoxon_signed_rank(xs, ys);
        std::printf("metric %s\n", metric.c_str());
        std::printf("n %zu\n", r.n_effective);
        std::printf("W %.1f\n", r.w);
        std::printf("p %.6f\n", r.p_value);
        std::printf("method %s\n", std::string(rehab::metrics::to_string(r.method)).c_str());
        if (r.z) {
            std::printf("z %.4f\n", *r.z);
        }
    } catch (const rehab::InsufficientData& e) {
        std::printf("metric %s\ninsufficient data: %s\n", metric.c_str(), e.what());
    }
    return kExitOk;
}

void add_common(CLI::App* cmd, Common& opts)
{
    cmd->add_option("--scenario", opts.scenario_path, "scenario JSON file");
    cmd->add_option("--set", opts.overrides, "override a setting, key.path=value")->take_all();
    cmd->add_option("--out", opts.out_dir, "output directory")->capture_default_str();
    cmd->add_option("--haptic-log", opts.haptic_log, "command log path (default <out>/commands.log)");
    cmd->add_option("--format", opts.format, "stdout format")
        ->check(CLI::IsMember({"report", "summary"}))
        ->capture_default_str();
    cmd->add_flag("-q,--quiet", opts.quiet, "no diagnostics or progress on stderr");
}

} // namespace

int main(int argc, char** argv)
{
    CLI::App app{"Exercise session engine and simulator"};
    app.require_subcommand(1);

    Common opts;
    std::uint64_t seed = 0;
    std::string trace_path;
    std::string stream_source = "-";
    std::vector<std::string> set_a;
    std::vector<std::string> set_b;
    std::string metric = "effective_time";

    auto* simulate = app.add_subcommand("simulate", "run the closed-loop simulator");
    add_common(simulate, opts);
    auto* seed_opt = simulate->add_option("--seed", seed, "random seed");

    auto* replay = app.add_subcommand("replay", "reprocess a recorded line trace");
    add_common(replay, opts);
    replay->add_option("trace", trace_path, "trace file")->required();

    auto* stream = app.add_subcommand("stream", "decode a binary IMU stream from a file or stdin");
    add_common(stream, opts);
    stream->add_option("source", stream_source, "input file, - for stdin")->capture_default_str();

    auto* analyze = app.add_subcommand("analyze", "Wilcoxon signed-rank test over paired reports");
    analyze->add_option("--a", set_a, "reports, condition A")->required()->take_all();
    analyze->add_option("--b", set_b, "reports, condition B")->required()->take_all();
    analyze->add_option("--metric", metric, "metric to compare")
        ->check(CLI::IsMember({"effective_time", "angle_deviation", "understanding_time"}))
        ->capture_default_str();

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        return app.exit(e) == 0 ? kExitOk : kExitConfig;
    }
    if (seed_opt->count() > 0) {
        opts.seed = seed;
    }

    try {
        if (simulate->parsed()) {
            return cmd_simulate(opts);
        }
        if (replay->parsed()) {
            return cmd_replay(opts, trace_path);
        }
        if (stream->parsed()) {
            return cmd_stream(opts, stream_source);
        }
        return cmd_analyze(set_a, set_b, metric);
    } catch (const rehab::ConfigError& e) {
        std::cerr << "rehab: " << e.what() << "\n";
        return kExitConfig;
    } catch (const UsageError& e) {
        std::cerr << "rehab: " << e.what() << "\n";
        return kExitConfig;
    } catch (const rehab::ParseError& e) {
        std::cerr << "rehab: " << e.what() << "\n";
        return kExitData;
    } catch (const rehab::InsufficientData& e) {
        std::cerr << "rehab: " << e.what() << "\n";
        return kExitData;
    }
}
