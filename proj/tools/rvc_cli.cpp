// rvc: batch trials, replay logs, rebuild reports, serve live sessions.

#include <csignal>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "rvc/harness.hpp"
#include "rvc/server.hpp"

namespace fs = std::filesystem;
using namespace rvc;

namespace {

std::vector<harness::Mode> parse_modes(const std::string& m) {
    if (m == "auto") return {harness::Mode::Autonomous};
    if (m == "manual") return {harness::Mode::ScriptedManual};
    return {harness::Mode::Autonomous, harness::Mode::ScriptedManual};
}

void print_summary(const harness::BatchReport& b) {
    for (const auto& m : b.modes) {
        std::printf("%-16s trials=%zu nav_mean=%.2fs punct_mean=%.2fs success=%.2f accuracy=%.2f\n",
                    std::string(to_string(m.mode)).c_str(), m.trials, m.navigation.mean, m.puncture.mean,
                    m.success_rate, m.metrics.accuracy);
    }
}

service::Server* g_server = nullptr;

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"Retinal vein cannulation simulator"};
    app.require_subcommand(1);

    std::vector<std::string> scenarios;
    std::size_t trials = 20;
    std::string mode = "auto";
    std::uint64_t seed = 1;
    std::string out = "out";
    std::string log_dir;
    std::string frame_dir;
    auto* run = app.add_subcommand("run", "Run a batch of headless trials and write the report");
    run->add_option("--scenario", scenarios, "Scenario JSON file(s); trial i uses file i mod n")
        ->required()
        ->check(CLI::ExistingFile);
    run->add_option("--trials", trials, "Number of trials")->check(CLI::PositiveNumber);
    run->add_option("--mode", mode, "auto, manual (scripted operator) or both")
        ->check(CLI::IsMember({"auto", "manual", "both"}));
    run->add_option("--seed", seed, "Master seed");
    run->add_option("--out", out, "Output directory");
    run->add_option("--logs", log_dir, "Write per-trial NDJSON logs here");
    run->add_option("--frames", frame_dir, "Dump every rendered frame as PNG here");

    std::string log_path;
    std::string replay_frames;
    auto* rep = app.add_subcommand("replay", "Re-run a trial log and diff it line by line");
    rep->add_option("--log", log_path, "Trial log (NDJSON)")->required()->check(CLI::ExistingFile);
    rep->add_option("--frames", replay_frames, "Dump the replayed frames as PNG here");

    std::string records;
    std::string report_out;
    auto* report = app.add_subcommand("report", "Rebuild tables and report.json from records.csv");
    report->add_option("--records", records, "records.csv")->required()->check(CLI::ExistingFile);
    report->add_option("--out", report_out, "Output directory (default: next to records.csv)");

    std::string serve_scenario;
    unsigned short port = 8080;
    std::string address = "127.0.0.1";
    bool realtime = false;
    bool fast = false;
    std::size_t max_sessions = 4;
    auto* serve = app.add_subcommand("serve", "Serve live sessions over WebSocket");
    serve->add_option("--scenario", serve_scenario, "Scenario JSON file")->required()->check(CLI::ExistingFile);
    serve->add_option("--port", port, "TCP port");
    serve->add_option("--address", address, "Listen address");
    serve->add_option("--max-sessions", max_sessions, "Concurrent session limit")->check(CLI::PositiveNumber);
    auto* rt = serve->add_flag("--realtime", realtime, "Tick at dt of wall clock (default)");
    serve->add_flag("--fast", fast, "Tick as fast as possible")->excludes(rt);

    CLI11_PARSE(app, argc, argv);

    try {
        if (*run) {
            std::vector<harness::Scenario> set;
            for (const auto& p : scenarios) set.push_back(harness::load_scenario(p));
            harness::BatchOptions opt;
            opt.trials = trials;
            opt.modes = parse_modes(mode);
            opt.master_seed = seed;
            if (!log_dir.empty()) opt.log_dir = log_dir;
            if (!frame_dir.empty()) opt.frame_dir = frame_dir;
            const harness::BatchReport b = harness::run_batch(set, opt);
            harness::write_report(b, out);
            print_summary(b);
            std::printf("wrote %s\n", (fs::path(out) / "records.csv").string().c_str());
            return 0;
        }
        if (*rep) {
            std::ifstream in(log_path);
            const auto lines = harness::read_log_lines(in);
            harness::FrameSink sink;
            if (!replay_frames.empty()) {
                fs::create_directories(replay_frames);
                sink = [dir = fs::path(replay_frames)](long long k, harness::FrameKind kind, const GrayImage& img) {
                    char name[64];
                    std::snprintf(name, sizeof name, "%05lld_%s.png", k,
                                  kind == harness::FrameKind::Microscope ? "microscope" : "bscan");
                    write_png(img, (dir / name).string());
                };
            }
            const harness::ReplayResult r = harness::replay(lines, std::nullopt, sink);
            std::printf("replayed %zu lines, %zu differ\n", lines.size(), r.diff_lines.size());
            for (std::size_t i : r.diff_lines) std::printf("  line %zu\n", i + 1);
            return r.diverged() ? 2 : 0;
        }
        if (*report) {
            const harness::BatchReport b = harness::report_from_csv(records);
            const fs::path dir = report_out.empty() ? fs::path(records).parent_path() : fs::path(report_out);
            harness::write_report(b, dir.empty() ? fs::path(".") : dir);
            print_summary(b);
            return 0;
        }
        if (*serve) {
            service::ServerOptions opt;
            opt.address = address;
            opt.port = port;
            opt.realtime = !fast;
            opt.max_sessions = max_sessions;
            service::Server server(harness::load_scenario(serve_scenario), opt);
            g_server = &server;
            std::signal(SIGINT, [](int) {
                if (g_server) g_server->stop();
            });
            std::printf("listening on ws://%s:%u (%s)\n", address.c_str(), server.port(), fast ? "fast" : "realtime");
            std::fflush(stdout);
            server.run();
            g_server = nullptr;
            return 0;
        }
    } catch (const Error& e) {
        std::fprintf(stderr, "error: %s\n", e.what());
        return 1;
    }
    return 0;
}
