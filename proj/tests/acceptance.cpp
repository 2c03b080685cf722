// Acceptance run: one PASS/FAIL line per criterion, nonzero exit on any FAIL.

#include <chrono>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <functional>
#include <iostream>
#include <sstream>
#include <string>
#include <vector>

#include "rvc/harness.hpp"

using namespace rvc;
using control::ControllerConfig;
using control::ControllerState;
using control::Percepts;
using control::Phase;
using control::PerceptKind;
using harness::Mode;
using harness::Scenario;

namespace {

using SteadyClock = std::chrono::steady_clock;

struct Verdict {
    bool pass = false;
    std::string detail;
};

std::string fmt(const char* f, auto... args) {
    char buf[512];
    std::snprintf(buf, sizeof buf, f, args...);
    return buf;
}

Scenario scenario(const std::string& name) { return harness::load_scenario(RVC_SCENARIO_DIR "/" + name + ".json"); }

std::filesystem::path scratch(const std::string& name) {
    auto p = std::filesystem::temp_directory_path() / ("rvc_acceptance_" + name);
    std::filesystem::remove_all(p);
    return p;
}

world::WorldState scene(Pose3 tip, std::uint64_t seed = 3) {
    world::NeedleModel n;
    n.tip = tip;
    return world::make_world(n, world::VeinModel::preset("embryo"), world::PhysicsConfig{}, seed);
}

// ------------------------------------------------------------ controller

Percepts tip_at(Vec2 px) {
    Percepts p;
    perception::TipDetection d;
    d.tip_px = px;
    d.confidence = 0.8;
    p.tip = d;
    return p;
}

Pose3 move(Pose3 pose, const world::MotionCommand& cmd, double dt, double angle_deg) {
    const double e = angle_deg * M_PI / 180.0;
    if (auto* z = std::get_if<world::ZStep>(&cmd)) pose.z += z->dz;
    if (auto* v = std::get_if<world::PlanarVelocity>(&cmd)) {
        pose.x += v->vx * dt;
        pose.y += v->vy * dt;
    }
    if (auto* a = std::get_if<world::AxialInsertion>(&cmd)) {
        double d = std::abs(a->speed) * dt;
        if (a->travel_limit_mm) d = std::min(d, *a->travel_limit_mm);
        const double sign = a->speed < 0 ? -1.0 : 1.0;
        pose.x += sign * d * std::cos(e);
        pose.z -= sign * d * std::sin(e);
    }
    return pose;
}

struct FuzzStats {
    int runs = 0;
    int unsafe = 0;
    int over_bound = 0;
    int over_attempts = 0;
    int done = 0;
    int aborted = 0;
    double seconds = 0.0;
};

// Random percept sequences against the controller alone.
const FuzzStats& fuzz() {
    static FuzzStats st = [] {
        FuzzStats s;
        const auto t0 = SteadyClock::now();
        const double dt = 0.1;
        for (std::uint64_t seed = 0; seed < 1200; ++seed) {
            Rng rng(derive_seed(0xF0, seed));
            ControllerConfig cfg;
            cfg.max_puncture_attempts = 1 + int(rng.below(6));
            cfg.stroke_depth_mm = rng.uniform(0.05, 0.5);
            cfg.reacquire_limit = 2 + int(rng.below(60));
            cfg.max_navigation_ticks = 20 + int(rng.below(400));
            const long long bound = control::tick_bound(cfg, dt);
            const double p_fail = rng.uniform(0.0, 0.5);
            const double p_contact = rng.uniform(0.0, 0.3);
            const double p_punct = rng.uniform(0.0, 0.8);
            const Vec2 target{rng.uniform(0, 511), rng.uniform(0, 511)};
            ControllerState c = control::set_target({}, target, cfg);
            Pose3 pose{0, 0, 1};
            bool contact_seen = false;
            long long ticks = 0;
            while (!control::is_terminal(c.phase) && ticks <= bound) {
                Percepts in;
                const PerceptKind need = control::required_percept(c.phase);
                if (need != PerceptKind::None && rng.bernoulli(p_fail)) {
                    in.failure = need == PerceptKind::Tip ? ErrorCode::NoNeedleDetected : ErrorCode::NeedleNotInScan;
                } else if (need == PerceptKind::Tip) {
                    in = tip_at(rng.bernoulli(0.05) ? target : Vec2{rng.uniform(0, 511), rng.uniform(0, 511)});
                } else if (need == PerceptKind::Contact) {
                    const double gap = rng.bernoulli(p_contact) ? rng.uniform(-6, 0) : rng.uniform(2, 30);
                    in.contact = perception::decide_contact(gap, rng.uniform(0.05, 0.95));
                    if (in.contact->decision) contact_seen = true;
                } else if (need == PerceptKind::Puncture) {
                    in.puncture = perception::PunctureDecision{{}, rng.bernoulli(p_punct), rng.uniform()};
                }
                auto [cmd, next] = control::tick(c, cfg, in, pose, dt);
                if (auto* a = std::get_if<world::AxialInsertion>(&cmd); a && a->speed >= cfg.insertion_speed_mm_s)
                    s.unsafe += !contact_seen;
                s.over_attempts += next.attempts > cfg.max_puncture_attempts;
                pose = move(pose, cmd, dt, cfg.insertion_angle_deg);
                c = next;
                ++ticks;
            }
            ++s.runs;
            if (!control::is_terminal(c.phase)) ++s.over_bound;
            else (c.phase == Phase::Done ? s.done : s.aborted)++;
        }
        s.seconds = std::chrono::duration<double>(SteadyClock::now() - t0).count();
        return s;
    }();
    return st;
}

Verdict fsm_safety() {
    const FuzzStats& s = fuzz();
    return {s.runs >= 1000 && s.unsafe == 0 && s.seconds < 10.0,
            fmt("%d runs, %d insertions before contact, %.2f s", s.runs, s.unsafe, s.seconds)};
}

Verdict liveness() {
    const FuzzStats& s = fuzz();
    return {s.over_bound == 0 && s.over_attempts == 0 && s.done > 0 && s.aborted > 0,
            fmt("%d runs: %d done, %d aborted, %d past the tick bound, %d over the attempt cap", s.runs, s.done,
                s.aborted, s.over_bound, s.over_attempts)};
}

// ------------------------------------------------------------ navigation

Verdict navigation() {
    Scenario base = scenario("clean");
    base.randomize.reset();
    int pairs = 0;
    int converged = 0;
    int monotone = 0;
    double worst = 0.0;
    std::string first_bad;
    for (int i = 0; i < 10; ++i) {
        for (int j = 0; j < 10; ++j) {
            Scenario sc = base;
            sc.target_xy = {-2.0 + 0.5 * (j % 9), 0.0};
            const Vec2 offset{-4.5 + 1.0 * i, -4.5 + 1.0 * j};
            sc.needle.tip.x = sc.target_xy.x + offset.x;
            sc.needle.tip.y = sc.target_xy.y + offset.y;
            harness::TrialRunner r(sc, std::size_t(pairs), 1 + std::uint64_t(pairs), Mode::Autonomous);
            const Vec2 target = r.setup().target_px;
            double prev = norm(r.true_tip_px() - target);
            bool decreasing = true;
            while (r.phase() == Phase::Navigating) {
                r.step();
                const double d = norm(r.true_tip_px() - target);
                if (r.phase() == Phase::Navigating && !(d < prev)) decreasing = false;
                prev = d;
            }
            const double err = norm(r.true_tip_px() - target);
            worst = std::max(worst, err);
            const bool ok = r.phase() == Phase::ContactSeek && err < 3.0;
            converged += ok;
            monotone += decreasing;
            if ((!ok || !decreasing) && first_bad.empty())
                first_bad = fmt("; first miss: pair %d ends %.3f px in %s", pairs, err,
                                std::string(control::to_string(r.phase())).c_str());
            ++pairs;
        }
    }
    return {pairs >= 100 && converged == pairs && monotone == pairs,
            fmt("%d/%d pairs under 3 px (worst %.3f px), %d/%d strictly decreasing", converged, pairs, worst,
                monotone, pairs) +
                first_bad};
}

// ---------------------------------------------------------------- render

Vec2 difference_centroid(const GrayImage& a, const GrayImage& b) {
    Vec2 acc;
    double wsum = 0.0;
    for (int v = 0; v < a.height(); ++v)
        for (int u = 0; u < a.width(); ++u) {
            const double d = double(a.at(u, v)) - double(b.at(u, v));
            if (d <= 5.0) continue;
            acc = acc + Vec2{double(u), double(v)} * d;
            wsum += d;
        }
    return wsum > 0 ? acc / wsum : Vec2{NAN, NAN};
}

double ridge_row(const GrayImage& img, int col, int lo, int hi) {
    double acc = 0.0;
    double wsum = 0.0;
    for (int v = lo; v <= hi; ++v) {
        const double w = std::max(0.0, img.at(col, v) - 100.0);
        acc += v * w;
        wsum += w;
    }
    return wsum > 0 ? acc / wsum : NAN;
}

const imaging::Scanline kLine{{0.0, 0.0}, {1.0, 0.0}};

Verdict render_oracle() {
    imaging::RenderOptions tip_only;
    tip_only.draw_shaft = false;
    imaging::RenderOptions none;
    none.draw_needle = false;
    imaging::MicroscopeRenderer mic;
    double worst_tip = 0.0;
    for (int i = 0; i < 20; ++i)
        for (int j = 0; j < 20; ++j) {
            const Pose3 tip{-12.0 + 1.237 * i, -11.0 + 1.151 * j, 0.2};
            const auto w = scene(tip);
            const auto f = mic.render(w, tip_only);
            const Vec2 c = difference_centroid(f.image, mic.render(w, none).image);
            const Vec2 want = imaging::mm_to_px(f, tip.xy());
            const double e = std::max(std::abs(c.x - want.x), std::abs(c.y - want.y));
            worst_tip = std::isfinite(e) ? std::max(worst_tip, e) : INFINITY;
        }
    imaging::BScanRenderer bs;
    double worst_ridge = 0.0;
    for (int k = 0; k <= 30; ++k) {
        const double d = 0.005 * k;
        const auto w = scene({0, 0, -d});
        const auto f = bs.render(w, kLine);
        for (int col = 60; col <= 164; ++col) {
            // Flat floor of the dent beside the needle blob, and undisturbed
            // wall well away from it; the shoulder in between is skipped.
            const double s = imaging::px_to_mm(f, {double(col), 0}).s;
            double z = 0.0;
            if (std::abs(s) > 0.12 && std::abs(s) <= 0.2) z = w.vein.depth_z - d;
            else if (std::abs(s) >= 0.7) z = w.vein.depth_z;
            else continue;
            const double want = imaging::mm_to_px(f, imaging::SlicePoint{s, z}).y;
            const double e = std::abs(ridge_row(f.image, col, 60, 100) - want);
            worst_ridge = std::isfinite(e) ? std::max(worst_ridge, e) : INFINITY;
        }
    }
    return {worst_tip <= 0.5 && worst_ridge <= 1.0,
            fmt("400 tip poses, worst %.3f px; 31 deflections, worst ridge %.3f px", worst_tip, worst_ridge)};
}

// ------------------------------------------------------------ perception

Verdict perception_agreement() {
    int sweeps = 0;
    int contact_ok = 0;
    int punct_ok = 0;
    int early = 0;
    for (int i = 0; i < 12; ++i) {
        const double dt = 0.05;
        world::WorldState w = scene({-0.3 + 0.05 * i, 0.02 * (i % 3), 0.15 + 0.02 * i}, 10 + i);
        const double speed = 2.2 + 0.15 * i;
        int truth_contact = -1, seen_contact = -1, truth_punct = -1, seen_punct = -1;
        for (int tick = 0; tick < 400 && !world::wall_ruptured(w.tissue.phase); ++tick) {
            const bool slow = w.tissue.phase == world::TissuePhase::Free || w.tissue.deflection_mm < 0.1;
            w = world::step(w, slow ? world::MotionCommand{world::ZStep{-0.01}}
                                    : world::MotionCommand{world::AxialInsertion{speed, 0.05}},
                            dt);
            const auto f = imaging::render_bscan(w, kLine);
            if (truth_contact < 0 && w.tissue.phase != world::TissuePhase::Free) truth_contact = tick;
            if (seen_contact < 0 && perception::classify_contact(f).decision) seen_contact = tick;
            if (truth_punct < 0 && world::wall_ruptured(w.tissue.phase)) truth_punct = tick;
            const bool p = perception::detect_puncture(f).decision;
            if (seen_punct < 0 && p) seen_punct = tick;
            if (truth_punct < 0 && p) ++early;
        }
        ++sweeps;
        contact_ok += truth_contact >= 0 && seen_contact >= 0 && std::abs(seen_contact - truth_contact) <= 1;
        punct_ok += truth_punct >= 0 && seen_punct >= 0 && std::abs(seen_punct - truth_punct) <= 1;
    }
    double worst_tip = 0.0;
    imaging::MicroscopeRenderer mic;
    for (int i = 0; i < 20; ++i)
        for (int j = 0; j < 20; ++j) {
            const Pose3 tip{-12.0 + 1.237 * i, -11.0 + 1.151 * j, 0.2};
            const auto w = scene(tip, 50 + i * 20 + j);
            const auto f = mic.render(w);
            perception::TipDetectorConfig tc;
            tc.azimuth = w.needle.azimuth();
            try {
                const Vec2 got = perception::detect_tip(f, tc).tip_px;
                worst_tip = std::max(worst_tip, norm(got - imaging::mm_to_px(f, tip.xy())));
            } catch (const Error&) {
                worst_tip = INFINITY;
            }
        }
    return {contact_ok == sweeps && punct_ok == sweeps && early == 0 && worst_tip <= 1.0,
            fmt("%d sweeps: contact within 1 tick %d, puncture within 1 tick %d, early puncture calls %d; "
                "tip error worst %.3f px over 400 poses",
                sweeps, contact_ok, punct_ok, early, worst_tip)};
}

// ------------------------------------------------------------ retraction

Verdict retraction() {
    Rng rng(0x5E7);
    double worst = 0.0;
    int cases = 0;
    const double dt = 0.1;
    for (int k = 0; k < 300; ++k) {
        ControllerConfig cfg;
        cfg.stroke_depth_mm = k == 0 ? 0.5 : rng.uniform(0.02, 0.8);
        Pose3 pose{0, 0, 1};
        ControllerState s = control::set_target({}, {100, 100}, cfg);
        s = control::tick(s, cfg, tip_at({100, 100}), pose, dt).second;
        Percepts touch;
        touch.contact = perception::decide_contact(-2.0, cfg.contact_threshold);
        s = control::tick(s, cfg, touch, pose, dt).second;
        double forward = 0.0;
        while (s.phase == Phase::PunctureStroke) {
            auto [cmd, next] = control::tick(s, cfg, {}, pose, dt);
            forward += *std::get<world::AxialInsertion>(cmd).travel_limit_mm;
            s = next;
        }
        Percepts miss;
        miss.puncture = perception::PunctureDecision{{}, false, 0.9};
        s = control::tick(s, cfg, miss, pose, dt).second;
        double back = 0.0;
        while (s.phase == Phase::Retracting) {
            auto [cmd, next] = control::tick(s, cfg, {}, pose, dt);
            back += *std::get<world::AxialInsertion>(cmd).travel_limit_mm;
            s = next;
        }
        worst = std::max({worst, std::abs(back - 0.4 * forward), std::abs(forward - cfg.stroke_depth_mm),
                          std::abs(s.last_retract_mm - 0.4 * cfg.stroke_depth_mm)});
        if (k == 0) worst = std::max(worst, std::abs(back - 0.2));
        ++cases;
    }
    return {worst <= 1e-9, fmt("%d stroke depths incl. 0.5 mm -> 0.2 mm, worst error %.3g mm", cases, worst)};
}

// --------------------------------------------------------------- metrics

Verdict metrics_fixture() {
    std::vector<perception::LabeledSample> samples;
    auto add = [&](int n, int truth, int pred) {
        for (int i = 0; i < n; ++i) samples.push_back({std::to_string(samples.size()), truth, pred, 1.0});
    };
    add(9, 0, 0);
    add(3, 0, 1);
    add(1, 1, 0);
    add(14, 1, 1);
    const auto t = perception::evaluate_classifier(samples);
    const double tol = 0.005 + 1e-12;
    const bool ok = std::abs(t.classes[0].precision - 0.90) <= tol && std::abs(t.classes[1].precision - 0.82) <= tol &&
                    std::abs(t.classes[0].recall - 0.75) <= tol && std::abs(t.classes[1].recall - 0.93) <= tol &&
                    std::abs(t.classes[0].f1 - 0.82) <= tol && std::abs(t.classes[1].f1 - 0.87) <= tol &&
                    t.classes[0].support == 12 && t.classes[1].support == 15 && std::abs(t.accuracy - 0.85) <= tol;
    return {ok, fmt("precision %.4f/%.4f recall %.4f/%.4f F1 %.4f/%.4f support %zu/%zu accuracy %.4f",
                    t.classes[0].precision, t.classes[1].precision, t.classes[0].recall, t.classes[1].recall,
                    t.classes[0].f1, t.classes[1].f1, t.classes[0].support, t.classes[1].support, t.accuracy)};
}

// ----------------------------------------------------------------- batches

harness::BatchReport batch(const std::string& name, std::size_t n, std::vector<Mode> modes, std::uint64_t seed,
                           std::optional<std::filesystem::path> logs = std::nullopt) {
    harness::BatchOptions opt;
    opt.trials = n;
    opt.modes = std::move(modes);
    opt.master_seed = seed;
    opt.log_dir = std::move(logs);
    return harness::run_batch({scenario(name)}, opt);
}

std::string first_line(const std::filesystem::path& p) {
    std::ifstream in(p);
    std::string l;
    std::getline(in, l);
    return l;
}

Verdict degradation() {
    double acc[3];
    const char* names[3] = {"clean", "calibrated", "maxed"};
    bool csv_ok = true;
    for (int i = 0; i < 3; ++i) {
        const auto b = batch(names[i], 40, {Mode::Autonomous}, 2024);
        acc[i] = b.modes.at(0).metrics.accuracy;
        const auto dir = scratch(std::string("report_") + names[i]);
        harness::write_report(b, dir);
        csv_ok = csv_ok && first_line(dir / "tableI.csv") == "Metric,Navigation Time (seconds),Puncture Time (seconds)" &&
                 first_line(dir / "tableII.csv") == "Metric,Class 0 (Failure),Class 1 (Success)" &&
                 first_line(dir / "records.csv") == harness::records_header &&
                 harness::parse_records_csv(harness::read_text(dir / "records.csv")).size() == 40;
    }
    return {acc[0] > acc[1] && acc[1] > acc[2] && csv_ok,
            fmt("accuracy clean %.3f > calibrated %.3f > maxed %.3f over 40 trials each; table CSVs %s", acc[0],
                acc[1], acc[2], csv_ok ? "written" : "missing or malformed")};
}

Verdict paired_modes() {
    const auto b = batch("clean", 50, {Mode::Autonomous, Mode::ScriptedManual}, 77);
    std::map<std::size_t, int> autonomous;
    std::map<std::size_t, int> manual;
    double sum_a = 0.0;
    double sum_m = 0.0;
    for (const auto& r : b.records) {
        (r.mode == Mode::Autonomous ? autonomous : manual)[r.trial_id] = r.navigation_ticks;
        (r.mode == Mode::Autonomous ? sum_a : sum_m) += r.navigation_ticks;
    }
    std::size_t wins = 0;
    std::size_t losses = 0;
    for (const auto& [id, a] : autonomous) {
        const int m = manual.at(id);
        wins += m > a;
        losses += m < a;
    }
    const double p = harness::sign_test_p(wins, losses);
    const double mean_a = sum_a / double(autonomous.size());
    const double mean_m = sum_m / double(manual.size());
    return {autonomous.size() == 50 && mean_m > mean_a && p < 0.01,
            fmt("50 seeds: mean navigation ticks manual %.1f vs auto %.1f (%.1f%% shorter), manual slower on %zu, "
                "faster on %zu, sign test p = %.3g",
                mean_m, mean_a, 100.0 * (1.0 - mean_a / mean_m), wins, losses, p)};
}

Verdict determinism(SteadyClock::time_point suite_start) {
    const auto logs = scratch("logs");
    const auto a = batch("calibrated", 12, {Mode::Autonomous, Mode::ScriptedManual}, 5, logs);
    const auto b = batch("calibrated", 12, {Mode::Autonomous, Mode::ScriptedManual}, 5);
    const bool same_csv = harness::records_csv(a.records) == harness::records_csv(b.records);
    std::size_t replays = 0;
    std::size_t diverged = 0;
    for (const auto& e : std::filesystem::directory_iterator(logs)) {
        std::ifstream in(e.path());
        const auto res = harness::replay(harness::read_log_lines(in));
        ++replays;
        diverged += res.diverged();
    }
    const double total = std::chrono::duration<double>(SteadyClock::now() - suite_start).count();
    return {same_csv && replays == a.records.size() && diverged == 0 && total < 60.0,
            fmt("records.csv %s; %zu logs replayed, %zu diverged; suite %.1f s", same_csv ? "byte-identical" : "DIFFERS",
                replays, diverged, total)};
}

}  // namespace

int main() {
    const auto start = SteadyClock::now();
    struct Criterion {
        const char* name;
        std::function<Verdict()> run;
    };
    const std::vector<Criterion> criteria{
        {"fsm-safety", fsm_safety},
        {"liveness", liveness},
        {"navigation-convergence", navigation},
        {"render-projection-oracle", render_oracle},
        {"perception-oracle-agreement", perception_agreement},
        {"retraction-arithmetic", retraction},
        {"metrics-fixture", metrics_fixture},
        {"degradation-pathway", degradation},
        {"paired-mode-comparison", paired_modes},
        {"determinism", [start] { return determinism(start); }},
    };
    int failed = 0;
    for (const auto& c : criteria) {
        Verdict v;
        try {
            v = c.run();
        } catch (const std::exception& e) {
            v = {false, std::string("threw: ") + e.what()};
        }
        failed += !v.pass;
        std::cout << (v.pass ? "PASS " : "FAIL ") << c.name << ": " << v.detail << std::endl;
    }
    std::cout << (failed ? "FAILED " : "ALL PASSED ") << criteria.size() - failed << "/" << criteria.size()
              << std::endl;
    return failed ? 1 : 0;
}
