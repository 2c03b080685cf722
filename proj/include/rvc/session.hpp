#pragma once

// One trial end to end: render the view the active stage needs, corrupt it,
// perceive, decide, move the plant, and log the tick as one NDJSON line.
// Replaying a log re-runs the trial from its header and diffs the lines.

#include <cstdint>
#include <cstdio>
#include <functional>
#include <istream>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include <json.hpp>

#include "rvc/controller.hpp"
#include "rvc/error.hpp"
#include "rvc/imaging.hpp"
#include "rvc/operator.hpp"
#include "rvc/perception.hpp"
#include "rvc/scenario.hpp"
#include "rvc/world.hpp"

namespace rvc::harness {

/// FNV-1a over the bytes, consumed as little-endian 64-bit words with a
/// zero-padded tail.
inline std::uint64_t fnv1a(std::span<const std::uint8_t> bytes, std::uint64_t h = 0xCBF29CE484222325ULL) {
    std::size_t i = 0;
    for (; i + 8 <= bytes.size(); i += 8) {
        std::uint64_t word = 0;
        for (int k = 7; k >= 0; --k) word = (word << 8) | bytes[i + static_cast<std::size_t>(k)];
        h ^= word;
        h *= 0x100000001B3ULL;
    }
    if (i < bytes.size()) {
        std::uint64_t word = 0;
        for (std::size_t k = bytes.size(); k-- > i;) word = (word << 8) | bytes[k];
        h ^= word;
        h *= 0x100000001B3ULL;
    }
    return h;
}

inline std::uint64_t fnv1a(std::string_view s) {
    return fnv1a(std::span<const std::uint8_t>(reinterpret_cast<const std::uint8_t*>(s.data()), s.size()));
}

inline std::string hex64(std::uint64_t v) {
    char buf[17];
    std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(v));
    return buf;
}

/// Seed of trial `trial_id` under a batch master seed; independent of how
/// many trials the batch runs and of the mode.
inline std::uint64_t trial_seed(std::uint64_t master, std::size_t trial_id) {
    return derive_seed(master, 0x747269616C, trial_id);
}

/// Rounds to the microsecond so records survive a CSV round trip exactly.
inline double round_us(double s) { return std::round(s * 1e6) / 1e6; }

enum class Outcome { TP, TN, FP, FN };

constexpr std::string_view to_string(Outcome o) {
    switch (o) {
        case Outcome::TP: return "TP";
        case Outcome::TN: return "TN";
        case Outcome::FP: return "FP";
        case Outcome::FN: return "FN";
    }
    return "?";
}

constexpr Outcome outcome_class(bool claimed, bool truth) {
    if (claimed) return truth ? Outcome::TP : Outcome::FP;
    return truth ? Outcome::FN : Outcome::TN;
}

NLOHMANN_JSON_SERIALIZE_ENUM(Outcome, {{Outcome::TP, "TP"}, {Outcome::TN, "TN"}, {Outcome::FP, "FP"}, {Outcome::FN, "FN"}})

struct TrialRecord {
    std::size_t trial_id = 0;
    Mode mode = Mode::Autonomous;
    std::uint64_t seed = 0;
    double navigation_s = 0.0;
    double puncture_s = 0.0;
    int attempts = 0;
    bool verdict = false;        // controller claims a puncture
    bool ground_truth = false;   // air injection inflated the vein
    Outcome outcome = Outcome::TN;
    std::string abort_reason;
    // Not part of the CSV.
    int navigation_ticks = 0;
    long long ticks = 0;
    double final_tip_error_px = 0.0;  // true tip to target when navigation ended
    world::InjectionReason ground_truth_reason = world::InjectionReason::NoPuncture;

    bool operator==(const TrialRecord&) const = default;
};

inline void to_json(json& j, const TrialRecord& r) {
    j = json{{"trial_id", r.trial_id},
             {"mode", r.mode},
             {"seed", r.seed},
             {"navigation_s", r.navigation_s},
             {"puncture_s", r.puncture_s},
             {"attempts", r.attempts},
             {"verdict", r.verdict ? 1 : 0},
             {"ground_truth", r.ground_truth ? 1 : 0},
             {"outcome_class", r.outcome},
             {"abort_reason", r.abort_reason},
             {"navigation_ticks", r.navigation_ticks},
             {"ticks", r.ticks},
             {"final_tip_error_px", r.final_tip_error_px},
             {"ground_truth_reason", r.ground_truth_reason}};
}

inline void from_json(const json& j, TrialRecord& r) {
    r.trial_id = j.at("trial_id").get<std::size_t>();
    r.mode = j.at("mode").get<Mode>();
    r.seed = j.at("seed").get<std::uint64_t>();
    r.navigation_s = j.at("navigation_s").get<double>();
    r.puncture_s = j.at("puncture_s").get<double>();
    r.attempts = j.at("attempts").get<int>();
    r.verdict = j.at("verdict").get<int>() != 0;
    r.ground_truth = j.at("ground_truth").get<int>() != 0;
    r.outcome = j.at("outcome_class").get<Outcome>();
    r.abort_reason = j.value("abort_reason", std::string{});
    r.navigation_ticks = j.value("navigation_ticks", 0);
    r.ticks = j.value("ticks", 0LL);
    r.final_tip_error_px = j.value("final_tip_error_px", 0.0);
    r.ground_truth_reason = j.value("ground_truth_reason", world::InjectionReason::NoPuncture);
}

/// Per-tick truth kept alongside the log for tests.
struct TickTrace {
    long long k = 0;
    control::Phase phase = control::Phase::Idle;  // phase the tick ran in
    Vec2 true_tip_px;                             // before the tick's motion
    std::optional<Vec2> detected_tip_px;
};

enum class FrameKind { Microscope, BScan };

using FrameSink = std::function<void(long long k, FrameKind kind, const GrayImage& img)>;

class TrialRunner {
public:
    TrialRunner(const Scenario& sc, std::size_t trial_id, std::uint64_t seed, Mode mode,
                std::optional<ArtifactPlan> artifact_override = std::nullopt)
        : setup_(make_trial(sc, trial_id, seed, mode)),
          world_(setup_.world),
          mic_(setup_.microscope),
          bscan_(setup_.bscan),
          overridden_(artifact_override.has_value()) {
        if (artifact_override) {
            artifact_override->microscope.validate();
            artifact_override->bscan.validate();
            setup_.artifacts = *artifact_override;
        }
        if (mode == Mode::Autonomous) {
            ctrl_ = control::set_target(ctrl_, setup_.target_px, setup_.controller);
        } else {
            op_.emplace(setup_.op, setup_.controller, derive_seed(seed, 0x6F70), world_.physics.v_max_mm_s);
            op_->set_target(setup_.target_px);
        }
        json h{{"type", "header"},
               {"scenario", sc},
               {"trial_id", trial_id},
               {"seed", seed},
               {"mode", mode},
               {"artifacts", setup_.artifacts},
               {"override", overridden_}};
        log_.push_back(h.dump());
    }

    const TrialSetup& setup() const { return setup_; }
    const world::WorldState& world() const { return world_; }
    const control::ControllerState& controller() const { return op_ ? op_->state() : ctrl_; }
    control::Phase phase() const { return controller().phase; }
    bool finished() const { return control::is_terminal(phase()); }
    long long ticks() const { return tick_; }
    const std::vector<std::string>& log() const { return log_; }
    const std::vector<TickTrace>& trace() const { return trace_; }
    const std::optional<world::VerdictGroundTruth>& ground_truth() const { return gt_; }
    void set_frame_sink(FrameSink sink) { sink_ = std::move(sink); }

    /// True tip position in microscope pixels.
    Vec2 true_tip_px() const { return xy_to_px(setup_.microscope, world_.needle.tip.xy()); }

    void step() {
        require(!finished(), ErrorCode::WrongPhase, "trial already finished");
        require(tick_ < setup_.tick_budget, ErrorCode::TickBudgetExceeded,
                "trial " + std::to_string(setup_.trial_id) + " exceeded " + std::to_string(setup_.tick_budget) +
                    " ticks");
        const double dt = setup_.dt;
        const control::Phase before = phase();
        const control::PerceptKind need = op_ ? op_->wanted(dt) : control::required_percept(before);

        TickTrace tr{tick_, before, true_tip_px(), std::nullopt};
        control::Percepts in;
        json pj = nullptr;
        std::string digest;
        if (need == control::PerceptKind::Tip) {
            imaging::MicroscopeFrame f = mic_.render(world_);
            f.image = apply_artifacts(f.image, microscope_artifacts(before), f.t);
            digest = hex64(fnv1a(f.image.pixels()));
            if (sink_) sink_(tick_, FrameKind::Microscope, f.image);
            try {
                perception::TipDetectorConfig tc;
                tc.azimuth = world_.needle.azimuth();
                in.tip = perception::detect_tip(f, tc);
                tr.detected_tip_px = in.tip->tip_px;
                pj = json{{"tip", *in.tip}};
            } catch (const Error& e) {
                if (e.code() != ErrorCode::NoNeedleDetected) throw;
                in.failure = e.code();
            }
        } else if (need != control::PerceptKind::None) {
            imaging::BScanFrame f = bscan_.render(world_, setup_.scanline);
            f.image = apply_artifacts(f.image, bscan_artifacts(f), f.t);
            digest = hex64(fnv1a(f.image.pixels()));
            if (sink_) sink_(tick_, FrameKind::BScan, f.image);
            try {
                if (need == control::PerceptKind::Contact) {
                    in.contact = perception::classify_contact(f, setup_.controller.contact_threshold);
                    pj = json{{"contact", *in.contact}};
                } else {
                    in.puncture = perception::detect_puncture(f, setup_.controller.puncture_conf_min);
                    pj = json{{"puncture", *in.puncture}};
                }
            } catch (const Error& e) {
                if (e.code() != ErrorCode::NeedleNotInScan) throw;
                in.failure = e.code();
            }
        }
        if (in.failure) pj = json{{"failure", std::string(to_string(*in.failure))}};

        world::MotionCommand cmd;
        if (op_) {
            cmd = op_->tick(in, world_.needle.tip, dt);
        } else {
            auto [c, next] = control::tick(ctrl_, setup_.controller, in, world_.needle.tip, dt);
            cmd = c;
            ctrl_ = next;
        }
        world_ = world::step(world_, cmd, dt);
        const control::Phase after = phase();
        if (before == control::Phase::Navigating && after != control::Phase::Navigating)
            nav_end_error_px_ = norm(true_tip_px() - setup_.target_px);
        if (!gt_ && (after == control::Phase::FullRetract || after == control::Phase::Aborted)) {
            auto [v, w] = world::inject_air(world_);
            gt_ = v;
            world_ = w;
        }

        json line{{"k", tick_},
                  {"t", world_.t},
                  {"phase", before},
                  {"next", after},
                  {"percept", pj},
                  {"frame", digest},
                  {"cmd", cmd},
                  {"tip", world_.needle.tip},
                  {"tissue", world_.tissue.phase}};
        log_.push_back(line.dump());
        trace_.push_back(tr);
        ++tick_;
        if (finished()) log_.push_back(json{{"type", "end"}, {"ticks", tick_}, {"record", record()}}.dump());
    }

    TrialRecord run() {
        while (!finished()) step();
        return record();
    }

    TrialRecord record() const {
        const control::ControllerState& s = controller();
        TrialRecord r;
        r.trial_id = setup_.trial_id;
        r.mode = setup_.mode;
        r.seed = setup_.seed;
        r.navigation_s = round_us(s.timers.navigation_s);
        r.puncture_s = round_us(s.timers.puncture_s);
        r.attempts = s.attempts;
        r.verdict = s.puncture_claimed;
        r.ground_truth = gt_ && gt_->success;
        r.outcome = outcome_class(r.verdict, r.ground_truth);
        r.abort_reason = s.abort_reason;
        r.navigation_ticks = s.navigation_ticks;
        r.ticks = tick_;
        r.final_tip_error_px = round_us(nav_end_error_px_.value_or(norm(true_tip_px() - setup_.target_px)));
        r.ground_truth_reason = gt_ ? gt_->reason : world::InjectionReason::NoPuncture;
        return r;
    }

private:
    imaging::ArtifactConfig microscope_artifacts(control::Phase p) {
        imaging::ArtifactConfig a = setup_.artifacts.microscope;
        const auto& occ = setup_.artifacts.microscope_occluder;
        if (occ && p == control::Phase::Navigating) {
            const int k = controller().navigation_ticks;
            if (k >= occ->start_tick && k < occ->start_tick + occ->duration_ticks) {
                // Debris drifts in over the tip and stays put.
                if (!occluder_anchor_) occluder_anchor_ = true_tip_px();
                const double h = occ->half_size_px;
                a.occlusion = imaging::Occlusion{
                    {occluder_anchor_->x - h, occluder_anchor_->y - h, 2 * h, 2 * h}, imaging::palette::background, 1.0};
            }
        }
        return a;
    }

    imaging::ArtifactConfig bscan_artifacts(const imaging::BScanFrame& f) const {
        imaging::ArtifactConfig a = setup_.artifacts.bscan;
        const auto& occ = setup_.artifacts.bscan_occluder;
        if (!occ) return a;
        const Vec2 tip = imaging::mm_to_px(f, imaging::project_to_slice(f.scanline, world_.needle.tip));
        const double ridge = (f.z_top - world_.vein.depth_z) / f.scale_mm_per_px;
        const double col = a.hflip ? f.width() - 1 - tip.x : tip.x;
        imaging::Occlusion o;
        o.alpha = occ->alpha;
        if (occ->kind == OccluderKind::BrightMembrane) {
            o.rect = {col - 14.5, ridge - 1.5, 29.0, 4.0};
            o.fill = imaging::palette::wall;
        } else {
            const double bottom = std::max(ridge, tip.y) + 3.5;
            const double u0 = occ->side > 0 ? col + 4.5 : col - 14.5;
            o.rect = {u0, ridge - 4.5, 10.0, bottom - (ridge - 4.5)};
            o.fill = imaging::palette::shadow;
        }
        a.occlusion = o;
        return a;
    }

    TrialSetup setup_;
    world::WorldState world_;
    imaging::MicroscopeRenderer mic_;
    imaging::BScanRenderer bscan_;
    bool overridden_ = false;
    control::ControllerState ctrl_;
    std::optional<ScriptedOperator> op_;
    long long tick_ = 0;
    std::vector<std::string> log_;
    std::vector<TickTrace> trace_;
    std::optional<world::VerdictGroundTruth> gt_;
    std::optional<double> nav_end_error_px_;
    std::optional<Vec2> occluder_anchor_;
    FrameSink sink_;
};

inline TrialRecord run_trial(const Scenario& sc, Mode mode, std::size_t trial_id, std::uint64_t seed) {
    TrialRunner r(sc, trial_id, seed, mode);
    return r.run();
}

// ----------------------------------------------------------------- replay

struct ReplayResult {
    TrialRecord record;
    std::vector<std::string> lines;
    std::vector<std::size_t> diff_lines;  // indices where the replay differs
    bool diverged() const { return !diff_lines.empty(); }
};

inline std::vector<std::string> read_log_lines(std::istream& in) {
    std::vector<std::string> lines;
    std::string line;
    while (std::getline(in, line))
        if (!line.empty()) lines.push_back(line);
    return lines;
}

/// Re-runs the trial described by a log's header and compares line by line.
/// `artifact_override` swaps the imaging corruption; any resulting change
/// shows up as divergence.
inline ReplayResult replay(const std::vector<std::string>& lines,
                           const std::optional<ArtifactPlan>& artifact_override = std::nullopt,
                           const FrameSink& sink = {}) {
    require(lines.size() >= 2, ErrorCode::LogCorrupt, "log has no header or no end record");
    json header;
    json end;
    Scenario sc;
    std::size_t trial_id = 0;
    std::uint64_t seed = 0;
    Mode mode = Mode::Autonomous;
    std::optional<ArtifactPlan> logged_override;
    try {
        header = json::parse(lines.front());
        end = json::parse(lines.back());
        require(header.at("type") == "header", ErrorCode::LogCorrupt, "first line is not a header");
        require(end.at("type") == "end", ErrorCode::LogCorrupt, "log is truncated: no end record");
        require(end.at("ticks").get<std::size_t>() + 2 == lines.size(), ErrorCode::LogCorrupt,
                "tick count does not match the number of lines");
        for (std::size_t i = 1; i + 1 < lines.size(); ++i) {
            const json t = json::parse(lines[i]);
            require(t.at("k").get<std::size_t>() + 1 == i, ErrorCode::LogCorrupt,
                    "tick lines are not consecutive at line " + std::to_string(i + 1));
        }
        sc = header.at("scenario").get<Scenario>();
        trial_id = header.at("trial_id").get<std::size_t>();
        seed = header.at("seed").get<std::uint64_t>();
        mode = header.at("mode").get<Mode>();
        if (header.value("override", false)) logged_override = header.at("artifacts").get<ArtifactPlan>();
    } catch (const json::exception& e) {
        throw Error(ErrorCode::LogCorrupt, e.what());
    }

    TrialRunner runner(sc, trial_id, seed, mode, artifact_override ? artifact_override : logged_override);
    if (sink) runner.set_frame_sink(sink);
    ReplayResult out;
    out.record = runner.run();
    out.lines = runner.log();
    const std::size_t n = std::max(lines.size(), out.lines.size());
    for (std::size_t i = 0; i < n; ++i) {
        if (i >= lines.size() || i >= out.lines.size() || lines[i] != out.lines[i]) out.diff_lines.push_back(i);
    }
    return out;
}

}  // namespace rvc::harness
