#pragma once

// Scenario files and their expansion into concrete per-trial setups: vein
// placement, needle start, and the imaging corruption drawn for the trial.

#include <cmath>
#include <cstdint>
#include <fstream>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include <json.hpp>

#include "rvc/controller.hpp"
#include "rvc/error.hpp"
#include "rvc/imaging.hpp"
#include "rvc/operator.hpp"
#include "rvc/random.hpp"
#include "rvc/world.hpp"

namespace rvc::harness {

using nlohmann::json;

enum class Mode { Autonomous, ScriptedManual };

constexpr std::string_view to_string(Mode m) { return m == Mode::Autonomous ? "auto" : "scripted-manual"; }

NLOHMANN_JSON_SERIALIZE_ENUM(Mode, {{Mode::Autonomous, "auto"}, {Mode::ScriptedManual, "scripted-manual"}})

/// How imaging corruption is drawn per trial.
enum class ArtifactProfile { None, Fixed, Calibrated, Maxed };

NLOHMANN_JSON_SERIALIZE_ENUM(ArtifactProfile, {{ArtifactProfile::None, "none"},
                                               {ArtifactProfile::Fixed, "fixed"},
                                               {ArtifactProfile::Calibrated, "calibrated"},
                                               {ArtifactProfile::Maxed, "maxed"}})

/// A B-scan occluder that follows the needle. Bright membranes lie across
/// the wall on both sides of the tip and can hide a rupture; dark vessels
/// cover the wall on one side and can fake one.
enum class OccluderKind { BrightMembrane, DarkVessel };

NLOHMANN_JSON_SERIALIZE_ENUM(OccluderKind, {{OccluderKind::BrightMembrane, "bright_membrane"},
                                            {OccluderKind::DarkVessel, "dark_vessel"}})

struct BScanOccluder {
    OccluderKind kind = OccluderKind::BrightMembrane;
    int side = 1;  // dark vessels: which side of the tip
    double alpha = 1.0;
    bool operator==(const BScanOccluder&) const = default;
};

/// Microscope occlusion over the tip for a window of navigation ticks.
struct MicroscopeOccluder {
    int start_tick = 0;
    int duration_ticks = 0;
    double half_size_px = 12.0;
    bool operator==(const MicroscopeOccluder&) const = default;
};

/// Everything drawn at random for one trial's imaging.
struct ArtifactPlan {
    imaging::ArtifactConfig microscope;
    imaging::ArtifactConfig bscan;
    std::optional<BScanOccluder> bscan_occluder;
    std::optional<MicroscopeOccluder> microscope_occluder;
    bool operator==(const ArtifactPlan&) const = default;
};

struct Range {
    double lo = 0.0;
    double hi = 0.0;
    double draw(Rng& rng) const { return hi > lo ? rng.uniform(lo, hi) : lo; }
    bool operator==(const Range&) const = default;
};

struct Randomization {
    Range start_offset_mm{1.0, 2.5};
    Range start_height_mm{0.25, 0.45};
    double vein_shift_mm = 1.0;
    double vein_angle_deg = 10.0;
    Range max_deflection_mm{0.15, 0.15};
    std::vector<std::string> presets{"embryo"};
    ArtifactProfile artifacts = ArtifactProfile::None;
    double bscan_occlusion_probability = 0.3;
    double microscope_occlusion_probability = 0.15;
};

struct Scenario {
    std::string name = "default";
    double dt = 0.1;
    std::uint64_t seed = 1;
    world::VeinModel vein;
    world::NeedleModel needle;
    world::PhysicsConfig physics;
    Vec2 target_xy;
    imaging::MicroscopeConfig microscope;
    imaging::BScanConfig bscan;
    control::ControllerConfig controller;
    OperatorModel op;
    ArtifactPlan artifacts;  // used when randomize.artifacts == fixed
    std::optional<Randomization> randomize;
    std::optional<long long> tick_budget;

    void validate() const {
        try {
            require(dt > 0.0 && std::isfinite(dt), ErrorCode::InvalidConfig, "dt must be positive");
            vein.validate();
            needle.validate();
            physics.validate();
            microscope.validate();
            bscan.validate();
            controller.validate();
            op.validate();
            artifacts.microscope.validate();
            artifacts.bscan.validate();
            require(controller.insertion_speed_mm_s <= physics.v_max_mm_s, ErrorCode::InvalidConfig,
                    "insertion speed exceeds v_max");
            require(needle.tip.z > vein.depth_z, ErrorCode::InvalidConfig, "needle must start above the vein");
            if (randomize) {
                require(!randomize->presets.empty(), ErrorCode::InvalidConfig, "randomize.presets is empty");
                for (const auto& p : randomize->presets) (void)world::VeinModel::preset(p);
                require(randomize->start_height_mm.lo > 0.0, ErrorCode::InvalidConfig, "start height must be > 0");
            }
        } catch (const Error& e) {
            throw Error(ErrorCode::ScenarioInvalid, e.what());
        }
    }
};

/// A fully determined trial: world, target, imaging and corruption.
struct TrialSetup {
    std::size_t trial_id = 0;
    std::uint64_t seed = 0;
    Mode mode = Mode::Autonomous;
    double dt = 0.1;
    world::WorldState world;
    Vec2 target_px;
    imaging::Scanline scanline;
    imaging::MicroscopeConfig microscope;
    imaging::BScanConfig bscan;
    control::ControllerConfig controller;
    OperatorModel op;
    ArtifactPlan artifacts;
    long long tick_budget = 0;
};

inline Vec2 xy_to_px(const imaging::MicroscopeConfig& m, Vec2 xy) { return (xy - m.origin) / m.scale_mm_per_px; }

namespace detail {

inline ArtifactPlan draw_artifacts(ArtifactProfile profile, const ArtifactPlan& fixed, Rng& rng,
                                   const Randomization& r, std::uint64_t seed) {
    ArtifactPlan plan;
    switch (profile) {
        case ArtifactProfile::None: break;
        case ArtifactProfile::Fixed: plan = fixed; break;
        case ArtifactProfile::Calibrated:
        case ArtifactProfile::Maxed: {
            const bool maxed = profile == ArtifactProfile::Maxed;
            imaging::ArtifactConfig a;
            if (maxed) {
                a.brightness_pct = rng.bernoulli(0.5) ? 15.0 : -15.0;
                a.exposure_pct = rng.bernoulli(0.5) ? 10.0 : -10.0;
                a.noise_frac = 0.001;
            } else {
                a.brightness_pct = rng.uniform(-15.0, 15.0);
                a.exposure_pct = rng.uniform(-10.0, 10.0);
                a.noise_frac = rng.uniform(0.0, 0.001);
            }
            plan.microscope = a;
            plan.bscan = a;
            plan.bscan.hflip = rng.bernoulli(0.5);
            plan.microscope.seed = derive_seed(seed, 1);
            plan.bscan.seed = derive_seed(seed, 2);
            if (maxed || rng.bernoulli(r.bscan_occlusion_probability)) {
                BScanOccluder o;
                o.kind = rng.bernoulli(0.5) ? OccluderKind::BrightMembrane : OccluderKind::DarkVessel;
                o.side = rng.bernoulli(0.5) ? 1 : -1;
                o.alpha = maxed ? 1.0 : rng.uniform(0.6, 1.0);
                plan.bscan_occluder = o;
            }
            if (maxed || rng.bernoulli(r.microscope_occlusion_probability)) {
                MicroscopeOccluder o;
                o.start_tick = int(rng.below(10));
                o.duration_ticks = maxed ? 40 : 10 + int(rng.below(30));
                plan.microscope_occluder = o;
            }
            break;
        }
    }
    return plan;
}

}  // namespace detail

/// Expands a scenario into trial `trial_id`. The world and imaging draws
/// depend only on (trial seed), never on the mode, so paired runs share
/// them.
inline TrialSetup make_trial(const Scenario& sc, std::size_t trial_id, std::uint64_t trial_seed, Mode mode) {
    sc.validate();
    TrialSetup t;
    t.trial_id = trial_id;
    t.seed = trial_seed;
    t.mode = mode;
    t.dt = sc.dt;
    t.microscope = sc.microscope;
    t.bscan = sc.bscan;
    t.controller = sc.controller;
    t.controller.microscope_scale_mm_per_px = sc.microscope.scale_mm_per_px;
    t.controller.frame_width = sc.microscope.width;
    t.controller.frame_height = sc.microscope.height;
    t.op = sc.op;

    world::VeinModel vein = sc.vein;
    world::NeedleModel needle = sc.needle;
    Vec2 target = sc.target_xy;
    if (sc.randomize) {
        const Randomization& r = *sc.randomize;
        Rng rng(derive_seed(trial_seed, 0x7363656E));
        const std::string& preset = r.presets[rng.below(r.presets.size())];
        const world::VeinModel base = world::VeinModel::preset(preset);
        vein.diameter_mm = base.diameter_mm;
        const double ang = deg_to_rad(rng.uniform(-r.vein_angle_deg, r.vein_angle_deg));
        vein.axis.direction = {std::cos(ang), std::sin(ang)};
        vein.axis.point = sc.target_xy + Vec2{rng.uniform(-1.0, 1.0), rng.uniform(-1.0, 1.0)} * r.vein_shift_mm;
        vein.max_deflection_mm = r.max_deflection_mm.draw(rng);
        target = vein.axis.point;
        // Start behind the target along the vein, offset sideways a little.
        const double dist = r.start_offset_mm.draw(rng);
        const double side = deg_to_rad(rng.uniform(-60.0, 60.0));
        const Vec2 back = vein.unit_direction() * -1.0;
        const Vec2 off{back.x * std::cos(side) - back.y * std::sin(side), back.x * std::sin(side) + back.y * std::cos(side)};
        const Vec2 start = target + off * dist;
        needle.tip = {start.x, start.y, vein.depth_z + r.start_height_mm.draw(rng)};
        needle.azimuth_deg = std::atan2(vein.axis.direction.y, vein.axis.direction.x) * 180.0 / std::numbers::pi;
        t.artifacts = detail::draw_artifacts(r.artifacts, sc.artifacts, rng, r, derive_seed(trial_seed, 0x61727466));
    } else {
        t.artifacts = sc.artifacts;
    }
    t.world = world::make_world(needle, vein, sc.physics, derive_seed(trial_seed, 0x776F726C64));
    t.target_px = xy_to_px(sc.microscope, target);
    t.scanline = sc.bscan.scanline ? *sc.bscan.scanline : imaging::default_scanline(vein, target);
    t.controller.validate();
    t.tick_budget = sc.tick_budget ? *sc.tick_budget : control::tick_bound(t.controller, t.dt) + 64;
    return t;
}

// ------------------------------------------------------------------- JSON

inline void to_json(json& j, const Range& r) { j = json::array({r.lo, r.hi}); }
inline void from_json(const json& j, Range& r) {
    if (j.is_number()) {
        r.lo = r.hi = j.get<double>();
    } else {
        r.lo = j.at(0).get<double>();
        r.hi = j.at(1).get<double>();
    }
    require(r.lo <= r.hi, ErrorCode::ScenarioInvalid, "range lower bound exceeds upper bound");
}

inline void to_json(json& j, const BScanOccluder& o) {
    j = json{{"kind", o.kind}, {"side", o.side}, {"alpha", o.alpha}};
}
inline void from_json(const json& j, BScanOccluder& o) {
    o.kind = j.value("kind", OccluderKind::BrightMembrane);
    o.side = j.value("side", 1);
    o.alpha = j.value("alpha", 1.0);
}
inline void to_json(json& j, const MicroscopeOccluder& o) {
    j = json{{"start_tick", o.start_tick}, {"duration_ticks", o.duration_ticks}, {"half_size_px", o.half_size_px}};
}
inline void from_json(const json& j, MicroscopeOccluder& o) {
    o.start_tick = j.value("start_tick", 0);
    o.duration_ticks = j.value("duration_ticks", 0);
    o.half_size_px = j.value("half_size_px", 12.0);
}

inline void to_json(json& j, const ArtifactPlan& p) {
    j = json{{"microscope", p.microscope},
             {"bscan", p.bscan},
             {"bscan_occluder", p.bscan_occluder},
             {"microscope_occluder", p.microscope_occluder}};
}
inline void from_json(const json& j, ArtifactPlan& p) {
    p.microscope = j.value("microscope", imaging::ArtifactConfig{});
    p.bscan = j.value("bscan", imaging::ArtifactConfig{});
    p.bscan_occluder = j.value("bscan_occluder", std::optional<BScanOccluder>{});
    p.microscope_occluder = j.value("microscope_occluder", std::optional<MicroscopeOccluder>{});
}

inline void to_json(json& j, const Randomization& r) {
    j = json{{"start_offset_mm", r.start_offset_mm},
             {"start_height_mm", r.start_height_mm},
             {"vein_shift_mm", r.vein_shift_mm},
             {"vein_angle_deg", r.vein_angle_deg},
             {"max_deflection_mm", r.max_deflection_mm},
             {"presets", r.presets},
             {"artifacts", r.artifacts},
             {"bscan_occlusion_probability", r.bscan_occlusion_probability},
             {"microscope_occlusion_probability", r.microscope_occlusion_probability}};
}
inline void from_json(const json& j, Randomization& r) {
    Randomization d;
    r.start_offset_mm = j.value("start_offset_mm", d.start_offset_mm);
    r.start_height_mm = j.value("start_height_mm", d.start_height_mm);
    r.vein_shift_mm = j.value("vein_shift_mm", d.vein_shift_mm);
    r.vein_angle_deg = j.value("vein_angle_deg", d.vein_angle_deg);
    r.max_deflection_mm = j.value("max_deflection_mm", d.max_deflection_mm);
    r.presets = j.value("presets", d.presets);
    r.artifacts = j.value("artifacts", d.artifacts);
    r.bscan_occlusion_probability = j.value("bscan_occlusion_probability", d.bscan_occlusion_probability);
    r.microscope_occlusion_probability =
        j.value("microscope_occlusion_probability", d.microscope_occlusion_probability);
}

inline void to_json(json& j, const Scenario& s) {
    j = json{{"name", s.name},
             {"dt", s.dt},
             {"seed", s.seed},
             {"vein", s.vein},
             {"needle", s.needle},
             {"physics", s.physics},
             {"target_xy", s.target_xy},
             {"microscope", s.microscope},
             {"bscan", s.bscan},
             {"controller", s.controller},
             {"operator", s.op},
             {"artifacts", s.artifacts},
             {"randomize", s.randomize},
             {"tick_budget", s.tick_budget}};
}

inline void from_json(const json& j, Scenario& s) {
    Scenario d;
    s.name = j.value("name", d.name);
    s.dt = j.value("dt", d.dt);
    s.seed = j.value("seed", d.seed);
    s.vein = j.value("vein", d.vein);
    s.needle = j.value("needle", d.needle);
    s.physics = j.value("physics", d.physics);
    s.target_xy = j.value("target_xy", d.target_xy);
    s.microscope = j.value("microscope", d.microscope);
    s.bscan = j.value("bscan", d.bscan);
    s.controller = j.value("controller", d.controller);
    s.op = j.value("operator", d.op);
    s.artifacts = j.value("artifacts", d.artifacts);
    s.randomize = j.value("randomize", std::optional<Randomization>{});
    s.tick_budget = j.value("tick_budget", std::optional<long long>{});
}

inline Scenario parse_scenario(const std::string& text) {
    try {
        Scenario s = json::parse(text).get<Scenario>();
        s.validate();
        return s;
    } catch (const Error& e) {
        if (e.code() == ErrorCode::ScenarioInvalid) throw;
        throw Error(ErrorCode::ScenarioInvalid, e.what());
    } catch (const json::exception& e) {
        throw Error(ErrorCode::ScenarioInvalid, e.what());
    }
}

inline Scenario load_scenario(const std::string& path) {
    std::ifstream in(path);
    require(static_cast<bool>(in), ErrorCode::ScenarioInvalid, "cannot open scenario " + path);
    std::stringstream ss;
    ss << in.rdbuf();
    return parse_scenario(ss.str());
}

}  // namespace rvc::harness
