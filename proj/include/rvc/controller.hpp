#pragma once

// Procedure state machine: navigate the tip to a clicked target in the
// microscope view, descend until the B-scan shows contact, then alternate
// puncture strokes and verifications with partial retraction between them.
// The machine only sees percepts and the robot's own pose.

#include <cmath>
#include <optional>
#include <string>
#include <string_view>
#include <utility>
#include <variant>

#include <json.hpp>

#include "rvc/error.hpp"
#include "rvc/geometry.hpp"
#include "rvc/perception.hpp"
#include "rvc/world.hpp"

namespace rvc::control {

using world::MotionCommand;

struct ControllerConfig {
    double stop_dist_px = 3.0;
    double nav_gain_per_s = 2.0;
    double nav_speed_cap_mm_s = 0.5;
    double microscope_scale_mm_per_px = 0.0586;
    int frame_width = 512;
    int frame_height = 512;
    double z_step_mm = 0.010;
    double insertion_speed_mm_s = 3.0;
    double stroke_depth_mm = 0.20;
    double retract_fraction = 0.4;
    double retract_speed_mm_s = 1.0;
    double full_retract_speed_mm_s = 2.0;
    int max_puncture_attempts = 5;
    double max_seek_depth_mm = 2.0;
    double contact_threshold = 0.5;
    double puncture_conf_min = 0.5;
    int reacquire_limit = 50;
    int max_navigation_ticks = 3000;
    double insertion_angle_deg = 70.0;

    void validate() const {
        require(stop_dist_px > 0.0, ErrorCode::InvalidConfig, "stop_dist_px must be positive");
        require(retract_fraction > 0.0 && retract_fraction < 1.0, ErrorCode::InvalidConfig,
                "retract_fraction must lie in (0, 1)");
        require(max_puncture_attempts >= 1, ErrorCode::InvalidConfig, "max_puncture_attempts must be >= 1");
        require(nav_gain_per_s > 0.0 && nav_speed_cap_mm_s > 0.0, ErrorCode::InvalidConfig,
                "navigation gain and cap must be positive");
        require(microscope_scale_mm_per_px > 0.0, ErrorCode::InvalidConfig, "microscope scale must be positive");
        require(frame_width > 0 && frame_height > 0, ErrorCode::InvalidConfig, "frame size must be positive");
        require(z_step_mm > 0.0 && stroke_depth_mm > 0.0, ErrorCode::InvalidConfig,
                "z step and stroke depth must be positive");
        require(insertion_speed_mm_s > 0.0 && retract_speed_mm_s > 0.0 && full_retract_speed_mm_s > 0.0,
                ErrorCode::InvalidConfig, "speeds must be positive");
        require(max_seek_depth_mm > 0.0, ErrorCode::InvalidConfig, "max_seek_depth_mm must be positive");
        require(contact_threshold >= 0.0 && contact_threshold <= 1.0 && puncture_conf_min >= 0.0 &&
                    puncture_conf_min <= 1.0,
                ErrorCode::InvalidConfig, "thresholds must lie in [0, 1]");
        require(reacquire_limit >= 1 && max_navigation_ticks >= 1, ErrorCode::InvalidConfig,
                "tick limits must be >= 1");
        require(insertion_angle_deg > 0.0 && insertion_angle_deg < 90.0, ErrorCode::InvalidConfig,
                "insertion angle must lie in (0, 90)");
    }
};

enum class Phase { Idle, Navigating, ContactSeek, PunctureStroke, VerifyPuncture, Retracting, FullRetract, Done, Aborted };

constexpr std::string_view to_string(Phase p) {
    switch (p) {
        case Phase::Idle: return "Idle";
        case Phase::Navigating: return "Navigating";
        case Phase::ContactSeek: return "ContactSeek";
        case Phase::PunctureStroke: return "PunctureStroke";
        case Phase::VerifyPuncture: return "VerifyPuncture";
        case Phase::Retracting: return "Retracting";
        case Phase::FullRetract: return "FullRetract";
        case Phase::Done: return "Done";
        case Phase::Aborted: return "Aborted";
    }
    return "?";
}

constexpr bool is_terminal(Phase p) { return p == Phase::Done || p == Phase::Aborted; }

enum class PerceptKind { None, Tip, Contact, Puncture };

/// Which percept the phase consumes on its next tick.
constexpr PerceptKind required_percept(Phase p) {
    switch (p) {
        case Phase::Navigating: return PerceptKind::Tip;
        case Phase::ContactSeek: return PerceptKind::Contact;
        case Phase::VerifyPuncture: return PerceptKind::Puncture;
        default: return PerceptKind::None;
    }
}

struct Percepts {
    std::optional<perception::TipDetection> tip;
    std::optional<perception::ContactDecision> contact;
    std::optional<perception::PunctureDecision> puncture;
    std::optional<ErrorCode> failure;  // NoNeedleDetected / NeedleNotInScan from the model the phase needs
};

struct Timers {
    double navigation_s = 0.0;
    double puncture_s = 0.0;
    bool operator==(const Timers&) const = default;
};

struct ControllerState {
    Phase phase = Phase::Idle;
    std::optional<Vec2> target_px;
    std::optional<Pose3> contact_pose;
    std::optional<double> start_z;          // height where navigation ended
    double stroke_depth_mm = 0.0;           // length of the current attempt's stroke
    double depth_beyond_contact_mm = 0.0;   // commanded axial travel past contact
    double stroke_remaining_mm = 0.0;
    double retract_remaining_mm = 0.0;
    int attempts = 0;
    int reacquire_count = 0;
    int navigation_ticks = 0;
    Timers timers;
    bool contact_confirmed = false;
    bool puncture_claimed = false;
    std::string abort_reason;
    double last_retract_mm = 0.0;

    bool operator==(const ControllerState&) const = default;
};

struct StopSignal {
    bool operator==(const StopSignal&) const = default;
};

using NavigationStep = std::variant<world::PlanarVelocity, StopSignal>;

/// Proportional step toward the target, speed min(gain * dist, cap) in image
/// units converted to mm/s.
inline NavigationStep plan_navigation_step(Vec2 tip_px, Vec2 target_px, const ControllerConfig& cfg) {
    const Vec2 d = target_px - tip_px;
    const double dist = norm(d);
    if (dist < cfg.stop_dist_px) return StopSignal{};
    const Vec2 dir = d / dist;
    const double speed = std::min(cfg.nav_gain_per_s * dist * cfg.microscope_scale_mm_per_px, cfg.nav_speed_cap_mm_s);
    return world::PlanarVelocity{dir.x * speed, dir.y * speed};
}

inline ControllerState set_target(ControllerState s, Vec2 target_px, const ControllerConfig& cfg) {
    require(s.phase == Phase::Idle || s.phase == Phase::Navigating, ErrorCode::WrongPhase,
            "targets are accepted only before or during navigation");
    require(std::isfinite(target_px.x) && std::isfinite(target_px.y) && target_px.x >= 0.0 &&
                target_px.y >= 0.0 && target_px.x <= cfg.frame_width - 1 && target_px.y <= cfg.frame_height - 1,
            ErrorCode::InvalidTarget, "target outside the microscope frame");
    s.target_px = target_px;
    s.phase = Phase::Navigating;
    s.navigation_ticks = 0;
    s.timers.navigation_s = 0.0;
    s.reacquire_count = 0;
    return s;
}

inline Timers timers(const ControllerState& s) { return s.timers; }

namespace detail {

inline void check_percepts(Phase phase, const Percepts& p) {
    const PerceptKind need = required_percept(phase);
    const bool tip = p.tip.has_value();
    const bool contact = p.contact.has_value();
    const bool puncture = p.puncture.has_value();
    const int given = int(tip) + int(contact) + int(puncture);
    if (need == PerceptKind::None) {
        require(given == 0 && !p.failure, ErrorCode::WrongPercept,
                std::string("phase ") + std::string(to_string(phase)) + " takes no percept");
        return;
    }
    const bool match = (need == PerceptKind::Tip && tip) || (need == PerceptKind::Contact && contact) ||
                       (need == PerceptKind::Puncture && puncture);
    require((given == 1 && match && !p.failure) || (given == 0 && p.failure.has_value()), ErrorCode::WrongPercept,
            std::string("percept does not match phase ") + std::string(to_string(phase)));
}

inline void abort(ControllerState& s, std::string reason) {
    s.phase = Phase::Aborted;
    s.abort_reason = std::move(reason);
}

}  // namespace detail

/// One control tick. `pose` is the robot's own tip pose from kinematics.
inline std::pair<MotionCommand, ControllerState> tick(ControllerState s, const ControllerConfig& cfg,
                                                      const Percepts& in, const Pose3& pose, double dt) {
    require(std::isfinite(dt) && dt > 0.0, ErrorCode::InvalidArgument, "dt must be positive");
    detail::check_percepts(s.phase, in);
    const Phase phase = s.phase;
    if (phase == Phase::Navigating) {
        s.timers.navigation_s += dt;
        ++s.navigation_ticks;
    } else if (!is_terminal(phase) && phase != Phase::Idle) {
        s.timers.puncture_s += dt;
    }

    if (in.failure) {
        ++s.reacquire_count;
        if (s.reacquire_count >= cfg.reacquire_limit) detail::abort(s, "ReacquireLimit");
        else if (phase == Phase::Navigating && s.navigation_ticks >= cfg.max_navigation_ticks)
            detail::abort(s, "NavigationTimeout");
        return {world::Hold{}, s};
    }
    if (required_percept(phase) != PerceptKind::None) s.reacquire_count = 0;

    const double sin_e = std::sin(deg_to_rad(cfg.insertion_angle_deg));
    switch (phase) {
        case Phase::Idle:
        case Phase::Done:
        case Phase::Aborted: return {world::Hold{}, s};

        case Phase::Navigating: {
            const NavigationStep step = plan_navigation_step(in.tip->tip_px, *s.target_px, cfg);
            if (std::holds_alternative<StopSignal>(step)) {
                s.phase = Phase::ContactSeek;
                s.start_z = pose.z;
                return {world::Hold{}, s};
            }
            if (s.navigation_ticks >= cfg.max_navigation_ticks) {
                detail::abort(s, "NavigationTimeout");
                return {world::Hold{}, s};
            }
            return {std::get<world::PlanarVelocity>(step), s};
        }

        case Phase::ContactSeek: {
            if (in.contact->decision) {
                s.contact_confirmed = true;
                s.contact_pose = pose;
                s.depth_beyond_contact_mm = 0.0;
                s.stroke_depth_mm = cfg.stroke_depth_mm;
                s.stroke_remaining_mm = cfg.stroke_depth_mm;
                s.phase = Phase::PunctureStroke;
                return {world::Hold{}, s};
            }
            if (*s.start_z - pose.z + cfg.z_step_mm > cfg.max_seek_depth_mm + 1e-12) {
                detail::abort(s, "SeekDepthExceeded");
                return {world::Hold{}, s};
            }
            return {world::ZStep{-cfg.z_step_mm}, s};
        }

        case Phase::PunctureStroke: {
            const double travel = std::min(cfg.insertion_speed_mm_s * dt, s.stroke_remaining_mm);
            s.stroke_remaining_mm -= travel;
            s.depth_beyond_contact_mm += travel;
            if (s.stroke_remaining_mm <= 1e-12) {
                s.stroke_remaining_mm = 0.0;
                s.phase = Phase::VerifyPuncture;
            }
            return {world::AxialInsertion{cfg.insertion_speed_mm_s, travel}, s};
        }

        case Phase::VerifyPuncture: {
            ++s.attempts;
            const auto& pd = *in.puncture;
            if (pd.decision && pd.confidence >= cfg.puncture_conf_min) {
                s.puncture_claimed = true;
                s.phase = Phase::FullRetract;
                return {world::Hold{}, s};
            }
            s.retract_remaining_mm = cfg.retract_fraction * s.stroke_depth_mm;
            s.last_retract_mm = s.retract_remaining_mm;
            s.phase = Phase::Retracting;
            return {world::Hold{}, s};
        }

        case Phase::Retracting: {
            const double travel = std::min(cfg.retract_speed_mm_s * dt, s.retract_remaining_mm);
            s.retract_remaining_mm -= travel;
            s.depth_beyond_contact_mm -= travel;
            if (s.retract_remaining_mm <= 1e-12) {
                s.retract_remaining_mm = 0.0;
                if (s.attempts < cfg.max_puncture_attempts) {
                    s.stroke_depth_mm = cfg.stroke_depth_mm;
                    s.stroke_remaining_mm = cfg.stroke_depth_mm;
                    s.phase = Phase::PunctureStroke;
                } else {
                    detail::abort(s, "AttemptsExhausted");
                }
            }
            return {world::AxialInsertion{-cfg.retract_speed_mm_s, travel}, s};
        }

        case Phase::FullRetract: {
            const double remaining = std::max(0.0, (*s.start_z - pose.z) / sin_e);
            const double travel = std::min(cfg.full_retract_speed_mm_s * dt, remaining);
            if (remaining - travel <= 1e-9) s.phase = Phase::Done;
            if (travel <= 0.0) return {world::Hold{}, s};
            return {world::AxialInsertion{-cfg.full_retract_speed_mm_s, travel}, s};
        }
    }
    return {world::Hold{}, s};
}

/// Upper bound on ticks from set_target to a terminal phase. Every tick that
/// consumes a percept may be preceded by up to reacquire_limit - 1 failures.
inline long long tick_bound(const ControllerConfig& cfg, double dt) {
    const long long patience = cfg.reacquire_limit;
    const auto ceil_div = [](double a, double b) { return static_cast<long long>(std::ceil(a / b - 1e-9)); };
    const long long nav = cfg.max_navigation_ticks + 1;
    const long long seek = (ceil_div(cfg.max_seek_depth_mm, cfg.z_step_mm) + 2) * patience;
    const long long stroke = ceil_div(cfg.stroke_depth_mm, cfg.insertion_speed_mm_s * dt);
    const long long retract = ceil_div(cfg.retract_fraction * cfg.stroke_depth_mm, cfg.retract_speed_mm_s * dt);
    const long long per_attempt = stroke + patience + retract;
    const double sin_e = std::sin(deg_to_rad(cfg.insertion_angle_deg));
    const double max_depth = cfg.max_seek_depth_mm / sin_e + cfg.max_puncture_attempts * cfg.stroke_depth_mm;
    const long long full = ceil_div(max_depth, cfg.full_retract_speed_mm_s * dt) + 2;
    return nav + seek + cfg.max_puncture_attempts * per_attempt + full + 1;
}

// ------------------------------------------------------------------- JSON

using nlohmann::json;

NLOHMANN_JSON_SERIALIZE_ENUM(Phase, {{Phase::Idle, "Idle"},
                                     {Phase::Navigating, "Navigating"},
                                     {Phase::ContactSeek, "ContactSeek"},
                                     {Phase::PunctureStroke, "PunctureStroke"},
                                     {Phase::VerifyPuncture, "VerifyPuncture"},
                                     {Phase::Retracting, "Retracting"},
                                     {Phase::FullRetract, "FullRetract"},
                                     {Phase::Done, "Done"},
                                     {Phase::Aborted, "Aborted"}})

inline void to_json(json& j, const Timers& t) {
    j = json{{"navigation_s", t.navigation_s}, {"puncture_s", t.puncture_s}};
}
inline void from_json(const json& j, Timers& t) {
    j.at("navigation_s").get_to(t.navigation_s);
    j.at("puncture_s").get_to(t.puncture_s);
}

inline void to_json(json& j, const ControllerState& s) {
    j = json{{"phase", s.phase},
             {"target_px", s.target_px},
             {"contact_pose", s.contact_pose},
             {"start_z", s.start_z},
             {"stroke_depth_mm", s.stroke_depth_mm},
             {"depth_beyond_contact_mm", s.depth_beyond_contact_mm},
             {"stroke_remaining_mm", s.stroke_remaining_mm},
             {"retract_remaining_mm", s.retract_remaining_mm},
             {"attempts", s.attempts},
             {"reacquire_count", s.reacquire_count},
             {"navigation_ticks", s.navigation_ticks},
             {"timers", s.timers},
             {"contact_confirmed", s.contact_confirmed},
             {"puncture_claimed", s.puncture_claimed},
             {"abort_reason", s.abort_reason},
             {"last_retract_mm", s.last_retract_mm}};
}
inline void from_json(const json& j, ControllerState& s) {
    j.at("phase").get_to(s.phase);
    s.target_px = j.at("target_px").get<std::optional<Vec2>>();
    s.contact_pose = j.at("contact_pose").get<std::optional<Pose3>>();
    s.start_z = j.at("start_z").get<std::optional<double>>();
    j.at("stroke_depth_mm").get_to(s.stroke_depth_mm);
    j.at("depth_beyond_contact_mm").get_to(s.depth_beyond_contact_mm);
    j.at("stroke_remaining_mm").get_to(s.stroke_remaining_mm);
    j.at("retract_remaining_mm").get_to(s.retract_remaining_mm);
    j.at("attempts").get_to(s.attempts);
    j.at("reacquire_count").get_to(s.reacquire_count);
    j.at("navigation_ticks").get_to(s.navigation_ticks);
    j.at("timers").get_to(s.timers);
    j.at("contact_confirmed").get_to(s.contact_confirmed);
    j.at("puncture_claimed").get_to(s.puncture_claimed);
    j.at("abort_reason").get_to(s.abort_reason);
    j.at("last_retract_mm").get_to(s.last_retract_mm);
}

inline void to_json(json& j, const ControllerConfig& c) {
    j = json{{"stop_dist_px", c.stop_dist_px},
             {"nav_gain_per_s", c.nav_gain_per_s},
             {"nav_speed_cap_mm_s", c.nav_speed_cap_mm_s},
             {"microscope_scale_mm_per_px", c.microscope_scale_mm_per_px},
             {"frame_width", c.frame_width},
             {"frame_height", c.frame_height},
             {"z_step_mm", c.z_step_mm},
             {"insertion_speed_mm_s", c.insertion_speed_mm_s},
             {"stroke_depth_mm", c.stroke_depth_mm},
             {"retract_fraction", c.retract_fraction},
             {"retract_speed_mm_s", c.retract_speed_mm_s},
             {"full_retract_speed_mm_s", c.full_retract_speed_mm_s},
             {"max_puncture_attempts", c.max_puncture_attempts},
             {"max_seek_depth_mm", c.max_seek_depth_mm},
             {"contact_threshold", c.contact_threshold},
             {"puncture_conf_min", c.puncture_conf_min},
             {"reacquire_limit", c.reacquire_limit},
             {"max_navigation_ticks", c.max_navigation_ticks},
             {"insertion_angle_deg", c.insertion_angle_deg}};
}
inline void from_json(const json& j, ControllerConfig& c) {
    ControllerConfig d;
    c.stop_dist_px = j.value("stop_dist_px", d.stop_dist_px);
    c.nav_gain_per_s = j.value("nav_gain_per_s", d.nav_gain_per_s);
    c.nav_speed_cap_mm_s = j.value("nav_speed_cap_mm_s", d.nav_speed_cap_mm_s);
    c.microscope_scale_mm_per_px = j.value("microscope_scale_mm_per_px", d.microscope_scale_mm_per_px);
    c.frame_width = j.value("frame_width", d.frame_width);
    c.frame_height = j.value("frame_height", d.frame_height);
    c.z_step_mm = j.value("z_step_mm", d.z_step_mm);
    c.insertion_speed_mm_s = j.value("insertion_speed_mm_s", d.insertion_speed_mm_s);
    c.stroke_depth_mm = j.value("stroke_depth_mm", d.stroke_depth_mm);
    c.retract_fraction = j.value("retract_fraction", d.retract_fraction);
    c.retract_speed_mm_s = j.value("retract_speed_mm_s", d.retract_speed_mm_s);
    c.full_retract_speed_mm_s = j.value("full_retract_speed_mm_s", d.full_retract_speed_mm_s);
    c.max_puncture_attempts = j.value("max_puncture_attempts", d.max_puncture_attempts);
    c.max_seek_depth_mm = j.value("max_seek_depth_mm", d.max_seek_depth_mm);
    c.contact_threshold = j.value("contact_threshold", d.contact_threshold);
    c.puncture_conf_min = j.value("puncture_conf_min", d.puncture_conf_min);
    c.reacquire_limit = j.value("reacquire_limit", d.reacquire_limit);
    c.max_navigation_ticks = j.value("max_navigation_ticks", d.max_navigation_ticks);
    c.insertion_angle_deg = j.value("insertion_angle_deg", d.insertion_angle_deg);
    c.validate();
}

}  // namespace rvc::control
