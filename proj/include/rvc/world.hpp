#pragma once

// Ground-truth plant: needle kinematics, a straight vein with an elastic top
// wall, and the tissue interaction phase. Everything here is a value type;
// step() returns a new state and never mutates its input.

#include <cmath>
#include <cstdint>
#include <limits>
#include <optional>
#include <string>
#include <string_view>
#include <type_traits>
#include <variant>

#include <json.hpp>

#include "rvc/error.hpp"
#include "rvc/geometry.hpp"

namespace rvc::world {

struct NeedleModel {
    Pose3 tip;
    double insertion_angle_deg = 70.0;  // measured from the vein plane
    double azimuth_deg = 0.0;           // XOY heading the needle advances along
    double tip_diameter_um = 100.0;
    double shaft_length_mm = 10.0;

    Vec2 azimuth() const {
        const double a = deg_to_rad(azimuth_deg);
        return {std::cos(a), std::sin(a)};
    }

    /// Unit vector of forward insertion: along the azimuth and downward.
    Pose3 insertion_axis() const {
        const double e = deg_to_rad(insertion_angle_deg);
        const Vec2 az = azimuth();
        return {az.x * std::cos(e), az.y * std::cos(e), -std::sin(e)};
    }

    void validate() const {
        require(tip.finite(), ErrorCode::InvalidConfig, "needle tip must be finite");
        require(insertion_angle_deg > 0.0 && insertion_angle_deg < 90.0, ErrorCode::InvalidConfig,
                "insertion angle must lie in (0, 90) degrees");
        require(tip_diameter_um > 0.0, ErrorCode::InvalidConfig, "tip diameter must be positive");
        require(shaft_length_mm > 0.0, ErrorCode::InvalidConfig, "shaft length must be positive");
        require(std::isfinite(azimuth_deg), ErrorCode::InvalidConfig, "azimuth must be finite");
    }
};

struct VeinAxis {
    Vec2 point;
    Vec2 direction{1.0, 0.0};
};

/// Straight vein with a flat-walled lumen: the top wall surface sits at
/// depth_z, the far wall at depth_z - diameter_mm, and the lumen spans
/// |lateral offset| <= diameter/2 across the axis.
struct VeinModel {
    VeinAxis axis;
    double depth_z = 0.0;
    double diameter_mm = 1.27;
    double wall_thickness_mm = 0.07;
    double max_deflection_mm = 0.15;
    double puncture_velocity_mm_s = 2.0;

    static VeinModel preset(std::string_view name) {
        VeinModel v;
        if (name == "embryo") {
            v.diameter_mm = 1.27;
        } else if (name == "target") {
            v.diameter_mm = 0.35;
        } else {
            throw Error(ErrorCode::InvalidConfig, "unknown vein preset '" + std::string(name) + "'");
        }
        return v;
    }

    Vec2 unit_direction() const { return normalized(axis.direction); }

    /// Signed perpendicular distance from the axis line.
    double lateral_offset(Vec2 p) const { return cross(unit_direction(), p - axis.point); }

    double half_width() const { return 0.5 * diameter_mm; }
    bool in_footprint(Vec2 p) const { return std::abs(lateral_offset(p)) <= half_width(); }
    double lumen_top() const { return depth_z - wall_thickness_mm; }
    double far_wall() const { return depth_z - diameter_mm; }

    void validate() const {
        require(std::isfinite(depth_z), ErrorCode::InvalidConfig, "vein depth must be finite");
        require(norm(axis.direction) > 0.0, ErrorCode::InvalidConfig, "vein axis direction must be nonzero");
        require(diameter_mm > 0.0, ErrorCode::InvalidConfig, "vein diameter must be positive");
        require(wall_thickness_mm > 0.0, ErrorCode::InvalidConfig, "wall thickness must be positive");
        require(wall_thickness_mm < diameter_mm, ErrorCode::InvalidConfig, "wall thicker than the vein");
        require(max_deflection_mm >= 0.0, ErrorCode::InvalidConfig, "max deflection must be >= 0");
        require(puncture_velocity_mm_s > 0.0, ErrorCode::InvalidConfig, "puncture velocity must be positive");
    }
};

enum class TissuePhase { Free, Contact, Deformed, Punctured, DoublePunctured };

constexpr std::string_view to_string(TissuePhase p) {
    switch (p) {
        case TissuePhase::Free: return "Free";
        case TissuePhase::Contact: return "Contact";
        case TissuePhase::Deformed: return "Deformed";
        case TissuePhase::Punctured: return "Punctured";
        case TissuePhase::DoublePunctured: return "DoublePunctured";
    }
    return "?";
}

constexpr bool wall_ruptured(TissuePhase p) {
    return p == TissuePhase::Punctured || p == TissuePhase::DoublePunctured;
}

struct TissueState {
    TissuePhase phase = TissuePhase::Free;
    double deflection_mm = 0.0;
    /// Euclidean distance of the tip from the first-contact pose.
    double depth_beyond_contact_mm = 0.0;
    std::optional<Pose3> contact_pose;
    std::optional<Vec2> top_rupture_xy;
    std::optional<Vec2> bottom_rupture_xy;

    bool operator==(const TissueState&) const = default;
};

struct PhysicsConfig {
    double contact_tolerance_mm = 0.005;
    double v_max_mm_s = 5.0;
    double z_step_cap_mm = 0.5;
    Pose3 workspace_center;
    double workspace_half_extent_mm = 10.0;

    void validate() const {
        require(contact_tolerance_mm >= 0.0, ErrorCode::InvalidConfig, "contact tolerance must be >= 0");
        require(v_max_mm_s > 0.0, ErrorCode::InvalidConfig, "v_max must be positive");
        require(z_step_cap_mm > 0.0, ErrorCode::InvalidConfig, "z step cap must be positive");
        require(workspace_half_extent_mm > 0.0, ErrorCode::InvalidConfig, "workspace must be nonempty");
    }
};

struct WorldState {
    double t = 0.0;
    NeedleModel needle;
    VeinModel vein;
    TissueState tissue;
    PhysicsConfig physics;
    Pose3 prev_tip;
    double tip_speed_mm_s = 0.0;
    bool air_injected = false;
    std::uint64_t rng_seed = 0;

    void validate() const {
        needle.validate();
        vein.validate();
        physics.validate();
        require(std::isfinite(t) && t >= 0.0, ErrorCode::InvalidConfig, "time must be finite and >= 0");
    }
};


// ---------------------------------------------------------------- commands

struct Hold {
    bool operator==(const Hold&) const = default;
};

struct PlanarVelocity {
    double vx = 0.0;  // mm/s
    double vy = 0.0;
    bool operator==(const PlanarVelocity&) const = default;
};

/// Motion along the needle's own axis; positive speed inserts, negative
/// retracts. The tip moves at |speed| for the whole tick unless the travel
/// limit is reached first.
struct AxialInsertion {
    double speed = 0.0;  // mm/s
    std::optional<double> travel_limit_mm;
    bool operator==(const AxialInsertion&) const = default;
};

struct ZStep {
    double dz = 0.0;  // mm, applied within one tick
    bool operator==(const ZStep&) const = default;
};

using MotionCommand = std::variant<Hold, PlanarVelocity, AxialInsertion, ZStep>;

inline std::string_view command_name(const MotionCommand& cmd) {
    return std::visit(
        [](const auto& c) -> std::string_view {
            using T = std::decay_t<decltype(c)>;
            if constexpr (std::is_same_v<T, Hold>) return "Hold";
            else if constexpr (std::is_same_v<T, PlanarVelocity>) return "PlanarVelocity";
            else if constexpr (std::is_same_v<T, AxialInsertion>) return "AxialInsertion";
            else return "ZStep";
        },
        cmd);
}

inline void check_command(const MotionCommand& cmd, const PhysicsConfig& phys) {
    std::visit(
        [&](const auto& c) {
            using T = std::decay_t<decltype(c)>;
            if constexpr (std::is_same_v<T, PlanarVelocity>) {
                require(std::isfinite(c.vx) && std::isfinite(c.vy), ErrorCode::CommandOutOfBounds,
                        "planar velocity must be finite");
                require(std::hypot(c.vx, c.vy) <= phys.v_max_mm_s + 1e-12, ErrorCode::CommandOutOfBounds,
                        "planar speed exceeds v_max");
            } else if constexpr (std::is_same_v<T, AxialInsertion>) {
                require(std::isfinite(c.speed), ErrorCode::CommandOutOfBounds, "axial speed must be finite");
                require(std::abs(c.speed) <= phys.v_max_mm_s + 1e-12, ErrorCode::CommandOutOfBounds,
                        "axial speed exceeds v_max");
                require(!c.travel_limit_mm || (*c.travel_limit_mm >= 0.0 && std::isfinite(*c.travel_limit_mm)),
                        ErrorCode::CommandOutOfBounds, "travel limit must be finite and >= 0");
            } else if constexpr (std::is_same_v<T, ZStep>) {
                require(std::isfinite(c.dz), ErrorCode::CommandOutOfBounds, "z step must be finite");
                require(std::abs(c.dz) <= phys.z_step_cap_mm + 1e-12, ErrorCode::CommandOutOfBounds,
                        "z step exceeds cap");
            }
        },
        cmd);
}

// -------------------------------------------------------------- operations

/// Ground-truth tissue phase for the current geometry, carrying history
/// (first-contact pose, ruptures) forward from world.tissue.
inline TissueState evaluate_tissue_state(const WorldState& w) {
    const VeinModel& v = w.vein;
    const Pose3 tip = w.needle.tip;
    const double eps = w.physics.contact_tolerance_mm;
    TissueState s = w.tissue;

    const bool inside = v.in_footprint(tip.xy());
    const double penetration = v.depth_z - tip.z;

    if (!s.top_rupture_xy) {
        if (!inside || penetration < -eps) {
            s.phase = TissuePhase::Free;
            s.deflection_mm = 0.0;
            s.depth_beyond_contact_mm = 0.0;
            s.contact_pose.reset();
            return s;
        }
        if (!s.contact_pose) {
            // First contact this stroke: if the last move crossed the wall
            // surface, the datum is the crossing point, otherwise the tip.
            const Pose3 prev = w.prev_tip;
            if (prev.z > v.depth_z && tip.z < v.depth_z) {
                const double f = (prev.z - v.depth_z) / (prev.z - tip.z);
                s.contact_pose = prev + (tip - prev) * f;
            } else {
                s.contact_pose = tip;
            }
        }
        if (penetration <= 0.0) {
            s.phase = TissuePhase::Contact;
            s.deflection_mm = 0.0;
        } else if (penetration <= v.max_deflection_mm) {
            s.phase = TissuePhase::Deformed;
            s.deflection_mm = penetration;
        } else if (w.tip_speed_mm_s >= v.puncture_velocity_mm_s) {
            s.top_rupture_xy = tip.xy();
        } else {
            s.phase = TissuePhase::Deformed;
            s.deflection_mm = v.max_deflection_mm;
        }
    }

    if (s.top_rupture_xy) {
        s.deflection_mm = 0.0;
        if (!s.bottom_rupture_xy && inside && tip.z <= v.far_wall()) s.bottom_rupture_xy = tip.xy();
        s.phase = s.bottom_rupture_xy ? TissuePhase::DoublePunctured : TissuePhase::Punctured;
    }
    s.depth_beyond_contact_mm = s.contact_pose ? norm(tip - *s.contact_pose) : 0.0;
    return s;
}

inline WorldState make_world(const NeedleModel& needle, const VeinModel& vein, const PhysicsConfig& physics,
                             std::uint64_t seed) {
    WorldState w;
    w.needle = needle;
    w.vein = vein;
    w.physics = physics;
    w.prev_tip = needle.tip;
    w.rng_seed = seed;
    w.validate();
    w.tissue = evaluate_tissue_state(w);
    return w;
}

inline bool inside_workspace(const WorldState& w) {
    const Pose3 d = w.needle.tip - w.physics.workspace_center;
    const double h = w.physics.workspace_half_extent_mm;
    return std::abs(d.x) <= h && std::abs(d.y) <= h && std::abs(d.z) <= h;
}

/// Advances the plant by one control tick with a single explicit Euler
/// substep.
inline WorldState step(const WorldState& w, const MotionCommand& cmd, double dt) {
    require(std::isfinite(dt) && dt > 0.0, ErrorCode::InvalidArgument, "dt must be positive");
    check_command(cmd, w.physics);

    WorldState next = w;
    next.prev_tip = w.needle.tip;
    Pose3& tip = next.needle.tip;
    std::visit(
        [&](const auto& c) {
            using T = std::decay_t<decltype(c)>;
            if constexpr (std::is_same_v<T, Hold>) {
                next.tip_speed_mm_s = 0.0;
            } else if constexpr (std::is_same_v<T, PlanarVelocity>) {
                tip.x += c.vx * dt;
                tip.y += c.vy * dt;
                next.tip_speed_mm_s = std::hypot(c.vx, c.vy);
            } else if constexpr (std::is_same_v<T, AxialInsertion>) {
                double dist = std::abs(c.speed) * dt;
                if (c.travel_limit_mm) dist = std::min(dist, *c.travel_limit_mm);
                const double sign = c.speed < 0.0 ? -1.0 : 1.0;
                tip = tip + w.needle.insertion_axis() * (sign * dist);
                next.tip_speed_mm_s = dist > 0.0 ? std::abs(c.speed) : 0.0;
            } else {
                tip.z += c.dz;
                next.tip_speed_mm_s = std::abs(c.dz) / dt;
            }
        },
        cmd);
    next.t = w.t + dt;
    require(inside_workspace(next), ErrorCode::WorkspaceExceeded, "needle left the workspace box");
    next.tissue = evaluate_tissue_state(next);
    return next;
}

enum class InjectionReason { Success, TipNotInLumen, NoPuncture, DoublePuncture };

constexpr std::string_view to_string(InjectionReason r) {
    switch (r) {
        case InjectionReason::Success: return "Success";
        case InjectionReason::TipNotInLumen: return "TipNotInLumen";
        case InjectionReason::NoPuncture: return "NoPuncture";
        case InjectionReason::DoublePuncture: return "DoublePuncture";
    }
    return "?";
}

struct VerdictGroundTruth {
    bool success = false;
    InjectionReason reason = InjectionReason::NoPuncture;
    bool operator==(const VerdictGroundTruth&) const = default;
};

inline bool tip_in_lumen(const WorldState& w) {
    const Pose3 tip = w.needle.tip;
    return w.vein.in_footprint(tip.xy()) && tip.z < w.vein.lumen_top() && tip.z > w.vein.far_wall();
}

/// Air-injection check: inflation only when exactly one wall is breached and
/// the tip opens into the lumen. Returns the verdict and the world with the
/// injection recorded.
inline std::pair<VerdictGroundTruth, WorldState> inject_air(const WorldState& w) {
    require(!w.air_injected, ErrorCode::AlreadyInjected, "air was already injected this trial");
    WorldState next = w;
    next.air_injected = true;
    VerdictGroundTruth v;
    switch (w.tissue.phase) {
        case TissuePhase::DoublePunctured: v = {false, InjectionReason::DoublePuncture}; break;
        case TissuePhase::Punctured:
            v = tip_in_lumen(w) ? VerdictGroundTruth{true, InjectionReason::Success}
                                : VerdictGroundTruth{false, InjectionReason::TipNotInLumen};
            break;
        default: v = {false, InjectionReason::NoPuncture}; break;
    }
    return {v, next};
}

// ------------------------------------------------------------------- JSON

using nlohmann::json;

NLOHMANN_JSON_SERIALIZE_ENUM(TissuePhase, {{TissuePhase::Free, "Free"},
                                           {TissuePhase::Contact, "Contact"},
                                           {TissuePhase::Deformed, "Deformed"},
                                           {TissuePhase::Punctured, "Punctured"},
                                           {TissuePhase::DoublePunctured, "DoublePunctured"}})

NLOHMANN_JSON_SERIALIZE_ENUM(InjectionReason, {{InjectionReason::Success, "Success"},
                                               {InjectionReason::TipNotInLumen, "TipNotInLumen"},
                                               {InjectionReason::NoPuncture, "NoPuncture"},
                                               {InjectionReason::DoublePuncture, "DoublePuncture"}})

}  // namespace rvc::world

namespace rvc {

inline void to_json(nlohmann::json& j, const Vec2& v) { j = nlohmann::json::array({v.x, v.y}); }
inline void from_json(const nlohmann::json& j, Vec2& v) {
    v.x = j.at(0).get<double>();
    v.y = j.at(1).get<double>();
}
inline void to_json(nlohmann::json& j, const Pose3& p) { j = nlohmann::json::array({p.x, p.y, p.z}); }
inline void from_json(const nlohmann::json& j, Pose3& p) {
    p.x = j.at(0).get<double>();
    p.y = j.at(1).get<double>();
    p.z = j.at(2).get<double>();
}

}  // namespace rvc

namespace nlohmann {

template <typename T>
struct adl_serializer<std::optional<T>> {
    static void to_json(json& j, const std::optional<T>& o) {
        if (o) j = *o;
        else j = nullptr;
    }
    static void from_json(const json& j, std::optional<T>& o) {
        if (j.is_null()) o.reset();
        else o = j.get<T>();
    }
};

}  // namespace nlohmann

namespace rvc::world {

inline void to_json(json& j, const NeedleModel& n) {
    j = json{{"tip", n.tip},
             {"insertion_angle_deg", n.insertion_angle_deg},
             {"azimuth_deg", n.azimuth_deg},
             {"tip_diameter_um", n.tip_diameter_um},
             {"shaft_length_mm", n.shaft_length_mm}};
}
inline void from_json(const json& j, NeedleModel& n) {
    NeedleModel d;
    n.tip = j.value("tip", d.tip);
    n.insertion_angle_deg = j.value("insertion_angle_deg", d.insertion_angle_deg);
    n.azimuth_deg = j.value("azimuth_deg", d.azimuth_deg);
    n.tip_diameter_um = j.value("tip_diameter_um", d.tip_diameter_um);
    n.shaft_length_mm = j.value("shaft_length_mm", d.shaft_length_mm);
}

inline void to_json(json& j, const VeinModel& v) {
    j = json{{"axis_point", v.axis.point},
             {"axis_direction", v.axis.direction},
             {"depth_z", v.depth_z},
             {"diameter_mm", v.diameter_mm},
             {"wall_thickness_mm", v.wall_thickness_mm},
             {"max_deflection_mm", v.max_deflection_mm},
             {"puncture_velocity_mm_s", v.puncture_velocity_mm_s}};
}
/// Accepts {"preset": "embryo"|"target"} with optional per-field overrides.
inline void from_json(const json& j, VeinModel& v) {
    VeinModel d = j.contains("preset") ? VeinModel::preset(j.at("preset").get<std::string>()) : VeinModel{};
    v.axis.point = j.value("axis_point", d.axis.point);
    v.axis.direction = j.value("axis_direction", d.axis.direction);
    v.depth_z = j.value("depth_z", d.depth_z);
    v.diameter_mm = j.value("diameter_mm", d.diameter_mm);
    v.wall_thickness_mm = j.value("wall_thickness_mm", d.wall_thickness_mm);
    v.max_deflection_mm = j.value("max_deflection_mm", d.max_deflection_mm);
    v.puncture_velocity_mm_s = j.value("puncture_velocity_mm_s", d.puncture_velocity_mm_s);
}

inline void to_json(json& j, const TissueState& s) {
    j = json{{"phase", s.phase},
             {"deflection_mm", s.deflection_mm},
             {"depth_beyond_contact_mm", s.depth_beyond_contact_mm},
             {"contact_pose", s.contact_pose},
             {"top_rupture_xy", s.top_rupture_xy},
             {"bottom_rupture_xy", s.bottom_rupture_xy}};
}
inline void from_json(const json& j, TissueState& s) {
    j.at("phase").get_to(s.phase);
    j.at("deflection_mm").get_to(s.deflection_mm);
    j.at("depth_beyond_contact_mm").get_to(s.depth_beyond_contact_mm);
    j.at("contact_pose").get_to(s.contact_pose);
    j.at("top_rupture_xy").get_to(s.top_rupture_xy);
    j.at("bottom_rupture_xy").get_to(s.bottom_rupture_xy);
}

inline void to_json(json& j, const PhysicsConfig& p) {
    j = json{{"contact_tolerance_mm", p.contact_tolerance_mm},
             {"v_max_mm_s", p.v_max_mm_s},
             {"z_step_cap_mm", p.z_step_cap_mm},
             {"workspace_center", p.workspace_center},
             {"workspace_half_extent_mm", p.workspace_half_extent_mm}};
}
inline void from_json(const json& j, PhysicsConfig& p) {
    PhysicsConfig d;
    p.contact_tolerance_mm = j.value("contact_tolerance_mm", d.contact_tolerance_mm);
    p.v_max_mm_s = j.value("v_max_mm_s", d.v_max_mm_s);
    p.z_step_cap_mm = j.value("z_step_cap_mm", d.z_step_cap_mm);
    p.workspace_center = j.value("workspace_center", d.workspace_center);
    p.workspace_half_extent_mm = j.value("workspace_half_extent_mm", d.workspace_half_extent_mm);
}

inline void to_json(json& j, const WorldState& w) {
    j = json{{"t", w.t},
             {"needle", w.needle},
             {"vein", w.vein},
             {"tissue", w.tissue},
             {"physics", w.physics},
             {"prev_tip", w.prev_tip},
             {"tip_speed_mm_s", w.tip_speed_mm_s},
             {"air_injected", w.air_injected},
             {"rng_seed", w.rng_seed}};
}
inline void from_json(const json& j, WorldState& w) {
    j.at("t").get_to(w.t);
    j.at("needle").get_to(w.needle);
    j.at("vein").get_to(w.vein);
    j.at("tissue").get_to(w.tissue);
    j.at("physics").get_to(w.physics);
    j.at("prev_tip").get_to(w.prev_tip);
    j.at("tip_speed_mm_s").get_to(w.tip_speed_mm_s);
    j.at("air_injected").get_to(w.air_injected);
    j.at("rng_seed").get_to(w.rng_seed);
}

inline void to_json(json& j, const MotionCommand& cmd) {
    std::visit(
        [&](const auto& c) {
            using T = std::decay_t<decltype(c)>;
            if constexpr (std::is_same_v<T, Hold>) j = json{{"kind", "Hold"}};
            else if constexpr (std::is_same_v<T, PlanarVelocity>)
                j = json{{"kind", "PlanarVelocity"}, {"vx", c.vx}, {"vy", c.vy}};
            else if constexpr (std::is_same_v<T, AxialInsertion>)
                j = json{{"kind", "AxialInsertion"}, {"speed", c.speed}, {"travel_limit_mm", c.travel_limit_mm}};
            else j = json{{"kind", "ZStep"}, {"dz", c.dz}};
        },
        cmd);
}
inline void from_json(const json& j, MotionCommand& cmd) {
    const auto kind = j.at("kind").get<std::string>();
    if (kind == "Hold") cmd = Hold{};
    else if (kind == "PlanarVelocity") cmd = PlanarVelocity{j.at("vx").get<double>(), j.at("vy").get<double>()};
    else if (kind == "AxialInsertion")
        cmd = AxialInsertion{j.at("speed").get<double>(), j.value("travel_limit_mm", std::optional<double>{})};
    else if (kind == "ZStep") cmd = ZStep{j.at("dz").get<double>()};
    else throw Error(ErrorCode::InvalidArgument, "unknown motion command kind '" + kind + "'");
}

inline void to_json(json& j, const VerdictGroundTruth& v) { j = json{{"success", v.success}, {"reason", v.reason}}; }
inline void from_json(const json& j, VerdictGroundTruth& v) {
    j.at("success").get_to(v.success);
    j.at("reason").get_to(v.reason);
}

}  // namespace rvc::world
