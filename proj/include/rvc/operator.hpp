#pragma once

// Scripted stand-in for an expert driving the robot from the keyboard. It
// looks at the same frames the autonomous pipeline sees, but only every
// reaction interval, moves in fixed key steps, and every commanded setpoint
// carries hand tremor.

#include <algorithm>
#include <cmath>
#include <optional>
#include <utility>

#include <json.hpp>

#include "rvc/controller.hpp"
#include "rvc/random.hpp"
#include "rvc/world.hpp"

namespace rvc::harness {

struct OperatorModel {
    double reaction_latency_s = 0.3;
    double key_step_mm = 0.05;
    double tremor_rms_um = 182.0;
    double decision_noise = 0.1;  // chance a key hold runs one tick long or short

    void validate() const {
        require(reaction_latency_s >= 0.0, ErrorCode::InvalidConfig, "reaction latency must be >= 0");
        require(key_step_mm > 0.0, ErrorCode::InvalidConfig, "key step must be positive");
        require(tremor_rms_um >= 0.0, ErrorCode::InvalidConfig, "tremor must be >= 0");
        require(decision_noise >= 0.0 && decision_noise <= 1.0, ErrorCode::InvalidConfig,
                "decision noise outside [0, 1]");
    }
};

/// Zero-mean planar jitter whose RMS radius is `rms_mm`.
inline Vec2 tremor_sample(Rng& rng, double rms_mm) {
    const double sd = rms_mm / std::sqrt(2.0);
    const double dx = rng.normal(0.0, sd);
    const double dy = rng.normal(0.0, sd);
    return {dx, dy};
}

class ScriptedOperator {
public:
    ScriptedOperator(OperatorModel model, control::ControllerConfig cfg, std::uint64_t seed, double v_max_mm_s)
        : model_(model), cfg_(cfg), rng_(seed), v_max_(v_max_mm_s) {
        model_.validate();
        cfg_.validate();
        // Keyboard descent moves one key step at a time.
        cfg_.z_step_mm = model_.key_step_mm;
    }

    const control::ControllerState& state() const { return st_; }
    const OperatorModel& model() const { return model_; }

    void set_target(Vec2 target_px) { st_ = control::set_target(st_, target_px, cfg_); }

    /// Percept the operator wants this tick; None while reacting.
    control::PerceptKind wanted(double dt) const {
        if (control::is_terminal(st_.phase) || st_.phase == control::Phase::Idle) return control::PerceptKind::None;
        if (busy_ticks_ > 0 || st_.phase == control::Phase::PunctureStroke || st_.phase == control::Phase::Retracting ||
            st_.phase == control::Phase::FullRetract)
            return control::PerceptKind::None;
        (void)dt;
        return control::required_percept(st_.phase);
    }

    world::MotionCommand tick(const control::Percepts& in, const Pose3& pose, double dt) {
        const int latency_ticks = std::max(1, int(std::ceil(model_.reaction_latency_s / dt - 1e-9)));
        if (!setpoint_) setpoint_ = pose.xy();

        const bool observing = wanted(dt) != control::PerceptKind::None;

        if (st_.phase == control::Phase::Navigating && observing && in.tip) {
            st_.timers.navigation_s += dt;
            ++st_.navigation_ticks;
            st_.reacquire_count = 0;
            const Vec2 err = *st_.target_px - in.tip->tip_px;
            if (norm(err) < cfg_.stop_dist_px) {
                st_.phase = control::Phase::ContactSeek;
                st_.start_z = pose.z;
                hold_dir_ = {};
                hold_ticks_ = 0;
                return planar_to(pose, dt);
            }
            const double key_px = model_.key_step_mm / cfg_.microscope_scale_mm_per_px;
            const bool along_x = std::abs(err.x) >= std::abs(err.y);
            const double e = along_x ? err.x : err.y;
            hold_dir_ = along_x ? Vec2{e > 0 ? 1.0 : -1.0, 0.0} : Vec2{0.0, e > 0 ? 1.0 : -1.0};
            int n = std::clamp(int(std::lround(std::abs(e) / key_px)), 1, latency_ticks);
            const double r = rng_.uniform();
            if (r < 0.5 * model_.decision_noise) ++n;
            else if (r < model_.decision_noise && n > 1) --n;
            hold_ticks_ = n;
            busy_ticks_ = latency_ticks - 1;
            return key_tick(pose, dt);
        }
        if (st_.phase == control::Phase::Navigating) {
            st_.timers.navigation_s += dt;
            ++st_.navigation_ticks;
            if (in.failure) {
                ++st_.reacquire_count;
                if (st_.reacquire_count >= cfg_.reacquire_limit) {
                    st_.phase = control::Phase::Aborted;
                    st_.abort_reason = "ReacquireLimit";
                    return world::Hold{};
                }
            }
            if (st_.navigation_ticks >= cfg_.max_navigation_ticks) {
                st_.phase = control::Phase::Aborted;
                st_.abort_reason = "NavigationTimeout";
                return world::Hold{};
            }
            if (busy_ticks_ > 0) --busy_ticks_;
            return key_tick(pose, dt);
        }

        // Depth stages follow the same decision rules as the controller, with
        // a reaction pause after every observation.
        if (busy_ticks_ > 0 && !control::is_terminal(st_.phase)) {
            --busy_ticks_;
            st_.timers.puncture_s += dt;
            return planar_to(pose, dt);
        }
        const control::Phase before = st_.phase;
        auto [cmd, next] = control::tick(st_, cfg_, in, pose, dt);
        st_ = next;
        if (control::required_percept(before) != control::PerceptKind::None) busy_ticks_ = latency_ticks - 1;
        if (std::holds_alternative<world::Hold>(cmd)) {
            return control::is_terminal(st_.phase) ? cmd : planar_to(pose, dt);
        }
        // Axial and vertical moves shift the hand's reference point.
        reanchor_ = true;
        if (auto* z = std::get_if<world::ZStep>(&cmd)) {
            int presses = 1;
            const double r = rng_.uniform();
            if (r < 0.5 * model_.decision_noise) presses = 2;
            else if (r < model_.decision_noise) presses = 0;
            return world::ZStep{z->dz * presses};
        }
        return cmd;
    }

private:
    world::MotionCommand key_tick(const Pose3& pose, double dt) {
        if (hold_ticks_ > 0) {
            *setpoint_ = *setpoint_ + hold_dir_ * model_.key_step_mm;
            --hold_ticks_;
        }
        return planar_to(pose, dt);
    }

    /// Planar move to the tremor-perturbed setpoint, saturated at v_max.
    world::MotionCommand planar_to(const Pose3& pose, double dt) {
        if (reanchor_) {
            setpoint_ = pose.xy() - last_jitter_;
            reanchor_ = false;
        }
        if (model_.tremor_rms_um <= 0.0 && norm(*setpoint_ - pose.xy()) < 1e-12) return world::Hold{};
        last_jitter_ = tremor_sample(rng_, model_.tremor_rms_um / 1000.0);
        const Vec2 goal = *setpoint_ + last_jitter_;
        Vec2 v = (goal - pose.xy()) / dt;
        const double sp = norm(v);
        if (sp > v_max_) v = v * (v_max_ / sp);
        return world::PlanarVelocity{v.x, v.y};
    }

    OperatorModel model_;
    control::ControllerConfig cfg_;
    Rng rng_;
    control::ControllerState st_;
    std::optional<Vec2> setpoint_;
    Vec2 hold_dir_;
    int hold_ticks_ = 0;
    int busy_ticks_ = 0;
    double v_max_;
    Vec2 last_jitter_;
    bool reanchor_ = false;
};

inline void to_json(nlohmann::json& j, const OperatorModel& m) {
    j = nlohmann::json{{"reaction_latency_s", m.reaction_latency_s},
                       {"key_step_mm", m.key_step_mm},
                       {"tremor_rms_um", m.tremor_rms_um},
                       {"decision_noise", m.decision_noise}};
}
inline void from_json(const nlohmann::json& j, OperatorModel& m) {
    OperatorModel d;
    m.reaction_latency_s = j.value("reaction_latency_s", d.reaction_latency_s);
    m.key_step_mm = j.value("key_step_mm", d.key_step_mm);
    m.tremor_rms_um = j.value("tremor_rms_um", d.tremor_rms_um);
    m.decision_noise = j.value("decision_noise", d.decision_noise);
    m.validate();
}

}  // namespace rvc::harness
