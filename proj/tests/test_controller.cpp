#include <cmath>

#include <gtest/gtest.h>

#include "rvc/controller.hpp"
#include "rvc/random.hpp"
#include "support.hpp"

using namespace rvc;
using namespace rvc::control;

namespace {

const double kDt = 0.1;

Percepts tip_at(Vec2 px) {
    Percepts p;
    perception::TipDetection d;
    d.tip_px = px;
    d.confidence = 0.8;
    p.tip = d;
    return p;
}

Percepts contact(bool yes) {
    Percepts p;
    p.contact = perception::decide_contact(yes ? -2.0 : 6.0, 0.5);
    return p;
}

Percepts puncture(bool yes, double conf = 0.9) {
    Percepts p;
    p.puncture = perception::PunctureDecision{{}, yes, conf};
    return p;
}

Percepts failure(ErrorCode c) {
    Percepts p;
    p.failure = c;
    return p;
}

// Robot-side kinematics: where the commanded motion leaves the tip.
Pose3 move(Pose3 pose, const world::MotionCommand& cmd, double angle_deg = 70.0) {
    const double e = angle_deg * M_PI / 180.0;
    if (auto* z = std::get_if<world::ZStep>(&cmd)) pose.z += z->dz;
    if (auto* v = std::get_if<world::PlanarVelocity>(&cmd)) {
        pose.x += v->vx * kDt;
        pose.y += v->vy * kDt;
    }
    if (auto* a = std::get_if<world::AxialInsertion>(&cmd)) {
        double d = std::abs(a->speed) * kDt;
        if (a->travel_limit_mm) d = std::min(d, *a->travel_limit_mm);
        const double sign = a->speed < 0 ? -1.0 : 1.0;
        pose.x += sign * d * std::cos(e);
        pose.z -= sign * d * std::sin(e);
    }
    return pose;
}

// Drives a fresh machine through navigation (one tick) into ContactSeek.
ControllerState at_contact_seek(const ControllerConfig& cfg, Pose3 pose) {
    ControllerState s = set_target({}, {100, 100}, cfg);
    auto [cmd, next] = tick(s, cfg, tip_at({100, 100}), pose, kDt);
    EXPECT_EQ(next.phase, Phase::ContactSeek);
    return next;
}

}  // namespace

// ------------------------------------------------------------ set_target

TEST(SetTarget, IdleToNavigating) {
    const ControllerConfig cfg;
    const ControllerState s = set_target({}, {200, 300}, cfg);
    EXPECT_EQ(s.phase, Phase::Navigating);
    EXPECT_EQ(*s.target_px, (Vec2{200, 300}));
    EXPECT_EQ(s.timers.navigation_s, 0.0);
}

TEST(SetTarget, OutOfFrameRejected) {
    const ControllerConfig cfg;
    EXPECT_CODE(set_target({}, {-5, 10}, cfg), ErrorCode::InvalidTarget);
    EXPECT_CODE(set_target({}, {10, 512}, cfg), ErrorCode::InvalidTarget);
    EXPECT_CODE(set_target({}, {NAN, 10}, cfg), ErrorCode::InvalidTarget);
}

TEST(SetTarget, WrongPhaseOutsideNavigation) {
    const ControllerConfig cfg;
    for (Phase p : {Phase::ContactSeek, Phase::PunctureStroke, Phase::VerifyPuncture, Phase::Retracting,
                    Phase::FullRetract, Phase::Done, Phase::Aborted}) {
        ControllerState s;
        s.phase = p;
        EXPECT_CODE(set_target(s, {10, 10}, cfg), ErrorCode::WrongPhase) << to_string(p);
    }
    // retargeting while navigating is allowed
    const ControllerState s = set_target(set_target({}, {10, 10}, cfg), {20, 20}, cfg);
    EXPECT_EQ(*s.target_px, (Vec2{20, 20}));
}

// ------------------------------------------------------------ navigation

TEST(Navigation, AtTargetStops) {
    EXPECT_TRUE(std::holds_alternative<StopSignal>(plan_navigation_step({50, 60}, {50, 60}, {})));
}

TEST(Navigation, ThreeFourFive) {
    ControllerConfig cfg;
    cfg.nav_speed_cap_mm_s = 1.0;
    cfg.nav_gain_per_s = 1e6;
    const NavigationStep s = plan_navigation_step({0, 0}, {3, 4}, cfg);
    ASSERT_TRUE(std::holds_alternative<world::PlanarVelocity>(s));
    const auto v = std::get<world::PlanarVelocity>(s);
    EXPECT_NEAR(v.vx, 0.6, 1e-12);
    EXPECT_NEAR(v.vy, 0.8, 1e-12);
    EXPECT_NEAR(std::hypot(v.vx, v.vy), 1.0, 1e-12);
}

TEST(Navigation, StopsInsideThreePixels) {
    EXPECT_TRUE(std::holds_alternative<StopSignal>(plan_navigation_step({97.9, 100}, {100, 100}, {})));
    EXPECT_TRUE(std::holds_alternative<world::PlanarVelocity>(plan_navigation_step({97.0, 100}, {100, 100}, {})));
}

TEST(Navigation, ProportionalBelowCap) {
    ControllerConfig cfg;
    const auto v = std::get<world::PlanarVelocity>(plan_navigation_step({0, 0}, {4, 0}, cfg));
    EXPECT_NEAR(v.vx, cfg.nav_gain_per_s * 4 * cfg.microscope_scale_mm_per_px, 1e-12);
    EXPECT_EQ(v.vy, 0.0);
}

TEST(Navigation, ContractionWithExactFeedback) {
    const ControllerConfig cfg;
    Rng rng(4);
    for (int trial = 0; trial < 200; ++trial) {
        const Vec2 target{rng.uniform(0, 511), rng.uniform(0, 511)};
        Vec2 tip{rng.uniform(0, 511), rng.uniform(0, 511)};
        const double d0 = norm(target - tip);
        const double per_tick = cfg.nav_speed_cap_mm_s * kDt / cfg.microscope_scale_mm_per_px;
        const long long bound = static_cast<long long>(std::ceil(d0 / per_tick)) + 1;
        ControllerState s = set_target({}, target, cfg);
        double last = d0;
        long long ticks = 0;
        while (s.phase == Phase::Navigating) {
            auto [cmd, next] = tick(s, cfg, tip_at(tip), {}, kDt);
            ++ticks;
            s = next;
            if (auto* v = std::get_if<world::PlanarVelocity>(&cmd)) {
                tip = tip + Vec2{v->vx, v->vy} * (kDt / cfg.microscope_scale_mm_per_px);
                const double d = norm(target - tip);
                ASSERT_LT(d, last);
                last = d;
            }
        }
        EXPECT_EQ(s.phase, Phase::ContactSeek);
        EXPECT_LT(norm(target - tip), cfg.stop_dist_px);
        EXPECT_LE(ticks, bound);
    }
}

TEST(Navigation, TimerCountsTicks) {
    const ControllerConfig cfg;
    ControllerState s = set_target({}, {300, 300}, cfg);
    for (int i = 0; i < 119; ++i) s = tick(s, cfg, tip_at({100, 100}), {}, kDt).second;
    ASSERT_EQ(s.phase, Phase::Navigating);
    s = tick(s, cfg, tip_at({300, 300}), {}, kDt).second;
    EXPECT_EQ(s.phase, Phase::ContactSeek);
    EXPECT_NEAR(timers(s).navigation_s, 12.0, 1e-9);
    EXPECT_EQ(s.timers.puncture_s, 0.0);
}

TEST(Navigation, TimeoutAborts) {
    ControllerConfig cfg;
    cfg.max_navigation_ticks = 10;
    ControllerState s = set_target({}, {300, 300}, cfg);
    for (int i = 0; i < 10; ++i) s = tick(s, cfg, tip_at({100, 100}), {}, kDt).second;
    EXPECT_EQ(s.phase, Phase::Aborted);
    EXPECT_EQ(s.abort_reason, "NavigationTimeout");
    EXPECT_GT(s.timers.navigation_s, 0.0);
}

// ------------------------------------------------------------ tick table

TEST(Tick, ContactSeekStepsDown) {
    const ControllerConfig cfg;
    const ControllerState s = at_contact_seek(cfg, {0, 0, 1});
    const auto [cmd, next] = tick(s, cfg, contact(false), {0, 0, 1}, kDt);
    ASSERT_TRUE(std::holds_alternative<world::ZStep>(cmd));
    EXPECT_DOUBLE_EQ(std::get<world::ZStep>(cmd).dz, -0.010);
    EXPECT_EQ(next.phase, Phase::ContactSeek);
    EXPECT_FALSE(next.contact_confirmed);
}

TEST(Tick, ContactRecordsPoseAndStartsStroke) {
    const ControllerConfig cfg;
    const ControllerState s = at_contact_seek(cfg, {0, 0, 1});
    const Pose3 at{0.01, 0.0, 0.8};
    const auto [cmd, next] = tick(s, cfg, contact(true), at, kDt);
    EXPECT_TRUE(std::holds_alternative<world::Hold>(cmd));
    EXPECT_EQ(next.phase, Phase::PunctureStroke);
    EXPECT_EQ(*next.contact_pose, at);
    EXPECT_TRUE(next.contact_confirmed);
}

TEST(Tick, SeekDepthCapAborts) {
    ControllerConfig cfg;
    cfg.max_seek_depth_mm = 0.05;
    Pose3 pose{0, 0, 1};
    ControllerState s = at_contact_seek(cfg, pose);
    int steps = 0;
    while (s.phase == Phase::ContactSeek) {
        auto [cmd, next] = tick(s, cfg, contact(false), pose, kDt);
        pose = move(pose, cmd);
        s = next;
        steps += std::holds_alternative<world::ZStep>(cmd);
    }
    EXPECT_EQ(s.phase, Phase::Aborted);
    EXPECT_EQ(s.abort_reason, "SeekDepthExceeded");
    EXPECT_EQ(steps, 5);
    EXPECT_NEAR(pose.z, 0.95, 1e-12);
}

TEST(Tick, StrokeThenVerify) {
    const ControllerConfig cfg;
    Pose3 pose{0, 0, 1};
    ControllerState s = at_contact_seek(cfg, pose);
    s = tick(s, cfg, contact(true), pose, kDt).second;
    double travelled = 0.0;
    while (s.phase == Phase::PunctureStroke) {
        auto [cmd, next] = tick(s, cfg, {}, pose, kDt);
        const auto& a = std::get<world::AxialInsertion>(cmd);
        EXPECT_EQ(a.speed, cfg.insertion_speed_mm_s);
        travelled += *a.travel_limit_mm;
        s = next;
    }
    EXPECT_EQ(s.phase, Phase::VerifyPuncture);
    EXPECT_NEAR(travelled, cfg.stroke_depth_mm, 1e-12);
    EXPECT_NEAR(s.depth_beyond_contact_mm, cfg.stroke_depth_mm, 1e-12);
}

TEST(Tick, VerifyPositiveGoesToFullRetractThenDone) {
    const ControllerConfig cfg;
    Pose3 pose{0, 0, 1};
    ControllerState s = at_contact_seek(cfg, pose);
    for (int i = 0; i < 20; ++i) {
        auto [cmd, next] = tick(s, cfg, contact(false), pose, kDt);
        pose = move(pose, cmd);
        s = next;
    }
    s = tick(s, cfg, contact(true), pose, kDt).second;
    while (s.phase == Phase::PunctureStroke) {
        auto [cmd, next] = tick(s, cfg, {}, pose, kDt);
        pose = move(pose, cmd);
        s = next;
    }
    auto [cmd, next] = tick(s, cfg, puncture(true), pose, kDt);
    EXPECT_EQ(next.phase, Phase::FullRetract);
    EXPECT_TRUE(next.puncture_claimed);
    EXPECT_EQ(next.attempts, 1);
    s = next;
    int ticks = 0;
    while (s.phase == Phase::FullRetract && ticks < 100) {
        auto [c, n] = tick(s, cfg, {}, pose, kDt);
        pose = move(pose, c);
        s = n;
        ++ticks;
    }
    EXPECT_EQ(s.phase, Phase::Done);
    EXPECT_NEAR(pose.z, 1.0, 1e-9);
    EXPECT_GT(s.timers.puncture_s, 0.0);
    const double frozen = s.timers.puncture_s;
    s = tick(s, cfg, {}, pose, kDt).second;
    EXPECT_EQ(s.timers.puncture_s, frozen);
}

TEST(Tick, LowConfidencePunctureIsNotAccepted) {
    const ControllerConfig cfg;
    ControllerState s;
    s.phase = Phase::VerifyPuncture;
    s.stroke_depth_mm = 0.2;
    s.start_z = 1.0;
    const auto [cmd, next] = tick(s, cfg, puncture(true, 0.3), {}, kDt);
    EXPECT_EQ(next.phase, Phase::Retracting);
}

TEST(Tick, RetractTwoFifthsOfHalfMillimetre) {
    ControllerConfig cfg;
    cfg.stroke_depth_mm = 0.5;
    Pose3 pose{0, 0, 1};
    ControllerState s = at_contact_seek(cfg, pose);
    s = tick(s, cfg, contact(true), pose, kDt).second;
    while (s.phase == Phase::PunctureStroke) s = tick(s, cfg, {}, pose, kDt).second;
    ASSERT_NEAR(s.stroke_depth_mm, 0.5, 1e-12);
    s = tick(s, cfg, puncture(false), pose, kDt).second;
    EXPECT_EQ(s.phase, Phase::Retracting);
    EXPECT_NEAR(s.retract_remaining_mm, 0.2, 1e-12);
    EXPECT_EQ(s.attempts, 1);
    double back = 0.0;
    while (s.phase == Phase::Retracting) {
        auto [cmd, next] = tick(s, cfg, {}, pose, kDt);
        const auto& a = std::get<world::AxialInsertion>(cmd);
        EXPECT_LT(a.speed, 0.0);
        back += *a.travel_limit_mm;
        s = next;
    }
    EXPECT_NEAR(back, 0.2, 1e-12);
    EXPECT_NEAR(s.depth_beyond_contact_mm, 0.3, 1e-12);
    EXPECT_EQ(s.phase, Phase::PunctureStroke);
}

// Hand-simulated trace: each failed attempt nets 3/5 of its stroke.
TEST(Tick, RetractionArithmeticOverAttempts) {
    ControllerConfig cfg;
    cfg.max_puncture_attempts = 5;
    Pose3 pose{0, 0, 1};
    ControllerState s = at_contact_seek(cfg, pose);
    s = tick(s, cfg, contact(true), pose, kDt).second;
    const Pose3 contact_pose = pose;
    const double hand[5] = {0.12, 0.24, 0.36, 0.48, 0.60};
    for (int k = 0; k < 5; ++k) {
        while (s.phase == Phase::PunctureStroke || s.phase == Phase::Retracting) {
            auto [cmd, next] = tick(s, cfg, {}, pose, kDt);
            pose = move(pose, cmd);
            s = next;
        }
        if (s.phase == Phase::Aborted) break;
        ASSERT_EQ(s.phase, Phase::VerifyPuncture);
        s = tick(s, cfg, puncture(false), pose, kDt).second;
        while (s.phase == Phase::Retracting) {
            auto [cmd, next] = tick(s, cfg, {}, pose, kDt);
            pose = move(pose, cmd);
            s = next;
        }
        EXPECT_NEAR(s.depth_beyond_contact_mm, hand[k], 1e-9) << "attempt " << k + 1;
        EXPECT_NEAR(norm(pose - contact_pose), hand[k], 1e-9);
    }
    EXPECT_EQ(s.phase, Phase::Aborted);
    EXPECT_EQ(s.abort_reason, "AttemptsExhausted");
    EXPECT_EQ(s.attempts, cfg.max_puncture_attempts);
}

TEST(Tick, PerceptionFailuresHoldThenAbort) {
    const ControllerConfig cfg;
    ControllerState s = set_target({}, {100, 100}, cfg);
    for (int i = 0; i < 49; ++i) {
        auto [cmd, next] = tick(s, cfg, failure(ErrorCode::NoNeedleDetected), {}, kDt);
        EXPECT_TRUE(std::holds_alternative<world::Hold>(cmd));
        EXPECT_EQ(next.phase, Phase::Navigating);
        EXPECT_EQ(next.reacquire_count, i + 1);
        s = next;
    }
    // a good percept resets the streak
    s = tick(s, cfg, tip_at({0, 0}), {}, kDt).second;
    EXPECT_EQ(s.reacquire_count, 0);
    for (int i = 0; i < 50; ++i) s = tick(s, cfg, failure(ErrorCode::NoNeedleDetected), {}, kDt).second;
    EXPECT_EQ(s.phase, Phase::Aborted);
    EXPECT_EQ(s.abort_reason, "ReacquireLimit");
}

TEST(Tick, WrongPerceptRejected) {
    const ControllerConfig cfg;
    const ControllerState nav = set_target({}, {100, 100}, cfg);
    EXPECT_CODE(tick(nav, cfg, contact(true), {}, kDt), ErrorCode::WrongPercept);
    EXPECT_CODE(tick(nav, cfg, {}, {}, kDt), ErrorCode::WrongPercept);
    ControllerState stroke;
    stroke.phase = Phase::PunctureStroke;
    EXPECT_CODE(tick(stroke, cfg, tip_at({1, 1}), {}, kDt), ErrorCode::WrongPercept);
    Percepts both = tip_at({1, 1});
    both.contact = contact(true).contact;
    EXPECT_CODE(tick(nav, cfg, both, {}, kDt), ErrorCode::WrongPercept);
}

TEST(Tick, TerminalPhasesHold) {
    const ControllerConfig cfg;
    for (Phase p : {Phase::Done, Phase::Aborted, Phase::Idle}) {
        ControllerState s;
        s.phase = p;
        const auto [cmd, next] = tick(s, cfg, {}, {}, kDt);
        EXPECT_TRUE(std::holds_alternative<world::Hold>(cmd));
        EXPECT_EQ(next, s);
    }
}

// ------------------------------------------------------------ properties

// Random percept outcomes in every phase; checks the safety rule, the
// attempt bound and termination within tick_bound.
TEST(Property, FuzzedExecutionsAreSafeAndLive) {
    ControllerConfig cfg;
    const long long bound = tick_bound(cfg, kDt);
    int done = 0, aborted = 0;
    for (std::uint64_t seed = 0; seed < 400; ++seed) {
        Rng rng(seed);
        const double p_fail = rng.uniform(0.0, 0.3);
        const double p_contact = rng.uniform(0.0, 0.2);
        const double p_punct = rng.uniform(0.0, 0.6);
        const Vec2 target{rng.uniform(0, 511), rng.uniform(0, 511)};
        ControllerState s = set_target({}, target, cfg);
        Pose3 pose{0, 0, 1};
        bool contact_seen = false;
        long long ticks = 0;
        while (!is_terminal(s.phase)) {
            ASSERT_LE(ticks, bound) << "seed " << seed;
            Percepts in;
            const PerceptKind need = required_percept(s.phase);
            if (need != PerceptKind::None && rng.bernoulli(p_fail)) {
                in.failure = need == PerceptKind::Tip ? ErrorCode::NoNeedleDetected : ErrorCode::NeedleNotInScan;
            } else if (need == PerceptKind::Tip) {
                in = tip_at(rng.bernoulli(0.05) ? target : Vec2{rng.uniform(0, 511), rng.uniform(0, 511)});
            } else if (need == PerceptKind::Contact) {
                in = contact(rng.bernoulli(p_contact));
                if (in.contact->decision) contact_seen = true;
            } else if (need == PerceptKind::Puncture) {
                in = puncture(rng.bernoulli(p_punct), rng.uniform());
            }
            auto [cmd, next] = tick(s, cfg, in, pose, kDt);
            if (auto* a = std::get_if<world::AxialInsertion>(&cmd); a && a->speed >= cfg.insertion_speed_mm_s) {
                ASSERT_TRUE(contact_seen) << "insertion before contact, seed " << seed;
            }
            ASSERT_LE(next.attempts, cfg.max_puncture_attempts);
            pose = move(pose, cmd);
            s = next;
            ++ticks;
        }
        (s.phase == Phase::Done ? done : aborted)++;
    }
    EXPECT_GT(done, 20);
    EXPECT_GT(aborted, 20);
}

TEST(Json, TimersRoundTrip) {
    const Timers t{36.74, 26.97};
    const nlohmann::json j = t;
    const Timers back = nlohmann::json::parse(j.dump()).get<Timers>();
    EXPECT_EQ(back, t);
    EXPECT_EQ(back.navigation_s, 36.74);
    EXPECT_EQ(back.puncture_s, 26.97);
}

TEST(Json, StateAndConfigRoundTrip) {
    const ControllerConfig cfg;
    Pose3 pose{0.2, -0.1, 1};
    ControllerState s = at_contact_seek(cfg, pose);
    s = tick(s, cfg, contact(true), pose, kDt).second;
    s = tick(s, cfg, {}, pose, kDt).second;
    EXPECT_EQ(nlohmann::json::parse(nlohmann::json(s).dump()).get<ControllerState>(), s);
    const nlohmann::json c = cfg;
    EXPECT_EQ(nlohmann::json(c.get<ControllerConfig>()), c);
    EXPECT_CODE(nlohmann::json::parse(R"({"retract_fraction": 1.0})").get<ControllerConfig>(),
                ErrorCode::InvalidConfig);
    EXPECT_CODE(nlohmann::json::parse(R"({"max_puncture_attempts": 0})").get<ControllerConfig>(),
                ErrorCode::InvalidConfig);
}
