#pragma once

// Live session core behind the network server: one trial at a time, ticked
// by the owner, taking client commands and fanning out frames and state to
// subscribers. Nothing here touches a socket.

#include <algorithm>
#include <array>
#include <chrono>
#include <cstdint>
#include <deque>
#include <functional>
#include <map>
#include <memory>
#include <mutex>
#include <optional>
#include <random>
#include <string>
#include <string_view>
#include <variant>
#include <vector>

#include <json.hpp>

#include "rvc/controller.hpp"
#include "rvc/error.hpp"
#include "rvc/imaging.hpp"
#include "rvc/perception.hpp"
#include "rvc/scenario.hpp"
#include "rvc/session.hpp"
#include "rvc/world.hpp"

namespace rvc::service {

using nlohmann::json;
using Clock = std::chrono::steady_clock;

// --------------------------------------------------------------- messages

enum class MessageKind { FrameMicroscope, FrameBScan, FsmState, TrialResult, Error };

constexpr std::string_view to_string(MessageKind k) {
    switch (k) {
        case MessageKind::FrameMicroscope: return "FrameMicroscope";
        case MessageKind::FrameBScan: return "FrameBScan";
        case MessageKind::FsmState: return "FsmState";
        case MessageKind::TrialResult: return "TrialResult";
        case MessageKind::Error: return "Error";
    }
    return "?";
}

constexpr bool is_frame(MessageKind k) { return k == MessageKind::FrameMicroscope || k == MessageKind::FrameBScan; }

/// Server to client. Frames share their pixels between all subscribers.
struct Message {
    MessageKind kind = MessageKind::FsmState;
    std::uint64_t seq = 0;
    double t = 0.0;
    std::shared_ptr<const GrayImage> frame;
    double scale_mm_per_px = 0.0;
    json body;

    bool operator==(const Message& o) const {
        const bool frames_equal = (!frame && !o.frame) || (frame && o.frame && *frame == *o.frame);
        return kind == o.kind && seq == o.seq && t == o.t && frames_equal && scale_mm_per_px == o.scale_mm_per_px &&
               body == o.body;
    }
};

/// JSON envelope for control messages on the wire.
inline json envelope(const Message& m) { return json{{"kind", to_string(m.kind)}, {"seq", m.seq}, {"t", m.t}, {"body", m.body}}; }

// --------------------------------------------------------------- commands

enum class SessionMode { Auto, Manual };

NLOHMANN_JSON_SERIALIZE_ENUM(SessionMode, {{SessionMode::Auto, "auto"}, {SessionMode::Manual, "manual"}})

enum class KeyDirection { PlusX, MinusX, PlusY, MinusY, PlusZ, MinusZ, PlusAxial, MinusAxial };

NLOHMANN_JSON_SERIALIZE_ENUM(KeyDirection, {{KeyDirection::PlusX, "+x"},
                                            {KeyDirection::MinusX, "-x"},
                                            {KeyDirection::PlusY, "+y"},
                                            {KeyDirection::MinusY, "-y"},
                                            {KeyDirection::PlusZ, "+z"},
                                            {KeyDirection::MinusZ, "-z"},
                                            {KeyDirection::PlusAxial, "+axial"},
                                            {KeyDirection::MinusAxial, "-axial"}})

struct SetTarget {
    Vec2 px;
    bool operator==(const SetTarget&) const = default;
};
struct SetMode {
    SessionMode mode = SessionMode::Auto;
    bool operator==(const SetMode&) const = default;
};
struct Key {
    KeyDirection direction = KeyDirection::PlusX;
    bool operator==(const Key&) const = default;
};
struct Start {
    bool operator==(const Start&) const = default;
};
struct Abort {
    bool operator==(const Abort&) const = default;
};
struct Reset {
    bool operator==(const Reset&) const = default;
};

using CommandBody = std::variant<SetTarget, SetMode, Key, Start, Abort, Reset>;

struct ClientCommand {
    CommandBody body;
    std::uint64_t seq = 0;
    bool operator==(const ClientCommand&) const = default;
};

inline std::string_view command_name(const CommandBody& b) {
    static constexpr std::array<std::string_view, 6> names{"SetTarget", "SetMode", "Key", "Start", "Abort", "Reset"};
    return names[b.index()];
}

inline void to_json(json& j, const ClientCommand& c) {
    j = json{{"kind", command_name(c.body)}, {"seq", c.seq}};
    if (auto* t = std::get_if<SetTarget>(&c.body)) {
        j["u"] = t->px.x;
        j["v"] = t->px.y;
    } else if (auto* m = std::get_if<SetMode>(&c.body)) {
        j["mode"] = m->mode;
    } else if (auto* k = std::get_if<Key>(&c.body)) {
        j["direction"] = k->direction;
    }
}

/// Malformed input raises InvalidArgument.
inline ClientCommand parse_command(const json& j) {
    try {
        ClientCommand c;
        c.seq = j.value("seq", std::uint64_t{0});
        const std::string kind = j.at("kind").get<std::string>();
        if (kind == "SetTarget") {
            c.body = SetTarget{{j.at("u").get<double>(), j.at("v").get<double>()}};
        } else if (kind == "SetMode") {
            const std::string m = j.at("mode").get<std::string>();
            require(m == "auto" || m == "manual", ErrorCode::InvalidArgument, "mode must be auto or manual");
            c.body = SetMode{j.at("mode").get<SessionMode>()};
        } else if (kind == "Key") {
            const std::string d = j.at("direction").get<std::string>();
            static constexpr std::array<std::string_view, 8> dirs{"+x", "-x", "+y", "-y", "+z", "-z", "+axial", "-axial"};
            require(std::find(dirs.begin(), dirs.end(), d) != dirs.end(), ErrorCode::InvalidArgument,
                    "unknown key direction '" + d + "'");
            c.body = Key{j.at("direction").get<KeyDirection>()};
        } else if (kind == "Start") {
            c.body = Start{};
        } else if (kind == "Abort") {
            c.body = Abort{};
        } else if (kind == "Reset") {
            c.body = Reset{};
        } else {
            throw Error(ErrorCode::InvalidArgument, "unknown command '" + kind + "'");
        }
        return c;
    } catch (const json::exception& e) {
        throw Error(ErrorCode::InvalidArgument, e.what());
    }
}

inline ClientCommand parse_command_text(std::string_view text) {
    json j;
    try {
        j = json::parse(text);
    } catch (const json::exception& e) {
        throw Error(ErrorCode::InvalidArgument, e.what());
    }
    return parse_command(j);
}

// ---------------------------------------------------------- client queues

/// A message handed to a client, with the seqs dropped just before it.
struct Delivery {
    Message msg;
    std::vector<std::uint64_t> missed;
};

/// Bounded per-client outbox. When full, the oldest queued frame goes;
/// control messages are never dropped, so the queue can exceed its bound
/// only with those.
class ClientQueue {
public:
    explicit ClientQueue(std::size_t capacity = 32) : capacity_(std::max<std::size_t>(capacity, 1)) {}

    /// Called after every push, outside the lock; must not block.
    void set_notify(std::function<void()> f) {
        std::lock_guard lock(mu_);
        notify_ = std::move(f);
    }

    void push(const Message& m) {
        std::function<void()> notify;
        {
            std::lock_guard lock(mu_);
            push_locked(m);
            notify = notify_;
        }
        if (notify) notify();
    }

    std::optional<Delivery> pop() {
        std::lock_guard lock(mu_);
        if (q_.empty()) return std::nullopt;
        Delivery d{std::move(q_.front()), {}};
        q_.pop_front();
        std::sort(missed_.begin(), missed_.end());
        auto cut = std::lower_bound(missed_.begin(), missed_.end(), d.msg.seq);
        d.missed.assign(missed_.begin(), cut);
        missed_.erase(missed_.begin(), cut);
        return d;
    }

    std::size_t size() const {
        std::lock_guard lock(mu_);
        return q_.size();
    }
    std::size_t dropped() const {
        std::lock_guard lock(mu_);
        return dropped_;
    }

private:
    void push_locked(const Message& m) {
        if (q_.size() >= capacity_) {
            auto it = std::find_if(q_.begin(), q_.end(), [](const Message& x) { return is_frame(x.kind); });
            if (it != q_.end()) {
                missed_.push_back(it->seq);
                q_.erase(it);
                ++dropped_;
            } else if (is_frame(m.kind)) {
                missed_.push_back(m.seq);
                ++dropped_;
                return;
            }
        }
        q_.push_back(m);
    }

    mutable std::mutex mu_;
    std::size_t capacity_;
    std::deque<Message> q_;
    std::vector<std::uint64_t> missed_;
    std::size_t dropped_ = 0;
    std::function<void()> notify_;
};

// ---------------------------------------------------------------- session

struct SessionConfig {
    std::size_t trial_id = 0;
    std::optional<std::uint64_t> master_seed;  // defaults to the scenario seed
    SessionMode mode = SessionMode::Auto;
    std::size_t queue_capacity = 32;
    double grace_s = 10.0;
};

class Session {
public:
    Session(harness::Scenario sc, SessionConfig cfg = {}) : sc_(std::move(sc)), cfg_(cfg) {
        sc_.validate();
        mode_ = cfg_.mode;
        begin_trial(cfg_.trial_id);
    }

    /// Thread-safe; commands apply one per tick in arrival order.
    void submit(ClientCommand c) {
        std::lock_guard lock(mu_);
        inbox_.push_back(std::move(c));
    }

    std::shared_ptr<ClientQueue> subscribe() {
        std::lock_guard lock(mu_);
        auto q = std::make_shared<ClientQueue>(cfg_.queue_capacity);
        subs_.push_back(q);
        detached_since_.reset();
        paused_ = false;
        return q;
    }

    void unsubscribe(const std::shared_ptr<ClientQueue>& q, Clock::time_point now = Clock::now()) {
        std::lock_guard lock(mu_);
        std::erase(subs_, q);
        if (subs_.empty()) detached_since_ = now;
    }

    /// Sessions without clients stop ticking once the grace period runs out
    /// and stay paused until someone subscribes again.
    bool paused(Clock::time_point now = Clock::now()) {
        std::lock_guard lock(mu_);
        if (!paused_ && detached_since_ &&
            std::chrono::duration<double>(now - *detached_since_).count() >= cfg_.grace_s)
            paused_ = true;
        return paused_;
    }

    /// Runs one tick and returns what it broadcast.
    std::vector<Message> tick() {
        std::lock_guard lock(mu_);
        std::vector<Message> out;
        const control::Phase before = ctrl_.phase;
        std::optional<world::MotionCommand> manual_cmd;
        if (!inbox_.empty()) {
            ClientCommand c = std::move(inbox_.front());
            inbox_.pop_front();
            manual_cmd = apply(c, out);
        }
        const double t0 = world_.t;

        imaging::MicroscopeFrame mf = mic_.render(world_);
        mf.image = imaging::apply_artifacts(mf.image, setup_.artifacts.microscope, mf.t);
        auto mic_img = std::make_shared<const GrayImage>(mf.image);
        mic_seq_ = emit(out, MessageKind::FrameMicroscope, t0, json{{"width", mf.width()}, {"height", mf.height()}},
                        mic_img, mf.scale_mm_per_px);

        std::optional<imaging::BScanFrame> bf;
        try {
            bf = bscan_.render(world_, setup_.scanline);
            bf->image = imaging::apply_artifacts(bf->image, setup_.artifacts.bscan, bf->t);
            bscan_seq_ = emit(out, MessageKind::FrameBScan, t0, json{{"width", bf->width()}, {"height", bf->height()}},
                              std::make_shared<const GrayImage>(bf->image), bf->scale_mm_per_px);
        } catch (const rvc::Error& e) {
            if (e.code() != ErrorCode::ScanlineMissesROI) throw;
        }

        advance(mf, bf, manual_cmd, out);
        ++ticks_;
        emit(out, MessageKind::FsmState, world_.t, fsm_body(before), nullptr, 0.0);
        if (!control::is_terminal(before) && control::is_terminal(ctrl_.phase) && !result_sent_) {
            result_sent_ = true;
            emit(out, MessageKind::TrialResult, world_.t, result_body(), nullptr, 0.0);
        }
        for (auto& q : subs_)
            for (const Message& m : out) q->push(m);
        return out;
    }

    /// Everything a reconnecting client needs to draw the current state.
    /// Pure: two calls without a tick in between give the same document.
    json snapshot() const {
        std::lock_guard lock(mu_);
        json j{{"trial_id", setup_.trial_id},
               {"seed", setup_.seed},
               {"mode", mode_},
               {"phase", ctrl_.phase},
               {"controller", ctrl_},
               {"timers", ctrl_.timers},
               {"ticks", ticks_},
               {"t", world_.t},
               {"seq", next_seq_},
               {"frame_seqs", {{"microscope", mic_seq_}, {"bscan", bscan_seq_}}},
               {"last", last_},
               {"pending_target", pending_target_},
               {"suggested_target_px", setup_.target_px},
               {"tip_px", harness::xy_to_px(setup_.microscope, world_.needle.tip.xy())},
               {"dt", setup_.dt}};
        if (control::is_terminal(ctrl_.phase)) j["result"] = result_body();
        return j;
    }

    control::Phase phase() const {
        std::lock_guard lock(mu_);
        return ctrl_.phase;
    }
    SessionMode mode() const {
        std::lock_guard lock(mu_);
        return mode_;
    }
    double dt() const { return sc_.dt; }
    world::WorldState world() const {
        std::lock_guard lock(mu_);
        return world_;
    }
    control::ControllerState controller() const {
        std::lock_guard lock(mu_);
        return ctrl_;
    }
    std::size_t subscribers() const {
        std::lock_guard lock(mu_);
        return subs_.size();
    }

private:
    void begin_trial(std::size_t trial_id) {
        const std::uint64_t master = cfg_.master_seed.value_or(sc_.seed);
        setup_ = harness::make_trial(sc_, trial_id, harness::trial_seed(master, trial_id), harness::Mode::Autonomous);
        world_ = setup_.world;
        mic_ = imaging::MicroscopeRenderer(setup_.microscope);
        bscan_ = imaging::BScanRenderer(setup_.bscan);
        ctrl_ = {};
        pending_target_.reset();
        gt_.reset();
        last_ = json::object();
        result_sent_ = false;
    }

    std::uint64_t emit(std::vector<Message>& out, MessageKind kind, double t, json body,
                       std::shared_ptr<const GrayImage> frame, double scale) {
        out.push_back(Message{kind, next_seq_, t, std::move(frame), scale, std::move(body)});
        return next_seq_++;
    }

    void reject(std::vector<Message>& out, const ClientCommand& c, std::string_view what) {
        emit(out, MessageKind::Error, world_.t,
             json{{"message", what}, {"command", command_name(c.body)}, {"command_seq", c.seq}}, nullptr, 0.0);
    }

    /// Applies one command; a key press in manual mode returns the motion
    /// for this tick.
    std::optional<world::MotionCommand> apply(const ClientCommand& c, std::vector<Message>& out) {
        using control::Phase;
        const Phase p = ctrl_.phase;
        try {
            if (auto* st = std::get_if<SetTarget>(&c.body)) {
                if (p != Phase::Idle && p != Phase::Navigating) {
                    reject(out, c, "target accepted only before or during navigation");
                    return std::nullopt;
                }
                if (p == Phase::Idle) {
                    // Validates without leaving Idle; Start commits it.
                    (void)control::set_target(ctrl_, st->px, setup_.controller);
                    pending_target_ = st->px;
                } else {
                    ctrl_ = control::set_target(ctrl_, st->px, setup_.controller);
                }
            } else if (auto* sm = std::get_if<SetMode>(&c.body)) {
                mode_ = sm->mode;
            } else if (auto* k = std::get_if<Key>(&c.body)) {
                if (mode_ != SessionMode::Manual) {
                    reject(out, c, "manual-only command");
                    return std::nullopt;
                }
                if (control::is_terminal(p)) {
                    reject(out, c, "trial finished; send Reset");
                    return std::nullopt;
                }
                acked_ = c.seq;
                return key_motion(k->direction);
            } else if (std::holds_alternative<Start>(c.body)) {
                if (p != Phase::Idle) {
                    reject(out, c, "Start is accepted only in Idle");
                    return std::nullopt;
                }
                if (!pending_target_) {
                    reject(out, c, "no target set");
                    return std::nullopt;
                }
                ctrl_ = control::set_target(ctrl_, *pending_target_, setup_.controller);
            } else if (std::holds_alternative<Abort>(c.body)) {
                if (p == Phase::Idle || control::is_terminal(p)) {
                    reject(out, c, "no trial running");
                    return std::nullopt;
                }
                ctrl_.phase = Phase::Aborted;
                ctrl_.abort_reason = "UserAbort";
                finish_ground_truth();
            } else if (std::holds_alternative<Reset>(c.body)) {
                begin_trial(setup_.trial_id + 1);
            }
        } catch (const rvc::Error& e) {
            reject(out, c, e.what());
            return std::nullopt;
        }
        acked_ = c.seq;
        return std::nullopt;
    }

    world::MotionCommand key_motion(KeyDirection d) const {
        const double step = sc_.op.key_step_mm;
        const double dt = setup_.dt;
        const double v = std::min(step / dt, world_.physics.v_max_mm_s);
        switch (d) {
            case KeyDirection::PlusX: return world::PlanarVelocity{v, 0.0};
            case KeyDirection::MinusX: return world::PlanarVelocity{-v, 0.0};
            case KeyDirection::PlusY: return world::PlanarVelocity{0.0, v};
            case KeyDirection::MinusY: return world::PlanarVelocity{0.0, -v};
            case KeyDirection::PlusZ: return world::ZStep{std::min(step, world_.physics.z_step_cap_mm)};
            case KeyDirection::MinusZ: return world::ZStep{-std::min(step, world_.physics.z_step_cap_mm)};
            case KeyDirection::PlusAxial:
                return world::AxialInsertion{setup_.controller.insertion_speed_mm_s, step};
            case KeyDirection::MinusAxial:
                return world::AxialInsertion{-setup_.controller.insertion_speed_mm_s, step};
        }
        return world::Hold{};
    }

    void finish_ground_truth() {
        if (gt_) return;
        auto [v, w] = world::inject_air(world_);
        gt_ = v;
        world_ = w;
    }

    void advance(const imaging::MicroscopeFrame& mf, const std::optional<imaging::BScanFrame>& bf,
                 const std::optional<world::MotionCommand>& manual_cmd, std::vector<Message>& out) {
        using control::Phase;
        const double dt = setup_.dt;
        const Phase p = ctrl_.phase;
        world::MotionCommand cmd = world::Hold{};
        const bool running = p != Phase::Idle && !control::is_terminal(p);

        if (running && mode_ == SessionMode::Auto) {
            control::Percepts in;
            switch (control::required_percept(p)) {
                case control::PerceptKind::Tip:
                    try {
                        perception::TipDetectorConfig tc;
                        tc.azimuth = world_.needle.azimuth();
                        in.tip = perception::detect_tip(mf, tc);
                        last_["tip"] = *in.tip;
                    } catch (const rvc::Error& e) {
                        if (e.code() != ErrorCode::NoNeedleDetected) throw;
                        in.failure = e.code();
                    }
                    break;
                case control::PerceptKind::Contact:
                case control::PerceptKind::Puncture:
                    try {
                        require(bf.has_value(), ErrorCode::NeedleNotInScan, "no B-scan this tick");
                        if (control::required_percept(p) == control::PerceptKind::Contact) {
                            in.contact = perception::classify_contact(*bf, setup_.controller.contact_threshold);
                            last_["contact"] = *in.contact;
                        } else {
                            in.puncture = perception::detect_puncture(*bf, setup_.controller.puncture_conf_min);
                            last_["puncture"] = *in.puncture;
                        }
                    } catch (const rvc::Error& e) {
                        if (e.code() != ErrorCode::NeedleNotInScan) throw;
                        in.failure = e.code();
                    }
                    break;
                case control::PerceptKind::None: break;
            }
            if (in.failure) last_["failure"] = std::string(to_string(*in.failure));
            auto [c, next] = control::tick(ctrl_, setup_.controller, in, world_.needle.tip, dt);
            cmd = c;
            ctrl_ = next;
        } else if (running) {
            if (p == Phase::Navigating) {
                ctrl_.timers.navigation_s += dt;
                ++ctrl_.navigation_ticks;
            } else {
                ctrl_.timers.puncture_s += dt;
            }
            if (manual_cmd) cmd = *manual_cmd;
        }

        try {
            world_ = world::step(world_, cmd, dt);
        } catch (const rvc::Error& e) {
            if (running && mode_ == SessionMode::Manual) {
                emit(out, MessageKind::Error, world_.t, json{{"message", e.what()}, {"command", "Key"}}, nullptr, 0.0);
                world_ = world::step(world_, world::Hold{}, dt);
            } else {
                ctrl_.phase = Phase::Aborted;
                ctrl_.abort_reason = std::string(to_string(e.code()));
                world_ = world::step(world_, world::Hold{}, dt);
            }
        }
        last_["cmd"] = cmd;
        if (ctrl_.phase == Phase::FullRetract || ctrl_.phase == Phase::Aborted) finish_ground_truth();
    }

    json fsm_body(control::Phase before) const {
        json j{{"phase", ctrl_.phase},
               {"previous", before},
               {"mode", mode_},
               {"trial_id", setup_.trial_id},
               {"attempts", ctrl_.attempts},
               {"timers", ctrl_.timers},
               {"target_px", ctrl_.target_px ? ctrl_.target_px : pending_target_},
               {"tip_px", harness::xy_to_px(setup_.microscope, world_.needle.tip.xy())},
               {"tissue", world_.tissue.phase},
               {"ack", acked_},
               {"frame_seqs", {{"microscope", mic_seq_}, {"bscan", bscan_seq_}}},
               {"last", last_}};
        if (!ctrl_.abort_reason.empty()) j["abort_reason"] = ctrl_.abort_reason;
        return j;
    }

    json result_body() const {
        const bool truth = gt_ && gt_->success;
        return json{{"trial_id", setup_.trial_id},
                    {"seed", setup_.seed},
                    {"mode", mode_},
                    {"phase", ctrl_.phase},
                    {"navigation_s", harness::round_us(ctrl_.timers.navigation_s)},
                    {"puncture_s", harness::round_us(ctrl_.timers.puncture_s)},
                    {"attempts", ctrl_.attempts},
                    {"verdict", ctrl_.puncture_claimed ? 1 : 0},
                    {"ground_truth", truth ? 1 : 0},
                    {"outcome_class", harness::outcome_class(ctrl_.puncture_claimed, truth)},
                    {"abort_reason", ctrl_.abort_reason},
                    {"ground_truth_reason", gt_ ? gt_->reason : world::InjectionReason::NoPuncture}};
    }

    mutable std::mutex mu_;
    harness::Scenario sc_;
    SessionConfig cfg_;
    SessionMode mode_ = SessionMode::Auto;
    harness::TrialSetup setup_;
    world::WorldState world_;
    imaging::MicroscopeRenderer mic_;
    imaging::BScanRenderer bscan_;
    control::ControllerState ctrl_;
    std::optional<Vec2> pending_target_;
    std::optional<world::VerdictGroundTruth> gt_;
    std::deque<ClientCommand> inbox_;
    std::vector<std::shared_ptr<ClientQueue>> subs_;
    std::optional<Clock::time_point> detached_since_;
    bool paused_ = false;
    bool result_sent_ = false;
    std::uint64_t next_seq_ = 0;
    std::optional<std::uint64_t> mic_seq_;
    std::optional<std::uint64_t> bscan_seq_;
    std::optional<std::uint64_t> acked_;
    long long ticks_ = 0;
    json last_ = json::object();
};

// ---------------------------------------------------------------- registry

/// 128 random bits as 32 hex digits.
inline std::string make_token() {
    std::random_device rd;
    std::string s;
    for (int i = 0; i < 4; ++i) {
        char buf[9];
        std::snprintf(buf, sizeof buf, "%08x", static_cast<unsigned>(rd()));
        s += buf;
    }
    return s;
}

class SessionRegistry {
public:
    explicit SessionRegistry(std::size_t max_sessions = 4) : max_(max_sessions) {}

    std::pair<std::string, std::shared_ptr<Session>> create(const harness::Scenario& sc, SessionConfig cfg = {}) {
        std::lock_guard lock(mu_);
        require(sessions_.size() < max_, ErrorCode::SessionLimitReached,
                "at most " + std::to_string(max_) + " sessions");
        std::string token = make_token();
        while (sessions_.count(token)) token = make_token();
        auto s = std::make_shared<Session>(sc, cfg);
        sessions_.emplace(token, s);
        return {token, s};
    }

    std::shared_ptr<Session> find(const std::string& token) const {
        std::lock_guard lock(mu_);
        auto it = sessions_.find(token);
        require(it != sessions_.end(), ErrorCode::UnknownSession, "no session for this token");
        return it->second;
    }

    json snapshot(const std::string& token) const { return find(token)->snapshot(); }

    void remove(const std::string& token) {
        std::lock_guard lock(mu_);
        sessions_.erase(token);
    }

    std::size_t size() const {
        std::lock_guard lock(mu_);
        return sessions_.size();
    }

    std::vector<std::pair<std::string, std::shared_ptr<Session>>> all() const {
        std::lock_guard lock(mu_);
        return {sessions_.begin(), sessions_.end()};
    }

private:
    mutable std::mutex mu_;
    std::size_t max_;
    std::map<std::string, std::shared_ptr<Session>> sessions_;
};

}  // namespace rvc::service
