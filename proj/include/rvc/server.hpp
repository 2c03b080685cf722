#pragma once

// WebSocket front end for service::Session. Control travels as JSON text
// frames; images go out as binary frames with a fixed little-endian header.

#include <algorithm>
#include <atomic>
#include <chrono>
#include <cstdint>
#include <cstring>
#include <deque>
#include <iostream>
#include <memory>
#include <span>
#include <string>
#include <thread>
#include <vector>

#include <boost/asio.hpp>
#include <boost/beast/core.hpp>
#include <boost/beast/http.hpp>
#include <boost/beast/websocket.hpp>

#include "rvc/error.hpp"
#include "rvc/service.hpp"

namespace rvc::service {

// ------------------------------------------------------------ frame codec

inline constexpr std::array<char, 4> frame_magic{'R', 'V', 'C', 'F'};
inline constexpr std::uint16_t frame_version = 1;
inline constexpr std::size_t frame_header_size = 44;

namespace detail {

template <class T>
void put_le(std::vector<std::uint8_t>& out, T v) {
    std::uint64_t bits = 0;
    std::memcpy(&bits, &v, sizeof(T));
    for (std::size_t i = 0; i < sizeof(T); ++i) out.push_back(static_cast<std::uint8_t>(bits >> (8 * i)));
}

template <class T>
T get_le(std::span<const std::uint8_t> in, std::size_t off) {
    std::uint64_t bits = 0;
    for (std::size_t i = 0; i < sizeof(T); ++i) bits |= std::uint64_t(in[off + i]) << (8 * i);
    T v;
    std::memcpy(&v, &bits, sizeof(T));
    return v;
}

}  // namespace detail

/// Layout: magic "RVCF", u16 version, u16 kind (0 microscope, 1 B-scan),
/// u32 width, u32 height, f64 scale (mm/px), u64 seq, f64 t, u32 payload
/// length, then width*height row-major 8-bit pixels.
inline std::vector<std::uint8_t> encode_frame(const Message& m) {
    require(is_frame(m.kind) && m.frame, ErrorCode::InvalidArgument, "not a frame message");
    const GrayImage& img = *m.frame;
    std::vector<std::uint8_t> out;
    out.reserve(frame_header_size + img.size());
    out.insert(out.end(), frame_magic.begin(), frame_magic.end());
    detail::put_le<std::uint16_t>(out, frame_version);
    detail::put_le<std::uint16_t>(out, m.kind == MessageKind::FrameMicroscope ? 0 : 1);
    detail::put_le<std::uint32_t>(out, static_cast<std::uint32_t>(img.width()));
    detail::put_le<std::uint32_t>(out, static_cast<std::uint32_t>(img.height()));
    detail::put_le<double>(out, m.scale_mm_per_px);
    detail::put_le<std::uint64_t>(out, m.seq);
    detail::put_le<double>(out, m.t);
    detail::put_le<std::uint32_t>(out, static_cast<std::uint32_t>(img.size()));
    const auto px = img.pixels();
    out.insert(out.end(), px.begin(), px.end());
    return out;
}

inline Message decode_frame(std::span<const std::uint8_t> in) {
    require(in.size() >= frame_header_size && std::equal(frame_magic.begin(), frame_magic.end(), in.begin()),
            ErrorCode::InvalidArgument, "not an RVCF frame");
    require(detail::get_le<std::uint16_t>(in, 4) == frame_version, ErrorCode::InvalidArgument,
            "unsupported frame version");
    const auto kind = detail::get_le<std::uint16_t>(in, 6);
    require(kind <= 1, ErrorCode::InvalidArgument, "unknown frame kind");
    const auto w = detail::get_le<std::uint32_t>(in, 8);
    const auto h = detail::get_le<std::uint32_t>(in, 12);
    const auto len = detail::get_le<std::uint32_t>(in, 40);
    require(std::uint64_t(w) * h == len && in.size() == frame_header_size + len, ErrorCode::InvalidArgument,
            "frame payload length mismatch");
    Message m;
    m.kind = kind == 0 ? MessageKind::FrameMicroscope : MessageKind::FrameBScan;
    m.scale_mm_per_px = detail::get_le<double>(in, 16);
    m.seq = detail::get_le<std::uint64_t>(in, 24);
    m.t = detail::get_le<double>(in, 32);
    GrayImage img(static_cast<int>(w), static_cast<int>(h));
    std::copy(in.begin() + frame_header_size, in.end(), img.pixels().begin());
    m.frame = std::make_shared<const GrayImage>(std::move(img));
    m.body = json{{"width", w}, {"height", h}};
    return m;
}

/// Wire form of a delivery: an optional gap notice, then the message.
struct WireFrame {
    bool binary = false;
    std::shared_ptr<const std::vector<std::uint8_t>> bytes;
};

inline std::vector<WireFrame> to_wire(const Delivery& d) {
    auto text = [](const json& j) {
        const std::string s = j.dump();
        return WireFrame{false, std::make_shared<const std::vector<std::uint8_t>>(s.begin(), s.end())};
    };
    std::vector<WireFrame> out;
    if (!d.missed.empty()) out.push_back(text(json{{"kind", "Gap"}, {"missed", d.missed}}));
    if (is_frame(d.msg.kind))
        out.push_back(WireFrame{true, std::make_shared<const std::vector<std::uint8_t>>(encode_frame(d.msg))});
    else
        out.push_back(text(envelope(d.msg)));
    return out;
}

// ----------------------------------------------------------------- server

struct ServerOptions {
    std::string address = "127.0.0.1";
    unsigned short port = 8080;  // 0 picks a free port
    bool realtime = true;        // throttle to dt of wall clock per tick
    std::size_t max_sessions = 4;
    std::size_t io_threads = 2;
    SessionConfig session;
};

namespace net = boost::asio;
namespace beast = boost::beast;
namespace websocket = boost::beast::websocket;
namespace http = boost::beast::http;

class Server;

class Connection : public std::enable_shared_from_this<Connection> {
public:
    Connection(net::ip::tcp::socket socket, Server& server) : ws_(std::move(socket)), server_(server) {}

    void start() {
        http::async_read(ws_.next_layer(), buffer_, req_,
                         beast::bind_front_handler(&Connection::on_request, shared_from_this()));
    }

    /// Safe from any thread; schedules a drain of the client queue.
    void kick() {
        net::post(ws_.get_executor(), [self = shared_from_this()] { self->drain(); });
    }

private:
    void on_request(beast::error_code ec, std::size_t);
    void on_accept(beast::error_code ec);

    void do_read() {
        ws_.async_read(buffer_, beast::bind_front_handler(&Connection::on_read, shared_from_this()));
    }

    void on_read(beast::error_code ec, std::size_t) {
        if (ec) return close();
        const std::string text = beast::buffers_to_string(buffer_.data());
        buffer_.consume(buffer_.size());
        if (ws_.got_text()) {
            try {
                session_->submit(parse_command_text(text));
            } catch (const rvc::Error& e) {
                send_direct(json{{"kind", "Error"}, {"seq", nullptr}, {"body", {{"message", e.what()}}}});
            }
        }
        do_read();
    }

    void send_direct(const json& j) {
        const std::string s = j.dump();
        outbox_.push_back(WireFrame{false, std::make_shared<const std::vector<std::uint8_t>>(s.begin(), s.end())});
        write_next();
    }

    void drain() {
        if (closed_ || !queue_) return;
        while (outbox_.size() < 4) {
            auto d = queue_->pop();
            if (!d) break;
            for (auto& w : to_wire(*d)) outbox_.push_back(std::move(w));
        }
        write_next();
    }

    void write_next() {
        if (writing_ || outbox_.empty() || closed_) return;
        writing_ = true;
        ws_.binary(outbox_.front().binary);
        ws_.async_write(net::buffer(*outbox_.front().bytes),
                        beast::bind_front_handler(&Connection::on_write, shared_from_this()));
    }

    void on_write(beast::error_code ec, std::size_t) {
        writing_ = false;
        if (ec) return close();
        outbox_.pop_front();
        if (close_after_write_ && outbox_.empty()) {
            ws_.async_close(websocket::close_code::policy_error, [self = shared_from_this()](beast::error_code) {});
            return;
        }
        drain();
    }

    void close();

    websocket::stream<beast::tcp_stream> ws_;
    Server& server_;
    beast::flat_buffer buffer_;
    http::request<http::string_body> req_;
    std::shared_ptr<Session> session_;
    std::shared_ptr<ClientQueue> queue_;
    std::deque<WireFrame> outbox_;
    bool writing_ = false;
    bool closed_ = false;
    bool close_after_write_ = false;
};

class Server {
public:
    /// Binds immediately; BindFailure if the address or port is unusable.
    Server(harness::Scenario sc, ServerOptions opt)
        : sc_(std::move(sc)), opt_(opt), registry_(opt.max_sessions), acceptor_(net::make_strand(ioc_)) {
        sc_.validate();
        beast::error_code ec;
        const auto addr = net::ip::make_address(opt_.address, ec);
        if (ec) throw Error(ErrorCode::BindFailure, "bad address '" + opt_.address + "': " + ec.message());
        const net::ip::tcp::endpoint ep{addr, opt_.port};
        acceptor_.open(ep.protocol(), ec);
        if (!ec) acceptor_.set_option(net::socket_base::reuse_address(true), ec);
        if (!ec) acceptor_.bind(ep, ec);
        if (!ec) acceptor_.listen(net::socket_base::max_listen_connections, ec);
        if (ec)
            throw Error(ErrorCode::BindFailure,
                        "cannot listen on " + opt_.address + ":" + std::to_string(opt_.port) + ": " + ec.message());
    }

    ~Server() { stop(); }

    unsigned short port() const { return acceptor_.local_endpoint().port(); }
    SessionRegistry& registry() { return registry_; }

    /// Blocks until stop().
    void run() {
        do_accept();
        std::vector<std::thread> pool;
        for (std::size_t i = 1; i < std::max<std::size_t>(opt_.io_threads, 1); ++i) pool.emplace_back([this] { ioc_.run(); });
        ioc_.run();
        for (auto& t : pool) t.join();
        join_loops();
    }

    void stop() {
        stopping_ = true;
        ioc_.stop();
        join_loops();
    }

    /// Opens a session and starts its sim loop.
    std::pair<std::string, std::shared_ptr<Session>> open_session() {
        auto [token, s] = registry_.create(sc_, opt_.session);
        std::lock_guard lock(loops_mu_);
        loops_.emplace_back([this, s = s] { sim_loop(s); });
        return {token, s};
    }

private:
    friend class Connection;

    void do_accept() {
        acceptor_.async_accept(net::make_strand(ioc_), [this](beast::error_code ec, net::ip::tcp::socket socket) {
            if (ec) {
                if (ec == net::error::operation_aborted) return;
            } else {
                std::make_shared<Connection>(std::move(socket), *this)->start();
            }
            do_accept();
        });
    }

    /// Never blocks on clients: ticks push into bounded queues.
    void sim_loop(std::shared_ptr<Session> s) {
        const auto period = std::chrono::duration_cast<Clock::duration>(std::chrono::duration<double>(s->dt()));
        auto next = Clock::now();
        while (!stopping_) {
            if (s->paused()) {
                std::this_thread::sleep_for(std::chrono::milliseconds(50));
                next = Clock::now();
                continue;
            }
            try {
                s->tick();
            } catch (const std::exception& e) {
                std::cerr << "session loop stopped: " << e.what() << "\n";
                return;
            }
            if (opt_.realtime) {
                next += period;
                std::this_thread::sleep_until(next);
            } else if (s->subscribers() == 0) {
                std::this_thread::sleep_for(std::chrono::milliseconds(1));
            } else {
                std::this_thread::yield();
            }
        }
    }

    void join_loops() {
        std::vector<std::thread> loops;
        {
            std::lock_guard lock(loops_mu_);
            loops.swap(loops_);
        }
        for (auto& t : loops)
            if (t.joinable()) t.join();
    }

    harness::Scenario sc_;
    ServerOptions opt_;
    SessionRegistry registry_;
    net::io_context ioc_;
    net::ip::tcp::acceptor acceptor_;
    std::atomic<bool> stopping_{false};
    std::mutex loops_mu_;
    std::vector<std::thread> loops_;
};

/// Value of `key` in the request target's query string, or "".
inline std::string query_param(std::string_view target, std::string_view key) {
    auto it = std::find(target.begin(), target.end(), '?');
    while (it != target.end()) {
        const auto begin = it + 1;
        const auto end = std::find(begin, target.end(), '&');
        const auto eq = std::find(begin, end, '=');
        if (eq != end && std::string_view(&*begin, std::size_t(eq - begin)) == key)
            return std::string(eq + 1, end);
        it = end;
    }
    return {};
}

inline void Connection::on_request(beast::error_code ec, std::size_t) {
    if (ec || !websocket::is_upgrade(req_)) return;
    ws_.set_option(websocket::stream_base::timeout::suggested(beast::role_type::server));
    ws_.async_accept(req_, beast::bind_front_handler(&Connection::on_accept, shared_from_this()));
}

inline void Connection::on_accept(beast::error_code ec) {
    if (ec) return;
    const std::string target(req_.target());
    const std::string token_in = query_param(target, "token");
    std::string token = token_in;
    try {
        if (token.empty()) token = server_.open_session().first;
        session_ = server_.registry().find(token);
    } catch (const rvc::Error& e) {
        send_direct(json{{"kind", "Error"},
                         {"seq", nullptr},
                         {"body", {{"message", e.what()}, {"code", std::string(to_string(e.code()))}}}});
        close_after_write_ = true;
        return;
    }
    queue_ = session_->subscribe();
    std::weak_ptr<Connection> weak = shared_from_this();
    queue_->set_notify([weak] {
        if (auto self = weak.lock()) self->kick();
    });
    send_direct(json{{"kind", "Welcome"}, {"token", token}, {"resumed", !token_in.empty()}, {"snapshot", session_->snapshot()}});
    do_read();
}

inline void Connection::close() {
    if (closed_) return;
    closed_ = true;
    if (session_ && queue_) session_->unsubscribe(queue_);
    if (queue_) queue_->set_notify({});
}

}  // namespace rvc::service
