#include "infer_server.hpp"

#include <cstring>
#include <spdlog/spdlog.h>
#include <sys/socket.h>

#include "lens/bytes.hpp"
#include "lens/error.hpp"

namespace lens::detail {

namespace asio = boost::asio;
using asio::ip::tcp;

namespace {

constexpr int kMaxFrameSide = 4096;
constexpr std::size_t kFrameHeaderBytes = 4 + 8 + 2 + 2 + 1;

struct ProtocolViolation : Error {
    using Error::Error;
};

}  // namespace

InferServer::InferServer(std::shared_ptr<const ModelBundle> bundle, const std::string& host, int port)
    : bundle_(std::move(bundle)), acceptor_(io_) {
    const tcp::endpoint ep(asio::ip::make_address(host), static_cast<unsigned short>(port));
    acceptor_.open(ep.protocol());
    acceptor_.set_option(tcp::acceptor::reuse_address(true));
    acceptor_.bind(ep);
    acceptor_.listen();
    port_ = acceptor_.local_endpoint().port();
}

InferServer::~InferServer() { stop(); }

void InferServer::start() {
    accept_thread_ = std::thread([this] { accept_loop(); });
}

void InferServer::stop() {
    if (stopping_.exchange(true)) return;
    ::shutdown(acceptor_.native_handle(), SHUT_RDWR);
    if (accept_thread_.joinable()) accept_thread_.join();
    boost::system::error_code ec;
    acceptor_.close(ec);
    std::vector<std::thread> workers;
    {
        std::lock_guard lock(mu_);
        for (auto& s : sockets_) s->shutdown(tcp::socket::shutdown_both, ec);
        workers.swap(workers_);
    }
    for (auto& t : workers) t.join();
}

void InferServer::accept_loop() {
    while (!stopping_) {
        auto socket = std::make_shared<tcp::socket>(io_);
        boost::system::error_code ec;
        acceptor_.accept(*socket, ec);
        if (ec || stopping_) break;
        std::lock_guard lock(mu_);
        sockets_.push_back(socket);
        workers_.emplace_back([this, socket] { serve(socket); });
    }
}

void InferServer::serve(std::shared_ptr<tcp::socket> socket) {
    ++connections_;
    std::string camera = "?";
    auto read_exact = [&](void* dst, std::size_t n) -> bool {
        boost::system::error_code ec;
        asio::read(*socket, asio::buffer(dst, n), ec);
        if (ec == asio::error::eof && n > 0) return false;
        if (ec) throw boost::system::system_error(ec);
        return true;
    };
    try {
        socket->set_option(tcp::no_delay(true));
        std::array<std::uint8_t, 6> head{};
        if (!read_exact(head.data(), head.size())) throw boost::system::system_error(asio::error::eof);
        if (std::memcmp(head.data(), "LENS", 4) != 0) throw ProtocolViolation("bad magic");
        if (head[4] != kStreamVersion) throw ProtocolViolation("unsupported stream version " + std::to_string(head[4]));
        if (head[5] == 0) throw ProtocolViolation("empty camera id");
        camera.assign(head[5], '\0');
        read_exact(camera.data(), camera.size());
        if (!bundle_) throw ProtocolViolation("cloud inference has no models loaded");
        spdlog::info("cloud inference: camera {} connected", camera);

        FramePipeline pipeline(bundle_);
        std::array<std::uint8_t, kFrameHeaderBytes> fh{};
        std::uint64_t frames = 0;
        while (read_exact(fh.data(), fh.size())) {
            ByteReader r(fh);
            const std::uint32_t index = r.u32();
            const std::uint64_t ts = r.u64();
            const int w = r.u16(), h = r.u16();
            const std::uint8_t pixfmt = r.u8();
            if (pixfmt != 0) throw ProtocolViolation("unsupported pixel format " + std::to_string(pixfmt));
            if (w < 1 || h < 1 || w > kMaxFrameSide || h > kMaxFrameSide)
                throw ProtocolViolation("frame size " + std::to_string(w) + "x" + std::to_string(h) + " out of range");
            Frame frame(w, h, index, static_cast<std::uint32_t>(ts));
            if (!read_exact(frame.pixels.data(), frame.pixels.size())) throw ProtocolViolation("truncated frame payload");
            const FrameResult result = pipeline.push(frame);
            asio::write(*socket, asio::buffer(encode_score_message(index, result.scores)));
            ++frames;
        }
        spdlog::info("cloud inference: camera {} done after {} frames", camera, frames);
    } catch (const ProtocolViolation& e) {
        spdlog::error("cloud inference: camera {}: protocol violation: {}", camera, e.what());
        boost::system::error_code ec;
        asio::write(*socket, asio::buffer(encode_diagnostic(e.what())), ec);
    } catch (const boost::system::system_error& e) {
        if (!stopping_) spdlog::warn("cloud inference: camera {}: connection error: {}", camera, e.what());
    } catch (const std::exception& e) {
        spdlog::error("cloud inference: camera {}: {}", camera, e.what());
        boost::system::error_code ec;
        asio::write(*socket, asio::buffer(encode_diagnostic(e.what())), ec);
    }
    std::lock_guard lock(mu_);
    boost::system::error_code ec;
    socket->shutdown(tcp::socket::shutdown_both, ec);
    socket->close(ec);
    std::erase(sockets_, socket);
}

}  // namespace lens::detail
