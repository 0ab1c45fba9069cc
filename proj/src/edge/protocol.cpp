#include <boost/asio.hpp>
#include <map>
#include <spdlog/spdlog.h>
#include <thread>

#include "lens/bytes.hpp"
#include "lens/edge.hpp"
#include "lens/error.hpp"

namespace lens {

namespace asio = boost::asio;
using asio::ip::tcp;

std::vector<std::uint8_t> encode_stream_header(std::string_view camera_id) {
    if (camera_id.empty() || camera_id.size() > 255) throw InvalidArgument("stream header: camera_id must be 1..255 bytes");
    ByteWriter w;
    w.text("LENS");
    w.u8(kStreamVersion);
    w.u8(static_cast<std::uint8_t>(camera_id.size()));
    w.text(camera_id);
    return std::move(w).take();
}

std::vector<std::uint8_t> encode_frame_message(const Frame& frame, std::uint64_t timestamp_ms) {
    if (frame.width <= 0 || frame.height <= 0 || frame.width > 0xFFFF || frame.height > 0xFFFF)
        throw InvalidArgument("frame message: invalid frame size");
    if (frame.pixels.size() != frame.byte_size()) throw InvalidArgument("frame message: pixel buffer size mismatch");
    ByteWriter w;
    w.u32(frame.index);
    w.u64(timestamp_ms);
    w.u16(static_cast<std::uint16_t>(frame.width));
    w.u16(static_cast<std::uint16_t>(frame.height));
    w.u8(0);
    w.bytes(frame.pixels);
    return std::move(w).take();
}

ScoreSet ScoreMessage::scores() const {
    ScoreSet s;
    for (std::size_t k = 0; k < 4; ++k) {
        s.spatial.probs[k] = values[k];
        s.temporal.probs[k] = values[4 + k];
        s.fused.probs[k] = values[8 + k];
    }
    return s;
}

std::vector<std::uint8_t> encode_score_message(std::uint32_t frame_index, const ScoreSet& scores) {
    ByteWriter w;
    w.u32(frame_index);
    for (const ClassScores* s : {&scores.spatial, &scores.temporal, &scores.fused})
        for (double p : s->probs) w.f32(static_cast<float>(p));
    return std::move(w).take();
}

ScoreMessage decode_score_message(std::span<const std::uint8_t> bytes) {
    ByteReader r(bytes);
    ScoreMessage m;
    m.frame_index = r.u32();
    for (float& v : m.values) v = r.f32();
    if (r.remaining() != 0) throw FormatError("trailing bytes in score message", r.offset());
    return m;
}

std::vector<std::uint8_t> encode_diagnostic(std::string_view message) {
    const auto text = message.substr(0, 0xFFFF);
    ByteWriter w;
    w.u32(kDiagnosticIndex);
    w.u16(static_cast<std::uint16_t>(text.size()));
    w.text(text);
    return std::move(w).take();
}

StreamReport stream_frames(FrameSource& source, const std::string& host, int port, const EdgeConfig& config,
                           const StreamOptions& options) {
    EdgeConfig cfg = config;
    cfg.validate();
    asio::io_context io;
    tcp::socket socket(io);
    try {
        tcp::resolver resolver(io);
        asio::connect(socket, resolver.resolve(host, std::to_string(port)));
    } catch (const boost::system::system_error& e) {
        throw Error("cloud inference endpoint " + host + ":" + std::to_string(port) + " unreachable: " + e.what());
    }
    socket.set_option(tcp::no_delay(true));
    if (options.socket_buffer_bytes > 0) socket.set_option(asio::socket_base::send_buffer_size(options.socket_buffer_bytes));
    asio::write(socket, asio::buffer(encode_stream_header(cfg.camera_id)));

    struct Outgoing {
        Frame frame;
        std::uint64_t timestamp_ms;
    };
    BoundedQueue<Outgoing> queue(options.queue_capacity, options.overflow);
    StreamReport report;
    std::mutex ts_mu;
    std::map<std::uint32_t, std::uint32_t> timestamps;
    std::exception_ptr send_error;

    std::thread sender([&] {
        try {
            while (auto item = queue.pop()) {
                {
                    std::lock_guard lock(ts_mu);
                    timestamps[item->frame.index] = item->frame.timestamp_ms;
                }
                asio::write(socket, asio::buffer(encode_frame_message(item->frame, item->timestamp_ms)));
                ++report.frames_sent;
            }
            socket.shutdown(tcp::socket::shutdown_send);
        } catch (...) {
            send_error = std::current_exception();
            queue.close();
        }
    });

    std::thread receiver([&] {
        std::array<std::uint8_t, kScoreMessageBytes> buf{};
        boost::system::error_code ec;
        for (;;) {
            asio::read(socket, asio::buffer(buf.data(), 4), ec);
            if (ec) break;
            ByteReader head(std::span<const std::uint8_t>(buf.data(), 4));
            if (head.u32() == kDiagnosticIndex) {
                std::array<std::uint8_t, 2> len{};
                asio::read(socket, asio::buffer(len), ec);
                if (ec) break;
                std::string text(static_cast<std::size_t>(len[0] | (len[1] << 8)), '\0');
                asio::read(socket, asio::buffer(text), ec);
                report.diagnostic = text;
                spdlog::warn("cloud inference closed the stream: {}", text);
                break;
            }
            asio::read(socket, asio::buffer(buf.data() + 4, kScoreMessageBytes - 4), ec);
            if (ec) break;
            const ScoreMessage m = decode_score_message(buf);
            FrameResult r{m.frame_index, 0, m.scores()};
            {
                std::lock_guard lock(ts_mu);
                if (auto it = timestamps.find(m.frame_index); it != timestamps.end()) {
                    r.timestamp_ms = it->second;
                    timestamps.erase(timestamps.begin(), std::next(it));
                }
            }
            if (options.on_result) options.on_result(r);
            report.results.push_back(r);
        }
        queue.close();
    });

    std::uint64_t position = 0;
    const auto stride = static_cast<std::uint64_t>(cfg.skip.stride());
    while (auto frame = source.next()) {
        if (options.on_ingest) options.on_ingest(*frame);
        if (position++ % stride != 0) continue;
        Frame f = cfg.reduced ? resize_frame(*frame, std::max(8, frame->width / 2), std::max(8, frame->height / 2)) : *frame;
        f.index = frame->index;
        f.timestamp_ms = frame->timestamp_ms;
        const std::uint64_t ts = f.timestamp_ms;
        if (!queue.push({std::move(f), ts})) break;
    }
    queue.close();
    sender.join();
    receiver.join();
    report.frames_dropped = queue.dropped();
    if (send_error && !report.diagnostic) std::rethrow_exception(send_error);
    return report;
}

}  // namespace lens
