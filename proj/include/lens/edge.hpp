#pragma once

#include <atomic>
#include <chrono>
#include <cstdint>
#include <deque>
#include <filesystem>
#include <functional>
#include <memory>
#include <nlohmann/json.hpp>
#include <optional>
#include <string>
#include <thread>
#include <vector>

#include "lens/fusion.hpp"
#include "lens/optflow.hpp"
#include "lens/queue.hpp"
#include "lens/streams.hpp"
#include "lens/videoio.hpp"

namespace lens {

struct Gps {
    double lat = 0.0;
    double lon = 0.0;
    bool valid() const;
};

struct ScoreSet {
    ClassScores spatial;
    ClassScores temporal;
    ClassScores fused;
};

struct CrimeEvent {
    std::string event_id;
    std::string camera_id;
    Gps gps;
    std::int64_t timestamp_ms = 0;
    ActionLabel label = ActionLabel::NoAction;
    double confidence = 0.0;
    ScoreSet scores;
    std::string clip_ref;
    bool short_clip = false;
};

nlohmann::json event_to_json(const CrimeEvent& event);

struct FieldError {
    std::string field;
    std::string message;
};

/// Checks a CrimeEvent JSON document; reports the dotted path of the first offending field.
std::optional<FieldError> validate_event_json(const nlohmann::json& j);
/// Throws InvalidArgument (message includes the field path) on invalid input.
CrimeEvent event_from_json(const nlohmann::json& j);

/// Random (version 4) UUID in canonical text form.
std::string make_uuid();
bool is_uuid(std::string_view text);

std::int64_t unix_ms_now();

// ---------------------------------------------------------------------------
// Configuration

enum class InferenceMode { Edge, Cloud };
std::string_view mode_name(InferenceMode mode);
InferenceMode parse_mode(std::string_view text);

struct RetryPolicy {
    std::chrono::milliseconds base{1000};
    std::chrono::milliseconds cap{60000};
    /// 0 retries forever.
    int max_attempts = 0;
    std::chrono::milliseconds delay_for(int failed_attempts) const;
};

struct EdgeConfig {
    std::string camera_id = "cam-0";
    Gps gps;
    InferenceMode mode = InferenceMode::Edge;
    SkipPolicy skip;
    bool reduced = false;
    double threshold = 0.5;
    int debounce_window = 3;
    std::int64_t cooldown_ms = 5000;
    double clip_seconds = 4.0;
    int fps = 30;
    std::string relay_url = "http://127.0.0.1:8080";
    std::string infer_host = "127.0.0.1";
    int infer_port = 8081;
    std::string auth_token;
    std::filesystem::path model_dir = "models";
    std::filesystem::path outbox_dir = "outbox";
    std::size_t queue_capacity = 8;
    RetryPolicy retry;

    /// Clamps the threshold into [0, 1] and checks the remaining fields.
    void validate();
};

/// Reads an edge TOML file. Unknown keys are ignored; missing keys keep their defaults.
EdgeConfig load_edge_config(const std::filesystem::path& path);

// ---------------------------------------------------------------------------
// Detection

struct DetectionState {
    int window = 3;
    std::int64_t cooldown_ms = 5000;
    std::deque<std::pair<int, double>> recent;  // (argmax, confidence)
    std::optional<std::int64_t> last_event_ms;
};

struct Detection {
    ActionLabel label = ActionLabel::NoAction;
    double confidence = 0.0;
};

/// Pushes one fused prediction. Fires when the window holds `window` predictions that share a
/// non-NoAction argmax, all with confidence >= threshold, and the cooldown has elapsed since the
/// previous firing. Firing clears the window.
std::optional<Detection> detect(DetectionState& state, const ClassScores& fused, double threshold, std::int64_t now_ms);

// ---------------------------------------------------------------------------
// Models and the per-frame pipeline

struct ModelBundle {
    StreamModel spatial;
    StreamModel temporal;
    SvmModel svm;
    /// Frames are resized to flow_side x flow_side before flow (0 keeps the native size).
    int flow_side = 32;
    Tvl1Params tvl1;

    int stack_length() const { return temporal.shape().input_channels / 2; }
    void validate() const;
};

/// Directory layout: spatial.lmdl, temporal.lmdl, fusion.lsvm, bundle.json.
void save_bundle(const ModelBundle& bundle, const std::filesystem::path& dir);
ModelBundle load_bundle(const std::filesystem::path& dir);

struct FrameResult {
    std::uint32_t frame_index = 0;
    std::uint32_t timestamp_ms = 0;
    ScoreSet scores;
};

/// Frame prepared for flow: resized to the bundle's flow side, halved again when reduced.
Frame flow_input(const Frame& frame, const ModelBundle& bundle, bool reduced);
/// L-deep stack of the most recent flows, zero-padded at the oldest end while fewer exist.
StackedFlow recent_stack(const std::deque<FlowField>& flows, int length, int width, int height);
ClassScores fuse_scores(const SvmModel& svm, const ClassScores& spatial, const ClassScores& temporal);

/// Sequential inference state for one camera: previous flow frame and the flow history.
class FramePipeline {
public:
    FramePipeline(std::shared_ptr<const ModelBundle> bundle, bool reduced = false);

    /// Flow against the previously seen frame; empty for the first frame.
    std::optional<FlowField> next_flow(const Frame& frame);
    /// Runs both streams and fusion, updating the flow history with `flow` first.
    ScoreSet score(const Frame& frame, std::optional<FlowField> flow);
    FrameResult push(const Frame& frame);

    const ModelBundle& bundle() const { return *bundle_; }

private:
    std::shared_ptr<const ModelBundle> bundle_;
    bool reduced_;
    std::optional<Frame> prev_;
    std::deque<FlowField> flows_;
    int flow_w_ = 0, flow_h_ = 0;
};

/// Offline reference: applies the skip policy to the whole clip, computes every flow up front
/// and scores each kept frame.
std::vector<FrameResult> batch_scores(const Clip& clip, const ModelBundle& bundle, SkipPolicy skip = {},
                                      bool reduced = false);

// ---------------------------------------------------------------------------
// Event assembly

struct AssembledEvent {
    CrimeEvent event;
    Clip clip;
};

/// Clip of clip_seconds * fps frames ending at the detection frame plus a fresh event.
AssembledEvent assemble_event(const Detection& detection, const FrameResult& frame, const RingBuffer& ring,
                              const EdgeConfig& config);

// ---------------------------------------------------------------------------
// Live pipeline

struct PipelineReport {
    std::vector<FrameResult> results;
    std::vector<CrimeEvent> events;
    std::uint64_t frames_ingested = 0;
    std::uint64_t frames_dropped = 0;
};

using EventSink = std::function<void(const AssembledEvent&)>;

/// Threaded edge-inference pipeline: ingest -> flow -> streams -> fusion/detect, connected by
/// bounded queues (drop-oldest for live sources, blocking for file sources).
PipelineReport run_pipeline(FrameSource& source, std::shared_ptr<const ModelBundle> bundle, const EdgeConfig& config,
                            const EventSink& on_event = {});

/// Source that replays a clip at its frame rate and reports itself as live.
class PacedSource : public FrameSource {
public:
    PacedSource(Clip clip, double speed = 1.0);
    std::optional<Frame> next() override;
    bool is_live() const override { return true; }

private:
    ClipSource inner_;
    int fps_;
    double speed_;
    std::chrono::steady_clock::time_point start_;
    std::uint64_t emitted_ = 0;
};

// ---------------------------------------------------------------------------
// Cloud-inference frame protocol

inline constexpr std::uint8_t kStreamVersion = 1;
inline constexpr std::uint32_t kDiagnosticIndex = 0xFFFFFFFFu;
inline constexpr std::size_t kScoreMessageBytes = 4 + 12 * 4;

std::vector<std::uint8_t> encode_stream_header(std::string_view camera_id);
std::vector<std::uint8_t> encode_frame_message(const Frame& frame, std::uint64_t timestamp_ms);

struct ScoreMessage {
    std::uint32_t frame_index = 0;
    std::array<float, 12> values{};
    ScoreSet scores() const;
};

std::vector<std::uint8_t> encode_score_message(std::uint32_t frame_index, const ScoreSet& scores);
ScoreMessage decode_score_message(std::span<const std::uint8_t> bytes);
/// Diagnostic sent before the server closes a connection: index 0xFFFFFFFF, u16 length, text.
std::vector<std::uint8_t> encode_diagnostic(std::string_view message);

struct StreamReport {
    std::vector<FrameResult> results;
    std::uint64_t frames_sent = 0;
    std::uint64_t frames_dropped = 0;
    std::optional<std::string> diagnostic;
};

struct StreamOptions {
    std::size_t queue_capacity = 8;
    Overflow overflow = Overflow::DropOldest;
    /// Kernel send buffer size for the socket; 0 keeps the system default.
    int socket_buffer_bytes = 0;
    /// Called for every frame pulled from the source, before the skip policy.
    std::function<void(const Frame&)> on_ingest;
    std::function<void(const FrameResult&)> on_result;
};

/// Sends frames from `source` (after the skip policy) to a cloud inference endpoint and
/// collects the per-frame score replies in order.
StreamReport stream_frames(FrameSource& source, const std::string& host, int port, const EdgeConfig& config,
                           const StreamOptions& options = {});

// ---------------------------------------------------------------------------
// Transmission

class RelayClient {
public:
    RelayClient(std::string base_url, std::string token);
    ~RelayClient();
    RelayClient(const RelayClient&) = delete;
    RelayClient& operator=(const RelayClient&) = delete;

    struct Response {
        int status = 0;  // 0 when the request did not reach the server
        std::string body;
    };
    Response upload_clip(std::span<const std::uint8_t> lclip);
    Response post_event(const nlohmann::json& event);
    Response get(const std::string& path);

private:
    struct Impl;
    std::unique_ptr<Impl> impl_;
};

enum class TransmitStatus { Acknowledged, DeadLettered, GaveUp };

struct TransmitOutcome {
    TransmitStatus status = TransmitStatus::GaveUp;
    int http_status = 0;
    int attempts = 0;
    std::string event_id;
    std::string clip_ref;
    std::string error;
};

/// Uploads the clip, then posts the event with the returned clip_ref. Network failures and
/// 5xx responses are retried with exponential backoff; a 4xx response is final. `wait` replaces
/// the backoff sleep when given and returning false abandons delivery.
TransmitOutcome transmit(CrimeEvent event, std::span<const std::uint8_t> lclip, RelayClient& client,
                         const RetryPolicy& retry,
                         const std::function<bool(std::chrono::milliseconds)>& wait = {});

/// Persistent outbox: each queued event is written to `<dir>/pending/<id>.json` plus its clip
/// before delivery; 4xx rejections move to `<dir>/dead/`. Pending items found on start are
/// resent. A single worker thread delivers in order.
class Transmitter {
public:
    Transmitter(std::filesystem::path dir, std::string relay_url, std::string token, RetryPolicy retry);
    ~Transmitter();
    Transmitter(const Transmitter&) = delete;
    Transmitter& operator=(const Transmitter&) = delete;

    void enqueue(const CrimeEvent& event, const Clip& clip);
    /// Blocks until every queued item is acknowledged or dead-lettered, or the timeout expires.
    bool drain(std::chrono::milliseconds timeout);
    std::vector<TransmitOutcome> outcomes() const;
    std::size_t pending() const;

private:
    void worker();
    void load_pending();

    std::filesystem::path dir_;
    RelayClient client_;
    RetryPolicy retry_;
    mutable std::mutex mu_;
    std::condition_variable cv_;
    std::deque<std::string> queue_;
    std::vector<TransmitOutcome> outcomes_;
    bool stop_ = false;
    bool busy_ = false;
    std::thread thread_;
};

// ---------------------------------------------------------------------------
// Agent

struct AgentReport {
    std::vector<FrameResult> results;
    std::vector<CrimeEvent> events;
    std::vector<TransmitOutcome> deliveries;
    std::uint64_t frames_dropped = 0;
};

/// Runs the configured mode end to end and delivers events through a Transmitter.
AgentReport run_edge_agent(FrameSource& source, const EdgeConfig& config,
                           std::shared_ptr<const ModelBundle> bundle = nullptr,
                           std::chrono::milliseconds drain_timeout = std::chrono::seconds(30));

}  // namespace lens
