#include <exception>
#include <fstream>
#include <spdlog/spdlog.h>
#include <thread>

#include "lens/edge.hpp"
#include "lens/error.hpp"

namespace lens {

using nlohmann::json;

void ModelBundle::validate() const {
    if (spatial.kind() != StreamKind::Spatial) throw InvalidArgument("bundle: spatial model has the wrong kind");
    if (temporal.kind() != StreamKind::Temporal) throw InvalidArgument("bundle: temporal model has the wrong kind");
    if (temporal.shape().input_channels % 2 != 0) throw InvalidArgument("bundle: temporal channels must be even");
    if (!svm.trained || svm.dim != kFusionDim) throw InvalidArgument("bundle: fusion SVM missing or wrong dimension");
    if (flow_side < 0) throw InvalidArgument("bundle: flow_side must be >= 0");
    tvl1.validate();
}

void save_bundle(const ModelBundle& bundle, const std::filesystem::path& dir) {
    bundle.validate();
    std::filesystem::create_directories(dir);
    save_model(bundle.spatial, dir / "spatial.lmdl");
    save_model(bundle.temporal, dir / "temporal.lmdl");
    save_svm(bundle.svm, dir / "fusion.lsvm");
    const auto& p = bundle.tvl1;
    const json manifest{{"spatial", "spatial.lmdl"},
                        {"temporal", "temporal.lmdl"},
                        {"fusion", "fusion.lsvm"},
                        {"flow_side", bundle.flow_side},
                        {"stack_length", bundle.stack_length()},
                        {"tvl1",
                         {{"lambda", p.lambda},
                          {"theta", p.theta},
                          {"tau", p.tau},
                          {"warps", p.warps},
                          {"iters", p.iters},
                          {"pyramid_scale", p.pyramid_scale},
                          {"levels", p.levels}}}};
    std::ofstream(dir / "bundle.json") << manifest.dump(2) << "\n";
}

ModelBundle load_bundle(const std::filesystem::path& dir) {
    const auto manifest_path = dir / "bundle.json";
    std::ifstream in(manifest_path);
    if (!in) throw Error("model bundle: cannot open " + manifest_path.string());
    json m;
    try {
        m = json::parse(in);
    } catch (const json::exception& e) {
        throw Error("model bundle: " + manifest_path.string() + ": " + e.what());
    }
    ModelBundle b;
    try {
        b.spatial = load_model(dir / m.value("spatial", std::string("spatial.lmdl")));
        b.temporal = load_model(dir / m.value("temporal", std::string("temporal.lmdl")));
        b.svm = load_svm(dir / m.value("fusion", std::string("fusion.lsvm")));
        b.flow_side = m.value("flow_side", b.flow_side);
        if (m.contains("tvl1")) {
            const json& t = m["tvl1"];
            b.tvl1.lambda = t.value("lambda", b.tvl1.lambda);
            b.tvl1.theta = t.value("theta", b.tvl1.theta);
            b.tvl1.tau = t.value("tau", b.tvl1.tau);
            b.tvl1.warps = t.value("warps", b.tvl1.warps);
            b.tvl1.iters = t.value("iters", b.tvl1.iters);
            b.tvl1.pyramid_scale = t.value("pyramid_scale", b.tvl1.pyramid_scale);
            b.tvl1.levels = t.value("levels", b.tvl1.levels);
        }
    } catch (const json::exception& e) {
        throw Error("model bundle: " + manifest_path.string() + ": " + e.what());
    }
    b.validate();
    return b;
}

Frame flow_input(const Frame& frame, const ModelBundle& bundle, bool reduced) {
    int w = bundle.flow_side > 0 ? bundle.flow_side : frame.width;
    int h = bundle.flow_side > 0 ? bundle.flow_side : frame.height;
    if (reduced) {
        w = std::max(8, w / 2);
        h = std::max(8, h / 2);
    }
    if (w == frame.width && h == frame.height) return frame;
    return resize_frame(frame, w, h);
}

StackedFlow recent_stack(const std::deque<FlowField>& flows, int length, int width, int height) {
    std::vector<FlowField> window;
    window.reserve(static_cast<std::size_t>(length));
    const long missing = static_cast<long>(length) - static_cast<long>(flows.size());
    for (long k = 0; k < missing; ++k) window.emplace_back(width, height);
    const std::size_t first = missing > 0 ? 0 : flows.size() - static_cast<std::size_t>(length);
    for (std::size_t i = first; i < flows.size(); ++i) window.push_back(flows[i]);
    return stack_flows(window);
}

ClassScores fuse_scores(const SvmModel& svm, const ClassScores& spatial, const ClassScores& temporal) {
    const FusionInput x = fusion_input(spatial, temporal);
    return svm_predict(svm, x).scores;
}

FramePipeline::FramePipeline(std::shared_ptr<const ModelBundle> bundle, bool reduced)
    : bundle_(std::move(bundle)), reduced_(reduced) {
    if (!bundle_) throw InvalidArgument("FramePipeline: no model bundle");
}

std::optional<FlowField> FramePipeline::next_flow(const Frame& frame) {
    Frame prepared = flow_input(frame, *bundle_, reduced_);
    std::optional<FlowField> flow;
    if (prev_) {
        if (prev_->width != prepared.width || prev_->height != prepared.height)
            throw InvalidArgument("FramePipeline: frame size changed mid-stream");
        flow = tvl1_flow(*prev_, prepared, bundle_->tvl1);
    }
    prev_ = std::move(prepared);
    return flow;
}

ScoreSet FramePipeline::score(const Frame& frame, std::optional<FlowField> flow) {
    const ModelBundle& b = *bundle_;
    if (flow_w_ == 0) {
        const Frame probe = flow_input(frame, b, reduced_);
        flow_w_ = probe.width;
        flow_h_ = probe.height;
    }
    if (flow) {
        flows_.push_back(std::move(*flow));
        while (flows_.size() > static_cast<std::size_t>(b.stack_length())) flows_.pop_front();
    }
    ScoreSet s;
    s.spatial = forward(b.spatial, frame);
    s.temporal = forward(b.temporal, recent_stack(flows_, b.stack_length(), flow_w_, flow_h_));
    s.fused = fuse_scores(b.svm, s.spatial, s.temporal);
    return s;
}

FrameResult FramePipeline::push(const Frame& frame) {
    auto flow = next_flow(frame);
    return {frame.index, frame.timestamp_ms, score(frame, std::move(flow))};
}

std::vector<FrameResult> batch_scores(const Clip& clip, const ModelBundle& bundle, SkipPolicy skip, bool reduced) {
    bundle.validate();
    const std::vector<Frame> kept = skip_iter(clip, SkipPolicy::checked(skip.skip));
    std::vector<Frame> prepared;
    prepared.reserve(kept.size());
    for (const Frame& f : kept) prepared.push_back(flow_input(f, bundle, reduced));
    std::vector<FlowField> flows(kept.size());
    for (std::size_t i = 1; i < kept.size(); ++i) flows[i] = tvl1_flow(prepared[i - 1], prepared[i], bundle.tvl1);

    const auto L = static_cast<std::size_t>(bundle.stack_length());
    std::vector<FrameResult> out;
    out.reserve(kept.size());
    for (std::size_t i = 0; i < kept.size(); ++i) {
        std::deque<FlowField> history;
        for (std::size_t j = i >= L ? i - L + 1 : 1; j <= i; ++j) history.push_back(flows[j]);
        FrameResult r{kept[i].index, kept[i].timestamp_ms, {}};
        r.scores.spatial = forward(bundle.spatial, kept[i]);
        r.scores.temporal =
            forward(bundle.temporal, recent_stack(history, bundle.stack_length(), prepared[i].width, prepared[i].height));
        r.scores.fused = fuse_scores(bundle.svm, r.scores.spatial, r.scores.temporal);
        out.push_back(std::move(r));
    }
    return out;
}

// ---------------------------------------------------------------------------

namespace {

struct FlowItem {
    Frame frame;
    std::optional<FlowField> flow;
};

class WorkerGroup {
public:
    template <class F>
    void spawn(F&& body) {
        threads_.emplace_back([this, body = std::forward<F>(body)]() mutable {
            try {
                body();
            } catch (...) {
                std::lock_guard lock(mu_);
                if (!error_) error_ = std::current_exception();
                if (on_error_) on_error_();
            }
        });
    }
    void on_error(std::function<void()> f) { on_error_ = std::move(f); }
    void join_and_rethrow() {
        for (auto& t : threads_) t.join();
        threads_.clear();
        if (error_) std::rethrow_exception(error_);
    }
    ~WorkerGroup() {
        for (auto& t : threads_)
            if (t.joinable()) t.join();
    }

private:
    std::vector<std::thread> threads_;
    std::mutex mu_;
    std::exception_ptr error_;
    std::function<void()> on_error_;
};

}  // namespace

PipelineReport run_pipeline(FrameSource& source, std::shared_ptr<const ModelBundle> bundle, const EdgeConfig& config,
                            const EventSink& on_event) {
    if (!bundle) throw InvalidArgument("run_pipeline: no model bundle");
    bundle->validate();
    EdgeConfig cfg = config;
    cfg.validate();
    const std::size_t cap = cfg.queue_capacity;
    const auto stride = static_cast<std::uint64_t>(cfg.skip.stride());
    const auto clip_frames = static_cast<std::size_t>(std::llround(cfg.clip_seconds * cfg.fps));
    RingBuffer ring(clip_frames + (3 * cap + 4) * stride, cfg.fps);

    BoundedQueue<Frame> ingest_q(cap, source.is_live() ? Overflow::DropOldest : Overflow::Block);
    BoundedQueue<FlowItem> flow_q(cap);
    BoundedQueue<FrameResult> score_q(cap);
    FramePipeline pipeline(bundle, cfg.reduced);
    PipelineReport report;
    std::atomic<bool> abort{false};

    WorkerGroup workers;
    workers.on_error([&] {
        abort = true;
        ingest_q.close();
        flow_q.close();
        score_q.close();
    });
    workers.spawn([&] {
        std::uint64_t position = 0;
        while (!abort) {
            auto frame = source.next();
            if (!frame) break;
            ring.push(*frame);
            ++report.frames_ingested;
            if (position++ % stride == 0) ingest_q.push(std::move(*frame));
        }
        ingest_q.close();
    });
    workers.spawn([&] {
        while (auto frame = ingest_q.pop()) {
            auto flow = pipeline.next_flow(*frame);
            if (!flow_q.push({std::move(*frame), std::move(flow)})) break;
        }
        flow_q.close();
    });
    workers.spawn([&] {
        while (auto item = flow_q.pop()) {
            FrameResult r{item->frame.index, item->frame.timestamp_ms, pipeline.score(item->frame, std::move(item->flow))};
            if (!score_q.push(std::move(r))) break;
        }
        score_q.close();
    });
    workers.spawn([&] {
        DetectionState state{cfg.debounce_window, cfg.cooldown_ms, {}, std::nullopt};
        while (auto r = score_q.pop()) {
            if (auto d = detect(state, r->scores.fused, cfg.threshold, r->timestamp_ms)) {
                AssembledEvent ev = assemble_event(*d, *r, ring, cfg);
                spdlog::info("detection {} conf {:.3f} at frame {}", label_name(d->label), d->confidence, r->frame_index);
                if (on_event) on_event(ev);
                report.events.push_back(std::move(ev.event));
            }
            report.results.push_back(std::move(*r));
        }
    });
    workers.join_and_rethrow();
    report.frames_dropped = ingest_q.dropped();
    return report;
}

PacedSource::PacedSource(Clip clip, double speed) : inner_(clip), fps_(clip.fps), speed_(speed) {
    if (!(speed > 0.0)) throw InvalidArgument("PacedSource: speed must be > 0");
    if (fps_ <= 0) throw InvalidArgument("PacedSource: clip fps must be > 0");
}

std::optional<Frame> PacedSource::next() {
    if (emitted_ == 0) start_ = std::chrono::steady_clock::now();
    const auto due = start_ + std::chrono::duration_cast<std::chrono::steady_clock::duration>(
                                  std::chrono::duration<double>(static_cast<double>(emitted_) / (fps_ * speed_)));
    std::this_thread::sleep_until(due);
    auto f = inner_.next();
    if (f) ++emitted_;
    return f;
}

}  // namespace lens
