#include <spdlog/spdlog.h>

#include "lens/edge.hpp"
#include "lens/error.hpp"

namespace lens {

AgentReport run_edge_agent(FrameSource& source, const EdgeConfig& config, std::shared_ptr<const ModelBundle> bundle,
                           std::chrono::milliseconds drain_timeout) {
    EdgeConfig cfg = config;
    cfg.validate();
    Transmitter transmitter(cfg.outbox_dir, cfg.relay_url, cfg.auth_token, cfg.retry);
    AgentReport report;

    if (cfg.mode == InferenceMode::Edge) {
        if (!bundle) bundle = std::make_shared<const ModelBundle>(load_bundle(cfg.model_dir));
        spdlog::info("edge inference on camera {} (skip {}, reduced {})", cfg.camera_id, cfg.skip.skip, cfg.reduced);
        auto run = run_pipeline(source, bundle, cfg,
                                [&](const AssembledEvent& ev) { transmitter.enqueue(ev.event, ev.clip); });
        report.results = std::move(run.results);
        report.events = std::move(run.events);
        report.frames_dropped = run.frames_dropped;
    } else {
        spdlog::info("cloud inference on camera {} via {}:{}", cfg.camera_id, cfg.infer_host, cfg.infer_port);
        const auto clip_frames = static_cast<std::size_t>(std::llround(cfg.clip_seconds * cfg.fps));
        RingBuffer ring(clip_frames + (2 * cfg.queue_capacity + 4) * static_cast<std::size_t>(cfg.skip.stride()), cfg.fps);
        DetectionState state{cfg.debounce_window, cfg.cooldown_ms, {}, std::nullopt};
        StreamOptions opts;
        opts.queue_capacity = cfg.queue_capacity;
        opts.overflow = source.is_live() ? Overflow::DropOldest : Overflow::Block;
        opts.on_ingest = [&](const Frame& f) { ring.push(f); };
        opts.on_result = [&](const FrameResult& r) {
            if (auto d = detect(state, r.scores.fused, cfg.threshold, r.timestamp_ms)) {
                AssembledEvent ev = assemble_event(*d, r, ring, cfg);
                spdlog::info("detection {} conf {:.3f} at frame {}", label_name(d->label), d->confidence, r.frame_index);
                transmitter.enqueue(ev.event, ev.clip);
                report.events.push_back(std::move(ev.event));
            }
        };
        auto run = stream_frames(source, cfg.infer_host, cfg.infer_port, cfg, opts);
        if (run.diagnostic) throw Error("cloud inference failed: " + *run.diagnostic);
        report.results = std::move(run.results);
        report.frames_dropped = run.frames_dropped;
    }

    if (!transmitter.drain(drain_timeout)) spdlog::warn("outbox still has {} undelivered events", transmitter.pending());
    report.deliveries = transmitter.outcomes();
    return report;
}

}  // namespace lens
