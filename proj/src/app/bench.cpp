#include <spdlog/fmt/fmt.h>
#include <spdlog/spdlog.h>
#include <thread>

#include "lens/app.hpp"
#include "lens/error.hpp"
#include "lens/relay.hpp"

namespace lens::app {

using nlohmann::json;

void BenchOptions::validate() const {
    if (cost != "synthetic" && cost != "measured") throw InvalidArgument("bench: cost must be synthetic or measured");
    if (!(window_s >= 1.0)) throw InvalidArgument("bench: window must be at least 1 s");
    SkipPolicy::checked(skip);
    if (!(edge_cost_ms >= 0.0) || !(cloud_cost_ms >= 0.0)) throw InvalidArgument("bench: costs must be >= 0");
    if (!(flow_share >= 0.0 && flow_share <= 1.0)) throw InvalidArgument("bench: flow_share must be in [0, 1]");
}

double synthetic_cost_ms(const BenchOptions& o, InferenceMode mode, bool reduced) {
    const double base = mode == InferenceMode::Edge ? o.edge_cost_ms : o.cloud_cost_ms;
    return reduced ? base * ((1.0 - o.flow_share) + o.flow_share * 0.25) : base;
}

namespace {

/// Loops a clip until the window elapses, measured from the first frame pulled.
class TimedSource : public FrameSource {
public:
    TimedSource(Clip clip, double window_s) : inner_(std::move(clip), true), window_(window_s) {}
    std::optional<Frame> next() override {
        const auto now = std::chrono::steady_clock::now();
        if (!start_) start_ = now;
        if (std::chrono::duration<double>(now - *start_).count() >= window_) return std::nullopt;
        return inner_.next();
    }

private:
    ClipSource inner_;
    double window_;
    std::optional<std::chrono::steady_clock::time_point> start_;
};

std::shared_ptr<const ModelBundle> bench_bundle(const BenchOptions& o) {
    if (!o.model_dir.empty()) return std::make_shared<const ModelBundle>(load_bundle(o.model_dir));
    auto b = std::make_shared<ModelBundle>();
    b->spatial = StreamModel::spatial(o.seed);
    b->temporal = StreamModel::temporal(o.seed + 1, 4);
    SvmConfig c;
    c.gamma = 2.0;
    c.C = 10.0;
    b->svm = svm_fit(fixture_samples(complementary_fixture(10, o.seed)), c);
    b->tvl1 = TrainOptions::fast_tvl1();
    return b;
}

ThroughputReport measure_cloud(const Clip& clip, const RelayServer& relay, int skip, bool reduced, double window_s) {
    EdgeConfig cfg;
    cfg.camera_id = "bench";
    cfg.skip = SkipPolicy{skip};
    cfg.reduced = reduced;
    StreamOptions opts;
    opts.overflow = Overflow::Block;
    opts.queue_capacity = 2;
    TimedSource source(clip, window_s);
    const auto start = std::chrono::steady_clock::now();
    const StreamReport rep = stream_frames(source, "127.0.0.1", relay.infer_port(), cfg, opts);
    ThroughputReport r;
    r.wall_ms = std::chrono::duration<double, std::milli>(std::chrono::steady_clock::now() - start).count();
    r.frames_processed = rep.results.size();
    r.frames_covered = r.frames_processed * static_cast<std::uint64_t>(skip + 1);
    if (r.wall_ms > 0) {
        r.processing_fps = static_cast<double>(r.frames_processed) * 1000.0 / r.wall_ms;
        r.effective_fps = r.processing_fps * (skip + 1);
    }
    return r;
}

}  // namespace

std::vector<BenchRow> run_bench(const BenchOptions& o) {
    o.validate();
    SynthParams sp;
    sp.seed = o.seed;
    const Clip clip = render_clip(sp, ActionLabel::Theft, 0, 0);
    const bool measured = o.cost == "measured";
    std::shared_ptr<const ModelBundle> bundle;
    std::unique_ptr<RelayServer> relay;
    std::filesystem::path scratch;
    if (measured) {
        bundle = bench_bundle(o);
        scratch = std::filesystem::temp_directory_path() / ("lens-bench-" + make_uuid());
        RelayConfig rc;
        rc.port = 0;
        rc.infer_port = 0;
        rc.storage_dir = scratch;
        relay = std::make_unique<RelayServer>(rc, bundle);
        relay->start();
    }

    std::vector<BenchRow> rows;
    for (InferenceMode mode : {InferenceMode::Edge, InferenceMode::Cloud}) {
        const std::string prefix(mode_name(mode));
        const std::array<std::pair<int, bool>, 4> variants{{{0, false}, {o.skip, false}, {0, true}, {o.skip, true}}};
        double baseline = 0.0;
        for (const auto& [skip, reduced] : variants) {
            BenchRow row;
            row.mode = mode;
            row.skip = skip;
            row.reduced = reduced;
            row.name = prefix + (skip > 0 ? "+skip" : "") + (reduced ? "+reduced" : "");
            if (!measured) {
                const auto cost = std::chrono::duration<double, std::milli>(synthetic_cost_ms(o, mode, reduced));
                ClipSource source(clip, true);
                row.report = measure_throughput(
                    source, [&](const Frame&) { std::this_thread::sleep_for(cost); }, SkipPolicy{skip}, o.window_s);
            } else if (mode == InferenceMode::Edge) {
                FramePipeline pipeline(bundle, reduced);
                ClipSource source(clip, true);
                row.report = measure_throughput(
                    source, [&](const Frame& f) { pipeline.push(f); }, SkipPolicy{skip}, o.window_s);
            } else {
                row.report = measure_cloud(clip, *relay, skip, reduced, o.window_s);
            }
            if (skip == 0 && !reduced) baseline = row.report.effective_fps;
            row.ratio = baseline > 0 ? row.report.effective_fps / baseline : 0.0;
            spdlog::info("bench {}: {:.2f} effective FPS (x{:.2f})", row.name, row.report.effective_fps, row.ratio);
            rows.push_back(std::move(row));
        }
    }
    if (relay) relay->stop();
    relay.reset();
    if (!scratch.empty()) {
        std::error_code ec;
        std::filesystem::remove_all(scratch, ec);
    }
    return rows;
}

json bench_json(const std::vector<BenchRow>& rows) {
    json out = json::array();
    for (const auto& r : rows)
        out.push_back({{"name", r.name},
                       {"mode", mode_name(r.mode)},
                       {"skip", r.skip},
                       {"reduced", r.reduced},
                       {"frames_processed", r.report.frames_processed},
                       {"wall_ms", r.report.wall_ms},
                       {"processing_fps", r.report.processing_fps},
                       {"effective_fps", r.report.effective_fps},
                       {"ratio", r.ratio}});
    return out;
}

std::string bench_table(const std::vector<BenchRow>& rows) {
    std::string out = fmt::format("{:<22} {:>5} {:>8} {:>14} {:>14} {:>7}\n", "configuration", "skip", "reduced",
                                  "processing", "effective", "ratio");
    for (const auto& r : rows)
        out += fmt::format("{:<22} {:>5} {:>8} {:>14.2f} {:>14.2f} {:>7.2f}\n", r.name, r.skip, r.reduced ? "yes" : "no",
                           r.report.processing_fps, r.report.effective_fps, r.ratio);
    return out;
}

std::vector<std::uint8_t> encode_ppm(const Frame& frame) {
    const std::string header = fmt::format("P6\n{} {}\n255\n", frame.width, frame.height);
    std::vector<std::uint8_t> out(header.begin(), header.end());
    out.insert(out.end(), frame.pixels.begin(), frame.pixels.end());
    return out;
}

}  // namespace lens::app
