#include <CLI11.hpp>
#include <csignal>
#include <fstream>
#include <iostream>
#include <pthread.h>
#include <spdlog/sinks/stdout_color_sinks.h>
#include <spdlog/spdlog.h>

#include "lens/app.hpp"
#include "lens/bytes.hpp"
#include "lens/error.hpp"
#include "lens/relay.hpp"

using namespace lens;
using nlohmann::json;

namespace {

struct Globals {
    std::uint64_t seed = 7;
    std::string config;
    std::string log_level = "info";
    bool json = false;
};

void emit(const Globals& g, const json& j, const std::string& text) {
    if (g.json) std::cout << j.dump() << "\n";
    else std::cout << text;
}

Gps parse_gps(const std::string& s) {
    const auto comma = s.find(',');
    if (comma == std::string::npos) throw InvalidArgument("--gps expects LAT,LON");
    try {
        return {std::stod(s.substr(0, comma)), std::stod(s.substr(comma + 1))};
    } catch (const std::exception&) {
        throw InvalidArgument("--gps expects LAT,LON");
    }
}

void write_bytes(const std::filesystem::path& path, const std::vector<std::uint8_t>& bytes) {
    std::ofstream out(path, std::ios::binary);
    out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
    if (!out) throw Error("cannot write " + path.string());
}

json event_summary(const CrimeEvent& e) {
    return {{"event_id", e.event_id},
            {"label", label_name(e.label)},
            {"confidence", e.confidence},
            {"short", e.short_clip}};
}

std::string_view status_name(TransmitStatus s) {
    switch (s) {
        case TransmitStatus::Acknowledged: return "acknowledged";
        case TransmitStatus::DeadLettered: return "dead-lettered";
        case TransmitStatus::GaveUp: return "gave-up";
    }
    return "?";
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"LENS: low-light crime detection toolkit"};
    app.require_subcommand(1);
    app.fallthrough();
    Globals g;
    app.add_option("--seed", g.seed, "Seed for every random choice")->capture_default_str();
    app.add_option("--config", g.config, "TOML configuration file (training, edge or relay)");
    app.add_option("--log-level", g.log_level, "trace, debug, info, warn, error or off")->capture_default_str();
    app.add_flag("--json", g.json, "Machine-readable JSON on stdout");

    // gen-data
    auto* gen = app.add_subcommand("gen-data", "Generate the synthetic low-light dataset");
    std::string gen_out;
    SynthParams sp;
    gen->add_option("--out", gen_out, "Output directory")->required();
    gen->add_option("--groups", sp.groups_per_action, "Groups per action")->capture_default_str();
    gen->add_option("--clips", sp.clips_per_group, "Clips per group")->capture_default_str();
    gen->add_option("--width", sp.width)->capture_default_str();
    gen->add_option("--height", sp.height)->capture_default_str();
    gen->add_option("--noise", sp.noise_sigma, "Gaussian noise sigma")->capture_default_str();

    // train-streams
    auto* ts = app.add_subcommand("train-streams", "Train the spatial then the temporal stream");
    std::string ts_data, ts_out;
    std::optional<int> ts_spatial_epochs, ts_temporal_epochs, ts_stack, ts_side;
    ts->add_option("--data", ts_data, "Dataset directory")->required();
    ts->add_option("--out", ts_out, "Model directory")->required();
    ts->add_option("--spatial-epochs", ts_spatial_epochs);
    ts->add_option("--temporal-epochs", ts_temporal_epochs);
    ts->add_option("--epochs", [&](const CLI::results_t& r) {
        ts_spatial_epochs = ts_temporal_epochs = std::stoi(r[0]);
        return true;
    }, "Epochs for both streams");
    ts->add_option("--stack-length", ts_stack);
    ts->add_option("--flow-side", ts_side);

    // train-svm
    auto* tsvm = app.add_subcommand("train-svm", "Fit the fusion SVM on held-out stream outputs");
    std::string svm_data, svm_models;
    std::optional<int> svm_folds, svm_trials;
    tsvm->add_option("--data", svm_data, "Dataset directory")->required();
    tsvm->add_option("--models", svm_models, "Model directory written by train-streams")->required();
    tsvm->add_option("--folds", svm_folds, "Cross-fitting and CV folds");
    tsvm->add_option("--trials", svm_trials, "Random-search trials");

    // eval
    auto* ev = app.add_subcommand("eval", "Accuracy, confusion matrices and percent-change report");
    std::string ev_data, ev_models, ev_out;
    int ev_positions = 5;
    ev->add_option("--data", ev_data, "Dataset directory")->required();
    ev->add_option("--models", ev_models, "Model bundle directory")->required();
    ev->add_option("--positions", ev_positions, "Scored positions per clip")->capture_default_str();
    ev->add_option("--out", ev_out, "Also write the report to this file");

    // bench
    auto* bench = app.add_subcommand("bench", "Effective-FPS table for skip, reduced and cloud variants");
    app::BenchOptions bo;
    std::string bench_models;
    bench->add_option("--cost", bo.cost, "synthetic or measured")->capture_default_str();
    bench->add_option("--window", bo.window_s, "Seconds per row (>= 1)")->capture_default_str();
    bench->add_option("--skip", bo.skip, "Frames skipped in the +skip rows")->capture_default_str();
    bench->add_option("--edge-cost-ms", bo.edge_cost_ms, "Synthetic per-frame edge cost")->capture_default_str();
    bench->add_option("--cloud-cost-ms", bo.cloud_cost_ms, "Synthetic per-frame cloud cost")->capture_default_str();
    bench->add_option("--flow-share", bo.flow_share, "Share of the synthetic cost spent in flow")->capture_default_str();
    bench->add_option("--models", bench_models, "Model bundle for measured runs");

    // edge run
    auto* edge = app.add_subcommand("edge", "Edge agent");
    edge->require_subcommand(1);
    auto* edge_run = edge->add_subcommand("run", "Run the edge agent on a clip");
    std::string er_input, er_mode, er_camera, er_gps, er_relay, er_models, er_token, er_outbox, er_record;
    std::optional<int> er_skip, er_infer_port;
    std::optional<double> er_threshold;
    bool er_reduced = false;
    double er_speed = 1.0, er_drain_s = 30.0;
    edge_run->add_option("--input", er_input, "Clip file (.lclip) used as the camera feed")->required();
    edge_run->add_option("--mode", er_mode, "edge or cloud");
    edge_run->add_option("--skip", er_skip, "Frames skipped between processed frames");
    edge_run->add_option("--threshold", er_threshold, "Detection threshold");
    edge_run->add_option("--camera-id", er_camera);
    edge_run->add_option("--gps", er_gps, "LAT,LON");
    edge_run->add_option("--relay", er_relay, "Relay base URL");
    edge_run->add_option("--token", er_token, "Bearer token of the edge device");
    edge_run->add_option("--models", er_models, "Model bundle directory");
    edge_run->add_option("--outbox", er_outbox, "Outbox directory");
    edge_run->add_option("--infer-port", er_infer_port, "Cloud inference port");
    edge_run->add_flag("--reduced", er_reduced, "Halve the flow resolution (edge) or the sent frames (cloud)");
    edge_run->add_option("--speed", er_speed, "Replay speed; 0 feeds frames as fast as they are consumed")
        ->capture_default_str();
    edge_run->add_option("--record", er_record, "Write the per-frame score stream as JSON lines");
    edge_run->add_option("--drain-timeout", er_drain_s, "Seconds to wait for deliveries")->capture_default_str();

    // relay serve
    auto* relay = app.add_subcommand("relay", "Relay server");
    relay->require_subcommand(1);
    auto* relay_serve = relay->add_subcommand("serve", "Serve the REST API and cloud inference");
    std::optional<int> rs_port, rs_infer_port;
    std::string rs_bind, rs_storage, rs_models;
    std::optional<double> rs_threshold;
    relay_serve->add_option("--port", rs_port);
    relay_serve->add_option("--infer-port", rs_infer_port, "Negative disables cloud inference");
    relay_serve->add_option("--bind", rs_bind);
    relay_serve->add_option("--storage", rs_storage);
    relay_serve->add_option("--models", rs_models);
    relay_serve->add_option("--threshold", rs_threshold);

    // flow
    auto* flow = app.add_subcommand("flow", "Compute and colorize the flow between two frames of a clip");
    std::string fl_clip, fl_out;
    int fl_frame = 0;
    Tvl1Params fl_params;
    flow->add_option("--clip", fl_clip, "Clip file")->required();
    flow->add_option("--frame", fl_frame, "First frame of the pair")->capture_default_str();
    flow->add_option("--out", fl_out, "Output prefix for .lflo and .ppm")->required();
    flow->add_option("--warps", fl_params.warps)->capture_default_str();
    flow->add_option("--iters", fl_params.iters)->capture_default_str();
    flow->add_option("--lambda", fl_params.lambda)->capture_default_str();

    CLI11_PARSE(app, argc, argv);

    auto logger = spdlog::stderr_color_mt("lens");
    spdlog::set_default_logger(logger);
    spdlog::set_level(spdlog::level::from_str(g.log_level));

    try {
        if (gen->parsed()) {
            sp.seed = g.seed;
            const auto s = generate_synthetic_dataset(sp, gen_out);
            emit(g, {{"clips", s.clips}, {"frames", s.frames}, {"out", gen_out}},
                 fmt::format("wrote {} clips ({} frames) to {}\n", s.clips, s.frames, gen_out));
        } else if (ts->parsed()) {
            app::TrainOptions o;
            if (!g.config.empty()) o = app::load_train_options(g.config);
            o.seed = g.seed;
            if (ts_spatial_epochs) o.spatial_epochs = *ts_spatial_epochs;
            if (ts_temporal_epochs) o.temporal_epochs = *ts_temporal_epochs;
            if (ts_stack) o.stack_length = *ts_stack;
            if (ts_side) o.flow_side = *ts_side;
            const json r = app::cmd_train_streams(ts_data, ts_out, o);
            emit(g, r,
                 fmt::format("spatial: {} epochs, train accuracy {:.3f}\ntemporal: {} epochs, train accuracy {:.3f}\n"
                             "checkpoints in {}\n",
                             r["spatial"]["epochs"].get<int>(), r["spatial"]["train_accuracy"].get<double>(),
                             r["temporal"]["epochs"].get<int>(), r["temporal"]["train_accuracy"].get<double>(), ts_out));
        } else if (tsvm->parsed()) {
            std::optional<app::TrainOptions> o;
            if (svm_folds || svm_trials || !g.config.empty()) {
                std::ifstream in(std::filesystem::path(svm_models) / "train.json");
                if (!in) throw Error("cannot open " + (std::filesystem::path(svm_models) / "train.json").string());
                o = app::TrainOptions::from_json(json::parse(in).at("options"));
                if (!g.config.empty()) o = app::load_train_options(g.config, *o);
                if (svm_folds) o->folds = *svm_folds;
                if (svm_trials) o->search_trials = *svm_trials;
            }
            const json r = app::cmd_train_svm(svm_data, svm_models, o);
            emit(g, r,
                 fmt::format("fusion SVM: gamma {:.4g}, C {:.4g}, coef0 {}, CV accuracy {:.3f} on {} held-out samples\n",
                             r["best"]["gamma"].get<double>(), r["best"]["C"].get<double>(),
                             r["best"]["coef0"].get<double>(), r["best"]["cv_accuracy"].get<double>(),
                             r["samples"].get<std::size_t>()));
        } else if (ev->parsed()) {
            const json r = app::cmd_eval(ev_data, ev_models, ev_positions);
            if (!ev_out.empty()) std::ofstream(ev_out) << r.dump(2) << "\n";
            std::cout << (g.json ? r.dump() : r.dump(2)) << "\n";
        } else if (bench->parsed()) {
            bo.seed = g.seed;
            bo.model_dir = bench_models;
            const auto rows = app::run_bench(bo);
            emit(g, app::bench_json(rows), app::bench_table(rows));
        } else if (edge_run->parsed()) {
            EdgeConfig cfg;
            if (!g.config.empty()) cfg = load_edge_config(g.config);
            if (!er_mode.empty()) cfg.mode = parse_mode(er_mode);
            if (er_skip) cfg.skip.skip = *er_skip;
            if (er_threshold) cfg.threshold = *er_threshold;
            if (!er_camera.empty()) cfg.camera_id = er_camera;
            if (!er_gps.empty()) cfg.gps = parse_gps(er_gps);
            if (!er_relay.empty()) cfg.relay_url = er_relay;
            if (!er_token.empty()) cfg.auth_token = er_token;
            if (!er_models.empty()) cfg.model_dir = er_models;
            if (!er_outbox.empty()) cfg.outbox_dir = er_outbox;
            if (er_infer_port) cfg.infer_port = *er_infer_port;
            if (er_reduced) cfg.reduced = true;
            cfg.validate();
            Clip clip = load_clip(er_input);
            std::unique_ptr<FrameSource> source;
            if (er_speed > 0) source = std::make_unique<PacedSource>(std::move(clip), er_speed);
            else source = std::make_unique<ClipSource>(std::move(clip));
            const auto drain = std::chrono::milliseconds(static_cast<long>(er_drain_s * 1000));
            const AgentReport rep = run_edge_agent(*source, cfg, nullptr, drain);
            if (!er_record.empty()) {
                std::ofstream rec(er_record);
                for (const auto& r : rep.results)
                    rec << json{{"frame_index", r.frame_index},
                                {"timestamp_ms", r.timestamp_ms},
                                {"spatial", r.scores.spatial.probs},
                                {"temporal", r.scores.temporal.probs},
                                {"fused", r.scores.fused.probs}}
                               .dump()
                        << "\n";
                if (!rec) throw Error("cannot write " + er_record);
            }
            json events = json::array();
            for (const auto& e : rep.events) events.push_back(event_summary(e));
            json deliveries = json::array();
            std::string text = fmt::format("{} frames scored, {} dropped, {} events\n", rep.results.size(),
                                           rep.frames_dropped, rep.events.size());
            for (const auto& d : rep.deliveries) {
                deliveries.push_back({{"event_id", d.event_id},
                                      {"status", status_name(d.status)},
                                      {"http_status", d.http_status},
                                      {"attempts", d.attempts},
                                      {"clip_ref", d.clip_ref}});
                text += fmt::format("  {} {} after {} attempt(s) (HTTP {})\n", d.event_id, status_name(d.status),
                                    d.attempts, d.http_status);
            }
            emit(g,
                 {{"frames_scored", rep.results.size()},
                  {"frames_dropped", rep.frames_dropped},
                  {"events", events},
                  {"deliveries", deliveries}},
                 text);
            for (const auto& d : rep.deliveries)
                if (d.status != TransmitStatus::Acknowledged) return 1;
        } else if (relay_serve->parsed()) {
            RelayConfig rc;
            if (!g.config.empty()) rc = load_relay_config(g.config);
            if (rs_port) rc.port = *rs_port;
            if (rs_infer_port) rc.infer_port = *rs_infer_port;
            if (!rs_bind.empty()) rc.host = rs_bind;
            if (!rs_storage.empty()) rc.storage_dir = rs_storage;
            if (!rs_models.empty()) rc.model_dir = rs_models;
            if (rs_threshold) rc.threshold = *rs_threshold;
            sigset_t signals;
            sigemptyset(&signals);
            sigaddset(&signals, SIGINT);
            sigaddset(&signals, SIGTERM);
            pthread_sigmask(SIG_BLOCK, &signals, nullptr);
            RelayServer server(rc);
            server.start();
            emit(g, {{"port", server.port()}, {"infer_port", server.infer_port()}},
                 fmt::format("relay listening on {} (cloud inference port {})\n", server.base_url(), server.infer_port()));
            std::cout.flush();
            int sig = 0;
            sigwait(&signals, &sig);
            spdlog::info("signal {} received, shutting down", sig);
            server.stop();
        } else if (flow->parsed()) {
            const Clip clip = load_clip(fl_clip);
            if (fl_frame < 0 || static_cast<std::size_t>(fl_frame) + 1 >= clip.size())
                throw InvalidArgument("--frame must leave a following frame in the clip");
            const auto& a = clip.frames[static_cast<std::size_t>(fl_frame)];
            const auto& b = clip.frames[static_cast<std::size_t>(fl_frame) + 1];
            const FlowField f = tvl1_flow(a, b, fl_params);
            double mean = 0.0, peak = 0.0;
            for (std::size_t i = 0; i < f.size(); ++i) {
                const double m = std::hypot(f.u[i], f.v[i]);
                mean += m;
                peak = std::max(peak, m);
            }
            mean /= static_cast<double>(std::max<std::size_t>(1, f.size()));
            save_flow(f, fl_out + ".lflo");
            write_bytes(fl_out + ".ppm", app::encode_ppm(flow_colorize(f)));
            emit(g, {{"width", f.width}, {"height", f.height}, {"mean_magnitude", mean}, {"max_magnitude", peak}},
                 fmt::format("flow {}x{}: mean |w| {:.3f} px, max {:.3f} px; wrote {}.lflo and {}.ppm\n", f.width,
                             f.height, mean, peak, fl_out, fl_out));
        }
    } catch (const std::exception& e) {
        spdlog::error("{}", e.what());
        return 1;
    }
    return 0;
}
