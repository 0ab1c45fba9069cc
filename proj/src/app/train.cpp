#include <algorithm>
#include <deque>
#include <fstream>
#include <spdlog/spdlog.h>
#include <toml.hpp>

#include "lens/app.hpp"
#include "lens/error.hpp"

namespace lens::app {

using nlohmann::json;

Tvl1Params TrainOptions::fast_tvl1() {
    Tvl1Params p;
    p.warps = 3;
    p.iters = 15;
    return p;
}

void TrainOptions::validate() const {
    if (spatial_epochs < 0 || temporal_epochs < 0) throw InvalidArgument("train options: epochs must be >= 0");
    if (stack_length < 1) throw InvalidArgument("train options: stack_length must be >= 1");
    if (flow_side < 8) throw InvalidArgument("train options: flow_side must be >= 8");
    if (folds < 2) throw InvalidArgument("train options: folds must be >= 2");
    if (search_trials < 1) throw InvalidArgument("train options: search_trials must be >= 1");
    if (positions_per_clip < 1) throw InvalidArgument("train options: positions_per_clip must be >= 1");
    tvl1.validate();
}

json TrainOptions::to_json() const {
    return {{"seed", seed},
            {"spatial_epochs", spatial_epochs},
            {"temporal_epochs", temporal_epochs},
            {"stack_length", stack_length},
            {"flow_side", flow_side},
            {"folds", folds},
            {"search_trials", search_trials},
            {"positions_per_clip", positions_per_clip},
            {"tvl1",
             {{"lambda", tvl1.lambda},
              {"theta", tvl1.theta},
              {"tau", tvl1.tau},
              {"warps", tvl1.warps},
              {"iters", tvl1.iters},
              {"pyramid_scale", tvl1.pyramid_scale},
              {"levels", tvl1.levels}}}};
}

TrainOptions TrainOptions::from_json(const json& j) {
    TrainOptions o;
    o.seed = j.value("seed", o.seed);
    o.spatial_epochs = j.value("spatial_epochs", o.spatial_epochs);
    o.temporal_epochs = j.value("temporal_epochs", o.temporal_epochs);
    o.stack_length = j.value("stack_length", o.stack_length);
    o.flow_side = j.value("flow_side", o.flow_side);
    o.folds = j.value("folds", o.folds);
    o.search_trials = j.value("search_trials", o.search_trials);
    o.positions_per_clip = j.value("positions_per_clip", o.positions_per_clip);
    if (j.contains("tvl1")) {
        const json& t = j["tvl1"];
        o.tvl1.lambda = t.value("lambda", o.tvl1.lambda);
        o.tvl1.theta = t.value("theta", o.tvl1.theta);
        o.tvl1.tau = t.value("tau", o.tvl1.tau);
        o.tvl1.warps = t.value("warps", o.tvl1.warps);
        o.tvl1.iters = t.value("iters", o.tvl1.iters);
        o.tvl1.pyramid_scale = t.value("pyramid_scale", o.tvl1.pyramid_scale);
        o.tvl1.levels = t.value("levels", o.tvl1.levels);
    }
    return o;
}

TrainOptions load_train_options(const std::filesystem::path& path, TrainOptions o) {
    toml::table t;
    try {
        t = toml::parse_file(path.string());
    } catch (const toml::parse_error& e) {
        throw InvalidArgument("train config " + path.string() + ": " + std::string(e.description()));
    }
    o.seed = static_cast<std::uint64_t>(t["seed"].value_or(static_cast<std::int64_t>(o.seed)));
    o.spatial_epochs = t["spatial_epochs"].value_or(o.spatial_epochs);
    o.temporal_epochs = t["temporal_epochs"].value_or(o.temporal_epochs);
    o.stack_length = t["stack_length"].value_or(o.stack_length);
    o.flow_side = t["flow_side"].value_or(o.flow_side);
    o.folds = t["folds"].value_or(o.folds);
    o.search_trials = t["search_trials"].value_or(o.search_trials);
    o.positions_per_clip = t["positions_per_clip"].value_or(o.positions_per_clip);
    o.tvl1.lambda = t["tvl1"]["lambda"].value_or(o.tvl1.lambda);
    o.tvl1.theta = t["tvl1"]["theta"].value_or(o.tvl1.theta);
    o.tvl1.tau = t["tvl1"]["tau"].value_or(o.tvl1.tau);
    o.tvl1.warps = t["tvl1"]["warps"].value_or(o.tvl1.warps);
    o.tvl1.iters = t["tvl1"]["iters"].value_or(o.tvl1.iters);
    o.tvl1.pyramid_scale = t["tvl1"]["pyramid_scale"].value_or(o.tvl1.pyramid_scale);
    o.tvl1.levels = t["tvl1"]["levels"].value_or(o.tvl1.levels);
    o.validate();
    return o;
}

std::vector<Clip> load_dataset(const std::filesystem::path& root) {
    const auto entries = list_dataset(root);
    if (entries.empty()) throw Error("no clips found under " + root.string());
    std::vector<Clip> clips(entries.size());
#pragma omp parallel for schedule(dynamic)
    for (std::size_t i = 0; i < entries.size(); ++i) clips[i] = load_clip(entries[i].path);
    for (std::size_t i = 0; i < clips.size(); ++i) {
        if (!clips[i].label) clips[i].label = entries[i].label;
        if (clips[i].size() < 2) throw Error("clip " + entries[i].path.string() + " has fewer than two frames");
    }
    return clips;
}

std::vector<std::vector<FlowField>> dataset_flows(const std::vector<Clip>& clips, const TrainOptions& options) {
    std::vector<std::vector<FlowField>> flows(clips.size());
    std::vector<std::exception_ptr> errors(clips.size());
#pragma omp parallel for schedule(dynamic)
    for (std::size_t i = 0; i < clips.size(); ++i) {
        try {
            flows[i] = clip_flows(clips[i], options.tvl1, options.flow_side);
        } catch (...) {
            errors[i] = std::current_exception();
        }
    }
    for (const auto& e : errors)
        if (e) std::rethrow_exception(e);
    return flows;
}

namespace {

int clip_label(const Clip& clip) {
    if (!clip.label) throw InvalidArgument("training clip without a label");
    return label_index(*clip.label);
}

}  // namespace

StreamTraining train_streams(const std::vector<Clip>& clips, const std::vector<std::vector<FlowField>>& flows,
                             const TrainOptions& options) {
    options.validate();
    if (clips.empty() || clips.size() != flows.size()) throw InvalidArgument("train_streams: clips and flows differ");
    StreamTraining out;

    out.spatial = StreamModel::spatial(options.seed);
    out.spatial.norm() = estimate_frame_norm(clips);
    out.spatial_config = TrainConfig::desk_spatial();
    out.spatial_config.seed = options.seed;
    out.spatial_config.epochs = std::max(1, options.spatial_epochs);
    if (options.spatial_epochs > 0) {
        FrameSamples samples(clips, out.spatial, AugmentConfig{}, out.spatial_config.frames_per_video);
        auto result = train_stream(out.spatial, samples, nullptr, out.spatial_config);
        out.spatial = std::move(result.model);
        out.spatial_history = std::move(result.history);
    } else {
        spdlog::warn("spatial epochs = 0: writing the initialized spatial model");
    }

    out.temporal = temporal_from_spatial(out.spatial, options.stack_length);
    out.temporal_config = TrainConfig::desk_temporal();
    out.temporal_config.seed = options.seed + 1;
    out.temporal_config.epochs = std::max(1, options.temporal_epochs);
    if (options.temporal_epochs > 0) {
        std::vector<FlowSamples::Video> videos;
        videos.reserve(clips.size());
        for (std::size_t i = 0; i < clips.size(); ++i) videos.push_back({flows[i], clip_label(clips[i])});
        FlowSamples samples(std::move(videos), out.temporal, AugmentConfig{}, options.stack_length);
        auto result = train_stream(out.temporal, samples, nullptr, out.temporal_config);
        out.temporal = std::move(result.model);
        out.temporal_history = std::move(result.history);
    } else {
        spdlog::warn("temporal epochs = 0: writing the cross-modality initialized temporal model");
    }
    return out;
}

PositionScores score_positions(const StreamModel& spatial, const StreamModel& temporal, const Clip& clip,
                               const std::vector<FlowField>& flows, int positions) {
    if (clip.empty()) throw InvalidArgument("score_positions: empty clip");
    if (flows.size() + 1 != clip.size()) throw InvalidArgument("score_positions: need one flow per frame pair");
    const int L = temporal.shape().input_channels / 2;
    const int fw = flows.empty() ? 0 : flows.front().width;
    const int fh = flows.empty() ? 0 : flows.front().height;
    PositionScores out;
    out.positions = center_segment_frames(clip.size(), std::min<int>(positions, static_cast<int>(clip.size())));
    for (std::size_t t : out.positions) {
        std::deque<FlowField> history;
        const std::size_t first = t >= static_cast<std::size_t>(L) ? t - static_cast<std::size_t>(L) : 0;
        for (std::size_t j = first; j < t; ++j) history.push_back(flows[j]);
        out.spatial.push_back(forward(spatial, clip.frames[t]));
        out.temporal.push_back(forward(temporal, recent_stack(history, L, fw, fh)));
    }
    return out;
}

SvmTraining train_svm(const std::vector<Clip>& clips, const std::vector<std::vector<FlowField>>& flows,
                      const TrainOptions& options) {
    options.validate();
    std::vector<LabeledSample> per_clip;
    std::array<int, kNumClasses> counts{};
    for (const Clip& c : clips) {
        per_clip.push_back({{}, clip_label(c)});
        ++counts[static_cast<std::size_t>(per_clip.back().label)];
    }
    int smallest = std::numeric_limits<int>::max();
    for (int n : counts)
        if (n > 0) smallest = std::min(smallest, n);
    const int k = std::min(options.folds, smallest);
    if (k < 2) throw InvalidArgument("train_svm: every class needs at least two clips for cross-fitting");
    const auto fold_of = stratified_folds(per_clip, k, options.seed);

    SvmTraining out;
    out.folds = k;
    for (int f = 0; f < k; ++f) {
        std::vector<Clip> train_clips;
        std::vector<std::vector<FlowField>> train_flows;
        std::vector<std::size_t> held;
        for (std::size_t i = 0; i < clips.size(); ++i) {
            if (fold_of[i] == f) {
                held.push_back(i);
            } else {
                train_clips.push_back(clips[i]);
                train_flows.push_back(flows[i]);
            }
        }
        spdlog::info("cross-fitting fold {}/{}: {} training clips, {} held out", f + 1, k, train_clips.size(),
                     held.size());
        TrainOptions fold_options = options;
        fold_options.seed = options.seed + 1000 * static_cast<std::uint64_t>(f + 1);
        const StreamTraining st = train_streams(train_clips, train_flows, fold_options);
        for (std::size_t i : held) {
            const PositionScores ps =
                score_positions(st.spatial, st.temporal, clips[i], flows[i], options.positions_per_clip);
            for (std::size_t p = 0; p < ps.positions.size(); ++p) {
                const FusionInput x = fusion_input(ps.spatial[p], ps.temporal[p]);
                out.samples.push_back({std::vector<double>(x.begin(), x.end()), per_clip[i].label});
            }
        }
    }
    SvmConfig base;
    base.degree = 5;
    out.search = random_search(out.samples, SearchSpace{}, options.search_trials, options.seed, 5, base);
    out.svm = svm_fit(out.samples, out.search.best);
    return out;
}

namespace {

void write_json(const std::filesystem::path& path, const json& j) {
    std::ofstream out(path);
    if (!out) throw Error("cannot write " + path.string());
    out << j.dump(2) << "\n";
}

json read_json(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) throw Error("cannot open " + path.string());
    try {
        return json::parse(in);
    } catch (const json::exception& e) {
        throw Error(path.string() + ": " + e.what());
    }
}

double final_accuracy(const std::vector<EpochMetrics>& history) {
    return history.empty() ? 0.0 : history.back().train_accuracy;
}

}  // namespace

json cmd_train_streams(const std::filesystem::path& dataset, const std::filesystem::path& out_dir,
                       const TrainOptions& options) {
    options.validate();
    const auto clips = load_dataset(dataset);
    spdlog::info("computing flows for {} clips at {}x{}", clips.size(), options.flow_side, options.flow_side);
    const auto flows = dataset_flows(clips, options);
    const StreamTraining st = train_streams(clips, flows, options);
    std::filesystem::create_directories(out_dir);
    save_model(st.spatial, out_dir / "spatial.lmdl");
    save_model_sidecar(out_dir / "spatial.lmdl", st.spatial, st.spatial_config, st.spatial_history);
    save_model(st.temporal, out_dir / "temporal.lmdl");
    save_model_sidecar(out_dir / "temporal.lmdl", st.temporal, st.temporal_config, st.temporal_history);
    const json summary{{"clips", clips.size()},
                       {"options", options.to_json()},
                       {"spatial", {{"epochs", st.spatial_history.size()}, {"train_accuracy", final_accuracy(st.spatial_history)}}},
                       {"temporal",
                        {{"epochs", st.temporal_history.size()}, {"train_accuracy", final_accuracy(st.temporal_history)}}}};
    write_json(out_dir / "train.json", summary);
    return summary;
}

json cmd_train_svm(const std::filesystem::path& dataset, const std::filesystem::path& model_dir,
                   std::optional<TrainOptions> overrides) {
    const TrainOptions options =
        overrides ? *overrides : TrainOptions::from_json(read_json(model_dir / "train.json").at("options"));
    options.validate();
    ModelBundle bundle;
    bundle.spatial = load_model(model_dir / "spatial.lmdl");
    bundle.temporal = load_model(model_dir / "temporal.lmdl");
    if (bundle.stack_length() != options.stack_length)
        throw InvalidArgument("train-svm: temporal checkpoint stack length " + std::to_string(bundle.stack_length()) +
                              " does not match the options (" + std::to_string(options.stack_length) + ")");
    const auto clips = load_dataset(dataset);
    const auto flows = dataset_flows(clips, options);
    SvmTraining st = train_svm(clips, flows, options);
    bundle.svm = st.svm;
    bundle.flow_side = options.flow_side;
    bundle.tvl1 = options.tvl1;
    save_bundle(bundle, model_dir);

    json trials = json::array();
    for (const auto& t : st.search.trials)
        trials.push_back({{"gamma", t.config.gamma}, {"C", t.config.C}, {"coef0", t.config.coef0}, {"cv_accuracy", t.score}});
    const json summary{{"samples", st.samples.size()},
                       {"folds", st.folds},
                       {"best",
                        {{"gamma", st.search.best.gamma},
                         {"C", st.search.best.C},
                         {"coef0", st.search.best.coef0},
                         {"degree", st.search.best.degree},
                         {"cv_accuracy", st.search.best_score},
                         {"trial", st.search.best_trial}}},
                       {"support_vectors", st.svm.support_vector_count()},
                       {"converged", st.svm.converged()},
                       {"trials", trials}};
    write_json(model_dir / "svm.json", summary);
    return summary;
}

}  // namespace lens::app
