#include <cmath>

#include "lens/app.hpp"
#include "lens/error.hpp"

namespace lens::app {

using nlohmann::json;

namespace {

json matrix_json(const ConfusionMatrix& m) {
    json rows = json::array();
    for (const auto& row : m.counts) rows.push_back(row);
    return rows;
}

json change_json(const std::array<double, kNumClasses>& change) {
    json out = json::object();
    for (int k = 0; k < kNumClasses; ++k) {
        const double v = change[static_cast<std::size_t>(k)];
        out[std::string(label_name(label_from_index(k)))] = std::isinf(v) ? json("inf") : json(v);
    }
    return out;
}

}  // namespace

json eval_report(const ClipPredictions& p) {
    const std::size_t n = p.truths.size();
    if (n == 0) throw InvalidArgument("eval_report: no predictions");
    if (p.spatial.size() != n || p.temporal.size() != n || p.fused.size() != n)
        throw InvalidArgument("eval_report: prediction lists differ in length");
    const auto cs = confusion_matrix(p.truths, p.spatial);
    const auto ct = confusion_matrix(p.truths, p.temporal);
    const auto cf = confusion_matrix(p.truths, p.fused);
    json labels = json::array();
    for (ActionLabel l : kAllLabels) labels.push_back(label_name(l));
    const double as = accuracy(cs), at = accuracy(ct), af = accuracy(cf);
    return {{"clips", n},
            {"labels", labels},
            {"accuracy", {{"spatial", as}, {"temporal", at}, {"fused", af}}},
            {"fused_exceeds_both_streams", af > as && af > at},
            {"confusion", {{"spatial", matrix_json(cs)}, {"temporal", matrix_json(ct)}, {"fused", matrix_json(cf)}}},
            {"percent_change",
             {{"spatial_to_fused", change_json(percent_change(cs, cf))},
              {"temporal_to_fused", change_json(percent_change(ct, cf))}}}};
}

ClipPredictions predict_dataset(const ModelBundle& bundle, const std::vector<Clip>& clips, int positions) {
    bundle.validate();
    ClipPredictions out;
    out.truths.resize(clips.size());
    out.spatial.resize(clips.size());
    out.temporal.resize(clips.size());
    out.fused.resize(clips.size());
    std::vector<std::exception_ptr> errors(clips.size());
#pragma omp parallel for schedule(dynamic)
    for (std::size_t i = 0; i < clips.size(); ++i) {
        try {
            if (!clips[i].label) throw InvalidArgument("evaluation clip without a label");
            const auto flows = clip_flows(clips[i], bundle.tvl1, bundle.flow_side);
            const PositionScores ps = score_positions(bundle.spatial, bundle.temporal, clips[i], flows, positions);
            std::vector<ClassScores> fused;
            for (std::size_t p = 0; p < ps.positions.size(); ++p)
                fused.push_back(fuse_scores(bundle.svm, ps.spatial[p], ps.temporal[p]));
            out.truths[i] = label_index(*clips[i].label);
            out.spatial[i] = segmental_consensus(ps.spatial).argmax();
            out.temporal[i] = segmental_consensus(ps.temporal).argmax();
            out.fused[i] = segmental_consensus(fused).argmax();
        } catch (...) {
            errors[i] = std::current_exception();
        }
    }
    for (const auto& e : errors)
        if (e) std::rethrow_exception(e);
    return out;
}

json cmd_eval(const std::filesystem::path& dataset, const std::filesystem::path& model_dir, int positions) {
    const ModelBundle bundle = load_bundle(model_dir);
    const auto clips = load_dataset(dataset);
    json report = eval_report(predict_dataset(bundle, clips, positions));
    report["positions_per_clip"] = positions;
    return report;
}

}  // namespace lens::app
