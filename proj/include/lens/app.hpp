#pragma once

#include <cstdint>
#include <filesystem>
#include <nlohmann/json.hpp>
#include <optional>
#include <string>
#include <vector>

#include "lens/edge.hpp"
#include "lens/fusion.hpp"
#include "lens/streams.hpp"
#include "lens/synth.hpp"

namespace lens::app {

// ---------------------------------------------------------------------------
// Training

struct TrainOptions {
    std::uint64_t seed = 7;
    int spatial_epochs = 60;
    int temporal_epochs = 60;
    int stack_length = 4;
    int flow_side = 32;
    Tvl1Params tvl1 = fast_tvl1();
    /// Cross-fitting folds producing the held-out stream outputs the SVM is trained on.
    int folds = 5;
    int search_trials = 16;
    /// Scored positions per clip (frame plus the flow stack ending there).
    int positions_per_clip = 5;

    static Tvl1Params fast_tvl1();
    void validate() const;
    nlohmann::json to_json() const;
    static TrainOptions from_json(const nlohmann::json& j);
};

/// Reads a training TOML file; keys mirror TrainOptions (tvl1 as a [tvl1] table).
TrainOptions load_train_options(const std::filesystem::path& path, TrainOptions base = {});

/// Every clip of a dataset tree, in list_dataset order. Throws Error when none are found.
std::vector<Clip> load_dataset(const std::filesystem::path& root);

/// Consecutive-frame flows of every clip at the training flow side (clip-parallel).
std::vector<std::vector<FlowField>> dataset_flows(const std::vector<Clip>& clips, const TrainOptions& options);

struct StreamTraining {
    StreamModel spatial;
    StreamModel temporal;
    std::vector<EpochMetrics> spatial_history;
    std::vector<EpochMetrics> temporal_history;
    TrainConfig spatial_config;
    TrainConfig temporal_config;
};

/// Spatial stream first; the temporal stream starts from cross-modality initialization of the
/// trained spatial model. Epoch counts of 0 keep the initialized models.
StreamTraining train_streams(const std::vector<Clip>& clips, const std::vector<std::vector<FlowField>>& flows,
                             const TrainOptions& options);

/// Per-position stream scores of one clip, computed exactly as the live pipeline does: the
/// spatial stream sees frame t, the temporal stream the zero-padded stack of flows ending at t.
struct PositionScores {
    std::vector<std::size_t> positions;
    std::vector<ClassScores> spatial;
    std::vector<ClassScores> temporal;
};
PositionScores score_positions(const StreamModel& spatial, const StreamModel& temporal, const Clip& clip,
                               const std::vector<FlowField>& flows, int positions);

struct SvmTraining {
    SvmModel svm;
    SearchResult search;
    std::vector<LabeledSample> samples;
    int folds = 0;
};

/// Cross-fits the streams over stratified folds, scores every held-out clip, then runs the
/// randomized search and fits the final SVM on all held-out samples.
SvmTraining train_svm(const std::vector<Clip>& clips, const std::vector<std::vector<FlowField>>& flows,
                      const TrainOptions& options);

/// Writes spatial.lmdl, temporal.lmdl (+ JSON sidecars) and train.json into `out_dir`.
nlohmann::json cmd_train_streams(const std::filesystem::path& dataset, const std::filesystem::path& out_dir,
                                 const TrainOptions& options);
/// Reads train.json and the stream checkpoints from `model_dir`, writes fusion.lsvm and
/// bundle.json, completing a loadable ModelBundle.
nlohmann::json cmd_train_svm(const std::filesystem::path& dataset, const std::filesystem::path& model_dir,
                             std::optional<TrainOptions> overrides = std::nullopt);

// ---------------------------------------------------------------------------
// Evaluation

struct ClipPredictions {
    std::vector<int> truths;
    std::vector<int> spatial;
    std::vector<int> temporal;
    std::vector<int> fused;
};

/// Accuracies, the three confusion matrices and the percent-change table. Infinite changes
/// are written as the string "inf".
nlohmann::json eval_report(const ClipPredictions& p);

/// Clip-level predictions: each stream's consensus over the scored positions; the fused
/// prediction is the consensus of per-position fused scores.
ClipPredictions predict_dataset(const ModelBundle& bundle, const std::vector<Clip>& clips, int positions);

nlohmann::json cmd_eval(const std::filesystem::path& dataset, const std::filesystem::path& model_dir,
                        int positions = 5);

// ---------------------------------------------------------------------------
// Throughput benchmark

struct BenchOptions {
    /// "synthetic" sleeps a calibrated per-frame cost; "measured" runs the real pipeline.
    std::string cost = "synthetic";
    double window_s = 2.0;
    int skip = 1;
    double edge_cost_ms = 100.0;
    double cloud_cost_ms = 50.0;
    /// Fraction of the synthetic cost spent in optical flow, which scales with pixel count.
    double flow_share = 0.8;
    std::filesystem::path model_dir;
    std::uint64_t seed = 7;

    void validate() const;
};

struct BenchRow {
    std::string name;
    InferenceMode mode = InferenceMode::Edge;
    int skip = 0;
    bool reduced = false;
    ThroughputReport report;
    double ratio = 1.0;  // effective FPS relative to the same mode's baseline row
};

/// Rows {baseline, +skip, +reduced, +skip+reduced} for edge then cloud inference.
std::vector<BenchRow> run_bench(const BenchOptions& options);
nlohmann::json bench_json(const std::vector<BenchRow>& rows);
std::string bench_table(const std::vector<BenchRow>& rows);

/// Per-frame synthetic cost of one configuration.
double synthetic_cost_ms(const BenchOptions& options, InferenceMode mode, bool reduced);

// ---------------------------------------------------------------------------
// Flow debugging

/// Binary PPM (P6) encoding of an RGB frame.
std::vector<std::uint8_t> encode_ppm(const Frame& frame);

}  // namespace lens::app
