#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <functional>
#include <optional>
#include <random>
#include <span>
#include <string>
#include <vector>

#include "lens/optflow.hpp"
#include "lens/videoio.hpp"

namespace lens {

/// Softmax distribution over ActionLabel order.
struct ClassScores {
    std::array<double, kNumClasses> probs{0.25, 0.25, 0.25, 0.25};

    /// Lowest index wins ties.
    int argmax() const;
    ActionLabel label() const { return label_from_index(argmax()); }
    double max_prob() const { return probs[static_cast<std::size_t>(argmax())]; }
    bool is_distribution(double tol = 1e-6) const;
};

ClassScores softmax(std::span<const double> logits);

/// Channel-major float tensor (C x H x W).
struct Tensor3 {
    int channels = 0;
    int height = 0;
    int width = 0;
    std::vector<double> data;

    Tensor3() = default;
    Tensor3(int c, int h, int w, double fill = 0.0)
        : channels(c), height(h), width(w), data(static_cast<std::size_t>(c) * h * w, fill) {}

    double& at(int c, int y, int x) { return data[(static_cast<std::size_t>(c) * height + y) * width + x]; }
    double at(int c, int y, int x) const { return data[(static_cast<std::size_t>(c) * height + y) * width + x]; }
};

/// RGB frame as a 3-channel tensor with raw 0..255 values.
Tensor3 frame_tensor(const Frame& frame);
/// Flow stack as a 2L-channel tensor of quantized 0..255 values.
Tensor3 flow_tensor(const StackedFlow& stack);

// ---------------------------------------------------------------------------
// Model

enum class StreamKind : std::uint8_t { Spatial = 0, Temporal = 1 };

struct ModelShape {
    int input_channels = 3;
    int filters = 8;
    int kernel = 3;
    int hidden = 16;
    int input_size = 32;
};

/// Per-channel normalization and the deterministic test-time crop.
struct InputNorm {
    std::vector<double> mean;
    std::vector<double> std;
    double test_crop = 0.875;
};

/// Tiny two-stream reference network:
/// conv k x k (same padding, C -> F) -> ReLU -> global average pool -> affine F -> H -> ReLU
/// -> affine H -> 4 -> softmax. All parameters live in one flat vector so the optimizer and
/// checkpoints can treat them uniformly.
class StreamModel {
public:
    StreamModel() = default;
    StreamModel(StreamKind kind, ModelShape shape);

    /// Gaussian He initialization (std = sqrt(2 / fan_in)), zero biases.
    static StreamModel initialized(StreamKind kind, ModelShape shape, std::uint64_t seed);
    static StreamModel spatial(std::uint64_t seed, ModelShape shape = {});
    static StreamModel temporal(std::uint64_t seed, int stack_length = kDefaultStackLength, ModelShape shape = {});

    StreamKind kind() const { return kind_; }
    const ModelShape& shape() const { return shape_; }
    InputNorm& norm() { return norm_; }
    const InputNorm& norm() const { return norm_; }

    std::vector<double>& params() { return params_; }
    const std::vector<double>& params() const { return params_; }

    struct Layout {
        std::size_t conv_w, conv_b, fc1_w, fc1_b, fc2_w, fc2_b, total;
    };
    Layout layout() const;

    std::span<double> conv_weights();
    std::span<const double> conv_weights() const;
    std::span<double> fc2_bias();

    void check_finite() const;

private:
    StreamKind kind_ = StreamKind::Spatial;
    ModelShape shape_{};
    InputNorm norm_;
    std::vector<double> params_;
};

/// Class scores for an already preprocessed input tensor.
ClassScores forward(const StreamModel& model, const Tensor3& input);
/// Applies the model's test-time transform (center crop, resize, normalize) first.
ClassScores forward(const StreamModel& model, const Frame& frame);
ClassScores forward(const StreamModel& model, const StackedFlow& stack);

/// Test-time transform: center crop of `norm.test_crop`, bilinear resize, normalization.
Tensor3 preprocess(const StreamModel& model, const Tensor3& raw);
Tensor3 preprocess(const InputNorm& norm, int input_size, const Tensor3& raw);

/// Per-channel RGB statistics over every `frame_step`-th frame of the clips.
InputNorm estimate_frame_norm(std::span<const Clip> clips, int frame_step = 5);
/// Quantized flow normalization: mean 128, std 12.75 (one pixel of motion per unit).
InputNorm flow_norm(int channels);

/// Cross-entropy of the consensus (mean softmax over `segments`) against `label`.
/// Adds d loss / d params into `grad` (sized like params) when non-null.
double consensus_loss(const StreamModel& model, std::span<const Tensor3> segments, int label,
                      std::vector<double>* grad);

// ---------------------------------------------------------------------------
// Training mechanics

struct TrainConfig {
    double lr0 = 5e-4;
    double momentum = 0.9;
    int batch = 64;
    int patience = 1;
    double lr_factor = 0.1;
    int epochs = 30;
    int frames_per_video = 3;  // spatial segments
    int stacks_per_video = 1;  // temporal samples
    std::uint64_t seed = 0;

    static TrainConfig spatial_defaults();
    static TrainConfig temporal_defaults();
    /// Settings for the tiny from-scratch model on desk-scale synthetic data.
    static TrainConfig desk_spatial();
    static TrainConfig desk_temporal();
    void validate() const;
};

/// v <- momentum * v - lr * grad; theta <- theta + v.
class MomentumSgd {
public:
    MomentumSgd(std::size_t n, double momentum);
    void step(std::span<double> params, std::span<const double> grad, double lr);
    const std::vector<double>& velocity() const { return velocity_; }

private:
    double momentum_;
    std::vector<double> velocity_;
};

/// Multiplies the learning rate by `factor` once the monitored metric (higher is better) has
/// failed to improve for more than `patience` consecutive epochs.
class PlateauScheduler {
public:
    PlateauScheduler(double lr0, int patience, double factor);
    /// Returns true when this call decayed the learning rate.
    bool step(double metric);
    double lr() const { return lr_; }
    int bad_epochs() const { return bad_; }

private:
    double lr_;
    int patience_;
    double factor_;
    std::optional<double> best_;
    int bad_ = 0;
};

struct AugmentConfig {
    double crop_min = 0.8;  // crop side as a fraction of the shorter image side
    double crop_max = 1.0;
    double scale_jitter_min = 1.0;
    double scale_jitter_max = 1.0;
    double aspect_min = 1.0;  // width / height of the crop
    double aspect_max = 1.0;
    int output_size = 32;
    std::vector<double> mean{0.0, 0.0, 0.0};
    std::vector<double> std{1.0, 1.0, 1.0};

    static AugmentConfig identity(int output_size, int channels);
    void validate(int channels) const;
};

/// crop -> scale/aspect jitter -> resize -> per-channel (x - mean) / std.
Tensor3 augment(const Tensor3& raw, const AugmentConfig& config, std::mt19937_64& rng);
Tensor3 augment(const Frame& frame, const AugmentConfig& config, std::mt19937_64& rng);

/// One uniform index per equal-width window over [0, length).
std::vector<std::size_t> sample_segment_frames(std::size_t length, int n, std::mt19937_64& rng);

/// Element-wise mean of the distributions, renormalized.
ClassScores segmental_consensus(std::span<const ClassScores> scores);

/// Replicates the RGB mean of each spatial filter to `target_channels` channels.
/// Input is [F, 3, k, k] flattened, output [F, target_channels, k, k].
std::vector<double> cross_modality_init(std::span<const double> spatial_first_layer, int filters, int kernel,
                                        int target_channels);

/// Temporal model that copies every layer of `spatial` except the first, which is initialized
/// by cross_modality_init.
StreamModel temporal_from_spatial(const StreamModel& spatial, int stack_length);

/// Source of training videos for one stream.
class VideoSamples {
public:
    virtual ~VideoSamples() = default;
    virtual std::size_t size() const = 0;
    virtual int label(std::size_t i) const = 0;
    /// Randomly sampled and augmented segments of video i.
    virtual std::vector<Tensor3> training_inputs(std::size_t i, std::mt19937_64& rng) const = 0;
    /// Deterministic test-time segments of video i.
    virtual std::vector<Tensor3> eval_inputs(std::size_t i) const = 0;
};

/// Spatial stream samples: `segments` frames per video from equally spaced windows.
class FrameSamples : public VideoSamples {
public:
    FrameSamples(std::vector<Clip> clips, const StreamModel& model, AugmentConfig augment, int segments = 3);
    const Clip& clip(std::size_t i) const { return clips_[i]; }
    std::size_t size() const override { return clips_.size(); }
    int label(std::size_t i) const override;
    std::vector<Tensor3> training_inputs(std::size_t i, std::mt19937_64& rng) const override;
    std::vector<Tensor3> eval_inputs(std::size_t i) const override;

private:
    std::vector<Clip> clips_;
    InputNorm norm_;
    int input_size_;
    AugmentConfig augment_;
    int segments_;
};

/// Temporal stream samples: one L-deep stack of precomputed consecutive flows per video.
class FlowSamples : public VideoSamples {
public:
    struct Video {
        std::vector<FlowField> flows;
        int label = 0;
    };
    FlowSamples(std::vector<Video> videos, const StreamModel& model, AugmentConfig augment, int stack_length);
    std::size_t size() const override { return videos_.size(); }
    int label(std::size_t i) const override { return videos_[i].label; }
    std::vector<Tensor3> training_inputs(std::size_t i, std::mt19937_64& rng) const override;
    std::vector<Tensor3> eval_inputs(std::size_t i) const override;

private:
    StackedFlow stack_at(std::size_t i, std::size_t start) const;

    std::vector<Video> videos_;
    InputNorm norm_;
    int input_size_;
    AugmentConfig augment_;
    int stack_length_;
};

/// Flow for consecutive frame pairs of a clip, frames resized to `side` x `side` first when
/// side > 0. At most `max_pairs` pairs centered in the clip when max_pairs > 0.
std::vector<FlowField> clip_flows(const Clip& clip, const Tvl1Params& params = {}, int side = 0,
                                  int max_pairs = 0);

/// Deterministic midpoints lo + (hi - lo) / 2 of the sampling windows, used at test time.
std::vector<std::size_t> center_segment_frames(std::size_t length, int n);

struct EpochMetrics {
    int epoch = 0;
    double loss = 0.0;
    double train_accuracy = 0.0;
    double val_accuracy = 0.0;
    double lr = 0.0;
    bool lr_decayed = false;
};

struct TrainResult {
    StreamModel model;
    std::vector<EpochMetrics> history;
};

/// Mini-batch momentum SGD on the consensus cross-entropy. `val` drives the plateau scheduler;
/// when null, training accuracy is monitored instead. Throws NumericError on a non-finite loss.
TrainResult train_stream(StreamModel model, const VideoSamples& train, const VideoSamples* val,
                         const TrainConfig& config);

/// Consensus scores of video i from its deterministic test-time inputs.
ClassScores predict_video(const StreamModel& model, const VideoSamples& samples, std::size_t i);
/// Fraction of videos whose consensus argmax equals the label (deterministic inputs).
double evaluate_accuracy(const StreamModel& model, const VideoSamples& samples);

struct GradCheckOptions {
    int samples = 128;
    double step = 1e-4;
    std::uint64_t seed = 0;
    /// Multiplies the analytic gradient before comparison; != 1 is a negative control.
    double corrupt_scale = 1.0;
};

struct GradCheckReport {
    double max_rel_error = 0.0;
    int compared = 0;
    int kinks_skipped = 0;  // samples whose +-h probe changed a ReLU pattern
};

/// Max relative error |a - n| / max(|a|, |n|, 1e-6) between analytic and central-difference
/// gradients over a random parameter subset.
GradCheckReport gradient_check(const StreamModel& model, std::span<const Tensor3> segments, int label,
                               const GradCheckOptions& options = {});

// ---------------------------------------------------------------------------
// Checkpoints (.lmdl + optional JSON sidecar)

std::vector<std::uint8_t> encode_model(const StreamModel& model);
StreamModel decode_model(std::span<const std::uint8_t> bytes);
void save_model(const StreamModel& model, const std::filesystem::path& path);
StreamModel load_model(const std::filesystem::path& path);
/// `<path>.json` next to a checkpoint: kind, shape, TrainConfig and the metric history.
void save_model_sidecar(const std::filesystem::path& model_path, const StreamModel& model,
                        const TrainConfig& config, std::span<const EpochMetrics> history);

}  // namespace lens
