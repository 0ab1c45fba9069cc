#include <algorithm>
#include <cmath>
#include <numeric>

#include "lens/error.hpp"
#include "lens/streams.hpp"
#include "tensor_ops.hpp"

namespace lens {

TrainConfig TrainConfig::spatial_defaults() {
    TrainConfig c;
    c.lr0 = 5e-4;
    c.patience = 1;
    c.frames_per_video = 3;
    return c;
}

TrainConfig TrainConfig::temporal_defaults() {
    TrainConfig c;
    c.lr0 = 1e-2;
    c.patience = 3;
    c.stacks_per_video = 1;
    return c;
}

TrainConfig TrainConfig::desk_spatial() {
    TrainConfig c = spatial_defaults();
    c.lr0 = 2e-2;
    c.batch = 4;
    c.patience = 5;
    return c;
}

TrainConfig TrainConfig::desk_temporal() {
    TrainConfig c = temporal_defaults();
    c.batch = 4;
    c.patience = 5;
    return c;
}

void TrainConfig::validate() const {
    if (!(lr0 > 0.0) || !std::isfinite(lr0)) throw InvalidArgument("TrainConfig: lr0 must be > 0");
    if (!(momentum >= 0.0 && momentum < 1.0)) throw InvalidArgument("TrainConfig: momentum must be in [0,1)");
    if (patience < 1) throw InvalidArgument("TrainConfig: patience must be >= 1");
    if (!(lr_factor > 0.0 && lr_factor < 1.0)) throw InvalidArgument("TrainConfig: lr_factor must be in (0,1)");
    if (batch < 1) throw InvalidArgument("TrainConfig: batch must be >= 1");
    if (epochs < 1) throw InvalidArgument("TrainConfig: epochs must be >= 1");
    if (frames_per_video < 1 || stacks_per_video < 1) throw InvalidArgument("TrainConfig: samples per video must be >= 1");
}

MomentumSgd::MomentumSgd(std::size_t n, double momentum) : momentum_(momentum), velocity_(n, 0.0) {
    if (!(momentum >= 0.0 && momentum < 1.0)) throw InvalidArgument("MomentumSgd: momentum must be in [0,1)");
}

void MomentumSgd::step(std::span<double> params, std::span<const double> grad, double lr) {
    if (params.size() != velocity_.size() || grad.size() != velocity_.size())
        throw InvalidArgument("MomentumSgd: size mismatch");
    for (std::size_t i = 0; i < params.size(); ++i) {
        velocity_[i] = momentum_ * velocity_[i] - lr * grad[i];
        params[i] += velocity_[i];
    }
}

PlateauScheduler::PlateauScheduler(double lr0, int patience, double factor)
    : lr_(lr0), patience_(patience), factor_(factor) {
    if (!(lr0 > 0.0)) throw InvalidArgument("PlateauScheduler: lr0 must be > 0");
    if (patience < 1) throw InvalidArgument("PlateauScheduler: patience must be >= 1");
    if (!(factor > 0.0 && factor < 1.0)) throw InvalidArgument("PlateauScheduler: factor must be in (0,1)");
}

bool PlateauScheduler::step(double metric) {
    if (!best_ || metric > *best_) {
        best_ = metric;
        bad_ = 0;
        return false;
    }
    if (++bad_ > patience_) {
        lr_ *= factor_;
        bad_ = 0;
        return true;
    }
    return false;
}

// ---------------------------------------------------------------------------

std::vector<std::size_t> sample_segment_frames(std::size_t length, int n, std::mt19937_64& rng) {
    if (n < 1) throw InvalidArgument("sample_segment_frames: n must be >= 1");
    if (length < static_cast<std::size_t>(n)) throw InvalidArgument("sample_segment_frames: clip shorter than n");
    std::vector<std::size_t> out;
    const std::size_t nn = static_cast<std::size_t>(n);
    for (std::size_t k = 0; k < nn; ++k) {
        const std::size_t lo = k * length / nn;
        const std::size_t hi = (k + 1) * length / nn;
        out.push_back(std::uniform_int_distribution<std::size_t>(lo, hi - 1)(rng));
    }
    return out;
}

std::vector<std::size_t> center_segment_frames(std::size_t length, int n) {
    if (n < 1) throw InvalidArgument("center_segment_frames: n must be >= 1");
    if (length < static_cast<std::size_t>(n)) throw InvalidArgument("center_segment_frames: clip shorter than n");
    std::vector<std::size_t> out;
    const std::size_t nn = static_cast<std::size_t>(n);
    for (std::size_t k = 0; k < nn; ++k) {
        const std::size_t lo = k * length / nn;
        const std::size_t hi = (k + 1) * length / nn;
        out.push_back(lo + (hi - lo) / 2);
    }
    return out;
}

ClassScores segmental_consensus(std::span<const ClassScores> scores) {
    if (scores.empty()) throw InvalidArgument("segmental_consensus: empty list");
    ClassScores out;
    out.probs.fill(0.0);
    for (const ClassScores& s : scores)
        for (std::size_t k = 0; k < out.probs.size(); ++k) out.probs[k] += s.probs[k];
    const double total = std::accumulate(out.probs.begin(), out.probs.end(), 0.0);
    if (!(total > 0.0)) throw NumericError("segmental_consensus: scores sum to zero");
    for (double& p : out.probs) p /= total;
    return out;
}

std::vector<double> cross_modality_init(std::span<const double> spatial_first_layer, int filters, int kernel,
                                        int target_channels) {
    if (filters < 1 || kernel < 1 || target_channels < 1)
        throw InvalidArgument("cross_modality_init: shapes must be positive");
    const std::size_t kk = static_cast<std::size_t>(kernel) * kernel;
    if (spatial_first_layer.size() != static_cast<std::size_t>(filters) * 3 * kk)
        throw InvalidArgument("cross_modality_init: expected [F,3,k,k] weights");
    std::vector<double> out(static_cast<std::size_t>(filters) * target_channels * kk);
    for (std::size_t f = 0; f < static_cast<std::size_t>(filters); ++f) {
        for (std::size_t i = 0; i < kk; ++i) {
            double mean = 0.0;
            for (std::size_t c = 0; c < 3; ++c) mean += spatial_first_layer[(f * 3 + c) * kk + i];
            mean /= 3.0;
            for (std::size_t c = 0; c < static_cast<std::size_t>(target_channels); ++c)
                out[(f * target_channels + c) * kk + i] = mean;
        }
    }
    return out;
}

StreamModel temporal_from_spatial(const StreamModel& spatial, int stack_length) {
    if (spatial.kind() != StreamKind::Spatial) throw InvalidArgument("temporal_from_spatial: source must be spatial");
    if (stack_length < 1) throw InvalidArgument("temporal_from_spatial: stack length must be >= 1");
    ModelShape shape = spatial.shape();
    shape.input_channels = 2 * stack_length;
    StreamModel t(StreamKind::Temporal, shape);
    const auto ls = spatial.layout();
    const auto lt = t.layout();
    const auto first = cross_modality_init(spatial.conv_weights(), shape.filters, shape.kernel, shape.input_channels);
    std::copy(first.begin(), first.end(), t.params().begin() + static_cast<std::ptrdiff_t>(lt.conv_w));
    std::copy(spatial.params().begin() + static_cast<std::ptrdiff_t>(ls.conv_b), spatial.params().end(),
              t.params().begin() + static_cast<std::ptrdiff_t>(lt.conv_b));
    return t;
}

// ---------------------------------------------------------------------------

namespace {

AugmentConfig fitted(AugmentConfig a, const InputNorm& norm, int input_size) {
    a.mean = norm.mean;
    a.std = norm.std;
    a.output_size = input_size;
    return a;
}

}  // namespace

FrameSamples::FrameSamples(std::vector<Clip> clips, const StreamModel& model, AugmentConfig augment, int segments)
    : clips_(std::move(clips)),
      norm_(model.norm()),
      input_size_(model.shape().input_size),
      augment_(fitted(std::move(augment), model.norm(), model.shape().input_size)),
      segments_(segments) {
    if (model.kind() != StreamKind::Spatial) throw InvalidArgument("FrameSamples: needs a spatial model");
    if (segments < 1) throw InvalidArgument("FrameSamples: segments must be >= 1");
    augment_.validate(3);
    for (const Clip& c : clips_) {
        if (!c.label) throw InvalidArgument("FrameSamples: unlabeled clip");
        if (c.size() < static_cast<std::size_t>(segments)) throw InvalidArgument("FrameSamples: clip shorter than segments");
    }
}

int FrameSamples::label(std::size_t i) const { return label_index(*clips_[i].label); }

std::vector<Tensor3> FrameSamples::training_inputs(std::size_t i, std::mt19937_64& rng) const {
    std::vector<Tensor3> out;
    for (std::size_t f : sample_segment_frames(clips_[i].size(), segments_, rng))
        out.push_back(augment(clips_[i].frames[f], augment_, rng));
    return out;
}

std::vector<Tensor3> FrameSamples::eval_inputs(std::size_t i) const {
    std::vector<Tensor3> out;
    for (std::size_t f : center_segment_frames(clips_[i].size(), segments_))
        out.push_back(preprocess(norm_, input_size_, frame_tensor(clips_[i].frames[f])));
    return out;
}

FlowSamples::FlowSamples(std::vector<Video> videos, const StreamModel& model, AugmentConfig augment, int stack_length)
    : videos_(std::move(videos)),
      norm_(model.norm()),
      input_size_(model.shape().input_size),
      augment_(fitted(std::move(augment), model.norm(), model.shape().input_size)),
      stack_length_(stack_length) {
    if (model.kind() != StreamKind::Temporal) throw InvalidArgument("FlowSamples: needs a temporal model");
    if (2 * stack_length != model.shape().input_channels)
        throw InvalidArgument("FlowSamples: stack length does not match the model");
    augment_.validate(2 * stack_length);
    for (const Video& v : videos_) {
        if (v.flows.size() < static_cast<std::size_t>(stack_length))
            throw InvalidArgument("FlowSamples: video has fewer flows than the stack length");
        if (v.label < 0 || v.label >= kNumClasses) throw InvalidArgument("FlowSamples: label out of range");
    }
}

StackedFlow FlowSamples::stack_at(std::size_t i, std::size_t start) const {
    const auto& flows = videos_[i].flows;
    return stack_flows(std::span<const FlowField>(flows).subspan(start, static_cast<std::size_t>(stack_length_)));
}

std::vector<Tensor3> FlowSamples::training_inputs(std::size_t i, std::mt19937_64& rng) const {
    const std::size_t last = videos_[i].flows.size() - static_cast<std::size_t>(stack_length_);
    const std::size_t start = std::uniform_int_distribution<std::size_t>(0, last)(rng);
    std::vector<Tensor3> out;
    out.push_back(augment(flow_tensor(stack_at(i, start)), augment_, rng));
    return out;
}

std::vector<Tensor3> FlowSamples::eval_inputs(std::size_t i) const {
    const std::size_t start = (videos_[i].flows.size() - static_cast<std::size_t>(stack_length_)) / 2;
    std::vector<Tensor3> out;
    out.push_back(preprocess(norm_, input_size_, flow_tensor(stack_at(i, start))));
    return out;
}

std::vector<FlowField> clip_flows(const Clip& clip, const Tvl1Params& params, int side, int max_pairs) {
    if (clip.size() < 2) throw InvalidArgument("clip_flows: need at least two frames");
    std::size_t begin = 0;
    std::size_t pairs = clip.size() - 1;
    if (max_pairs > 0 && pairs > static_cast<std::size_t>(max_pairs)) {
        begin = (pairs - static_cast<std::size_t>(max_pairs)) / 2;
        pairs = static_cast<std::size_t>(max_pairs);
    }
    auto prepared = [&](std::size_t i) {
        return side > 0 ? resize_frame(clip.frames[i], side, side) : clip.frames[i];
    };
    std::vector<FlowField> out;
    out.reserve(pairs);
    Frame prev = prepared(begin);
    for (std::size_t k = 0; k < pairs; ++k) {
        Frame next = prepared(begin + k + 1);
        out.push_back(tvl1_flow(prev, next, params));
        prev = std::move(next);
    }
    return out;
}

// ---------------------------------------------------------------------------

ClassScores predict_video(const StreamModel& model, const VideoSamples& samples, std::size_t i) {
    std::vector<ClassScores> scores;
    for (const Tensor3& t : samples.eval_inputs(i)) scores.push_back(forward(model, t));
    return segmental_consensus(scores);
}

double evaluate_accuracy(const StreamModel& model, const VideoSamples& samples) {
    if (samples.size() == 0) throw InvalidArgument("evaluate_accuracy: empty dataset");
    std::size_t correct = 0;
    for (std::size_t i = 0; i < samples.size(); ++i)
        if (predict_video(model, samples, i).argmax() == samples.label(i)) ++correct;
    return static_cast<double>(correct) / static_cast<double>(samples.size());
}

TrainResult train_stream(StreamModel model, const VideoSamples& train, const VideoSamples* val,
                         const TrainConfig& config) {
    config.validate();
    if (train.size() == 0) throw InvalidArgument("train_stream: empty dataset");
    model.check_finite();
    std::mt19937_64 rng(config.seed);
    MomentumSgd opt(model.params().size(), config.momentum);
    PlateauScheduler sched(config.lr0, config.patience, config.lr_factor);
    TrainResult result;
    std::vector<std::size_t> order(train.size());
    std::iota(order.begin(), order.end(), 0);
    std::vector<double> grad(model.params().size());

    for (int epoch = 0; epoch < config.epochs; ++epoch) {
        std::shuffle(order.begin(), order.end(), rng);
        double loss_sum = 0.0;
        std::size_t correct = 0;
        EpochMetrics m;
        m.epoch = epoch;
        m.lr = sched.lr();
        for (std::size_t b = 0; b < order.size(); b += static_cast<std::size_t>(config.batch)) {
            const std::size_t e = std::min(order.size(), b + static_cast<std::size_t>(config.batch));
            std::fill(grad.begin(), grad.end(), 0.0);
            for (std::size_t j = b; j < e; ++j) {
                const std::size_t i = order[j];
                const auto inputs = train.training_inputs(i, rng);
                ClassScores consensus;
                double loss;
                try {
                    loss = detail::consensus_loss(model, inputs, train.label(i), &grad, &consensus);
                } catch (const NumericError& err) {
                    throw NumericError("train_stream: diverged at epoch " + std::to_string(epoch) + " (" + err.what() + ")");
                }
                loss_sum += loss;
                if (consensus.argmax() == train.label(i)) ++correct;
            }
            const double inv = 1.0 / static_cast<double>(e - b);
            for (double& g : grad) g *= inv;
            opt.step(model.params(), grad, sched.lr());
            for (double p : model.params())
                if (!std::isfinite(p)) throw NumericError("train_stream: non-finite parameters at epoch " + std::to_string(epoch));
        }
        m.loss = loss_sum / static_cast<double>(train.size());
        if (!std::isfinite(m.loss)) throw NumericError("train_stream: loss is NaN at epoch " + std::to_string(epoch));
        m.train_accuracy = static_cast<double>(correct) / static_cast<double>(train.size());
        m.val_accuracy = val ? evaluate_accuracy(model, *val) : m.train_accuracy;
        m.lr_decayed = sched.step(m.val_accuracy);
        result.history.push_back(m);
    }
    result.model = std::move(model);
    return result;
}

// ---------------------------------------------------------------------------

namespace {

struct Probe {
    double loss;
    std::uint64_t signature;
};

Probe probe(const StreamModel& model, std::span<const Tensor3> segments, int label) {
    Probe p{0.0, 0};
    double py = 0.0;
    for (const Tensor3& t : segments) {
        const auto a = detail::run_forward(model, t);
        py += a.scores.probs[static_cast<std::size_t>(label)];
        p.signature = p.signature * 31 + detail::relu_signature(a);
    }
    p.loss = -std::log(py / static_cast<double>(segments.size()));
    return p;
}

}  // namespace

GradCheckReport gradient_check(const StreamModel& model, std::span<const Tensor3> segments, int label,
                               const GradCheckOptions& options) {
    model.check_finite();
    std::vector<double> analytic(model.params().size(), 0.0);
    consensus_loss(model, segments, label, &analytic);
    const std::uint64_t base = probe(model, segments, label).signature;

    std::vector<std::size_t> order(analytic.size());
    std::iota(order.begin(), order.end(), 0);
    std::mt19937_64 rng(options.seed);
    std::shuffle(order.begin(), order.end(), rng);

    StreamModel work = model;
    GradCheckReport report;
    const double h = options.step;
    for (std::size_t idx : order) {
        if (report.compared >= options.samples) break;
        const double saved = work.params()[idx];
        work.params()[idx] = saved + h;
        const Probe plus = probe(work, segments, label);
        work.params()[idx] = saved - h;
        const Probe minus = probe(work, segments, label);
        work.params()[idx] = saved;
        if (plus.signature != base || minus.signature != base) {
            ++report.kinks_skipped;
            continue;
        }
        const double numeric = (plus.loss - minus.loss) / (2.0 * h);
        const double a = analytic[idx] * options.corrupt_scale;
        const double rel = std::abs(a - numeric) / std::max({std::abs(a), std::abs(numeric), 1e-6});
        report.max_rel_error = std::max(report.max_rel_error, rel);
        ++report.compared;
    }
    return report;
}

}  // namespace lens
