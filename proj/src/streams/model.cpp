#include <algorithm>
#include <cmath>
#include <numeric>
#include <random>

#include "lens/error.hpp"
#include "lens/streams.hpp"
#include "tensor_ops.hpp"

namespace lens {

int ClassScores::argmax() const {
    int best = 0;
    for (int k = 1; k < kNumClasses; ++k)
        if (probs[static_cast<std::size_t>(k)] > probs[static_cast<std::size_t>(best)]) best = k;
    return best;
}

bool ClassScores::is_distribution(double tol) const {
    double sum = 0.0;
    for (double p : probs) {
        if (!std::isfinite(p) || p < 0.0 || p > 1.0) return false;
        sum += p;
    }
    return std::abs(sum - 1.0) <= tol;
}

ClassScores softmax(std::span<const double> logits) {
    if (logits.size() != static_cast<std::size_t>(kNumClasses)) throw InvalidArgument("softmax: expected 4 logits");
    ClassScores s;
    const double m = *std::max_element(logits.begin(), logits.end());
    double z = 0.0;
    for (std::size_t k = 0; k < logits.size(); ++k) {
        s.probs[k] = std::exp(logits[k] - m);
        z += s.probs[k];
    }
    for (double& p : s.probs) p /= z;
    return s;
}

Tensor3 frame_tensor(const Frame& frame) {
    Tensor3 t(3, frame.height, frame.width);
    for (int y = 0; y < frame.height; ++y)
        for (int x = 0; x < frame.width; ++x) {
            const std::size_t i = (static_cast<std::size_t>(y) * frame.width + x) * 3;
            for (int c = 0; c < 3; ++c) t.at(c, y, x) = frame.pixels[i + static_cast<std::size_t>(c)];
        }
    return t;
}

Tensor3 flow_tensor(const StackedFlow& stack) {
    Tensor3 t(stack.channel_count(), stack.height, stack.width);
    const std::size_t plane = static_cast<std::size_t>(stack.width) * stack.height;
    for (int c = 0; c < stack.channel_count(); ++c) {
        const auto& src = stack.channels[static_cast<std::size_t>(c)];
        if (src.size() != plane) throw InvalidArgument("flow_tensor: plane size mismatch");
        for (std::size_t i = 0; i < plane; ++i) t.data[static_cast<std::size_t>(c) * plane + i] = quantize_flow_value(src[i]);
    }
    return t;
}

// ---------------------------------------------------------------------------

StreamModel::StreamModel(StreamKind kind, ModelShape shape) : kind_(kind), shape_(shape) {
    if (shape.input_channels < 1 || shape.filters < 1 || shape.hidden < 1 || shape.input_size < 1)
        throw InvalidArgument("StreamModel: dimensions must be positive");
    if (shape.kernel < 1 || shape.kernel % 2 == 0) throw InvalidArgument("StreamModel: kernel must be odd");
    if (kind == StreamKind::Spatial && shape.input_channels != 3)
        throw InvalidArgument("StreamModel: spatial stream takes 3 channels");
    if (kind == StreamKind::Temporal && shape.input_channels % 2 != 0)
        throw InvalidArgument("StreamModel: temporal stream takes 2L channels");
    params_.assign(layout().total, 0.0);
    if (kind == StreamKind::Temporal) {
        norm_ = flow_norm(shape.input_channels);
    } else {
        norm_.mean.assign(3, 0.0);
        norm_.std.assign(3, 255.0);
    }
}

StreamModel::Layout StreamModel::layout() const {
    const std::size_t f = static_cast<std::size_t>(shape_.filters);
    const std::size_t c = static_cast<std::size_t>(shape_.input_channels);
    const std::size_t k = static_cast<std::size_t>(shape_.kernel);
    const std::size_t h = static_cast<std::size_t>(shape_.hidden);
    const std::size_t o = kNumClasses;
    Layout l{};
    l.conv_w = 0;
    l.conv_b = l.conv_w + f * c * k * k;
    l.fc1_w = l.conv_b + f;
    l.fc1_b = l.fc1_w + h * f;
    l.fc2_w = l.fc1_b + h;
    l.fc2_b = l.fc2_w + o * h;
    l.total = l.fc2_b + o;
    return l;
}

StreamModel StreamModel::initialized(StreamKind kind, ModelShape shape, std::uint64_t seed) {
    StreamModel m(kind, shape);
    const Layout l = m.layout();
    std::mt19937_64 rng(seed);
    auto fill = [&](std::size_t begin, std::size_t end, double fan_in) {
        std::normal_distribution<double> dist(0.0, std::sqrt(2.0 / fan_in));
        for (std::size_t i = begin; i < end; ++i) m.params_[i] = dist(rng);
    };
    fill(l.conv_w, l.conv_b, static_cast<double>(shape.input_channels) * shape.kernel * shape.kernel);
    fill(l.fc1_w, l.fc1_b, shape.filters);
    fill(l.fc2_w, l.fc2_b, shape.hidden);
    return m;
}

StreamModel StreamModel::spatial(std::uint64_t seed, ModelShape shape) {
    shape.input_channels = 3;
    return initialized(StreamKind::Spatial, shape, seed);
}

StreamModel StreamModel::temporal(std::uint64_t seed, int stack_length, ModelShape shape) {
    if (stack_length < 1) throw InvalidArgument("StreamModel: stack length must be >= 1");
    shape.input_channels = 2 * stack_length;
    return initialized(StreamKind::Temporal, shape, seed);
}

std::span<double> StreamModel::conv_weights() {
    const Layout l = layout();
    return std::span<double>(params_).subspan(l.conv_w, l.conv_b - l.conv_w);
}

std::span<const double> StreamModel::conv_weights() const {
    const Layout l = layout();
    return std::span<const double>(params_).subspan(l.conv_w, l.conv_b - l.conv_w);
}

std::span<double> StreamModel::fc2_bias() {
    const Layout l = layout();
    return std::span<double>(params_).subspan(l.fc2_b, kNumClasses);
}

void StreamModel::check_finite() const {
    for (double p : params_)
        if (!std::isfinite(p)) throw NumericError("StreamModel: non-finite parameter");
}

// ---------------------------------------------------------------------------

namespace detail {

Activations run_forward(const StreamModel& model, const Tensor3& x) {
    const ModelShape& s = model.shape();
    if (x.channels != s.input_channels)
        throw InvalidArgument("forward: input has " + std::to_string(x.channels) + " channels, model expects " +
                              std::to_string(s.input_channels));
    if (x.height != s.input_size || x.width != s.input_size)
        throw InvalidArgument("forward: input must be " + std::to_string(s.input_size) + "x" +
                              std::to_string(s.input_size));
    const auto l = model.layout();
    const auto& p = model.params();
    const int F = s.filters, C = s.input_channels, K = s.kernel, r = K / 2;
    const int H = x.height, W = x.width;

    Activations a;
    a.conv = Tensor3(F, H, W);
    for (int f = 0; f < F; ++f) {
        const double bias = p[l.conv_b + static_cast<std::size_t>(f)];
        for (int y = 0; y < H; ++y)
            for (int xx = 0; xx < W; ++xx) a.conv.at(f, y, xx) = bias;
        for (int c = 0; c < C; ++c) {
            for (int ky = 0; ky < K; ++ky) {
                for (int kx = 0; kx < K; ++kx) {
                    const double w = p[l.conv_w + ((static_cast<std::size_t>(f) * C + c) * K + ky) * K + kx];
                    const int dy = ky - r, dx = kx - r;
                    const int y0 = std::max(0, -dy), y1 = std::min(H, H - dy);
                    const int x0 = std::max(0, -dx), x1 = std::min(W, W - dx);
                    for (int y = y0; y < y1; ++y) {
                        double* out = &a.conv.at(f, y, 0);
                        const double* in = x.data.data() + (static_cast<std::size_t>(c) * H + (y + dy)) * W;
                        for (int xx = x0; xx < x1; ++xx) out[xx] += w * in[xx + dx];
                    }
                }
            }
        }
    }
    const double inv_hw = 1.0 / (static_cast<double>(H) * W);
    a.pooled.assign(static_cast<std::size_t>(F), 0.0);
    for (int f = 0; f < F; ++f) {
        double sum = 0.0;
        for (int y = 0; y < H; ++y)
            for (int xx = 0; xx < W; ++xx) sum += std::max(0.0, a.conv.at(f, y, xx));
        a.pooled[static_cast<std::size_t>(f)] = sum * inv_hw;
    }
    const int Hd = s.hidden;
    a.hidden.assign(static_cast<std::size_t>(Hd), 0.0);
    for (int h = 0; h < Hd; ++h) {
        double v = p[l.fc1_b + static_cast<std::size_t>(h)];
        for (int f = 0; f < F; ++f) v += p[l.fc1_w + static_cast<std::size_t>(h) * F + f] * a.pooled[static_cast<std::size_t>(f)];
        a.hidden[static_cast<std::size_t>(h)] = v;
    }
    for (int k = 0; k < kNumClasses; ++k) {
        double v = p[l.fc2_b + static_cast<std::size_t>(k)];
        for (int h = 0; h < Hd; ++h)
            v += p[l.fc2_w + static_cast<std::size_t>(k) * Hd + h] * std::max(0.0, a.hidden[static_cast<std::size_t>(h)]);
        a.logits[static_cast<std::size_t>(k)] = v;
    }
    for (double v : a.logits)
        if (!std::isfinite(v)) throw NumericError("forward: non-finite activation");
    a.scores = softmax(a.logits);
    return a;
}

void run_backward(const StreamModel& model, const Tensor3& x, const Activations& a,
                  const std::array<double, kNumClasses>& dlogits, std::vector<double>& grad) {
    const ModelShape& s = model.shape();
    const auto l = model.layout();
    const auto& p = model.params();
    const int F = s.filters, C = s.input_channels, K = s.kernel, r = K / 2, Hd = s.hidden;
    const int H = x.height, W = x.width;

    std::vector<double> dhidden(static_cast<std::size_t>(Hd), 0.0);
    for (int k = 0; k < kNumClasses; ++k) {
        const double g = dlogits[static_cast<std::size_t>(k)];
        grad[l.fc2_b + static_cast<std::size_t>(k)] += g;
        for (int h = 0; h < Hd; ++h) {
            const double act = std::max(0.0, a.hidden[static_cast<std::size_t>(h)]);
            grad[l.fc2_w + static_cast<std::size_t>(k) * Hd + h] += g * act;
            dhidden[static_cast<std::size_t>(h)] += g * p[l.fc2_w + static_cast<std::size_t>(k) * Hd + h];
        }
    }
    std::vector<double> dpooled(static_cast<std::size_t>(F), 0.0);
    for (int h = 0; h < Hd; ++h) {
        if (a.hidden[static_cast<std::size_t>(h)] <= 0.0) continue;
        const double g = dhidden[static_cast<std::size_t>(h)];
        grad[l.fc1_b + static_cast<std::size_t>(h)] += g;
        for (int f = 0; f < F; ++f) {
            grad[l.fc1_w + static_cast<std::size_t>(h) * F + f] += g * a.pooled[static_cast<std::size_t>(f)];
            dpooled[static_cast<std::size_t>(f)] += g * p[l.fc1_w + static_cast<std::size_t>(h) * F + f];
        }
    }
    const double inv_hw = 1.0 / (static_cast<double>(H) * W);
    Tensor3 dz(F, H, W);
    for (int f = 0; f < F; ++f) {
        const double g = dpooled[static_cast<std::size_t>(f)] * inv_hw;
        double bsum = 0.0;
        for (int y = 0; y < H; ++y)
            for (int xx = 0; xx < W; ++xx) {
                const double v = a.conv.at(f, y, xx) > 0.0 ? g : 0.0;
                dz.at(f, y, xx) = v;
                bsum += v;
            }
        grad[l.conv_b + static_cast<std::size_t>(f)] += bsum;
    }
    for (int f = 0; f < F; ++f) {
        if (dpooled[static_cast<std::size_t>(f)] == 0.0) continue;
        for (int c = 0; c < C; ++c)
            for (int ky = 0; ky < K; ++ky)
                for (int kx = 0; kx < K; ++kx) {
                    const int dy = ky - r, dx = kx - r;
                    const int y0 = std::max(0, -dy), y1 = std::min(H, H - dy);
                    const int x0 = std::max(0, -dx), x1 = std::min(W, W - dx);
                    double sum = 0.0;
                    for (int y = y0; y < y1; ++y) {
                        const double* d = &dz.at(f, y, 0);
                        const double* in = x.data.data() + (static_cast<std::size_t>(c) * H + (y + dy)) * W;
                        for (int xx = x0; xx < x1; ++xx) sum += d[xx] * in[xx + dx];
                    }
                    grad[l.conv_w + ((static_cast<std::size_t>(f) * C + c) * K + ky) * K + kx] += sum;
                }
    }
}

std::uint64_t relu_signature(const Activations& a) {
    std::uint64_t h = 1469598103934665603ULL;
    auto mix = [&](bool bit) {
        h ^= bit ? 1u : 0u;
        h *= 1099511628211ULL;
    };
    for (double v : a.conv.data) mix(v > 0.0);
    for (double v : a.hidden) mix(v > 0.0);
    return h;
}

}  // namespace detail

ClassScores forward(const StreamModel& model, const Tensor3& input) { return detail::run_forward(model, input).scores; }

ClassScores forward(const StreamModel& model, const Frame& frame) {
    if (model.kind() != StreamKind::Spatial) throw InvalidArgument("forward: frame input needs a spatial model");
    return forward(model, preprocess(model, frame_tensor(frame)));
}

ClassScores forward(const StreamModel& model, const StackedFlow& stack) {
    if (model.kind() != StreamKind::Temporal) throw InvalidArgument("forward: flow stack needs a temporal model");
    return forward(model, preprocess(model, flow_tensor(stack)));
}

Tensor3 preprocess(const StreamModel& model, const Tensor3& raw) {
    return preprocess(model.norm(), model.shape().input_size, raw);
}

Tensor3 preprocess(const InputNorm& norm, int input_size, const Tensor3& raw) {
    if (!(norm.test_crop > 0.0 && norm.test_crop <= 1.0)) throw InvalidArgument("preprocess: test crop must be in (0,1]");
    const double side = norm.test_crop * std::min(raw.width, raw.height);
    const double x0 = (raw.width - side) / 2.0;
    const double y0 = (raw.height - side) / 2.0;
    Tensor3 out = detail::crop_resize(raw, x0, y0, side, side, input_size, input_size);
    detail::normalize(out, norm.mean, norm.std);
    return out;
}

InputNorm estimate_frame_norm(std::span<const Clip> clips, int frame_step) {
    if (clips.empty()) throw InvalidArgument("estimate_frame_norm: no clips");
    if (frame_step < 1) throw InvalidArgument("estimate_frame_norm: frame_step must be >= 1");
    std::array<double, 3> sum{}, sq{};
    double n = 0.0;
    for (const Clip& clip : clips) {
        for (std::size_t i = 0; i < clip.frames.size(); i += static_cast<std::size_t>(frame_step)) {
            const auto& px = clip.frames[i].pixels;
            for (std::size_t j = 0; j + 2 < px.size(); j += 3) {
                for (int c = 0; c < 3; ++c) {
                    const double v = px[j + static_cast<std::size_t>(c)];
                    sum[static_cast<std::size_t>(c)] += v;
                    sq[static_cast<std::size_t>(c)] += v * v;
                }
                n += 1.0;
            }
        }
    }
    if (n == 0.0) throw InvalidArgument("estimate_frame_norm: clips have no pixels");
    InputNorm norm;
    for (int c = 0; c < 3; ++c) {
        const double m = sum[static_cast<std::size_t>(c)] / n;
        const double var = std::max(0.0, sq[static_cast<std::size_t>(c)] / n - m * m);
        norm.mean.push_back(m);
        norm.std.push_back(std::max(1.0, std::sqrt(var)));
    }
    return norm;
}

InputNorm flow_norm(int channels) {
    InputNorm norm;
    norm.mean.assign(static_cast<std::size_t>(channels), 128.0);
    norm.std.assign(static_cast<std::size_t>(channels), 255.0 / (2.0 * kFlowClampPx));
    return norm;
}

double consensus_loss(const StreamModel& model, std::span<const Tensor3> segments, int label,
                      std::vector<double>* grad) {
    return detail::consensus_loss(model, segments, label, grad, nullptr);
}

double detail::consensus_loss(const StreamModel& model, std::span<const Tensor3> segments, int label,
                              std::vector<double>* grad, ClassScores* consensus) {
    if (segments.empty()) throw InvalidArgument("consensus_loss: no segments");
    if (label < 0 || label >= kNumClasses) throw InvalidArgument("consensus_loss: label out of range");
    std::vector<detail::Activations> acts;
    acts.reserve(segments.size());
    double py = 0.0;
    for (const Tensor3& t : segments) {
        acts.push_back(detail::run_forward(model, t));
        py += acts.back().scores.probs[static_cast<std::size_t>(label)];
    }
    const double n = static_cast<double>(segments.size());
    py /= n;
    if (consensus) {
        std::vector<ClassScores> all;
        for (const auto& a : acts) all.push_back(a.scores);
        *consensus = segmental_consensus(all);
    }
    const double loss = -std::log(py);
    if (!std::isfinite(loss)) throw NumericError("consensus_loss: consensus probability underflowed");
    if (grad) {
        if (grad->size() != model.params().size()) throw InvalidArgument("consensus_loss: gradient size mismatch");
        for (std::size_t j = 0; j < segments.size(); ++j) {
            const auto& p = acts[j].scores.probs;
            const double scale = -p[static_cast<std::size_t>(label)] / (n * py);
            std::array<double, kNumClasses> dlogits{};
            for (int k = 0; k < kNumClasses; ++k)
                dlogits[static_cast<std::size_t>(k)] = scale * ((k == label ? 1.0 : 0.0) - p[static_cast<std::size_t>(k)]);
            detail::run_backward(model, segments[j], acts[j], dlogits, *grad);
        }
    }
    return loss;
}

}  // namespace lens
