#include <algorithm>
#include <cmath>
#include <random>

#include "lens/error.hpp"
#include "lens/fusion.hpp"

namespace lens {

long ConfusionMatrix::total() const {
    long n = 0;
    for (const auto& row : counts)
        for (long v : row) n += v;
    return n;
}

long ConfusionMatrix::row_sum(int cls) const {
    long n = 0;
    for (long v : counts[static_cast<std::size_t>(cls)]) n += v;
    return n;
}

ConfusionMatrix confusion_matrix(std::span<const int> truths, std::span<const int> predictions) {
    if (truths.size() != predictions.size()) throw InvalidArgument("confusion_matrix: length mismatch");
    ConfusionMatrix m;
    for (std::size_t i = 0; i < truths.size(); ++i) {
        if (truths[i] < 0 || truths[i] >= kNumClasses || predictions[i] < 0 || predictions[i] >= kNumClasses)
            throw InvalidArgument("confusion_matrix: label out of range");
        ++m.counts[static_cast<std::size_t>(truths[i])][static_cast<std::size_t>(predictions[i])];
    }
    return m;
}

double accuracy(const ConfusionMatrix& m) {
    const long n = m.total();
    if (n == 0) throw InvalidArgument("accuracy: empty confusion matrix");
    long trace = 0;
    for (int c = 0; c < kNumClasses; ++c) trace += m.correct(c);
    return static_cast<double>(trace) / static_cast<double>(n);
}

std::array<double, kNumClasses> percent_change(std::span<const long> stream_correct, std::span<const long> fused_correct) {
    if (stream_correct.size() != static_cast<std::size_t>(kNumClasses) || fused_correct.size() != stream_correct.size())
        throw InvalidArgument("percent_change: expected one count per class");
    std::array<double, kNumClasses> out{};
    for (std::size_t c = 0; c < out.size(); ++c) {
        const long s = stream_correct[c], f = fused_correct[c];
        if (s < 0 || f < 0) throw InvalidArgument("percent_change: negative count");
        if (s == 0) out[c] = f > 0 ? kPercentInfinity : 0.0;
        else out[c] = 100.0 * static_cast<double>(f - s) / static_cast<double>(s);
    }
    return out;
}

std::array<double, kNumClasses> percent_change(const ConfusionMatrix& stream, const ConfusionMatrix& fused) {
    std::array<long, kNumClasses> s{}, f{};
    for (int c = 0; c < kNumClasses; ++c) {
        s[static_cast<std::size_t>(c)] = stream.correct(c);
        f[static_cast<std::size_t>(c)] = fused.correct(c);
    }
    return percent_change(s, f);
}

std::vector<PrPoint> pr_points(std::span<const ScoredEvent> events, std::span<const double> thresholds) {
    const long positives = std::count_if(events.begin(), events.end(), [](const ScoredEvent& e) { return e.is_true_crime; });
    if (positives == 0) throw InvalidArgument("pr_points: no positive examples, recall undefined");
    std::vector<PrPoint> out;
    for (double t : thresholds) {
        PrPoint p;
        p.threshold = t;
        long tp = 0, fp = 0;
        for (const auto& e : events) {
            if (e.confidence >= t) (e.is_true_crime ? tp : fp)++;
        }
        p.alerts = tp + fp;
        p.zero_alerts = p.alerts == 0;
        p.precision = p.zero_alerts ? 1.0 : static_cast<double>(tp) / static_cast<double>(p.alerts);
        p.recall = static_cast<double>(tp) / static_cast<double>(positives);
        out.push_back(p);
    }
    return out;
}

namespace {

ClassScores peaked(int cls, double peak, std::mt19937_64& rng) {
    std::uniform_real_distribution<double> u(0.05, 1.0);
    std::array<double, kNumClasses> w{};
    double sum = 0.0;
    for (int k = 0; k < kNumClasses; ++k) {
        if (k == cls) continue;
        w[static_cast<std::size_t>(k)] = u(rng);
        sum += w[static_cast<std::size_t>(k)];
    }
    ClassScores s;
    for (int k = 0; k < kNumClasses; ++k)
        s.probs[static_cast<std::size_t>(k)] = k == cls ? peak : (1.0 - peak) * w[static_cast<std::size_t>(k)] / sum;
    return s;
}

ClassScores ambiguous(std::array<int, 2> pair, std::mt19937_64& rng) {
    std::uniform_real_distribution<double> split(0.3, 0.7);
    std::uniform_real_distribution<double> mass(0.8, 0.95);
    const double m = mass(rng);
    const double a = split(rng);
    ClassScores s;
    const double rest = (1.0 - m) / (kNumClasses - 2);
    for (double& p : s.probs) p = rest;
    s.probs[static_cast<std::size_t>(pair[0])] = m * a;
    s.probs[static_cast<std::size_t>(pair[1])] = m * (1.0 - a);
    return s;
}

ClassScores stream_output(int cls, std::array<int, 2> confused, double clean_accuracy, std::mt19937_64& rng) {
    if (cls == confused[0] || cls == confused[1]) return ambiguous(confused, rng);
    std::uniform_real_distribution<double> u(0.0, 1.0);
    std::uniform_real_distribution<double> peak(0.55, 0.95);
    if (u(rng) < clean_accuracy) return peaked(cls, peak(rng), rng);
    int wrong = std::uniform_int_distribution<int>(0, kNumClasses - 2)(rng);
    if (wrong >= cls) ++wrong;
    return peaked(wrong, peak(rng), rng);
}

}  // namespace

StreamFixture complementary_fixture(std::size_t per_class, std::uint64_t seed, std::array<int, 2> spatial_pair,
                                    std::array<int, 2> temporal_pair, double clean_accuracy) {
    for (int c : {spatial_pair[0], spatial_pair[1], temporal_pair[0], temporal_pair[1]})
        if (c < 0 || c >= kNumClasses) throw InvalidArgument("complementary_fixture: class out of range");
    if (spatial_pair[0] == spatial_pair[1] || temporal_pair[0] == temporal_pair[1])
        throw InvalidArgument("complementary_fixture: a confused pair needs two distinct classes");
    std::mt19937_64 rng(seed);
    StreamFixture f;
    for (std::size_t i = 0; i < per_class; ++i) {
        for (int c = 0; c < kNumClasses; ++c) {
            f.spatial.push_back(stream_output(c, spatial_pair, clean_accuracy, rng));
            f.temporal.push_back(stream_output(c, temporal_pair, clean_accuracy, rng));
            f.labels.push_back(c);
        }
    }
    return f;
}

std::vector<LabeledSample> fixture_samples(const StreamFixture& f) {
    std::vector<LabeledSample> out;
    for (std::size_t i = 0; i < f.labels.size(); ++i) {
        const FusionInput x = fusion_input(f.spatial[i], f.temporal[i]);
        out.push_back({std::vector<double>(x.begin(), x.end()), f.labels[i]});
    }
    return out;
}

}  // namespace lens
