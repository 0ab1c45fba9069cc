#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <limits>
#include <optional>
#include <span>
#include <vector>

#include "lens/streams.hpp"
#include "lens/videoio.hpp"

namespace lens {

inline constexpr int kFusionDim = 2 * kNumClasses;

/// Spatial scores followed by temporal scores.
using FusionInput = std::array<double, kFusionDim>;

FusionInput fusion_input(const ClassScores& spatial, const ClassScores& temporal);
/// Both halves are probability vectors.
bool valid_fusion_input(const FusionInput& x, double tol = 1e-6);

/// Feature vector plus class index. Features may have any (consistent) dimension.
struct LabeledSample {
    std::vector<double> x;
    int label = 0;
};

std::vector<LabeledSample> to_samples(std::span<const FusionInput> inputs, std::span<const int> labels);

struct SvmConfig {
    int degree = 5;
    double gamma = 1.0;
    double coef0 = 1.0;
    double C = 1.0;
    double tol = 1e-3;
    long max_passes = 10000;  // SMO pair updates per binary machine

    void validate() const;
};

/// (gamma * <x, y> + coef0)^degree
double poly_kernel(std::span<const double> x, std::span<const double> y, const SvmConfig& config);

/// Kernel matrix of the sample features.
std::vector<double> gram_matrix(std::span<const LabeledSample> data, const SvmConfig& config);

/// Result of one binary dual problem min 1/2 a'Qa - e'a, y'a = 0, 0 <= a <= C.
struct SmoSolution {
    std::vector<double> alpha;
    double rho = 0.0;  // decision = sum a_i y_i K(x_i, x) - rho
    long iterations = 0;
    bool converged = false;
};

/// SMO with maximal-violating-pair working set selection. `gram` is n x n row-major, y in {-1,+1}.
SmoSolution solve_smo(std::span<const double> gram, std::span<const int> y, double C, double tol, long max_iterations);

/// Largest KKT violation max_{I_up}(-y G) - min_{I_low}(-y G) of a dual point (<= tol at convergence).
double kkt_gap(std::span<const double> gram, std::span<const int> y, std::span<const double> alpha, double C);

struct BinarySvm {
    bool present = false;  // class seen in training
    std::vector<std::vector<double>> support;
    std::vector<double> coef;  // alpha_i * y_i
    double bias = 0.0;
    long iterations = 0;
    bool converged = true;

    double decision(std::span<const double> x, const SvmConfig& config) const;
};

struct SvmModel {
    SvmConfig config;
    std::array<BinarySvm, kNumClasses> machines;
    int dim = 0;
    bool trained = false;

    bool converged() const;
    std::size_t support_vector_count() const;
    /// Absent classes report -infinity.
    std::array<double, kNumClasses> decision_values(std::span<const double> x) const;
};

struct SvmPrediction {
    ActionLabel label = ActionLabel::NoAction;
    double confidence = 0.0;  // softmax over decision values of the present classes
    ClassScores scores;
    std::array<double, kNumClasses> decision{};
};

/// One-vs-rest machines for every class index in [0, 4).
SvmModel svm_fit(std::span<const LabeledSample> data, const SvmConfig& config);
SvmPrediction svm_predict(const SvmModel& model, std::span<const double> x);

// ---------------------------------------------------------------------------
// Model selection

struct CvResult {
    std::vector<double> fold_accuracies;
    std::vector<int> fold_of;  // fold index per sample
    double mean = 0.0;
    double stddev = 0.0;
};

/// Seeded stratified split: each class is shuffled and dealt round-robin across folds.
std::vector<int> stratified_folds(std::span<const LabeledSample> data, int k, std::uint64_t seed);
CvResult kfold_cv(std::span<const LabeledSample> data, const SvmConfig& config, int k = 5, std::uint64_t seed = 0);

struct SearchSpace {
    double gamma_min = 1e-2, gamma_max = 1e1;
    double C_min = 1e-1, C_max = 1e2;
    std::vector<double> coef0_choices{0.0, 1.0};
};

struct SearchTrial {
    SvmConfig config;
    double score = 0.0;
};

struct SearchResult {
    SvmConfig best;
    double best_score = 0.0;
    int best_trial = 0;
    std::vector<SearchTrial> trials;
};

/// n_trials configs drawn log-uniformly (gamma, C) and uniformly (coef0), each scored by kfold_cv.
SearchResult random_search(std::span<const LabeledSample> data, const SearchSpace& space, int n_trials,
                           std::uint64_t seed, int k = 5, SvmConfig base = {});

// ---------------------------------------------------------------------------
// Evaluation artifacts

struct ConfusionMatrix {
    std::array<std::array<long, kNumClasses>, kNumClasses> counts{};  // [truth][predicted]

    long total() const;
    long correct(int cls) const { return counts[static_cast<std::size_t>(cls)][static_cast<std::size_t>(cls)]; }
    long row_sum(int cls) const;
};

ConfusionMatrix confusion_matrix(std::span<const int> truths, std::span<const int> predictions);
/// trace / total; throws on an empty matrix.
double accuracy(const ConfusionMatrix& m);

/// +infinity marks a class the stream never got right but the fusion did.
inline constexpr double kPercentInfinity = std::numeric_limits<double>::infinity();

/// 100 * (fused - stream) / stream per class; stream = 0 gives +inf (fused > 0) or 0 (fused = 0).
std::array<double, kNumClasses> percent_change(std::span<const long> stream_correct, std::span<const long> fused_correct);
std::array<double, kNumClasses> percent_change(const ConfusionMatrix& stream, const ConfusionMatrix& fused);

struct ScoredEvent {
    double confidence = 0.0;
    bool is_true_crime = false;
};

struct PrPoint {
    double threshold = 0.0;
    double precision = 1.0;
    double recall = 0.0;
    long alerts = 0;
    bool zero_alerts = false;  // precision undefined, reported as 1
};

std::vector<PrPoint> pr_points(std::span<const ScoredEvent> events, std::span<const double> thresholds);

// ---------------------------------------------------------------------------
// Complementary-confusion fixture

struct StreamFixture {
    std::vector<ClassScores> spatial;
    std::vector<ClassScores> temporal;
    std::vector<int> labels;
};

/// Balanced synthetic stream outputs. The spatial stream cannot tell `spatial_pair` apart, the
/// temporal stream cannot tell `temporal_pair` apart; every other class is predicted with
/// accuracy near `clean_accuracy`.
StreamFixture complementary_fixture(std::size_t per_class, std::uint64_t seed, std::array<int, 2> spatial_pair = {1, 2},
                                    std::array<int, 2> temporal_pair = {2, 3}, double clean_accuracy = 0.98);

std::vector<LabeledSample> fixture_samples(const StreamFixture& f);

// ---------------------------------------------------------------------------
// Checkpoints (.lsvm)

std::vector<std::uint8_t> encode_svm(const SvmModel& model);
SvmModel decode_svm(std::span<const std::uint8_t> bytes);
void save_svm(const SvmModel& model, const std::filesystem::path& path);
SvmModel load_svm(const std::filesystem::path& path);

}  // namespace lens
