#include <algorithm>
#include <cmath>
#include <exception>
#include <numeric>
#include <random>

#include "lens/error.hpp"
#include "lens/fusion.hpp"

namespace lens {

std::vector<int> stratified_folds(std::span<const LabeledSample> data, int k, std::uint64_t seed) {
    if (k < 2) throw InvalidArgument("kfold: k must be >= 2");
    if (data.size() < static_cast<std::size_t>(k)) throw InvalidArgument("kfold: fewer samples than folds");
    std::mt19937_64 rng(seed);
    std::array<std::vector<std::size_t>, kNumClasses> by_class;
    for (std::size_t i = 0; i < data.size(); ++i) {
        if (data[i].label < 0 || data[i].label >= kNumClasses) throw InvalidArgument("kfold: label out of range");
        by_class[static_cast<std::size_t>(data[i].label)].push_back(i);
    }
    std::vector<int> fold(data.size(), -1);
    std::size_t dealt = 0;
    for (auto& members : by_class) {
        std::shuffle(members.begin(), members.end(), rng);
        for (std::size_t i : members) fold[i] = static_cast<int>(dealt++ % static_cast<std::size_t>(k));
    }
    return fold;
}

CvResult kfold_cv(std::span<const LabeledSample> data, const SvmConfig& config, int k, std::uint64_t seed) {
    config.validate();
    CvResult r;
    r.fold_of = stratified_folds(data, k, seed);
    for (int f = 0; f < k; ++f) {
        std::vector<LabeledSample> train;
        std::vector<std::size_t> held;
        for (std::size_t i = 0; i < data.size(); ++i) {
            if (r.fold_of[i] == f) held.push_back(i);
            else train.push_back(data[i]);
        }
        std::size_t correct = 0;
        std::array<bool, kNumClasses> seen{};
        for (const auto& s : train) seen[static_cast<std::size_t>(s.label)] = true;
        if (std::count(seen.begin(), seen.end(), true) >= 2) {
            const SvmModel model = svm_fit(train, config);
            for (std::size_t i : held)
                if (label_index(svm_predict(model, data[i].x).label) == data[i].label) ++correct;
        } else {
            for (std::size_t i : held)
                if (seen[static_cast<std::size_t>(data[i].label)]) ++correct;
        }
        r.fold_accuracies.push_back(static_cast<double>(correct) / static_cast<double>(held.size()));
    }
    r.mean = std::accumulate(r.fold_accuracies.begin(), r.fold_accuracies.end(), 0.0) / k;
    double var = 0.0;
    for (double a : r.fold_accuracies) var += (a - r.mean) * (a - r.mean);
    r.stddev = std::sqrt(var / k);
    return r;
}

SearchResult random_search(std::span<const LabeledSample> data, const SearchSpace& space, int n_trials,
                           std::uint64_t seed, int k, SvmConfig base) {
    if (n_trials < 1) throw InvalidArgument("random_search: n_trials must be >= 1");
    if (!(space.gamma_min > 0.0 && space.gamma_min <= space.gamma_max) || !(space.C_min > 0.0 && space.C_min <= space.C_max) ||
        space.coef0_choices.empty())
        throw InvalidArgument("random_search: invalid search space");
    std::mt19937_64 rng(seed);
    auto log_uniform = [&](double lo, double hi) {
        return std::exp(std::uniform_real_distribution<double>(std::log(lo), std::log(hi))(rng));
    };
    SearchResult result;
    result.trials.resize(static_cast<std::size_t>(n_trials));
    for (auto& t : result.trials) {
        t.config = base;
        t.config.gamma = log_uniform(space.gamma_min, space.gamma_max);
        t.config.C = log_uniform(space.C_min, space.C_max);
        t.config.coef0 = space.coef0_choices[std::uniform_int_distribution<std::size_t>(0, space.coef0_choices.size() - 1)(rng)];
        t.config.validate();
    }
    std::exception_ptr failure;
#pragma omp parallel for schedule(dynamic)
    for (int i = 0; i < n_trials; ++i) {
        auto& t = result.trials[static_cast<std::size_t>(i)];
        try {
            t.score = kfold_cv(data, t.config, k, seed).mean;
        } catch (...) {
#pragma omp critical
            if (!failure) failure = std::current_exception();
        }
    }
    if (failure) std::rethrow_exception(failure);
    for (int i = 0; i < n_trials; ++i) {
        if (i == 0 || result.trials[static_cast<std::size_t>(i)].score > result.best_score) {
            result.best_score = result.trials[static_cast<std::size_t>(i)].score;
            result.best_trial = i;
        }
    }
    result.best = result.trials[static_cast<std::size_t>(result.best_trial)].config;
    return result;
}

}  // namespace lens
