#include <algorithm>
#include <cmath>
#include <limits>

#include "lens/error.hpp"
#include "lens/fusion.hpp"

namespace lens {

namespace {

constexpr double kTau = 1e-12;

double ipow(double b, int e) {
    double r = 1.0;
    for (int i = 0; i < e; ++i) r *= b;
    return r;
}

}  // namespace

FusionInput fusion_input(const ClassScores& spatial, const ClassScores& temporal) {
    FusionInput x{};
    std::copy(spatial.probs.begin(), spatial.probs.end(), x.begin());
    std::copy(temporal.probs.begin(), temporal.probs.end(), x.begin() + kNumClasses);
    return x;
}

bool valid_fusion_input(const FusionInput& x, double tol) {
    ClassScores a, b;
    std::copy(x.begin(), x.begin() + kNumClasses, a.probs.begin());
    std::copy(x.begin() + kNumClasses, x.end(), b.probs.begin());
    return a.is_distribution(tol) && b.is_distribution(tol);
}

std::vector<LabeledSample> to_samples(std::span<const FusionInput> inputs, std::span<const int> labels) {
    if (inputs.size() != labels.size()) throw InvalidArgument("to_samples: length mismatch");
    std::vector<LabeledSample> out;
    out.reserve(inputs.size());
    for (std::size_t i = 0; i < inputs.size(); ++i)
        out.push_back({std::vector<double>(inputs[i].begin(), inputs[i].end()), labels[i]});
    return out;
}

void SvmConfig::validate() const {
    if (degree != 5) throw InvalidArgument("SvmConfig: degree is fixed at 5");
    if (!(gamma > 0.0) || !std::isfinite(gamma)) throw InvalidArgument("SvmConfig: gamma must be > 0");
    if (!(C > 0.0) || !std::isfinite(C)) throw InvalidArgument("SvmConfig: C must be > 0");
    if (!(tol > 0.0)) throw InvalidArgument("SvmConfig: tol must be > 0");
    if (!std::isfinite(coef0)) throw InvalidArgument("SvmConfig: coef0 must be finite");
    if (max_passes < 0) throw InvalidArgument("SvmConfig: max_passes must be >= 0");
}

double poly_kernel(std::span<const double> x, std::span<const double> y, const SvmConfig& config) {
    if (x.size() != y.size()) throw InvalidArgument("poly_kernel: dimension mismatch");
    double dot = 0.0;
    for (std::size_t i = 0; i < x.size(); ++i) dot += x[i] * y[i];
    return ipow(config.gamma * dot + config.coef0, config.degree);
}

std::vector<double> gram_matrix(std::span<const LabeledSample> data, const SvmConfig& config) {
    const std::size_t n = data.size();
    std::vector<double> k(n * n);
    for (std::size_t i = 0; i < n; ++i)
        for (std::size_t j = i; j < n; ++j) k[i * n + j] = k[j * n + i] = poly_kernel(data[i].x, data[j].x, config);
    return k;
}

SmoSolution solve_smo(std::span<const double> gram, std::span<const int> y, double C, double tol, long max_iterations) {
    const std::size_t n = y.size();
    if (gram.size() != n * n) throw InvalidArgument("solve_smo: gram must be n x n");
    SmoSolution s;
    s.alpha.assign(n, 0.0);
    std::vector<double> G(n, -1.0);
    auto& a = s.alpha;
    auto Q = [&](std::size_t i, std::size_t j) { return y[i] * y[j] * gram[i * n + j]; };
    auto up = [&](std::size_t t) { return (y[t] == 1 && a[t] < C) || (y[t] == -1 && a[t] > 0.0); };
    auto low = [&](std::size_t t) { return (y[t] == -1 && a[t] < C) || (y[t] == 1 && a[t] > 0.0); };

    for (;;) {
        double gmax = -std::numeric_limits<double>::infinity();
        double gmin = std::numeric_limits<double>::infinity();
        std::size_t i = n, j = n;
        for (std::size_t t = 0; t < n; ++t) {
            const double v = -y[t] * G[t];
            if (up(t) && v > gmax) {
                gmax = v;
                i = t;
            }
            if (low(t) && v < gmin) {
                gmin = v;
                j = t;
            }
        }
        if (i == n || j == n || gmax - gmin < tol) {
            s.converged = true;
            break;
        }
        if (s.iterations >= max_iterations) break;
        ++s.iterations;

        const double ai = a[i], aj = a[j];
        if (y[i] != y[j]) {
            double quad = Q(i, i) + Q(j, j) + 2.0 * Q(i, j);
            if (quad <= 0.0) quad = kTau;
            const double delta = (-G[i] - G[j]) / quad;
            const double diff = a[i] - a[j];
            a[i] += delta;
            a[j] += delta;
            if (diff > 0.0) {
                if (a[j] < 0.0) {
                    a[j] = 0.0;
                    a[i] = diff;
                }
            } else if (a[i] < 0.0) {
                a[i] = 0.0;
                a[j] = -diff;
            }
            if (diff > 0.0) {
                if (a[i] > C) {
                    a[i] = C;
                    a[j] = C - diff;
                }
            } else if (a[j] > C) {
                a[j] = C;
                a[i] = C + diff;
            }
        } else {
            double quad = Q(i, i) + Q(j, j) - 2.0 * Q(i, j);
            if (quad <= 0.0) quad = kTau;
            const double delta = (G[i] - G[j]) / quad;
            const double sum = a[i] + a[j];
            a[i] -= delta;
            a[j] += delta;
            if (sum > C) {
                if (a[i] > C) {
                    a[i] = C;
                    a[j] = sum - C;
                }
            } else if (a[j] < 0.0) {
                a[j] = 0.0;
                a[i] = sum;
            }
            if (sum > C) {
                if (a[j] > C) {
                    a[j] = C;
                    a[i] = sum - C;
                }
            } else if (a[i] < 0.0) {
                a[i] = 0.0;
                a[j] = sum;
            }
        }
        const double di = a[i] - ai, dj = a[j] - aj;
        for (std::size_t t = 0; t < n; ++t) G[t] += Q(i, t) * di + Q(j, t) * dj;
    }

    double ub = std::numeric_limits<double>::infinity();
    double lb = -std::numeric_limits<double>::infinity();
    double sum_free = 0.0;
    int nr_free = 0;
    for (std::size_t t = 0; t < n; ++t) {
        const double yg = y[t] * G[t];
        if (a[t] >= C) {
            if (y[t] == -1) ub = std::min(ub, yg);
            else lb = std::max(lb, yg);
        } else if (a[t] <= 0.0) {
            if (y[t] == 1) ub = std::min(ub, yg);
            else lb = std::max(lb, yg);
        } else {
            ++nr_free;
            sum_free += yg;
        }
    }
    s.rho = nr_free > 0 ? sum_free / nr_free : (ub + lb) / 2.0;
    return s;
}

double kkt_gap(std::span<const double> gram, std::span<const int> y, std::span<const double> alpha, double C) {
    const std::size_t n = y.size();
    double gmax = -std::numeric_limits<double>::infinity();
    double gmin = std::numeric_limits<double>::infinity();
    for (std::size_t t = 0; t < n; ++t) {
        double g = -1.0;
        for (std::size_t k = 0; k < n; ++k) g += y[t] * y[k] * gram[t * n + k] * alpha[k];
        const double v = -y[t] * g;
        if ((y[t] == 1 && alpha[t] < C) || (y[t] == -1 && alpha[t] > 0.0)) gmax = std::max(gmax, v);
        if ((y[t] == -1 && alpha[t] < C) || (y[t] == 1 && alpha[t] > 0.0)) gmin = std::min(gmin, v);
    }
    if (!std::isfinite(gmax) || !std::isfinite(gmin)) return 0.0;
    return std::max(0.0, gmax - gmin);
}

double BinarySvm::decision(std::span<const double> x, const SvmConfig& config) const {
    double f = bias;
    for (std::size_t i = 0; i < support.size(); ++i) f += coef[i] * poly_kernel(support[i], x, config);
    return f;
}

bool SvmModel::converged() const {
    return std::all_of(machines.begin(), machines.end(), [](const BinarySvm& m) { return m.converged; });
}

std::size_t SvmModel::support_vector_count() const {
    std::size_t n = 0;
    for (const auto& m : machines) n += m.support.size();
    return n;
}

std::array<double, kNumClasses> SvmModel::decision_values(std::span<const double> x) const {
    if (!trained) throw InvalidArgument("svm: model is not trained");
    if (static_cast<int>(x.size()) != dim) throw InvalidArgument("svm: input dimension mismatch");
    std::array<double, kNumClasses> out{};
    for (std::size_t c = 0; c < out.size(); ++c)
        out[c] = machines[c].present ? machines[c].decision(x, config) : -std::numeric_limits<double>::infinity();
    return out;
}

SvmModel svm_fit(std::span<const LabeledSample> data, const SvmConfig& config) {
    config.validate();
    if (data.empty()) throw InvalidArgument("svm_fit: empty training set");
    const std::size_t dim = data.front().x.size();
    if (dim == 0) throw InvalidArgument("svm_fit: empty feature vectors");
    std::array<bool, kNumClasses> seen{};
    for (const auto& s : data) {
        if (s.x.size() != dim) throw InvalidArgument("svm_fit: inconsistent feature dimension");
        if (s.label < 0 || s.label >= kNumClasses) throw InvalidArgument("svm_fit: label out of range");
        for (double v : s.x)
            if (!std::isfinite(v)) throw InvalidArgument("svm_fit: non-finite feature");
        seen[static_cast<std::size_t>(s.label)] = true;
    }
    if (std::count(seen.begin(), seen.end(), true) < 2) throw InvalidArgument("svm_fit: need at least two classes");

    const auto gram = gram_matrix(data, config);
    SvmModel model;
    model.config = config;
    model.dim = static_cast<int>(dim);
    model.trained = true;
    for (int c = 0; c < kNumClasses; ++c) {
        BinarySvm& m = model.machines[static_cast<std::size_t>(c)];
        m.present = seen[static_cast<std::size_t>(c)];
        if (!m.present) continue;
        std::vector<int> y(data.size());
        for (std::size_t i = 0; i < data.size(); ++i) y[i] = data[i].label == c ? 1 : -1;
        const auto sol = solve_smo(gram, y, config.C, config.tol, config.max_passes);
        m.bias = -sol.rho;
        m.iterations = sol.iterations;
        m.converged = sol.converged;
        for (std::size_t i = 0; i < data.size(); ++i) {
            if (sol.alpha[i] > 0.0) {
                m.support.push_back(data[i].x);
                m.coef.push_back(sol.alpha[i] * y[i]);
            }
        }
    }
    return model;
}

SvmPrediction svm_predict(const SvmModel& model, std::span<const double> x) {
    SvmPrediction p;
    p.decision = model.decision_values(x);
    int best = -1;
    for (int c = 0; c < kNumClasses; ++c) {
        const double v = p.decision[static_cast<std::size_t>(c)];
        if (!model.machines[static_cast<std::size_t>(c)].present) continue;
        if (!std::isfinite(v)) throw NumericError("svm_predict: non-finite decision value");
        if (best < 0 || v > p.decision[static_cast<std::size_t>(best)]) best = c;
    }
    const double top = p.decision[static_cast<std::size_t>(best)];
    double z = 0.0;
    for (int c = 0; c < kNumClasses; ++c) {
        const auto k = static_cast<std::size_t>(c);
        p.scores.probs[k] = model.machines[k].present ? std::exp(p.decision[k] - top) : 0.0;
        z += p.scores.probs[k];
    }
    for (double& v : p.scores.probs) v /= z;
    p.label = label_from_index(best);
    p.confidence = p.scores.probs[static_cast<std::size_t>(best)];
    return p;
}

}  // namespace lens
