#pragma once

#include <array>
#include <cstdint>
#include <span>
#include <vector>

#include "lens/streams.hpp"

namespace lens::detail {

struct Activations {
    Tensor3 conv;  // pre-ReLU
    std::vector<double> pooled;
    std::vector<double> hidden;  // pre-ReLU
    std::array<double, kNumClasses> logits{};
    ClassScores scores;
};

Activations run_forward(const StreamModel& model, const Tensor3& x);
void run_backward(const StreamModel& model, const Tensor3& x, const Activations& a,
                  const std::array<double, kNumClasses>& dlogits, std::vector<double>& grad);
std::uint64_t relu_signature(const Activations& a);

/// consensus_loss that also reports the consensus distribution.
double consensus_loss(const StreamModel& model, std::span<const Tensor3> segments, int label,
                      std::vector<double>* grad, ClassScores* consensus);

/// Bilinear sample of the box [x0, x0+w) x [y0, y0+h) onto an out_w x out_h grid.
Tensor3 crop_resize(const Tensor3& src, double x0, double y0, double w, double h, int out_w, int out_h);
/// Per-channel (x - mean) / std; a single mean/std entry applies to every channel.
void normalize(Tensor3& t, std::span<const double> mean, std::span<const double> std);

}  // namespace lens::detail
