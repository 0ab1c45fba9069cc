#pragma once

#include <cstdint>
#include <filesystem>
#include <span>
#include <vector>

#include "lens/videoio.hpp"

namespace lens {

/// Single-channel float image, row-major.
struct GrayImage {
    int width = 0;
    int height = 0;
    std::vector<float> data;

    GrayImage() = default;
    GrayImage(int w, int h, float fill = 0.0f) : width(w), height(h), data(static_cast<std::size_t>(w) * h, fill) {}

    float& at(int x, int y) { return data[static_cast<std::size_t>(y) * width + x]; }
    float at(int x, int y) const { return data[static_cast<std::size_t>(y) * width + x]; }
};

/// BT.601 luma scaled to [0, 1].
GrayImage to_gray(const Frame& frame);

/// Per-pixel displacement (u horizontal, v vertical) from the first frame to the second.
struct FlowField {
    int width = 0;
    int height = 0;
    std::vector<float> u;
    std::vector<float> v;

    FlowField() = default;
    FlowField(int w, int h)
        : width(w), height(h), u(static_cast<std::size_t>(w) * h, 0.0f), v(static_cast<std::size_t>(w) * h, 0.0f) {}

    std::size_t size() const { return u.size(); }
};

struct Tvl1Params {
    double lambda = 0.15;
    double theta = 0.3;
    double tau = 0.25;
    int warps = 5;
    int iters = 30;
    double pyramid_scale = 0.5;
    int levels = 0;  // 0 selects floor(log2(min(w, h) / 16)), at least 1

    void validate() const;
    int resolved_levels(int width, int height) const;
};

struct Tvl1Diagnostics {
    /// TV-L1 objective at the finest level: entry 0 before the first warp, then one per warp.
    std::vector<double> finest_energies;
};

/// Duality-based TV-L1 flow, coarse to fine with iterative warping. OpenMP-parallel kernels;
/// results are deterministic and independent of the thread count.
FlowField tvl1_flow(const Frame& prev, const Frame& next, const Tvl1Params& params = {},
                    Tvl1Diagnostics* diagnostics = nullptr);
FlowField tvl1_flow(const GrayImage& prev, const GrayImage& next, const Tvl1Params& params = {},
                    Tvl1Diagnostics* diagnostics = nullptr);

namespace reference {
/// Plain serial implementation of the same solver, kept as a test oracle for the parallel one.
FlowField tvl1_flow(const GrayImage& prev, const GrayImage& next, const Tvl1Params& params = {},
                    Tvl1Diagnostics* diagnostics = nullptr);
}  // namespace reference

/// Σ |∇u| + |∇v| + λ |I1(x + w) − I0(x)| with the solver's discretization (forward differences,
/// replicate borders, bilinear warp).
double tvl1_energy(const GrayImage& prev, const GrayImage& next, const FlowField& flow, double lambda);

/// Mean Euclidean distance between two flow fields.
double endpoint_error(const FlowField& estimate, const FlowField& truth);

/// Color-wheel visualization: hue = atan2(v, u), saturation = |w| / p99(|w|). Zero flow is white.
Frame flow_colorize(const FlowField& flow);

// ---------------------------------------------------------------------------

/// L flow fields interleaved as 2L planes u1, v1, u2, v2, ...
struct StackedFlow {
    int length = 0;
    int width = 0;
    int height = 0;
    std::vector<std::vector<float>> channels;

    int channel_count() const { return static_cast<int>(channels.size()); }
};

inline constexpr int kDefaultStackLength = 10;

StackedFlow stack_flows(std::span<const FlowField> flows);
std::vector<FlowField> split_stack(const StackedFlow& stack);

/// Flow values are clamped to ±kFlowClampPx and mapped linearly to [0, 255], rounded.
inline constexpr float kFlowClampPx = 20.0f;
float quantize_flow_value(float px);

// ---------------------------------------------------------------------------
// .lflo dump format

std::vector<std::uint8_t> encode_flow(const FlowField& flow);
FlowField decode_flow(std::span<const std::uint8_t> bytes);
void save_flow(const FlowField& flow, const std::filesystem::path& path);
FlowField load_flow(const std::filesystem::path& path);

// ---------------------------------------------------------------------------
// Image helpers shared by the solver, tests and reduced-resolution pipelines.

/// Bilinear resample with replicate borders (center-aligned pixel grid).
GrayImage resize(const GrayImage& src, int width, int height);
Frame resize_frame(const Frame& src, int width, int height);
/// Integer translation with wraparound: out(x, y) = src(x - dx, y - dy).
Frame shift_wrap(const Frame& src, int dx, int dy);

}  // namespace lens
