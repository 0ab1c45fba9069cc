#pragma once

// Pieces shared by the parallel solver and the serial reference: parameter checks,
// pyramid construction and flow upsampling. The per-iteration kernels live in each
// implementation separately.

#include <vector>

#include "lens/optflow.hpp"

namespace lens::detail {

/// Solver intensities are luma in 8-bit units so that the usual lambda range applies.
inline constexpr float kIntensityScale = 255.0f;
inline constexpr float kGradIsZero = 1e-10f;

struct Pyramid {
    std::vector<GrayImage> levels;  // [0] finest
};

void check_inputs(const GrayImage& prev, const GrayImage& next, const Tvl1Params& params);
GrayImage gaussian_blur(const GrayImage& src, float sigma);
Pyramid build_pyramid(const GrayImage& finest, int levels, double scale);
FlowField upsample_flow(const FlowField& coarse, int width, int height);
GrayImage scaled(const GrayImage& src, float factor);

inline bool inside(const GrayImage& img, float x, float y) {
    return x >= 0.0f && y >= 0.0f && x <= img.width - 1 && y <= img.height - 1;
}

inline float sample_bilinear(const GrayImage& img, float x, float y) {
    const float fx = x < 0.0f ? 0.0f : (x > img.width - 1 ? static_cast<float>(img.width - 1) : x);
    const float fy = y < 0.0f ? 0.0f : (y > img.height - 1 ? static_cast<float>(img.height - 1) : y);
    const int x0 = static_cast<int>(fx);
    const int y0 = static_cast<int>(fy);
    const int x1 = x0 + 1 < img.width ? x0 + 1 : x0;
    const int y1 = y0 + 1 < img.height ? y0 + 1 : y0;
    const float ax = fx - x0;
    const float ay = fy - y0;
    const float top = img.at(x0, y0) + ax * (img.at(x1, y0) - img.at(x0, y0));
    const float bot = img.at(x0, y1) + ax * (img.at(x1, y1) - img.at(x0, y1));
    return top + ay * (bot - top);
}

}  // namespace lens::detail
