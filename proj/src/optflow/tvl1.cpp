// OpenMP TV-L1 solver. Every kernel writes disjoint outputs per row, so the result does not
// depend on the thread count.

#include <algorithm>
#include <array>
#include <cmath>

#include "lens/optflow.hpp"
#include "tvl1_common.hpp"

namespace lens {

namespace {

using detail::kGradIsZero;

struct Workspace {
    int w, h;
    GrayImage ix, iy;                  // gradient of the target frame
    std::vector<float> i1w, ixw, iyw;  // warped target and gradients
    std::vector<float> grad, rho_c;
    std::vector<float> p11, p12, p21, p22;
    std::vector<float> tmp_u, tmp_v;

    Workspace(int width, int height) : w(width), h(height), ix(width, height), iy(width, height) {
        const std::size_t n = static_cast<std::size_t>(w) * h;
        for (auto* v : {&i1w, &ixw, &iyw, &grad, &rho_c, &p11, &p12, &p21, &p22, &tmp_u, &tmp_v})
            v->assign(n, 0.0f);
    }
};

void centered_gradient(const GrayImage& img, GrayImage& gx, GrayImage& gy) {
    const int w = img.width;
    const int h = img.height;
#pragma omp parallel for schedule(static)
    for (int y = 0; y < h; ++y) {
        const int ym = y > 0 ? y - 1 : 0;
        const int yp = y + 1 < h ? y + 1 : h - 1;
        const float* row = img.data.data() + static_cast<std::size_t>(y) * w;
        const float* up = img.data.data() + static_cast<std::size_t>(ym) * w;
        const float* down = img.data.data() + static_cast<std::size_t>(yp) * w;
        float* ox = gx.data.data() + static_cast<std::size_t>(y) * w;
        float* oy = gy.data.data() + static_cast<std::size_t>(y) * w;
        for (int x = 0; x < w; ++x) {
            const int xm = x > 0 ? x - 1 : 0;
            const int xp = x + 1 < w ? x + 1 : w - 1;
            ox[x] = 0.5f * (row[xp] - row[xm]);
            oy[x] = 0.5f * (down[x] - up[x]);
        }
    }
}

void warp_and_linearize(const GrayImage& i0, const GrayImage& i1, const FlowField& flow, Workspace& ws) {
    const int w = ws.w;
    const int h = ws.h;
    const GrayImage& gx = ws.ix;
    const GrayImage& gy = ws.iy;
#pragma omp parallel for schedule(static)
    for (int y = 0; y < h; ++y) {
        for (int x = 0; x < w; ++x) {
            const std::size_t i = static_cast<std::size_t>(y) * w + x;
            const float u = flow.u[i];
            const float v = flow.v[i];
            const float sx = x + u;
            const float sy = y + v;
            const float warped = detail::sample_bilinear(i1, sx, sy);
            ws.i1w[i] = warped;
            if (!detail::inside(i1, sx, sy)) {
                // No data term for samples that left the frame.
                ws.ixw[i] = ws.iyw[i] = ws.grad[i] = ws.rho_c[i] = 0.0f;
                continue;
            }
            const float wx = detail::sample_bilinear(gx, sx, sy);
            const float wy = detail::sample_bilinear(gy, sx, sy);
            ws.ixw[i] = wx;
            ws.iyw[i] = wy;
            ws.grad[i] = wx * wx + wy * wy;
            ws.rho_c[i] = warped - wx * u - wy * v - i0.data[i];
        }
    }
}

// Thresholding step on the auxiliary variable followed by u = v + θ div p.
void primal_step(Workspace& ws, FlowField& flow, float lambda_theta, float theta) {
    const int w = ws.w;
    const int h = ws.h;
#pragma omp parallel for schedule(static)
    for (int y = 0; y < h; ++y) {
        for (int x = 0; x < w; ++x) {
            const std::size_t i = static_cast<std::size_t>(y) * w + x;
            const float u1 = flow.u[i];
            const float u2 = flow.v[i];
            const float rho = ws.rho_c[i] + ws.ixw[i] * u1 + ws.iyw[i] * u2;
            const float g = ws.grad[i];
            float d1 = 0.0f, d2 = 0.0f;
            if (rho < -lambda_theta * g) {
                d1 = lambda_theta * ws.ixw[i];
                d2 = lambda_theta * ws.iyw[i];
            } else if (rho > lambda_theta * g) {
                d1 = -lambda_theta * ws.ixw[i];
                d2 = -lambda_theta * ws.iyw[i];
            } else if (g > kGradIsZero) {
                const float fi = -rho / g;
                d1 = fi * ws.ixw[i];
                d2 = fi * ws.iyw[i];
            }
            // Divergence of the dual fields (adjoint of forward differences).
            float div1 = 0.0f, div2 = 0.0f;
            if (x == 0) {
                div1 += ws.p11[i];
                div2 += ws.p21[i];
            } else if (x == w - 1) {
                div1 -= ws.p11[i - 1];
                div2 -= ws.p21[i - 1];
            } else {
                div1 += ws.p11[i] - ws.p11[i - 1];
                div2 += ws.p21[i] - ws.p21[i - 1];
            }
            if (y == 0) {
                div1 += ws.p12[i];
                div2 += ws.p22[i];
            } else if (y == h - 1) {
                div1 -= ws.p12[i - w];
                div2 -= ws.p22[i - w];
            } else {
                div1 += ws.p12[i] - ws.p12[i - w];
                div2 += ws.p22[i] - ws.p22[i - w];
            }
            ws.tmp_u[i] = u1 + d1 + theta * div1;
            ws.tmp_v[i] = u2 + d2 + theta * div2;
        }
    }
    flow.u.swap(ws.tmp_u);
    flow.v.swap(ws.tmp_v);
}

void dual_step(Workspace& ws, const FlowField& flow, float taut) {
    const int w = ws.w;
    const int h = ws.h;
#pragma omp parallel for schedule(static)
    for (int y = 0; y < h; ++y) {
        for (int x = 0; x < w; ++x) {
            const std::size_t i = static_cast<std::size_t>(y) * w + x;
            const float u1x = x + 1 < w ? flow.u[i + 1] - flow.u[i] : 0.0f;
            const float u1y = y + 1 < h ? flow.u[i + w] - flow.u[i] : 0.0f;
            const float u2x = x + 1 < w ? flow.v[i + 1] - flow.v[i] : 0.0f;
            const float u2y = y + 1 < h ? flow.v[i + w] - flow.v[i] : 0.0f;
            const float ng1 = 1.0f + taut * std::sqrt(u1x * u1x + u1y * u1y);
            const float ng2 = 1.0f + taut * std::sqrt(u2x * u2x + u2y * u2y);
            ws.p11[i] = (ws.p11[i] + taut * u1x) / ng1;
            ws.p12[i] = (ws.p12[i] + taut * u1y) / ng1;
            ws.p21[i] = (ws.p21[i] + taut * u2x) / ng2;
            ws.p22[i] = (ws.p22[i] + taut * u2y) / ng2;
        }
    }
}

void median3x3(const std::vector<float>& src, std::vector<float>& dst, int w, int h) {
#pragma omp parallel for schedule(static)
    for (int y = 0; y < h; ++y) {
        std::array<float, 9> win{};
        for (int x = 0; x < w; ++x) {
            int k = 0;
            for (int dy = -1; dy <= 1; ++dy) {
                const int yy = std::clamp(y + dy, 0, h - 1);
                for (int dx = -1; dx <= 1; ++dx) {
                    const int xx = std::clamp(x + dx, 0, w - 1);
                    win[static_cast<std::size_t>(k++)] = src[static_cast<std::size_t>(yy) * w + xx];
                }
            }
            std::nth_element(win.begin(), win.begin() + 4, win.end());
            dst[static_cast<std::size_t>(y) * w + x] = win[4];
        }
    }
}

// Solver images are in 8-bit units; the objective is defined on [0,1] luma.
double level_energy(const GrayImage& i0, const GrayImage& i1, const FlowField& flow, double lambda) {
    const float k = 1.0f / detail::kIntensityScale;
    return tvl1_energy(detail::scaled(i0, k), detail::scaled(i1, k), flow, lambda);
}

void solve_level(const GrayImage& i0, const GrayImage& i1, FlowField& flow, const Tvl1Params& params,
                 std::vector<double>* energies) {
    Workspace ws(i0.width, i0.height);
    centered_gradient(i1, ws.ix, ws.iy);
    const float theta = static_cast<float>(params.theta);
    const float lambda_theta = static_cast<float>(params.lambda * params.theta);
    const float taut = static_cast<float>(params.tau / params.theta);
    if (energies) energies->push_back(level_energy(i0, i1, flow, params.lambda));
    for (int warp = 0; warp < params.warps; ++warp) {
        warp_and_linearize(i0, i1, flow, ws);
        for (int it = 0; it < params.iters; ++it) {
            primal_step(ws, flow, lambda_theta, theta);
            dual_step(ws, flow, taut);
        }
        median3x3(flow.u, ws.tmp_u, ws.w, ws.h);
        median3x3(flow.v, ws.tmp_v, ws.w, ws.h);
        flow.u.swap(ws.tmp_u);
        flow.v.swap(ws.tmp_v);
        if (energies) energies->push_back(level_energy(i0, i1, flow, params.lambda));
    }
}

}  // namespace

FlowField tvl1_flow(const GrayImage& prev, const GrayImage& next, const Tvl1Params& params,
                    Tvl1Diagnostics* diagnostics) {
    detail::check_inputs(prev, next, params);
    const int levels = params.resolved_levels(prev.width, prev.height);
    const detail::Pyramid p0 = detail::build_pyramid(detail::scaled(prev, detail::kIntensityScale), levels,
                                                     params.pyramid_scale);
    const detail::Pyramid p1 = detail::build_pyramid(detail::scaled(next, detail::kIntensityScale), levels,
                                                     params.pyramid_scale);
    if (diagnostics) diagnostics->finest_energies.clear();
    FlowField flow(p0.levels.back().width, p0.levels.back().height);
    for (int l = levels - 1; l >= 0; --l) {
        const GrayImage& i0 = p0.levels[static_cast<std::size_t>(l)];
        const GrayImage& i1 = p1.levels[static_cast<std::size_t>(l)];
        if (flow.width != i0.width || flow.height != i0.height) flow = detail::upsample_flow(flow, i0.width, i0.height);
        solve_level(i0, i1, flow, params, (l == 0 && diagnostics) ? &diagnostics->finest_energies : nullptr);
    }
    return flow;
}

FlowField tvl1_flow(const Frame& prev, const Frame& next, const Tvl1Params& params, Tvl1Diagnostics* diagnostics) {
    if (prev.width != next.width || prev.height != next.height) {
        throw InvalidArgument("tvl1: frame dimensions differ");
    }
    return tvl1_flow(to_gray(prev), to_gray(next), params, diagnostics);
}

}  // namespace lens
