// Serial TV-L1, written for readability. Used as the oracle for the OpenMP solver and as the
// baseline of the flow benchmark.

#include <algorithm>
#include <cmath>
#include <vector>

#include "lens/optflow.hpp"
#include "tvl1_common.hpp"

namespace lens::reference {

namespace {

struct Dual {
    GrayImage px, py;
};

float forward_dx(const GrayImage& f, int x, int y) { return x + 1 < f.width ? f.at(x + 1, y) - f.at(x, y) : 0.0f; }
float forward_dy(const GrayImage& f, int x, int y) { return y + 1 < f.height ? f.at(x, y + 1) - f.at(x, y) : 0.0f; }

float divergence(const Dual& p, int x, int y) {
    const int w = p.px.width;
    const int h = p.px.height;
    float dx;
    if (x == 0) {
        dx = p.px.at(x, y);
    } else if (x == w - 1) {
        dx = -p.px.at(x - 1, y);
    } else {
        dx = p.px.at(x, y) - p.px.at(x - 1, y);
    }
    float dy;
    if (y == 0) {
        dy = p.py.at(x, y);
    } else if (y == h - 1) {
        dy = -p.py.at(x, y - 1);
    } else {
        dy = p.py.at(x, y) - p.py.at(x, y - 1);
    }
    return dx + dy;
}

GrayImage median_filter(const GrayImage& src) {
    GrayImage out(src.width, src.height);
    for (int y = 0; y < src.height; ++y) {
        for (int x = 0; x < src.width; ++x) {
            std::vector<float> win;
            for (int dy = -1; dy <= 1; ++dy)
                for (int dx = -1; dx <= 1; ++dx)
                    win.push_back(src.at(std::clamp(x + dx, 0, src.width - 1), std::clamp(y + dy, 0, src.height - 1)));
            std::sort(win.begin(), win.end());
            out.at(x, y) = win[4];
        }
    }
    return out;
}

void solve_level(const GrayImage& i0, const GrayImage& i1, GrayImage& u, GrayImage& v, const Tvl1Params& params,
                 std::vector<double>* energies) {
    const int w = i0.width;
    const int h = i0.height;
    GrayImage gx(w, h), gy(w, h);
    for (int y = 0; y < h; ++y) {
        for (int x = 0; x < w; ++x) {
            gx.at(x, y) = 0.5f * (i1.at(std::min(x + 1, w - 1), y) - i1.at(std::max(x - 1, 0), y));
            gy.at(x, y) = 0.5f * (i1.at(x, std::min(y + 1, h - 1)) - i1.at(x, std::max(y - 1, 0)));
        }
    }
    const float theta = static_cast<float>(params.theta);
    const float lt = static_cast<float>(params.lambda * params.theta);
    const float taut = static_cast<float>(params.tau / params.theta);

    auto record_energy = [&] {
        if (!energies) return;
        FlowField f(w, h);
        f.u = u.data;
        f.v = v.data;
        const float k = 1.0f / detail::kIntensityScale;
        energies->push_back(tvl1_energy(detail::scaled(i0, k), detail::scaled(i1, k), f, params.lambda));
    };
    record_energy();

    Dual pu{GrayImage(w, h), GrayImage(w, h)};
    Dual pv{GrayImage(w, h), GrayImage(w, h)};
    GrayImage wx(w, h), wy(w, h), rho_c(w, h);
    for (int warp = 0; warp < params.warps; ++warp) {
        for (int y = 0; y < h; ++y) {
            for (int x = 0; x < w; ++x) {
                const float sx = x + u.at(x, y);
                const float sy = y + v.at(x, y);
                if (!detail::inside(i1, sx, sy)) {
                    wx.at(x, y) = wy.at(x, y) = rho_c.at(x, y) = 0.0f;
                    continue;
                }
                const float warped = detail::sample_bilinear(i1, sx, sy);
                wx.at(x, y) = detail::sample_bilinear(gx, sx, sy);
                wy.at(x, y) = detail::sample_bilinear(gy, sx, sy);
                rho_c.at(x, y) = warped - wx.at(x, y) * u.at(x, y) - wy.at(x, y) * v.at(x, y) - i0.at(x, y);
            }
        }
        for (int it = 0; it < params.iters; ++it) {
            GrayImage nu(w, h), nv(w, h);
            for (int y = 0; y < h; ++y) {
                for (int x = 0; x < w; ++x) {
                    const float ix = wx.at(x, y);
                    const float iy = wy.at(x, y);
                    const float g = ix * ix + iy * iy;
                    const float rho = rho_c.at(x, y) + ix * u.at(x, y) + iy * v.at(x, y);
                    float d1 = 0.0f, d2 = 0.0f;
                    if (rho < -lt * g) {
                        d1 = lt * ix;
                        d2 = lt * iy;
                    } else if (rho > lt * g) {
                        d1 = -lt * ix;
                        d2 = -lt * iy;
                    } else if (g > detail::kGradIsZero) {
                        d1 = -rho / g * ix;
                        d2 = -rho / g * iy;
                    }
                    nu.at(x, y) = u.at(x, y) + d1 + theta * divergence(pu, x, y);
                    nv.at(x, y) = v.at(x, y) + d2 + theta * divergence(pv, x, y);
                }
            }
            u = std::move(nu);
            v = std::move(nv);
            for (int y = 0; y < h; ++y) {
                for (int x = 0; x < w; ++x) {
                    const float ux = forward_dx(u, x, y), uy = forward_dy(u, x, y);
                    const float vx = forward_dx(v, x, y), vy = forward_dy(v, x, y);
                    const float nu_ = 1.0f + taut * std::sqrt(ux * ux + uy * uy);
                    const float nv_ = 1.0f + taut * std::sqrt(vx * vx + vy * vy);
                    pu.px.at(x, y) = (pu.px.at(x, y) + taut * ux) / nu_;
                    pu.py.at(x, y) = (pu.py.at(x, y) + taut * uy) / nu_;
                    pv.px.at(x, y) = (pv.px.at(x, y) + taut * vx) / nv_;
                    pv.py.at(x, y) = (pv.py.at(x, y) + taut * vy) / nv_;
                }
            }
        }
        u = median_filter(u);
        v = median_filter(v);
        record_energy();
    }
}

}  // namespace

FlowField tvl1_flow(const GrayImage& prev, const GrayImage& next, const Tvl1Params& params,
                    Tvl1Diagnostics* diagnostics) {
    detail::check_inputs(prev, next, params);
    const int levels = params.resolved_levels(prev.width, prev.height);
    const auto p0 = detail::build_pyramid(detail::scaled(prev, detail::kIntensityScale), levels, params.pyramid_scale);
    const auto p1 = detail::build_pyramid(detail::scaled(next, detail::kIntensityScale), levels, params.pyramid_scale);
    if (diagnostics) diagnostics->finest_energies.clear();

    FlowField flow(p0.levels.back().width, p0.levels.back().height);
    for (int l = levels - 1; l >= 0; --l) {
        const GrayImage& i0 = p0.levels[static_cast<std::size_t>(l)];
        const GrayImage& i1 = p1.levels[static_cast<std::size_t>(l)];
        if (flow.width != i0.width || flow.height != i0.height) flow = detail::upsample_flow(flow, i0.width, i0.height);
        GrayImage u(flow.width, flow.height), v(flow.width, flow.height);
        u.data = flow.u;
        v.data = flow.v;
        solve_level(i0, i1, u, v, params, (l == 0 && diagnostics) ? &diagnostics->finest_energies : nullptr);
        flow.u = std::move(u.data);
        flow.v = std::move(v.data);
    }
    return flow;
}

}  // namespace lens::reference
