#include <algorithm>
#include <cmath>
#include <numbers>

#include "lens/bytes.hpp"
#include "lens/optflow.hpp"
#include "tvl1_common.hpp"

namespace lens {

GrayImage to_gray(const Frame& frame) {
    GrayImage g(frame.width, frame.height);
    const std::size_t n = g.data.size();
    for (std::size_t i = 0; i < n; ++i) {
        const std::uint8_t* p = frame.pixels.data() + 3 * i;
        g.data[i] = static_cast<float>((0.299 * p[0] + 0.587 * p[1] + 0.114 * p[2]) / 255.0);
    }
    return g;
}

GrayImage resize(const GrayImage& src, int width, int height) {
    if (width <= 0 || height <= 0) throw InvalidArgument("resize target must be positive");
    GrayImage out(width, height);
    const float sx = static_cast<float>(src.width) / width;
    const float sy = static_cast<float>(src.height) / height;
    for (int y = 0; y < height; ++y) {
        const float fy = (y + 0.5f) * sy - 0.5f;
        for (int x = 0; x < width; ++x) {
            out.at(x, y) = detail::sample_bilinear(src, (x + 0.5f) * sx - 0.5f, fy);
        }
    }
    return out;
}

Frame resize_frame(const Frame& src, int width, int height) {
    Frame out(width, height, src.index, src.timestamp_ms);
    const double sx = static_cast<double>(src.width) / width;
    const double sy = static_cast<double>(src.height) / height;
    for (int y = 0; y < height; ++y) {
        const double fy = std::clamp((y + 0.5) * sy - 0.5, 0.0, src.height - 1.0);
        const int y0 = static_cast<int>(fy);
        const int y1 = std::min(y0 + 1, src.height - 1);
        const double ay = fy - y0;
        for (int x = 0; x < width; ++x) {
            const double fx = std::clamp((x + 0.5) * sx - 0.5, 0.0, src.width - 1.0);
            const int x0 = static_cast<int>(fx);
            const int x1 = std::min(x0 + 1, src.width - 1);
            const double ax = fx - x0;
            for (int c = 0; c < 3; ++c) {
                const double top = src.pixel(x0, y0)[c] * (1 - ax) + src.pixel(x1, y0)[c] * ax;
                const double bot = src.pixel(x0, y1)[c] * (1 - ax) + src.pixel(x1, y1)[c] * ax;
                out.pixel(x, y)[c] = static_cast<std::uint8_t>(std::lround(top * (1 - ay) + bot * ay));
            }
        }
    }
    return out;
}

Frame shift_wrap(const Frame& src, int dx, int dy) {
    Frame out(src.width, src.height, src.index, src.timestamp_ms);
    for (int y = 0; y < src.height; ++y) {
        const int sy = ((y - dy) % src.height + src.height) % src.height;
        for (int x = 0; x < src.width; ++x) {
            const int sx = ((x - dx) % src.width + src.width) % src.width;
            std::copy_n(src.pixel(sx, sy), 3, out.pixel(x, y));
        }
    }
    return out;
}

// ---------------------------------------------------------------------------

void Tvl1Params::validate() const {
    if (!(lambda > 0)) throw InvalidArgument("tvl1: lambda must be positive");
    if (!(theta > 0)) throw InvalidArgument("tvl1: theta must be positive");
    if (!(tau > 0 && tau <= 0.25)) throw InvalidArgument("tvl1: tau must be in (0, 0.25]");
    if (!(pyramid_scale > 0 && pyramid_scale < 1)) throw InvalidArgument("tvl1: pyramid_scale must be in (0, 1)");
    if (warps < 1 || iters < 1) throw InvalidArgument("tvl1: warps and iters must be >= 1");
    if (levels < 0) throw InvalidArgument("tvl1: levels must be >= 0 (0 = auto)");
}

int Tvl1Params::resolved_levels(int width, int height) const {
    if (levels > 0) return levels;
    const int m = std::min(width, height);
    const int auto_levels = static_cast<int>(std::floor(std::log2(m / 16.0)));
    return std::max(1, auto_levels);
}

namespace detail {

void check_inputs(const GrayImage& prev, const GrayImage& next, const Tvl1Params& params) {
    params.validate();
    if (prev.width != next.width || prev.height != next.height) {
        throw InvalidArgument("tvl1: frame dimensions differ (" + std::to_string(prev.width) + "x" +
                              std::to_string(prev.height) + " vs " + std::to_string(next.width) + "x" +
                              std::to_string(next.height) + ")");
    }
    const int levels = params.resolved_levels(prev.width, prev.height);
    if (std::min(prev.width, prev.height) < (1 << levels)) {
        throw InvalidArgument("tvl1: frames smaller than 2^levels");
    }
}

GrayImage gaussian_blur(const GrayImage& src, float sigma) {
    const int radius = std::max(1, static_cast<int>(std::ceil(3.0f * sigma)));
    std::vector<float> k(static_cast<std::size_t>(2 * radius + 1));
    float sum = 0.0f;
    for (int i = -radius; i <= radius; ++i) {
        k[static_cast<std::size_t>(i + radius)] = std::exp(-0.5f * i * i / (sigma * sigma));
        sum += k[static_cast<std::size_t>(i + radius)];
    }
    for (float& v : k) v /= sum;
    GrayImage tmp(src.width, src.height);
    GrayImage out(src.width, src.height);
    for (int y = 0; y < src.height; ++y) {
        for (int x = 0; x < src.width; ++x) {
            float acc = 0.0f;
            for (int i = -radius; i <= radius; ++i) {
                const int xx = std::clamp(x + i, 0, src.width - 1);
                acc += k[static_cast<std::size_t>(i + radius)] * src.at(xx, y);
            }
            tmp.at(x, y) = acc;
        }
    }
    for (int y = 0; y < src.height; ++y) {
        for (int x = 0; x < src.width; ++x) {
            float acc = 0.0f;
            for (int i = -radius; i <= radius; ++i) {
                const int yy = std::clamp(y + i, 0, src.height - 1);
                acc += k[static_cast<std::size_t>(i + radius)] * tmp.at(x, yy);
            }
            out.at(x, y) = acc;
        }
    }
    return out;
}

Pyramid build_pyramid(const GrayImage& finest, int levels, double scale) {
    Pyramid p;
    p.levels.push_back(finest);
    const float sigma = static_cast<float>(0.8 * std::sqrt(1.0 / (scale * scale) - 1.0));
    for (int l = 1; l < levels; ++l) {
        const GrayImage& prev = p.levels.back();
        const int w = std::max(1, static_cast<int>(std::lround(prev.width * scale)));
        const int h = std::max(1, static_cast<int>(std::lround(prev.height * scale)));
        p.levels.push_back(resize(gaussian_blur(prev, sigma), w, h));
    }
    return p;
}

FlowField upsample_flow(const FlowField& coarse, int width, int height) {
    GrayImage u(coarse.width, coarse.height), v(coarse.width, coarse.height);
    u.data = coarse.u;
    v.data = coarse.v;
    const float fx = static_cast<float>(width) / coarse.width;
    const float fy = static_cast<float>(height) / coarse.height;
    FlowField out(width, height);
    GrayImage uu = resize(u, width, height);
    GrayImage vv = resize(v, width, height);
    for (std::size_t i = 0; i < out.size(); ++i) {
        out.u[i] = uu.data[i] * fx;
        out.v[i] = vv.data[i] * fy;
    }
    return out;
}

GrayImage scaled(const GrayImage& src, float factor) {
    GrayImage out = src;
    for (float& v : out.data) v *= factor;
    return out;
}

}  // namespace detail

double tvl1_energy(const GrayImage& prev, const GrayImage& next, const FlowField& flow, double lambda) {
    if (prev.width != flow.width || prev.height != flow.height || next.width != flow.width ||
        next.height != flow.height) {
        throw InvalidArgument("tvl1_energy: dimension mismatch");
    }
    const int w = flow.width;
    const int h = flow.height;
    double tv = 0.0;
    double data = 0.0;
    for (int y = 0; y < h; ++y) {
        for (int x = 0; x < w; ++x) {
            const std::size_t i = static_cast<std::size_t>(y) * w + x;
            const double ux = x + 1 < w ? flow.u[i + 1] - flow.u[i] : 0.0;
            const double uy = y + 1 < h ? flow.u[i + w] - flow.u[i] : 0.0;
            const double vx = x + 1 < w ? flow.v[i + 1] - flow.v[i] : 0.0;
            const double vy = y + 1 < h ? flow.v[i + w] - flow.v[i] : 0.0;
            tv += std::hypot(ux, uy) + std::hypot(vx, vy);
            const float warped = detail::sample_bilinear(next, x + flow.u[i], y + flow.v[i]);
            data += std::abs(static_cast<double>(warped) - prev.at(x, y)) * detail::kIntensityScale;
        }
    }
    return tv + lambda * data;
}

double endpoint_error(const FlowField& estimate, const FlowField& truth) {
    if (estimate.width != truth.width || estimate.height != truth.height) {
        throw InvalidArgument("endpoint_error: dimension mismatch");
    }
    if (estimate.size() == 0) return 0.0;
    double acc = 0.0;
    for (std::size_t i = 0; i < estimate.size(); ++i) {
        acc += std::hypot(static_cast<double>(estimate.u[i]) - truth.u[i],
                          static_cast<double>(estimate.v[i]) - truth.v[i]);
    }
    return acc / static_cast<double>(estimate.size());
}

Frame flow_colorize(const FlowField& flow) {
    Frame out(std::max(1, flow.width), std::max(1, flow.height));
    std::vector<double> mags(flow.size());
    for (std::size_t i = 0; i < flow.size(); ++i) mags[i] = std::hypot(flow.u[i], flow.v[i]);
    double norm = 0.0;
    if (!mags.empty()) {
        std::vector<double> sorted = mags;
        const std::size_t rank = static_cast<std::size_t>(std::ceil(0.99 * sorted.size())) - 1;
        std::nth_element(sorted.begin(), sorted.begin() + static_cast<std::ptrdiff_t>(rank), sorted.end());
        norm = sorted[rank];
    }
    for (std::size_t i = 0; i < flow.size(); ++i) {
        std::uint8_t* px = out.pixels.data() + 3 * i;
        if (norm <= 0.0 || mags[i] == 0.0) {
            px[0] = px[1] = px[2] = 255;
            continue;
        }
        double hue = std::atan2(static_cast<double>(flow.v[i]), static_cast<double>(flow.u[i]));
        if (hue < 0) hue += 2 * std::numbers::pi;
        const double h6 = hue / (2 * std::numbers::pi) * 6.0;
        const double rel = mags[i] / norm;
        const double sat = std::min(1.0, rel);
        const double val = rel > 1.0 ? 0.75 : 1.0;  // beyond the normalization radius
        const int sector = static_cast<int>(std::floor(h6)) % 6;
        const double f = h6 - std::floor(h6);
        // HSV with V=1 blended toward white by (1 - saturation).
        double r = 0, g = 0, b = 0;
        switch (sector) {
            case 0: r = 1; g = f; b = 0; break;
            case 1: r = 1 - f; g = 1; b = 0; break;
            case 2: r = 0; g = 1; b = f; break;
            case 3: r = 0; g = 1 - f; b = 1; break;
            case 4: r = f; g = 0; b = 1; break;
            default: r = 1; g = 0; b = 1 - f; break;
        }
        auto channel = [&](double c) {
            return static_cast<std::uint8_t>(std::lround(255.0 * val * (1.0 - sat * (1.0 - c))));
        };
        px[0] = channel(r);
        px[1] = channel(g);
        px[2] = channel(b);
    }
    return out;
}

// ---------------------------------------------------------------------------

StackedFlow stack_flows(std::span<const FlowField> flows) {
    if (flows.empty()) throw InvalidArgument("stack_flows: empty input");
    StackedFlow s;
    s.length = static_cast<int>(flows.size());
    s.width = flows.front().width;
    s.height = flows.front().height;
    s.channels.reserve(2 * flows.size());
    for (const FlowField& f : flows) {
        if (f.width != s.width || f.height != s.height) throw InvalidArgument("stack_flows: dimension mismatch");
        s.channels.push_back(f.u);
        s.channels.push_back(f.v);
    }
    return s;
}

std::vector<FlowField> split_stack(const StackedFlow& stack) {
    if (stack.channel_count() != 2 * stack.length) throw InvalidArgument("split_stack: channel count != 2L");
    std::vector<FlowField> out;
    for (int i = 0; i < stack.length; ++i) {
        FlowField f(stack.width, stack.height);
        f.u = stack.channels[static_cast<std::size_t>(2 * i)];
        f.v = stack.channels[static_cast<std::size_t>(2 * i + 1)];
        out.push_back(std::move(f));
    }
    return out;
}

float quantize_flow_value(float px) {
    const float c = std::clamp(px, -kFlowClampPx, kFlowClampPx);
    return std::round((c + kFlowClampPx) * (255.0f / (2.0f * kFlowClampPx)));
}

// ---------------------------------------------------------------------------

std::vector<std::uint8_t> encode_flow(const FlowField& flow) {
    ByteWriter out;
    out.text("LFLO");
    out.u16(static_cast<std::uint16_t>(flow.width));
    out.u16(static_cast<std::uint16_t>(flow.height));
    for (float x : flow.u) out.f32(x);
    for (float x : flow.v) out.f32(x);
    return std::move(out).take();
}

FlowField decode_flow(std::span<const std::uint8_t> bytes) {
    ByteReader in(bytes);
    if (bytes.size() < 4 || in.text(4) != "LFLO") throw FormatError("bad magic, expected LFLO", 0);
    const int w = in.u16();
    const int h = in.u16();
    FlowField f(w, h);
    for (float& x : f.u) x = in.f32();
    for (float& x : f.v) x = in.f32();
    if (in.remaining() != 0) throw FormatError("trailing bytes after flow planes", in.offset());
    return f;
}

void save_flow(const FlowField& flow, const std::filesystem::path& path) {
    write_file(path.string(), encode_flow(flow));
}

FlowField load_flow(const std::filesystem::path& path) { return decode_flow(read_file(path.string())); }

}  // namespace lens
