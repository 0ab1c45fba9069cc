#include <algorithm>
#include <cmath>

#include "lens/error.hpp"
#include "lens/streams.hpp"
#include "tensor_ops.hpp"

namespace lens {

namespace detail {

Tensor3 crop_resize(const Tensor3& src, double x0, double y0, double w, double h, int out_w, int out_h) {
    if (out_w < 1 || out_h < 1) throw InvalidArgument("crop_resize: output size must be positive");
    if (!(w > 0.0 && h > 0.0)) throw InvalidArgument("crop_resize: empty crop");
    Tensor3 out(src.channels, out_h, out_w);
    const double sx = w / out_w;
    const double sy = h / out_h;
    std::vector<int> xa(static_cast<std::size_t>(out_w)), xb(static_cast<std::size_t>(out_w));
    std::vector<double> xf(static_cast<std::size_t>(out_w));
    for (int ox = 0; ox < out_w; ++ox) {
        const double fx = std::clamp(x0 + (ox + 0.5) * sx - 0.5, 0.0, static_cast<double>(src.width - 1));
        xa[static_cast<std::size_t>(ox)] = static_cast<int>(fx);
        xb[static_cast<std::size_t>(ox)] = std::min(xa[static_cast<std::size_t>(ox)] + 1, src.width - 1);
        xf[static_cast<std::size_t>(ox)] = fx - xa[static_cast<std::size_t>(ox)];
    }
    for (int oy = 0; oy < out_h; ++oy) {
        const double fy = std::clamp(y0 + (oy + 0.5) * sy - 0.5, 0.0, static_cast<double>(src.height - 1));
        const int ya = static_cast<int>(fy);
        const int yb = std::min(ya + 1, src.height - 1);
        const double ay = fy - ya;
        for (int c = 0; c < src.channels; ++c) {
            for (int ox = 0; ox < out_w; ++ox) {
                const std::size_t i = static_cast<std::size_t>(ox);
                const double top = src.at(c, ya, xa[i]) + xf[i] * (src.at(c, ya, xb[i]) - src.at(c, ya, xa[i]));
                const double bot = src.at(c, yb, xa[i]) + xf[i] * (src.at(c, yb, xb[i]) - src.at(c, yb, xa[i]));
                out.at(c, oy, ox) = top + ay * (bot - top);
            }
        }
    }
    return out;
}

void normalize(Tensor3& t, std::span<const double> mean, std::span<const double> std) {
    const std::size_t C = static_cast<std::size_t>(t.channels);
    auto ok = [&](std::size_t n) { return n == 1 || n == C; };
    if (!ok(mean.size()) || !ok(std.size())) throw InvalidArgument("normalize: mean/std size must be 1 or the channel count");
    const std::size_t plane = static_cast<std::size_t>(t.width) * t.height;
    for (std::size_t c = 0; c < C; ++c) {
        const double m = mean[mean.size() == 1 ? 0 : c];
        const double s = std[std.size() == 1 ? 0 : c];
        if (!(s > 0.0)) throw InvalidArgument("normalize: std must be positive");
        for (std::size_t i = 0; i < plane; ++i) {
            double& v = t.data[c * plane + i];
            v = (v - m) / s;
        }
    }
}

}  // namespace detail

AugmentConfig AugmentConfig::identity(int output_size, int channels) {
    AugmentConfig c;
    c.crop_min = c.crop_max = 1.0;
    c.output_size = output_size;
    c.mean.assign(static_cast<std::size_t>(channels), 0.0);
    c.std.assign(static_cast<std::size_t>(channels), 1.0);
    return c;
}

void AugmentConfig::validate(int channels) const {
    auto fraction = [](double v) { return v > 0.0 && v <= 1.0; };
    if (!fraction(crop_min) || !fraction(crop_max) || crop_min > crop_max)
        throw InvalidArgument("AugmentConfig: crop fractions must satisfy 0 < min <= max <= 1");
    if (!(scale_jitter_min > 0.0) || scale_jitter_min > scale_jitter_max)
        throw InvalidArgument("AugmentConfig: scale jitter range must be positive and ordered");
    if (!(aspect_min > 0.0) || aspect_min > aspect_max)
        throw InvalidArgument("AugmentConfig: aspect range must be positive and ordered");
    if (output_size < 1) throw InvalidArgument("AugmentConfig: output size must be positive");
    const std::size_t C = static_cast<std::size_t>(channels);
    if ((mean.size() != 1 && mean.size() != C) || (std.size() != 1 && std.size() != C))
        throw InvalidArgument("AugmentConfig: mean/std size must be 1 or the channel count");
    for (double s : std)
        if (!(s > 0.0)) throw InvalidArgument("AugmentConfig: std must be positive");
}

Tensor3 augment(const Tensor3& raw, const AugmentConfig& config, std::mt19937_64& rng) {
    config.validate(raw.channels);
    if (raw.width < 1 || raw.height < 1) throw InvalidArgument("augment: empty input");
    auto uniform = [&](double lo, double hi) { return lo == hi ? lo : std::uniform_real_distribution<double>(lo, hi)(rng); };

    const double frac = uniform(config.crop_min, config.crop_max);
    const double jitter = uniform(config.scale_jitter_min, config.scale_jitter_max);
    const double aspect = std::exp(uniform(std::log(config.aspect_min), std::log(config.aspect_max)));
    const double side = frac * jitter * std::min(raw.width, raw.height);
    const double cw = std::min(side * std::sqrt(aspect), static_cast<double>(raw.width));
    const double ch = std::min(side / std::sqrt(aspect), static_cast<double>(raw.height));
    if (cw < 1.0 || ch < 1.0) throw InvalidArgument("augment: crop smaller than one pixel");
    const double x0 = uniform(0.0, raw.width - cw);
    const double y0 = uniform(0.0, raw.height - ch);

    Tensor3 out = detail::crop_resize(raw, x0, y0, cw, ch, config.output_size, config.output_size);
    detail::normalize(out, config.mean, config.std);
    return out;
}

Tensor3 augment(const Frame& frame, const AugmentConfig& config, std::mt19937_64& rng) {
    return augment(frame_tensor(frame), config, rng);
}

}  // namespace lens
