#include "lens/synth.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <numbers>
#include <random>

#include <nlohmann/json.hpp>

namespace lens {

namespace {

std::uint64_t splitmix64(std::uint64_t x) {
    x += 0x9e3779b97f4a7c15ULL;
    x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
    x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
    return x ^ (x >> 31);
}

std::uint64_t mix(std::uint64_t a, std::uint64_t b) { return splitmix64(a ^ splitmix64(b)); }

struct Rgb {
    double r, g, b;
};

// Float canvas in [0,255] per channel.
class Canvas {
public:
    Canvas(int w, int h) : w_(w), h_(h), px_(static_cast<std::size_t>(w) * h * 3, 0.0) {}

    int width() const { return w_; }
    int height() const { return h_; }
    double* at(int x, int y) { return px_.data() + 3 * (static_cast<std::size_t>(y) * w_ + x); }

    void fill_ellipse(double cx, double cy, double rx, double ry, Rgb c) {
        const int x0 = std::max(0, static_cast<int>(std::floor(cx - rx)));
        const int x1 = std::min(w_ - 1, static_cast<int>(std::ceil(cx + rx)));
        const int y0 = std::max(0, static_cast<int>(std::floor(cy - ry)));
        const int y1 = std::min(h_ - 1, static_cast<int>(std::ceil(cy + ry)));
        for (int y = y0; y <= y1; ++y) {
            for (int x = x0; x <= x1; ++x) {
                const double dx = (x + 0.5 - cx) / rx;
                const double dy = (y + 0.5 - cy) / ry;
                if (dx * dx + dy * dy <= 1.0) set(x, y, c);
            }
        }
    }

    void fill_rect(double cx, double cy, double hw, double hh, Rgb c) {
        const int x0 = std::max(0, static_cast<int>(std::lround(cx - hw)));
        const int x1 = std::min(w_ - 1, static_cast<int>(std::lround(cx + hw)) - 1);
        const int y0 = std::max(0, static_cast<int>(std::lround(cy - hh)));
        const int y1 = std::min(h_ - 1, static_cast<int>(std::lround(cy + hh)) - 1);
        for (int y = y0; y <= y1; ++y)
            for (int x = x0; x <= x1; ++x) set(x, y, c);
    }

    // Radial glow added on top of the current content.
    void add_glow(double cx, double cy, double radius, Rgb c) {
        const int r = static_cast<int>(std::ceil(radius));
        for (int y = std::max(0, static_cast<int>(cy) - r); y <= std::min(h_ - 1, static_cast<int>(cy) + r); ++y) {
            for (int x = std::max(0, static_cast<int>(cx) - r); x <= std::min(w_ - 1, static_cast<int>(cx) + r);
                 ++x) {
                const double d = std::hypot(x + 0.5 - cx, y + 0.5 - cy) / radius;
                if (d >= 1.0) continue;
                const double k = 1.0 - d * d;
                double* p = at(x, y);
                p[0] += k * c.r;
                p[1] += k * c.g;
                p[2] += k * c.b;
            }
        }
    }

    Frame to_frame(std::uint32_t index, int fps, std::mt19937_64& rng, double sigma) const {
        Frame f(w_, h_, index, frame_timestamp_ms(index, fps));
        std::normal_distribution<double> noise(0.0, sigma);
        for (std::size_t i = 0; i < px_.size(); ++i) {
            const double v = std::round(px_[i] + noise(rng));
            f.pixels[i] = static_cast<std::uint8_t>(std::clamp(v, 0.0, 255.0));
        }
        return f;
    }

private:
    void set(int x, int y, Rgb c) {
        double* p = at(x, y);
        p[0] = c.r;
        p[1] = c.g;
        p[2] = c.b;
    }

    int w_, h_;
    std::vector<double> px_;
};

// Static part of a group: background shading, dim structures and the actors' clothing.
struct Scene {
    Canvas background;
    Rgb actor_a;
    Rgb actor_b;
    double ground;  // y of actors' centers as a fraction of height

    Scene(const SynthParams& p, int group) : background(p.width, p.height) {
        std::mt19937_64 rng(mix(p.seed, 0x5ce7e000ULL + static_cast<std::uint64_t>(group)));
        std::uniform_real_distribution<double> u(0.0, 1.0);
        const double base = 8.0 + 5.0 * u(rng);
        const double tilt = 4.0 * u(rng);
        for (int y = 0; y < p.height; ++y) {
            for (int x = 0; x < p.width; ++x) {
                double* px = background.at(x, y);
                const double v = base + tilt * y / p.height;
                px[0] = v;
                px[1] = v * 0.95;
                px[2] = v * 1.1;
            }
        }
        const int structures = 1 + static_cast<int>(u(rng) * 3);
        for (int i = 0; i < structures; ++i) {
            const double lvl = 14.0 + 8.0 * u(rng);
            background.fill_rect(u(rng) * p.width, u(rng) * p.height * 0.5, (0.05 + 0.1 * u(rng)) * p.width,
                                 (0.05 + 0.2 * u(rng)) * p.height, {lvl, lvl, lvl * 1.05});
        }
        auto clothing = [&] { return Rgb{35 + 30 * u(rng), 35 + 30 * u(rng), 35 + 30 * u(rng)}; };
        actor_a = clothing();
        actor_b = clothing();
        ground = 0.55 + 0.15 * u(rng);
    }
};

struct ActorPose {
    double x = 0, y = 0;
    bool lying = false;
};

enum class Prop { None, Bag, Stick, Gun };

struct FrameState {
    ActorPose a, b;
    Prop a_prop = Prop::None;
    Prop b_prop = Prop::None;
    bool flash = false;
};

constexpr Rgb kBag{225, 200, 70};
constexpr Rgb kStick{230, 150, 60};
constexpr Rgb kGun{150, 170, 205};
constexpr Rgb kFlash{255, 245, 200};

// Per-clip motion program. Positions are in pixels of the un-mirrored layout.
class Program {
public:
    Program(const SynthParams& p, ActionLabel label, std::mt19937_64& rng, int frames, double ground)
        : w_(p.width), h_(p.height), n_(frames), label_(label) {
        std::uniform_real_distribution<double> u(0.0, 1.0);
        y0_ = ground * h_ + (u(rng) - 0.5) * 0.06 * h_;
        jitter_phase_ = u(rng) * 6.28;
        switch (label) {
            case ActionLabel::Theft:
                a0_ = (0.22 + 0.1 * u(rng)) * w_;
                b0_ = (0.8 + 0.1 * u(rng)) * w_;
                t_contact_ = static_cast<int>((0.3 + 0.08 * u(rng)) * n_);
                t_grab_ = t_contact_ + static_cast<int>((0.1 + 0.05 * u(rng)) * n_);
                speed_ = (1.3 + 0.5 * u(rng)) * w_ / 64.0;
                break;
            case ActionLabel::Assault:
                a0_ = (0.3 + 0.1 * u(rng)) * w_;
                b0_ = (0.8 + 0.1 * u(rng)) * w_;
                t_contact_ = static_cast<int>((0.2 + 0.08 * u(rng)) * n_);
                period_ = 8.0 + 4.0 * u(rng);
                amp_ = (0.045 + 0.02 * u(rng)) * w_;
                break;
            case ActionLabel::Shooting:
                a0_ = (0.15 + 0.1 * u(rng)) * w_;
                b0_ = (0.55 + 0.2 * u(rng)) * w_;
                speed_ = (0.2 + 0.2 * u(rng)) * w_ / 64.0;
                t_flash_ = static_cast<int>((0.35 + 0.2 * u(rng)) * n_);
                break;
            case ActionLabel::NoAction: {
                a0_ = (0.2 + 0.2 * u(rng)) * w_;
                b0_ = (0.6 + 0.2 * u(rng)) * w_;
                // Smooth random walks: integrate a slowly varying velocity.
                std::normal_distribution<double> dv(0.0, 0.08 * w_ / 64.0);
                ActorPose pa{a0_, y0_}, pb{b0_, y0_ + 0.04 * h_};
                double va = 0, vb = 0, wa = 0, wb = 0;
                for (int t = 0; t < n_; ++t) {
                    walk_a_.push_back(pa);
                    walk_b_.push_back(pb);
                    va = std::clamp(va * 0.95 + dv(rng), -0.6, 0.6);
                    vb = std::clamp(vb * 0.95 + dv(rng), -0.6, 0.6);
                    wa = std::clamp(wa * 0.95 + dv(rng) * 0.5, -0.3, 0.3);
                    wb = std::clamp(wb * 0.95 + dv(rng) * 0.5, -0.3, 0.3);
                    pa.x = std::clamp(pa.x + va, 0.1 * w_, 0.9 * w_);
                    pb.x = std::clamp(pb.x + vb, 0.1 * w_, 0.9 * w_);
                    pa.y = std::clamp(pa.y + wa, 0.35 * h_, 0.8 * h_);
                    pb.y = std::clamp(pb.y + wb, 0.35 * h_, 0.8 * h_);
                }
                break;
            }
        }
    }

    FrameState at(int t) const {
        FrameState s;
        const double jit = 0.3 * std::sin(0.7 * t + jitter_phase_);
        const double contact = 0.14 * w_;
        switch (label_) {
            case ActionLabel::Theft: {
                s.a = {a0_ + jit, y0_};
                const double meet = a0_ + contact;
                if (t < t_contact_) {
                    s.b = {b0_ + (meet - b0_) * t / std::max(1, t_contact_), y0_};
                } else if (t < t_grab_) {
                    s.b = {meet + 0.6 * std::sin(1.3 * t), y0_};
                } else {
                    s.b = {meet + speed_ * (t - t_grab_), y0_};
                }
                if (t < t_grab_) {
                    s.a_prop = Prop::Bag;
                } else {
                    s.b_prop = Prop::Bag;
                }
                break;
            }
            case ActionLabel::Assault: {
                const double meet = a0_ + contact;
                if (t < t_contact_) {
                    s.a = {a0_ + jit, y0_};
                    s.b = {b0_ + (meet - b0_) * t / std::max(1, t_contact_), y0_};
                } else {
                    const double phase = std::sin(2.0 * std::numbers::pi * (t - t_contact_) / period_);
                    s.b = {meet + amp_ * phase, y0_};
                    s.a = {a0_ + 0.5 * amp_ * phase, y0_};
                }
                s.b_prop = Prop::Stick;
                break;
            }
            case ActionLabel::Shooting: {
                s.a = {a0_ + 0.2 * jit, y0_};
                s.a_prop = Prop::Gun;
                const int t_fall = t_flash_ + 2;
                const double bx = b0_ + speed_ * std::min(t, t_fall);
                if (t < t_fall) {
                    s.b = {bx, y0_};
                } else {
                    const double k = std::min(1.0, (t - t_fall) / 5.0);
                    s.b = {bx + 0.04 * w_ * k, y0_ + 0.12 * h_ * k, k >= 1.0};
                }
                s.flash = (t == t_flash_ || t == t_flash_ + 1);
                break;
            }
            case ActionLabel::NoAction:
                s.a = walk_a_[static_cast<std::size_t>(t)];
                s.b = walk_b_[static_cast<std::size_t>(t)];
                break;
        }
        return s;
    }

    // Facing direction of actor a toward b (+1 right, -1 left), used to place props.
    static double facing(const ActorPose& from, const ActorPose& to) { return to.x >= from.x ? 1.0 : -1.0; }

private:
    int w_, h_, n_;
    ActionLabel label_;
    double y0_ = 0, a0_ = 0, b0_ = 0, speed_ = 0, period_ = 10, amp_ = 0, jitter_phase_ = 0;
    int t_contact_ = 0, t_grab_ = 0, t_flash_ = 0;
    std::vector<ActorPose> walk_a_, walk_b_;
};

void draw_actor(Canvas& c, const ActorPose& p, Rgb color, double w, double h) {
    const double rx = 0.05 * w;
    const double ry = 0.12 * h;
    if (p.lying) {
        c.fill_ellipse(p.x, p.y, ry, rx, color);
        c.fill_ellipse(p.x + ry + 0.03 * w, p.y, 0.035 * w, 0.035 * w, {color.r * 1.2, color.g * 1.1, color.b});
    } else {
        c.fill_ellipse(p.x, p.y, rx, ry, color);
        c.fill_ellipse(p.x, p.y - ry - 0.03 * h, 0.035 * w, 0.035 * w, {color.r * 1.2, color.g * 1.1, color.b});
    }
}

void draw_prop(Canvas& c, Prop prop, const ActorPose& holder, double dir, double w, double h) {
    const double hand_x = holder.x + dir * 0.07 * w;
    const double hand_y = holder.y - 0.02 * h;
    switch (prop) {
        case Prop::None:
            break;
        case Prop::Bag:
            c.fill_ellipse(hand_x, hand_y + 0.04 * h, 0.045 * w, 0.045 * w, kBag);
            break;
        case Prop::Stick:
            c.fill_rect(hand_x + dir * 0.04 * w, hand_y - 0.03 * h, 0.015 * w, 0.08 * h, kStick);
            break;
        case Prop::Gun:
            c.fill_rect(hand_x + dir * 0.02 * w, hand_y, 0.045 * w, 0.015 * h, kGun);
            break;
    }
}

}  // namespace

double mean_luminance(const Frame& frame) {
    double acc = 0.0;
    const std::size_t n = static_cast<std::size_t>(frame.width) * frame.height;
    for (std::size_t i = 0; i < n; ++i) {
        const std::uint8_t* p = frame.pixels.data() + 3 * i;
        acc += 0.299 * p[0] + 0.587 * p[1] + 0.114 * p[2];
    }
    return n ? acc / static_cast<double>(n) : 0.0;
}

Clip render_clip(const SynthParams& params, ActionLabel label, int group, int clip_idx) {
    if (params.width < 32 || params.height < 32) throw InvalidArgument("synthetic clips must be at least 32x32");
    if (params.fps <= 0) throw InvalidArgument("fps must be positive");
    const Scene scene(params, group);
    std::mt19937_64 rng(mix(mix(params.seed, static_cast<std::uint64_t>(label_index(label)) + 1),
                            (static_cast<std::uint64_t>(group) << 20) | static_cast<std::uint64_t>(clip_idx)));
    // 3 to 4 seconds.
    std::uniform_int_distribution<int> length(3 * params.fps, 4 * params.fps);
    const int n = length(rng);
    const bool mirror = std::uniform_int_distribution<int>(0, 1)(rng) == 1;
    const Program program(params, label, rng, n, scene.ground);

    const double w = params.width;
    const double h = params.height;
    Clip clip;
    clip.fps = params.fps;
    clip.label = label;
    clip.group_id = group;
    clip.clip_id = clip_idx;
    clip.frames.reserve(static_cast<std::size_t>(n));
    for (int t = 0; t < n; ++t) {
        FrameState s = program.at(t);
        if (mirror) {
            s.a.x = w - s.a.x;
            s.b.x = w - s.b.x;
        }
        Canvas canvas = scene.background;
        draw_actor(canvas, s.a, scene.actor_a, w, h);
        draw_actor(canvas, s.b, scene.actor_b, w, h);
        draw_prop(canvas, s.a_prop, s.a, Program::facing(s.a, s.b), w, h);
        draw_prop(canvas, s.b_prop, s.b, Program::facing(s.b, s.a), w, h);
        if (s.flash) {
            const double dir = Program::facing(s.a, s.b);
            canvas.add_glow(s.a.x + dir * 0.16 * w, s.a.y - 0.02 * h, 0.09 * w, kFlash);
        }
        clip.frames.push_back(canvas.to_frame(static_cast<std::uint32_t>(t), params.fps, rng, params.noise_sigma));
    }
    return clip;
}

DatasetSummary generate_synthetic_dataset(const SynthParams& params, const std::filesystem::path& out_dir) {
    namespace fs = std::filesystem;
    if (params.width < 32 || params.height < 32) throw InvalidArgument("synthetic clips must be at least 32x32");
    if (params.width > 0xFFFF || params.height > 0xFFFF) throw InvalidArgument("dimensions exceed 65535");
    if (params.groups_per_action < 1 || params.clips_per_group < 1 || params.groups_per_action > 255) {
        throw InvalidArgument("groups_per_action must be in [1,255] and clips_per_group >= 1");
    }
    std::error_code ec;
    fs::create_directories(out_dir, ec);
    if (ec) throw Error("cannot create dataset directory " + out_dir.string() + ": " + ec.message());
    for (ActionLabel label : kAllLabels) {
        fs::create_directories(out_dir / std::string(label_slug(label)), ec);
        if (ec) throw Error("cannot create " + (out_dir / std::string(label_slug(label))).string());
    }

    struct Job {
        ActionLabel label;
        int group, clip;
    };
    std::vector<Job> jobs;
    for (ActionLabel label : kAllLabels)
        for (int g = 0; g < params.groups_per_action; ++g)
            for (int c = 0; c < params.clips_per_group; ++c) jobs.push_back({label, g, c});

    std::vector<std::size_t> frame_counts(jobs.size(), 0);
    std::vector<std::string> failures(jobs.size());
#pragma omp parallel for schedule(dynamic)
    for (std::ptrdiff_t i = 0; i < static_cast<std::ptrdiff_t>(jobs.size()); ++i) {
        const Job& j = jobs[static_cast<std::size_t>(i)];
        try {
            Clip clip = render_clip(params, j.label, j.group, j.clip);
            frame_counts[static_cast<std::size_t>(i)] = clip.size();
            const fs::path path = out_dir / std::string(label_slug(j.label)) /
                                  ("g" + std::to_string(j.group) + "_c" + std::to_string(j.clip) + ".lclip");
            save_clip(clip, path);
        } catch (const std::exception& e) {
            failures[static_cast<std::size_t>(i)] = e.what();
        }
    }
    for (const std::string& f : failures)
        if (!f.empty()) throw Error(f);

    DatasetSummary summary;
    summary.clips = jobs.size();
    for (std::size_t c : frame_counts) summary.frames += c;

    nlohmann::json meta = {
        {"format", "lclip"},
        {"seed", params.seed},
        {"actions", nlohmann::json::array()},
        {"groups_per_action", params.groups_per_action},
        {"clips_per_group", params.clips_per_group},
        {"width", params.width},
        {"height", params.height},
        {"fps", params.fps},
        {"noise_sigma", params.noise_sigma},
        {"clips", summary.clips},
        {"frames", summary.frames},
    };
    for (ActionLabel label : kAllLabels) meta["actions"].push_back(std::string(label_slug(label)));
    std::ofstream out(out_dir / "dataset.json");
    if (!out) throw Error("cannot write dataset.json in " + out_dir.string());
    out << meta.dump(2) << '\n';
    return summary;
}

}  // namespace lens
