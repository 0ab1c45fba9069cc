#pragma once

// Shared test fixtures: textured frames with known motion, temp directories.

#include <cmath>
#include <filesystem>
#include <numbers>
#include <random>
#include <string>

#include "lens/optflow.hpp"
#include "lens/videoio.hpp"

namespace lens::test {

/// Periodic texture (integer frequencies) so wraparound shifts are exact translations.
inline Frame textured_frame(int w, int h, std::uint64_t seed) {
    std::mt19937_64 rng(seed);
    std::uniform_real_distribution<double> phase(0.0, 2 * std::numbers::pi);
    std::uniform_int_distribution<int> freq(1, 5);
    struct Wave {
        int fx, fy;
        double ph, amp;
    };
    std::vector<Wave> waves;
    for (int k = 0; k < 8; ++k) waves.push_back({freq(rng), freq(rng) - 3, phase(rng), 10.0 + 2.0 * (k % 4)});
    Frame f(w, h);
    for (int y = 0; y < h; ++y) {
        for (int x = 0; x < w; ++x) {
            double v = 128.0;
            for (const Wave& wv : waves)
                v += wv.amp * std::sin(2 * std::numbers::pi * (wv.fx * x / double(w) + wv.fy * y / double(h)) + wv.ph);
            const auto b = static_cast<std::uint8_t>(std::clamp(std::lround(v), 0L, 255L));
            std::uint8_t* p = f.pixel(x, y);
            p[0] = p[1] = p[2] = b;
        }
    }
    return f;
}

inline FlowField constant_flow(int w, int h, float u, float v) {
    FlowField f(w, h);
    std::fill(f.u.begin(), f.u.end(), u);
    std::fill(f.v.begin(), f.v.end(), v);
    return f;
}

class TempDir {
public:
    explicit TempDir(const std::string& tag) {
        std::random_device rd;
        path_ = std::filesystem::temp_directory_path() /
                ("lens-" + tag + "-" + std::to_string(rd()) + std::to_string(rd()));
        std::filesystem::create_directories(path_);
    }
    ~TempDir() {
        std::error_code ec;
        std::filesystem::remove_all(path_, ec);
    }
    TempDir(const TempDir&) = delete;
    TempDir& operator=(const TempDir&) = delete;

    const std::filesystem::path& path() const { return path_; }
    std::filesystem::path operator/(const std::string& s) const { return path_ / s; }

private:
    std::filesystem::path path_;
};

}  // namespace lens::test
