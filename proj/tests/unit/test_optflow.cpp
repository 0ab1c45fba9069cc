#include <doctest.h>

#include <omp.h>

#include <chrono>
#include <cmath>

#include "fixtures.hpp"
#include "lens/optflow.hpp"

using namespace lens;

namespace {

double max_magnitude(const FlowField& f) {
    double m = 0;
    for (std::size_t i = 0; i < f.size(); ++i) m = std::max<double>(m, std::hypot(f.u[i], f.v[i]));
    return m;
}

double hue_degrees(const std::uint8_t* px) {
    const double r = px[0] / 255.0, g = px[1] / 255.0, b = px[2] / 255.0;
    const double mx = std::max({r, g, b}), mn = std::min({r, g, b});
    if (mx == mn) return 0;
    double h;
    if (mx == r) {
        h = std::fmod((g - b) / (mx - mn), 6.0);
    } else if (mx == g) {
        h = (b - r) / (mx - mn) + 2;
    } else {
        h = (r - g) / (mx - mn) + 4;
    }
    h *= 60;
    return h < 0 ? h + 360 : h;
}

}  // namespace

TEST_CASE("identical frames give zero flow") {
    for (std::uint64_t seed : {1u, 2u, 3u}) {
        Frame a = test::textured_frame(64, 64, seed);
        CHECK(max_magnitude(tvl1_flow(a, a)) < 1e-3);
    }
    // Flat image: no gradient anywhere.
    Frame flat(48, 48);
    CHECK(max_magnitude(tvl1_flow(flat, flat)) < 1e-3);
}

TEST_CASE("integer wraparound shifts are recovered") {
    Frame a = test::textured_frame(64, 64, 11);
    SUBCASE("(+2, 0)") {
        auto f = tvl1_flow(a, shift_wrap(a, 2, 0));
        CHECK(endpoint_error(f, test::constant_flow(64, 64, 2, 0)) < 0.5);
    }
    SUBCASE("(0, -3)") {
        auto f = tvl1_flow(a, shift_wrap(a, 0, -3));
        CHECK(endpoint_error(f, test::constant_flow(64, 64, 0, -3)) < 0.5);
    }
}

TEST_CASE("flip symmetry on synthetic translations") {
    Frame a = test::textured_frame(64, 64, 5);
    for (auto [dx, dy] : std::vector<std::pair<int, int>>{{2, 1}, {-3, 0}, {1, -2}}) {
        Frame b = shift_wrap(a, dx, dy);
        auto fwd = tvl1_flow(a, b);
        auto bwd = tvl1_flow(b, a);
        double diff = 0;
        for (std::size_t i = 0; i < fwd.size(); ++i) diff += std::hypot(fwd.u[i] + bwd.u[i], fwd.v[i] + bwd.v[i]);
        CHECK(diff / static_cast<double>(fwd.size()) < 0.5);
    }
}

TEST_CASE("energy does not increase across warps at the finest level") {
    Frame a = test::textured_frame(64, 64, 3);
    for (int dx = -4; dx <= 4; dx += 2) {
        for (int dy = -4; dy <= 4; dy += 4) {
            Tvl1Diagnostics d;
            tvl1_flow(a, shift_wrap(a, dx, dy), {}, &d);
            REQUIRE(d.finest_energies.size() == 6);
            for (std::size_t k = 1; k < d.finest_energies.size(); ++k) {
                INFO("shift " << dx << "," << dy << " warp " << k);
                // Median filtering between warps allows rounding-level wiggle.
                CHECK(d.finest_energies[k] <= d.finest_energies[k - 1] * (1 + 1e-3));
            }
        }
    }
}

TEST_CASE("parallel solver matches the serial reference") {
    Frame a = test::textured_frame(64, 48, 8);
    Frame b = shift_wrap(a, 3, -1);
    const auto ga = to_gray(a), gb = to_gray(b);
    Tvl1Diagnostics dp, dr;
    const auto ref = reference::tvl1_flow(ga, gb, {}, &dr);
    for (int threads : {1, 2, 4}) {
        omp_set_num_threads(threads);
        const auto par = tvl1_flow(ga, gb, {}, &dp);
        CHECK(endpoint_error(par, ref) < 1e-5);
        CHECK(dp.finest_energies.size() == dr.finest_energies.size());
    }
    omp_set_num_threads(omp_get_num_procs());
}

TEST_CASE("parallel solver is deterministic across thread counts") {
    Frame a = test::textured_frame(64, 64, 9);
    Frame b = shift_wrap(a, -2, 2);
    omp_set_num_threads(1);
    const auto one = tvl1_flow(a, b);
    omp_set_num_threads(3);
    const auto three = tvl1_flow(a, b);
    omp_set_num_threads(omp_get_num_procs());
    CHECK(one.u == three.u);
    CHECK(one.v == three.v);
}

TEST_CASE("tvl1 argument checks") {
    Frame a(64, 64), b(32, 64);
    CHECK_THROWS_AS(tvl1_flow(a, b), InvalidArgument);
    Tvl1Params p;
    p.levels = 6;
    CHECK_THROWS_AS(tvl1_flow(Frame(32, 32), Frame(32, 32), p), InvalidArgument);
    p = {};
    p.tau = 0.3;
    CHECK_THROWS_AS(tvl1_flow(Frame(32, 32), Frame(32, 32), p), InvalidArgument);
    p = {};
    p.pyramid_scale = 1.0;
    CHECK_THROWS_AS(p.validate(), InvalidArgument);
    CHECK(Tvl1Params{}.resolved_levels(64, 64) == 2);
    CHECK(Tvl1Params{}.resolved_levels(640, 480) == 4);
    CHECK(Tvl1Params{}.resolved_levels(20, 20) == 1);
}

TEST_CASE("endpoint error examples") {
    auto truth = test::constant_flow(8, 8, 1.5f, -2.0f);
    CHECK(endpoint_error(truth, truth) == 0.0);
    auto off = test::constant_flow(8, 8, 4.5f, 2.0f);
    CHECK(endpoint_error(off, truth) == doctest::Approx(5.0));
    auto half = truth;
    for (std::size_t i = 0; i < half.size() / 2; ++i) {
        half.u[i] += 3;
        half.v[i] += 4;
    }
    CHECK(endpoint_error(half, truth) == doctest::Approx(2.5));
    CHECK_THROWS_AS(endpoint_error(FlowField(4, 4), FlowField(4, 5)), InvalidArgument);
}

TEST_CASE("colorize conventions") {
    SUBCASE("zero flow is white") {
        Frame img = flow_colorize(FlowField(6, 5));
        for (auto b : img.pixels) CHECK(b == 255);
    }
    SUBCASE("uniform flow at the normalization radius is saturated red") {
        Frame img = flow_colorize(test::constant_flow(6, 6, 3.0f, 0.0f));
        for (int i = 0; i < 36; ++i) {
            CHECK(img.pixels[3 * i] == 255);
            CHECK(img.pixels[3 * i + 1] == 0);
            CHECK(img.pixels[3 * i + 2] == 0);
        }
    }
    SUBCASE("opposite directions are 180 degrees apart") {
        const double up = hue_degrees(flow_colorize(test::constant_flow(4, 4, 0, 2)).pixels.data());
        const double down = hue_degrees(flow_colorize(test::constant_flow(4, 4, 0, -2)).pixels.data());
        CHECK(up == doctest::Approx(90).epsilon(0.01));
        CHECK(std::fmod(std::abs(up - down), 360.0) == doctest::Approx(180).epsilon(0.01));
    }
    SUBCASE("hue is invariant to uniform magnitude scaling") {
        Frame a = test::textured_frame(16, 16, 2);
        FlowField f = tvl1_flow(a, shift_wrap(a, 1, 1));
        FlowField g = f;
        for (auto& x : g.u) x *= 7.5f;
        for (auto& x : g.v) x *= 7.5f;
        CHECK(flow_colorize(f).pixels == flow_colorize(g).pixels);
    }
}

TEST_CASE("stack_flows layout") {
    SUBCASE("L=1") {
        auto f = test::constant_flow(3, 2, 1.0f, -1.0f);
        auto s = stack_flows(std::span(&f, 1));
        CHECK(s.channel_count() == 2);
        CHECK(s.channels[0] == f.u);
        CHECK(s.channels[1] == f.v);
    }
    SUBCASE("constant fields") {
        std::vector<FlowField> flows{test::constant_flow(3, 3, 1, 2), test::constant_flow(3, 3, 3, 4)};
        auto s = stack_flows(flows);
        REQUIRE(s.channel_count() == 4);
        for (int c = 0; c < 4; ++c)
            for (float x : s.channels[static_cast<std::size_t>(c)]) CHECK(x == static_cast<float>(c + 1));
    }
    SUBCASE("L=10 reads back plane by plane") {
        std::vector<FlowField> flows;
        for (int i = 0; i < kDefaultStackLength; ++i) flows.push_back(test::constant_flow(4, 4, i, -i));
        auto s = stack_flows(flows);
        REQUIRE(s.channel_count() == 20);
        for (int i = 0; i < 10; ++i) {
            CHECK(s.channels[static_cast<std::size_t>(2 * i)][5] == static_cast<float>(i));
            CHECK(s.channels[static_cast<std::size_t>(2 * i + 1)][5] == static_cast<float>(-i));
        }
        auto back = split_stack(s);
        REQUIRE(back.size() == flows.size());
        for (std::size_t i = 0; i < back.size(); ++i) {
            CHECK(back[i].u == flows[i].u);
            CHECK(back[i].v == flows[i].v);
        }
    }
    SUBCASE("errors") {
        CHECK_THROWS_AS(stack_flows(std::vector<FlowField>{}), InvalidArgument);
        CHECK_THROWS_AS(stack_flows(std::vector<FlowField>{FlowField(2, 2), FlowField(3, 2)}), InvalidArgument);
    }
}

TEST_CASE("flow quantization") {
    CHECK(quantize_flow_value(-20.0f) == 0.0f);
    CHECK(quantize_flow_value(-100.0f) == 0.0f);
    CHECK(quantize_flow_value(20.0f) == 255.0f);
    CHECK(quantize_flow_value(0.0f) == 128.0f);
}

TEST_CASE("lflo round trip and errors") {
    Frame a = test::textured_frame(32, 32, 4);
    FlowField f = tvl1_flow(a, shift_wrap(a, 1, 0));
    test::TempDir dir("lflo");
    save_flow(f, dir / "f.lflo");
    FlowField g = load_flow(dir / "f.lflo");
    CHECK(g.u == f.u);
    CHECK(g.v == f.v);
    auto bytes = encode_flow(f);
    CHECK(bytes.size() == 8 + 2 * 32 * 32 * 4);
    bytes[0] = 'X';
    CHECK_THROWS_AS(decode_flow(bytes), FormatError);
}

TEST_CASE("runtime stays within budget at 64x64") {
    Frame a = test::textured_frame(64, 64, 6);
    Frame b = shift_wrap(a, 3, 3);
    const auto t0 = std::chrono::steady_clock::now();
    tvl1_flow(a, b);
    const double s = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    CHECK(s < 5.0);
}
