#include <doctest.h>

#include <atomic>
#include <set>
#include <thread>

#include "fixtures.hpp"
#include "lens/bytes.hpp"
#include "lens/synth.hpp"
#include "lens/videoio.hpp"

using namespace lens;

namespace {

Clip numbered_clip(int n, int w = 8, int h = 8) {
    Clip c;
    c.fps = 30;
    for (int i = 0; i < n; ++i) {
        Frame f(w, h, static_cast<std::uint32_t>(i), frame_timestamp_ms(static_cast<std::uint32_t>(i), 30));
        f.pixels[0] = static_cast<std::uint8_t>(i);
        c.frames.push_back(std::move(f));
    }
    return c;
}

std::vector<std::uint32_t> indices_of(const Clip& c) {
    std::vector<std::uint32_t> out;
    for (const auto& f : c.frames) out.push_back(f.index);
    return out;
}

}  // namespace

TEST_CASE("label encoding is stable") {
    CHECK(label_index(ActionLabel::Theft) == 0);
    CHECK(label_index(ActionLabel::Assault) == 1);
    CHECK(label_index(ActionLabel::Shooting) == 2);
    CHECK(label_index(ActionLabel::NoAction) == 3);
    CHECK(parse_label("Shooting") == ActionLabel::Shooting);
    CHECK(parse_label("no_action") == ActionLabel::NoAction);
    CHECK_THROWS_AS(parse_label("Robbery"), InvalidArgument);
}

TEST_CASE("frame timestamps round down") {
    CHECK(frame_timestamp_ms(0, 30) == 0);
    CHECK(frame_timestamp_ms(1, 30) == 33);
    CHECK(frame_timestamp_ms(2, 30) == 66);
    CHECK(frame_timestamp_ms(3, 30) == 100);
}

TEST_CASE("lclip round trip and size arithmetic") {
    SynthParams p;
    p.width = 64;
    p.height = 64;
    Clip clip = render_clip(p, ActionLabel::Theft, 0, 0);
    clip.frames.resize(90);
    auto bytes = encode_clip(clip);
    CHECK(bytes.size() == 24 + 90 * (8 + 64 * 64 * 3));

    test::TempDir dir("lclip");
    save_clip(clip, dir / "a.lclip");
    Clip back = load_clip(dir / "a.lclip");
    REQUIRE(back.size() == clip.size());
    CHECK(back.label == clip.label);
    CHECK(back.fps == 30);
    for (std::size_t i = 0; i < clip.size(); ++i) {
        CHECK(back.frames[i].pixels == clip.frames[i].pixels);
        CHECK(back.frames[i].index == clip.frames[i].index);
        CHECK(back.frames[i].timestamp_ms == clip.frames[i].timestamp_ms);
    }
}

TEST_CASE("lclip decoding errors carry byte offsets") {
    Clip clip = numbered_clip(3);
    auto bytes = encode_clip(clip);

    SUBCASE("bad magic") {
        auto bad = bytes;
        std::copy_n("XXXX", 4, bad.begin());
        try {
            decode_clip(bad);
            FAIL("expected FormatError");
        } catch (const FormatError& e) {
            CHECK(e.offset() == 0);
        }
    }
    SUBCASE("truncated payload points at the incomplete frame") {
        auto cut = bytes;
        cut.resize(bytes.size() - 10);
        try {
            decode_clip(cut);
            FAIL("expected FormatError");
        } catch (const FormatError& e) {
            CHECK(e.offset() == 24 + 2 * (8 + 8 * 8 * 3));
        }
    }
    SUBCASE("header shorter than 24 bytes") {
        std::vector<std::uint8_t> tiny(bytes.begin(), bytes.begin() + 10);
        CHECK_THROWS_AS(decode_clip(tiny), FormatError);
    }
    SUBCASE("trailing garbage") {
        auto extra = bytes;
        extra.push_back(1);
        try {
            decode_clip(extra);
            FAIL("expected FormatError");
        } catch (const FormatError& e) {
            CHECK(e.offset() == bytes.size());
        }
    }
    SUBCASE("mixed frame sizes refuse to encode") {
        Clip mixed = numbered_clip(2);
        mixed.frames[1] = Frame(4, 4, 1, 33);
        CHECK_THROWS_AS(encode_clip(mixed), InvalidArgument);
    }
}

TEST_CASE("skip_iter examples") {
    Clip c = numbered_clip(30);
    CHECK(skip_iter(c, {1}).size() == 15);
    CHECK(skip_iter(c, {0}).size() == 30);
    auto s3 = skip_iter(c, {3});
    REQUIRE(s3.size() == 8);
    for (std::size_t i = 0; i < s3.size(); ++i) CHECK(s3[i].index == 4 * i);
    auto s1 = skip_iter(c, {1});
    CHECK(s1.back().index == 28);
    CHECK(skip_iter(Clip{}, {2}).empty());
    CHECK_THROWS_AS(SkipPolicy::checked(5), InvalidArgument);
}

TEST_CASE("skip_iter coverage property") {
    for (std::size_t n = 0; n < 70; n += 7) {
        for (int skip = 0; skip <= kMaxSupportedSkip; ++skip) {
            auto kept = skip_indices(n, {skip});
            CHECK(kept.size() == (n + skip) / (skip + 1));
            std::set<std::size_t> all(kept.begin(), kept.end());
            CHECK(all.size() == kept.size());
            for (std::size_t i = 1; i < kept.size(); ++i) CHECK(kept[i] > kept[i - 1]);
            // Every dropped index sits strictly between two kept ones (or after the last).
            for (std::size_t i = 0; i < n; ++i) {
                if (all.count(i)) continue;
                CHECK(i % static_cast<std::size_t>(skip + 1) != 0);
            }
        }
    }
}

TEST_CASE("ring buffer examples") {
    RingBuffer ring(120, 30);
    SUBCASE("overfilled") {
        for (int i = 0; i < 200; ++i) ring.push(numbered_clip(200).frames[static_cast<std::size_t>(i)]);
        auto out = ring.extract_clip(4.0);
        CHECK_FALSE(out.short_clip);
        auto idx = indices_of(out.clip);
        REQUIRE(idx.size() == 120);
        CHECK(idx.front() == 80);
        CHECK(idx.back() == 199);
        // Extraction does not consume.
        CHECK(ring.size() == 120);
        CHECK(indices_of(ring.extract_clip(4.0).clip) == idx);
    }
    SUBCASE("empty") {
        auto out = ring.extract_clip(4.0);
        CHECK(out.clip.empty());
        CHECK(out.short_clip);
    }
    SUBCASE("underfilled") {
        Clip c = numbered_clip(60);
        for (auto& f : c.frames) ring.push(f);
        auto out = ring.extract_clip(3.0);
        CHECK(out.clip.size() == 60);
        CHECK(out.short_clip);
    }
    SUBCASE("longer than capacity is rejected") { CHECK_THROWS_AS(ring.extract_clip(5.0), InvalidArgument); }
}

TEST_CASE("ring buffer keeps exactly the last capacity frames") {
    for (std::size_t cap : {1u, 5u, 16u}) {
        for (int pushes : {0, 3, 16, 17, 40}) {
            RingBuffer ring(cap, 30);
            Clip c = numbered_clip(pushes);
            for (auto& f : c.frames) ring.push(f);
            auto got = indices_of(ring.extract_until(1u << 30, cap).clip);
            const std::size_t expect = std::min<std::size_t>(cap, static_cast<std::size_t>(pushes));
            REQUIRE(got.size() == expect);
            for (std::size_t i = 0; i < got.size(); ++i) CHECK(got[i] == pushes - expect + i);
        }
    }
}

TEST_CASE("ring buffer extract_until ends at the requested frame") {
    RingBuffer ring(150, 30);
    Clip c = numbered_clip(160);
    for (auto& f : c.frames) ring.push(f);
    auto out = ring.extract_until(150, 120);
    auto idx = indices_of(out.clip);
    REQUIRE(idx.size() == 120);
    CHECK(idx.front() == 31);
    CHECK(idx.back() == 150);
    CHECK_FALSE(out.short_clip);
}

TEST_CASE("ring buffer snapshot reads alongside a writer") {
    RingBuffer ring(30, 30);
    std::atomic<bool> done{false};
    std::thread writer([&] {
        Clip c = numbered_clip(2000, 4, 4);
        for (auto& f : c.frames) ring.push(f);
        done = true;
    });
    while (!done) {
        auto idx = indices_of(ring.extract_clip(1.0).clip);
        for (std::size_t i = 1; i < idx.size(); ++i) REQUIRE(idx[i] == idx[i - 1] + 1);
    }
    writer.join();
}

TEST_CASE("measure_throughput identities") {
    SUBCASE("zero-cost work gives exact ratio") {
        ClipSource src(numbered_clip(30, 4, 4), true);
        auto r = measure_throughput(src, [](const Frame&) {}, {3}, 1.0);
        CHECK(r.frames_processed > 0);
        CHECK(r.effective_fps / r.processing_fps == doctest::Approx(4.0).epsilon(1e-12));
    }
    SUBCASE("short window rejected") {
        ClipSource src(numbered_clip(3, 4, 4));
        CHECK_THROWS_AS(measure_throughput(src, [](const Frame&) {}, {0}, 0.5), InvalidArgument);
    }
    SUBCASE("exhausted source ends the window early") {
        ClipSource src(numbered_clip(9, 4, 4));
        auto r = measure_throughput(src, [](const Frame&) {}, {1}, 5.0);
        CHECK(r.frames_processed == 5);
        CHECK(r.frames_covered == 9);
        CHECK(r.wall_ms < 1000);
    }
}

TEST_CASE("synthetic dataset layout and determinism") {
    test::TempDir a("synth-a"), b("synth-b");
    SynthParams p;
    p.seed = 7;
    p.groups_per_action = 2;
    p.clips_per_group = 3;
    p.width = 32;
    p.height = 32;
    auto summary = generate_synthetic_dataset(p, a.path());
    generate_synthetic_dataset(p, b.path());
    CHECK(summary.clips == 24);
    auto entries = list_dataset(a.path());
    REQUIRE(entries.size() == 24);
    std::array<int, kNumClasses> per_class{};
    for (const auto& e : entries) {
        ++per_class[static_cast<std::size_t>(label_index(e.label))];
        Clip c = load_clip(e.path);
        CHECK(c.size() >= 90);
        CHECK(c.size() <= 120);
        CHECK(c.fps == 30);
        CHECK(c.label == e.label);
        CHECK(read_file(e.path.string()) == read_file((b.path() / e.path.lexically_relative(a.path())).string()));
    }
    for (int n : per_class) CHECK(n == 6);
    // Majority-class predictor on balanced data.
    CHECK(static_cast<double>(*std::max_element(per_class.begin(), per_class.end())) / entries.size() ==
          doctest::Approx(0.25).epsilon(0.02));
    CHECK(std::filesystem::exists(a.path() / "dataset.json"));
}

TEST_CASE("synthetic clips are low-light and class programs differ") {
    SynthParams p;
    for (ActionLabel label : kAllLabels) {
        Clip c = render_clip(p, label, 1, 2);
        double mean = 0;
        for (const auto& f : c.frames) mean += mean_luminance(f);
        mean /= static_cast<double>(c.size());
        INFO(label_name(label));
        CHECK(mean <= 25.0);
        CHECK(c.duration_s() >= 3.0);
        CHECK(c.duration_s() <= 4.0);
    }
    // The muzzle flash is brighter than anything in a no-action clip.
    auto peak = [](const Clip& c) {
        double m = 0;
        for (const auto& f : c.frames) m = std::max(m, mean_luminance(f));
        return m;
    };
    CHECK(peak(render_clip(p, ActionLabel::Shooting, 0, 0)) > peak(render_clip(p, ActionLabel::NoAction, 0, 0)) + 2);
}

TEST_CASE("synthetic dataset rejects bad inputs") {
    test::TempDir d("synth-bad");
    SynthParams p;
    p.width = 16;
    CHECK_THROWS_AS(generate_synthetic_dataset(p, d.path()), InvalidArgument);
    SynthParams ok;
    ok.groups_per_action = 1;
    ok.clips_per_group = 1;
    CHECK_THROWS_AS(generate_synthetic_dataset(ok, "/proc/lens-not-writable/x"), Error);
}

TEST_CASE("full-scale layout arithmetic") {
    SynthParams p;
    p.groups_per_action = 20;
    p.clips_per_group = 45;
    CHECK(kNumClasses * p.groups_per_action * p.clips_per_group == 3600);
}
