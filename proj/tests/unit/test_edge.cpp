#include <doctest.h>

#include <fstream>
#include <set>
#include <thread>

#include "bundle_fixture.hpp"
#include "fixtures.hpp"
#include "lens/edge.hpp"
#include "lens/error.hpp"
#include "lens/synth.hpp"

using namespace lens;

namespace {

ClassScores peaked(ActionLabel label, double conf) {
    ClassScores s;
    for (int k = 0; k < kNumClasses; ++k)
        s.probs[static_cast<std::size_t>(k)] = k == label_index(label) ? conf : (1.0 - conf) / 3.0;
    return s;
}

Clip small_clip(ActionLabel label, int clip_id, int frames = 12) {
    SynthParams p;
    p.seed = 7;
    Clip c = render_clip(p, label, 0, clip_id);
    c.frames.resize(static_cast<std::size_t>(frames));
    return c;
}

double max_diff(const ClassScores& a, const ClassScores& b) {
    double d = 0.0;
    for (std::size_t k = 0; k < a.probs.size(); ++k) d = std::max(d, std::abs(a.probs[k] - b.probs[k]));
    return d;
}

CrimeEvent sample_event() {
    CrimeEvent e;
    e.event_id = make_uuid();
    e.camera_id = "cam-7";
    e.gps = {42.34, -71.09};
    e.timestamp_ms = 1700000000000;
    e.label = ActionLabel::Shooting;
    e.confidence = 0.8;
    e.scores.spatial = peaked(ActionLabel::Shooting, 0.6);
    e.scores.temporal = peaked(ActionLabel::Assault, 0.5);
    e.scores.fused = peaked(ActionLabel::Shooting, 0.8);
    e.clip_ref = "00112233445566aa";
    return e;
}

}  // namespace

TEST_CASE("detect fires on agreeing confident windows") {
    DetectionState s{3, 5000, {}, std::nullopt};
    CHECK_FALSE(detect(s, peaked(ActionLabel::Theft, 0.8), 0.6, 0));
    CHECK_FALSE(detect(s, peaked(ActionLabel::Theft, 0.8), 0.6, 33));
    const auto d = detect(s, peaked(ActionLabel::Theft, 0.8), 0.6, 66);
    REQUIRE(d);
    CHECK(d->label == ActionLabel::Theft);
    CHECK(d->confidence == doctest::Approx(0.8));
    CHECK(s.recent.empty());
}

TEST_CASE("detect rejects mixed labels, NoAction and low confidence") {
    DetectionState s{3, 5000, {}, std::nullopt};
    CHECK_FALSE(detect(s, peaked(ActionLabel::Theft, 0.8), 0.6, 0));
    CHECK_FALSE(detect(s, peaked(ActionLabel::Assault, 0.8), 0.6, 1));
    CHECK_FALSE(detect(s, peaked(ActionLabel::Theft, 0.8), 0.6, 2));

    DetectionState n{3, 0, {}, std::nullopt};
    for (int i = 0; i < 10; ++i) CHECK_FALSE(detect(n, peaked(ActionLabel::NoAction, 0.99), 0.1, i));

    DetectionState low{2, 0, {}, std::nullopt};
    CHECK_FALSE(detect(low, peaked(ActionLabel::Shooting, 0.7), 0.75, 0));
    CHECK_FALSE(detect(low, peaked(ActionLabel::Shooting, 0.9), 0.75, 1));
    CHECK(detect(low, peaked(ActionLabel::Shooting, 0.9), 0.75, 2));
}

TEST_CASE("detect honours the cooldown") {
    DetectionState s{1, 5000, {}, std::nullopt};
    CHECK(detect(s, peaked(ActionLabel::Theft, 0.8), 0.6, 1000));
    CHECK_FALSE(detect(s, peaked(ActionLabel::Theft, 0.8), 0.6, 1001));
    CHECK_FALSE(detect(s, peaked(ActionLabel::Theft, 0.8), 0.6, 5999));
    CHECK(detect(s, peaked(ActionLabel::Theft, 0.8), 0.6, 6000));
}

TEST_CASE("raising the threshold never adds detections") {
    std::mt19937_64 rng(3);
    std::uniform_real_distribution<double> u(0.0, 1.0);
    std::vector<ClassScores> stream;
    for (int i = 0; i < 400; ++i) {
        const auto label = label_from_index(static_cast<int>(i / 40) % kNumClasses);
        stream.push_back(peaked(label, 0.4 + 0.6 * u(rng)));
    }
    int previous = std::numeric_limits<int>::max();
    for (int step = 0; step <= 20; ++step) {
        DetectionState s{3, 200, {}, std::nullopt};
        int fired = 0;
        for (std::size_t i = 0; i < stream.size(); ++i)
            if (detect(s, stream[i], step * 0.05, static_cast<std::int64_t>(i) * 33)) ++fired;
        CHECK(fired <= previous);
        previous = fired;
    }
}

TEST_CASE("event JSON round trip and validation") {
    const CrimeEvent e = sample_event();
    const auto j = event_to_json(e);
    CHECK_FALSE(validate_event_json(j));
    const CrimeEvent back = event_from_json(j);
    CHECK(back.event_id == e.event_id);
    CHECK(back.gps.lat == e.gps.lat);
    CHECK(back.label == e.label);
    CHECK(max_diff(back.scores.fused, e.scores.fused) == 0.0);

    auto missing = j;
    missing["gps"].erase("lat");
    REQUIRE(validate_event_json(missing));
    CHECK(validate_event_json(missing)->field == "gps.lat");
    auto noaction = j;
    noaction["label"] = "NoAction";
    CHECK(validate_event_json(noaction)->field == "label");
    auto lon = j;
    lon["gps"]["lon"] = 181.0;
    CHECK(validate_event_json(lon)->field == "gps.lon");
    auto conf = j;
    conf["confidence"] = 1.5;
    CHECK(validate_event_json(conf)->field == "confidence");
    auto scores = j;
    scores["scores"]["fused"] = {0.5, 0.5};
    CHECK(validate_event_json(scores)->field == "scores.fused");
    auto id = j;
    id["event_id"] = "not-a-uuid";
    CHECK(validate_event_json(id)->field == "event_id");
    CHECK_THROWS_AS(event_from_json(missing), InvalidArgument);
}

TEST_CASE("UUIDs are well formed and distinct") {
    std::set<std::string> ids;
    for (int i = 0; i < 1000; ++i) {
        const auto id = make_uuid();
        CHECK(is_uuid(id));
        CHECK(id[14] == '4');
        ids.insert(id);
    }
    CHECK(ids.size() == 1000);
    CHECK_FALSE(is_uuid("1234"));
}

TEST_CASE("assemble_event extracts the 4 s window ending at the detection") {
    RingBuffer ring(150, 30);
    for (std::uint32_t i = 0; i <= 150; ++i) ring.push(Frame(8, 8, i, frame_timestamp_ms(i, 30)));
    EdgeConfig cfg;
    cfg.gps = {42.34, -71.09};
    cfg.camera_id = "north-gate";
    FrameResult fr;
    fr.frame_index = 150;
    fr.scores.fused = peaked(ActionLabel::Assault, 0.9);
    const Detection d{ActionLabel::Assault, 0.9};
    const auto a = assemble_event(d, fr, ring, cfg);
    REQUIRE(a.clip.frames.size() == 120);
    CHECK(a.clip.frames.front().index == 31);
    CHECK(a.clip.frames.back().index == 150);
    CHECK_FALSE(a.event.short_clip);
    CHECK(a.event.gps.lat == 42.34);
    CHECK(a.event.gps.lon == -71.09);
    CHECK(a.event.camera_id == "north-gate");
    CHECK(a.event.label == ActionLabel::Assault);
    CHECK(max_diff(a.event.scores.fused, fr.scores.fused) == 0.0);
    const auto b = assemble_event(d, fr, ring, cfg);
    CHECK(a.event.event_id != b.event.event_id);

    RingBuffer young(150, 30);
    for (std::uint32_t i = 0; i < 40; ++i) young.push(Frame(8, 8, i, 0));
    fr.frame_index = 39;
    const auto s = assemble_event(d, fr, young, cfg);
    CHECK(s.clip.frames.size() == 40);
    CHECK(s.event.short_clip);
}

TEST_CASE("edge config from TOML") {
    test::TempDir dir("edgecfg");
    {
        std::ofstream f(dir / "edge.toml");
        f << "camera_id = \"cam-9\"\ngps = [42.34, -71.09]\nmode = \"cloud\"\nskip = 1\nthreshold = 1.01\n"
             "debounce_window = 4\n[relay]\nurl = \"http://127.0.0.1:9000\"\ntoken = \"t\"\ninfer_port = 9001\n";
    }
    const auto c = load_edge_config(dir / "edge.toml");
    CHECK(c.camera_id == "cam-9");
    CHECK(c.gps.lon == -71.09);
    CHECK(c.mode == InferenceMode::Cloud);
    CHECK(c.skip.skip == 1);
    CHECK(c.threshold == 1.0);
    CHECK(c.debounce_window == 4);
    CHECK(c.relay_url == "http://127.0.0.1:9000");
    CHECK(c.infer_port == 9001);
    CHECK(c.model_dir == dir / "models");

    {
        std::ofstream f(dir / "bad.toml");
        f << "debounce_window = 0\n";
    }
    CHECK_THROWS_AS(load_edge_config(dir / "bad.toml"), InvalidArgument);
    {
        std::ofstream f(dir / "broken.toml");
        f << "camera_id = \n";
    }
    CHECK_THROWS_AS(load_edge_config(dir / "broken.toml"), InvalidArgument);
}

TEST_CASE("retry backoff doubles up to the cap") {
    RetryPolicy p;
    CHECK(p.delay_for(1).count() == 1000);
    CHECK(p.delay_for(2).count() == 2000);
    CHECK(p.delay_for(3).count() == 4000);
    CHECK(p.delay_for(6).count() == 32000);
    CHECK(p.delay_for(7).count() == 60000);
    CHECK(p.delay_for(50).count() == 60000);
}

TEST_CASE("bounded queue policies") {
    BoundedQueue<int> q(3, Overflow::DropOldest);
    for (int i = 0; i < 5; ++i) q.push(i);
    CHECK(q.dropped() == 2);
    CHECK(*q.pop() == 2);
    q.close();
    CHECK(*q.pop() == 3);
    CHECK(*q.pop() == 4);
    CHECK_FALSE(q.pop());
    CHECK_FALSE(q.push(9));

    BoundedQueue<int> b(1, Overflow::Block);
    b.push(1);
    std::thread consumer([&] {
        std::this_thread::sleep_for(std::chrono::milliseconds(20));
        b.pop();
    });
    b.push(2);
    consumer.join();
    CHECK(b.dropped() == 0);
    CHECK(*b.pop() == 2);
}

TEST_CASE("recent flow stack pads with zero flow") {
    std::deque<FlowField> flows;
    flows.push_back(test::constant_flow(4, 4, 1.0f, 2.0f));
    const auto s = recent_stack(flows, 3, 4, 4);
    REQUIRE(s.channel_count() == 6);
    CHECK(s.channels[0][0] == 0.0f);
    CHECK(s.channels[4][0] == 1.0f);
    CHECK(s.channels[5][0] == 2.0f);
    for (int i = 0; i < 5; ++i) flows.push_back(test::constant_flow(4, 4, static_cast<float>(i + 2), 0.0f));
    const auto t = recent_stack(flows, 3, 4, 4);
    CHECK(t.channels[0][0] == 4.0f);
    CHECK(t.channels[4][0] == 6.0f);
}

TEST_CASE("score message encoding") {
    ScoreSet s;
    s.spatial = peaked(ActionLabel::Theft, 0.7);
    s.temporal = peaked(ActionLabel::Assault, 0.6);
    s.fused = peaked(ActionLabel::Shooting, 0.9);
    const auto bytes = encode_score_message(41, s);
    REQUIRE(bytes.size() == kScoreMessageBytes);
    const auto m = decode_score_message(bytes);
    CHECK(m.frame_index == 41);
    CHECK(max_diff(m.scores().fused, s.fused) < 1e-7);
    CHECK(max_diff(m.scores().temporal, s.temporal) < 1e-7);

    const auto header = encode_stream_header("cam");
    CHECK(std::string(header.begin(), header.begin() + 4) == "LENS");
    CHECK(header[4] == 1);
    CHECK(header[5] == 3);
    CHECK(header.size() == 9);
    Frame f(4, 2, 7, 0);
    const auto msg = encode_frame_message(f, 1234);
    CHECK(msg.size() == 17 + 24);
    CHECK(msg[0] == 7);
    CHECK(msg[16] == 0);
}

TEST_CASE("model bundle round trip") {
    test::TempDir dir("bundle");
    const auto b = test::tiny_bundle(5);
    save_bundle(*b, dir.path());
    const auto back = load_bundle(dir.path());
    CHECK(back.stack_length() == 4);
    CHECK(back.flow_side == 32);
    CHECK(back.tvl1.iters == 15);
    const Clip c = small_clip(ActionLabel::Theft, 0, 6);
    const auto a = batch_scores(c, *b);
    const auto r = batch_scores(c, back);
    for (std::size_t i = 0; i < a.size(); ++i) CHECK(max_diff(a[i].scores.fused, r[i].scores.fused) < 1e-4);
    std::filesystem::remove(dir / "fusion.lsvm");
    CHECK_THROWS(load_bundle(dir.path()));
}

TEST_CASE("streaming pipeline equals offline batch scores") {
    const auto bundle = test::tiny_bundle(11);
    for (int skip : {0, 1}) {
        for (int clip_id = 0; clip_id < 3; ++clip_id) {
            const Clip clip = small_clip(label_from_index(clip_id), clip_id, 16);
            EdgeConfig cfg;
            cfg.skip = SkipPolicy{skip};
            ClipSource source(clip);
            const auto live = run_pipeline(source, bundle, cfg);
            const auto batch = batch_scores(clip, *bundle, cfg.skip);
            REQUIRE(live.results.size() == batch.size());
            CHECK(live.frames_dropped == 0);
            CHECK(live.frames_ingested == clip.size());
            double worst = 0.0;
            for (std::size_t i = 0; i < batch.size(); ++i) {
                CHECK(live.results[i].frame_index == batch[i].frame_index);
                worst = std::max({worst, max_diff(live.results[i].scores.fused, batch[i].scores.fused),
                                  max_diff(live.results[i].scores.spatial, batch[i].scores.spatial),
                                  max_diff(live.results[i].scores.temporal, batch[i].scores.temporal)});
            }
            CHECK(worst < 1e-5);
        }
    }
}

TEST_CASE("every emitted event respects the threshold") {
    const auto bundle = test::tiny_bundle(2);
    const Clip clip = small_clip(ActionLabel::Shooting, 1, 30);
    const auto batch = batch_scores(clip, *bundle);
    double lowest = 1.0, highest = 0.0;
    for (const auto& r : batch) {
        lowest = std::min(lowest, r.scores.fused.max_prob());
        highest = std::max(highest, r.scores.fused.max_prob());
    }
    for (double threshold : {0.0, 0.5, 1.0}) {
        EdgeConfig cfg;
        cfg.threshold = threshold;
        cfg.debounce_window = 1;
        cfg.cooldown_ms = 0;
        ClipSource source(clip);
        std::vector<AssembledEvent> sunk;
        const auto rep = run_pipeline(source, bundle, cfg, [&](const AssembledEvent& e) { sunk.push_back(e); });
        CHECK(sunk.size() == rep.events.size());
        for (const auto& e : rep.events) {
            CHECK(e.confidence >= threshold);
            CHECK(e.label != ActionLabel::NoAction);
        }
        if (threshold == 1.0 && highest < 1.0) CHECK(rep.events.empty());
    }
    MESSAGE("fused confidence range " << lowest << " .. " << highest);
}

TEST_CASE("live sources drop the oldest frames under load") {
    const auto bundle = test::tiny_bundle(4);
    const Clip clip = small_clip(ActionLabel::Theft, 0, 60);
    PacedSource source(clip, 50.0);
    EdgeConfig cfg;
    cfg.queue_capacity = 2;
    const auto rep = run_pipeline(source, bundle, cfg);
    CHECK(rep.frames_ingested == 60);
    CHECK(rep.frames_dropped > 0);
    CHECK(rep.results.size() + rep.frames_dropped == 60);
    for (std::size_t i = 1; i < rep.results.size(); ++i)
        CHECK(rep.results[i].frame_index > rep.results[i - 1].frame_index);
}
