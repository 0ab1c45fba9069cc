#include <doctest.h>

#include <fstream>

#include "fixtures.hpp"
#include "lens/app.hpp"
#include "lens/error.hpp"

using namespace lens;
using namespace lens::app;
using nlohmann::json;

namespace {

ClipPredictions perfect_predictions(int per_class) {
    ClipPredictions p;
    for (int k = 0; k < kNumClasses; ++k)
        for (int i = 0; i < per_class; ++i) {
            p.truths.push_back(k);
            p.spatial.push_back(k);
            p.temporal.push_back(k);
            p.fused.push_back(k);
        }
    return p;
}

// Spatial never recognizes class 2, temporal never class 3; fused gets everything.
ClipPredictions complementary_predictions() {
    ClipPredictions p;
    for (int k = 0; k < kNumClasses; ++k)
        for (int i = 0; i < 4; ++i) {
            p.truths.push_back(k);
            p.spatial.push_back(k == 2 ? 1 : k);
            p.temporal.push_back(k == 3 ? 2 : k);
            p.fused.push_back(k);
        }
    return p;
}

}  // namespace

TEST_CASE("train options validation and serialization") {
    TrainOptions o;
    CHECK_NOTHROW(o.validate());
    o.stack_length = 0;
    CHECK_THROWS_AS(o.validate(), InvalidArgument);
    o = TrainOptions{};
    o.folds = 1;
    CHECK_THROWS_AS(o.validate(), InvalidArgument);

    TrainOptions a;
    a.seed = 99;
    a.spatial_epochs = 3;
    a.tvl1.warps = 2;
    const TrainOptions b = TrainOptions::from_json(a.to_json());
    CHECK(b.to_json() == a.to_json());
}

TEST_CASE("train options TOML overrides only the keys present") {
    test::TempDir dir("train-toml");
    {
        std::ofstream(dir / "t.toml") << "spatial_epochs = 4\nstack_length = 3\n[tvl1]\niters = 9\n";
    }
    TrainOptions base;
    base.folds = 3;
    const TrainOptions o = load_train_options(dir / "t.toml", base);
    CHECK(o.spatial_epochs == 4);
    CHECK(o.stack_length == 3);
    CHECK(o.tvl1.iters == 9);
    CHECK(o.folds == 3);
    CHECK(o.temporal_epochs == base.temporal_epochs);
    {
        std::ofstream(dir / "bad.toml") << "flow_side = 2\n";
    }
    CHECK_THROWS_AS(load_train_options(dir / "bad.toml"), InvalidArgument);
}

TEST_CASE("eval report on a perfect predictor") {
    const json r = eval_report(perfect_predictions(3));
    CHECK(r["clips"] == 12);
    CHECK(r["accuracy"]["spatial"] == 1.0);
    CHECK(r["accuracy"]["fused"] == 1.0);
    CHECK(r["fused_exceeds_both_streams"] == false);
    for (int i = 0; i < kNumClasses; ++i)
        for (int j = 0; j < kNumClasses; ++j) CHECK(r["confusion"]["fused"][i][j] == (i == j ? 3 : 0));
    for (const auto& [name, v] : r["percent_change"]["spatial_to_fused"].items()) CHECK(v == 0.0);
}

TEST_CASE("eval report on complementary predictions") {
    const json r = eval_report(complementary_predictions());
    CHECK(r["accuracy"]["spatial"] == doctest::Approx(0.75));
    CHECK(r["accuracy"]["temporal"] == doctest::Approx(0.75));
    CHECK(r["accuracy"]["fused"] == 1.0);
    CHECK(r["fused_exceeds_both_streams"] == true);
    CHECK(r["percent_change"]["spatial_to_fused"]["Shooting"] == "inf");
    CHECK(r["percent_change"]["temporal_to_fused"]["NoAction"] == "inf");
    CHECK(r["percent_change"]["spatial_to_fused"]["Theft"] == 0.0);
}

TEST_CASE("eval report is deterministic and rejects malformed input") {
    CHECK(eval_report(complementary_predictions()).dump() == eval_report(complementary_predictions()).dump());
    ClipPredictions p = perfect_predictions(1);
    p.fused.pop_back();
    CHECK_THROWS_AS(eval_report(p), InvalidArgument);
    CHECK_THROWS_AS(eval_report(ClipPredictions{}), InvalidArgument);
}

TEST_CASE("train, fit and evaluate a tiny dataset") {
    test::TempDir dir("app-train");
    SynthParams sp;
    sp.seed = 3;
    sp.groups_per_action = 1;
    sp.clips_per_group = 2;
    sp.width = 32;
    sp.height = 32;
    generate_synthetic_dataset(sp, dir / "data");

    TrainOptions o;
    o.spatial_epochs = 2;
    o.temporal_epochs = 0;
    o.flow_side = 16;
    o.folds = 2;
    o.search_trials = 2;
    o.positions_per_clip = 3;
    const json ts = cmd_train_streams(dir / "data", dir / "models", o);
    CHECK(ts["clips"] == 8);
    CHECK(ts["spatial"]["epochs"] == 2);
    CHECK(ts["temporal"]["epochs"] == 0);
    CHECK(std::filesystem::exists(dir / "models" / "spatial.lmdl"));
    CHECK(std::filesystem::exists(dir / "models" / "temporal.lmdl"));

    const json svm = cmd_train_svm(dir / "data", dir / "models");
    CHECK(svm["folds"] == 2);
    CHECK(svm["samples"] == 8 * 3);
    CHECK(std::filesystem::exists(dir / "models" / "fusion.lsvm"));

    const ModelBundle bundle = load_bundle(dir / "models");
    CHECK(bundle.flow_side == 16);
    const json r = cmd_eval(dir / "data", dir / "models", 3);
    CHECK(r["clips"] == 8);
    CHECK(r["positions_per_clip"] == 3);
    CHECK(r.dump() == cmd_eval(dir / "data", dir / "models", 3).dump());
}

TEST_CASE("training refuses unusable datasets") {
    test::TempDir dir("app-empty");
    CHECK_THROWS_AS(load_dataset(dir.path()), Error);
}

TEST_CASE("synthetic bench costs") {
    BenchOptions o;
    CHECK(synthetic_cost_ms(o, InferenceMode::Edge, false) == 100.0);
    CHECK(synthetic_cost_ms(o, InferenceMode::Edge, true) == doctest::Approx(100.0 * (0.2 + 0.8 * 0.25)));
    CHECK(synthetic_cost_ms(o, InferenceMode::Cloud, false) == 50.0);
    o.window_s = 0.5;
    CHECK_THROWS_AS(o.validate(), InvalidArgument);
    o = BenchOptions{};
    o.cost = "fast";
    CHECK_THROWS_AS(o.validate(), InvalidArgument);
}

TEST_CASE("synthetic bench reproduces skip ratios") {
    for (int skip : {1, 3}) {
        BenchOptions o;
        o.window_s = 1.0;
        o.skip = skip;
        const auto rows = run_bench(o);
        REQUIRE(rows.size() == 8);
        CHECK(rows[0].name == "edge");
        CHECK(rows[1].name == "edge+skip");
        CHECK(rows[7].name == "cloud+skip+reduced");
        const double expected = skip + 1.0;
        MESSAGE("skip " << skip << ": edge x" << rows[1].ratio << ", cloud x" << rows[5].ratio);
        CHECK(rows[0].report.effective_fps == doctest::Approx(10.0).epsilon(0.05));
        CHECK(rows[1].ratio == doctest::Approx(expected).epsilon(0.05));
        CHECK(rows[5].ratio == doctest::Approx(expected).epsilon(0.05));
        CHECK(rows[2].ratio > 1.5);
        CHECK(bench_json(rows).size() == 8);
        CHECK(bench_table(rows).find("cloud+reduced") != std::string::npos);
    }
}

TEST_CASE("ppm encoding") {
    Frame f(2, 1);
    f.pixels = {1, 2, 3, 4, 5, 6};
    const auto bytes = encode_ppm(f);
    const std::string header = "P6\n2 1\n255\n";
    REQUIRE(bytes.size() == header.size() + 6);
    CHECK(std::string(bytes.begin(), bytes.begin() + static_cast<long>(header.size())) == header);
    CHECK(bytes.back() == 6);
}
