#include <doctest.h>

#include <cmath>
#include <filesystem>
#include <fstream>
#include <random>
#include <sstream>

#include "remap/common/errors.hpp"
#include "remap/diff/checkpoint.hpp"
#include "remap/harness/experiment.hpp"
#include "remap/harness/render.hpp"

using namespace remap;
using namespace remap::harness;
namespace fs = std::filesystem;

namespace {

LearningCurve ramp(std::initializer_list<std::pair<long, double>> pts) {
    LearningCurve c;
    for (auto [s, v] : pts) c.push_back({s, v});
    return c;
}

// Midpoint rule on a fine grid over the piecewise-linear curve.
double midpoint_auc(const LearningCurve& c, int per_segment = 200) {
    double a = 0.0;
    for (std::size_t i = 1; i < c.size(); ++i) {
        const double h = static_cast<double>(c[i].step - c[i - 1].step) / per_segment;
        for (int k = 0; k < per_segment; ++k) {
            const double f = (k + 0.5) / per_segment;
            a += h * (c[i - 1].value + f * (c[i].value - c[i - 1].value));
        }
    }
    return a;
}

LearningCurve random_curve(std::mt19937_64& rng, int n, long cadence = 500) {
    std::uniform_real_distribution<double> u(0.0, 1.0);
    LearningCurve c;
    for (int i = 0; i < n; ++i) c.push_back({i * cadence, u(rng)});
    return c;
}

// Scan every point: the largest difference and the first step reaching it.
double scan_tgain(const LearningCurve& sw, const LearningCurve& sc) {
    double best = -1e300;
    long at = 0;
    for (std::size_t i = 0; i < sw.size(); ++i) {
        if (sw[i].step == 0) continue;
        const double d = sw[i].value - sc[i].value;
        if (d > best) {
            best = d;
            at = sw[i].step;
        }
    }
    return best == 0.0 ? 0.0 : best / static_cast<double>(at);
}

std::string slurp(const fs::path& p) {
    std::ifstream in(p, std::ios::binary);
    std::stringstream s;
    s << in.rdbuf();
    return s.str();
}

fs::path scratch_dir(const std::string& name) {
    auto d = fs::temp_directory_path() / ("remap_harness_" + name);
    fs::remove_all(d);
    return d;
}

ExperimentConfig tiny_config(const fs::path& out) {
    ExperimentConfig c = desk_defaults();
    c.name = "tiny";
    c.desk.train_per_class = 12;
    c.desk.validation_per_class = 4;
    c.desk.pretrain_epochs = 0;
    c.desk.pretrain_per_class = 4;
    c.desk.encoder.scene_width = 32;
    c.architectures = {"ems", "late-relu-small"};
    c.tasks = {{{env::Variant::Sr2Way, {0, 1}}, 300, 200},
               {{env::Variant::Mts2WayStationary, {0, 1}}, 300, 0}};
    c.seeds = {1, 2};
    c.policy.candidates = 64;
    c.validation_every = 100;
    c.validation_steps = 20;
    c.window = 200;
    c.base_steps = 120;
    c.switch_steps = 120;
    c.map_frames = 1;
    c.output_dir = out.string();
    return c;
}

engine::RewardMapSample map_of(std::vector<double> logits, int height, int width) {
    engine::RewardMapSample s;
    s.k_f = 1;
    for (int y = 0; y < height; ++y)
        for (int x = 0; x < width; ++x) s.candidates.push_back({x, y});
    s.logits = std::move(logits);
    return s;
}

}  // namespace

TEST_CASE("auc: rectangle, triangle and a midpoint-rule oracle") {
    CHECK(auc(ramp({{0, 0.5}, {100, 0.5}})) == doctest::Approx(50.0));
    CHECK(auc(ramp({{0, 0.0}, {100, 1.0}})) == doctest::Approx(50.0));
    std::mt19937_64 rng(3);
    for (int i = 0; i < 50; ++i) {
        const auto c = random_curve(rng, 40);
        CHECK(std::abs(auc(c) - midpoint_auc(c)) <= 0.01 * midpoint_auc(c));
    }
    CHECK_THROWS_AS(auc({}), InputError);
    CHECK_THROWS_AS(auc(ramp({{0, 1.0}})), InputError);
    CHECK_THROWS_AS(auc(ramp({{0, 1.0}, {0, 1.0}})), InputError);
}

TEST_CASE("truncate interpolates at the horizon") {
    const auto c = ramp({{0, 0.0}, {100, 1.0}, {200, 1.0}});
    const auto t = truncate(c, 50);
    REQUIRE(t.size() == 2);
    CHECK(t.back().step == 50);
    CHECK(t.back().value == doctest::Approx(0.5));
    CHECK(truncate(c, 100).size() == 2);
    CHECK(truncate(c, 1000) == c);
}

TEST_CASE("ta_n_auc normalizes per task and averages") {
    auto s = ta_n_auc({{"a", {{"t", 2.0}}}, {"b", {{"t", 1.0}}}});
    CHECK(s["a"] == 1.0);
    CHECK(s["b"] == 0.5);

    std::mt19937_64 rng(5);
    std::uniform_real_distribution<double> u(0.1, 10.0);
    std::map<std::string, std::map<std::string, double>> aucs;
    for (const char* m : {"m0", "m1", "m2"})
        for (const char* t : {"t0", "t1", "t2", "t3"}) aucs[m][t] = u(rng);
    for (const char* t : {"t0", "t1", "t2", "t3"}) aucs["best"][t] = 20.0;
    const auto base = ta_n_auc(aucs);
    CHECK(base.at("best") == 1.0);
    for (const auto& [m, v] : base) {
        CHECK(v > 0.0);
        CHECK(v <= 1.0);
    }
    auto scaled = aucs;
    for (const char* t : {"t0", "t1", "t2", "t3"}) {
        const double k = u(rng);
        for (auto& [m, per] : scaled) per[t] *= k;
    }
    const auto rescaled = ta_n_auc(scaled);
    for (const auto& [m, v] : base) CHECK(rescaled.at(m) == doctest::Approx(v).epsilon(1e-12));

    aucs["m0"].erase("t1");
    CHECK_THROWS_AS(ta_n_auc(aucs), InputError);
}

TEST_CASE("rgain: formula, identity and sign") {
    const auto scratch = ramp({{0, 0.01}, {100, 0.01}});
    const auto sw = ramp({{0, 0.015}, {100, 0.015}});
    CHECK(rgain(sw, scratch) == doctest::Approx(0.5));
    CHECK(rgain(scratch, scratch) == 0.0);
    CHECK(rgain(ramp({{0, 0.0}, {100, 0.005}}), scratch) < 0.0);
    CHECK_THROWS_AS(rgain(scratch, ramp({{0, 0.0}, {100, 0.0}})), InputError);
    CHECK_THROWS_AS(rgain(scratch, ramp({{0, 0.1}, {50, 0.1}})), InputError);
}

TEST_CASE("tgain: direct value, identity and an exhaustive-scan oracle") {
    const auto sc = ramp({{1, 0.5}, {2, 0.5}, {3, 0.5}});
    const auto sw = ramp({{1, 0.5}, {2, 0.7}, {3, 0.6}});
    CHECK(tgain(sw, sc) == doctest::Approx(0.1));
    CHECK(tgain(sc, sc) == 0.0);
    std::mt19937_64 rng(7);
    for (int i = 0; i < 500; ++i) {
        const auto a = random_curve(rng, 12, 100);
        auto b = random_curve(rng, 12, 100);
        if (i % 5 == 0) {  // tie
            b[3].value = a[3].value - 0.5;
            b[7].value = a[7].value - 0.5;
        }
        CHECK(tgain(a, b) == scan_tgain(a, b));
    }
}

TEST_CASE("gains are unchanged by a round trip through the curve files") {
    std::mt19937_64 rng(11);
    const auto dir = scratch_dir("curves");
    fs::create_directories(dir);
    for (int i = 0; i < 20; ++i) {
        const auto a = random_curve(rng, 30), b = random_curve(rng, 30);
        engine::write_curve_csv(dir / "a.csv", a);
        engine::write_curve_csv(dir / "b.csv", b);
        const auto ra = engine::read_curve_csv(dir / "a.csv"), rb = engine::read_curve_csv(dir / "b.csv");
        CHECK(rgain(ra, rb) == rgain(a, b));
        CHECK(tgain(ra, rb) == tgain(a, b));
    }
    fs::remove_all(dir);
}

TEST_CASE("reward maps: constant, one-hot, nearest fill and determinism") {
    const auto dir = scratch_dir("maps");
    fs::create_directories(dir);

    const auto flat = rasterize_reward_map(map_of(std::vector<double>(16 * 16, 0.3), 16, 16), 0, 16, 16);
    for (std::size_t i = 3; i < flat.pixels.size(); ++i) CHECK(flat.pixels[i] == flat.pixels[i % 3]);

    std::vector<double> hot(16 * 16, -40.0);
    hot[5 * 16 + 9] = 40.0;
    const auto one = rasterize_reward_map(map_of(hot, 16, 16), 0, 16, 16);
    int red = 0;
    for (int y = 0; y < 16; ++y)
        for (int x = 0; x < 16; ++x)
            if (one.at(y, x)[0] > 0.5f) {
                ++red;
                CHECK(x == 9);
                CHECK(y == 5);
            }
    CHECK(red == 1);

    // Two candidates: every pixel takes the closer one's colour.
    engine::RewardMapSample two;
    two.k_f = 1;
    two.candidates = {{2, 2}, {13, 13}};
    two.logits = {40.0, -40.0};
    const auto img = rasterize_reward_map(two, 0, 16, 16);
    for (int y = 0; y < 16; ++y)
        for (int x = 0; x < 16; ++x) {
            const long d0 = (x - 2) * (x - 2) + (y - 2) * (y - 2), d1 = (x - 13) * (x - 13) + (y - 13) * (y - 13);
            CHECK((img.at(y, x)[0] > 0.5f) == (d0 <= d1));
        }

    auto s = map_of(hot, 16, 16);
    render_reward_map(s, 16, 16, dir / "a.ppm");
    render_reward_map(s, 16, 16, dir / "b.ppm");
    const auto bytes = slurp(dir / "a.ppm");
    CHECK(bytes == slurp(dir / "b.ppm"));
    CHECK(bytes.rfind("P6\n16 16\n255\n", 0) == 0);
    CHECK(bytes.size() == 13 + 16 * 16 * 3);

    CHECK(reward_colour(1.0) == std::array<std::uint8_t, 3>{255, 0, 0});
    CHECK(reward_colour(0.0) == std::array<std::uint8_t, 3>{0, 0, 255});
    CHECK_THROWS_AS(rasterize_reward_map(engine::RewardMapSample{}, 0, 4, 4), InputError);
    CHECK_THROWS_AS(rasterize_reward_map(s, 1, 4, 4), InputError);
    CHECK_THROWS_WITH_AS(render_reward_map(s, 16, 16, dir / "missing" / "x.ppm"),
                         doctest::Contains("missing"), IoError);
    fs::remove_all(dir);
}

TEST_CASE("learning-rate table and overrides") {
    using V = env::Variant;
    CHECK(LearningRates::table("ems", V::Sr2Way) == 1e-3);
    CHECK(LearningRates::table("ems", V::Mts2WayStationary) == 5e-4);
    CHECK(LearningRates::table("ems", V::Localization) == 1e-4);
    CHECK(LearningRates::table("no-symm", V::Mts4Way4ShownPermuted) == 2e-4);
    CHECK(LearningRates::table("no-mult-symm-tanh", V::Mts2WayVertMotion) == 1e-4);
    CHECK(LearningRates::table("no-mult-symm-tanh", V::Mts2WayHorizFlip) == 1e-3);
    CHECK(LearningRates::table("no-mult-symm-elu", V::Sr4WayQuadrant) == 1e-4);
    CHECK(LearningRates::table("late-relu-small", V::Mts4Way4ShownStationary) == 1e-3);
    CHECK(LearningRates::table("late-relu-medium", V::Sr4WayQuadrant) == 1e-3);
    CHECK(LearningRates::table("late-relu-medium", V::Mts2WayStationary) == 1e-4);
    CHECK(LearningRates::table("late-sigmoid-small", V::Mts4Way4ShownPermuted) == 1e-3);
    CHECK(LearningRates::table("late-sigmoid-small", V::Mts4Way4ShownStationary) == 1e-4);
    CHECK(LearningRates::table("late-elu-large", V::Sr4WayQuadrant) == 1e-3);
    CHECK(LearningRates::table("late-crelu-small", V::Mts2WayHorizFlip) == 1e-4);
    CHECK(LearningRates::table("late-crelu-small", V::Mts2WayVertMotion) == 1e-3);
    CHECK(LearningRates::table("no-symm", V::SceneMts) == LearningRates::table("no-symm", V::Mts4Way4ShownPermuted));

    const auto desk = LearningRates::desk_defaults();
    CHECK(desk.lookup("ems", V::Mts2WayStationary) == 1e-3);
    CHECK(desk.lookup("ems", V::Sr2Way) == 1e-3);
    CHECK(desk.lookup("ems", V::Localization) == 1e-4);
    CHECK(desk.lookup("partial-symm", V::Mts2WayStationary) == 5e-4);
    CHECK_THROWS_AS(desk.lookup("resnet", V::Sr2Way), ConfigError);
}

TEST_CASE("experiment config: JSON round trip, identity and validation") {
    auto c = tiny_config("/tmp/somewhere");
    c.vote_modes = {voting::VoteMode::Unit};
    c.voting.transforms = false;
    c.switch_ids = {1, 13};
    const nlohmann::json j = c;
    const auto back = j.get<ExperimentConfig>();
    CHECK(nlohmann::json(back) == j);
    CHECK(back.hash() == c.hash());

    auto moved = c;
    moved.output_dir = "/elsewhere";
    moved.jobs = 4;
    CHECK(moved.hash() == c.hash());
    auto reseeded = c;
    reseeded.seeds = {9};
    CHECK(reseeded.hash() != c.hash());
    CHECK(c.identity().dump().find("/tmp/somewhere") == std::string::npos);

    auto bad = c;
    bad.architectures = {"nope"};
    CHECK_THROWS_AS(bad.resolve(), ConfigError);
    bad = c;
    bad.tasks[0].horizon = 10000;
    CHECK_THROWS_AS(bad.resolve(), ConfigError);
    bad = c;
    bad.switch_ids = {16};
    CHECK_THROWS(bad.resolve());

    const auto d = desk_defaults();
    CHECK(d.policy.batch == 8);
    CHECK(d.policy.family == engine::DistFamily::Boltzmann);
    CHECK(d.init_sigma == 0.03);
    CHECK(d.seeds.size() == 3);
    CHECK(d.tasks.size() == 4);
}

TEST_CASE("schedule files supply suite tasks") {
    const auto dir = scratch_dir("schedule");
    fs::create_directories(dir);
    env::ScheduleConfig sc;
    sc.seed = 4;
    sc.entries = {{{env::Variant::Sr2Way, {2, 3}}, 700}};
    diff::write_json(dir / "schedule.json", sc);
    auto c = tiny_config(dir / "out");
    c.schedule_path = "schedule.json";
    diff::write_json(dir / "exp.json", c);
    auto loaded = load_experiment(dir / "exp.json");
    loaded.resolve();
    REQUIRE(loaded.tasks.size() == 1);
    CHECK(loaded.tasks[0].task.classes == std::vector<int>{2, 3});
    CHECK(loaded.tasks[0].steps == 700);
    CHECK(loaded.desk.bank_seed == 4);
    fs::remove_all(dir);
}

TEST_CASE("suite: 2 architectures x 2 tasks x 2 seeds, rerun and resume are byte-identical") {
    const auto a = scratch_dir("suite_a"), b = scratch_dir("suite_b");
    auto ca = tiny_config(a);
    const auto ra = run_suite(ca);
    REQUIRE(ra.cells.size() == 8);
    for (const auto& cell : ra.cells) CHECK_MESSAGE(cell.ok, cell.error);
    int curves = 0;
    for (const auto& e : fs::recursive_directory_iterator(a / "cells"))
        if (e.path().filename() == "curve.csv") ++curves;
    CHECK(curves == 8);
    CHECK(fs::exists(a / "tables" / "ta_n_auc.csv"));
    CHECK(fs::exists(a / "tables" / "auc.csv"));
    CHECK(ra.error.empty());
    REQUIRE(ra.ta_n_auc.count("mean") == 1);
    for (const auto& [scope, per] : ra.ta_n_auc) {
        double best = 0.0;
        for (const auto& [m, v] : per) {
            CHECK(v > 0.0);
            CHECK(v <= 1.0);
            best = std::max(best, v);
        }
    }
    const auto cell = a / "cells" / "ems" / "sr-2way_0_1" / "seed-1";
    CHECK(fs::exists(cell / "steps.jsonl"));
    CHECK(fs::exists(cell / "module.json"));
    CHECK(fs::exists(cell / "maps" / "map-0.ppm"));
    CHECK(fs::exists(cell / "config.json"));

    auto cb = tiny_config(b);
    cb.jobs = 2;
    run_suite(cb);
    CHECK(slurp(a / "summary.json") == slurp(b / "summary.json"));
    CHECK(slurp(a / "tables" / "ta_n_auc.csv") == slurp(b / "tables" / "ta_n_auc.csv"));

    const auto before = fs::last_write_time(cell / "curve.csv");
    run_suite(ca);
    CHECK(fs::last_write_time(cell / "curve.csv") == before);
    CHECK(slurp(a / "summary.json") == slurp(b / "summary.json"));

    const auto rep = report(a);
    CHECK(rep.at("ta_n_auc") == nlohmann::json(ra.ta_n_auc));
    fs::remove_all(a);
    fs::remove_all(b);
}

TEST_CASE("suite records a failing cell and carries on") {
    const auto dir = scratch_dir("suite_fail");
    auto c = tiny_config(dir);
    c.architectures = {"ems"};
    c.seeds = {1};
    c.tasks = {{{env::Variant::Sr2Way, {0, 1}}, 200, 0}, {{env::Variant::Sr2Way, {0, 1, 2}}, 200, 0}};
    const auto r = run_suite(c);
    REQUIRE(r.cells.size() == 2);
    CHECK(r.cells[0].ok);
    CHECK_FALSE(r.cells[1].ok);
    CHECK_FALSE(r.cells[1].error.empty());
    const auto summary = diff::read_json(dir / "summary.json");
    CHECK(summary.at("cells").size() == 2);
    fs::remove_all(dir);
}

TEST_CASE("switch suite over all fifteen pairs emits a record per pair and vote mode") {
    const auto dir = scratch_dir("switch");
    auto c = tiny_config(dir);
    c.architectures = {"ems"};
    c.seeds = {1};
    c.step_logs = false;
    c.map_frames = 0;
    const auto r = run_switch_suite(c);
    REQUIRE(r.records.size() == 30);
    std::map<voting::VoteMode, int> per_mode;
    for (const auto& rec : r.records) {
        CHECK_MESSAGE(rec.ok, rec.error);
        per_mode[rec.mode]++;
        CHECK(rec.switched.size() == rec.scratch.size());
        CHECK(rec.switched.front().step == rec.scratch.front().step);
        CHECK(rec.switched.back().step == rec.scratch.back().step);
        CHECK(rec.rgain == rgain(rec.switched, rec.scratch));
        CHECK(rec.reuse.size() == 3);
        double total = 0.0;
        for (double v : rec.reuse) total += v;
        CHECK(total == doctest::Approx(1.0));
    }
    CHECK(per_mode[voting::VoteMode::Layer] == 15);
    CHECK(per_mode[voting::VoteMode::Unit] == 15);
    const auto rec = diff::read_json(dir / "switch" / "pair-13" / "unit" / "seed-1" / "record.json");
    CHECK(rec.at("frozen_intact").get<bool>());
    CHECK(fs::exists(dir / "tables" / "switch.csv"));
    const auto rep = report(dir);
    CHECK(rep.at("records").size() == 30);
    CHECK(rep.at("records")[0].at("rgain").get<double>() == r.records[0].rgain);
    fs::remove_all(dir);
}
