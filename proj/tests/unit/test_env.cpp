#include <doctest.h>

#include <filesystem>
#include <map>
#include <random>

#include "remap/common/errors.hpp"
#include "remap/env/schedule.hpp"

using namespace remap;
using namespace remap::env;

namespace {

std::shared_ptr<InstanceBank> small_bank(std::uint64_t seed = 3) {
    return std::make_shared<InstanceBank>(RenderConfig{}, seed, 20, 5);
}

// Independent IoU by counting pixels on a grid.
double brute_iou(const BoundingBox& a, const BoundingBox& b, int extent) {
    long inter = 0, uni = 0;
    for (int y = 0; y < extent; ++y)
        for (int x = 0; x < extent; ++x) {
            const bool ia = a.contains(x, y), ib = b.contains(x, y);
            inter += ia && ib;
            uni += ia || ib;
        }
    return uni ? static_cast<double>(inter) / static_cast<double>(uni) : 0.0;
}

}  // namespace

TEST_CASE("rendering is deterministic and class dependent") {
    const RenderConfig cfg;
    const Pose pose{0.5, 0.5, 0.3, 0.4, 1.0};
    const auto a = render_class_instance(cfg, 2, pose, 17);
    const auto b = render_class_instance(cfg, 2, pose, 17);
    CHECK(a.pixels.pixels == b.pixels.pixels);
    const auto c = render_class_instance(cfg, 3, pose, 17);
    CHECK(a.pixels.pixels != c.pixels.pixels);
    CHECK_THROWS_AS(render_class_instance(cfg, 8, pose, 17), InputError);
    CHECK_THROWS_AS(render_class_instance(cfg, -1, pose, 17), InputError);
}

TEST_CASE("masks are non-empty and boxes are the tight box of the mask") {
    const RenderConfig cfg;
    std::mt19937_64 rng(99);
    for (int i = 0; i < 1000; ++i) {
        const int cls = static_cast<int>(rng() % 8);
        const auto img = render_class_instance(cfg, cls, sample_pose(rng), rng());
        REQUIRE(img.instances.size() == 1);
        const auto& inst = img.instances[0];
        CHECK(inst.mask_area() > 0);
        int x0 = cfg.width, y0 = cfg.height, x1 = 0, y1 = 0;
        for (int y = 0; y < cfg.height; ++y)
            for (int x = 0; x < cfg.width; ++x)
                if (inst.mask[static_cast<std::size_t>(y) * cfg.width + x]) {
                    x0 = std::min(x0, x);
                    y0 = std::min(y0, y);
                    x1 = std::max(x1, x + 1);
                    y1 = std::max(y1, y + 1);
                }
        CHECK(inst.box == BoundingBox{x0, y0, x1, y1});
    }
}

TEST_CASE("iou oracle cases and brute-force agreement") {
    CHECK(iou({0, 0, 10, 10}, {5, 0, 15, 10}) == doctest::Approx(1.0 / 3.0).epsilon(1e-15));
    CHECK(iou({0, 0, 10, 10}, {0, 0, 10, 10}) == 1.0);
    CHECK(iou({0, 0, 10, 10}, {10, 0, 20, 10}) == 0.0);
    std::mt19937_64 rng(5);
    std::uniform_int_distribution<int> c(0, 40);
    for (int i = 0; i < 1000; ++i) {
        auto box = [&] {
            int x0 = c(rng), x1 = c(rng), y0 = c(rng), y1 = c(rng);
            if (x0 > x1) std::swap(x0, x1);
            if (y0 > y1) std::swap(y0, y1);
            return BoundingBox{x0, y0, x1 + 1, y1 + 1};
        };
        const auto a = box(), b = box();
        CHECK(std::abs(iou(a, b) - brute_iou(a, b, 42)) < 1e-12);
        CHECK(iou(a, b) == iou(b, a));
    }
}

TEST_CASE("binary SR: left half for the first class, right half for the second") {
    SrTask task({Variant::Sr2Way, {0, 1}}, small_bank(), Split::Train, 1);
    CHECK(task.reward_for(0, {5, 32}) == 1.0);
    CHECK(task.reward_for(0, {40, 32}) == 0.0);
    CHECK(task.reward_for(1, {40, 32}) == 1.0);
    CHECK(task.reward_for(1, {31, 32}) == 0.0);
    CHECK(task.reward_for(1, {32, 32}) == 1.0);  // x = W/2 belongs to the right half
}

TEST_CASE("quadrant SR boundaries are left/top inclusive") {
    SrTask task({Variant::Sr4WayQuadrant, {0, 1, 2, 3}}, small_bank(), Split::Train, 1);
    CHECK(task.reward_for(0, {31, 31}) == 1.0);
    CHECK(task.reward_for(1, {32, 31}) == 1.0);
    CHECK(task.reward_for(2, {31, 32}) == 1.0);
    CHECK(task.reward_for(3, {32, 32}) == 1.0);
    CHECK(task.reward_for(0, {32, 32}) == 0.0);
    CHECK(task.reward_for(3, {0, 0}) == 0.0);
}

TEST_CASE("double-binary SR assigns even roles left and odd roles right") {
    SrTask task({Variant::Sr4WayDoubleBinary, {4, 5, 6, 7}}, small_bank(), Split::Train, 1);
    CHECK(task.reward_for(4, {0, 63}) == 1.0);
    CHECK(task.reward_for(6, {10, 0}) == 1.0);
    CHECK(task.reward_for(5, {63, 10}) == 1.0);
    CHECK(task.reward_for(7, {10, 10}) == 0.0);
}

TEST_CASE("reward transforms: reversal, squeeze and quarter rotation") {
    auto bank = small_bank();
    SrTask rev({Variant::Sr2Way, {0, 1}, RewardTransform::ClassReversal}, bank, Split::Train, 1);
    CHECK(rev.reward_for(0, {50, 10}) == 1.0);
    CHECK(rev.reward_for(0, {5, 10}) == 0.0);

    SrTask sq({Variant::Sr2Way, {0, 1}, RewardTransform::Squeeze}, bank, Split::Train, 1);
    CHECK(sq.reward_for(0, {5, 10}) == 1.0);
    CHECK(sq.reward_for(0, {5, 40}) == 0.0);

    SrTask rot({Variant::Sr2Way, {0, 1}, RewardTransform::Rotate90}, bank, Split::Train, 1);
    CHECK(rot.reward_for(0, {10, 50}) == 1.0);  // old left is now bottom
    CHECK(rot.reward_for(0, {10, 5}) == 0.0);
    CHECK(rot.reward_for(1, {50, 5}) == 1.0);   // old right is now top

    CHECK_THROWS_AS(MtsTask({Variant::Mts2WayStationary, {0, 1}, RewardTransform::Squeeze}, bank,
                            Split::Train, 1),
                    ConfigError);
    CHECK_THROWS_AS(SrTask({Variant::Sr4WayQuadrant, {0, 1}}, bank, Split::Train, 1), ConfigError);
}

TEST_CASE("SR steps are scored and emit fresh frames of the task's classes") {
    SrTask task({Variant::Sr2Way, {2, 3}}, small_bank(), Split::Train, 4);
    for (int i = 0; i < 50; ++i) {
        const int cls = task.current_class();
        CHECK((cls == 2 || cls == 3));
        CHECK(task.frame()->class_id == cls);
        const auto out = task.step({cls == 2 ? 3 : 60, 20});
        CHECK(out.scored);
        CHECK(out.reward == 1.0);
    }
    CHECK_THROWS_AS(task.step({64, 0}), InputError);
}

TEST_CASE("match-screen layout scales the reference constants") {
    const auto big = MtsLayout::for_screen(224);
    CHECK(big.template_size == 100);
    CHECK(big.edge_buffer == 6);
    CHECK(big.adjacent_buffer == 12);
    const auto desk = MtsLayout::for_screen(64);
    CHECK(desk.template_size == 28);
    CHECK(desk.edge_buffer == 2);
    CHECK(desk.adjacent_buffer == 3);
    CHECK(desk.column_x(1) + desk.template_size + desk.edge_buffer <= 64);
}

TEST_CASE("stationary 2-way MTS: sample screen unscored, correct button rewarded") {
    MtsTask task({Variant::Mts2WayStationary, {0, 1}}, small_bank(), Split::Train, 8);
    const auto& L = task.layout();
    for (int trial = 0; trial < 40; ++trial) {
        CHECK_FALSE(task.on_match_screen());
        const auto first = task.step({0, 0});
        CHECK_FALSE(first.scored);
        CHECK(first.reward == 0.0);
        REQUIRE(task.on_match_screen());
        const int sample = task.sample_class();
        const int col = sample == 0 ? 0 : 1;
        const ActionPoint inside{L.column_x(col) + 3, L.centred_y() + 3};
        if (trial % 2 == 0) {
            const auto out = task.step(inside);
            CHECK(out.scored);
            CHECK(out.reward == 1.0);
        } else {
            // the gap between the two buttons
            const auto out = task.step({L.column_x(0) + L.template_size + 1, L.centred_y() + 3});
            CHECK(out.reward == 0.0);
        }
    }
}

TEST_CASE("match screens keep the correct button disjoint from the others") {
    for (int v = 4; v <= 11; ++v) {
        const auto variant = static_cast<Variant>(v);
        const std::vector<int> classes =
            variant_way(variant) == 2 ? std::vector<int>{0, 1} : std::vector<int>{0, 1, 2, 3};
        MtsTask task({variant, classes}, small_bank(), Split::Train, 10 + v);
        for (int trial = 0; trial < 100; ++trial) {
            task.step({1, 1});
            const auto& buttons = task.buttons();
            int correct = 0;
            for (std::size_t i = 0; i < buttons.size(); ++i) {
                const auto& b = buttons[i];
                CHECK(b.box.x0 >= 0);
                CHECK(b.box.x1 <= 64);
                CHECK(b.box.y1 <= 64);
                correct += b.class_id == task.sample_class();
                for (std::size_t k = i + 1; k < buttons.size(); ++k) CHECK(iou(b.box, buttons[k].box) == 0.0);
            }
            CHECK(correct == 1);
            task.step({1, 1});
        }
    }
}

TEST_CASE("permuted 4-shown MTS places every template uniformly over slots") {
    MtsTask task({Variant::Mts4Way4ShownPermuted, {0, 1, 2, 3}}, small_bank(), Split::Train, 21);
    std::map<std::pair<int, int>, int> counts;
    const int trials = 1000;
    for (int t = 0; t < trials; ++t) {
        task.step({0, 0});
        for (const auto& b : task.buttons()) {
            const int slot = (b.box.x0 > 32 ? 1 : 0) + (b.box.y0 > 32 ? 2 : 0);
            ++counts[{b.class_id, slot}];
        }
        task.step({0, 0});
    }
    for (int c = 0; c < 4; ++c)
        for (int s = 0; s < 4; ++s) {
            const double f = counts[{c, s}] / static_cast<double>(trials);
            CHECK(f == doctest::Approx(0.25).epsilon(0.12));  // ±0.03
        }
}

TEST_CASE("localization rewards IoU of the two-corner box in either order") {
    LocTask task({Variant::Localization, {0}}, small_bank(), Split::Train, 5);
    for (int i = 0; i < 20; ++i) {
        const auto gt = task.frame()->instances.front().box;
        const bool flip = i % 2;
        const ActionPoint a = flip ? ActionPoint{gt.x1 - 1, gt.y0} : ActionPoint{gt.x0, gt.y0};
        const ActionPoint b = flip ? ActionPoint{gt.x0, gt.y1 - 1} : ActionPoint{gt.x1 - 1, gt.y1 - 1};
        const auto first = task.step(a);
        CHECK(first.reward == 0.0);
        CHECK_FALSE(first.scored);
        const auto second = task.step(b);
        CHECK(second.scored);
        CHECK(second.reward == 1.0);
    }
    CHECK(LocTask::box_from_corners({9, 9}, {0, 0}) == BoundingBox{0, 0, 10, 10});
}

TEST_CASE("scene MTS: rewarded inside a correct-class instance only") {
    SceneMtsTask task({Variant::SceneMts, {0, 1, 2, 3}}, small_bank(), Split::Train, 6);
    int checked = 0;
    for (int trial = 0; trial < 30; ++trial) {
        const int sample = task.sample_class();
        CHECK(task.frame()->class_id == sample);
        task.step({0, 0});
        const auto scene = task.frame();
        CHECK(scene->instances.size() >= 3);
        CHECK(scene->instances.size() <= 6);
        // find a correct pixel, a wrong-class pixel and a background pixel
        std::vector<int> owner(64 * 64, -1);
        for (const auto& inst : scene->instances)
            for (std::size_t i = 0; i < owner.size(); ++i)
                if (inst.mask[i]) owner[i] = inst.class_id;
        int good = -1, bad = -1, bg = -1;
        for (int i = 0; i < 64 * 64; ++i) {
            if (owner[i] == sample && good < 0) good = i;
            if (owner[i] >= 0 && owner[i] != sample && bad < 0) bad = i;
            if (owner[i] < 0 && bg < 0) bg = i;
        }
        REQUIRE(good >= 0);
        const int pick = trial % 3 == 0 ? good : trial % 3 == 1 ? bad : bg;
        if (pick < 0) {
            task.step({0, 0});
            continue;
        }
        const auto out = task.step({pick % 64, pick / 64});
        CHECK(out.scored);
        CHECK(out.reward == (pick == good ? 1.0 : 0.0));
        ++checked;
    }
    CHECK(checked > 20);
}

TEST_CASE("scenes respect the occlusion limit") {
    std::mt19937_64 rng(8);
    const RenderConfig cfg;
    for (int i = 0; i < 50; ++i) {
        std::vector<int> classes{0, 1, 2, 3, 4, 5};
        classes.resize(3 + i % 4);
        const auto scene = render_scene(cfg, classes, rng, 0.3);
        for (const auto& inst : scene.instances) CHECK(inst.mask_area() > 0);
    }
}

TEST_CASE("schedule cues fire exactly at boundaries, including identical tasks") {
    const TaskSpec a{Variant::Sr2Way, {0, 1}};
    const TaskSpec b{Variant::Sr4WayQuadrant, {0, 1, 2, 3}};
    TaskSchedule same({{a, 100}, {a, 100}}, small_bank(), 7);
    int cues = 0;
    long cue_step = -1;
    for (long t = 0; t < 200; ++t) {
        const auto s = same.step({5, 5});
        if (s.cue) {
            ++cues;
            cue_step = t + 1;
        }
        if (t == 199) CHECK(s.ended);
    }
    CHECK(cues == 1);
    CHECK(cue_step == 100);
    CHECK(same.ended());
    CHECK(same.frame() == nullptr);
    CHECK_THROWS_AS(same.step({0, 0}), EnvironmentError);

    TaskSchedule diff({{a, 100}, {b, 100}}, small_bank(), 7);
    for (long t = 0; t < 100; ++t) diff.step({5, 5});
    CHECK(diff.task_index() == 1);
    CHECK(diff.task().spec() == b);

    CHECK_THROWS_AS(TaskSchedule({{a, 0}}, small_bank(), 1), ConfigError);
}

TEST_CASE("all fifteen switch pairs construct") {
    REQUIRE(switch_pairs().size() == 15);
    auto bank = small_bank();
    for (const auto& p : switch_pairs()) {
        INFO(p.label);
        CHECK_NOTHROW(make_task(p.base, bank, Split::Train, 1));
        CHECK_NOTHROW(make_task(p.target, bank, Split::Train, 1));
    }
    CHECK(switch_pair(1).target.classes == std::vector<int>{2, 3});
    CHECK(switch_pair(13).target.transform == RewardTransform::ClassReversal);
}

TEST_CASE("schedule config round-trips through JSON and replay is bit-exact") {
    ScheduleConfig cfg;
    cfg.seed = 42;
    cfg.entries = {{{Variant::Sr2Way, {0, 1}}, 30},
                   {{Variant::Mts2WayVertMotion, {0, 1}}, 30},
                   {{Variant::Localization, {3}}, 20}};
    const nlohmann::json j = cfg;
    const auto back = j.get<ScheduleConfig>();
    CHECK(nlohmann::json(back) == j);

    std::mt19937_64 rng(1);
    std::vector<ActionPoint> actions;
    for (int i = 0; i < 90; ++i) actions.push_back({static_cast<int>(rng() % 64), static_cast<int>(rng() % 64)});
    const auto first = replay(cfg, actions);
    CHECK(first.size() == 80);
    const auto path = std::filesystem::temp_directory_path() / "remap_replay_test.jsonl";
    write_replay_log(path, first);
    const auto loaded = read_replay_log(path);
    std::vector<ActionPoint> logged;
    for (const auto& r : loaded) logged.push_back({r.x, r.y});
    const auto second = replay(back, logged);
    REQUIRE(second.size() == first.size());
    for (std::size_t i = 0; i < first.size(); ++i) {
        CHECK(nlohmann::json(second[i]) == nlohmann::json(first[i]));
        CHECK(second[i].reward >= 0.0);
        CHECK(second[i].reward <= 1.0);
    }
    std::filesystem::remove(path);
}

TEST_CASE("task specs parse from JSON and reject bad input") {
    const auto spec = nlohmann::json::parse(R"({"variant": "sr-4way-quadrant", "classes": [0,1,2,3]})")
                          .get<TaskSpec>();
    CHECK(spec.variant == Variant::Sr4WayQuadrant);
    CHECK(spec.id() == "sr-4way-quadrant[0,1,2,3]");
    CHECK(nlohmann::json::parse(R"({"variant": 13, "classes": [0,1]})").get<TaskSpec>().variant ==
          Variant::SceneMts);
    CHECK_THROWS_AS(nlohmann::json::parse(R"({"variant": "sr-9way"})").get<TaskSpec>(), ConfigError);
    CHECK_THROWS_AS(parse_transform("mirror"), ConfigError);
}
