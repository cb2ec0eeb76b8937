#include "remap/env/schedule.hpp"

#include <fstream>

#include "remap/common/errors.hpp"
#include "remap/common/hash.hpp"
#include "remap/common/random.hpp"

namespace remap::env {

void to_json(nlohmann::json& j, const ScheduleConfig& c) {
    j = nlohmann::json{{"seed", c.seed},
                       {"height", c.render.height},
                       {"width", c.render.width},
                       {"class_count", c.render.class_count},
                       {"tasks", nlohmann::json::array()}};
    for (const auto& e : c.entries) {
        nlohmann::json t = e.task;
        t["steps"] = e.steps;
        j["tasks"].push_back(std::move(t));
    }
}

void from_json(const nlohmann::json& j, ScheduleConfig& c) {
    c.seed = j.value("seed", std::uint64_t{1});
    c.render.height = j.value("height", 64);
    c.render.width = j.value("width", 64);
    c.render.class_count = j.value("class_count", 8);
    c.entries.clear();
    if (!j.contains("tasks") || !j.at("tasks").is_array() || j.at("tasks").empty()) {
        throw ConfigError("schedule needs a non-empty 'tasks' array");
    }
    for (const auto& t : j.at("tasks")) {
        ScheduleEntry e;
        e.task = t.get<TaskSpec>();
        e.steps = t.value("steps", 0L);
        c.entries.push_back(std::move(e));
    }
}

ScheduleConfig load_schedule(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) throw ConfigError("cannot open schedule " + path.string());
    try {
        return nlohmann::json::parse(in).get<ScheduleConfig>();
    } catch (const nlohmann::json::exception& e) {
        throw ConfigError(path.string() + ": " + e.what());
    }
}

TaskSchedule::TaskSchedule(std::vector<ScheduleEntry> entries, std::shared_ptr<InstanceBank> bank,
                           std::uint64_t seed, Split split)
    : entries_(std::move(entries)), bank_(std::move(bank)), seed_(seed), split_(split) {
    if (entries_.empty()) throw ConfigError("schedule is empty");
    for (const auto& e : entries_)
        if (e.steps <= 0) throw ConfigError("task " + e.task.id() + " has non-positive duration");
    open(0);
}

TaskSchedule::TaskSchedule(const ScheduleConfig& config, Split split)
    : TaskSchedule(config.entries, std::make_shared<InstanceBank>(config.render, config.seed),
                   config.seed, split) {}

void TaskSchedule::open(std::size_t index) {
    index_ = index;
    in_task_ = 0;
    if (index_ < entries_.size()) {
        task_ = make_task(entries_[index_].task, bank_, split_, derive_seed(seed_, {index_}));
    } else {
        task_.reset();
    }
}

std::shared_ptr<const LabeledImage> TaskSchedule::frame() const {
    return task_ ? task_->frame() : nullptr;
}

ScheduleStep TaskSchedule::step(ActionPoint action) {
    if (ended()) throw EnvironmentError("schedule exhausted");
    const StepOutcome out = task_->step(action);
    ++in_task_;
    ++total_;
    ScheduleStep s;
    s.frame.reward = out.reward;
    s.frame.scored = out.scored;
    if (in_task_ >= entries_[index_].steps) {
        open(index_ + 1);
        s.cue = !ended();
        s.ended = ended();
    }
    s.frame.image = frame();
    s.task_index = index_;
    return s;
}

const std::vector<SwitchPair>& switch_pairs() {
    static const std::vector<SwitchPair> pairs = [] {
        const std::vector<int> old2{0, 1}, new2{2, 3}, four{0, 1, 2, 3};
        auto t = [](Variant v, std::vector<int> c, RewardTransform r = RewardTransform::None) {
            return TaskSpec{v, std::move(c), r};
        };
        using V = Variant;
        using R = RewardTransform;
        return std::vector<SwitchPair>{
            {1, "2-way SR -> 2-way SR new classes", t(V::Sr2Way, old2), t(V::Sr2Way, new2)},
            {2, "2-way SR -> 4-way double-binary SR", t(V::Sr2Way, old2), t(V::Sr4WayDoubleBinary, four)},
            {3, "2-way stationary MTS -> 2-way stationary MTS new classes",
             t(V::Mts2WayStationary, old2), t(V::Mts2WayStationary, new2)},
            {4, "2-way SR -> 2-way stationary MTS", t(V::Sr2Way, old2), t(V::Mts2WayStationary, old2)},
            {5, "2-way stationary MTS -> 2-way SR", t(V::Mts2WayStationary, old2), t(V::Sr2Way, old2)},
            {6, "2-way stationary MTS -> 2-way vert-motion horiz-flip MTS",
             t(V::Mts2WayStationary, old2), t(V::Mts2WayVertMotionHorizFlip, old2)},
            {7, "2-way vert-motion horiz-flip MTS -> 4-way 2-shown vert-motion MTS",
             t(V::Mts2WayVertMotionHorizFlip, old2), t(V::Mts4Way2ShownVertMotion, four)},
            {8, "4-way 2-shown vert-motion MTS -> 4-way 4-shown permuted MTS",
             t(V::Mts4Way2ShownVertMotion, four), t(V::Mts4Way4ShownPermuted, four)},
            {9, "4-way double-binary SR -> 4-way 4-shown stationary MTS",
             t(V::Sr4WayDoubleBinary, four), t(V::Mts4Way4ShownStationary, four)},
            {10, "4-way 4-shown stationary MTS -> 4-way quadrant SR",
             t(V::Mts4Way4ShownStationary, four), t(V::Sr4WayQuadrant, four)},
            {11, "2-way SR -> 4-way quadrant SR", t(V::Sr2Way, old2), t(V::Sr4WayQuadrant, four)},
            {12, "4-way double-binary SR -> 4-way quadrant SR", t(V::Sr4WayDoubleBinary, four),
             t(V::Sr4WayQuadrant, four)},
            {13, "2-way SR -> class reversal", t(V::Sr2Way, old2),
             t(V::Sr2Way, old2, R::ClassReversal)},
            {14, "2-way SR -> squeezed map", t(V::Sr2Way, old2), t(V::Sr2Way, old2, R::Squeeze)},
            {15, "2-way SR -> 90 degree map rotation", t(V::Sr2Way, old2),
             t(V::Sr2Way, old2, R::Rotate90)},
        };
    }();
    return pairs;
}

const SwitchPair& switch_pair(int id) {
    for (const auto& p : switch_pairs())
        if (p.id == id) return p;
    throw ConfigError("no switch pair with id " + std::to_string(id));
}

void to_json(nlohmann::json& j, const ReplayRecord& r) {
    j = nlohmann::json{{"step", r.step},     {"task", r.task},     {"x", r.x},
                       {"y", r.y},           {"reward", r.reward}, {"scored", r.scored},
                       {"cue", r.cue},       {"frame", r.frame_hash}};
}

void from_json(const nlohmann::json& j, ReplayRecord& r) {
    r.step = j.at("step").get<long>();
    r.task = j.at("task").get<std::size_t>();
    r.x = j.at("x").get<int>();
    r.y = j.at("y").get<int>();
    r.reward = j.at("reward").get<double>();
    r.scored = j.at("scored").get<bool>();
    r.cue = j.at("cue").get<bool>();
    r.frame_hash = j.at("frame").get<std::string>();
}

std::vector<ReplayRecord> replay(const ScheduleConfig& config, const std::vector<ActionPoint>& actions,
                                 Split split) {
    TaskSchedule schedule(config, split);
    std::vector<ReplayRecord> out;
    for (const auto& a : actions) {
        if (schedule.ended()) break;
        const auto task = schedule.task_index();
        const auto s = schedule.step(a);
        ReplayRecord r;
        r.step = schedule.steps_taken() - 1;
        r.task = task;
        r.x = a.x;
        r.y = a.y;
        r.reward = s.frame.reward;
        r.scored = s.frame.scored;
        r.cue = s.cue;
        r.frame_hash = s.frame.image ? to_hex(s.frame.image->pixels.content_hash()) : "";
        out.push_back(std::move(r));
    }
    return out;
}

void write_replay_log(const std::filesystem::path& path, const std::vector<ReplayRecord>& records) {
    std::ofstream out(path);
    if (!out) throw InputError("cannot write replay log " + path.string());
    for (const auto& r : records) out << nlohmann::json(r).dump() << '\n';
}

std::vector<ReplayRecord> read_replay_log(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) throw InputError("cannot read replay log " + path.string());
    std::vector<ReplayRecord> out;
    std::string line;
    while (std::getline(in, line))
        if (!line.empty()) out.push_back(nlohmann::json::parse(line).get<ReplayRecord>());
    return out;
}

}  // namespace remap::env
