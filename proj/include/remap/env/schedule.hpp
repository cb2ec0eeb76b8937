#pragma once

#include <cstdint>
#include <filesystem>
#include <memory>
#include <string>
#include <vector>

#include <json.hpp>

#include "remap/env/tasks.hpp"

namespace remap::env {

struct ScheduleEntry {
    TaskSpec task;
    long steps = 0;
};

/// JSON form:
/// {"seed": 1, "height": 64, "width": 64, "class_count": 8,
///  "tasks": [{"variant": "sr-2way", "classes": [0, 1], "transform": "none", "steps": 1000}]}
struct ScheduleConfig {
    std::uint64_t seed = 1;
    RenderConfig render;
    std::vector<ScheduleEntry> entries;
};

void to_json(nlohmann::json& j, const ScheduleConfig& c);
void from_json(const nlohmann::json& j, ScheduleConfig& c);
ScheduleConfig load_schedule(const std::filesystem::path& path);

/// One emitted timestep of a schedule.
struct ScheduleStep {
    EmittedFrame frame;       // image is null once the stream has ended
    bool cue = false;         // the emitted frame is the first of a new task
    bool ended = false;       // schedule exhausted; no further actions accepted
    std::size_t task_index = 0;
};

/// A sequence of task programs with a switch-cue channel. Each program
/// keeps its own RNG stream derived from (schedule seed, entry index).
class TaskSchedule {
public:
    TaskSchedule(std::vector<ScheduleEntry> entries, std::shared_ptr<InstanceBank> bank,
                 std::uint64_t seed, Split split = Split::Train);
    TaskSchedule(const ScheduleConfig& config, Split split = Split::Train);

    /// Frame the agent should act on now.
    std::shared_ptr<const LabeledImage> frame() const;
    ScheduleStep step(ActionPoint action);

    bool ended() const { return index_ >= entries_.size(); }
    std::size_t task_index() const { return index_; }
    long steps_taken() const { return total_; }
    const Task& task() const { return *task_; }
    const std::vector<ScheduleEntry>& entries() const { return entries_; }
    const std::shared_ptr<InstanceBank>& bank() const { return bank_; }

private:
    void open(std::size_t index);
    std::vector<ScheduleEntry> entries_;
    std::shared_ptr<InstanceBank> bank_;
    std::uint64_t seed_;
    Split split_;
    std::size_t index_ = 0;
    long in_task_ = 0;
    long total_ = 0;
    std::unique_ptr<Task> task_;
};

/// A numbered base/switch pair from the task-switching table.
struct SwitchPair {
    int id = 0;
    std::string label;
    TaskSpec base;
    TaskSpec target;
};

/// All fifteen switching experiments. "New classes" swaps [0,1] for [2,3];
/// 4-way tasks use [0,1,2,3].
const std::vector<SwitchPair>& switch_pairs();
const SwitchPair& switch_pair(int id);

/// One line of a replay log.
struct ReplayRecord {
    long step = 0;
    std::size_t task = 0;
    int x = 0, y = 0;
    double reward = 0.0;
    bool scored = false;
    bool cue = false;
    std::string frame_hash;  // of the frame emitted after the action
};

void to_json(nlohmann::json& j, const ReplayRecord& r);
void from_json(const nlohmann::json& j, ReplayRecord& r);

/// Runs `actions` through a fresh schedule built from `config` and returns
/// the frame/reward record of every step. Stops early at stream end.
std::vector<ReplayRecord> replay(const ScheduleConfig& config, const std::vector<ActionPoint>& actions,
                                 Split split = Split::Train);

void write_replay_log(const std::filesystem::path& path, const std::vector<ReplayRecord>& records);
std::vector<ReplayRecord> read_replay_log(const std::filesystem::path& path);

}  // namespace remap::env
