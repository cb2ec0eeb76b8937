#pragma once

#include <cstdint>
#include <memory>
#include <optional>
#include <random>
#include <string>
#include <string_view>
#include <vector>

#include <json.hpp>

#include "remap/env/render.hpp"

namespace remap::env {

/// A touch at pixel column x, row y.
struct ActionPoint {
    int x = 0;
    int y = 0;
    bool operator==(const ActionPoint&) const = default;
};

enum class Paradigm { SR, MTS, LOC, SceneMTS };

/// The thirteen task variants, numbered as in the task catalogue.
enum class Variant {
    Sr2Way = 1,
    Sr4WayDoubleBinary = 2,
    Sr4WayQuadrant = 3,
    Mts2WayStationary = 4,
    Mts2WayHorizFlip = 5,
    Mts2WayVertMotion = 6,
    Mts2WayVertMotionHorizFlip = 7,
    Mts4Way2Shown = 8,
    Mts4Way2ShownVertMotion = 9,
    Mts4Way4ShownStationary = 10,
    Mts4Way4ShownPermuted = 11,
    Localization = 12,
    SceneMts = 13,
};

/// Reward-geometry modifiers used by the interface-transformation switches.
enum class RewardTransform { None, ClassReversal, Squeeze, Rotate90 };

std::string_view variant_name(Variant v);
Variant parse_variant(std::string_view name);
Paradigm paradigm_of(Variant v);
/// Number of classes the variant's trial logic addresses.
int variant_way(Variant v);
std::string_view transform_name(RewardTransform t);
RewardTransform parse_transform(std::string_view name);

/// Declarative description of one task program.
struct TaskSpec {
    Variant variant = Variant::Sr2Way;
    std::vector<int> classes{0, 1};
    RewardTransform transform = RewardTransform::None;

    /// e.g. "sr-2way[0,1]" or "sr-2way[0,1]+class-reversal"
    std::string id() const;
    bool operator==(const TaskSpec&) const = default;
};

void to_json(nlohmann::json& j, const TaskSpec& spec);
void from_json(const nlohmann::json& j, TaskSpec& spec);

/// Button geometry of match screens. At 224 pixels these are the literal
/// 100 px templates, 6 px edge buffer and 12 px inter-button buffer; other
/// screen sizes scale proportionally (template size rounded down so that two
/// buttons and three buffers always fit, buffers rounded to nearest).
struct MtsLayout {
    int screen = 64;
    int template_size = 0;
    int edge_buffer = 0;
    int adjacent_buffer = 0;

    static MtsLayout for_screen(int screen);
    int column_x(int col) const { return edge_buffer + col * (template_size + adjacent_buffer); }
    int row_y(int row) const { return edge_buffer + row * (template_size + adjacent_buffer); }
    int centred_y() const { return (screen - template_size) / 2; }
    int max_y() const { return screen - edge_buffer - template_size; }
};

/// Result of executing one action.
struct StepOutcome {
    double reward = 0.0;
    /// True at decision points where a reward could have been earned; reward
    /// means are taken over scored steps only.
    bool scored = false;
};

/// The environment's view of one emitted timestep.
struct EmittedFrame {
    std::shared_ptr<const LabeledImage> image;
    double reward = 0.0;  // for the previous action
    bool scored = false;
};

/// A running task program. Observation, then `step` returns the reward for
/// the action and advances to the next frame.
class Task {
public:
    virtual ~Task() = default;
    virtual std::shared_ptr<const LabeledImage> frame() const = 0;
    virtual StepOutcome step(ActionPoint action) = 0;

    const TaskSpec& spec() const { return spec_; }
    int height() const;
    int width() const;

    /// step + frame, as one emitted timestep.
    EmittedFrame advance(ActionPoint action);

protected:
    Task(TaskSpec spec, std::shared_ptr<InstanceBank> bank, Split split, std::uint64_t seed);
    void check_action(ActionPoint a) const;
    std::shared_ptr<const LabeledImage> random_instance(int class_id);

    TaskSpec spec_;
    std::shared_ptr<InstanceBank> bank_;
    Split split_;
    std::mt19937_64 rng_;
};

/// Builds the program for `spec`. Throws ConfigError for inconsistent specs
/// (wrong class count, transforms on non-SR paradigms, non-square rotation).
std::unique_ptr<Task> make_task(const TaskSpec& spec, std::shared_ptr<InstanceBank> bank,
                                Split split, std::uint64_t seed);

/// Stimulus-response: reward 1 iff the touch falls in the region assigned to
/// the displayed class. Regions are half-open (left/top inclusive).
class SrTask : public Task {
public:
    SrTask(TaskSpec spec, std::shared_ptr<InstanceBank> bank, Split split, std::uint64_t seed);
    std::shared_ptr<const LabeledImage> frame() const override { return current_; }
    StepOutcome step(ActionPoint action) override;

    /// Reward the current program would give `action` for a frame of `class_id`.
    double reward_for(int class_id, ActionPoint action) const;
    int current_class() const { return current_class_; }

private:
    void next_trial();
    int current_class_ = 0;
    std::shared_ptr<const LabeledImage> current_;
};

/// Placed match-screen button.
struct Button {
    int class_id = 0;
    BoundingBox box;
};

/// Two-phase match-to-sample: a sample screen (any touch advances, unscored)
/// then a match screen of class-template buttons.
class MtsTask : public Task {
public:
    MtsTask(TaskSpec spec, std::shared_ptr<InstanceBank> bank, Split split, std::uint64_t seed);
    std::shared_ptr<const LabeledImage> frame() const override { return current_; }
    StepOutcome step(ActionPoint action) override;

    bool on_match_screen() const { return match_phase_; }
    int sample_class() const { return sample_class_; }
    const std::vector<Button>& buttons() const { return buttons_; }
    const MtsLayout& layout() const { return layout_; }

private:
    void start_trial();
    void build_match_screen();
    MtsLayout layout_;
    bool match_phase_ = false;
    int sample_class_ = 0;
    std::vector<Button> buttons_;
    std::vector<std::shared_ptr<const LabeledImage>> templates_;
    std::shared_ptr<const LabeledImage> current_;
};

/// Two-touch localization: the first touch stores a corner (reward 0), the
/// second closes the box and earns its IoU with the ground truth.
class LocTask : public Task {
public:
    LocTask(TaskSpec spec, std::shared_ptr<InstanceBank> bank, Split split, std::uint64_t seed);
    std::shared_ptr<const LabeledImage> frame() const override { return current_; }
    StepOutcome step(ActionPoint action) override;

    static BoundingBox box_from_corners(ActionPoint a, ActionPoint b);
    std::optional<ActionPoint> pending_corner() const { return corner_; }

private:
    void next_image();
    std::optional<ActionPoint> corner_;
    std::shared_ptr<const LabeledImage> current_;
};

/// Scene match-to-sample: a class template, then a multi-instance scene;
/// reward 1 iff the touch lies inside any visible instance of that class.
class SceneMtsTask : public Task {
public:
    SceneMtsTask(TaskSpec spec, std::shared_ptr<InstanceBank> bank, Split split,
                 std::uint64_t seed);
    std::shared_ptr<const LabeledImage> frame() const override { return current_; }
    StepOutcome step(ActionPoint action) override;

    bool on_match_screen() const { return match_phase_; }
    int sample_class() const { return sample_class_; }

private:
    void start_trial();
    bool match_phase_ = false;
    int sample_class_ = 0;
    std::vector<std::shared_ptr<const LabeledImage>> templates_;
    std::shared_ptr<const LabeledImage> current_;
};

}  // namespace remap::env
