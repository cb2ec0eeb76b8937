#include "remap/env/tasks.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <set>

#include "remap/common/errors.hpp"

namespace remap::env {
namespace {

struct VariantInfo {
    Variant variant;
    const char* name;
    Paradigm paradigm;
    int way;
};

constexpr std::array<VariantInfo, 13> kVariants{{
    {Variant::Sr2Way, "sr-2way", Paradigm::SR, 2},
    {Variant::Sr4WayDoubleBinary, "sr-4way-double-binary", Paradigm::SR, 4},
    {Variant::Sr4WayQuadrant, "sr-4way-quadrant", Paradigm::SR, 4},
    {Variant::Mts2WayStationary, "mts-2way-stationary", Paradigm::MTS, 2},
    {Variant::Mts2WayHorizFlip, "mts-2way-horiz-flip", Paradigm::MTS, 2},
    {Variant::Mts2WayVertMotion, "mts-2way-vert-motion", Paradigm::MTS, 2},
    {Variant::Mts2WayVertMotionHorizFlip, "mts-2way-vert-motion-horiz-flip", Paradigm::MTS, 2},
    {Variant::Mts4Way2Shown, "mts-4way-2shown", Paradigm::MTS, 4},
    {Variant::Mts4Way2ShownVertMotion, "mts-4way-2shown-vert-motion", Paradigm::MTS, 4},
    {Variant::Mts4Way4ShownStationary, "mts-4way-4shown-stationary", Paradigm::MTS, 4},
    {Variant::Mts4Way4ShownPermuted, "mts-4way-4shown-permuted", Paradigm::MTS, 4},
    {Variant::Localization, "localization", Paradigm::LOC, 1},
    {Variant::SceneMts, "scene-mts", Paradigm::SceneMTS, 0},
}};

const VariantInfo& info(Variant v) {
    for (const auto& i : kVariants)
        if (i.variant == v) return i;
    throw ConfigError("unknown task variant " + std::to_string(static_cast<int>(v)));
}

constexpr std::array<std::pair<RewardTransform, const char*>, 4> kTransforms{{
    {RewardTransform::None, "none"},
    {RewardTransform::ClassReversal, "class-reversal"},
    {RewardTransform::Squeeze, "squeeze"},
    {RewardTransform::Rotate90, "rotate90"},
}};

// Copies `src` into `dst` with its top-left corner at (x, y).
void paste(Image& dst, const Image& src, int x, int y) {
    for (int r = 0; r < src.height; ++r)
        for (int c = 0; c < src.width; ++c) {
            const float* s = src.at(r, c);
            float* d = dst.at(y + r, x + c);
            std::copy(s, s + 3, d);
        }
}

InstanceRecord box_record(int class_id, const BoundingBox& box, int height, int width) {
    InstanceRecord rec;
    rec.class_id = class_id;
    rec.box = box;
    rec.mask.assign(static_cast<std::size_t>(height) * width, 0);
    for (int y = box.y0; y < box.y1; ++y)
        for (int x = box.x0; x < box.x1; ++x) rec.mask[static_cast<std::size_t>(y) * width + x] = 1;
    return rec;
}

}  // namespace

std::string_view variant_name(Variant v) { return info(v).name; }

Variant parse_variant(std::string_view name) {
    for (const auto& i : kVariants)
        if (name == i.name) return i.variant;
    throw ConfigError("unknown task variant '" + std::string(name) + "'");
}

Paradigm paradigm_of(Variant v) { return info(v).paradigm; }
int variant_way(Variant v) { return info(v).way; }

std::string_view transform_name(RewardTransform t) {
    for (const auto& [k, n] : kTransforms)
        if (k == t) return n;
    return "none";
}

RewardTransform parse_transform(std::string_view name) {
    for (const auto& [k, n] : kTransforms)
        if (name == n) return k;
    throw ConfigError("unknown reward transform '" + std::string(name) + "'");
}

std::string TaskSpec::id() const {
    std::string s(variant_name(variant));
    s += '[';
    for (std::size_t i = 0; i < classes.size(); ++i) {
        if (i) s += ',';
        s += std::to_string(classes[i]);
    }
    s += ']';
    if (transform != RewardTransform::None) {
        s += '+';
        s += transform_name(transform);
    }
    return s;
}

void to_json(nlohmann::json& j, const TaskSpec& spec) {
    j = nlohmann::json{{"variant", std::string(variant_name(spec.variant))},
                       {"classes", spec.classes},
                       {"transform", std::string(transform_name(spec.transform))}};
}

void from_json(const nlohmann::json& j, TaskSpec& spec) {
    if (!j.contains("variant")) throw ConfigError("task spec needs a 'variant'");
    const auto& v = j.at("variant");
    spec.variant = v.is_number_integer() ? static_cast<Variant>(v.get<int>())
                                         : parse_variant(v.get<std::string>());
    (void)info(spec.variant);
    spec.classes = j.value("classes", std::vector<int>{0, 1});
    spec.transform = parse_transform(j.value("transform", std::string("none")));
}

MtsLayout MtsLayout::for_screen(int screen) {
    MtsLayout l;
    l.screen = screen;
    l.template_size = 100 * screen / 224;
    l.edge_buffer = static_cast<int>(std::lround(6.0 * screen / 224.0));
    l.adjacent_buffer = static_cast<int>(std::lround(12.0 * screen / 224.0));
    while (l.template_size > 1 && 2 * l.template_size + 2 * l.edge_buffer + l.adjacent_buffer > screen)
        --l.template_size;
    return l;
}

// ---- Task ----

Task::Task(TaskSpec spec, std::shared_ptr<InstanceBank> bank, Split split, std::uint64_t seed)
    : spec_(std::move(spec)), bank_(std::move(bank)), split_(split), rng_(seed) {
    if (!bank_) throw ConfigError("task needs an instance bank");
    const int way = variant_way(spec_.variant);
    const auto& cls = spec_.classes;
    if (way > 0 && static_cast<int>(cls.size()) != way) {
        throw ConfigError(spec_.id() + ": variant needs exactly " + std::to_string(way) + " classes");
    }
    if (cls.empty()) throw ConfigError(spec_.id() + ": empty class set");
    if (std::set<int>(cls.begin(), cls.end()).size() != cls.size()) {
        throw ConfigError(spec_.id() + ": duplicate classes");
    }
    for (int c : cls)
        if (c < 0 || c >= bank_->config().class_count) {
            throw ConfigError(spec_.id() + ": class " + std::to_string(c) + " not in configured set");
        }
    if (spec_.transform != RewardTransform::None && paradigm_of(spec_.variant) != Paradigm::SR) {
        throw ConfigError(spec_.id() + ": reward transforms apply to stimulus-response tasks only");
    }
    if (spec_.transform == RewardTransform::Rotate90 && height() != width()) {
        throw ConfigError(spec_.id() + ": rotation needs a square screen");
    }
}

int Task::height() const { return bank_->config().height; }
int Task::width() const { return bank_->config().width; }

void Task::check_action(ActionPoint a) const {
    if (a.x < 0 || a.x >= width() || a.y < 0 || a.y >= height()) {
        throw InputError("action (" + std::to_string(a.x) + "," + std::to_string(a.y) +
                         ") outside the screen");
    }
}

std::shared_ptr<const LabeledImage> Task::random_instance(int class_id) {
    std::uniform_int_distribution<int> pick(0, bank_->pool_size(split_) - 1);
    return bank_->instance(class_id, pick(rng_), split_);
}

EmittedFrame Task::advance(ActionPoint action) {
    const StepOutcome out = step(action);
    return EmittedFrame{frame(), out.reward, out.scored};
}

std::unique_ptr<Task> make_task(const TaskSpec& spec, std::shared_ptr<InstanceBank> bank, Split split,
                                std::uint64_t seed) {
    switch (paradigm_of(spec.variant)) {
        case Paradigm::SR: return std::make_unique<SrTask>(spec, std::move(bank), split, seed);
        case Paradigm::MTS: return std::make_unique<MtsTask>(spec, std::move(bank), split, seed);
        case Paradigm::LOC: return std::make_unique<LocTask>(spec, std::move(bank), split, seed);
        case Paradigm::SceneMTS:
            return std::make_unique<SceneMtsTask>(spec, std::move(bank), split, seed);
    }
    throw ConfigError("unhandled paradigm");
}

// ---- SR ----

SrTask::SrTask(TaskSpec spec, std::shared_ptr<InstanceBank> bank, Split split, std::uint64_t seed)
    : Task(std::move(spec), std::move(bank), split, seed) {
    next_trial();
}

void SrTask::next_trial() {
    std::uniform_int_distribution<std::size_t> pick(0, spec_.classes.size() - 1);
    current_class_ = spec_.classes[pick(rng_)];
    current_ = random_instance(current_class_);
}

double SrTask::reward_for(int class_id, ActionPoint a) const {
    const auto it = std::find(spec_.classes.begin(), spec_.classes.end(), class_id);
    if (it == spec_.classes.end()) return 0.0;
    int role = static_cast<int>(it - spec_.classes.begin());
    const int n = static_cast<int>(spec_.classes.size());
    const int W = width(), H = height();

    if (spec_.transform == RewardTransform::Squeeze && a.y >= H / 2) return 0.0;
    if (spec_.transform == RewardTransform::ClassReversal) role = n - 1 - role;
    if (spec_.transform == RewardTransform::Rotate90) {
        // the original layout turned a quarter: bottom plays the old left, top the old right
        a = ActionPoint{W - 1 - a.y, a.x};
    }
    const bool right = a.x >= W / 2;
    const bool bottom = a.y >= H / 2;
    switch (spec_.variant) {
        case Variant::Sr2Way:
        case Variant::Sr4WayDoubleBinary: return right == (role % 2 == 1) ? 1.0 : 0.0;
        case Variant::Sr4WayQuadrant:
            return (right == (role % 2 == 1) && bottom == (role / 2 == 1)) ? 1.0 : 0.0;
        default: return 0.0;
    }
}

StepOutcome SrTask::step(ActionPoint action) {
    check_action(action);
    const double r = reward_for(current_class_, action);
    next_trial();
    return {r, true};
}

// ---- MTS ----

MtsTask::MtsTask(TaskSpec spec, std::shared_ptr<InstanceBank> bank, Split split, std::uint64_t seed)
    : Task(std::move(spec), std::move(bank), split, seed),
      layout_(MtsLayout::for_screen(std::min(height(), width()))) {
    const int count = bank_->config().class_count;
    for (int c : spec_.classes)
        templates_.push_back(
            std::make_shared<const LabeledImage>(render_template(c, layout_.template_size, count)));
    start_trial();
}

void MtsTask::start_trial() {
    match_phase_ = false;
    std::uniform_int_distribution<std::size_t> pick(0, spec_.classes.size() - 1);
    sample_class_ = spec_.classes[pick(rng_)];
    current_ = random_instance(sample_class_);
}

void MtsTask::build_match_screen() {
    const int T = layout_.template_size;
    const auto& cls = spec_.classes;
    const int sample_role =
        static_cast<int>(std::find(cls.begin(), cls.end(), sample_class_) - cls.begin());
    std::uniform_int_distribution<int> y_pick(layout_.edge_buffer, layout_.max_y());
    std::bernoulli_distribution coin(0.5);

    // (role, column, row-y) for each shown button
    struct Slot {
        int role, x, y;
    };
    std::vector<Slot> slots;
    const int left = layout_.column_x(0), right = layout_.column_x(1), mid = layout_.centred_y();
    switch (spec_.variant) {
        case Variant::Mts2WayStationary: slots = {{0, left, mid}, {1, right, mid}}; break;
        case Variant::Mts2WayHorizFlip: {
            const bool flip = coin(rng_);
            slots = {{0, flip ? right : left, mid}, {1, flip ? left : right, mid}};
            break;
        }
        case Variant::Mts2WayVertMotion:
            slots = {{0, left, y_pick(rng_)}, {1, right, y_pick(rng_)}};
            break;
        case Variant::Mts2WayVertMotionHorizFlip: {
            const bool flip = coin(rng_);
            slots = {{0, flip ? right : left, y_pick(rng_)}, {1, flip ? left : right, y_pick(rng_)}};
            break;
        }
        case Variant::Mts4Way2Shown:
        case Variant::Mts4Way2ShownVertMotion: {
            std::uniform_int_distribution<int> other(0, 2);
            int distractor = other(rng_);
            if (distractor >= sample_role) ++distractor;
            const bool flip = coin(rng_);
            const bool motion = spec_.variant == Variant::Mts4Way2ShownVertMotion;
            const int y0 = motion ? y_pick(rng_) : mid;
            const int y1 = motion ? y_pick(rng_) : mid;
            slots = {{sample_role, flip ? right : left, y0}, {distractor, flip ? left : right, y1}};
            break;
        }
        case Variant::Mts4Way4ShownStationary:
        case Variant::Mts4Way4ShownPermuted: {
            std::array<int, 4> order{0, 1, 2, 3};
            if (spec_.variant == Variant::Mts4Way4ShownPermuted) std::shuffle(order.begin(), order.end(), rng_);
            for (int slot = 0; slot < 4; ++slot)
                slots.push_back({order[slot], layout_.column_x(slot % 2), layout_.row_y(slot / 2)});
            break;
        }
        default: throw ConfigError(spec_.id() + " is not a match-to-sample variant");
    }

    auto screen = std::make_shared<LabeledImage>();
    screen->pixels = Image(height(), width());
    screen->class_id = sample_class_;
    buttons_.clear();
    for (const auto& s : slots) {
        paste(screen->pixels, templates_[s.role]->pixels, s.x, s.y);
        const BoundingBox box{s.x, s.y, s.x + T, s.y + T};
        buttons_.push_back({cls[s.role], box});
        screen->instances.push_back(box_record(cls[s.role], box, height(), width()));
    }
    current_ = std::move(screen);
}

StepOutcome MtsTask::step(ActionPoint action) {
    check_action(action);
    if (!match_phase_) {
        match_phase_ = true;
        build_match_screen();
        return {0.0, false};
    }
    double r = 0.0;
    for (const auto& b : buttons_)
        if (b.class_id == sample_class_ && b.box.contains(action.x, action.y)) r = 1.0;
    start_trial();
    return {r, true};
}

// ---- LOC ----

LocTask::LocTask(TaskSpec spec, std::shared_ptr<InstanceBank> bank, Split split, std::uint64_t seed)
    : Task(std::move(spec), std::move(bank), split, seed) {
    next_image();
}

void LocTask::next_image() {
    std::uniform_int_distribution<std::size_t> pick(0, spec_.classes.size() - 1);
    current_ = random_instance(spec_.classes[pick(rng_)]);
}

BoundingBox LocTask::box_from_corners(ActionPoint a, ActionPoint b) {
    return {std::min(a.x, b.x), std::min(a.y, b.y), std::max(a.x, b.x) + 1, std::max(a.y, b.y) + 1};
}

StepOutcome LocTask::step(ActionPoint action) {
    check_action(action);
    if (!corner_) {
        corner_ = action;
        return {0.0, false};
    }
    const double r = iou(box_from_corners(*corner_, action), current_->instances.front().box);
    corner_.reset();
    next_image();
    return {r, true};
}

// ---- scene MTS ----

SceneMtsTask::SceneMtsTask(TaskSpec spec, std::shared_ptr<InstanceBank> bank, Split split,
                           std::uint64_t seed)
    : Task(std::move(spec), std::move(bank), split, seed) {
    const int size = std::min(height(), width());
    for (int c : spec_.classes) {
        auto frame = std::make_shared<LabeledImage>();
        frame->pixels = Image(height(), width());
        frame->class_id = c;
        const auto t = render_template(c, size, bank_->config().class_count);
        paste(frame->pixels, t.pixels, (width() - size) / 2, (height() - size) / 2);
        templates_.push_back(std::move(frame));
    }
    start_trial();
}

void SceneMtsTask::start_trial() {
    match_phase_ = false;
    std::uniform_int_distribution<std::size_t> pick(0, spec_.classes.size() - 1);
    const std::size_t role = pick(rng_);
    sample_class_ = spec_.classes[role];
    current_ = templates_[role];
}

StepOutcome SceneMtsTask::step(ActionPoint action) {
    check_action(action);
    if (!match_phase_) {
        match_phase_ = true;
        std::uniform_int_distribution<int> count(3, 6);
        std::uniform_int_distribution<std::size_t> pick(0, spec_.classes.size() - 1);
        const int n = count(rng_);
        std::vector<int> classes;
        for (int i = 0; i < n; ++i) classes.push_back(spec_.classes[pick(rng_)]);
        std::uniform_int_distribution<int> where(0, n - 1);
        classes[static_cast<std::size_t>(where(rng_))] = sample_class_;
        auto scene = std::make_shared<LabeledImage>(render_scene(bank_->config(), classes, rng_));
        current_ = std::move(scene);
        return {0.0, false};
    }
    double r = 0.0;
    const std::size_t idx = static_cast<std::size_t>(action.y) * width() + action.x;
    for (const auto& inst : current_->instances)
        if (inst.class_id == sample_class_ && inst.mask[idx]) r = 1.0;
    start_trial();
    return {r, true};
}

}  // namespace remap::env
