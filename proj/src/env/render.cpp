#include "remap/env/render.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>
#include <string>

#include "remap/common/errors.hpp"
#include "remap/common/random.hpp"

namespace remap::env {
namespace {

constexpr float kPalette[][3] = {
    {0.90f, 0.15f, 0.15f},  // red
    {0.15f, 0.80f, 0.20f},  // green
    {0.20f, 0.30f, 0.95f},  // blue
    {0.95f, 0.90f, 0.15f},  // yellow
    {0.90f, 0.20f, 0.90f},  // magenta
    {0.15f, 0.90f, 0.90f},  // cyan
    {0.98f, 0.55f, 0.10f},  // orange
    {0.55f, 0.25f, 0.80f},  // purple
};

bool inside_shape(int shape, double u, double v) {
    switch (shape) {
        case 0:
            return u * u + v * v <= 1.0;
        case 1:
            return std::abs(u) <= 0.8 && std::abs(v) <= 0.8;
        case 2:
            // apex up: half-width grows linearly from the top edge
            return v >= -0.9 && v <= 0.8 && std::abs(u) <= 0.55 * (v + 0.9);
        default:
            return (std::abs(u) <= 0.32 && std::abs(v) <= 0.95) ||
                   (std::abs(v) <= 0.32 && std::abs(u) <= 0.95);
    }
}

BoundingBox tight_box(const std::vector<std::uint8_t>& mask, int height, int width) {
    BoundingBox box{width, height, 0, 0};
    bool any = false;
    for (int y = 0; y < height; ++y)
        for (int x = 0; x < width; ++x)
            if (mask[static_cast<std::size_t>(y) * width + x]) {
                any = true;
                box.x0 = std::min(box.x0, x);
                box.y0 = std::min(box.y0, y);
                box.x1 = std::max(box.x1, x + 1);
                box.y1 = std::max(box.y1, y + 1);
            }
    return any ? box : BoundingBox{};
}

void fill_background(Image& img, std::uint64_t seed, Background background) {
    if (background == Background::Plain) return;
    std::mt19937_64 rng(seed);
    std::uniform_real_distribution<float> base(0.25f, 0.45f), noise(-0.06f, 0.06f);
    std::uniform_real_distribution<double> freq(0.1, 0.4), phase(0.0, 2 * std::numbers::pi);
    const float tint[3] = {base(rng), base(rng), base(rng)};
    const double fx = freq(rng), fy = freq(rng), ph = phase(rng);
    for (int y = 0; y < img.height; ++y)
        for (int x = 0; x < img.width; ++x) {
            const float wave = 0.06f * static_cast<float>(std::sin(fx * x + fy * y + ph));
            float* px = img.at(y, x);
            for (int c = 0; c < 3; ++c) px[c] = std::clamp(tint[c] + wave + noise(rng), 0.0f, 1.0f);
        }
}

// Paints one object; returns its full (unoccluded) mask.
std::vector<std::uint8_t> paint(Image& img, int class_id, const Pose& pose) {
    const int shape = class_shape(class_id);
    const auto colour = class_colour(class_id);
    const double scale = pose.radius * std::min(img.height, img.width);
    const double cx = pose.cx * img.width, cy = pose.cy * img.height;
    const double cs = std::cos(pose.rotation), sn = std::sin(pose.rotation);
    std::vector<std::uint8_t> mask(static_cast<std::size_t>(img.height) * img.width, 0);
    for (int y = 0; y < img.height; ++y)
        for (int x = 0; x < img.width; ++x) {
            const double dx = (x + 0.5 - cx) / scale, dy = (y + 0.5 - cy) / scale;
            const double u = cs * dx + sn * dy, v = -sn * dx + cs * dy;
            if (!inside_shape(shape, u, v)) continue;
            mask[static_cast<std::size_t>(y) * img.width + x] = 1;
            // faint stripes give the surface some texture
            const float shade = static_cast<float>(pose.brightness * (0.88 + 0.12 * std::cos(6.0 * u)));
            float* px = img.at(y, x);
            for (int c = 0; c < 3; ++c) px[c] = std::clamp(colour[c] * shade, 0.0f, 1.0f);
        }
    return mask;
}

}  // namespace

long BoundingBox::area() const {
    return std::max(0, x1 - x0) * static_cast<long>(std::max(0, y1 - y0));
}

double iou(const BoundingBox& a, const BoundingBox& b) {
    const BoundingBox inter{std::max(a.x0, b.x0), std::max(a.y0, b.y0), std::min(a.x1, b.x1),
                            std::min(a.y1, b.y1)};
    const long i = inter.area();
    const long u = a.area() + b.area() - i;
    return u > 0 ? static_cast<double>(i) / static_cast<double>(u) : 0.0;
}

long InstanceRecord::mask_area() const {
    return static_cast<long>(std::count(mask.begin(), mask.end(), std::uint8_t{1}));
}

Pose sample_pose(std::mt19937_64& rng, const PoseRange& range) {
    std::uniform_real_distribution<double> centre(range.centre_min, range.centre_max);
    std::uniform_real_distribution<double> radius(range.radius_min, range.radius_max);
    std::uniform_real_distribution<double> angle(0.0, 2 * std::numbers::pi);
    std::uniform_real_distribution<double> bright(0.8, 1.1);
    Pose p;
    p.cx = centre(rng);
    p.cy = centre(rng);
    p.radius = radius(rng);
    p.rotation = angle(rng);
    p.brightness = bright(rng);
    return p;
}

std::vector<float> class_colour(int class_id) {
    if (class_id < 8) {
        const auto& c = kPalette[class_id];
        return {c[0], c[1], c[2]};
    }
    // golden-angle hues beyond the fixed palette
    const double h = std::fmod(class_id * 0.61803398875, 1.0) * 6.0;
    const double f = h - std::floor(h);
    const float q = static_cast<float>(1 - f), t = static_cast<float>(f);
    switch (static_cast<int>(h)) {
        case 0: return {1, t, 0.1f};
        case 1: return {q, 1, 0.1f};
        case 2: return {0.1f, 1, t};
        case 3: return {0.1f, q, 1};
        case 4: return {t, 0.1f, 1};
        default: return {1, 0.1f, q};
    }
}

int class_shape(int class_id) { return class_id % 4; }

LabeledImage render_class_instance(const RenderConfig& config, int class_id, const Pose& pose,
                                   std::uint64_t seed, Background background) {
    if (class_id < 0 || class_id >= config.class_count) {
        throw InputError("class id " + std::to_string(class_id) + " not in configured set of " +
                         std::to_string(config.class_count));
    }
    LabeledImage out;
    out.pixels = Image(config.height, config.width);
    out.class_id = class_id;
    fill_background(out.pixels, seed, background);
    InstanceRecord rec;
    rec.class_id = class_id;
    rec.mask = paint(out.pixels, class_id, pose);
    rec.box = tight_box(rec.mask, config.height, config.width);
    out.instances.push_back(std::move(rec));
    return out;
}

LabeledImage render_template(int class_id, int size, int class_count) {
    Pose canonical;
    canonical.radius = 0.42;
    return render_class_instance(RenderConfig{size, size, class_count}, class_id, canonical, 0,
                                 Background::Plain);
}

LabeledImage render_scene(const RenderConfig& config, const std::vector<int>& classes,
                          std::mt19937_64& rng, double max_occlusion) {
    const PoseRange range{0.15, 0.85, 0.10, 0.18};
    const std::size_t pixels = static_cast<std::size_t>(config.height) * config.width;
    for (int attempt = 0; attempt < 200; ++attempt) {
        LabeledImage out;
        out.pixels = Image(config.height, config.width);
        fill_background(out.pixels, rng(), Background::Textured);
        std::vector<std::vector<std::uint8_t>> full;
        std::vector<int> owner(pixels, -1);
        for (int cls : classes) {
            if (cls < 0 || cls >= config.class_count) {
                throw InputError("scene class " + std::to_string(cls) + " not in configured set");
            }
            full.push_back(paint(out.pixels, cls, sample_pose(rng, range)));
            const int idx = static_cast<int>(full.size()) - 1;
            for (std::size_t i = 0; i < pixels; ++i)
                if (full.back()[i]) owner[i] = idx;
        }
        bool ok = true;
        for (std::size_t k = 0; k < full.size() && ok; ++k) {
            InstanceRecord rec;
            rec.class_id = classes[k];
            rec.mask.assign(pixels, 0);
            long total = 0, visible = 0;
            for (std::size_t i = 0; i < pixels; ++i) {
                total += full[k][i];
                if (owner[i] == static_cast<int>(k)) {
                    rec.mask[i] = 1;
                    ++visible;
                }
            }
            if (total == 0 || visible < (1.0 - max_occlusion) * static_cast<double>(total)) {
                ok = false;
                break;
            }
            rec.box = tight_box(rec.mask, config.height, config.width);
            out.instances.push_back(std::move(rec));
        }
        if (ok) return out;
    }
    throw InputError("could not place scene instances within the occlusion limit");
}

InstanceBank::InstanceBank(RenderConfig config, std::uint64_t seed, int train_per_class,
                           int validation_per_class, PoseRange poses)
    : config_(config),
      seed_(seed),
      train_per_class_(train_per_class),
      validation_per_class_(validation_per_class),
      poses_(poses) {}

int InstanceBank::pool_size(Split split) const {
    return split == Split::Train ? train_per_class_ : validation_per_class_;
}

std::shared_ptr<const LabeledImage> InstanceBank::instance(int class_id, int index, Split split) {
    if (index < 0 || index >= pool_size(split)) {
        throw InputError("instance index " + std::to_string(index) + " outside pool");
    }
    const auto key = std::make_tuple(class_id, index, static_cast<int>(split));
    std::lock_guard lock(mutex_);
    if (auto it = cache_.find(key); it != cache_.end()) return it->second;
    std::mt19937_64 rng(derive_seed(seed_, {static_cast<std::uint64_t>(class_id),
                                            static_cast<std::uint64_t>(index),
                                            static_cast<std::uint64_t>(split)}));
    const Pose pose = sample_pose(rng, poses_);
    auto img = std::make_shared<const LabeledImage>(
        render_class_instance(config_, class_id, pose, rng(), Background::Textured));
    cache_.emplace(key, img);
    return img;
}

}  // namespace remap::env
