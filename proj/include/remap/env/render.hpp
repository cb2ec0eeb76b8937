#pragma once

#include <cstdint>
#include <map>
#include <memory>
#include <mutex>
#include <random>
#include <tuple>
#include <vector>

#include "remap/common/image.hpp"

namespace remap::env {

/// Half-open pixel box: x in [x0, x1), y in [y0, y1).
struct BoundingBox {
    int x0 = 0, y0 = 0, x1 = 0, y1 = 0;

    long area() const;
    bool contains(int x, int y) const { return x >= x0 && x < x1 && y >= y0 && y < y1; }
    bool operator==(const BoundingBox&) const = default;
};

/// Intersection over union of two half-open boxes; 0 when both are empty.
double iou(const BoundingBox& a, const BoundingBox& b);

struct InstanceRecord {
    int class_id = 0;
    std::vector<std::uint8_t> mask;  // height * width, 1 inside
    BoundingBox box;                 // tight box of mask
    long mask_area() const;
};

struct LabeledImage {
    Image pixels;
    int class_id = -1;  // main class, -1 for multi-instance scenes and blank screens
    std::vector<InstanceRecord> instances;
};

/// Placement of one object: centre and radius as fractions of the screen,
/// rotation in radians, and a small brightness jitter.
struct Pose {
    double cx = 0.5, cy = 0.5;
    double radius = 0.3;
    double rotation = 0.0;
    double brightness = 1.0;
};

struct PoseRange {
    double centre_min = 0.3, centre_max = 0.7;
    double radius_min = 0.22, radius_max = 0.36;
};

Pose sample_pose(std::mt19937_64& rng, const PoseRange& range = {});

enum class Background { Plain, Textured };

struct RenderConfig {
    int height = 64;
    int width = 64;
    int class_count = 8;
};

/// Classes come from a shape x colour grid: shape = id % 4
/// (disk, square, triangle, cross) and one distinct hue per id.
std::vector<float> class_colour(int class_id);
int class_shape(int class_id);

/// Deterministic procedural rendering of a single instance. `seed` drives the
/// background texture only; pose carries all geometric variation.
LabeledImage render_class_instance(const RenderConfig& config, int class_id, const Pose& pose,
                                   std::uint64_t seed, Background background = Background::Textured);

/// Canonical, unrotated, centred rendering on black used as a match-screen
/// button and as the scene-MTS sample screen.
LabeledImage render_template(int class_id, int size, int class_count);

/// Multi-instance scene: each listed class placed once (in order, later ones
/// on top), masks are the visible parts. Every instance keeps at least
/// `1 - max_occlusion` of its unoccluded area; placement retries until it does.
LabeledImage render_scene(const RenderConfig& config, const std::vector<int>& classes,
                          std::mt19937_64& rng, double max_occlusion = 0.3);

enum class Split { Train, Validation };

/// Finite pools of rendered instances per class, built lazily and shared
/// between tasks. Thread-safe.
class InstanceBank {
public:
    InstanceBank(RenderConfig config, std::uint64_t seed, int train_per_class = 200,
                 int validation_per_class = 50, PoseRange poses = {});

    std::shared_ptr<const LabeledImage> instance(int class_id, int index, Split split);
    int pool_size(Split split) const;
    const RenderConfig& config() const { return config_; }

private:
    RenderConfig config_;
    std::uint64_t seed_;
    int train_per_class_;
    int validation_per_class_;
    PoseRange poses_;
    std::mutex mutex_;
    std::map<std::tuple<int, int, int>, std::shared_ptr<const LabeledImage>> cache_;
};

}  // namespace remap::env
