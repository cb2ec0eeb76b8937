#pragma once

#include <cstdint>
#include <filesystem>
#include <memory>
#include <mutex>
#include <string>
#include <unordered_map>
#include <vector>

#include <json.hpp>

#include "remap/common/image.hpp"
#include "remap/diff/tape.hpp"
#include "remap/env/render.hpp"

namespace remap::backbone {

/// One 3x3 (or k x k) convolution stage, "same" padding, ReLU after.
struct ConvStage {
    int kernel = 3;
    int channels = 8;
    int stride = 2;
};

enum class Provenance { RandomFrozen, PretrainedFrozen };

struct EncoderSpec {
    int height = 64;
    int width = 64;
    std::vector<ConvStage> stages{{3, 8, 2}, {3, 16, 2}, {3, 32, 2}};
    int scene_width = 128;
    std::uint64_t seed = 1;
    Provenance provenance = Provenance::RandomFrozen;
    /// Scene vector after ReLU (default) or the raw fully-connected output.
    bool rectified_scene = true;
    /// Multiplier applied to scene and spatial features so that trained
    /// scene entries have unit mean square over the pretraining set.
    double feature_scale = 1.0;
    /// Same for the spatial map.
    double spatial_scale = 1.0;

    int map_height() const;
    int map_width() const;
    int map_channels() const { return stages.empty() ? 3 : stages.back().channels; }
};

void to_json(nlohmann::json& j, const EncoderSpec& s);
void from_json(const nlohmann::json& j, EncoderSpec& s);

struct Encoding {
    std::vector<double> scene;    // scene_width
    std::vector<double> spatial;  // map_height * map_width * map_channels, HWC
};

/// Geometry of one convolution, NHWC with rows = batch items.
struct ConvGeometry {
    int in_h = 0, in_w = 0, in_c = 0;
    int kernel = 3, stride = 1, out_c = 0;
    int pad() const { return kernel / 2; }
    int out_h() const { return (in_h + 2 * pad() - kernel) / stride + 1; }
    int out_w() const { return (in_w + 2 * pad() - kernel) / stride + 1; }
};

/// Convolution as a tape op: x is [batch, in_h*in_w*in_c], weight is
/// [out_c, kernel*kernel*in_c] in (ky, kx, c) order, bias [out_c].
diff::Var conv2d(diff::Tape& tape, diff::Var x, diff::Parameter& weight, diff::Parameter& bias,
                 const ConvGeometry& g);

/// Mean softmax cross-entropy of row logits against integer labels.
diff::Var softmax_cross_entropy(diff::Tape& tape, diff::Var logits, const std::vector<int>& labels);

/// The frozen visual encoder. After construction or loading its weights never
/// change; `encode` is a pure function of the frame.
class Encoder {
public:
    explicit Encoder(EncoderSpec spec);

    const EncoderSpec& spec() const { return spec_; }
    Encoding encode(const Image& frame) const;
    /// Batch forward to the scene vector on a caller-supplied tape (used by
    /// pretraining; rows are images).
    diff::Var forward_scene(diff::Tape& tape, diff::Var pixels, diff::Var* spatial = nullptr);

    std::uint64_t weight_hash() const;
    std::string weight_hash_hex() const;
    std::vector<diff::Parameter*> parameters();
    std::vector<const diff::Parameter*> parameters() const;

    void save(const std::filesystem::path& path) const;
    static Encoder load(const std::filesystem::path& path);
    nlohmann::json checkpoint() const;
    static Encoder from_checkpoint(const nlohmann::json& doc);

private:
    EncoderSpec spec_;
    std::vector<diff::Parameter> conv_w_, conv_b_;
    diff::Parameter fc_w_, fc_b_;
};

/// Labeled image set for pretraining and evaluation.
struct Dataset {
    std::vector<Image> images;
    std::vector<int> labels;
};

struct PretrainConfig {
    int epochs = 6;
    int batch = 32;
    double learning_rate = 2e-3;
    std::uint64_t seed = 1;
};

struct PretrainReport {
    std::vector<double> epoch_loss;
    double train_accuracy = 0.0;
    /// Accuracy of the classification head on the held-out set, before the
    /// head is discarded; negative when no held-out set was given.
    double held_out_accuracy = -1.0;
};

/// Trains the encoder plus a throwaway linear head on classification, then
/// freezes it and records the feature scale. epochs = 0 returns the seeded
/// random initialization (still frozen, still usable). Throws TrainingError
/// naming the epoch on a non-finite loss; ConfigError for < 2 classes.
Encoder pretrain(const Dataset& data, EncoderSpec spec, const PretrainConfig& config,
                 PretrainReport* report = nullptr, const Dataset* held_out = nullptr);

/// Collects the first `per_class` bank instances of each class in `classes`.
Dataset make_dataset(env::InstanceBank& bank, const std::vector<int>& classes, int per_class,
                     env::Split split);

/// Held-out accuracy of a nearest-class-mean classifier on scene vectors,
/// with class means fit on `train` (a probe of linear separability that
/// needs no trained head).
double nearest_mean_accuracy(const Encoder& encoder, const Dataset& train, const Dataset& test);

/// Thread-safe memo of encodings keyed by frame content hash.
class EncodingCache {
public:
    explicit EncodingCache(std::shared_ptr<const Encoder> encoder) : encoder_(std::move(encoder)) {}

    std::shared_ptr<const Encoding> get(const Image& frame);
    const Encoder& encoder() const { return *encoder_; }
    std::size_t size() const;
    std::size_t hits() const { return hits_; }

private:
    std::shared_ptr<const Encoder> encoder_;
    mutable std::mutex mutex_;
    std::unordered_map<std::uint64_t, std::shared_ptr<const Encoding>> cache_;
    std::size_t hits_ = 0;
};

}  // namespace remap::backbone
