#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include <json.hpp>

#include "remap/diff/ops.hpp"

namespace remap::zoo {

enum class Bottleneck { Early, Late };
enum class Symmetry { Full, Partial, None };
enum class Multiplicative { Full, Partial, None };
enum class SizeClass { Ems, Small, Medium, Large };

/// One of the 24 module architectures: EMS, its early-bottleneck ablations
/// and the late-bottleneck (plain MLP) controls.
struct ArchitectureId {
    Bottleneck bottleneck = Bottleneck::Early;
    Symmetry symmetry = Symmetry::Full;
    Multiplicative multiplicative = Multiplicative::Full;
    diff::Activation activation = diff::Activation::CReS;  // downstream activation
    SizeClass size = SizeClass::Ems;

    /// e.g. "ems", "no-symm", "no-mult-symm-tanh", "late-relu-large".
    std::string canonical() const;
    /// Throws ConfigError for names outside the catalogue.
    static ArchitectureId parse(std::string_view name);
    /// The full catalogue in a fixed order (EMS first).
    static const std::vector<ArchitectureId>& all();

    /// Activation of the visual bottleneck (early architectures only).
    diff::Activation bottleneck_activation() const;
    /// Throws ConfigError when the fields do not name a catalogued architecture.
    void validate() const;
    bool operator==(const ArchitectureId&) const = default;
};

enum class TaskFamily { SR, MTS, LOC };
TaskFamily parse_family(std::string_view name);

/// Widths of the optional convolutional bottleneck: 1x1 convolutions over the
/// spatial map with the scene vector tiled onto its channels.
struct ConvBottleneck {
    int map_h = 8, map_w = 8, map_c = 32;
    int tanh_units = 128;
    std::vector<int> cres_units{128, 128};
};

struct ModuleConfig {
    std::string name = "m0";
    ArchitectureId arch;
    /// Early: (n0, n1, ..., nk) with n0 the bottleneck. Late: hidden widths.
    std::vector<int> widths{8, 8, 8};
    int k_b = 1;
    int k_f = 2;
    int scene_width = 128;  // per frame
    double init_sigma = 0.01;
    std::uint64_t seed = 1;
    std::optional<ConvBottleneck> conv;

    int action_width() const { return 3 * k_b + 2; }
    int scene_history_width() const { return (k_b + 1) * scene_width; }
    void validate() const;
};

void to_json(nlohmann::json& j, const ModuleConfig& c);
void from_json(const nlohmann::json& j, ModuleConfig& c);

/// Table of default widths: EMS-size 8 / 32 / 128 units for SR / MTS / LOC,
/// late medium 128 / 128 / 512, large 512 / 512 / 1024, small matched to the
/// EMS parameter count.
ModuleConfig default_config(const ArchitectureId& arch, TaskFamily family, int scene_width = 128,
                            std::uint64_t seed = 1);

/// Per-forward inputs. `scene` is the 1-row concatenated history
/// [Ψ_{t-k_b}, ..., Ψ_t]; `action` has one row per candidate laid out as
/// [history coords (k_b pairs) | candidate coords | history validity bits].
/// `spatial` and `scene_now` feed the convolutional bottleneck only.
struct ModuleInputs {
    diff::Var scene;
    diff::Var action;
    diff::Var spatial;
    diff::Var scene_now;
};

enum class StageKind { Bottleneck, ConvBottleneck, Joint, Hidden, Readout };

struct Stage {
    StageKind kind = StageKind::Hidden;
    diff::Activation activation = diff::Activation::Identity;
    std::vector<diff::Parameter> params;  // weight, bias pairs
    std::size_t out_width = 0;
};

/// A ReMaP module: stages applied in order, the last being the affine
/// readout to k_f logits per candidate.
class ReMaPModule {
public:
    ReMaPModule() = default;
    ReMaPModule(ModuleConfig config, std::vector<Stage> stages);

    const ModuleConfig& config() const { return config_; }
    std::size_t stage_count() const { return stages_.size(); }
    const Stage& stage(std::size_t i) const { return stages_[i]; }
    std::size_t stage_width(std::size_t i) const { return stages_[i].out_width; }

    /// Applies stage `i` to the previous composite activation. `action`
    /// replaces the inputs' action rows when valid (for transformed copies).
    diff::Var stage_forward(diff::Tape& tape, std::size_t i, diff::Var prev, const ModuleInputs& in,
                            diff::Var action = {});
    /// N x k_f logits.
    diff::Var forward(diff::Tape& tape, const ModuleInputs& in);

    /// When positive, the readout's first column is passed through a hard
    /// step mapped to ±scale (used by the analytic SR module).
    double heaviside_scale() const { return heaviside_; }
    void set_heaviside_scale(double s) { heaviside_ = s; }

    std::vector<diff::Parameter*> parameters();
    std::vector<const diff::Parameter*> parameters() const;
    std::size_t parameter_count() const;
    std::uint64_t weight_hash() const;
    void freeze();
    bool frozen() const;

    nlohmann::json checkpoint() const;
    static ReMaPModule from_checkpoint(const nlohmann::json& doc);
    void save(const std::filesystem::path& path) const;
    static ReMaPModule load(const std::filesystem::path& path);

private:
    ModuleConfig config_;
    std::vector<Stage> stages_;
    double heaviside_ = 0.0;
};

/// EMS: B = CReLU(W0 Ψ + b0); l1 = CReS(W1 (B ⊕ a) + b1); l_i = CReS(W_i l_{i-1} + b_i);
/// affine readout. Throws ConfigError unless the architecture is EMS.
ReMaPModule build_ems(const ModuleConfig& config);
/// Any catalogued architecture, EMS included.
ReMaPModule build_ablation(const ModuleConfig& config);
/// EMS with the convolutional bottleneck in front (config.conv required).
ReMaPModule build_conv_ems(const ModuleConfig& config);
/// Dispatches on config.conv and config.arch.
ReMaPModule build_module(const ModuleConfig& config);

/// Parameter count from the formula (independent of constructed shapes).
std::size_t expected_parameter_count(const ModuleConfig& config);

/// Width w for a late-bottleneck module whose parameter count is closest to
/// `target` (two hidden layers of width w).
int match_late_width(const ModuleConfig& late, std::size_t target);

/// A linear class boundary s = w·Ψ + c over one frame's scene vector.
struct Boundary {
    std::vector<double> w;
    double c = 0.0;
    double score(const std::vector<double>& scene) const;
};

/// Fits a boundary with score > 0 for label 1 and < 0 for label 0
/// (logistic regression followed by a margin check).
Boundary fit_boundary(const std::vector<std::vector<double>>& scenes, const std::vector<int>& labels,
                      int epochs = 200, double lr = 0.1);

/// Analytic reward predictor on binary SR:
/// ReLU(s)·ReLU(a_x) + ReLU(-s)·ReLU(-a_x), before the step function.
double perfect_sr_score(double s, double a_x);
/// H(perfect_sr_score(s, a_x)).
double perfect_sr_prediction(double s, double a_x);

/// Hand-set two-layer EMS (n0 = 1, n1 = 3, n2 = 6) realizing the analytic
/// predictor exactly in its readout's first column. Column 1 is constant.
/// The boundary applies to the current frame's slot of the scene history.
ReMaPModule perfect_sr_module(const Boundary& boundary, int k_b = 1, double logit_scale = 30.0);

/// Index of a_x (the candidate's horizontal coordinate) in the action vector.
inline int candidate_x_index(int k_b) { return 2 * k_b; }

}  // namespace remap::zoo
