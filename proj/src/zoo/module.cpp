#include "remap/zoo/module.hpp"

#include <algorithm>
#include <cmath>
#include <random>

#include "remap/common/errors.hpp"
#include "remap/diff/checkpoint.hpp"

namespace remap::zoo {

using diff::Activation;
using diff::Parameter;
using diff::Tape;
using diff::Tensor;
using diff::Var;

namespace {

constexpr Activation kNamedActivations[] = {Activation::Relu, Activation::Tanh, Activation::Sigmoid,
                                            Activation::Elu, Activation::CRelu};

std::string_view size_name(SizeClass s) {
    switch (s) {
        case SizeClass::Small: return "small";
        case SizeClass::Medium: return "medium";
        case SizeClass::Large: return "large";
        default: return "ems";
    }
}

std::size_t mult(Activation a) { return diff::width_multiplier(a); }

Parameter make_param(std::string name, std::vector<std::size_t> shape) {
    return Parameter{std::move(name), Tensor(std::move(shape)), true};
}

// Weight/bias pair for an affine map in -> out.
void add_affine(Stage& s, const std::string& prefix, std::size_t out, std::size_t in) {
    const std::string k = std::to_string(s.params.size() / 2);
    s.params.push_back(make_param(prefix + "/w" + k, {out, in}));
    s.params.push_back(make_param(prefix + "/b" + k, {out}));
}

}  // namespace

// ---- ArchitectureId ----

std::string ArchitectureId::canonical() const {
    const std::string act(diff::activation_name(activation));
    if (bottleneck == Bottleneck::Late) return "late-" + act + "-" + std::string(size_name(size));
    if (multiplicative == Multiplicative::None) return "no-mult-symm-" + act;
    if (symmetry == Symmetry::Partial) return "partial-symm";
    if (symmetry == Symmetry::None)
        return multiplicative == Multiplicative::Partial ? "no-symm-partial-mult" : "no-symm";
    return "ems";
}

const std::vector<ArchitectureId>& ArchitectureId::all() {
    static const std::vector<ArchitectureId> catalogue = [] {
        using B = Bottleneck;
        using S = Symmetry;
        using M = Multiplicative;
        std::vector<ArchitectureId> v{
            {B::Early, S::Full, M::Full, Activation::CReS, SizeClass::Ems},
            {B::Early, S::Partial, M::Full, Activation::ReluSquare, SizeClass::Ems},
            {B::Early, S::None, M::Full, Activation::ReluSquare, SizeClass::Ems},
            {B::Early, S::None, M::Partial, Activation::Sq, SizeClass::Ems},
        };
        for (auto a : kNamedActivations) v.push_back({B::Early, S::None, M::None, a, SizeClass::Ems});
        for (auto a : kNamedActivations)
            for (auto s : {SizeClass::Small, SizeClass::Medium, SizeClass::Large})
                v.push_back({B::Late, S::None, M::None, a, s});
        return v;
    }();
    return catalogue;
}

ArchitectureId ArchitectureId::parse(std::string_view name) {
    for (const auto& a : all())
        if (a.canonical() == name) return a;
    throw ConfigError("unknown architecture '" + std::string(name) + "'");
}

void ArchitectureId::validate() const {
    for (const auto& a : all())
        if (a == *this) return;
    throw ConfigError("architecture fields do not name a catalogued module");
}

Activation ArchitectureId::bottleneck_activation() const {
    if (multiplicative == Multiplicative::None) return activation;
    return symmetry == Symmetry::None ? Activation::Relu : Activation::CRelu;
}

TaskFamily parse_family(std::string_view name) {
    if (name == "sr") return TaskFamily::SR;
    if (name == "mts") return TaskFamily::MTS;
    if (name == "loc") return TaskFamily::LOC;
    throw ConfigError("unknown task family '" + std::string(name) + "'");
}

// ---- ModuleConfig ----

void ModuleConfig::validate() const {
    arch.validate();
    if (widths.empty()) throw ConfigError(name + ": no layer widths");
    for (int w : widths)
        if (w <= 0) throw ConfigError(name + ": layer widths must be positive");
    if (k_b < 0) throw ConfigError(name + ": k_b must be non-negative");
    if (k_f < 1) throw ConfigError(name + ": k_f must be at least 1");
    if (scene_width <= 0) throw ConfigError(name + ": scene width must be positive");
    const std::size_t min_layers = arch.bottleneck == Bottleneck::Early && !conv ? 2 : 1;
    if (widths.size() < min_layers) throw ConfigError(name + ": too few layers for architecture");
    if (conv) {
        if (arch.bottleneck != Bottleneck::Early) throw ConfigError(name + ": conv bottleneck needs an early architecture");
        if (conv->tanh_units <= 0 || conv->map_h <= 0 || conv->map_w <= 0 || conv->map_c <= 0)
            throw ConfigError(name + ": bad conv bottleneck shape");
    }
}

void to_json(nlohmann::json& j, const ModuleConfig& c) {
    j = nlohmann::json{{"name", c.name},          {"arch", c.arch.canonical()},
                       {"widths", c.widths},      {"k_b", c.k_b},
                       {"k_f", c.k_f},            {"scene_width", c.scene_width},
                       {"init_sigma", c.init_sigma}, {"seed", c.seed}};
    if (c.conv) {
        j["conv"] = {{"map_h", c.conv->map_h},         {"map_w", c.conv->map_w},
                     {"map_c", c.conv->map_c},         {"tanh_units", c.conv->tanh_units},
                     {"cres_units", c.conv->cres_units}};
    }
}

void from_json(const nlohmann::json& j, ModuleConfig& c) {
    c = ModuleConfig{};
    c.name = j.value("name", c.name);
    c.arch = ArchitectureId::parse(j.value("arch", std::string("ems")));
    c.widths = j.value("widths", c.widths);
    c.k_b = j.value("k_b", c.k_b);
    c.k_f = j.value("k_f", c.k_f);
    c.scene_width = j.value("scene_width", c.scene_width);
    c.init_sigma = j.value("init_sigma", c.init_sigma);
    c.seed = j.value("seed", c.seed);
    if (j.contains("conv")) {
        const auto& v = j.at("conv");
        ConvBottleneck cb;
        cb.map_h = v.value("map_h", cb.map_h);
        cb.map_w = v.value("map_w", cb.map_w);
        cb.map_c = v.value("map_c", cb.map_c);
        cb.tanh_units = v.value("tanh_units", cb.tanh_units);
        cb.cres_units = v.value("cres_units", cb.cres_units);
        c.conv = cb;
    }
}

ModuleConfig default_config(const ArchitectureId& arch, TaskFamily family, int scene_width,
                            std::uint64_t seed) {
    ModuleConfig c;
    c.arch = arch;
    c.scene_width = scene_width;
    c.seed = seed;
    const int ems = family == TaskFamily::SR ? 8 : family == TaskFamily::MTS ? 32 : 128;
    if (arch.bottleneck == Bottleneck::Early) {
        c.widths = {ems, ems, ems};
    } else if (arch.size == SizeClass::Medium) {
        c.widths.assign(2, family == TaskFamily::LOC ? 512 : 128);
    } else if (arch.size == SizeClass::Large) {
        c.widths.assign(2, family == TaskFamily::LOC ? 1024 : 512);
    } else {
        ModuleConfig reference = c;
        reference.arch = ArchitectureId::parse("ems");
        reference.widths = {ems, ems, ems};
        const int w = match_late_width(c, expected_parameter_count(reference));
        c.widths = {w, w};
    }
    return c;
}

std::size_t expected_parameter_count(const ModuleConfig& c) {
    auto dense = [](std::size_t in, std::size_t out) { return in * out + out; };
    const std::size_t action = static_cast<std::size_t>(c.action_width());
    const std::size_t m = mult(c.arch.activation);
    std::size_t total = 0, in = 0;
    std::size_t first = 0;
    if (c.conv) {
        const auto& cv = *c.conv;
        std::size_t ch = static_cast<std::size_t>(cv.map_c + c.scene_width);
        total += dense(ch, static_cast<std::size_t>(cv.tanh_units));
        ch = static_cast<std::size_t>(cv.tanh_units);
        for (int u : cv.cres_units) {
            total += dense(ch, static_cast<std::size_t>(u));
            ch = 4 * static_cast<std::size_t>(u);
        }
        in = static_cast<std::size_t>(cv.map_h * cv.map_w) * ch + action;
    } else if (c.arch.bottleneck == Bottleneck::Early) {
        const std::size_t n0 = static_cast<std::size_t>(c.widths[0]);
        total += dense(static_cast<std::size_t>(c.scene_history_width()), n0);
        in = n0 * mult(c.arch.bottleneck_activation()) + action;
        first = 1;
    } else {
        in = static_cast<std::size_t>(c.scene_history_width()) + action;
    }
    for (std::size_t i = first; i < c.widths.size(); ++i) {
        const std::size_t n = static_cast<std::size_t>(c.widths[i]);
        total += dense(in, n);
        in = n * m;
    }
    return total + dense(in, static_cast<std::size_t>(c.k_f));
}

int match_late_width(const ModuleConfig& late, std::size_t target) {
    ModuleConfig probe = late;
    int best = 1;
    std::size_t best_gap = SIZE_MAX;
    for (int w = 1; w <= 4096; ++w) {
        probe.widths = {w, w};
        const std::size_t n = expected_parameter_count(probe);
        const std::size_t gap = n > target ? n - target : target - n;
        if (gap < best_gap) {
            best_gap = gap;
            best = w;
        }
        if (n > target) break;
    }
    return best;
}

// ---- ReMaPModule ----

ReMaPModule::ReMaPModule(ModuleConfig config, std::vector<Stage> stages)
    : config_(std::move(config)), stages_(std::move(stages)) {}

Var ReMaPModule::stage_forward(Tape& tape, std::size_t i, Var prev, const ModuleInputs& in, Var action) {
    Stage& s = stages_.at(i);
    const Var act = action.valid() ? action : in.action;
    switch (s.kind) {
        case StageKind::Bottleneck:
            return diff::activate(tape, s.activation, diff::affine(tape, in.scene, s.params[0], s.params[1]));
        case StageKind::ConvBottleneck: {
            const auto& cv = *config_.conv;
            const std::size_t positions = static_cast<std::size_t>(cv.map_h * cv.map_w);
            if (!in.spatial.valid() || !in.scene_now.valid()) {
                throw InputError(config_.name + ": conv bottleneck needs spatial features");
            }
            const Var map = diff::reshape(tape, in.spatial, positions, static_cast<std::size_t>(cv.map_c));
            const Var tiled[] = {map, in.scene_now};
            Var h = diff::pointwise(tape, "tanh", diff::affine_concat(tape, tiled, s.params[0], s.params[1]));
            for (std::size_t k = 2; k < s.params.size(); k += 2)
                h = diff::cres(tape, diff::affine(tape, h, s.params[k], s.params[k + 1]));
            return diff::reshape(tape, h, 1, tape.value(h).size());
        }
        case StageKind::Joint: {
            const Var visual = prev.valid() ? prev : in.scene;
            const Var parts[] = {visual, act};
            return diff::activate(tape, s.activation, diff::affine_concat(tape, parts, s.params[0], s.params[1]));
        }
        case StageKind::Hidden:
            return diff::activate(tape, s.activation, diff::affine(tape, prev, s.params[0], s.params[1]));
        case StageKind::Readout: {
            const Var z = diff::affine(tape, prev, s.params[0], s.params[1]);
            if (heaviside_ <= 0.0) return z;
            const std::size_t kf = tape.value(z).cols();
            const Var step = diff::heaviside_logit(tape, diff::slice_cols(tape, z, 0, 1), heaviside_);
            if (kf == 1) return step;
            const Var parts[] = {step, diff::slice_cols(tape, z, 1, kf)};
            return diff::concat(tape, parts);
        }
    }
    throw ConfigError("unknown stage kind");
}

Var ReMaPModule::forward(Tape& tape, const ModuleInputs& in) {
    const auto& s = tape.value(in.scene);
    const std::size_t rows = tape.value(in.action).rows();
    if (s.cols() != static_cast<std::size_t>(config_.scene_history_width()) || (s.rows() != 1 && s.rows() != rows)) {
        throw InputError(config_.name + ": scene input " + s.shape_string() + ", expected 1x" +
                         std::to_string(config_.scene_history_width()));
    }
    if (tape.value(in.action).cols() != static_cast<std::size_t>(config_.action_width())) {
        throw InputError(config_.name + ": action width " + std::to_string(tape.value(in.action).cols()) +
                         ", expected " + std::to_string(config_.action_width()));
    }
    Var h;
    for (std::size_t i = 0; i < stages_.size(); ++i) h = stage_forward(tape, i, h, in);
    return h;
}

std::vector<Parameter*> ReMaPModule::parameters() {
    std::vector<Parameter*> out;
    for (auto& s : stages_)
        for (auto& p : s.params) out.push_back(&p);
    return out;
}

std::vector<const Parameter*> ReMaPModule::parameters() const {
    std::vector<const Parameter*> out;
    for (const auto& s : stages_)
        for (const auto& p : s.params) out.push_back(&p);
    return out;
}

std::size_t ReMaPModule::parameter_count() const {
    std::size_t n = 0;
    for (const auto* p : parameters()) n += p->tensor.size();
    return n;
}

std::uint64_t ReMaPModule::weight_hash() const {
    const auto ps = parameters();
    return diff::parameter_hash(ps);
}

void ReMaPModule::freeze() {
    for (auto* p : parameters()) p->trainable = false;
}

bool ReMaPModule::frozen() const {
    const auto ps = parameters();
    return std::none_of(ps.begin(), ps.end(), [](const Parameter* p) { return p->trainable; });
}

nlohmann::json ReMaPModule::checkpoint() const {
    nlohmann::json spec = config_;
    spec["heaviside"] = heaviside_;
    spec["frozen"] = frozen();
    const auto ps = parameters();
    return diff::make_checkpoint("module", spec, ps);
}

ReMaPModule ReMaPModule::from_checkpoint(const nlohmann::json& doc) {
    if (doc.value("kind", std::string()) != "module") throw InputError("checkpoint is not a module");
    const auto& spec = doc.at("spec");
    ReMaPModule m = build_module(spec.get<ModuleConfig>());
    diff::restore_parameters(doc, m.parameters());
    m.heaviside_ = spec.value("heaviside", 0.0);
    if (spec.value("frozen", false)) m.freeze();
    return m;
}

void ReMaPModule::save(const std::filesystem::path& path) const { diff::write_json(path, checkpoint()); }

ReMaPModule ReMaPModule::load(const std::filesystem::path& path) {
    return from_checkpoint(diff::read_json(path));
}

// ---- builders ----

namespace {

void init_weights(std::vector<Stage>& stages, double sigma, std::uint64_t seed) {
    if (sigma <= 0.0) return;
    std::mt19937_64 rng(seed);
    std::normal_distribution<double> n(0.0, sigma);
    for (auto& s : stages)
        for (std::size_t k = 0; k < s.params.size(); k += 2)
            for (double& v : s.params[k].tensor.values) v = n(rng);
}

std::vector<Stage> downstream(const ModuleConfig& c, std::size_t first, std::size_t in, std::size_t action) {
    std::vector<Stage> stages;
    const Activation act = c.arch.activation;
    for (std::size_t i = first; i < c.widths.size(); ++i) {
        Stage s;
        s.kind = i == first ? StageKind::Joint : StageKind::Hidden;
        s.activation = act;
        const std::size_t n = static_cast<std::size_t>(c.widths[i]);
        add_affine(s, c.name + "/s" + std::to_string(i), n, in + (i == first ? action : 0));
        s.out_width = n * mult(act);
        in = s.out_width;
        stages.push_back(std::move(s));
    }
    Stage r;
    r.kind = StageKind::Readout;
    add_affine(r, c.name + "/readout", static_cast<std::size_t>(c.k_f), in);
    r.out_width = static_cast<std::size_t>(c.k_f);
    stages.push_back(std::move(r));
    return stages;
}

}  // namespace

ReMaPModule build_ablation(const ModuleConfig& c) {
    c.validate();
    if (c.conv) return build_conv_ems(c);
    const std::size_t action = static_cast<std::size_t>(c.action_width());
    std::vector<Stage> stages;
    if (c.arch.bottleneck == Bottleneck::Early) {
        Stage b;
        b.kind = StageKind::Bottleneck;
        b.activation = c.arch.bottleneck_activation();
        const std::size_t n0 = static_cast<std::size_t>(c.widths[0]);
        add_affine(b, c.name + "/s0", n0, static_cast<std::size_t>(c.scene_history_width()));
        b.out_width = n0 * mult(b.activation);
        const std::size_t bw = b.out_width;
        stages.push_back(std::move(b));
        for (auto& s : downstream(c, 1, bw, action)) stages.push_back(std::move(s));
    } else {
        stages = downstream(c, 0, static_cast<std::size_t>(c.scene_history_width()), action);
    }
    init_weights(stages, c.init_sigma, c.seed);
    return ReMaPModule(c, std::move(stages));
}

ReMaPModule build_ems(const ModuleConfig& c) {
    if (c.arch.canonical() != "ems") throw ConfigError(c.name + ": build_ems needs the EMS architecture");
    return build_ablation(c);
}

ReMaPModule build_conv_ems(const ModuleConfig& c) {
    if (!c.conv) throw ConfigError(c.name + ": no convolutional bottleneck configured");
    c.validate();
    const auto& cv = *c.conv;
    Stage b;
    b.kind = StageKind::ConvBottleneck;
    b.activation = Activation::Identity;
    std::size_t ch = static_cast<std::size_t>(cv.map_c + c.scene_width);
    add_affine(b, c.name + "/conv", static_cast<std::size_t>(cv.tanh_units), ch);
    ch = static_cast<std::size_t>(cv.tanh_units);
    for (int u : cv.cres_units) {
        add_affine(b, c.name + "/conv", static_cast<std::size_t>(u), ch);
        ch = 4 * static_cast<std::size_t>(u);
    }
    b.out_width = static_cast<std::size_t>(cv.map_h * cv.map_w) * ch;
    const std::size_t bw = b.out_width;
    std::vector<Stage> stages;
    stages.push_back(std::move(b));
    for (auto& s : downstream(c, 0, bw, static_cast<std::size_t>(c.action_width()))) stages.push_back(std::move(s));
    init_weights(stages, c.init_sigma, c.seed);
    return ReMaPModule(c, std::move(stages));
}

ReMaPModule build_module(const ModuleConfig& c) { return c.conv ? build_conv_ems(c) : build_ablation(c); }

// ---- boundary and the analytic SR module ----

double Boundary::score(const std::vector<double>& scene) const {
    double s = c;
    for (std::size_t i = 0; i < w.size(); ++i) s += w[i] * scene[i];
    return s;
}

Boundary fit_boundary(const std::vector<std::vector<double>>& scenes, const std::vector<int>& labels,
                      int epochs, double lr) {
    if (scenes.empty() || scenes.size() != labels.size()) throw ConfigError("boundary fit needs labeled scenes");
    const std::size_t D = scenes.front().size();
    Boundary b{std::vector<double>(D, 0.0), 0.0};
    std::vector<double> gw(D);
    for (int e = 0; e < epochs; ++e) {
        std::fill(gw.begin(), gw.end(), 0.0);
        double gc = 0.0;
        for (std::size_t i = 0; i < scenes.size(); ++i) {
            const double g = diff::sigmoid(b.score(scenes[i])) - labels[i];
            for (std::size_t d = 0; d < D; ++d) gw[d] += g * scenes[i][d];
            gc += g;
        }
        const double n = static_cast<double>(scenes.size());
        for (std::size_t d = 0; d < D; ++d) b.w[d] -= lr * gw[d] / n;
        b.c -= lr * gc / n;
    }
    return b;
}

double perfect_sr_score(double s, double a_x) {
    auto relu = [](double v) { return v > 0 ? v : 0.0; };
    return relu(s) * relu(a_x) + relu(-s) * relu(-a_x);
}

double perfect_sr_prediction(double s, double a_x) { return perfect_sr_score(s, a_x) > 0 ? 1.0 : 0.0; }

ReMaPModule perfect_sr_module(const Boundary& boundary, int k_b, double logit_scale) {
    ModuleConfig c;
    c.name = "perfect-sr";
    c.arch = ArchitectureId::parse("ems");
    c.widths = {1, 3, 6};
    c.k_b = k_b;
    c.k_f = 2;
    c.scene_width = static_cast<int>(boundary.w.size());
    c.init_sigma = 0.0;
    ReMaPModule m = build_ems(c);
    auto params = m.parameters();
    auto& w0 = params[0]->tensor;
    const std::size_t D = boundary.w.size();
    const std::size_t current = static_cast<std::size_t>(k_b) * D;
    for (std::size_t d = 0; d < D; ++d) w0.values[current + d] = boundary.w[d];
    params[1]->tensor.values[0] = boundary.c;

    // l1 units: u = ReLU(s), w = ReLU(-s) pass through; a_x is split by CReS
    auto& w1 = params[2]->tensor;
    const std::size_t ax = 2 + static_cast<std::size_t>(candidate_x_index(k_b));
    w1(0, 0) = 1.0;
    w1(1, 1) = 1.0;
    w1(2, ax) = 1.0;

    // l2 units over CReS(l1) = [u, w, v | 0, 0, v' | squares...]:
    // u+v, u-v, v-u, w+v', w-v', v'-w
    auto& w2 = params[4]->tensor;
    const std::size_t U = 0, W = 1, V = 2, Vn = 5;
    const std::pair<std::size_t, std::size_t> pairs[] = {{U, V}, {W, Vn}};
    for (std::size_t k = 0; k < 2; ++k) {
        const auto [a, b] = pairs[k];
        w2(3 * k, a) = 1.0;
        w2(3 * k, b) = 1.0;
        w2(3 * k + 1, a) = 1.0;
        w2(3 * k + 1, b) = -1.0;
        w2(3 * k + 2, a) = -1.0;
        w2(3 * k + 2, b) = 1.0;
    }
    // readout: ((a+b)² - (a-b)² - (b-a)²₊) / 4 = a·b for a, b >= 0, from the ReLU² block
    auto& w3 = params[6]->tensor;
    const std::size_t sq = 12;
    const double coeff[] = {0.25, -0.25, -0.25, 0.25, -0.25, -0.25};
    for (std::size_t u = 0; u < 6; ++u) w3(0, sq + u) = coeff[u];
    m.set_heaviside_scale(logit_scale);
    m.freeze();
    return m;
}

}  // namespace remap::zoo
