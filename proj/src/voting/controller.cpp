#include "remap/voting/controller.hpp"

#include <cmath>
#include <random>

#include "remap/common/errors.hpp"
#include "remap/common/random.hpp"
#include "remap/diff/checkpoint.hpp"

namespace remap::voting {

using diff::Parameter;
using diff::Tape;
using diff::Tensor;
using diff::Var;

std::string_view vote_mode_name(VoteMode m) { return m == VoteMode::Layer ? "layer" : "unit"; }

VoteMode parse_vote_mode(std::string_view name) {
    if (name == "layer") return VoteMode::Layer;
    if (name == "unit") return VoteMode::Unit;
    throw ConfigError("unknown voting mode '" + std::string(name) + "'");
}

void to_json(nlohmann::json& j, const VotingConfig& c) {
    const auto& i = c.init;
    const auto& t = c.transform;
    j = nlohmann::json{
        {"mode", vote_mode_name(c.mode)},
        {"init",
         {{"mu0", i.mu0}, {"b0", i.b0}, {"mu1", i.mu1}, {"b1", i.b1}, {"new_mu", i.new_mu}, {"new_bias", i.new_bias},
          {"spread", i.spread}}},
        {"transforms", c.transforms},
        {"transform",
         {{"action_noise", t.action_noise}, {"action_bias", t.action_bias}, {"action_lr", t.action_lr},
          {"adapter_units", t.adapter_units}, {"adapter_eps", t.adapter_eps}, {"adapter_bias", t.adapter_bias},
          {"adapter_lr", t.adapter_lr}}},
        {"learning_rate", c.learning_rate},
        {"force_new", c.force_new},
        {"seed", c.seed}};
}

void from_json(const nlohmann::json& j, VotingConfig& c) {
    c = VotingConfig{};
    c.mode = parse_vote_mode(j.value("mode", std::string("layer")));
    if (j.contains("init")) {
        const auto& v = j.at("init");
        auto& i = c.init;
        i.mu0 = v.value("mu0", i.mu0);
        i.b0 = v.value("b0", i.b0);
        i.mu1 = v.value("mu1", i.mu1);
        i.b1 = v.value("b1", i.b1);
        i.new_mu = v.value("new_mu", i.new_mu);
        i.new_bias = v.value("new_bias", i.new_bias);
        i.spread = v.value("spread", i.spread);
    }
    c.transforms = j.value("transforms", c.transforms);
    if (j.contains("transform")) {
        const auto& v = j.at("transform");
        auto& t = c.transform;
        t.action_noise = v.value("action_noise", t.action_noise);
        t.action_bias = v.value("action_bias", t.action_bias);
        t.action_lr = v.value("action_lr", t.action_lr);
        t.adapter_units = v.value("adapter_units", t.adapter_units);
        t.adapter_eps = v.value("adapter_eps", t.adapter_eps);
        t.adapter_bias = v.value("adapter_bias", t.adapter_bias);
        t.adapter_lr = v.value("adapter_lr", t.adapter_lr);
    }
    c.learning_rate = j.value("learning_rate", c.learning_rate);
    c.force_new = j.value("force_new", c.force_new);
    c.seed = j.value("seed", c.seed);
    if (!(c.learning_rate > 0.0)) throw ConfigError("voting learning rate must be positive");
    if (c.transform.adapter_units < 1) throw ConfigError("adapter needs at least one unit");
}

// ---- votes ----

std::vector<VoteLayer> init_votes(std::size_t candidates, std::size_t old_count,
                                  const std::vector<std::size_t>& widths, const VoteInit& init, VoteMode mode,
                                  std::uint64_t seed) {
    if (old_count > candidates) throw ConfigError("more old modules than vote candidates");
    std::mt19937_64 rng(seed);
    auto draw = [&](double mu) {
        return init.spread > 0.0 ? std::abs(std::normal_distribution<double>(mu, init.spread)(rng)) : std::abs(mu);
    };
    std::vector<VoteLayer> out;
    for (std::size_t i = 0; i < widths.size(); ++i) {
        const std::size_t L = widths[i];
        const std::size_t C = candidates;
        // column-wise: everything feeding candidate k's score uses k's scheme
        std::vector<double> mu(C), b(C);
        for (std::size_t k = 0; k < C; ++k) {
            const bool old = k < old_count;
            mu[k] = old ? (i == 0 ? init.mu0 : init.mu1) : init.new_mu;
            b[k] = old ? (i == 0 ? init.b0 : init.b1) : init.new_bias;
        }
        VoteLayer v;
        const std::string name = "vote/s" + std::to_string(i);
        if (mode == VoteMode::Layer) {
            v.weight = Parameter{name + "/w", Tensor({C * L, C}), true};
            v.bias = Parameter{name + "/b", Tensor({C}), true};
            for (std::size_t r = 0; r < C * L; ++r)
                for (std::size_t k = 0; k < C; ++k)
                    v.weight.tensor.values[r * C + k] = draw(mu[k]);
            for (std::size_t k = 0; k < C; ++k) v.bias.tensor.values[k] = b[k];
        } else {
            v.weight = Parameter{name + "/w", Tensor({L, C, C}), true};
            v.bias = Parameter{name + "/b", Tensor({L, C}), true};
            for (std::size_t j = 0; j < L; ++j)
                for (std::size_t k = 0; k < C; ++k) {
                    for (std::size_t m = 0; m < C; ++m)
                        v.weight.tensor.values[(j * C + k) * C + m] = draw(mu[k]);
                    v.bias.tensor.values[j * C + k] = b[k];
                }
        }
        out.push_back(std::move(v));
    }
    return out;
}

// ---- transforms ----

TransformStack::TransformStack(std::size_t target, int k_b, int k_f, const TransformConfig& config,
                               std::uint64_t seed)
    : target_(target), k_b_(k_b), config_(config) {
    const std::size_t coords = static_cast<std::size_t>(2 * k_b + 2);
    const std::size_t kf = static_cast<std::size_t>(k_f);
    const std::size_t units = static_cast<std::size_t>(config.adapter_units);
    if (units < kf) throw ConfigError("adapter needs at least k_f hidden units");
    std::mt19937_64 rng(seed);
    auto noise = [&rng](double sd) { return sd > 0.0 ? std::normal_distribution<double>(0.0, sd)(rng) : 0.0; };

    action_w_ = Parameter{"transform/action/w", Tensor({coords, coords}), true};
    action_b_ = Parameter{"transform/action/b", Tensor({coords}, config.action_bias), true};
    for (std::size_t r = 0; r < coords; ++r)
        for (std::size_t c = 0; c < coords; ++c)
            action_w_.tensor.values[r * coords + c] = (r == c ? 1.0 : 0.0) + noise(config.action_noise);

    const std::size_t in = kf + kf * coords + coords;
    map_w1_ = Parameter{"transform/map/w1", Tensor({units, in}), true};
    map_b1_ = Parameter{"transform/map/b1", Tensor({units}, config.adapter_bias), true};
    for (std::size_t u = 0; u < units; ++u)
        for (std::size_t c = 0; c < in; ++c)
            map_w1_.tensor.values[u * in + c] = (u == c && u < kf ? 1.0 : 0.0) + noise(config.adapter_eps);
    // CReS lays out [ReLU(x) | ReLU(-x) | ReLU²(x) | ReLU²(-x)]; +1/-1 on the
    // first two blocks passes x_j through
    const std::size_t hidden = 4 * units;
    map_w2_ = Parameter{"transform/map/w2", Tensor({kf, hidden}), true};
    map_b2_ = Parameter{"transform/map/b2", Tensor({kf}, config.adapter_bias), true};
    for (std::size_t j = 0; j < kf; ++j)
        for (std::size_t c = 0; c < hidden; ++c) {
            double base = 0.0;
            if (c == j) base = 1.0;
            if (c == units + j) base = -1.0;
            map_w2_.tensor.values[j * hidden + c] = base + noise(config.adapter_eps);
        }
}

Var TransformStack::transform_action(Tape& tape, Var action) {
    const std::size_t coords = static_cast<std::size_t>(2 * k_b_ + 2);
    const std::size_t width = tape.value(action).cols();
    const Var moved = diff::affine(tape, diff::slice_cols(tape, action, 0, coords), action_w_, action_b_);
    if (width == coords) return moved;
    const Var parts[] = {moved, diff::slice_cols(tape, action, coords, width)};
    return diff::concat(tape, parts);
}

Var TransformStack::transform_map(Tape& tape, Var maps, Var action) {
    const std::size_t coords = static_cast<std::size_t>(2 * k_b_ + 2);
    const Var a = diff::slice_cols(tape, action, 0, coords);
    const Var gated = diff::outer_rows(tape, maps, diff::pointwise(tape, "relu", a));
    const Var parts[] = {maps, gated, a};
    const Var h = diff::cres(tape, diff::affine_concat(tape, parts, map_w1_, map_b1_));
    return diff::affine(tape, h, map_w2_, map_b2_);
}

void TransformStack::register_parameters(diff::Adam& adam, bool action, bool map) {
    if (action) {
        adam.add(action_w_, config_.action_lr);
        adam.add(action_b_, config_.action_lr);
    }
    if (map) {
        adam.add(map_w1_, config_.adapter_lr);
        adam.add(map_b1_, config_.adapter_lr);
        adam.add(map_w2_, config_.adapter_lr);
        adam.add(map_b2_, config_.adapter_lr);
    }
}

std::vector<Parameter*> TransformStack::parameters() {
    return {&action_w_, &action_b_, &map_w1_, &map_b1_, &map_w2_, &map_b2_};
}

TransformedModel::TransformedModel(zoo::ReMaPModule& base, const TransformConfig& config, std::uint64_t seed,
                                   bool action, bool map)
    : base_(&base),
      stack_(0, base.config().k_b, base.config().k_f, config, seed),
      action_(action),
      map_(map) {
    base.freeze();
}

Var TransformedModel::forward(Tape& tape, const zoo::ModuleInputs& in) {
    const Var moved = stack_.transform_action(tape, in.action);
    Var h;
    for (std::size_t i = 0; i < base_->stage_count(); ++i) h = base_->stage_forward(tape, i, h, in, moved);
    return stack_.transform_map(tape, h, in.action);
}

void TransformedModel::register_parameters(diff::Adam& adam) { stack_.register_parameters(adam, action_, map_); }

// ---- composite ----

VotingModel::VotingModel(zoo::ModuleConfig module_config, VotingConfig config)
    : config_(std::move(config)), module_config_(std::move(module_config)) {
    module_config_.validate();
    modules_.push_back(build_new(0));
}

VotingModel::VotingModel(zoo::ReMaPModule initial, VotingConfig config)
    : config_(std::move(config)), module_config_(initial.config()) {
    modules_.push_back(std::move(initial));
}

zoo::ReMaPModule VotingModel::build_new(std::uint64_t index) const {
    zoo::ModuleConfig c = module_config_;
    c.name = "m" + std::to_string(index);
    if (index > 0) c.seed = derive_seed(module_config_.seed, {0xa110c, index});
    return zoo::build_module(c);
}

std::vector<std::size_t> VotingModel::stage_widths() const {
    const auto& m = modules_.front();
    std::vector<std::size_t> w;
    for (std::size_t i = 0; i < m.stage_count(); ++i) w.push_back(m.stage_width(i));
    return w;
}

void VotingModel::allocate() {
    for (auto& m : modules_) m.freeze();
    ++allocations_;
    const std::size_t prior = modules_.size() - 1;
    auto fresh = build_new(allocations_);
    const auto& ref = modules_.front();
    if (fresh.stage_count() != ref.stage_count()) throw ConfigError("new module is not shape-compatible");
    for (std::size_t i = 0; i < ref.stage_count(); ++i)
        if (fresh.stage_width(i) != ref.stage_width(i)) throw ConfigError("new module is not shape-compatible");
    modules_.push_back(std::move(fresh));
    // the previous stack belonged to an older module and is dropped
    transform_.reset();
    if (config_.transforms) {
        transform_ = std::make_unique<TransformStack>(prior, module_config_.k_b, module_config_.k_f,
                                                      config_.transform,
                                                      derive_seed(config_.seed, {0x7f, allocations_}));
    }
    const std::size_t C = candidate_count();
    votes_ = init_votes(C, modules_.size() - 1, stage_widths(), config_.init, config_.mode,
                        derive_seed(config_.seed, {0x707e, allocations_}));
    last_votes_.clear();
}

bool VotingModel::on_cue(long /*step*/) {
    allocate();
    return true;
}

Var VotingModel::forward(Tape& tape, const zoo::ModuleInputs& in) {
    const std::size_t C = candidate_count();
    const std::size_t olds = modules_.size() - 1;
    const std::size_t stages = modules_.front().stage_count();
    zoo::ReMaPModule& newest = modules_.back();
    if (C == 1 || config_.force_new) return newest.forward(tape, in);

    // module checks (widths, rows) happen once through the newest member
    const auto& s = tape.value(in.scene);
    if (s.cols() != static_cast<std::size_t>(module_config_.scene_history_width()) ||
        tape.value(in.action).cols() != static_cast<std::size_t>(module_config_.action_width())) {
        throw InputError("composite input widths do not match the module set");
    }
    Var moved;
    if (transform_) moved = transform_->transform_action(tape, in.action);

    const bool record = !tape.recording();
    if (record) last_votes_.assign(stages, std::vector<double>(C, 0.0));
    Var h;
    std::vector<Var> outs(C);
    for (std::size_t i = 0; i < stages; ++i) {
        for (std::size_t k = 0; k < olds; ++k) outs[k] = modules_[k].stage_forward(tape, i, h, in);
        if (transform_) {
            auto& base = modules_[transform_->target()];
            Var o = base.stage_forward(tape, i, h, in, moved);
            if (i + 1 == stages) o = transform_->transform_map(tape, o, in.action);
            outs[olds] = o;
        }
        outs[C - 1] = newest.stage_forward(tape, i, h, in);
        Tensor probs;
        h = config_.mode == VoteMode::Layer
                ? diff::layer_vote_mix(tape, outs, votes_[i].weight, votes_[i].bias, record ? &probs : nullptr)
                : diff::unit_vote_mix(tape, outs, votes_[i].weight, votes_[i].bias, record ? &probs : nullptr);
        if (record) {
            // average over candidates (rows) and units
            const std::size_t groups = probs.cols() / C;
            const double n = static_cast<double>(probs.rows() * groups);
            for (std::size_t r = 0; r < probs.rows(); ++r)
                for (std::size_t g = 0; g < groups; ++g)
                    for (std::size_t k = 0; k < C; ++k) last_votes_[i][k] += probs(r, g * C + k) / n;
        }
    }
    return h;
}

void VotingModel::register_parameters(diff::Adam& adam) {
    for (auto& m : modules_)
        for (auto* p : m.parameters())
            if (p->trainable) adam.add(*p, config_.learning_rate);
    if (candidate_count() == 1 || config_.force_new) return;
    for (auto& v : votes_) {
        adam.add(v.weight, config_.learning_rate);
        adam.add(v.bias, config_.learning_rate);
    }
    if (transform_) transform_->register_parameters(adam);
}

double VotingModel::reuse_fraction(std::size_t candidate) const {
    const std::size_t C = candidate_count();
    if (candidate >= C) throw InputError("no vote candidate " + std::to_string(candidate));
    if (C == 1) return 1.0;
    if (config_.force_new) return candidate == C - 1 ? 1.0 : 0.0;
    if (last_votes_.empty()) throw InputError("reuse fraction needs a completed forward pass");
    double s = 0.0;
    for (const auto& layer : last_votes_) s += layer[candidate];
    return s / static_cast<double>(last_votes_.size());
}

void VotingModel::after_step(long step) {
    if (vote_log_ == nullptr || last_votes_.empty()) return;
    for (std::size_t i = 0; i < last_votes_.size(); ++i) {
        nlohmann::json rec{{"step", step}, {"layer", i}, {"weights", last_votes_[i]}};
        *vote_log_ << rec.dump() << '\n';
    }
}

nlohmann::json VotingModel::checkpoint() const {
    nlohmann::json spec;
    spec["voting"] = config_;
    spec["module_config"] = module_config_;
    spec["allocations"] = allocations_;
    spec["modules"] = nlohmann::json::array();
    for (const auto& m : modules_) spec["modules"].push_back(m.checkpoint());
    spec["transform_target"] = transform_ ? static_cast<long>(transform_->target()) : -1L;
    std::vector<const Parameter*> ps;
    for (const auto& v : votes_) {
        ps.push_back(&v.weight);
        ps.push_back(&v.bias);
    }
    if (transform_) {
        for (auto* p : transform_->parameters()) ps.push_back(p);
    }
    return diff::make_checkpoint("voting", spec, ps);
}

VotingModel VotingModel::from_checkpoint(const nlohmann::json& doc) {
    if (doc.value("kind", std::string()) != "voting") throw InputError("checkpoint is not a voting controller");
    const auto& spec = doc.at("spec");
    const auto& mods = spec.at("modules");
    if (mods.empty()) throw InputError("voting checkpoint has no modules");
    VotingModel v(zoo::ReMaPModule::from_checkpoint(mods[0]), spec.at("voting").get<VotingConfig>());
    v.module_config_ = spec.at("module_config").get<zoo::ModuleConfig>();
    for (std::size_t i = 1; i < mods.size(); ++i) v.modules_.push_back(zoo::ReMaPModule::from_checkpoint(mods[i]));
    v.allocations_ = spec.value("allocations", std::uint64_t{0});
    const long target = spec.value("transform_target", -1L);
    if (target >= 0) {
        v.transform_ = std::make_unique<TransformStack>(static_cast<std::size_t>(target), v.module_config_.k_b,
                                                        v.module_config_.k_f, v.config_.transform, 0);
    }
    if (v.candidate_count() > 1) {
        v.votes_ = init_votes(v.candidate_count(), v.modules_.size() - 1, v.stage_widths(), v.config_.init,
                              v.config_.mode, 0);
    }
    std::vector<Parameter*> ps;
    for (auto& l : v.votes_) {
        ps.push_back(&l.weight);
        ps.push_back(&l.bias);
    }
    if (v.transform_) {
        for (auto* p : v.transform_->parameters()) ps.push_back(p);
    }
    diff::restore_parameters(doc, ps);
    return v;
}

}  // namespace remap::voting
