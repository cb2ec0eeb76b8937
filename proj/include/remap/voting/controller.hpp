#pragma once

#include <cstdint>
#include <deque>
#include <memory>
#include <optional>
#include <ostream>
#include <vector>

#include <json.hpp>

#include "remap/engine/agent.hpp"

namespace remap::voting {

enum class VoteMode { Layer, Unit };

std::string_view vote_mode_name(VoteMode m);
VoteMode parse_vote_mode(std::string_view name);

/// Controller initialization: entries feeding an old module's score are
/// |N(mu, 0.001²)| with bias b, (mu0, b0) at the first layer and (mu1, b1)
/// deeper; the new module and the transform candidate use (new_mu, new_bias).
struct VoteInit {
    double mu0 = 0.01;
    double b0 = 0.1;
    double mu1 = 0.02;
    double b1 = 1.0;
    double new_mu = 0.01;
    double new_bias = 0.1;
    double spread = 0.001;
};

struct TransformConfig {
    double action_noise = 0.01;
    double action_bias = 1.0;  // 0 is the zero-bias override
    double action_lr = 0.01;
    int adapter_units = 4;
    double adapter_eps = 0.001;
    double adapter_bias = 0.01;
    double adapter_lr = 0.01;
};

struct VotingConfig {
    VoteMode mode = VoteMode::Layer;
    VoteInit init;
    /// Voting only, no transform candidate.
    bool transforms = true;
    TransformConfig transform;
    /// Learning rate of new modules and of the vote parameters.
    double learning_rate = 1e-3;
    /// Pins every vote to the newest module (reduction test).
    bool force_new = false;
    std::uint64_t seed = 1;
};

void to_json(nlohmann::json& j, const VotingConfig& c);
void from_json(const nlohmann::json& j, VotingConfig& c);

/// Vote parameters for one mixing point: layer mode W (Ω·L)×Ω and b Ω, unit
/// mode W L×Ω×Ω and b L×Ω.
struct VoteLayer {
    diff::Parameter weight;
    diff::Parameter bias;
};

/// Initializes the vote parameters of every stage. `old_count` leading
/// candidates are old modules; the rest use the new-module scheme.
std::vector<VoteLayer> init_votes(std::size_t candidates, std::size_t old_count,
                                  const std::vector<std::size_t>& widths, const VoteInit& init, VoteMode mode,
                                  std::uint64_t seed);

/// Pseudo-identity adapters attached to a frozen module: a linear map on the
/// coordinate part of the action vector and a small reward-map network on
/// top of the module's logits.
class TransformStack {
public:
    TransformStack(std::size_t target, int k_b, int k_f, const TransformConfig& config, std::uint64_t seed);

    std::size_t target() const { return target_; }
    /// a' = W a + b on the 2k_b + 2 coordinates; validity bits pass through.
    diff::Var transform_action(diff::Tape& tape, diff::Var action);
    /// l1 = CReS(W1 [m, m ⊗ ReLU(a), a] + b1), out = W2 l1 + b2, with a the
    /// untransformed coordinates.
    diff::Var transform_map(diff::Tape& tape, diff::Var maps, diff::Var action);
    void register_parameters(diff::Adam& adam, bool action = true, bool map = true);
    std::vector<diff::Parameter*> parameters();

private:
    std::size_t target_;
    int k_b_;
    TransformConfig config_;
    diff::Parameter action_w_, action_b_;
    diff::Parameter map_w1_, map_b1_, map_w2_, map_b2_;
};

/// A frozen module seen through a transform stack, with nothing else
/// trainable. `action` and `map` select which adapters learn.
class TransformedModel : public engine::RewardModel {
public:
    TransformedModel(zoo::ReMaPModule& base, const TransformConfig& config, std::uint64_t seed, bool action = true,
                     bool map = true);

    const zoo::ModuleConfig& shape() const override { return base_->config(); }
    diff::Var forward(diff::Tape& tape, const zoo::ModuleInputs& in) override;
    void register_parameters(diff::Adam& adam) override;
    TransformStack& stack() { return stack_; }

private:
    zoo::ReMaPModule* base_;
    TransformStack stack_;
    bool action_, map_;
};

/// A growing module set mixed by dynamic neural voting. Candidates are
/// ordered [old modules..., transform candidate, newest module].
class VotingModel : public engine::RewardModel {
public:
    VotingModel(zoo::ModuleConfig module_config, VotingConfig config);
    /// Starts from an existing (possibly trained) module as the only member.
    VotingModel(zoo::ReMaPModule initial, VotingConfig config);

    const zoo::ModuleConfig& shape() const override { return modules_.front().config(); }
    diff::Var forward(diff::Tape& tape, const zoo::ModuleInputs& in) override;
    void register_parameters(diff::Adam& adam) override;
    bool on_cue(long step) override;
    void after_step(long step) override;

    /// Freezes every module, appends a fresh one and re-initializes the votes.
    void allocate();

    std::size_t module_count() const { return modules_.size(); }
    std::size_t candidate_count() const { return modules_.size() + (transform_ ? 1 : 0); }
    zoo::ReMaPModule& module(std::size_t i) { return modules_[i]; }
    const zoo::ReMaPModule& module(std::size_t i) const { return modules_[i]; }
    TransformStack* transform() { return transform_.get(); }
    std::vector<VoteLayer>& votes() { return votes_; }
    const VotingConfig& config() const { return config_; }

    /// Mean vote weight of candidate `c` over stages (and units), from the
    /// most recent inference forward pass. 1 when there is a single candidate.
    double reuse_fraction(std::size_t candidate) const;
    /// Per stage, the mean per-candidate vote weights of the last inference pass.
    const std::vector<std::vector<double>>& last_votes() const { return last_votes_; }
    std::size_t transform_candidate() const { return modules_.size() - 1; }

    void set_vote_log(std::ostream* out) { vote_log_ = out; }

    nlohmann::json checkpoint() const;
    static VotingModel from_checkpoint(const nlohmann::json& doc);

private:
    std::vector<std::size_t> stage_widths() const;
    zoo::ReMaPModule build_new(std::uint64_t index) const;

    VotingConfig config_;
    zoo::ModuleConfig module_config_;
    std::deque<zoo::ReMaPModule> modules_;
    std::unique_ptr<TransformStack> transform_;
    std::vector<VoteLayer> votes_;
    std::vector<std::vector<double>> last_votes_;
    std::ostream* vote_log_ = nullptr;
    std::uint64_t allocations_ = 0;
};

}  // namespace remap::voting
