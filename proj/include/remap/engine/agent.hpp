#pragma once

#include <cstdint>
#include <deque>
#include <memory>
#include <ostream>
#include <random>
#include <vector>

#include "remap/backbone/encoder.hpp"
#include "remap/diff/adam.hpp"
#include "remap/engine/policy.hpp"
#include "remap/env/schedule.hpp"
#include "remap/zoo/module.hpp"

namespace remap::engine {

/// Ring buffers of the last k_b + 1 encodings and the last k_b actions.
/// Starts with zero encodings and invalid (all-zero) actions.
class HistoryBuffer {
public:
    HistoryBuffer(int k_b, int scene_width, int spatial_width = 0);

    void push_frame(const backbone::Encoding& e);
    void push_action(env::ActionPoint a, int height, int width);

    int k_b() const { return k_b_; }
    /// 1 x (k_b+1)·D, oldest first.
    diff::Tensor scene_history() const;
    const std::vector<double>& current_scene() const { return scenes_.back(); }
    const std::vector<double>& current_spatial() const { return spatial_; }
    /// Action rows [history coords | candidate coords | validity bits].
    diff::Tensor action_rows(const std::vector<env::ActionPoint>& candidates, int height, int width) const;
    bool valid(int i) const { return valid_[static_cast<std::size_t>(i)]; }

private:
    int k_b_;
    int scene_width_;
    std::deque<std::vector<double>> scenes_;
    std::vector<double> spatial_;
    std::deque<std::pair<double, double>> actions_;
    std::deque<bool> valid_;
};

/// Tensors for one module evaluation; `spatial` and `scene_now` are empty
/// unless the model has a convolutional bottleneck.
struct InputTensors {
    diff::Tensor scene;
    diff::Tensor action;
    diff::Tensor spatial;
    diff::Tensor scene_now;
};

/// Anything that maps (history, candidates) to k_f logits per candidate:
/// a single module or a voting composite.
class RewardModel {
public:
    virtual ~RewardModel() = default;
    /// Shape contract (k_b, k_f, scene width, conv bottleneck).
    virtual const zoo::ModuleConfig& shape() const = 0;
    /// N x k_f logits. The scene input may have one row or one row per action row.
    virtual diff::Var forward(diff::Tape& tape, const zoo::ModuleInputs& in) = 0;
    virtual void register_parameters(diff::Adam& adam) = 0;
    /// Switch cue. Returns true when the trainable parameter set changed.
    virtual bool on_cue(long /*step*/) { return false; }
    /// Called once per executed action.
    virtual void after_step(long /*step*/) {}
};

class SingleModuleModel : public RewardModel {
public:
    SingleModuleModel(zoo::ReMaPModule& module, double learning_rate)
        : module_(&module), learning_rate_(learning_rate) {}
    const zoo::ModuleConfig& shape() const override { return module_->config(); }
    diff::Var forward(diff::Tape& tape, const zoo::ModuleInputs& in) override { return module_->forward(tape, in); }
    void register_parameters(diff::Adam& adam) override;
    zoo::ReMaPModule& module() { return *module_; }

private:
    zoo::ReMaPModule* module_;
    double learning_rate_;
};

/// Places input tensors on a tape.
zoo::ModuleInputs place_inputs(diff::Tape& tape, const InputTensors& in);

/// Runs the model on all candidates without recording gradients and applies
/// the policy. The chosen action is sample.candidates[sample.chosen_index].
RewardMapSample evaluate_map(RewardModel& model, const HistoryBuffer& history, const PolicyConfig& policy,
                             int height, int width, std::mt19937_64& rng);

/// A prediction waiting for the rewards of its horizon.
struct PendingPrediction {
    long step = 0;
    env::ActionPoint action;
    std::vector<double> logits;  // k_f values issued for the chosen action
    InputTensors inputs;          // single-row inputs to recompute them
    int retired = 0;              // horizon offsets already paired with a reward
};

struct RewardOutcome {
    int terms = 0;
    double loss = 0.0;  // mean cross-entropy of the new terms at issue-time logits
};

/// One ReMaP learner: acts on frames, pairs rewards with the predictions of
/// the last k_f steps and takes an Adam step every `batch` rewards.
class Agent {
public:
    Agent(RewardModel& model, std::shared_ptr<backbone::EncodingCache> cache, PolicyConfig policy, int height,
          int width);

    /// Encodes the frame, evaluates the map, samples and remembers the action.
    RewardMapSample act(const Image& frame, long step);
    env::ActionPoint last_action() const { return pending_.back()->action; }
    /// Reward for the last action; throws EnvironmentError outside [0, 1].
    RewardOutcome record_reward(double reward);
    /// Adam step over the accumulated terms when `batch` rewards have arrived.
    bool maybe_update();
    /// Updates on whatever has accumulated and forgets pending predictions
    /// (used at switch cues so no pairing crosses a model change).
    void flush();
    /// Re-registers the model's parameters with a fresh optimizer.
    void reset_optimizer();

    long updates() const { return updates_; }
    const std::vector<int>& terms_per_update() const { return terms_per_update_; }
    long fallbacks() const { return fallbacks_; }
    HistoryBuffer& history() { return history_; }
    RewardModel& model() { return *model_; }
    std::mt19937_64& rng() { return rng_; }

private:
    struct Term {
        std::shared_ptr<PendingPrediction> record;
        std::size_t column;
        double target;
    };
    void update();

    RewardModel* model_;
    std::shared_ptr<backbone::EncodingCache> cache_;
    PolicyConfig policy_;
    int height_, width_;
    HistoryBuffer history_;
    std::mt19937_64 rng_;
    std::unique_ptr<diff::Adam> adam_;
    std::deque<std::shared_ptr<PendingPrediction>> pending_;
    std::vector<Term> terms_;
    int rewards_since_update_ = 0;
    long updates_ = 0;
    long fallbacks_ = 0;
    long last_step_ = -1;
    std::vector<int> terms_per_update_;
};

struct CurvePoint {
    long step = 0;
    double value = 0.0;
    bool operator==(const CurvePoint&) const = default;
};
using LearningCurve = std::vector<CurvePoint>;

struct StreamConfig {
    long steps = 1000;
    long validation_every = 500;
    long validation_steps = 100;
    long window = 2000;
    /// Stop after the first validation point at or above this value (< 0: never).
    double stop_at = -1.0;
    std::uint64_t seed = 1;
    std::ostream* step_log = nullptr;
};

struct StreamResult {
    LearningCurve validation;  // windowed held-out reward
    LearningCurve training;    // windowed reward on the stream itself
    std::vector<double> rewards;
    std::vector<char> scored;
    std::vector<long> cue_steps;
    long steps_run = 0;
    long updates = 0;
    double mean_scored_reward() const;
    /// Mean scored reward over steps [begin, end).
    double mean_scored_reward(long begin, long end) const;
};

/// The ReMaP loop: observe, encode, act, step the environment, pair the
/// reward, update every batch. Validation blocks run on held-out instances
/// of the current task with a separate history and RNG stream.
StreamResult run_stream(env::TaskSchedule& env, RewardModel& model, std::shared_ptr<backbone::EncodingCache> cache,
                        const PolicyConfig& policy, const StreamConfig& config);

/// Mean scored reward of `steps` policy steps on a held-out copy of `task`
/// (no learning).
double validation_block(RewardModel& model, backbone::EncodingCache& cache, const PolicyConfig& policy,
                        const env::TaskSpec& task, const std::shared_ptr<env::InstanceBank>& bank, long steps,
                        std::uint64_t seed, double* scored_sum = nullptr, long* scored_count = nullptr);

void write_curve_csv(const std::filesystem::path& path, const LearningCurve& curve);
LearningCurve read_curve_csv(const std::filesystem::path& path);

}  // namespace remap::engine
