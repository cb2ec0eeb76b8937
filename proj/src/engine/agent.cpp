#include "remap/engine/agent.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <iomanip>
#include <limits>
#include <sstream>

#include "remap/common/errors.hpp"
#include "remap/common/random.hpp"
#include "remap/diff/ops.hpp"

namespace remap::engine {

using diff::Tape;
using diff::Tensor;

// ---- HistoryBuffer ----

HistoryBuffer::HistoryBuffer(int k_b, int scene_width, int spatial_width)
    : k_b_(k_b), scene_width_(scene_width) {
    if (k_b < 0 || scene_width <= 0) throw ConfigError("history buffer needs k_b >= 0 and a positive scene width");
    for (int i = 0; i <= k_b; ++i) scenes_.emplace_back(static_cast<std::size_t>(scene_width), 0.0);
    spatial_.assign(static_cast<std::size_t>(spatial_width), 0.0);
    for (int i = 0; i < k_b; ++i) {
        actions_.emplace_back(0.0, 0.0);
        valid_.push_back(false);
    }
}

void HistoryBuffer::push_frame(const backbone::Encoding& e) {
    if (e.scene.size() != static_cast<std::size_t>(scene_width_)) {
        throw InputError("encoding width " + std::to_string(e.scene.size()) + " does not match history width " +
                         std::to_string(scene_width_));
    }
    scenes_.pop_front();
    scenes_.push_back(e.scene);
    if (!spatial_.empty()) {
        if (e.spatial.size() != spatial_.size()) throw InputError("spatial encoding size mismatch");
        spatial_ = e.spatial;
    }
}

void HistoryBuffer::push_action(env::ActionPoint a, int height, int width) {
    if (k_b_ == 0) return;
    actions_.pop_front();
    actions_.emplace_back(encode_coordinate(a.x, width), encode_coordinate(a.y, height));
    valid_.pop_front();
    valid_.push_back(true);
}

Tensor HistoryBuffer::scene_history() const {
    Tensor t = Tensor::matrix(1, scenes_.size() * static_cast<std::size_t>(scene_width_));
    std::size_t k = 0;
    for (const auto& s : scenes_)
        for (double v : s) t.values[k++] = v;
    return t;
}

Tensor HistoryBuffer::action_rows(const std::vector<env::ActionPoint>& candidates, int height, int width) const {
    const std::size_t kb = static_cast<std::size_t>(k_b_);
    const std::size_t cols = 3 * kb + 2;
    Tensor t = Tensor::matrix(candidates.size(), cols);
    std::vector<double> prefix(cols, 0.0);
    for (std::size_t i = 0; i < kb; ++i) {
        prefix[2 * i] = actions_[i].first;
        prefix[2 * i + 1] = actions_[i].second;
        prefix[2 * kb + 2 + i] = valid_[i] ? 1.0 : 0.0;
    }
    for (std::size_t r = 0; r < candidates.size(); ++r) {
        auto row = t.row_span(r);
        std::copy(prefix.begin(), prefix.end(), row.begin());
        row[2 * kb] = encode_coordinate(candidates[r].x, width);
        row[2 * kb + 1] = encode_coordinate(candidates[r].y, height);
    }
    return t;
}

// ---- models ----

void SingleModuleModel::register_parameters(diff::Adam& adam) {
    for (auto* p : module_->parameters())
        if (p->trainable) adam.add(*p, learning_rate_);
}

zoo::ModuleInputs place_inputs(Tape& tape, const InputTensors& in) {
    zoo::ModuleInputs out{tape.constant(in.scene), tape.constant(in.action), {}, {}};
    if (!in.spatial.values.empty()) {
        out.spatial = tape.constant(in.spatial);
        out.scene_now = tape.constant(in.scene_now);
    }
    return out;
}

namespace {

InputTensors gather_inputs(const RewardModel& model, const HistoryBuffer& history, Tensor actions) {
    InputTensors in;
    in.scene = history.scene_history();
    in.action = std::move(actions);
    if (model.shape().conv) {
        in.spatial = Tensor::row(history.current_spatial());
        in.scene_now = Tensor::row(history.current_scene());
    }
    return in;
}

}  // namespace

RewardMapSample evaluate_map(RewardModel& model, const HistoryBuffer& history, const PolicyConfig& policy,
                             int height, int width, std::mt19937_64& rng) {
    RewardMapSample sample;
    sample.candidates = subsample_actions(policy.candidates, height, width, rng);
    const InputTensors in = gather_inputs(model, history, history.action_rows(sample.candidates, height, width));
    Tape tape(false);
    const auto logits = model.forward(tape, place_inputs(tape, in));
    const Tensor& z = tape.value(logits);
    if (z.rows() != sample.candidates.size()) throw ConfigError("model returned the wrong number of rows");
    sample.k_f = z.cols();
    sample.logits = z.values;
    apply_policy(sample, policy, rng);
    return sample;
}

// ---- Agent ----

Agent::Agent(RewardModel& model, std::shared_ptr<backbone::EncodingCache> cache, PolicyConfig policy, int height,
             int width)
    : model_(&model),
      cache_(std::move(cache)),
      policy_(policy),
      height_(height),
      width_(width),
      history_(model.shape().k_b, model.shape().scene_width,
               model.shape().conv ? model.shape().conv->map_h * model.shape().conv->map_w * model.shape().conv->map_c
                                  : 0),
      rng_(derive_seed(policy.seed, {0xac7})) {
    policy_.validate();
    reset_optimizer();
}

void Agent::reset_optimizer() {
    adam_ = std::make_unique<diff::Adam>();
    model_->register_parameters(*adam_);
}

RewardMapSample Agent::act(const Image& frame, long step) {
    history_.push_frame(*cache_->get(frame));
    RewardMapSample sample = evaluate_map(*model_, history_, policy_, height_, width_, rng_);
    if (sample.fell_back) ++fallbacks_;
    auto p = std::make_shared<PendingPrediction>();
    p->step = step;
    p->action = sample.candidates[sample.chosen_index];
    for (std::size_t j = 0; j < sample.k_f; ++j) p->logits.push_back(sample.logit(sample.chosen_index, j));
    p->inputs = gather_inputs(*model_, history_, history_.action_rows({p->action}, height_, width_));
    history_.push_action(p->action, height_, width_);
    pending_.push_back(std::move(p));
    while (pending_.size() > static_cast<std::size_t>(model_->shape().k_f)) pending_.pop_front();
    last_step_ = step;
    return sample;
}

RewardOutcome Agent::record_reward(double reward) {
    if (!std::isfinite(reward) || reward < 0.0 || reward > 1.0) {
        throw EnvironmentError("reward " + std::to_string(reward) + " outside [0, 1]");
    }
    if (pending_.empty() || pending_.back()->step != last_step_) throw InputError("reward without a pending action");
    RewardOutcome out;
    // the prediction issued j steps ago supplies column j
    for (std::size_t j = 0; j < pending_.size(); ++j) {
        const auto& rec = pending_[pending_.size() - 1 - j];
        if (rec->step != last_step_ - static_cast<long>(j) || j >= rec->logits.size()) break;
        terms_.push_back({rec, j, reward});
        rec->retired += 1;
        out.terms += 1;
        out.loss += diff::sigmoid_cross_entropy(rec->logits[j], reward);
    }
    if (out.terms > 0) out.loss /= out.terms;
    ++rewards_since_update_;
    return out;
}

bool Agent::maybe_update() {
    if (rewards_since_update_ < policy_.batch) return false;
    update();
    return true;
}

void Agent::flush() {
    if (!terms_.empty()) update();
    pending_.clear();
    rewards_since_update_ = 0;
}

void Agent::update() {
    rewards_since_update_ = 0;
    if (terms_.empty()) return;
    // one row per distinct record, in order of first use
    std::vector<std::shared_ptr<PendingPrediction>> records;
    std::vector<diff::LossTerm> loss_terms;
    for (const auto& t : terms_) {
        auto it = std::find(records.begin(), records.end(), t.record);
        if (it == records.end()) {
            records.push_back(t.record);
            it = records.end() - 1;
        }
        loss_terms.push_back({static_cast<std::size_t>(it - records.begin()), t.column, t.target});
    }

    Tape tape;
    diff::Var loss;
    if (!model_->shape().conv) {
        const std::size_t R = records.size();
        Tensor scenes = Tensor::matrix(R, records[0]->inputs.scene.cols());
        Tensor actions = Tensor::matrix(R, records[0]->inputs.action.cols());
        for (std::size_t r = 0; r < R; ++r) {
            std::copy(records[r]->inputs.scene.values.begin(), records[r]->inputs.scene.values.end(),
                      scenes.row_span(r).begin());
            std::copy(records[r]->inputs.action.values.begin(), records[r]->inputs.action.values.end(),
                      actions.row_span(r).begin());
        }
        const auto z = model_->forward(tape, place_inputs(tape, InputTensors{std::move(scenes), std::move(actions), {}, {}}));
        loss = diff::sigmoid_cross_entropy(tape, z, loss_terms);
    } else {
        // spatial inputs are per frame, so each record gets its own forward
        const double total = static_cast<double>(loss_terms.size());
        for (std::size_t r = 0; r < records.size(); ++r) {
            std::vector<diff::LossTerm> mine;
            for (const auto& t : loss_terms)
                if (t.row == r) mine.push_back({0, t.col, t.target});
            const auto z = model_->forward(tape, place_inputs(tape, records[r]->inputs));
            const auto part = diff::mul(tape, diff::sigmoid_cross_entropy(tape, z, mine),
                                        tape.constant(Tensor::row({static_cast<double>(mine.size()) / total})));
            loss = loss.valid() ? diff::add(tape, loss, part) : part;
        }
    }
    const double value = tape.value(loss).values[0];
    if (!std::isfinite(value)) {
        std::ostringstream msg;
        msg << "non-finite loss at step " << last_step_ << " (update " << updates_ << ", " << loss_terms.size()
            << " terms, " << records.size() << " records)";
        throw TrainingError(msg.str());
    }
    tape.backward(loss);
    adam_->step();
    ++updates_;
    terms_per_update_.push_back(static_cast<int>(loss_terms.size()));
    terms_.clear();
}

// ---- stream ----

double StreamResult::mean_scored_reward() const { return mean_scored_reward(0, static_cast<long>(rewards.size())); }

double StreamResult::mean_scored_reward(long begin, long end) const {
    begin = std::max(0L, begin);
    end = std::min(end, static_cast<long>(rewards.size()));
    double s = 0.0;
    long n = 0;
    for (long i = begin; i < end; ++i) {
        if (!scored[static_cast<std::size_t>(i)]) continue;
        s += rewards[static_cast<std::size_t>(i)];
        ++n;
    }
    return n > 0 ? s / static_cast<double>(n) : 0.0;
}

double validation_block(RewardModel& model, backbone::EncodingCache& cache, const PolicyConfig& policy,
                        const env::TaskSpec& task, const std::shared_ptr<env::InstanceBank>& bank, long steps,
                        std::uint64_t seed, double* scored_sum, long* scored_count) {
    auto program = env::make_task(task, bank, env::Split::Validation, derive_seed(seed, {1}));
    const auto& shape = model.shape();
    HistoryBuffer history(shape.k_b, shape.scene_width,
                          shape.conv ? shape.conv->map_h * shape.conv->map_w * shape.conv->map_c : 0);
    std::mt19937_64 rng(derive_seed(seed, {2}));
    double sum = 0.0;
    long count = 0;
    for (long i = 0; i < steps; ++i) {
        history.push_frame(*cache.get(program->frame()->pixels));
        const auto sample = evaluate_map(model, history, policy, program->height(), program->width(), rng);
        const auto a = sample.candidates[sample.chosen_index];
        const auto out = program->step(a);
        history.push_action(a, program->height(), program->width());
        if (out.scored) {
            sum += out.reward;
            ++count;
        }
    }
    if (scored_sum != nullptr) *scored_sum = sum;
    if (scored_count != nullptr) *scored_count = count;
    return count > 0 ? sum / static_cast<double>(count) : 0.0;
}

StreamResult run_stream(env::TaskSchedule& env, RewardModel& model, std::shared_ptr<backbone::EncodingCache> cache,
                        const PolicyConfig& policy, const StreamConfig& config) {
    if (config.steps < 0) throw ConfigError("negative step budget");
    StreamResult res;
    if (env.ended() || config.steps == 0) return res;
    const int H = env.task().height(), W = env.task().width();
    Agent agent(model, cache, policy, H, W);

    struct Block {
        long step;
        double sum;
        long count;
    };
    std::vector<Block> blocks;
    long segment = 0;  // first step of the current task
    env::TaskSpec spec = env.task().spec();
    bool stop = false;

    auto validate = [&](long s) {
        if (config.validation_every <= 0) return;
        Block b{s, 0.0, 0};
        validation_block(model, *cache, policy, spec, env.bank(), config.validation_steps,
                         derive_seed(config.seed, {0x7a1, static_cast<std::uint64_t>(s)}), &b.sum, &b.count);
        blocks.push_back(b);
        double sum = 0.0;
        long n = 0;
        for (const auto& x : blocks) {
            if (x.step < segment || x.step <= s - config.window) continue;
            sum += x.sum;
            n += x.count;
        }
        const double v = n > 0 ? sum / static_cast<double>(n) : 0.0;
        res.validation.push_back({s, v});
        res.training.push_back({s, res.mean_scored_reward(std::max(segment, s - config.window), s)});
        if (config.stop_at >= 0.0 && v >= config.stop_at) stop = true;
    };

    validate(0);
    long t = 0;
    while (t < config.steps && !env.ended() && !stop) {
        const auto frame = env.frame();
        const auto sample = agent.act(frame->pixels, t);
        const auto a = agent.last_action();
        const auto st = env.step(a);
        const auto out = agent.record_reward(st.frame.reward);
        res.rewards.push_back(st.frame.reward);
        res.scored.push_back(st.frame.scored ? 1 : 0);
        if (config.step_log != nullptr) {
            nlohmann::json rec{{"step", t}, {"task", spec.id()},           {"x", a.x},
                               {"y", a.y},  {"reward", st.frame.reward}, {"loss", out.loss},
                               {"map", sample.chosen_map}};
            *config.step_log << rec.dump() << '\n';
        }
        model.after_step(t);
        ++t;
        agent.maybe_update();
        if (st.cue && !st.ended) {
            agent.flush();
            res.cue_steps.push_back(t);
            if (model.on_cue(t)) agent.reset_optimizer();
            segment = t;
            spec = env.task().spec();
            validate(t);
        } else if (config.validation_every > 0 && t % config.validation_every == 0) {
            validate(t);
        }
    }
    res.steps_run = t;
    res.updates = agent.updates();
    return res;
}

// ---- curves ----

void write_curve_csv(const std::filesystem::path& path, const LearningCurve& curve) {
    std::ofstream out(path);
    if (!out) throw InputError("cannot write " + path.string());
    out << "step,value\n" << std::setprecision(std::numeric_limits<double>::max_digits10);
    for (const auto& p : curve) out << p.step << ',' << p.value << '\n';
    if (!out) throw InputError("write failed for " + path.string());
}

LearningCurve read_curve_csv(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) throw InputError("cannot read " + path.string());
    LearningCurve c;
    std::string line;
    std::getline(in, line);
    while (std::getline(in, line)) {
        if (line.empty()) continue;
        const auto comma = line.find(',');
        if (comma == std::string::npos) throw InputError("malformed curve line in " + path.string());
        c.push_back({std::stol(line.substr(0, comma)), std::stod(line.substr(comma + 1))});
    }
    return c;
}

}  // namespace remap::engine
