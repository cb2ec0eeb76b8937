// Command-line front end: pretrain-backbone, run-task, run-suite, run-switch,
// render-maps, report.

#include <CLI11.hpp>

#include <filesystem>
#include <iostream>
#include <sstream>

#include "remap/common/errors.hpp"
#include "remap/common/random.hpp"
#include "remap/diff/checkpoint.hpp"
#include "remap/harness/experiment.hpp"
#include "remap/harness/render.hpp"

using namespace remap;
using namespace remap::harness;
namespace fs = std::filesystem;

namespace {

struct Common {
    std::string config;
    std::string out;
    std::vector<std::uint64_t> seeds;
    int jobs = 0;
};

void add_common(CLI::App* cmd, Common& c) {
    cmd->add_option("-c,--config", c.config, "experiment config (JSON)")->check(CLI::ExistingFile);
    cmd->add_option("-o,--out", c.out, "output directory");
    cmd->add_option("-s,--seed", c.seeds, "seed override (repeatable)");
    cmd->add_option("-j,--jobs", c.jobs, "worker threads");
}

ExperimentConfig load(const Common& c) {
    ExperimentConfig cfg = c.config.empty() ? desk_defaults() : load_experiment(c.config);
    if (!c.out.empty()) cfg.output_dir = c.out;
    if (!c.seeds.empty()) cfg.seeds = c.seeds;
    if (c.jobs > 0) cfg.jobs = c.jobs;
    return cfg;
}

env::TaskSpec make_spec(const std::string& variant, std::vector<int> classes, const std::string& transform) {
    env::TaskSpec t;
    t.variant = env::parse_variant(variant);
    if (classes.empty())
        for (int i = 0; i < env::variant_way(t.variant); ++i) classes.push_back(i);
    t.classes = std::move(classes);
    t.transform = env::parse_transform(transform);
    return t;
}

void print_curve(const engine::LearningCurve& c) {
    for (const auto& p : c) std::cout << "  step " << p.step << "  validation " << p.value << '\n';
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"Continual reward-map learning on the touch-screen desk"};
    app.require_subcommand(1);

    Common pre_c;
    auto* pre = app.add_subcommand("pretrain-backbone", "pretrain (or load) the frozen encoder");
    add_common(pre, pre_c);
    std::string encoder_out;
    pre->add_option("--encoder", encoder_out, "encoder checkpoint path (default: <out>/encoder.json)");

    Common task_c;
    auto* task = app.add_subcommand("run-task", "train one module on one task");
    add_common(task, task_c);
    std::string arch = "ems", variant = "sr-2way", transform = "none";
    std::vector<int> classes;
    long steps = 0;
    task->add_option("-a,--arch", arch, "architecture");
    task->add_option("-t,--task", variant, "task variant");
    task->add_option("--classes", classes, "class ids")->delimiter(',');
    task->add_option("--transform", transform, "reward transform");
    task->add_option("--steps", steps, "step budget");

    Common suite_c;
    auto* suite = app.add_subcommand("run-suite", "every architecture x task x seed cell");
    add_common(suite, suite_c);

    Common sw_c;
    auto* sw = app.add_subcommand("run-switch", "task-switching experiments with neural voting");
    add_common(sw, sw_c);
    std::vector<int> pairs;
    std::string mode = "both";
    bool no_transforms = false;
    long base_steps = 0, switch_steps = 0;
    sw->add_option("-p,--pair", pairs, "switch pair id (repeatable; default all)");
    sw->add_option("-m,--mode", mode, "voting mode")->check(CLI::IsMember({"layer", "unit", "both"}));
    sw->add_flag("--no-transforms", no_transforms, "voting only, no transform candidate");
    sw->add_option("--base-steps", base_steps, "base task budget");
    sw->add_option("--steps", switch_steps, "post-switch budget");

    Common map_c;
    auto* maps = app.add_subcommand("render-maps", "render reward maps of a saved module");
    add_common(maps, map_c);
    std::string checkpoint;
    std::string map_variant = "sr-2way", map_transform = "none";
    std::vector<int> map_classes;
    int frames = 4;
    maps->add_option("-m,--module", checkpoint, "module.json or composite.json")->required()->check(CLI::ExistingFile);
    maps->add_option("-t,--task", map_variant, "task variant");
    maps->add_option("--classes", map_classes, "class ids")->delimiter(',');
    maps->add_option("--transform", map_transform, "reward transform");
    maps->add_option("-n,--frames", frames, "frames to render");

    std::string report_dir;
    auto* rep = app.add_subcommand("report", "recompute metrics from an output directory");
    rep->add_option("dir", report_dir, "suite or switch output directory")->required()->check(CLI::ExistingDirectory);

    CLI11_PARSE(app, argc, argv);

    try {
        if (*pre) {
            auto cfg = load(pre_c);
            if (!encoder_out.empty()) cfg.desk.encoder_path = encoder_out;
            const fs::path out = cfg.output_dir;
            fs::create_directories(out);
            const auto desk = open_desk(cfg.desk, out / "encoder.json");
            auto& bank = *desk.bank;
            std::vector<int> all(static_cast<std::size_t>(cfg.desk.render.class_count));
            for (int i = 0; i < cfg.desk.render.class_count; ++i) all[static_cast<std::size_t>(i)] = i;
            const auto train = backbone::make_dataset(bank, all, cfg.desk.pretrain_per_class, env::Split::Train);
            const auto held = backbone::make_dataset(bank, all, cfg.desk.validation_per_class, env::Split::Validation);
            std::cout << "encoder " << desk.encoder->weight_hash_hex() << " feature_scale "
                      << desk.encoder->spec().feature_scale << " nearest-mean held-out accuracy "
                      << backbone::nearest_mean_accuracy(*desk.encoder, train, held) << '\n';
        } else if (*task) {
            auto cfg = load(task_c);
            cfg.resolve();
            const fs::path out = cfg.output_dir;
            fs::create_directories(out);
            auto desk = open_desk(cfg.desk, out / "encoder.json");
            SuiteTask st{make_spec(variant, classes, transform), steps > 0 ? steps : 30000, 0};
            for (auto seed : cfg.seeds) {
                const auto dir = out / zoo::ArchitectureId::parse(arch).canonical() /
                                 ("seed-" + std::to_string(seed));
                const auto run = run_task(cfg, desk, arch, st, seed, dir);
                std::cout << st.task.id() << " seed " << seed << (run.resumed ? " (resumed)" : "") << '\n';
                print_curve(run.validation);
            }
        } else if (*suite) {
            const auto cfg = load(suite_c);
            const auto r = run_suite(cfg);
            for (const auto& c : r.cells)
                std::cout << c.architecture << ' ' << c.task << " seed " << c.seed << ' '
                          << (c.ok ? "auc " + std::to_string(c.auc) : "FAILED: " + c.error) << '\n';
            for (const auto& [scope, per] : r.ta_n_auc)
                for (const auto& [m, v] : per) std::cout << "TA-N-AUC " << scope << ' ' << m << ' ' << v << '\n';
            if (!r.error.empty()) std::cout << "TA-N-AUC unavailable: " << r.error << '\n';
        } else if (*sw) {
            auto cfg = load(sw_c);
            if (!pairs.empty()) cfg.switch_ids = pairs;
            if (mode == "layer") cfg.vote_modes = {voting::VoteMode::Layer};
            if (mode == "unit") cfg.vote_modes = {voting::VoteMode::Unit};
            if (no_transforms) cfg.voting.transforms = false;
            if (base_steps > 0) cfg.base_steps = base_steps;
            if (switch_steps > 0) cfg.switch_steps = switch_steps;
            const auto r = run_switch_suite(cfg);
            for (const auto& s : r.records) {
                std::cout << "pair " << s.id << ' ' << voting::vote_mode_name(s.mode) << " seed " << s.seed << ' ';
                if (s.ok)
                    std::cout << "RGain " << s.rgain << " TGain " << s.tgain << '\n';
                else
                    std::cout << "FAILED: " << s.error << '\n';
            }
        } else if (*maps) {
            auto cfg = load(map_c);
            const fs::path out = cfg.output_dir;
            fs::create_directories(out);
            auto desk = open_desk(cfg.desk, out / "encoder.json");
            const auto doc = diff::read_json(checkpoint);
            std::unique_ptr<engine::RewardModel> model;
            zoo::ReMaPModule single;
            std::unique_ptr<voting::VotingModel> composite;
            if (doc.value("kind", std::string()) == "voting") {
                composite = std::make_unique<voting::VotingModel>(voting::VotingModel::from_checkpoint(doc));
            } else {
                single = zoo::ReMaPModule::from_checkpoint(doc);
                model = std::make_unique<engine::SingleModuleModel>(single, 0.0);
            }
            engine::RewardModel& m = composite ? static_cast<engine::RewardModel&>(*composite) : *model;
            const auto spec = make_spec(map_variant, map_classes, map_transform);
            const std::uint64_t seed = cfg.seeds.front();
            auto program = env::make_task(spec, desk.bank, env::Split::Validation, seed);
            const auto& shape = m.shape();
            engine::HistoryBuffer history(shape.k_b, shape.scene_width,
                                          shape.conv ? shape.conv->map_h * shape.conv->map_w * shape.conv->map_c : 0);
            std::mt19937_64 rng(derive_seed(seed, {0x3aa}));
            auto policy = cfg.policy;
            policy.seed = seed;
            for (int i = 0; i < frames; ++i) {
                const auto frame = program->frame();
                history.push_frame(*desk.cache->get(frame->pixels));
                const auto s = engine::evaluate_map(m, history, policy, program->height(), program->width(), rng);
                write_ppm(out / ("frame-" + std::to_string(i) + ".ppm"), frame->pixels);
                render_reward_map(s, program->height(), program->width(), out / ("map-" + std::to_string(i) + ".ppm"));
                const auto a = s.candidates[s.chosen_index];
                program->step(a);
                history.push_action(a, program->height(), program->width());
            }
            std::cout << "wrote " << frames << " maps to " << out.string() << '\n';
        } else if (*rep) {
            const auto r = report(report_dir);
            diff::write_json(fs::path(report_dir) / "report.json", r);
            std::cout << r.dump(2) << '\n';
        }
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << '\n';
        return 1;
    }
    return 0;
}
