// Acceptance checks, one line per criterion:
//   [PASS] criterion N: title | details
// Run all of them or one with --criterion N. Long criteria train real
// modules; outputs go under --work (wiped per criterion, encoder kept).

#include <CLI11.hpp>

#include <algorithm>
#include <chrono>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <functional>
#include <iomanip>
#include <iostream>
#include <random>
#include <sstream>

#include "remap/common/errors.hpp"
#include "remap/common/random.hpp"
#include "remap/harness/experiment.hpp"
#include "support/backbone_cases.hpp"
#include "support/gradient_suite.hpp"

using namespace remap;
using namespace remap::harness;
namespace fs = std::filesystem;
using Clock = std::chrono::steady_clock;

namespace {

struct Outcome {
    bool pass = false;
    std::string detail;
};

fs::path g_work = "acceptance_work";

double seconds_since(Clock::time_point t0) { return std::chrono::duration<double>(Clock::now() - t0).count(); }

std::string num(double v, int precision = 4) {
    std::ostringstream s;
    s << std::setprecision(precision) << v;
    return s.str();
}

fs::path fresh(const std::string& name) {
    const auto d = g_work / name;
    fs::remove_all(d);
    fs::create_directories(d);
    return d;
}

ExperimentConfig desk_config(const fs::path& out) {
    auto c = desk_defaults();
    c.desk.encoder_path = (g_work / "encoder.json").string();
    c.output_dir = out.string();
    return c;
}

void progress(const std::string& text) { std::cerr << "  .. " << text << std::endl; }

// ---- 1 ----

Outcome numerics() {
    const auto t0 = Clock::now();
    std::mt19937_64 rng(20240601);
    double worst = 0.0;
    std::string worst_op;
    std::size_t ops = 0;
    auto cases = testing::diffcore_op_cases();
    for (auto& c : testing::backbone_op_cases()) cases.push_back(std::move(c));
    for (const auto& c : cases) {
        ++ops;
        for (int i = 0; i < 100; ++i) {
            const double e = testing::check_op_once(c, rng);
            if (!(e <= worst)) {
                worst = e;
                worst_op = c.name;
            }
        }
    }
    const double t = seconds_since(t0);
    return {worst < 1e-4 && t < 60.0, std::to_string(ops) + " ops x 100 cases, worst relative error " + num(worst) +
                                          " (" + worst_op + "), " + num(t, 3) + " s"};
}

// ---- 2 ----

Outcome policy_layer() {
    auto cfg = desk_config(fresh("c2"));
    auto desk = open_desk(cfg.desk, {});
    std::vector<std::vector<double>> scenes;
    std::vector<int> labels;
    for (int c = 0; c < 2; ++c)
        for (int i = 0; i < cfg.desk.train_per_class; ++i) {
            scenes.push_back(desk.cache->get(desk.bank->instance(c, i, env::Split::Train)->pixels)->scene);
            labels.push_back(c);
        }
    const auto boundary = zoo::fit_boundary(scenes, labels, 400, 0.5);
    auto module = zoo::perfect_sr_module(boundary);
    engine::SingleModuleModel model(module, 0.0);
    env::TaskSchedule sched({{{env::Variant::Sr2Way, {0, 1}}, 1000}}, desk.bank, 17);
    engine::StreamConfig sc;
    sc.steps = 1000;
    sc.validation_every = 0;
    auto policy = cfg.policy;
    const auto r = engine::run_stream(sched, model, desk.cache, policy, sc);
    const double reward = r.mean_scored_reward();

    // Hand-set module against the analytic predictor, every sign quadrant,
    // on held-out frames of both classes and the full row of x positions.
    long cases = 0, mismatches = 0;
    std::map<std::pair<int, int>, long> quadrants;
    const int W = cfg.desk.render.width;
    for (int c = 0; c < 2; ++c)
        for (int i = 0; i < cfg.desk.validation_per_class; ++i) {
            const auto e = desk.cache->get(desk.bank->instance(c, i, env::Split::Validation)->pixels);
            engine::HistoryBuffer h(1, static_cast<int>(e->scene.size()));
            h.push_frame(*e);
            std::vector<env::ActionPoint> xs;
            for (int x = 0; x < W; ++x) xs.push_back({x, 5});
            diff::Tape tape(false);
            engine::InputTensors in{h.scene_history(), h.action_rows(xs, W, W), {}, {}};
            const auto& out = tape.value(module.forward(tape, engine::place_inputs(tape, in)));
            const double s = boundary.score(e->scene);
            for (int x = 0; x < W; ++x) {
                const double ax = engine::encode_coordinate(x, W);
                const double expect = zoo::perfect_sr_prediction(s, ax) > 0 ? 30.0 : -30.0;
                ++cases;
                ++quadrants[{s > 0, ax > 0}];
                if (out(static_cast<std::size_t>(x), 0) != expect) ++mismatches;
            }
        }
    const bool all_quadrants = quadrants.size() == 4;
    return {reward >= 0.98 && mismatches == 0 && all_quadrants,
            "analytic module mean reward " + num(reward) + " over 1000 steps; hand-set vs analytic " +
                std::to_string(mismatches) + " mismatches in " + std::to_string(cases) + " cases across " +
                std::to_string(quadrants.size()) + " sign quadrants"};
}

// ---- 3 ----

Outcome mechanics() {
    std::mt19937_64 rng(33);
    std::uniform_real_distribution<double> u(-4.0, 4.0);
    double worst_sum = 0.0;
    bool min_zero = true;
    for (int i = 0; i < 1000; ++i) {
        std::vector<double> v(static_cast<std::size_t>(2 + i % 300));
        for (double& x : v) x = u(rng);
        const auto n = engine::normalize_map(v);
        min_zero = min_zero && *std::min_element(n.begin(), n.end()) == 0.0;
        for (auto fam : {engine::DistFamily::Identity, engine::DistFamily::Boltzmann}) {
            engine::PolicyConfig p;
            p.family = fam;
            const auto d = engine::distify(n, p);
            double s = 0.0;
            for (double x : d) s += x;
            worst_sum = std::max(worst_sum, std::abs(s - 1.0));
        }
    }
    int var_mismatch = 0;
    for (int i = 0; i < 1000; ++i) {
        std::vector<std::vector<double>> dists(static_cast<std::size_t>(1 + i % 6));
        for (auto& d : dists) {
            d.resize(static_cast<std::size_t>(2 + i % 50));
            double s = 0.0;
            for (double& x : d) s += (x = std::abs(u(rng)));
            for (double& x : d) x /= s;
        }
        if (i % 7 == 0 && dists.size() > 1) dists[1] = dists[0];
        // Oracle: two-pass long-double variance, first maximum wins.
        std::size_t best = 0;
        long double best_v = -1;
        for (std::size_t k = 0; k < dists.size(); ++k) {
            long double m = 0;
            for (double x : dists[k]) m += x;
            m /= dists[k].size();
            long double v = 0;
            for (double x : dists[k]) v += (x - m) * (x - m);
            v /= dists[k].size();
            if (v > best_v) {
                best_v = v;
                best = k;
            }
        }
        if (engine::var_argmax(dists) != best) ++var_mismatch;
    }

    auto cfg = desk_config(fresh("c3"));
    auto desk = open_desk(cfg.desk, {});
    auto mc = zoo::default_config(zoo::ArchitectureId::parse("ems"), zoo::TaskFamily::SR,
                                  desk.encoder->spec().scene_width, 2);
    auto m = zoo::build_module(mc);
    engine::SingleModuleModel model(m, 1e-3);
    engine::Agent agent(model, desk.cache, cfg.policy, 64, 64);
    env::TaskSchedule sched({{{env::Variant::Sr2Way, {0, 1}}, 400}}, desk.bank, 3);
    for (long t = 0; t < 400; ++t) {
        agent.act(sched.frame()->pixels, t);
        const auto st = sched.step(agent.last_action());
        agent.record_reward(st.frame.reward);
        agent.maybe_update();
    }
    const auto& terms = agent.terms_per_update();
    const int expect = cfg.policy.batch * mc.k_f;
    bool warm_ok = terms.size() > 1;
    for (std::size_t i = 1; i < terms.size(); ++i) warm_ok = warm_ok && terms[i] == expect;
    return {worst_sum <= 1e-9 && min_zero && var_mismatch == 0 && warm_ok,
            "max |column sum - 1| " + num(worst_sum) + ", Norm minimum exactly 0: " + (min_zero ? "yes" : "no") +
                ", VarArgmax mismatches " + std::to_string(var_mismatch) + "/1000, warm updates with " +
                std::to_string(expect) + " terms: " + std::to_string(terms.size() - 1) + (warm_ok ? " (all)" : " (NOT all)")};
}

// ---- 4 ----

Outcome single_task() {
    const auto out = fresh("c4");
    auto cfg = desk_config(out);
    cfg.stop_at = 0.9;
    cfg.step_logs = false;
    cfg.map_frames = 0;
    auto desk = open_desk(cfg.desk, {});
    bool pass = true;
    std::string detail;
    for (const auto& task : {env::TaskSpec{env::Variant::Sr2Way, {0, 1}},
                             env::TaskSpec{env::Variant::Mts2WayStationary, {0, 1}}}) {
        detail += task.id() + ":";
        for (auto seed : cfg.seeds) {
            const auto t0 = Clock::now();
            const auto run = run_task(cfg, desk, "ems", {task, 50000, 0}, seed,
                                      out / task.id() / ("seed-" + std::to_string(seed)));
            const double secs = seconds_since(t0);
            const double final_v = run.validation.back().value;
            const bool ok = final_v >= 0.9 && secs < 900.0;
            pass = pass && ok;
            detail += " seed " + std::to_string(seed) + " " + num(final_v, 3) + "@" +
                      std::to_string(run.validation.back().step) + " in " + num(secs, 3) + "s" + (ok ? "" : " FAIL") +
                      ";";
            progress(task.id() + " seed " + std::to_string(seed) + " done");
        }
        detail += " ";
    }
    return {pass, detail};
}

// ---- 5 ----

Outcome efficiency() {
    auto cfg = desk_config(fresh("c5"));
    cfg.step_logs = false;
    cfg.map_frames = 1;
    const auto r = run_suite(cfg);
    for (const auto& c : r.cells)
        if (!c.ok) return {false, "cell " + c.architecture + " " + c.task + " failed: " + c.error};
    if (!r.error.empty()) return {false, "TA-N-AUC unavailable: " + r.error};
    int wins = 0;
    std::string detail;
    for (auto seed : cfg.seeds) {
        const auto& s = r.ta_n_auc.at("seed-" + std::to_string(seed));
        const double ems = s.at("ems"), small = s.at("late-relu-small");
        const bool ok = ems > small && ems >= 1.15 * small;
        wins += ok ? 1 : 0;
        detail += "seed " + std::to_string(seed) + " ems " + num(ems) + " vs late-relu-small " + num(small) +
                  " (ratio " + num(ems / small) + ")" + (ok ? "" : " short") + "; ";
    }
    detail += std::to_string(wins) + "/3 seeds";
    return {wins >= 2, detail};
}

// ---- 6 ----

double pixel_iou(const env::BoundingBox& a, const env::BoundingBox& b) {
    long inter = 0, uni = 0;
    for (int y = 0; y < 48; ++y)
        for (int x = 0; x < 48; ++x) {
            const bool ia = a.contains(x, y), ib = b.contains(x, y);
            inter += ia && ib;
            uni += ia || ib;
        }
    return uni == 0 ? 0.0 : static_cast<double>(inter) / static_cast<double>(uni);
}

Outcome metric_oracles() {
    std::mt19937_64 rng(66);
    std::uniform_int_distribution<int> coord(0, 47);
    double worst_iou = 0.0;
    for (int i = 0; i < 1000; ++i) {
        auto box = [&] {
            int x0 = coord(rng), x1 = coord(rng), y0 = coord(rng), y1 = coord(rng);
            if (x0 > x1) std::swap(x0, x1);
            if (y0 > y1) std::swap(y0, y1);
            return env::BoundingBox{x0, y0, x1, y1};
        };
        const auto a = box(), b = box();
        worst_iou = std::max(worst_iou, std::abs(env::iou(a, b) - pixel_iou(a, b)));
    }

    std::uniform_real_distribution<double> u(0.0, 1.0);
    auto curve = [&](int n, long cadence) {
        LearningCurve c;
        for (int i = 0; i < n; ++i) c.push_back({i * cadence, u(rng)});
        return c;
    };
    double worst_auc = 0.0;
    int rgain_mismatch = 0, tgain_mismatch = 0;
    for (int i = 0; i < 300; ++i) {
        const auto a = curve(3 + i % 60, 500), b = curve(3 + i % 60, 500);
        // Midpoint rule, 64 subintervals per segment.
        double mid = 0.0;
        for (std::size_t k = 1; k < a.size(); ++k) {
            const double h = static_cast<double>(a[k].step - a[k - 1].step) / 64.0;
            for (int j = 0; j < 64; ++j) {
                const double f = (j + 0.5) / 64.0;
                mid += h * (a[k - 1].value + f * (a[k].value - a[k - 1].value));
            }
        }
        worst_auc = std::max(worst_auc, std::abs(auc(a) - mid) / mid);
        // Exhaustive scans.
        double area_a = 0.0, area_b = 0.0;
        for (std::size_t k = 1; k < a.size(); ++k) {
            const double dt = static_cast<double>(a[k].step - a[k - 1].step);
            area_a += 0.5 * dt * (a[k].value + a[k - 1].value);
            area_b += 0.5 * dt * (b[k].value + b[k - 1].value);
        }
        if (rgain(a, b) != (area_a - area_b) / area_b) ++rgain_mismatch;
        double best = 0.0;
        long at = 0;
        bool first = true;
        for (std::size_t k = 0; k < a.size(); ++k) {
            if (a[k].step == 0) continue;
            const double d = a[k].value - b[k].value;
            if (first || d > best) {
                best = d;
                at = a[k].step;
                first = false;
            }
        }
        const double expect = best == 0.0 ? 0.0 : best / static_cast<double>(at);
        if (tgain(a, b) != expect) ++tgain_mismatch;
    }
    return {worst_iou <= 1e-12 && worst_auc <= 0.01 && rgain_mismatch == 0 && tgain_mismatch == 0,
            "IoU max error " + num(worst_iou) + " over 1000 pairs; AUC vs midpoint max relative error " +
                num(worst_auc) + "; rgain mismatches " + std::to_string(rgain_mismatch) + "/300, tgain mismatches " +
                std::to_string(tgain_mismatch) + "/300"};
}

// ---- 7 ----

Outcome no_switch() {
    auto cfg = desk_config(fresh("c7"));
    cfg.switch_steps = 5000;
    cfg.step_logs = false;
    cfg.map_frames = 0;
    auto desk = open_desk(cfg.desk, {});
    const env::TaskSpec sr{env::Variant::Sr2Way, {0, 1}};
    const env::SwitchPair same{0, "no switch", sr, sr};
    int ok_seeds = 0;
    std::string detail;
    for (auto seed : cfg.seeds) {
        const auto r = run_switch(cfg, desk, same, voting::VoteMode::Layer, seed);
        double best = 0.0;
        for (const auto& p : r.switched)
            if (p.step > 0 && p.step <= 5000) best = std::max(best, p.value);
        const bool ok = r.reuse.at(0) > 0.8 && best >= 0.9 * r.pre_switch;
        ok_seeds += ok ? 1 : 0;
        detail += "seed " + std::to_string(seed) + " old-module reuse " + num(r.reuse.at(0)) + " (transform " +
                  num(r.reuse.at(1)) + ", new " + num(r.reuse.at(2)) + "), reward " +
                  num(best) + " vs pre-switch " + num(r.pre_switch) + (ok ? "" : " FAIL") + "; ";
        progress("no-switch seed " + std::to_string(seed) + " done");
    }
    detail += std::to_string(ok_seeds) + "/3 seeds";
    return {ok_seeds >= 2, detail};
}

// ---- 8 ----

Outcome real_switch() {
    auto cfg = desk_config(fresh("c8"));
    cfg.switch_steps = 30000;
    cfg.step_logs = false;
    cfg.map_frames = 0;
    auto desk = open_desk(cfg.desk, {});
    bool pass = true;
    std::string detail;
    for (int id : {1, 11, 13}) {
        int ok_seeds = 0;
        detail += "pair " + std::to_string(id) + ":";
        for (auto seed : cfg.seeds) {
            const auto r = run_switch(cfg, desk, env::switch_pair(id), voting::VoteMode::Unit, seed);
            const bool ok = r.ok && r.rgain > 0.0 && r.tgain > 0.0;
            ok_seeds += ok ? 1 : 0;
            detail += " RGain " + num(r.rgain, 3) + " TGain " + num(r.tgain, 3) + (ok ? "" : " (x)") + ";";
            progress("pair " + std::to_string(id) + " seed " + std::to_string(seed) + " RGain " + num(r.rgain) +
                     " TGain " + num(r.tgain));
        }
        detail += " " + std::to_string(ok_seeds) + "/3. ";
        pass = pass && ok_seeds >= 2;
    }
    return {pass, detail};
}

// ---- 9 ----

Outcome invariants() {
    auto cfg = desk_config(fresh("c9"));
    auto desk = open_desk(cfg.desk, {});
    const auto sw = desk.encoder->spec().scene_width;
    auto mc = zoo::default_config(zoo::ArchitectureId::parse("ems"), zoo::TaskFamily::SR, sw, 4);
    mc.init_sigma = cfg.init_sigma;
    auto policy = cfg.policy;
    engine::StreamConfig sc;
    sc.steps = 2000;

    auto base = zoo::build_module(mc);
    {
        engine::SingleModuleModel single(base, 1e-3);
        env::TaskSchedule s({{{env::Variant::Sr2Way, {0, 1}}, 2000}}, desk.bank, 8);
        engine::run_stream(s, single, desk.cache, policy, sc);
    }
    bool frozen_ok = true;
    std::string detail;
    for (auto mode : {voting::VoteMode::Layer, voting::VoteMode::Unit}) {
        voting::VotingConfig vc;
        vc.mode = mode;
        voting::VotingModel v(base, vc);
        v.allocate();
        const auto before = v.module(0).weight_hash();
        env::TaskSchedule s({{{env::Variant::Sr2Way, {0, 1}, env::RewardTransform::ClassReversal}, 2000}}, desk.bank, 9);
        engine::run_stream(s, v, desk.cache, policy, sc);
        const bool ok = v.module(0).weight_hash() == before && v.module(0).frozen() &&
                        v.module(1).weight_hash() != zoo::build_module(v.module(1).config()).weight_hash();
        frozen_ok = frozen_ok && ok;
        detail += std::string(voting::vote_mode_name(mode)) + " frozen hash " + (ok ? "unchanged" : "CHANGED") + "; ";
    }

    bool reduce_ok = true;
    for (auto mode : {voting::VoteMode::Layer, voting::VoteMode::Unit}) {
        voting::VotingConfig vc;
        vc.mode = mode;
        vc.force_new = true;
        voting::VotingModel v(base, vc);
        v.allocate();
        auto copy = zoo::ReMaPModule::from_checkpoint(v.module(1).checkpoint());
        engine::SingleModuleModel single(copy, vc.learning_rate);
        auto go = [&](engine::RewardModel& m) {
            std::ostringstream log;
            env::TaskSchedule s({{{env::Variant::Sr2Way, {0, 1}, env::RewardTransform::ClassReversal}, 2000}},
                                desk.bank, 10);
            auto c = sc;
            c.step_log = &log;
            const auto r = engine::run_stream(s, m, desk.cache, policy, c);
            return std::make_pair(log.str(), r.validation);
        };
        const auto a = go(v), b = go(single);
        const bool ok = a.first == b.first && a.second == b.second && v.module(1).weight_hash() == copy.weight_hash();
        reduce_ok = reduce_ok && ok;
        detail += std::string(voting::vote_mode_name(mode)) + " one-hot vote " +
                  (ok ? "bit-identical" : "DIFFERS") + " to single-module training; ";
    }
    return {frozen_ok && reduce_ok, detail};
}

// ---- 10 ----

std::map<std::string, std::string> tree_bytes(const fs::path& root) {
    std::map<std::string, std::string> out;
    for (const auto& e : fs::recursive_directory_iterator(root)) {
        if (!e.is_regular_file()) continue;
        std::ifstream in(e.path(), std::ios::binary);
        std::stringstream s;
        s << in.rdbuf();
        out[fs::relative(e.path(), root).generic_string()] = s.str();
    }
    return out;
}

Outcome determinism() {
    const auto root = fresh("c10");
    auto make = [&](const std::string& name) {
        auto c = desk_config(root / name);
        c.architectures = {"ems", "late-relu-small"};
        c.tasks = {{{env::Variant::Sr2Way, {0, 1}}, 1500, 0}, {{env::Variant::Mts2WayStationary, {0, 1}}, 1500, 0}};
        c.seeds = {1, 2};
        c.switch_ids = {13};
        c.base_steps = 1500;
        c.switch_steps = 1500;
        return c;
    };
    run_suite(make("suite-a"));
    run_suite(make("suite-b"));
    run_switch_suite(make("switch-a"));
    run_switch_suite(make("switch-b"));
    std::string detail;
    bool pass = true;
    for (const char* kind : {"suite", "switch"}) {
        const auto a = tree_bytes(root / (std::string(kind) + "-a")), b = tree_bytes(root / (std::string(kind) + "-b"));
        int differ = 0;
        for (const auto& [p, bytes] : a)
            if (!b.count(p) || b.at(p) != bytes) ++differ;
        const bool ok = a.size() == b.size() && differ == 0 && !a.empty();
        pass = pass && ok;
        detail += std::string(kind) + ": " + std::to_string(a.size()) + " files, " + std::to_string(differ) +
                  " differ; ";
    }
    return {pass, detail};
}

struct Criterion {
    int id;
    const char* title;
    std::function<Outcome()> run;
};

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"acceptance criteria"};
    std::vector<int> only;
    std::string work = g_work.string();
    app.add_option("-c,--criterion", only, "criterion number (repeatable; default all)");
    app.add_option("-w,--work", work, "scratch directory");
    CLI11_PARSE(app, argc, argv);
    g_work = work;
    fs::create_directories(g_work);

    const std::vector<Criterion> all{
        {1, "numerics: finite-difference gradients", numerics},
        {2, "policy layer with the analytic SR module", policy_layer},
        {3, "algorithm mechanics", mechanics},
        {4, "single-task learning to 0.9", single_task},
        {5, "ordinal efficiency: EMS over late-relu-small", efficiency},
        {6, "IoU and metric oracles", metric_oracles},
        {7, "no-switch reuse and recovery", no_switch},
        {8, "real-switch transfer under unit voting", real_switch},
        {9, "freezing and reduction invariants", invariants},
        {10, "determinism", determinism},
    };
    int failures = 0;
    for (const auto& c : all) {
        if (!only.empty() && std::find(only.begin(), only.end(), c.id) == only.end()) continue;
        const auto t0 = Clock::now();
        Outcome o;
        try {
            o = c.run();
        } catch (const std::exception& e) {
            o = {false, std::string("error: ") + e.what()};
        }
        failures += o.pass ? 0 : 1;
        std::cout << (o.pass ? "[PASS]" : "[FAIL]") << " criterion " << c.id << ": " << c.title << " | " << o.detail
                  << " (" << num(seconds_since(t0), 4) << " s)" << std::endl;
    }
    return failures == 0 ? 0 : 1;
}
