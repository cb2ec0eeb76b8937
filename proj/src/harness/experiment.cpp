#include "remap/harness/experiment.hpp"

#include <algorithm>
#include <atomic>
#include <fstream>
#include <iomanip>
#include <iostream>
#include <limits>
#include <set>
#include <sstream>
#include <thread>

#include "remap/common/errors.hpp"
#include "remap/common/hash.hpp"
#include "remap/common/random.hpp"
#include "remap/diff/checkpoint.hpp"
#include "remap/harness/render.hpp"

namespace remap::harness {

namespace fs = std::filesystem;
using nlohmann::json;

// ---- learning rates ----

namespace {

// One row per catalogue architecture (catalogue order); one code per column:
// sr-2way, sr-4way-double-binary, sr-4way-quadrant, mts-2way-stationary,
// mts-2way-vert-motion, mts-2way-horiz-flip, mts-2way-vert-motion-horiz-flip,
// mts-4way-2shown, mts-4way-2shown-vert-motion, mts-4way-4shown-stationary,
// mts-4way-4shown-permuted, localization.
// a = 1e-3, b = 5e-4, c = 2e-4, d = 1e-4.
constexpr const char* kRateRows[] = {
    "aaabbbbbbbbd",  // ems
    "aaabbbbbbbbd",  // partial-symm
    "aaaaaaaaaacd",  // no-symm
    "aaaaaaaaaacd",  // no-symm-partial-mult
    "aaaaaaaaaaad",  // no-mult-symm-relu
    "aaaadaaaaddd",  // no-mult-symm-tanh
    "aaaadaaaaddd",  // no-mult-symm-sigmoid
    "aadaaaaaaaad",  // no-mult-symm-elu
    "aaaaaaaaaaad",  // no-mult-symm-crelu
    "aaaaaaaaaaad",  // late-relu-small
    "aaaddddddddd",  // late-relu-medium
    "aadddddddddd",  // late-relu-large
    "dddaaaaaaddd",  // late-tanh-small
    "dddaaaaaaddd",  // late-tanh-medium
    "dddddddddddd",  // late-tanh-large
    "dddaaaaaadad",  // late-sigmoid-small
    "dddaaaaaaddd",  // late-sigmoid-medium
    "dddddddddddd",  // late-sigmoid-large
    "aaaaaaaaaaad",  // late-elu-small
    "aaaddddddadd",  // late-elu-medium
    "ddaddddddddd",  // late-elu-large
    "aaaaadaaaaad",  // late-crelu-small
    "aaaddddddadd",  // late-crelu-medium
    "dddddddddddd",  // late-crelu-large
};

int rate_column(env::Variant v) {
    switch (v) {
        case env::Variant::Sr2Way: return 0;
        case env::Variant::Sr4WayDoubleBinary: return 1;
        case env::Variant::Sr4WayQuadrant: return 2;
        case env::Variant::Mts2WayStationary: return 3;
        case env::Variant::Mts2WayVertMotion: return 4;
        case env::Variant::Mts2WayHorizFlip: return 5;
        case env::Variant::Mts2WayVertMotionHorizFlip: return 6;
        case env::Variant::Mts4Way2Shown: return 7;
        case env::Variant::Mts4Way2ShownVertMotion: return 8;
        case env::Variant::Mts4Way4ShownStationary: return 9;
        case env::Variant::Mts4Way4ShownPermuted: return 10;
        case env::Variant::Localization: return 11;
        case env::Variant::SceneMts: return 10;
    }
    throw ConfigError("unknown variant");
}

double rate_code(char c) {
    switch (c) {
        case 'a': return 1e-3;
        case 'b': return 5e-4;
        case 'c': return 2e-4;
        default: return 1e-4;
    }
}

}  // namespace

double LearningRates::table(const std::string& architecture, env::Variant variant) {
    const auto id = zoo::ArchitectureId::parse(architecture);
    const auto& all = zoo::ArchitectureId::all();
    const auto row = static_cast<std::size_t>(std::find(all.begin(), all.end(), id) - all.begin());
    return rate_code(kRateRows[row][rate_column(variant)]);
}

double LearningRates::lookup(const std::string& architecture, env::Variant variant) const {
    const auto canonical = zoo::ArchitectureId::parse(architecture).canonical();
    if (const auto a = overrides.find(canonical); a != overrides.end())
        if (const auto v = a->second.find(std::string(env::variant_name(variant))); v != a->second.end())
            return v->second;
    return table(canonical, variant);
}

LearningRates LearningRates::desk_defaults() {
    LearningRates r;
    for (int v = static_cast<int>(env::Variant::Mts2WayStationary); v <= static_cast<int>(env::Variant::Mts4Way4ShownPermuted);
         ++v)
        r.overrides["ems"][std::string(env::variant_name(static_cast<env::Variant>(v)))] = 1e-3;
    r.overrides["ems"]["scene-mts"] = 1e-3;
    return r;
}

// ---- config ----

zoo::TaskFamily family_of(env::Variant v) {
    switch (env::paradigm_of(v)) {
        case env::Paradigm::SR: return zoo::TaskFamily::SR;
        case env::Paradigm::LOC: return zoo::TaskFamily::LOC;
        default: return zoo::TaskFamily::MTS;
    }
}

ExperimentConfig desk_defaults() {
    ExperimentConfig c;
    c.name = "desk-efficiency";
    c.architectures = {"ems", "late-relu-small"};
    c.policy.batch = 8;
    c.policy.family = engine::DistFamily::Boltzmann;
    c.policy.temperature = 0.1;
    using V = env::Variant;
    c.tasks = {
        {{V::Sr2Way, {0, 1}}, 20000, 0},
        {{V::Sr4WayQuadrant, {0, 1, 2, 3}}, 30000, 0},
        {{V::Mts2WayStationary, {0, 1}}, 30000, 0},
        {{V::Mts4Way4ShownStationary, {0, 1, 2, 3}}, 40000, 0},
    };
    return c;
}

void ExperimentConfig::resolve() {
    if (!schedule_path.empty()) {
        const auto sched = env::load_schedule(schedule_path);
        tasks.clear();
        for (const auto& e : sched.entries) tasks.push_back({e.task, e.steps, 0});
        desk.render = sched.render;
        desk.bank_seed = sched.seed;
        schedule_path.clear();
    }
    if (architectures.empty()) throw ConfigError("no architectures configured");
    for (auto& a : architectures) a = zoo::ArchitectureId::parse(a).canonical();
    if (seeds.empty()) throw ConfigError("no seeds configured");
    policy.validate();
    for (const auto& t : tasks) {
        if (t.steps <= 0) throw ConfigError("task " + t.task.id() + " has no step budget");
        if (t.horizon < 0 || t.horizon > t.steps) throw ConfigError("task " + t.task.id() + " horizon exceeds its budget");
    }
    for (int id : switch_ids) env::switch_pair(id);
    if (!(init_sigma > 0)) throw ConfigError("init_sigma must be positive");
    if (validation_every <= 0 || validation_steps <= 0 || window <= 0)
        throw ConfigError("validation cadence, block and window must be positive");
    if (base_steps <= 0 || switch_steps <= 0) throw ConfigError("switch budgets must be positive");
}

namespace {

json desk_json(const DeskConfig& d) {
    return {{"height", d.render.height},
            {"width", d.render.width},
            {"class_count", d.render.class_count},
            {"bank_seed", d.bank_seed},
            {"train_per_class", d.train_per_class},
            {"validation_per_class", d.validation_per_class},
            {"encoder", d.encoder},
            {"pretrain_epochs", d.pretrain_epochs},
            {"pretrain_per_class", d.pretrain_per_class}};
}

std::string hash_text(const std::string& s) {
    Fnv1a h;
    h.update(s);
    return h.hex();
}

}  // namespace

void to_json(json& j, const ExperimentConfig& c) {
    json tasks = json::array();
    for (const auto& t : c.tasks) {
        json e = t.task;
        e["steps"] = t.steps;
        e["horizon"] = t.horizon;
        tasks.push_back(e);
    }
    json modes = json::array();
    for (auto m : c.vote_modes) modes.push_back(std::string(voting::vote_mode_name(m)));
    json desk = desk_json(c.desk);
    desk["encoder_path"] = c.desk.encoder_path;
    j = json{{"name", c.name},
             {"schedule_path", c.schedule_path},
             {"desk", desk},
             {"architectures", c.architectures},
             {"tasks", tasks},
             {"policy", c.policy},
             {"init_sigma", c.init_sigma},
             {"learning_rate_overrides", c.learning_rates.overrides},
             {"seeds", c.seeds},
             {"validation_every", c.validation_every},
             {"validation_steps", c.validation_steps},
             {"window", c.window},
             {"stop_at", c.stop_at},
             {"switch_ids", c.switch_ids},
             {"vote_modes", modes},
             {"voting", c.voting},
             {"base_steps", c.base_steps},
             {"switch_steps", c.switch_steps},
             {"map_frames", c.map_frames},
             {"step_logs", c.step_logs},
             {"output_dir", c.output_dir},
             {"jobs", c.jobs}};
}

void from_json(const json& j, ExperimentConfig& c) {
    const ExperimentConfig d = desk_defaults();
    c = d;
    c.name = j.value("name", d.name);
    c.schedule_path = j.value("schedule_path", d.schedule_path);
    if (j.contains("desk")) {
        const auto& k = j.at("desk");
        c.desk.render.height = k.value("height", d.desk.render.height);
        c.desk.render.width = k.value("width", d.desk.render.width);
        c.desk.render.class_count = k.value("class_count", d.desk.render.class_count);
        c.desk.bank_seed = k.value("bank_seed", d.desk.bank_seed);
        c.desk.train_per_class = k.value("train_per_class", d.desk.train_per_class);
        c.desk.validation_per_class = k.value("validation_per_class", d.desk.validation_per_class);
        if (k.contains("encoder")) c.desk.encoder = k.at("encoder").get<backbone::EncoderSpec>();
        c.desk.pretrain_epochs = k.value("pretrain_epochs", d.desk.pretrain_epochs);
        c.desk.pretrain_per_class = k.value("pretrain_per_class", d.desk.pretrain_per_class);
        c.desk.encoder_path = k.value("encoder_path", d.desk.encoder_path);
    }
    if (j.contains("architectures")) c.architectures = j.at("architectures").get<std::vector<std::string>>();
    if (j.contains("tasks")) {
        c.tasks.clear();
        for (const auto& e : j.at("tasks"))
            c.tasks.push_back({e.get<env::TaskSpec>(), e.value("steps", 30000L), e.value("horizon", 0L)});
    }
    if (j.contains("policy")) c.policy = j.at("policy").get<engine::PolicyConfig>();
    c.init_sigma = j.value("init_sigma", d.init_sigma);
    if (j.contains("learning_rate_overrides"))
        c.learning_rates.overrides =
            j.at("learning_rate_overrides").get<std::map<std::string, std::map<std::string, double>>>();
    if (j.contains("seeds")) c.seeds = j.at("seeds").get<std::vector<std::uint64_t>>();
    c.validation_every = j.value("validation_every", d.validation_every);
    c.validation_steps = j.value("validation_steps", d.validation_steps);
    c.window = j.value("window", d.window);
    c.stop_at = j.value("stop_at", d.stop_at);
    if (j.contains("switch_ids")) c.switch_ids = j.at("switch_ids").get<std::vector<int>>();
    if (j.contains("vote_modes")) {
        c.vote_modes.clear();
        for (const auto& m : j.at("vote_modes")) c.vote_modes.push_back(voting::parse_vote_mode(m.get<std::string>()));
    }
    if (j.contains("voting")) c.voting = j.at("voting").get<voting::VotingConfig>();
    c.base_steps = j.value("base_steps", d.base_steps);
    c.switch_steps = j.value("switch_steps", d.switch_steps);
    c.map_frames = j.value("map_frames", d.map_frames);
    c.step_logs = j.value("step_logs", d.step_logs);
    c.output_dir = j.value("output_dir", d.output_dir);
    c.jobs = j.value("jobs", d.jobs);
}

ExperimentConfig load_experiment(const fs::path& path) {
    ExperimentConfig c = diff::read_json(path).get<ExperimentConfig>();
    if (!c.schedule_path.empty() && fs::path(c.schedule_path).is_relative())
        c.schedule_path = (path.parent_path() / c.schedule_path).string();
    return c;
}

json ExperimentConfig::identity() const {
    json j = *this;
    j.erase("output_dir");
    j.erase("jobs");
    j.erase("schedule_path");
    j["desk"].erase("encoder_path");
    return j;
}

std::string ExperimentConfig::hash() const { return hash_text(identity().dump() + code_version()); }

// ---- io helpers ----

namespace {

void write_text(const fs::path& path, const std::string& text) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw IoError("cannot write " + path.string());
    out << text;
    if (!out) throw IoError("write failed for " + path.string());
}

void write_pretty(const fs::path& path, const json& j) { write_text(path, j.dump(2) + "\n"); }

std::string fmt(double v) {
    std::ostringstream s;
    s << std::setprecision(std::numeric_limits<double>::max_digits10) << v;
    return s.str();
}

std::string slug(const std::string& s) {
    std::string out;
    for (char c : s) out += (std::isalnum(static_cast<unsigned char>(c)) || c == '-' || c == '.') ? c : '_';
    while (!out.empty() && out.back() == '_') out.pop_back();
    return out;
}

/// Task ids contain commas.
std::string quote(const std::string& s) { return '"' + s + '"'; }

fs::path seed_dir(std::uint64_t seed) { return "seed-" + std::to_string(seed); }

template <typename F>
void parallel_for(std::size_t n, int jobs, F f) {
    const auto workers = static_cast<std::size_t>(std::max(1, jobs));
    if (workers == 1 || n <= 1) {
        for (std::size_t i = 0; i < n; ++i) f(i);
        return;
    }
    std::atomic<std::size_t> next{0};
    std::vector<std::thread> pool;
    for (std::size_t w = 0; w < std::min(workers, n); ++w)
        pool.emplace_back([&] {
            for (std::size_t i = next++; i < n; i = next++) f(i);
        });
    for (auto& t : pool) t.join();
}

/// Hashes of every regular file under `dir`, keyed by path relative to `root`.
json hash_tree(const fs::path& root, const fs::path& dir) {
    std::vector<fs::path> files;
    if (fs::exists(dir))
        for (const auto& e : fs::recursive_directory_iterator(dir))
            if (e.is_regular_file()) files.push_back(e.path());
    std::sort(files.begin(), files.end());
    json out = json::object();
    for (const auto& f : files) out[fs::relative(f, root).generic_string()] = file_hash(f);
    return out;
}

}  // namespace

std::string file_hash(const fs::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw IoError("cannot read " + path.string());
    Fnv1a h;
    std::vector<char> buf(1 << 16);
    while (in) {
        in.read(buf.data(), static_cast<std::streamsize>(buf.size()));
        h.update(buf.data(), static_cast<std::size_t>(in.gcount()));
    }
    return h.hex();
}

// ---- desk ----

Desk open_desk(const DeskConfig& config, const fs::path& fallback_encoder_path) {
    Desk d;
    d.bank = std::make_shared<env::InstanceBank>(config.render, config.bank_seed, config.train_per_class,
                                                 config.validation_per_class);
    const fs::path path = config.encoder_path.empty() ? fallback_encoder_path : fs::path(config.encoder_path);
    const json key = desk_json(config);
    if (!path.empty() && fs::exists(path)) {
        const json doc = diff::read_json(path);
        if (doc.value("desk", json()) == key)
            d.encoder = std::make_shared<const backbone::Encoder>(backbone::Encoder::from_checkpoint(doc));
    }
    if (!d.encoder) {
        backbone::EncoderSpec spec = config.encoder;
        spec.height = config.render.height;
        spec.width = config.render.width;
        std::vector<int> classes(static_cast<std::size_t>(config.render.class_count));
        for (int i = 0; i < config.render.class_count; ++i) classes[static_cast<std::size_t>(i)] = i;
        const auto data = backbone::make_dataset(*d.bank, classes, config.pretrain_per_class, env::Split::Train);
        backbone::PretrainConfig pc;
        pc.epochs = config.pretrain_epochs;
        pc.seed = spec.seed;
        auto enc = backbone::pretrain(data, spec, pc);
        if (!path.empty()) {
            if (path.has_parent_path()) fs::create_directories(path.parent_path());
            json doc = enc.checkpoint();
            doc["desk"] = key;
            diff::write_json(path, doc);
        }
        d.encoder = std::make_shared<const backbone::Encoder>(std::move(enc));
    }
    d.cache = std::make_shared<backbone::EncodingCache>(d.encoder);
    return d;
}

// ---- single task ----

namespace {

engine::StreamConfig stream_config(const ExperimentConfig& c, long steps, std::uint64_t seed) {
    engine::StreamConfig s;
    s.steps = steps;
    s.validation_every = c.validation_every;
    s.validation_steps = c.validation_steps;
    s.window = c.window;
    s.stop_at = c.stop_at;
    s.seed = seed;
    return s;
}

engine::PolicyConfig seeded_policy(const ExperimentConfig& c, std::uint64_t seed) {
    auto p = c.policy;
    p.seed = seed;
    return p;
}

zoo::ModuleConfig module_config(const ExperimentConfig& c, const Desk& desk, const std::string& arch,
                                env::Variant v, std::uint64_t seed) {
    auto mc = zoo::default_config(zoo::ArchitectureId::parse(arch), family_of(v), desk.encoder->spec().scene_width,
                                  seed);
    mc.init_sigma = c.init_sigma;
    return mc;
}

json stream_identity(const ExperimentConfig& c, const Desk& desk) {
    return {{"code", code_version()},
            {"desk", desk_json(c.desk)},
            {"encoder_hash", desk.encoder->weight_hash_hex()},
            {"policy", c.policy},
            {"init_sigma", c.init_sigma},
            {"validation_every", c.validation_every},
            {"validation_steps", c.validation_steps},
            {"window", c.window}};
}

void render_maps(const ExperimentConfig& c, Desk& desk, engine::RewardModel& model, const env::TaskSpec& task,
                 std::uint64_t seed, const fs::path& dir) {
    if (c.map_frames <= 0) return;
    fs::create_directories(dir);
    auto program = env::make_task(task, desk.bank, env::Split::Validation, derive_seed(seed, {0x3a9}));
    const auto& shape = model.shape();
    engine::HistoryBuffer history(shape.k_b, shape.scene_width,
                                  shape.conv ? shape.conv->map_h * shape.conv->map_w * shape.conv->map_c : 0);
    std::mt19937_64 rng(derive_seed(seed, {0x3aa}));
    const auto policy = seeded_policy(c, seed);
    for (int i = 0; i < c.map_frames; ++i) {
        const auto frame = program->frame();
        history.push_frame(*desk.cache->get(frame->pixels));
        const auto sample = engine::evaluate_map(model, history, policy, program->height(), program->width(), rng);
        write_ppm(dir / ("frame-" + std::to_string(i) + ".ppm"), frame->pixels);
        render_reward_map(sample, program->height(), program->width(), dir / ("map-" + std::to_string(i) + ".ppm"));
        const auto a = sample.candidates[sample.chosen_index];
        program->step(a);
        history.push_action(a, program->height(), program->width());
    }
}

/// Runs one module on one task stream and persists everything about it.
TaskRun train_single(const ExperimentConfig& c, Desk& desk, const std::string& arch, const env::TaskSpec& task,
                     long steps, std::uint64_t module_seed, std::uint64_t env_seed, std::uint64_t stream_seed,
                     const json& identity, const fs::path& dir, zoo::ReMaPModule* trained = nullptr) {
    const std::string cell_hash = hash_text(identity.dump());
    const auto result_path = dir / "result.json";
    if (fs::exists(result_path) && fs::exists(dir / "module.json")) {
        const json r = diff::read_json(result_path);
        if (r.value("cell_hash", std::string()) == cell_hash) {
            TaskRun run;
            run.validation = engine::read_curve_csv(dir / "curve.csv");
            run.training = engine::read_curve_csv(dir / "training.csv");
            run.steps_run = r.at("steps_run").get<long>();
            run.updates = r.at("updates").get<long>();
            run.resumed = true;
            if (trained != nullptr) *trained = zoo::ReMaPModule::load(dir / "module.json");
            return run;
        }
    }
    fs::create_directories(dir);
    fs::remove(result_path);
    write_pretty(dir / "config.json", identity);

    auto module = zoo::build_module(module_config(c, desk, arch, task.variant, module_seed));
    engine::SingleModuleModel model(module, c.learning_rates.lookup(arch, task.variant));
    env::TaskSchedule schedule({{task, steps}}, desk.bank, env_seed);
    auto sc = stream_config(c, steps, stream_seed);
    std::ofstream log;
    if (c.step_logs) {
        log.open(dir / "steps.jsonl", std::ios::binary);
        if (!log) throw IoError("cannot write " + (dir / "steps.jsonl").string());
        sc.step_log = &log;
    }
    const auto res = engine::run_stream(schedule, model, desk.cache, seeded_policy(c, stream_seed), sc);
    if (log.is_open()) {
        log.close();
        if (!log) throw IoError("write failed for " + (dir / "steps.jsonl").string());
    }
    engine::write_curve_csv(dir / "curve.csv", res.validation);
    engine::write_curve_csv(dir / "training.csv", res.training);
    module.save(dir / "module.json");
    render_maps(c, desk, model, task, stream_seed, dir / "maps");

    TaskRun run{res.validation, res.training, res.steps_run, res.updates, false};
    write_pretty(result_path, {{"cell_hash", cell_hash},
                               {"steps_run", run.steps_run},
                               {"updates", run.updates},
                               {"final_validation", run.validation.empty() ? 0.0 : run.validation.back().value},
                               {"module_hash", to_hex(module.weight_hash())}});
    if (trained != nullptr) *trained = std::move(module);
    return run;
}

}  // namespace

TaskRun run_task(const ExperimentConfig& config, Desk& desk, const std::string& architecture, const SuiteTask& task,
                 std::uint64_t seed, const fs::path& dir) {
    const std::string arch = zoo::ArchitectureId::parse(architecture).canonical();
    json identity = stream_identity(config, desk);
    identity["kind"] = "task";
    identity["architecture"] = arch;
    identity["task"] = task.task;
    identity["steps"] = task.steps;
    identity["seed"] = seed;
    identity["stop_at"] = config.stop_at;
    identity["learning_rate"] = config.learning_rates.lookup(arch, task.task.variant);
    return train_single(config, desk, arch, task.task, task.steps, seed, derive_seed(seed, {0xe57}), seed, identity,
                        dir);
}

// ---- suite ----

namespace {

void write_suite_tables(const fs::path& out, const std::vector<CellStatus>& cells,
                        const std::map<std::string, std::map<std::string, double>>& scores) {
    fs::create_directories(out / "tables");
    std::ostringstream a;
    a << "architecture,task,seed,ok,auc\n";
    for (const auto& c : cells)
        a << c.architecture << ',' << quote(c.task) << ',' << c.seed << ',' << (c.ok ? 1 : 0) << ',' << fmt(c.auc) << '\n';
    write_text(out / "tables" / "auc.csv", a.str());
    std::ostringstream t;
    t << "scope,architecture,ta_n_auc\n";
    for (const auto& [scope, per] : scores)
        for (const auto& [arch, v] : per) t << scope << ',' << arch << ',' << fmt(v) << '\n';
    write_text(out / "tables" / "ta_n_auc.csv", t.str());
}

/// TA-N-AUC per seed and over seed-averaged AUCs.
std::map<std::string, std::map<std::string, double>> score_cells(const std::vector<CellStatus>& cells,
                                                                 std::string* error) {
    std::map<std::uint64_t, std::map<std::string, std::map<std::string, double>>> per_seed;
    std::map<std::string, std::map<std::string, std::pair<double, int>>> sums;
    for (const auto& c : cells) {
        if (!c.ok) continue;
        per_seed[c.seed][c.architecture][c.task] = c.auc;
        auto& s = sums[c.architecture][c.task];
        s.first += c.auc;
        ++s.second;
    }
    std::map<std::string, std::map<std::string, double>> out;
    try {
        for (const auto& [seed, aucs] : per_seed) out["seed-" + std::to_string(seed)] = ta_n_auc(aucs);
        std::map<std::string, std::map<std::string, double>> mean;
        for (const auto& [arch, per] : sums)
            for (const auto& [task, s] : per) mean[arch][task] = s.first / s.second;
        if (!mean.empty()) out["mean"] = ta_n_auc(mean);
    } catch (const std::exception& e) {
        if (error != nullptr) *error = e.what();
    }
    return out;
}

}  // namespace

SuiteResult run_suite(const ExperimentConfig& input) {
    ExperimentConfig config = input;
    config.resolve();
    if (config.tasks.empty()) throw ConfigError("suite has no tasks");
    const fs::path out = config.output_dir;
    fs::create_directories(out);
    json echo = config.identity();
    echo["code_version"] = code_version();
    echo["config_hash"] = config.hash();
    write_pretty(out / "config.json", echo);
    Desk desk = open_desk(config.desk, out / "encoder.json");

    struct Cell {
        std::string arch;
        SuiteTask task;
        std::uint64_t seed;
    };
    std::vector<Cell> cells;
    for (const auto& a : config.architectures)
        for (const auto& t : config.tasks)
            for (auto s : config.seeds) cells.push_back({a, t, s});

    SuiteResult result;
    result.cells.resize(cells.size());
    parallel_for(cells.size(), config.jobs, [&](std::size_t i) {
        const auto& cell = cells[i];
        auto& st = result.cells[i];
        st.architecture = cell.arch;
        st.task = cell.task.task.id();
        st.seed = cell.seed;
        try {
            const auto dir = out / "cells" / cell.arch / slug(st.task) / seed_dir(cell.seed);
            const auto run = run_task(config, desk, cell.arch, cell.task, cell.seed, dir);
            const long horizon = cell.task.horizon > 0 ? cell.task.horizon : cell.task.steps;
            st.auc = auc(truncate(run.validation, horizon));
            st.ok = true;
        } catch (const std::exception& e) {
            st.error = e.what();
        }
    });
    result.ta_n_auc = score_cells(result.cells, &result.error);
    write_suite_tables(out, result.cells, result.ta_n_auc);

    json summary{{"name", config.name},
                 {"code_version", code_version()},
                 {"config_hash", config.hash()},
                 {"kind", "suite"}};
    json jc = json::array();
    for (std::size_t i = 0; i < cells.size(); ++i) {
        const auto& st = result.cells[i];
        json e{{"architecture", st.architecture}, {"task", st.task},   {"seed", st.seed},
               {"ok", st.ok},                     {"error", st.error}, {"auc", st.auc}};
        e["files"] = hash_tree(out, out / "cells" / st.architecture / slug(st.task) / seed_dir(st.seed));
        jc.push_back(e);
    }
    summary["cells"] = jc;
    summary["ta_n_auc"] = result.ta_n_auc;
    summary["ta_n_auc_error"] = result.error;
    summary["tables"] = hash_tree(out, out / "tables");
    write_pretty(out / "summary.json", summary);
    return result;
}

// ---- switching ----

void to_json(json& j, const SwitchRecord& r) {
    auto curve = [](const engine::LearningCurve& c) {
        json a = json::array();
        for (const auto& p : c) a.push_back({p.step, p.value});
        return a;
    };
    j = json{{"id", r.id},
             {"base_task", r.base_task},
             {"switch_task", r.switch_task},
             {"mode", std::string(voting::vote_mode_name(r.mode))},
             {"seed", r.seed},
             {"pre_switch", r.pre_switch},
             {"rgain", r.rgain},
             {"tgain", r.tgain},
             {"reuse", r.reuse},
             {"ok", r.ok},
             {"error", r.error},
             {"switched", curve(r.switched)},
             {"scratch", curve(r.scratch)}};
}

std::vector<double> measure_reuse(voting::VotingModel& model, backbone::EncodingCache& cache,
                                  const engine::PolicyConfig& policy, const env::TaskSpec& task,
                                  const std::shared_ptr<env::InstanceBank>& bank, long steps, std::uint64_t seed) {
    auto program = env::make_task(task, bank, env::Split::Validation, derive_seed(seed, {1}));
    const auto& shape = model.shape();
    engine::HistoryBuffer history(shape.k_b, shape.scene_width,
                                  shape.conv ? shape.conv->map_h * shape.conv->map_w * shape.conv->map_c : 0);
    std::mt19937_64 rng(derive_seed(seed, {2}));
    std::vector<double> sum(model.candidate_count(), 0.0);
    for (long i = 0; i < steps; ++i) {
        history.push_frame(*cache.get(program->frame()->pixels));
        const auto sample = engine::evaluate_map(model, history, policy, program->height(), program->width(), rng);
        for (std::size_t k = 0; k < sum.size(); ++k) sum[k] += model.reuse_fraction(k);
        const auto a = sample.candidates[sample.chosen_index];
        program->step(a);
        history.push_action(a, program->height(), program->width());
    }
    for (double& s : sum) s /= static_cast<double>(std::max(1L, steps));
    return sum;
}

namespace {

constexpr long kReuseSteps = 500;

struct SwitchSeeds {
    std::uint64_t base_env, target_env, scratch_module;
};

SwitchSeeds switch_seeds(std::uint64_t seed) {
    return {derive_seed(seed, {0xba5e}), derive_seed(seed, {0x7a26}), derive_seed(seed, {0x5c7a})};
}

std::string arch_of(const ExperimentConfig& c) { return zoo::ArchitectureId::parse(c.architectures.front()).canonical(); }

json base_identity(const ExperimentConfig& c, const Desk& desk, const env::TaskSpec& task, std::uint64_t seed) {
    json id = stream_identity(c, desk);
    id["kind"] = "switch-base";
    id["architecture"] = arch_of(c);
    id["task"] = task;
    id["steps"] = c.base_steps;
    id["seed"] = seed;
    id["learning_rate"] = c.learning_rates.lookup(arch_of(c), task.variant);
    return id;
}

/// Trains (or loads) the base module; returns its final validation reward.
double ensure_base(const ExperimentConfig& c, Desk& desk, const env::TaskSpec& task, std::uint64_t seed,
                   zoo::ReMaPModule* module) {
    ExperimentConfig nc = c;
    nc.stop_at = -1.0;
    const auto dir = fs::path(c.output_dir) / "switch" / "base" / slug(task.id()) / seed_dir(seed);
    const auto run = train_single(nc, desk, arch_of(c), task, c.base_steps, seed, switch_seeds(seed).base_env, seed,
                                  base_identity(c, desk, task, seed), dir, module);
    return run.validation.empty() ? 0.0 : run.validation.back().value;
}

/// The from-scratch reference on the target stream shared with the composite.
/// Its module has the base module's shape, like the composite's fresh module.
engine::LearningCurve ensure_scratch(const ExperimentConfig& c, Desk& desk, const env::SwitchPair& pair,
                                     std::uint64_t seed) {
    ExperimentConfig nc = c;
    nc.stop_at = -1.0;
    const auto s = switch_seeds(seed);
    const std::string arch = arch_of(c);
    json id = stream_identity(c, desk);
    id["kind"] = "switch-scratch";
    id["architecture"] = arch;
    id["task"] = pair.target;
    id["shape_of"] = pair.base.variant;
    id["steps"] = c.switch_steps;
    id["seed"] = seed;
    id["learning_rate"] = c.learning_rates.lookup(arch, pair.target.variant);
    const std::string cell_hash = hash_text(id.dump());
    const auto dir = fs::path(c.output_dir) / "switch" / "scratch" / ("pair-" + std::to_string(pair.id)) / seed_dir(seed);
    const auto result_path = dir / "result.json";
    if (fs::exists(result_path)) {
        const json r = diff::read_json(result_path);
        if (r.value("cell_hash", std::string()) == cell_hash) return engine::read_curve_csv(dir / "curve.csv");
    }
    fs::create_directories(dir);
    fs::remove(result_path);
    write_pretty(dir / "config.json", id);
    auto module = zoo::build_module(module_config(nc, desk, arch, pair.base.variant, s.scratch_module));
    engine::SingleModuleModel model(module, c.learning_rates.lookup(arch, pair.target.variant));
    env::TaskSchedule schedule({{pair.target, c.switch_steps}}, desk.bank, s.target_env);
    const auto res = engine::run_stream(schedule, model, desk.cache, seeded_policy(c, s.target_env),
                                        stream_config(nc, c.switch_steps, s.target_env));
    engine::write_curve_csv(dir / "curve.csv", res.validation);
    module.save(dir / "module.json");
    write_pretty(result_path, {{"cell_hash", cell_hash}, {"steps_run", res.steps_run}, {"updates", res.updates}});
    return res.validation;
}

fs::path record_dir(const ExperimentConfig& c, int id, voting::VoteMode mode, std::uint64_t seed) {
    return fs::path(c.output_dir) / "switch" / ("pair-" + std::to_string(id)) /
           std::string(voting::vote_mode_name(mode)) / seed_dir(seed);
}

}  // namespace

SwitchRecord run_switch(const ExperimentConfig& config, Desk& desk, const env::SwitchPair& pair,
                        voting::VoteMode mode, std::uint64_t seed) {
    SwitchRecord r;
    r.id = pair.id;
    r.base_task = pair.base.id();
    r.switch_task = pair.target.id();
    r.mode = mode;
    r.seed = seed;

    zoo::ReMaPModule base;
    r.pre_switch = ensure_base(config, desk, pair.base, seed, &base);
    r.scratch = ensure_scratch(config, desk, pair, seed);

    ExperimentConfig nc = config;
    nc.stop_at = -1.0;
    const auto s = switch_seeds(seed);
    voting::VotingConfig vc = config.voting;
    vc.mode = mode;
    vc.seed = seed;
    vc.learning_rate = config.learning_rates.lookup(arch_of(config), pair.target.variant);
    json id = stream_identity(config, desk);
    id["kind"] = "switch";
    id["pair"] = {{"id", pair.id}, {"base", pair.base}, {"target", pair.target}};
    id["voting"] = vc;
    id["base_hash"] = to_hex(base.weight_hash());
    id["steps"] = config.switch_steps;
    id["seed"] = seed;
    const std::string cell_hash = hash_text(id.dump());
    const auto dir = record_dir(config, pair.id, mode, seed);
    const auto record_path = dir / "record.json";
    if (fs::exists(record_path)) {
        const json doc = diff::read_json(record_path);
        if (doc.value("cell_hash", std::string()) == cell_hash) {
            r.switched = engine::read_curve_csv(dir / "curve.csv");
            r.reuse = doc.at("reuse").get<std::vector<double>>();
            r.rgain = doc.at("rgain").get<double>();
            r.tgain = doc.at("tgain").get<double>();
            r.ok = doc.at("ok").get<bool>();
            r.error = doc.value("error", std::string());
            return r;
        }
    }
    fs::create_directories(dir);
    fs::remove(record_path);
    write_pretty(dir / "config.json", id);

    const auto hash_before = base.weight_hash();
    voting::VotingModel model(base, vc);
    model.allocate();
    env::TaskSchedule schedule({{pair.target, config.switch_steps}}, desk.bank, s.target_env);
    auto sc = stream_config(nc, config.switch_steps, s.target_env);
    std::ofstream log, votes;
    if (config.step_logs) {
        log.open(dir / "steps.jsonl", std::ios::binary);
        votes.open(dir / "votes.jsonl", std::ios::binary);
        if (!log || !votes) throw IoError("cannot write logs in " + dir.string());
        sc.step_log = &log;
        model.set_vote_log(&votes);
    }
    const auto policy = seeded_policy(config, s.target_env);
    const auto res = engine::run_stream(schedule, model, desk.cache, policy, sc);
    model.set_vote_log(nullptr);
    r.switched = res.validation;
    r.reuse = measure_reuse(model, *desk.cache, policy, pair.target, desk.bank, kReuseSteps,
                            derive_seed(seed, {0x4e05e}));
    const bool frozen_intact = model.module(0).weight_hash() == hash_before;
    try {
        r.rgain = rgain(r.switched, r.scratch);
        r.tgain = tgain(r.switched, r.scratch);
        r.ok = true;
    } catch (const std::exception& e) {
        r.error = e.what();
    }
    engine::write_curve_csv(dir / "curve.csv", r.switched);
    engine::write_curve_csv(dir / "scratch.csv", r.scratch);
    diff::write_json(dir / "composite.json", model.checkpoint());
    render_maps(config, desk, model, pair.target, s.target_env, dir / "maps");
    json doc = r;
    doc.erase("switched");
    doc.erase("scratch");
    doc["cell_hash"] = cell_hash;
    doc["frozen_hash_before"] = to_hex(hash_before);
    doc["frozen_hash_after"] = to_hex(model.module(0).weight_hash());
    doc["frozen_intact"] = frozen_intact;
    doc["steps_run"] = res.steps_run;
    write_pretty(record_path, doc);
    return r;
}

SwitchSuiteResult run_switch_suite(const ExperimentConfig& input) {
    ExperimentConfig config = input;
    config.resolve();
    const fs::path out = config.output_dir;
    fs::create_directories(out);
    json echo = config.identity();
    echo["code_version"] = code_version();
    echo["config_hash"] = config.hash();
    write_pretty(out / "config.json", echo);
    Desk desk = open_desk(config.desk, out / "encoder.json");

    std::vector<int> ids = config.switch_ids;
    if (ids.empty())
        for (const auto& p : env::switch_pairs()) ids.push_back(p.id);
    const int jobs = config.jobs;

    // Bases and scratch references first, so that records can share them.
    std::vector<std::pair<env::TaskSpec, std::uint64_t>> bases;
    for (int id : ids)
        for (auto s : config.seeds) {
            const auto& p = env::switch_pair(id);
            if (std::find(bases.begin(), bases.end(), std::make_pair(p.base, s)) == bases.end())
                bases.emplace_back(p.base, s);
        }
    std::vector<std::string> base_errors(bases.size());
    parallel_for(bases.size(), jobs, [&](std::size_t i) {
        try {
            zoo::ReMaPModule m;
            ensure_base(config, desk, bases[i].first, bases[i].second, &m);
        } catch (const std::exception& e) {
            base_errors[i] = e.what();
        }
    });

    struct Job {
        int id;
        voting::VoteMode mode;
        std::uint64_t seed;
    };
    std::vector<Job> jobs_list;
    for (int id : ids)
        for (auto m : config.vote_modes)
            for (auto s : config.seeds) jobs_list.push_back({id, m, s});
    SwitchSuiteResult result;
    result.records.resize(jobs_list.size());
    // Scratch curves are shared across vote modes; build them once per (pair, seed).
    std::vector<std::pair<int, std::uint64_t>> scratch;
    for (const auto& j : jobs_list)
        if (std::find(scratch.begin(), scratch.end(), std::make_pair(j.id, j.seed)) == scratch.end())
            scratch.emplace_back(j.id, j.seed);
    parallel_for(scratch.size(), jobs, [&](std::size_t i) {
        try {
            ensure_scratch(config, desk, env::switch_pair(scratch[i].first), scratch[i].second);
        } catch (const std::exception&) {
            // run_switch retries and records the error.
        }
    });
    parallel_for(jobs_list.size(), jobs, [&](std::size_t i) {
        const auto& j = jobs_list[i];
        const auto& p = env::switch_pair(j.id);
        try {
            result.records[i] = run_switch(config, desk, p, j.mode, j.seed);
        } catch (const std::exception& e) {
            auto& r = result.records[i];
            r.id = j.id;
            r.base_task = p.base.id();
            r.switch_task = p.target.id();
            r.mode = j.mode;
            r.seed = j.seed;
            r.error = e.what();
        }
    });

    fs::create_directories(out / "tables");
    std::ostringstream t;
    t << "id,base_task,switch_task,mode,seed,ok,rgain,tgain,reuse\n";
    for (const auto& r : result.records) {
        t << r.id << ',' << quote(r.base_task) << ',' << quote(r.switch_task) << ',' << voting::vote_mode_name(r.mode) << ','
          << r.seed << ',' << (r.ok ? 1 : 0) << ',' << fmt(r.rgain) << ',' << fmt(r.tgain) << ',';
        for (std::size_t k = 0; k < r.reuse.size(); ++k) t << (k ? ";" : "") << fmt(r.reuse[k]);
        t << '\n';
    }
    write_text(out / "tables" / "switch.csv", t.str());

    json summary{{"name", config.name},
                 {"code_version", code_version()},
                 {"config_hash", config.hash()},
                 {"kind", "switch"}};
    json recs = json::array();
    for (const auto& r : result.records) {
        json e = r;
        e.erase("switched");
        e.erase("scratch");
        e["files"] = hash_tree(out, record_dir(config, r.id, r.mode, r.seed));
        recs.push_back(e);
    }
    summary["records"] = recs;
    summary["base_errors"] = base_errors;
    summary["tables"] = hash_tree(out, out / "tables");
    write_pretty(out / "summary.json", summary);
    return result;
}

// ---- report ----

json report(const fs::path& output_dir) {
    const auto summary_path = output_dir / "summary.json";
    if (!fs::exists(summary_path)) throw IoError("no summary.json in " + output_dir.string());
    const json summary = diff::read_json(summary_path);
    json out{{"kind", summary.at("kind")}, {"config_hash", summary.at("config_hash")}};
    if (summary.at("kind") == "suite") {
        const json config = diff::read_json(output_dir / "config.json");
        std::map<std::string, long> horizon;
        for (const auto& t : config.at("tasks")) {
            const auto spec = t.get<env::TaskSpec>();
            const long h = t.value("horizon", 0L);
            horizon[spec.id()] = h > 0 ? h : t.at("steps").get<long>();
        }
        std::vector<CellStatus> cells;
        for (const auto& c : summary.at("cells")) {
            CellStatus st;
            st.architecture = c.at("architecture");
            st.task = c.at("task");
            st.seed = c.at("seed");
            const auto curve = output_dir / "cells" / st.architecture / slug(st.task) / seed_dir(st.seed) / "curve.csv";
            try {
                st.auc = auc(truncate(engine::read_curve_csv(curve), horizon.at(st.task)));
                st.ok = true;
            } catch (const std::exception& e) {
                st.error = e.what();
            }
            cells.push_back(st);
        }
        std::string error;
        out["ta_n_auc"] = score_cells(cells, &error);
        out["error"] = error;
        json aucs = json::array();
        for (const auto& c : cells)
            aucs.push_back({{"architecture", c.architecture}, {"task", c.task}, {"seed", c.seed}, {"auc", c.auc},
                            {"ok", c.ok}});
        out["cells"] = aucs;
    } else {
        json recs = json::array();
        for (const auto& rec : summary.at("records")) {
            const auto dir = output_dir / "switch" / ("pair-" + std::to_string(rec.at("id").get<int>())) /
                             rec.at("mode").get<std::string>() / seed_dir(rec.at("seed").get<std::uint64_t>());
            json e{{"id", rec.at("id")}, {"mode", rec.at("mode")}, {"seed", rec.at("seed")}};
            try {
                const auto sw = engine::read_curve_csv(dir / "curve.csv");
                const auto sc = engine::read_curve_csv(dir / "scratch.csv");
                e["rgain"] = rgain(sw, sc);
                e["tgain"] = tgain(sw, sc);
                e["reuse"] = rec.at("reuse");
            } catch (const std::exception& ex) {
                e["error"] = ex.what();
            }
            recs.push_back(e);
        }
        out["records"] = recs;
    }
    return out;
}

}  // namespace remap::harness
