#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <memory>
#include <string>
#include <vector>

#include <json.hpp>

#include "remap/backbone/encoder.hpp"
#include "remap/engine/agent.hpp"
#include "remap/harness/metrics.hpp"
#include "remap/voting/controller.hpp"

namespace remap::harness {

/// Source hash of the library, fixed at configure time.
std::string code_version();

/// Module learning rates per architecture and task variant, with desk
/// overrides on top of the published table.
struct LearningRates {
    /// overrides[architecture][variant] replaces the table entry.
    std::map<std::string, std::map<std::string, double>> overrides;

    /// The published entry; scene-mts borrows the 4-shown-permuted column.
    static double table(const std::string& architecture, env::Variant variant);
    double lookup(const std::string& architecture, env::Variant variant) const;
    /// EMS runs its MTS columns at 1e-3 instead of 5e-4.
    static LearningRates desk_defaults();
};

/// World shared by every cell of an experiment: instance bank and encoder.
struct DeskConfig {
    env::RenderConfig render;
    std::uint64_t bank_seed = 1;
    int train_per_class = 200;
    int validation_per_class = 50;
    backbone::EncoderSpec encoder;
    int pretrain_epochs = 4;
    int pretrain_per_class = 200;
    /// Encoder checkpoint to reuse or create; empty keeps it in the output dir.
    std::string encoder_path;
};

struct SuiteTask {
    env::TaskSpec task;
    long steps = 30000;
    /// AUC horizon for the efficiency table; 0 means the full budget.
    long horizon = 0;
};

struct ExperimentConfig {
    std::string name = "experiment";
    /// Optional schedule file whose entries replace `tasks` (steps per entry,
    /// screen size and bank seed from the file).
    std::string schedule_path;
    DeskConfig desk;
    std::vector<std::string> architectures{"ems"};
    std::vector<SuiteTask> tasks;
    engine::PolicyConfig policy;
    double init_sigma = 0.03;
    LearningRates learning_rates = LearningRates::desk_defaults();
    std::vector<std::uint64_t> seeds{1, 2, 3};
    long validation_every = 500;
    long validation_steps = 100;
    long window = 2000;
    double stop_at = -1.0;

    std::vector<int> switch_ids;  // empty: all fifteen pairs
    std::vector<voting::VoteMode> vote_modes{voting::VoteMode::Layer, voting::VoteMode::Unit};
    voting::VotingConfig voting;
    long base_steps = 15000;
    long switch_steps = 30000;

    int map_frames = 2;
    bool step_logs = true;
    std::string output_dir = "runs";
    /// Cells run on this many threads; outputs do not depend on it.
    int jobs = 1;

    /// Fills schedule-driven tasks and checks names and budgets.
    void resolve();
    /// Everything that determines outputs (output location excluded).
    nlohmann::json identity() const;
    std::string hash() const;
};

/// Batch 8, Boltzmann T = 0.1, init σ 0.03, 3 seeds, and the four-task
/// efficiency suite with per-task horizons.
ExperimentConfig desk_defaults();

void to_json(nlohmann::json& j, const ExperimentConfig& c);
void from_json(const nlohmann::json& j, ExperimentConfig& c);
ExperimentConfig load_experiment(const std::filesystem::path& path);

zoo::TaskFamily family_of(env::Variant v);

/// Bank and frozen encoder for one experiment. The encoder is loaded from
/// `encoder_path` when present, else pretrained (and saved there).
struct Desk {
    std::shared_ptr<env::InstanceBank> bank;
    std::shared_ptr<const backbone::Encoder> encoder;
    std::shared_ptr<backbone::EncodingCache> cache;
};

Desk open_desk(const DeskConfig& config, const std::filesystem::path& fallback_encoder_path);

struct TaskRun {
    engine::LearningCurve validation;
    engine::LearningCurve training;
    long steps_run = 0;
    long updates = 0;
    bool resumed = false;
};

/// One (architecture, task, seed) cell. Writes config.json, curve.csv,
/// training.csv, steps.jsonl, module.json, maps/*.ppm and result.json into
/// `dir`; an existing result.json with the same cell hash is reused.
TaskRun run_task(const ExperimentConfig& config, Desk& desk, const std::string& architecture,
                 const SuiteTask& task, std::uint64_t seed, const std::filesystem::path& dir);

struct CellStatus {
    std::string architecture;
    std::string task;
    std::uint64_t seed = 0;
    bool ok = false;
    std::string error;
    double auc = 0.0;  // up to the task horizon
};

struct SuiteResult {
    std::vector<CellStatus> cells;
    /// Per seed, then over the per-seed mean AUCs ("mean").
    std::map<std::string, std::map<std::string, double>> ta_n_auc;
    std::string error;  // set when the table could not be formed
};

/// Every (architecture x task x seed) cell, then tables/auc.csv,
/// tables/ta_n_auc.csv and summary.json. Cell failures are recorded and the
/// suite continues.
SuiteResult run_suite(const ExperimentConfig& config);

struct SwitchRecord {
    int id = 0;
    std::string base_task;
    std::string switch_task;
    voting::VoteMode mode = voting::VoteMode::Layer;
    std::uint64_t seed = 0;
    double pre_switch = 0.0;  // final validation reward of the base module
    engine::LearningCurve switched;
    engine::LearningCurve scratch;
    double rgain = 0.0;
    double tgain = 0.0;
    /// Mean vote weight per candidate over a held-out block after training.
    std::vector<double> reuse;
    bool ok = false;
    std::string error;
};

void to_json(nlohmann::json& j, const SwitchRecord& r);

/// Mean vote weight per candidate over `steps` held-out policy steps.
std::vector<double> measure_reuse(voting::VotingModel& model, backbone::EncodingCache& cache,
                                  const engine::PolicyConfig& policy, const env::TaskSpec& task,
                                  const std::shared_ptr<env::InstanceBank>& bank, long steps, std::uint64_t seed);

/// One switching experiment: the base module (trained once and cached under
/// switch/base), a composite with a fresh module and voting on the target,
/// and a from-scratch module on the same stream (cached under switch/scratch).
SwitchRecord run_switch(const ExperimentConfig& config, Desk& desk, const env::SwitchPair& pair,
                        voting::VoteMode mode, std::uint64_t seed);

struct SwitchSuiteResult {
    std::vector<SwitchRecord> records;
};

/// All configured pairs x vote modes x seeds, then tables/switch.csv and
/// summary.json.
SwitchSuiteResult run_switch_suite(const ExperimentConfig& config);

/// FNV-1a of a file's bytes, hex.
std::string file_hash(const std::filesystem::path& path);

/// Recomputes the metrics of a suite or switch output directory from its
/// stored curves.
nlohmann::json report(const std::filesystem::path& output_dir);

}  // namespace remap::harness
