#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

#include "taet/attacks.hpp"
#include "taet/efficiency.hpp"
#include "taet/model.hpp"
#include "taet/trainer.hpp"

namespace taet {

inline constexpr const char* kArtifactVersion = "0.1.0";
inline constexpr const char* kOutputRootEnv = "TAET_OUTPUT_ROOT";

/// Invalid or unparsable experiment configuration. `what()` starts with the
/// offending field path, e.g. "train.attack.steps: expected integer".
class ConfigError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

struct DatasetSection {
    std::string source = "gaussian";  // gaussian | csv | idx
    std::string path;                 // csv/idx sample file
    std::string labels_path;          // idx only
    std::size_t num_classes = 5;
    std::size_t dim = 10;
    double separation = 3.0;
    std::size_t n_max = 930;
    double imbalance_ratio = 10.0;
    std::size_t test_per_class = 200;
    std::uint64_t seed = 1;
};

struct ModelSection {
    std::vector<std::size_t> hidden_dims{64, 64};
    std::uint64_t init_seed = 1;
};

struct EvalSection {
    std::vector<AttackSpec> attacks;
    std::size_t tail_k = 0;
    std::size_t batch_size = 256;
    bool export_attack_csv = false;
};

struct EfficiencySection {
    int probe_batches = 5;
    /// Unset: derived from the run (b = batch size, c = h = 1, w = feature dim, d = 8).
    std::optional<MemoryModel> memory;
};

struct OutputSection {
    std::string directory = "runs/default";
    std::vector<std::string> formats{"json", "csv"};
};

struct SweepSection {
    std::vector<double> imbalance_ratios;
    std::vector<Method> methods;
};

struct ExperimentConfig {
    DatasetSection dataset;
    ModelSection model;
    TrainConfig train;
    EvalSection eval;
    EfficiencySection efficiency;
    OutputSection output;
    std::optional<SweepSection> sweep;
};

/// Strict JSON parse: unknown keys and wrong types are errors naming the field.
ExperimentConfig parse_config(std::string_view json_text);
ExperimentConfig load_config(const std::filesystem::path& path);
/// Canonical JSON with every field spelled out; parse(serialize(c)) == c.
std::string serialize_config(const ExperimentConfig& cfg);
std::string config_hash(const ExperimentConfig& cfg);
ExperimentConfig default_config();

/// Output directory with $TAET_OUTPUT_ROOT prepended to relative paths when set.
std::filesystem::path resolve_output_dir(const ExperimentConfig& cfg);

// File names inside a run directory.
namespace files {
inline constexpr const char* kTrainData = "data_train.csv";
inline constexpr const char* kTestData = "data_test.csv";
inline constexpr const char* kDataInfo = "data_info.json";
inline constexpr const char* kEpochs = "epochs.csv";
inline constexpr const char* kCheckpoint = "checkpoint.bin";
inline constexpr const char* kMetrics = "metrics.json";
inline constexpr const char* kMetricsCsv = "metrics_per_class.csv";
inline constexpr const char* kEfficiency = "efficiency.json";
inline constexpr const char* kReport = "report.json";
inline constexpr const char* kPlotPerClass = "plot_per_class.csv";
inline constexpr const char* kPlotCurves = "plot_curves.csv";
inline constexpr const char* kManifest = "manifest.json";
inline constexpr const char* kLock = ".lock";
inline constexpr const char* kSweepTable = "sweep_table.csv";
}  // namespace files

/// Holds the run directory's lock file for its lifetime.
class RunLock {
public:
    explicit RunLock(const std::filesystem::path& dir);
    ~RunLock();
    RunLock(const RunLock&) = delete;
    RunLock& operator=(const RunLock&) = delete;

private:
    std::filesystem::path path_;
};

// Individual stages. Each reads prerequisites from `dir` and fails with an
// error naming the missing file.
void stage_gen_data(const ExperimentConfig& cfg, const std::filesystem::path& dir);
void stage_train(const ExperimentConfig& cfg, const std::filesystem::path& dir);
void stage_eval(const ExperimentConfig& cfg, const std::filesystem::path& dir,
                const std::filesystem::path& checkpoint = {});
void stage_efficiency(const ExperimentConfig& cfg, const std::filesystem::path& dir);
void stage_report(const ExperimentConfig& cfg, const std::filesystem::path& dir);
void stage_export_plots(const ExperimentConfig& cfg, const std::filesystem::path& dir);

/// Rewrites manifest.json: config hash, version, status, sha256 of every file
/// in the directory, and per-stage wall-clock seconds.
struct StageTiming {
    std::string stage;
    double seconds;
};
void write_manifest(const ExperimentConfig& cfg, const std::filesystem::path& dir, std::string_view status,
                    std::string_view failed_stage, const std::vector<StageTiming>& timings);

/// Runs a single stage under the lock and updates the manifest.
void run_stage(const ExperimentConfig& cfg, const std::string& stage,
               const std::filesystem::path& checkpoint = {});

/// Full pipeline: gen-data, train, eval, efficiency, report, export-plots.
/// With a sweep section, one sub-directory per (imbalance ratio, method) plus
/// sweep_table.csv. Returns the output directory.
std::filesystem::path run_experiment(const ExperimentConfig& cfg);

/// predict-eta from a costs JSON holding n_ce, n_at, kappa and either
/// (forward_s, backward_s, backward_adv_s) or (rho, gamma_time).
std::string predict_eta_from_costs_json(std::string_view json_text);

}  // namespace taet
