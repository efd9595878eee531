#pragma once

#include <atomic>
#include <cstdint>
#include <functional>
#include <iosfwd>
#include <memory>
#include <optional>
#include <string>
#include <vector>

#include "benchkit/config.hpp"
#include "benchkit/datagen.hpp"
#include "benchkit/metrics.hpp"
#include "benchkit/trainables.hpp"

namespace benchkit {

/// Truncated SHA-256 of the unit-separator-joined inputs.
std::uint64_t derive_seed(std::uint64_t study_seed, const std::string &model_id, const std::string &dataset_id,
                          std::size_t trial_index);
/// Seed for the experiment's sampler; independent of every trial seed.
std::uint64_t derive_sampler_seed(std::uint64_t study_seed, const std::string &model_id, const std::string &dataset_id,
                                  std::optional<std::size_t> trial_index = std::nullopt);

struct EpochRecord {
    std::optional<double> train_loss;
    double val_metric = 0.0;
    double seconds = 0.0;  // wall clock
};

struct AccountingRecord {
    double total_train_s = 0.0;
    double mean_step_s = 0.0;
    double inference_latency_s = 0.0;
    double cost_usd = 0.0;
    double energy_kwh = 0.0;
    double co2_kg = 0.0;
    std::uint64_t model_bytes = 0;
    std::vector<std::size_t> latency_samples;
};

enum class TrialStatus { ok, failed };

struct TrialResult {
    std::size_t trial_index = 0;
    ParamSet params;  // sampled values only; fixed params live in the experiment config
    std::uint64_t seed = 0;
    std::vector<EpochRecord> epoch_history;
    std::size_t best_epoch = 0;
    std::optional<double> objective;  // validation goal at best_epoch
    MetricMap test_metrics;
    AccountingRecord accounting;
    TrialStatus status = TrialStatus::ok;
    std::string failure_reason;
    std::string captured_stderr;
};

struct ResultDoc {
    std::string study_id;
    std::string model_id;
    std::string dataset_id;
    std::string config_hash;
    std::string toolkit_version{kToolkitVersion};
    HardwareInfo hardware;
    std::string started_at;
    std::string finished_at;
    bool nondeterministic = false;
    std::size_t num_trials = 0;
    json experiment_config;
    TrialResult trial;
};

json result_doc_to_json(const ResultDoc &d);
ResultDoc result_doc_from_json(const json &j);
/// Drops the wall-clock fields (timestamps, timings, latency, cost, energy) that reproduction does not preserve.
json reproducible_view(json doc);

/// Index of the earliest optimum of `series`.
std::size_t best_index(std::span<const double> series, Direction direction);

// ---------------------------------------------------------------------------
// Trial lifecycle
// ---------------------------------------------------------------------------

using TrainableFactory = std::function<std::unique_ptr<Trainable>(EncoderKind, const ParamSet &, std::size_t feature_dim,
                                                                  std::size_t n_classes, std::uint64_t seed)>;

/// Loaded, split and featurized data for one experiment; shared by its trials.
struct PreparedExperiment {
    Dataset dataset;
    SplitAssignment split;
    FeaturizedDataset features;
};

PreparedExperiment prepare_experiment(const ExperimentPlan &exp, const DatasetRegistry &datasets);

struct TrialOptions {
    TrainableFactory factory = create_trainable;
    MetricRegistry metrics = MetricRegistry::with_builtins();
    double external_timeout_s = 600.0;
    std::string work_dir;  // scratch space for external trials; empty = system temp
};

struct TrialRun {
    TrialResult result;
    std::unique_ptr<Trainable> best_model;  // native trainables only, when the trial succeeded
};

/// Never throws for trainable failures: they come back as status failed.
TrialRun run_trial(const ExperimentPlan &exp, const PreparedExperiment &data, const TrialSpec &spec,
                   const TrialOptions &opts = {});

/// Fixed params overlaid with the sampled ones.
ParamSet effective_params(const ModelSpec &model, const ParamSet &sampled);

// ---------------------------------------------------------------------------
// Studies
// ---------------------------------------------------------------------------

struct StudyOptions {
    int workers = 0;  // 0: use hyperopt.max_parallel_trials
    std::string out_dir;  // snapshots go under <out_dir>/results/<study_id>/; empty = don't write
    TrialOptions trial;
    std::optional<HardwareInfo> hardware;  // probed once when absent
    std::ostream *progress = nullptr;      // one line per completed trial
    std::function<void(const ResultDoc &)> sink;  // called in (experiment, trial) order from the coordinator
    const std::atomic<bool> *cancel = nullptr;
};

struct StudyOutcome {
    std::vector<ResultDoc> docs;
    std::vector<ExperimentSnapshot> snapshots;
    std::vector<std::string> snapshot_paths;
    std::vector<std::string> warnings;
    bool cancelled = false;

    [[nodiscard]] bool any_failed() const;
    /// 0 when every trial succeeded, 2 otherwise.
    [[nodiscard]] int exit_code() const { return any_failed() ? 2 : 0; }
};

/// Trial list for samplers that fix it up front (grid, random). Empty for tpe.
std::vector<TrialSpec> planned_trials(const ExperimentPlan &exp);

StudyOutcome run_study(const StudyPlan &plan, const DatasetRegistry &datasets, const StudyOptions &opts = {});

/// Replays the materialized trials of each snapshot; never consults a sampler.
StudyOutcome reproduce(const std::vector<ExperimentSnapshot> &snapshots, const DatasetRegistry &datasets,
                       const StudyOptions &opts = {});

}  // namespace benchkit
