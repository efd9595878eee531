#pragma once

#include <cstdint>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "benchkit/common.hpp"
#include "benchkit/datagen.hpp"
#include "benchkit/hyperopt.hpp"
#include "benchkit/metrics.hpp"
#include "benchkit/trainables.hpp"

namespace benchkit {

/// Where each field came from, keyed by a dotted path such as `datasets[1]`.
/// Carried for error reporting only: it never affects equality.
struct SourceMap {
    std::string file;
    std::map<std::string, SourceLocation> entries;

    [[nodiscard]] SourceLocation at(const std::string &path) const;
    bool operator==(const SourceMap &) const { return true; }
};

struct TrainingParams {
    OptimizerKind optimizer = OptimizerKind::adam;
    double learning_rate = 0.0001;
    int epochs = 15;
    int batch_size = 32;
    std::optional<int> early_stop_patience;
    std::vector<std::string> held_constant;
    bool shuffle = false;
    bool operator==(const TrainingParams &) const = default;
};

/// Names of the TrainingParams fields, as accepted by `held_constant`.
std::vector<std::string> training_param_names();

struct AccountingConfig {
    CostModel cost;
    PowerModel power;
    int latency_samples = 25;
    bool operator==(const AccountingConfig &) const = default;
};

struct TaskConfig {
    std::string task_kind = "text_classification";
    std::vector<std::string> dataset_ids;
    std::string output_feature = "label";
    std::optional<std::string> study_id;
    TrainingParams training;
    std::vector<std::string> metrics = {"accuracy", "macro_f1"};
    PreprocessParams preprocess;
    SplitRatios split;
    std::uint64_t split_seed = 0;
    AccountingConfig accounting;
    std::vector<DatasetDescriptor> user_datasets;
    SourceMap source;
    bool operator==(const TaskConfig &) const = default;
};

struct ModelSpec {
    std::string model_id;
    EncoderKind encoder_kind = EncoderKind::softmax_regression;
    ParamSet fixed_params;
    SearchSpace search_space;
    std::optional<std::string> external_command;
    bool external_featurize = false;
    SourceMap source;
    bool operator==(const ModelSpec &) const = default;
};

enum class SamplerKind { grid, random, tpe };
std::string_view to_string(SamplerKind s);
std::optional<SamplerKind> sampler_kind_from_string(std::string_view s);

struct PublishTarget {
    std::string base_url;
    std::string index = "benchmark-results";
    std::optional<std::string> auth_env;
    double timeout_s = 10.0;
    int retry_count = 3;
    bool operator==(const PublishTarget &) const = default;

    void validate() const;
};

struct HyperoptConfig {
    std::string goal_metric = "val_accuracy";
    Direction direction = Direction::maximize;
    SamplerKind sampler = SamplerKind::random;
    int num_samples = 20;
    std::uint64_t seed = 0;
    int max_parallel_trials = 1;
    int grid_points_per_range = 5;
    std::size_t grid_cap = kDefaultGridCap;
    TpeSettings tpe;
    std::optional<PublishTarget> publish;
    SourceMap source;
    bool operator==(const HyperoptConfig &) const = default;
};

// ---------------------------------------------------------------------------
// Parsing. All parsers throw ConfigError carrying file:line:column.
// ---------------------------------------------------------------------------

TaskConfig parse_task_config(std::string_view text, const std::string &file = "<task>");
ModelSpec parse_model_config(std::string_view text, const std::string &file = "<model>");
HyperoptConfig parse_hyperopt_config(std::string_view text, const std::string &file = "<hyperopt>");
PublishTarget parse_publish_config(std::string_view text, const std::string &file = "<publish>");

std::string task_to_yaml(const TaskConfig &t);
std::string model_to_yaml(const ModelSpec &m);
std::string hyperopt_to_yaml(const HyperoptConfig &h);

json task_to_json(const TaskConfig &t);
json model_to_json(const ModelSpec &m);
json hyperopt_to_json(const HyperoptConfig &h);

// ---------------------------------------------------------------------------
// Study plans
// ---------------------------------------------------------------------------

struct StudyPlan {
    std::string study_id;
    TaskConfig task;
    std::vector<ModelSpec> models;  // sorted by model_id
    HyperoptConfig hyperopt;
    std::string config_hash;
};

struct ExperimentPlan {
    std::string study_id;
    TaskConfig task;
    ModelSpec model;
    std::string dataset_id;
    HyperoptConfig hyperopt;
    std::string config_hash;

    /// `<model_id>__<dataset_id>`
    [[nodiscard]] std::string experiment_id() const;
};

/// SHA-256 over canonical JSON of the inputs (sorted keys, shortest round-trip numbers,
/// models and datasets sorted).
std::string compute_config_hash(const TaskConfig &task, const std::vector<ModelSpec> &models,
                                const HyperoptConfig &hopt);

/// Registry holding the bundled corpora plus the task's user datasets.
DatasetRegistry registry_for_task(const TaskConfig &task, const std::string &data_dir = DatasetRegistry::default_data_dir());

StudyPlan validate_study(const TaskConfig &task, std::vector<ModelSpec> models, const HyperoptConfig &hopt,
                         const DatasetRegistry &datasets, const MetricRegistry &metrics = MetricRegistry::with_builtins());

/// Ordered by (model_id, dataset_id).
std::vector<ExperimentPlan> expand_matrix(const StudyPlan &plan);

// ---------------------------------------------------------------------------
// Snapshots
// ---------------------------------------------------------------------------

struct TrialSpec {
    std::size_t trial_index = 0;
    ParamSet params;
    std::uint64_t seed = 0;
    bool operator==(const TrialSpec &) const = default;
};

struct ExperimentSnapshot {
    std::string study_id;
    std::string model_id;
    std::string dataset_id;
    std::string config_hash;
    std::string toolkit_version{kToolkitVersion};
    std::string suggestion_mode = "batch";  // batch | sequential | asynchronous
    TaskConfig task;
    ModelSpec model;
    HyperoptConfig hyperopt;
    std::vector<TrialSpec> trials;
    bool operator==(const ExperimentSnapshot &) const = default;

    [[nodiscard]] ExperimentPlan plan() const;
};

ExperimentSnapshot snapshot_experiment(const ExperimentPlan &exp, std::vector<TrialSpec> trials,
                                       std::string suggestion_mode);

std::string snapshot_to_yaml(const ExperimentSnapshot &s);

struct LoadedSnapshot {
    ExperimentSnapshot snapshot;
    std::vector<std::string> warnings;
};

LoadedSnapshot parse_snapshot(std::string_view text, const std::string &file = "<snapshot>");
LoadedSnapshot load_snapshot(const std::string &path);
/// `<out_dir>/results/<study_id>/<model>__<dataset>.snapshot.yaml`
std::string snapshot_path(const std::string &out_dir, const ExperimentSnapshot &s);
void write_snapshot(const std::string &path, const ExperimentSnapshot &s);

}  // namespace benchkit
