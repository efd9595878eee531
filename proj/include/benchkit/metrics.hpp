#pragma once

#include <cstdint>
#include <functional>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "benchkit/common.hpp"

namespace benchkit {

/// Class distribution for one example. `predicted_class` is the argmax, ties to the lowest index.
struct Prediction {
    std::vector<double> class_probs;
    int predicted_class = 0;

    /// Builds from probabilities; throws Error unless they are non-negative and sum to 1 within 1e-9.
    static Prediction from_probs(std::vector<double> probs);
    /// Softmax of logits (numerically stable).
    static Prediction from_logits(std::span<const double> logits);
};

using MetricMap = std::map<std::string, double>;

// ---------------------------------------------------------------------------
// Classification performance
// ---------------------------------------------------------------------------

/// Accuracy, per-class and averaged precision/recall/F1, sensitivity, specificity,
/// Jaccard, macro one-vs-rest AUC (absent when undefined) and mean cross-entropy `loss`.
/// Per-class entries are named `precision_c<k>`, `recall_c<k>`, `f1_c<k>`.
/// Undefined ratios (zero denominators) are reported as 0.
MetricMap compute_performance(std::span<const Prediction> preds, std::span<const int> labels);

/// Rank-statistic AUC for one binary problem; ties between a positive and a negative count 1/2.
/// nullopt when either class is absent.
std::optional<double> binary_auc(std::span<const double> scores, std::span<const bool> positive);

double mean_cross_entropy(std::span<const Prediction> preds, std::span<const int> labels);

// ---------------------------------------------------------------------------
// Registry
// ---------------------------------------------------------------------------

enum class MetricArity { per_example_preds, aggregate };

struct MetricDefinition {
    std::string name;
    MetricArity arity = MetricArity::per_example_preds;
    /// per_example_preds: computed from predictions and labels.
    std::function<std::optional<double>(std::span<const Prediction>, std::span<const int>)> from_predictions;
    /// aggregate: computed from the built-in performance map.
    std::function<std::optional<double>(const MetricMap &)> from_metrics;
};

/// Names requestable from a task config. Holds the built-ins plus anything registered later.
/// `per_class` expands to every per-class precision/recall/F1 entry.
class MetricRegistry {
  public:
    static MetricRegistry with_builtins();

    void register_metric(MetricDefinition def);
    [[nodiscard]] bool contains(std::string_view name) const;
    [[nodiscard]] std::vector<std::string> names() const;

    /// Evaluates the requested metrics. Metrics whose value is undefined are omitted.
    [[nodiscard]] MetricMap evaluate(std::span<const std::string> requested, std::span<const Prediction> preds,
                                     std::span<const int> labels) const;
    /// Single metric, nullopt when undefined.
    [[nodiscard]] std::optional<double> evaluate_one(const std::string &name, std::span<const Prediction> preds,
                                                     std::span<const int> labels) const;

  private:
    std::map<std::string, MetricDefinition, std::less<>> custom_;
};

/// Metric name used for the validation goal: `val_accuracy` -> `accuracy`.
std::string strip_val_prefix(const std::string &goal_metric);

// ---------------------------------------------------------------------------
// Accounting
// ---------------------------------------------------------------------------

struct CostModel {
    double hourly_rate_usd = 0.0;
    bool operator==(const CostModel &) const = default;
};

struct PowerDevice {
    std::string name;
    double watts = 0.0;
    double utilization = 1.0;
    bool operator==(const PowerDevice &) const = default;
};

struct PowerModel {
    std::vector<PowerDevice> devices;
    double pue = 1.58;
    double carbon_intensity_kg_per_kwh = 0.432;
    bool operator==(const PowerModel &) const = default;

    void validate() const;
};

struct TrainingSpeed {
    double mean_step_s = 0.0;
    double total_train_s = 0.0;
};

struct EnergyEstimate {
    double energy_kwh = 0.0;
    double co2_kg = 0.0;
};

TrainingSpeed training_speed(std::span<const double> epoch_seconds, std::span<const std::size_t> batch_counts);
double compute_cost(double total_train_s, const CostModel &cm);
EnergyEstimate estimate_energy(double total_train_s, const PowerModel &pm);

struct LatencyReport {
    double seconds_per_example = 0.0;
    std::vector<std::size_t> sample_indices;
};

/// Seeded sampling without replacement of min(n, test_size) indices.
std::vector<std::size_t> latency_sample_indices(std::size_t test_size, std::size_t n, std::uint64_t seed);

/// Times `predict_one(i)` for each sampled test index; mean wall seconds per call.
LatencyReport measure_latency(const std::function<void(std::size_t)> &predict_one, std::size_t test_size,
                              std::size_t n = 25, std::uint64_t seed = 0);

struct HardwareInfo {
    std::int64_t cpu_core_count = 0;
    std::int64_t total_memory_bytes = 0;
    std::string accelerator = "none";
    bool valid = true;
};

/// Probe functions; each returns nullopt on failure. Tests swap these out.
struct HardwareProbe {
    std::function<std::optional<std::int64_t>()> cpu_cores;
    std::function<std::optional<std::int64_t>()> memory_bytes;
    std::function<std::optional<std::string>()> accelerator;

    static HardwareProbe system();
};

HardwareInfo collect_hardware_info(const HardwareProbe &probe = HardwareProbe::system());

json hardware_to_json(const HardwareInfo &h);

}  // namespace benchkit
