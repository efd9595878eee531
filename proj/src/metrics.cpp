#include "benchkit/metrics.hpp"

#include <fmt/format.h>
#include <unistd.h>

#include <algorithm>
#include <array>
#include <chrono>
#include <cmath>
#include <fstream>
#include <memory>
#include <numeric>
#include <thread>

namespace benchkit {

namespace {

constexpr std::array<std::string_view, 13> kBuiltinMetrics = {
    "accuracy",       "loss",           "macro_precision", "macro_recall", "macro_f1",
    "micro_precision", "micro_recall",  "micro_f1",        "sensitivity",  "specificity",
    "jaccard",        "auc",            "per_class"};

bool is_builtin(std::string_view name) {
    return std::find(kBuiltinMetrics.begin(), kBuiltinMetrics.end(), name) != kBuiltinMetrics.end();
}

bool is_per_class_entry(std::string_view name) {
    return name.starts_with("precision_c") || name.starts_with("recall_c") || name.starts_with("f1_c");
}

double ratio(double num, double den) { return den > 0.0 ? num / den : 0.0; }

}  // namespace

Prediction Prediction::from_probs(std::vector<double> probs) {
    if (probs.empty()) {
        throw Error("prediction has no classes");
    }
    double sum = 0.0;
    for (const double p : probs) {
        if (!std::isfinite(p) || p < 0.0) {
            throw Error("prediction probabilities must be finite and non-negative");
        }
        sum += p;
    }
    if (std::abs(sum - 1.0) > 1e-9) {
        throw Error(fmt::format("prediction probabilities sum to {} (expected 1)", sum));
    }
    Prediction out;
    out.predicted_class = static_cast<int>(std::max_element(probs.begin(), probs.end()) - probs.begin());
    out.class_probs = std::move(probs);
    return out;
}

Prediction Prediction::from_logits(std::span<const double> logits) {
    Prediction out;
    out.class_probs.resize(logits.size());
    const double mx = *std::max_element(logits.begin(), logits.end());
    double sum = 0.0;
    for (std::size_t k = 0; k < logits.size(); ++k) {
        out.class_probs[k] = std::exp(logits[k] - mx);
        sum += out.class_probs[k];
    }
    for (double &p : out.class_probs) {
        p /= sum;
    }
    out.predicted_class =
        static_cast<int>(std::max_element(out.class_probs.begin(), out.class_probs.end()) - out.class_probs.begin());
    return out;
}

std::optional<double> binary_auc(std::span<const double> scores, std::span<const bool> positive) {
    const std::size_t n = scores.size();
    std::vector<std::size_t> order(n);
    std::iota(order.begin(), order.end(), 0);
    std::sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return scores[a] < scores[b]; });

    // average ranks (1-based) over tie groups
    std::vector<double> rank(n);
    for (std::size_t i = 0; i < n;) {
        std::size_t j = i;
        while (j + 1 < n && scores[order[j + 1]] == scores[order[i]]) {
            ++j;
        }
        const double avg = 0.5 * static_cast<double>(i + j) + 1.0;
        for (std::size_t k = i; k <= j; ++k) {
            rank[order[k]] = avg;
        }
        i = j + 1;
    }
    double n_pos = 0.0;
    double rank_sum = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
        if (positive[i]) {
            n_pos += 1.0;
            rank_sum += rank[i];
        }
    }
    const double n_neg = static_cast<double>(n) - n_pos;
    if (n_pos == 0.0 || n_neg == 0.0) {
        return std::nullopt;
    }
    return (rank_sum - n_pos * (n_pos + 1.0) / 2.0) / (n_pos * n_neg);
}

double mean_cross_entropy(std::span<const Prediction> preds, std::span<const int> labels) {
    double loss = 0.0;
    for (std::size_t i = 0; i < preds.size(); ++i) {
        const double p = preds[i].class_probs[static_cast<std::size_t>(labels[i])];
        loss -= std::log(std::max(p, 1e-15));
    }
    return preds.empty() ? 0.0 : loss / static_cast<double>(preds.size());
}

MetricMap compute_performance(std::span<const Prediction> preds, std::span<const int> labels) {
    if (preds.size() != labels.size()) {
        throw Error(fmt::format("metric input length mismatch: {} predictions, {} labels", preds.size(), labels.size()));
    }
    if (preds.empty()) {
        throw Error("metrics need at least one prediction");
    }
    const std::size_t n_classes = preds.front().class_probs.size();
    const auto n = static_cast<double>(preds.size());

    std::vector<double> tp(n_classes, 0.0);
    std::vector<double> fp(n_classes, 0.0);
    std::vector<double> fn(n_classes, 0.0);
    double correct = 0.0;
    for (std::size_t i = 0; i < preds.size(); ++i) {
        const auto y = static_cast<std::size_t>(labels[i]);
        const auto yhat = static_cast<std::size_t>(preds[i].predicted_class);
        if (y >= n_classes || preds[i].class_probs.size() != n_classes) {
            throw Error("label or prediction outside the class range");
        }
        if (y == yhat) {
            tp[y] += 1.0;
            correct += 1.0;
        } else {
            fp[yhat] += 1.0;
            fn[y] += 1.0;
        }
    }

    MetricMap m;
    m["accuracy"] = correct / n;
    m["loss"] = mean_cross_entropy(preds, labels);

    double sum_p = 0.0;
    double sum_r = 0.0;
    double sum_f = 0.0;
    double sum_spec = 0.0;
    double sum_jac = 0.0;
    for (std::size_t k = 0; k < n_classes; ++k) {
        const double p = ratio(tp[k], tp[k] + fp[k]);
        const double r = ratio(tp[k], tp[k] + fn[k]);
        const double f = ratio(2.0 * p * r, p + r);
        const double tn = n - tp[k] - fp[k] - fn[k];
        m[fmt::format("precision_c{}", k)] = p;
        m[fmt::format("recall_c{}", k)] = r;
        m[fmt::format("f1_c{}", k)] = f;
        sum_p += p;
        sum_r += r;
        sum_f += f;
        sum_spec += ratio(tn, tn + fp[k]);
        sum_jac += ratio(tp[k], tp[k] + fp[k] + fn[k]);
    }
    const auto c = static_cast<double>(n_classes);
    m["macro_precision"] = sum_p / c;
    m["macro_recall"] = sum_r / c;
    m["macro_f1"] = sum_f / c;
    m["sensitivity"] = sum_r / c;
    m["specificity"] = sum_spec / c;
    m["jaccard"] = sum_jac / c;

    // single-label: every false positive is someone's false negative
    const double tp_all = std::accumulate(tp.begin(), tp.end(), 0.0);
    const double fp_all = std::accumulate(fp.begin(), fp.end(), 0.0);
    const double fn_all = std::accumulate(fn.begin(), fn.end(), 0.0);
    const double micro_p = ratio(tp_all, tp_all + fp_all);
    const double micro_r = ratio(tp_all, tp_all + fn_all);
    m["micro_precision"] = micro_p;
    m["micro_recall"] = micro_r;
    m["micro_f1"] = ratio(2.0 * micro_p * micro_r, micro_p + micro_r);

    double auc_sum = 0.0;
    bool auc_defined = true;
    std::vector<double> scores(preds.size());
    // std::vector<bool> is not contiguous, so it cannot back a span
    const auto positive = std::make_unique<bool[]>(preds.size());
    for (std::size_t k = 0; k < n_classes && auc_defined; ++k) {
        for (std::size_t i = 0; i < preds.size(); ++i) {
            scores[i] = preds[i].class_probs[k];
            positive[i] = labels[i] == static_cast<int>(k);
        }
        const auto auc = binary_auc(scores, std::span<const bool>(positive.get(), preds.size()));
        if (!auc) {
            auc_defined = false;
        } else {
            auc_sum += *auc;
        }
    }
    if (auc_defined) {
        m["auc"] = auc_sum / c;
    }
    return m;
}

MetricRegistry MetricRegistry::with_builtins() { return MetricRegistry{}; }

void MetricRegistry::register_metric(MetricDefinition def) {
    if (def.name.empty()) {
        throw Error("metric name must be non-empty");
    }
    if (contains(def.name)) {
        throw Error(fmt::format("metric '{}' is already registered", def.name));
    }
    const bool has_fn = def.arity == MetricArity::per_example_preds ? static_cast<bool>(def.from_predictions)
                                                                     : static_cast<bool>(def.from_metrics);
    if (!has_fn) {
        throw Error(fmt::format("metric '{}' has no function for its arity", def.name));
    }
    custom_.emplace(def.name, std::move(def));
}

bool MetricRegistry::contains(std::string_view name) const {
    return is_builtin(name) || is_per_class_entry(name) || custom_.find(name) != custom_.end();
}

std::vector<std::string> MetricRegistry::names() const {
    std::vector<std::string> out(kBuiltinMetrics.begin(), kBuiltinMetrics.end());
    for (const auto &[k, v] : custom_) {
        out.push_back(k);
    }
    std::sort(out.begin(), out.end());
    return out;
}

MetricMap MetricRegistry::evaluate(std::span<const std::string> requested, std::span<const Prediction> preds,
                                   std::span<const int> labels) const {
    const MetricMap perf = compute_performance(preds, labels);
    MetricMap out;
    for (const auto &name : requested) {
        if (name == "per_class") {
            for (const auto &[k, v] : perf) {
                if (is_per_class_entry(k)) {
                    out[k] = v;
                }
            }
            continue;
        }
        if (auto it = perf.find(name); it != perf.end()) {
            out[name] = it->second;
            continue;
        }
        if (auto it = custom_.find(name); it != custom_.end()) {
            const auto &def = it->second;
            const auto v = def.arity == MetricArity::per_example_preds ? def.from_predictions(preds, labels)
                                                                        : def.from_metrics(perf);
            if (v && std::isfinite(*v)) {
                out[name] = *v;
            }
            continue;
        }
        if (!contains(name)) {
            throw Error(fmt::format("unknown metric '{}'", name));
        }
    }
    return out;
}

std::optional<double> MetricRegistry::evaluate_one(const std::string &name, std::span<const Prediction> preds,
                                                   std::span<const int> labels) const {
    const std::string req[] = {name};
    const MetricMap m = evaluate(req, preds, labels);
    if (auto it = m.find(name); it != m.end()) {
        return it->second;
    }
    return std::nullopt;
}

std::string strip_val_prefix(const std::string &goal_metric) {
    return goal_metric.starts_with("val_") ? goal_metric.substr(4) : goal_metric;
}

void PowerModel::validate() const {
    if (!(pue >= 1.0)) {
        throw Error("pue must be >= 1");
    }
    if (!(carbon_intensity_kg_per_kwh >= 0.0)) {
        throw Error("carbon intensity must be >= 0");
    }
    for (const auto &d : devices) {
        if (!(d.watts >= 0.0)) {
            throw Error(fmt::format("device '{}' watts must be >= 0", d.name));
        }
        if (!(d.utilization >= 0.0 && d.utilization <= 1.0)) {
            throw Error(fmt::format("device '{}' utilization must be in [0, 1]", d.name));
        }
    }
}

TrainingSpeed training_speed(std::span<const double> epoch_seconds, std::span<const std::size_t> batch_counts) {
    if (epoch_seconds.empty() || epoch_seconds.size() != batch_counts.size()) {
        throw Error("training speed needs one batch count per epoch and at least one epoch");
    }
    const double total = std::accumulate(epoch_seconds.begin(), epoch_seconds.end(), 0.0);
    const auto batches = std::accumulate(batch_counts.begin(), batch_counts.end(), std::size_t{0});
    if (batches == 0) {
        throw Error("training speed needs at least one batch");
    }
    return {total / static_cast<double>(batches), total};
}

double compute_cost(double total_train_s, const CostModel &cm) { return total_train_s / 3600.0 * cm.hourly_rate_usd; }

EnergyEstimate estimate_energy(double total_train_s, const PowerModel &pm) {
    double watts = 0.0;
    for (const auto &d : pm.devices) {
        watts += d.watts * d.utilization;
    }
    EnergyEstimate e;
    e.energy_kwh = pm.pue * watts * (total_train_s / 3600.0) / 1000.0;
    e.co2_kg = e.energy_kwh * pm.carbon_intensity_kg_per_kwh;
    return e;
}

std::vector<std::size_t> latency_sample_indices(std::size_t test_size, std::size_t n, std::uint64_t seed) {
    std::vector<std::size_t> pool(test_size);
    std::iota(pool.begin(), pool.end(), 0);
    const std::size_t k = std::min(n, test_size);
    Rng rng(seed);
    // partial Fisher-Yates
    for (std::size_t i = 0; i < k; ++i) {
        const std::size_t j = i + rng.index(test_size - i);
        std::swap(pool[i], pool[j]);
    }
    pool.resize(k);
    return pool;
}

LatencyReport measure_latency(const std::function<void(std::size_t)> &predict_one, std::size_t test_size, std::size_t n,
                              std::uint64_t seed) {
    if (test_size == 0) {
        throw Error("latency measurement needs a non-empty test set");
    }
    LatencyReport report;
    report.sample_indices = latency_sample_indices(test_size, n, seed);
    double total = 0.0;
    for (const std::size_t idx : report.sample_indices) {
        const auto t0 = std::chrono::steady_clock::now();
        predict_one(idx);
        const auto t1 = std::chrono::steady_clock::now();
        total += std::chrono::duration<double>(t1 - t0).count();
    }
    report.seconds_per_example = total / static_cast<double>(report.sample_indices.size());
    return report;
}

HardwareProbe HardwareProbe::system() {
    HardwareProbe p;
    p.cpu_cores = []() -> std::optional<std::int64_t> {
        const unsigned n = std::thread::hardware_concurrency();
        if (n > 0) {
            return static_cast<std::int64_t>(n);
        }
        const long m = sysconf(_SC_NPROCESSORS_ONLN);
        return m > 0 ? std::optional<std::int64_t>(m) : std::nullopt;
    };
    p.memory_bytes = []() -> std::optional<std::int64_t> {
        const long pages = sysconf(_SC_PHYS_PAGES);
        const long page = sysconf(_SC_PAGE_SIZE);
        if (pages <= 0 || page <= 0) {
            return std::nullopt;
        }
        return static_cast<std::int64_t>(pages) * static_cast<std::int64_t>(page);
    };
    p.accelerator = []() -> std::optional<std::string> {
        std::ifstream in("/proc/driver/nvidia/version");
        if (!in) {
            return std::string("none");
        }
        std::string line;
        std::getline(in, line);
        return line.empty() ? std::string("nvidia") : line;
    };
    return p;
}

HardwareInfo collect_hardware_info(const HardwareProbe &probe) {
    HardwareInfo info;
    auto attempt = [&](const auto &fn) -> decltype(fn()) {
        if (!fn) {
            return std::nullopt;
        }
        try {
            return fn();
        } catch (...) {
            return std::nullopt;
        }
    };
    if (const auto cores = attempt(probe.cpu_cores); cores && *cores > 0) {
        info.cpu_core_count = *cores;
    } else {
        info.valid = false;
    }
    if (const auto mem = attempt(probe.memory_bytes); mem && *mem > 0) {
        info.total_memory_bytes = *mem;
    } else {
        info.valid = false;
    }
    if (const auto acc = attempt(probe.accelerator)) {
        info.accelerator = *acc;
    } else {
        info.accelerator = "unknown";
        info.valid = false;
    }
    return info;
}

json hardware_to_json(const HardwareInfo &h) {
    return {{"cpu_core_count", h.cpu_core_count},
            {"total_memory_bytes", h.total_memory_bytes},
            {"accelerator", h.accelerator},
            {"valid", h.valid}};
}

}  // namespace benchkit
