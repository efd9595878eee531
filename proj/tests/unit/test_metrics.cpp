#include <gtest/gtest.h>

#include <chrono>
#include <cmath>
#include <memory>
#include <numeric>
#include <thread>

#include "benchkit/metrics.hpp"
#include "oracles.hpp"

using namespace benchkit;
using namespace benchkit::oracles;

namespace {

std::vector<Prediction> from_argmax(const std::vector<int> &argmax, int classes) {
    std::vector<Prediction> out;
    for (const int a : argmax) {
        std::vector<double> p(static_cast<std::size_t>(classes), 0.0);
        p[static_cast<std::size_t>(a)] = 1.0;
        out.push_back(Prediction::from_probs(p));
    }
    return out;
}

std::optional<double> auc_of(const std::vector<double> &s, const std::vector<bool> &pos) {
    std::unique_ptr<bool[]> flags(new bool[pos.size()]);
    for (std::size_t i = 0; i < pos.size(); ++i) flags[i] = pos[i];
    return binary_auc(s, std::span<const bool>(flags.get(), pos.size()));
}

}  // namespace

TEST(Metrics, WorkedConfusionExample) {
    const auto preds = from_argmax({1, 1, 0, 0}, 2);
    const std::vector<int> labels{1, 0, 0, 0};
    const auto m = compute_performance(preds, labels);
    EXPECT_DOUBLE_EQ(m.at("accuracy"), 0.75);
    EXPECT_DOUBLE_EQ(m.at("precision_c1"), 0.5);
    EXPECT_DOUBLE_EQ(m.at("recall_c1"), 1.0);
    EXPECT_NEAR(m.at("f1_c1"), 2.0 / 3.0, 1e-15);
}

TEST(Metrics, AucExamples) {
    const std::vector<bool> pos{true, true, false, false};
    EXPECT_DOUBLE_EQ(*auc_of({.9, .8, .3, .2}, pos), 1.0);
    EXPECT_DOUBLE_EQ(*auc_of({.9, .3, .8, .2}, pos), 0.75);
    EXPECT_FALSE(auc_of({.1, .2}, {true, true}).has_value());
}

TEST(Metrics, RandomInstancesMatchBruteForceOracles) {
    Rng rng(2024);
    for (int trial = 0; trial < 1000; ++trial) {
        const int c = static_cast<int>(rng.uniform_int(2, 4));
        const int n = static_cast<int>(rng.uniform_int(1, 12));
        std::vector<Prediction> preds;
        std::vector<int> labels, argmax;
        for (int i = 0; i < n; ++i) {
            std::vector<double> logits(c);
            for (auto &l : logits) l = std::round(rng.uniform(-2, 2) * 4) / 4;  // coarse grid forces ties
            preds.push_back(Prediction::from_logits(logits));
            argmax.push_back(preds.back().predicted_class);
            labels.push_back(static_cast<int>(rng.uniform_int(0, c - 1)));
        }
        const auto m = compute_performance(preds, labels);
        const auto o = oracle(argmax, labels, c);
        ASSERT_NEAR(m.at("accuracy"), o.accuracy, 1e-12);
        ASSERT_NEAR(m.at("macro_precision"), o.macro_p, 1e-12);
        ASSERT_NEAR(m.at("macro_recall"), o.macro_r, 1e-12);
        ASSERT_NEAR(m.at("sensitivity"), o.macro_r, 1e-12);
        ASSERT_NEAR(m.at("macro_f1"), o.macro_f1, 1e-12);
        ASSERT_NEAR(m.at("specificity"), o.specificity, 1e-12);
        ASSERT_NEAR(m.at("jaccard"), o.jaccard, 1e-12);
        ASSERT_NEAR(m.at("micro_f1"), o.micro_f1, 1e-12);
        ASSERT_NEAR(m.at("micro_f1"), m.at("accuracy"), 1e-12);
        for (int k = 0; k < c; ++k) {
            ASSERT_NEAR(m.at("precision_c" + std::to_string(k)), o.p[k], 1e-12);
            ASSERT_NEAR(m.at("recall_c" + std::to_string(k)), o.r[k], 1e-12);
            ASSERT_NEAR(m.at("f1_c" + std::to_string(k)), o.f[k], 1e-12);
        }
        // macro one-vs-rest AUC, omitted when any class lacks positives or negatives
        std::optional<double> auc_sum = 0.0;
        for (int k = 0; k < c && auc_sum; ++k) {
            std::vector<double> s;
            std::vector<bool> pos;
            for (int i = 0; i < n; ++i) {
                s.push_back(preds[i].class_probs[k]);
                pos.push_back(labels[i] == k);
            }
            const auto a = auc_pairs(s, pos);
            auc_sum = a ? std::optional<double>(*auc_sum + *a / c) : std::nullopt;
        }
        ASSERT_EQ(m.count("auc") == 1, auc_sum.has_value());
        if (auc_sum) {
            ASSERT_NEAR(m.at("auc"), *auc_sum, 1e-12);
        }
    }
}

TEST(Metrics, AucInvariantUnderMonotoneTransform) {
    Rng rng(5);
    std::vector<double> s, t;
    std::vector<bool> pos;
    for (int i = 0; i < 200; ++i) {
        s.push_back(rng.uniform());
        t.push_back(std::exp(3 * s.back()) - 7);
        pos.push_back(rng.uniform() < 0.4);
    }
    EXPECT_DOUBLE_EQ(*auc_of(s, pos), *auc_of(t, pos));
}

TEST(Metrics, AucOfRandomLabelsNearHalf) {
    Rng rng(17);
    std::vector<double> s;
    std::vector<bool> pos;
    for (int i = 0; i < 10000; ++i) {
        s.push_back(rng.uniform());
        pos.push_back(rng.uniform() < 0.5);
    }
    EXPECT_NEAR(*auc_of(s, pos), 0.5, 0.05);
}

TEST(Metrics, LengthMismatchAndEmptyRejected) {
    const auto preds = from_argmax({0, 1}, 2);
    EXPECT_THROW(compute_performance(preds, std::vector<int>{0}), Error);
    EXPECT_THROW(compute_performance(std::span<const Prediction>{}, std::span<const int>{}), Error);
}

TEST(Metrics, RegistryCustomAndDuplicate) {
    auto reg = MetricRegistry::with_builtins();
    MetricDefinition top2{"top2_accuracy", MetricArity::per_example_preds,
                          [](std::span<const Prediction> p, std::span<const int> y) -> std::optional<double> {
                              double hit = 0;
                              for (std::size_t i = 0; i < p.size(); ++i) {
                                  auto probs = p[i].class_probs;
                                  const double mine = probs[static_cast<std::size_t>(y[i])];
                                  int above = 0;
                                  for (const double q : probs) above += q > mine;
                                  hit += above < 2;
                              }
                              return hit / static_cast<double>(p.size());
                          },
                          nullptr};
    reg.register_metric(top2);
    EXPECT_TRUE(reg.contains("top2_accuracy"));
    EXPECT_THROW(reg.register_metric(top2), Error);
    const auto preds = from_argmax({0, 1, 2}, 3);
    const std::vector<std::string> req{"top2_accuracy", "accuracy"};
    const auto m = reg.evaluate(req, preds, std::vector<int>{0, 1, 0});
    EXPECT_DOUBLE_EQ(m.at("accuracy"), 2.0 / 3.0);
    EXPECT_TRUE(m.count("top2_accuracy"));
}

TEST(Accounting, TrainingSpeedExample) {
    const std::vector<double> secs{2, 4};
    const std::vector<std::size_t> batches{10, 10};
    const auto s = training_speed(secs, batches);
    EXPECT_DOUBLE_EQ(s.mean_step_s, 0.3);
    EXPECT_DOUBLE_EQ(s.total_train_s, 6.0);
}

TEST(Accounting, CostAndEnergyIdentities) {
    EXPECT_DOUBLE_EQ(compute_cost(7200, CostModel{0.35}), 0.70);
    EXPECT_EQ(compute_cost(7200, CostModel{0.0}), 0.0);
    EXPECT_EQ(compute_cost(0, CostModel{5.0}), 0.0);
    PowerModel pm{{{"gpu", 250, 1.0}, {"cpu", 100, 1.0}}, 1.0, 0.4};
    const auto e = estimate_energy(7200, pm);
    EXPECT_NEAR(e.energy_kwh, 0.7, 1e-15);
    EXPECT_NEAR(e.co2_kg, 0.28, 1e-15);
    pm.pue = 2.0;
    const auto e2 = estimate_energy(7200, pm);
    EXPECT_NEAR(e2.energy_kwh, 2 * e.energy_kwh, 1e-15);
    EXPECT_NEAR(e2.co2_kg, 2 * e.co2_kg, 1e-15);
    const auto zero = estimate_energy(0, pm);
    EXPECT_EQ(zero.energy_kwh, 0.0);
    EXPECT_EQ(zero.co2_kg, 0.0);
}

TEST(Accounting, LatencyUsesMinOfNAndTestSize) {
    for (const std::size_t test_size : {1u, 10u, 24u, 25u, 26u, 400u}) {
        std::size_t calls = 0;
        std::vector<std::size_t> seen;
        const auto rep = measure_latency([&](std::size_t i) { ++calls; seen.push_back(i); }, test_size, 25, 9);
        EXPECT_EQ(calls, std::min<std::size_t>(25, test_size));
        EXPECT_EQ(rep.sample_indices, seen);
        std::vector<std::size_t> sorted = seen;
        std::sort(sorted.begin(), sorted.end());
        EXPECT_EQ(std::unique(sorted.begin(), sorted.end()), sorted.end()) << "sampling is without replacement";
        for (const auto i : seen) EXPECT_LT(i, test_size);
    }
    EXPECT_EQ(latency_sample_indices(100, 25, 3), latency_sample_indices(100, 25, 3));
}

TEST(Accounting, LatencyStubSleepingOneMillisecond) {
    const auto rep = measure_latency(
        [](std::size_t) { std::this_thread::sleep_for(std::chrono::milliseconds(1)); }, 50, 25, 1);
    EXPECT_GE(rep.seconds_per_example, 0.0009);
    EXPECT_LE(rep.seconds_per_example, 0.003);
}

TEST(Hardware, ProbeFailureDegradesGracefully) {
    HardwareProbe broken{[] { return std::optional<std::int64_t>{}; }, [] { return std::optional<std::int64_t>{}; },
                         [] { return std::optional<std::string>{}; }};
    const auto h = collect_hardware_info(broken);
    EXPECT_FALSE(h.valid);
    const auto sys = collect_hardware_info();
    EXPECT_GE(sys.cpu_core_count, 1);
}
