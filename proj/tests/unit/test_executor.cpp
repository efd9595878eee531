#include <gtest/gtest.h>

#include <fmt/format.h>

#include <atomic>

#include "benchkit/executor.hpp"
#include "support.hpp"

using namespace benchkit;

namespace {

const std::string kTask = R"(task_kind: text_classification
output_feature: label
study_id: exec-test
datasets: [toy_polarity]
training:
  optimizer: adam
  learning_rate: 0.01
  epochs: 4
  batch_size: 16
metrics: [accuracy, macro_f1, loss]
split: {train: 0.7, val: 0.15, test: 0.15, seed: 3}
)";

const std::string kSoftmax = R"(model_id: softmax
encoder_kind: softmax_regression
search_space:
  - {name: learning_rate, kind: log_uniform, low: 0.001, high: 0.1}
)";

const std::string kNb = "model_id: nb\nencoder_kind: naive_bayes\n";

StudyPlan make_plan(const std::string &task_text, const std::vector<std::string> &models, int samples,
                    const std::string &extra_hopt = "") {
    const auto task = parse_task_config(task_text, "task.yaml");
    std::vector<ModelSpec> specs;
    for (const auto &m : models) specs.push_back(parse_model_config(m, "model.yaml"));
    const auto hopt = parse_hyperopt_config(fmt::format("num_samples: {}\nseed: 5\n{}", samples, extra_hopt), "h.yaml");
    return validate_study(task, specs, hopt, registry_for_task(task));
}

std::vector<json> views(const StudyOutcome &o) {
    std::vector<json> out;
    for (const auto &d : o.docs) out.push_back(reproducible_view(result_doc_to_json(d)));
    return out;
}

// Predicts class 0 with fixed confidence, so every epoch scores the same.
class FlatTrainable final : public Trainable {
  public:
    FlatTrainable(std::size_t dim, std::size_t classes) : Trainable(dim, classes) {}
    [[nodiscard]] EncoderKind kind() const noexcept override { return EncoderKind::softmax_regression; }
    EpochStats fit_epoch(std::span<const SparseVector>, std::span<const int>, const EpochOptions &) override {
        return {0.5, 1};
    }
    [[nodiscard]] Prediction predict_proba(const SparseVector &) const override {
        std::vector<double> p(n_classes_, 0.1 / static_cast<double>(n_classes_ - 1));
        p[0] = 0.9;
        return Prediction::from_probs(p);
    }
    using Trainable::predict_proba;
    [[nodiscard]] std::unique_ptr<Trainable> clone() const override { return std::make_unique<FlatTrainable>(*this); }
};

}  // namespace

// Reference values from Python: int.from_bytes(sha256(text).digest()[:8], "big").
TEST(Seeds, DerivationMatchesReferenceDigests) {
    EXPECT_EQ(derive_seed(42, "softmax", "toy_polarity", 3), 2888276862166179447ULL);
    EXPECT_EQ(derive_sampler_seed(42, "softmax", "toy_polarity"), 6494272354529494178ULL);
    EXPECT_EQ(derive_sampler_seed(42, "softmax", "toy_polarity", 3), 1015553789165522365ULL);
    EXPECT_NE(derive_seed(42, "softmax", "toy_polarity", 4), derive_seed(42, "softmax", "toy_polarity", 3));
}

TEST(Executor, BestIndexIsEarliestOptimum) {
    const std::vector<double> s{0.5, 0.7, 0.7, 0.6};
    EXPECT_EQ(best_index(s, Direction::maximize), 1u);
    EXPECT_EQ(best_index(s, Direction::minimize), 0u);
}

TEST(Executor, EffectiveParamsOverlaySampledOnFixed) {
    ModelSpec m;
    m.fixed_params = {{"hidden", std::int64_t{16}}, {"learning_rate", 0.1}};
    const auto p = effective_params(m, {{"learning_rate", 0.01}});
    EXPECT_EQ(p.at("hidden"), ParamValue{std::int64_t{16}});
    EXPECT_EQ(p.at("learning_rate"), ParamValue{0.01});
}

TEST(Executor, PlannedTrialsCarryDerivedSeeds) {
    const auto plan = make_plan(kTask, {kSoftmax}, 4);
    const auto exp = expand_matrix(plan).front();
    const auto trials = planned_trials(exp);
    ASSERT_EQ(trials.size(), 4u);
    for (std::size_t i = 0; i < trials.size(); ++i) {
        EXPECT_EQ(trials[i].trial_index, i);
        EXPECT_EQ(trials[i].seed, derive_seed(5, "softmax", "toy_polarity", i));
        EXPECT_TRUE(exp.model.search_space[0].contains(trials[i].params.at("learning_rate")));
    }
}

TEST(Executor, WorkerCountDoesNotChangeResults) {
    const auto plan = make_plan(kTask, {kSoftmax, kNb}, 3);
    StudyOptions one;
    one.workers = 1;
    StudyOptions four;
    four.workers = 4;
    const auto a = run_study(plan, registry_for_task(plan.task), one);
    const auto b = run_study(plan, registry_for_task(plan.task), four);
    ASSERT_EQ(a.docs.size(), 6u);
    EXPECT_FALSE(a.any_failed());
    EXPECT_EQ(views(a), views(b));
    for (std::size_t i = 0; i < a.docs.size(); ++i) {
        EXPECT_EQ(a.docs[i].num_trials, 3u);
        EXPECT_EQ(a.docs[i].config_hash, plan.config_hash);
    }
}

TEST(Executor, ReproduceReplaysSnapshots) {
    const auto plan = make_plan(kTask, {kSoftmax}, 3);
    const auto reg = registry_for_task(plan.task);
    const auto first = run_study(plan, reg);
    ASSERT_EQ(first.snapshots.size(), 1u);
    const auto again = reproduce(first.snapshots, reg);
    EXPECT_EQ(views(first), views(again));

    auto mutated = first.snapshots;
    mutated[0].trials[0].params["learning_rate"] = 0.0011;
    const auto changed = reproduce(mutated, reg);
    EXPECT_NE(first.docs[0].trial.test_metrics, changed.docs[0].trial.test_metrics);
}

TEST(Executor, TpeStudyIsDeterministicAndSnapshotsSequentialMode) {
    const auto plan = make_plan(kTask, {kSoftmax}, 6, "sampler: tpe\ntpe: {n_startup: 2}\n");
    const auto reg = registry_for_task(plan.task);
    const auto a = run_study(plan, reg);
    const auto b = run_study(plan, reg);
    EXPECT_EQ(views(a), views(b));
    ASSERT_EQ(a.snapshots.size(), 1u);
    EXPECT_EQ(a.snapshots[0].trials.size(), 6u);
    EXPECT_NE(a.snapshots[0].suggestion_mode, "batch");
    EXPECT_EQ(views(reproduce(a.snapshots, reg)), views(a));
}

TEST(Executor, EarlyStoppingUsesPatience) {
    auto task_text = kTask;
    task_text.replace(task_text.find("epochs: 4"), 9, "epochs: 10\n  early_stop_patience: 2");
    const auto plan = make_plan(task_text, {kNb}, 1);
    const auto exp = expand_matrix(plan).front();
    const auto data = prepare_experiment(exp, registry_for_task(plan.task));
    TrialOptions opts;
    opts.factory = [](EncoderKind, const ParamSet &, std::size_t dim, std::size_t classes, std::uint64_t) {
        return std::make_unique<FlatTrainable>(dim, classes);
    };
    const auto run = run_trial(exp, data, planned_trials(exp).front(), opts);
    ASSERT_EQ(run.result.status, TrialStatus::ok);
    EXPECT_EQ(run.result.epoch_history.size(), 3u);  // no gain after epoch 0, two epochs of patience
    EXPECT_EQ(run.result.best_epoch, 0u);
}

TEST(Executor, TrialFailuresAreRecordedNotThrown) {
    const auto plan = make_plan(kTask, {kNb}, 1);
    StudyOptions opts;
    opts.trial.factory = [](EncoderKind, const ParamSet &, std::size_t, std::size_t, std::uint64_t)
        -> std::unique_ptr<Trainable> { throw TrialFailure("boom", "trace"); };
    const auto out = run_study(plan, registry_for_task(plan.task), opts);
    ASSERT_EQ(out.docs.size(), 1u);
    EXPECT_EQ(out.docs[0].trial.status, TrialStatus::failed);
    EXPECT_EQ(out.docs[0].trial.failure_reason, "boom");
    EXPECT_EQ(out.docs[0].trial.captured_stderr, "trace");
    EXPECT_EQ(out.exit_code(), 2);
}

TEST(Executor, CancelledBeforeStartRunsNothing) {
    const auto plan = make_plan(kTask, {kNb}, 2);
    std::atomic<bool> cancel{true};
    StudyOptions opts;
    opts.cancel = &cancel;
    const auto out = run_study(plan, registry_for_task(plan.task), opts);
    EXPECT_TRUE(out.cancelled);
    EXPECT_TRUE(out.docs.empty());
}

TEST(Executor, LatencyUsesSeededSubsetOfTest) {
    const auto plan = make_plan(kTask, {kNb}, 1);
    const auto exp = expand_matrix(plan).front();
    const auto data = prepare_experiment(exp, registry_for_task(plan.task));
    const auto spec = planned_trials(exp).front();
    const auto a = run_trial(exp, data, spec);
    const auto b = run_trial(exp, data, spec);
    EXPECT_EQ(a.result.accounting.latency_samples.size(), std::min<std::size_t>(25, data.features.test_idx.size()));
    EXPECT_EQ(a.result.accounting.latency_samples, b.result.accounting.latency_samples);
    EXPECT_GT(a.result.accounting.model_bytes, 0u);
}

TEST(Executor, ResultDocJsonRoundTrip) {
    const auto plan = make_plan(kTask, {kSoftmax}, 1);
    const auto out = run_study(plan, registry_for_task(plan.task));
    ASSERT_EQ(out.docs.size(), 1u);
    const auto j = result_doc_to_json(out.docs[0]);
    EXPECT_EQ(result_doc_to_json(result_doc_from_json(j)), j);
    const auto v = reproducible_view(j);
    EXPECT_FALSE(v.contains("started_at"));
    EXPECT_EQ(v.at("config_hash"), plan.config_hash);
}
