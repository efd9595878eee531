#include "benchkit/executor.hpp"

#include <fmt/format.h>

#include <algorithm>
#include <chrono>
#include <cmath>
#include <condition_variable>
#include <deque>
#include <filesystem>
#include <mutex>
#include <ostream>
#include <thread>
#include <unistd.h>

namespace benchkit {

std::uint64_t derive_seed(std::uint64_t study_seed, const std::string &model_id, const std::string &dataset_id,
                          std::size_t trial_index) {
    return sha256_u64(fmt::format("{}\x1f{}\x1f{}\x1f{}", study_seed, model_id, dataset_id, trial_index));
}

std::uint64_t derive_sampler_seed(std::uint64_t study_seed, const std::string &model_id, const std::string &dataset_id,
                                  std::optional<std::size_t> trial_index) {
    if (trial_index) {
        return sha256_u64(fmt::format("sampler\x1f{}\x1f{}\x1f{}\x1f{}", study_seed, model_id, dataset_id, *trial_index));
    }
    return sha256_u64(fmt::format("sampler\x1f{}\x1f{}\x1f{}", study_seed, model_id, dataset_id));
}

std::size_t best_index(std::span<const double> series, Direction direction) {
    std::size_t best = 0;
    for (std::size_t i = 1; i < series.size(); ++i) {
        if (better(series[i], series[best], direction)) {
            best = i;
        }
    }
    return best;
}

// ---------------------------------------------------------------------------
// Result documents
// ---------------------------------------------------------------------------

namespace {

json optional_real(const std::optional<double> &v) {
    return v && std::isfinite(*v) ? json(*v) : json(nullptr);
}

}  // namespace

json result_doc_to_json(const ResultDoc &d) {
    const auto &t = d.trial;
    json history = json::array();
    for (std::size_t e = 0; e < t.epoch_history.size(); ++e) {
        const auto &r = t.epoch_history[e];
        history.push_back({{"epoch", e},
                           {"train_loss", optional_real(r.train_loss)},
                           {"val_metric", r.val_metric},
                           {"seconds", r.seconds}});
    }
    json metrics = json::object();
    for (const auto &[k, v] : t.test_metrics) {
        metrics[k] = v;
    }
    const auto &a = t.accounting;
    return {{"study_id", d.study_id},
            {"model_id", d.model_id},
            {"dataset_id", d.dataset_id},
            {"config_hash", d.config_hash},
            {"toolkit_version", d.toolkit_version},
            {"hardware", hardware_to_json(d.hardware)},
            {"started_at", d.started_at},
            {"finished_at", d.finished_at},
            {"nondeterministic", d.nondeterministic},
            {"num_trials", d.num_trials},
            {"experiment_config", d.experiment_config},
            {"trial_index", t.trial_index},
            {"params", params_to_json(t.params)},
            {"seed", t.seed},
            {"status", t.status == TrialStatus::ok ? "ok" : "failed"},
            {"failure_reason", t.status == TrialStatus::ok ? json(nullptr) : json(t.failure_reason)},
            {"stderr", t.captured_stderr.empty() ? json(nullptr) : json(t.captured_stderr)},
            {"epoch_history", history},
            {"best_epoch", t.status == TrialStatus::ok ? json(t.best_epoch) : json(nullptr)},
            {"objective", optional_real(t.objective)},
            {"test_metrics", metrics},
            {"accounting",
             {{"total_train_s", a.total_train_s},
              {"mean_step_s", a.mean_step_s},
              {"inference_latency_s", a.inference_latency_s},
              {"cost_usd", a.cost_usd},
              {"energy_kwh", a.energy_kwh},
              {"co2_kg", a.co2_kg},
              {"model_bytes", a.model_bytes},
              {"latency_samples", a.latency_samples}}}};
}

ResultDoc result_doc_from_json(const json &j) {
    try {
        ResultDoc d;
        d.study_id = j.at("study_id").get<std::string>();
        d.model_id = j.at("model_id").get<std::string>();
        d.dataset_id = j.at("dataset_id").get<std::string>();
        d.config_hash = j.at("config_hash").get<std::string>();
        d.toolkit_version = j.at("toolkit_version").get<std::string>();
        const auto &h = j.at("hardware");
        d.hardware.cpu_core_count = h.value("cpu_core_count", std::int64_t{0});
        d.hardware.total_memory_bytes = h.value("total_memory_bytes", std::int64_t{0});
        d.hardware.accelerator = h.value("accelerator", std::string("unknown"));
        d.hardware.valid = h.value("valid", false);
        d.started_at = j.value("started_at", std::string());
        d.finished_at = j.value("finished_at", std::string());
        d.nondeterministic = j.value("nondeterministic", false);
        d.num_trials = j.at("num_trials").get<std::size_t>();
        d.experiment_config = j.value("experiment_config", json::object());
        auto &t = d.trial;
        t.trial_index = j.at("trial_index").get<std::size_t>();
        t.params = params_from_json(j.at("params"));
        t.seed = j.at("seed").get<std::uint64_t>();
        t.status = j.at("status").get<std::string>() == "ok" ? TrialStatus::ok : TrialStatus::failed;
        if (j.contains("failure_reason") && j["failure_reason"].is_string()) {
            t.failure_reason = j["failure_reason"].get<std::string>();
        }
        if (j.contains("stderr") && j["stderr"].is_string()) {
            t.captured_stderr = j["stderr"].get<std::string>();
        }
        for (const auto &e : j.at("epoch_history")) {
            EpochRecord r;
            if (e.contains("train_loss") && e["train_loss"].is_number()) {
                r.train_loss = e["train_loss"].get<double>();
            }
            r.val_metric = e.at("val_metric").is_number() ? e["val_metric"].get<double>() : std::nan("");
            r.seconds = e.value("seconds", 0.0);
            t.epoch_history.push_back(r);
        }
        if (j.at("best_epoch").is_number()) {
            t.best_epoch = j["best_epoch"].get<std::size_t>();
        }
        if (j.at("objective").is_number()) {
            t.objective = j["objective"].get<double>();
        }
        for (const auto &[k, v] : j.at("test_metrics").items()) {
            if (v.is_number()) {
                t.test_metrics[k] = v.get<double>();
            }
        }
        const auto &a = j.at("accounting");
        t.accounting.total_train_s = a.value("total_train_s", 0.0);
        t.accounting.mean_step_s = a.value("mean_step_s", 0.0);
        t.accounting.inference_latency_s = a.value("inference_latency_s", 0.0);
        t.accounting.cost_usd = a.value("cost_usd", 0.0);
        t.accounting.energy_kwh = a.value("energy_kwh", 0.0);
        t.accounting.co2_kg = a.value("co2_kg", 0.0);
        t.accounting.model_bytes = a.value("model_bytes", std::uint64_t{0});
        t.accounting.latency_samples = a.value("latency_samples", std::vector<std::size_t>{});
        return d;
    } catch (const json::exception &e) {
        throw Error(fmt::format("malformed result document: {}", e.what()));
    }
}

json reproducible_view(json doc) {
    doc.erase("started_at");
    doc.erase("finished_at");
    doc.erase("hardware");
    doc.erase("stderr");
    if (doc.contains("accounting")) {
        auto &a = doc["accounting"];
        for (const char *k : {"total_train_s", "mean_step_s", "inference_latency_s", "cost_usd", "energy_kwh", "co2_kg"}) {
            a.erase(k);
        }
    }
    if (doc.contains("epoch_history")) {
        for (auto &e : doc["epoch_history"]) {
            e.erase("seconds");
        }
    }
    return doc;
}

// ---------------------------------------------------------------------------
// Trial lifecycle
// ---------------------------------------------------------------------------

PreparedExperiment prepare_experiment(const ExperimentPlan &exp, const DatasetRegistry &datasets) {
    PreparedExperiment p;
    p.dataset = datasets.load(exp.dataset_id);
    p.split = split(p.dataset, exp.task.split, exp.task.split_seed);
    p.features = featurize(p.dataset, p.split, exp.task.preprocess);
    return p;
}

ParamSet effective_params(const ModelSpec &model, const ParamSet &sampled) {
    ParamSet out = model.fixed_params;
    for (const auto &[k, v] : sampled) {
        out[k] = v;
    }
    return out;
}

namespace {

using Clock = std::chrono::steady_clock;

double seconds_since(Clock::time_point t0) {
    return std::chrono::duration<double>(Clock::now() - t0).count();
}

struct ResolvedTraining {
    int epochs;
    int batch_size;
    double learning_rate;
};

ResolvedTraining resolve_training(const TrainingParams &base, const ParamSet &effective) {
    ResolvedTraining r{base.epochs, base.batch_size, base.learning_rate};
    if (auto it = effective.find("epochs"); it != effective.end()) {
        const auto v = param_as_int(it->second);
        if (!v || *v < 1 || *v > 1000000) {
            throw TrialFailure(fmt::format("invalid epochs value {}", format_param(it->second)));
        }
        r.epochs = static_cast<int>(*v);
    }
    if (auto it = effective.find("batch_size"); it != effective.end()) {
        const auto v = param_as_int(it->second);
        if (!v || *v < 1 || *v > 100000000) {
            throw TrialFailure(fmt::format("invalid batch_size value {}", format_param(it->second)));
        }
        r.batch_size = static_cast<int>(*v);
    }
    if (auto it = effective.find("learning_rate"); it != effective.end()) {
        const auto v = param_as_real(it->second);
        if (!v || !(*v > 0.0) || !std::isfinite(*v)) {
            throw TrialFailure(fmt::format("invalid learning_rate value {}", format_param(it->second)));
        }
        r.learning_rate = *v;
    }
    return r;
}

std::vector<std::string> requested_test_metrics(const ExperimentPlan &exp) {
    std::vector<std::string> names = exp.task.metrics;
    const auto goal = strip_val_prefix(exp.hyperopt.goal_metric);
    for (const std::string &extra : {goal, std::string("accuracy"), std::string("loss")}) {
        if (std::find(names.begin(), names.end(), extra) == names.end()) {
            names.push_back(extra);
        }
    }
    return names;
}

template <typename T>
std::vector<T> gather(const std::vector<T> &xs, const std::vector<std::size_t> &idx) {
    std::vector<T> out;
    out.reserve(idx.size());
    for (const auto i : idx) {
        out.push_back(xs[i]);
    }
    return out;
}

void fill_accounting(AccountingRecord &a, const ExperimentPlan &exp, std::span<const double> epoch_seconds,
                     std::span<const std::size_t> batches) {
    const auto speed = training_speed(epoch_seconds, batches);
    a.total_train_s = speed.total_train_s;
    a.mean_step_s = speed.mean_step_s;
    a.cost_usd = compute_cost(speed.total_train_s, exp.task.accounting.cost);
    const auto energy = estimate_energy(speed.total_train_s, exp.task.accounting.power);
    a.energy_kwh = energy.energy_kwh;
    a.co2_kg = energy.co2_kg;
}

void run_native(const ExperimentPlan &exp, const PreparedExperiment &data, const TrialSpec &spec,
                const TrialOptions &opts, TrialRun &run) {
    TrialResult &res = run.result;
    const auto &f = data.features;
    const ParamSet effective = effective_params(exp.model, spec.params);
    const ResolvedTraining tr = resolve_training(exp.task.training, effective);
    if (f.train_idx.empty()) {
        throw TrialFailure("empty training split");
    }
    if (f.val_idx.empty()) {
        throw TrialFailure("empty validation split");
    }
    if (f.test_idx.empty()) {
        throw TrialFailure("empty test split");
    }
    std::unique_ptr<Trainable> model;
    try {
        model = opts.factory(exp.model.encoder_kind, effective, f.feature_dim, f.n_classes, spec.seed);
    } catch (const TrialFailure &) {
        throw;
    } catch (const std::exception &e) {
        throw TrialFailure(fmt::format("model construction failed: {}", e.what()));
    }
    if (!model) {
        throw TrialFailure("model construction returned nothing");
    }
    const auto x_train = gather(f.vectors, f.train_idx);
    const auto y_train = gather(f.labels, f.train_idx);
    const auto x_val = gather(f.vectors, f.val_idx);
    const auto y_val = gather(f.labels, f.val_idx);
    const auto x_test = gather(f.vectors, f.test_idx);
    const auto y_test = gather(f.labels, f.test_idx);

    const auto goal = strip_val_prefix(exp.hyperopt.goal_metric);
    const Direction dir = exp.hyperopt.direction;
    const EpochOptions eo{static_cast<std::size_t>(tr.batch_size), tr.learning_rate, exp.task.training.optimizer,
                          exp.task.training.shuffle};
    const auto patience = exp.task.training.early_stop_patience;

    std::unique_ptr<Trainable> best;
    std::vector<double> epoch_seconds;
    std::vector<std::size_t> batches;
    int no_improve = 0;
    for (int e = 0; e < tr.epochs; ++e) {
        const auto t0 = Clock::now();
        const EpochStats stats = model->fit_epoch(x_train, y_train, eo);
        epoch_seconds.push_back(seconds_since(t0));
        batches.push_back(stats.batches);
        const auto val_preds = model->predict_proba(x_val);
        const auto v = opts.metrics.evaluate_one(goal, val_preds, y_val);
        if (!v || !std::isfinite(*v)) {
            throw TrialFailure(fmt::format("validation metric '{}' is undefined at epoch {}", goal, e));
        }
        res.epoch_history.push_back({stats.train_loss, *v, epoch_seconds.back()});
        if (!best || better(*v, *res.objective, dir)) {
            best = model->clone();
            res.best_epoch = static_cast<std::size_t>(e);
            res.objective = *v;
            no_improve = 0;
        } else {
            ++no_improve;
            if (patience && no_improve >= *patience) {
                break;
            }
        }
    }
    const auto test_preds = best->predict_proba(x_test);
    res.test_metrics = opts.metrics.evaluate(requested_test_metrics(exp), test_preds, y_test);
    fill_accounting(res.accounting, exp, epoch_seconds, batches);
    const Trainable &bm = *best;
    const auto lat = measure_latency([&](std::size_t i) { (void)bm.predict_proba(x_test[i]); }, x_test.size(),
                                     static_cast<std::size_t>(exp.task.accounting.latency_samples), spec.seed);
    res.accounting.inference_latency_s = lat.seconds_per_example;
    res.accounting.latency_samples = lat.sample_indices;
    res.accounting.model_bytes = bm.param_bytes();
    run.best_model = std::move(best);
}

std::string sparse_to_text(const SparseVector &v) {
    std::string out;
    for (const auto &e : v) {
        if (!out.empty()) {
            out += ' ';
        }
        out += fmt::format("{}:{}", e.index, format_real(e.value));
    }
    return out;
}

void write_split_csv(const std::string &path, const PreparedExperiment &data, const std::vector<std::size_t> &idx,
                     bool featurized) {
    std::string out = featurized ? "features,label\n" : "text,label\n";
    for (const auto i : idx) {
        const std::string first =
            featurized ? sparse_to_text(data.features.vectors[i]) : data.dataset.examples[i].text;
        out += csv_row({first, std::to_string(data.features.labels[i])});
    }
    write_file_atomic(path, out);
}

void run_external(const ExperimentPlan &exp, const PreparedExperiment &data, const TrialSpec &spec,
                  const TrialOptions &opts, TrialRun &run) {
    namespace fs = std::filesystem;
    TrialResult &res = run.result;
    const auto &f = data.features;
    const ParamSet effective = effective_params(exp.model, spec.params);
    const ResolvedTraining tr = resolve_training(exp.task.training, effective);
    if (f.val_idx.empty() || f.test_idx.empty() || f.train_idx.empty()) {
        throw TrialFailure("external trial needs non-empty train, validation and test splits");
    }
    const fs::path base = opts.work_dir.empty() ? fs::temp_directory_path() : fs::path(opts.work_dir);
    const fs::path dir = base / fmt::format("benchkit-{}-{}-{}-{}", ::getpid(), safe_file_stem(exp.study_id),
                                            safe_file_stem(exp.experiment_id()), spec.trial_index);
    fs::create_directories(dir);
    struct Cleanup {
        fs::path p;
        ~Cleanup() {
            std::error_code ec;
            fs::remove_all(p, ec);
        }
    } cleanup{dir};

    ExternalTrialRequest req;
    req.featurize = exp.model.external_featurize;
    req.train_path = (dir / "train.csv").string();
    req.val_path = (dir / "val.csv").string();
    req.test_path = (dir / "test.csv").string();
    req.params = effective;
    req.seed = spec.seed;
    req.epochs = tr.epochs;
    req.n_classes = static_cast<int>(f.n_classes);
    req.goal_metric = exp.hyperopt.goal_metric;
    write_split_csv(req.train_path, data, f.train_idx, req.featurize);
    write_split_csv(req.val_path, data, f.val_idx, req.featurize);
    write_split_csv(req.test_path, data, f.test_idx, req.featurize);

    const auto t0 = Clock::now();
    const auto resp = run_external_trial(*exp.model.external_command, req, opts.external_timeout_s, f.test_idx.size());
    const double wall = seconds_since(t0);

    const auto n_epochs = resp.val_metric.size();
    for (const double v : resp.val_metric) {
        res.epoch_history.push_back({std::nullopt, v, wall / static_cast<double>(n_epochs)});
    }
    res.best_epoch = best_index(resp.val_metric, exp.hyperopt.direction);
    res.objective = resp.val_metric[res.best_epoch];
    const auto y_test = gather(f.labels, f.test_idx);
    res.test_metrics = opts.metrics.evaluate(requested_test_metrics(exp), resp.test_predictions, y_test);
    const std::vector<double> secs(n_epochs, wall / static_cast<double>(n_epochs));
    const std::vector<std::size_t> steps(n_epochs, (f.train_idx.size() + tr.batch_size - 1) / tr.batch_size);
    fill_accounting(res.accounting, exp, secs, steps);
    res.accounting.inference_latency_s = resp.inference_latency_s.value_or(0.0);
    res.accounting.model_bytes = resp.param_bytes;
}

}  // namespace

TrialRun run_trial(const ExperimentPlan &exp, const PreparedExperiment &data, const TrialSpec &spec,
                   const TrialOptions &opts) {
    TrialRun run;
    run.result.trial_index = spec.trial_index;
    run.result.params = spec.params;
    run.result.seed = spec.seed;
    try {
        if (exp.model.encoder_kind == EncoderKind::external) {
            run_external(exp, data, spec, opts, run);
        } else {
            run_native(exp, data, spec, opts, run);
        }
    } catch (const TrialFailure &e) {
        run.result.status = TrialStatus::failed;
        run.result.failure_reason = e.what();
        run.result.captured_stderr = e.captured_stderr();
    } catch (const std::exception &e) {
        run.result.status = TrialStatus::failed;
        run.result.failure_reason = e.what();
    }
    if (run.result.status == TrialStatus::failed) {
        run.best_model.reset();
        run.result.objective.reset();
        run.result.test_metrics.clear();
    }
    return run;
}

// ---------------------------------------------------------------------------
// Studies
// ---------------------------------------------------------------------------

bool StudyOutcome::any_failed() const {
    return std::any_of(docs.begin(), docs.end(), [](const ResultDoc &d) { return d.trial.status != TrialStatus::ok; });
}

std::vector<TrialSpec> planned_trials(const ExperimentPlan &exp) {
    const auto &h = exp.hyperopt;
    const auto &m = exp.model.model_id;
    std::vector<ParamSet> points;
    switch (h.sampler) {
        case SamplerKind::grid:
            points = sample_grid(exp.model.search_space, h.grid_points_per_range, h.grid_cap);
            break;
        case SamplerKind::random:
            points = sample_random(exp.model.search_space, static_cast<std::size_t>(h.num_samples),
                                   derive_sampler_seed(h.seed, m, exp.dataset_id));
            break;
        case SamplerKind::tpe:
            return {};
    }
    std::vector<TrialSpec> out;
    out.reserve(points.size());
    for (std::size_t i = 0; i < points.size(); ++i) {
        out.push_back({i, std::move(points[i]), derive_seed(h.seed, m, exp.dataset_id, i)});
    }
    return out;
}

namespace {

struct ExperimentState {
    ExperimentPlan plan;
    bool materialized = true;  // trial list fixed up front
    std::vector<TrialSpec> specs;
    std::size_t total = 0;
    std::size_t dispatched = 0;
    std::size_t completed = 0;
    std::vector<std::optional<ResultDoc>> results;
    std::vector<TrialRecord> history;
    json experiment_config;
    std::string suggestion_mode;

    std::once_flag prepared_once;
    std::shared_ptr<const PreparedExperiment> prepared;
    std::string prepare_error;
};

struct Job {
    std::size_t exp = 0;
    TrialSpec spec;
};

struct Done {
    std::size_t exp = 0;
    ResultDoc doc;
};

template <typename T>
class Channel {
  public:
    void push(T v) {
        {
            std::lock_guard lock(mu_);
            q_.push_back(std::move(v));
        }
        cv_.notify_one();
    }
    std::optional<T> pop() {
        std::unique_lock lock(mu_);
        cv_.wait(lock, [&] { return closed_ || !q_.empty(); });
        if (q_.empty()) {
            return std::nullopt;
        }
        T v = std::move(q_.front());
        q_.pop_front();
        return v;
    }
    void close() {
        {
            std::lock_guard lock(mu_);
            closed_ = true;
        }
        cv_.notify_all();
    }

  private:
    std::mutex mu_;
    std::condition_variable cv_;
    std::deque<T> q_;
    bool closed_ = false;
};

json experiment_config_json(const ExperimentPlan &exp) {
    return {{"task", task_to_json(exp.task)},
            {"model", model_to_json(exp.model)},
            {"hyperopt", hyperopt_to_json(exp.hyperopt)},
            {"dataset_id", exp.dataset_id}};
}

ResultDoc execute_job(ExperimentState &st, const TrialSpec &spec, const DatasetRegistry &datasets,
                      const TrialOptions &opts, const HardwareInfo &hw) {
    std::call_once(st.prepared_once, [&] {
        try {
            st.prepared = std::make_shared<const PreparedExperiment>(prepare_experiment(st.plan, datasets));
        } catch (const std::exception &e) {
            st.prepare_error = fmt::format("data preparation failed: {}", e.what());
        }
    });
    ResultDoc doc;
    doc.study_id = st.plan.study_id;
    doc.model_id = st.plan.model.model_id;
    doc.dataset_id = st.plan.dataset_id;
    doc.config_hash = st.plan.config_hash;
    doc.hardware = hw;
    doc.nondeterministic = st.plan.model.encoder_kind == EncoderKind::external;
    doc.num_trials = st.total;
    doc.experiment_config = st.experiment_config;
    doc.started_at = utc_timestamp();
    if (!st.prepared) {
        doc.trial.trial_index = spec.trial_index;
        doc.trial.params = spec.params;
        doc.trial.seed = spec.seed;
        doc.trial.status = TrialStatus::failed;
        doc.trial.failure_reason = st.prepare_error;
    } else {
        doc.trial = run_trial(st.plan, *st.prepared, spec, opts).result;
    }
    doc.finished_at = utc_timestamp();
    return doc;
}

std::string format_objective(const std::optional<double> &v) {
    return v ? fmt::format("{:.6g}", *v) : std::string("nan");
}

StudyOutcome run_engine(std::vector<std::unique_ptr<ExperimentState>> &exps, const DatasetRegistry &datasets,
                        const StudyOptions &opts, int workers, bool write_snapshots) {
    StudyOutcome outcome;
    const HardwareInfo hw = opts.hardware ? *opts.hardware : collect_hardware_info();
    Channel<Job> jobs;
    Channel<Done> done;
    std::vector<std::jthread> pool;
    for (int w = 0; w < workers; ++w) {
        pool.emplace_back([&] {
            while (auto job = jobs.pop()) {
                Done d{job->exp, execute_job(*exps[job->exp], job->spec, datasets, opts.trial, hw)};
                done.push(std::move(d));
            }
        });
    }

    auto next_job = [&]() -> std::optional<Job> {
        for (std::size_t e = 0; e < exps.size(); ++e) {
            auto &st = *exps[e];
            if (st.dispatched >= st.total) {
                continue;
            }
            const std::size_t i = st.dispatched++;
            if (!st.materialized) {
                const auto &h = st.plan.hyperopt;
                const auto &m = st.plan.model.model_id;
                ParamSet p = suggest_tpe(st.plan.model.search_space, st.history, h.direction, h.tpe,
                                         derive_sampler_seed(h.seed, m, st.plan.dataset_id, i));
                st.specs.push_back({i, std::move(p), derive_seed(h.seed, m, st.plan.dataset_id, i)});
            }
            return Job{e, st.specs[i]};
        }
        return std::nullopt;
    };

    std::size_t cursor_exp = 0;
    std::size_t cursor_trial = 0;
    std::exception_ptr failure;
    auto emit = [&](const ResultDoc &doc) {
        if (!failure && opts.sink) {
            try {
                opts.sink(doc);
            } catch (...) {
                failure = std::current_exception();
            }
        }
        outcome.docs.push_back(doc);
    };
    auto flush_in_order = [&] {
        while (cursor_exp < exps.size()) {
            auto &st = *exps[cursor_exp];
            if (cursor_trial >= st.total) {
                ++cursor_exp;
                cursor_trial = 0;
                continue;
            }
            if (!st.results[cursor_trial]) {
                return;
            }
            emit(*st.results[cursor_trial]);
            ++cursor_trial;
        }
    };

    std::size_t in_flight = 0;
    for (;;) {
        const bool stop = failure || (opts.cancel != nullptr && opts.cancel->load());
        outcome.cancelled = outcome.cancelled || (opts.cancel != nullptr && opts.cancel->load());
        while (!stop && in_flight < static_cast<std::size_t>(workers)) {
            auto job = next_job();
            if (!job) {
                break;
            }
            jobs.push(std::move(*job));
            ++in_flight;
        }
        if (in_flight == 0) {
            break;
        }
        auto d = done.pop();
        --in_flight;
        auto &st = *exps[d->exp];
        const auto &t = d->doc.trial;
        if (opts.progress != nullptr) {
            *opts.progress << fmt::format("{} trial={} status={} {}={}\n", st.plan.experiment_id(), t.trial_index,
                                          t.status == TrialStatus::ok ? "ok" : "failed", st.plan.hyperopt.goal_metric,
                                          format_objective(t.objective))
                           << std::flush;
        }
        st.history.push_back({t.trial_index, t.params, t.objective});
        st.results[t.trial_index] = std::move(d->doc);
        ++st.completed;
        if (st.completed == st.total) {
            auto snap = snapshot_experiment(st.plan, st.specs, st.suggestion_mode);
            if (write_snapshots && !opts.out_dir.empty() && !failure) {
                try {
                    write_snapshot(snapshot_path(opts.out_dir, snap), snap);
                } catch (...) {
                    failure = std::current_exception();
                }
            }
        }
        flush_in_order();
    }
    jobs.close();
    pool.clear();

    // after a cancel, completed docs past the first gap are still written
    for (; cursor_exp < exps.size(); ++cursor_exp, cursor_trial = 0) {
        auto &st = *exps[cursor_exp];
        for (; cursor_trial < st.total; ++cursor_trial) {
            if (st.results[cursor_trial]) {
                emit(*st.results[cursor_trial]);
            }
        }
    }
    if (failure) {
        std::rethrow_exception(failure);
    }
    for (auto &stp : exps) {
        auto &st = *stp;
        if (st.completed != st.total) {
            continue;
        }
        outcome.snapshots.push_back(snapshot_experiment(st.plan, st.specs, st.suggestion_mode));
        if (write_snapshots && !opts.out_dir.empty()) {
            outcome.snapshot_paths.push_back(snapshot_path(opts.out_dir, outcome.snapshots.back()));
        }
    }
    return outcome;
}

std::unique_ptr<ExperimentState> make_state(ExperimentPlan plan) {
    auto st = std::make_unique<ExperimentState>();
    st->plan = std::move(plan);
    st->experiment_config = experiment_config_json(st->plan);
    return st;
}

}  // namespace

StudyOutcome run_study(const StudyPlan &plan, const DatasetRegistry &datasets, const StudyOptions &opts) {
    const int workers = std::max(1, opts.workers > 0 ? opts.workers : plan.hyperopt.max_parallel_trials);
    std::vector<std::unique_ptr<ExperimentState>> exps;
    for (auto &exp : expand_matrix(plan)) {
        auto st = make_state(std::move(exp));
        if (st->plan.hyperopt.sampler == SamplerKind::tpe) {
            st->materialized = false;
            st->total = static_cast<std::size_t>(st->plan.hyperopt.num_samples);
            st->suggestion_mode = workers == 1 ? "sequential" : "asynchronous";
        } else {
            st->specs = planned_trials(st->plan);
            st->total = st->specs.size();
            st->suggestion_mode = "batch";
        }
        st->experiment_config["suggestion_mode"] = st->suggestion_mode;
        st->results.resize(st->total);
        exps.push_back(std::move(st));
    }
    return run_engine(exps, datasets, opts, workers, true);
}

StudyOutcome reproduce(const std::vector<ExperimentSnapshot> &snapshots, const DatasetRegistry &datasets,
                       const StudyOptions &opts) {
    int workers = opts.workers;
    std::vector<std::unique_ptr<ExperimentState>> exps;
    for (const auto &s : snapshots) {
        auto st = make_state(s.plan());
        st->specs = s.trials;
        std::sort(st->specs.begin(), st->specs.end(),
                  [](const TrialSpec &a, const TrialSpec &b) { return a.trial_index < b.trial_index; });
        for (std::size_t i = 0; i < st->specs.size(); ++i) {
            if (st->specs[i].trial_index != i) {
                throw Error(fmt::format("snapshot {} is missing trial {}", st->plan.experiment_id(), i));
            }
        }
        st->total = st->specs.size();
        st->suggestion_mode = s.suggestion_mode;
        st->experiment_config["suggestion_mode"] = st->suggestion_mode;
        st->results.resize(st->total);
        if (workers <= 0) {
            workers = s.hyperopt.max_parallel_trials;
        }
        exps.push_back(std::move(st));
    }
    return run_engine(exps, datasets, opts, std::max(1, workers), false);
}

}  // namespace benchkit
