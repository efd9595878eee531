#include "benchkit/cli.hpp"

#include <CLI11.hpp>
#include <fmt/format.h>
#include <fmt/ranges.h>

#include <algorithm>
#include <filesystem>
#include <iostream>
#include <map>
#include <memory>
#include <optional>

#include "benchkit/analysis.hpp"
#include "benchkit/config.hpp"
#include "benchkit/executor.hpp"
#include "benchkit/robustness.hpp"
#include "benchkit/store.hpp"

namespace benchkit {

namespace fs = std::filesystem;

namespace {

struct Args {
    std::string task;
    std::vector<std::string> models;
    std::string hyperopt;
    int workers = 0;
    std::optional<std::uint64_t> seed;
    std::string publish_config;
    std::string out_dir = "out";
    double external_timeout_s = 600.0;
    std::vector<std::string> snapshots;
    // attack
    std::string attack = "deepwordbug";
    std::string thesaurus;
    std::size_t budget = 0;  // 0: per-attack default
    double theta = kDefaultReductionTheta;
    std::size_t max_examples = 0;
    // slice
    std::string slices;
    // analyze
    std::string scores;
    std::string store;
    std::string report = "all";
    std::string format = "all";
    std::string direction = "maximize";
    std::string metric = "accuracy";
    // query / publish
    std::vector<std::string> filters;
    std::string data_dir;
};

struct Parser {
    CLI::App app{"Benchmarking toolkit for text classification models", "bench"};
    Args a;
    CLI::App *validate = nullptr;
    CLI::App *run = nullptr;
    CLI::App *reproduce = nullptr;
    CLI::App *attack = nullptr;
    CLI::App *slice = nullptr;
    CLI::App *analyze = nullptr;
    CLI::App *publish = nullptr;
    CLI::App *query = nullptr;
    CLI::App *datasets = nullptr;

    Parser() {
        app.require_subcommand(1, 1);
        app.set_version_flag("--version", std::string(kToolkitVersion));

        auto study_inputs = [&](CLI::App *sub) {
            sub->add_option("--task", a.task, "Task config (YAML)")->required();
            sub->add_option("--models", a.models, "Model config(s); repeatable")->required()->expected(1, -1);
            sub->add_option("--hyperopt", a.hyperopt, "Hyperparameter search config (YAML)")->required();
            sub->add_option("--publish-config", a.publish_config, "Publish target config (YAML)");
            sub->add_option("--data-dir", a.data_dir, "Directory of bundled datasets");
        };
        auto out_dir = [&](CLI::App *sub) {
            sub->add_option("--out-dir", a.out_dir, "Output directory")->capture_default_str();
        };

        validate = app.add_subcommand("validate", "Parse and validate configs without running");
        study_inputs(validate);

        run = app.add_subcommand("run", "Run a study and store its results");
        study_inputs(run);
        run->add_option("--workers", a.workers, "Parallel trials (default: max_parallel_trials)");
        run->add_option("--seed", a.seed, "Override the hyperopt seed");
        out_dir(run);
        run->add_option("--external-timeout-s", a.external_timeout_s, "Per-trial timeout for external models")
            ->capture_default_str();

        reproduce = app.add_subcommand("reproduce", "Replay experiments from snapshot files");
        reproduce->add_option("snapshots", a.snapshots, "Snapshot file(s)")->required()->expected(1, -1);
        reproduce->add_option("--workers", a.workers, "Parallel trials (default: from snapshot)");
        reproduce->add_option("--data-dir", a.data_dir, "Directory of bundled datasets");
        out_dir(reproduce);
        reproduce->add_option("--external-timeout-s", a.external_timeout_s, "Per-trial timeout for external models")
            ->capture_default_str();

        attack = app.add_subcommand("attack", "Attack the best model of each snapshot on its test split");
        attack->add_option("snapshots", a.snapshots, "Snapshot file(s)")->required()->expected(1, -1);
        attack->add_option("--attack", a.attack, "deepwordbug | pwws | input_reduction")->capture_default_str();
        attack->add_option("--thesaurus", a.thesaurus, "Synonym file (word<TAB>syn1,syn2); required for pwws");
        attack->add_option("--budget", a.budget, "Edit budget (default: 3 deepwordbug, 5 pwws)");
        attack->add_option("--theta", a.theta, "Input reduction success fraction")->capture_default_str();
        attack->add_option("--max-examples", a.max_examples, "Attack at most this many test examples (0: all)");
        attack->add_option("--seed", a.seed, "Attack seed (default: hyperopt seed)");
        attack->add_option("--data-dir", a.data_dir, "Directory of bundled datasets");
        out_dir(attack);

        slice = app.add_subcommand("slice", "Report best-model accuracy on predicate-defined slices");
        slice->add_option("snapshots", a.snapshots, "Snapshot file(s)")->required()->expected(1, -1);
        slice->add_option("--slices", a.slices, "Slice config (YAML with a slices: list)")->required();
        slice->add_option("--data-dir", a.data_dir, "Directory of bundled datasets");
        out_dir(slice);

        analyze = app.add_subcommand("analyze", "Rank, z-score and gap reports over a score table");
        auto *scores = analyze->add_option("--scores", a.scores, "CSV score table: model,<dataset1>,...");
        auto *store = analyze->add_option("--store", a.store, "Result store (.ndjson)");
        scores->excludes(store);
        analyze->add_option("--report", a.report, "all | scores | ranks | mrr | zscores | gaps")->capture_default_str();
        analyze->add_option("--format", a.format, "all | text | csv | svg")->capture_default_str();
        analyze->add_option("--direction", a.direction, "Score direction: maximize | minimize")->capture_default_str();
        analyze->add_option("--metric", a.metric, "Test metric taken from the store")->capture_default_str();
        out_dir(analyze);

        publish = app.add_subcommand("publish", "Upload stored result documents");
        publish->add_option("--store", a.store, "Result store (.ndjson)")->required();
        publish->add_option("--publish-config", a.publish_config, "Publish target config (YAML)")->required();
        publish->add_option("--filter", a.filters, "path=value | path<value | path>value | path~value; repeatable");

        query = app.add_subcommand("query", "Print stored documents matching every filter");
        query->add_option("--store", a.store, "Result store (.ndjson)")->required();
        query->add_option("--filter", a.filters, "path=value | path<value | path>value | path~value; repeatable");

        datasets = app.add_subcommand("datasets", "List bundled and registered dataset ids");
        datasets->add_option("--task", a.task, "Task config whose user datasets are registered too");
        datasets->add_option("--data-dir", a.data_dir, "Directory of bundled datasets");
    }
};

std::string data_dir_of(const Args &a) { return a.data_dir.empty() ? DatasetRegistry::default_data_dir() : a.data_dir; }

struct LoadedStudy {
    StudyPlan plan;
    DatasetRegistry registry;
    std::optional<PublishTarget> publish;
};

LoadedStudy load_study(const Args &a) {
    const TaskConfig task = parse_task_config(read_file(a.task), a.task);
    std::vector<ModelSpec> models;
    for (const auto &m : a.models) {
        models.push_back(parse_model_config(read_file(m), m));
    }
    HyperoptConfig hopt = parse_hyperopt_config(read_file(a.hyperopt), a.hyperopt);
    if (a.seed) {
        hopt.seed = *a.seed;
    }
    std::optional<PublishTarget> publish = hopt.publish;
    if (!a.publish_config.empty()) {
        publish = parse_publish_config(read_file(a.publish_config), a.publish_config);
    }
    DatasetRegistry registry = registry_for_task(task, data_dir_of(a));
    StudyPlan plan = validate_study(task, std::move(models), hopt, registry);
    return {std::move(plan), std::move(registry), publish};
}

int report_publish(const std::vector<PublishOutcome> &outcomes, std::ostream &out, std::ostream &err) {
    std::size_t ok = 0;
    for (const auto &o : outcomes) {
        if (o.ok) {
            ++ok;
        } else {
            err << fmt::format("publish: document {} failed after {} attempt(s): {}\n", o.doc_index, o.attempts,
                               o.error);
        }
    }
    out << fmt::format("publish sent={} ok={} failed={}\n", outcomes.size(), ok, outcomes.size() - ok);
    return ok == outcomes.size() ? 0 : 2;
}

int cmd_validate(const Args &a, std::ostream &out) {
    const auto s = load_study(a);
    out << fmt::format("validate ok study_id={} experiments={} config_hash={}\n", s.plan.study_id,
                       expand_matrix(s.plan).size(), s.plan.config_hash);
    return 0;
}

int cmd_run(const Args &a, std::ostream &out, std::ostream &err, const std::atomic<bool> *cancel) {
    const auto s = load_study(a);
    ResultStore store(ResultStore::path_for(a.out_dir, s.plan.study_id));
    StudyOptions opts;
    opts.workers = a.workers;
    opts.out_dir = a.out_dir;
    opts.trial.external_timeout_s = a.external_timeout_s;
    opts.progress = &err;
    opts.cancel = cancel;
    opts.sink = [&](const ResultDoc &doc) { store.append(doc); };
    const StudyOutcome outcome = run_study(s.plan, s.registry, opts);
    for (const auto &w : outcome.warnings) {
        err << "warning: " << w << "\n";
    }
    int code = outcome.exit_code();
    if (s.publish && !outcome.cancelled) {
        std::vector<json> docs;
        for (const auto &d : outcome.docs) {
            docs.push_back(result_doc_to_json(d));
        }
        code = std::max(code, report_publish(publish(docs, *s.publish), out, err));
    }
    const auto failed = std::count_if(outcome.docs.begin(), outcome.docs.end(),
                                      [](const ResultDoc &d) { return d.trial.status != TrialStatus::ok; });
    for (const auto &p : outcome.snapshot_paths) {
        out << "snapshot " << p << "\n";
    }
    out << fmt::format("run study_id={} trials={} failed={} cancelled={} store={}\n", s.plan.study_id,
                       outcome.docs.size(), failed, outcome.cancelled, store.path());
    return outcome.cancelled ? std::max(code, 2) : code;
}

std::vector<ExperimentSnapshot> load_snapshots(const Args &a, std::ostream &err) {
    std::vector<ExperimentSnapshot> out;
    for (const auto &p : a.snapshots) {
        auto loaded = load_snapshot(p);
        for (const auto &w : loaded.warnings) {
            err << "warning: " << p << ": " << w << "\n";
        }
        out.push_back(std::move(loaded.snapshot));
    }
    return out;
}

int cmd_reproduce(const Args &a, std::ostream &out, std::ostream &err, const std::atomic<bool> *cancel) {
    const auto snaps = load_snapshots(a, err);
    StudyOptions opts;
    opts.workers = a.workers;
    opts.trial.external_timeout_s = a.external_timeout_s;
    opts.progress = &err;
    opts.cancel = cancel;
    std::map<std::string, std::unique_ptr<ResultStore>> stores;
    opts.sink = [&](const ResultDoc &doc) {
        auto &st = stores[doc.study_id];
        if (!st) {
            st = std::make_unique<ResultStore>(
                (fs::path(a.out_dir) / "reproduce" / (safe_file_stem(doc.study_id) + ".ndjson")).string());
        }
        st->append(doc);
    };
    std::size_t trials = 0;
    std::size_t failed = 0;
    bool cancelled = false;
    // Each snapshot may come from a different task; registries are built per snapshot.
    for (const auto &s : snaps) {
        const auto registry = registry_for_task(s.task, data_dir_of(a));
        const auto outcome = reproduce({s}, registry, opts);
        for (const auto &w : outcome.warnings) {
            err << "warning: " << w << "\n";
        }
        trials += outcome.docs.size();
        failed += static_cast<std::size_t>(std::count_if(outcome.docs.begin(), outcome.docs.end(), [](const ResultDoc &d) {
            return d.trial.status != TrialStatus::ok;
        }));
        cancelled = cancelled || outcome.cancelled;
        if (cancelled) {
            break;
        }
    }
    for (const auto &[study, st] : stores) {
        out << "store " << st->path() << "\n";
    }
    out << fmt::format("reproduce experiments={} trials={} failed={} cancelled={}\n", snaps.size(), trials, failed,
                       cancelled);
    return failed > 0 || cancelled ? 2 : 0;
}

struct BestModel {
    PreparedExperiment data;
    std::unique_ptr<Trainable> model;
    TrialResult result;
};

// Retrains every trial of the snapshot and keeps the best by objective.
BestModel train_best(const ExperimentSnapshot &s, const Args &a) {
    const auto registry = registry_for_task(s.task, data_dir_of(a));
    const ExperimentPlan plan = s.plan();
    if (plan.model.encoder_kind == EncoderKind::external) {
        throw Error(fmt::format("{}: external models cannot be evaluated in-process", plan.experiment_id()));
    }
    BestModel best{prepare_experiment(plan, registry), nullptr, {}};
    for (const auto &spec : s.trials) {
        TrialRun run = run_trial(plan, best.data, spec);
        if (run.result.status != TrialStatus::ok || !run.result.objective || !run.best_model) {
            continue;
        }
        if (!best.model || better(*run.result.objective, *best.result.objective, plan.hyperopt.direction)) {
            best.model = std::move(run.best_model);
            best.result = std::move(run.result);
        }
    }
    if (!best.model) {
        throw Error(fmt::format("{}: no trial succeeded", plan.experiment_id()));
    }
    return best;
}

std::vector<Example> test_examples(const PreparedExperiment &data) {
    std::map<std::string_view, const Example *> by_uid;
    for (const auto &ex : data.dataset.examples) {
        by_uid.emplace(ex.uid, &ex);
    }
    std::vector<Example> out;
    for (const auto &u : data.split.test) {
        out.push_back(*by_uid.at(u));
    }
    return out;
}

std::string report_dir(const Args &a, const std::string &study_id) {
    return (fs::path(a.out_dir) / "reports" / safe_file_stem(study_id)).string();
}

int cmd_attack(const Args &a, std::ostream &out, std::ostream &err) {
    const auto kind = attack_kind_from_string(a.attack);
    if (!kind) {
        throw Error(fmt::format("unknown attack '{}'; expected deepwordbug, pwws or input_reduction", a.attack));
    }
    Thesaurus th;
    if (*kind == AttackKind::pwws) {
        if (a.thesaurus.empty()) {
            throw Error("pwws needs --thesaurus");
        }
        th = Thesaurus::load(a.thesaurus);
    }
    const auto snaps = load_snapshots(a, err);
    std::map<std::string, std::vector<AttackReportRow>> rows_by_study;
    for (const auto &s : snaps) {
        const BestModel best = train_best(s, a);
        AttackSettings settings;
        settings.seed = a.seed.value_or(s.hyperopt.seed);
        settings.max_examples = a.max_examples;
        settings.reduction_theta = a.theta;
        if (a.budget > 0) {
            settings.deepwordbug_budget = a.budget;
            settings.pwws_budget = a.budget;
        }
        const auto outcomes =
            run_attack(*best.model, best.data.features.featurizer, test_examples(best.data), *kind, th, settings);
        err << fmt::format("{}__{}: attacked {} examples\n", s.model_id, s.dataset_id, outcomes.size());
        for (const auto &o : outcomes) {
            rows_by_study[s.study_id].push_back({s.model_id, s.dataset_id, o});
        }
    }
    for (const auto &[study, rows] : rows_by_study) {
        const auto dir = report_dir(a, study);
        fs::create_directories(dir);
        const auto path = (fs::path(dir) / fmt::format("attack_{}.csv", a.attack)).string();
        write_file_atomic(path, attack_report_csv(rows));
        out << "report " << path << "\n";
        for (const auto &r : aggregate_attack_rates(rows)) {
            for (const auto &[ds, rate] : r.per_dataset) {
                out << fmt::format("attack model={} attack={} dataset={} success_rate={:.4f}\n", r.model_id, r.attack,
                                   ds, rate);
            }
            out << fmt::format("attack model={} attack={} datasets={} mean_success_rate={:.4f}\n", r.model_id,
                               r.attack, r.per_dataset.size(), r.mean_rate);
        }
    }
    return 0;
}

int cmd_slice(const Args &a, std::ostream &out, std::ostream &err) {
    const auto slices = parse_slice_config(read_file(a.slices), a.slices);
    const auto snaps = load_snapshots(a, err);
    for (const auto &s : snaps) {
        const BestModel best = train_best(s, a);
        const auto rows = slice_report(*best.model, best.data.dataset, best.data.features, slices);
        const auto dir = report_dir(a, s.study_id);
        fs::create_directories(dir);
        const auto path =
            (fs::path(dir) / (safe_file_stem(fmt::format("{}__{}", s.model_id, s.dataset_id)) + ".slices.csv")).string();
        write_file_atomic(path, slice_report_csv(rows));
        out << "report " << path << "\n";
        for (const auto &r : rows) {
            out << fmt::format("slice model={} dataset={} slice={} n={} accuracy={} delta={}\n", s.model_id,
                               s.dataset_id, r.slice, r.n_examples,
                               r.accuracy ? fmt::format("{:.4f}", *r.accuracy) : "NA",
                               r.delta_vs_overall ? fmt::format("{:.4f}", *r.delta_vs_overall) : "NA");
        }
    }
    return 0;
}

std::vector<ResultDoc> docs_from_store(const std::string &path, std::ostream &err) {
    auto contents = read_store(path);
    for (const auto &w : contents.warnings) {
        err << "warning: " << w << "\n";
    }
    std::vector<ResultDoc> docs;
    for (const auto &d : resolve_amendments(std::move(contents.docs))) {
        docs.push_back(result_doc_from_json(d.doc));
    }
    return docs;
}

int cmd_analyze(const Args &a, std::ostream &out, std::ostream &err) {
    const auto direction = direction_from_string(a.direction);
    if (!direction) {
        throw Error(fmt::format("unknown direction '{}'", a.direction));
    }
    std::vector<ReportKind> kinds;
    if (a.format == "all") {
        kinds = {ReportKind::text, ReportKind::csv, ReportKind::svg_heatmap};
    } else if (const auto k = report_kind_from_string(a.format)) {
        kinds = {*k};
    } else {
        throw Error(fmt::format("unknown format '{}'; expected all, text, csv or svg", a.format));
    }
    ScoreTable table;
    std::string study_id;
    std::vector<ReportTable> extra;
    if (!a.scores.empty()) {
        table = parse_score_table_csv(read_file(a.scores), *direction, a.scores);
        study_id = fs::path(a.scores).stem().string();
    } else if (!a.store.empty()) {
        const auto docs = docs_from_store(a.store, err);
        if (docs.empty()) {
            throw Error(fmt::format("store '{}' holds no documents", a.store));
        }
        study_id = docs.front().study_id;
        const auto goal = direction_from_string(
            docs.front().experiment_config.value("/hyperopt/direction"_json_pointer, std::string("maximize")));
        const Direction goal_dir = goal.value_or(Direction::maximize);
        table = score_table_from_docs(docs, a.metric, goal_dir, *direction);
        ReportTable conv{"convergence", "best checkpoint epoch of the best trial", "model", {}, {"dataset", "trial", "best_epoch"}, {}, {}, 0.0, 1.0};
        for (const auto &c : convergence_table(docs, goal_dir)) {
            conv.row_labels.push_back(c.model_id);
            conv.cells.push_back({c.dataset_id, c.trial_index ? std::to_string(*c.trial_index) : "NA",
                                  c.best_epoch ? std::to_string(*c.best_epoch) : "NA"});
        }
        extra.push_back(std::move(conv));
    } else {
        throw Error("analyze needs --scores or --store");
    }
    const ScoreAnalysis analysis = analyze_scores(table);
    auto tables = score_report_tables(analysis, a.report);
    if (a.report == "all") {
        tables.insert(tables.end(), extra.begin(), extra.end());
    }
    const auto dir = report_dir(a, study_id);
    std::size_t files = 0;
    for (const auto k : kinds) {
        files += render_report(tables, k, dir).size();
    }
    for (const auto &t : tables) {
        out << render_text(t) << "\n";
    }
    for (std::size_t m = 0; m < table.models.size(); ++m) {
        out << fmt::format("analyze model={} mrr={:.4f} mrr_dense={:.4f} top={} top_dense={}\n", table.models[m],
                           analysis.mrr_competition[m], analysis.mrr_dense[m], analysis.top_competition[m],
                           analysis.top_dense[m]);
    }
    for (const auto d : analysis.gaps.order_desc()) {
        out << fmt::format("analyze dataset={} gap={:.3f}\n", table.datasets[d], analysis.gaps.gap[d]);
    }
    out << fmt::format("analyze reports={} files={}\n", dir, files);
    return 0;
}

QueryFilter filter_of(const Args &a) {
    QueryFilter f;
    for (const auto &expr : a.filters) {
        f.push_back(parse_filter_clause(expr));
    }
    return f;
}

int cmd_query(const Args &a, std::ostream &out, std::ostream &err) {
    const auto contents = query_store(a.store, filter_of(a));
    for (const auto &w : contents.warnings) {
        err << "warning: " << w << "\n";
    }
    for (const auto &d : contents.docs) {
        out << stored_doc_to_json(d).dump() << "\n";
    }
    out << fmt::format("query matched={} corrupt={}\n", contents.docs.size(), contents.corrupt_lines);
    return 0;
}

int cmd_publish(const Args &a, std::ostream &out, std::ostream &err) {
    const PublishTarget target = parse_publish_config(read_file(a.publish_config), a.publish_config);
    const auto contents = query_store(a.store, filter_of(a));
    for (const auto &w : contents.warnings) {
        err << "warning: " << w << "\n";
    }
    std::vector<json> docs;
    for (const auto &d : contents.docs) {
        docs.push_back(d.doc);
    }
    return report_publish(publish(docs, target), out, err);
}

int cmd_datasets(const Args &a, std::ostream &out) {
    DatasetRegistry registry(data_dir_of(a));
    if (!a.task.empty()) {
        registry = registry_for_task(parse_task_config(read_file(a.task), a.task), data_dir_of(a));
    }
    const auto bundled = registry.bundled_ids();
    const auto registered = registry.registered_ids();
    for (const auto &id : bundled) {
        out << "bundled " << id << "\n";
    }
    for (const auto &id : registered) {
        out << "registered " << id << "\n";
    }
    out << fmt::format("datasets bundled={} registered={}\n", bundled.size(), registered.size());
    return 0;
}

}  // namespace

std::string cli_full_help() {
    Parser p;
    std::string out = p.app.help();
    for (auto *sub : p.app.get_subcommands({})) {
        out += "\n";
        out += sub->help();
    }
    return out;
}

int run_cli(const std::vector<std::string> &args, std::ostream &out, std::ostream &err,
            const std::atomic<bool> *cancel) {
    if (!args.empty() && (args.front() == "--help" || args.front() == "-h")) {
        out << cli_full_help();
        return 0;
    }
    Parser p;
    if (!args.empty() && !args.front().starts_with("-")) {
        const auto subs = p.app.get_subcommands({});
        const bool known = std::any_of(subs.begin(), subs.end(), [&](const CLI::App *s) { return s->get_name() == args.front(); });
        if (!known) {
            err << fmt::format("error: unknown subcommand '{}'\n\n", args.front()) << p.app.help();
            return 1;
        }
    }
    try {
        std::vector<std::string> reversed(args.rbegin(), args.rend());
        p.app.parse(reversed);
    } catch (const CLI::CallForHelp &) {
        const CLI::App *sub = p.app.get_subcommands().empty() ? &p.app : p.app.get_subcommands().front();
        out << sub->help();
        return 0;
    } catch (const CLI::CallForVersion &) {
        out << kToolkitVersion << "\n";
        return 0;
    } catch (const CLI::ParseError &e) {
        err << "error: " << e.what() << "\n\n" << p.app.help();
        return 1;
    }
    const Args &a = p.a;
    try {
        if (p.validate->parsed()) return cmd_validate(a, out);
        if (p.run->parsed()) return cmd_run(a, out, err, cancel);
        if (p.reproduce->parsed()) return cmd_reproduce(a, out, err, cancel);
        if (p.attack->parsed()) return cmd_attack(a, out, err);
        if (p.slice->parsed()) return cmd_slice(a, out, err);
        if (p.analyze->parsed()) return cmd_analyze(a, out, err);
        if (p.publish->parsed()) return cmd_publish(a, out, err);
        if (p.query->parsed()) return cmd_query(a, out, err);
        if (p.datasets->parsed()) return cmd_datasets(a, out);
    } catch (const std::exception &e) {
        err << "error: " << e.what() << "\n";
        return 1;
    }
    err << p.app.help();
    return 1;
}

}  // namespace benchkit
