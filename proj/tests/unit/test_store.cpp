#include <gtest/gtest.h>

#include <filesystem>
#include <fstream>

#include "benchkit/store.hpp"
#include "stub_server.hpp"
#include "support.hpp"

using namespace benchkit;
namespace fs = std::filesystem;

namespace {

std::string fixture(const std::string &name) { return read_file(std::string(BENCHKIT_FIXTURES) + "/" + name); }

fs::path fresh_dir(const std::string &name) {
    const auto d = fs::temp_directory_path() / ("benchkit_store_" + name);
    fs::remove_all(d);
    fs::create_directories(d);
    return d;
}

json small_doc(int i) {
    return json{{"study_id", "s"},
                {"model_id", "m"},
                {"dataset_id", "d"},
                {"trial_index", i},
                {"objective", 0.25 * i},
                {"params", {{"lr", 0.1 / (i + 1)}, {"tags", json::array({"cpu", "gpu"})}}},
                {"failure_reason", "café \"quoted\"\n"}};
}

StudyOutcome tiny_study() {
    const auto task = parse_task_config(
        "task_kind: text_classification\noutput_feature: label\nstudy_id: store-test\ndatasets: [toy_polarity]\n"
        "training: {epochs: 2, batch_size: 16, learning_rate: 0.01}\n",
        "task.yaml");
    const std::vector<ModelSpec> models{parse_model_config(
        "model_id: softmax\nencoder_kind: softmax_regression\nsearch_space:\n"
        "  - {name: learning_rate, kind: log_uniform, low: 0.001, high: 0.1}\n",
        "m.yaml")};
    const auto hopt = parse_hyperopt_config("num_samples: 3\nseed: 9\n", "h.yaml");
    const auto plan = validate_study(task, models, hopt, registry_for_task(task));
    return run_study(plan, registry_for_task(task));
}

EnvLookup env_with(std::string value) {
    return [value](const std::string &name) -> std::optional<std::string> {
        if (name == "TOKEN") return value;
        return std::nullopt;
    };
}

}  // namespace

TEST(Store, AppendQueryRoundTripIsByteExact) {
    const auto dir = fresh_dir("roundtrip");
    ResultStore store(ResultStore::path_for(dir.string(), "s"));
    EXPECT_EQ(store.path(), (dir / "results" / "s.ndjson").string());
    std::vector<json> docs;
    for (int i = 0; i < 5; ++i) {
        docs.push_back(small_doc(i));
        store.append_json(docs.back());
    }
    const auto got = query_store(store.path(), {});
    ASSERT_EQ(got.docs.size(), 5u);
    EXPECT_EQ(got.corrupt_lines, 0u);
    for (std::size_t i = 0; i < docs.size(); ++i) {
        EXPECT_EQ(got.docs[i].doc.dump(), docs[i].dump());
        if (i > 0) {
            EXPECT_GT(got.docs[i].seq, got.docs[i - 1].seq);
        }
    }
    // each line is exactly the serialized entry
    std::ifstream in(store.path());
    std::string line;
    std::size_t n = 0;
    while (std::getline(in, line)) {
        EXPECT_EQ(json::parse(line).dump(), stored_doc_to_json(got.docs[n]).dump());
        ++n;
    }
    EXPECT_EQ(n, 5u);
}

TEST(Store, RecoversFromTruncatedFinalLine) {
    const auto dir = fresh_dir("truncated");
    const auto path = ResultStore::path_for(dir.string(), "s");
    {
        ResultStore store(path);
        for (int i = 0; i < 3; ++i) store.append_json(small_doc(i));
    }
    const auto full = read_file(path);
    write_file_atomic(path, full.substr(0, full.size() - 20));  // cut mid-line, no trailing newline

    const auto r = read_store(path);
    EXPECT_EQ(r.docs.size(), 2u);
    EXPECT_EQ(r.corrupt_lines, 1u);
    EXPECT_FALSE(r.warnings.empty());

    ResultStore reopened(path);
    EXPECT_EQ(reopened.next_seq(), r.docs.back().seq + 1);
    reopened.append_json(small_doc(7));
    const auto after = read_store(path);
    ASSERT_EQ(after.docs.size(), 3u);
    EXPECT_EQ(after.corrupt_lines, 1u);
    EXPECT_EQ(after.docs.back().doc.dump(), small_doc(7).dump());
}

TEST(Store, AmendmentsMergeIntoTheirTarget) {
    const auto dir = fresh_dir("amend");
    ResultStore store(ResultStore::path_for(dir.string(), "s"));
    const auto a = store.append_json(small_doc(1));
    store.append_json(small_doc(2));
    store.amend(a, json{{"test_metrics", {{"extra_metric", 0.75}}}, {"objective", nullptr}});
    const auto got = query_store(store.path(), {});
    ASSERT_EQ(got.docs.size(), 2u);
    EXPECT_EQ(got.docs[0].doc["test_metrics"]["extra_metric"], 0.75);
    EXPECT_FALSE(got.docs[0].doc.contains("objective"));
    EXPECT_EQ(got.docs[1].doc.dump(), small_doc(2).dump());
    EXPECT_EQ(read_store(store.path()).docs.size(), 3u);  // the raw file keeps the amendment entry
}

TEST(Store, Filters) {
    const auto c = parse_filter_clause("objective>0.3");
    EXPECT_EQ(c.path, "objective");
    EXPECT_EQ(c.op, FilterOp::gt);
    EXPECT_EQ(c.value, 0.3);
    EXPECT_EQ(parse_filter_clause("model_id=softmax").value, "softmax");
    EXPECT_EQ(parse_filter_clause("failure_reason~caf").op, FilterOp::contains);
    EXPECT_THROW(validate_filter({parse_filter_clause("nonsense.path=1")}), Error);

    const json doc = small_doc(2);
    EXPECT_TRUE(matches_filter(doc, {parse_filter_clause("objective>0.3")}));
    EXPECT_FALSE(matches_filter(doc, {parse_filter_clause("objective<0.3")}));
    EXPECT_TRUE(matches_filter(doc, {parse_filter_clause("trial_index=2.0")}));
    EXPECT_TRUE(matches_filter(doc, {parse_filter_clause("params.tags~gpu")}));
    EXPECT_TRUE(matches_filter(doc, {parse_filter_clause("params.tags.1=gpu")}));
    EXPECT_TRUE(matches_filter(doc, {parse_filter_clause("failure_reason~quoted")}));
    EXPECT_FALSE(matches_filter(doc, {parse_filter_clause("params.missing=1")}));

    const auto dir = fresh_dir("filters");
    ResultStore store(ResultStore::path_for(dir.string(), "s"));
    for (int i = 0; i < 6; ++i) store.append_json(small_doc(i));
    const auto got =
        query_store(store.path(), {parse_filter_clause("objective>0.5"), parse_filter_clause("objective<1.25")});
    ASSERT_EQ(got.docs.size(), 2u);
    EXPECT_EQ(got.docs[0].doc["trial_index"], 3);
}

TEST(Publish, BodyMatchesGoldenFile) {
    const auto doc = json::parse(fixture("publish_doc.json"));
    EXPECT_EQ(publish_body(doc), fixture("publish_body.golden"));
}

TEST(Publish, RetriesServerErrorsThenSucceeds) {
    fixtures::StubServer server({500, 500, 201});
    PublishTarget t{server.base_url(), "bench", "TOKEN", 5.0, 3};
    std::vector<double> sleeps;
    const auto doc = json::parse(fixture("publish_doc.json"));
    const auto out = publish({doc}, t, [&](double s) { sleeps.push_back(s); }, env_with("sekrit"));
    ASSERT_EQ(out.size(), 1u);
    EXPECT_TRUE(out[0].ok);
    EXPECT_EQ(out[0].attempts, 3);
    EXPECT_EQ(out[0].http_status, 201);
    EXPECT_EQ(sleeps, (std::vector<double>{0.5, 1.0}));
    const auto reqs = server.requests();
    ASSERT_EQ(reqs.size(), 3u);
    for (const auto &r : reqs) {
        EXPECT_EQ(r.path, "/bench/_doc");
        EXPECT_EQ(r.authorization, "Bearer sekrit");
        EXPECT_EQ(r.content_type, "application/json");
        EXPECT_EQ(r.body, fixture("publish_body.golden"));
    }
}

TEST(Publish, GivesUpAfterRetryCountAndSkipsClientErrors) {
    fixtures::StubServer always_500({500});
    PublishTarget t{always_500.base_url(), "bench", "TOKEN", 5.0, 1};
    const auto out = publish({small_doc(0)}, t, [](double) {}, env_with("x"));
    EXPECT_FALSE(out[0].ok);
    EXPECT_EQ(out[0].attempts, 2);
    EXPECT_EQ(out[0].http_status, 500);

    fixtures::StubServer bad_request({400});
    t.base_url = bad_request.base_url();
    t.retry_count = 3;
    const auto out2 = publish({small_doc(0), small_doc(1)}, t, [](double) {}, env_with("x"));
    ASSERT_EQ(out2.size(), 2u);
    EXPECT_EQ(out2[0].attempts, 1);
    EXPECT_EQ(bad_request.requests().size(), 2u);
}

TEST(Publish, MissingTokenSendsNothing) {
    fixtures::StubServer server({201});
    PublishTarget t{server.base_url(), "bench", "TOKEN", 5.0, 3};
    EXPECT_THROW(publish({small_doc(0)}, t, [](double) {}, [](const std::string &) { return std::nullopt; }), Error);
    EXPECT_THROW(publish({small_doc(0)}, t, [](double) {}, env_with("")), Error);
    EXPECT_TRUE(server.requests().empty());
}

TEST(Publish, UnreachableHostIsAFailureNotAnException) {
    PublishTarget t{"http://127.0.0.1:9", "bench", std::nullopt, 0.5, 1};
    std::vector<double> sleeps;
    const auto out = publish({small_doc(0)}, t, [&](double s) { sleeps.push_back(s); });
    EXPECT_FALSE(out[0].ok);
    EXPECT_EQ(out[0].http_status, 0);
    EXPECT_EQ(out[0].attempts, 2);
    EXPECT_FALSE(out[0].error.empty());
    EXPECT_EQ(retry_delay_s(2), 2.0);
}

TEST(Export, SnapshotFromStoreMatchesTheRun) {
    const auto outcome = tiny_study();
    ASSERT_EQ(outcome.snapshots.size(), 1u);
    const auto dir = fresh_dir("export");
    ResultStore store(ResultStore::path_for(dir.string(), "store-test"));
    for (const auto &d : outcome.docs) store.append(d);
    const auto docs = store.read().docs;

    const auto listed = stored_experiments(docs);
    ASSERT_EQ(listed.size(), 1u);
    const auto snap = export_snapshot(docs, listed[0]);
    EXPECT_EQ(snap, outcome.snapshots[0]);

    const auto again = reproduce({snap}, registry_for_task(snap.task));
    ASSERT_EQ(again.docs.size(), outcome.docs.size());
    for (std::size_t i = 0; i < again.docs.size(); ++i) {
        EXPECT_EQ(reproducible_view(result_doc_to_json(again.docs[i])),
                  reproducible_view(result_doc_to_json(outcome.docs[i])));
    }
}

TEST(Export, ErrorsNameTheProblem) {
    const auto outcome = tiny_study();
    std::vector<StoredDoc> docs;
    for (std::size_t i = 0; i < outcome.docs.size(); ++i) {
        if (i == 1) continue;
        docs.push_back({i, "t", std::nullopt, result_doc_to_json(outcome.docs[i])});
    }
    try {
        export_snapshot(docs, {std::nullopt, "softmax", "toy_polarity"});
        FAIL() << "no error";
    } catch (const Error &e) {
        EXPECT_NE(std::string(e.what()).find("missing trial"), std::string::npos) << e.what();
    }
    EXPECT_THROW(export_snapshot(docs, {std::nullopt, "nope", "toy_polarity"}), Error);
}
