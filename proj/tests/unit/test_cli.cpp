#include <gtest/gtest.h>

#include <filesystem>
#include <sstream>

#include "benchkit/cli.hpp"
#include "benchkit/store.hpp"
#include "support.hpp"

using namespace benchkit;
namespace fs = std::filesystem;

namespace {

struct CliRun {
    int code = 0;
    std::string out;
    std::string err;
};

CliRun cli(const std::vector<std::string> &args) {
    std::ostringstream out;
    std::ostringstream err;
    const int code = run_cli(args, out, err);
    return {code, out.str(), err.str()};
}

std::string source(const std::string &rel) { return std::string(BENCHKIT_SOURCE_DIR) + "/" + rel; }
std::string fixture(const std::string &name) { return std::string(BENCHKIT_FIXTURES) + "/" + name; }

fs::path fresh_dir(const std::string &name) {
    const auto d = fs::temp_directory_path() / ("benchkit_cli_" + name);
    fs::remove_all(d);
    fs::create_directories(d);
    return d;
}

}  // namespace

TEST(Cli, HelpMatchesGolden) {
    EXPECT_EQ(cli_full_help(), read_file(fixture("help.golden")));
    const auto r = cli({"--help"});
    EXPECT_EQ(r.code, 0);
}

TEST(Cli, UsageErrorsExitOne) {
    EXPECT_EQ(cli({"nosuch"}).code, 1);
    EXPECT_EQ(cli({}).code, 1);
    EXPECT_EQ(cli({"validate", "--task", "x.yaml"}).code, 1);
    EXPECT_EQ(cli({"analyze"}).code, 1);
}

TEST(Cli, ValidateReportsFileAndLine) {
    const auto dir = fresh_dir("validate");
    const auto bad = (dir / "bad.yaml").string();
    write_file_atomic(bad,
                      "task_kind: text_classification\noutput_feature: label\ndatasets: [toy_polarity]\n"
                      "training:\n  epochs: lots\n");
    const auto r = cli({"validate", "--task", bad, "--models", source("configs/softmax.yaml"), "--hyperopt",
                        source("configs/hyperopt.yaml")});
    EXPECT_EQ(r.code, 1);
    EXPECT_NE(r.err.find(bad + ":5:"), std::string::npos) << r.err;

    const auto ok = cli({"validate", "--task", source("configs/task.yaml"), "--models", source("configs/softmax.yaml"),
                         source("configs/naive_bayes.yaml"), "--hyperopt", source("configs/hyperopt.yaml")});
    EXPECT_EQ(ok.code, 0) << ok.err;
}

TEST(Cli, AnalyzeScoresFixture) {
    const auto dir = fresh_dir("analyze");
    const auto r = cli({"analyze", "--scores", fixture("text_classification_accuracy.csv"), "--out-dir",
                        dir.string(), "--format", "csv"});
    ASSERT_EQ(r.code, 0) << r.err;
    EXPECT_NE(r.out.find("analyze model=BERT-base mrr=0.7222"), std::string::npos) << r.out;
    EXPECT_NE(r.out.find("analyze model=RoBERTa-base mrr=0.6944"), std::string::npos);
    EXPECT_NE(r.out.find("analyze dataset=GE gap=0.101"), std::string::npos);
    EXPECT_TRUE(fs::exists(dir / "reports" / "text_classification_accuracy" / "mrr.csv"));
    EXPECT_EQ(cli({"analyze", "--scores", fixture("text_classification_accuracy.csv"), "--format", "pdf", "--out-dir",
                   dir.string()})
                  .code,
              1);
}

TEST(Cli, RunQueryReproduce) {
    const auto dir = fresh_dir("run");
    const auto task = (dir / "t.yaml").string();
    const auto hopt = (dir / "h.yaml").string();
    write_file_atomic(task,
                      "task_kind: text_classification\noutput_feature: label\nstudy_id: cli-t\n"
                      "datasets: [toy_polarity]\ntraining: {epochs: 2}\n");
    write_file_atomic(hopt, "num_samples: 2\nseed: 3\n");
    const auto out = (dir / "o").string();
    const auto r = cli({"run", "--task", task, "--models", source("configs/naive_bayes.yaml"), "--hyperopt", hopt,
                        "--out-dir", out});
    ASSERT_EQ(r.code, 0) << r.err;
    EXPECT_NE(r.out.find("run study_id=cli-t trials=2 failed=0"), std::string::npos) << r.out;

    const auto store = ResultStore::path_for(out, "cli-t");
    const auto q = cli({"query", "--store", store, "--filter", "trial_index=1"});
    ASSERT_EQ(q.code, 0) << q.err;
    EXPECT_EQ(std::count(q.out.begin(), q.out.end(), '\n'), 2);  // one document, then the summary
    EXPECT_NE(q.out.find("query matched=1 corrupt=0"), std::string::npos);
    EXPECT_EQ(cli({"query", "--store", store, "--filter", "bogus.path=1"}).code, 1);

    const auto snap = (fs::path(out) / "results" / "cli-t" / "naive_bayes__toy_polarity.snapshot.yaml").string();
    ASSERT_TRUE(fs::exists(snap));
    const auto again = cli({"reproduce", snap, "--out-dir", (dir / "o2").string()});
    EXPECT_EQ(again.code, 0) << again.err;
}
