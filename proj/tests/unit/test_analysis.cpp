#include <gtest/gtest.h>

#include <filesystem>
#include <random>
#include <set>

#include "benchkit/analysis.hpp"
#include "support.hpp"

using namespace benchkit;

namespace {

ScoreTable accuracy_table() {
    return parse_score_table_csv(read_file(std::string(BENCHKIT_FIXTURES) + "/text_classification_accuracy.csv"));
}

// Ranks by counting: competition = 1 + strictly better cells, dense = 1 + distinct better values.
int oracle_rank(const ScoreTable &t, std::size_t m, std::size_t d, RankingPolicy policy) {
    const double v = t.values[m][d];
    auto better = [&](double o) { return t.direction == Direction::maximize ? o > v : o < v; };
    if (policy == RankingPolicy::competition) {
        int n = 0;
        for (const auto &row : t.values) n += better(row[d]) ? 1 : 0;
        return 1 + n;
    }
    std::set<double> distinct;
    for (const auto &row : t.values) {
        if (better(row[d])) distinct.insert(row[d]);
    }
    return 1 + static_cast<int>(distinct.size());
}

ScoreTable random_table(std::mt19937_64 &rng, Direction dir) {
    std::uniform_int_distribution<int> level(1, 4);  // few levels so ties are common
    ScoreTable t;
    t.direction = dir;
    for (int m = 0; m < 5; ++m) t.models.push_back("m" + std::to_string(m));
    for (int d = 0; d < 5; ++d) t.datasets.push_back("d" + std::to_string(d));
    t.values.assign(5, std::vector<double>(5));
    for (auto &row : t.values) {
        for (auto &v : row) v = 0.1 * level(rng);
    }
    return t;
}

ResultDoc doc(const std::string &model, const std::string &dataset, std::size_t idx, std::optional<double> objective,
              double acc, std::size_t best_epoch, TrialStatus status = TrialStatus::ok) {
    ResultDoc d;
    d.study_id = "s";
    d.model_id = model;
    d.dataset_id = dataset;
    d.trial.trial_index = idx;
    d.trial.objective = objective;
    d.trial.best_epoch = best_epoch;
    d.trial.status = status;
    d.trial.test_metrics = {{"accuracy", acc}};
    return d;
}

}  // namespace

TEST(ScoreTable, FixtureShapeAndValidation) {
    const auto t = accuracy_table();
    EXPECT_EQ(t.models.size(), 7u);
    EXPECT_EQ(t.datasets.size(), 9u);
    EXPECT_DOUBLE_EQ(t.values[t.model_index("BERT-base")][t.dataset_index("IR")], 0.801);
    EXPECT_THROW(parse_score_table_csv("model,a,b\nx,0.1,\n"), Error);
    EXPECT_THROW(parse_score_table_csv("model,a,b\nx,0.1\n"), Error);
    EXPECT_THROW(parse_score_table_csv("model,a,a\nx,0.1,0.2\n"), Error);
    EXPECT_THROW(parse_score_table_csv("model,a\nx,0.1\nx,0.2\n"), Error);
    EXPECT_THROW(parse_score_table_csv("model,a\nx,nan\n"), Error);
    EXPECT_THROW(parse_score_table_csv("model,a\nx,abc\n"), Error);
}

TEST(ScoreAnalysis, MeanReciprocalRankOnAccuracyTable) {
    const auto t = accuracy_table();
    for (const auto policy : {RankingPolicy::competition, RankingPolicy::dense}) {
        const auto r = rank_matrix(t, policy);
        const auto m = mrr(r);
        EXPECT_NEAR(m[t.model_index("BERT-base")], 6.5 / 9.0, 1e-12);
        EXPECT_NEAR(m[t.model_index("RoBERTa-base")], 6.25 / 9.0, 1e-12);
        const auto best = std::max_element(m.begin(), m.end()) - m.begin();
        EXPECT_EQ(t.models[static_cast<std::size_t>(best)], "BERT-base");

        const auto top = top_rank_counts(r);
        EXPECT_EQ(top[t.model_index("BERT-base")], 5u);
        EXPECT_EQ(top[t.model_index("RoBERTa-base")], 4u);
        EXPECT_EQ(top[t.model_index("DistilBERT-base")], 1u);
        EXPECT_EQ(top[t.model_index("RNN")], 0u);
    }
}

TEST(ScoreAnalysis, GapsOnAccuracyTable) {
    const auto t = accuracy_table();
    const auto g = gaps(t);
    const auto order = g.order_desc();
    ASSERT_EQ(order.size(), 9u);
    EXPECT_EQ(t.datasets[order[0]], "GE");
    EXPECT_NEAR(g.gap[order[0]], 0.101, 1e-9);
    EXPECT_EQ(t.datasets[order[1]], "SST5");
    EXPECT_NEAR(g.gap[order[1]], 0.083, 1e-9);
    EXPECT_EQ(t.datasets[order[8]], "DBP");
    EXPECT_NEAR(g.gap[order[8]], 0.006, 1e-9);
    EXPECT_EQ(t.datasets[order[7]], "MGB");
    EXPECT_NEAR(g.gap[order[7]], 0.019, 1e-9);
    const auto sbf = t.dataset_index("SBF");
    EXPECT_EQ(g.best[sbf], (std::vector<std::string>{"BERT-base", "RoBERTa-base"}));
    EXPECT_EQ(g.worst[t.dataset_index("GE")], (std::vector<std::string>{"Stacked Parallel CNN"}));
}

TEST(Ranks, MatchCountingOracleOnRandomTables) {
    std::mt19937_64 rng(2024);
    for (int trial = 0; trial < 200; ++trial) {
        const auto dir = trial % 2 == 0 ? Direction::maximize : Direction::minimize;
        const auto t = random_table(rng, dir);
        for (const auto policy : {RankingPolicy::competition, RankingPolicy::dense}) {
            const auto r = rank_matrix(t, policy);
            std::vector<double> want(5, 0.0);
            for (std::size_t m = 0; m < 5; ++m) {
                for (std::size_t d = 0; d < 5; ++d) {
                    const int k = oracle_rank(t, m, d, policy);
                    ASSERT_EQ(r.ranks[m][d], k);
                    want[m] += 1.0 / k / 5.0;
                }
            }
            const auto got = mrr(r);
            for (std::size_t m = 0; m < 5; ++m) EXPECT_NEAR(got[m], want[m], 1e-12);
            // dense ranks never exceed competition ranks
            if (policy == RankingPolicy::dense) {
                const auto c = rank_matrix(t, RankingPolicy::competition);
                for (std::size_t m = 0; m < 5; ++m) {
                    for (std::size_t d = 0; d < 5; ++d) EXPECT_LE(r.ranks[m][d], c.ranks[m][d]);
                }
            }
        }
    }
}

TEST(Ranks, ZScoreColumnsAreStandardised) {
    std::mt19937_64 rng(5);
    for (int trial = 0; trial < 50; ++trial) {
        const auto t = random_table(rng, Direction::maximize);
        const auto z = zscores(t);
        for (std::size_t d = 0; d < 5; ++d) {
            double mean = 0.0;
            double sq = 0.0;
            bool constant = true;
            for (std::size_t m = 0; m < 5; ++m) {
                mean += z[m][d] / 5.0;
                sq += z[m][d] * z[m][d] / 5.0;
                constant = constant && t.values[m][d] == t.values[0][d];
            }
            EXPECT_NEAR(mean, 0.0, 1e-12);
            EXPECT_NEAR(sq, constant ? 0.0 : 1.0, 1e-12);
        }
    }
    ScoreTable one;
    one.models = {"a"};
    one.datasets = {"d"};
    one.values = {{0.5}};
    EXPECT_THROW(zscores(one), Error);
}

TEST(Pareto, DominanceUnderMixedDirections) {
    std::vector<ParetoPoint> pts{{"c", {0.9, 10.0}}, {"a", {0.8, 5.0}}, {"b", {0.7, 6.0}}, {"d", {0.9, 12.0}}};
    const auto out = pareto_front(pts, {Direction::maximize, Direction::minimize});
    ASSERT_EQ(out.size(), 4u);
    EXPECT_EQ(out[0].model, "a");
    EXPECT_FALSE(out[0].dominated);
    EXPECT_TRUE(out[1].dominated);   // b: worse than a on both
    EXPECT_FALSE(out[2].dominated);  // c
    EXPECT_TRUE(out[3].dominated);   // d: ties c on accuracy, slower
    EXPECT_THROW(pareto_front({{"x", {1.0}}}, {Direction::maximize, Direction::minimize}), Error);
}

TEST(Correlate, PearsonSpearmanAndTies) {
    const std::vector<double> x{1, 2, 3, 4, 5};
    const std::vector<double> y{2, 4, 6, 8, 11};
    const auto c = correlate(x, y);
    ASSERT_TRUE(c.spearman && c.pearson);
    EXPECT_NEAR(*c.spearman, 1.0, 1e-12);
    EXPECT_GT(*c.pearson, 0.99);
    EXPECT_LT(*c.pearson, 1.0);

    EXPECT_EQ(average_ranks(std::vector<double>{3, 1, 3, 2}), (std::vector<double>{3.5, 1, 3.5, 2}));
    const std::vector<double> rev{5, 4, 3, 2, 1};
    EXPECT_NEAR(*correlate(x, rev).spearman, -1.0, 1e-12);

    const auto flat = correlate(x, std::vector<double>{1, 1, 1, 1, 1});
    EXPECT_FALSE(flat.spearman);
    EXPECT_FALSE(flat.reason.empty());
    EXPECT_THROW(correlate(std::vector<double>{1, 2}, std::vector<double>{1, 2}), Error);
    EXPECT_THROW(correlate(x, std::vector<double>{1, 2}), Error);
}

TEST(Convergence, BestTrialPerCell) {
    const std::vector<ResultDoc> docs{doc("m", "a", 0, 0.5, 0.6, 2), doc("m", "a", 1, 0.7, 0.8, 4),
                                      doc("m", "a", 2, 0.7, 0.9, 1), doc("m", "b", 0, std::nullopt, 0.0, 0, TrialStatus::failed),
                                      doc("k", "a", 0, 0.2, 0.3, 3)};
    const auto cells = convergence_table(docs, Direction::maximize);
    ASSERT_EQ(cells.size(), 3u);
    EXPECT_EQ(cells[0].model_id, "k");
    EXPECT_EQ(cells[1].trial_index, 1u);  // tie on objective goes to the lower index
    EXPECT_EQ(cells[1].best_epoch, 4u);
    EXPECT_EQ(cells[2].dataset_id, "b");
    EXPECT_FALSE(cells[2].trial_index);

    const auto low = convergence_table(docs, Direction::minimize);
    EXPECT_EQ(low[1].trial_index, 0u);

    std::vector<ResultDoc> ok(docs.begin(), docs.begin() + 3);
    ok.push_back(docs[4]);
    ok.push_back(doc("k", "b", 0, 0.1, 0.4, 0));
    ok.push_back(doc("m", "b", 0, 0.1, 0.5, 0));
    const auto t = score_table_from_docs(ok, "accuracy", Direction::maximize);
    EXPECT_EQ(t.models, (std::vector<std::string>{"k", "m"}));
    EXPECT_DOUBLE_EQ(t.values[1][0], 0.8);
    EXPECT_THROW(score_table_from_docs(docs, "accuracy", Direction::maximize), Error);
}

TEST(Render, DeterministicOutputs) {
    const auto a = analyze_scores(accuracy_table());
    const auto tables = score_report_tables(a);
    ASSERT_EQ(tables.size(), 5u);
    EXPECT_EQ(score_report_tables(a, "mrr").size(), 1u);
    EXPECT_THROW(score_report_tables(a, "nope"), Error);
    for (const auto &t : tables) {
        EXPECT_EQ(render_svg_heatmap(t), render_svg_heatmap(t));
        EXPECT_EQ(parse_csv(render_csv(t)).size(), t.row_labels.size() + 1);
        EXPECT_NE(render_text(t).find(t.row_labels.front()), std::string::npos);
    }
    EXPECT_EQ(heat_color(0.0), "#ffffff");
    EXPECT_EQ(heat_color(1.0), "#08306b");
    EXPECT_EQ(report_kind_from_string("svg_heatmap"), ReportKind::svg_heatmap);
    EXPECT_FALSE(report_kind_from_string("pdf"));

    const auto dir = std::filesystem::temp_directory_path() / "benchkit_render_test";
    std::filesystem::remove_all(dir);
    const auto paths = render_report(tables, ReportKind::svg_heatmap, dir.string());
    ASSERT_EQ(paths.size(), 5u);
    EXPECT_EQ(read_file(paths[0]), render_svg_heatmap(tables[0]));
    EXPECT_THROW(render_report({}, ReportKind::text, dir.string()), Error);
    std::filesystem::remove_all(dir);
}
