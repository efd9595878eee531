#pragma once

#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "benchkit/executor.hpp"
#include "benchkit/hyperopt.hpp"

namespace benchkit {

/// Models by datasets, every cell finite.
struct ScoreTable {
    std::vector<std::string> models;
    std::vector<std::string> datasets;
    std::vector<std::vector<double>> values;  // [model][dataset]
    Direction direction = Direction::maximize;

    /// Throws Error on holes, ragged rows, duplicate ids or non-finite cells.
    void validate() const;
    [[nodiscard]] std::size_t model_index(std::string_view id) const;
    [[nodiscard]] std::size_t dataset_index(std::string_view id) const;
};

/// Header `model,<dataset1>,...`; an empty cell is rejected, never imputed.
ScoreTable parse_score_table_csv(std::string_view text, Direction direction = Direction::maximize,
                                 const std::string &file = "<scores>");

enum class RankingPolicy { competition, dense };

struct RankMatrix {
    std::vector<std::string> models;
    std::vector<std::string> datasets;
    std::vector<std::vector<int>> ranks;  // [model][dataset], >= 1
};

RankMatrix rank_matrix(const ScoreTable &t, RankingPolicy policy = RankingPolicy::competition);
/// Mean over datasets of 1/rank, per model.
std::vector<double> mrr(const RankMatrix &r);
/// Datasets on which each model holds rank 1 (ties count for all).
std::vector<std::size_t> top_rank_counts(const RankMatrix &r);

/// Per column, population standard deviation; a constant column gives zeros. Needs >= 2 models.
std::vector<std::vector<double>> zscores(const ScoreTable &t);

struct GapReport {
    std::vector<double> gap;                       // per dataset, best - worst (absolute)
    std::vector<std::vector<std::string>> best;    // per dataset, models at the best score
    std::vector<std::vector<std::string>> worst;
    /// Dataset indices by gap descending, ties by column order.
    [[nodiscard]] std::vector<std::size_t> order_desc() const;
};

GapReport gaps(const ScoreTable &t);

struct ParetoPoint {
    std::string model;
    std::vector<double> coords;
    bool dominated = false;
};

/// Marks dominated points under per-coordinate directions; sorted by model id.
std::vector<ParetoPoint> pareto_front(std::vector<ParetoPoint> points, const std::vector<Direction> &directions);

struct Correlation {
    std::optional<double> pearson;
    std::optional<double> spearman;
    std::string reason;  // why the values are absent
};

/// Needs equal lengths >= 3. Spearman uses average ranks for ties.
Correlation correlate(std::span<const double> xs, std::span<const double> ys);
/// 1-based ranks, tied values share their mean rank.
std::vector<double> average_ranks(std::span<const double> xs);

struct ConvergenceCell {
    std::string model_id;
    std::string dataset_id;
    std::optional<std::size_t> trial_index;
    std::optional<std::size_t> best_epoch;  // absent when no trial succeeded
};

/// Best ok trial per (model, dataset) by objective (ties: lowest trial index). Sorted by model, dataset.
std::vector<ConvergenceCell> convergence_table(const std::vector<ResultDoc> &docs, Direction direction);

/// Test metric of each cell's best trial. Throws Error when a cell has no ok trial with that metric.
ScoreTable score_table_from_docs(const std::vector<ResultDoc> &docs, const std::string &metric, Direction goal_direction,
                                 Direction metric_direction = Direction::maximize);

// ---------------------------------------------------------------------------
// Rendering
// ---------------------------------------------------------------------------

struct ReportTable {
    std::string name;  // file stem
    std::string title;
    std::string corner = "model";
    std::vector<std::string> row_labels;
    std::vector<std::string> col_labels;
    std::vector<std::vector<std::string>> cells;
    /// Heatmap colour per cell; the scale runs white (low) to #08306b (high).
    std::optional<std::vector<std::vector<double>>> color;
    double color_lo = 0.0;
    double color_hi = 1.0;
};

enum class ReportKind { text, csv, svg_heatmap };
std::string_view to_string(ReportKind k);
std::optional<ReportKind> report_kind_from_string(std::string_view s);

std::string render_text(const ReportTable &t);
std::string render_csv(const ReportTable &t);
/// Cells without colour values are drawn grey.
std::string render_svg_heatmap(const ReportTable &t);
/// Hex colour for t in [0, 1].
std::string heat_color(double t);

/// Writes `<dir>/<name>.{txt,csv,svg}` per table; returns the paths. Throws Error on empty input.
std::vector<std::string> render_report(const std::vector<ReportTable> &tables, ReportKind kind, const std::string &dir);

// ---------------------------------------------------------------------------
// Bundled analyses
// ---------------------------------------------------------------------------

struct ScoreAnalysis {
    ScoreTable table;
    RankMatrix competition;
    RankMatrix dense;
    std::vector<double> mrr_competition;
    std::vector<double> mrr_dense;
    std::vector<std::size_t> top_competition;
    std::vector<std::size_t> top_dense;
    std::vector<std::vector<double>> z;  // empty when fewer than two models
    GapReport gaps;
};

ScoreAnalysis analyze_scores(const ScoreTable &t);

/// Report names: scores, ranks, mrr, zscores, gaps. `which` = "all" or one name.
std::vector<ReportTable> score_report_tables(const ScoreAnalysis &a, std::string_view which = "all");

}  // namespace benchkit
