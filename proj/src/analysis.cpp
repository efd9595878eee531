#include "benchkit/analysis.hpp"

#include <fmt/format.h>

#include <algorithm>
#include <charconv>
#include <cmath>
#include <filesystem>
#include <map>
#include <numeric>
#include <set>

#include "benchkit/datagen.hpp"

namespace benchkit {

void ScoreTable::validate() const {
    if (models.empty() || datasets.empty()) {
        throw Error("score table needs at least one model and one dataset");
    }
    if (std::set<std::string>(models.begin(), models.end()).size() != models.size()) {
        throw Error("score table has duplicate model ids");
    }
    if (std::set<std::string>(datasets.begin(), datasets.end()).size() != datasets.size()) {
        throw Error("score table has duplicate dataset ids");
    }
    if (values.size() != models.size()) {
        throw Error("score table row count does not match its models");
    }
    for (std::size_t m = 0; m < values.size(); ++m) {
        if (values[m].size() != datasets.size()) {
            throw Error(fmt::format("score table row '{}' has {} cells, expected {}", models[m], values[m].size(),
                                    datasets.size()));
        }
        for (std::size_t d = 0; d < datasets.size(); ++d) {
            if (!std::isfinite(values[m][d])) {
                throw Error(fmt::format("score table cell ({}, {}) is not finite", models[m], datasets[d]));
            }
        }
    }
}

std::size_t ScoreTable::model_index(std::string_view id) const {
    const auto it = std::find(models.begin(), models.end(), id);
    if (it == models.end()) {
        throw Error(fmt::format("model '{}' not in score table", id));
    }
    return static_cast<std::size_t>(it - models.begin());
}

std::size_t ScoreTable::dataset_index(std::string_view id) const {
    const auto it = std::find(datasets.begin(), datasets.end(), id);
    if (it == datasets.end()) {
        throw Error(fmt::format("dataset '{}' not in score table", id));
    }
    return static_cast<std::size_t>(it - datasets.begin());
}

ScoreTable parse_score_table_csv(std::string_view text, Direction direction, const std::string &file) {
    const auto rows = parse_csv(text);
    if (rows.empty()) {
        throw DataError(fmt::format("{}: empty score table", file));
    }
    const auto &header = rows.front();
    if (header.size() < 2 || header.front() != "model") {
        throw DataError(fmt::format("{}:1: header must be model,<dataset1>,<dataset2>,...", file));
    }
    ScoreTable t;
    t.direction = direction;
    t.datasets.assign(header.begin() + 1, header.end());
    for (std::size_t r = 1; r < rows.size(); ++r) {
        const auto &row = rows[r];
        if (row.size() == 1 && row.front().empty()) {
            continue;
        }
        if (row.size() != header.size()) {
            throw DataError(fmt::format("{}:{}: expected {} fields, found {}", file, r + 1, header.size(), row.size()));
        }
        t.models.push_back(row.front());
        std::vector<double> vals;
        for (std::size_t c = 1; c < row.size(); ++c) {
            const std::string &cell = row[c];
            double v = 0.0;
            const auto res = std::from_chars(cell.data(), cell.data() + cell.size(), v);
            if (cell.empty()) {
                throw DataError(fmt::format("{}:{}: missing score for ({}, {}); holes are not imputed", file, r + 1,
                                            row.front(), header[c]));
            }
            if (res.ec != std::errc() || res.ptr != cell.data() + cell.size() || !std::isfinite(v)) {
                throw DataError(fmt::format("{}:{}: '{}' is not a finite number", file, r + 1, cell));
            }
            vals.push_back(v);
        }
        t.values.push_back(std::move(vals));
    }
    try {
        t.validate();
    } catch (const Error &e) {
        throw DataError(fmt::format("{}: {}", file, e.what()));
    }
    return t;
}

RankMatrix rank_matrix(const ScoreTable &t, RankingPolicy policy) {
    t.validate();
    RankMatrix r{t.models, t.datasets, std::vector<std::vector<int>>(t.models.size(), std::vector<int>(t.datasets.size()))};
    for (std::size_t d = 0; d < t.datasets.size(); ++d) {
        std::set<double> better_distinct;
        for (std::size_t m = 0; m < t.models.size(); ++m) {
            const double x = t.values[m][d];
            int strictly_better = 0;
            better_distinct.clear();
            for (std::size_t o = 0; o < t.models.size(); ++o) {
                if (better(t.values[o][d], x, t.direction)) {
                    ++strictly_better;
                    better_distinct.insert(t.values[o][d]);
                }
            }
            r.ranks[m][d] = 1 + (policy == RankingPolicy::competition ? strictly_better
                                                                       : static_cast<int>(better_distinct.size()));
        }
    }
    return r;
}

std::vector<double> mrr(const RankMatrix &r) {
    std::vector<double> out;
    for (const auto &row : r.ranks) {
        double s = 0.0;
        for (const int k : row) {
            s += 1.0 / k;
        }
        out.push_back(row.empty() ? 0.0 : s / static_cast<double>(row.size()));
    }
    return out;
}

std::vector<std::size_t> top_rank_counts(const RankMatrix &r) {
    std::vector<std::size_t> out;
    for (const auto &row : r.ranks) {
        out.push_back(static_cast<std::size_t>(std::count(row.begin(), row.end(), 1)));
    }
    return out;
}

std::vector<std::vector<double>> zscores(const ScoreTable &t) {
    t.validate();
    if (t.models.size() < 2) {
        throw Error("z-scores need at least two models");
    }
    const auto n = static_cast<double>(t.models.size());
    std::vector<std::vector<double>> z(t.models.size(), std::vector<double>(t.datasets.size(), 0.0));
    for (std::size_t d = 0; d < t.datasets.size(); ++d) {
        double mean = 0.0;
        for (std::size_t m = 0; m < t.models.size(); ++m) {
            mean += t.values[m][d];
        }
        mean /= n;
        double var = 0.0;
        for (std::size_t m = 0; m < t.models.size(); ++m) {
            var += (t.values[m][d] - mean) * (t.values[m][d] - mean);
        }
        const double sd = std::sqrt(var / n);
        if (sd == 0.0) {
            continue;
        }
        for (std::size_t m = 0; m < t.models.size(); ++m) {
            z[m][d] = (t.values[m][d] - mean) / sd;
        }
    }
    return z;
}

std::vector<std::size_t> GapReport::order_desc() const {
    std::vector<std::size_t> idx(gap.size());
    std::iota(idx.begin(), idx.end(), 0);
    std::stable_sort(idx.begin(), idx.end(), [&](std::size_t a, std::size_t b) { return gap[a] > gap[b]; });
    return idx;
}

GapReport gaps(const ScoreTable &t) {
    t.validate();
    GapReport g;
    for (std::size_t d = 0; d < t.datasets.size(); ++d) {
        double hi = t.values[0][d];
        double lo = hi;
        for (std::size_t m = 1; m < t.models.size(); ++m) {
            hi = std::max(hi, t.values[m][d]);
            lo = std::min(lo, t.values[m][d]);
        }
        const double best_v = t.direction == Direction::maximize ? hi : lo;
        const double worst_v = t.direction == Direction::maximize ? lo : hi;
        std::vector<std::string> best;
        std::vector<std::string> worst;
        for (std::size_t m = 0; m < t.models.size(); ++m) {
            if (t.values[m][d] == best_v) best.push_back(t.models[m]);
            if (t.values[m][d] == worst_v) worst.push_back(t.models[m]);
        }
        g.gap.push_back(hi - lo);
        g.best.push_back(std::move(best));
        g.worst.push_back(std::move(worst));
    }
    return g;
}

std::vector<ParetoPoint> pareto_front(std::vector<ParetoPoint> points, const std::vector<Direction> &directions) {
    if (points.empty()) {
        throw Error("pareto front needs at least one point");
    }
    for (const auto &p : points) {
        if (p.coords.size() != directions.size()) {
            throw Error(fmt::format("point '{}' has {} coordinates, expected {}", p.model, p.coords.size(),
                                    directions.size()));
        }
    }
    auto dominates = [&](const ParetoPoint &a, const ParetoPoint &b) {
        bool strict = false;
        for (std::size_t k = 0; k < directions.size(); ++k) {
            if (better(b.coords[k], a.coords[k], directions[k])) {
                return false;
            }
            strict = strict || better(a.coords[k], b.coords[k], directions[k]);
        }
        return strict;
    };
    for (auto &p : points) {
        p.dominated = std::any_of(points.begin(), points.end(), [&](const ParetoPoint &q) { return dominates(q, p); });
    }
    std::stable_sort(points.begin(), points.end(),
                     [](const ParetoPoint &a, const ParetoPoint &b) { return a.model < b.model; });
    return points;
}

std::vector<double> average_ranks(std::span<const double> xs) {
    std::vector<std::size_t> idx(xs.size());
    std::iota(idx.begin(), idx.end(), 0);
    std::stable_sort(idx.begin(), idx.end(), [&](std::size_t a, std::size_t b) { return xs[a] < xs[b]; });
    std::vector<double> ranks(xs.size());
    std::size_t i = 0;
    while (i < idx.size()) {
        std::size_t j = i;
        while (j + 1 < idx.size() && xs[idx[j + 1]] == xs[idx[i]]) {
            ++j;
        }
        const double avg = (static_cast<double>(i) + static_cast<double>(j)) / 2.0 + 1.0;
        for (std::size_t k = i; k <= j; ++k) {
            ranks[idx[k]] = avg;
        }
        i = j + 1;
    }
    return ranks;
}

namespace {

std::optional<double> pearson(std::span<const double> xs, std::span<const double> ys) {
    const auto n = static_cast<double>(xs.size());
    const double mx = std::accumulate(xs.begin(), xs.end(), 0.0) / n;
    const double my = std::accumulate(ys.begin(), ys.end(), 0.0) / n;
    double sxy = 0.0;
    double sxx = 0.0;
    double syy = 0.0;
    for (std::size_t i = 0; i < xs.size(); ++i) {
        sxy += (xs[i] - mx) * (ys[i] - my);
        sxx += (xs[i] - mx) * (xs[i] - mx);
        syy += (ys[i] - my) * (ys[i] - my);
    }
    if (sxx == 0.0 || syy == 0.0) {
        return std::nullopt;
    }
    return std::clamp(sxy / std::sqrt(sxx * syy), -1.0, 1.0);
}

}  // namespace

Correlation correlate(std::span<const double> xs, std::span<const double> ys) {
    if (xs.size() != ys.size()) {
        throw Error(fmt::format("correlation needs equal lengths, got {} and {}", xs.size(), ys.size()));
    }
    if (xs.size() < 3) {
        throw Error("correlation needs at least three pairs");
    }
    Correlation c;
    const bool x_const = std::all_of(xs.begin(), xs.end(), [&](double v) { return v == xs[0]; });
    const bool y_const = std::all_of(ys.begin(), ys.end(), [&](double v) { return v == ys[0]; });
    if (x_const || y_const) {
        c.reason = fmt::format("zero variance in {}", x_const ? "xs" : "ys");
        return c;
    }
    c.pearson = pearson(xs, ys);
    const auto rx = average_ranks(xs);
    const auto ry = average_ranks(ys);
    c.spearman = pearson(rx, ry);
    return c;
}

namespace {

// Best ok trial per cell; ties go to the lowest trial index.
std::map<std::pair<std::string, std::string>, const ResultDoc *> best_trials(const std::vector<ResultDoc> &docs,
                                                                              Direction direction) {
    std::map<std::pair<std::string, std::string>, const ResultDoc *> best;
    for (const auto &d : docs) {
        const auto key = std::make_pair(d.model_id, d.dataset_id);
        auto &slot = best[key];
        if (d.trial.status != TrialStatus::ok || !d.trial.objective) {
            continue;
        }
        if (slot == nullptr || better(*d.trial.objective, *slot->trial.objective, direction) ||
            (*d.trial.objective == *slot->trial.objective && d.trial.trial_index < slot->trial.trial_index)) {
            slot = &d;
        }
    }
    return best;
}

}  // namespace

std::vector<ConvergenceCell> convergence_table(const std::vector<ResultDoc> &docs, Direction direction) {
    std::vector<ConvergenceCell> out;
    for (const auto &[key, doc] : best_trials(docs, direction)) {
        ConvergenceCell c{key.first, key.second, std::nullopt, std::nullopt};
        if (doc != nullptr) {
            c.trial_index = doc->trial.trial_index;
            c.best_epoch = doc->trial.best_epoch;
        }
        out.push_back(std::move(c));
    }
    return out;
}

ScoreTable score_table_from_docs(const std::vector<ResultDoc> &docs, const std::string &metric,
                                 Direction goal_direction, Direction metric_direction) {
    const auto best = best_trials(docs, goal_direction);
    std::set<std::string> models;
    std::set<std::string> datasets;
    for (const auto &[key, doc] : best) {
        models.insert(key.first);
        datasets.insert(key.second);
    }
    ScoreTable t;
    t.direction = metric_direction;
    t.models.assign(models.begin(), models.end());
    t.datasets.assign(datasets.begin(), datasets.end());
    for (const auto &m : t.models) {
        std::vector<double> row;
        for (const auto &d : t.datasets) {
            const auto it = best.find({m, d});
            if (it == best.end() || it->second == nullptr) {
                throw Error(fmt::format("no successful trial for ({}, {}); holes are not imputed", m, d));
            }
            const auto mit = it->second->trial.test_metrics.find(metric);
            if (mit == it->second->trial.test_metrics.end()) {
                throw Error(fmt::format("metric '{}' missing for ({}, {})", metric, m, d));
            }
            row.push_back(mit->second);
        }
        t.values.push_back(std::move(row));
    }
    t.validate();
    return t;
}

// ---------------------------------------------------------------------------
// Rendering
// ---------------------------------------------------------------------------

std::string_view to_string(ReportKind k) {
    switch (k) {
        case ReportKind::text: return "text";
        case ReportKind::csv: return "csv";
        case ReportKind::svg_heatmap: return "svg";
    }
    return "?";
}

std::optional<ReportKind> report_kind_from_string(std::string_view s) {
    if (s == "text") return ReportKind::text;
    if (s == "csv") return ReportKind::csv;
    if (s == "svg" || s == "svg_heatmap") return ReportKind::svg_heatmap;
    return std::nullopt;
}

namespace {

void check_shape(const ReportTable &t) {
    if (t.row_labels.empty() || t.col_labels.empty()) {
        throw Error("nothing to render");
    }
    if (t.cells.size() != t.row_labels.size()) {
        throw Error(fmt::format("report '{}' has {} rows for {} labels", t.name, t.cells.size(), t.row_labels.size()));
    }
    for (const auto &row : t.cells) {
        if (row.size() != t.col_labels.size()) {
            throw Error(fmt::format("report '{}' has a ragged row", t.name));
        }
    }
    if (t.color) {
        if (t.color->size() != t.cells.size()) {
            throw Error(fmt::format("report '{}' colour grid does not match its cells", t.name));
        }
        for (const auto &row : *t.color) {
            if (row.size() != t.col_labels.size()) {
                throw Error(fmt::format("report '{}' colour grid does not match its cells", t.name));
            }
        }
    }
}

std::string xml_escape(std::string_view s) {
    std::string out;
    for (const char c : s) {
        switch (c) {
            case '&': out += "&amp;"; break;
            case '<': out += "&lt;"; break;
            case '>': out += "&gt;"; break;
            case '"': out += "&quot;"; break;
            default: out += c;
        }
    }
    return out;
}

}  // namespace

std::string render_text(const ReportTable &t) {
    check_shape(t);
    std::vector<std::size_t> width(t.col_labels.size() + 1, 0);
    width[0] = t.corner.size();
    for (const auto &r : t.row_labels) {
        width[0] = std::max(width[0], r.size());
    }
    for (std::size_t c = 0; c < t.col_labels.size(); ++c) {
        width[c + 1] = t.col_labels[c].size();
        for (const auto &row : t.cells) {
            width[c + 1] = std::max(width[c + 1], row[c].size());
        }
    }
    std::string out;
    if (!t.title.empty()) {
        out += t.title + "\n";
    }
    auto line = [&](const std::string &head, const std::vector<std::string> &cols) {
        std::string l = fmt::format("{:<{}}", head, width[0]);
        for (std::size_t c = 0; c < cols.size(); ++c) {
            l += fmt::format("  {:>{}}", cols[c], width[c + 1]);
        }
        out += l + "\n";
    };
    line(t.corner, t.col_labels);
    std::size_t total = width[0];
    for (std::size_t c = 1; c < width.size(); ++c) {
        total += 2 + width[c];
    }
    out += std::string(total, '-') + "\n";
    for (std::size_t r = 0; r < t.row_labels.size(); ++r) {
        line(t.row_labels[r], t.cells[r]);
    }
    return out;
}

std::string render_csv(const ReportTable &t) {
    check_shape(t);
    std::vector<std::string> header{t.corner};
    header.insert(header.end(), t.col_labels.begin(), t.col_labels.end());
    std::string out = csv_row(header);
    for (std::size_t r = 0; r < t.row_labels.size(); ++r) {
        std::vector<std::string> row{t.row_labels[r]};
        row.insert(row.end(), t.cells[r].begin(), t.cells[r].end());
        out += csv_row(row);
    }
    return out;
}

std::string heat_color(double t) {
    t = std::clamp(std::isfinite(t) ? t : 0.0, 0.0, 1.0);
    auto mix = [&](int lo, int hi) { return static_cast<int>(std::lround(lo + (hi - lo) * t)); };
    return fmt::format("#{:02x}{:02x}{:02x}", mix(255, 8), mix(255, 48), mix(255, 107));
}

std::string render_svg_heatmap(const ReportTable &t) {
    check_shape(t);
    constexpr int cell_w = 72;
    constexpr int cell_h = 28;
    constexpr int top = 64;
    std::size_t longest = t.corner.size();
    for (const auto &r : t.row_labels) {
        longest = std::max(longest, r.size());
    }
    const int left = 16 + static_cast<int>(longest) * 7;
    const int width = left + cell_w * static_cast<int>(t.col_labels.size()) + 16;
    const int height = top + cell_h * static_cast<int>(t.row_labels.size()) + 40;
    std::string out = fmt::format(
        "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"{}\" height=\"{}\" font-family=\"sans-serif\" "
        "font-size=\"11\">\n",
        width, height);
    out += fmt::format("<rect x=\"0\" y=\"0\" width=\"{}\" height=\"{}\" fill=\"#ffffff\"/>\n", width, height);
    out += fmt::format("<text x=\"8\" y=\"20\" font-size=\"13\">{}</text>\n", xml_escape(t.title));
    for (std::size_t c = 0; c < t.col_labels.size(); ++c) {
        out += fmt::format("<text x=\"{}\" y=\"{}\" text-anchor=\"middle\">{}</text>\n",
                           left + static_cast<int>(c) * cell_w + cell_w / 2, top - 8, xml_escape(t.col_labels[c]));
    }
    const double span = t.color_hi - t.color_lo;
    for (std::size_t r = 0; r < t.row_labels.size(); ++r) {
        const int y = top + static_cast<int>(r) * cell_h;
        out += fmt::format("<text x=\"{}\" y=\"{}\" text-anchor=\"end\">{}</text>\n", left - 6, y + cell_h / 2 + 4,
                           xml_escape(t.row_labels[r]));
        for (std::size_t c = 0; c < t.col_labels.size(); ++c) {
            const int x = left + static_cast<int>(c) * cell_w;
            std::string fill = "#d9d9d9";
            double level = 0.0;
            if (t.color) {
                level = span > 0.0 ? ((*t.color)[r][c] - t.color_lo) / span : 1.0;
                fill = heat_color(level);
            }
            out += fmt::format(
                "<rect x=\"{}\" y=\"{}\" width=\"{}\" height=\"{}\" fill=\"{}\" stroke=\"#ffffff\"/>\n", x, y, cell_w,
                cell_h, fill);
            out += fmt::format("<text x=\"{}\" y=\"{}\" text-anchor=\"middle\" fill=\"{}\">{}</text>\n", x + cell_w / 2,
                               y + cell_h / 2 + 4, level > 0.5 ? "#ffffff" : "#000000", xml_escape(t.cells[r][c]));
        }
    }
    if (t.color) {
        out += fmt::format("<text x=\"8\" y=\"{}\">colour: white = {}, #08306b = {}</text>\n", height - 12,
                           format_real(t.color_lo), format_real(t.color_hi));
    }
    out += "</svg>\n";
    return out;
}

std::vector<std::string> render_report(const std::vector<ReportTable> &tables, ReportKind kind, const std::string &dir) {
    if (tables.empty()) {
        throw Error("nothing to render");
    }
    std::error_code ec;
    std::filesystem::create_directories(dir, ec);
    if (ec) {
        throw Error(fmt::format("cannot create report directory '{}': {}", dir, ec.message()));
    }
    std::vector<std::string> paths;
    for (const auto &t : tables) {
        std::string body;
        std::string ext;
        switch (kind) {
            case ReportKind::text: body = render_text(t); ext = ".txt"; break;
            case ReportKind::csv: body = render_csv(t); ext = ".csv"; break;
            case ReportKind::svg_heatmap: body = render_svg_heatmap(t); ext = ".svg"; break;
        }
        const auto path = (std::filesystem::path(dir) / (safe_file_stem(t.name) + ext)).string();
        write_file_atomic(path, body);
        paths.push_back(path);
    }
    return paths;
}

// ---------------------------------------------------------------------------
// Bundled analyses
// ---------------------------------------------------------------------------

ScoreAnalysis analyze_scores(const ScoreTable &t) {
    ScoreAnalysis a;
    a.table = t;
    a.competition = rank_matrix(t, RankingPolicy::competition);
    a.dense = rank_matrix(t, RankingPolicy::dense);
    a.mrr_competition = mrr(a.competition);
    a.mrr_dense = mrr(a.dense);
    a.top_competition = top_rank_counts(a.competition);
    a.top_dense = top_rank_counts(a.dense);
    if (t.models.size() >= 2) {
        a.z = zscores(t);
    }
    a.gaps = gaps(t);
    return a;
}

namespace {

std::string fixed(double v, int digits = 4) { return fmt::format("{:.{}f}", v, digits); }

}  // namespace

std::vector<ReportTable> score_report_tables(const ScoreAnalysis &a, std::string_view which) {
    const auto &t = a.table;
    const bool all = which == "all";
    std::vector<ReportTable> out;
    const auto n_m = t.models.size();
    const auto n_d = t.datasets.size();

    if (all || which == "scores") {
        // Numbers are the scores, colour is the reciprocal rank of each cell.
        ReportTable r{"scores", "scores (colour: reciprocal competition rank)", "model", t.models, t.datasets, {}, {}, 0.0, 1.0};
        std::vector<std::vector<double>> color(n_m, std::vector<double>(n_d));
        for (std::size_t m = 0; m < n_m; ++m) {
            std::vector<std::string> row;
            for (std::size_t d = 0; d < n_d; ++d) {
                row.push_back(fixed(t.values[m][d], 3));
                color[m][d] = 1.0 / a.competition.ranks[m][d];
            }
            r.cells.push_back(std::move(row));
        }
        r.color = std::move(color);
        out.push_back(std::move(r));
    }
    if (all || which == "ranks") {
        ReportTable r{"ranks", "competition ranks", "model", t.models, t.datasets, {}, {}, 0.0, 1.0};
        std::vector<std::vector<double>> color(n_m, std::vector<double>(n_d));
        for (std::size_t m = 0; m < n_m; ++m) {
            std::vector<std::string> row;
            for (std::size_t d = 0; d < n_d; ++d) {
                row.push_back(std::to_string(a.competition.ranks[m][d]));
                color[m][d] = 1.0 / a.competition.ranks[m][d];
            }
            r.cells.push_back(std::move(row));
        }
        r.color = std::move(color);
        out.push_back(std::move(r));
    }
    if (all || which == "mrr") {
        ReportTable r{"mrr", "mean reciprocal rank and rank-1 counts", "model", t.models,
                      {"mrr_competition", "mrr_dense", "top_competition", "top_dense"}, {}, {}, 0.0, 1.0};
        std::vector<std::vector<double>> color;
        for (std::size_t m = 0; m < n_m; ++m) {
            r.cells.push_back({fixed(a.mrr_competition[m]), fixed(a.mrr_dense[m]),
                               std::to_string(a.top_competition[m]), std::to_string(a.top_dense[m])});
            const double top_c = static_cast<double>(a.top_competition[m]) / static_cast<double>(n_d);
            const double top_d = static_cast<double>(a.top_dense[m]) / static_cast<double>(n_d);
            color.push_back({a.mrr_competition[m], a.mrr_dense[m], top_c, top_d});
        }
        r.color = std::move(color);
        out.push_back(std::move(r));
    }
    if ((all || which == "zscores") && !a.z.empty()) {
        ReportTable r{"zscores", "per-dataset z-scores (population sd)", "model", t.models, t.datasets, {}, {}, 0.0, 1.0};
        double lo = 0.0;
        double hi = 0.0;
        for (std::size_t m = 0; m < n_m; ++m) {
            std::vector<std::string> row;
            for (std::size_t d = 0; d < n_d; ++d) {
                row.push_back(fixed(a.z[m][d], 3));
                lo = std::min(lo, a.z[m][d]);
                hi = std::max(hi, a.z[m][d]);
            }
            r.cells.push_back(std::move(row));
        }
        r.color = a.z;
        r.color_lo = lo;
        r.color_hi = hi;
        out.push_back(std::move(r));
    }
    if (all || which == "gaps") {
        ReportTable r{"gaps", "best minus worst per dataset", "dataset", {}, {"gap", "best", "worst"}, {}, {}, 0.0, 1.0};
        for (const auto d : a.gaps.order_desc()) {
            r.row_labels.push_back(t.datasets[d]);
            std::string best;
            std::string worst;
            for (const auto &m : a.gaps.best[d]) best += (best.empty() ? "" : ";") + m;
            for (const auto &m : a.gaps.worst[d]) worst += (worst.empty() ? "" : ";") + m;
            r.cells.push_back({fixed(a.gaps.gap[d], 3), best, worst});
        }
        out.push_back(std::move(r));
    }
    if (out.empty()) {
        throw Error(fmt::format("unknown report '{}'; expected all, scores, ranks, mrr, zscores or gaps", which));
    }
    return out;
}

}  // namespace benchkit
