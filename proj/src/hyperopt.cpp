#include "benchkit/hyperopt.hpp"

#include <fmt/format.h>

#include <algorithm>
#include <cmath>
#include <limits>
#include <numbers>

namespace benchkit {

std::string_view to_string(Direction d) { return d == Direction::maximize ? "maximize" : "minimize"; }

std::optional<Direction> direction_from_string(std::string_view s) {
    if (s == "maximize") return Direction::maximize;
    if (s == "minimize") return Direction::minimize;
    return std::nullopt;
}

void TpeSettings::validate() const {
    if (!(gamma > 0.0 && gamma < 1.0)) {
        throw Error("tpe gamma must lie in (0, 1)");
    }
    if (n_candidates < 1) {
        throw Error("tpe n_candidates must be >= 1");
    }
    if (n_startup < 1) {
        throw Error("tpe n_startup must be >= 1");
    }
    if (!(bandwidth_factor > 0.0)) {
        throw Error("tpe bandwidth_factor must be > 0");
    }
}

namespace {

std::vector<ParamValue> grid_values(const SearchDimension &d, int points) {
    std::vector<ParamValue> out;
    if (d.kind == DimensionKind::choice) {
        return d.values;
    }
    if (points < 1) {
        throw Error("grid points per range must be >= 1");
    }
    for (int i = 0; i < points; ++i) {
        const double t = points == 1 ? 0.0 : static_cast<double>(i) / static_cast<double>(points - 1);
        double v = 0.0;
        if (d.kind == DimensionKind::log_uniform) {
            v = std::exp(std::log(d.low) + t * (std::log(d.high) - std::log(d.low)));
        } else {
            v = d.low + t * (d.high - d.low);
        }
        if (i == points - 1 && points > 1) {
            v = d.high;  // no rounding drift at the upper end
        }
        if (i == 0) {
            v = d.low;
        }
        if (d.kind == DimensionKind::int_uniform) {
            const auto iv = static_cast<std::int64_t>(std::nearbyint(v));
            if (out.empty() || std::get<std::int64_t>(out.back()) != iv) {
                out.emplace_back(iv);
            }
        } else {
            out.emplace_back(v);
        }
    }
    return out;
}

// Values are handled in a transformed continuous space: log for log_uniform.
double to_space(const SearchDimension &d, double v) { return d.kind == DimensionKind::log_uniform ? std::log(v) : v; }
double from_space(const SearchDimension &d, double u) { return d.kind == DimensionKind::log_uniform ? std::exp(u) : u; }

ParamValue clamp_value(const SearchDimension &d, double raw) {
    raw = std::clamp(raw, d.low, d.high);
    if (d.kind == DimensionKind::int_uniform) {
        return static_cast<std::int64_t>(std::nearbyint(raw));  // ties to even
    }
    return raw;
}

ParamValue draw(const SearchDimension &d, Rng &rng) {
    switch (d.kind) {
        case DimensionKind::choice:
            return d.values[rng.index(d.values.size())];
        case DimensionKind::uniform:
            return clamp_value(d, rng.uniform(d.low, d.high));
        case DimensionKind::log_uniform:
            return clamp_value(d, std::exp(rng.uniform(std::log(d.low), std::log(d.high))));
        case DimensionKind::int_uniform:
            return rng.uniform_int(static_cast<std::int64_t>(d.low), static_cast<std::int64_t>(d.high));
    }
    throw Error("unknown dimension kind");
}

double numeric_value(const ParamValue &v) {
    const auto r = param_as_real(v);
    if (!r) {
        throw Error("non-numeric value in a range dimension");
    }
    return *r;
}

// Parzen estimator for one dimension over a set of observations.
class DimensionDensity {
  public:
    DimensionDensity(const SearchDimension &d, const std::vector<const ParamValue *> &obs, double bw_factor)
        : dim_(d) {
        if (d.kind == DimensionKind::choice) {
            counts_.assign(d.values.size(), 1.0);  // add-one smoothing
            total_ = static_cast<double>(d.values.size());
            for (const auto *v : obs) {
                const auto it = std::find(d.values.begin(), d.values.end(), *v);
                if (it != d.values.end()) {
                    counts_[static_cast<std::size_t>(it - d.values.begin())] += 1.0;
                    total_ += 1.0;
                }
            }
            return;
        }
        lo_ = to_space(d, d.low);
        hi_ = to_space(d, d.high);
        const double range = hi_ - lo_;
        for (const auto *v : obs) {
            centers_.push_back(to_space(d, numeric_value(*v)));
        }
        std::sort(centers_.begin(), centers_.end());
        // Each kernel is as wide as the larger gap to its sorted neighbours (the bounds act as
        // neighbours at the ends), clipped so no kernel is wider than the range or narrower
        // than range / min(100, n + 1).
        const double n = static_cast<double>(centers_.size());
        const double min_sigma = range / std::min(100.0, n + 1.0);
        sigmas_.resize(centers_.size());
        for (std::size_t i = 0; i < centers_.size(); ++i) {
            const double left = centers_[i] - (i == 0 ? lo_ : centers_[i - 1]);
            const double right = (i + 1 == centers_.size() ? hi_ : centers_[i + 1]) - centers_[i];
            sigmas_[i] = bw_factor * std::clamp(std::max(left, right), min_sigma, range);
        }
    }

    // Mixture of the kernels plus one uniform prior component.
    [[nodiscard]] double log_density(const ParamValue &v) const {
        if (dim_.kind == DimensionKind::choice) {
            const auto it = std::find(dim_.values.begin(), dim_.values.end(), v);
            const auto k = static_cast<std::size_t>(it - dim_.values.begin());
            return std::log(counts_[k] / total_);
        }
        const double x = to_space(dim_, numeric_value(v));
        double s = 1.0 / (hi_ - lo_);
        for (std::size_t i = 0; i < centers_.size(); ++i) {
            const double z = (x - centers_[i]) / sigmas_[i];
            s += std::exp(-0.5 * z * z) / (sigmas_[i] * std::sqrt(2.0 * std::numbers::pi));
        }
        return std::log(s / static_cast<double>(centers_.size() + 1));
    }

    [[nodiscard]] ParamValue sample(Rng &rng) const {
        if (dim_.kind == DimensionKind::choice) {
            double u = rng.uniform() * total_;
            for (std::size_t k = 0; k < counts_.size(); ++k) {
                if (u < counts_[k]) {
                    return dim_.values[k];
                }
                u -= counts_[k];
            }
            return dim_.values.back();
        }
        const std::size_t comp = rng.index(centers_.size() + 1);
        if (comp == centers_.size()) {
            return clamp_value(dim_, from_space(dim_, rng.uniform(lo_, hi_)));
        }
        double x = centers_[comp] + sigmas_[comp] * rng.normal();
        for (int attempt = 0; attempt < 16 && (x < lo_ || x > hi_); ++attempt) {
            x = centers_[comp] + sigmas_[comp] * rng.normal();
        }
        return clamp_value(dim_, from_space(dim_, std::clamp(x, lo_, hi_)));
    }

  private:
    const SearchDimension &dim_;
    std::vector<double> counts_;
    double total_ = 0.0;
    std::vector<double> centers_;
    double lo_ = 0.0;
    double hi_ = 0.0;
    std::vector<double> sigmas_;
};

}  // namespace

std::vector<ParamSet> sample_grid(const SearchSpace &space, int points_per_range, std::size_t cap) {
    std::vector<std::vector<ParamValue>> axes;
    std::size_t total = 1;
    for (const auto &d : space) {
        d.validate();
        axes.push_back(grid_values(d, points_per_range));
        total *= axes.back().size();
        if (total > cap) {
            throw Error(fmt::format("grid has more than {} points; use the random or tpe sampler", cap));
        }
    }
    std::vector<ParamSet> out;
    out.reserve(total);
    std::vector<std::size_t> pos(axes.size(), 0);
    for (std::size_t n = 0; n < total; ++n) {
        ParamSet p;
        for (std::size_t i = 0; i < axes.size(); ++i) {
            p.emplace(space[i].name, axes[i][pos[i]]);
        }
        out.push_back(std::move(p));
        for (std::size_t i = axes.size(); i-- > 0;) {
            if (++pos[i] < axes[i].size()) {
                break;
            }
            pos[i] = 0;
        }
    }
    return out;
}

ParamSet sample_point(const SearchSpace &space, Rng &rng) {
    ParamSet p;
    for (const auto &d : space) {
        p.emplace(d.name, draw(d, rng));
    }
    return p;
}

std::vector<ParamSet> sample_random(const SearchSpace &space, std::size_t n, std::uint64_t seed) {
    for (const auto &d : space) {
        d.validate();
    }
    Rng rng(seed);
    std::vector<ParamSet> out;
    out.reserve(n);
    for (std::size_t i = 0; i < n; ++i) {
        out.push_back(sample_point(space, rng));
    }
    return out;
}

ParamSet suggest_tpe(const SearchSpace &space, const std::vector<TrialRecord> &history, Direction direction,
                     const TpeSettings &settings, std::uint64_t seed) {
    settings.validate();
    Rng rng(seed);
    std::vector<const TrialRecord *> ok;
    for (const auto &r : history) {
        if (r.objective && std::isfinite(*r.objective)) {
            ok.push_back(&r);
        }
    }
    if (ok.size() < static_cast<std::size_t>(settings.n_startup) || space.empty()) {
        return sample_point(space, rng);
    }
    std::stable_sort(ok.begin(), ok.end(), [&](const TrialRecord *a, const TrialRecord *b) {
        if (*a->objective != *b->objective) {
            return better(*a->objective, *b->objective, direction);
        }
        return a->trial_index < b->trial_index;
    });
    const auto n_good = std::max<std::size_t>(
        1, static_cast<std::size_t>(std::ceil(settings.gamma * static_cast<double>(ok.size()))));

    std::vector<DimensionDensity> good;
    std::vector<DimensionDensity> bad;
    good.reserve(space.size());
    bad.reserve(space.size());
    for (const auto &d : space) {
        std::vector<const ParamValue *> g;
        std::vector<const ParamValue *> b;
        for (std::size_t i = 0; i < ok.size(); ++i) {
            const auto it = ok[i]->params.find(d.name);
            if (it == ok[i]->params.end() || !d.contains(it->second)) {
                continue;
            }
            (i < n_good ? g : b).push_back(&it->second);
        }
        good.emplace_back(d, g, settings.bandwidth_factor);
        bad.emplace_back(d, b, settings.bandwidth_factor);
    }

    ParamSet best;
    double best_score = -std::numeric_limits<double>::infinity();
    for (int c = 0; c < settings.n_candidates; ++c) {
        ParamSet cand;
        double score = 0.0;
        for (std::size_t i = 0; i < space.size(); ++i) {
            ParamValue v = good[i].sample(rng);
            score += good[i].log_density(v) - bad[i].log_density(v);
            cand.emplace(space[i].name, std::move(v));
        }
        if (c == 0 || score > best_score) {
            best_score = score;
            best = std::move(cand);
        }
    }
    return best;
}

}  // namespace benchkit
