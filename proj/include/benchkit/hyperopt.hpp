#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "benchkit/common.hpp"

namespace benchkit {

enum class Direction { maximize, minimize };
std::string_view to_string(Direction d);
std::optional<Direction> direction_from_string(std::string_view s);

/// True when `a` is strictly better than `b` under `d`.
inline bool better(double a, double b, Direction d) { return d == Direction::maximize ? a > b : a < b; }

struct TrialRecord {
    std::size_t trial_index = 0;
    ParamSet params;
    std::optional<double> objective;  // nullopt: failed
};

struct TpeSettings {
    double gamma = 0.25;
    int n_candidates = 24;
    int n_startup = 5;
    double bandwidth_factor = 1.0;  // scales the adaptive kernel widths
    bool operator==(const TpeSettings &) const = default;

    void validate() const;
};

inline constexpr std::size_t kDefaultGridCap = 10000;

/// Cartesian product; the last dimension varies fastest. Range dimensions get
/// `points_per_range` values (linear, or geometric for log_uniform; integers
/// rounded and deduplicated). An empty space yields a single empty ParamSet.
std::vector<ParamSet> sample_grid(const SearchSpace &space, int points_per_range = 5,
                                  std::size_t cap = kDefaultGridCap);

/// Draws one independent point.
ParamSet sample_point(const SearchSpace &space, Rng &rng);
std::vector<ParamSet> sample_random(const SearchSpace &space, std::size_t n, std::uint64_t seed);

/// Tree-structured Parzen estimator proposal. Failed records are ignored.
ParamSet suggest_tpe(const SearchSpace &space, const std::vector<TrialRecord> &history, Direction direction,
                     const TpeSettings &settings, std::uint64_t seed);

}  // namespace benchkit
