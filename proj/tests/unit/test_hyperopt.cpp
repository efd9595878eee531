#include <gtest/gtest.h>

#include <algorithm>
#include <cmath>
#include <iostream>
#include <set>

#include "benchkit/hyperopt.hpp"
#include "support.hpp"

using namespace benchkit;

namespace {

SearchDimension choice(std::string name, std::vector<ParamValue> values) {
    return SearchDimension{std::move(name), DimensionKind::choice, std::move(values), 0, 0};
}

SearchDimension range(std::string name, DimensionKind k, double lo, double hi) {
    return SearchDimension{std::move(name), k, {}, lo, hi};
}

}  // namespace

TEST(Grid, ExactCartesianProductLastFastest) {
    const SearchSpace space{choice("a", {std::int64_t{1}, std::int64_t{2}}),
                            choice("b", {std::string("x"), std::string("y"), std::string("z")})};
    const auto g = sample_grid(space);
    ASSERT_EQ(g.size(), 6u);
    std::size_t n = 0;
    for (const std::int64_t a : {1, 2}) {
        for (const char *b : {"x", "y", "z"}) {
            EXPECT_EQ(g[n], (ParamSet{{"a", a}, {"b", std::string(b)}}));
            ++n;
        }
    }
}

TEST(Grid, RangeAxes) {
    const auto lin = sample_grid({range("u", DimensionKind::uniform, 0.0, 1.0)}, 5);
    ASSERT_EQ(lin.size(), 5u);
    for (std::size_t i = 0; i < 5; ++i) {
        EXPECT_NEAR(std::get<double>(lin[i].at("u")), 0.25 * static_cast<double>(i), 1e-12);
    }
    const auto geo = sample_grid({range("lr", DimensionKind::log_uniform, 1e-4, 1.0)}, 5);
    ASSERT_EQ(geo.size(), 5u);
    for (std::size_t i = 0; i < 5; ++i) {
        EXPECT_NEAR(std::log10(std::get<double>(geo[i].at("lr"))), -4.0 + static_cast<double>(i), 1e-9);
    }
    const auto ints = sample_grid({range("k", DimensionKind::int_uniform, 1, 3)}, 5);
    ASSERT_EQ(ints.size(), 3u);
    std::set<std::int64_t> vals;
    for (const auto &p : ints) vals.insert(std::get<std::int64_t>(p.at("k")));
    EXPECT_EQ(vals, (std::set<std::int64_t>{1, 2, 3}));
}

TEST(Grid, EmptySpaceAndCap) {
    const auto g = sample_grid({});
    ASSERT_EQ(g.size(), 1u);
    EXPECT_TRUE(g[0].empty());
    const SearchSpace big{range("a", DimensionKind::uniform, 0, 1), range("b", DimensionKind::uniform, 0, 1)};
    EXPECT_THROW(sample_grid(big, 5, 24), Error);
    EXPECT_EQ(sample_grid(big, 5, 25).size(), 25u);
}

TEST(Random, WithinBoundsAndSeeded) {
    const SearchSpace space{range("u", DimensionKind::uniform, -2, 3), range("k", DimensionKind::int_uniform, 4, 9),
                            range("lr", DimensionKind::log_uniform, 1e-5, 1e-1),
                            choice("bs", {std::int64_t{8}, std::int64_t{16}})};
    const auto a = sample_random(space, 500, 1);
    EXPECT_EQ(a.size(), 500u);
    for (const auto &p : a) {
        for (const auto &d : space) ASSERT_TRUE(d.contains(p.at(d.name))) << d.name;
    }
    const auto b = sample_random(space, 500, 1);
    for (std::size_t i = 0; i < a.size(); ++i) ASSERT_EQ(a[i], b[i]);
    EXPECT_NE(sample_random(space, 5, 2)[0], a[0]);
}

TEST(Random, LogUniformMedianIsGeometricMidpoint) {
    const auto s = sample_random({range("lr", DimensionKind::log_uniform, 1e-4, 1e-2)}, 10000, 7);
    std::vector<double> v;
    for (const auto &p : s) v.push_back(std::get<double>(p.at("lr")));
    std::nth_element(v.begin(), v.begin() + 5000, v.end());
    EXPECT_GE(v[5000], 8e-4);
    EXPECT_LE(v[5000], 1.25e-3);
}

TEST(Tpe, ProposalsStayInSpaceAndIgnoreFailures) {
    const SearchSpace space{range("x", DimensionKind::uniform, 0, 1), choice("c", {std::string("a"), std::string("b")}),
                            range("k", DimensionKind::int_uniform, 1, 4)};
    std::vector<TrialRecord> hist;
    Rng r(3);
    for (std::size_t i = 0; i < 20; ++i) {
        const auto p = sample_point(space, r);
        hist.push_back({i, p, i % 4 == 0 ? std::nullopt : std::optional<double>(r.uniform())});
    }
    for (std::uint64_t seed = 0; seed < 50; ++seed) {
        const auto p = suggest_tpe(space, hist, Direction::maximize, TpeSettings{}, seed);
        for (const auto &d : space) ASSERT_TRUE(d.contains(p.at(d.name)));
    }
    EXPECT_EQ(suggest_tpe(space, hist, Direction::maximize, TpeSettings{}, 9),
              suggest_tpe(space, hist, Direction::maximize, TpeSettings{}, 9));
    EXPECT_THROW((TpeSettings{1.5, 24, 5, 1.06}.validate()), Error);
}

TEST(Tpe, BeatsRandomOnQuadratic) {
    const int wins = fixtures::tpe_wins_on_quadratic(50);
    EXPECT_GE(wins, 30) << wins << " of 50";
    std::cout << "tpe wins " << wins << " of 50\n";
}
