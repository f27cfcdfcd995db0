#include <cmath>
#include <random>

#include <gtest/gtest.h>

#include "dslfm/backtest.hpp"
#include "support.hpp"

using namespace dslfm;
using namespace testsupport;

namespace {

// One row per (asset, week) with the given returns; caps 1..N.
Panel returns_panel(const std::vector<std::vector<double>>& r) {
    std::vector<PanelRow> rows;
    for (std::size_t t = 0; t < r.size(); ++t) {
        for (std::size_t i = 0; i < r[t].size(); ++i) {
            rows.push_back({"a" + std::to_string(i), static_cast<Week>(t), r[t][i], {static_cast<double>(i)}, 1.0 + static_cast<double>(i)});
        }
    }
    return Panel::from_rows({"z"}, rows);
}

PredictionSet predictions_from(const Panel& panel, const std::function<double(const PanelRow&)>& f) {
    PredictionSet ps;
    for (std::size_t pos = 0; pos < panel.num_weeks(); ++pos)
        for (const auto& row : panel.week_rows(pos)) ps.items.push_back({row.asset_id, row.week, f(row)});
    return ps;
}

// Persistent characteristics: z_i fixed over time, r = z_i' gamma f_t + noise
// with one common factor of mean 0.5. With `per_char` each characteristic
// carries its own unit-variance factor and only the first is priced.
Panel persistent_panel(int n, int t, const Eigen::VectorXd& gamma, double noise, std::mt19937_64& rng,
                       bool per_char = false) {
    std::normal_distribution<double> nd;
    const auto p = gamma.size();
    const Eigen::MatrixXd z = gaussian(n, p, rng);
    std::vector<std::string> names;
    for (Eigen::Index j = 0; j < p; ++j) names.push_back("c" + std::to_string(j));
    std::vector<PanelRow> rows;
    for (int w = 0; w < t; ++w) {
        Eigen::VectorXd f = Eigen::VectorXd::Constant(p, 0.5 + nd(rng));
        if (per_char) {
            for (Eigen::Index j = 0; j < p; ++j) f(j) = (j == 0 ? 0.5 : 0.0) + nd(rng);
        }
        for (int i = 0; i < n; ++i) {
            PanelRow row;
            row.asset_id = "a" + std::to_string(1000 + i);
            row.week = w;
            row.characteristics.resize(static_cast<std::size_t>(p));
            for (Eigen::Index j = 0; j < p; ++j) row.characteristics[static_cast<std::size_t>(j)] = z(i, j);
            row.excess_return = z.row(i).dot(gamma.cwiseProduct(f)) + noise * nd(rng);
            row.market_cap = 1.0;
            rows.push_back(row);
        }
    }
    return Panel::from_rows(names, rows);
}

}  // namespace

TEST(Quintiles, Breakpoints) {
    // ceil(q N / 5) for N = 7: 2, 3, 5, 6, 7
    const std::vector<int> expect7{1, 1, 2, 3, 3, 4, 5};
    for (std::size_t r = 1; r <= 7; ++r) EXPECT_EQ(detail::quintile_of(r, 7), expect7[r - 1]) << r;
    for (std::size_t r = 1; r <= 5; ++r) EXPECT_EQ(detail::quintile_of(r, 5), static_cast<int>(r));
    for (std::size_t r = 1; r <= 10; ++r) EXPECT_EQ(detail::quintile_of(r, 10), static_cast<int>((r + 1) / 2));
}

TEST(Quintiles, EqualWeightedReturnsAndTies) {
    const Panel panel = returns_panel({{0.0, 1.0, 2.0, 3.0, 4.0, 5.0, 6.0}});
    // identical predictions: rank order falls back to asset id
    const auto ps = sort_quintiles(predictions_from(panel, [](const PanelRow&) { return 0.0; }), panel, Weighting::equal);
    ASSERT_EQ(ps.weeks.size(), 1u);
    EXPECT_DOUBLE_EQ(ps.quintile[0][0], 0.5);
    EXPECT_DOUBLE_EQ(ps.quintile[1][0], 2.0);
    EXPECT_DOUBLE_EQ(ps.quintile[2][0], 3.5);
    EXPECT_DOUBLE_EQ(ps.quintile[3][0], 5.0);
    EXPECT_DOUBLE_EQ(ps.quintile[4][0], 6.0);
    EXPECT_DOUBLE_EQ(ps.spread[0], 5.5);
}

TEST(Quintiles, ValueWeights) {
    const Panel panel = returns_panel({{1.0, 2.0, 3.0, 4.0, 5.0, 6.0, 7.0, 8.0, 9.0, 10.0}});
    const auto ps = sort_quintiles(predictions_from(panel, [](const PanelRow& r) { return r.excess_return; }), panel,
                                   Weighting::value);
    // Q1 = {a0 cap 1, a1 cap 2}; Q5 = {a8 cap 9, a9 cap 10}
    EXPECT_NEAR(ps.quintile[0][0], (1.0 * 1.0 + 2.0 * 2.0) / 3.0, 1e-14);
    EXPECT_NEAR(ps.quintile[4][0], (9.0 * 9.0 + 10.0 * 10.0) / 19.0, 1e-14);
}

TEST(Quintiles, WeightsSumToOneEveryWeek) {
    std::mt19937_64 rng(1);
    std::normal_distribution<double> nd;
    std::uniform_int_distribution<int> size(5, 40);
    std::vector<std::vector<double>> r(30);
    for (auto& week : r) {
        week.resize(static_cast<std::size_t>(size(rng)));
        for (auto& x : week) x = nd(rng);
    }
    const Panel panel = returns_panel(r);
    const auto preds = predictions_from(panel, [&](const PanelRow&) { return nd(rng); });
    for (auto w : {Weighting::equal, Weighting::value}) {
        const auto ps = sort_quintiles(preds, panel, w);
        ASSERT_EQ(ps.weeks.size(), 30u);
        for (const auto& week : ps.holdings) {
            std::array<double, 5> sum{};
            std::array<int, 5> count{};
            for (const auto& h : week) {
                sum[static_cast<std::size_t>(h.quintile - 1)] += h.weight;
                ++count[static_cast<std::size_t>(h.quintile - 1)];
            }
            for (std::size_t q = 0; q < 5; ++q) {
                EXPECT_NEAR(sum[q], 1.0, 1e-12);
                EXPECT_GE(count[q], 1);
            }
        }
    }
}

TEST(Quintiles, EqualCapsMakeWeightingsCoincide) {
    std::mt19937_64 rng(9);
    const Panel panel = factor_panel(12, 23, gaussian(2, 1, rng), 1.0, rng);
    std::vector<PanelRow> rows;
    for (std::size_t pos = 0; pos < panel.num_weeks(); ++pos) {
        for (auto row : panel.week_rows(pos)) {
            row.market_cap = 3.5;
            rows.push_back(row);
        }
    }
    const Panel capped = Panel::from_rows(panel.char_names(), rows);
    const auto preds = predictions_from(capped, [](const PanelRow& r) { return r.characteristics[0]; });
    const auto ew = sort_quintiles(preds, capped, Weighting::equal);
    const auto vw = sort_quintiles(preds, capped, Weighting::value);
    for (std::size_t q = 0; q < 5; ++q)
        for (std::size_t t = 0; t < ew.weeks.size(); ++t) EXPECT_NEAR(ew.quintile[q][t], vw.quintile[q][t], 1e-14);
    for (std::size_t t = 0; t < ew.weeks.size(); ++t) {
        EXPECT_EQ(ew.spread[t], ew.quintile[4][t] - ew.quintile[0][t]);
        double net = 0.0;
        for (const auto& [id, w] : ew.spread_weights(t)) net += w;
        EXPECT_NEAR(net, 0.0, 1e-12);
    }
    EXPECT_THROW(sort_quintiles(preds, panel, Weighting::value), InputError);
}

TEST(Quintiles, FiveAssetsOnePerQuintile) {
    const Panel panel = returns_panel({{5, 4, 3, 2, 1}});
    const auto ps = sort_quintiles(predictions_from(panel, [](const PanelRow& r) { return r.excess_return; }), panel,
                                   Weighting::equal);
    for (std::size_t q = 0; q < 5; ++q) EXPECT_DOUBLE_EQ(ps.quintile[q][0], static_cast<double>(q + 1));
}

TEST(Quintiles, SmallWeeksAreSkipped) {
    const Panel panel = returns_panel({{1, 2, 3, 4}, {1, 2, 3, 4, 5}});
    const auto ps = sort_quintiles(predictions_from(panel, [](const PanelRow& r) { return r.excess_return; }), panel,
                                   Weighting::equal);
    ASSERT_EQ(ps.weeks, (std::vector<Week>{1}));
    ASSERT_EQ(ps.diagnostics.size(), 1u);
    EXPECT_NE(ps.diagnostics[0].find("week 0"), std::string::npos);
}

TEST(Quintiles, PerfectForesightOrdersTheExtremes) {
    std::mt19937_64 rng(2);
    const Panel panel = factor_panel(20, 37, gaussian(3, 2, rng), 1.0, rng, true);
    const auto ps = sort_quintiles(predictions_from(panel, [](const PanelRow& r) { return r.excess_return; }), panel,
                                   Weighting::value);
    for (std::size_t t = 0; t < ps.weeks.size(); ++t) EXPECT_GE(ps.quintile[4][t], ps.quintile[0][t]);
}

TEST(Perf, DrawdownExamples) {
    const std::vector<double> r{0.1, -0.5, 0.2};
    EXPECT_NEAR(max_drawdown(r), 0.5, 1e-15);
    const std::vector<double> up{0.1, 0.2, 0.0};
    EXPECT_EQ(max_drawdown(up), 0.0);
    const std::vector<double> wipe{0.1, -2.0, 0.3};
    EXPECT_EQ(max_drawdown(wipe), 1.0);
}

TEST(Perf, SharpeSortinoAndRegression) {
    std::mt19937_64 rng(3);
    std::normal_distribution<double> nd;
    std::vector<double> m(60), r(60);
    for (std::size_t t = 0; t < 60; ++t) {
        m[t] = 0.01 * nd(rng);
        r[t] = 0.002 + 1.5 * m[t] + 0.004 * nd(rng);
    }
    const auto s = perf_stats(r, m, 3);
    EXPECT_NEAR(s.sharpe, mean_of(r) / sample_sd(r) * std::sqrt(52.0), 1e-12);
    double down = 0.0;
    for (double x : r) down += x < 0.0 ? x * x : 0.0;
    ASSERT_TRUE(s.sortino.has_value());
    EXPECT_NEAR(*s.sortino, mean_of(r) / std::sqrt(down / 60.0) * std::sqrt(52.0), 1e-12);
    EXPECT_NEAR(s.t_mean, newey_west(r, 3).tstat, 1e-12);
    // closed-form simple regression
    const double mm = mean_of(m), mr = mean_of(r);
    double sxy = 0.0, sxx = 0.0;
    for (std::size_t t = 0; t < 60; ++t) {
        sxy += (m[t] - mm) * (r[t] - mr);
        sxx += (m[t] - mm) * (m[t] - mm);
    }
    EXPECT_NEAR(s.beta, sxy / sxx, 1e-10);
    EXPECT_NEAR(s.alpha, mr - s.beta * mm, 1e-12);
    EXPECT_FALSE(s.turnover.has_value());
    EXPECT_EQ(s.nw_lags, 3);
}

TEST(Perf, ExactMarketMultiple) {
    std::vector<double> m{0.01, -0.02, 0.03, 0.0, 0.015, -0.01, 0.02, 0.005, -0.004};
    std::vector<double> r;
    for (double x : m) r.push_back(0.001 + 2.0 * x);
    const auto s = perf_stats(r, m, 0);
    EXPECT_NEAR(s.alpha, 0.001, 1e-14);
    EXPECT_NEAR(s.beta, 2.0, 1e-12);
    EXPECT_EQ(s.t_alpha, 0.0);
}

TEST(Perf, HandBuiltSharpe) {
    const std::vector<double> r{0.01, 0.02, -0.01, 0.03, 0.0, 0.01, -0.02, 0.04};
    // mean 0.01, sum of squared deviations 0.0028, sd sqrt(0.0004)
    const std::vector<double> m{0.0, 0.01, 0.0, -0.01, 0.02, 0.0, 0.01, 0.0};
    const auto s = perf_stats(r, m, 0);
    EXPECT_NEAR(s.mean, 0.01, 1e-15);
    EXPECT_NEAR(s.sharpe, 0.01 / 0.02 * std::sqrt(52.0), 1e-12);
}

TEST(Perf, MarketAgainstItself) {
    std::mt19937_64 rng(8);
    std::normal_distribution<double> nd;
    std::vector<double> m(30);
    for (auto& x : m) x = 0.02 * nd(rng);
    const auto s = perf_stats(m, m);
    EXPECT_NEAR(s.beta, 1.0, 1e-10);
    EXPECT_NEAR(s.alpha, 0.0, 1e-10);
}

TEST(Perf, Errors) {
    const std::vector<double> seven(7, 0.01);
    EXPECT_THROW(perf_stats(seven, seven), InputError);
    const std::vector<double> flat(10, 0.01);
    EXPECT_THROW(perf_stats(flat, flat), DegenerateError);
    const std::vector<double> r{0.1, -0.1, 0.2, 0.0, 0.1, -0.2, 0.3, 0.1};
    const std::vector<double> shorter(7, 0.0);
    EXPECT_THROW(perf_stats(r, shorter), InputError);
}

TEST(Perf, Turnover) {
    // a never-rebalanced book: same ranking every week
    const Panel still = returns_panel({{1, 2, 3, 4, 5}, {2, 1, 3, 5, 4}, {0, 0, 1, 1, 2}});
    auto ps = sort_quintiles(predictions_from(still, [](const PanelRow& r) { return r.characteristics[0]; }), still,
                             Weighting::equal);
    EXPECT_EQ(turnover(ps), 0.0);
    // long and short legs swap each week: sum |dw| = 4 per week
    const Panel flip = returns_panel({{1, 2, 3, 4, 5}, {1, 2, 3, 4, 5}, {1, 2, 3, 4, 5}});
    ps = sort_quintiles(predictions_from(flip, [](const PanelRow& r) { return (r.week % 2 ? -1.0 : 1.0) * r.characteristics[0]; }),
                        flip, Weighting::equal);
    EXPECT_DOUBLE_EQ(turnover(ps), 2.0);
}

TEST(PcaBenchmark, NoiselessStationaryPredictsBlockMeans) {
    std::mt19937_64 rng(4);
    const int n = 12, weeks = 24;
    const Eigen::MatrixXd b = gaussian(n, 2, rng);
    const Eigen::Vector2d mean(0.3, -0.1);
    const Eigen::Vector2d wiggle(1.0, 0.4);
    std::vector<std::vector<double>> r(weeks, std::vector<double>(n));
    for (int t = 0; t < weeks; ++t) {
        // alternate about a fixed mean so every even-length window averages to it
        const Eigen::Vector2d f = mean + (t % 2 ? -1.0 : 1.0) * Eigen::Vector2d(wiggle(0), (t % 4 < 2 ? 1.0 : -1.0) * wiggle(1));
        for (int i = 0; i < n; ++i) r[static_cast<std::size_t>(t)][static_cast<std::size_t>(i)] = b.row(i).dot(f);
    }
    const Panel panel = returns_panel(r);
    const auto preds = pca_benchmark(panel, 2, 4, 8);
    ASSERT_EQ(preds.items.size(), static_cast<std::size_t>((weeks - 8) * n));
    for (const auto& pr : preds.items) {
        const int i = std::stoi(pr.asset_id.substr(1));
        EXPECT_NEAR(pr.value, b.row(i).dot(mean), 1e-10);
    }
}

TEST(PcaBenchmark, BeatsAZeroForecastAtHighSignal) {
    std::mt19937_64 rng(10);
    Eigen::VectorXd gamma(3);
    gamma << 1.0, -0.5, 0.3;
    // static loadings, R^2 around 0.9 for the predictable part
    const Panel panel = persistent_panel(40, 60, gamma, 0.1, rng);
    const auto preds = pca_benchmark(panel, 1, 10, 20);
    double sse = 0.0, sst = 0.0;
    for (const auto& pr : preds.items) {
        const double r = panel.find(pr.week, pr.asset_id)->excess_return;
        sse += (r - pr.value) * (r - pr.value);
        sst += r * r;
    }
    EXPECT_LT(sse, sst);
}

TEST(PcaBenchmark, RankAndHistoryHandling) {
    const Panel panel = returns_panel({{1, 2, 3}, {2, 1, 0}, {0, 1, 1}, {1, 1, 1}, {3, 2, 1}});
    EXPECT_THROW(pca_benchmark(panel, 3, 1, 4), RankError);
    // too little history before the first block: nothing is emitted for it
    const auto preds = pca_benchmark(panel, 2, 1, 2);
    for (const auto& pr : preds.items) EXPECT_GE(pr.week, 3);
    EXPECT_THROW(pca_benchmark(panel, 0, 1, 2), InputError);
}

TEST(PcaBenchmark, NoLookAhead) {
    std::mt19937_64 rng(5);
    const Panel panel = factor_panel(30, 15, gaussian(2, 2, rng), 0.5, rng);
    const auto base = pca_benchmark(panel, 2, 5, 10);
    // perturb returns from week 20 on; predictions for weeks < 25 use weeks < 20 only
    std::vector<PanelRow> rows;
    for (std::size_t pos = 0; pos < panel.num_weeks(); ++pos) {
        for (auto row : panel.week_rows(pos)) {
            if (row.week >= 20) row.excess_return += 100.0;
            rows.push_back(row);
        }
    }
    const auto mutated = pca_benchmark(Panel::from_rows(panel.char_names(), rows), 2, 5, 10);
    ASSERT_EQ(base.items.size(), mutated.items.size());
    for (std::size_t i = 0; i < base.items.size(); ++i) {
        if (base.items[i].week < 25) EXPECT_EQ(base.items[i].value, mutated.items[i].value);
    }
}

TEST(ObservableBenchmark, SelectsTheDrivingCharacteristic) {
    int hits = 0;
    for (int seed = 0; seed < 20; ++seed) {
        std::mt19937_64 rng(static_cast<std::uint64_t>(100 + seed));
        const Panel panel = persistent_panel(100, 200, Eigen::VectorXd::Ones(4), 1.0, rng, true);
        ObservableBenchmarkOptions o;
        o.selection_from = 100;
        o.selection_to = 149;
        o.test_from = 150;
        o.test_to = 199;
        const auto res = observable_factor_benchmark(panel, o);
        ASSERT_EQ(res.best.size(), 3u);
        if (res.best[0].chars == std::vector<std::size_t>{0}) ++hits;
        EXPECT_EQ(res.best[2].chars.size(), 3u);
        EXPECT_FALSE(res.predictions[0].items.empty());
        for (const auto& pr : res.predictions[0].items) {
            EXPECT_GE(pr.week, 150);
            EXPECT_LE(pr.week, 199);
        }
    }
    EXPECT_GE(hits, 16);
}

TEST(ObservableBenchmark, TiesGoToTheLowerIndex) {
    std::mt19937_64 rng(6);
    Eigen::VectorXd gamma(3);
    gamma << 1.0, 0.0, 0.0;
    const Panel base = persistent_panel(40, 40, gamma, 0.5, rng);
    std::vector<PanelRow> rows;
    for (std::size_t pos = 0; pos < base.num_weeks(); ++pos) {
        for (auto row : base.week_rows(pos)) {
            row.characteristics.insert(row.characteristics.begin(), row.characteristics[0]);
            rows.push_back(row);
        }
    }
    const Panel panel = Panel::from_rows({"dup", "c0", "c1", "c2"}, rows);
    ObservableBenchmarkOptions o;
    o.selection_from = 20;
    o.selection_to = 29;
    o.test_from = 30;
    o.test_to = 39;
    o.max_size = 1;
    const auto res = observable_factor_benchmark(panel, o);
    EXPECT_EQ(res.best[0].chars, std::vector<std::size_t>{0});
}

TEST(ObservableBenchmark, SingleCandidateWins) {
    std::mt19937_64 rng(11);
    const Panel panel = persistent_panel(20, 30, Eigen::VectorXd::Ones(3), 0.5, rng);
    ObservableBenchmarkOptions o;
    o.candidates = {2};
    o.selection_from = 15;
    o.selection_to = 22;
    o.test_from = 23;
    o.test_to = 29;
    const auto res = observable_factor_benchmark(panel, o);
    ASSERT_EQ(res.best.size(), 1u);
    EXPECT_EQ(res.best[0].chars, std::vector<std::size_t>{2});
}

TEST(ObservableBenchmark, Errors) {
    std::mt19937_64 rng(7);
    const Panel panel = persistent_panel(20, 20, Eigen::VectorXd::Ones(2), 0.5, rng);
    ObservableBenchmarkOptions o;
    o.selection_from = 10;
    o.selection_to = 15;
    o.test_from = 14;
    o.test_to = 19;
    EXPECT_THROW(observable_factor_benchmark(panel, o), InputError);
    o.test_from = 16;
    o.candidates = std::vector<std::size_t>(71, 0);
    EXPECT_THROW(observable_factor_benchmark(panel, o), InputError);
    o.candidates = {5};
    EXPECT_THROW(observable_factor_benchmark(panel, o), InputError);
}
