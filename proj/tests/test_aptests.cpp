#include <cmath>
#include <random>

#include <gtest/gtest.h>

#include "dslfm/aptests.hpp"
#include "support.hpp"

using namespace dslfm;
using namespace testsupport;

namespace {

Panel tiny_panel(const std::vector<double>& returns) {
    std::vector<PanelRow> rows;
    for (std::size_t i = 0; i < returns.size(); ++i) rows.push_back({"a" + std::to_string(i), 0, returns[i], {0.0}, {}});
    return Panel::from_rows({"z"}, rows);
}

PredictionSet predict_all(const Panel& panel, const std::vector<double>& values) {
    PredictionSet ps;
    std::size_t i = 0;
    for (std::size_t pos = 0; pos < panel.num_weeks(); ++pos) {
        for (const auto& row : panel.week_rows(pos)) ps.items.push_back({row.asset_id, row.week, values[i++]});
    }
    return ps;
}

}  // namespace

TEST(PredictiveR2, KnownValues) {
    const Panel panel = tiny_panel({1.0, -1.0, 2.0});
    EXPECT_DOUBLE_EQ(predictive_r2(predict_all(panel, {0.0, 0.0, 0.0}), panel), 0.0);
    EXPECT_DOUBLE_EQ(predictive_r2(predict_all(panel, {1.0, -1.0, 2.0}), panel), 1.0);
    // sse = 4 + 4 + 16 = 24, sst = 6
    EXPECT_DOUBLE_EQ(predictive_r2(predict_all(panel, {-1.0, 1.0, -2.0}), panel), -3.0);
}

TEST(PredictiveR2, DecreasesAsNoiseGrows) {
    std::mt19937_64 rng(1);
    std::normal_distribution<double> nd;
    std::vector<double> r(200);
    for (auto& x : r) x = nd(rng);
    const Panel panel = tiny_panel(r);
    std::vector<double> noise(200);
    for (auto& x : noise) x = nd(rng);
    double prev = 2.0;
    for (double scale : {0.0, 0.1, 0.5, 1.0, 2.0}) {
        std::vector<double> pred(200);
        for (std::size_t i = 0; i < 200; ++i) pred[i] = r[i] + scale * noise[i];
        const double r2 = predictive_r2(predict_all(panel, pred), panel);
        EXPECT_LT(r2, prev);
        prev = r2;
    }
}

TEST(PredictiveR2, Errors) {
    const Panel panel = tiny_panel({1.0, 2.0});
    PredictionSet elsewhere;
    elsewhere.items.push_back({"zz", 0, 1.0});
    EXPECT_THROW(predictive_r2(elsewhere, panel), InputError);
    const Panel zeros = tiny_panel({0.0, 0.0});
    EXPECT_THROW(predictive_r2(predict_all(zeros, {1.0, 1.0}), zeros), DegenerateError);
}

TEST(Stars, Thresholds) {
    EXPECT_EQ(significance_stars(1.6), 0);
    EXPECT_EQ(significance_stars(1.7), 1);
    EXPECT_EQ(significance_stars(2.0), 2);
    EXPECT_EQ(significance_stars(2.6), 3);
    EXPECT_EQ(significance_stars(std::numeric_limits<double>::infinity()), 3);
    EXPECT_EQ(significance_stars(-5.0), 0);
}

TEST(RpTest, KnownStatistic) {
    RiskPremiumEstimate est;
    est.T = 100;
    est.sigma_g = 1.0;
    est.gamma_g = 0.196;
    const auto t = rp_test(est);
    EXPECT_NEAR(t.tstat, 1.96, 1e-12);
    EXPECT_NEAR(t.pvalue, 0.05, 1e-4);
    EXPECT_TRUE(t.reject10);
    EXPECT_FALSE(t.reject01);
    est.gamma_g = -0.5;
    EXPECT_TRUE(rp_test(est).reject01);
    est.sigma_g = 0.0;
    EXPECT_THROW(rp_test(est), DegenerateError);
}

TEST(ResampleWeeks, RelabelsAndKeepsCrossSections) {
    std::mt19937_64 rng(2);
    const Panel panel = factor_panel(10, 7, gaussian(3, 1, rng), 0.1, rng);
    std::mt19937_64 draw(9);
    const Panel boot = resample_weeks(panel, draw);
    ASSERT_EQ(boot.num_weeks(), 10u);
    for (std::size_t pos = 0; pos < 10; ++pos) {
        EXPECT_EQ(boot.weeks()[pos], static_cast<Week>(pos));
        const auto rows = boot.week_rows(pos);
        ASSERT_EQ(rows.size(), 7u);
        // the resampled week is a verbatim copy of some original week
        bool matched = false;
        for (std::size_t src = 0; src < 10 && !matched; ++src) {
            const auto orig = panel.week_rows(src);
            matched = orig[0].excess_return == rows[0].excess_return && orig[3].characteristics == rows[3].characteristics;
        }
        EXPECT_TRUE(matched);
    }
}

class CharImportanceTest : public ::testing::Test {
protected:
    static DslConfig single_lambda() {
        DslConfig dsl;
        dsl.lambda_grid = FixedLambdaGrid{{0.01}};
        return dsl;
    }
    static FitOptions opts() {
        FitOptions o;
        o.k = 1;
        o.threshold = 0.0;
        return o;
    }
};

TEST_F(CharImportanceTest, SmallBootstrapWarnsAndIsDeterministic) {
    std::mt19937_64 rng(3);
    Eigen::MatrixXd gamma(3, 1);
    gamma << 1.0, 0.0, 0.0;
    const Panel panel = factor_panel(30, 40, gamma, 0.3, rng);
    const auto a = char_importance(panel, single_lambda(), opts(), 2, 77);
    const auto b = char_importance(panel, single_lambda(), opts(), 2, 77, Executor(3));
    ASSERT_FALSE(a.warnings.empty());
    EXPECT_NE(a.warnings.front().find("B = 2"), std::string::npos);
    EXPECT_EQ(a.W, b.W);
    EXPECT_EQ(a.se, b.se);
    EXPECT_EQ(a.draws_used, 2u);
    EXPECT_THROW(char_importance(panel, single_lambda(), opts(), 1, 77), InputError);
}

TEST_F(CharImportanceTest, DrivingCharacteristicDominates) {
    std::mt19937_64 rng(4);
    Eigen::MatrixXd gamma(4, 1);
    gamma << 1.0, 0.0, 0.0, 0.0;
    const Panel panel = factor_panel(40, 60, gamma, 0.3, rng);
    const auto rep = char_importance(panel, single_lambda(), opts(), 30, 5);
    ASSERT_EQ(rep.W.size(), 4u);
    for (std::size_t j = 1; j < 4; ++j) EXPECT_GT(rep.W[0], 10.0 * rep.W[j]);
    EXPECT_GE(rep.stars[0], 2);
    // W is the row norm of the full-sample thresholded loadings
    const auto fit = fit_dslfm(panel, [] { auto d = single_lambda(); d.seed = 5; return d; }(), opts());
    EXPECT_NEAR(rep.W[0], fit.thresholded.row(0).squaredNorm(), 1e-12);
}

TEST_F(CharImportanceTest, DuplicatedColumnsShareImportance) {
    std::mt19937_64 rng(5);
    Eigen::MatrixXd gamma(3, 1);
    gamma << 1.0, 0.5, 0.0;
    Panel base = factor_panel(25, 40, gamma, 0.2, rng);
    std::vector<PanelRow> rows;
    for (std::size_t pos = 0; pos < base.num_weeks(); ++pos) {
        for (auto row : base.week_rows(pos)) {
            row.characteristics.push_back(row.characteristics[0]);
            rows.push_back(row);
        }
    }
    const Panel panel = Panel::from_rows({"c0", "c1", "c2", "c0dup"}, rows);
    const auto rep = char_importance(panel, single_lambda(), opts(), 4, 11);
    EXPECT_NEAR(rep.W[0], rep.W[3], 1e-8 * rep.W[0]);
}

TEST_F(CharImportanceTest, SignFlipLeavesImportanceUnchanged) {
    std::mt19937_64 rng(6);
    Eigen::MatrixXd gamma(3, 1);
    gamma << 1.0, -0.6, 0.0;
    const Panel panel = factor_panel(25, 40, gamma, 0.2, rng);
    std::vector<PanelRow> rows;
    for (std::size_t pos = 0; pos < panel.num_weeks(); ++pos) {
        for (auto row : panel.week_rows(pos)) {
            row.characteristics[1] = -row.characteristics[1];
            rows.push_back(row);
        }
    }
    const Panel flipped = Panel::from_rows(panel.char_names(), rows);
    const auto a = char_importance(panel, single_lambda(), opts(), 4, 12);
    const auto b = char_importance(flipped, single_lambda(), opts(), 4, 12);
    for (std::size_t j = 0; j < 3; ++j) {
        EXPECT_NEAR(a.W[j], b.W[j], 1e-8 * (1.0 + a.W[j]));
        EXPECT_NEAR(a.se[j], b.se[j], 1e-8 * (1.0 + a.se[j]));
    }
}

TEST_F(CharImportanceTest, AllZeroLoadingsAreDegenerate) {
    std::mt19937_64 rng(7);
    const Panel panel = factor_panel(20, 30, gaussian(3, 1, rng), 0.2, rng);
    FitOptions o = opts();
    o.threshold = 1e6;
    EXPECT_THROW(char_importance(panel, single_lambda(), o, 3, 1), DegenerateError);
}
