#include <random>

#include <gtest/gtest.h>

#include "dslfm/dsl.hpp"

using namespace dslfm;

namespace {

Eigen::MatrixXd gaussian(Eigen::Index n, Eigen::Index d, std::mt19937_64& rng) {
    std::normal_distribution<double> nd;
    Eigen::MatrixXd x(n, d);
    for (Eigen::Index i = 0; i < n; ++i)
        for (Eigen::Index j = 0; j < d; ++j) x(i, j) = nd(rng);
    return x;
}

DslConfig full_selection() {
    DslConfig cfg;
    cfg.lambda_grid = FixedLambdaGrid{{0.0}};
    return cfg;
}

Panel random_panel(std::size_t weeks, std::size_t n, std::size_t p, std::mt19937_64& rng) {
    std::normal_distribution<double> nd;
    std::vector<std::string> names;
    for (std::size_t j = 0; j < p; ++j) names.push_back("c" + std::to_string(j));
    std::vector<PanelRow> rows;
    for (std::size_t w = 0; w < weeks; ++w) {
        for (std::size_t i = 0; i < n; ++i) {
            PanelRow row{"a" + std::to_string(i), static_cast<Week>(w), 0.0, {}, {}};
            for (std::size_t j = 0; j < p; ++j) row.characteristics.push_back(nd(rng));
            row.excess_return = 0.5 * row.characteristics[0] + nd(rng);
            rows.push_back(row);
        }
    }
    return Panel::from_rows(names, rows);
}

}  // namespace

TEST(DslSingle, SingleSignalColumnRecovered) {
    std::mt19937_64 rng(1);
    const Eigen::MatrixXd z = gaussian(200, 10, rng);
    const Eigen::VectorXd r = 2.0 * z.col(3) + 0.1 * gaussian(200, 1, rng);
    DslConfig cfg;
    cfg.seed = 5;
    const auto cell = dsl_single(z, r, 3, cfg, 17);
    ASSERT_TRUE(cell.valid);
    const double oracle = ols_fit(z.col(3), r).coef(0);
    EXPECT_NEAR(oracle, 2.0, 0.1);
    EXPECT_NEAR(cell.c_hat, 2.0, 0.1);
}

TEST(DslSingle, ZeroResponseGivesZero) {
    std::mt19937_64 rng(2);
    const Eigen::MatrixXd z = gaussian(50, 5, rng);
    const auto cell = dsl_single(z, Eigen::VectorXd::Zero(50), 1, DslConfig{}, 3);
    ASSERT_TRUE(cell.valid);
    EXPECT_EQ(cell.c_hat, 0.0);
}

TEST(DslSingle, FullSelectionReducesToOls) {
    std::mt19937_64 rng(3);
    const Eigen::MatrixXd z = gaussian(40, 2, rng);
    const Eigen::VectorXd r = gaussian(40, 1, rng);
    const Eigen::VectorXd ols = (z.transpose() * z).ldlt().solve(z.transpose() * r);
    for (std::size_t j = 0; j < 2; ++j) {
        const auto cell = dsl_single(z, r, j, full_selection(), 0);
        ASSERT_TRUE(cell.valid);
        EXPECT_NEAR(cell.c_hat, ols(static_cast<Eigen::Index>(j)), 1e-8);
    }
}

TEST(DslSingle, SmallCrossSectionIsInvalid) {
    std::mt19937_64 rng(4);
    const Eigen::MatrixXd z = gaussian(4, 3, rng);
    const auto cell = dsl_single(z, Eigen::VectorXd::Ones(4), 0, DslConfig{}, 0);
    EXPECT_FALSE(cell.valid);
    EXPECT_FALSE(cell.reason.empty());

    DslConfig cfg;
    cfg.amelioration_set = {0, 1, 2, 3, 4};
    const Eigen::MatrixXd z6 = gaussian(6, 8, rng);
    EXPECT_FALSE(dsl_single(z6, Eigen::VectorXd::Ones(6), 0, cfg, 0).valid);
}

TEST(DslSingle, ConstantTargetColumnIsInvalid) {
    std::mt19937_64 rng(5);
    Eigen::MatrixXd z = gaussian(30, 3, rng);
    z.col(1).setConstant(0.25);
    EXPECT_FALSE(dsl_single(z, gaussian(30, 1, rng), 1, DslConfig{}, 0).valid);
}

TEST(DslSingle, AmeliorationAlwaysSelected) {
    std::mt19937_64 rng(6);
    const Eigen::MatrixXd z = gaussian(80, 8, rng);
    const Eigen::VectorXd r = gaussian(80, 1, rng);
    DslConfig cfg;
    cfg.amelioration_set = {5, 7};
    const auto cell = dsl_single(z, r, 2, cfg, 9);
    ASSERT_TRUE(cell.valid);
    for (auto a : cfg.amelioration_set) {
        EXPECT_NE(std::find(cell.selected.begin(), cell.selected.end(), a), cell.selected.end());
    }
}

TEST(DslSingle, InvariantToPermutingOtherColumns) {
    std::mt19937_64 rng(7);
    const Eigen::MatrixXd z = gaussian(150, 6, rng);
    const Eigen::VectorXd r = z.col(0) - 0.5 * z.col(4) + 0.3 * gaussian(150, 1, rng);
    Eigen::MatrixXd zp(150, 6);
    // keep target column 0 in place, reverse the others
    zp.col(0) = z.col(0);
    for (int j = 1; j < 6; ++j) zp.col(j) = z.col(6 - j);
    DslConfig cfg;
    EXPECT_NEAR(dsl_single(z, r, 0, cfg, 11).c_hat, dsl_single(zp, r, 0, cfg, 11).c_hat, 1e-10);
}

TEST(DslSingle, RescalingTargetColumnRescalesEstimate) {
    std::mt19937_64 rng(8);
    const Eigen::MatrixXd z = gaussian(120, 5, rng);
    const Eigen::VectorXd r = 0.8 * z.col(2) + z.col(0) + 0.5 * gaussian(120, 1, rng);
    Eigen::MatrixXd scaled = z;
    scaled.col(2) *= 3.0;
    DslConfig cfg;
    EXPECT_NEAR(dsl_single(scaled, r, 2, cfg, 4).c_hat, dsl_single(z, r, 2, cfg, 4).c_hat / 3.0, 1e-8);
}

TEST(DslSingle, NoiselessSparseTruthRecovered) {
    std::mt19937_64 rng(9);
    const Eigen::MatrixXd z = gaussian(100, 10, rng);
    Eigen::VectorXd c = Eigen::VectorXd::Zero(10);
    c(1) = 1.5;
    c(4) = -0.7;
    c(8) = 0.3;
    const Eigen::VectorXd r = z * c;
    DslConfig cfg;
    for (std::size_t j = 0; j < 10; ++j) {
        EXPECT_NEAR(dsl_single(z, r, j, cfg, j).c_hat, c(static_cast<Eigen::Index>(j)), 1e-6) << "j=" << j;
    }
}

TEST(DslConfig, RejectsBadAmelioration) {
    DslConfig cfg;
    cfg.amelioration_set = {1, 1};
    EXPECT_THROW(cfg.validate(3), InputError);
    cfg.amelioration_set = {3};
    EXPECT_THROW(cfg.validate(3), InputError);
}

TEST(CharPortfolio, SingleWeekShape) {
    std::mt19937_64 rng(10);
    const auto panel = random_panel(1, 30, 4, rng);
    const auto c = build_char_portfolio_matrix(panel, DslConfig{});
    EXPECT_EQ(c.values.rows(), 1);
    EXPECT_EQ(c.values.cols(), 4);
    EXPECT_TRUE(c.valid.all());
}

TEST(CharPortfolio, TinyWeekMasked) {
    std::mt19937_64 rng(11);
    auto panel = random_panel(3, 25, 3, rng);
    std::vector<PanelRow> rows;
    for (const auto& row : panel.rows()) {
        if (row.week != 1 || row.asset_id == "a0" || row.asset_id == "a1") rows.push_back(row);
    }
    panel = Panel::from_rows(panel.char_names(), rows);
    const auto c = build_char_portfolio_matrix(panel, DslConfig{});
    EXPECT_FALSE(c.valid.row(1).any());
    EXPECT_TRUE(c.valid.row(0).all());
    EXPECT_TRUE(c.valid.row(2).all());
    EXPECT_TRUE(c.values.row(1).isZero(0.0));
    const auto [complete, weeks] = c.complete_rows();
    EXPECT_EQ(complete.rows(), 2);
    EXPECT_EQ(weeks, (std::vector<Week>{0, 2}));
}

TEST(CharPortfolio, AllInvalidIsEstimationError) {
    std::mt19937_64 rng(12);
    const auto panel = random_panel(2, 3, 2, rng);
    EXPECT_THROW(build_char_portfolio_matrix(panel, DslConfig{}), EstimationError);
}

TEST(CharPortfolio, ThreadCountDoesNotChangeResult) {
    std::mt19937_64 rng(13);
    const auto panel = random_panel(6, 40, 5, rng);
    DslConfig cfg;
    cfg.seed = 77;
    const auto serial = build_char_portfolio_matrix(panel, cfg);
    const auto threaded = build_char_portfolio_matrix(panel, cfg, Executor(4));
    EXPECT_EQ(serial.values, threaded.values);
    EXPECT_EQ(serial.valid, threaded.valid);
}
