#include <sstream>

#include <gtest/gtest.h>

#include "dslfm/io.hpp"

using namespace dslfm;
using dslfm::io::json;

TEST(Hash, KnownFnvVectors) {
    EXPECT_EQ(io::fnv1a(""), 0xcbf29ce484222325ull);
    EXPECT_EQ(io::fnv1a("a"), 0xaf63dc4c8601ec8cull);
    EXPECT_EQ(io::fnv1a("foobar"), 0x85944171f73967e8ull);
    EXPECT_EQ(io::hex64(0xabcull), "0000000000000abc");
}

TEST(FactorSeriesCsv, ParsesAndSorts) {
    std::istringstream in("week,value\n3,0.5\n1,-0.25\n\n2,1e-3\n");
    const auto g = io::read_factor_series_csv(in, "mkt");
    EXPECT_EQ(g.name, "mkt");
    EXPECT_EQ(g.weeks, (std::vector<Week>{1, 2, 3}));
    EXPECT_EQ(g.values, (std::vector<double>{-0.25, 1e-3, 0.5}));
}

TEST(FactorSeriesCsv, Errors) {
    std::istringstream empty("");
    EXPECT_THROW(io::read_factor_series_csv(empty, "g"), InputError);
    std::istringstream wide("week,value,extra\n1,2,3\n");
    EXPECT_THROW(io::read_factor_series_csv(wide, "g"), SchemaError);
    std::istringstream dup("week,value\n1,2\n1,3\n");
    EXPECT_THROW(io::read_factor_series_csv(dup, "g"), DuplicateKeyError);
    std::istringstream bad("week,value\n1,2\n2,abc\n");
    try {
        io::read_factor_series_csv(bad, "g");
        FAIL();
    } catch (const InputError& e) {
        EXPECT_NE(std::string(e.what()).find("line 3"), std::string::npos);
    }
    EXPECT_THROW(io::load_factor_series("/nonexistent/g.csv", "g"), InputError);
}

TEST(PredictionsCsv, RoundTripIsExact) {
    PredictionSet ps;
    ps.items = {{"a", 0, 0.1}, {"b", 0, -1.0 / 3.0}, {"a", 1, 1e-300}, {"b", 1, 123456789.123456789}};
    std::ostringstream out;
    io::write_predictions_csv(out, ps);
    std::istringstream in(out.str());
    const auto back = io::read_predictions_csv(in);
    ASSERT_EQ(back.items.size(), 4u);
    for (std::size_t i = 0; i < 4; ++i) {
        EXPECT_EQ(back.items[i].asset_id, ps.items[i].asset_id);
        EXPECT_EQ(back.items[i].week, ps.items[i].week);
        EXPECT_EQ(back.items[i].value, ps.items[i].value);
    }
    std::istringstream dup("asset_id,week,prediction\na,1,0\na,1,2\n");
    EXPECT_THROW(io::read_predictions_csv(dup), DuplicateKeyError);
}

TEST(CharPortfolioCsv, InvalidCellsAreEmpty) {
    CharPortfolioMatrix c;
    c.values = Eigen::MatrixXd{{1.0, 2.0}, {3.0, 4.0}};
    c.valid.resize(2, 2);
    c.valid << true, true, false, true;
    c.weeks = {5, 6};
    c.char_names = {"x", "y"};
    std::ostringstream out;
    io::write_c_hat_csv(out, c);
    EXPECT_EQ(out.str(), "week,x,y\n5,1,2\n6,,4\n");
}

TEST(MatrixJson, RoundTripAndErrors) {
    const Eigen::MatrixXd m{{1.0, -2.5}, {0.0, 3.0}, {7.0, 8.0}};
    EXPECT_EQ(io::matrix_from_json(io::matrix_json(m), "m"), m);
    EXPECT_THROW(io::matrix_from_json(json::parse("[[1,2],[3]]"), "m"), ConfigError);
    EXPECT_THROW(io::matrix_from_json(json::parse("[[1,\"a\"]]"), "m"), ConfigError);
    EXPECT_THROW(io::matrix_from_json(json::parse("{}"), "m"), ConfigError);
    const Eigen::VectorXd v{{0.25, 0.5}};
    EXPECT_EQ(io::vector_from_json(io::vector_json(v), "v"), v);
}

TEST(Tables, PremiumRendersFromDocument) {
    RiskPremiumEstimate est;
    est.factor_name = "g";
    est.gamma_g = 0.25;
    est.sigma_g = 1.5;
    est.ci_lo = -0.04;
    est.ci_hi = 0.54;
    est.tstat = 1.666;
    est.pvalue = 0.0957;
    est.T = 100;
    est.N = 500;
    const auto doc = io::premium_json(est, rp_test(est));
    EXPECT_EQ(doc["test"]["reject_10"], true);
    const auto table = io::render_premium_table(doc);
    EXPECT_NE(table.find("0.250000"), std::string::npos);
    EXPECT_NE(table.find("-0.040000"), std::string::npos);
    EXPECT_NE(table.find("500"), std::string::npos);
}

TEST(Tables, ImportanceShowsStars) {
    CharImportanceReport rep;
    rep.char_names = {"size", "value"};
    rep.W = {2.0, 0.1};
    rep.se = {0.5, 0.2};
    rep.z = {4.0, 0.5};
    rep.stars = {3, 0};
    rep.B = 100;
    const auto table = io::render_importance_table(io::importance_json(rep));
    EXPECT_NE(table.find("***"), std::string::npos);
    EXPECT_NE(table.find("value"), std::string::npos);
}

TEST(Tables, BacktestRowsMatchDocument) {
    PortfolioSeries s;
    s.weighting = Weighting::equal;
    for (int t = 0; t < 10; ++t) {
        s.weeks.push_back(t);
        for (int q = 0; q < 5; ++q) s.quintile[static_cast<std::size_t>(q)].push_back(0.01 * q * (t % 3 + 1) + (t % 2 ? 0.001 : -0.001));
        s.spread.push_back(s.quintile[4].back() - s.quintile[0].back());
    }
    std::vector<double> market(10);
    for (int t = 0; t < 10; ++t) market[static_cast<std::size_t>(t)] = t % 3 ? 0.01 : -0.02;
    const auto stats = perf_stats(s.spread, market, 0);
    json doc{{"strategies", json::array({io::strategy_json("dslfm", s, stats, 0)})}};
    EXPECT_EQ(doc["strategies"][0]["weighting"], "equal");
    EXPECT_DOUBLE_EQ(doc["strategies"][0]["spread"]["mean"].get<double>(), stats.mean);
    const auto table = io::render_backtest_table(doc);
    EXPECT_NE(table.find("dslfm"), std::string::npos);
    EXPECT_NE(table.find("Sharpe"), std::string::npos);
}

TEST(PanelCsv, RoundTripIsExact) {
    std::vector<PanelRow> rows{{"a", 0, 0.125, {1.0 / 3.0, -2.0}, 5.0}, {"b", 0, -0.5, {0.0, 1e-17}, 7.5}, {"a", 1, 0.2, {3.0, 4.0}, 5.5}};
    const Panel panel = Panel::from_rows({"x", "y"}, rows);
    std::ostringstream out;
    io::write_panel_csv(out, panel);
    std::istringstream in(out.str());
    EXPECT_TRUE(read_panel_csv(in) == panel);
}
