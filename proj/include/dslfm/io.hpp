#pragma once

#include <cinttypes>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <istream>
#include <ostream>
#include <sstream>
#include <string>
#include <vector>

#include <Eigen/Dense>
#include <json.hpp>

#include "dslfm/aptests.hpp"
#include "dslfm/backtest.hpp"
#include "dslfm/dsl.hpp"
#include "dslfm/errors.hpp"
#include "dslfm/factor_model.hpp"
#include "dslfm/panel.hpp"
#include "dslfm/risk_premium.hpp"
#include "dslfm/simulate.hpp"

namespace dslfm::io {

// Insertion-ordered so dumps are stable and readable.
using json = nlohmann::ordered_json;

inline std::uint64_t fnv1a(std::string_view bytes) {
    std::uint64_t h = 0xcbf29ce484222325ull;
    for (unsigned char c : bytes) {
        h ^= c;
        h *= 0x100000001b3ull;
    }
    return h;
}

inline std::string hex64(std::uint64_t v) {
    char buf[17];
    std::snprintf(buf, sizeof buf, "%016" PRIx64, v);
    return buf;
}

inline json matrix_json(const Eigen::MatrixXd& m) {
    json rows = json::array();
    for (Eigen::Index i = 0; i < m.rows(); ++i) {
        json row = json::array();
        for (Eigen::Index j = 0; j < m.cols(); ++j) row.push_back(m(i, j));
        rows.push_back(std::move(row));
    }
    return rows;
}

inline json vector_json(const Eigen::VectorXd& v) {
    json out = json::array();
    for (Eigen::Index i = 0; i < v.size(); ++i) out.push_back(v(i));
    return out;
}

inline Eigen::MatrixXd matrix_from_json(const json& j, const std::string& what) {
    if (!j.is_array() || j.empty()) throw ConfigError(what + ": expected a non-empty array of rows");
    const std::size_t cols = j[0].is_array() ? j[0].size() : 0;
    if (cols == 0) throw ConfigError(what + ": expected a non-empty array of rows");
    Eigen::MatrixXd m(static_cast<Eigen::Index>(j.size()), static_cast<Eigen::Index>(cols));
    for (std::size_t i = 0; i < j.size(); ++i) {
        if (!j[i].is_array() || j[i].size() != cols) throw ConfigError(what + ": rows must all have " + std::to_string(cols) + " numbers");
        for (std::size_t c = 0; c < cols; ++c) {
            if (!j[i][c].is_number()) throw ConfigError(what + ": non-numeric entry at [" + std::to_string(i) + "][" + std::to_string(c) + "]");
            m(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(c)) = j[i][c].get<double>();
        }
    }
    return m;
}

inline Eigen::VectorXd vector_from_json(const json& j, const std::string& what) {
    if (!j.is_array()) throw ConfigError(what + ": expected an array of numbers");
    Eigen::VectorXd v(static_cast<Eigen::Index>(j.size()));
    for (std::size_t i = 0; i < j.size(); ++i) {
        if (!j[i].is_number()) throw ConfigError(what + ": non-numeric entry at [" + std::to_string(i) + "]");
        v(static_cast<Eigen::Index>(i)) = j[i].get<double>();
    }
    return v;
}

inline const char* mode_name(ThresholdMode m) { return m == ThresholdMode::hard ? "hard" : "group_soft"; }
inline const char* weighting_name(Weighting w) { return w == Weighting::value ? "value" : "equal"; }

inline json fit_json(const FactorModelFit& fit) {
    json j;
    j["k"] = fit.k;
    j["k_selected_by_ic"] = fit.k_auto;
    j["ic"] = fit.ic;
    j["threshold"] = {{"lambda", fit.threshold_lambda},
                      {"mode", mode_name(fit.mode)},
                      {"cross_validated", fit.threshold_cv},
                      {"window", fit.window},
                      {"validation_r2", fit.validation_r2 ? json(*fit.validation_r2) : json(nullptr)}};
    j["char_names"] = fit.c_hat.char_names;
    j["weeks"] = fit.weeks;
    j["eigenvalues"] = vector_json(fit.eigvals);
    j["factors"] = matrix_json(fit.factors);
    j["loadings"] = matrix_json(fit.loadings);
    j["thresholded_loadings"] = matrix_json(fit.thresholded);
    j["warnings"] = fit.warnings;
    return j;
}

inline json premium_json(const RiskPremiumEstimate& est, const std::optional<RpTest>& test = std::nullopt) {
    json j;
    j["factor"] = est.factor_name;
    j["gamma_g"] = est.gamma_g;
    j["sigma_g"] = est.sigma_g;
    j["sigma2_unclipped"] = est.sigma2_raw;
    j["alpha"] = est.alpha;
    j["ci"] = {est.ci_lo, est.ci_hi};
    j["tstat"] = est.tstat;
    j["pvalue"] = est.pvalue;
    if (test) {
        j["test"] = {{"reject_10", test->reject10}, {"reject_05", test->reject05}, {"reject_01", test->reject01}};
    }
    j["T"] = est.T;
    j["N"] = est.N;
    j["nw_lags"] = est.nw_lags;
    j["gamma"] = vector_json(est.gamma);
    j["eta"] = vector_json(est.eta);
    j["weeks"] = est.weeks;
    j["warnings"] = est.warnings;
    return j;
}

inline json importance_json(const CharImportanceReport& rep) {
    json rows = json::array();
    for (std::size_t c = 0; c < rep.W.size(); ++c) {
        rows.push_back({{"char", rep.char_names[c]},
                        {"W", rep.W[c]},
                        {"se", rep.se[c]},
                        {"z", std::isfinite(rep.z[c]) ? json(rep.z[c]) : json(nullptr)},
                        {"stars", rep.stars[c]}});
    }
    json j;
    j["B"] = rep.B;
    j["draws_used"] = rep.draws_used;
    j["degenerate_draws"] = rep.degenerate_draws;
    j["characteristics"] = std::move(rows);
    j["warnings"] = rep.warnings;
    return j;
}

inline json mse_json(const MseDecomposition& m) {
    return {{"mse", m.mse}, {"bias2", m.bias2}, {"var", m.var}, {"median_rel_error", m.median_error}};
}

inline json sim_config_json(const SimConfig& c) {
    json j;
    j["N"] = c.N;
    j["T"] = c.T;
    j["p"] = c.p;
    j["k"] = c.k;
    j["s"] = c.s ? json(*c.s) : json(nullptr);
    j["S"] = c.S;
    j["target_r2_model"] = c.target_r2_model;
    j["target_r2_g"] = c.target_r2_g;
    j["char_mean_center"] = c.char_mean_center;
    j["char_mean_sd"] = c.char_mean_sd;
    j["burn_in"] = c.burn_in;
    j["log_mcap_sd"] = c.log_mcap_sd;
    if (c.gamma0.size()) j["gamma0"] = vector_json(c.gamma0);
    if (c.eta0.size()) j["eta0"] = vector_json(c.eta0);
    if (c.Gamma0.size()) j["Gamma0"] = matrix_json(c.Gamma0);
    if (c.factor_var_coefs.size()) j["factor_var_coefs"] = matrix_json(c.factor_var_coefs);
    if (c.factor_innov_cov.size()) j["factor_innov_cov"] = matrix_json(c.factor_innov_cov);
    if (c.char_var_coefs.size()) j["char_var_coefs"] = matrix_json(c.char_var_coefs);
    if (c.char_innov_cov.size()) j["char_innov_cov"] = matrix_json(c.char_innov_cov);
    return j;
}

inline json sim_report_json(const SimReport& rep) {
    json j;
    j["config"] = sim_config_json(rep.config);
    j["S"] = rep.S;
    j["failures"] = rep.failures;
    j["gamma_g_true"] = rep.gamma_g_true;
    j["estimands"] = {{"Gamma_beta", mse_json(rep.gamma_beta)},
                      {"F", mse_json(rep.factors)},
                      {"beta_bar_gamma", mse_json(rep.beta_bar)},
                      {"C", mse_json(rep.c)},
                      {"gamma_g", mse_json(rep.gamma_g)}};
    j["coverage"] = {{"90", rep.cov90}, {"95", rep.cov95}};
    json counts = json::object();
    for (const auto& [k, n] : rep.k_hat_counts) counts[std::to_string(k)] = n;
    j["k_hat_counts"] = counts;
    json draws = json::array();
    for (const auto& d : rep.draws) {
        json r{{"index", d.index}, {"seed", d.seed}, {"ok", d.ok}};
        if (d.ok) {
            r["gamma_g_hat"] = d.gamma_g_hat;
            r["sigma_g"] = d.sigma_g;
            r["cover90"] = d.cover90;
            r["cover95"] = d.cover95;
            r["rel_errors"] = {{"Gamma_beta", d.err_gamma_beta}, {"F", d.err_factors}, {"beta_bar_gamma", d.err_beta_bar}, {"C", d.err_c}};
        } else {
            r["error"] = d.error;
        }
        draws.push_back(std::move(r));
    }
    j["draws"] = std::move(draws);
    return j;
}

inline json perf_json(const PerfStats& s) {
    auto opt = [](const std::optional<double>& v) { return v ? json(*v) : json(nullptr); };
    return {{"weeks", s.n_weeks},     {"mean", s.mean},           {"sd", s.sd},          {"sharpe", s.sharpe},
            {"sortino", opt(s.sortino)}, {"turnover", opt(s.turnover)}, {"max_drawdown", s.max_drawdown},
            {"alpha", s.alpha},       {"beta", s.beta},           {"t_mean", s.t_mean},  {"t_alpha", s.t_alpha},
            {"nw_lags", s.nw_lags}};
}

/// One strategy's quintile series plus its performance; quintile means carry
/// Newey-West t-statistics.
inline json strategy_json(const std::string& name, const PortfolioSeries& series, const PerfStats& stats,
                          std::optional<int> nw_lags) {
    json q = json::array();
    for (std::size_t i = 0; i < 5; ++i) {
        const auto& r = series.quintile[i];
        double t = 0.0;
        try {
            t = newey_west(r, nw_lags).tstat;
        } catch (const Error&) {
            t = 0.0;
        }
        q.push_back({{"mean", mean_of(r)}, {"tstat", t}});
    }
    json j;
    j["name"] = name;
    j["weighting"] = weighting_name(series.weighting);
    j["quintiles"] = std::move(q);
    j["spread"] = perf_json(stats);
    j["weeks"] = series.weeks;
    j["spread_returns"] = series.spread;
    j["diagnostics"] = series.diagnostics;
    return j;
}

inline json observable_json(const ObservableBenchmark& b, const std::vector<std::string>& char_names) {
    json models = json::array();
    for (const auto& m : b.best) {
        json names = json::array();
        for (auto c : m.chars) names.push_back(char_names[c]);
        models.push_back({{"size", m.chars.size()}, {"chars", names}, {"validation_r2", m.validation_r2}});
    }
    return {{"best", models}, {"diagnostics", b.diagnostics}};
}

// ---- CSV ----------------------------------------------------------------

namespace detail {

template <class Row>
void read_csv_rows(std::istream& in, const std::string& what, std::size_t columns, Row&& on_row) {
    std::string line;
    std::size_t lineno = 0;
    do {
        if (!std::getline(in, line)) throw InputError(what + ": file is empty (no header)");
        ++lineno;
    } while (!line.empty() && line[0] == '#');
    const auto header = dslfm::detail::split_csv_line(line);
    if (header.size() != columns) {
        throw SchemaError(what + ": expected " + std::to_string(columns) + " columns, header has " + std::to_string(header.size()));
    }
    while (std::getline(in, line)) {
        ++lineno;
        if (dslfm::detail::trim(line).empty()) continue;
        const auto f = dslfm::detail::split_csv_line(line);
        if (f.size() != columns) throw InputError(what + ": line " + std::to_string(lineno) + " has " + std::to_string(f.size()) + " fields");
        on_row(f, lineno);
    }
}

inline std::ifstream open_input(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw InputError("cannot open '" + path + "'");
    return in;
}

inline std::string format_double(double v) {
    char buf[32];
    std::snprintf(buf, sizeof buf, "%.17g", v);
    return buf;
}

}  // namespace detail

/// Two columns: week, value. Rows are sorted by week on return.
inline ObservableFactorSeries read_factor_series_csv(std::istream& in, std::string name) {
    std::vector<std::pair<Week, double>> rows;
    detail::read_csv_rows(in, "factor series '" + name + "'", 2, [&](const std::vector<std::string>& f, std::size_t line) {
        const auto w = dslfm::detail::parse_week(f[0]);
        const auto v = dslfm::detail::parse_double(f[1]);
        if (!w || !v) throw InputError("factor series '" + name + "': malformed line " + std::to_string(line));
        if (!std::isfinite(*v)) throw InputError("factor series '" + name + "': non-finite value on line " + std::to_string(line));
        rows.emplace_back(*w, *v);
    });
    std::sort(rows.begin(), rows.end());
    ObservableFactorSeries g;
    g.name = std::move(name);
    for (const auto& [w, v] : rows) {
        if (!g.weeks.empty() && g.weeks.back() == w) throw DuplicateKeyError("factor series '" + g.name + "': week " + std::to_string(w) + " repeated");
        g.weeks.push_back(w);
        g.values.push_back(v);
    }
    if (g.weeks.empty()) throw InputError("factor series '" + g.name + "' has no rows");
    return g;
}

inline ObservableFactorSeries load_factor_series(const std::string& path, std::string name) {
    auto in = detail::open_input(path);
    return read_factor_series_csv(in, std::move(name));
}

/// Three columns: asset_id, week, prediction.
inline PredictionSet read_predictions_csv(std::istream& in) {
    PredictionSet ps;
    ps.window = 0;
    detail::read_csv_rows(in, "predictions", 3, [&](const std::vector<std::string>& f, std::size_t line) {
        const auto w = dslfm::detail::parse_week(f[1]);
        const auto v = dslfm::detail::parse_double(f[2]);
        if (!w || !v || !std::isfinite(*v)) throw InputError("predictions: malformed line " + std::to_string(line));
        ps.items.push_back({std::string(dslfm::detail::trim(f[0])), *w, *v});
    });
    std::sort(ps.items.begin(), ps.items.end(), [](const Prediction& a, const Prediction& b) {
        return a.week != b.week ? a.week < b.week : a.asset_id < b.asset_id;
    });
    for (std::size_t i = 1; i < ps.items.size(); ++i) {
        if (ps.items[i].week == ps.items[i - 1].week && ps.items[i].asset_id == ps.items[i - 1].asset_id) {
            throw DuplicateKeyError("predictions: duplicate (" + ps.items[i].asset_id + ", " + std::to_string(ps.items[i].week) + ")");
        }
    }
    return ps;
}

inline PredictionSet load_predictions(const std::string& path) {
    auto in = detail::open_input(path);
    return read_predictions_csv(in);
}

/// Leading '#' lines are provenance comments; the readers skip them.
inline void write_comment(std::ostream& out, const std::string& text) { out << "# " << text << '\n'; }

inline void write_predictions_csv(std::ostream& out, const PredictionSet& ps) {
    out << "asset_id,week,prediction\n";
    for (const auto& p : ps.items) out << p.asset_id << ',' << p.week << ',' << detail::format_double(p.value) << '\n';
}

/// Writes the panel in the layout read_panel_csv expects by default.
inline void write_panel_csv(std::ostream& out, const Panel& panel) {
    out << "asset_id,week,ret";
    for (const auto& n : panel.char_names()) out << ',' << n;
    if (panel.has_market_cap()) out << ",mcap";
    out << '\n';
    for (std::size_t pos = 0; pos < panel.num_weeks(); ++pos) {
        for (const auto& row : panel.week_rows(pos)) {
            out << row.asset_id << ',' << row.week << ',' << detail::format_double(row.excess_return);
            for (double z : row.characteristics) out << ',' << detail::format_double(z);
            if (panel.has_market_cap()) out << ',' << (row.market_cap ? detail::format_double(*row.market_cap) : "");
            out << '\n';
        }
    }
}

/// Rows are weeks, columns characteristics; invalid cells are left empty.
inline void write_c_hat_csv(std::ostream& out, const CharPortfolioMatrix& c) {
    out << "week";
    for (const auto& n : c.char_names) out << ',' << n;
    out << '\n';
    for (Eigen::Index t = 0; t < c.values.rows(); ++t) {
        out << c.weeks[static_cast<std::size_t>(t)];
        for (Eigen::Index j = 0; j < c.values.cols(); ++j) {
            out << ',';
            if (c.valid(t, j)) out << detail::format_double(c.values(t, j));
        }
        out << '\n';
    }
}

// ---- Tables -------------------------------------------------------------
// Renderers read the JSON reports so a table never disagrees with its file.

class Table {
public:
    explicit Table(std::vector<std::string> header) : header_(std::move(header)) {}

    void add(std::vector<std::string> row) { rows_.push_back(std::move(row)); }

    std::string str() const {
        std::vector<std::size_t> width(header_.size(), 0);
        auto grow = [&](const std::vector<std::string>& r) {
            for (std::size_t i = 0; i < r.size() && i < width.size(); ++i) width[i] = std::max(width[i], r[i].size());
        };
        grow(header_);
        for (const auto& r : rows_) grow(r);
        std::ostringstream os;
        auto line = [&](const std::vector<std::string>& r) {
            for (std::size_t i = 0; i < width.size(); ++i) {
                const std::string cell = i < r.size() ? r[i] : "";
                if (i == 0) {
                    os << cell << std::string(width[i] - cell.size(), ' ');
                } else {
                    os << "  " << std::string(width[i] - cell.size(), ' ') << cell;
                }
            }
            os << '\n';
        };
        line(header_);
        std::size_t total = 0;
        for (auto w : width) total += w;
        os << std::string(total + 2 * (width.size() - 1), '-') << '\n';
        for (const auto& r : rows_) line(r);
        return os.str();
    }

private:
    std::vector<std::string> header_;
    std::vector<std::vector<std::string>> rows_;
};

inline std::string fmt(const json& v, int digits = 4) {
    if (v.is_null()) return "-";
    if (v.is_boolean()) return v.get<bool>() ? "yes" : "no";
    if (v.is_number_integer() || v.is_number_unsigned()) return std::to_string(v.get<long long>());
    if (v.is_string()) return v.get<std::string>();
    char buf[64];
    std::snprintf(buf, sizeof buf, "%.*f", digits, v.get<double>());
    return buf;
}

inline std::string stars_for_t(double t) {
    return std::string(static_cast<std::size_t>(significance_stars(std::abs(t))), '*');
}

inline std::string render_sim_table(const json& rep) {
    Table t({"estimand", "MSE", "Bias^2", "Var", "median rel. err"});
    for (const auto& [name, m] : rep.at("estimands").items()) {
        t.add({name, fmt(m.at("mse"), 6), fmt(m.at("bias2"), 6), fmt(m.at("var"), 6), fmt(m.at("median_rel_error"), 4)});
    }
    std::ostringstream os;
    os << t.str();
    os << "coverage of gamma_g = " << fmt(rep.at("gamma_g_true")) << ": 90% " << fmt(rep.at("coverage").at("90"), 3)
       << ", 95% " << fmt(rep.at("coverage").at("95"), 3) << "  (" << fmt(rep.at("S")) << " draws, "
       << fmt(rep.at("failures")) << " failed)\n";
    return os.str();
}

inline std::string render_premium_table(const json& est) {
    Table t({"factor", "gamma_g", "sigma_g", "CI low", "CI high", "t", "p", "T", "N"});
    t.add({fmt(est.at("factor")), fmt(est.at("gamma_g"), 6), fmt(est.at("sigma_g"), 6), fmt(est.at("ci")[0], 6),
           fmt(est.at("ci")[1], 6), fmt(est.at("tstat"), 3), fmt(est.at("pvalue"), 4), fmt(est.at("T")), fmt(est.at("N"))});
    return t.str();
}

inline std::string render_importance_table(const json& rep) {
    Table t({"characteristic", "W", "se", "z", ""});
    for (const auto& row : rep.at("characteristics")) {
        t.add({fmt(row.at("char")), fmt(row.at("W"), 6), fmt(row.at("se"), 6), row.at("z").is_null() ? "inf" : fmt(row.at("z"), 3),
               std::string(row.at("stars").get<std::size_t>(), '*')});
    }
    return t.str();
}

inline std::string render_fit_table(const json& fit) {
    std::ostringstream os;
    os << "k = " << fmt(fit.at("k")) << (fit.at("k_selected_by_ic").get<bool>() ? " (IC)" : "") << ", threshold "
       << fmt(fit.at("threshold").at("lambda"), 6) << " (" << fmt(fit.at("threshold").at("mode")) << "), "
       << fit.at("weeks").size() << " weeks\n";
    std::vector<std::string> header{"characteristic"};
    const auto& load = fit.at("thresholded_loadings");
    const std::size_t k = load.empty() ? 0 : load[0].size();
    for (std::size_t f = 0; f < k; ++f) header.push_back("f" + std::to_string(f + 1));
    Table t(header);
    const auto& names = fit.at("char_names");
    for (std::size_t j = 0; j < load.size(); ++j) {
        std::vector<std::string> row{names[j].get<std::string>()};
        for (std::size_t f = 0; f < k; ++f) row.push_back(fmt(load[j][f], 4));
        t.add(row);
    }
    os << t.str();
    return os.str();
}

/// Quintile means with stars, then 5-1 statistics, one row per strategy.
inline std::string render_backtest_table(const json& rep) {
    Table q({"strategy", "Q1", "Q2", "Q3", "Q4", "Q5", "5-1"});
    Table s({"strategy", "Sharpe", "Sortino", "turnover", "max DD", "alpha", "t(alpha)", "beta"});
    for (const auto& st : rep.at("strategies")) {
        std::vector<std::string> row{fmt(st.at("name"))};
        for (const auto& qi : st.at("quintiles")) row.push_back(fmt(qi.at("mean"), 5) + stars_for_t(qi.at("tstat").get<double>()));
        const auto& sp = st.at("spread");
        row.push_back(fmt(sp.at("mean"), 5) + stars_for_t(sp.at("t_mean").get<double>()));
        q.add(row);
        s.add({fmt(st.at("name")), fmt(sp.at("sharpe"), 3), fmt(sp.at("sortino"), 3), fmt(sp.at("turnover"), 3),
               fmt(sp.at("max_drawdown"), 3), fmt(sp.at("alpha"), 5) + stars_for_t(sp.at("t_alpha").get<double>()),
               fmt(sp.at("t_alpha"), 2), fmt(sp.at("beta"), 3)});
    }
    return q.str() + "\n" + s.str();
}

}  // namespace dslfm::io
