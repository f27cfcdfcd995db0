#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <limits>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "dslfm/errors.hpp"
#include "dslfm/factor_model.hpp"
#include "dslfm/panel.hpp"
#include "dslfm/parallel.hpp"
#include "dslfm/regress.hpp"

namespace dslfm {

enum class Weighting { value, equal };

struct Holding {
    std::string asset_id;
    int quintile = 0;      // 1..5
    double weight = 0.0;   // within-quintile weight
};

/// Weekly quintile returns sorted on predictions. Entry t is the return
/// realized after holdings formed from week-t predictions.
struct PortfolioSeries {
    Weighting weighting = Weighting::value;
    std::vector<Week> weeks;
    std::array<std::vector<double>, 5> quintile;
    std::vector<double> spread;                 // Q5 - Q1
    std::vector<std::vector<Holding>> holdings;  // per week
    std::vector<std::string> diagnostics;

    /// 5-1 weights: +w on Q5, -w on Q1.
    std::map<std::string, double> spread_weights(std::size_t t) const {
        std::map<std::string, double> w;
        for (const auto& h : holdings[t]) {
            if (h.quintile == 5) w[h.asset_id] += h.weight;
            if (h.quintile == 1) w[h.asset_id] -= h.weight;
        }
        return w;
    }
};

namespace detail {

struct SortItem {
    double score;
    const PanelRow* row;
};

// Quintile of rank r (1-based) among n: the smallest q with r <= ceil(q n / 5).
inline int quintile_of(std::size_t r, std::size_t n) {
    for (int q = 1; q <= 5; ++q) {
        if (r <= (static_cast<std::size_t>(q) * n + 4) / 5) return q;
    }
    return 5;
}

// Sorts one week's items and fills quintile returns and holdings.
inline bool sort_week(std::vector<SortItem>& items, Weighting weighting, std::array<double, 5>& ret,
                      std::vector<Holding>& holdings) {
    if (items.size() < 5) return false;
    std::sort(items.begin(), items.end(), [](const SortItem& a, const SortItem& b) {
        if (a.score != b.score) return a.score < b.score;
        return a.row->asset_id < b.row->asset_id;
    });
    const std::size_t n = items.size();
    std::array<double, 5> total{};
    std::vector<int> q(n);
    std::vector<double> raw(n);
    for (std::size_t r = 0; r < n; ++r) {
        q[r] = quintile_of(r + 1, n);
        if (weighting == Weighting::value) {
            if (!items[r].row->market_cap) {
                throw InputError("sort_quintiles: value weighting needs market_cap for asset '" + items[r].row->asset_id + "'");
            }
            raw[r] = *items[r].row->market_cap;
        } else {
            raw[r] = 1.0;
        }
        total[static_cast<std::size_t>(q[r] - 1)] += raw[r];
    }
    ret.fill(0.0);
    holdings.clear();
    for (std::size_t r = 0; r < n; ++r) {
        const auto qi = static_cast<std::size_t>(q[r] - 1);
        const double w = total[qi] > 0.0 ? raw[r] / total[qi] : 0.0;
        ret[qi] += w * items[r].row->excess_return;
        holdings.push_back({items[r].row->asset_id, q[r], w});
    }
    for (std::size_t qi = 0; qi < 5; ++qi) {
        if (!(total[qi] > 0.0)) throw InputError("sort_quintiles: a quintile has zero total market cap");
    }
    return true;
}

}  // namespace detail

/// Quintile sort on predicted returns. Ranks break ties by asset id; quintile
/// q holds ranks (ceil((q-1)N/5), ceil(qN/5)]. Weeks with fewer than 5
/// predicted assets are skipped with a diagnostic.
inline PortfolioSeries sort_quintiles(const PredictionSet& predictions, const Panel& panel, Weighting weighting) {
    std::map<Week, std::vector<detail::SortItem>> by_week;
    for (const auto& pr : predictions.items) {
        const PanelRow* row = panel.find(pr.week, pr.asset_id);
        if (row) by_week[pr.week].push_back({pr.value, row});
    }
    PortfolioSeries out;
    out.weighting = weighting;
    for (auto& [week, items] : by_week) {
        std::array<double, 5> ret{};
        std::vector<Holding> holdings;
        if (!detail::sort_week(items, weighting, ret, holdings)) {
            out.diagnostics.push_back("week " + std::to_string(week) + " skipped: " + std::to_string(items.size()) +
                                      " predicted asset(s), need 5");
            continue;
        }
        out.weeks.push_back(week);
        for (std::size_t q = 0; q < 5; ++q) out.quintile[q].push_back(ret[q]);
        out.spread.push_back(ret[4] - ret[0]);
        out.holdings.push_back(std::move(holdings));
    }
    return out;
}

struct PerfStats {
    std::size_t n_weeks = 0;
    double mean = 0.0;
    double sd = 0.0;
    double sharpe = 0.0;                // annualized, sqrt(52)
    std::optional<double> sortino;      // unset when there is no downside
    std::optional<double> turnover;     // mean weekly sum |dw| / 2
    double max_drawdown = 0.0;
    double alpha = 0.0;
    double beta = 0.0;
    double t_mean = 0.0;                // Newey-West
    double t_alpha = 0.0;
    int nw_lags = 0;
};

/// Mean weekly one-way turnover sum_i |w_t,i - w_{t-1},i| / 2.
inline double turnover(const PortfolioSeries& series) {
    if (series.holdings.size() < 2) return 0.0;
    double sum = 0.0;
    for (std::size_t t = 1; t < series.holdings.size(); ++t) {
        auto prev = series.spread_weights(t - 1);
        const auto cur = series.spread_weights(t);
        double moved = 0.0;
        for (const auto& [id, w] : cur) {
            auto it = prev.find(id);
            moved += std::abs(w - (it == prev.end() ? 0.0 : it->second));
            if (it != prev.end()) prev.erase(it);
        }
        for (const auto& [id, w] : prev) moved += std::abs(w);
        sum += moved / 2.0;
    }
    return sum / static_cast<double>(series.holdings.size() - 1);
}

/// Largest peak-to-trough loss of the compounded path starting at 1,
/// clamped to [0, 1].
inline double max_drawdown(std::span<const double> returns) {
    double level = 1.0;
    double peak = 1.0;
    double worst = 0.0;
    for (double r : returns) {
        level *= 1.0 + r;
        peak = std::max(peak, level);
        worst = std::max(worst, 1.0 - level / peak);
    }
    return std::clamp(worst, 0.0, 1.0);
}

/// Performance of a weekly excess-return series against a market series of
/// the same length.
inline PerfStats perf_stats(std::span<const double> returns, std::span<const double> market,
                            std::optional<int> nw_lags = std::nullopt) {
    const std::size_t t = returns.size();
    if (t < 8) throw InputError("perf_stats: need at least 8 weeks, got " + std::to_string(t));
    if (market.size() != t) throw InputError("perf_stats: market series length differs from the strategy");
    PerfStats s;
    s.n_weeks = t;
    const double n = static_cast<double>(t);
    s.mean = mean_of(returns);
    s.sd = sample_sd(returns);
    if (!(s.sd > 1e-14 * std::max(1.0, std::abs(s.mean)))) throw DegenerateError("perf_stats: strategy returns have zero variance");
    s.sharpe = s.mean / s.sd * std::sqrt(52.0);
    double down = 0.0;
    for (double r : returns) down += r < 0.0 ? r * r : 0.0;
    down = std::sqrt(down / n);
    if (down > 0.0) s.sortino = s.mean / down * std::sqrt(52.0);
    s.max_drawdown = max_drawdown(returns);

    Eigen::MatrixXd x(static_cast<Eigen::Index>(t), 2);
    Eigen::VectorXd y(static_cast<Eigen::Index>(t));
    for (std::size_t i = 0; i < t; ++i) {
        x(static_cast<Eigen::Index>(i), 0) = 1.0;
        x(static_cast<Eigen::Index>(i), 1) = market[i];
        y(static_cast<Eigen::Index>(i)) = returns[i];
    }
    const auto ols = ols_fit(x, y);
    s.alpha = ols.coef(0);
    s.beta = ols.coef(1);

    const auto nw = newey_west(returns, nw_lags);
    s.t_mean = nw.tstat;
    s.nw_lags = nw.lags;
    std::vector<double> hedged(t);
    for (std::size_t i = 0; i < t; ++i) hedged[i] = returns[i] - s.beta * market[i];
    try {
        s.t_alpha = newey_west(hedged, nw_lags).tstat;
    } catch (const DegenerateError&) {
        s.t_alpha = 0.0;  // strategy is an exact multiple of the market plus a constant
    }
    return s;
}

inline PerfStats perf_stats(const PortfolioSeries& series, std::span<const double> market,
                            std::optional<int> nw_lags = std::nullopt) {
    PerfStats s = perf_stats(series.spread, market, nw_lags);
    s.turnover = turnover(series);
    return s;
}

/// Value- (or equal-) weighted average return of every panel asset in each
/// requested week; the market series for alpha and beta.
inline std::vector<double> market_returns(const Panel& panel, const std::vector<Week>& weeks, Weighting weighting) {
    std::vector<double> out;
    for (Week w : weeks) {
        const auto pos = panel.week_position(w);
        if (!pos) throw InputError("market_returns: week " + std::to_string(w) + " not in panel");
        double num = 0.0, den = 0.0;
        for (const auto& row : panel.week_rows(*pos)) {
            double wt = 1.0;
            if (weighting == Weighting::value) {
                if (!row.market_cap) throw InputError("market_returns: value weighting needs market_cap");
                wt = *row.market_cap;
            }
            num += wt * row.excess_return;
            den += wt;
        }
        out.push_back(den > 0.0 ? num / den : 0.0);
    }
    return out;
}

/// Statistical-factor benchmark. Every refit_every weeks starting at position
/// min_train, the assets observed in all prior weeks form a T_in x N_in
/// return matrix; its first k principal components give factors, per-asset
/// no-intercept OLS gives static loadings, and predictions for the next block
/// are loadings times the in-sample mean factor.
inline PredictionSet pca_benchmark(const Panel& panel, int k, int refit_every, int min_train) {
    if (k < 1) throw InputError("pca_benchmark: k must be >= 1");
    if (refit_every < 1) throw InputError("pca_benchmark: refit_every must be >= 1");
    if (min_train < 1) throw InputError("pca_benchmark: min_train must be >= 1");
    PredictionSet out;
    out.window = 0;
    const auto t_all = static_cast<int>(panel.num_weeks());
    for (int start = min_train; start < t_all; start += refit_every) {
        std::map<std::string, int> seen;
        for (int pos = 0; pos < start; ++pos) {
            for (const auto& row : panel.week_rows(static_cast<std::size_t>(pos))) ++seen[row.asset_id];
        }
        std::vector<std::string> assets;
        for (const auto& [id, n] : seen) {
            if (n == start) assets.push_back(id);
        }
        if (assets.empty() || start < k + 1) continue;
        if (static_cast<std::size_t>(k) >= assets.size()) {
            throw RankError("pca_benchmark: k = " + std::to_string(k) + " needs more than " + std::to_string(assets.size()) +
                            " balanced in-sample assets");
        }
        std::map<std::string, Eigen::Index> col;
        for (std::size_t i = 0; i < assets.size(); ++i) col[assets[i]] = static_cast<Eigen::Index>(i);
        Eigen::MatrixXd r(start, static_cast<Eigen::Index>(assets.size()));
        for (int pos = 0; pos < start; ++pos) {
            for (const auto& row : panel.week_rows(static_cast<std::size_t>(pos))) {
                auto it = col.find(row.asset_id);
                if (it != col.end()) r(pos, it->second) = row.excess_return;
            }
        }
        PcaResult pca;
        try {
            pca = pca_decompose(r, k);
        } catch (const RankError&) {
            continue;
        }
        // F'F / T = I, so the per-asset OLS loadings are R'F / T
        const Eigen::MatrixXd b = r.transpose() * pca.factors / static_cast<double>(start);  // N_in x k
        const Eigen::VectorXd lambda = pca.factors.colwise().mean().transpose();
        const Eigen::VectorXd pred = b * lambda;
        const int stop = std::min(start + refit_every, t_all);
        for (int pos = start; pos < stop; ++pos) {
            for (const auto& row : panel.week_rows(static_cast<std::size_t>(pos))) {
                auto it = col.find(row.asset_id);
                if (it != col.end()) out.items.push_back({row.asset_id, panel.weeks()[static_cast<std::size_t>(pos)], pred(it->second)});
            }
        }
    }
    return out;
}

struct ObservableModel {
    std::vector<std::size_t> chars;  // characteristic indices
    double validation_r2 = 0.0;
};

struct ObservableBenchmark {
    std::vector<ObservableModel> best;      // best model of each size
    std::vector<PredictionSet> predictions;  // test-window predictions per winner
    std::vector<Week> factor_weeks;
    Eigen::MatrixXd factors;                 // weeks x candidates, Q5 - Q1 characteristic-sorted returns
    std::vector<std::size_t> candidates;
    std::vector<std::string> diagnostics;
};

struct ObservableBenchmarkOptions {
    std::vector<std::size_t> candidates;  // empty: all characteristics
    Week selection_from = 0;
    Week selection_to = 0;
    Week test_from = 0;
    Week test_to = 0;
    int max_size = 3;
    Weighting weighting = Weighting::value;
};

inline constexpr std::size_t kMaxObservableCandidates = 70;

namespace detail {

// Sums for per-asset regressions of returns on candidate factors.
struct AssetMoments {
    Eigen::MatrixXd ff;     // sum f f'
    Eigen::VectorXd fr;     // sum f r
    int n = 0;
};

inline void combinations(std::size_t n, std::size_t m, std::size_t start, std::vector<std::size_t>& cur,
                         std::vector<std::vector<std::size_t>>& out) {
    if (cur.size() == m) {
        out.push_back(cur);
        return;
    }
    for (std::size_t i = start; i < n; ++i) {
        cur.push_back(i);
        combinations(n, m, i + 1, cur, out);
        cur.pop_back();
    }
}

}  // namespace detail

/// Observable-factor benchmark: long-short quintile factors on single
/// characteristics, every 1..max_size combination scored by predictive R^2
/// over the selection window (fit on earlier weeks), winners refit on all
/// weeks before the test window and used to predict it.
inline ObservableBenchmark observable_factor_benchmark(const Panel& panel, const ObservableBenchmarkOptions& opts,
                                                       const Executor& exec = serial_executor()) {
    if (opts.selection_from > opts.selection_to || opts.test_from > opts.test_to) {
        throw InputError("observable benchmark: empty window");
    }
    if (!(opts.selection_to < opts.test_from || opts.test_to < opts.selection_from)) {
        throw InputError("observable benchmark: selection and test windows overlap");
    }
    if (opts.max_size < 1) throw InputError("observable benchmark: max_size must be >= 1");
    ObservableBenchmark out;
    if (opts.candidates.empty()) {
        for (std::size_t j = 0; j < panel.num_chars(); ++j) out.candidates.push_back(j);
    } else {
        out.candidates = opts.candidates;
    }
    if (out.candidates.empty()) throw InputError("observable benchmark: candidate set is empty");
    if (out.candidates.size() > kMaxObservableCandidates) {
        throw InputError("observable benchmark: at most " + std::to_string(kMaxObservableCandidates) + " candidate characteristics");
    }
    for (auto j : out.candidates) {
        if (j >= panel.num_chars()) throw InputError("observable benchmark: candidate index out of range");
    }
    const std::size_t m = out.candidates.size();

    // characteristic factors per week
    out.factor_weeks = panel.weeks();
    out.factors = Eigen::MatrixXd::Zero(static_cast<Eigen::Index>(panel.num_weeks()), static_cast<Eigen::Index>(m));
    std::vector<bool> week_ok(panel.num_weeks(), true);
    for (std::size_t pos = 0; pos < panel.num_weeks(); ++pos) {
        for (std::size_t c = 0; c < m; ++c) {
            std::vector<detail::SortItem> items;
            for (const auto& row : panel.week_rows(pos)) items.push_back({row.characteristics[out.candidates[c]], &row});
            std::array<double, 5> ret{};
            std::vector<Holding> holdings;
            if (!detail::sort_week(items, opts.weighting, ret, holdings)) {
                week_ok[pos] = false;
                break;
            }
            out.factors(static_cast<Eigen::Index>(pos), static_cast<Eigen::Index>(c)) = ret[4] - ret[0];
        }
        if (!week_ok[pos]) out.diagnostics.push_back("week " + std::to_string(panel.weeks()[pos]) + " has fewer than 5 assets; no factor");
    }

    auto moments = [&](Week before) {
        std::map<std::string, detail::AssetMoments> acc;
        for (std::size_t pos = 0; pos < panel.num_weeks(); ++pos) {
            if (panel.weeks()[pos] >= before || !week_ok[pos]) continue;
            const Eigen::VectorXd f = out.factors.row(static_cast<Eigen::Index>(pos)).transpose();
            for (const auto& row : panel.week_rows(pos)) {
                auto& a = acc[row.asset_id];
                if (a.n == 0) {
                    a.ff = Eigen::MatrixXd::Zero(static_cast<Eigen::Index>(m), static_cast<Eigen::Index>(m));
                    a.fr = Eigen::VectorXd::Zero(static_cast<Eigen::Index>(m));
                }
                a.ff.noalias() += f * f.transpose();
                a.fr += f * row.excess_return;
                ++a.n;
            }
        }
        return acc;
    };
    auto factor_mean = [&](Week before) {
        Eigen::VectorXd s = Eigen::VectorXd::Zero(static_cast<Eigen::Index>(m));
        int n = 0;
        for (std::size_t pos = 0; pos < panel.num_weeks(); ++pos) {
            if (panel.weeks()[pos] >= before || !week_ok[pos]) continue;
            s += out.factors.row(static_cast<Eigen::Index>(pos)).transpose();
            ++n;
        }
        if (n == 0) throw InputError("observable benchmark: no usable weeks before week " + std::to_string(before));
        return Eigen::VectorXd(s / n);
    };
    // per-asset loading on a subset of factors, or nullopt when underdetermined
    auto predict = [&](const detail::AssetMoments& a, const std::vector<std::size_t>& sub,
                       const Eigen::VectorXd& mean) -> std::optional<double> {
        const auto d = static_cast<Eigen::Index>(sub.size());
        if (a.n <= d) return std::nullopt;
        Eigen::MatrixXd ff(d, d);
        Eigen::VectorXd fr(d), mu(d);
        for (Eigen::Index i = 0; i < d; ++i) {
            fr(i) = a.fr(static_cast<Eigen::Index>(sub[static_cast<std::size_t>(i)]));
            mu(i) = mean(static_cast<Eigen::Index>(sub[static_cast<std::size_t>(i)]));
            for (Eigen::Index j = 0; j < d; ++j) {
                ff(i, j) = a.ff(static_cast<Eigen::Index>(sub[static_cast<std::size_t>(i)]), static_cast<Eigen::Index>(sub[static_cast<std::size_t>(j)]));
            }
        }
        Eigen::CompleteOrthogonalDecomposition<Eigen::MatrixXd> cod(ff);
        return mu.dot(cod.solve(fr));
    };

    // validation sums per asset: n, sum r, sum r^2
    struct ValSums {
        double n = 0.0, s = 0.0, ss = 0.0;
    };
    std::map<std::string, ValSums> val;
    for (std::size_t pos = 0; pos < panel.num_weeks(); ++pos) {
        const Week w = panel.weeks()[pos];
        if (w < opts.selection_from || w > opts.selection_to) continue;
        for (const auto& row : panel.week_rows(pos)) {
            auto& v = val[row.asset_id];
            v.n += 1.0;
            v.s += row.excess_return;
            v.ss += row.excess_return * row.excess_return;
        }
    }
    if (val.empty()) throw InputError("observable benchmark: selection window has no observations");
    const auto sel_moments = moments(opts.selection_from);
    const Eigen::VectorXd sel_mean = factor_mean(opts.selection_from);
    std::vector<std::pair<const ValSums*, const detail::AssetMoments*>> pairs;
    for (const auto& [id, v] : val) {
        auto it = sel_moments.find(id);
        pairs.push_back({&v, it == sel_moments.end() ? nullptr : &it->second});
    }

    const auto test_moments = moments(opts.test_from);
    const Eigen::VectorXd test_mean = factor_mean(opts.test_from);
    const int max_size = std::min<int>(opts.max_size, static_cast<int>(m));
    for (int size = 1; size <= max_size; ++size) {
        std::vector<std::vector<std::size_t>> models;
        std::vector<std::size_t> cur;
        detail::combinations(m, static_cast<std::size_t>(size), 0, cur, models);
        const auto scores = exec.map<double>(models.size(), [&](std::size_t i) {
            double sse = 0.0, sst = 0.0;
            for (const auto& [v, a] : pairs) {
                std::optional<double> pr;
                if (a) pr = predict(*a, models[i], sel_mean);
                const double yhat = pr.value_or(0.0);
                sse += v->ss - 2.0 * yhat * v->s + v->n * yhat * yhat;
                sst += v->ss;
            }
            return sst > 0.0 ? 1.0 - sse / sst : -std::numeric_limits<double>::infinity();
        });
        std::size_t best = 0;
        for (std::size_t i = 1; i < scores.size(); ++i) {
            if (scores[i] > scores[best]) best = i;
        }
        ObservableModel model;
        for (auto c : models[best]) model.chars.push_back(out.candidates[c]);
        model.validation_r2 = scores[best];
        out.best.push_back(model);

        PredictionSet ps;
        ps.window = 0;
        for (std::size_t pos = 0; pos < panel.num_weeks(); ++pos) {
            const Week w = panel.weeks()[pos];
            if (w < opts.test_from || w > opts.test_to) continue;
            for (const auto& row : panel.week_rows(pos)) {
                auto it = test_moments.find(row.asset_id);
                if (it == test_moments.end()) continue;
                if (auto pr = predict(it->second, models[best], test_mean)) ps.items.push_back({row.asset_id, w, *pr});
            }
        }
        out.predictions.push_back(std::move(ps));
    }
    return out;
}

}  // namespace dslfm
