#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <limits>
#include <random>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "dslfm/dsl.hpp"
#include "dslfm/errors.hpp"
#include "dslfm/factor_model.hpp"
#include "dslfm/panel.hpp"
#include "dslfm/parallel.hpp"
#include "dslfm/risk_premium.hpp"
#include "dslfm/stats.hpp"

namespace dslfm {

/// 1 - sum (r - r_hat)^2 / sum r^2 over cells present in both.
inline double predictive_r2(const PredictionSet& predictions, const Panel& panel) {
    double sse = 0.0;
    double sst = 0.0;
    std::size_t overlap = 0;
    for (const auto& pr : predictions.items) {
        const PanelRow* row = panel.find(pr.week, pr.asset_id);
        if (!row) continue;
        const double e = row->excess_return - pr.value;
        sse += e * e;
        sst += row->excess_return * row->excess_return;
        ++overlap;
    }
    if (overlap == 0) throw InputError("predictive_r2: predictions and panel share no (asset, week) cell");
    if (!(sst > 0.0)) throw DegenerateError("predictive_r2: realized returns are all zero");
    return 1.0 - sse / sst;
}

inline int significance_stars(double z) {
    if (z > normal_quantile(0.995)) return 3;
    if (z > normal_quantile(0.975)) return 2;
    if (z > normal_quantile(0.95)) return 1;
    return 0;
}

/// W_j = Gamma_check_j' Gamma_check_j with bootstrap standard errors.
struct CharImportanceReport {
    std::vector<std::string> char_names;
    std::vector<double> W;
    std::vector<double> se;
    std::vector<double> z;
    std::vector<int> stars;  // 0..3 for insignificant, 10%, 5%, 1%
    int B = 0;
    std::size_t draws_used = 0;
    std::size_t degenerate_draws = 0;
    std::vector<std::string> warnings;
};

inline Eigen::VectorXd importance_weights(const Eigen::MatrixXd& gamma_check) {
    return gamma_check.rowwise().squaredNorm();
}

/// Week-resampled panel: draw T weeks with replacement and relabel them
/// 0..T-1 so repeated weeks stay distinct cross-sections.
inline Panel resample_weeks(const Panel& panel, std::mt19937_64& rng) {
    const std::size_t t = panel.num_weeks();
    std::uniform_int_distribution<std::size_t> pick(0, t - 1);
    std::vector<PanelRow> rows;
    rows.reserve(panel.num_rows());
    for (std::size_t b = 0; b < t; ++b) {
        const std::size_t pos = pick(rng);
        for (const auto& row : panel.week_rows(pos)) {
            PanelRow copy = row;
            copy.week = static_cast<Week>(b);
            rows.push_back(std::move(copy));
        }
    }
    return Panel::from_rows(panel.char_names(), std::move(rows));
}

/// Point estimates from the full-sample fit; standard errors from B week
/// bootstrap refits of the whole pipeline, each with its own derived seed.
inline CharImportanceReport char_importance(const Panel& panel, const DslConfig& dsl, const FitOptions& opts, int B,
                                            std::uint64_t seed, const Executor& exec = serial_executor()) {
    if (B < 2) throw InputError("char_importance: B must be >= 2");
    DslConfig base = dsl;
    base.seed = seed;
    const auto fit = fit_dslfm(panel, base, opts, exec);
    const Eigen::VectorXd w = importance_weights(fit.thresholded);

    struct Draw {
        bool ok = false;
        bool degenerate = false;
        Eigen::VectorXd w;
        std::string error;
    };
    const auto draws = exec.map<Draw>(static_cast<std::size_t>(B), [&](std::size_t b) {
        Draw d;
        const std::uint64_t draw_seed = derive_seed(seed, 0xb00u, static_cast<std::uint64_t>(b));
        std::mt19937_64 rng(draw_seed);
        try {
            const Panel boot = resample_weeks(panel, rng);
            DslConfig cfg = dsl;
            cfg.seed = draw_seed;
            const auto f = fit_dslfm(boot, cfg, opts);
            d.w = importance_weights(f.thresholded);
            d.degenerate = f.thresholded.isZero(0.0);
            d.ok = true;
        } catch (const Error& e) {
            d.error = e.what();
        }
        return d;
    });

    CharImportanceReport rep;
    rep.char_names = panel.char_names();
    rep.B = B;
    std::vector<Eigen::VectorXd> ok;
    std::size_t failed = 0;
    for (const auto& d : draws) {
        if (!d.ok) {
            ++failed;
            continue;
        }
        ok.push_back(d.w);
        if (d.degenerate) ++rep.degenerate_draws;
    }
    rep.draws_used = ok.size();
    if (ok.size() < 2) throw EstimationError("char_importance: fewer than 2 bootstrap draws succeeded");
    if (rep.degenerate_draws == ok.size()) {
        throw DegenerateError("char_importance: every bootstrap draw thresholded all loadings to zero");
    }
    if (B < 30) rep.warnings.push_back("small bootstrap (B = " + std::to_string(B) + "); standard errors are unreliable");
    if (failed > 0) rep.warnings.push_back(std::to_string(failed) + " bootstrap draw(s) failed and were excluded");
    if (rep.degenerate_draws > 0) {
        rep.warnings.push_back(std::to_string(rep.degenerate_draws) + " bootstrap draw(s) had all loadings thresholded to zero");
    }
    for (const auto& msg : fit.warnings) rep.warnings.push_back("full-sample fit: " + msg);

    for (Eigen::Index j = 0; j < w.size(); ++j) {
        std::vector<double> vals;
        vals.reserve(ok.size());
        for (const auto& v : ok) vals.push_back(v(j));
        const double se = sample_sd(vals);
        double z = 0.0;
        if (se > 0.0) {
            z = w(j) / se;
        } else if (w(j) > 0.0) {
            z = std::numeric_limits<double>::infinity();
        }
        rep.W.push_back(w(j));
        rep.se.push_back(se);
        rep.z.push_back(z);
        rep.stars.push_back(significance_stars(z));
    }
    return rep;
}

struct RpTest {
    double tstat = 0.0;
    double pvalue = 1.0;
    bool reject10 = false;
    bool reject05 = false;
    bool reject01 = false;
};

/// Normal test of H0: gamma_g = 0 with t = sqrt(T) gamma_g / sigma_g.
inline RpTest rp_test(const RiskPremiumEstimate& est) {
    if (!(est.sigma_g > 0.0)) throw DegenerateError("rp_test: sigma_g is zero; the test statistic is undefined");
    RpTest out;
    out.tstat = std::sqrt(static_cast<double>(est.T)) * est.gamma_g / est.sigma_g;
    out.pvalue = two_sided_pvalue(out.tstat);
    out.reject10 = out.pvalue < 0.10;
    out.reject05 = out.pvalue < 0.05;
    out.reject01 = out.pvalue < 0.01;
    return out;
}

}  // namespace dslfm
