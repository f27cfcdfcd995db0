#pragma once

#include <algorithm>
#include <cmath>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "dslfm/errors.hpp"
#include "dslfm/factor_model.hpp"
#include "dslfm/panel.hpp"
#include "dslfm/regress.hpp"
#include "dslfm/stats.hpp"

namespace dslfm {

/// Observable factor g_{t+1}, keyed by the panel's week label: the value for
/// week t is realized over the same interval as the returns stored at t.
struct ObservableFactorSeries {
    std::string name;
    std::vector<Week> weeks;
    std::vector<double> values;

    std::optional<double> at(Week w) const {
        auto it = std::lower_bound(weeks.begin(), weeks.end(), w);
        if (it == weeks.end() || *it != w) return std::nullopt;
        return values[static_cast<std::size_t>(it - weeks.begin())];
    }

    void validate() const {
        if (weeks.size() != values.size()) throw InputError("factor series '" + name + "': weeks and values differ in length");
        for (std::size_t i = 0; i < values.size(); ++i) {
            if (!std::isfinite(values[i])) throw InputError("factor series '" + name + "': non-finite value at week " + std::to_string(weeks[i]));
            if (i > 0 && weeks[i] <= weeks[i - 1]) throw InputError("factor series '" + name + "': weeks must be strictly increasing");
        }
    }
};

struct RiskPremiumOptions {
    double alpha = 0.05;
    std::optional<int> nw_lags = 0;  // lag window for the Phi blocks; nullopt selects automatically
    double min_coverage = 0.25;      // share of weeks an asset needs to enter the cross-sectional pass
};

struct RiskPremiumEstimate {
    std::string factor_name;
    double gamma_g = 0.0;
    double sigma_g = 0.0;
    double sigma2_raw = 0.0;  // before clipping at zero
    double ci_lo = 0.0;
    double ci_hi = 0.0;
    double tstat = 0.0;
    double pvalue = 1.0;
    double alpha = 0.05;
    Eigen::VectorXd gamma;
    Eigen::VectorXd eta;
    Eigen::MatrixXd V_hat;
    Eigen::MatrixXd Gamma_D;  // thresholded loadings of the demeaned matrix
    std::vector<Week> weeks;
    std::size_t T = 0;
    std::size_t N = 0;
    int nw_lags = 0;
    std::vector<std::string> warnings;
};

/// Ĉ minus its column means.
inline Eigen::MatrixXd demean_char_portfolios(const Eigen::MatrixXd& c) {
    if (c.rows() < 2) throw InputError("demean_char_portfolios: need at least 2 rows");
    return c.rowwise() - c.colwise().mean();
}

struct Innovations {
    Eigen::MatrixXd V_hat;    // T x k
    Eigen::MatrixXd Gamma_D;  // p x k, before thresholding
    Eigen::VectorXd eigvals;
};

inline Innovations estimate_innovations(const Eigen::MatrixXd& c_demeaned, int k) {
    auto pca = pca_decompose(c_demeaned, k);
    return {std::move(pca.factors), std::move(pca.loadings), std::move(pca.eigvals)};
}

/// Time averages feeding the cross-sectional pass plus the per-week moment
/// matrices M_t = N^{-1} sum_i zbar_i z_{i,t}' behind Pi_t.
struct PremiumCrossSection {
    std::vector<std::string> assets;
    Eigen::MatrixXd z_bar;  // N x p
    Eigen::VectorXd r_bar;  // N
    std::vector<Eigen::MatrixXd> moments;  // one p x p matrix per week
    std::size_t dropped_assets = 0;
};

inline PremiumCrossSection premium_cross_section(const Panel& panel, const std::vector<Week>& weeks,
                                                 double min_coverage = 0.25) {
    if (weeks.empty()) throw InputError("premium_cross_section: no weeks");
    const auto p = static_cast<Eigen::Index>(panel.num_chars());
    struct Acc {
        Eigen::VectorXd z;
        double r = 0.0;
        std::size_t count = 0;
    };
    std::map<std::string, Acc> acc;
    std::vector<std::size_t> positions;
    for (Week w : weeks) {
        const auto pos = panel.week_position(w);
        if (!pos) throw InputError("premium_cross_section: week " + std::to_string(w) + " not in panel");
        positions.push_back(*pos);
        for (const auto& row : panel.week_rows(*pos)) {
            auto& a = acc[row.asset_id];
            if (a.count == 0) a.z = Eigen::VectorXd::Zero(p);
            a.z += Eigen::Map<const Eigen::VectorXd>(row.characteristics.data(), p);
            a.r += row.excess_return;
            ++a.count;
        }
    }
    const double need = min_coverage * static_cast<double>(weeks.size());
    PremiumCrossSection cs;
    std::map<std::string, Eigen::Index> index;
    for (const auto& [id, a] : acc) {
        if (static_cast<double>(a.count) + 1e-12 >= need) {
            index[id] = static_cast<Eigen::Index>(cs.assets.size());
            cs.assets.push_back(id);
        } else {
            ++cs.dropped_assets;
        }
    }
    if (cs.assets.empty()) throw EstimationError("premium_cross_section: no asset meets the coverage requirement");
    const auto n = static_cast<Eigen::Index>(cs.assets.size());
    cs.z_bar.resize(n, p);
    cs.r_bar.resize(n);
    for (const auto& [id, i] : index) {
        const auto& a = acc.at(id);
        cs.z_bar.row(i) = a.z.transpose() / static_cast<double>(a.count);
        cs.r_bar(i) = a.r / static_cast<double>(a.count);
    }
    for (std::size_t pos : positions) {
        Eigen::MatrixXd m = Eigen::MatrixXd::Zero(p, p);
        for (const auto& row : panel.week_rows(pos)) {
            auto it = index.find(row.asset_id);
            if (it == index.end()) continue;
            m.noalias() += cs.z_bar.row(it->second).transpose() *
                           Eigen::Map<const Eigen::RowVectorXd>(row.characteristics.data(), p);
        }
        cs.moments.push_back(m / static_cast<double>(n));
    }
    return cs;
}

namespace detail {

// Columns whose addition does not raise the rank of the leading block.
inline std::vector<Eigen::Index> dependent_columns(const Eigen::MatrixXd& x) {
    std::vector<Eigen::Index> bad;
    Eigen::MatrixXd kept(x.rows(), 0);
    for (Eigen::Index j = 0; j < x.cols(); ++j) {
        Eigen::MatrixXd trial(x.rows(), kept.cols() + 1);
        trial << kept, x.col(j);
        Eigen::ColPivHouseholderQR<Eigen::MatrixXd> qr(trial);
        if (qr.rank() == trial.cols()) {
            kept = trial;
        } else {
            bad.push_back(j);
        }
    }
    return bad;
}

inline std::string join_indices(const std::vector<Eigen::Index>& idx) {
    std::string s;
    for (std::size_t i = 0; i < idx.size(); ++i) s += (i ? ", " : "") + std::to_string(idx[i]);
    return s;
}

inline void require_full_rank(const Eigen::MatrixXd& x, const std::string& what) {
    Eigen::ColPivHouseholderQR<Eigen::MatrixXd> qr(x);
    if (qr.rank() < x.cols()) {
        throw RankError(what + " is rank deficient; dependent factor column(s): " + join_indices(dependent_columns(x)));
    }
}

}  // namespace detail

/// Cross-sectional OLS of average returns on average betas Zbar Gamma (no
/// intercept).
inline Eigen::VectorXd estimate_gamma(const Eigen::MatrixXd& z_bar, const Eigen::VectorXd& r_bar,
                                      const Eigen::MatrixXd& gamma_check) {
    const Eigen::MatrixXd beta_bar = z_bar * gamma_check;
    detail::require_full_rank(beta_bar, "estimate_gamma: average beta matrix");
    return ols_fit(beta_bar, r_bar).coef;
}

/// Time-series OLS of g on the innovations (no intercept).
inline Eigen::VectorXd estimate_eta(const Eigen::MatrixXd& v_hat, const Eigen::VectorXd& g) {
    if (v_hat.rows() != g.size()) throw InputError("estimate_eta: V_hat and g lengths differ");
    detail::require_full_rank(v_hat, "estimate_eta: V_hat");
    return ols_fit(v_hat, g).coef;
}

struct SigmaG {
    double sigma = 0.0;
    double sigma2 = 0.0;  // unclipped
    bool clipped = false;
    int lags = 0;
};

/// Plug-in delta-method variance of gamma_g. Phi is the long-run covariance
/// of u_t = (v_t eps_t, Pi_t v_t) with Bartlett weights; lags = 0 gives the
/// contemporaneous plug-in.
inline SigmaG plug_in_sigma_g(const Eigen::MatrixXd& v_hat, const Eigen::VectorXd& g, const Eigen::VectorXd& eta,
                              const Eigen::VectorXd& gamma, const Eigen::MatrixXd& b_hat,
                              const std::vector<Eigen::MatrixXd>& pi, std::optional<int> lags = 0) {
    const Eigen::Index t = v_hat.rows();
    const Eigen::Index k = v_hat.cols();
    if (g.size() != t || static_cast<Eigen::Index>(pi.size()) != t) throw InputError("plug_in_sigma_g: length mismatch");
    if (eta.size() != k || gamma.size() != k || b_hat.rows() != k || b_hat.cols() != k) {
        throw InputError("plug_in_sigma_g: dimension mismatch");
    }
    const double tt = static_cast<double>(t);
    const Eigen::MatrixXd a_hat = v_hat.transpose() * v_hat / tt;
    detail::require_full_rank(a_hat, "plug_in_sigma_g: A");
    detail::require_full_rank(b_hat, "plug_in_sigma_g: B");

    const Eigen::VectorXd eps = g - v_hat * eta;
    Eigen::MatrixXd u(t, 2 * k);
    for (Eigen::Index s = 0; s < t; ++s) {
        const Eigen::VectorXd v = v_hat.row(s).transpose();
        u.row(s).head(k) = (v * eps(s)).transpose();
        u.row(s).tail(k) = (pi[static_cast<std::size_t>(s)] * v).transpose();
    }
    const int l = lags ? *lags : newey_west_auto_lags(static_cast<std::size_t>(t));
    if (l < 0 || l >= t) throw InputError("plug_in_sigma_g: lags must be in [0, T)");
    Eigen::MatrixXd phi = u.transpose() * u / tt;
    for (int lag = 1; lag <= l; ++lag) {
        const double w = 1.0 - static_cast<double>(lag) / static_cast<double>(l + 1);
        const Eigen::MatrixXd gl = u.bottomRows(t - lag).transpose() * u.topRows(t - lag) / tt;
        phi += w * (gl + gl.transpose());
    }
    Eigen::VectorXd w(2 * k);
    w.head(k) = a_hat.transpose().colPivHouseholderQr().solve(gamma);
    w.tail(k) = b_hat.transpose().colPivHouseholderQr().solve(eta);
    SigmaG out;
    out.lags = l;
    out.sigma2 = w.dot(phi * w);
    out.clipped = out.sigma2 < 0.0;
    out.sigma = std::sqrt(std::max(out.sigma2, 0.0));
    return out;
}

/// Second and third passes given innovations and thresholded loadings of the
/// demeaned matrix.
inline RiskPremiumEstimate estimate_risk_premium(const Eigen::MatrixXd& v_hat, const Eigen::MatrixXd& gamma_check_d,
                                                 const Eigen::VectorXd& g, const PremiumCrossSection& cs,
                                                 const RiskPremiumOptions& opts = {}) {
    if (!(opts.alpha > 0.0 && opts.alpha < 1.0)) throw InputError("risk_premium: alpha must be in (0, 1)");
    if (static_cast<Eigen::Index>(cs.moments.size()) != v_hat.rows()) throw InputError("risk_premium: week count mismatch");
    RiskPremiumEstimate est;
    est.alpha = opts.alpha;
    est.T = static_cast<std::size_t>(v_hat.rows());
    est.N = cs.assets.size();
    est.V_hat = v_hat;
    est.Gamma_D = gamma_check_d;
    est.gamma = estimate_gamma(cs.z_bar, cs.r_bar, gamma_check_d);
    est.eta = estimate_eta(v_hat, g);
    est.gamma_g = est.eta.dot(est.gamma);

    const Eigen::MatrixXd beta_bar = cs.z_bar * gamma_check_d;
    const Eigen::MatrixXd b_hat = beta_bar.transpose() * beta_bar / static_cast<double>(est.N);
    std::vector<Eigen::MatrixXd> pi;
    pi.reserve(cs.moments.size());
    for (const auto& m : cs.moments) pi.push_back(gamma_check_d.transpose() * m * gamma_check_d);
    const auto sg = plug_in_sigma_g(v_hat, g, est.eta, est.gamma, b_hat, pi, opts.nw_lags);
    est.sigma_g = sg.sigma;
    est.sigma2_raw = sg.sigma2;
    est.nw_lags = sg.lags;
    if (sg.clipped) est.warnings.push_back("negative plug-in variance clipped to zero");

    const double half = normal_quantile(1.0 - opts.alpha / 2.0) * est.sigma_g / std::sqrt(static_cast<double>(est.T));
    est.ci_lo = est.gamma_g - half;
    est.ci_hi = est.gamma_g + half;
    if (est.sigma_g > 0.0) {
        est.tstat = std::sqrt(static_cast<double>(est.T)) * est.gamma_g / est.sigma_g;
        est.pvalue = two_sided_pvalue(est.tstat);
    } else {
        est.tstat = 0.0;
        est.pvalue = est.gamma_g == 0.0 ? 1.0 : 0.0;
    }
    return est;
}

/// Three-pass risk premium of an observable factor on top of a DSLFM fit:
/// PCA of the demeaned Ĉ for innovations, cross-sectional OLS for gamma,
/// time-series OLS of g for eta, gamma_g = eta' gamma.
inline RiskPremiumEstimate risk_premium(const Panel& panel, const FactorModelFit& fit,
                                        const ObservableFactorSeries& g, const RiskPremiumOptions& opts = {}) {
    g.validate();
    std::vector<Eigen::Index> rows;
    std::vector<Week> weeks;
    std::vector<double> gv;
    for (std::size_t i = 0; i < fit.weeks.size(); ++i) {
        if (auto v = g.at(fit.weeks[i])) {
            rows.push_back(static_cast<Eigen::Index>(i));
            weeks.push_back(fit.weeks[i]);
            gv.push_back(*v);
        }
    }
    if (weeks.empty()) throw InputError("risk_premium: factor series '" + g.name + "' shares no week with the fit");
    if (static_cast<int>(weeks.size()) < fit.k + 2) {
        throw EstimationError("risk_premium: " + std::to_string(weeks.size()) + " overlapping weeks, need at least k + 2");
    }
    const auto [c_full, c_weeks] = fit.c_hat.complete_rows();
    Eigen::MatrixXd c(static_cast<Eigen::Index>(rows.size()), c_full.cols());
    for (std::size_t i = 0; i < rows.size(); ++i) c.row(static_cast<Eigen::Index>(i)) = c_full.row(rows[i]);

    const auto inn = estimate_innovations(demean_char_portfolios(c), fit.k);
    const Eigen::MatrixXd gamma_d = soft_threshold_rows(inn.Gamma_D, fit.threshold_lambda, fit.mode);
    const auto cs = premium_cross_section(panel, weeks, opts.min_coverage);
    auto est = estimate_risk_premium(inn.V_hat, gamma_d, Eigen::Map<const Eigen::VectorXd>(gv.data(), static_cast<Eigen::Index>(gv.size())),
                                     cs, opts);
    est.factor_name = g.name;
    est.weeks = weeks;
    if (weeks.size() < fit.weeks.size()) {
        est.warnings.push_back(std::to_string(fit.weeks.size() - weeks.size()) + " fitted week(s) without a factor observation dropped");
    }
    if (cs.dropped_assets > 0) {
        est.warnings.push_back(std::to_string(cs.dropped_assets) + " asset(s) below the coverage requirement excluded");
    }
    return est;
}

}  // namespace dslfm
