#pragma once

#include <algorithm>
#include <cmath>
#include <complex>
#include <cstdint>
#include <cstdio>
#include <map>
#include <optional>
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

// Seed for the default loading matrix; changing it changes every default
// simulation.
inline constexpr std::uint64_t kFrozenLoadingSeed = 20240607;

/// Data-generating process for the Monte Carlo study. Empty matrices and
/// unset optionals take the synthetic defaults filled in by resolved().
///
///   f_{t+1} = gamma0 + v_{t+1},  v_{t+1} = A_f v_t + u_{t+1},  u ~ N(0, Q_f)
///   z_{i,t} = mu_i + x_{i,t},    x_{i,t} = A_z x_{i,t-1} + e_{i,t}, e ~ N(0, Q_z)
///   r_{i,t+1} = z_{i,t}' Gamma0 f_{t+1} + eps_{i,t+1}
///   g_{t+1} = eta0' v_{t+1} + eps^g_{t+1}
struct SimConfig {
    int N = 500;
    int T = 100;
    int p = 10;
    int k = 3;
    std::optional<int> s;  // nonzero loading rows; default max(p/10, k) capped at p
    int S = 200;
    double target_r2_model = 0.20;
    double target_r2_g = 0.40;
    Eigen::MatrixXd factor_var_coefs;  // k x k, default 0.3 I
    Eigen::MatrixXd factor_innov_cov;  // k x k, default I
    Eigen::MatrixXd char_var_coefs;    // p x p, default 0.3 I
    Eigen::MatrixXd char_innov_cov;    // p x p, default I
    double char_mean_center = 0.0;     // mu_i ~ N(center, sd^2 I)
    double char_mean_sd = 1.0;
    Eigen::VectorXd gamma0;            // default (0.25, 0.15, 0.10, 0.05, ...)
    Eigen::VectorXd eta0;              // default e_1
    Eigen::MatrixXd Gamma0;            // p x k, default first s rows N(0,1) from kFrozenLoadingSeed
    int burn_in = 100;
    double log_mcap_sd = 1.0;
    std::uint64_t seed = 0;

    int nonzero_rows() const { return s ? *s : std::min(p, std::max(p / 10, k)); }

    SimConfig resolved() const {
        if (N < 1 || T < 1 || p < 1 || k < 1) throw ConfigError("simulate: N, T, p and k must be >= 1");
        if (burn_in < 0) throw ConfigError("simulate: burn_in must be >= 0");
        if (!(target_r2_model > 0.0 && target_r2_model <= 1.0)) throw ConfigError("simulate: target_r2_model must be in (0, 1]");
        if (!(target_r2_g > 0.0 && target_r2_g <= 1.0)) throw ConfigError("simulate: target_r2_g must be in (0, 1]");
        if (!(char_mean_sd >= 0.0) || !(log_mcap_sd >= 0.0)) throw ConfigError("simulate: standard deviations must be >= 0");
        SimConfig c = *this;
        const auto ki = static_cast<Eigen::Index>(k);
        const auto pi = static_cast<Eigen::Index>(p);
        if (c.factor_var_coefs.size() == 0) c.factor_var_coefs = 0.3 * Eigen::MatrixXd::Identity(ki, ki);
        if (c.factor_innov_cov.size() == 0) c.factor_innov_cov = Eigen::MatrixXd::Identity(ki, ki);
        if (c.char_var_coefs.size() == 0) c.char_var_coefs = 0.3 * Eigen::MatrixXd::Identity(pi, pi);
        if (c.char_innov_cov.size() == 0) c.char_innov_cov = Eigen::MatrixXd::Identity(pi, pi);
        if (c.gamma0.size() == 0) {
            c.gamma0.resize(ki);
            const double defaults[] = {0.25, 0.15, 0.10};
            for (Eigen::Index i = 0; i < ki; ++i) c.gamma0(i) = i < 3 ? defaults[i] : 0.05;
        }
        if (c.eta0.size() == 0) c.eta0 = Eigen::VectorXd::Unit(ki, 0);
        if (c.Gamma0.size() == 0) {
            const int rows = nonzero_rows();
            if (rows < 0 || rows > p) throw ConfigError("simulate: s must be in [0, p]");
            c.Gamma0 = Eigen::MatrixXd::Zero(pi, ki);
            std::mt19937_64 rng(kFrozenLoadingSeed);
            std::normal_distribution<double> nd;
            for (Eigen::Index j = 0; j < rows; ++j)
                for (Eigen::Index f = 0; f < ki; ++f) c.Gamma0(j, f) = nd(rng);
            c.s = rows;
        } else {
            if (c.Gamma0.rows() != pi || c.Gamma0.cols() != ki) throw ConfigError("simulate: Gamma0 must be p x k");
            int rows = 0;
            for (Eigen::Index j = 0; j < pi; ++j) rows += c.Gamma0.row(j).isZero(0.0) ? 0 : 1;
            if (s && *s != rows) throw ConfigError("simulate: Gamma0 has " + std::to_string(rows) + " nonzero rows but s = " + std::to_string(*s));
            c.s = rows;
        }
        auto square = [](const Eigen::MatrixXd& m, Eigen::Index n, const char* what) {
            if (m.rows() != n || m.cols() != n) throw ConfigError(std::string("simulate: ") + what + " has the wrong shape");
            if (!m.allFinite()) throw ConfigError(std::string("simulate: ") + what + " is not finite");
        };
        square(c.factor_var_coefs, ki, "factor_var_coefs");
        square(c.factor_innov_cov, ki, "factor_innov_cov");
        square(c.char_var_coefs, pi, "char_var_coefs");
        square(c.char_innov_cov, pi, "char_innov_cov");
        if (c.gamma0.size() != ki || c.eta0.size() != ki) throw ConfigError("simulate: gamma0 and eta0 must have length k");
        auto stable = [](const Eigen::MatrixXd& a, const char* what) {
            Eigen::EigenSolver<Eigen::MatrixXd> es(a, false);
            if (es.eigenvalues().cwiseAbs().maxCoeff() >= 1.0) {
                throw ConfigError(std::string("simulate: ") + what + " has spectral radius >= 1 (not stationary)");
            }
        };
        stable(c.factor_var_coefs, "factor_var_coefs");
        stable(c.char_var_coefs, "char_var_coefs");
        auto psd = [](const Eigen::MatrixXd& q, const char* what) {
            if ((q - q.transpose()).cwiseAbs().maxCoeff() > 1e-12 * std::max(1.0, q.cwiseAbs().maxCoeff())) {
                throw ConfigError(std::string("simulate: ") + what + " is not symmetric");
            }
            Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(q);
            if (es.eigenvalues().minCoeff() < -1e-12 * std::max(1.0, es.eigenvalues().cwiseAbs().maxCoeff())) {
                throw ConfigError(std::string("simulate: ") + what + " is not positive semi-definite");
            }
        };
        psd(c.factor_innov_cov, "factor_innov_cov");
        psd(c.char_innov_cov, "char_innov_cov");
        return c;
    }
};

/// Stationary covariance of x_t = A x_{t-1} + e_t, e ~ (0, Q), by doubling.
inline Eigen::MatrixXd stationary_covariance(const Eigen::MatrixXd& a, const Eigen::MatrixXd& q) {
    Eigen::MatrixXd sigma = q;
    Eigen::MatrixXd ak = a;
    for (int it = 0; it < 100; ++it) {
        const Eigen::MatrixXd step = ak * sigma * ak.transpose();
        sigma += step;
        ak = ak * ak;
        if (step.cwiseAbs().maxCoeff() <= 1e-16 * std::max(1.0, sigma.cwiseAbs().maxCoeff())) break;
    }
    return sigma;
}

struct Calibration {
    double signal_var = 0.0;      // Var(z' Gamma0 f)
    double sigma_eps = 0.0;       // idiosyncratic sd
    double g_signal_var = 0.0;    // Var(eta0' v)
    double sigma_g_noise = 0.0;
    Eigen::MatrixXd factor_cov;   // stationary Var(v)
    Eigen::MatrixXd char_cov;     // Var(z) = Var(mu) + stationary Var(x)
};

/// Noise scales that hit the target population R^2 values, from the
/// stationary second moments (z and f independent).
inline Calibration calibrate(const SimConfig& resolved) {
    Calibration cal;
    const auto p = static_cast<Eigen::Index>(resolved.p);
    cal.factor_cov = stationary_covariance(resolved.factor_var_coefs, resolved.factor_innov_cov);
    cal.char_cov = stationary_covariance(resolved.char_var_coefs, resolved.char_innov_cov) +
                   resolved.char_mean_sd * resolved.char_mean_sd * Eigen::MatrixXd::Identity(p, p);
    const Eigen::VectorXd m = Eigen::VectorXd::Constant(p, resolved.char_mean_center);
    const Eigen::MatrixXd& g = resolved.Gamma0;
    const Eigen::MatrixXd eff = cal.factor_cov + resolved.gamma0 * resolved.gamma0.transpose();
    const Eigen::MatrixXd ezz = cal.char_cov + m * m.transpose();
    const double mean_signal = m.dot(g * resolved.gamma0);
    cal.signal_var = (g * eff * g.transpose() * ezz).trace() - mean_signal * mean_signal;
    if (!(cal.signal_var > 1e-14)) throw CalibrationError("simulate: model signal variance is zero; no R^2 target is attainable");
    cal.sigma_eps = std::sqrt(cal.signal_var * (1.0 - resolved.target_r2_model) / resolved.target_r2_model);
    cal.g_signal_var = resolved.eta0.dot(cal.factor_cov * resolved.eta0);
    if (!(cal.g_signal_var > 1e-14)) throw CalibrationError("simulate: eta0' v has zero variance; g R^2 target unattainable");
    cal.sigma_g_noise = std::sqrt(cal.g_signal_var * (1.0 - resolved.target_r2_g) / resolved.target_r2_g);
    return cal;
}

struct SimTruth {
    Eigen::MatrixXd F0;      // T x k, row t = f_{t+1}
    Eigen::MatrixXd V0;      // T x k
    Eigen::MatrixXd Gamma0;  // p x k
    Eigen::MatrixXd C0;      // T x p, F0 Gamma0'
    Eigen::VectorXd gamma0;
    Eigen::VectorXd eta0;
    ObservableFactorSeries g;
    Eigen::VectorXd g_noise;
    Panel panel;
    Eigen::VectorXd signal;  // z' Gamma0 f per panel row, in panel row order
    Calibration calibration;

    double gamma_g() const { return eta0.dot(gamma0); }
};

namespace detail {

inline Eigen::MatrixXd psd_sqrt_factor(const Eigen::MatrixXd& q) {
    Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(q);
    return es.eigenvectors() * es.eigenvalues().cwiseMax(0.0).cwiseSqrt().asDiagonal();
}

inline std::string asset_label(int i, int n) {
    const int width = static_cast<int>(std::to_string(std::max(n - 1, 0)).size());
    char buf[32];
    std::snprintf(buf, sizeof buf, "a%0*d", width, i);
    return buf;
}

}  // namespace detail

/// One draw from the DGP. Deterministic given (cfg, seed).
inline SimTruth simulate_panel(const SimConfig& cfg, std::uint64_t seed) {
    const SimConfig c = cfg.resolved();
    const Calibration cal = calibrate(c);
    const auto k = static_cast<Eigen::Index>(c.k);
    const auto p = static_cast<Eigen::Index>(c.p);
    const int T = c.T;
    std::mt19937_64 rng(seed);
    std::normal_distribution<double> nd;
    auto normals = [&](Eigen::Index n) {
        Eigen::VectorXd v(n);
        for (Eigen::Index i = 0; i < n; ++i) v(i) = nd(rng);
        return v;
    };

    SimTruth truth;
    truth.calibration = cal;
    truth.Gamma0 = c.Gamma0;
    truth.gamma0 = c.gamma0;
    truth.eta0 = c.eta0;
    truth.V0.resize(T, k);
    const Eigen::MatrixXd lf = detail::psd_sqrt_factor(c.factor_innov_cov);
    Eigen::VectorXd v = Eigen::VectorXd::Zero(k);
    for (int t = -c.burn_in; t < T; ++t) {
        v = c.factor_var_coefs * v + lf * normals(k);
        if (t >= 0) truth.V0.row(t) = v.transpose();
    }
    truth.F0 = truth.V0.rowwise() + c.gamma0.transpose();
    truth.C0 = truth.F0 * c.Gamma0.transpose();

    const Eigen::MatrixXd lz = detail::psd_sqrt_factor(c.char_innov_cov);
    // z paths asset by asset: N x (T x p)
    std::vector<Eigen::MatrixXd> z(static_cast<std::size_t>(c.N));
    std::vector<double> log_cap(static_cast<std::size_t>(c.N));
    for (int i = 0; i < c.N; ++i) {
        const Eigen::VectorXd mu = Eigen::VectorXd::Constant(p, c.char_mean_center) + c.char_mean_sd * normals(p);
        Eigen::VectorXd x = Eigen::VectorXd::Zero(p);
        auto& zi = z[static_cast<std::size_t>(i)];
        zi.resize(T, p);
        for (int t = -c.burn_in; t < T; ++t) {
            x = c.char_var_coefs * x + lz * normals(p);
            if (t >= 0) zi.row(t) = (mu + x).transpose();
        }
        log_cap[static_cast<std::size_t>(i)] = c.log_mcap_sd * nd(rng);
    }
    std::vector<std::string> names;
    for (Eigen::Index j = 0; j < p; ++j) names.push_back("z" + std::to_string(j + 1));
    std::vector<PanelRow> rows;
    rows.reserve(static_cast<std::size_t>(c.N) * static_cast<std::size_t>(T));
    std::vector<double> signal;
    signal.reserve(rows.capacity());
    for (int t = 0; t < T; ++t) {
        const Eigen::VectorXd beta_f = c.Gamma0 * truth.F0.row(t).transpose();
        for (int i = 0; i < c.N; ++i) {
            const auto& zi = z[static_cast<std::size_t>(i)];
            const double sig = zi.row(t).dot(beta_f);
            PanelRow row;
            row.asset_id = detail::asset_label(i, c.N);
            row.week = t;
            row.excess_return = sig + cal.sigma_eps * nd(rng);
            row.characteristics.resize(static_cast<std::size_t>(p));
            for (Eigen::Index j = 0; j < p; ++j) row.characteristics[static_cast<std::size_t>(j)] = zi(t, j);
            row.market_cap = std::exp(log_cap[static_cast<std::size_t>(i)] + 0.05 * nd(rng));
            rows.push_back(std::move(row));
            signal.push_back(sig);
        }
    }
    truth.panel = Panel::from_rows(names, std::move(rows));
    truth.signal = Eigen::Map<const Eigen::VectorXd>(signal.data(), static_cast<Eigen::Index>(signal.size()));

    truth.g_noise = cal.sigma_g_noise > 0.0 ? Eigen::VectorXd(cal.sigma_g_noise * normals(T)) : Eigen::VectorXd::Zero(T);
    truth.g.name = "g";
    const Eigen::VectorXd gv = truth.V0 * c.eta0 + truth.g_noise;
    for (int t = 0; t < T; ++t) {
        truth.g.weeks.push_back(t);
        truth.g.values.push_back(gv(t));
    }
    return truth;
}

struct Alignment {
    Eigen::MatrixXd H;
    double error = 0.0;  // ||est - truth H||_F / ||truth||_F
};

namespace detail {

inline Alignment least_squares_alignment(const Eigen::MatrixXd& est, const Eigen::MatrixXd& truth) {
    Alignment a;
    a.H = truth.completeOrthogonalDecomposition().solve(est);
    const double denom = truth.norm();
    a.error = denom > 0.0 ? (est - truth * a.H).norm() / denom : std::numeric_limits<double>::infinity();
    return a;
}

}  // namespace detail

/// H minimizing ||est - truth H||_F and the relative residual.
inline Alignment align_rotation(const Eigen::MatrixXd& est, const Eigen::MatrixXd& truth) {
    if (est.rows() != truth.rows() || est.cols() != truth.cols()) throw InputError("align_rotation: shape mismatch");
    Eigen::ColPivHouseholderQR<Eigen::MatrixXd> qt(truth), qe(est);
    if (qt.rank() < truth.cols()) throw RankError("align_rotation: truth is not full column rank");
    if (qe.rank() < est.cols()) throw RankError("align_rotation: estimate is not full column rank");
    return detail::least_squares_alignment(est, truth);
}

/// Estimator settings applied to every draw.
struct EstimatorSuite {
    DslConfig dsl;
    FitOptions fit;
    RiskPremiumOptions premium;
};

/// Known k, no loading threshold, automatic Newey-West lags: the VAR(1)
/// factors make the Phi blocks serially correlated.
inline EstimatorSuite default_suite(const SimConfig& cfg) {
    EstimatorSuite suite;
    suite.fit.k = cfg.k;
    suite.fit.threshold = 0.0;
    suite.premium.nw_lags = std::nullopt;
    return suite;
}

struct MseDecomposition {
    double mse = 0.0;
    double bias2 = 0.0;
    double var = 0.0;
    double median_error = 0.0;  // median per-draw relative error
};

struct DrawRecord {
    std::size_t index = 0;
    std::uint64_t seed = 0;
    bool ok = false;
    std::string error;
    double err_gamma_beta = 0.0;  // relative aligned errors
    double err_factors = 0.0;
    double err_beta_bar = 0.0;
    double err_c = 0.0;
    double gamma_g_hat = 0.0;
    double sigma_g = 0.0;
    bool cover90 = false;
    bool cover95 = false;
    int k_hat = 0;
};

struct SimReport {
    SimConfig config;  // resolved
    std::size_t S = 0;
    std::size_t failures = 0;
    double gamma_g_true = 0.0;
    MseDecomposition gamma_beta;
    MseDecomposition factors;
    MseDecomposition beta_bar;
    MseDecomposition c;
    MseDecomposition gamma_g;
    double cov90 = 0.0;
    double cov95 = 0.0;
    std::map<int, std::size_t> k_hat_counts;
    std::vector<DrawRecord> draws;
};

namespace detail {

// Accumulates per-draw deviation vectors d_s = est - target and splits the
// mean squared norm into bias and variance about the draw mean.
class MseAccumulator {
public:
    void add(const Eigen::VectorXd& d, double relative_error) {
        devs_.push_back(d);
        rel_.push_back(relative_error);
    }

    MseDecomposition finish() const {
        MseDecomposition out;
        if (devs_.empty()) return out;
        const auto n = static_cast<double>(devs_.front().size());
        const auto s = static_cast<double>(devs_.size());
        Eigen::VectorXd mean = Eigen::VectorXd::Zero(devs_.front().size());
        for (const auto& d : devs_) mean += d;
        mean /= s;
        for (const auto& d : devs_) {
            out.mse += d.squaredNorm() / n;
            out.var += (d - mean).squaredNorm() / n;
        }
        out.mse /= s;
        out.var /= s;
        out.bias2 = mean.squaredNorm() / n;
        std::vector<double> r = rel_;
        out.median_error = median(r);
        return out;
    }

    static double median(std::vector<double> v) {
        if (v.empty()) return 0.0;
        std::sort(v.begin(), v.end());
        const std::size_t m = v.size() / 2;
        return v.size() % 2 ? v[m] : 0.5 * (v[m - 1] + v[m]);
    }

private:
    std::vector<Eigen::VectorXd> devs_;
    std::vector<double> rel_;
};

inline Eigen::VectorXd flatten(const Eigen::MatrixXd& m) {
    return Eigen::Map<const Eigen::VectorXd>(m.data(), m.size());
}

struct DrawResult {
    DrawRecord record;
    Eigen::VectorXd d_gamma_beta, d_factors, d_beta_bar, d_c;
    double d_gamma_g = 0.0;
};

inline DrawResult run_draw(const SimConfig& cfg, const EstimatorSuite& suite, std::size_t index, std::uint64_t seed) {
    DrawResult out;
    out.record.index = index;
    out.record.seed = seed;
    const SimTruth truth = simulate_panel(cfg, seed);
    DslConfig dsl = suite.dsl;
    dsl.seed = derive_seed(seed, 0xd51u);
    const auto fit = fit_dslfm(truth.panel, dsl, suite.fit);
    if (fit.weeks.size() != static_cast<std::size_t>(cfg.T)) {
        throw EstimationError("draw " + std::to_string(index) + ": " + std::to_string(cfg.T - static_cast<int>(fit.weeks.size())) +
                              " week(s) with invalid DSL cells");
    }
    out.record.k_hat = fit.k;
    if (fit.k != cfg.k) throw EstimationError("draw " + std::to_string(index) + ": fitted k differs from the true k");

    // C: the DSL matrix against the truth, no rotation involved
    out.d_c = flatten(fit.c_hat.values - truth.C0);
    out.record.err_c = (fit.c_hat.values - truth.C0).norm() / truth.C0.norm();

    // F_hat ~ F0 H implies Gamma_hat ~ Gamma0 H^{-T}; the loadings reuse the
    // factor rotation because Gamma0 alone pins H only through its nonzero rows
    const auto af = least_squares_alignment(fit.factors, truth.F0);
    out.d_factors = flatten(fit.factors - truth.F0 * af.H);
    out.record.err_factors = af.error;
    Eigen::FullPivLU<Eigen::MatrixXd> lu(af.H);
    if (!lu.isInvertible()) throw RankError("draw " + std::to_string(index) + ": factor rotation is singular");
    const Eigen::MatrixXd gamma_target = truth.Gamma0 * lu.inverse().transpose();
    out.d_gamma_beta = flatten(fit.thresholded - gamma_target);
    out.record.err_gamma_beta = (fit.thresholded - gamma_target).norm() / gamma_target.norm();

    const auto rp = risk_premium(truth.panel, fit, truth.g, suite.premium);
    // rotation-free comparison of average-beta premia zbar' Gamma gamma
    const auto cs = premium_cross_section(truth.panel, rp.weeks, suite.premium.min_coverage);
    const Eigen::VectorXd est_bb = cs.z_bar * rp.Gamma_D * rp.gamma;
    const Eigen::VectorXd true_bb = cs.z_bar * truth.Gamma0 * truth.gamma0;
    out.d_beta_bar = est_bb - true_bb;
    out.record.err_beta_bar = out.d_beta_bar.norm() / true_bb.norm();

    const double truth_g = truth.gamma_g();
    out.d_gamma_g = rp.gamma_g - truth_g;
    out.record.gamma_g_hat = rp.gamma_g;
    out.record.sigma_g = rp.sigma_g;
    const double se = rp.sigma_g / std::sqrt(static_cast<double>(rp.T));
    out.record.cover90 = std::abs(out.d_gamma_g) <= normal_quantile(0.95) * se;
    out.record.cover95 = std::abs(out.d_gamma_g) <= normal_quantile(0.975) * se;
    out.record.ok = true;
    return out;
}

}  // namespace detail

/// S seeded draws of simulate -> fit -> risk premium, aggregated. Failed
/// draws are excluded and listed; more than 20% failures is an error.
inline SimReport run_monte_carlo(const SimConfig& cfg, const EstimatorSuite& suite,
                                 const Executor& exec = serial_executor()) {
    const SimConfig c = cfg.resolved();
    if (c.S < 2) throw ConfigError("run_monte_carlo: S must be >= 2");
    calibrate(c);
    const auto results = exec.map<detail::DrawResult>(static_cast<std::size_t>(c.S), [&](std::size_t s) {
        const std::uint64_t seed = derive_seed(c.seed, static_cast<std::uint64_t>(s));
        try {
            return detail::run_draw(c, suite, s, seed);
        } catch (const Error& e) {
            detail::DrawResult bad;
            bad.record.index = s;
            bad.record.seed = seed;
            bad.record.error = e.what();
            return bad;
        }
    });

    SimReport report;
    report.config = c;
    report.S = static_cast<std::size_t>(c.S);
    report.gamma_g_true = c.eta0.dot(c.gamma0);
    detail::MseAccumulator gb, ff, bb, cc, gg;
    std::size_t n90 = 0, n95 = 0, ok = 0;
    for (const auto& r : results) {
        report.draws.push_back(r.record);
        if (!r.record.ok) {
            ++report.failures;
            continue;
        }
        ++ok;
        gb.add(r.d_gamma_beta, r.record.err_gamma_beta);
        ff.add(r.d_factors, r.record.err_factors);
        bb.add(r.d_beta_bar, r.record.err_beta_bar);
        cc.add(r.d_c, r.record.err_c);
        gg.add(Eigen::VectorXd::Constant(1, r.d_gamma_g), std::abs(r.d_gamma_g));
        n90 += r.record.cover90 ? 1 : 0;
        n95 += r.record.cover95 ? 1 : 0;
        ++report.k_hat_counts[r.record.k_hat];
    }
    if (static_cast<double>(report.failures) > 0.2 * static_cast<double>(report.S)) {
        std::string msg = "run_monte_carlo: " + std::to_string(report.failures) + " of " + std::to_string(report.S) + " draws failed";
        for (const auto& d : report.draws) {
            if (!d.ok) msg += "\n  draw " + std::to_string(d.index) + ": " + d.error;
        }
        throw EstimationError(msg);
    }
    report.gamma_beta = gb.finish();
    report.factors = ff.finish();
    report.beta_bar = bb.finish();
    report.c = cc.finish();
    report.gamma_g = gg.finish();
    report.cov90 = static_cast<double>(n90) / static_cast<double>(ok);
    report.cov95 = static_cast<double>(n95) / static_cast<double>(ok);
    return report;
}

}  // namespace dslfm
