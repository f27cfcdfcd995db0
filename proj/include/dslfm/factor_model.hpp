#pragma once

#include <algorithm>
#include <cmath>
#include <limits>
#include <optional>
#include <string>
#include <variant>
#include <vector>

#include <Eigen/Dense>

#include "dslfm/dsl.hpp"
#include "dslfm/errors.hpp"
#include "dslfm/panel.hpp"
#include "dslfm/parallel.hpp"

namespace dslfm {

/// Principal components of a T x p matrix, normalized so F'F/T = I_k.
struct PcaResult {
    Eigen::MatrixXd factors;   // T x k
    Eigen::MatrixXd loadings;  // p x k, C' F / T
    Eigen::VectorXd eigvals;   // k largest eigenvalues of C C' / (T p), descending
};

enum class ThresholdMode { group_soft, hard };

namespace detail {

// Descending eigenpairs of C C'/(Tp), computed from whichever Gram matrix is
// smaller. Vectors are the T-dimensional left eigenvectors (unit norm) for
// the first `keep` pairs.
struct Spectrum {
    Eigen::VectorXd values;   // all eigenvalues, descending, clamped at 0
    Eigen::MatrixXd vectors;  // T x keep
};

inline Spectrum spectrum(const Eigen::MatrixXd& c, Eigen::Index keep) {
    const Eigen::Index t = c.rows();
    const Eigen::Index p = c.cols();
    const double scale = static_cast<double>(t) * static_cast<double>(p);
    Spectrum out;
    if (t <= p) {
        const Eigen::MatrixXd m = c * c.transpose() / scale;
        Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(m);
        if (es.info() != Eigen::Success) throw NumericError("eigendecomposition failed");
        out.values = es.eigenvalues().reverse().cwiseMax(0.0);
        out.vectors = es.eigenvectors().rowwise().reverse().leftCols(keep);
    } else {
        const Eigen::MatrixXd g = c.transpose() * c / scale;
        Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(g);
        if (es.info() != Eigen::Success) throw NumericError("eigendecomposition failed");
        out.values = es.eigenvalues().reverse().cwiseMax(0.0);
        const Eigen::MatrixXd w = es.eigenvectors().rowwise().reverse().leftCols(keep);
        out.vectors.resize(t, keep);
        for (Eigen::Index i = 0; i < keep; ++i) {
            const double lam = out.values(i);
            out.vectors.col(i) = lam > 0.0 ? Eigen::VectorXd(c * w.col(i) / std::sqrt(scale * lam))
                                           : Eigen::VectorXd::Zero(t);
        }
    }
    return out;
}

inline double rank_tolerance(Eigen::Index t, Eigen::Index p) {
    return std::numeric_limits<double>::epsilon() * static_cast<double>(t) * static_cast<double>(p);
}

}  // namespace detail

/// PCA of a T x p characteristic-portfolio matrix. Factors are sqrt(T) times
/// the top-k eigenvectors of C C'/(T p), signed so each factor's
/// largest-magnitude entry is positive.
inline PcaResult pca_decompose(const Eigen::MatrixXd& c, int k) {
    const Eigen::Index t = c.rows();
    const Eigen::Index p = c.cols();
    if (k < 1) throw InputError("pca_decompose: k must be >= 1");
    if (!c.allFinite()) throw InputError("pca_decompose: matrix contains non-finite values");
    if (k > std::min(t, p)) {
        throw RankError("pca_decompose: k = " + std::to_string(k) + " exceeds min(T, p) = " +
                        std::to_string(std::min(t, p)));
    }
    const auto spec = detail::spectrum(c, k);
    const double top = spec.values(0);
    if (!(top > 0.0) || spec.values(k - 1) <= detail::rank_tolerance(t, p) * top) {
        throw RankError("pca_decompose: k = " + std::to_string(k) + " exceeds the numerical rank of the matrix");
    }
    PcaResult out;
    out.factors = std::sqrt(static_cast<double>(t)) * spec.vectors;
    for (Eigen::Index i = 0; i < k; ++i) {
        Eigen::Index arg = 0;
        out.factors.col(i).cwiseAbs().maxCoeff(&arg);
        if (out.factors(arg, i) < 0.0) out.factors.col(i) *= -1.0;
    }
    out.loadings = c.transpose() * out.factors / static_cast<double>(t);
    out.eigvals = spec.values.head(k);
    return out;
}

/// Row-wise l1 thresholding of a loading matrix. group_soft scales row j by
/// (m_j - lambda)_+ / m_j with m_j its l1 norm; hard zeroes rows with
/// m_j <= lambda and leaves the rest untouched.
inline Eigen::MatrixXd soft_threshold_rows(const Eigen::MatrixXd& loadings, double lambda,
                                           ThresholdMode mode = ThresholdMode::group_soft) {
    if (!(lambda >= 0.0)) throw InputError("soft_threshold_rows: lambda must be >= 0");
    if (lambda == 0.0) return loadings;
    Eigen::MatrixXd out = loadings;
    for (Eigen::Index j = 0; j < out.rows(); ++j) {
        const double m = out.row(j).lpNorm<1>();
        if (m <= lambda) {
            out.row(j).setZero();
        } else if (mode == ThresholdMode::group_soft) {
            out.row(j) *= (m - lambda) / m;
        }
    }
    return out;
}

struct FactorCountSelection {
    int k_hat = 1;
    std::vector<double> ic;        // IC(k) for k = 1..k_max
    std::vector<double> residual;  // floored V(k)
};

/// Information-criterion choice of the number of factors:
/// IC(k) = log V(k) + k (p+T)/(pT) log(pT/(p+T)), V(k) the PCA residual mean
/// square floored at 1e-12. Candidates beyond the numerical rank are skipped.
inline FactorCountSelection select_num_factors(const Eigen::MatrixXd& c, int k_bar) {
    const Eigen::Index t = c.rows();
    const Eigen::Index p = c.cols();
    if (k_bar < 1 || k_bar > std::min(t, p) - 1) {
        throw InputError("estimate_num_factors: k_bar must be in [1, min(T, p) - 1]");
    }
    if (!c.allFinite()) throw InputError("estimate_num_factors: matrix contains non-finite values");
    const auto spec = detail::spectrum(c, 0);
    const double top = spec.values(0);
    if (!(top > 0.0)) throw RankError("estimate_num_factors: matrix has rank 0");
    const double tp = static_cast<double>(t) * static_cast<double>(p);
    const double penalty = (static_cast<double>(p + t) / tp) * std::log(tp / static_cast<double>(p + t));
    FactorCountSelection out;
    double best = std::numeric_limits<double>::infinity();
    for (int k = 1; k <= k_bar; ++k) {
        if (spec.values(k - 1) <= detail::rank_tolerance(t, p) * top) break;
        const double v = std::max(spec.values.tail(spec.values.size() - k).sum(), 1e-12);
        const double ic = std::log(v) + k * penalty;
        out.residual.push_back(v);
        out.ic.push_back(ic);
        if (ic < best) {
            best = ic;
            out.k_hat = k;
        }
    }
    return out;
}

inline int estimate_num_factors(const Eigen::MatrixXd& c, int k_bar) { return select_num_factors(c, k_bar).k_hat; }

/// Cross-validation of the loading threshold and the factor moving-average
/// window over the trailing validation weeks, each predicted from a fit on
/// strictly earlier weeks.
struct ThresholdCv {
    int n_grid = 20;
    double validation_fraction = 0.2;
    std::vector<int> windows{1, 4, 13, 26};
};

using ThresholdPolicy = std::variant<double, ThresholdCv>;

struct FitOptions {
    std::optional<int> k;  // unset: choose by information criterion
    int k_bar = 5;
    ThresholdPolicy threshold = ThresholdCv{};
    ThresholdMode mode = ThresholdMode::group_soft;
    int window = 1;  // used when the threshold is fixed
};

struct FactorModelFit {
    CharPortfolioMatrix c_hat;
    std::vector<Week> weeks;            // weeks entering the PCA (fully valid rows)
    Eigen::MatrixXd factors;            // T x k
    Eigen::MatrixXd loadings;           // p x k before thresholding
    Eigen::MatrixXd thresholded;        // p x k after thresholding
    Eigen::VectorXd eigvals;
    int k = 1;
    bool k_auto = false;
    std::vector<double> ic;
    double threshold_lambda = 0.0;
    ThresholdMode mode = ThresholdMode::group_soft;
    bool threshold_cv = false;
    int window = 1;
    std::optional<double> validation_r2;
    std::vector<std::string> warnings;
};

struct Prediction {
    std::string asset_id;
    Week week = 0;
    double value = 0.0;
};

/// Predicted next-week returns keyed by (asset, week of the characteristics).
struct PredictionSet {
    int window = 1;
    std::vector<Prediction> items;  // sorted by (week, asset_id)
};

namespace detail {

inline Eigen::VectorXd trailing_factor_mean(const Eigen::MatrixXd& factors, Eigen::Index available, int window) {
    const Eigen::Index w = std::min<Eigen::Index>(window, available);
    return factors.middleRows(available - w, w).colwise().mean().transpose();
}

struct ThresholdChoice {
    double lambda = 0.0;
    int window = 1;
    std::optional<double> r2;
};

inline ThresholdChoice cv_threshold(const Panel& panel, const Eigen::MatrixXd& c, const std::vector<Week>& weeks,
                                    const Eigen::MatrixXd& full_loadings, int k, const ThresholdCv& cv,
                                    ThresholdMode mode) {
    if (cv.n_grid < 1) throw InputError("threshold cv: n_grid must be >= 1");
    if (cv.windows.empty()) throw InputError("threshold cv: window grid is empty");
    for (int w : cv.windows) {
        if (w < 1) throw InputError("threshold cv: windows must be >= 1");
    }
    const Eigen::Index t = c.rows();
    double max_norm = 0.0;
    for (Eigen::Index j = 0; j < full_loadings.rows(); ++j) max_norm = std::max(max_norm, full_loadings.row(j).lpNorm<1>());
    std::vector<double> grid;
    for (int i = 0; i < cv.n_grid; ++i) grid.push_back(max_norm * static_cast<double>(i) / static_cast<double>(cv.n_grid));

    const auto n_val = std::max<Eigen::Index>(1, static_cast<Eigen::Index>(std::lround(cv.validation_fraction * static_cast<double>(t))));
    const Eigen::Index first = std::max<Eigen::Index>(t - n_val, k + 2);
    const std::size_t nw = cv.windows.size();
    std::vector<double> sse(grid.size() * nw, 0.0);
    double denom = 0.0;
    bool any = false;
    for (Eigen::Index v = first; v < t; ++v) {
        auto pos = panel.week_position(weeks[static_cast<std::size_t>(v)]);
        if (!pos) continue;
        PcaResult pca;
        try {
            pca = pca_decompose(c.topRows(v), k);
        } catch (const RankError&) {
            continue;
        }
        const Eigen::MatrixXd z = panel.characteristics_at(*pos);
        const Eigen::VectorXd r = panel.returns_at(*pos);
        denom += r.squaredNorm();
        any = true;
        std::vector<Eigen::VectorXd> lambda_hat;
        for (int w : cv.windows) lambda_hat.push_back(trailing_factor_mean(pca.factors, v, w));
        for (std::size_t g = 0; g < grid.size(); ++g) {
            const Eigen::MatrixXd zg = z * soft_threshold_rows(pca.loadings, grid[g], mode);
            for (std::size_t wi = 0; wi < nw; ++wi) {
                sse[g * nw + wi] += (r - zg * lambda_hat[wi]).squaredNorm();
            }
        }
    }
    ThresholdChoice choice;
    if (!any) return choice;
    std::size_t best = 0;
    for (std::size_t i = 1; i < sse.size(); ++i) {
        if (sse[i] < sse[best]) best = i;
    }
    choice.lambda = grid[best / nw];
    choice.window = cv.windows[best % nw];
    if (denom > 0.0) choice.r2 = 1.0 - sse[best] / denom;
    return choice;
}

}  // namespace detail

/// PCA, optional factor-count selection and loading thresholding on an
/// already estimated characteristic-portfolio matrix.
inline FactorModelFit fit_factor_model(const Panel& panel, CharPortfolioMatrix c_hat, const FitOptions& opts = {}) {
    auto [c, weeks] = c_hat.complete_rows();
    FactorModelFit fit;
    const auto dropped = c_hat.values.rows() - c.rows();
    if (dropped > 0) {
        fit.warnings.push_back(std::to_string(dropped) + " week(s) with invalid DSL cells dropped before PCA");
    }
    const Eigen::Index t = c.rows();
    const Eigen::Index p = c.cols();
    if (opts.k) {
        fit.k = *opts.k;
        if (fit.k < 1) throw InputError("fit: k must be >= 1");
    } else {
        if (t < 3) throw EstimationError("fit: fewer than 3 fully valid weeks");
        const int k_bar = std::min<int>(opts.k_bar, static_cast<int>(std::min(t, p)) - 1);
        if (k_bar < 1) throw EstimationError("fit: too few weeks or characteristics to select k");
        const auto sel = select_num_factors(c, k_bar);
        fit.k = sel.k_hat;
        fit.k_auto = true;
        fit.ic = sel.ic;
    }
    if (t < fit.k + 2) {
        throw EstimationError("fit: " + std::to_string(t) + " fully valid weeks, need at least k + 2 = " +
                              std::to_string(fit.k + 2));
    }
    const PcaResult pca = pca_decompose(c, fit.k);
    fit.factors = pca.factors;
    fit.loadings = pca.loadings;
    fit.eigvals = pca.eigvals;
    fit.mode = opts.mode;

    if (const auto* fixed = std::get_if<double>(&opts.threshold)) {
        if (!(*fixed >= 0.0)) throw InputError("fit: threshold lambda must be >= 0");
        fit.threshold_lambda = *fixed;
        fit.window = opts.window;
        if (fit.window < 1) throw InputError("fit: window must be >= 1");
    } else {
        const auto choice = detail::cv_threshold(panel, c, weeks, pca.loadings, fit.k,
                                                 std::get<ThresholdCv>(opts.threshold), opts.mode);
        fit.threshold_lambda = choice.lambda;
        fit.window = choice.window;
        fit.validation_r2 = choice.r2;
        fit.threshold_cv = true;
        if (!choice.r2) fit.warnings.push_back("threshold cross validation had no usable validation week; lambda = 0");
    }
    fit.thresholded = soft_threshold_rows(pca.loadings, fit.threshold_lambda, opts.mode);
    if (fit.thresholded.isZero(0.0)) {
        fit.warnings.push_back("degenerate fit: threshold removes every loading row");
    }
    fit.weeks = std::move(weeks);
    fit.c_hat = std::move(c_hat);
    return fit;
}

/// Double-selection lasso, PCA and thresholding in sequence.
inline FactorModelFit fit_dslfm(const Panel& panel, const DslConfig& cfg, const FitOptions& opts = {},
                                const Executor& exec = serial_executor()) {
    return fit_factor_model(panel, build_char_portfolio_matrix(panel, cfg, exec), opts);
}

/// r_hat_{i,t+1} = z_{i,t}' Gamma_check lambda_t, with lambda_t the mean of
/// the last min(W, available) fitted factors from weeks before t.
inline PredictionSet predict_returns(const FactorModelFit& fit, const Panel& panel, int window) {
    if (window < 1) throw InputError("predict_returns: window must be >= 1");
    PredictionSet out;
    out.window = window;
    for (std::size_t pos = 0; pos < panel.num_weeks(); ++pos) {
        const Week w = panel.weeks()[pos];
        const auto prior = static_cast<Eigen::Index>(std::lower_bound(fit.weeks.begin(), fit.weeks.end(), w) - fit.weeks.begin());
        if (prior == 0) continue;
        const Eigen::VectorXd beta = fit.thresholded * detail::trailing_factor_mean(fit.factors, prior, window);
        for (const auto& row : panel.week_rows(pos)) {
            const Eigen::Map<const Eigen::VectorXd> z(row.characteristics.data(), static_cast<Eigen::Index>(row.characteristics.size()));
            out.items.push_back({row.asset_id, w, z.dot(beta)});
        }
    }
    return out;
}

/// Out-of-sample predictions: every week t >= first_week is predicted from a
/// PCA of the valid rows strictly before t, so no week's holdings can see
/// its own or later returns.
inline PredictionSet predict_walk_forward(const Panel& panel, const CharPortfolioMatrix& c_hat, int k,
                                          double threshold_lambda, ThresholdMode mode, int window, Week first_week) {
    if (window < 1) throw InputError("predict_walk_forward: window must be >= 1");
    auto [c, weeks] = c_hat.complete_rows();
    PredictionSet out;
    out.window = window;
    for (std::size_t pos = 0; pos < panel.num_weeks(); ++pos) {
        const Week w = panel.weeks()[pos];
        if (w < first_week) continue;
        const auto prior = static_cast<Eigen::Index>(std::lower_bound(weeks.begin(), weeks.end(), w) - weeks.begin());
        if (prior < k + 2) continue;
        PcaResult pca;
        try {
            pca = pca_decompose(c.topRows(prior), k);
        } catch (const RankError&) {
            continue;
        }
        const Eigen::VectorXd beta =
            soft_threshold_rows(pca.loadings, threshold_lambda, mode) * detail::trailing_factor_mean(pca.factors, prior, window);
        for (const auto& row : panel.week_rows(pos)) {
            const Eigen::Map<const Eigen::VectorXd> z(row.characteristics.data(), static_cast<Eigen::Index>(row.characteristics.size()));
            out.items.push_back({row.asset_id, w, z.dot(beta)});
        }
    }
    return out;
}

}  // namespace dslfm
