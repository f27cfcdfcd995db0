#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <limits>
#include <numeric>
#include <optional>
#include <random>
#include <span>
#include <vector>

#include <Eigen/Dense>

#include "dslfm/errors.hpp"

namespace dslfm {

struct LassoOptions {
    double tol = 1e-7;
    int max_iters = 10000;
};

/// Lasso solution reported on the caller's (unstandardized) scale.
///
/// The penalty acts on standardized coefficients: the solver minimizes
/// (2n)^{-1} ||y_c - X_s b||^2 + lambda ||b||_1 where X_s has zero-mean,
/// unit-variance columns and y_c is centered. `intercept` restores the means.
struct LassoFit {
    Eigen::VectorXd coef;
    double intercept = 0.0;
    double lambda = 0.0;
    std::vector<Eigen::Index> active_set;
    int n_iters = 0;
    bool converged = true;
};

struct OlsFit {
    Eigen::VectorXd coef;
    Eigen::VectorXd residuals;
    Eigen::Index rank = 0;
};

struct NeweyWestResult {
    double mean = 0.0;
    double se = 0.0;
    double tstat = 0.0;
    int lags = 0;
};

namespace detail {

inline void require_finite(const Eigen::MatrixXd& x, const char* what) {
    if (!x.allFinite()) throw InputError(std::string(what) + " contains non-finite values");
}

/// Standardized sufficient statistics for coordinate descent with
/// covariance updates.
struct StandardizedProblem {
    Eigen::Index n = 0;
    Eigen::VectorXd x_mean;
    Eigen::VectorXd x_scale;  // population sd; 0 marks a constant column
    double y_mean = 0.0;
    Eigen::MatrixXd gram;     // X_s' X_s / n
    Eigen::VectorXd xty;      // X_s' y_c / n

    StandardizedProblem(const Eigen::MatrixXd& x, const Eigen::VectorXd& y) : n(x.rows()) {
        const double nn = static_cast<double>(n);
        x_mean = x.colwise().mean().transpose();
        y_mean = y.mean();
        Eigen::MatrixXd xs = x.rowwise() - x_mean.transpose();
        x_scale = (xs.colwise().squaredNorm() / nn).cwiseSqrt().transpose();
        for (Eigen::Index j = 0; j < xs.cols(); ++j) {
            // relative tolerance so rounding in the column mean does not
            // masquerade as variation
            const double tiny = 1e-12 * std::max(1.0, std::abs(x_mean(j)));
            if (x_scale(j) <= tiny) {
                x_scale(j) = 0.0;
                xs.col(j).setZero();
            } else {
                xs.col(j) /= x_scale(j);
            }
        }
        const Eigen::VectorXd yc = y.array() - y_mean;
        gram.noalias() = xs.transpose() * xs / nn;
        xty.noalias() = xs.transpose() * yc / nn;
    }

    double lambda_max() const { return xty.size() ? xty.cwiseAbs().maxCoeff() : 0.0; }
};

inline double soft_threshold(double z, double lambda) {
    if (z > lambda) return z - lambda;
    if (z < -lambda) return z + lambda;
    return 0.0;
}

/// Cyclic coordinate descent on standardized coefficients `b` (warm start).
/// Stops once a full sweep moves no coefficient by more than tol and every
/// KKT condition holds within tol. Returns {sweeps, converged}.
inline std::pair<int, bool> coordinate_descent(const StandardizedProblem& prob, double lambda, Eigen::VectorXd& b,
                                               const LassoOptions& opts) {
    const Eigen::Index d = b.size();
    Eigen::VectorXd grad = prob.xty - prob.gram * b;
    int sweep = 0;
    while (sweep < opts.max_iters) {
        ++sweep;
        double max_change = 0.0;
        for (Eigen::Index j = 0; j < d; ++j) {
            const double gjj = prob.gram(j, j);
            if (gjj <= 0.0) continue;
            const double old = b(j);
            const double updated = soft_threshold(grad(j) + gjj * old, lambda) / gjj;
            const double delta = updated - old;
            if (delta != 0.0) {
                b(j) = updated;
                grad.noalias() -= prob.gram.col(j) * delta;
                max_change = std::max(max_change, std::abs(delta));
            }
        }
        if (max_change < opts.tol) {
            bool kkt = true;
            for (Eigen::Index j = 0; j < d && kkt; ++j) {
                if (prob.gram(j, j) <= 0.0) continue;
                if (b(j) != 0.0) {
                    kkt = std::abs(grad(j) - lambda * (b(j) > 0 ? 1.0 : -1.0)) <= opts.tol;
                } else {
                    kkt = std::abs(grad(j)) <= lambda + opts.tol;
                }
            }
            if (kkt) return {sweep, true};
        }
    }
    return {sweep, false};
}

inline LassoFit unstandardize(const StandardizedProblem& prob, const Eigen::VectorXd& b, double lambda, int iters,
                              bool converged) {
    LassoFit fit;
    fit.lambda = lambda;
    fit.n_iters = iters;
    fit.converged = converged;
    fit.coef = Eigen::VectorXd::Zero(b.size());
    for (Eigen::Index j = 0; j < b.size(); ++j) {
        if (b(j) != 0.0 && prob.x_scale(j) > 0.0) {
            fit.coef(j) = b(j) / prob.x_scale(j);
            fit.active_set.push_back(j);
        }
    }
    fit.intercept = prob.y_mean - prob.x_mean.dot(fit.coef);
    return fit;
}

}  // namespace detail

/// Lasso by cyclic coordinate descent with covariance updates.
inline LassoFit lasso_fit(const Eigen::MatrixXd& x, const Eigen::VectorXd& y, double lambda,
                          const LassoOptions& opts = {}) {
    if (x.rows() != y.size()) throw InputError("lasso_fit: X and y row counts differ");
    if (x.rows() < 2) throw InputError("lasso_fit: need at least 2 observations");
    if (!(lambda >= 0.0) || !std::isfinite(lambda)) throw InputError("lasso_fit: lambda must be finite and >= 0");
    detail::require_finite(x, "lasso_fit: X");
    detail::require_finite(y, "lasso_fit: y");
    const detail::StandardizedProblem prob(x, y);
    Eigen::VectorXd b = Eigen::VectorXd::Zero(x.cols());
    auto [iters, converged] = detail::coordinate_descent(prob, lambda, b, opts);
    return detail::unstandardize(prob, b, lambda, iters, converged);
}

/// Standardized-scale lambda_max = max_j |X_s,j' y_c| / n, the smallest
/// penalty that zeroes every coefficient.
inline double lasso_lambda_max(const Eigen::MatrixXd& x, const Eigen::VectorXd& y) {
    return detail::StandardizedProblem(x, y).lambda_max();
}

/// `n_points` log-spaced penalties from lambda_max down to ratio * lambda_max.
inline std::vector<double> lasso_lambda_grid(double lambda_max, int n_points = 50, double ratio = 1e-4) {
    std::vector<double> grid;
    if (!(lambda_max > 0.0)) {
        grid.push_back(0.0);
        return grid;
    }
    if (n_points <= 1) return {lambda_max};
    const double lo = std::log(lambda_max * ratio);
    const double hi = std::log(lambda_max);
    for (int i = 0; i < n_points; ++i) {
        grid.push_back(std::exp(hi + (lo - hi) * static_cast<double>(i) / static_cast<double>(n_points - 1)));
    }
    return grid;
}

/// K-fold cross-validated penalty: folds are contiguous blocks of a seeded
/// row permutation; returns the grid value with the smallest mean
/// out-of-fold squared error (earliest grid entry on ties).
inline double cv_lasso_lambda(const Eigen::MatrixXd& x, const Eigen::VectorXd& y, int n_folds,
                              std::span<const double> grid, std::uint64_t seed, const LassoOptions& opts = {}) {
    if (grid.empty()) throw InputError("cv_lasso_lambda: lambda grid is empty");
    for (double l : grid) {
        if (!(l >= 0.0) || !std::isfinite(l)) throw InputError("cv_lasso_lambda: grid values must be finite and >= 0");
    }
    const Eigen::Index n = x.rows();
    if (n_folds < 2) throw InputError("cv_lasso_lambda: need at least 2 folds");
    if (n < n_folds) throw InputError("cv_lasso_lambda: fewer rows than folds");
    if (y.size() != n) throw InputError("cv_lasso_lambda: X and y row counts differ");
    detail::require_finite(x, "cv_lasso_lambda: X");
    detail::require_finite(y, "cv_lasso_lambda: y");
    if (grid.size() == 1) return grid[0];

    std::vector<Eigen::Index> perm(static_cast<std::size_t>(n));
    std::iota(perm.begin(), perm.end(), Eigen::Index{0});
    std::mt19937_64 rng(seed);
    std::shuffle(perm.begin(), perm.end(), rng);

    // warm starts run along decreasing penalties
    std::vector<std::size_t> order(grid.size());
    std::iota(order.begin(), order.end(), std::size_t{0});
    std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return grid[a] > grid[b]; });

    std::vector<double> sse(grid.size(), 0.0);
    const Eigen::Index d = x.cols();
    for (int f = 0; f < n_folds; ++f) {
        const Eigen::Index lo = n * f / n_folds;
        const Eigen::Index hi = n * (f + 1) / n_folds;
        const Eigen::Index n_test = hi - lo;
        const Eigen::Index n_train = n - n_test;
        if (n_train < 2) throw InputError("cv_lasso_lambda: a training fold has fewer than 2 rows");
        Eigen::MatrixXd x_train(n_train, d), x_test(n_test, d);
        Eigen::VectorXd y_train(n_train), y_test(n_test);
        Eigen::Index a = 0, t = 0;
        for (Eigen::Index i = 0; i < n; ++i) {
            const Eigen::Index row = perm[static_cast<std::size_t>(i)];
            if (i >= lo && i < hi) {
                x_test.row(t) = x.row(row);
                y_test(t++) = y(row);
            } else {
                x_train.row(a) = x.row(row);
                y_train(a++) = y(row);
            }
        }
        const detail::StandardizedProblem prob(x_train, y_train);
        Eigen::VectorXd b = Eigen::VectorXd::Zero(d);
        for (std::size_t g : order) {
            auto [iters, converged] = detail::coordinate_descent(prob, grid[g], b, opts);
            (void)iters;
            (void)converged;
            const LassoFit fit = detail::unstandardize(prob, b, grid[g], 0, true);
            const Eigen::VectorXd resid = (y_test.array() - fit.intercept).matrix() - x_test * fit.coef;
            sse[g] += resid.squaredNorm();
        }
    }
    std::size_t best = 0;
    for (std::size_t g = 1; g < grid.size(); ++g) {
        if (sse[g] < sse[best]) best = g;
    }
    return grid[best];
}

/// Minimum-norm least squares (no implicit intercept) via complete
/// orthogonal decomposition.
inline OlsFit ols_fit(const Eigen::MatrixXd& x, const Eigen::VectorXd& y) {
    if (x.rows() < 1 || x.cols() < 1) throw InputError("ols_fit: design must be at least 1x1");
    if (x.rows() != y.size()) throw InputError("ols_fit: X and y row counts differ");
    detail::require_finite(x, "ols_fit: X");
    detail::require_finite(y, "ols_fit: y");
    Eigen::CompleteOrthogonalDecomposition<Eigen::MatrixXd> cod(x);
    OlsFit fit;
    fit.coef = cod.solve(y);
    fit.residuals = y - x * fit.coef;
    fit.rank = cod.rank();
    return fit;
}

inline int newey_west_auto_lags(std::size_t t) {
    return static_cast<int>(std::floor(4.0 * std::pow(static_cast<double>(t) / 100.0, 2.0 / 9.0)));
}

/// HAC mean test with Bartlett weights w_l = 1 - l/(lags+1). Autocovariances
/// use the 1/T normalization. `lags` unset selects floor(4 (T/100)^{2/9}).
inline NeweyWestResult newey_west(std::span<const double> series, std::optional<int> lags = std::nullopt) {
    const std::size_t t = series.size();
    if (t < 2) throw InputError("newey_west: need at least 2 observations");
    const int l = lags ? *lags : newey_west_auto_lags(t);
    if (l < 0 || static_cast<std::size_t>(l) >= t) throw InputError("newey_west: lags must be in [0, T)");
    for (double v : series) {
        if (!std::isfinite(v)) throw InputError("newey_west: non-finite observation");
    }
    const double tt = static_cast<double>(t);
    const double mean = std::accumulate(series.begin(), series.end(), 0.0) / tt;
    auto autocov = [&](std::size_t lag) {
        double s = 0.0;
        for (std::size_t i = lag; i < t; ++i) s += (series[i] - mean) * (series[i - lag] - mean);
        return s / tt;
    };
    double lrv = autocov(0);
    // rounding in the mean leaves ~1e-36 variance on a constant series
    const double scale = std::max(std::abs(mean), std::numeric_limits<double>::min());
    if (lrv <= 1e-24 * scale * scale) throw DegenerateError("newey_west: zero variance series, t-statistic undefined");
    for (int lag = 1; lag <= l; ++lag) {
        const double w = 1.0 - static_cast<double>(lag) / static_cast<double>(l + 1);
        lrv += 2.0 * w * autocov(static_cast<std::size_t>(lag));
    }
    NeweyWestResult out;
    out.mean = mean;
    out.lags = l;
    out.se = std::sqrt(std::max(lrv, 0.0) / tt);
    if (!(out.se > 0.0)) throw DegenerateError("newey_west: zero variance series, t-statistic undefined");
    out.tstat = mean / out.se;
    return out;
}

}  // namespace dslfm
