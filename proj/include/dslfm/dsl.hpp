#pragma once

#include <algorithm>
#include <cstdint>
#include <optional>
#include <set>
#include <string>
#include <variant>
#include <vector>

#include <Eigen/Dense>

#include "dslfm/errors.hpp"
#include "dslfm/panel.hpp"
#include "dslfm/parallel.hpp"
#include "dslfm/regress.hpp"
#include "dslfm/stats.hpp"

namespace dslfm {

/// Log-spaced grid from each regression's own lambda_max.
struct AutoLambdaGrid {
    int n_points = 50;
    double ratio = 1e-4;
};

/// The same explicit penalties for every lasso stage. A single value skips
/// cross validation; {0} forces full selection.
struct FixedLambdaGrid {
    std::vector<double> values;
};

using LambdaGridPolicy = std::variant<AutoLambdaGrid, FixedLambdaGrid>;

struct DslConfig {
    std::vector<std::size_t> amelioration_set;  // controls always kept in the final OLS
    int cv_folds = 5;
    LambdaGridPolicy lambda_grid = AutoLambdaGrid{};
    std::uint64_t seed = 0;
    LassoOptions lasso;

    void validate(std::size_t p) const {
        std::set<std::size_t> seen;
        for (auto idx : amelioration_set) {
            if (idx >= p) throw InputError("amelioration index " + std::to_string(idx) + " out of range");
            if (!seen.insert(idx).second) throw InputError("duplicate amelioration index " + std::to_string(idx));
        }
        if (cv_folds < 2) throw InputError("cv_folds must be >= 2");
        if (auto* fixed = std::get_if<FixedLambdaGrid>(&lambda_grid)) {
            if (fixed->values.empty()) throw InputError("fixed lambda grid is empty");
            for (double v : fixed->values) {
                if (!(v >= 0.0) || !std::isfinite(v)) throw InputError("lambda grid values must be finite and >= 0");
            }
        }
    }

    std::size_t min_cross_section() const { return std::max<std::size_t>(5, amelioration_set.size() + 2); }
};

struct DslCell {
    bool valid = false;
    double c_hat = 0.0;
    std::vector<std::size_t> selected;  // union of both lasso supports and the amelioration set
    std::string reason;                 // why the cell is invalid
};

/// T x p matrix of estimated characteristic-portfolio returns. Invalid cells
/// hold 0 and are excluded downstream.
struct CharPortfolioMatrix {
    Eigen::MatrixXd values;
    Eigen::Matrix<bool, Eigen::Dynamic, Eigen::Dynamic> valid;
    std::vector<Week> weeks;
    std::vector<std::string> char_names;

    bool row_valid(Eigen::Index t) const { return valid.row(t).all(); }

    std::vector<Eigen::Index> valid_rows() const {
        std::vector<Eigen::Index> rows;
        for (Eigen::Index t = 0; t < values.rows(); ++t) {
            if (row_valid(t)) rows.push_back(t);
        }
        return rows;
    }

    /// Rows whose every cell is valid, in week order, with their weeks.
    std::pair<Eigen::MatrixXd, std::vector<Week>> complete_rows() const {
        const auto rows = valid_rows();
        Eigen::MatrixXd out(static_cast<Eigen::Index>(rows.size()), values.cols());
        std::vector<Week> w;
        for (std::size_t i = 0; i < rows.size(); ++i) {
            out.row(static_cast<Eigen::Index>(i)) = values.row(rows[i]);
            w.push_back(weeks[static_cast<std::size_t>(rows[i])]);
        }
        return {std::move(out), std::move(w)};
    }
};

namespace detail {

inline Eigen::MatrixXd drop_column(const Eigen::MatrixXd& z, Eigen::Index j) {
    Eigen::MatrixXd out(z.rows(), z.cols() - 1);
    if (j > 0) out.leftCols(j) = z.leftCols(j);
    if (j + 1 < z.cols()) out.rightCols(z.cols() - j - 1) = z.rightCols(z.cols() - j - 1);
    return out;
}

inline std::vector<double> stage_grid(const DslConfig& cfg, const Eigen::MatrixXd& x, const Eigen::VectorXd& y) {
    if (auto* fixed = std::get_if<FixedLambdaGrid>(&cfg.lambda_grid)) return fixed->values;
    const auto& a = std::get<AutoLambdaGrid>(cfg.lambda_grid);
    return lasso_lambda_grid(lasso_lambda_max(x, y), a.n_points, a.ratio);
}

inline LassoFit cv_lasso(const DslConfig& cfg, const Eigen::MatrixXd& x, const Eigen::VectorXd& y,
                         std::uint64_t seed) {
    const auto grid = stage_grid(cfg, x, y);
    const int folds = std::min<int>(cfg.cv_folds, static_cast<int>(x.rows()));
    const double lambda = cv_lasso_lambda(x, y, folds, grid, seed, cfg.lasso);
    return lasso_fit(x, y, lambda, cfg.lasso);
}

}  // namespace detail

/// Double-selection estimate of characteristic j's portfolio return from one
/// cross-section.
///
/// (a) lasso of returns on all characteristics; I1 = support outside j.
/// (b) lasso of characteristic j on the others; I2 = its support.
/// (c) I = I1 u I2 u amelioration set.
/// (d) OLS of returns on column j plus columns in I (no intercept); the
///     coefficient on column j is the estimate.
inline DslCell dsl_single(const Eigen::MatrixXd& zt, const Eigen::VectorXd& r_next, std::size_t j,
                          const DslConfig& cfg, std::uint64_t cell_seed) {
    const auto p = static_cast<std::size_t>(zt.cols());
    if (j >= p) throw InputError("dsl_single: characteristic index out of range");
    if (zt.rows() != r_next.size()) throw InputError("dsl_single: Z and r row counts differ");
    cfg.validate(p);
    DslCell cell;
    const auto n = static_cast<std::size_t>(zt.rows());
    if (n < cfg.min_cross_section()) {
        cell.reason = "cross-section of " + std::to_string(n) + " assets below minimum " +
                      std::to_string(cfg.min_cross_section());
        return cell;
    }
    const auto jj = static_cast<Eigen::Index>(j);
    const Eigen::VectorXd zj = zt.col(jj);
    const double zj_mean = zj.mean();
    if ((zj.array() - zj_mean).abs().maxCoeff() <= 1e-12 * std::max(1.0, std::abs(zj_mean))) {
        cell.reason = "characteristic column has zero variance";
        return cell;
    }

    std::set<std::size_t> selected(cfg.amelioration_set.begin(), cfg.amelioration_set.end());
    selected.erase(j);

    const LassoFit outcome = detail::cv_lasso(cfg, zt, r_next, derive_seed(cell_seed, 1));
    for (auto idx : outcome.active_set) {
        if (static_cast<std::size_t>(idx) != j) selected.insert(static_cast<std::size_t>(idx));
    }
    if (p > 1) {
        const Eigen::MatrixXd controls = detail::drop_column(zt, jj);
        const LassoFit first_stage = detail::cv_lasso(cfg, controls, zj, derive_seed(cell_seed, 2));
        for (auto idx : first_stage.active_set) {
            const auto k = static_cast<std::size_t>(idx);
            selected.insert(k < j ? k : k + 1);
        }
    }

    Eigen::MatrixXd design(zt.rows(), static_cast<Eigen::Index>(selected.size() + 1));
    design.col(0) = zj;
    Eigen::Index c = 1;
    for (auto idx : selected) design.col(c++) = zt.col(static_cast<Eigen::Index>(idx));
    const OlsFit ols = ols_fit(design, r_next);
    cell.valid = true;
    cell.c_hat = ols.coef(0);
    cell.selected.assign(selected.begin(), selected.end());
    return cell;
}

inline std::uint64_t dsl_cell_seed(std::uint64_t seed, Week week, std::size_t j) {
    return derive_seed(seed, static_cast<std::uint64_t>(week), static_cast<std::uint64_t>(j));
}

/// Runs dsl_single for every (week, characteristic) cell. Cells are
/// independent and seeded from (cfg.seed, week, j), so the result does not
/// depend on the executor's thread count.
inline CharPortfolioMatrix build_char_portfolio_matrix(const Panel& panel, const DslConfig& cfg,
                                                       const Executor& exec = serial_executor()) {
    if (panel.num_rows() == 0) throw EmptyPanelError("build_char_portfolio_matrix: empty panel");
    const std::size_t p = panel.num_chars();
    cfg.validate(p);
    const std::size_t t_count = panel.num_weeks();
    CharPortfolioMatrix out;
    out.values = Eigen::MatrixXd::Zero(static_cast<Eigen::Index>(t_count), static_cast<Eigen::Index>(p));
    out.valid.setConstant(static_cast<Eigen::Index>(t_count), static_cast<Eigen::Index>(p), false);
    out.weeks = panel.weeks();
    out.char_names = panel.char_names();

    exec.for_each_index(t_count, [&](std::size_t pos) {
        const Eigen::MatrixXd zt = panel.characteristics_at(pos);
        const Eigen::VectorXd rt = panel.returns_at(pos);
        const Week week = panel.weeks()[pos];
        for (std::size_t j = 0; j < p; ++j) {
            const DslCell cell = dsl_single(zt, rt, j, cfg, dsl_cell_seed(cfg.seed, week, j));
            if (cell.valid && std::isfinite(cell.c_hat)) {
                out.values(static_cast<Eigen::Index>(pos), static_cast<Eigen::Index>(j)) = cell.c_hat;
                out.valid(static_cast<Eigen::Index>(pos), static_cast<Eigen::Index>(j)) = true;
            }
        }
    });
    if (!out.valid.any()) throw EstimationError("every DSL cell is invalid; cross-sections too small or degenerate");
    return out;
}

}  // namespace dslfm
