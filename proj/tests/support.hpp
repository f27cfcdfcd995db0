#pragma once

#include <random>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "dslfm/panel.hpp"

namespace testsupport {

inline Eigen::MatrixXd gaussian(Eigen::Index n, Eigen::Index d, std::mt19937_64& rng) {
    std::normal_distribution<double> nd;
    Eigen::MatrixXd x(n, d);
    for (Eigen::Index i = 0; i < n; ++i)
        for (Eigen::Index j = 0; j < d; ++j) x(i, j) = nd(rng);
    return x;
}

inline Eigen::MatrixXd random_orthogonal(Eigen::Index k, std::mt19937_64& rng) {
    Eigen::HouseholderQR<Eigen::MatrixXd> qr(gaussian(k, k, rng));
    return qr.householderQ() * Eigen::MatrixXd::Identity(k, k);
}

// Panel whose returns follow z' Gamma f_{t+1} with Gamma of rank k.
inline dslfm::Panel factor_panel(Eigen::Index weeks, Eigen::Index n, const Eigen::MatrixXd& gamma, double noise,
                                 std::mt19937_64& rng, bool with_cap = false) {
    std::normal_distribution<double> nd;
    const Eigen::Index p = gamma.rows();
    std::vector<std::string> names;
    for (Eigen::Index j = 0; j < p; ++j) names.push_back("c" + std::to_string(j));
    std::vector<dslfm::PanelRow> rows;
    for (Eigen::Index w = 0; w < weeks; ++w) {
        Eigen::VectorXd f(gamma.cols());
        for (Eigen::Index i = 0; i < f.size(); ++i) f(i) = 0.2 + nd(rng);
        const Eigen::VectorXd c = gamma * f;
        for (Eigen::Index i = 0; i < n; ++i) {
            dslfm::PanelRow row{"a" + std::to_string(i), w, 0.0, {}, {}};
            Eigen::VectorXd z(p);
            for (Eigen::Index j = 0; j < p; ++j) z(j) = nd(rng);
            row.characteristics.assign(z.data(), z.data() + p);
            row.excess_return = z.dot(c) + noise * nd(rng);
            if (with_cap) row.market_cap = 1.0 + static_cast<double>(i % 7);
            rows.push_back(row);
        }
    }
    return dslfm::Panel::from_rows(names, rows);
}

}  // namespace testsupport
