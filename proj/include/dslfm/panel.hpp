#pragma once

#include <algorithm>
#include <charconv>
#include <cmath>
#include <cstdint>
#include <fstream>
#include <istream>
#include <map>
#include <numeric>
#include <optional>
#include <set>
#include <span>
#include <sstream>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

#include <Eigen/Dense>

#include "dslfm/errors.hpp"

namespace dslfm {

using Week = std::int64_t;

/// One (asset, week) observation: characteristics z_{i,t} known at week t and
/// the excess return r_{i,t+1} realized over the following week.
struct PanelRow {
    std::string asset_id;
    Week week = 0;
    double excess_return = 0.0;
    std::vector<double> characteristics;
    std::optional<double> market_cap;
};

/// Immutable unbalanced asset-week panel. Rows are stored sorted by
/// (week, asset_id) so every per-week cross-section is a contiguous span.
class Panel {
public:
    Panel() = default;

    static Panel from_rows(std::vector<std::string> char_names, std::vector<PanelRow> rows) {
        {
            std::set<std::string> seen;
            for (const auto& name : char_names) {
                if (!seen.insert(name).second) throw SchemaError("duplicate characteristic name '" + name + "'");
            }
        }
        if (rows.empty()) throw EmptyPanelError("panel has no rows");
        const std::size_t p = char_names.size();
        for (const auto& row : rows) {
            if (row.characteristics.size() != p) {
                throw InputError("row for asset '" + row.asset_id + "' week " + std::to_string(row.week) +
                                 " has " + std::to_string(row.characteristics.size()) +
                                 " characteristics, expected " + std::to_string(p));
            }
            if (!std::isfinite(row.excess_return)) {
                throw InputError("non-finite return for asset '" + row.asset_id + "' week " + std::to_string(row.week));
            }
            for (double z : row.characteristics) {
                if (!std::isfinite(z)) {
                    throw InputError("non-finite characteristic for asset '" + row.asset_id + "' week " +
                                     std::to_string(row.week));
                }
            }
            if (row.market_cap && !(std::isfinite(*row.market_cap) && *row.market_cap >= 0.0)) {
                throw InputError("market cap must be finite and nonnegative for asset '" + row.asset_id + "'");
            }
        }
        std::stable_sort(rows.begin(), rows.end(), [](const PanelRow& a, const PanelRow& b) {
            return a.week != b.week ? a.week < b.week : a.asset_id < b.asset_id;
        });
        for (std::size_t i = 1; i < rows.size(); ++i) {
            if (rows[i].week == rows[i - 1].week && rows[i].asset_id == rows[i - 1].asset_id) {
                throw DuplicateKeyError("duplicate (asset, week) key: ('" + rows[i].asset_id + "', " +
                                        std::to_string(rows[i].week) + ")");
            }
        }
        Panel panel;
        panel.char_names_ = std::move(char_names);
        panel.rows_ = std::move(rows);
        panel.index();
        return panel;
    }

    const std::vector<PanelRow>& rows() const noexcept { return rows_; }
    const std::vector<std::string>& char_names() const noexcept { return char_names_; }
    const std::vector<Week>& weeks() const noexcept { return weeks_; }
    const std::vector<std::string>& assets() const noexcept { return assets_; }
    std::size_t num_chars() const noexcept { return char_names_.size(); }
    std::size_t num_weeks() const noexcept { return weeks_.size(); }
    std::size_t num_rows() const noexcept { return rows_.size(); }
    bool has_market_cap() const noexcept { return all_have_cap_; }

    std::span<const PanelRow> week_rows(std::size_t pos) const {
        return {rows_.data() + offsets_[pos], offsets_[pos + 1] - offsets_[pos]};
    }
    std::size_t cross_section_size(std::size_t pos) const { return offsets_[pos + 1] - offsets_[pos]; }

    std::optional<std::size_t> week_position(Week w) const {
        auto it = std::lower_bound(weeks_.begin(), weeks_.end(), w);
        if (it == weeks_.end() || *it != w) return std::nullopt;
        return static_cast<std::size_t>(it - weeks_.begin());
    }

    const PanelRow* find(Week w, std::string_view asset) const {
        const auto pos = week_position(w);
        if (!pos) return nullptr;
        const auto rows = week_rows(*pos);
        auto it = std::lower_bound(rows.begin(), rows.end(), asset,
                                   [](const PanelRow& r, std::string_view id) { return r.asset_id < id; });
        return it != rows.end() && it->asset_id == asset ? &*it : nullptr;
    }

    /// N_t x p characteristics of the cross-section at week position `pos`.
    Eigen::MatrixXd characteristics_at(std::size_t pos) const {
        auto rows = week_rows(pos);
        Eigen::MatrixXd z(static_cast<Eigen::Index>(rows.size()), static_cast<Eigen::Index>(num_chars()));
        for (std::size_t i = 0; i < rows.size(); ++i) {
            for (std::size_t j = 0; j < num_chars(); ++j) {
                z(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(j)) = rows[i].characteristics[j];
            }
        }
        return z;
    }

    Eigen::VectorXd returns_at(std::size_t pos) const {
        auto rows = week_rows(pos);
        Eigen::VectorXd r(static_cast<Eigen::Index>(rows.size()));
        for (std::size_t i = 0; i < rows.size(); ++i) r(static_cast<Eigen::Index>(i)) = rows[i].excess_return;
        return r;
    }

    friend bool operator==(const Panel& a, const Panel& b) {
        if (a.char_names_ != b.char_names_ || a.rows_.size() != b.rows_.size()) return false;
        for (std::size_t i = 0; i < a.rows_.size(); ++i) {
            const auto& x = a.rows_[i];
            const auto& y = b.rows_[i];
            if (x.asset_id != y.asset_id || x.week != y.week || x.excess_return != y.excess_return ||
                x.characteristics != y.characteristics || x.market_cap != y.market_cap) {
                return false;
            }
        }
        return true;
    }

private:
    void index() {
        weeks_.clear();
        offsets_.clear();
        std::set<std::string> ids;
        all_have_cap_ = true;
        for (std::size_t i = 0; i < rows_.size(); ++i) {
            if (i == 0 || rows_[i].week != rows_[i - 1].week) {
                weeks_.push_back(rows_[i].week);
                offsets_.push_back(i);
            }
            ids.insert(rows_[i].asset_id);
            if (!rows_[i].market_cap) all_have_cap_ = false;
        }
        offsets_.push_back(rows_.size());
        assets_.assign(ids.begin(), ids.end());
    }

    std::vector<std::string> char_names_;
    std::vector<PanelRow> rows_;
    std::vector<Week> weeks_;
    std::vector<std::size_t> offsets_;
    std::vector<std::string> assets_;
    bool all_have_cap_ = false;
};

/// Column-name mapping for CSV ingestion. Characteristic columns default to
/// every column that is not one of the named key/return/market-cap columns.
struct PanelSchema {
    std::string asset_col = "asset_id";
    std::string week_col = "week";
    std::string return_col = "ret";
    // Empty: use a column named "mcap" when the header has one.
    std::string market_cap_col;
    std::vector<std::string> char_cols;
};

namespace detail {

inline std::vector<std::string> split_csv_line(std::string_view line) {
    std::vector<std::string> fields;
    std::string field;
    bool quoted = false;
    for (std::size_t i = 0; i < line.size(); ++i) {
        const char c = line[i];
        if (quoted) {
            if (c == '"') {
                if (i + 1 < line.size() && line[i + 1] == '"') {
                    field.push_back('"');
                    ++i;
                } else {
                    quoted = false;
                }
            } else {
                field.push_back(c);
            }
        } else if (c == '"') {
            quoted = true;
        } else if (c == ',') {
            fields.push_back(std::move(field));
            field.clear();
        } else if (c != '\r') {
            field.push_back(c);
        }
    }
    fields.push_back(std::move(field));
    return fields;
}

inline std::string_view trim(std::string_view s) {
    while (!s.empty() && (s.front() == ' ' || s.front() == '\t')) s.remove_prefix(1);
    while (!s.empty() && (s.back() == ' ' || s.back() == '\t')) s.remove_suffix(1);
    return s;
}

// Parses a decimal number. NaN/inf spellings parse successfully so the caller
// can report them as non-finite rather than as malformed.
inline std::optional<double> parse_double(std::string_view s) {
    s = trim(s);
    if (s.empty()) return std::nullopt;
    if (s.front() == '+') s.remove_prefix(1);
    double value = 0.0;
    auto [ptr, ec] = std::from_chars(s.data(), s.data() + s.size(), value);
    if (ec != std::errc{} || ptr != s.data() + s.size()) return std::nullopt;
    return value;
}

inline std::optional<Week> parse_week(std::string_view s) {
    s = trim(s);
    Week value = 0;
    auto [ptr, ec] = std::from_chars(s.data(), s.data() + s.size(), value);
    if (ec != std::errc{} || ptr != s.data() + s.size() || s.empty()) return std::nullopt;
    return value;
}

}  // namespace detail

inline Panel read_panel_csv(std::istream& in, const PanelSchema& schema = {}) {
    std::string line;
    if (!std::getline(in, line)) throw EmptyPanelError("panel file is empty (no header)");
    const auto header = detail::split_csv_line(line);
    std::map<std::string, std::size_t> col;
    for (std::size_t i = 0; i < header.size(); ++i) col[std::string(detail::trim(header[i]))] = i;

    auto require = [&](const std::string& name, const char* role) {
        auto it = col.find(name);
        if (it == col.end()) throw SchemaError(std::string("missing ") + role + " column '" + name + "'");
        return it->second;
    };
    const std::size_t asset_idx = require(schema.asset_col, "asset id");
    const std::size_t week_idx = require(schema.week_col, "week");
    const std::size_t ret_idx = require(schema.return_col, "return");
    std::optional<std::size_t> cap_idx;
    if (!schema.market_cap_col.empty()) {
        cap_idx = require(schema.market_cap_col, "market cap");
    } else if (auto it = col.find("mcap"); it != col.end()) {
        cap_idx = it->second;
    }

    std::vector<std::string> char_names;
    std::vector<std::size_t> char_idx;
    if (!schema.char_cols.empty()) {
        for (const auto& name : schema.char_cols) {
            char_idx.push_back(require(name, "characteristic"));
            char_names.push_back(name);
        }
    } else {
        for (std::size_t i = 0; i < header.size(); ++i) {
            if (i == asset_idx || i == week_idx || i == ret_idx || (cap_idx && i == *cap_idx)) continue;
            char_idx.push_back(i);
            char_names.emplace_back(detail::trim(header[i]));
        }
    }
    if (char_names.empty()) throw SchemaError("panel has no characteristic columns");

    std::vector<PanelRow> rows;
    std::vector<std::string> problems;
    std::size_t line_no = 1;
    std::size_t data_row = 0;
    auto note = [&](const std::string& msg) {
        if (problems.size() < 20) {
            problems.push_back("row " + std::to_string(data_row) + " (line " + std::to_string(line_no) + "): " + msg);
        } else if (problems.size() == 20) {
            problems.emplace_back("...");
        }
    };
    while (std::getline(in, line)) {
        ++line_no;
        if (detail::trim(line).empty()) continue;
        ++data_row;
        const auto fields = detail::split_csv_line(line);
        if (fields.size() != header.size()) {
            note("expected " + std::to_string(header.size()) + " fields, found " + std::to_string(fields.size()));
            continue;
        }
        PanelRow row;
        row.asset_id = std::string(detail::trim(fields[asset_idx]));
        bool ok = true;
        if (auto w = detail::parse_week(fields[week_idx]); w && *w >= 0) {
            row.week = *w;
        } else {
            note("week '" + fields[week_idx] + "' is not a nonnegative integer");
            ok = false;
        }
        auto numeric = [&](std::size_t idx, const std::string& name) -> std::optional<double> {
            auto v = detail::parse_double(fields[idx]);
            if (!v) {
                note("column '" + name + "' value '" + fields[idx] + "' is not a number");
                ok = false;
            } else if (!std::isfinite(*v)) {
                note("non-finite value in column '" + name + "'");
                ok = false;
            }
            return v;
        };
        if (auto r = numeric(ret_idx, schema.return_col)) row.excess_return = *r;
        row.characteristics.reserve(char_idx.size());
        for (std::size_t j = 0; j < char_idx.size(); ++j) {
            auto z = numeric(char_idx[j], char_names[j]);
            row.characteristics.push_back(z.value_or(0.0));
        }
        if (cap_idx) {
            auto m = numeric(*cap_idx, header[*cap_idx]);
            if (m && *m < 0.0) {
                note("negative market cap");
                ok = false;
            }
            if (m) row.market_cap = *m;
        }
        if (ok) rows.push_back(std::move(row));
    }
    if (!problems.empty()) {
        std::string msg = "rejected panel rows:";
        for (const auto& p : problems) msg += "\n  " + p;
        throw InputError(msg);
    }
    if (rows.empty()) throw EmptyPanelError("panel has zero data rows");
    return Panel::from_rows(std::move(char_names), std::move(rows));
}

inline Panel load_panel(const std::string& path, const PanelSchema& schema = {}) {
    std::ifstream in(path);
    if (!in) throw InputError("cannot open panel file '" + path + "'");
    return read_panel_csv(in, schema);
}

/// Replaces each characteristic by its within-week rank score on [0, 1].
/// Ties share the mean score of their ranks; a single-asset week maps to 0.5.
inline Panel normalize_characteristics(const Panel& panel) {
    std::vector<PanelRow> rows = panel.rows();
    const std::size_t p = panel.num_chars();
    std::size_t start = 0;
    for (std::size_t pos = 0; pos < panel.num_weeks(); ++pos) {
        const std::size_t n = panel.cross_section_size(pos);
        std::vector<std::size_t> order(n);
        for (std::size_t j = 0; j < p; ++j) {
            if (n == 1) {
                rows[start].characteristics[j] = 0.5;
                continue;
            }
            std::iota(order.begin(), order.end(), std::size_t{0});
            std::sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
                return rows[start + a].characteristics[j] < rows[start + b].characteristics[j];
            });
            const double denom = static_cast<double>(n - 1);
            std::size_t i = 0;
            while (i < n) {
                std::size_t e = i + 1;
                const double v = rows[start + order[i]].characteristics[j];
                while (e < n && rows[start + order[e]].characteristics[j] == v) ++e;
                // zero-based ranks i..e-1 share their mean
                const double score = (static_cast<double>(i + e - 1) / 2.0) / denom;
                for (std::size_t q = i; q < e; ++q) rows[start + order[q]].characteristics[j] = score;
                i = e;
            }
        }
        start += n;
    }
    return Panel::from_rows(panel.char_names(), std::move(rows));
}

inline Panel slice_weeks(const Panel& panel, Week from, Week to) {
    if (from > to) throw InputError("slice_weeks: from (" + std::to_string(from) + ") exceeds to (" + std::to_string(to) + ")");
    std::vector<PanelRow> rows;
    for (const auto& row : panel.rows()) {
        if (row.week >= from && row.week <= to) rows.push_back(row);
    }
    if (rows.empty()) {
        throw EmptyPanelError("slice [" + std::to_string(from) + ", " + std::to_string(to) + "] contains no weeks");
    }
    return Panel::from_rows(panel.char_names(), std::move(rows));
}

}  // namespace dslfm
