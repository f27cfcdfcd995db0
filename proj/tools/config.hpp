#pragma once

#include <filesystem>
#include <fstream>
#include <optional>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include "dslfm/dslfm.hpp"

namespace dslfm::cli {

using io::json;
namespace fs = std::filesystem;

// Reads one JSON object, reporting every problem with its dotted field path
// and rejecting keys nobody asked for.
class Fields {
public:
    Fields(const json& j, std::string path) : j_(j), path_(std::move(path)) {
        if (!j_.is_object()) throw ConfigError(where() + "must be an object");
    }

    bool has(const std::string& key) const { return j_.contains(key) && !j_.at(key).is_null(); }

    std::string name(const std::string& key) const { return path_.empty() ? key : path_ + "." + key; }

    template <class T>
    std::optional<T> opt(const std::string& key) {
        used_.insert(key);
        if (!has(key)) return std::nullopt;
        return convert<T>(j_.at(key), name(key));
    }

    template <class T>
    T get(const std::string& key, T fallback) {
        auto v = opt<T>(key);
        return v ? *v : fallback;
    }

    template <class T>
    T require(const std::string& key) {
        auto v = opt<T>(key);
        if (!v) throw ConfigError("config: missing required field '" + name(key) + "'");
        return *v;
    }

    const json& raw(const std::string& key) {
        used_.insert(key);
        return j_.at(key);
    }

    std::optional<Fields> child(const std::string& key) {
        used_.insert(key);
        if (!has(key)) return std::nullopt;
        return Fields(j_.at(key), name(key));
    }

    void finish() const {
        for (const auto& [key, value] : j_.items()) {
            if (!used_.count(key)) throw ConfigError("config: unknown field '" + name(key) + "'");
        }
    }

    template <class T>
    static T convert(const json& v, const std::string& field) {
        auto bad = [&](const char* what) { return ConfigError("config: field '" + field + "' must be " + what); };
        if constexpr (std::is_same_v<T, bool>) {
            if (!v.is_boolean()) throw bad("true or false");
            return v.get<bool>();
        } else if constexpr (std::is_integral_v<T> && std::is_unsigned_v<T>) {
            if (!v.is_number_unsigned()) throw bad("a non-negative integer");
            return static_cast<T>(v.get<std::uint64_t>());
        } else if constexpr (std::is_integral_v<T>) {
            if (!v.is_number_integer()) throw bad("an integer");
            return static_cast<T>(v.get<long long>());
        } else if constexpr (std::is_floating_point_v<T>) {
            if (!v.is_number()) throw bad("a number");
            return v.get<double>();
        } else if constexpr (std::is_same_v<T, std::string>) {
            if (!v.is_string()) throw bad("a string");
            return v.get<std::string>();
        } else {
            using E = typename T::value_type;
            if (!v.is_array()) throw bad("an array");
            T out;
            for (std::size_t i = 0; i < v.size(); ++i) out.push_back(convert<E>(v[i], field + "[" + std::to_string(i) + "]"));
            return out;
        }
    }

private:
    std::string where() const { return "config: " + (path_.empty() ? std::string("top level") : "field '" + path_ + "'") + " "; }

    const json& j_;
    std::string path_;
    std::set<std::string> used_;
};

struct PanelSettings {
    fs::path path;
    PanelSchema schema;
    bool normalize = false;
};

struct PremiumSettings {
    std::optional<fs::path> factor_path;
    std::string factor_name = "g";
    RiskPremiumOptions options;
};

struct PcaBenchmarkSettings {
    int k = 3;
    int refit_every = 4;
    int min_train = 26;
};

struct BacktestSettings {
    std::optional<fs::path> predictions;
    std::vector<Weighting> weightings{Weighting::value, Weighting::equal};
    bool weighting_set = false;  // default "both" drops value weighting for cap-less panels
    std::optional<Week> first_week;  // unset: the panel's middle week
    double threshold = 0.0;
    std::optional<int> nw_lags;
    std::optional<PcaBenchmarkSettings> pca;
    std::optional<ObservableBenchmarkOptions> observable;
};

struct RunConfig {
    std::uint64_t seed = 0;
    fs::path base_dir;
    std::optional<fs::path> out_dir;
    std::optional<PanelSettings> panel;
    DslConfig dsl;
    FitOptions fit;
    SimConfig sim;
    PremiumSettings premium;
    int bootstrap_draws = 100;
    BacktestSettings backtest;
};

namespace detail {

inline fs::path resolve(const fs::path& base, const std::string& p) {
    fs::path path(p);
    return path.is_absolute() ? path : base / path;
}

inline fs::path existing_file(const fs::path& base, const std::string& p, const std::string& field) {
    const fs::path path = resolve(base, p);
    if (!fs::is_regular_file(path)) throw ConfigError("config: field '" + field + "' names a missing file: " + path.string());
    return path;
}

inline ThresholdMode parse_mode(const std::string& s, const std::string& field) {
    if (s == "group_soft") return ThresholdMode::group_soft;
    if (s == "hard") return ThresholdMode::hard;
    throw ConfigError("config: field '" + field + "' must be \"group_soft\" or \"hard\"");
}

inline std::vector<Weighting> parse_weighting(const std::string& s, const std::string& field) {
    if (s == "value") return {Weighting::value};
    if (s == "equal") return {Weighting::equal};
    if (s == "both") return {Weighting::value, Weighting::equal};
    throw ConfigError("config: field '" + field + "' must be \"value\", \"equal\" or \"both\"");
}

inline std::optional<int> parse_lags(Fields& f, const std::string& key, std::optional<int> fallback) {
    if (!f.has(key)) {
        f.opt<int>(key);
        return fallback;
    }
    const json& v = f.raw(key);
    if (v.is_string() && v.get<std::string>() == "auto") return std::nullopt;
    const int lags = Fields::convert<int>(v, f.name(key));
    if (lags < 0) throw ConfigError("config: field '" + f.name(key) + "' must be >= 0 or \"auto\"");
    return lags;
}

inline void check(bool ok, const Fields& f, const std::string& key, const std::string& rule) {
    if (!ok) throw ConfigError("config: field '" + f.name(key) + "' " + rule);
}

inline void parse_panel(Fields f, const fs::path& base, RunConfig& cfg) {
    PanelSettings p;
    p.path = existing_file(base, f.require<std::string>("path"), f.name("path"));
    p.schema.asset_col = f.get<std::string>("asset_col", p.schema.asset_col);
    p.schema.week_col = f.get<std::string>("week_col", p.schema.week_col);
    p.schema.return_col = f.get<std::string>("return_col", p.schema.return_col);
    p.schema.market_cap_col = f.get<std::string>("market_cap_col", "");
    p.schema.char_cols = f.get<std::vector<std::string>>("char_cols", {});
    p.normalize = f.get<bool>("normalize", false);
    f.finish();
    cfg.panel = std::move(p);
}

inline void parse_dsl(Fields f, DslConfig& dsl) {
    dsl.cv_folds = f.get<int>("cv_folds", dsl.cv_folds);
    check(dsl.cv_folds >= 2, f, "cv_folds", "must be >= 2");
    dsl.amelioration_set = f.get<std::vector<std::size_t>>("amelioration_set", {});
    if (f.has("lambda_grid")) {
        const json& g = f.raw("lambda_grid");
        if (g.is_array()) {
            FixedLambdaGrid fixed{Fields::convert<std::vector<double>>(g, f.name("lambda_grid"))};
            for (double v : fixed.values) check(v >= 0.0, f, "lambda_grid", "values must be >= 0");
            check(!fixed.values.empty(), f, "lambda_grid", "must not be empty");
            dsl.lambda_grid = fixed;
        } else {
            Fields gf(g, f.name("lambda_grid"));
            AutoLambdaGrid a;
            a.n_points = gf.get<int>("n_points", a.n_points);
            a.ratio = gf.get<double>("ratio", a.ratio);
            gf.finish();
            check(a.n_points >= 1, f, "lambda_grid", "n_points must be >= 1");
            check(a.ratio > 0.0 && a.ratio < 1.0, f, "lambda_grid", "ratio must be in (0, 1)");
            dsl.lambda_grid = a;
        }
    } else {
        f.opt<int>("lambda_grid");
    }
    dsl.lasso.tol = f.get<double>("lasso_tol", dsl.lasso.tol);
    dsl.lasso.max_iters = f.get<int>("lasso_max_iters", dsl.lasso.max_iters);
    f.finish();
}

inline void parse_fit(Fields f, FitOptions& fit) {
    fit.k = f.opt<int>("k");
    if (fit.k) check(*fit.k >= 1, f, "k", "must be >= 1");
    fit.k_bar = f.get<int>("k_bar", fit.k_bar);
    check(fit.k_bar >= 1, f, "k_bar", "must be >= 1");
    if (f.has("threshold")) {
        const json& t = f.raw("threshold");
        if (t.is_number()) {
            check(t.get<double>() >= 0.0, f, "threshold", "must be >= 0");
            fit.threshold = t.get<double>();
        } else {
            Fields tf(t, f.name("threshold"));
            ThresholdCv cv;
            cv.n_grid = tf.get<int>("n_grid", cv.n_grid);
            cv.validation_fraction = tf.get<double>("validation_fraction", cv.validation_fraction);
            cv.windows = tf.get<std::vector<int>>("windows", cv.windows);
            tf.finish();
            check(cv.n_grid >= 1, f, "threshold", "n_grid must be >= 1");
            check(cv.validation_fraction > 0.0 && cv.validation_fraction < 1.0, f, "threshold",
                          "validation_fraction must be in (0, 1)");
            for (int w : cv.windows) check(w >= 1, f, "threshold", "windows must be >= 1");
            fit.threshold = cv;
        }
    } else {
        f.opt<int>("threshold");
    }
    fit.mode = parse_mode(f.get<std::string>("mode", "group_soft"), f.name("mode"));
    fit.window = f.get<int>("window", fit.window);
    check(fit.window >= 1, f, "window", "must be >= 1");
    f.finish();
}

inline void parse_simulate(Fields f, SimConfig& sim) {
    sim.N = f.get<int>("N", sim.N);
    sim.T = f.get<int>("T", sim.T);
    sim.p = f.get<int>("p", sim.p);
    sim.k = f.get<int>("k", sim.k);
    sim.s = f.opt<int>("s");
    sim.S = f.get<int>("S", sim.S);
    sim.target_r2_model = f.get<double>("target_r2_model", sim.target_r2_model);
    sim.target_r2_g = f.get<double>("target_r2_g", sim.target_r2_g);
    sim.char_mean_center = f.get<double>("char_mean_center", sim.char_mean_center);
    sim.char_mean_sd = f.get<double>("char_mean_sd", sim.char_mean_sd);
    sim.burn_in = f.get<int>("burn_in", sim.burn_in);
    sim.log_mcap_sd = f.get<double>("log_mcap_sd", sim.log_mcap_sd);
    check(sim.N >= 5, f, "N", "must be >= 5");
    check(sim.T >= 2, f, "T", "must be >= 2");
    check(sim.p >= 1, f, "p", "must be >= 1");
    check(sim.k >= 1 && sim.k <= sim.p, f, "k", "must be in [1, p]");
    if (sim.s) check(*sim.s >= 0 && *sim.s <= sim.p, f, "s", "must be in [0, p]");
    check(sim.S >= 2, f, "S", "must be >= 2");
    check(sim.target_r2_model > 0.0 && sim.target_r2_model <= 1.0, f, "target_r2_model", "must be in (0, 1]");
    check(sim.target_r2_g > 0.0 && sim.target_r2_g <= 1.0, f, "target_r2_g", "must be in (0, 1]");
    check(sim.burn_in >= 0, f, "burn_in", "must be >= 0");
    auto matrix = [&](const char* key, Eigen::MatrixXd& m) {
        if (f.has(key)) m = io::matrix_from_json(f.raw(key), "config: field '" + f.name(key) + "'");
        else f.opt<int>(key);
    };
    auto vector = [&](const char* key, Eigen::VectorXd& v) {
        if (f.has(key)) v = io::vector_from_json(f.raw(key), "config: field '" + f.name(key) + "'");
        else f.opt<int>(key);
    };
    vector("gamma0", sim.gamma0);
    vector("eta0", sim.eta0);
    matrix("Gamma0", sim.Gamma0);
    matrix("factor_var_coefs", sim.factor_var_coefs);
    matrix("factor_innov_cov", sim.factor_innov_cov);
    matrix("char_var_coefs", sim.char_var_coefs);
    matrix("char_innov_cov", sim.char_innov_cov);
    f.finish();
    sim = sim.resolved();
}

inline void parse_premium(Fields f, const fs::path& base, PremiumSettings& p) {
    if (auto path = f.opt<std::string>("factor_path")) p.factor_path = existing_file(base, *path, f.name("factor_path"));
    p.factor_name = f.get<std::string>("factor_name", p.factor_name);
    p.options.alpha = f.get<double>("alpha", p.options.alpha);
    check(p.options.alpha > 0.0 && p.options.alpha < 1.0, f, "alpha", "must be in (0, 1)");
    p.options.nw_lags = parse_lags(f, "nw_lags", p.options.nw_lags);
    p.options.min_coverage = f.get<double>("min_coverage", p.options.min_coverage);
    check(p.options.min_coverage > 0.0 && p.options.min_coverage <= 1.0, f, "min_coverage", "must be in (0, 1]");
    f.finish();
}

inline void parse_backtest(Fields f, const fs::path& base, BacktestSettings& b) {
    if (auto path = f.opt<std::string>("predictions")) b.predictions = existing_file(base, *path, f.name("predictions"));
    b.weighting_set = f.has("weighting");
    b.weightings = parse_weighting(f.get<std::string>("weighting", "both"), f.name("weighting"));
    b.first_week = f.opt<Week>("first_week");
    b.threshold = f.get<double>("threshold", b.threshold);
    check(b.threshold >= 0.0, f, "threshold", "must be >= 0");
    b.nw_lags = parse_lags(f, "nw_lags", std::nullopt);
    if (auto pf = f.child("pca_benchmark")) {
        PcaBenchmarkSettings p;
        p.k = pf->get<int>("k", p.k);
        p.refit_every = pf->get<int>("refit_every", p.refit_every);
        p.min_train = pf->get<int>("min_train", p.min_train);
        check(p.k >= 1, *pf, "k", "must be >= 1");
        check(p.refit_every >= 1, *pf, "refit_every", "must be >= 1");
        check(p.min_train >= 2, *pf, "min_train", "must be >= 2");
        pf->finish();
        b.pca = p;
    }
    if (auto of = f.child("observable_benchmark")) {
        ObservableBenchmarkOptions o;
        o.candidates = of->get<std::vector<std::size_t>>("candidates", {});
        o.selection_from = of->require<Week>("selection_from");
        o.selection_to = of->require<Week>("selection_to");
        o.test_from = of->require<Week>("test_from");
        o.test_to = of->require<Week>("test_to");
        o.max_size = of->get<int>("max_size", o.max_size);
        check(o.max_size >= 1 && o.max_size <= 3, *of, "max_size", "must be in [1, 3]");
        check(o.selection_from <= o.selection_to, *of, "selection_to", "must be >= selection_from");
        check(o.test_from <= o.test_to, *of, "test_to", "must be >= test_from");
        check(o.selection_to < o.test_from || o.test_to < o.selection_from, *of, "test_from",
                   "test window must not overlap the selection window");
        of->finish();
        b.observable = o;
    }
    f.finish();
}

}  // namespace detail

/// Parses a JSON config; relative paths resolve against base_dir.
inline RunConfig parse_config(const json& j, const fs::path& base_dir) {
    RunConfig cfg;
    cfg.base_dir = base_dir;
    Fields top(j, "");
    cfg.seed = top.get<std::uint64_t>("seed", 0);
    if (auto out = top.opt<std::string>("out")) cfg.out_dir = detail::resolve(base_dir, *out);
    if (auto f = top.child("panel")) detail::parse_panel(*f, base_dir, cfg);
    if (auto f = top.child("dsl")) detail::parse_dsl(*f, cfg.dsl);
    if (auto f = top.child("fit")) detail::parse_fit(*f, cfg.fit);
    if (auto f = top.child("simulate")) detail::parse_simulate(*f, cfg.sim);
    if (auto f = top.child("premium")) detail::parse_premium(*f, base_dir, cfg.premium);
    if (auto f = top.child("importance")) {
        cfg.bootstrap_draws = f->get<int>("B", cfg.bootstrap_draws);
        detail::check(cfg.bootstrap_draws >= 2, *f, "B", "must be >= 2");
        f->finish();
    }
    if (auto f = top.child("backtest")) detail::parse_backtest(*f, base_dir, cfg.backtest);
    top.finish();
    return cfg;
}

inline RunConfig load_config(const fs::path& path) {
    std::ifstream in(path);
    if (!in) throw ConfigError("config: cannot open '" + path.string() + "'");
    json j;
    try {
        j = json::parse(in);
    } catch (const json::parse_error& e) {
        throw ConfigError("config: '" + path.string() + "' is not valid JSON: " + e.what());
    }
    return parse_config(j, path.has_parent_path() ? path.parent_path() : fs::path("."));
}

// ---- Echo ---------------------------------------------------------------
// The resolved settings each subcommand used. The config hash is computed
// over this echo, so defaults and file contents are covered but thread
// count and output directory are not.

inline std::string file_digest(const fs::path& path) {
    std::ifstream in(path, std::ios::binary);
    std::ostringstream buf;
    buf << in.rdbuf();
    return io::hex64(io::fnv1a(buf.str()));
}

inline json lags_json(const std::optional<int>& lags) { return lags ? json(*lags) : json("auto"); }

inline json panel_echo(const PanelSettings& p) {
    return {{"path", p.path.filename().string()},
            {"fnv1a", file_digest(p.path)},
            {"asset_col", p.schema.asset_col},
            {"week_col", p.schema.week_col},
            {"return_col", p.schema.return_col},
            {"market_cap_col", p.schema.market_cap_col},
            {"char_cols", p.schema.char_cols},
            {"normalize", p.normalize}};
}

inline json dsl_echo(const DslConfig& d) {
    json grid;
    if (auto* fixed = std::get_if<FixedLambdaGrid>(&d.lambda_grid)) {
        grid = fixed->values;
    } else {
        const auto& a = std::get<AutoLambdaGrid>(d.lambda_grid);
        grid = {{"n_points", a.n_points}, {"ratio", a.ratio}};
    }
    return {{"cv_folds", d.cv_folds},
            {"amelioration_set", d.amelioration_set},
            {"lambda_grid", grid},
            {"lasso_tol", d.lasso.tol},
            {"lasso_max_iters", d.lasso.max_iters}};
}

inline json fit_echo(const FitOptions& f) {
    json threshold;
    if (auto* v = std::get_if<double>(&f.threshold)) {
        threshold = *v;
    } else {
        const auto& cv = std::get<ThresholdCv>(f.threshold);
        threshold = {{"n_grid", cv.n_grid}, {"validation_fraction", cv.validation_fraction}, {"windows", cv.windows}};
    }
    return {{"k", f.k ? json(*f.k) : json(nullptr)},
            {"k_bar", f.k_bar},
            {"threshold", threshold},
            {"mode", io::mode_name(f.mode)},
            {"window", f.window}};
}

inline json premium_echo(const PremiumSettings& p) {
    return {{"factor_path", p.factor_path ? json(p.factor_path->filename().string()) : json(nullptr)},
            {"factor_fnv1a", p.factor_path ? json(file_digest(*p.factor_path)) : json(nullptr)},
            {"factor_name", p.factor_name},
            {"alpha", p.options.alpha},
            {"nw_lags", lags_json(p.options.nw_lags)},
            {"min_coverage", p.options.min_coverage}};
}

inline json backtest_echo(const BacktestSettings& b) {
    json w = json::array();
    for (auto x : b.weightings) w.push_back(io::weighting_name(x));
    json j{{"predictions", b.predictions ? json(b.predictions->filename().string()) : json(nullptr)},
           {"predictions_fnv1a", b.predictions ? json(file_digest(*b.predictions)) : json(nullptr)},
           {"weighting", w},
           {"first_week", b.first_week ? json(*b.first_week) : json(nullptr)},
           {"threshold", b.threshold},
           {"nw_lags", lags_json(b.nw_lags)}};
    if (b.pca) j["pca_benchmark"] = {{"k", b.pca->k}, {"refit_every", b.pca->refit_every}, {"min_train", b.pca->min_train}};
    if (b.observable) {
        const auto& o = *b.observable;
        j["observable_benchmark"] = {{"candidates", o.candidates},         {"selection_from", o.selection_from},
                                     {"selection_to", o.selection_to},     {"test_from", o.test_from},
                                     {"test_to", o.test_to},               {"max_size", o.max_size}};
    }
    return j;
}

}  // namespace dslfm::cli
