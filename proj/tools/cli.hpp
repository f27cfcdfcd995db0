#pragma once

#include <charconv>
#include <cstdlib>
#include <fstream>
#include <iostream>
#include <string>

#include <CLI11.hpp>

#include "config.hpp"

namespace dslfm::cli {

struct Invocation {
    std::string command;
    fs::path config;
    std::optional<std::uint64_t> seed;
    std::optional<std::size_t> threads;
    std::optional<fs::path> out;
};

/// Everything a subcommand needs once flags and config are merged.
struct Context {
    std::string command;
    RunConfig cfg;
    std::uint64_t seed = 0;
    fs::path out_dir;
    Executor exec;
};

namespace detail {

inline std::size_t threads_from_env() {
    const char* env = std::getenv("DSLFM_THREADS");
    if (!env || !*env) return 1;
    const std::string_view s(env);
    std::size_t n = 0;
    auto [ptr, ec] = std::from_chars(s.data(), s.data() + s.size(), n);
    if (ec != std::errc{} || ptr != s.data() + s.size() || n == 0) {
        throw ConfigError("DSLFM_THREADS must be a positive integer, got '" + std::string(s) + "'");
    }
    return n;
}

inline void write_file(const fs::path& path, const std::string& body) {
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) throw InputError("cannot write '" + path.string() + "'");
    out << body;
    if (!out) throw InputError("failed writing '" + path.string() + "'");
}

inline Panel load_input_panel(const RunConfig& cfg) {
    if (!cfg.panel) throw ConfigError("config: field 'panel' is required for this subcommand");
    Panel panel = load_panel(cfg.panel->path.string(), cfg.panel->schema);
    return cfg.panel->normalize ? normalize_characteristics(panel) : panel;
}

inline DslConfig seeded_dsl(const Context& ctx) {
    DslConfig dsl = ctx.cfg.dsl;
    dsl.seed = ctx.seed;
    return dsl;
}

}  // namespace detail

/// Writes <command>.json and <command>.txt under the output directory. The
/// JSON wraps the result with the settings echo, its hash and the seed; the
/// text file is rendered from that same document.
class Emitter {
public:
    Emitter(const Context& ctx, json settings) : ctx_(ctx) {
        json hashed{{"command", ctx.command}, {"seed", ctx.seed}, {"settings", settings}};
        hash_ = io::hex64(io::fnv1a(hashed.dump()));
        doc_["command"] = ctx.command;
        doc_["config_hash"] = hash_;
        doc_["seed"] = ctx.seed;
        doc_["settings"] = std::move(settings);
    }

    const std::string& hash() const { return hash_; }

    std::string stamp() const { return "config_hash=" + hash_ + " seed=" + std::to_string(ctx_.seed); }

    json& result() { return doc_["result"]; }

    fs::path write_json() const {
        const fs::path path = ctx_.out_dir / (ctx_.command + ".json");
        detail::write_file(path, doc_.dump(2) + "\n");
        return path;
    }

    fs::path write_table(const std::string& table) const {
        const fs::path path = ctx_.out_dir / (ctx_.command + ".txt");
        detail::write_file(path, "# dslfm " + ctx_.command + " " + stamp() + "\n" + table);
        return path;
    }

    template <class Fn>
    fs::path write_csv(const std::string& name, Fn&& body) const {
        std::ostringstream os;
        io::write_comment(os, stamp());
        body(os);
        const fs::path path = ctx_.out_dir / name;
        detail::write_file(path, os.str());
        return path;
    }

private:
    const Context& ctx_;
    json doc_;
    std::string hash_;
};

inline void cmd_simulate(const Context& ctx, std::ostream& log) {
    SimConfig sim = ctx.cfg.sim;
    sim.seed = ctx.seed;
    const EstimatorSuite suite = default_suite(sim);
    json settings{{"simulate", io::sim_config_json(sim.resolved())},
                  {"suite", {{"dsl", dsl_echo(suite.dsl)},
                             {"fit", fit_echo(suite.fit)},
                             {"nw_lags", lags_json(suite.premium.nw_lags)},
                             {"alpha", suite.premium.alpha}}}};
    Emitter em(ctx, std::move(settings));
    const SimReport rep = run_monte_carlo(sim, suite, ctx.exec);
    if (rep.failures == rep.S) throw EstimationError("simulate: every draw failed; first error: " + rep.draws.front().error);
    em.result() = io::sim_report_json(rep);
    em.write_json();
    em.write_table(io::render_sim_table(em.result()));
    log << io::render_sim_table(em.result());
}

inline json fit_settings(const Context& ctx) {
    return {{"panel", panel_echo(*ctx.cfg.panel)}, {"dsl", dsl_echo(ctx.cfg.dsl)}, {"fit", fit_echo(ctx.cfg.fit)}};
}

inline void cmd_fit(const Context& ctx, std::ostream& log) {
    const Panel panel = detail::load_input_panel(ctx.cfg);
    Emitter em(ctx, fit_settings(ctx));
    const auto fit = fit_dslfm(panel, detail::seeded_dsl(ctx), ctx.cfg.fit, ctx.exec);
    em.result() = io::fit_json(fit);
    em.write_json();
    em.write_table(io::render_fit_table(em.result()));
    em.write_csv("c_hat.csv", [&](std::ostream& os) { io::write_c_hat_csv(os, fit.c_hat); });
    log << io::render_fit_table(em.result());
}

inline void cmd_premium(const Context& ctx, std::ostream& log) {
    const auto& ps = ctx.cfg.premium;
    if (!ps.factor_path) throw ConfigError("config: field 'premium.factor_path' is required for the premium subcommand");
    const Panel panel = detail::load_input_panel(ctx.cfg);
    const auto g = io::load_factor_series(ps.factor_path->string(), ps.factor_name);
    json settings = fit_settings(ctx);
    settings["premium"] = premium_echo(ps);
    Emitter em(ctx, std::move(settings));
    const auto fit = fit_dslfm(panel, detail::seeded_dsl(ctx), ctx.cfg.fit, ctx.exec);
    const auto est = risk_premium(panel, fit, g, ps.options);
    std::optional<RpTest> test;
    if (est.sigma_g > 0.0) test = rp_test(est);
    em.result() = {{"fit", {{"k", fit.k}, {"threshold", fit.threshold_lambda}, {"weeks", fit.weeks.size()}, {"warnings", fit.warnings}}},
                   {"premium", io::premium_json(est, test)}};
    em.write_json();
    em.write_table(io::render_premium_table(em.result()["premium"]));
    log << io::render_premium_table(em.result()["premium"]);
}

inline void cmd_importance(const Context& ctx, std::ostream& log) {
    const Panel panel = detail::load_input_panel(ctx.cfg);
    json settings = fit_settings(ctx);
    settings["importance"] = {{"B", ctx.cfg.bootstrap_draws}};
    Emitter em(ctx, std::move(settings));
    const auto rep = char_importance(panel, ctx.cfg.dsl, ctx.cfg.fit, ctx.cfg.bootstrap_draws, ctx.seed, ctx.exec);
    em.result() = io::importance_json(rep);
    em.write_json();
    em.write_table(io::render_importance_table(em.result()));
    log << io::render_importance_table(em.result());
}

namespace detail {

inline PredictionSet from_week(PredictionSet ps, Week first) {
    std::erase_if(ps.items, [&](const Prediction& p) { return p.week < first; });
    return ps;
}

}  // namespace detail

inline void cmd_backtest(const Context& ctx, std::ostream& log) {
    const auto& bt = ctx.cfg.backtest;
    const Panel panel = detail::load_input_panel(ctx.cfg);
    if (!bt.predictions && !ctx.cfg.fit.k) {
        throw ConfigError("config: field 'fit.k' is required when 'backtest.predictions' is not given");
    }
    json settings = fit_settings(ctx);
    settings["backtest"] = backtest_echo(bt);
    Emitter em(ctx, std::move(settings));

    std::vector<std::pair<std::string, PredictionSet>> strategies;
    const Week first_week = bt.first_week ? *bt.first_week : panel.weeks()[panel.num_weeks() / 2];
    if (bt.predictions) {
        strategies.emplace_back("predictions", io::load_predictions(bt.predictions->string()));
    } else {
        const auto c_hat = build_char_portfolio_matrix(panel, detail::seeded_dsl(ctx), ctx.exec);
        auto preds = predict_walk_forward(panel, c_hat, *ctx.cfg.fit.k, bt.threshold, ctx.cfg.fit.mode, ctx.cfg.fit.window, first_week);
        em.write_csv("predictions_dslfm.csv", [&](std::ostream& os) { io::write_predictions_csv(os, preds); });
        strategies.emplace_back("dslfm", std::move(preds));
    }
    if (bt.pca) {
        auto preds = pca_benchmark(panel, bt.pca->k, bt.pca->refit_every, bt.pca->min_train);
        strategies.emplace_back("pca", bt.predictions ? std::move(preds) : detail::from_week(std::move(preds), first_week));
    }
    json observable;
    if (bt.observable) {
        const auto ob = observable_factor_benchmark(panel, *bt.observable, ctx.exec);
        observable = io::observable_json(ob, panel.char_names());
        for (std::size_t m = 0; m < ob.best.size(); ++m) {
            strategies.emplace_back("observable" + std::to_string(ob.best[m].chars.size()), ob.predictions[m]);
        }
    }

    std::vector<Weighting> weightings;
    std::vector<std::string> diagnostics;
    for (auto w : bt.weightings) {
        if (w == Weighting::value && !panel.has_market_cap() && !bt.weighting_set) {
            diagnostics.emplace_back("value weighting skipped: the panel has no market cap column");
            continue;
        }
        weightings.push_back(w);
    }

    json rows = json::array();
    for (auto w : weightings) {
        for (const auto& [name, preds] : strategies) {
            const auto series = sort_quintiles(preds, panel, w);
            if (series.weeks.empty()) {
                throw InputError("backtest: predictions for '" + name + "' and the panel share no week (empty overlap)");
            }
            const auto market = market_returns(panel, series.weeks, w);
            const auto stats = perf_stats(series, market, bt.nw_lags);
            rows.push_back(io::strategy_json(name + "/" + io::weighting_name(w), series, stats, bt.nw_lags));
        }
    }
    em.result() = {{"first_week", bt.predictions ? json(nullptr) : json(first_week)}, {"strategies", rows}};
    if (!observable.is_null()) em.result()["observable"] = observable;
    em.result()["diagnostics"] = diagnostics;
    em.write_json();
    em.write_table(io::render_backtest_table(em.result()));
    log << io::render_backtest_table(em.result());
}

inline int exit_code_for(const std::exception& e) {
    if (dynamic_cast<const ConfigError*>(&e) || dynamic_cast<const CalibrationError*>(&e)) return 2;
    return 1;
}

/// Parses argv, runs one subcommand and returns the process exit code:
/// 0 success, 1 data or estimation failure, 2 configuration error.
inline int run(int argc, char** argv, std::ostream& out = std::cout, std::ostream& err = std::cerr) {
    CLI::App app{"Double-selection lasso factor model"};
    app.require_subcommand(1);
    Invocation inv;
    std::uint64_t seed = 0;
    std::size_t threads = 0;
    std::string out_dir;

    for (const char* name : {"simulate", "fit", "premium", "backtest", "importance"}) {
        auto* sub = app.add_subcommand(name);
        sub->add_option("--config", inv.config, "JSON config file")->required();
        sub->add_option("--seed", seed, "Seed (overrides the config)");
        sub->add_option("--threads", threads, "Worker threads (default: DSLFM_THREADS or 1)")->check(CLI::PositiveNumber);
        sub->add_option("--out", out_dir, "Output directory (overrides the config)");
    }
    app.get_subcommand("simulate")->description("Monte Carlo study of the estimators on a synthetic panel");
    app.get_subcommand("fit")->description("Estimate factors and sparse loadings");
    app.get_subcommand("premium")->description("Risk premium of an observable factor");
    app.get_subcommand("backtest")->description("Quintile-sort backtest of return predictions");
    app.get_subcommand("importance")->description("Bootstrap characteristic importance");

    try {
        app.parse(argc, argv);
    } catch (const CLI::CallForHelp& e) {
        return app.exit(e, out, err);
    } catch (const CLI::ParseError& e) {
        app.exit(e, out, err);
        return 2;
    }
    inv.command = app.get_subcommands().front()->get_name();
    auto* sub = app.get_subcommands().front();
    if (sub->count("--seed")) inv.seed = seed;
    if (sub->count("--threads")) inv.threads = threads;
    if (sub->count("--out")) inv.out = out_dir;

    try {
        Context ctx{inv.command, load_config(inv.config), 0, {}, Executor(1)};
        ctx.seed = inv.seed ? *inv.seed : ctx.cfg.seed;
        ctx.exec = Executor(inv.threads ? *inv.threads : detail::threads_from_env());
        ctx.out_dir = inv.out ? *inv.out : ctx.cfg.out_dir ? *ctx.cfg.out_dir : fs::path(".");
        std::error_code ec;
        fs::create_directories(ctx.out_dir, ec);
        if (ec) throw ConfigError("cannot create output directory '" + ctx.out_dir.string() + "': " + ec.message());

        if (ctx.command == "simulate") cmd_simulate(ctx, out);
        else if (ctx.command == "fit") cmd_fit(ctx, out);
        else if (ctx.command == "premium") cmd_premium(ctx, out);
        else if (ctx.command == "importance") cmd_importance(ctx, out);
        else cmd_backtest(ctx, out);
    } catch (const std::exception& e) {
        err << "dslfm " << inv.command << ": " << e.what() << '\n';
        return exit_code_for(e);
    }
    return 0;
}

}  // namespace dslfm::cli
