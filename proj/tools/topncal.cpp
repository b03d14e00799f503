// Command-line front end: ingest, synth, run, sweep-n, grid, diagrams.

#include <CLI11.hpp>

#include <cstdio>
#include <filesystem>
#include <iostream>

#include "topncal/bundle.hpp"
#include "topncal/runner.hpp"

namespace {

using namespace topncal;

struct Overrides {
    std::vector<std::uint64_t> seeds;
    std::string out;
    std::optional<std::size_t> fixed_bins;
    std::optional<int> n;
    std::optional<double> alpha;
    std::optional<int> groups;
};

void add_overrides(CLI::App* cmd, Overrides& o) {
    cmd->add_option("--seed-list", o.seeds, "Seeds to run, e.g. --seed-list 0,1,2 (default: config, else 0..9)")
        ->delimiter(',');
    cmd->add_option("--out", o.out, "Output directory (default: config output_dir, else ./out)");
    cmd->add_option("--fixed-bins", o.fixed_bins, "Use M equal-count bins instead of the adaptive bin count");
    cmd->add_option("--n", o.n, "Top-N cutoff (default 20)");
    cmd->add_option("--alpha", o.alpha, "TNF rank-discount exponent (default 1)");
    cmd->add_option("--groups", o.groups, "TNF rank groups (default round(N/5))");
}

ExperimentConfig resolve(const std::string& path, const Overrides& o) {
    auto cfg = load_config(path);
    if (!o.seeds.empty()) cfg.seeds = o.seeds;
    if (!o.out.empty()) cfg.output_dir = o.out;
    if (o.fixed_bins) cfg.fixed_bins = o.fixed_bins;
    if (o.n) cfg.n = *o.n;
    if (o.alpha) cfg.alpha = *o.alpha;
    if (o.groups) cfg.groups = o.groups;
    cfg.validate();
    return cfg;
}

void print_summary(const std::vector<SummaryRow>& rows) {
    std::printf("%-9s %-10s %-9s %-8s %4s %12s %12s %6s\n", "model", "calibrator", "strategy", "metric", "N", "mean",
                "std", "fail");
    for (const auto& r : rows) {
        std::printf("%-9s %-10s %-9s %-8s %4d %12.6f %12.6f %6zu\n", r.recommender.c_str(), r.calibrator.c_str(),
                    r.strategy.c_str(), r.metric.c_str(), r.n, r.mean, r.std, r.n_failed);
    }
}

void write_experiment(const ExperimentResult& res, const std::string& dir) {
    {
        auto out = detail::open_output(dir, "results.csv");
        write_results_csv(res.rows, out);
    }
    auto out = detail::open_output(dir, "summary.csv");
    write_summary_csv(res.summary, out);
}

template <typename T>
std::vector<T> parse_list(const std::string& s, const char* what) {
    std::vector<T> out;
    std::stringstream ss(s);
    for (std::string tok; std::getline(ss, tok, ',');) {
        try {
            std::size_t used = 0;
            if constexpr (std::is_same_v<T, int>) {
                out.push_back(std::stoi(tok, &used));
            } else {
                out.push_back(std::stod(tok, &used));
            }
            if (used != tok.size()) throw std::invalid_argument(tok);
        } catch (const std::exception&) {
            throw ConfigError(std::string("bad value '") + tok + "' in " + what);
        }
    }
    if (out.empty()) throw ConfigError(std::string(what) + " is empty");
    return out;
}

int cmd_ingest(const std::string& input, const std::string& kind, const std::string& delimiter, double rmin,
               double rmax, const std::string& out_dir) {
    CsvSchema schema;
    schema.delimiter = delimiter;
    schema.rating_min = rmin;
    schema.rating_max = rmax;
    InteractionTable t;
    if (kind == "explicit") {
        t = load_explicit_csv(input, schema);
    } else if (kind == "implicit") {
        t = load_implicit_csv(input, schema);
    } else {
        throw ConfigError("--kind must be explicit or implicit");
    }
    {
        auto out = detail::open_output(out_dir, "interactions.csv");
        write_table_csv(t, out);
    }
    auto map = detail::open_output(out_dir, "id_map.csv");
    write_id_map(t, map);
    std::printf("%zu records, %d users, %d items -> %s\n", t.size(), t.n_users(), t.n_items(), out_dir.c_str());
    return 0;
}

int cmd_synth(const std::string& config, const std::string& out_dir) {
    const auto cfg = load_config(config);
    const auto data = generate_synthetic(cfg.dataset.synthetic);
    const std::string dir = out_dir.empty() ? cfg.output_dir : out_dir;
    {
        auto out = detail::open_output(dir, "interactions.csv");
        write_table_csv(data.table, out);
    }
    {
        auto out = detail::open_output(dir, "truth.csv");
        out << "user,item,probability,score\n";
        for (int u = 0; u < data.truth.n_users; ++u) {
            for (int i = 0; i < data.truth.n_items; ++i) {
                out << u << ',' << i << ',' << detail::format_double(data.truth.p(u, i)) << ','
                    << detail::format_double(data.truth.s(u, i)) << '\n';
            }
        }
    }
    auto spec = detail::open_output(dir, "synthetic_spec.json");
    spec << to_json(cfg.dataset.synthetic).dump(2) << '\n';
    std::printf("%zu records (%d users x %d items) -> %s\n", data.table.size(), data.truth.n_users, data.truth.n_items,
                dir.c_str());
    return 0;
}

int cmd_run(const ExperimentConfig& cfg) {
    const auto res = run_experiment(cfg);
    write_experiment(res, cfg.output_dir);
    print_summary(res.summary);
    return 0;
}

int cmd_sweep(const ExperimentConfig& cfg, const std::string& n_list) {
    const auto list = n_list.empty() ? default_n_list() : parse_list<int>(n_list, "--n-list");
    const auto data = load_dataset(cfg.dataset);
    const auto res = run_sweep_n(cfg, data, list);
    write_experiment(res, cfg.output_dir);
    print_summary(res.summary);
    return 0;
}

int cmd_grid(const ExperimentConfig& cfg, const std::string& alphas, const std::string& groups) {
    const auto a = alphas.empty() ? std::vector<double>{0.0, 0.2, 0.5, 1.0, 2.0, 3.0} : parse_list<double>(alphas, "--alpha-list");
    const auto g = groups.empty() ? std::vector<int>{1, 2, 4, 10, 20} : parse_list<int>(groups, "--groups-list");
    const auto data = load_dataset(cfg.dataset);
    const auto res = run_sensitivity_grid(cfg, data, a, g);
    {
        auto out = detail::open_output(cfg.output_dir, "results.csv");
        write_results_csv(res.rows, out);
    }
    auto out = detail::open_output(cfg.output_dir, "heatmap.csv");
    write_heatmap_csv(res.heatmap, out);
    write_heatmap_csv(res.heatmap, std::cout);
    return 0;
}

// Diagram data and a model bundle for the first seed of the config.
int cmd_diagrams(const ExperimentConfig& cfg, std::size_t n_bins) {
    const auto data = load_dataset(cfg.dataset);
    const auto st = prepare_seed(cfg, data, cfg.seeds.front());
    std::vector<FittedStrategy> fitted;
    std::vector<std::pair<std::string, std::string>> names;
    for (auto strategy : cfg.strategies) {
        std::vector<std::optional<CalibratorKind>> cals;
        if (strategy == StrategyKind::vanilla) {
            cals.emplace_back();
        } else {
            cals.assign(cfg.calibrators.begin(), cfg.calibrators.end());
        }
        for (const auto& cal : cals) {
            const std::string cal_name = cal ? to_string(*cal) : kNoCalibrator;
            try {
                fitted.push_back(fit_strategy(strategy, cfg, data, st, cal, cfg.n));
                names.emplace_back(to_string(strategy), cal_name);
            } catch (const Error& e) {
                std::fprintf(stderr, "warning: %s/%s skipped: %s\n", to_string(strategy), cal_name.c_str(), e.what());
            }
        }
    }
    std::vector<DiagramInput> inputs;
    json bundle = make_bundle();
    bundle["seed"] = st.seed;
    bundle["recommender"] = st.model;
    bundle["strategies"] = json::array();
    for (std::size_t k = 0; k < fitted.size(); ++k) {
        inputs.push_back({names[k].first, names[k].second, &fitted[k], &st.test});
        bundle["strategies"].push_back({{"name", names[k].first + "/" + names[k].second}, {"strategy", fitted[k]}});
    }
    DiagramOptions opt;
    opt.n = cfg.n;
    opt.n_bins = n_bins;
    if (st.model.score_range == ScoreRange::rating_scale) {
        opt.lo = st.model.rating_min;
        opt.hi = st.model.rating_max;
    }
    emit_diagrams(inputs, cfg.output_dir, opt);
    std::filesystem::create_directories(cfg.output_dir);
    save_bundle(bundle, (std::filesystem::path(cfg.output_dir) / "bundle.json").string());
    std::printf("reliability.csv, rankplot.csv, bundle.json -> %s\n", cfg.output_dir.c_str());
    return 0;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"Top-N focused calibration of recommender scores: experiments and diagnostics"};
    app.require_subcommand(1);

    std::string input, kind = "explicit", delimiter = ",", ingest_out = "out/ingest";
    double rmin = 1.0, rmax = 5.0;
    auto* ingest = app.add_subcommand("ingest", "Validate a feedback CSV and write it with a dense id map");
    ingest->add_option("--input", input, "Input CSV (user,item,feedback[,...])")->required();
    ingest->add_option("--kind", kind, "explicit or implicit")->capture_default_str();
    ingest->add_option("--delimiter", delimiter, "Field separator, e.g. :: for MovieLens .dat")->capture_default_str();
    ingest->add_option("--rating-min", rmin, "Lowest valid rating")->capture_default_str();
    ingest->add_option("--rating-max", rmax, "Highest valid rating")->capture_default_str();
    ingest->add_option("--out", ingest_out, "Output directory")->capture_default_str();

    std::string config, synth_out;
    auto* synth = app.add_subcommand("synth", "Generate the synthetic dataset of a config");
    synth->add_option("--config", config, "Experiment config (JSON)")->required()->check(CLI::ExistingFile);
    synth->add_option("--out", synth_out, "Output directory (default: config output_dir)");

    Overrides o;
    auto* run = app.add_subcommand("run", "Run every (seed, calibrator, strategy) cell; writes results.csv, summary.csv");
    run->add_option("--config", config, "Experiment config (JSON)")->required()->check(CLI::ExistingFile);
    add_overrides(run, o);

    std::string n_list;
    auto* sweep = app.add_subcommand("sweep-n", "ECE@N and RDECE@N over several N (default 5,10,20,50,100)");
    sweep->add_option("--config", config, "Experiment config (JSON)")->required()->check(CLI::ExistingFile);
    sweep->add_option("--n-list", n_list, "Comma-separated cutoffs");
    add_overrides(sweep, o);

    std::string alpha_list, groups_list;
    auto* grid = app.add_subcommand("grid", "TNF sensitivity heatmap over alpha x groups; writes heatmap.csv");
    grid->add_option("--config", config, "Experiment config (JSON)")->required()->check(CLI::ExistingFile);
    grid->add_option("--alpha-list", alpha_list, "Comma-separated alphas (default 0,0.2,0.5,1,2,3)");
    grid->add_option("--groups-list", groups_list, "Comma-separated group counts (default 1,2,4,10,20)");
    add_overrides(grid, o);

    std::size_t n_bins = 15;
    auto* diagrams = app.add_subcommand("diagrams", "Reliability and rank-calibration plot data for the first seed");
    diagrams->add_option("--config", config, "Experiment config (JSON)")->required()->check(CLI::ExistingFile);
    diagrams->add_option("--bins", n_bins, "Reliability bins")->capture_default_str();
    add_overrides(diagrams, o);

    CLI11_PARSE(app, argc, argv);

    try {
        if (*ingest) return cmd_ingest(input, kind, delimiter, rmin, rmax, ingest_out);
        if (*synth) return cmd_synth(config, synth_out);
        const auto cfg = resolve(config, o);
        if (*run) return cmd_run(cfg);
        if (*sweep) return cmd_sweep(cfg, n_list);
        if (*grid) return cmd_grid(cfg, alpha_list, groups_list);
        if (*diagrams) return cmd_diagrams(cfg, n_bins);
    } catch (const topncal::ConfigError& e) {
        std::fprintf(stderr, "config error: %s\n", e.what());
        return 2;
    } catch (const std::exception& e) {
        std::fprintf(stderr, "error: %s\n", e.what());
        return 1;
    }
    return 0;
}
