#pragma once

// Experiment pipeline: dataset -> split -> recommender -> calibration
// strategies -> top-N metrics, repeated over seeds, with CSV outputs.

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <map>
#include <optional>
#include <sstream>
#include <string>
#include <tuple>
#include <vector>

#include "json.hpp"
#include "topncal/calibrators.hpp"
#include "topncal/dataset.hpp"
#include "topncal/metrics.hpp"
#include "topncal/recommenders.hpp"
#include "topncal/strategy.hpp"

namespace topncal {

// ---------------------------------------------------------------------------
// Configuration

struct DatasetConfig {
    std::string source = "synthetic";  // synthetic | explicit_csv | implicit_csv
    std::string path;
    CsvSchema schema;
    SyntheticSpec synthetic;
};

struct RecommenderConfig {
    RecommenderKind kind = RecommenderKind::mf;
    int k = 50;
    FactorConfig factors;
};

struct ExperimentConfig {
    DatasetConfig dataset;
    RecommenderConfig recommender;
    std::vector<CalibratorKind> calibrators{CalibratorKind::isotonic};
    std::vector<StrategyKind> strategies{StrategyKind::vanilla, StrategyKind::original, StrategyKind::tnf};
    int n = 20;
    std::optional<int> groups;  // default: N / 5
    double alpha = 1.0;
    int vad_k = 5;
    double vad_lambda = 1.0;
    std::vector<std::uint64_t> seeds{0, 1, 2, 3, 4, 5, 6, 7, 8, 9};
    std::optional<std::size_t> max_bins;    // adaptive sweep upper bound; default min(n/10, 100)
    std::optional<std::size_t> fixed_bins;  // disables the adaptive sweep
    int histogram_bins = 15;
    bool conventional_ece = true;
    bool accuracy = true;
    std::string output_dir = "out";

    int group_count() const { return groups.value_or(default_group_count(n)); }

    void validate() const {
        if (n < 1) throw ConfigError("config: n must be >= 1");
        if (seeds.empty()) throw ConfigError("config: seeds must not be empty");
        if (strategies.empty()) throw ConfigError("config: at least one strategy is required");
        const bool needs_calibrator = std::any_of(strategies.begin(), strategies.end(),
                                                  [](StrategyKind s) { return s != StrategyKind::vanilla; });
        if (needs_calibrator && calibrators.empty()) throw ConfigError("config: at least one calibrator is required");
        if (vad_k < 2 && std::find(strategies.begin(), strategies.end(), StrategyKind::vad) != strategies.end()) {
            throw ConfigError("config: vad_k must be >= 2");
        }
        if (histogram_bins < 1) throw ConfigError("config: histogram_bins must be >= 1");
    }
};

namespace detail {

template <typename T>
void read_opt(const nlohmann::json& j, const char* key, T& out) {
    if (j.contains(key) && !j[key].is_null()) out = j[key].get<T>();
}

inline RankDistortion::Kind parse_distortion_kind(const std::string& s) {
    if (s == "identity") return RankDistortion::Kind::identity;
    if (s == "popularity") return RankDistortion::Kind::popularity;
    if (s == "top_rank_offset") return RankDistortion::Kind::top_rank_offset;
    throw ConfigError("unknown rank distortion '" + s + "'");
}

inline const char* to_string(RankDistortion::Kind k) {
    switch (k) {
        case RankDistortion::Kind::identity: return "identity";
        case RankDistortion::Kind::popularity: return "popularity";
        case RankDistortion::Kind::top_rank_offset: return "top_rank_offset";
    }
    return "?";
}

}  // namespace detail

inline SyntheticSpec synthetic_spec_from_json(const nlohmann::json& j) {
    SyntheticSpec s;
    detail::read_opt(j, "n_users", s.n_users);
    detail::read_opt(j, "n_items", s.n_items);
    detail::read_opt(j, "latent_dim", s.latent_dim);
    detail::read_opt(j, "factor_scale", s.factor_scale);
    detail::read_opt(j, "user_bias_scale", s.user_bias_scale);
    detail::read_opt(j, "item_bias_mean", s.item_bias_mean);
    detail::read_opt(j, "item_bias_scale", s.item_bias_scale);
    detail::read_opt(j, "noise_scale", s.noise_scale);
    detail::read_opt(j, "seed", s.seed);
    if (j.contains("distortion")) {
        const auto& d = j["distortion"];
        if (d.contains("kind")) s.distortion.kind = detail::parse_distortion_kind(d["kind"].get<std::string>());
        detail::read_opt(d, "c1", s.distortion.c1);
        detail::read_opt(d, "c2", s.distortion.c2);
        detail::read_opt(d, "top_k", s.distortion.top_k);
        detail::read_opt(d, "offset", s.distortion.offset);
    }
    return s;
}

inline nlohmann::json to_json(const SyntheticSpec& s) {
    return {{"n_users", s.n_users},
            {"n_items", s.n_items},
            {"latent_dim", s.latent_dim},
            {"factor_scale", s.factor_scale},
            {"user_bias_scale", s.user_bias_scale},
            {"item_bias_mean", s.item_bias_mean},
            {"item_bias_scale", s.item_bias_scale},
            {"noise_scale", s.noise_scale},
            {"seed", s.seed},
            {"distortion",
             {{"kind", detail::to_string(s.distortion.kind)},
              {"c1", s.distortion.c1},
              {"c2", s.distortion.c2},
              {"top_k", s.distortion.top_k},
              {"offset", s.distortion.offset}}}};
}

inline ExperimentConfig config_from_json(const nlohmann::json& j) {
    ExperimentConfig c;
    try {
        if (j.contains("dataset")) {
            const auto& d = j["dataset"];
            detail::read_opt(d, "source", c.dataset.source);
            detail::read_opt(d, "path", c.dataset.path);
            detail::read_opt(d, "rating_min", c.dataset.schema.rating_min);
            detail::read_opt(d, "rating_max", c.dataset.schema.rating_max);
            detail::read_opt(d, "user_column", c.dataset.schema.user_column);
            detail::read_opt(d, "item_column", c.dataset.schema.item_column);
            detail::read_opt(d, "feedback_column", c.dataset.schema.feedback_column);
            detail::read_opt(d, "delimiter", c.dataset.schema.delimiter);
            if (d.contains("synthetic")) c.dataset.synthetic = synthetic_spec_from_json(d["synthetic"]);
        }
        if (j.contains("recommender")) {
            const auto& r = j["recommender"];
            if (r.contains("kind")) c.recommender.kind = parse_recommender_kind(r["kind"].get<std::string>());
            detail::read_opt(r, "k", c.recommender.k);
            detail::read_opt(r, "factors", c.recommender.factors.factors);
            detail::read_opt(r, "epochs", c.recommender.factors.epochs);
            detail::read_opt(r, "lr", c.recommender.factors.lr);
            detail::read_opt(r, "reg", c.recommender.factors.reg);
        }
        if (j.contains("calibrators")) {
            c.calibrators.clear();
            for (const auto& s : j["calibrators"]) c.calibrators.push_back(parse_calibrator_kind(s.get<std::string>()));
        }
        if (j.contains("strategies")) {
            c.strategies.clear();
            for (const auto& s : j["strategies"]) c.strategies.push_back(parse_strategy_kind(s.get<std::string>()));
        }
        detail::read_opt(j, "n", c.n);
        if (j.contains("groups") && !j["groups"].is_null()) c.groups = j["groups"].get<int>();
        detail::read_opt(j, "alpha", c.alpha);
        detail::read_opt(j, "vad_k", c.vad_k);
        detail::read_opt(j, "vad_lambda", c.vad_lambda);
        if (j.contains("seeds")) c.seeds = j["seeds"].get<std::vector<std::uint64_t>>();
        if (j.contains("max_bins") && !j["max_bins"].is_null()) c.max_bins = j["max_bins"].get<std::size_t>();
        if (j.contains("fixed_bins") && !j["fixed_bins"].is_null()) c.fixed_bins = j["fixed_bins"].get<std::size_t>();
        detail::read_opt(j, "histogram_bins", c.histogram_bins);
        detail::read_opt(j, "conventional_ece", c.conventional_ece);
        detail::read_opt(j, "accuracy", c.accuracy);
        detail::read_opt(j, "output_dir", c.output_dir);
    } catch (const nlohmann::json::exception& e) {
        throw ConfigError(std::string("config: ") + e.what());
    }
    c.validate();
    return c;
}

inline ExperimentConfig load_config(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw ConfigError("cannot open config '" + path + "'");
    nlohmann::json j;
    try {
        in >> j;
    } catch (const nlohmann::json::exception& e) {
        throw ConfigError("config '" + path + "': " + e.what());
    }
    return config_from_json(j);
}

// ---------------------------------------------------------------------------
// Data and per-seed state

struct LoadedData {
    InteractionTable table;
    std::optional<TruthTable> truth;  // synthetic only
};

inline LoadedData load_dataset(const DatasetConfig& d) {
    if (d.source == "synthetic") {
        auto data = generate_synthetic(d.synthetic);
        return {std::move(data.table), std::move(data.truth)};
    }
    if (d.source == "explicit_csv") return {load_explicit_csv(d.path, d.schema), std::nullopt};
    if (d.source == "implicit_csv") return {load_implicit_csv(d.path, d.schema), std::nullopt};
    throw ConfigError("unknown dataset source '" + d.source + "'");
}

inline RecommenderModel train_recommender(const RecommenderConfig& rc, const InteractionTable& train,
                                          const LoadedData& data, std::uint64_t seed) {
    switch (rc.kind) {
        case RecommenderKind::itemknn: return fit_itemknn(train, rc.k);
        case RecommenderKind::mf: {
            auto fc = rc.factors;
            fc.seed = seed;
            return fit_mf(train, fc);
        }
        case RecommenderKind::bpr: {
            auto fc = rc.factors;
            fc.seed = seed;
            return fit_bpr(train, fc);
        }
        case RecommenderKind::table:
            if (!data.truth) throw ConfigError("the table scorer needs a synthetic dataset");
            return make_table_scorer(*data.truth);
    }
    throw ConfigError("unknown recommender kind");
}

struct SeedState {
    std::uint64_t seed = 0;
    SplitTables tables;
    RecommenderModel model;
    SampleSet validation;  // every validation item with its rank
    SampleSet test;        // every test item with its rank (evaluation only)
};

inline SeedState prepare_seed(const ExperimentConfig& cfg, const LoadedData& data, std::uint64_t seed) {
    SeedState st;
    st.seed = seed;
    st.tables = materialize(data.table, split(data.table, seed));
    st.model = train_recommender(cfg.recommender, st.tables.train, data, seed);
    st.validation = build_calibration_samples(st.model, st.tables.validation);
    st.test = build_calibration_samples(st.model, st.tables.test);
    return st;
}

inline CalibratorOptions calibrator_options(const ExperimentConfig& cfg, CalibratorKind kind, const RecommenderModel& model) {
    CalibratorOptions opt;
    opt.histogram_bins = cfg.histogram_bins;
    opt.transform = default_transform(kind, model.score_range);
    if (model.score_range == ScoreRange::rating_scale) {
        opt.output_min = model.rating_min;
        opt.output_max = model.rating_max;
    }
    return opt;
}

inline FittedStrategy fit_strategy(StrategyKind kind, const ExperimentConfig& cfg, const LoadedData& data,
                                   const SeedState& st, std::optional<CalibratorKind> calibrator, int n) {
    switch (kind) {
        case StrategyKind::vanilla: return {VanillaStrategy{st.model.score_range}};
        case StrategyKind::original: {
            const auto opt = calibrator_options(cfg, *calibrator, st.model);
            return {fit_original(st.validation, *calibrator, opt)};
        }
        case StrategyKind::tnf: {
            const auto opt = calibrator_options(cfg, *calibrator, st.model);
            const int groups = cfg.groups.value_or(default_group_count(n));
            return {fit_tnf(st.validation, n, groups, cfg.alpha, *calibrator, opt)};
        }
        case StrategyKind::vad: {
            const auto opt = calibrator_options(cfg, *calibrator, st.model);
            const auto& train = st.tables.train;
            RecommenderFactory factory = [&](std::uint64_t member_seed) {
                return train_recommender(cfg.recommender, train, data, member_seed);
            };
            return {fit_vad(st.validation, n, cfg.vad_k, cfg.vad_lambda, *calibrator, opt, factory)};
        }
    }
    throw ConfigError("unknown strategy");
}

// Calibrated predictions for evaluation samples. Ranks and scores are read
// from the samples and never modified.
inline std::vector<RankedPrediction> predict_samples(const FittedStrategy& s, const SampleSet& eval,
                                                     std::optional<int> cutoff = std::nullopt) {
    std::vector<RankedPrediction> out;
    out.reserve(eval.samples.size());
    for (const auto& x : eval.samples) {
        if (cutoff && x.rank > *cutoff) continue;
        out.push_back({s.predict(x.rank, x.score), x.label, x.rank});
    }
    return out;
}

// ---------------------------------------------------------------------------
// Results

struct ResultRow {
    std::uint64_t seed = 0;
    std::string recommender;
    std::string calibrator;
    std::string strategy;
    std::string metric;
    double value = 0.0;
    std::size_t n_bins = 0;
    int n = 0;
    std::string note;  // failure message for failed cells
    double alpha = 0.0;
    int groups = 0;
};

struct SummaryRow {
    std::string recommender;
    std::string calibrator;
    std::string strategy;
    std::string metric;
    int n = 0;
    double mean = 0.0;
    double std = 0.0;
    std::size_t n_seeds = 0;
    std::size_t n_failed = 0;
};

struct ExperimentResult {
    std::vector<ResultRow> rows;
    std::vector<SummaryRow> summary;
};

inline constexpr const char* kNoCalibrator = "none";
inline constexpr const char* kAccuracyTag = "-";

namespace detail {

inline std::string format_double(double v) {
    if (std::isnan(v)) return "nan";
    char buf[40];
    std::snprintf(buf, sizeof buf, "%.17g", v);
    return buf;
}

inline std::string csv_quote(const std::string& s) {
    if (s.find_first_of(",\"\n") == std::string::npos) return s;
    std::string out = "\"";
    for (char c : s) {
        if (c == '"') out += '"';
        out += c == '\n' ? ' ' : c;
    }
    return out + '"';
}

inline void append_accuracy_rows(const ExperimentConfig& cfg, const SeedState& st, int n, std::vector<ResultRow>& rows) {
    const std::string rec = to_string(cfg.recommender.kind);
    auto add = [&](const char* metric, double v) {
        rows.push_back({st.seed, rec, kAccuracyTag, kAccuracyTag, metric, v, 0, n, "", 0.0, 0});
    };
    try {
        if (st.tables.test.kind() == FeedbackKind::explicit_rating) {
            std::vector<PredictionPair> pairs;
            for (const auto& x : st.test.samples) pairs.push_back({x.score, x.label});
            add("rmse", rmse(pairs));
        } else {
            std::map<std::int32_t, std::vector<PredictionPair>> by_user;
            std::map<std::int32_t, std::vector<double>> ranked;
            for (const auto& x : st.test.samples) {
                by_user[x.user].push_back({x.score, x.label});
                ranked[x.user].push_back(x.label);  // samples are stored in rank order per user
            }
            std::vector<std::vector<PredictionPair>> aucs;
            std::vector<std::vector<double>> lists;
            for (auto& [u, v] : by_user) aucs.push_back(std::move(v));
            for (auto& [u, v] : ranked) lists.push_back(std::move(v));
            add("auc", mean_user_auc(aucs));
            add("ndcg@n", ndcg_at_n(lists, n));
        }
    } catch (const Error& e) {
        rows.push_back({st.seed, rec, kAccuracyTag, kAccuracyTag, "failure", std::nan(""), 0, n, e.what(), 0.0, 0});
    }
}

// One (strategy, calibrator) cell at cutoff n: fit, predict, score.
inline void run_cell(const ExperimentConfig& cfg, const LoadedData& data, const SeedState& st, StrategyKind strategy,
                     std::optional<CalibratorKind> calibrator, int n, std::vector<ResultRow>& rows,
                     const FittedStrategy* prefitted = nullptr) {
    const std::string rec = to_string(cfg.recommender.kind);
    const std::string cal = calibrator ? to_string(*calibrator) : kNoCalibrator;
    const std::string strat = to_string(strategy);
    const int groups = strategy == StrategyKind::tnf ? cfg.groups.value_or(default_group_count(n)) : 0;
    const double alpha = strategy == StrategyKind::tnf ? cfg.alpha : 0.0;
    std::vector<ResultRow> cell;
    try {
        const FittedStrategy fitted = prefitted ? *prefitted : fit_strategy(strategy, cfg, data, st, calibrator, n);
        const auto top = predict_samples(fitted, st.test, n);
        const auto e = ece_at_n(top, n, cfg.fixed_bins, cfg.max_bins);
        cell.push_back({st.seed, rec, cal, strat, "ece@n", e.value, e.n_bins, n, "", alpha, groups});
        cell.push_back({st.seed, rec, cal, strat, "rdece@n", rdece_at_n(top, n), 0, n, "", alpha, groups});
        if (cfg.conventional_ece && fitted.covers_all_ranks()) {
            const auto all = predict_samples(fitted, st.test);
            std::vector<PredictionPair> pairs;
            pairs.reserve(all.size());
            for (const auto& p : all) pairs.push_back({p.prediction, p.label});
            const auto c = ece_auto(pairs, cfg.fixed_bins, cfg.max_bins);
            cell.push_back({st.seed, rec, cal, strat, "ece", c.value, c.n_bins, n, "", alpha, groups});
        }
    } catch (const Error& e) {
        cell.clear();
        cell.push_back({st.seed, rec, cal, strat, "failure", std::nan(""), 0, n, e.what(), alpha, groups});
    }
    rows.insert(rows.end(), cell.begin(), cell.end());
}

}  // namespace detail

inline std::vector<SummaryRow> summarize(const std::vector<ResultRow>& rows) {
    std::vector<SummaryRow> out;
    std::map<std::tuple<std::string, std::string, std::string, std::string, int>, std::size_t> index;
    std::vector<std::vector<double>> values;
    for (const auto& r : rows) {
        if (r.metric == "failure") continue;
        const auto key = std::make_tuple(r.recommender, r.calibrator, r.strategy, r.metric, r.n);
        auto [it, inserted] = index.emplace(key, out.size());
        if (inserted) {
            out.push_back({r.recommender, r.calibrator, r.strategy, r.metric, r.n, 0.0, 0.0, 0, 0});
            values.emplace_back();
        }
        values[it->second].push_back(r.value);
    }
    for (const auto& r : rows) {
        if (r.metric != "failure") continue;
        for (auto& s : out) {
            if (s.recommender == r.recommender && s.calibrator == r.calibrator && s.strategy == r.strategy && s.n == r.n) {
                ++s.n_failed;
            }
        }
    }
    for (std::size_t k = 0; k < out.size(); ++k) {
        const auto& v = values[k];
        double mean = 0.0;
        for (double x : v) mean += x;
        mean /= static_cast<double>(v.size());
        double var = 0.0;
        for (double x : v) var += (x - mean) * (x - mean);
        out[k].mean = mean;
        out[k].std = v.size() > 1 ? std::sqrt(var / static_cast<double>(v.size() - 1)) : 0.0;
        out[k].n_seeds = v.size();
    }
    return out;
}

inline void write_results_csv(const std::vector<ResultRow>& rows, std::ostream& out) {
    out << "seed,recommender,calibrator,strategy,metric,value,n_bins,n,note\n";
    for (const auto& r : rows) {
        out << r.seed << ',' << r.recommender << ',' << r.calibrator << ',' << r.strategy << ',' << r.metric << ','
            << detail::format_double(r.value) << ',' << r.n_bins << ',' << r.n << ',' << detail::csv_quote(r.note)
            << '\n';
    }
}

inline void write_summary_csv(const std::vector<SummaryRow>& rows, std::ostream& out) {
    out << "recommender,calibrator,strategy,metric,n,mean,std,n_seeds,n_failed\n";
    for (const auto& r : rows) {
        out << r.recommender << ',' << r.calibrator << ',' << r.strategy << ',' << r.metric << ',' << r.n << ','
            << detail::format_double(r.mean) << ',' << detail::format_double(r.std) << ',' << r.n_seeds << ','
            << r.n_failed << '\n';
    }
}

namespace detail {

inline std::ofstream open_output(const std::string& dir, const std::string& name) {
    std::filesystem::create_directories(dir);
    const auto path = (std::filesystem::path(dir) / name).string();
    std::ofstream out(path);
    if (!out) throw Error("cannot write '" + path + "'");
    return out;
}

}  // namespace detail

// ---------------------------------------------------------------------------
// Experiments

// Every (seed, calibrator, strategy) cell at the configured N. Vanilla runs
// once per seed with calibrator "none".
inline ExperimentResult run_experiment(const ExperimentConfig& cfg, const LoadedData& data) {
    cfg.validate();
    ExperimentResult res;
    for (auto seed : cfg.seeds) {
        SeedState st;
        try {
            st = prepare_seed(cfg, data, seed);
        } catch (const Error& e) {
            res.rows.push_back({seed, to_string(cfg.recommender.kind), kAccuracyTag, kAccuracyTag, "failure",
                                std::nan(""), 0, cfg.n, e.what(), 0.0, 0});
            continue;
        }
        if (cfg.accuracy) detail::append_accuracy_rows(cfg, st, cfg.n, res.rows);
        for (auto strategy : cfg.strategies) {
            if (strategy == StrategyKind::vanilla) {
                detail::run_cell(cfg, data, st, strategy, std::nullopt, cfg.n, res.rows);
                continue;
            }
            for (auto cal : cfg.calibrators) detail::run_cell(cfg, data, st, strategy, cal, cfg.n, res.rows);
        }
    }
    res.summary = summarize(res.rows);
    return res;
}

inline ExperimentResult run_experiment(const ExperimentConfig& cfg) { return run_experiment(cfg, load_dataset(cfg.dataset)); }

inline const std::vector<int>& default_n_list() {
    static const std::vector<int> list{5, 10, 20, 50, 100};
    return list;
}

// ECE@N / RDECE@N for each N. The recommender and the N-independent
// calibrators are fitted once per seed; TNF is refitted per N.
inline ExperimentResult run_sweep_n(const ExperimentConfig& cfg, const LoadedData& data, const std::vector<int>& n_list) {
    cfg.validate();
    if (n_list.empty()) throw ConfigError("sweep-n: empty N list");
    const int n_max = *std::max_element(n_list.begin(), n_list.end());
    ExperimentResult res;
    for (auto seed : cfg.seeds) {
        SeedState st;
        try {
            st = prepare_seed(cfg, data, seed);
        } catch (const Error& e) {
            res.rows.push_back({seed, to_string(cfg.recommender.kind), kAccuracyTag, kAccuracyTag, "failure",
                                std::nan(""), 0, n_max, e.what(), 0.0, 0});
            continue;
        }
        std::size_t longest = 0;
        for (const auto& idx : st.tables.validation.by_user()) longest = std::max(longest, idx.size());
        for (int n : n_list) {
            if (n < 1 || static_cast<std::size_t>(n) > longest) {
                throw ConfigError("sweep-n: N=" + std::to_string(n) + " exceeds every user's validation list length (" +
                                  std::to_string(longest) + ")");
            }
        }
        for (auto strategy : cfg.strategies) {
            const std::vector<std::optional<CalibratorKind>> cals =
                strategy == StrategyKind::vanilla ? std::vector<std::optional<CalibratorKind>>{std::nullopt}
                                                  : std::vector<std::optional<CalibratorKind>>(cfg.calibrators.begin(),
                                                                                               cfg.calibrators.end());
            for (const auto& cal : cals) {
                std::optional<FittedStrategy> shared;
                std::string shared_error;
                if (strategy != StrategyKind::tnf) {
                    // delta_r of VAD does not depend on N, so one fit at the largest N serves all.
                    try {
                        shared = fit_strategy(strategy, cfg, data, st, cal, n_max);
                    } catch (const Error& e) {
                        shared_error = e.what();
                    }
                }
                for (int n : n_list) {
                    if (strategy != StrategyKind::tnf && !shared) {
                        res.rows.push_back({seed, to_string(cfg.recommender.kind), cal ? to_string(*cal) : kNoCalibrator,
                                            to_string(strategy), "failure", std::nan(""), 0, n, shared_error, 0.0, 0});
                        continue;
                    }
                    detail::run_cell(cfg, data, st, strategy, cal, n, res.rows, shared ? &*shared : nullptr);
                }
            }
        }
    }
    res.summary = summarize(res.rows);
    return res;
}

struct HeatmapCell {
    std::string calibrator;
    double alpha = 0.0;
    int groups = 0;
    double ece_mean = std::nan("");
    double ece_std = std::nan("");
    double rdece_mean = std::nan("");
    double rdece_std = std::nan("");
    std::size_t n_seeds = 0;
    std::size_t n_failed = 0;
};

struct GridResult {
    std::vector<ResultRow> rows;
    std::vector<HeatmapCell> heatmap;  // alpha-major, in input order
};

// TNF sensitivity over (alpha, n_groups) at the configured N.
inline GridResult run_sensitivity_grid(const ExperimentConfig& cfg, const LoadedData& data,
                                       const std::vector<double>& alphas, const std::vector<int>& group_counts) {
    cfg.validate();
    if (cfg.calibrators.empty()) throw ConfigError("grid: at least one calibrator is required");
    GridResult res;
    std::vector<SeedState> states;
    for (auto seed : cfg.seeds) {
        try {
            states.push_back(prepare_seed(cfg, data, seed));
        } catch (const Error& e) {
            res.rows.push_back({seed, to_string(cfg.recommender.kind), kAccuracyTag, kAccuracyTag, "failure",
                                std::nan(""), 0, cfg.n, e.what(), 0.0, 0});
        }
    }
    for (auto cal : cfg.calibrators) {
        for (double alpha : alphas) {
            for (int g : group_counts) {
                ExperimentConfig cell_cfg = cfg;
                cell_cfg.alpha = alpha;
                cell_cfg.groups = g;
                cell_cfg.conventional_ece = false;
                std::vector<ResultRow> cell_rows;
                for (const auto& st : states) {
                    detail::run_cell(cell_cfg, data, st, StrategyKind::tnf, cal, cfg.n, cell_rows);
                }
                HeatmapCell h;
                h.calibrator = to_string(cal);
                h.alpha = alpha;
                h.groups = g;
                std::vector<double> e, r;
                for (const auto& row : cell_rows) {
                    if (row.metric == "ece@n") e.push_back(row.value);
                    else if (row.metric == "rdece@n") r.push_back(row.value);
                    else if (row.metric == "failure") ++h.n_failed;
                }
                auto stats = [](const std::vector<double>& v, double& mean, double& sd) {
                    if (v.empty()) return;
                    mean = 0.0;
                    for (double x : v) mean += x;
                    mean /= static_cast<double>(v.size());
                    double var = 0.0;
                    for (double x : v) var += (x - mean) * (x - mean);
                    sd = v.size() > 1 ? std::sqrt(var / static_cast<double>(v.size() - 1)) : 0.0;
                };
                stats(e, h.ece_mean, h.ece_std);
                stats(r, h.rdece_mean, h.rdece_std);
                h.n_seeds = e.size();
                res.heatmap.push_back(h);
                res.rows.insert(res.rows.end(), cell_rows.begin(), cell_rows.end());
            }
        }
    }
    return res;
}

inline void write_heatmap_csv(const std::vector<HeatmapCell>& cells, std::ostream& out) {
    out << "calibrator,alpha,groups,ece@n_mean,ece@n_std,rdece@n_mean,rdece@n_std,n_seeds,n_failed\n";
    for (const auto& c : cells) {
        out << c.calibrator << ',' << detail::format_double(c.alpha) << ',' << c.groups << ','
            << detail::format_double(c.ece_mean) << ',' << detail::format_double(c.ece_std) << ','
            << detail::format_double(c.rdece_mean) << ',' << detail::format_double(c.rdece_std) << ',' << c.n_seeds
            << ',' << c.n_failed << '\n';
    }
}

// ---------------------------------------------------------------------------
// Diagram data

struct DiagramInput {
    std::string strategy;
    std::string calibrator;
    const FittedStrategy* fitted = nullptr;
    const SampleSet* test = nullptr;
};

struct DiagramOptions {
    int n = 20;
    std::size_t n_bins = 15;
    int rank_group_size = 5;
    double lo = 0.0;  // prediction range for the histogram overlay
    double hi = 1.0;
};

// reliability.csv: per-bin points and the prediction histogram for the
// all-items, top-N and outside-top-N series. rankplot.csv: per rank group.
// Strategies that only cover the top N emit the top-N series only.
inline void emit_diagrams(const std::vector<DiagramInput>& inputs, const std::string& dir, const DiagramOptions& opt) {
    auto rel = detail::open_output(dir, "reliability.csv");
    auto rank = detail::open_output(dir, "rankplot.csv");
    rel << "strategy,calibrator,series,row,index,mean_prediction,mean_label,count,bin_lo,bin_hi\n";
    rank << "strategy,calibrator,rank_lo,rank_hi,mean_prediction,mean_label,count\n";
    for (const auto& in : inputs) {
        const bool all_ranks = in.fitted->covers_all_ranks();
        const auto preds = predict_samples(*in.fitted, *in.test, all_ranks ? std::nullopt : std::optional<int>(opt.n));
        std::vector<PredictionPair> all, top, outside;
        int max_rank = 0;
        for (const auto& p : preds) {
            all.push_back({p.prediction, p.label});
            (p.rank <= opt.n ? top : outside).push_back({p.prediction, p.label});
            max_rank = std::max(max_rank, p.rank);
        }
        const std::vector<std::pair<const char*, const std::vector<PredictionPair>*>> series =
            all_ranks ? std::vector<std::pair<const char*, const std::vector<PredictionPair>*>>{{"all", &all},
                                                                                                {"top_n", &top},
                                                                                                {"outside_top_n", &outside}}
                      : std::vector<std::pair<const char*, const std::vector<PredictionPair>*>>{{"top_n", &top}};
        for (const auto& [name, pairs] : series) {
            const auto diag = reliability_diagram(*pairs, opt.n_bins, Binning::equal_count, opt.lo, opt.hi);
            for (std::size_t k = 0; k < diag.points.size(); ++k) {
                const auto& p = diag.points[k];
                rel << in.strategy << ',' << in.calibrator << ',' << name << ",bin," << k << ','
                    << detail::format_double(p.mean_prediction) << ',' << detail::format_double(p.mean_label) << ','
                    << p.count << ",,\n";
            }
            for (std::size_t k = 0; k < diag.histogram.size(); ++k) {
                const auto& h = diag.histogram[k];
                rel << in.strategy << ',' << in.calibrator << ',' << name << ",hist," << k << ",,," << h.count << ','
                    << detail::format_double(h.lo) << ',' << detail::format_double(h.hi) << '\n';
            }
        }
        for (const auto& g : rank_calibration_plot(preds, opt.rank_group_size, max_rank)) {
            rank << in.strategy << ',' << in.calibrator << ',' << g.rank_lo << ',' << g.rank_hi << ','
                 << detail::format_double(g.mean_prediction) << ',' << detail::format_double(g.mean_label) << ','
                 << g.count << '\n';
        }
    }
}

}  // namespace topncal
