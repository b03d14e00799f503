// Acceptance checks. Prints one PASS/FAIL/SKIP line per criterion and exits
// non-zero when a required criterion fails.

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <functional>
#include <iostream>
#include <map>
#include <random>
#include <sstream>
#include <string>
#include <vector>

#include "gradcheck.hpp"
#include "oracles.hpp"
#include "topncal/runner.hpp"

namespace fs = std::filesystem;
using namespace topncal;

namespace {

struct Outcome {
    enum Status { pass, fail, skip } status = fail;
    std::string detail;
};

Outcome verdict(bool ok, std::string detail) { return {ok ? Outcome::pass : Outcome::fail, std::move(detail)}; }

std::string fmt(double v, int precision = 4) {
    std::ostringstream os;
    os.precision(precision);
    os << v;
    return os.str();
}

double seconds_since(std::chrono::steady_clock::time_point t0) {
    return std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
}

std::string source_path(const std::string& rel) { return (fs::path(TOPNCAL_SOURCE_DIR) / rel).string(); }

// --- 1 ---------------------------------------------------------------------

Outcome metric_oracle() {
    const auto t0 = std::chrono::steady_clock::now();
    std::mt19937_64 rng(2024);
    std::uniform_int_distribution<int> size(1, 200), cut(1, 20), rank(1, 30), grid(0, 20), coin(0, 2);
    std::uniform_real_distribution<double> u(0.0, 1.0);
    double worst = 0.0;
    int bin_mismatch = 0;
    for (int c = 0; c < 1000; ++c) {
        const int n = size(rng);
        const int style = coin(rng);  // 0 continuous, 1 gridded (ties), 2 graded labels
        std::vector<oracle::Ranked> inst;
        std::vector<oracle::Pair> all;
        std::vector<PredictionPair> pairs;
        std::vector<RankedPrediction> ranked;
        for (int k = 0; k < n; ++k) {
            const double p = style == 0 ? u(rng) : grid(rng) / 20.0;
            const double y = style == 2 ? std::round(u(rng) * 4.0) + 1.0 : (u(rng) < p ? 1.0 : 0.0);
            const int r = rank(rng);
            inst.push_back({p, y, r});
            all.push_back({p, y});
            pairs.push_back({p, y});
            ranked.push_back({p, y, r});
        }
        const std::size_t m = oracle::adaptive_m(all, oracle::default_m_max(all.size()));
        const auto e = ece_auto(pairs);
        if (e.n_bins != m) ++bin_mismatch;
        worst = std::max(worst, std::abs(e.value - oracle::ece(all, m)));

        const int top = cut(rng);
        const auto top_pairs = oracle::top_n(inst, top);
        if (top_pairs.empty()) continue;
        const std::size_t mt = oracle::adaptive_m(top_pairs, oracle::default_m_max(top_pairs.size()));
        const auto en = ece_at_n(ranked, top);
        if (en.n_bins != mt) ++bin_mismatch;
        worst = std::max(worst, std::abs(en.value - oracle::ece_at_n(inst, top, mt)));
        worst = std::max(worst, std::abs(rdece_at_n(ranked, top) - oracle::rdece_at_n(inst, top)));
    }
    const double secs = seconds_since(t0);
    return verdict(worst <= 1e-12 && bin_mismatch == 0 && secs < 10.0,
                   "max abs diff " + fmt(worst) + ", bin-count mismatches " + std::to_string(bin_mismatch) + ", " +
                       fmt(secs, 3) + " s");
}

// --- 2 ---------------------------------------------------------------------

Outcome isotonic_projection() {
    std::mt19937_64 rng(77);
    std::uniform_int_distribution<int> size(1, 8), tie(0, 3);
    std::uniform_real_distribution<double> u(0.0, 1.0), w(0.05, 10.0);
    double worst = 0.0;
    for (int c = 0; c < 500; ++c) {
        const int n = size(rng);
        std::vector<CalibrationSample> xs;
        double s = 0.0;
        for (int k = 0; k < n; ++k) {
            s += 0.1 + u(rng);
            const double y = c % 3 == 0 ? u(rng) : (u(rng) < 0.5 ? 1.0 : 0.0);
            xs.push_back({y, s, 0, w(rng)});
        }
        std::vector<double> y, ww;
        for (const auto& x : xs) {
            y.push_back(x.label);
            ww.push_back(x.weight);
        }
        const auto expected = oracle::monotone_projection(y, ww);
        const auto got = isotonic_fit_values(xs);
        for (int k = 0; k < n; ++k) worst = std::max(worst, std::abs(got[k] - expected[k]));
    }
    return verdict(worst < 1e-6, "500 cases, max abs error " + fmt(worst));
}

// --- 3 ---------------------------------------------------------------------

Outcome gradient_checks() {
    std::map<std::string, double> worst;
    for (std::uint64_t s = 0; s < 100; ++s) {
        for (auto kind : {CalibratorKind::platt, CalibratorKind::beta, CalibratorKind::gaussian, CalibratorKind::gamma}) {
            auto& w = worst[to_string(kind)];
            w = std::max(w, gradcheck::calibrator_instance(kind, s));
        }
        worst["mf"] = std::max(worst["mf"], gradcheck::mf_instance(s));
        worst["bpr"] = std::max(worst["bpr"], gradcheck::bpr_instance(s));
    }
    bool ok = true;
    std::string detail;
    for (const auto& [name, w] : worst) {
        ok = ok && w < 1e-4;
        detail += (detail.empty() ? "" : ", ") + name + " " + fmt(w, 2);
    }
    return verdict(ok, "worst relative error: " + detail);
}

// --- 4 ---------------------------------------------------------------------

Outcome group_scheme() {
    const auto a = make_group_scheme(18, 4).sizes();
    const auto b = make_group_scheme(20, 4).sizes();
    auto show = [](const std::vector<int>& v) {
        std::string s;
        for (int x : v) s += (s.empty() ? "" : ",") + std::to_string(x);
        return "[" + s + "]";
    };
    return verdict(a == std::vector<int>{5, 4, 5, 4} && b == std::vector<int>{5, 5, 5, 5},
                   "(18,4) -> " + show(a) + ", (20,4) -> " + show(b));
}

// --- 5 and 6 ---------------------------------------------------------------

struct PerSeed {
    std::map<std::uint64_t, double> values;
    double mean() const {
        double s = 0.0;
        for (const auto& [k, v] : values) s += v;
        return values.empty() ? std::nan("") : s / static_cast<double>(values.size());
    }
};

std::map<std::string, PerSeed> collect(const std::vector<ResultRow>& rows) {
    std::map<std::string, PerSeed> out;
    for (const auto& r : rows) out[r.strategy + "/" + r.metric].values[r.seed] = r.value;
    return out;
}

std::pair<Outcome, Outcome> synthetic_phenomenon() {
    const auto t0 = std::chrono::steady_clock::now();
    const auto cfg = load_config(source_path("configs/synthetic_phenomenon.json"));
    const auto res = run_experiment(cfg);
    const double secs = seconds_since(t0);
    auto by = collect(res.rows);
    const std::size_t seeds = cfg.seeds.size();

    const double ece_all = by["original/ece"].mean();
    const double ece_top = by["original/ece@n"].mean();
    const bool complete5 = by["original/ece"].values.size() == seeds && by["original/ece@n"].values.size() == seeds;
    Outcome five = verdict(complete5 && ece_all < 0.02 && ece_top > 0.05 && secs < 120.0,
                           "original ECE " + fmt(ece_all) + ", ECE@20 " + fmt(ece_top) + " over " +
                               std::to_string(seeds) + " seeds, " + fmt(secs, 3) + " s");

    std::string detail;
    bool ok = secs < 300.0;
    for (const std::string metric : {"ece@n", "rdece@n"}) {
        const auto& orig = by["original/" + metric];
        const auto& tnf = by["tnf/" + metric];
        int wins = 0;
        for (const auto& [seed, v] : orig.values) {
            const auto it = tnf.values.find(seed);
            if (it != tnf.values.end() && it->second < v) ++wins;
        }
        const double reduction = 1.0 - tnf.mean() / orig.mean();
        ok = ok && tnf.values.size() == seeds && wins >= 9 && reduction >= 0.30;
        detail += metric + ": TNF wins " + std::to_string(wins) + "/" + std::to_string(seeds) + ", reduction " +
                  fmt(100.0 * reduction, 3) + "%; ";
    }
    return {five, verdict(ok, detail + fmt(secs, 3) + " s")};
}

// --- shared small setup for 7, 8, 9 ------------------------------------------

ExperimentConfig demo_config() {
    auto cfg = load_config(source_path("configs/synthetic_demo.json"));
    cfg.seeds = {0};
    return cfg;
}

// --- 7 ---------------------------------------------------------------------

Outcome collapse() {
    const auto cfg = demo_config();
    const auto data = load_dataset(cfg.dataset);
    const auto st = prepare_seed(cfg, data, 0);
    int max_rank = 0;
    double lo = st.validation.samples.front().score, hi = lo;
    for (const auto& s : st.validation.samples) {
        max_rank = std::max(max_rank, s.rank);
        lo = std::min(lo, s.score);
        hi = std::max(hi, s.score);
    }
    double worst = 0.0;
    for (auto kind : {CalibratorKind::histogram, CalibratorKind::isotonic, CalibratorKind::platt, CalibratorKind::beta,
                      CalibratorKind::gaussian, CalibratorKind::gamma}) {
        const auto opt = calibrator_options(cfg, kind, st.model);
        const auto tnf = fit_tnf(st.validation, max_rank, 1, 0.0, kind, opt);
        const auto orig = fit_original(st.validation, kind, opt);
        const double pad = 0.1 * (hi - lo);
        for (int k = 0; k <= 400; ++k) {
            const double q = lo - pad + (hi - lo + 2 * pad) * k / 400.0;
            for (int r : {1, max_rank / 2 + 1, max_rank}) worst = std::max(worst, std::abs(tnf(r, q) - orig(q)));
        }
    }
    return verdict(worst <= 1e-9, "6 calibrators, N = " + std::to_string(max_rank) + ", max abs diff " + fmt(worst));
}

// --- 8 ---------------------------------------------------------------------

Outcome vad_sanity() {
    auto cfg = demo_config();
    const auto data = load_dataset(cfg.dataset);
    const auto st = prepare_seed(cfg, data, 0);
    const auto opt = calibrator_options(cfg, CalibratorKind::isotonic, st.model);

    cfg.vad_lambda = 0.0;
    const auto zero = fit_strategy(StrategyKind::vad, cfg, data, st, CalibratorKind::isotonic, cfg.n);
    const auto orig = fit_original(st.validation, CalibratorKind::isotonic, opt);
    std::size_t differ = 0;
    for (const auto& s : st.test.samples) {
        if (zero.predict(s.rank, s.score) != orig(s.score)) ++differ;
    }

    const auto fixed = fit_vad(st.validation, cfg.n, 4, 1.0, CalibratorKind::isotonic, opt,
                               [&](std::uint64_t) { return st.model; });
    double max_delta = 0.0;
    for (double d : fixed.delta) max_delta = std::max(max_delta, std::abs(d));

    cfg.vad_lambda = 1.0;
    const auto noisy = std::get<VadAdjuster>(
        fit_strategy(StrategyKind::vad, cfg, data, st, CalibratorKind::isotonic, cfg.n).model);
    double mean_noisy = 0.0;
    for (double d : noisy.delta) mean_noisy += d / static_cast<double>(noisy.delta.size());

    return verdict(differ == 0 && max_delta == 0.0,
                   "lambda=0 mismatches " + std::to_string(differ) + "/" + std::to_string(st.test.samples.size()) +
                       ", deterministic max delta " + fmt(max_delta) + " (BPR ensemble mean delta " +
                       fmt(mean_noisy) + ")");
}

// --- 9 ---------------------------------------------------------------------

std::map<std::string, double> accuracy_rows(const ExperimentResult& r) {
    std::map<std::string, double> out;
    for (const auto& row : r.rows) {
        if (row.strategy == kAccuracyTag) out[std::to_string(row.seed) + "/" + row.metric] = row.value;
    }
    return out;
}

// Count of users whose list order changes when re-sorted by calibrated value
// (ties kept in the recommender's order).
std::size_t reordered_users(const FittedStrategy& s, const SampleSet& eval) {
    std::map<std::int32_t, std::vector<std::pair<double, int>>> lists;
    for (const auto& x : eval.samples) lists[x.user].push_back({s.predict(x.rank, x.score), x.rank});
    std::size_t changed = 0;
    for (auto& [u, v] : lists) {
        auto sorted = v;
        std::stable_sort(sorted.begin(), sorted.end(), [](const auto& a, const auto& b) {
            if (a.first != b.first) return a.first > b.first;
            return a.second < b.second;
        });
        std::sort(v.begin(), v.end(), [](const auto& a, const auto& b) { return a.second < b.second; });
        if (sorted != v) ++changed;
    }
    return changed;
}

Outcome ranking_invariance() {
    std::string detail;
    bool ok = true;
    auto check_config = [&](ExperimentConfig cfg, const std::string& label) {
        const auto data = load_dataset(cfg.dataset);
        auto plain = cfg;
        plain.strategies = {StrategyKind::vanilla};
        const auto before = accuracy_rows(run_experiment(plain, data));
        const auto after = accuracy_rows(run_experiment(cfg, data));
        ok = ok && !before.empty() && before == after;

        const auto st = prepare_seed(cfg, data, cfg.seeds.front());
        const auto snapshot = st.test.samples;
        std::size_t monotone_reorders = 0;
        for (auto strategy : cfg.strategies) {
            const std::vector<std::optional<CalibratorKind>> cals =
                strategy == StrategyKind::vanilla ? std::vector<std::optional<CalibratorKind>>{std::nullopt}
                                                  : std::vector<std::optional<CalibratorKind>>(cfg.calibrators.begin(),
                                                                                               cfg.calibrators.end());
            for (const auto& cal : cals) {
                const auto fitted = fit_strategy(strategy, cfg, data, st, cal, cfg.n);
                // TNF is only defined inside the top N
                const auto cutoff = fitted.covers_all_ranks() ? std::nullopt : std::optional<int>(cfg.n);
                const auto preds = predict_samples(fitted, st.test, cutoff);
                std::size_t k = 0;
                for (const auto& x : snapshot) {
                    if (cutoff && x.rank > *cutoff) continue;
                    ok = ok && k < preds.size() && preds[k].rank == x.rank && preds[k].label == x.label;
                    ++k;
                }
                ok = ok && k == preds.size();
                // histogram binning is piecewise constant but not monotone
                const bool monotone = strategy == StrategyKind::vanilla ||
                                      (strategy == StrategyKind::original && cal != CalibratorKind::histogram);
                if (monotone) {
                    monotone_reorders += reordered_users(fitted, st.test);
                }
            }
        }
        for (std::size_t k = 0; k < snapshot.size(); ++k) {
            ok = ok && snapshot[k].rank == st.test.samples[k].rank && snapshot[k].score == st.test.samples[k].score;
        }
        ok = ok && monotone_reorders == 0;
        std::string metrics;
        for (const auto& [k, v] : before) {
            if (k.rfind(std::to_string(cfg.seeds.front()) + "/", 0) == 0) metrics += " " + k.substr(k.find('/') + 1);
        }
        detail += label + ":" + metrics + " equal, monotone re-sorts changed " + std::to_string(monotone_reorders) +
                  " lists; ";
    };

    auto demo = demo_config();
    demo.vad_k = 2;
    check_config(demo, "bpr");

    ExperimentConfig knn;
    knn.dataset.source = "explicit_csv";
    std::mt19937_64 rng(5);
    std::uniform_real_distribution<double> u(0.0, 1.0);
    std::uniform_int_distribution<int> stars(1, 5);
    const auto dir = fs::temp_directory_path() / "topncal_acceptance";
    fs::create_directories(dir);
    const auto csv = dir / "ratings.csv";
    {
        std::ofstream out(csv);
        out << "user,item,rating\n";
        for (int user = 0; user < 80; ++user) {
            for (int item = 0; item < 150; ++item) {
                if (u(rng) < 0.5) out << user << ',' << item << ',' << stars(rng) << '\n';
            }
        }
    }
    knn.dataset.path = csv.string();
    knn.dataset.schema.rating_min = 1;
    knn.dataset.schema.rating_max = 5;
    knn.recommender.kind = RecommenderKind::itemknn;
    knn.recommender.k = 10;
    knn.calibrators = {CalibratorKind::isotonic, CalibratorKind::histogram};
    knn.strategies = {StrategyKind::vanilla, StrategyKind::original, StrategyKind::tnf};
    knn.n = 10;
    knn.seeds = {0, 1};
    check_config(knn, "itemknn");
    fs::remove_all(dir);
    return verdict(ok, detail.substr(0, detail.size() - 2));
}

// --- 10 --------------------------------------------------------------------

Outcome movielens() {
    std::string path;
    if (const char* env = std::getenv("TOPNCAL_ML1M")) path = env;
    if (path.empty()) path = source_path("data/ml-1m/ratings.dat");
    if (!fs::exists(path)) return {Outcome::skip, "ML-1M ratings not found (set TOPNCAL_ML1M)"};
    auto cfg = load_config(source_path("configs/ml1m_mf.json"));
    cfg.dataset.path = path;
    const auto t0 = std::chrono::steady_clock::now();
    auto by = collect(run_experiment(cfg).rows);
    const double orig = by["original/ece@n"].mean();
    const double tnf = by["tnf/ece@n"].mean();
    return verdict(orig >= 0.02 && orig <= 0.06 && tnf < orig, "original ECE@20 " + fmt(orig) + ", TNF ECE@20 " +
                                                                  fmt(tnf) + ", " + fmt(seconds_since(t0), 3) + " s");
}

// --- 11 --------------------------------------------------------------------

std::string slurp(const fs::path& p) {
    std::ifstream in(p, std::ios::binary);
    std::ostringstream os;
    os << in.rdbuf();
    return os.str();
}

Outcome determinism() {
    const fs::path cli = TOPNCAL_CLI_PATH;
    const auto dir = fs::temp_directory_path() / "topncal_determinism";
    fs::remove_all(dir);
    bool ok = true;
    std::string detail;
    for (const std::string name : {"synthetic_phenomenon", "synthetic_demo"}) {
        std::string bytes[2];
        for (int run = 0; run < 2; ++run) {
            const auto out = dir / (name + std::to_string(run));
            const std::string cmd = "\"" + cli.string() + "\" run --config \"" +
                                    source_path("configs/" + name + ".json") + "\" --out \"" + out.string() +
                                    "\" > /dev/null";
            if (std::system(cmd.c_str()) != 0) return {Outcome::fail, "command failed: " + cmd};
            bytes[run] = slurp(out / "results.csv");
        }
        ok = ok && !bytes[0].empty() && bytes[0] == bytes[1];
        detail += name + " " + std::to_string(bytes[0].size()) + " bytes " +
                  (bytes[0] == bytes[1] ? "identical" : "differ") + "; ";
    }
    fs::remove_all(dir);
    return verdict(ok, detail.substr(0, detail.size() - 2));
}

Outcome guarded(const std::function<Outcome()>& f) {
    try {
        return f();
    } catch (const std::exception& e) {
        return {Outcome::fail, std::string("exception: ") + e.what()};
    }
}

}  // namespace

int main() {
    bool required_failed = false;
    auto report = [&](int id, const char* name, const Outcome& o, bool optional = false) {
        const char* tag = o.status == Outcome::pass ? "PASS" : o.status == Outcome::skip ? "SKIP" : "FAIL";
        std::cout << "[" << tag << "] " << id << ". " << name << ": " << o.detail << std::endl;
        if (o.status == Outcome::fail && !optional) required_failed = true;
    };

    report(1, "metric oracle equivalence", guarded(metric_oracle));
    report(2, "isotonic projection", guarded(isotonic_projection));
    report(3, "gradient checks", guarded(gradient_checks));
    report(4, "group scheme", guarded(group_scheme));
    std::pair<Outcome, Outcome> synth;
    try {
        synth = synthetic_phenomenon();
    } catch (const std::exception& e) {
        synth = {{Outcome::fail, std::string("exception: ") + e.what()}, {Outcome::fail, "not run"}};
    }
    report(5, "phenomenon reproduction", synth.first);
    report(6, "method efficacy", synth.second);
    report(7, "collapse consistency", guarded(collapse));
    report(8, "VAD sanity", guarded(vad_sanity));
    report(9, "ranking invariance", guarded(ranking_invariance));
    report(10, "ML-1M (optional)", guarded(movielens), true);
    report(11, "determinism", guarded(determinism));
    return required_failed ? 1 : 0;
}
