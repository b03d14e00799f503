#pragma once

// Calibrator-training strategies: Original (one calibrator over all
// validation pairs), top-N-focused (per rank group, rank-discounted weights)
// and the ensemble-variance debiasing baseline, plus the shared step that turns
// a recommender and a split into ranked calibration samples.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <functional>
#include <optional>
#include <string>
#include <type_traits>
#include <unordered_map>
#include <variant>
#include <vector>

#include "topncal/calibrators.hpp"
#include "topncal/common.hpp"
#include "topncal/dataset.hpp"
#include "topncal/metrics.hpp"
#include "topncal/recommenders.hpp"

namespace topncal {

// Calibration samples tagged with the partition they were drawn from.
struct SampleSet {
    std::vector<CalibrationSample> samples;
    Partition source = Partition::validation;
};

// Ranks each user's items in `split` with the recommender and attaches labels.
// With a cutoff only ranks <= cutoff are kept. Users without items are skipped.
inline SampleSet build_calibration_samples(const RecommenderModel& model, const InteractionTable& split,
                                           std::optional<int> cutoff = std::nullopt) {
    SampleSet out;
    out.source = split.partition();
    std::vector<std::int32_t> items;
    std::unordered_map<std::int32_t, double> labels;
    for (std::size_t u = 0; u < split.by_user().size(); ++u) {
        const auto& idx = split.by_user()[u];
        if (idx.empty()) continue;
        items.clear();
        labels.clear();
        for (auto k : idx) {
            items.push_back(split[k].item);
            labels[split[k].item] = split[k].feedback;
        }
        const auto list = rank_items(model, static_cast<std::int32_t>(u), items, cutoff);
        for (const auto& e : list.entries) {
            out.samples.push_back({labels.at(e.item), e.score, e.rank, 1.0, static_cast<std::int32_t>(u), e.item});
        }
    }
    return out;
}

// ---------------------------------------------------------------------------
// Rank groups

struct GroupScheme {
    int n = 0;
    int n_groups = 0;
    std::vector<std::pair<int, int>> boundaries;  // inclusive rank ranges covering 1..n

    std::vector<int> sizes() const {
        std::vector<int> out;
        for (const auto& [lo, hi] : boundaries) out.push_back(hi - lo + 1);
        return out;
    }

    // Zero-based group index of a rank in 1..n.
    std::size_t group_of(int rank) const {
        if (rank < 1 || rank > n) {
            throw ValidationError("rank " + std::to_string(rank) + " outside the top-" + std::to_string(n));
        }
        const auto it = std::lower_bound(boundaries.begin(), boundaries.end(), rank,
                                         [](const std::pair<int, int>& b, int r) { return b.second < r; });
        return static_cast<std::size_t>(it - boundaries.begin());
    }
};

// Group g (1-based) ends at rank ceil(g * n / n_groups), which spreads the
// larger groups evenly: n = 18, n_groups = 4 gives sizes 5, 4, 5, 4.
inline GroupScheme make_group_scheme(int n, int n_groups) {
    if (n < 1) throw ConfigError("group scheme: N must be >= 1");
    if (n_groups < 1 || n_groups > n) {
        throw ConfigError("group scheme: number of groups must be in [1, N], got " + std::to_string(n_groups));
    }
    GroupScheme s;
    s.n = n;
    s.n_groups = n_groups;
    int lo = 1;
    for (int g = 1; g <= n_groups; ++g) {
        const int hi = static_cast<int>((static_cast<long long>(g) * n + n_groups - 1) / n_groups);
        s.boundaries.emplace_back(lo, hi);
        lo = hi + 1;
    }
    return s;
}

// Five ranks per group by default.
inline int default_group_count(int n) { return std::max(1, static_cast<int>(std::lround(n / 5.0))); }

// ---------------------------------------------------------------------------
// Original

inline Calibrator fit_original(const SampleSet& validation, CalibratorKind kind, const CalibratorOptions& opt = {}) {
    require_fit_partition(validation.source, "fit_original");
    if (validation.samples.empty()) throw FitError("original: no validation samples");
    std::vector<CalibrationSample> unit = validation.samples;
    for (auto& s : unit) s.weight = 1.0;
    return fit_calibrator(kind, unit, opt);
}

// ---------------------------------------------------------------------------
// Top-N focused

struct TnfCalibrator {
    GroupScheme scheme;
    std::vector<Calibrator> calibrators;  // one per group
    double alpha = 1.0;
    CalibratorKind kind = CalibratorKind::isotonic;

    double operator()(int rank, double score) const {
        if (rank < 1 || rank > scheme.n) {
            throw ValidationError("tnf: rank " + std::to_string(rank) + " is outside the top-" + std::to_string(scheme.n));
        }
        return calibrators[scheme.group_of(rank)](score);
    }
};

inline TnfCalibrator fit_tnf(const SampleSet& validation, int n, int n_groups, double alpha, CalibratorKind kind,
                             const CalibratorOptions& opt = {}) {
    require_fit_partition(validation.source, "fit_tnf");
    if (alpha < 0.0) throw ConfigError("tnf: alpha must be >= 0");
    TnfCalibrator tnf;
    tnf.scheme = make_group_scheme(n, n_groups);
    tnf.alpha = alpha;
    tnf.kind = kind;
    std::vector<std::vector<CalibrationSample>> groups(tnf.scheme.boundaries.size());
    for (const auto& s : validation.samples) {
        if (s.rank < 1 || s.rank > n) continue;
        CalibrationSample w = s;
        w.weight = tnf_weight(s.rank, alpha);
        groups[tnf.scheme.group_of(s.rank)].push_back(w);
    }
    const std::size_t minimum =
        kind == CalibratorKind::histogram ? std::max<std::size_t>(2, static_cast<std::size_t>(opt.histogram_bins)) : 2;
    for (std::size_t g = 0; g < groups.size(); ++g) {
        if (groups[g].size() < minimum) {
            const auto [lo, hi] = tnf.scheme.boundaries[g];
            throw FitError("tnf: rank group " + std::to_string(lo) + "-" + std::to_string(hi) + " has " +
                           std::to_string(groups[g].size()) + " samples (need " + std::to_string(minimum) +
                           "); use fewer groups");
        }
        tnf.calibrators.push_back(fit_calibrator(kind, groups[g], opt));
    }
    return tnf;
}

inline double apply_tnf(const TnfCalibrator& tnf, int rank, double score) { return tnf(rank, score); }

// ---------------------------------------------------------------------------
// Variance-adjusting debiasing baseline

// Original calibrator followed by a per-rank subtraction delta_r derived from
// the spread of an ensemble of recommenders retrained with different seeds.
struct VadAdjuster {
    Calibrator base;
    std::vector<double> delta;  // delta[r - 1] for r in 1..N
    int ensemble_size = 0;
    double lambda = 1.0;

    int n() const { return static_cast<int>(delta.size()); }

    double operator()(int rank, double score) const {
        const double g = base(score);
        if (rank < 1 || rank > n()) return g;
        return clamp(g - delta[static_cast<std::size_t>(rank - 1)], base.output_min, base.output_max);
    }
};

using RecommenderFactory = std::function<RecommenderModel(std::uint64_t seed)>;

inline VadAdjuster fit_vad(const SampleSet& validation, int n, int ensemble_size, double lambda, CalibratorKind kind,
                           const CalibratorOptions& opt, const RecommenderFactory& train_member) {
    require_fit_partition(validation.source, "fit_vad");
    if (ensemble_size < 2) throw ConfigError("vad: ensemble size K must be >= 2");
    if (n < 1) throw ConfigError("vad: N must be >= 1");
    VadAdjuster vad;
    vad.base = fit_original(validation, kind, opt);
    vad.ensemble_size = ensemble_size;
    vad.lambda = lambda;
    vad.delta.assign(static_cast<std::size_t>(n), 0.0);

    std::vector<RecommenderModel> members;
    members.reserve(static_cast<std::size_t>(ensemble_size));
    for (int k = 1; k <= ensemble_size; ++k) members.push_back(train_member(static_cast<std::uint64_t>(k)));

    std::vector<double> sum_sd(static_cast<std::size_t>(n), 0.0);
    std::vector<std::size_t> count(static_cast<std::size_t>(n), 0);
    std::vector<double> values(static_cast<std::size_t>(ensemble_size));
    for (const auto& s : validation.samples) {
        if (s.rank < 1 || s.rank > n) continue;
        if (s.user < 0 || s.item < 0) throw FitError("vad: samples need user and item ids");
        double mean = 0.0;
        for (std::size_t k = 0; k < members.size(); ++k) {
            values[k] = vad.base(members[k].score(s.user, s.item));
            mean += values[k];
        }
        mean /= static_cast<double>(members.size());
        double var = 0.0;
        for (double v : values) var += (v - mean) * (v - mean);
        var /= static_cast<double>(members.size() - 1);
        const auto r = static_cast<std::size_t>(s.rank - 1);
        sum_sd[r] += std::sqrt(var);
        ++count[r];
    }
    for (std::size_t r = 0; r < vad.delta.size(); ++r) {
        if (count[r] > 0) vad.delta[r] = lambda * sum_sd[r] / static_cast<double>(count[r]);
    }
    return vad;
}

// ---------------------------------------------------------------------------
// Uniform application

enum class StrategyKind { vanilla, original, vad, tnf };

inline const char* to_string(StrategyKind k) {
    switch (k) {
        case StrategyKind::vanilla: return "vanilla";
        case StrategyKind::original: return "original";
        case StrategyKind::vad: return "vad";
        case StrategyKind::tnf: return "tnf";
    }
    return "?";
}

inline StrategyKind parse_strategy_kind(const std::string& s) {
    if (s == "vanilla") return StrategyKind::vanilla;
    if (s == "original") return StrategyKind::original;
    if (s == "vad") return StrategyKind::vad;
    if (s == "tnf") return StrategyKind::tnf;
    throw ConfigError("unknown strategy '" + s + "'");
}

struct VanillaStrategy {
    ScoreRange range = ScoreRange::unbounded;
};

// A fitted strategy; predict() maps (rank, raw score) to a calibrated value.
// Ranks are inputs only: calibration never reorders a list.
struct FittedStrategy {
    std::variant<VanillaStrategy, Calibrator, VadAdjuster, TnfCalibrator> model;

    StrategyKind kind() const {
        switch (model.index()) {
            case 0: return StrategyKind::vanilla;
            case 1: return StrategyKind::original;
            case 2: return StrategyKind::vad;
            default: return StrategyKind::tnf;
        }
    }

    // TNF is only defined inside the top N.
    bool covers_all_ranks() const { return kind() != StrategyKind::tnf; }

    double predict(int rank, double score) const {
        return std::visit(
            [&](const auto& m) -> double {
                using T = std::decay_t<decltype(m)>;
                if constexpr (std::is_same_v<T, VanillaStrategy>) {
                    return vanilla(m.range, score);
                } else if constexpr (std::is_same_v<T, Calibrator>) {
                    return m(score);
                } else {
                    return m(rank, score);
                }
            },
            model);
    }
};

}  // namespace topncal
