#pragma once

// Calibration error metrics (ECE, ECE@N, RDECE@N) over equal-count or per-rank
// bins, the adaptive bin-count sweep, data for reliability diagrams and
// rank-based calibration plots, and reference accuracy metrics.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <functional>
#include <limits>
#include <numeric>
#include <optional>
#include <span>
#include <vector>

#include "topncal/common.hpp"

namespace topncal {

struct PredictionPair {
    double prediction = 0.0;
    double label = 0.0;
};

struct RankedPrediction {
    double prediction = 0.0;
    double label = 0.0;
    int rank = 0;
};

struct Bin {
    std::vector<std::size_t> members;  // indices into the input
    double mean_prediction = 0.0;
    double mean_label = 0.0;
    std::size_t count = 0;
};

namespace detail {

inline std::vector<std::size_t> prediction_order(std::span<const PredictionPair> pairs) {
    std::vector<std::size_t> order(pairs.size());
    std::iota(order.begin(), order.end(), 0);
    std::sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
        if (pairs[a].prediction != pairs[b].prediction) return pairs[a].prediction < pairs[b].prediction;
        if (pairs[a].label != pairs[b].label) return pairs[a].label < pairs[b].label;
        return a < b;
    });
    return order;
}

// Label of each input as seen by the bins: the mean label of all inputs that
// share its prediction. Tied predictions are indistinguishable, so a bin edge
// that cuts a tie must not sort its labels apart (flat isotonic regions would
// otherwise score as badly miscalibrated).
inline std::vector<double> tie_mean_labels(std::span<const PredictionPair> pairs, const std::vector<std::size_t>& order) {
    std::vector<double> out(pairs.size());
    std::size_t k = 0;
    while (k < order.size()) {
        std::size_t end = k;
        double sum = 0.0;
        while (end < order.size() && pairs[order[end]].prediction == pairs[order[k]].prediction) {
            sum += pairs[order[end]].label;
            ++end;
        }
        const double mean = sum / static_cast<double>(end - k);
        for (std::size_t j = k; j < end; ++j) out[order[j]] = end - k == 1 ? pairs[order[j]].label : mean;
        k = end;
    }
    return out;
}

// Bin sizes for n samples in m bins: the first n % m bins get one extra.
inline std::size_t bin_size(std::size_t n, std::size_t m, std::size_t b) { return n / m + (b < n % m ? 1 : 0); }

inline Bin make_bin(std::span<const PredictionPair> pairs, std::span<const double> labels,
                    std::vector<std::size_t> members) {
    Bin bin;
    bin.count = members.size();
    double sp = 0.0, sl = 0.0;
    for (auto k : members) {
        sp += pairs[k].prediction;
        sl += labels[k];
    }
    bin.mean_prediction = sp / static_cast<double>(bin.count);
    bin.mean_label = sl / static_cast<double>(bin.count);
    bin.members = std::move(members);
    return bin;
}

// Mean labels of equal-count bins over an already sorted order.
inline bool bins_monotone(std::span<const double> labels, const std::vector<std::size_t>& order, std::size_t m) {
    const std::size_t n = order.size();
    double prev = -std::numeric_limits<double>::infinity();
    std::size_t pos = 0;
    for (std::size_t b = 0; b < m; ++b) {
        const std::size_t len = bin_size(n, m, b);
        double sl = 0.0;
        for (std::size_t k = pos; k < pos + len; ++k) sl += labels[order[k]];
        const double mean = sl / static_cast<double>(len);
        if (mean < prev) return false;
        prev = mean;
        pos += len;
    }
    return true;
}

}  // namespace detail

// Contiguous equal-count bins over pairs sorted by prediction (ties by label,
// then input index); bin sizes differ by at most one. Mean labels use the
// tie-group means above.
inline std::vector<Bin> equal_count_bins(std::span<const PredictionPair> pairs, std::size_t n_bins) {
    if (n_bins < 1) throw ConfigError("equal_count_bins: need at least one bin");
    if (n_bins > pairs.size()) throw ConfigError("equal_count_bins: more bins than samples");
    const auto order = detail::prediction_order(pairs);
    const auto labels = detail::tie_mean_labels(pairs, order);
    std::vector<Bin> bins;
    bins.reserve(n_bins);
    std::size_t pos = 0;
    for (std::size_t b = 0; b < n_bins; ++b) {
        const std::size_t len = detail::bin_size(pairs.size(), n_bins, b);
        bins.push_back(detail::make_bin(pairs, labels, {order.begin() + static_cast<std::ptrdiff_t>(pos),
                                                order.begin() + static_cast<std::ptrdiff_t>(pos + len)}));
        pos += len;
    }
    return bins;
}

inline constexpr std::size_t kMaxAdaptiveBins = 100;

inline std::size_t default_max_bins(std::size_t n) { return std::max<std::size_t>(1, std::min(n / 10, kMaxAdaptiveBins)); }

// Largest bin count <= max_bins whose equal-count bins have non-decreasing mean
// labels. One bin always qualifies.
inline std::size_t adaptive_bin_count(std::span<const PredictionPair> pairs, std::optional<std::size_t> max_bins = {}) {
    if (pairs.size() < 2) return 1;
    const std::size_t upper = std::min(max_bins.value_or(default_max_bins(pairs.size())), pairs.size());
    const auto order = detail::prediction_order(pairs);
    const auto labels = detail::tie_mean_labels(pairs, order);
    for (std::size_t m = upper; m > 1; --m) {
        if (detail::bins_monotone(labels, order, m)) return m;
    }
    return 1;
}

inline double ece(std::span<const PredictionPair> pairs, std::size_t n_bins) {
    if (pairs.empty()) throw ValidationError("ece: no samples");
    const auto bins = equal_count_bins(pairs, n_bins);
    const auto n = static_cast<double>(pairs.size());
    double total = 0.0;
    for (const auto& b : bins) {
        total += static_cast<double>(b.count) / n * std::abs(b.mean_label - b.mean_prediction);
    }
    return total;
}

struct EceResult {
    double value = 0.0;
    std::size_t n_bins = 0;
    std::size_t n = 0;
};

// ECE with the bin count chosen by the adaptive sweep unless fixed.
inline EceResult ece_auto(std::span<const PredictionPair> pairs, std::optional<std::size_t> fixed_bins = {},
                          std::optional<std::size_t> max_bins = {}) {
    if (pairs.empty()) throw ValidationError("ece: no samples");
    const std::size_t m =
        fixed_bins ? std::min(std::max<std::size_t>(*fixed_bins, 1), pairs.size()) : adaptive_bin_count(pairs, max_bins);
    return {ece(pairs, m), m, pairs.size()};
}

inline std::vector<PredictionPair> top_n_pairs(std::span<const RankedPrediction> samples, int n) {
    std::vector<PredictionPair> out;
    for (const auto& s : samples) {
        if (s.rank >= 1 && s.rank <= n) out.push_back({s.prediction, s.label});
    }
    return out;
}

// ECE over samples ranked within the top N.
inline EceResult ece_at_n(std::span<const RankedPrediction> samples, int n, std::optional<std::size_t> fixed_bins = {},
                          std::optional<std::size_t> max_bins = {}) {
    const auto pairs = top_n_pairs(samples, n);
    if (pairs.empty()) throw ValidationError("ece@n: no samples ranked within the top N");
    return ece_auto(pairs, fixed_bins, max_bins);
}

using RankWeightFn = std::function<double(int)>;

inline double reciprocal_rank_weight(int rank) { return 1.0 / static_cast<double>(rank); }

// TNF training weight (1 / r)^alpha.
inline double tnf_weight(int rank, double alpha) { return std::pow(1.0 / static_cast<double>(rank), alpha); }

// Rank-discounted ECE over per-rank bins. Ranks without samples contribute
// nothing and are left out of the weight normaliser.
inline double rdece_at_n(std::span<const RankedPrediction> samples, int n,
                         const RankWeightFn& weight = reciprocal_rank_weight) {
    if (n < 1) throw ConfigError("rdece@n: N must be >= 1");
    const auto nn = static_cast<std::size_t>(n);
    std::vector<double> sum_pred(nn + 1, 0.0), sum_label(nn + 1, 0.0);
    std::vector<std::size_t> count(nn + 1, 0);
    std::size_t total = 0;
    for (const auto& s : samples) {
        if (s.rank < 1 || s.rank > n) continue;
        const auto r = static_cast<std::size_t>(s.rank);
        sum_pred[r] += s.prediction;
        sum_label[r] += s.label;
        ++count[r];
        ++total;
    }
    if (total == 0) throw ValidationError("rdece@n: no samples ranked within the top N");
    double weight_sum = 0.0, acc = 0.0;
    for (std::size_t r = 1; r <= nn; ++r) {
        if (count[r] == 0) continue;
        const double w = weight(static_cast<int>(r));
        const double c = static_cast<double>(count[r]);
        weight_sum += w;
        acc += w * c / static_cast<double>(total) * std::abs(sum_label[r] / c - sum_pred[r] / c);
    }
    return static_cast<double>(n) / weight_sum * acc;
}

// ---------------------------------------------------------------------------
// Plot data

enum class Binning { equal_count, equal_width };

struct ReliabilityPoint {
    double mean_prediction = 0.0;
    double mean_label = 0.0;
    std::size_t count = 0;
};

struct HistogramBin {
    double lo = 0.0;
    double hi = 0.0;
    std::size_t count = 0;
};

struct ReliabilityDiagram {
    std::vector<ReliabilityPoint> points;  // ordered by mean prediction
    std::vector<HistogramBin> histogram;   // prediction frequencies for the overlay
};

// Equal-width bins over [lo, hi]; values outside fall into the end bins.
inline std::vector<HistogramBin> prediction_histogram(std::span<const PredictionPair> pairs, std::size_t n_bins,
                                                      double lo = 0.0, double hi = 1.0) {
    std::vector<HistogramBin> out(n_bins);
    const double width = (hi - lo) / static_cast<double>(n_bins);
    for (std::size_t b = 0; b < n_bins; ++b) {
        out[b].lo = lo + width * static_cast<double>(b);
        out[b].hi = b + 1 == n_bins ? hi : lo + width * static_cast<double>(b + 1);
    }
    for (const auto& p : pairs) {
        auto b = static_cast<std::ptrdiff_t>(std::floor((p.prediction - lo) / width));
        b = std::clamp<std::ptrdiff_t>(b, 0, static_cast<std::ptrdiff_t>(n_bins) - 1);
        ++out[static_cast<std::size_t>(b)].count;
    }
    return out;
}

inline ReliabilityDiagram reliability_diagram(std::span<const PredictionPair> pairs, std::size_t n_bins,
                                              Binning binning = Binning::equal_count, double lo = 0.0, double hi = 1.0) {
    ReliabilityDiagram out;
    if (pairs.empty() || n_bins == 0) return out;
    if (binning == Binning::equal_count) {
        for (const auto& b : equal_count_bins(pairs, std::min(n_bins, pairs.size()))) {
            out.points.push_back({b.mean_prediction, b.mean_label, b.count});
        }
    } else {
        const double width = (hi - lo) / static_cast<double>(n_bins);
        std::vector<std::vector<std::size_t>> members(n_bins);
        for (std::size_t k = 0; k < pairs.size(); ++k) {
            auto b = static_cast<std::ptrdiff_t>(std::floor((pairs[k].prediction - lo) / width));
            b = std::clamp<std::ptrdiff_t>(b, 0, static_cast<std::ptrdiff_t>(n_bins) - 1);
            members[static_cast<std::size_t>(b)].push_back(k);
        }
        std::vector<double> labels(pairs.size());
        for (std::size_t k = 0; k < pairs.size(); ++k) labels[k] = pairs[k].label;
        for (auto& m : members) {
            if (m.empty()) continue;
            const auto bin = detail::make_bin(pairs, labels, std::move(m));
            out.points.push_back({bin.mean_prediction, bin.mean_label, bin.count});
        }
    }
    out.histogram = prediction_histogram(pairs, n_bins, lo, hi);
    return out;
}

struct RankGroupPoint {
    int rank_lo = 0;
    int rank_hi = 0;
    double mean_prediction = 0.0;
    double mean_label = 0.0;
    std::size_t count = 0;
};

// Means per consecutive rank group [1..g], [g+1..2g], ... up to max_rank;
// groups without samples are omitted.
inline std::vector<RankGroupPoint> rank_calibration_plot(std::span<const RankedPrediction> samples, int group_size,
                                                         int max_rank) {
    if (group_size < 1) throw ConfigError("rank plot: group size must be >= 1");
    std::vector<RankGroupPoint> out;
    if (max_rank < 1) return out;
    const auto n_groups = static_cast<std::size_t>((max_rank + group_size - 1) / group_size);
    std::vector<double> sp(n_groups, 0.0), sl(n_groups, 0.0);
    std::vector<std::size_t> cnt(n_groups, 0);
    for (const auto& s : samples) {
        if (s.rank < 1 || s.rank > max_rank) continue;
        const auto g = static_cast<std::size_t>((s.rank - 1) / group_size);
        sp[g] += s.prediction;
        sl[g] += s.label;
        ++cnt[g];
    }
    for (std::size_t g = 0; g < n_groups; ++g) {
        if (cnt[g] == 0) continue;
        const int lo = static_cast<int>(g) * group_size + 1;
        const double c = static_cast<double>(cnt[g]);
        out.push_back({lo, std::min(lo + group_size - 1, max_rank), sp[g] / c, sl[g] / c, cnt[g]});
    }
    return out;
}

// ---------------------------------------------------------------------------
// Accuracy metrics

inline double rmse(std::span<const PredictionPair> pairs) {
    if (pairs.empty()) throw ValidationError("rmse: no samples");
    double s = 0.0;
    for (const auto& p : pairs) s += (p.prediction - p.label) * (p.prediction - p.label);
    return std::sqrt(s / static_cast<double>(pairs.size()));
}

// Area under the ROC curve via the rank-sum statistic (average ranks for ties).
inline double auc(std::span<const PredictionPair> pairs) {
    std::vector<std::size_t> order(pairs.size());
    std::iota(order.begin(), order.end(), 0);
    std::sort(order.begin(), order.end(),
              [&](std::size_t a, std::size_t b) { return pairs[a].prediction < pairs[b].prediction; });
    double rank_sum = 0.0;
    std::size_t n_pos = 0;
    for (std::size_t k = 0; k < order.size();) {
        std::size_t end = k;
        while (end < order.size() && pairs[order[end]].prediction == pairs[order[k]].prediction) ++end;
        const double avg_rank = 0.5 * static_cast<double>(k + 1 + end);
        for (std::size_t j = k; j < end; ++j) {
            if (pairs[order[j]].label > 0.5) {
                rank_sum += avg_rank;
                ++n_pos;
            }
        }
        k = end;
    }
    const std::size_t n_neg = pairs.size() - n_pos;
    if (n_pos == 0 || n_neg == 0) throw ValidationError("auc: undefined for single-class labels");
    const auto np = static_cast<double>(n_pos);
    return (rank_sum - np * (np + 1.0) / 2.0) / (np * static_cast<double>(n_neg));
}

// Mean of per-user AUCs over users whose lists contain both classes.
inline double mean_user_auc(std::span<const std::vector<PredictionPair>> per_user) {
    double total = 0.0;
    std::size_t users = 0;
    for (const auto& pairs : per_user) {
        bool pos = false, neg = false;
        for (const auto& p : pairs) (p.label > 0.5 ? pos : neg) = true;
        if (!pos || !neg) continue;
        total += auc(pairs);
        ++users;
    }
    if (users == 0) throw ValidationError("auc: no user has both positive and negative labels");
    return total / static_cast<double>(users);
}

// NDCG@N with binary gains and log2 discounts. Each list holds one user's
// labels in ranked order over all of that user's candidates; users without a
// positive are skipped.
inline double ndcg_at_n(std::span<const std::vector<double>> ranked_labels, int n) {
    double total = 0.0;
    std::size_t users = 0;
    for (const auto& labels : ranked_labels) {
        const std::size_t n_pos =
            static_cast<std::size_t>(std::count_if(labels.begin(), labels.end(), [](double y) { return y > 0.5; }));
        if (n_pos == 0) continue;
        double dcg = 0.0, idcg = 0.0;
        const std::size_t cut = std::min(labels.size(), static_cast<std::size_t>(std::max(n, 0)));
        for (std::size_t r = 0; r < cut; ++r) {
            const double disc = 1.0 / std::log2(static_cast<double>(r) + 2.0);
            if (labels[r] > 0.5) dcg += disc;
            if (r < n_pos) idcg += disc;
        }
        total += dcg / idcg;
        ++users;
    }
    if (users == 0) throw ValidationError("ndcg: no user has a positive label");
    return total / static_cast<double>(users);
}

}  // namespace topncal
