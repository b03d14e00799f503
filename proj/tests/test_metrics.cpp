#include <gtest/gtest.h>

#include <random>

#include "oracles.hpp"
#include "topncal/metrics.hpp"

namespace topncal {
namespace {

std::vector<PredictionPair> to_pairs(const std::vector<oracle::Pair>& xs) {
    std::vector<PredictionPair> out;
    for (const auto& x : xs) out.push_back({x.pred, x.label});
    return out;
}

std::vector<RankedPrediction> to_ranked(const std::vector<oracle::Ranked>& xs) {
    std::vector<RankedPrediction> out;
    for (const auto& x : xs) out.push_back({x.pred, x.label, x.rank});
    return out;
}

// Predictions on a coarse grid so ties are common; labels binary or graded.
std::vector<oracle::Ranked> random_instance(std::mt19937_64& rng) {
    std::uniform_int_distribution<int> size(1, 60), grid(0, 10), rank(1, 25), kind(0, 1);
    std::uniform_real_distribution<double> u(0.0, 1.0);
    const int n = size(rng);
    const bool graded = kind(rng) == 1;
    std::vector<oracle::Ranked> out;
    for (int k = 0; k < n; ++k) {
        const double p = grid(rng) / 10.0;
        const double y = graded ? std::round(u(rng) * 4.0) + 1.0 : (u(rng) < p ? 1.0 : 0.0);
        out.push_back({p, y, rank(rng)});
    }
    return out;
}

TEST(Bins, SizesAndOrder) {
    const std::vector<PredictionPair> xs = {{0.9, 1}, {0.1, 0}, {0.5, 1}, {0.5, 0}, {0.3, 1}};
    const auto b = equal_count_bins(xs, 2);
    ASSERT_EQ(b.size(), 2u);
    EXPECT_EQ(b[0].count, 3u);
    EXPECT_EQ(b[1].count, 2u);
    // the edge splits the tie at 0.5, which contributes its mean label 0.5
    EXPECT_DOUBLE_EQ(b[0].mean_label, 0.5);
    EXPECT_DOUBLE_EQ(b[1].mean_label, 0.75);
    EXPECT_EQ(equal_count_bins(xs, 1).size(), 1u);
    for (const auto& s : equal_count_bins(xs, 5)) EXPECT_EQ(s.count, 1u);
    EXPECT_THROW(equal_count_bins(xs, 6), ConfigError);
}

TEST(Ece, PerfectCalibrationIsZero) {
    const std::vector<PredictionPair> xs = {{0.2, 0.2}, {0.5, 0.5}, {0.7, 0.7}};
    EXPECT_EQ(ece(xs, 3), 0.0);
}

TEST(Ece, TwoBinExample) {
    const std::vector<PredictionPair> xs = {{0.2, 0}, {0.4, 1}, {0.8, 1}, {0.9, 1}};
    EXPECT_NEAR(ece(xs, 2), 0.175, 1e-15);
}

TEST(Ece, FlatCalibratedRegionIsZero) {
    std::vector<PredictionPair> xs;
    for (int k = 0; k < 100; ++k) xs.push_back({0.3, k % 10 < 3 ? 1.0 : 0.0});
    EXPECT_NEAR(ece(xs, 10), 0.0, 1e-15);
    EXPECT_EQ(adaptive_bin_count(xs), 10u);
}

TEST(Ece, EmptyIsError) { EXPECT_THROW(ece(std::vector<PredictionPair>{}, 1), ValidationError); }

TEST(EceAtN, TopTwoExample) {
    const std::vector<RankedPrediction> xs = {{0.6, 1, 1}, {0.4, 0, 2}};
    const auto r = ece_at_n(xs, 2, std::size_t{2});
    EXPECT_NEAR(r.value, 0.4, 1e-15);
    EXPECT_EQ(r.n_bins, 2u);
    EXPECT_EQ(r.n, 2u);
}

TEST(EceAtN, IgnoresRanksBeyondCutoff) {
    const std::vector<RankedPrediction> xs = {{0.3, 0.3, 1}, {0.6, 0.6, 2}, {0.9, 0.0, 3}, {0.0, 1.0, 7}};
    EXPECT_EQ(ece_at_n(xs, 2, std::size_t{2}).value, 0.0);
    EXPECT_THROW(ece_at_n(std::vector<RankedPrediction>{{0.1, 0, 5}}, 2), ValidationError);
}

TEST(Rdece, TopTwoExample) {
    const std::vector<RankedPrediction> xs = {{0.6, 1, 1}, {0.4, 0, 2}};
    EXPECT_NEAR(rdece_at_n(xs, 2), 0.4, 1e-15);
}

TEST(Rdece, ZeroWhenMeansMatchPerRank) {
    const std::vector<RankedPrediction> xs = {{0.5, 1, 1}, {0.5, 0, 1}, {0.25, 0, 2}, {0.25, 0.5, 2}};
    EXPECT_EQ(rdece_at_n(xs, 2), 0.0);
}

TEST(Rdece, Errors) {
    EXPECT_THROW(rdece_at_n(std::vector<RankedPrediction>{{0.1, 0, 3}}, 2), ValidationError);
    EXPECT_THROW(rdece_at_n(std::vector<RankedPrediction>{{0.1, 0, 1}}, 0), ConfigError);
}

TEST(Adaptive, TiedBinMeansAllowed) {
    const std::vector<PredictionPair> xs = {{0.1, 1}, {0.2, 0}, {0.3, 1}, {0.4, 0}};
    EXPECT_EQ(adaptive_bin_count(xs, std::size_t{2}), 2u);
}

TEST(Adaptive, MonotoneDataUsesMaximum) {
    std::vector<PredictionPair> xs;
    for (int k = 0; k < 500; ++k) xs.push_back({k / 500.0, k / 500.0});
    EXPECT_EQ(adaptive_bin_count(xs), 50u);
    std::vector<PredictionPair> flat;
    for (int k = 0; k < 2000; ++k) flat.push_back({k / 2000.0, 1.0});
    EXPECT_EQ(adaptive_bin_count(flat), 100u);
}

TEST(Adaptive, FallsBackToOneBin) {
    const std::vector<PredictionPair> xs = {{0.1, 1}, {0.2, 1}, {0.3, 0}, {0.4, 0}};
    EXPECT_EQ(adaptive_bin_count(xs, std::size_t{4}), 1u);
}

TEST(Oracle, AllVariantsMatchBruteForce) {
    std::mt19937_64 rng(99);
    std::uniform_int_distribution<int> cut(1, 30);
    for (int c = 0; c < 1000; ++c) {
        const auto inst = random_instance(rng);
        std::vector<oracle::Pair> all;
        for (const auto& s : inst) all.push_back({s.pred, s.label});
        const auto pairs = to_pairs(all);
        const auto ranked = to_ranked(inst);

        const std::size_t m_max = std::max<std::size_t>(1, all.size() / 3);
        const std::size_t m = oracle::adaptive_m(all, m_max);
        ASSERT_EQ(adaptive_bin_count(pairs, m_max), m) << "case " << c;
        EXPECT_NEAR(ece(pairs, m), oracle::ece(all, m), 1e-12) << "case " << c;

        const int n = cut(rng);
        const auto top = oracle::top_n(inst, n);
        if (top.empty()) continue;
        const std::size_t mt = oracle::adaptive_m(top, oracle::default_m_max(top.size()));
        const auto got = ece_at_n(ranked, n);
        EXPECT_EQ(got.n_bins, mt) << "case " << c;
        EXPECT_NEAR(got.value, oracle::ece_at_n(inst, n, mt), 1e-12) << "case " << c;
        EXPECT_NEAR(rdece_at_n(ranked, n), oracle::rdece_at_n(inst, n), 1e-12) << "case " << c;
    }
}

TEST(Properties, PermutationInvariance) {
    std::mt19937_64 rng(5);
    for (int c = 0; c < 200; ++c) {
        auto inst = random_instance(rng);
        auto a = to_pairs([&] {
            std::vector<oracle::Pair> v;
            for (const auto& s : inst) v.push_back({s.pred, s.label});
            return v;
        }());
        auto b = a;
        std::shuffle(b.begin(), b.end(), rng);
        const std::size_t m = std::max<std::size_t>(1, a.size() / 4);
        EXPECT_DOUBLE_EQ(ece(a, m), ece(b, m));
        EXPECT_EQ(adaptive_bin_count(a), adaptive_bin_count(b));
        auto ra = to_ranked(inst), rb = ra;
        std::shuffle(rb.begin(), rb.end(), rng);
        EXPECT_NEAR(rdece_at_n(ra, 25), rdece_at_n(rb, 25), 1e-14);
    }
}

TEST(Properties, CutoffBeyondMaxRankEqualsEce) {
    std::mt19937_64 rng(6);
    for (int c = 0; c < 200; ++c) {
        const auto inst = random_instance(rng);
        const auto ranked = to_ranked(inst);
        std::vector<PredictionPair> all;
        for (const auto& s : ranked) all.push_back({s.prediction, s.label});
        const auto fixed = std::max<std::size_t>(1, all.size() / 5);
        EXPECT_EQ(ece_at_n(ranked, 25, fixed).value, ece(all, fixed));
        EXPECT_EQ(ece_at_n(ranked, 1000).value, ece_auto(all).value);
    }
}

TEST(Properties, UnitWeightsReduceToRankBinnedEce) {
    std::mt19937_64 rng(7);
    for (int c = 0; c < 200; ++c) {
        auto inst = random_instance(rng);
        // every rank 1..5 present so N / sum(w) = 1
        for (int r = 1; r <= 5; ++r) inst.push_back({0.5, 1.0, r});
        const auto ranked = to_ranked(inst);
        const double got = rdece_at_n(ranked, 5, [](int) { return 1.0; });
        EXPECT_NEAR(got, oracle::rdece_at_n(inst, 5, true), 1e-12);

        std::map<int, std::pair<double, double>> sums;
        std::map<int, int> counts;
        int total = 0;
        for (const auto& s : inst) {
            if (s.rank > 5) continue;
            sums[s.rank].first += s.pred;
            sums[s.rank].second += s.label;
            ++counts[s.rank];
            ++total;
        }
        double expected = 0.0;
        for (const auto& [r, sp] : sums) {
            expected += static_cast<double>(counts[r]) / total * std::abs(sp.second - sp.first) / counts[r];
        }
        EXPECT_NEAR(got, expected, 1e-12);
    }
}

TEST(Properties, BoundsAndNonNegativity) {
    std::mt19937_64 rng(8);
    for (int c = 0; c < 200; ++c) {
        const auto inst = random_instance(rng);
        const auto ranked = to_ranked(inst);
        const double top = ece_at_n(ranked, 30).value;
        EXPECT_GE(top, 0.0);
        EXPECT_LE(top, 5.0);
        EXPECT_GE(rdece_at_n(ranked, 30), 0.0);
    }
}

TEST(Properties, PerfectClonesCannotRaiseEce) {
    std::mt19937_64 rng(9);
    std::uniform_real_distribution<double> u(0.0, 0.5);
    for (int c = 0; c < 100; ++c) {
        std::vector<PredictionPair> data;
        for (int k = 0; k < 40; ++k) data.push_back({u(rng), u(rng) < 0.25 ? 1.0 : 0.0});
        auto merged = data;
        for (int k = 0; k < 40; ++k) merged.push_back({0.6 + k / 100.0, 0.6 + k / 100.0});
        EXPECT_LE(ece(merged, 8), ece(data, 4) + 1e-12);
    }
}

TEST(Reliability, EqualCountPoints) {
    std::vector<PredictionPair> xs;
    for (int k = 0; k < 100; ++k) xs.push_back({(k + 0.5) / 100.0, (k + 0.5) / 100.0});
    const auto d = reliability_diagram(xs, 10);
    ASSERT_EQ(d.points.size(), 10u);
    for (const auto& p : d.points) EXPECT_NEAR(p.mean_prediction, p.mean_label, 1e-15);
    ASSERT_EQ(d.histogram.size(), 10u);
    for (const auto& h : d.histogram) EXPECT_EQ(h.count, 10u);

    const auto one = reliability_diagram(xs, 1);
    ASSERT_EQ(one.points.size(), 1u);
    EXPECT_NEAR(one.points[0].mean_prediction, 0.5, 1e-12);
    EXPECT_EQ(one.points[0].count, 100u);
}

TEST(Reliability, EqualWidthSkipsEmptyBins) {
    const std::vector<PredictionPair> xs = {{0.05, 0}, {0.07, 1}, {0.95, 1}, {1.0, 1}};
    const auto d = reliability_diagram(xs, 10, Binning::equal_width);
    ASSERT_EQ(d.points.size(), 2u);
    EXPECT_DOUBLE_EQ(d.points[0].mean_label, 0.5);
    EXPECT_EQ(d.points[1].count, 2u);
    EXPECT_EQ(d.histogram[9].count, 2u);
}

TEST(RankPlot, GroupsOfFive) {
    std::vector<RankedPrediction> xs;
    for (int r = 1; r <= 12; ++r) xs.push_back({1.0 / r, r <= 5 ? 1.0 : 0.0, r});
    const auto g = rank_calibration_plot(xs, 5, 10);
    ASSERT_EQ(g.size(), 2u);
    EXPECT_EQ(g[0].rank_lo, 1);
    EXPECT_EQ(g[0].rank_hi, 5);
    EXPECT_EQ(g[1].rank_lo, 6);
    EXPECT_EQ(g[1].count, 5u);
    EXPECT_DOUBLE_EQ(g[0].mean_label, 1.0);
    const auto per_rank = rank_calibration_plot(xs, 1, 12);
    EXPECT_EQ(per_rank.size(), 12u);
    EXPECT_DOUBLE_EQ(per_rank[3].mean_prediction, 0.25);
    EXPECT_THROW(rank_calibration_plot(xs, 0, 10), ConfigError);
}

TEST(Accuracy, Rmse) {
    EXPECT_EQ(rmse(std::vector<PredictionPair>{{3, 3}, {4, 4}}), 0.0);
    EXPECT_DOUBLE_EQ(rmse(std::vector<PredictionPair>{{1, 3}, {4, 4}}), std::sqrt(2.0));
}

TEST(Accuracy, Auc) {
    EXPECT_EQ(auc(std::vector<PredictionPair>{{0.1, 0}, {0.2, 0}, {0.7, 1}, {0.9, 1}}), 1.0);
    EXPECT_EQ(auc(std::vector<PredictionPair>{{0.5, 0}, {0.5, 1}}), 0.5);
    EXPECT_THROW(auc(std::vector<PredictionPair>{{0.5, 1}, {0.7, 1}}), ValidationError);

    std::mt19937_64 rng(10);
    std::uniform_real_distribution<double> u(0.0, 1.0);
    std::vector<PredictionPair> xs;
    for (int k = 0; k < 100000; ++k) xs.push_back({u(rng), k % 2 == 0 ? 1.0 : 0.0});
    EXPECT_NEAR(auc(xs), 0.5, 0.01);
}

TEST(Accuracy, MeanUserAucSkipsSingleClassUsers) {
    const std::vector<std::vector<PredictionPair>> users = {
        {{0.1, 0}, {0.9, 1}}, {{0.9, 0}, {0.1, 1}}, {{0.4, 1}}};
    EXPECT_DOUBLE_EQ(mean_user_auc(users), 0.5);
}

TEST(Accuracy, Ndcg) {
    const std::vector<std::vector<double>> perfect = {{1, 1, 0, 0}, {1, 0, 0}};
    EXPECT_DOUBLE_EQ(ndcg_at_n(perfect, 20), 1.0);
    const std::vector<std::vector<double>> one = {{0, 1}};
    EXPECT_DOUBLE_EQ(ndcg_at_n(one, 2), 1.0 / std::log2(3.0));
    EXPECT_DOUBLE_EQ(ndcg_at_n(one, 1), 0.0);
    EXPECT_THROW(ndcg_at_n(std::vector<std::vector<double>>{{0, 0}}, 2), ValidationError);
}

}  // namespace
}  // namespace topncal
