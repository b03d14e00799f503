#pragma once

// Desk-scale recommenders producing raw scores s_ui = f(u, i): item-based KNN,
// biased matrix factorization (SGD), BPR, and a fixed score table used as a
// benchmark scorer on synthetic data.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <numeric>
#include <optional>
#include <random>
#include <span>
#include <string>
#include <variant>
#include <vector>

#include "topncal/common.hpp"
#include "topncal/dataset.hpp"

namespace topncal {

enum class RecommenderKind { itemknn, mf, bpr, table };

inline const char* to_string(RecommenderKind k) {
    switch (k) {
        case RecommenderKind::itemknn: return "itemknn";
        case RecommenderKind::mf: return "mf";
        case RecommenderKind::bpr: return "bpr";
        case RecommenderKind::table: return "table";
    }
    return "?";
}

inline RecommenderKind parse_recommender_kind(const std::string& s) {
    if (s == "itemknn") return RecommenderKind::itemknn;
    if (s == "mf") return RecommenderKind::mf;
    if (s == "bpr") return RecommenderKind::bpr;
    if (s == "table") return RecommenderKind::table;
    throw ConfigError("unknown recommender '" + s + "'");
}

// Adjusted-cosine item neighbourhood model.
struct KnnState {
    int k = 50;
    int n_items = 0;
    std::vector<double> user_mean;
    std::vector<double> similarity;  // n_items x n_items, row-major
    // Mean-centred training ratings per user: (item, r_ui - mean_u).
    std::vector<std::vector<std::pair<std::int32_t, double>>> user_deviations;
};

// Shared by MF and BPR. For BPR `global_mean` and `user_bias` stay zero.
struct FactorState {
    int factors = 0;
    double global_mean = 0.0;
    std::vector<double> user_bias;
    std::vector<double> item_bias;
    std::vector<double> user_factors;  // n_users x factors
    std::vector<double> item_factors;  // n_items x factors

    double* user_vec(int u) { return user_factors.data() + static_cast<std::size_t>(u) * static_cast<std::size_t>(factors); }
    double* item_vec(int i) { return item_factors.data() + static_cast<std::size_t>(i) * static_cast<std::size_t>(factors); }
    const double* user_vec(int u) const {
        return user_factors.data() + static_cast<std::size_t>(u) * static_cast<std::size_t>(factors);
    }
    const double* item_vec(int i) const {
        return item_factors.data() + static_cast<std::size_t>(i) * static_cast<std::size_t>(factors);
    }
    double dot(int u, int i) const {
        const double* p = user_vec(u);
        const double* q = item_vec(i);
        double s = 0.0;
        for (int k = 0; k < factors; ++k) s += p[k] * q[k];
        return s;
    }
};

struct TableState {
    std::vector<double> scores;  // n_users x n_items
};

struct RecommenderModel {
    RecommenderKind kind = RecommenderKind::mf;
    ScoreRange score_range = ScoreRange::unbounded;
    int n_users = 0;
    int n_items = 0;
    double rating_min = 0.0;
    double rating_max = 1.0;
    std::variant<KnnState, FactorState, TableState> state;

    // Model output before any codomain clamping.
    double raw_score(int user, int item) const {
        switch (kind) {
            case RecommenderKind::itemknn: return knn_predict(std::get<KnnState>(state), user, item);
            case RecommenderKind::mf: {
                const auto& f = std::get<FactorState>(state);
                return f.global_mean + f.user_bias[static_cast<std::size_t>(user)] +
                       f.item_bias[static_cast<std::size_t>(item)] + f.dot(user, item);
            }
            case RecommenderKind::bpr: {
                const auto& f = std::get<FactorState>(state);
                return f.item_bias[static_cast<std::size_t>(item)] + f.dot(user, item);
            }
            case RecommenderKind::table:
                return std::get<TableState>(state).scores[static_cast<std::size_t>(user) * static_cast<std::size_t>(n_items) +
                                                          static_cast<std::size_t>(item)];
        }
        return 0.0;
    }

    double score(int user, int item) const {
        const double s = raw_score(user, item);
        if (score_range == ScoreRange::rating_scale) return clamp(s, rating_min, rating_max);
        if (score_range == ScoreRange::bounded01) return clamp(s, 0.0, 1.0);
        return s;
    }

    static double knn_predict(const KnnState& st, int user, int item) {
        const auto& devs = st.user_deviations[static_cast<std::size_t>(user)];
        const double mean = st.user_mean[static_cast<std::size_t>(user)];
        if (devs.empty()) return mean;
        const double* row = st.similarity.data() + static_cast<std::size_t>(item) * static_cast<std::size_t>(st.n_items);
        std::vector<std::pair<double, std::int32_t>> nb;
        nb.reserve(devs.size());
        for (std::size_t k = 0; k < devs.size(); ++k) {
            nb.emplace_back(row[static_cast<std::size_t>(devs[k].first)], static_cast<std::int32_t>(k));
        }
        const std::size_t take = std::min(nb.size(), static_cast<std::size_t>(st.k));
        auto by_sim = [&](const auto& a, const auto& b) {
            if (a.first != b.first) return a.first > b.first;
            return devs[static_cast<std::size_t>(a.second)].first < devs[static_cast<std::size_t>(b.second)].first;
        };
        std::partial_sort(nb.begin(), nb.begin() + static_cast<std::ptrdiff_t>(take), nb.end(), by_sim);
        double num = 0.0, den = 0.0;
        for (std::size_t k = 0; k < take; ++k) {
            num += nb[k].first * devs[static_cast<std::size_t>(nb[k].second)].second;
            den += std::abs(nb[k].first);
        }
        if (den == 0.0) return mean;
        return mean + num / den;
    }
};

// ---------------------------------------------------------------------------
// itemKNN

inline RecommenderModel fit_itemknn(const InteractionTable& train, int k = 50) {
    require_fit_partition(train.partition(), "fit_itemknn");
    if (k < 1) throw ConfigError("itemknn: k must be >= 1");
    if (train.kind() != FeedbackKind::explicit_rating) throw ConfigError("itemknn requires explicit ratings");

    const auto nu = static_cast<std::size_t>(train.n_users());
    const auto ni = static_cast<std::size_t>(train.n_items());
    KnnState st;
    st.k = k;
    st.n_items = train.n_items();
    st.user_mean.assign(nu, 0.0);
    st.user_deviations.assign(nu, {});
    double global = 0.0;
    for (const auto& r : train.records()) global += r.feedback;
    global = train.empty() ? 0.5 * (train.rating_min() + train.rating_max()) : global / static_cast<double>(train.size());

    for (std::size_t u = 0; u < nu; ++u) {
        const auto& idx = train.by_user()[u];
        if (idx.empty()) {
            st.user_mean[u] = global;
            continue;
        }
        double m = 0.0;
        for (auto j : idx) m += train[j].feedback;
        m /= static_cast<double>(idx.size());
        st.user_mean[u] = m;
        auto& devs = st.user_deviations[u];
        for (auto j : idx) devs.emplace_back(train[j].item, train[j].feedback - m);
        std::sort(devs.begin(), devs.end());
    }

    std::vector<double> dotp(ni * ni, 0.0);
    std::vector<double> norm2(ni, 0.0);
    for (std::size_t u = 0; u < nu; ++u) {
        const auto& devs = st.user_deviations[u];
        for (std::size_t a = 0; a < devs.size(); ++a) {
            const auto ia = static_cast<std::size_t>(devs[a].first);
            const double da = devs[a].second;
            norm2[ia] += da * da;
            double* row = dotp.data() + ia * ni;
            for (std::size_t b = 0; b < devs.size(); ++b) {
                row[static_cast<std::size_t>(devs[b].first)] += da * devs[b].second;
            }
        }
    }
    st.similarity.assign(ni * ni, 0.0);
    for (std::size_t i = 0; i < ni; ++i) {
        for (std::size_t j = 0; j < ni; ++j) {
            const double den = std::sqrt(norm2[i]) * std::sqrt(norm2[j]);
            st.similarity[i * ni + j] = den > 0.0 ? dotp[i * ni + j] / den : 0.0;
        }
    }

    RecommenderModel m;
    m.kind = RecommenderKind::itemknn;
    m.score_range = ScoreRange::rating_scale;
    m.n_users = train.n_users();
    m.n_items = train.n_items();
    m.rating_min = train.rating_min();
    m.rating_max = train.rating_max();
    m.state = std::move(st);
    return m;
}

// ---------------------------------------------------------------------------
// Matrix factorization

struct FactorConfig {
    int factors = 16;
    int epochs = 30;
    double lr = 0.01;
    double reg = 0.02;
    std::uint64_t seed = 0;
    double init_scale = 0.1;
};

// Gradient of one sample's loss with respect to the parameters it touches.
struct SampleGradient {
    double user_bias = 0.0;
    double item_bias = 0.0;
    double neg_item_bias = 0.0;  // BPR only
    std::vector<double> user_vec;
    std::vector<double> item_vec;
    std::vector<double> neg_item_vec;  // BPR only
};

// Per-rating loss: 0.5 e^2 + 0.5 reg (b_u^2 + b_i^2 + |p_u|^2 + |q_i|^2),
// e = y - (mu + b_u + b_i + p_u . q_i).
inline double mf_sample_loss(const FactorState& f, const InteractionRecord& r, double reg) {
    const auto u = static_cast<std::size_t>(r.user);
    const auto i = static_cast<std::size_t>(r.item);
    const double e = r.feedback - (f.global_mean + f.user_bias[u] + f.item_bias[i] + f.dot(r.user, r.item));
    double pen = f.user_bias[u] * f.user_bias[u] + f.item_bias[i] * f.item_bias[i];
    const double* p = f.user_vec(r.user);
    const double* q = f.item_vec(r.item);
    for (int k = 0; k < f.factors; ++k) pen += p[k] * p[k] + q[k] * q[k];
    return 0.5 * e * e + 0.5 * reg * pen;
}

inline void mf_sample_gradient(const FactorState& f, const InteractionRecord& r, double reg, SampleGradient& g) {
    const auto u = static_cast<std::size_t>(r.user);
    const auto i = static_cast<std::size_t>(r.item);
    const double e = r.feedback - (f.global_mean + f.user_bias[u] + f.item_bias[i] + f.dot(r.user, r.item));
    g.user_bias = -e + reg * f.user_bias[u];
    g.item_bias = -e + reg * f.item_bias[i];
    g.user_vec.resize(static_cast<std::size_t>(f.factors));
    g.item_vec.resize(static_cast<std::size_t>(f.factors));
    const double* p = f.user_vec(r.user);
    const double* q = f.item_vec(r.item);
    for (int k = 0; k < f.factors; ++k) {
        g.user_vec[static_cast<std::size_t>(k)] = -e * q[k] + reg * p[k];
        g.item_vec[static_cast<std::size_t>(k)] = -e * p[k] + reg * q[k];
    }
}

inline double mf_loss(const FactorState& f, std::span<const InteractionRecord> records, double reg) {
    double total = 0.0;
    for (const auto& r : records) total += mf_sample_loss(f, r, reg);
    return total;
}

inline FactorState init_factor_state(int n_users, int n_items, const FactorConfig& cfg, double global_mean) {
    FactorState f;
    f.factors = cfg.factors;
    f.global_mean = global_mean;
    f.user_bias.assign(static_cast<std::size_t>(n_users), 0.0);
    f.item_bias.assign(static_cast<std::size_t>(n_items), 0.0);
    f.user_factors.resize(static_cast<std::size_t>(n_users) * static_cast<std::size_t>(cfg.factors));
    f.item_factors.resize(static_cast<std::size_t>(n_items) * static_cast<std::size_t>(cfg.factors));
    std::mt19937_64 rng(cfg.seed);
    std::normal_distribution<double> init(0.0, cfg.init_scale);
    for (auto& v : f.user_factors) v = init(rng);
    for (auto& v : f.item_factors) v = init(rng);
    return f;
}

inline RecommenderModel fit_mf(const InteractionTable& train, const FactorConfig& cfg = {}) {
    require_fit_partition(train.partition(), "fit_mf");
    if (cfg.factors < 1) throw ConfigError("mf: factors must be >= 1");
    if (cfg.epochs < 0) throw ConfigError("mf: epochs must be >= 0");

    double mean = 0.0;
    for (const auto& r : train.records()) mean += r.feedback;
    mean = train.empty() ? 0.0 : mean / static_cast<double>(train.size());
    FactorState f = init_factor_state(train.n_users(), train.n_items(), cfg, mean);

    std::mt19937_64 rng(cfg.seed ^ 0x9e3779b97f4a7c15ULL);
    std::vector<std::size_t> order(train.size());
    std::iota(order.begin(), order.end(), 0);
    SampleGradient g;
    for (int epoch = 1; epoch <= cfg.epochs; ++epoch) {
        std::shuffle(order.begin(), order.end(), rng);
        for (std::size_t k : order) {
            const auto& r = train[k];
            mf_sample_gradient(f, r, cfg.reg, g);
            f.user_bias[static_cast<std::size_t>(r.user)] -= cfg.lr * g.user_bias;
            f.item_bias[static_cast<std::size_t>(r.item)] -= cfg.lr * g.item_bias;
            double* p = f.user_vec(r.user);
            double* q = f.item_vec(r.item);
            for (int d = 0; d < f.factors; ++d) {
                p[d] -= cfg.lr * g.user_vec[static_cast<std::size_t>(d)];
                q[d] -= cfg.lr * g.item_vec[static_cast<std::size_t>(d)];
            }
        }
        const double loss = mf_loss(f, train.records(), cfg.reg);
        if (!std::isfinite(loss)) {
            throw TrainingError("mf: loss diverged at epoch " + std::to_string(epoch));
        }
    }

    RecommenderModel m;
    m.kind = RecommenderKind::mf;
    m.score_range = train.kind() == FeedbackKind::explicit_rating ? ScoreRange::rating_scale : ScoreRange::unbounded;
    m.n_users = train.n_users();
    m.n_items = train.n_items();
    m.rating_min = train.rating_min();
    m.rating_max = train.rating_max();
    m.state = std::move(f);
    return m;
}

// ---------------------------------------------------------------------------
// BPR

struct BprTriplet {
    std::int32_t user;
    std::int32_t pos;
    std::int32_t neg;
};

// Per-triplet loss: -ln sigma(x) + 0.5 reg (|p_u|^2 + |q_i|^2 + |q_j|^2 + b_i^2 + b_j^2),
// x = (b_i - b_j) + p_u . (q_i - q_j).
inline double bpr_sample_loss(const FactorState& f, const BprTriplet& t, double reg) {
    const auto i = static_cast<std::size_t>(t.pos);
    const auto j = static_cast<std::size_t>(t.neg);
    const double x = f.item_bias[i] - f.item_bias[j] + f.dot(t.user, t.pos) - f.dot(t.user, t.neg);
    double pen = f.item_bias[i] * f.item_bias[i] + f.item_bias[j] * f.item_bias[j];
    const double* p = f.user_vec(t.user);
    const double* qi = f.item_vec(t.pos);
    const double* qj = f.item_vec(t.neg);
    for (int k = 0; k < f.factors; ++k) pen += p[k] * p[k] + qi[k] * qi[k] + qj[k] * qj[k];
    return softplus(-x) + 0.5 * reg * pen;
}

inline void bpr_sample_gradient(const FactorState& f, const BprTriplet& t, double reg, SampleGradient& g) {
    const auto i = static_cast<std::size_t>(t.pos);
    const auto j = static_cast<std::size_t>(t.neg);
    const double x = f.item_bias[i] - f.item_bias[j] + f.dot(t.user, t.pos) - f.dot(t.user, t.neg);
    const double c = sigmoid(-x);  // -dL/dx
    g.user_bias = 0.0;
    g.item_bias = -c + reg * f.item_bias[i];
    g.neg_item_bias = c + reg * f.item_bias[j];
    const auto nf = static_cast<std::size_t>(f.factors);
    g.user_vec.resize(nf);
    g.item_vec.resize(nf);
    g.neg_item_vec.resize(nf);
    const double* p = f.user_vec(t.user);
    const double* qi = f.item_vec(t.pos);
    const double* qj = f.item_vec(t.neg);
    for (std::size_t k = 0; k < nf; ++k) {
        g.user_vec[k] = -c * (qi[k] - qj[k]) + reg * p[k];
        g.item_vec[k] = -c * p[k] + reg * qi[k];
        g.neg_item_vec[k] = c * p[k] + reg * qj[k];
    }
}

inline double bpr_loss(const FactorState& f, std::span<const BprTriplet> triplets, double reg) {
    double total = 0.0;
    for (const auto& t : triplets) total += bpr_sample_loss(f, t, reg);
    return total;
}

inline RecommenderModel fit_bpr(const InteractionTable& train, const FactorConfig& cfg = {}) {
    require_fit_partition(train.partition(), "fit_bpr");
    if (cfg.factors < 1) throw ConfigError("bpr: factors must be >= 1");
    if (cfg.epochs < 0) throw ConfigError("bpr: epochs must be >= 0");
    if (train.kind() != FeedbackKind::implicit) throw ConfigError("bpr requires implicit feedback");

    const int n_items = train.n_items();
    std::vector<std::vector<std::int32_t>> positives(static_cast<std::size_t>(train.n_users()));
    for (const auto& r : train.records()) {
        if (r.feedback == 1.0) positives[static_cast<std::size_t>(r.user)].push_back(r.item);
    }
    std::vector<std::pair<std::int32_t, std::int32_t>> pairs;
    for (std::size_t u = 0; u < positives.size(); ++u) {
        auto& pos = positives[u];
        std::sort(pos.begin(), pos.end());
        // A user needs at least one item that is not a positive to form a triplet.
        if (pos.size() >= static_cast<std::size_t>(n_items)) continue;
        for (auto i : pos) pairs.emplace_back(static_cast<std::int32_t>(u), i);
    }
    if (pairs.empty()) {
        throw TrainingError("bpr: no user has both a positive and a negative item");
    }

    FactorState f = init_factor_state(train.n_users(), n_items, cfg, 0.0);
    std::mt19937_64 rng(cfg.seed ^ 0x9e3779b97f4a7c15ULL);
    std::uniform_int_distribution<std::int32_t> pick_item(0, n_items - 1);
    SampleGradient g;
    std::vector<BprTriplet> epoch_triplets(pairs.size());
    for (int epoch = 1; epoch <= cfg.epochs; ++epoch) {
        std::shuffle(pairs.begin(), pairs.end(), rng);
        for (std::size_t k = 0; k < pairs.size(); ++k) {
            const auto [u, i] = pairs[k];
            const auto& pos = positives[static_cast<std::size_t>(u)];
            std::int32_t j;
            do {
                j = pick_item(rng);
            } while (std::binary_search(pos.begin(), pos.end(), j));
            const BprTriplet t{u, i, j};
            epoch_triplets[k] = t;
            bpr_sample_gradient(f, t, cfg.reg, g);
            f.item_bias[static_cast<std::size_t>(i)] -= cfg.lr * g.item_bias;
            f.item_bias[static_cast<std::size_t>(j)] -= cfg.lr * g.neg_item_bias;
            double* p = f.user_vec(u);
            double* qi = f.item_vec(i);
            double* qj = f.item_vec(j);
            for (int d = 0; d < f.factors; ++d) {
                const auto dd = static_cast<std::size_t>(d);
                p[d] -= cfg.lr * g.user_vec[dd];
                qi[d] -= cfg.lr * g.item_vec[dd];
                qj[d] -= cfg.lr * g.neg_item_vec[dd];
            }
        }
        if (!std::isfinite(bpr_loss(f, epoch_triplets, cfg.reg))) {
            throw TrainingError("bpr: loss diverged at epoch " + std::to_string(epoch));
        }
    }

    RecommenderModel m;
    m.kind = RecommenderKind::bpr;
    m.score_range = ScoreRange::unbounded;
    m.n_users = train.n_users();
    m.n_items = n_items;
    m.state = std::move(f);
    return m;
}

// Fixed scorer over a dense score table (the synthetic generator's distorted
// logits). Scores are unbounded.
inline RecommenderModel make_table_scorer(const TruthTable& truth) {
    RecommenderModel m;
    m.kind = RecommenderKind::table;
    m.score_range = ScoreRange::unbounded;
    m.n_users = truth.n_users;
    m.n_items = truth.n_items;
    m.state = TableState{truth.score};
    return m;
}

// ---------------------------------------------------------------------------
// Ranking

struct RankedEntry {
    std::int32_t item = 0;
    double score = 0.0;
    int rank = 0;  // 1-based
};

struct RankedList {
    std::int32_t user = 0;
    std::vector<RankedEntry> entries;
};

// Sort candidates by score descending, ties by ascending item id.
inline RankedList rank_items(const RecommenderModel& model, std::int32_t user, std::span<const std::int32_t> candidates,
                             std::optional<int> cutoff = std::nullopt) {
    RankedList out;
    out.user = user;
    out.entries.reserve(candidates.size());
    for (auto item : candidates) out.entries.push_back({item, model.score(user, item), 0});
    std::sort(out.entries.begin(), out.entries.end(), [](const RankedEntry& a, const RankedEntry& b) {
        if (a.score != b.score) return a.score > b.score;
        return a.item < b.item;
    });
    if (cutoff && static_cast<std::size_t>(std::max(*cutoff, 0)) < out.entries.size()) {
        out.entries.resize(static_cast<std::size_t>(std::max(*cutoff, 0)));
    }
    for (std::size_t r = 0; r < out.entries.size(); ++r) out.entries[r].rank = static_cast<int>(r + 1);
    return out;
}

}  // namespace topncal
