#pragma once

// Feedback tables, CSV ingestion, seeded train/validation/test splits and the
// synthetic generator with known preference probabilities.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <cstdio>
#include <fstream>
#include <map>
#include <numeric>
#include <optional>
#include <random>
#include <span>
#include <sstream>
#include <string>
#include <string_view>
#include <vector>

#include "topncal/common.hpp"

namespace topncal {

enum class FeedbackKind { explicit_rating, implicit };

// Which split a table (or a view derived from it) came from. Fitting routines
// refuse tables and sample sets tagged `test`.
enum class Partition { all, train, validation, test };

inline const char* to_string(Partition p) {
    switch (p) {
        case Partition::all: return "all";
        case Partition::train: return "train";
        case Partition::validation: return "validation";
        case Partition::test: return "test";
    }
    return "?";
}

inline void require_fit_partition(Partition p, std::string_view who) {
    if (p == Partition::test) {
        throw LeakageError(std::string(who) + ": refusing to fit on test-partition data");
    }
}

struct InteractionRecord {
    std::int32_t user = 0;
    std::int32_t item = 0;
    double feedback = 0.0;

    friend bool operator==(const InteractionRecord&, const InteractionRecord&) = default;
};

// Immutable table of user-item feedback with dense 0-based ids. The original
// ids seen at ingest are kept so outputs can be mapped back.
class InteractionTable {
public:
    InteractionTable() = default;

    InteractionTable(std::vector<InteractionRecord> records, FeedbackKind kind, int n_users, int n_items,
                     double rating_min = 0.0, double rating_max = 1.0, Partition partition = Partition::all,
                     std::vector<std::int64_t> user_ids = {}, std::vector<std::int64_t> item_ids = {})
        : records_(std::move(records)),
          kind_(kind),
          n_users_(n_users),
          n_items_(n_items),
          rating_min_(kind == FeedbackKind::implicit ? 0.0 : rating_min),
          rating_max_(kind == FeedbackKind::implicit ? 1.0 : rating_max),
          partition_(partition),
          user_ids_(std::move(user_ids)),
          item_ids_(std::move(item_ids)) {
        validate();
        by_user_.assign(static_cast<std::size_t>(n_users_), {});
        for (std::size_t k = 0; k < records_.size(); ++k) {
            by_user_[static_cast<std::size_t>(records_[k].user)].push_back(k);
        }
    }

    const std::vector<InteractionRecord>& records() const noexcept { return records_; }
    const InteractionRecord& operator[](std::size_t k) const { return records_[k]; }
    std::size_t size() const noexcept { return records_.size(); }
    bool empty() const noexcept { return records_.empty(); }
    FeedbackKind kind() const noexcept { return kind_; }
    int n_users() const noexcept { return n_users_; }
    int n_items() const noexcept { return n_items_; }
    double rating_min() const noexcept { return rating_min_; }
    double rating_max() const noexcept { return rating_max_; }
    Partition partition() const noexcept { return partition_; }

    // Record indices per dense user id.
    const std::vector<std::vector<std::size_t>>& by_user() const noexcept { return by_user_; }

    std::int64_t original_user_id(int dense) const {
        return user_ids_.empty() ? dense : user_ids_.at(static_cast<std::size_t>(dense));
    }
    std::int64_t original_item_id(int dense) const {
        return item_ids_.empty() ? dense : item_ids_.at(static_cast<std::size_t>(dense));
    }
    const std::vector<std::int64_t>& user_ids() const noexcept { return user_ids_; }
    const std::vector<std::int64_t>& item_ids() const noexcept { return item_ids_; }

    // Sub-table over the given record indices, sharing id spaces and metadata.
    InteractionTable subset(std::span<const std::size_t> indices, Partition tag) const {
        std::vector<InteractionRecord> out;
        out.reserve(indices.size());
        for (std::size_t k : indices) {
            out.push_back(records_.at(k));
        }
        return InteractionTable(std::move(out), kind_, n_users_, n_items_, rating_min_, rating_max_, tag, user_ids_,
                                item_ids_);
    }

private:
    void validate() const {
        if (n_users_ < 0 || n_items_ < 0) {
            throw ValidationError("negative table dimensions");
        }
        if (!user_ids_.empty() && user_ids_.size() != static_cast<std::size_t>(n_users_)) {
            throw ValidationError("user id map size does not match n_users");
        }
        if (!item_ids_.empty() && item_ids_.size() != static_cast<std::size_t>(n_items_)) {
            throw ValidationError("item id map size does not match n_items");
        }
        std::vector<std::uint64_t> keys;
        keys.reserve(records_.size());
        for (const auto& r : records_) {
            if (r.user < 0 || r.user >= n_users_ || r.item < 0 || r.item >= n_items_) {
                throw ValidationError("record id out of range");
            }
            if (kind_ == FeedbackKind::implicit) {
                if (r.feedback != 0.0 && r.feedback != 1.0) {
                    throw ValidationError("implicit feedback must be 0 or 1");
                }
            } else if (!(r.feedback >= rating_min_ && r.feedback <= rating_max_)) {
                throw ValidationError("rating outside declared range");
            }
            keys.push_back((static_cast<std::uint64_t>(r.user) << 32) | static_cast<std::uint32_t>(r.item));
        }
        std::sort(keys.begin(), keys.end());
        if (std::adjacent_find(keys.begin(), keys.end()) != keys.end()) {
            throw ValidationError("duplicate (user, item) pair");
        }
    }

    std::vector<InteractionRecord> records_;
    FeedbackKind kind_ = FeedbackKind::implicit;
    int n_users_ = 0;
    int n_items_ = 0;
    double rating_min_ = 0.0;
    double rating_max_ = 1.0;
    Partition partition_ = Partition::all;
    std::vector<std::int64_t> user_ids_;
    std::vector<std::int64_t> item_ids_;
    std::vector<std::vector<std::size_t>> by_user_;
};

// ---------------------------------------------------------------------------
// CSV ingestion

// Column names are looked up in the header row when one is present; an empty
// name means "use the positional column" (user, item, feedback = 0, 1, 2).
struct CsvSchema {
    std::string user_column;
    std::string item_column;
    std::string feedback_column;
    std::string delimiter = ",";  // may be multi-character, e.g. "::" for MovieLens .dat files
    double rating_min = 1.0;
    double rating_max = 5.0;
};

namespace detail {

inline std::vector<std::string> split_fields(std::string_view line, std::string_view delimiter) {
    std::vector<std::string> out;
    std::size_t start = 0;
    while (true) {
        const std::size_t pos = line.find(delimiter, start);
        std::string field(line.substr(start, pos == std::string_view::npos ? std::string_view::npos : pos - start));
        const auto first = field.find_first_not_of(" \t");
        const auto last = field.find_last_not_of(" \t");
        out.push_back(first == std::string::npos ? std::string() : field.substr(first, last - first + 1));
        if (pos == std::string_view::npos) {
            break;
        }
        start = pos + delimiter.size();
    }
    return out;
}

inline std::optional<double> parse_number(const std::string& s) {
    if (s.empty()) {
        return std::nullopt;
    }
    char* end = nullptr;
    const double v = std::strtod(s.c_str(), &end);
    if (end != s.c_str() + s.size() || !std::isfinite(v)) {
        return std::nullopt;
    }
    return v;
}

inline std::optional<std::int64_t> parse_id(const std::string& s) {
    if (s.empty()) {
        return std::nullopt;
    }
    char* end = nullptr;
    const long long v = std::strtoll(s.c_str(), &end, 10);
    if (end != s.c_str() + s.size()) {
        return std::nullopt;
    }
    return static_cast<std::int64_t>(v);
}

inline std::size_t column_index(const std::vector<std::string>& header, const std::string& name, std::size_t fallback) {
    if (name.empty()) {
        return fallback;
    }
    const auto it = std::find(header.begin(), header.end(), name);
    if (it == header.end()) {
        throw ParseError("header has no column named '" + name + "'");
    }
    return static_cast<std::size_t>(it - header.begin());
}

struct RawRow {
    std::int64_t user;
    std::int64_t item;
    double feedback;
    std::size_t line;
};

inline InteractionTable parse_feedback_csv(std::istream& in, const CsvSchema& schema, FeedbackKind kind) {
    if (schema.delimiter.empty()) throw ConfigError("csv: empty delimiter");
    std::vector<RawRow> rows;
    std::string line;
    std::size_t line_no = 0;
    bool first_row = true;
    std::size_t cu = 0, ci = 1, cf = 2;
    while (std::getline(in, line)) {
        ++line_no;
        if (!line.empty() && line.back() == '\r') {
            line.pop_back();
        }
        if (line.find_first_not_of(" \t") == std::string::npos) {
            continue;
        }
        auto fields = split_fields(line, schema.delimiter);
        if (first_row) {
            first_row = false;
            if (!parse_number(fields[0])) {
                cu = column_index(fields, schema.user_column, 0);
                ci = column_index(fields, schema.item_column, 1);
                cf = column_index(fields, schema.feedback_column, 2);
                continue;
            }
        }
        const std::size_t need = std::max({cu, ci, cf}) + 1;
        if (fields.size() < need) {
            throw ParseError("line " + std::to_string(line_no) + ": expected at least " + std::to_string(need) +
                             " fields");
        }
        const auto u = parse_id(fields[cu]);
        const auto i = parse_id(fields[ci]);
        const auto y = parse_number(fields[cf]);
        if (!u || !i || !y) {
            throw ParseError("line " + std::to_string(line_no) + ": malformed row '" + line + "'");
        }
        if (kind == FeedbackKind::implicit) {
            if (*y != 0.0 && *y != 1.0) {
                throw ValidationError("line " + std::to_string(line_no) + ": implicit label must be 0 or 1, got " +
                                      fields[cf]);
            }
        } else if (*y < schema.rating_min || *y > schema.rating_max) {
            throw ValidationError("line " + std::to_string(line_no) + ": rating " + fields[cf] + " outside [" +
                                  std::to_string(schema.rating_min) + ", " + std::to_string(schema.rating_max) + "]");
        }
        rows.push_back({*u, *i, *y, line_no});
    }
    if (rows.empty()) {
        throw ParseError("no records");
    }

    // Dense ids in ascending order of original id, so reloading a written
    // table reproduces the same dense ids.
    std::map<std::int64_t, std::int32_t> umap, imap;
    for (const auto& r : rows) {
        umap.emplace(r.user, 0);
        imap.emplace(r.item, 0);
    }
    std::vector<std::int64_t> user_ids, item_ids;
    for (auto& [orig, dense] : umap) {
        dense = static_cast<std::int32_t>(user_ids.size());
        user_ids.push_back(orig);
    }
    for (auto& [orig, dense] : imap) {
        dense = static_cast<std::int32_t>(item_ids.size());
        item_ids.push_back(orig);
    }
    std::vector<InteractionRecord> records;
    records.reserve(rows.size());
    std::map<std::pair<std::int32_t, std::int32_t>, std::size_t> seen;
    for (const auto& r : rows) {
        InteractionRecord rec{umap[r.user], imap[r.item], r.feedback};
        if (!seen.emplace(std::make_pair(rec.user, rec.item), r.line).second) {
            throw ValidationError("line " + std::to_string(r.line) + ": duplicate (user, item) pair");
        }
        records.push_back(rec);
    }
    const auto n_users = static_cast<int>(user_ids.size());
    const auto n_items = static_cast<int>(item_ids.size());
    return InteractionTable(std::move(records), kind, n_users, n_items, schema.rating_min, schema.rating_max,
                            Partition::all, std::move(user_ids), std::move(item_ids));
}

inline std::ifstream open_input(const std::string& path) {
    std::ifstream in(path);
    if (!in) {
        throw ParseError("cannot open '" + path + "'");
    }
    return in;
}

}  // namespace detail

inline InteractionTable parse_explicit_csv(std::istream& in, const CsvSchema& schema = {}) {
    return detail::parse_feedback_csv(in, schema, FeedbackKind::explicit_rating);
}

inline InteractionTable parse_implicit_csv(std::istream& in, const CsvSchema& schema = {}) {
    return detail::parse_feedback_csv(in, schema, FeedbackKind::implicit);
}

inline InteractionTable load_explicit_csv(const std::string& path, const CsvSchema& schema = {}) {
    auto in = detail::open_input(path);
    return parse_explicit_csv(in, schema);
}

inline InteractionTable load_implicit_csv(const std::string& path, const CsvSchema& schema = {}) {
    auto in = detail::open_input(path);
    return parse_implicit_csv(in, schema);
}

// Writes records with their original ids; the output reloads to an identical table.
inline void write_table_csv(const InteractionTable& table, std::ostream& out) {
    out << (table.kind() == FeedbackKind::implicit ? "user,item,label\n" : "user,item,rating\n");
    char buf[64];
    for (const auto& r : table.records()) {
        std::snprintf(buf, sizeof buf, "%.17g", r.feedback);
        out << table.original_user_id(r.user) << ',' << table.original_item_id(r.item) << ',' << buf << '\n';
    }
}

// Id-map sidecar: one row per dense id on each axis.
inline void write_id_map(const InteractionTable& table, std::ostream& out) {
    out << "axis,dense_id,original_id\n";
    for (int u = 0; u < table.n_users(); ++u) {
        out << "user," << u << ',' << table.original_user_id(u) << '\n';
    }
    for (int i = 0; i < table.n_items(); ++i) {
        out << "item," << i << ',' << table.original_item_id(i) << '\n';
    }
}

// ---------------------------------------------------------------------------
// Splitting

struct SplitAssignment {
    std::uint64_t seed = 0;
    std::vector<std::size_t> train;
    std::vector<std::size_t> validation;
    std::vector<std::size_t> test;
};

inline constexpr double kTrainFraction = 0.6;
inline constexpr double kValidationFraction = 0.2;
inline constexpr std::size_t kMinRecordsForUserSplit = 5;

namespace detail {

inline void split_group(std::vector<std::size_t> idx, std::mt19937_64& rng, SplitAssignment& out) {
    std::shuffle(idx.begin(), idx.end(), rng);
    const std::size_t n = idx.size();
    const auto share = static_cast<std::size_t>(std::llround(kValidationFraction * static_cast<double>(n)));
    const std::size_t n_val = share;
    const std::size_t n_test = share;
    const std::size_t n_train = n - n_val - n_test;
    out.train.insert(out.train.end(), idx.begin(), idx.begin() + static_cast<std::ptrdiff_t>(n_train));
    out.validation.insert(out.validation.end(), idx.begin() + static_cast<std::ptrdiff_t>(n_train),
                          idx.begin() + static_cast<std::ptrdiff_t>(n_train + n_val));
    out.test.insert(out.test.end(), idx.begin() + static_cast<std::ptrdiff_t>(n_train + n_val), idx.end());
}

}  // namespace detail

// Per-user stratified 60/20/20 split. Users with fewer than five records are
// pooled and split together.
inline SplitAssignment split(const InteractionTable& table, std::uint64_t seed) {
    SplitAssignment out;
    out.seed = seed;
    std::mt19937_64 rng(seed);
    std::vector<std::size_t> pooled;
    for (const auto& idx : table.by_user()) {
        if (idx.size() >= kMinRecordsForUserSplit) {
            detail::split_group(idx, rng, out);
        } else {
            pooled.insert(pooled.end(), idx.begin(), idx.end());
        }
    }
    if (!pooled.empty()) {
        detail::split_group(std::move(pooled), rng, out);
    }
    std::sort(out.train.begin(), out.train.end());
    std::sort(out.validation.begin(), out.validation.end());
    std::sort(out.test.begin(), out.test.end());
    return out;
}

struct SplitTables {
    InteractionTable train;
    InteractionTable validation;
    InteractionTable test;
};

inline SplitTables materialize(const InteractionTable& table, const SplitAssignment& split) {
    return {table.subset(split.train, Partition::train), table.subset(split.validation, Partition::validation),
            table.subset(split.test, Partition::test)};
}

// ---------------------------------------------------------------------------
// Synthetic data

struct RankDistortion {
    enum class Kind { identity, popularity, top_rank_offset };
    Kind kind = Kind::identity;
    // popularity: score = logit(p) + c1 * pct + c2 * pct^2, pct = item popularity percentile.
    double c1 = 0.0;
    double c2 = 0.0;
    // top_rank_offset: each user's top_k items (by undistorted score) get +offset in probability.
    int top_k = 5;
    double offset = 0.15;
};

struct SyntheticSpec {
    int n_users = 1000;
    int n_items = 400;
    int latent_dim = 8;
    double factor_scale = 1.0;     // standard deviation of the user-item interaction term
    double user_bias_scale = 0.5;
    double item_bias_mean = -2.0;
    double item_bias_scale = 1.0;
    double noise_scale = 0.0;      // per-pair Gaussian noise added to the scorer's logit
    RankDistortion distortion;
    std::uint64_t seed = 0;
};

// True probabilities and the distorted scorer output for every (user, item).
// Only oracle tests and the benchmark scorer read this; fitting code never does.
struct TruthTable {
    int n_users = 0;
    int n_items = 0;
    std::vector<double> probability;
    std::vector<double> score;

    double p(int user, int item) const {
        return probability[static_cast<std::size_t>(user) * static_cast<std::size_t>(n_items) +
                           static_cast<std::size_t>(item)];
    }
    double s(int user, int item) const {
        return score[static_cast<std::size_t>(user) * static_cast<std::size_t>(n_items) +
                     static_cast<std::size_t>(item)];
    }
};

struct SyntheticData {
    InteractionTable table;
    TruthTable truth;
};

// Item popularity percentile in [0, 1] by mean true probability (0 = least popular).
inline std::vector<double> popularity_percentiles(const TruthTable& truth) {
    const auto n_items = static_cast<std::size_t>(truth.n_items);
    std::vector<double> mean(n_items, 0.0);
    for (int u = 0; u < truth.n_users; ++u) {
        for (int i = 0; i < truth.n_items; ++i) {
            mean[static_cast<std::size_t>(i)] += truth.p(u, i);
        }
    }
    std::vector<std::size_t> order(n_items);
    std::iota(order.begin(), order.end(), 0);
    std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return mean[a] < mean[b]; });
    std::vector<double> pct(n_items, 0.0);
    if (n_items > 1) {
        for (std::size_t r = 0; r < n_items; ++r) {
            pct[order[r]] = static_cast<double>(r) / static_cast<double>(n_items - 1);
        }
    }
    return pct;
}

inline SyntheticData generate_synthetic(const SyntheticSpec& spec) {
    if (spec.latent_dim < 1) {
        throw ConfigError("latent_dim must be >= 1");
    }
    if (spec.n_users < 1 || spec.n_items < 1) {
        throw ConfigError("synthetic data needs at least one user and one item");
    }
    const auto nu = static_cast<std::size_t>(spec.n_users);
    const auto ni = static_cast<std::size_t>(spec.n_items);
    const auto d = static_cast<std::size_t>(spec.latent_dim);

    // Independent streams so changing, say, the noise level leaves labels unchanged.
    std::mt19937_64 factor_rng(spec.seed * 4 + 1);
    std::mt19937_64 noise_rng(spec.seed * 4 + 2);
    std::mt19937_64 label_rng(spec.seed * 4 + 3);
    std::normal_distribution<double> unit(0.0, 1.0);

    const double component_sd = std::sqrt(spec.factor_scale) / std::pow(static_cast<double>(d), 0.25);
    std::vector<double> user_vec(nu * d), item_vec(ni * d), user_bias(nu), item_bias(ni);
    for (auto& v : user_vec) v = component_sd * unit(factor_rng);
    for (auto& v : item_vec) v = component_sd * unit(factor_rng);
    for (auto& v : user_bias) v = spec.user_bias_scale * unit(factor_rng);
    for (auto& v : item_bias) v = spec.item_bias_mean + spec.item_bias_scale * unit(factor_rng);

    TruthTable truth;
    truth.n_users = spec.n_users;
    truth.n_items = spec.n_items;
    truth.probability.resize(nu * ni);
    truth.score.resize(nu * ni);
    for (std::size_t u = 0; u < nu; ++u) {
        for (std::size_t i = 0; i < ni; ++i) {
            double z = user_bias[u] + item_bias[i];
            for (std::size_t k = 0; k < d; ++k) {
                z += user_vec[u * d + k] * item_vec[i * d + k];
            }
            truth.probability[u * ni + i] = sigmoid(z);
            const double noise = spec.noise_scale > 0.0 ? spec.noise_scale * unit(noise_rng) : 0.0;
            truth.score[u * ni + i] = z + noise;
        }
    }

    const auto& dist = spec.distortion;
    if (dist.kind == RankDistortion::Kind::popularity) {
        const auto pct = popularity_percentiles(truth);
        for (std::size_t u = 0; u < nu; ++u) {
            for (std::size_t i = 0; i < ni; ++i) {
                truth.score[u * ni + i] += dist.c1 * pct[i] + dist.c2 * pct[i] * pct[i];
            }
        }
    } else if (dist.kind == RankDistortion::Kind::top_rank_offset) {
        std::vector<std::size_t> order(ni);
        for (std::size_t u = 0; u < nu; ++u) {
            std::iota(order.begin(), order.end(), 0);
            const double* row = &truth.score[u * ni];
            std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return row[a] > row[b]; });
            const std::size_t k = std::min(ni, static_cast<std::size_t>(std::max(dist.top_k, 0)));
            for (std::size_t r = 0; r < k; ++r) {
                double& s = truth.score[u * ni + order[r]];
                s = logit(clamp(sigmoid(s) + dist.offset, 1e-9, 1.0 - 1e-9));
            }
        }
    }

    std::vector<InteractionRecord> records;
    records.reserve(nu * ni);
    std::uniform_real_distribution<double> uniform(0.0, 1.0);
    for (std::size_t u = 0; u < nu; ++u) {
        for (std::size_t i = 0; i < ni; ++i) {
            const double y = uniform(label_rng) < truth.probability[u * ni + i] ? 1.0 : 0.0;
            records.push_back({static_cast<std::int32_t>(u), static_cast<std::int32_t>(i), y});
        }
    }
    return {InteractionTable(std::move(records), FeedbackKind::implicit, spec.n_users, spec.n_items), std::move(truth)};
}

}  // namespace topncal
