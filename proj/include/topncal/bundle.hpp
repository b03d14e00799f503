#pragma once

// Model bundles: versioned JSON documents holding fitted recommenders,
// calibrators and strategies. Doubles are written in shortest round-trip form,
// so load(save(x)) reproduces x exactly.
//
//   {"format": "topncal-bundle", "version": 1,
//    "recommender": {...}, "strategies": [{"name": ..., "strategy": {...}}, ...]}

#include <fstream>
#include <string>
#include <type_traits>

#include "json.hpp"
#include "topncal/calibrators.hpp"
#include "topncal/recommenders.hpp"
#include "topncal/strategy.hpp"

namespace topncal {

using json = nlohmann::json;

inline constexpr const char* kBundleFormat = "topncal-bundle";
inline constexpr int kBundleVersion = 1;

// Recommenders

inline void to_json(json& j, const RecommenderModel& m) {
    j = json{{"kind", to_string(m.kind)},
             {"score_range", to_string(m.score_range)},
             {"n_users", m.n_users},
             {"n_items", m.n_items},
             {"rating_min", m.rating_min},
             {"rating_max", m.rating_max}};
    if (const auto* k = std::get_if<KnnState>(&m.state)) {
        json devs = json::array();
        for (const auto& user : k->user_deviations) {
            json row = json::array();
            for (const auto& [item, dev] : user) row.push_back({item, dev});
            devs.push_back(std::move(row));
        }
        j["knn"] = {{"k", k->k},
                    {"n_items", k->n_items},
                    {"user_mean", k->user_mean},
                    {"similarity", k->similarity},
                    {"user_deviations", std::move(devs)}};
    } else if (const auto* f = std::get_if<FactorState>(&m.state)) {
        j["factors"] = {{"factors", f->factors},          {"global_mean", f->global_mean},
                        {"user_bias", f->user_bias},      {"item_bias", f->item_bias},
                        {"user_factors", f->user_factors}, {"item_factors", f->item_factors}};
    } else if (const auto* t = std::get_if<TableState>(&m.state)) {
        j["table"] = {{"scores", t->scores}};
    }
}

inline void from_json(const json& j, RecommenderModel& m) {
    m.kind = parse_recommender_kind(j.at("kind").get<std::string>());
    m.score_range = parse_score_range(j.at("score_range").get<std::string>());
    m.n_users = j.at("n_users").get<int>();
    m.n_items = j.at("n_items").get<int>();
    m.rating_min = j.at("rating_min").get<double>();
    m.rating_max = j.at("rating_max").get<double>();
    if (j.contains("knn")) {
        const auto& k = j["knn"];
        KnnState st;
        st.k = k.at("k").get<int>();
        st.n_items = k.at("n_items").get<int>();
        st.user_mean = k.at("user_mean").get<std::vector<double>>();
        st.similarity = k.at("similarity").get<std::vector<double>>();
        for (const auto& row : k.at("user_deviations")) {
            std::vector<std::pair<std::int32_t, double>> devs;
            for (const auto& e : row) devs.emplace_back(e.at(0).get<std::int32_t>(), e.at(1).get<double>());
            st.user_deviations.push_back(std::move(devs));
        }
        m.state = std::move(st);
    } else if (j.contains("factors")) {
        const auto& f = j["factors"];
        FactorState st;
        st.factors = f.at("factors").get<int>();
        st.global_mean = f.at("global_mean").get<double>();
        st.user_bias = f.at("user_bias").get<std::vector<double>>();
        st.item_bias = f.at("item_bias").get<std::vector<double>>();
        st.user_factors = f.at("user_factors").get<std::vector<double>>();
        st.item_factors = f.at("item_factors").get<std::vector<double>>();
        m.state = std::move(st);
    } else if (j.contains("table")) {
        m.state = TableState{j["table"].at("scores").get<std::vector<double>>()};
    } else {
        throw ParseError("bundle: recommender has no parameter block");
    }
}

// Calibrators

inline void to_json(json& j, const Calibrator& c) {
    j = json{{"kind", to_string(c.kind)},
             {"transform", to_string(c.transform)},
             {"output_min", c.output_min},
             {"output_max", c.output_max}};
    switch (c.kind) {
        case CalibratorKind::histogram:
            j["edges"] = c.edges;
            j["values"] = c.values;
            break;
        case CalibratorKind::isotonic:
            j["knots"] = c.knots;
            j["values"] = c.values;
            break;
        default:
            j["coef"] = c.coef;
            // Infinite bounds are written as null.
            j["domain_min"] = std::isfinite(c.domain_min) ? json(c.domain_min) : json(nullptr);
            j["domain_max"] = std::isfinite(c.domain_max) ? json(c.domain_max) : json(nullptr);
            j["shift"] = c.shift;
    }
}

inline void from_json(const json& j, Calibrator& c) {
    c = Calibrator{};
    c.kind = parse_calibrator_kind(j.at("kind").get<std::string>());
    c.transform = parse_input_transform(j.at("transform").get<std::string>());
    c.output_min = j.at("output_min").get<double>();
    c.output_max = j.at("output_max").get<double>();
    switch (c.kind) {
        case CalibratorKind::histogram:
            c.edges = j.at("edges").get<std::vector<double>>();
            c.values = j.at("values").get<std::vector<double>>();
            break;
        case CalibratorKind::isotonic:
            c.knots = j.at("knots").get<std::vector<double>>();
            c.values = j.at("values").get<std::vector<double>>();
            break;
        default: {
            c.coef = j.at("coef").get<std::vector<double>>();
            const auto& lo = j.at("domain_min");
            const auto& hi = j.at("domain_max");
            c.domain_min = lo.is_null() ? -std::numeric_limits<double>::infinity() : lo.get<double>();
            c.domain_max = hi.is_null() ? std::numeric_limits<double>::infinity() : hi.get<double>();
            c.shift = j.at("shift").get<double>();
        }
    }
}

// Strategies

inline void to_json(json& j, const FittedStrategy& s) {
    j = json{{"strategy", to_string(s.kind())}};
    std::visit(
        [&](const auto& m) {
            using T = std::decay_t<decltype(m)>;
            if constexpr (std::is_same_v<T, VanillaStrategy>) {
                j["score_range"] = to_string(m.range);
            } else if constexpr (std::is_same_v<T, Calibrator>) {
                j["calibrator"] = m;
            } else if constexpr (std::is_same_v<T, VadAdjuster>) {
                j["calibrator"] = m.base;
                j["delta"] = m.delta;
                j["ensemble_size"] = m.ensemble_size;
                j["lambda"] = m.lambda;
            } else {
                j["n"] = m.scheme.n;
                j["n_groups"] = m.scheme.n_groups;
                j["alpha"] = m.alpha;
                j["calibrator_kind"] = to_string(m.kind);
                j["calibrators"] = m.calibrators;
            }
        },
        s.model);
}

inline void from_json(const json& j, FittedStrategy& s) {
    switch (parse_strategy_kind(j.at("strategy").get<std::string>())) {
        case StrategyKind::vanilla:
            s.model = VanillaStrategy{parse_score_range(j.at("score_range").get<std::string>())};
            break;
        case StrategyKind::original: s.model = j.at("calibrator").get<Calibrator>(); break;
        case StrategyKind::vad: {
            VadAdjuster v;
            v.base = j.at("calibrator").get<Calibrator>();
            v.delta = j.at("delta").get<std::vector<double>>();
            v.ensemble_size = j.at("ensemble_size").get<int>();
            v.lambda = j.at("lambda").get<double>();
            s.model = std::move(v);
            break;
        }
        case StrategyKind::tnf: {
            TnfCalibrator t;
            t.scheme = make_group_scheme(j.at("n").get<int>(), j.at("n_groups").get<int>());
            t.alpha = j.at("alpha").get<double>();
            t.kind = parse_calibrator_kind(j.at("calibrator_kind").get<std::string>());
            t.calibrators = j.at("calibrators").get<std::vector<Calibrator>>();
            if (t.calibrators.size() != t.scheme.boundaries.size()) {
                throw ParseError("bundle: tnf calibrator count does not match its group scheme");
            }
            s.model = std::move(t);
            break;
        }
    }
}

inline json make_bundle() { return json{{"format", kBundleFormat}, {"version", kBundleVersion}}; }

inline void check_bundle(const json& j) {
    if (!j.is_object() || j.value("format", "") != kBundleFormat) throw ParseError("not a topncal bundle");
    if (j.value("version", 0) != kBundleVersion) {
        throw ParseError("unsupported bundle version " + std::to_string(j.value("version", 0)));
    }
}

inline void save_bundle(const json& bundle, const std::string& path) {
    std::ofstream out(path);
    if (!out) throw Error("cannot write '" + path + "'");
    out << bundle.dump(1) << '\n';
}

inline json load_bundle(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw ParseError("cannot open '" + path + "'");
    json j;
    try {
        in >> j;
    } catch (const json::exception& e) {
        throw ParseError(std::string("bundle: ") + e.what());
    }
    check_bundle(j);
    return j;
}

}  // namespace topncal
