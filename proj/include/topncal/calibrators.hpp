#pragma once

// The six calibration models g: score -> calibrated prediction. Every fitter
// accepts per-sample weights, which is what rank-weighted training needs.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <limits>
#include <numeric>
#include <span>
#include <string>
#include <vector>

#include "topncal/common.hpp"
#include "topncal/logistic.hpp"

namespace topncal {

// Label, raw score, rank and training weight of one user-item pair. Rank 0
// means "no rank attached".
struct CalibrationSample {
    double label = 0.0;
    double score = 0.0;
    int rank = 0;
    double weight = 1.0;
    std::int32_t user = -1;
    std::int32_t item = -1;
};

enum class CalibratorKind { histogram, isotonic, platt, beta, gaussian, gamma };

inline const char* to_string(CalibratorKind k) {
    switch (k) {
        case CalibratorKind::histogram: return "histogram";
        case CalibratorKind::isotonic: return "isotonic";
        case CalibratorKind::platt: return "platt";
        case CalibratorKind::beta: return "beta";
        case CalibratorKind::gaussian: return "gaussian";
        case CalibratorKind::gamma: return "gamma";
    }
    return "?";
}

inline CalibratorKind parse_calibrator_kind(const std::string& s) {
    if (s == "histogram") return CalibratorKind::histogram;
    if (s == "isotonic") return CalibratorKind::isotonic;
    if (s == "platt") return CalibratorKind::platt;
    if (s == "beta") return CalibratorKind::beta;
    if (s == "gaussian") return CalibratorKind::gaussian;
    if (s == "gamma") return CalibratorKind::gamma;
    throw ConfigError("unknown calibrator '" + s + "'");
}

inline bool is_parametric(CalibratorKind k) {
    return k == CalibratorKind::platt || k == CalibratorKind::beta || k == CalibratorKind::gaussian ||
           k == CalibratorKind::gamma;
}

// Map applied to the raw score before the calibration model sees it.
enum class InputTransform { identity, logit, sigmoid };

inline const char* to_string(InputTransform t) {
    switch (t) {
        case InputTransform::identity: return "identity";
        case InputTransform::logit: return "logit";
        case InputTransform::sigmoid: return "sigmoid";
    }
    return "?";
}

inline InputTransform parse_input_transform(const std::string& s) {
    if (s == "identity") return InputTransform::identity;
    if (s == "logit") return InputTransform::logit;
    if (s == "sigmoid") return InputTransform::sigmoid;
    throw ConfigError("unknown input transform '" + s + "'");
}

inline constexpr double kScoreEpsilon = 1e-6;

inline double apply_transform(InputTransform t, double s) {
    switch (t) {
        case InputTransform::identity: return s;
        case InputTransform::logit: return logit(clamp(s, kScoreEpsilon, 1.0 - kScoreEpsilon));
        case InputTransform::sigmoid: return sigmoid(s);
    }
    return s;
}

// Input transform a calibrator kind needs for a recommender's score codomain:
// beta expects probabilities, gaussian/gamma expect unbounded scores.
inline InputTransform default_transform(CalibratorKind kind, ScoreRange range) {
    if (range == ScoreRange::rating_scale && is_parametric(kind)) {
        throw ConfigError(std::string(to_string(kind)) + " calibration is only defined for probability tasks");
    }
    switch (kind) {
        case CalibratorKind::beta: return range == ScoreRange::unbounded ? InputTransform::sigmoid : InputTransform::identity;
        case CalibratorKind::gaussian:
        case CalibratorKind::gamma: return range == ScoreRange::bounded01 ? InputTransform::logit : InputTransform::identity;
        default: return InputTransform::identity;
    }
}

struct CalibratorOptions {
    int histogram_bins = 15;
    InputTransform transform = InputTransform::identity;
    // Output clamp: [0, 1] for probabilities, the rating range for rating tasks.
    double output_min = 0.0;
    double output_max = 1.0;
    // Gaussian/gamma: pin the non-linear coefficient to zero (nested Platt model).
    bool linear_only = false;
    SolverOptions solver;
};

// A fitted monotone mapping. Parametric coefficients are stored in the
// parameterisation of the (transformed) score:
//   platt    (a, b):    sigma(a s + b)
//   beta     (a, b, c): sigma(a ln s - b ln(1 - s) + c)
//   gaussian (a, b, c): sigma(a s^2 + b s + c)
//   gamma    (a, b, c): sigma(a ln x + b x + c), x = s - shift + eps
struct Calibrator {
    CalibratorKind kind = CalibratorKind::isotonic;
    InputTransform transform = InputTransform::identity;
    double output_min = 0.0;
    double output_max = 1.0;

    std::vector<double> edges;   // histogram: n_bins - 1 interior edges
    std::vector<double> values;  // histogram: per-bin value; isotonic: breakpoint values
    std::vector<double> knots;   // isotonic: breakpoint scores (strictly increasing)
    std::vector<double> coef;    // parametric coefficients
    double domain_min = -std::numeric_limits<double>::infinity();
    double domain_max = std::numeric_limits<double>::infinity();
    double shift = 0.0;          // gamma

    double operator()(double raw) const {
        const double s = clamp(apply_transform(transform, raw), domain_min, domain_max);
        return clamp(evaluate(s), output_min, output_max);
    }

    // Model value on an already-transformed, in-domain score.
    double evaluate(double s) const {
        switch (kind) {
            case CalibratorKind::histogram: {
                const auto bin = static_cast<std::size_t>(std::upper_bound(edges.begin(), edges.end(), s) - edges.begin());
                return values[bin];
            }
            case CalibratorKind::isotonic: {
                if (s <= knots.front()) return values.front();
                if (s >= knots.back()) return values.back();
                const auto hi = static_cast<std::size_t>(std::upper_bound(knots.begin(), knots.end(), s) - knots.begin());
                const std::size_t lo = hi - 1;
                if (s == knots[lo]) return values[lo];
                const double t = (s - knots[lo]) / (knots[hi] - knots[lo]);
                return values[lo] + t * (values[hi] - values[lo]);
            }
            case CalibratorKind::platt: return sigmoid(coef[0] * s + coef[1]);
            case CalibratorKind::beta: return sigmoid(coef[0] * std::log(s) - coef[1] * std::log1p(-s) + coef[2]);
            case CalibratorKind::gaussian: return sigmoid(coef[0] * s * s + coef[1] * s + coef[2]);
            case CalibratorKind::gamma: {
                const double x = s - shift + kScoreEpsilon;
                return sigmoid(coef[0] * std::log(x) + coef[1] * x + coef[2]);
            }
        }
        return 0.0;
    }
};

inline double calibrate(const Calibrator& cal, double score) { return cal(score); }

// Uncalibrated prediction: sigmoid for unbounded scores, identity otherwise.
inline double vanilla(ScoreRange range, double score) {
    return range == ScoreRange::unbounded ? sigmoid(score) : score;
}

namespace detail {

inline std::vector<double> transformed_scores(std::span<const CalibrationSample> samples, InputTransform t) {
    std::vector<double> s(samples.size());
    for (std::size_t k = 0; k < samples.size(); ++k) s[k] = apply_transform(t, samples[k].score);
    return s;
}

inline void check_weights(std::span<const CalibrationSample> samples) {
    for (const auto& x : samples) {
        if (!(x.weight > 0.0) || !std::isfinite(x.weight)) throw FitError("sample weights must be positive");
    }
}

// Sample order by (score, label, input index).
inline std::vector<std::size_t> score_order(const std::vector<double>& s, std::span<const CalibrationSample> samples) {
    std::vector<std::size_t> order(s.size());
    std::iota(order.begin(), order.end(), 0);
    std::sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
        if (s[a] != s[b]) return s[a] < s[b];
        if (samples[a].label != samples[b].label) return samples[a].label < samples[b].label;
        return a < b;
    });
    return order;
}

inline Calibrator base_calibrator(CalibratorKind kind, const CalibratorOptions& opt) {
    Calibrator c;
    c.kind = kind;
    c.transform = opt.transform;
    c.output_min = opt.output_min;
    c.output_max = opt.output_max;
    return c;
}

}  // namespace detail

// ---------------------------------------------------------------------------
// Histogram binning

// Equal-count bins by score; each bin predicts its weighted mean label.
inline Calibrator fit_histogram(std::span<const CalibrationSample> samples, const CalibratorOptions& opt = {}) {
    if (samples.empty()) throw FitError("histogram: no samples");
    if (opt.histogram_bins < 1) throw ConfigError("histogram: n_bins must be >= 1");
    detail::check_weights(samples);
    std::size_t n_bins = static_cast<std::size_t>(opt.histogram_bins);
    if (samples.size() < n_bins) {
        warn("histogram: " + std::to_string(samples.size()) + " samples for " + std::to_string(n_bins) +
             " bins; using " + std::to_string(samples.size()) + " bins");
        n_bins = samples.size();
    }
    const auto s = detail::transformed_scores(samples, opt.transform);
    const auto order = detail::score_order(s, samples);

    Calibrator c = detail::base_calibrator(CalibratorKind::histogram, opt);
    const std::size_t n = samples.size();
    const std::size_t base = n / n_bins;
    const std::size_t extra = n % n_bins;
    std::size_t pos = 0;
    for (std::size_t b = 0; b < n_bins; ++b) {
        const std::size_t len = base + (b < extra ? 1 : 0);
        double wy = 0.0, w = 0.0;
        for (std::size_t k = pos; k < pos + len; ++k) {
            const auto& x = samples[order[k]];
            wy += x.weight * x.label;
            w += x.weight;
        }
        c.values.push_back(wy / w);
        if (b > 0) c.edges.push_back(0.5 * (s[order[pos - 1]] + s[order[pos]]));
        pos += len;
    }
    return c;
}

// ---------------------------------------------------------------------------
// Isotonic regression (weighted pool-adjacent-violators)

struct IsotonicBlocks {
    std::vector<double> knots;   // distinct scores, increasing
    std::vector<double> values;  // fitted value per knot, non-decreasing
};

inline IsotonicBlocks pava(std::span<const double> scores, std::span<const double> labels, std::span<const double> weights) {
    const std::size_t n = scores.size();
    std::vector<std::size_t> order(n);
    std::iota(order.begin(), order.end(), 0);
    std::sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
        if (scores[a] != scores[b]) return scores[a] < scores[b];
        return a < b;
    });
    // Tied scores share one fitted value: pool them before PAVA.
    std::vector<double> xs, mean, weight;
    for (std::size_t k = 0; k < n; ++k) {
        const std::size_t i = order[k];
        if (!xs.empty() && xs.back() == scores[i]) {
            const double w = weight.back() + weights[i];
            mean.back() += (labels[i] - mean.back()) * weights[i] / w;
            weight.back() = w;
        } else {
            xs.push_back(scores[i]);
            mean.push_back(labels[i]);
            weight.push_back(weights[i]);
        }
    }
    // Stack of blocks: (value, weight, number of knots).
    struct Block {
        double value;
        double weight;
        std::size_t count;
    };
    std::vector<Block> stack;
    for (std::size_t k = 0; k < xs.size(); ++k) {
        stack.push_back({mean[k], weight[k], 1});
        while (stack.size() > 1 && stack[stack.size() - 2].value > stack.back().value) {
            const Block top = stack.back();
            stack.pop_back();
            Block& prev = stack.back();
            const double w = prev.weight + top.weight;
            prev.value = (prev.value * prev.weight + top.value * top.weight) / w;
            prev.weight = w;
            prev.count += top.count;
        }
    }
    IsotonicBlocks out;
    out.knots = std::move(xs);
    out.values.reserve(out.knots.size());
    for (const auto& b : stack) out.values.insert(out.values.end(), b.count, b.value);
    return out;
}

// Fitted isotonic values for each sample, in input order.
inline std::vector<double> isotonic_fit_values(std::span<const CalibrationSample> samples,
                                               InputTransform transform = InputTransform::identity) {
    const auto s = detail::transformed_scores(samples, transform);
    std::vector<double> y(samples.size()), w(samples.size());
    for (std::size_t k = 0; k < samples.size(); ++k) {
        y[k] = samples[k].label;
        w[k] = samples[k].weight;
    }
    const auto blocks = pava(s, y, w);
    std::vector<double> out(samples.size());
    for (std::size_t k = 0; k < samples.size(); ++k) {
        const auto pos = static_cast<std::size_t>(std::lower_bound(blocks.knots.begin(), blocks.knots.end(), s[k]) -
                                                  blocks.knots.begin());
        out[k] = blocks.values[pos];
    }
    return out;
}

inline Calibrator fit_isotonic(std::span<const CalibrationSample> samples, const CalibratorOptions& opt = {}) {
    if (samples.size() < 2) throw FitError("isotonic: need at least 2 samples");
    detail::check_weights(samples);
    const auto s = detail::transformed_scores(samples, opt.transform);
    std::vector<double> y(samples.size()), w(samples.size());
    for (std::size_t k = 0; k < samples.size(); ++k) {
        y[k] = samples[k].label;
        w[k] = samples[k].weight;
    }
    auto blocks = pava(s, y, w);
    Calibrator c = detail::base_calibrator(CalibratorKind::isotonic, opt);
    c.knots = std::move(blocks.knots);
    c.values = std::move(blocks.values);
    return c;
}

// ---------------------------------------------------------------------------
// Parametric models

// Feature row of each parametric model in its raw parameterisation.
inline std::vector<double> parametric_features(CalibratorKind kind, double s, double shift = 0.0) {
    switch (kind) {
        case CalibratorKind::platt: return {s, 1.0};
        case CalibratorKind::beta: {
            const double p = clamp(s, kScoreEpsilon, 1.0 - kScoreEpsilon);
            return {std::log(p), -std::log1p(-p), 1.0};
        }
        case CalibratorKind::gaussian: return {s * s, s, 1.0};
        case CalibratorKind::gamma: {
            const double x = std::max(s - shift, 0.0) + kScoreEpsilon;
            return {std::log(x), x, 1.0};
        }
        default: throw ConfigError(std::string(to_string(kind)) + " is not a parametric calibrator");
    }
}

// Weighted mean NLL of a parametric calibrator at `coef` over already
// transformed scores, with its analytic gradient.
inline ObjectiveValue parametric_nll(CalibratorKind kind, std::span<const CalibrationSample> samples,
                                     std::span<const double> coef, double shift = 0.0) {
    LogisticProblem p;
    p.dim = coef.size();
    for (const auto& x : samples) {
        const auto f = parametric_features(kind, x.score, shift);
        if (f.size() != p.dim) throw ConfigError("coefficient count does not match the model");
        p.features.insert(p.features.end(), f.begin(), f.end());
        p.labels.push_back(x.label);
        p.weights.push_back(x.weight);
    }
    return logistic_objective(p, coef);
}

namespace detail {

inline void check_binary_labels(std::span<const CalibrationSample> samples, const char* who) {
    double pos = 0.0, neg = 0.0;
    for (const auto& x : samples) {
        if (x.label == 1.0) pos += x.weight;
        else if (x.label == 0.0) neg += x.weight;
        else throw FitError(std::string(who) + ": labels must be binary");
    }
    if (!(pos > 0.0) || !(neg > 0.0)) throw FitError(std::string(who) + ": degenerate labels (single class)");
}

inline LogisticProblem make_problem(CalibratorKind kind, const std::vector<double>& s,
                                    std::span<const CalibrationSample> samples, double shift) {
    LogisticProblem p;
    p.dim = kind == CalibratorKind::platt ? 2 : 3;
    p.features.reserve(s.size() * p.dim);
    for (std::size_t k = 0; k < s.size(); ++k) {
        const auto f = parametric_features(kind, s[k], shift);
        p.features.insert(p.features.end(), f.begin(), f.end());
        p.labels.push_back(samples[k].label);
        p.weights.push_back(samples[k].weight);
    }
    return p;
}

}  // namespace detail

// sigma(a s + b) with a >= 0.
inline Calibrator fit_platt(std::span<const CalibrationSample> samples, const CalibratorOptions& opt = {}) {
    if (samples.empty()) throw FitError("platt: no samples");
    detail::check_weights(samples);
    detail::check_binary_labels(samples, "platt");
    const auto s = detail::transformed_scores(samples, opt.transform);
    auto p = detail::make_problem(CalibratorKind::platt, s, samples, 0.0);
    p.inequalities = {{1.0, 0.0}};
    Calibrator c = detail::base_calibrator(CalibratorKind::platt, opt);
    c.coef = fit_constrained_logistic(p, opt.solver).theta;
    return c;
}

// sigma(a ln s - b ln(1 - s) + c) with a, b >= 0, s clamped into [eps, 1 - eps].
inline Calibrator fit_beta(std::span<const CalibrationSample> samples, const CalibratorOptions& opt = {}) {
    if (samples.empty()) throw FitError("beta: no samples");
    detail::check_weights(samples);
    detail::check_binary_labels(samples, "beta");
    auto s = detail::transformed_scores(samples, opt.transform);
    for (auto& v : s) {
        if (!(v >= 0.0 && v <= 1.0)) throw FitError("beta: scores must lie in [0, 1] after the input transform");
    }
    auto p = detail::make_problem(CalibratorKind::beta, s, samples, 0.0);
    p.inequalities = {{1.0, 0.0, 0.0}, {0.0, 1.0, 0.0}};
    Calibrator c = detail::base_calibrator(CalibratorKind::beta, opt);
    c.domain_min = kScoreEpsilon;
    c.domain_max = 1.0 - kScoreEpsilon;
    c.coef = fit_constrained_logistic(p, opt.solver).theta;
    return c;
}

// sigma(a s^2 + b s + c), monotone on the observed score range
// (2 a s_min + b >= 0 and 2 a s_max + b >= 0); queries clamp to that range.
inline Calibrator fit_gaussian_calibration(std::span<const CalibrationSample> samples, const CalibratorOptions& opt = {}) {
    if (samples.empty()) throw FitError("gaussian: no samples");
    detail::check_weights(samples);
    detail::check_binary_labels(samples, "gaussian");
    const auto s = detail::transformed_scores(samples, opt.transform);
    const auto [lo, hi] = std::minmax_element(s.begin(), s.end());
    auto p = detail::make_problem(CalibratorKind::gaussian, s, samples, 0.0);
    p.inequalities = {{2.0 * *lo, 1.0, 0.0}, {2.0 * *hi, 1.0, 0.0}};
    if (opt.linear_only) p.equalities = {{1.0, 0.0, 0.0}};
    Calibrator c = detail::base_calibrator(CalibratorKind::gaussian, opt);
    c.domain_min = *lo;
    c.domain_max = *hi;
    c.coef = fit_constrained_logistic(p, opt.solver).theta;
    return c;
}

// sigma(a ln x + b x + c), x = s - s_min + eps, with a, b >= 0.
inline Calibrator fit_gamma_calibration(std::span<const CalibrationSample> samples, const CalibratorOptions& opt = {}) {
    if (samples.empty()) throw FitError("gamma: no samples");
    detail::check_weights(samples);
    detail::check_binary_labels(samples, "gamma");
    const auto s = detail::transformed_scores(samples, opt.transform);
    const double shift = *std::min_element(s.begin(), s.end());
    auto p = detail::make_problem(CalibratorKind::gamma, s, samples, shift);
    p.inequalities = {{1.0, 0.0, 0.0}, {0.0, 1.0, 0.0}};
    if (opt.linear_only) p.equalities = {{1.0, 0.0, 0.0}};
    Calibrator c = detail::base_calibrator(CalibratorKind::gamma, opt);
    c.shift = shift;
    c.domain_min = shift;
    c.coef = fit_constrained_logistic(p, opt.solver).theta;
    return c;
}

inline Calibrator fit_calibrator(CalibratorKind kind, std::span<const CalibrationSample> samples,
                                 const CalibratorOptions& opt = {}) {
    switch (kind) {
        case CalibratorKind::histogram: return fit_histogram(samples, opt);
        case CalibratorKind::isotonic: return fit_isotonic(samples, opt);
        case CalibratorKind::platt: return fit_platt(samples, opt);
        case CalibratorKind::beta: return fit_beta(samples, opt);
        case CalibratorKind::gaussian: return fit_gaussian_calibration(samples, opt);
        case CalibratorKind::gamma: return fit_gamma_calibration(samples, opt);
    }
    throw ConfigError("unknown calibrator kind");
}

}  // namespace topncal
