#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <iostream>
#include <limits>
#include <stdexcept>
#include <string>

namespace topncal {

// Error hierarchy. Every failure the library reports derives from Error so
// callers that isolate failures per experiment cell can catch one type.
class Error : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

class ConfigError : public Error {
public:
    using Error::Error;
};

class ParseError : public Error {
public:
    using Error::Error;
};

class ValidationError : public Error {
public:
    using Error::Error;
};

class FitError : public Error {
public:
    using Error::Error;
};

class TrainingError : public Error {
public:
    using Error::Error;
};

// Raised when a test-partition record reaches a fitting routine.
class LeakageError : public Error {
public:
    using Error::Error;
};

// Codomain of a recommender's raw scores.
enum class ScoreRange { bounded01, unbounded, rating_scale };

inline const char* to_string(ScoreRange r) {
    switch (r) {
        case ScoreRange::bounded01: return "bounded01";
        case ScoreRange::unbounded: return "unbounded";
        case ScoreRange::rating_scale: return "rating_scale";
    }
    return "?";
}

inline ScoreRange parse_score_range(const std::string& s) {
    if (s == "bounded01") return ScoreRange::bounded01;
    if (s == "unbounded") return ScoreRange::unbounded;
    if (s == "rating_scale") return ScoreRange::rating_scale;
    throw ConfigError("unknown score range '" + s + "'");
}

inline double sigmoid(double z) noexcept {
    if (z >= 0.0) {
        return 1.0 / (1.0 + std::exp(-z));
    }
    const double e = std::exp(z);
    return e / (1.0 + e);
}

inline double logit(double p) noexcept { return std::log(p) - std::log1p(-p); }

// log(1 + exp(z)) without overflow.
inline double softplus(double z) noexcept {
    if (z > 0.0) {
        return z + std::log1p(std::exp(-z));
    }
    return std::log1p(std::exp(z));
}

inline double clamp(double v, double lo, double hi) noexcept { return std::min(std::max(v, lo), hi); }

// Warnings go to stderr unless silenced (tests and the CLI's quiet mode).
inline bool& warnings_enabled() {
    static bool enabled = true;
    return enabled;
}

inline void warn(const std::string& message) {
    if (warnings_enabled()) {
        std::cerr << "warning: " << message << '\n';
    }
}

}  // namespace topncal
