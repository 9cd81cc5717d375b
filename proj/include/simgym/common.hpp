#pragma once

#include <algorithm>
#include <cctype>
#include <cmath>
#include <cstdint>
#include <stdexcept>
#include <string>
#include <vector>

namespace simgym {

// Money is integer minor currency units (cents) everywhere.
using Money = std::int64_t;

enum class ErrorCode {
    EmptyInput,
    ConflictingSessionOwner,
    TooFewRows,
    DegenerateK,
    DimensionMismatch,
    EmptyRange,
    UnknownCluster,
    BackendSchemaFailure,
    EmptyClusterSummary,
    TooFewAgents,
    NoCategories,
    LengthMismatch,
    NoPricedProducts,
    MissingNorms,
    SchemaError,
    DuplicateProductId,
    UnknownCollectionRef,
    UnparseableDocument,
    DecisionSchemaFailure,
    Transport,
    RateLimited,
    SchemaFailure,
    NoEvaluableShops,
    ZeroHumanDelta,
    ShopMismatch,
    MissingStageInput,
    StaleManifest,
    ConfigError,
    InvalidArgument,
};

inline const char* error_code_name(ErrorCode c) {
    switch (c) {
        case ErrorCode::EmptyInput: return "EmptyInput";
        case ErrorCode::ConflictingSessionOwner: return "ConflictingSessionOwner";
        case ErrorCode::TooFewRows: return "TooFewRows";
        case ErrorCode::DegenerateK: return "DegenerateK";
        case ErrorCode::DimensionMismatch: return "DimensionMismatch";
        case ErrorCode::EmptyRange: return "EmptyRange";
        case ErrorCode::UnknownCluster: return "UnknownCluster";
        case ErrorCode::BackendSchemaFailure: return "BackendSchemaFailure";
        case ErrorCode::EmptyClusterSummary: return "EmptyClusterSummary";
        case ErrorCode::TooFewAgents: return "TooFewAgents";
        case ErrorCode::NoCategories: return "NoCategories";
        case ErrorCode::LengthMismatch: return "LengthMismatch";
        case ErrorCode::NoPricedProducts: return "NoPricedProducts";
        case ErrorCode::MissingNorms: return "MissingNorms";
        case ErrorCode::SchemaError: return "SchemaError";
        case ErrorCode::DuplicateProductId: return "DuplicateProductId";
        case ErrorCode::UnknownCollectionRef: return "UnknownCollectionRef";
        case ErrorCode::UnparseableDocument: return "UnparseableDocument";
        case ErrorCode::DecisionSchemaFailure: return "DecisionSchemaFailure";
        case ErrorCode::Transport: return "Transport";
        case ErrorCode::RateLimited: return "RateLimited";
        case ErrorCode::SchemaFailure: return "SchemaFailure";
        case ErrorCode::NoEvaluableShops: return "NoEvaluableShops";
        case ErrorCode::ZeroHumanDelta: return "ZeroHumanDelta";
        case ErrorCode::ShopMismatch: return "ShopMismatch";
        case ErrorCode::MissingStageInput: return "MissingStageInput";
        case ErrorCode::StaleManifest: return "StaleManifest";
        case ErrorCode::ConfigError: return "ConfigError";
        case ErrorCode::InvalidArgument: return "InvalidArgument";
    }
    return "Unknown";
}

class Error : public std::runtime_error {
public:
    Error(ErrorCode code, const std::string& message)
        : std::runtime_error(std::string(error_code_name(code)) + ": " + message), code_(code) {}

    ErrorCode code() const { return code_; }

private:
    ErrorCode code_;
};

namespace rng {

// SplitMix64. Used both as a seed mixer and as a cheap standalone stream so
// results do not depend on the platform's std distribution implementations.
inline std::uint64_t splitmix64(std::uint64_t& state) {
    state += 0x9e3779b97f4a7c15ULL;
    std::uint64_t z = state;
    z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
    z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
    return z ^ (z >> 31);
}

inline std::uint64_t mix(std::uint64_t a, std::uint64_t b) {
    std::uint64_t s = a ^ (b + 0x9e3779b97f4a7c15ULL + (a << 6) + (a >> 2));
    return splitmix64(s);
}

inline std::uint64_t hash_string(const std::string& s) {
    // FNV-1a 64
    std::uint64_t h = 0xcbf29ce484222325ULL;
    for (unsigned char c : s) {
        h ^= c;
        h *= 0x100000001b3ULL;
    }
    return h;
}

class Stream {
public:
    explicit Stream(std::uint64_t seed) : state_(seed) {}

    std::uint64_t next_u64() { return splitmix64(state_); }

    // Uniform in [0, 1).
    double next_double() { return static_cast<double>(next_u64() >> 11) * 0x1.0p-53; }

    // Uniform in [0, n). Modulo bias is irrelevant at our scales and keeps the
    // draw count per call fixed, which matters for reproducibility.
    std::size_t next_index(std::size_t n) { return static_cast<std::size_t>(next_u64() % n); }

    // Standard normal via Box-Muller (both values consumed per pair).
    double next_normal() {
        if (have_spare_) {
            have_spare_ = false;
            return spare_;
        }
        double u1 = next_double();
        double u2 = next_double();
        while (u1 <= 0.0) u1 = next_double();
        const double r = std::sqrt(-2.0 * std::log(u1));
        const double theta = 6.283185307179586476925286766559 * u2;
        spare_ = r * std::sin(theta);
        have_spare_ = true;
        return r * std::cos(theta);
    }

    // Gamma(alpha, 1) via Marsaglia-Tsang.
    double next_gamma(double alpha) {
        if (alpha < 1.0) {
            const double u = next_double();
            return next_gamma(alpha + 1.0) * std::pow(u > 0 ? u : 1e-300, 1.0 / alpha);
        }
        const double d = alpha - 1.0 / 3.0;
        const double c = 1.0 / std::sqrt(9.0 * d);
        for (;;) {
            double x;
            double v;
            do {
                x = next_normal();
                v = 1.0 + c * x;
            } while (v <= 0.0);
            v = v * v * v;
            const double u = next_double();
            if (u < 1.0 - 0.0331 * x * x * x * x) return d * v;
            if (u > 0 && std::log(u) < 0.5 * x * x + d * (1.0 - v + std::log(v))) return d * v;
        }
    }

    double next_beta(double a, double b) {
        const double ga = next_gamma(a);
        const double gb = next_gamma(b);
        return ga / (ga + gb);
    }

private:
    std::uint64_t state_;
    double spare_ = 0.0;
    bool have_spare_ = false;
};

}  // namespace rng

namespace stats {

inline double mean(const std::vector<double>& xs) {
    if (xs.empty()) return 0.0;
    double s = 0.0;
    for (double x : xs) s += x;
    return s / static_cast<double>(xs.size());
}

// Population standard deviation.
inline double stddev_pop(const std::vector<double>& xs) {
    if (xs.empty()) return 0.0;
    const double m = mean(xs);
    double s = 0.0;
    for (double x : xs) s += (x - m) * (x - m);
    return std::sqrt(s / static_cast<double>(xs.size()));
}

// Linear-interpolation percentile, q in [0, 1]; input need not be sorted.
inline double percentile(std::vector<double> xs, double q) {
    if (xs.empty()) return 0.0;
    std::sort(xs.begin(), xs.end());
    if (q <= 0.0) return xs.front();
    if (q >= 1.0) return xs.back();
    const double pos = q * static_cast<double>(xs.size() - 1);
    const std::size_t lo = static_cast<std::size_t>(pos);
    const double frac = pos - static_cast<double>(lo);
    if (lo + 1 >= xs.size()) return xs.back();
    return xs[lo] + frac * (xs[lo + 1] - xs[lo]);
}

// Midrank percentile rank of v against a sorted sample, in [0, 1].
inline double percentile_rank(const std::vector<double>& sorted, double v) {
    if (sorted.empty()) return 0.0;
    const auto lo = std::lower_bound(sorted.begin(), sorted.end(), v);
    const auto hi = std::upper_bound(sorted.begin(), sorted.end(), v);
    const double below = static_cast<double>(lo - sorted.begin());
    const double equal = static_cast<double>(hi - lo);
    return (below + 0.5 * equal) / static_cast<double>(sorted.size());
}

// Half-away-from-zero rounding.
inline std::int64_t round_half_away(double x) {
    return static_cast<std::int64_t>(x >= 0 ? std::floor(x + 0.5) : std::ceil(x - 0.5));
}

}  // namespace stats

inline std::string lowercase(std::string s) {
    for (char& c : s) {
        if (c >= 'A' && c <= 'Z') c = static_cast<char>(c - 'A' + 'a');
    }
    return s;
}

inline std::string trim(const std::string& s) {
    std::size_t b = 0;
    std::size_t e = s.size();
    while (b < e && std::isspace(static_cast<unsigned char>(s[b]))) ++b;
    while (e > b && std::isspace(static_cast<unsigned char>(s[e - 1]))) --e;
    return s.substr(b, e - b);
}

inline bool contains_ci(const std::string& haystack, const std::string& needle) {
    if (needle.empty()) return true;
    return lowercase(haystack).find(lowercase(needle)) != std::string::npos;
}

// "$33.18" for 3318 minor units.
inline std::string format_money(Money cents) {
    const bool neg = cents < 0;
    const Money abs = neg ? -cents : cents;
    std::string s = (neg ? "-$" : "$") + std::to_string(abs / 100) + ".";
    const Money frac = abs % 100;
    if (frac < 10) s += "0";
    s += std::to_string(frac);
    return s;
}

}  // namespace simgym
