#pragma once

#include <cmath>
#include <cstdint>
#include <cstdio>
#include <string>
#include <vector>

namespace pdselect {

/// Numerically stable softplus log(1 + e^x); finite for |x| <= ~700.
inline double softplus(double x) {
    if (x > 0.0) return x + std::log1p(std::exp(-x));
    return std::log1p(std::exp(x));
}

/// log sigma(x), computed as -softplus(-x). Never overflows for |x| <= 700.
inline double log_sigmoid(double x) { return -softplus(-x); }

/// -log sigma(x): the logistic loss of a margin x.
inline double neg_log_sigmoid(double x) { return softplus(-x); }

inline double sigmoid(double x) {
    if (x >= 0.0) {
        const double e = std::exp(-x);
        return 1.0 / (1.0 + e);
    }
    const double e = std::exp(x);
    return e / (1.0 + e);
}

/// Round half-to-even, independent of the runtime FP rounding mode.
inline std::int64_t round_half_even(double x) {
    const double f = std::floor(x);
    const double frac = x - f;
    const auto lo = static_cast<std::int64_t>(f);
    if (frac > 0.5) return lo + 1;
    if (frac < 0.5) return lo;
    return (lo % 2 == 0) ? lo : lo + 1;
}

/// round_half_even(frac * n) clamped to [0, n]. Every budget and sample-count
/// computation in the pipeline goes through here so the rounding rule is
/// stated once.
inline std::size_t scaled_count(double frac, std::size_t n) {
    std::int64_t m = round_half_even(frac * static_cast<double>(n));
    if (m < 0) m = 0;
    const auto cap = static_cast<std::int64_t>(n);
    if (m > cap) m = cap;
    return static_cast<std::size_t>(m);
}

/// 1-based nearest rank ceil(gamma * n), clamped to [1, n]. The small epsilon
/// guards against FP spill: fl(0.9) * 10 lands just above 9 and a naive ceil
/// would return 10.
inline std::size_t nearest_rank(double gamma, std::size_t n) {
    double r = std::ceil(gamma * static_cast<double>(n) - 1e-9);
    if (r < 1.0) r = 1.0;
    const auto nf = static_cast<double>(n);
    if (r > nf) r = nf;
    return static_cast<std::size_t>(r);
}

/// Fixed-order mean; empty input maps to 0 (the convention used by the
/// empty-complement cases of the loss bounds).
inline double mean_or_zero(const std::vector<double>& v) {
    if (v.empty()) return 0.0;
    double s = 0.0;
    for (double x : v) s += x;
    return s / static_cast<double>(v.size());
}

inline double sign_of(double x) { return x > 0.0 ? 1.0 : (x < 0.0 ? -1.0 : 0.0); }

/// FNV-1a over bytes; stable across platforms. Used for config digests.
inline std::uint64_t fnv1a(const void* data, std::size_t len,
                           std::uint64_t h = 14695981039346656037ull) {
    const auto* p = static_cast<const unsigned char*>(data);
    for (std::size_t i = 0; i < len; ++i) {
        h ^= p[i];
        h *= 1099511628211ull;
    }
    return h;
}

inline std::uint64_t fnv1a(const std::string& s,
                           std::uint64_t h = 14695981039346656037ull) {
    return fnv1a(s.data(), s.size(), h);
}

inline std::string hex64(std::uint64_t v) {
    char buf[17];
    std::snprintf(buf, sizeof(buf), "%016llx", static_cast<unsigned long long>(v));
    return std::string(buf);
}

/// Canonical shortest-round-trip text for a double, for digest input.
inline std::string canon_double(double v) {
    char buf[32];
    std::snprintf(buf, sizeof(buf), "%.17g", v);
    return std::string(buf);
}

}  // namespace pdselect
