#pragma once

// Internal numeric and formatting helpers. Not installed.

#include <cstdint>
#include <cstdio>
#include <span>
#include <string>
#include <vector>

namespace selfrepair::detail {

// Dot products accumulate in 8 fixed lanes folded in a fixed order: the
// summation order never depends on scheduling, and the lane pattern
// vectorizes without relaxing IEEE semantics.
inline float dot_f(const float* a, const float* b, int n) {
    float lane[8] = {0, 0, 0, 0, 0, 0, 0, 0};
    int i = 0;
    for (; i + 8 <= n; i += 8)
        for (int j = 0; j < 8; ++j) lane[j] += a[i + j] * b[i + j];
    float acc = ((lane[0] + lane[1]) + (lane[2] + lane[3])) +
                ((lane[4] + lane[5]) + (lane[6] + lane[7]));
    for (; i < n; ++i) acc += a[i] * b[i];
    return acc;
}

inline double dot_fd(const float* a, const float* b, int n) {
    double lane[8] = {0, 0, 0, 0, 0, 0, 0, 0};
    int i = 0;
    for (; i + 8 <= n; i += 8)
        for (int j = 0; j < 8; ++j)
            lane[j] += static_cast<double>(a[i + j]) * static_cast<double>(b[i + j]);
    double acc = ((lane[0] + lane[1]) + (lane[2] + lane[3])) +
                 ((lane[4] + lane[5]) + (lane[6] + lane[7]));
    for (; i < n; ++i) acc += static_cast<double>(a[i]) * static_cast<double>(b[i]);
    return acc;
}

inline double dot_df(const double* a, const float* b, int n) {
    double lane[8] = {0, 0, 0, 0, 0, 0, 0, 0};
    int i = 0;
    for (; i + 8 <= n; i += 8)
        for (int j = 0; j < 8; ++j) lane[j] += a[i + j] * static_cast<double>(b[i + j]);
    double acc = ((lane[0] + lane[1]) + (lane[2] + lane[3])) +
                 ((lane[4] + lane[5]) + (lane[6] + lane[7]));
    for (; i < n; ++i) acc += a[i] * static_cast<double>(b[i]);
    return acc;
}

// y += s * x
inline void axpy_f(float* y, float s, const float* x, int n) {
    for (int i = 0; i < n; ++i) y[i] += s * x[i];
}

inline double sum_d(const float* a, int n) {
    double acc = 0.0;
    for (int i = 0; i < n; ++i) acc += a[i];
    return acc;
}

// SplitMix64: small deterministic generator for toy weights and corpora.
struct SplitMix64 {
    std::uint64_t state;

    explicit SplitMix64(std::uint64_t seed) : state(seed) {}

    std::uint64_t next() {
        state += 0x9E3779B97F4A7C15ULL;
        std::uint64_t z = state;
        z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ULL;
        z = (z ^ (z >> 27)) * 0x94D049BB133111EBULL;
        return z ^ (z >> 31);
    }

    // uniform in [0, 1)
    double uniform() { return static_cast<double>(next() >> 11) * 0x1.0p-53; }

    // uniform in [-1, 1)
    float uniform_pm1() { return static_cast<float>(2.0 * uniform() - 1.0); }

    // uniform integer in [0, n)
    std::uint64_t below(std::uint64_t n) { return next() % n; }
};

inline constexpr std::uint64_t kFnvOffset = 0xcbf29ce484222325ULL;
inline constexpr std::uint64_t kFnvPrime = 0x100000001b3ULL;

inline std::uint64_t fnv1a(std::uint64_t h, const void* data, std::size_t n) {
    const auto* p = static_cast<const unsigned char*>(data);
    for (std::size_t i = 0; i < n; ++i) {
        h ^= p[i];
        h *= kFnvPrime;
    }
    return h;
}

inline std::uint64_t fnv1a(const void* data, std::size_t n) {
    return fnv1a(kFnvOffset, data, n);
}

// 9 significant digits, the precision every export uses.
inline std::string format_double(double v) {
    char buf[64];
    std::snprintf(buf, sizeof(buf), "%.9g", v);
    return buf;
}

inline std::string hex_u64(std::uint64_t v) {
    char buf[32];
    std::snprintf(buf, sizeof(buf), "%016llx", static_cast<unsigned long long>(v));
    return buf;
}

} // namespace selfrepair::detail
