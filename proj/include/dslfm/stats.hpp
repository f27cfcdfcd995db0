#pragma once

#include <cmath>
#include <cstdint>
#include <span>

#include <boost/math/distributions/normal.hpp>

namespace dslfm {

// splitmix64 finalizer; used to derive independent per-task seeds.
inline std::uint64_t mix64(std::uint64_t x) noexcept {
    x += 0x9e3779b97f4a7c15ULL;
    x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
    x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
    return x ^ (x >> 31);
}

inline std::uint64_t derive_seed(std::uint64_t seed, std::uint64_t a) noexcept {
    return seed ^ mix64(a);
}

inline std::uint64_t derive_seed(std::uint64_t seed, std::uint64_t a, std::uint64_t b) noexcept {
    return seed ^ mix64(mix64(a) ^ (b + 0x632be59bd9b4e019ULL));
}

inline double normal_quantile(double p) {
    return boost::math::quantile(boost::math::normal_distribution<double>{}, p);
}

inline double normal_cdf(double x) {
    return boost::math::cdf(boost::math::normal_distribution<double>{}, x);
}

inline double two_sided_pvalue(double z) {
    return 2.0 * boost::math::cdf(boost::math::complement(boost::math::normal_distribution<double>{}, std::abs(z)));
}

inline double mean_of(std::span<const double> x) {
    double s = 0.0;
    for (double v : x) s += v;
    return x.empty() ? 0.0 : s / static_cast<double>(x.size());
}

// Sample standard deviation (n - 1 denominator).
inline double sample_sd(std::span<const double> x) {
    if (x.size() < 2) return 0.0;
    const double m = mean_of(x);
    double ss = 0.0;
    for (double v : x) ss += (v - m) * (v - m);
    return std::sqrt(ss / static_cast<double>(x.size() - 1));
}

}  // namespace dslfm
