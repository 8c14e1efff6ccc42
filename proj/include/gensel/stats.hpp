#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <cstddef>
#include <vector>

namespace gensel::stats {

inline double mean(const double* x, std::size_t n) {
    double s = 0.0;
    for (std::size_t i = 0; i < n; ++i) s += x[i];
    return s / static_cast<double>(n);
}

// population standard deviation (divides by n)
inline double stddev(const double* x, std::size_t n) {
    const double m = mean(x, n);
    double s = 0.0;
    for (std::size_t i = 0; i < n; ++i) s += (x[i] - m) * (x[i] - m);
    return std::sqrt(s / static_cast<double>(n));
}

// linear-interpolation quantile on sorted data (type 7)
inline double quantile_sorted(const std::vector<double>& sorted, double q) {
    const std::size_t n = sorted.size();
    if (n == 1) return sorted[0];
    const double h = q * static_cast<double>(n - 1);
    const std::size_t lo = static_cast<std::size_t>(h);
    const double frac = h - static_cast<double>(lo);
    if (lo + 1 >= n) return sorted[n - 1];
    return sorted[lo] + frac * (sorted[lo + 1] - sorted[lo]);
}

// mean, std, min, q25, median, q75, max
inline std::array<double, 7> descriptives7(std::vector<double> values) {
    std::sort(values.begin(), values.end());
    const std::size_t n = values.size();
    return {
        mean(values.data(), n),
        stddev(values.data(), n),
        values.front(),
        quantile_sorted(values, 0.25),
        quantile_sorted(values, 0.50),
        quantile_sorted(values, 0.75),
        values.back(),
    };
}

// Pearson correlation; 0 when either side is constant
inline double pearson(const double* x, const double* y, std::size_t n) {
    const double mx = mean(x, n), my = mean(y, n);
    double sxy = 0.0, sxx = 0.0, syy = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
        const double dx = x[i] - mx, dy = y[i] - my;
        sxy += dx * dy;
        sxx += dx * dx;
        syy += dy * dy;
    }
    if (sxx == 0.0 || syy == 0.0) return 0.0;
    return sxy / std::sqrt(sxx * syy);
}

} // namespace gensel::stats
