// Copyright (c) 2026 The warmsim Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cmath>
#include <cstdint>
#include <random>
#include <stdexcept>
#include <vector>

namespace warmsim {

/// Deterministic random source. mt19937_64 output is pinned by the C++
/// standard; the distribution transforms live here because the stdlib
/// distributions are implementation-defined and outputs must be
/// byte-identical across platforms and releases.
class Rng {
public:
    explicit Rng(std::uint64_t seed) : gen_(seed) {}

    std::uint64_t next_u64() { return gen_(); }

    /// Uniform in (0, 1].
    double uniform01() { return static_cast<double>((gen_() >> 11) + 1) * 0x1.0p-53; }

    /// Uniform integer in [0, n).
    std::uint64_t uniform_below(std::uint64_t n) {
        // Modulo bias is negligible for the small n used here, but rejection
        // sampling keeps the stream reproducible and unbiased regardless.
        const std::uint64_t limit = UINT64_MAX - UINT64_MAX % n;
        std::uint64_t x;
        do { x = gen_(); } while (x >= limit);
        return x % n;
    }

    /// Standard normal via Box-Muller (two uniforms per draw).
    double normal() {
        const double u1 = uniform01();
        const double u2 = uniform01();
        return std::sqrt(-2.0 * std::log(u1)) * std::cos(2.0 * 3.14159265358979323846 * u2);
    }

    /// Gamma(shape k, scale theta), Marsaglia-Tsang squeeze method.
    double gamma(double k, double theta) {
        if (k <= 0.0 || theta <= 0.0) throw std::invalid_argument("gamma: nonpositive parameter");
        if (k < 1.0) {
            // Boost: Gamma(k) = Gamma(k+1) * U^(1/k).
            const double g = gamma(k + 1.0, 1.0);
            const double u = uniform01();
            return theta * g * std::pow(u, 1.0 / k);
        }
        const double d = k - 1.0 / 3.0;
        const double c = 1.0 / std::sqrt(9.0 * d);
        for (;;) {
            double x, v;
            do {
                x = normal();
                v = 1.0 + c * x;
            } while (v <= 0.0);
            v = v * v * v;
            const double u = uniform01();
            if (u < 1.0 - 0.0331 * x * x * x * x) return theta * d * v;
            if (std::log(u) < 0.5 * x * x + d * (1.0 - v + std::log(v))) return theta * d * v;
        }
    }

    /// Log-normal with log-space parameters mu, sigma.
    double lognormal(double mu, double sigma) { return std::exp(mu + sigma * normal()); }

private:
    std::mt19937_64 gen_;
};

/// Finite Zipf(s) sampler over ranks 0..n-1 by CDF inversion.
class ZipfSampler {
public:
    ZipfSampler(std::size_t n, double s) {
        if (n == 0) throw std::invalid_argument("zipf: empty support");
        cdf_.resize(n);
        double acc = 0.0;
        for (std::size_t i = 0; i < n; ++i) {
            acc += 1.0 / std::pow(static_cast<double>(i + 1), s);
            cdf_[i] = acc;
        }
        for (auto& c : cdf_) c /= acc;
    }

    std::size_t sample(Rng& rng) const {
        const double u = rng.uniform01();
        std::size_t lo = 0, hi = cdf_.size() - 1;
        while (lo < hi) {
            const std::size_t mid = (lo + hi) / 2;
            if (cdf_[mid] < u) lo = mid + 1; else hi = mid;
        }
        return lo;
    }

private:
    std::vector<double> cdf_;
};

}  // namespace warmsim
