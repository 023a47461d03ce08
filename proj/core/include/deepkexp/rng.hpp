#pragma once

#include <cmath>
#include <cstdint>
#include <random>
#include <vector>

namespace deepkexp {

// Seeded random source. The engine is std::mt19937_64 (bit-exact across
// implementations per the standard); the distribution transforms below are
// implemented here because the standard library's are implementation-defined
// and would break byte-identical reruns across toolchains.
class Rng {
  public:
    explicit Rng(std::uint64_t seed) : eng_(seed) {}

    std::uint64_t bits() { return eng_(); }

    // Uniform on [0, 1), 53-bit resolution.
    double uniform01() { return static_cast<double>(eng_() >> 11) * 0x1.0p-53; }

    double uniform(double lo, double hi) { return lo + (hi - lo) * uniform01(); }

    // Box-Muller; consumes exactly two engine draws per call.
    double normal() {
        const double u1 = 1.0 - uniform01();  // (0, 1], keeps log finite
        const double u2 = uniform01();
        return std::sqrt(-2.0 * std::log(u1)) * std::cos(2.0 * kPi * u2);
    }

    double normal(double mean, double sd) { return mean + sd * normal(); }

    // Marsaglia-Tsang, unit scale. Boosted for shape < 1.
    double gamma(double shape) {
        if (shape < 1.0) {
            const double u = 1.0 - uniform01();
            return gamma(shape + 1.0) * std::pow(u, 1.0 / shape);
        }
        const double d = shape - 1.0 / 3.0;
        const double c = 1.0 / std::sqrt(9.0 * d);
        for (;;) {
            double x;
            double v;
            do {
                x = normal();
                v = 1.0 + c * x;
            } while (v <= 0.0);
            v = v * v * v;
            const double u = 1.0 - uniform01();
            if (u < 1.0 - 0.0331 * x * x * x * x) {
                return d * v;
            }
            if (std::log(u) < 0.5 * x * x + d * (1.0 - v + std::log(v))) {
                return d * v;
            }
        }
    }

    // Unbiased integer in [0, n) by rejection.
    std::size_t index(std::size_t n) {
        const std::uint64_t span = static_cast<std::uint64_t>(n);
        const std::uint64_t limit = UINT64_MAX - UINT64_MAX % span;
        std::uint64_t r;
        do {
            r = eng_();
        } while (r >= limit);
        return static_cast<std::size_t>(r % span);
    }

    // Fisher-Yates with the rejection sampler above; std::shuffle's draw
    // pattern is unspecified, so it cannot be used here.
    template <class T>
    void shuffle(std::vector<T>& v) {
        for (std::size_t i = v.size(); i > 1; --i) {
            std::swap(v[i - 1], v[index(i)]);
        }
    }

    // Derives an independent stream; distinct labels give distinct streams.
    Rng fork(std::uint64_t label) {
        std::uint64_t mixed = eng_() ^ (0x9e3779b97f4a7c15ull * (label + 1));
        return Rng(mixed);
    }

  private:
    static constexpr double kPi = 3.141592653589793238462643383279502884;
    std::mt19937_64 eng_;
};

}  // namespace deepkexp
