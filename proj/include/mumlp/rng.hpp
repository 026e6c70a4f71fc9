#pragma once

#include <cmath>
#include <cstdint>
#include <numbers>
#include <span>
#include <string_view>
#include <utility>

namespace mumlp {

namespace detail {

constexpr std::uint64_t splitmix64(std::uint64_t x) {
    x += 0x9E3779B97F4A7C15ULL;
    x = (x ^ (x >> 30)) * 0xBF58476D1CE4E5B9ULL;
    x = (x ^ (x >> 27)) * 0x94D049BB133111EBULL;
    return x ^ (x >> 31);
}

constexpr std::uint64_t fnv1a(std::string_view s) {
    std::uint64_t h = 0xCBF29CE484222325ULL;
    for (char c : s) {
        h ^= static_cast<unsigned char>(c);
        h *= 0x100000001B3ULL;
    }
    return h;
}

}  // namespace detail

/// Counter-based generator: draw n of a stream is a pure function of
/// (seed, n), so results never depend on platform or evaluation order.
/// Independent substreams are derived with split().
class RngStream {
public:
    constexpr RngStream() = default;
    constexpr explicit RngStream(std::uint64_t seed, std::uint64_t counter = 0)
        : seed_(seed), counter_(counter) {}

    constexpr std::uint64_t seed() const { return seed_; }
    constexpr std::uint64_t counter() const { return counter_; }

    constexpr std::uint64_t next_u64() {
        const std::uint64_t c = counter_++;
        return detail::splitmix64(seed_ ^ detail::splitmix64(c ^ 0xD1B54A32D192ED03ULL));
    }

    /// Uniform in [0, 1) with 53 random bits.
    constexpr double uniform() { return static_cast<double>(next_u64() >> 11) * 0x1.0p-53; }

    constexpr double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

    /// Unbiased integer in [0, bound) by rejection.
    constexpr std::uint64_t below(std::uint64_t bound) {
        const std::uint64_t limit = bound == 0 ? 0 : (~std::uint64_t{0} - bound + 1) % bound;
        for (;;) {
            const std::uint64_t r = next_u64();
            if (r >= limit) return r % bound;
        }
    }

    /// Standard normal via Box-Muller (one draw pair per call).
    double normal() {
        double u1 = uniform();
        while (u1 <= 0.0) u1 = uniform();
        const double u2 = uniform();
        return std::sqrt(-2.0 * std::log(u1)) * std::cos(2.0 * std::numbers::pi * u2);
    }

    constexpr RngStream split(std::uint64_t stream_id) const {
        return RngStream(detail::splitmix64(seed_ ^ detail::splitmix64(stream_id + 0xA0761D6478BD642FULL)));
    }

    constexpr RngStream split(std::string_view name) const { return split(detail::fnv1a(name)); }

    template <class T>
    void shuffle(std::span<T> items) {
        for (std::size_t i = items.size(); i > 1; --i) {
            const auto j = static_cast<std::size_t>(below(i));
            std::swap(items[i - 1], items[j]);
        }
    }

private:
    std::uint64_t seed_ = 0;
    std::uint64_t counter_ = 0;
};

}  // namespace mumlp
