#pragma once

// Counter-based random streams. A stream is identified by (master_seed, path);
// the path is hashed into a Philox-4x32-10 key plus the upper half of the
// counter, so streams with different paths never share state and any stream
// can be recreated from its identity alone.

#include <array>
#include <cmath>
#include <cstdint>
#include <initializer_list>
#include <numbers>
#include <vector>

namespace vlab {

namespace detail {

constexpr std::uint64_t splitmix64(std::uint64_t x) noexcept {
    x += 0x9E3779B97F4A7C15ULL;
    x = (x ^ (x >> 30)) * 0xBF58476D1CE4E5B9ULL;
    x = (x ^ (x >> 27)) * 0x94D049BB133111EBULL;
    return x ^ (x >> 31);
}

inline std::array<std::uint32_t, 4> philox4x32_10(std::array<std::uint32_t, 4> ctr,
                                                  std::array<std::uint32_t, 2> key) noexcept {
    constexpr std::uint32_t M0 = 0xD2511F53u;
    constexpr std::uint32_t M1 = 0xCD9E8D57u;
    constexpr std::uint32_t W0 = 0x9E3779B9u;
    constexpr std::uint32_t W1 = 0xBB67AE85u;
    for (int round = 0; round < 10; ++round) {
        const std::uint64_t p0 = static_cast<std::uint64_t>(M0) * ctr[0];
        const std::uint64_t p1 = static_cast<std::uint64_t>(M1) * ctr[2];
        const auto hi0 = static_cast<std::uint32_t>(p0 >> 32);
        const auto lo0 = static_cast<std::uint32_t>(p0);
        const auto hi1 = static_cast<std::uint32_t>(p1 >> 32);
        const auto lo1 = static_cast<std::uint32_t>(p1);
        ctr = {hi1 ^ ctr[1] ^ key[0], lo1, hi0 ^ ctr[3] ^ key[1], lo0};
        key[0] += W0;
        key[1] += W1;
    }
    return ctr;
}

}  // namespace detail

class RandomStream {
public:
    explicit RandomStream(std::uint64_t master_seed, std::vector<std::uint64_t> path = {})
        : master_seed_(master_seed), path_(std::move(path)) {
        derive_key();
    }

    RandomStream(std::uint64_t master_seed, std::initializer_list<std::uint64_t> path)
        : RandomStream(master_seed, std::vector<std::uint64_t>(path)) {}

    /// Independent stream whose path extends this one by `index`. Does not
    /// consume anything from the parent.
    RandomStream child(std::uint64_t index) const {
        auto p = path_;
        p.push_back(index);
        return RandomStream(master_seed_, std::move(p));
    }

    std::uint64_t master_seed() const noexcept { return master_seed_; }
    const std::vector<std::uint64_t>& path() const noexcept { return path_; }

    std::uint64_t next_u64() noexcept {
        if (lane_ == 2) refill();
        return buffer_[lane_++];
    }

    /// Uniform in [0, 1) with 53 random bits.
    double uniform() noexcept { return static_cast<double>(next_u64() >> 11) * 0x1.0p-53; }

    /// Uniform in (0, 1].
    double uniform_open_low() noexcept {
        return static_cast<double>((next_u64() >> 11) + 1) * 0x1.0p-53;
    }

    /// Uniform integer in [0, n); n > 0. Lemire-style rejection keeps it unbiased.
    std::uint64_t uniform_index(std::uint64_t n) noexcept {
        const std::uint64_t limit = (~std::uint64_t{0}) - ((~std::uint64_t{0}) % n);
        std::uint64_t x;
        do {
            x = next_u64();
        } while (x >= limit);
        return x % n;
    }

    /// Standard normal via Box-Muller; the second variate of each pair is cached.
    double normal() noexcept {
        if (has_cached_normal_) {
            has_cached_normal_ = false;
            return cached_normal_;
        }
        const double u1 = uniform_open_low();
        const double u2 = uniform();
        const double r = std::sqrt(-2.0 * std::log(u1));
        const double theta = 2.0 * std::numbers::pi * u2;
        cached_normal_ = r * std::sin(theta);
        has_cached_normal_ = true;
        return r * std::cos(theta);
    }

    /// Gamma(shape, 1) by Marsaglia-Tsang squeeze; shape > 0.
    double gamma(double shape) noexcept {
        if (shape < 1.0) {
            const double u = uniform_open_low();
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
            const double u = uniform_open_low();
            const double x2 = x * x;
            if (u < 1.0 - 0.0331 * x2 * x2) return d * v;
            if (std::log(u) < 0.5 * x2 + d * (1.0 - v + std::log(v))) return d * v;
        }
    }

    double chi_squared(double dof) noexcept { return 2.0 * gamma(0.5 * dof); }

    /// Unit-scale Student-t with `dof` degrees of freedom.
    double student_t(double dof) noexcept {
        const double z = normal();
        return z / std::sqrt(chi_squared(dof) / dof);
    }

private:
    void derive_key() noexcept {
        std::uint64_t h = detail::splitmix64(master_seed_ ^ 0x5EEDBA5E00000000ULL);
        for (const auto p : path_) h = detail::splitmix64(h ^ detail::splitmix64(p + 0xA5A5A5A5ULL));
        key_ = {static_cast<std::uint32_t>(h), static_cast<std::uint32_t>(h >> 32)};
        stream_id_ = detail::splitmix64(h ^ 0xC0FFEE1234567ULL);
        block_ = 0;
        lane_ = 2;
    }

    void refill() noexcept {
        const std::array<std::uint32_t, 4> ctr = {
            static_cast<std::uint32_t>(block_), static_cast<std::uint32_t>(block_ >> 32),
            static_cast<std::uint32_t>(stream_id_), static_cast<std::uint32_t>(stream_id_ >> 32)};
        const auto out = detail::philox4x32_10(ctr, key_);
        buffer_[0] = (static_cast<std::uint64_t>(out[1]) << 32) | out[0];
        buffer_[1] = (static_cast<std::uint64_t>(out[3]) << 32) | out[2];
        ++block_;
        lane_ = 0;
    }

    std::uint64_t master_seed_;
    std::vector<std::uint64_t> path_;
    std::array<std::uint32_t, 2> key_{};
    std::uint64_t stream_id_ = 0;
    std::uint64_t block_ = 0;
    std::array<std::uint64_t, 2> buffer_{};
    int lane_ = 2;
    bool has_cached_normal_ = false;
    double cached_normal_ = 0.0;
};

}  // namespace vlab
