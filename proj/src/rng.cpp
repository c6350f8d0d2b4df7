#include "dmoe/rng.hpp"

#include <cmath>
#include <numbers>

namespace dmoe {

std::uint64_t mix64(std::uint64_t x) {
    x += 0x9e3779b97f4a7c15ULL;
    x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
    x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
    return x ^ (x >> 31);
}

std::uint64_t Rng::index(std::uint64_t n) {
    if (n <= 1) return 0;
    const std::uint64_t limit = std::numeric_limits<std::uint64_t>::max() / n * n;
    std::uint64_t v;
    do {
        v = gen_();
    } while (v >= limit);
    return v % n;
}

double Rng::gaussian() {
    if (have_spare_) {
        have_spare_ = false;
        return spare_;
    }
    // u in (0,1] so log stays finite.
    const double u = 1.0 - uniform();
    const double v = uniform();
    const double r = std::sqrt(-2.0 * std::log(u));
    const double theta = 2.0 * std::numbers::pi * v;
    spare_ = r * std::sin(theta);
    have_spare_ = true;
    return r * std::cos(theta);
}

Rng Rng::substream(std::uint64_t seed, std::uint64_t a, std::uint64_t b) {
    return Rng(mix64(mix64(seed ^ 0x5851f42d4c957f2dULL) + mix64(a) + 3 * mix64(b)));
}

std::vector<std::uint32_t> shuffled_indices(std::size_t n, Rng& rng) {
    std::vector<std::uint32_t> idx(n);
    for (std::size_t i = 0; i < n; ++i) idx[i] = static_cast<std::uint32_t>(i);
    for (std::size_t i = n; i > 1; --i) {
        const std::uint64_t j = rng.index(i);
        std::swap(idx[i - 1], idx[j]);
    }
    return idx;
}

}  // namespace dmoe
