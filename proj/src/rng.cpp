#include "pmdg/rng.hpp"

#include <cmath>
#include <numeric>
#include <stdexcept>

namespace pmdg {

namespace {

std::uint64_t splitmix64(std::uint64_t& state) {
    state += 0x9e3779b97f4a7c15ULL;
    std::uint64_t z = state;
    z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
    z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
    return z ^ (z >> 31);
}

}  // namespace

std::uint64_t fnv1a(std::string_view s) {
    std::uint64_t h = 0xcbf29ce484222325ULL;
    for (unsigned char c : s) {
        h ^= c;
        h *= 0x100000001b3ULL;
    }
    return h;
}

RngStream RngStream::derive(std::uint64_t seed, std::string_view label, std::uint64_t index) {
    std::uint64_t s = seed;
    std::uint64_t a = splitmix64(s);
    s ^= fnv1a(label);
    std::uint64_t b = splitmix64(s);
    s ^= index * 0x9e3779b97f4a7c15ULL + 0x7f4a7c15ULL;
    std::uint64_t c = splitmix64(s);
    return RngStream(a ^ (b + (c << 1)));
}

std::uint64_t RngStream::next_u64() { return splitmix64(state_); }

double RngStream::uniform() {
    return static_cast<double>(next_u64() >> 11) * 0x1.0p-53;
}

double RngStream::uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

int RngStream::uniform_int(int n) {
    if (n < 1) throw std::invalid_argument("uniform_int: n must be >= 1");
    // rejection sampling to avoid modulo bias
    std::uint64_t bound = static_cast<std::uint64_t>(n);
    std::uint64_t limit = UINT64_MAX - UINT64_MAX % bound;
    std::uint64_t x;
    do {
        x = next_u64();
    } while (x >= limit);
    return static_cast<int>(x % bound);
}

double RngStream::normal() {
    // Box-Muller; clamp u1 away from 0 so log() stays finite.
    double u1 = uniform();
    double u2 = uniform();
    if (u1 < 1e-300) u1 = 1e-300;
    return std::sqrt(-2.0 * std::log(u1)) * std::cos(2.0 * M_PI * u2);
}

double RngStream::gamma(double alpha) {
    if (alpha <= 0.0) throw std::invalid_argument("gamma: alpha must be > 0");
    if (alpha < 1.0) {
        // boost: G(a) = G(a+1) * U^(1/a)
        double u = uniform();
        if (u < 1e-300) u = 1e-300;
        return gamma(alpha + 1.0) * std::pow(u, 1.0 / alpha);
    }
    // Marsaglia-Tsang squeeze
    double d = alpha - 1.0 / 3.0;
    double c = 1.0 / std::sqrt(9.0 * d);
    for (;;) {
        double x = normal();
        double v = 1.0 + c * x;
        if (v <= 0.0) continue;
        v = v * v * v;
        double u = uniform();
        if (u < 1.0 - 0.0331 * x * x * x * x) return d * v;
        if (u < 1e-300) u = 1e-300;
        if (std::log(u) < 0.5 * x * x + d * (1.0 - v + std::log(v))) return d * v;
    }
}

double RngStream::beta(double a, double b) {
    double x = gamma(a);
    double y = gamma(b);
    double s = x + y;
    if (s <= 0.0) return 0.5;
    return x / s;
}

std::vector<double> RngStream::dirichlet(double alpha, int k) {
    if (k < 1) throw std::invalid_argument("dirichlet: k must be >= 1");
    std::vector<double> w(static_cast<std::size_t>(k));
    double total = 0.0;
    for (auto& x : w) {
        x = gamma(alpha);
        total += x;
    }
    if (total <= 0.0) {
        for (auto& x : w) x = 1.0 / k;
        return w;
    }
    for (auto& x : w) x /= total;
    return w;
}

std::vector<int> RngStream::permutation(int n) {
    std::vector<int> p(static_cast<std::size_t>(n));
    std::iota(p.begin(), p.end(), 0);
    shuffle(p);
    return p;
}

}  // namespace pmdg
