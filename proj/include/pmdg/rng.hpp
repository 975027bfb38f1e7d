#pragma once

#include <cstdint>
#include <string_view>
#include <vector>

namespace pmdg {

/**
 * Deterministic random stream (splitmix64 core).
 *
 * All randomness in the project flows through RngStream so that results are
 * bit-reproducible across platforms; std::random distributions are
 * implementation-defined and never used. Streams are value types: copying a
 * stream snapshots its state.
 */
class RngStream {
public:
    explicit RngStream(std::uint64_t seed) : state_(seed) {}

    // Independent sub-stream keyed by (seed, label, index). Used to hand out
    // per-component streams (per transform slot, per epoch, per domain...)
    // without correlated draws.
    static RngStream derive(std::uint64_t seed, std::string_view label, std::uint64_t index = 0);

    std::uint64_t next_u64();

    // Uniform in [0, 1) with 53-bit resolution.
    double uniform();
    double uniform(double lo, double hi);

    // Uniform integer in [0, n). n must be >= 1.
    int uniform_int(int n);

    // Standard normal (Box-Muller, both uniforms consumed every call).
    double normal();

    // Gamma(alpha, 1) via Marsaglia-Tsang; alpha > 0.
    double gamma(double alpha);

    // Beta(a, b); a, b > 0.
    double beta(double a, double b);

    // Dirichlet(alpha, ..., alpha) of length k; rows sum to 1.
    std::vector<double> dirichlet(double alpha, int k);

    template <typename T>
    void shuffle(std::vector<T>& v) {
        // Fisher-Yates
        for (int i = static_cast<int>(v.size()) - 1; i > 0; --i) {
            int j = uniform_int(i + 1);
            std::swap(v[static_cast<std::size_t>(i)], v[static_cast<std::size_t>(j)]);
        }
    }

    // Random permutation of 0..n-1.
    std::vector<int> permutation(int n);

    std::uint64_t state() const { return state_; }

private:
    std::uint64_t state_;
};

// FNV-1a, used for stable string hashing in stream derivation and config digests.
std::uint64_t fnv1a(std::string_view s);

}  // namespace pmdg
