#pragma once

#include <cstdint>
#include <span>
#include <string_view>
#include <vector>

namespace aga {

/// Deterministic random stream. All randomness in the project flows from a
/// single root seed through named sub-streams (`fork`), so independent parts
/// of a run (corpus, masking, init, shuffling, ...) never share draws and a
/// run is reproducible bit-for-bit from its seed.
///
/// Uniform/normal/multinomial draws are generated from the raw 64-bit engine
/// output directly instead of the <random> distribution classes, whose output
/// is implementation-defined.
class Rng {
public:
    explicit Rng(uint64_t seed);

    /// Derive an independent stream. Does not consume state of this stream.
    Rng fork(std::string_view name, uint64_t index = 0) const;

    uint64_t next_u64();

    /// Uniform in [0, 1) with 53 bits of precision.
    double uniform();
    double uniform(double lo, double hi);

    /// Uniform integer in [0, n). n must be positive.
    uint64_t uniform_index(uint64_t n);

    /// Standard normal (Box-Muller, cached second value).
    double normal();
    double normal(double mean, double stddev);

    bool bernoulli(double p);

    /// Single draw from an unnormalized non-negative weight vector.
    size_t multinomial(std::span<const double> weights);

    template <typename T>
    void shuffle(std::vector<T>& items) {
        for (size_t i = items.size(); i > 1; --i) {
            size_t j = uniform_index(i);
            std::swap(items[i - 1], items[j]);
        }
    }

    uint64_t seed() const { return seed_; }

private:
    uint64_t seed_ = 0;
    uint64_t state_ = 0; // splitmix64 state
    double cached_normal_ = 0.0;
    bool has_cached_normal_ = false;
};

/// FNV-1a hash, used to turn stream names into fork offsets.
uint64_t hash_name(std::string_view name);

} // namespace aga
