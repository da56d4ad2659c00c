#include "aga/rng.hpp"

#include <cmath>
#include <numbers>
#include <stdexcept>

namespace aga {

namespace {

inline uint64_t splitmix64(uint64_t& state) {
    uint64_t z = (state += 0x9e3779b97f4a7c15ULL);
    z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
    z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
    return z ^ (z >> 31);
}

} // namespace

uint64_t hash_name(std::string_view name) {
    uint64_t h = 0xcbf29ce484222325ULL;
    for (unsigned char c : name) {
        h ^= c;
        h *= 0x100000001b3ULL;
    }
    return h;
}

Rng::Rng(uint64_t seed) : seed_(seed), state_(seed) {
    // burn-in so nearby seeds decorrelate immediately
    splitmix64(state_);
    splitmix64(state_);
}

Rng Rng::fork(std::string_view name, uint64_t index) const {
    uint64_t mix = seed_;
    mix ^= hash_name(name) + 0x9e3779b97f4a7c15ULL + (mix << 6) + (mix >> 2);
    mix ^= (index + 1) * 0xd1b54a32d192ed03ULL;
    return Rng(mix);
}

uint64_t Rng::next_u64() {
    return splitmix64(state_);
}

double Rng::uniform() {
    return static_cast<double>(next_u64() >> 11) * 0x1.0p-53;
}

double Rng::uniform(double lo, double hi) {
    return lo + (hi - lo) * uniform();
}

uint64_t Rng::uniform_index(uint64_t n) {
    if (n == 0) throw std::invalid_argument("Rng::uniform_index: n must be positive");
    // rejection sampling to avoid modulo bias
    uint64_t limit = UINT64_MAX - UINT64_MAX % n;
    uint64_t x;
    do {
        x = next_u64();
    } while (x >= limit);
    return x % n;
}

double Rng::normal() {
    if (has_cached_normal_) {
        has_cached_normal_ = false;
        return cached_normal_;
    }
    double u1 = 1.0 - uniform(); // (0, 1]
    double u2 = uniform();
    double r = std::sqrt(-2.0 * std::log(u1));
    double theta = 2.0 * std::numbers::pi * u2;
    cached_normal_ = r * std::sin(theta);
    has_cached_normal_ = true;
    return r * std::cos(theta);
}

double Rng::normal(double mean, double stddev) {
    return mean + stddev * normal();
}

bool Rng::bernoulli(double p) {
    return uniform() < p;
}

size_t Rng::multinomial(std::span<const double> weights) {
    if (weights.empty()) throw std::invalid_argument("Rng::multinomial: empty weight vector");
    double total = 0.0;
    size_t last_positive = weights.size();
    for (size_t i = 0; i < weights.size(); ++i) {
        double w = weights[i];
        if (w < 0.0) throw std::invalid_argument("Rng::multinomial: negative weight");
        if (w > 0.0) last_positive = i;
        total += w;
    }
    if (total <= 0.0 || last_positive == weights.size())
        throw std::invalid_argument("Rng::multinomial: weights sum to zero");
    double u = uniform() * total;
    double acc = 0.0;
    for (size_t i = 0; i < weights.size(); ++i) {
        acc += weights[i];
        if (u < acc) return i;
    }
    return last_positive;
}

} // namespace aga
