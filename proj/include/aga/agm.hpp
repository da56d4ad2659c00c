#pragma once

#include <span>
#include <string>
#include <vector>

#include "aga/encoders.hpp"
#include "aga/rng.hpp"
#include "aga/vocab.hpp"

namespace aga {

struct AgmConfig {
    double beta = 0.95;   // layer EMA coefficient
    double tau = 0.02;    // attention softmax temperature
    double alpha1 = 0.05; // probability offset (lower bound)
    double alpha2 = 0.15; // probability amplitude
    double scheme_mask = 0.8;
    double scheme_random = 0.1;
    double scheme_keep = 0.1;
    // When set, the amplitude is rescaled by the content length n so the
    // expected masked fraction is alpha1 + alpha2 instead of alpha1 +
    // alpha2/n. Both readings of the probability map are exposed; see the
    // config reference in the README.
    bool target_mask_rate = false;

    void validate() const;
};

enum class MaskAction { mask, random, keep };
const char* mask_action_name(MaskAction a);

struct MaskedText {
    std::vector<int> tokens; // full sequence after masking
    std::vector<size_t> positions;
    std::vector<int> originals;
    std::vector<MaskAction> actions;
    std::string strategy;  // "agm" | "random" | "picked"
    bool fallback = false; // picked strategy fell back to a random content token

    /// Input sequence restored by writing originals back at mask positions.
    std::vector<int> reconstruct() const;
};

/// One line of the analyze-masks dump.
struct MaskDumpRecord {
    int sentence_id = 0;
    size_t position = 0;
    std::string token;
    double abar = 0.0;
    double p = 0.0;
    bool masked = false;
    std::string action; // empty when not masked
};

/// True at positions holding maskable words (not class, boundary or pad).
std::vector<bool> content_mask(std::span<const int> tokens, const Vocabulary& vocab);

/// Layer EMA of head-averaged class-attention rows: out_k = beta * out_{k-1}
/// + (1 - beta) * row_k, starting from zero. Returns the final accumulator,
/// class self-attention entry still included.
std::vector<double> aggregate_class_attention(const AttentionTrace& trace, double beta);

/// Temperature softmax restricted to content positions; excluded positions
/// get exactly zero.
std::vector<double> normalize_attention(std::span<const double> aggregated, double tau,
                                        const std::vector<bool>& content);

/// Affine map from normalized attention to per-token masking probability;
/// zero on non-content positions. Values above 1 clamp with a warning.
std::vector<double> mask_probabilities(std::span<const double> normalized, const AgmConfig& config,
                                       const std::vector<bool>& content);

/// Independent Bernoulli(p_i) selection, ascending positions. This is the
/// distributional stage; the forced-minimum-one guard is applied by the
/// maskers on top of it.
std::vector<size_t> draw_mask_set(std::span<const double> p, Rng& rng);

/// Attention-guided masking: Bernoulli selection from `p`, forced single mask
/// at the argmax-p content position when nothing was drawn, then the
/// mask/random/keep replacement scheme.
MaskedText apply_mask(std::span<const int> tokens, std::span<const double> p,
                      const Vocabulary& vocab, const AgmConfig& config, Rng& rng);

/// Uniform-rate baseline masker.
MaskedText random_mask(std::span<const int> tokens, double rate, const Vocabulary& vocab,
                       const AgmConfig& config, Rng& rng);

/// Masks only vacuous words (rate applies to those); sentences without any
/// vacuous word fall back to one random content token, flagged.
MaskedText picked_mask(std::span<const int> tokens, double rate, const Vocabulary& vocab,
                       const AgmConfig& config, Rng& rng);

} // namespace aga
