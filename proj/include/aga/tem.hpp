#pragma once

#include <span>
#include <string>
#include <utility>
#include <vector>

#include "aga/agm.hpp"
#include "aga/rng.hpp"

namespace aga {

struct TemConfig {
    bool enabled = true;
    size_t top_m = 5;         // candidate list size
    double p_tem = 0.3;       // sentence replacement probability
    double temperature = 1.0; // softmax temperature over the top logits
    enum class Persistence { ephemeral, persistent };
    Persistence persistence = Persistence::ephemeral;

    void validate() const;
};

struct TopM {
    std::vector<int> ids;      // descending logit, ties broken by lower id
    std::vector<double> probs; // softmax over exactly these candidates
};

/// Softmax over the m highest logits; everything else is dropped before
/// normalization.
TopM top_m_distribution(std::span<const double> logits, size_t m, double temperature = 1.0);

/// One multinomial draw after removing the original id (renormalized); the
/// result always differs from the original.
int sample_replacement(const TopM& candidates, int original_id, Rng& rng);

struct Replacement {
    size_t position = 0;
    int original = 0;
    int replacement = 0;
    size_t logit_rank = 0; // rank of the replacement within the top list
};

struct EnrichedText {
    std::vector<int> tokens; // full sequence; equals the input when rejected
    std::vector<Replacement> replacements; // sampled candidates; applied only when accepted
    bool accepted = false;
};

/// Substitute a sampled replacement at every MASK-action position of the
/// masked text, then keep the new sentence with probability p_tem. Logits are
/// supplied per masked position, aligned with `masked.positions`; entries for
/// random/keep actions are ignored.
EnrichedText enrich_text(const MaskedText& masked,
                         const std::vector<std::vector<double>>& logits_per_position,
                         const TemConfig& config, Rng& rng);

/// Line record of the optional replacement log.
struct TemLogRecord {
    int sentence_id = 0;
    size_t position = 0;
    std::string original_word;
    std::string replacement_word;
    size_t logit_rank = 0;
    bool accepted = false;
};

} // namespace aga
