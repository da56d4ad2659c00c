#include "aga/tem.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <stdexcept>

namespace aga {

void TemConfig::validate() const {
    if (top_m < 2)
        throw std::invalid_argument("tem.top_m must be at least 2 (the original must be excludable)");
    if (p_tem < 0.0 || p_tem > 1.0)
        throw std::invalid_argument("tem.p_tem must lie in [0, 1]");
    if (!(temperature > 0.0))
        throw std::invalid_argument("tem.temperature must be positive");
}

TopM top_m_distribution(std::span<const double> logits, size_t m, double temperature) {
    if (m < 2)
        throw std::invalid_argument("top_m_distribution: m must be at least 2");
    if (m > logits.size())
        throw std::invalid_argument("top_m_distribution: m exceeds vocabulary size " +
                                    std::to_string(logits.size()));
    if (!(temperature > 0.0))
        throw std::invalid_argument("top_m_distribution: temperature must be positive");

    std::vector<int> ids(logits.size());
    std::iota(ids.begin(), ids.end(), 0);
    std::partial_sort(ids.begin(), ids.begin() + static_cast<long>(m), ids.end(),
                      [&](int a, int b) {
                          if (logits[static_cast<size_t>(a)] != logits[static_cast<size_t>(b)])
                              return logits[static_cast<size_t>(a)] > logits[static_cast<size_t>(b)];
                          return a < b; // ties: lower token id first
                      });
    ids.resize(m);

    TopM out;
    out.ids = std::move(ids);
    out.probs.resize(m);
    double mx = logits[static_cast<size_t>(out.ids[0])] / temperature;
    double z = 0.0;
    for (size_t i = 0; i < m; ++i) {
        double e = std::exp(logits[static_cast<size_t>(out.ids[i])] / temperature - mx);
        out.probs[i] = e;
        z += e;
    }
    for (double& p : out.probs) p /= z;
    return out;
}

int sample_replacement(const TopM& candidates, int original_id, Rng& rng) {
    std::vector<double> weights;
    std::vector<int> ids;
    weights.reserve(candidates.ids.size());
    ids.reserve(candidates.ids.size());
    for (size_t i = 0; i < candidates.ids.size(); ++i) {
        if (candidates.ids[i] == original_id) continue;
        ids.push_back(candidates.ids[i]);
        weights.push_back(candidates.probs[i]);
    }
    if (ids.empty())
        throw std::invalid_argument("sample_replacement: no candidate differs from the original");
    return ids[rng.multinomial(weights)];
}

EnrichedText enrich_text(const MaskedText& masked,
                         const std::vector<std::vector<double>>& logits_per_position,
                         const TemConfig& config, Rng& rng) {
    config.validate();
    if (logits_per_position.size() != masked.positions.size())
        throw std::invalid_argument("enrich_text: logits missing for a masked position (" +
                                    std::to_string(logits_per_position.size()) + " rows for " +
                                    std::to_string(masked.positions.size()) + " positions)");

    std::vector<int> candidate = masked.reconstruct();
    std::vector<Replacement> replacements;
    for (size_t i = 0; i < masked.positions.size(); ++i) {
        if (masked.actions[i] != MaskAction::mask) continue;
        TopM top = top_m_distribution(logits_per_position[i], config.top_m, config.temperature);
        int original = masked.originals[i];
        int replacement = sample_replacement(top, original, rng);
        size_t rank = 0;
        for (size_t j = 0; j < top.ids.size(); ++j) {
            if (top.ids[j] == replacement) {
                rank = j;
                break;
            }
        }
        candidate[masked.positions[i]] = replacement;
        replacements.push_back({masked.positions[i], original, replacement, rank});
    }

    EnrichedText out;
    out.accepted = !replacements.empty() && rng.bernoulli(config.p_tem);
    out.tokens = out.accepted ? std::move(candidate) : masked.reconstruct();
    out.replacements = std::move(replacements); // applied only when accepted
    return out;
}

} // namespace aga
