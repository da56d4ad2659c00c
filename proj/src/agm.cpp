#include "aga/agm.hpp"

#include <algorithm>
#include <cmath>
#include <iostream>
#include <limits>
#include <stdexcept>

namespace aga {

void AgmConfig::validate() const {
    if (beta < 0.0 || beta > 1.0)
        throw std::invalid_argument("agm.beta must lie in [0, 1]");
    if (!(tau > 0.0))
        throw std::invalid_argument("agm.tau must be positive");
    if (alpha1 < 0.0)
        throw std::invalid_argument("agm.alpha1 must be non-negative");
    if (alpha1 + alpha2 > 1.0 + 1e-12)
        throw std::invalid_argument("agm.alpha1 + agm.alpha2 must not exceed 1");
    double sum = scheme_mask + scheme_random + scheme_keep;
    if (scheme_mask < 0.0 || scheme_random < 0.0 || scheme_keep < 0.0 || std::abs(sum - 1.0) > 1e-9)
        throw std::invalid_argument("agm replace scheme proportions must be non-negative and sum to 1");
}

const char* mask_action_name(MaskAction a) {
    switch (a) {
    case MaskAction::mask: return "mask";
    case MaskAction::random: return "random";
    case MaskAction::keep: return "keep";
    }
    return "?";
}

std::vector<int> MaskedText::reconstruct() const {
    std::vector<int> out = tokens;
    for (size_t i = 0; i < positions.size(); ++i) out[positions[i]] = originals[i];
    return out;
}

std::vector<bool> content_mask(std::span<const int> tokens, const Vocabulary& vocab) {
    std::vector<bool> mask(tokens.size(), false);
    for (size_t i = 0; i < tokens.size(); ++i) mask[i] = vocab.is_content(tokens[i]);
    return mask;
}

std::vector<double> aggregate_class_attention(const AttentionTrace& trace, double beta) {
    if (trace.empty() || trace[0].empty())
        throw std::invalid_argument("aggregate_class_attention: empty trace");
    size_t positions = trace[0][0].size();
    std::vector<double> acc(positions, 0.0);
    std::vector<double> layer_mean(positions);
    for (const auto& layer : trace) {
        if (layer.empty())
            throw std::invalid_argument("aggregate_class_attention: layer without heads");
        std::fill(layer_mean.begin(), layer_mean.end(), 0.0);
        for (const auto& head_row : layer) {
            if (head_row.size() != positions)
                throw std::invalid_argument("aggregate_class_attention: ragged trace rows");
            for (size_t i = 0; i < positions; ++i) layer_mean[i] += head_row[i];
        }
        double inv_heads = 1.0 / static_cast<double>(layer.size());
        for (size_t i = 0; i < positions; ++i)
            acc[i] = beta * acc[i] + (1.0 - beta) * layer_mean[i] * inv_heads;
    }
    return acc;
}

std::vector<double> normalize_attention(std::span<const double> aggregated, double tau,
                                        const std::vector<bool>& content) {
    if (!(tau > 0.0))
        throw std::invalid_argument("normalize_attention: temperature must be positive");
    if (aggregated.size() != content.size())
        throw std::invalid_argument("normalize_attention: mask length mismatch");
    size_t n = 0;
    double mx = -std::numeric_limits<double>::infinity();
    for (size_t i = 0; i < aggregated.size(); ++i) {
        if (!content[i]) continue;
        ++n;
        mx = std::max(mx, aggregated[i] / tau);
    }
    if (n == 0)
        throw std::invalid_argument("normalize_attention: no content tokens (empty text)");
    double z = 0.0;
    std::vector<double> out(aggregated.size(), 0.0);
    for (size_t i = 0; i < aggregated.size(); ++i) {
        if (!content[i]) continue;
        out[i] = std::exp(aggregated[i] / tau - mx);
        z += out[i];
    }
    for (size_t i = 0; i < out.size(); ++i)
        if (content[i]) out[i] /= z;
    return out;
}

std::vector<double> mask_probabilities(std::span<const double> normalized, const AgmConfig& config,
                                       const std::vector<bool>& content) {
    if (normalized.size() != content.size())
        throw std::invalid_argument("mask_probabilities: mask length mismatch");
    size_t n = 0;
    for (bool c : content) n += c ? 1 : 0;
    double amplitude = config.alpha2 * (config.target_mask_rate ? static_cast<double>(n) : 1.0);
    std::vector<double> p(normalized.size(), 0.0);
    bool clamped = false;
    for (size_t i = 0; i < p.size(); ++i) {
        if (!content[i]) continue;
        double v = config.alpha1 + amplitude * normalized[i];
        if (v > 1.0) {
            v = 1.0;
            clamped = true;
        }
        p[i] = v;
    }
    if (clamped)
        std::cerr << "warning: masking probability clamped to 1\n";
    return p;
}

std::vector<size_t> draw_mask_set(std::span<const double> p, Rng& rng) {
    std::vector<size_t> selected;
    for (size_t i = 0; i < p.size(); ++i) {
        if (p[i] > 0.0 && rng.bernoulli(p[i])) selected.push_back(i);
    }
    return selected;
}

namespace {

MaskedText apply_plan(std::span<const int> tokens, std::span<const double> p,
                      std::vector<size_t> selected, std::span<const size_t> guard_pool,
                      const Vocabulary& vocab, const AgmConfig& config, Rng& rng,
                      std::string strategy) {
    MaskedText out;
    out.tokens.assign(tokens.begin(), tokens.end());
    out.strategy = std::move(strategy);

    if (selected.empty()) {
        // Forced single mask at the argmax-p position of the guard pool
        // (lowest index wins ties) so the MLM batch is never empty.
        size_t best = tokens.size();
        double best_p = -1.0;
        for (size_t i : guard_pool) {
            if (p[i] > best_p) {
                best = i;
                best_p = p[i];
            }
        }
        if (best == tokens.size())
            throw std::invalid_argument("apply_mask: no content tokens to mask");
        selected.push_back(best);
    }

    const auto& replacement_pool = vocab.content_ids();
    for (size_t pos : selected) {
        int original = out.tokens[pos];
        double u = rng.uniform();
        MaskAction action;
        if (u < config.scheme_mask) {
            action = MaskAction::mask;
            out.tokens[pos] = kMaskId;
        } else if (u < config.scheme_mask + config.scheme_random) {
            action = MaskAction::random;
            out.tokens[pos] = replacement_pool[rng.uniform_index(replacement_pool.size())];
        } else {
            action = MaskAction::keep;
        }
        out.positions.push_back(pos);
        out.originals.push_back(original);
        out.actions.push_back(action);
    }
    return out;
}

std::vector<size_t> content_positions_of(std::span<const int> tokens, const Vocabulary& vocab) {
    std::vector<size_t> out;
    for (size_t i = 0; i < tokens.size(); ++i)
        if (vocab.is_content(tokens[i])) out.push_back(i);
    return out;
}

} // namespace

MaskedText apply_mask(std::span<const int> tokens, std::span<const double> p,
                      const Vocabulary& vocab, const AgmConfig& config, Rng& rng) {
    if (p.size() != tokens.size())
        throw std::invalid_argument("apply_mask: probability vector length mismatch");
    auto pool = content_positions_of(tokens, vocab);
    return apply_plan(tokens, p, draw_mask_set(p, rng), pool, vocab, config, rng, "agm");
}

MaskedText random_mask(std::span<const int> tokens, double rate, const Vocabulary& vocab,
                       const AgmConfig& config, Rng& rng) {
    if (rate < 0.0 || rate > 1.0)
        throw std::invalid_argument("random_mask: rate must lie in [0, 1]");
    std::vector<double> p(tokens.size(), 0.0);
    for (size_t i = 0; i < tokens.size(); ++i)
        if (vocab.is_content(tokens[i])) p[i] = rate;
    auto pool = content_positions_of(tokens, vocab);
    return apply_plan(tokens, p, draw_mask_set(p, rng), pool, vocab, config, rng, "random");
}

MaskedText picked_mask(std::span<const int> tokens, double rate, const Vocabulary& vocab,
                       const AgmConfig& config, Rng& rng) {
    if (rate < 0.0 || rate > 1.0)
        throw std::invalid_argument("picked_mask: rate must lie in [0, 1]");
    std::vector<double> p(tokens.size(), 0.0);
    std::vector<size_t> vacuous_positions;
    for (size_t i = 0; i < tokens.size(); ++i) {
        if (vocab.is_vacuous(tokens[i])) {
            p[i] = rate;
            vacuous_positions.push_back(i);
        }
    }
    if (vacuous_positions.empty()) {
        // No vacuous word in this sentence: mask one random content token.
        auto pool = content_positions_of(tokens, vocab);
        if (pool.empty())
            throw std::invalid_argument("picked_mask: no content tokens to mask");
        std::vector<size_t> selected{pool[rng.uniform_index(pool.size())]};
        MaskedText out = apply_plan(tokens, p, std::move(selected), pool, vocab, config, rng, "picked");
        out.fallback = true;
        return out;
    }
    return apply_plan(tokens, p, draw_mask_set(p, rng), vacuous_positions, vocab, config, rng, "picked");
}

} // namespace aga
