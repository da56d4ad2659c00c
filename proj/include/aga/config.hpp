#pragma once

#include <string>
#include <vector>

#include "aga/agm.hpp"
#include "aga/corpus.hpp"
#include "aga/encoders.hpp"
#include "aga/objectives.hpp"
#include "aga/tem.hpp"

namespace aga {

struct TrainConfig {
    std::string strategy = "agm"; // baseline | picked | random | agm
    size_t epochs = 30;
    size_t batch_size = 16;
    uint64_t seed = 42;
    double lr = 1e-3;
    double weight_decay = 0.02;
    double random_mask_rate = 0.15; // the "random" baseline strategy
    double picked_mask_rate = 0.3;  // per-vacuous-token rate of the "picked" baseline
    double grad_clip = 0.0;         // 0 disables clipping

    void validate() const;
};

struct EvalConfig {
    std::string split = "test";
    bool rerank = false;     // cross-encoder re-rank of the top candidates
    size_t rerank_depth = 16;

    void validate() const;
};

struct AblateConfig {
    size_t seeds = 3;
    size_t workers = 0; // 0 = hardware concurrency
    std::vector<std::string> strategies = {"baseline", "picked", "random", "agm"};
    size_t epochs = 0;       // 0 = train.epochs
    bool tem = false;        // enrichment stays off in the masking comparison
    bool rate_parity = true; // run agm cells with target_mask_rate for volume parity

    void validate() const;
};

/// Full run configuration. File values merge over defaults; unknown keys are
/// rejected with their field path.
struct RunConfig {
    std::string corpus_dir; // empty: generate under the run directory
    CorpusConfig corpus;
    EncoderConfig encoder; // vocab_size/patch fields filled from the corpus at run time
    AgmConfig agm;
    TemConfig tem;
    ObjectivesConfig objectives;
    TrainConfig train;
    EvalConfig eval;
    AblateConfig ablate;

    static RunConfig defaults();
    static RunConfig from_json_text(const std::string& text);
    static RunConfig load(const std::string& path);

    std::string to_json_text(int indent = 2) const;

    /// Apply `--set section.key=value` style overrides; the value is parsed
    /// as JSON, falling back to a plain string.
    void apply_override(const std::string& dotted_key, const std::string& value);

    void validate() const;
};

} // namespace aga
