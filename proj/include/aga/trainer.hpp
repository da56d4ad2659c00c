#pragma once

#include <optional>
#include <string>
#include <vector>

#include "aga/agm.hpp"
#include "aga/config.hpp"
#include "aga/corpus.hpp"
#include "aga/eval.hpp"
#include "aga/objectives.hpp"
#include "aga/tem.hpp"

namespace aga {

/// Everything stochastic about one sample's training step, frozen before the
/// differentiable pass: mask draws, enrichment, negatives. Given a plan,
/// `compute_losses` is a deterministic function of the online parameters,
/// which is what makes finite-difference verification of the full objective
/// possible.
struct SamplePlan {
    size_t record_index = 0;
    int label = 0;
    std::vector<int> tokens;     // wrapped current text (before enrichment)
    std::vector<double> abar;    // normalized attention per position (agm strategy)
    std::vector<double> p;       // masking probability per position
    MaskedText masked;           // empty positions for the baseline strategy
    EnrichedText enriched;       // tokens = text used by ITC/ITM and the queue
    std::vector<int> mlm_targets; // aligned with masked.positions
    int negative_index = -1;     // in-batch image index for ITM, -1 when absent
    bool has_mask = false;
};

struct StepPlan {
    std::vector<SamplePlan> samples;
};

struct StepOutputs {
    Tensor total; // scalar on the tape
    LossReport report;
    Tensor momentum_text_features;  // (B, itc_dim), detached, for the queue
    Tensor momentum_image_features; // (B, itc_dim), detached
    std::vector<int> labels;
};

struct StepStats {
    size_t step = 0;
    LossReport losses;
    double mask_rate = 0.0;
    std::optional<double> ratio_v;
    std::optional<double> tem_accept_rate;
};

struct TrainSummary {
    std::vector<StepStats> log;
    std::vector<MaskDumpRecord> final_epoch_dumps;
    bool diverged = false;
};

class Trainer {
public:
    /// The corpus is copied into working token lists; persistent-mode
    /// enrichment rewrites those, never the caller's corpus.
    Trainer(const RunConfig& config, const CorpusData& corpus);

    StepPlan plan_step(const std::vector<size_t>& record_indices);
    StepOutputs compute_losses(const StepPlan& plan);

    /// plan + losses + backward + optimizer + momentum update + queue push.
    StepStats train_step(const std::vector<size_t>& record_indices);

    /// Full training loop with per-epoch shuffling; mask dump records are
    /// collected over the final epoch.
    TrainSummary run();

    ModelPair& pair() { return pair_; }
    const ModelPair& pair() const { return pair_; }
    const RunConfig& config() const { return config_; }
    const CorpusData& corpus() const { return *corpus_; }

    /// Current working text of a record (content ids, no specials).
    const std::vector<int>& working_tokens(size_t record_index) const {
        return working_tokens_[record_index];
    }

private:
    SamplePlan plan_sample(size_t record_index);
    void collect_dumps(const StepPlan& plan, std::vector<MaskDumpRecord>& sink) const;

    RunConfig config_;
    const CorpusData* corpus_;
    std::vector<std::vector<int>> working_tokens_;
    std::vector<size_t> train_records_;
    ModelPair pair_;
    AdamW optimizer_;
    FeatureQueue queue_;
    Rng mask_rng_, tem_rng_, negative_rng_, shuffle_rng_;
    size_t step_count_ = 0;
};

} // namespace aga
