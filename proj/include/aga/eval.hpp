#pragma once

#include <optional>
#include <span>
#include <string>
#include <vector>

#include "aga/agm.hpp"
#include "aga/config.hpp"
#include "aga/corpus.hpp"
#include "aga/encoders.hpp"
#include "aga/tensor.hpp"

namespace aga {

struct RetrievalMetrics {
    double r1 = 0.0, r5 = 0.0, r10 = 0.0, map = 0.0;
    size_t num_queries = 0;  // queries with at least one gallery match
    size_t num_excluded = 0; // queries whose identity is absent from the gallery
};

/// CMC Rank-k and mean average precision from a (queries x gallery)
/// similarity matrix. Ties rank by gallery index; AP averages precision at
/// each matching rank (re-identification convention).
RetrievalMetrics cmc_map(const Tensor& similarity, const std::vector<int>& query_labels,
                         const std::vector<int>& gallery_labels);

/// Text-to-image retrieval on a corpus split: every sentence queries the
/// gallery of all images in the split. Similarity is the dot product of the
/// unit global features; the optional cross-encoder re-rank rescores the top
/// `rerank_depth` candidates with the ITM match probability.
RetrievalMetrics evaluate_retrieval(const Model& model, const CorpusData& corpus,
                                    const EvalConfig& eval_config);

struct AttentionDumpRecord {
    int sentence_id = 0;
    size_t position = 0;
    std::string token;
    double abar = 0.0;
    double p = 0.0;
    std::vector<double> attention; // final cross layer, head-mean, over M+1 image positions
    size_t argmax_patch = 0;       // 0-based patch index (class position excluded)
    int true_patch = -1;           // ground-truth patch for attribute words, else -1
};

struct MaskAnalysis {
    std::vector<MaskDumpRecord> mask_records;
    std::vector<AttentionDumpRecord> attention_records;
};

/// Attention-guided mask analysis of a corpus split: per token the
/// aggregated/normalized attention and masking probability, and per sampled
/// masked token the cross-attention row over image positions.
MaskAnalysis analyze_masks(const Model& model, const CorpusData& corpus, const AgmConfig& agm_config,
                           std::span<const size_t> record_indices, Rng& rng);

struct AblationCell {
    std::string strategy;
    size_t seed_index = 0;
    uint64_t seed = 0;
    RetrievalMetrics metrics;
    std::optional<double> ratio_v;
    bool diverged = false;
    bool retried = false;
};

struct AblationRow {
    std::string strategy;
    size_t seeds = 0;
    std::optional<double> ratio_v_mean, ratio_v_std;
    double r1_mean = 0, r1_std = 0;
    double r5_mean = 0, r5_std = 0;
    double r10_mean = 0, r10_std = 0;
    double map_mean = 0, map_std = 0;
};

struct AblationReport {
    std::vector<AblationCell> cells;
    std::vector<AblationRow> rows;
};

AblationReport aggregate_ablation(const std::vector<AblationCell>& cells,
                                  const std::vector<std::string>& strategy_order);

} // namespace aga
