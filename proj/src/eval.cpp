#include "aga/eval.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <stdexcept>

namespace aga {

RetrievalMetrics cmc_map(const Tensor& similarity, const std::vector<int>& query_labels,
                         const std::vector<int>& gallery_labels) {
    if (similarity.rank() != 2 || similarity.rows() != query_labels.size() ||
        similarity.cols() != gallery_labels.size())
        throw std::invalid_argument("cmc_map: similarity shape " + shape_to_string(similarity.shape()) +
                                    " does not match " + std::to_string(query_labels.size()) +
                                    " queries x " + std::to_string(gallery_labels.size()) + " gallery");

    size_t gallery = gallery_labels.size();
    RetrievalMetrics metrics;
    double sum_r1 = 0, sum_r5 = 0, sum_r10 = 0, sum_ap = 0;

    std::vector<size_t> order(gallery);
    for (size_t q = 0; q < query_labels.size(); ++q) {
        size_t total_matches = 0;
        for (int g : gallery_labels)
            if (g == query_labels[q]) ++total_matches;
        if (total_matches == 0) {
            ++metrics.num_excluded;
            continue;
        }

        std::iota(order.begin(), order.end(), size_t{0});
        const double* row = similarity.data().data() + q * gallery;
        std::stable_sort(order.begin(), order.end(), [&](size_t a, size_t b) {
            if (row[a] != row[b]) return row[a] > row[b];
            return a < b; // deterministic tie-break by gallery index
        });

        size_t first_match_rank = 0;
        size_t matches_seen = 0;
        double ap = 0.0;
        for (size_t r = 0; r < gallery; ++r) {
            if (gallery_labels[order[r]] != query_labels[q]) continue;
            ++matches_seen;
            if (matches_seen == 1) first_match_rank = r + 1;
            ap += static_cast<double>(matches_seen) / static_cast<double>(r + 1);
        }
        ap /= static_cast<double>(total_matches);

        sum_r1 += first_match_rank <= 1 ? 1.0 : 0.0;
        sum_r5 += first_match_rank <= 5 ? 1.0 : 0.0;
        sum_r10 += first_match_rank <= 10 ? 1.0 : 0.0;
        sum_ap += ap;
        ++metrics.num_queries;
    }

    if (metrics.num_queries > 0) {
        double n = static_cast<double>(metrics.num_queries);
        metrics.r1 = sum_r1 / n;
        metrics.r5 = sum_r5 / n;
        metrics.r10 = sum_r10 / n;
        metrics.map = sum_ap / n;
    }
    return metrics;
}

namespace {

struct SplitFeatures {
    std::vector<size_t> records;
    Tensor text;  // (n, itc_dim)
    Tensor image; // (n, itc_dim)
    std::vector<int> labels;
    std::vector<Tensor> text_hidden;  // per record, for re-ranking
    std::vector<Tensor> image_hidden;
};

SplitFeatures encode_split(const Model& model, const CorpusData& corpus, std::string_view split,
                           bool keep_hidden) {
    NoGradGuard no_grad;
    SplitFeatures out;
    out.records = corpus.split_indices(split);
    if (out.records.empty())
        throw std::invalid_argument("evaluate: split '" + std::string(split) + "' is empty");
    std::vector<Tensor> text_rows, image_rows;
    for (size_t idx : out.records) {
        const CorpusRecord& r = corpus.records[idx];
        auto tokens = wrap_sequence(corpus.vocab.tokenize(r.sentence));
        Tensor text_hidden = model.encode_text(tokens, {}, false).hidden;
        Tensor image_hidden = model.encode_image(corpus.patch_grid_of(r.patch_offset));
        text_rows.push_back(model.text_global_feature(text_hidden));
        image_rows.push_back(model.image_global_feature(image_hidden));
        out.labels.push_back(r.identity);
        if (keep_hidden) {
            out.text_hidden.push_back(text_hidden);
            out.image_hidden.push_back(image_hidden);
        }
    }
    out.text = concat(text_rows, 0);
    out.image = concat(image_rows, 0);
    return out;
}

} // namespace

RetrievalMetrics evaluate_retrieval(const Model& model, const CorpusData& corpus,
                                    const EvalConfig& eval_config) {
    NoGradGuard no_grad;
    SplitFeatures feats = encode_split(model, corpus, eval_config.split, eval_config.rerank);
    Tensor sim = matmul(feats.text, transpose(feats.image));

    if (eval_config.rerank) {
        size_t gallery = feats.records.size();
        size_t depth = std::min(eval_config.rerank_depth, gallery);
        for (size_t q = 0; q < feats.records.size(); ++q) {
            std::vector<size_t> order(gallery);
            std::iota(order.begin(), order.end(), size_t{0});
            double* row = sim.data().data() + q * gallery;
            std::stable_sort(order.begin(), order.end(), [&](size_t a, size_t b) {
                if (row[a] != row[b]) return row[a] > row[b];
                return a < b;
            });
            // ITM match probability rescored onto the top candidates; the
            // offset keeps the rescored block strictly above the tail.
            for (size_t k = 0; k < depth; ++k) {
                CrossForward cross =
                    model.cross_encode(feats.text_hidden[q], feats.image_hidden[order[k]], {});
                Tensor logits = model.itm_logits(slice(cross.hidden, 0, 0, 1));
                Tensor prob = softmax(logits, 1.0, 1);
                row[order[k]] = 10.0 + prob.at(0, 1); // rescored block dominates
            }
        }
    }

    return cmc_map(sim, feats.labels, feats.labels);
}

MaskAnalysis analyze_masks(const Model& model, const CorpusData& corpus, const AgmConfig& agm_config,
                           std::span<const size_t> record_indices, Rng& rng) {
    NoGradGuard no_grad;
    MaskAnalysis out;
    for (size_t idx : record_indices) {
        const CorpusRecord& r = corpus.records[idx];
        auto tokens = wrap_sequence(corpus.vocab.tokenize(r.sentence));
        TextForward text = model.encode_text(tokens, {}, true);

        auto content = content_mask(tokens, corpus.vocab);
        auto aggregated = aggregate_class_attention(text.trace, agm_config.beta);
        auto normalized = normalize_attention(aggregated, agm_config.tau, content);
        auto p = mask_probabilities(normalized, agm_config, content);
        MaskedText masked = apply_mask(tokens, p, corpus.vocab, agm_config, rng);

        std::vector<std::string> actions(tokens.size());
        std::vector<bool> is_masked(tokens.size(), false);
        for (size_t i = 0; i < masked.positions.size(); ++i) {
            is_masked[masked.positions[i]] = true;
            actions[masked.positions[i]] = mask_action_name(masked.actions[i]);
        }
        for (size_t pos = 0; pos < tokens.size(); ++pos) {
            if (!content[pos]) continue;
            out.mask_records.push_back({static_cast<int>(idx), pos, corpus.vocab.word(tokens[pos]),
                                        normalized[pos], p[pos], is_masked[pos], actions[pos]});
        }

        // Cross-attention of the masked text against the paired image.
        Tensor masked_hidden = model.encode_text(masked.tokens, {}, false).hidden;
        Tensor image_hidden = model.encode_image(corpus.patch_grid_of(r.patch_offset));
        CrossForward cross = model.cross_encode(masked_hidden, image_hidden, {});
        const AttnMap& map = cross.cross_maps.back();
        for (size_t i = 0; i < masked.positions.size(); ++i) {
            size_t pos = masked.positions[i];
            AttentionDumpRecord rec;
            rec.sentence_id = static_cast<int>(idx);
            rec.position = pos;
            rec.token = corpus.vocab.word(masked.originals[i]);
            rec.abar = normalized[pos];
            rec.p = p[pos];
            rec.attention.assign(map.values.begin() + pos * map.cols,
                                 map.values.begin() + (pos + 1) * map.cols);
            // argmax over patch positions (index 0 is the image class token)
            size_t best = 1;
            for (size_t j = 1; j < map.cols; ++j)
                if (rec.attention[j] > rec.attention[best]) best = j;
            rec.argmax_patch = best - 1;
            auto slot = corpus.slot_of_word(rec.token);
            rec.true_patch = slot ? static_cast<int>(corpus.spec.slots[*slot].patch_index) : -1;
            out.attention_records.push_back(std::move(rec));
        }
    }
    return out;
}

namespace {

void mean_std(const std::vector<double>& values, double& mean, double& std_dev) {
    mean = 0.0;
    std_dev = 0.0;
    if (values.empty()) return;
    for (double v : values) mean += v;
    mean /= static_cast<double>(values.size());
    for (double v : values) std_dev += (v - mean) * (v - mean);
    std_dev = std::sqrt(std_dev / static_cast<double>(values.size()));
}

} // namespace

AblationReport aggregate_ablation(const std::vector<AblationCell>& cells,
                                  const std::vector<std::string>& strategy_order) {
    AblationReport report;
    report.cells = cells;
    for (const std::string& strategy : strategy_order) {
        AblationRow row;
        row.strategy = strategy;
        std::vector<double> r1, r5, r10, map, ratio;
        for (const AblationCell& cell : cells) {
            if (cell.strategy != strategy) continue;
            ++row.seeds;
            r1.push_back(cell.metrics.r1);
            r5.push_back(cell.metrics.r5);
            r10.push_back(cell.metrics.r10);
            map.push_back(cell.metrics.map);
            if (cell.ratio_v) ratio.push_back(*cell.ratio_v);
        }
        mean_std(r1, row.r1_mean, row.r1_std);
        mean_std(r5, row.r5_mean, row.r5_std);
        mean_std(r10, row.r10_mean, row.r10_std);
        mean_std(map, row.map_mean, row.map_std);
        if (!ratio.empty()) {
            double m = 0, s = 0;
            mean_std(ratio, m, s);
            row.ratio_v_mean = m;
            row.ratio_v_std = s;
        }
        report.rows.push_back(std::move(row));
    }
    return report;
}

} // namespace aga
