#include "aga/trainer.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <stdexcept>

#include "aga/error.hpp"

namespace aga {

namespace {

std::vector<int> unwrap_sequence(const std::vector<int>& wrapped) {
    return {wrapped.begin() + 1, wrapped.end() - 1};
}

bool finite(double v) { return std::isfinite(v); }

} // namespace

Trainer::Trainer(const RunConfig& config, const CorpusData& corpus)
    : config_(config),
      corpus_(&corpus),
      pair_(),
      optimizer_(pair_.online, 1e-3, 0.0), // re-bound below once the pair is built
      queue_(0, 1),
      mask_rng_(0),
      tem_rng_(0),
      negative_rng_(0),
      shuffle_rng_(0) {
    config_.validate();

    EncoderConfig enc = config_.encoder;
    enc.vocab_size = corpus.vocab.size();
    enc.patch_grid = corpus.config.patch_grid;
    enc.patch_dim = corpus.config.patch_dim;
    size_t longest = corpus.max_sentence_tokens();
    if (enc.max_text_len < longest + 2)
        throw ConfigError("encoder.max_text_len " + std::to_string(enc.max_text_len) +
                          " cannot fit the longest corpus sentence of " + std::to_string(longest) +
                          " tokens plus the class and boundary tokens");
    enc.validate();
    config_.encoder = enc;

    working_tokens_.reserve(corpus.records.size());
    for (const CorpusRecord& r : corpus.records)
        working_tokens_.push_back(corpus.vocab.tokenize(r.sentence));
    train_records_ = corpus.split_indices("train");
    if (train_records_.empty()) throw ConfigError("trainer: corpus has no train split");

    Rng root(config_.train.seed);
    Rng init_rng = root.fork("init");
    pair_ = ModelPair::init(enc, init_rng, config_.objectives.momentum);
    optimizer_ = AdamW(pair_.online, config_.train.lr, config_.train.weight_decay);
    queue_ = FeatureQueue(config_.objectives.queue_capacity, enc.itc_dim);
    mask_rng_ = root.fork("mask");
    tem_rng_ = root.fork("tem");
    negative_rng_ = root.fork("negatives");
    shuffle_rng_ = root.fork("shuffle");
}

SamplePlan Trainer::plan_sample(size_t record_index) {
    const CorpusRecord& record = corpus_->records[record_index];
    const Vocabulary& vocab = corpus_->vocab;
    NoGradGuard no_grad;

    SamplePlan plan;
    plan.record_index = record_index;
    plan.label = record.identity;
    plan.tokens = wrap_sequence(working_tokens_[record_index]);

    bool mlm_active = config_.objectives.weight_mlm > 0.0 && config_.train.strategy != "baseline";
    Tensor trace_hidden; // text hidden of the un-enriched text, when available

    if (mlm_active) {
        if (config_.train.strategy == "agm") {
            TextForward tf = pair_.online.encode_text(plan.tokens, {}, true);
            trace_hidden = tf.hidden;
            auto content = content_mask(plan.tokens, vocab);
            auto aggregated = aggregate_class_attention(tf.trace, config_.agm.beta);
            plan.abar = normalize_attention(aggregated, config_.agm.tau, content);
            plan.p = mask_probabilities(plan.abar, config_.agm, content);
            plan.masked = apply_mask(plan.tokens, plan.p, vocab, config_.agm, mask_rng_);
        } else if (config_.train.strategy == "random") {
            plan.p.assign(plan.tokens.size(), 0.0);
            for (size_t i = 0; i < plan.tokens.size(); ++i)
                if (vocab.is_content(plan.tokens[i])) plan.p[i] = config_.train.random_mask_rate;
            plan.masked = random_mask(plan.tokens, config_.train.random_mask_rate, vocab, config_.agm,
                                      mask_rng_);
        } else { // picked
            plan.p.assign(plan.tokens.size(), 0.0);
            for (size_t i = 0; i < plan.tokens.size(); ++i)
                if (vocab.is_vacuous(plan.tokens[i])) plan.p[i] = config_.train.picked_mask_rate;
            plan.masked = picked_mask(plan.tokens, config_.train.picked_mask_rate, vocab, config_.agm,
                                      mask_rng_);
        }
        plan.has_mask = !plan.masked.positions.empty();
        plan.mlm_targets = plan.masked.originals;
    }

    bool eligible_for_tem = false;
    for (MaskAction a : plan.masked.actions) eligible_for_tem = eligible_for_tem || a == MaskAction::mask;

    if (plan.has_mask && config_.tem.enabled && eligible_for_tem) {
        Tensor masked_hidden = pair_.online.encode_text(plan.masked.tokens, {}, false).hidden;
        Tensor image_hidden = pair_.online.encode_image(corpus_->patch_grid_of(record.patch_offset));
        CrossForward cross = pair_.online.cross_encode(masked_hidden, image_hidden, {});
        Tensor logits = pair_.online.mlm_logits(cross.hidden, plan.masked.positions);
        std::vector<std::vector<double>> rows(plan.masked.positions.size());
        for (size_t i = 0; i < rows.size(); ++i)
            rows[i].assign(logits.data().begin() + i * logits.cols(),
                           logits.data().begin() + (i + 1) * logits.cols());
        plan.enriched = enrich_text(plan.masked, rows, config_.tem, tem_rng_);
        if (plan.enriched.accepted) {
            for (const Replacement& r : plan.enriched.replacements) {
                for (size_t i = 0; i < plan.masked.positions.size(); ++i)
                    if (plan.masked.positions[i] == r.position) plan.mlm_targets[i] = r.replacement;
            }
            if (config_.tem.persistence == TemConfig::Persistence::persistent)
                working_tokens_[record_index] = unwrap_sequence(plan.enriched.tokens);
        }
    } else {
        plan.enriched.tokens = plan.tokens;
        plan.enriched.accepted = false;
    }
    return plan;
}

StepPlan Trainer::plan_step(const std::vector<size_t>& record_indices) {
    if (record_indices.empty()) throw std::invalid_argument("plan_step: empty batch");
    StepPlan plan;
    plan.samples.reserve(record_indices.size());
    for (size_t idx : record_indices) plan.samples.push_back(plan_sample(idx));

    // In-batch negative mining over the online features of the effective
    // (possibly enriched) texts.
    if (config_.objectives.weight_itm > 0.0 && record_indices.size() > 1) {
        NoGradGuard no_grad;
        size_t batch = plan.samples.size();
        std::vector<int> labels(batch);
        std::vector<Tensor> text_rows, image_rows;
        for (size_t i = 0; i < batch; ++i) {
            const SamplePlan& s = plan.samples[i];
            labels[i] = s.label;
            Tensor text_hidden = pair_.online.encode_text(s.enriched.tokens, {}, false).hidden;
            Tensor image_hidden =
                pair_.online.encode_image(corpus_->patch_grid_of(corpus_->records[s.record_index].patch_offset));
            text_rows.push_back(pair_.online.text_global_feature(text_hidden));
            image_rows.push_back(pair_.online.image_global_feature(image_hidden));
        }
        Tensor sims = matmul(concat(text_rows, 0), transpose(concat(image_rows, 0)));
        auto negatives = pick_negative_images(sims.data(), batch, labels,
                                              config_.objectives.hard_negatives, negative_rng_);
        for (size_t i = 0; i < batch; ++i) plan.samples[i].negative_index = negatives[i];
    }
    return plan;
}

StepOutputs Trainer::compute_losses(const StepPlan& plan) {
    const ObjectivesConfig& obj = config_.objectives;
    size_t batch = plan.samples.size();

    std::vector<Tensor> text_hidden(batch), image_hidden(batch);
    std::vector<Tensor> text_rows, image_rows;
    StepOutputs out;
    out.labels.resize(batch);
    for (size_t i = 0; i < batch; ++i) {
        const SamplePlan& s = plan.samples[i];
        out.labels[i] = s.label;
        text_hidden[i] = pair_.online.encode_text(s.enriched.tokens, {}, false).hidden;
        image_hidden[i] =
            pair_.online.encode_image(corpus_->patch_grid_of(corpus_->records[s.record_index].patch_offset));
        text_rows.push_back(pair_.online.text_global_feature(text_hidden[i]));
        image_rows.push_back(pair_.online.image_global_feature(image_hidden[i]));
    }
    Tensor text_features = concat(text_rows, 0);
    Tensor image_features = concat(image_rows, 0);

    // Momentum view of the same batch; detached by construction.
    Tensor q_t2i, q_i2t;
    {
        NoGradGuard no_grad;
        std::vector<Tensor> m_text_rows, m_image_rows;
        for (size_t i = 0; i < batch; ++i) {
            const SamplePlan& s = plan.samples[i];
            Tensor th = pair_.momentum.encode_text(s.enriched.tokens, {}, false).hidden;
            Tensor ih = pair_.momentum.encode_image(
                corpus_->patch_grid_of(corpus_->records[s.record_index].patch_offset));
            m_text_rows.push_back(pair_.momentum.text_global_feature(th));
            m_image_rows.push_back(pair_.momentum.image_global_feature(ih));
        }
        out.momentum_text_features = concat(m_text_rows, 0);
        out.momentum_image_features = concat(m_image_rows, 0);
        if (obj.weight_itc_distill > 0.0) {
            ItcOutputs momentum_itc = itc_loss(out.momentum_text_features, out.momentum_image_features,
                                               queue_, out.labels, obj.temperature_itc);
            q_t2i = momentum_itc.p_t2i;
            q_i2t = momentum_itc.p_i2t;
        }
    }

    std::vector<Tensor> terms;
    if (obj.weight_itc > 0.0 || obj.weight_itc_distill > 0.0) {
        ItcOutputs itc = itc_loss(text_features, image_features, queue_, out.labels, obj.temperature_itc);
        if (obj.weight_itc > 0.0) {
            out.report.itc = itc.loss.value();
            terms.push_back(scale(itc.loss, obj.weight_itc));
        }
        if (obj.weight_itc_distill > 0.0) {
            Tensor distill = itc_distill_loss(itc.p_t2i, itc.p_i2t, q_t2i, q_i2t);
            out.report.itc_distill = distill.value();
            terms.push_back(scale(distill, obj.weight_itc_distill));
        }
    }

    if (obj.weight_itm > 0.0) {
        std::vector<Tensor> cls_rows;
        std::vector<int> match_labels;
        for (size_t i = 0; i < batch; ++i) {
            CrossForward cross = pair_.online.cross_encode(text_hidden[i], image_hidden[i], {});
            cls_rows.push_back(slice(cross.hidden, 0, 0, 1));
            match_labels.push_back(1);
        }
        for (size_t i = 0; i < batch; ++i) {
            int neg = plan.samples[i].negative_index;
            if (neg < 0) continue;
            CrossForward cross =
                pair_.online.cross_encode(text_hidden[i], image_hidden[static_cast<size_t>(neg)], {});
            cls_rows.push_back(slice(cross.hidden, 0, 0, 1));
            match_labels.push_back(0);
        }
        Tensor logits = pair_.online.itm_logits(concat(cls_rows, 0));
        Tensor itm = itm_loss(logits, match_labels);
        out.report.itm = itm.value();
        terms.push_back(scale(itm, obj.weight_itm));
    }

    if (obj.weight_mlm > 0.0) {
        std::vector<Tensor> logit_parts;
        std::vector<int> targets;
        for (size_t i = 0; i < batch; ++i) {
            const SamplePlan& s = plan.samples[i];
            if (!s.has_mask) continue;
            Tensor masked_hidden = pair_.online.encode_text(s.masked.tokens, {}, false).hidden;
            CrossForward cross = pair_.online.cross_encode(masked_hidden, image_hidden[i], {});
            logit_parts.push_back(pair_.online.mlm_logits(cross.hidden, s.masked.positions));
            targets.insert(targets.end(), s.mlm_targets.begin(), s.mlm_targets.end());
        }
        if (!logit_parts.empty()) {
            Tensor mlm = mlm_loss(logit_parts.size() == 1 ? logit_parts[0] : concat(logit_parts, 0),
                                  targets);
            out.report.mlm = mlm.value();
            terms.push_back(scale(mlm, obj.weight_mlm));
        }
    }

    if (terms.empty()) {
        out.total = Tensor::scalar(0.0);
    } else {
        out.total = terms[0];
        for (size_t i = 1; i < terms.size(); ++i) out.total = add(out.total, terms[i]);
    }
    out.report.total = out.total.value();
    return out;
}

StepStats Trainer::train_step(const std::vector<size_t>& record_indices) {
    StepPlan plan = plan_step(record_indices);
    StepOutputs outputs = compute_losses(plan);

    StepStats stats;
    stats.step = ++step_count_;
    stats.losses = outputs.report;

    size_t masked_positions = 0, content_tokens = 0, vacuous_masked = 0;
    size_t tem_attempts = 0, tem_accepts = 0;
    for (const SamplePlan& s : plan.samples) {
        for (int id : s.tokens)
            if (corpus_->vocab.is_content(id)) ++content_tokens;
        masked_positions += s.masked.positions.size();
        for (int original : s.masked.originals)
            if (corpus_->vocab.is_vacuous(original)) ++vacuous_masked;
        if (s.has_mask && config_.tem.enabled) {
            ++tem_attempts;
            if (s.enriched.accepted) ++tem_accepts;
        }
    }
    stats.mask_rate = content_tokens ? static_cast<double>(masked_positions) / content_tokens : 0.0;
    if (masked_positions > 0)
        stats.ratio_v = static_cast<double>(vacuous_masked) / static_cast<double>(masked_positions);
    if (tem_attempts > 0)
        stats.tem_accept_rate = static_cast<double>(tem_accepts) / static_cast<double>(tem_attempts);

    if (!finite(outputs.report.total)) return stats; // leave parameters untouched

    optimizer_.zero_grad();
    backward(outputs.total);
    if (config_.train.grad_clip > 0.0) optimizer_.clip_gradients(config_.train.grad_clip);
    optimizer_.step();
    pair_.momentum_update();
    queue_.push(outputs.momentum_image_features, outputs.momentum_text_features, outputs.labels);
    return stats;
}

void Trainer::collect_dumps(const StepPlan& plan, std::vector<MaskDumpRecord>& sink) const {
    for (const SamplePlan& s : plan.samples) {
        if (config_.train.strategy == "baseline") continue;
        std::vector<std::string> actions(s.tokens.size());
        std::vector<bool> is_masked(s.tokens.size(), false);
        std::vector<int> original_at(s.tokens.size(), -1);
        for (size_t i = 0; i < s.masked.positions.size(); ++i) {
            is_masked[s.masked.positions[i]] = true;
            actions[s.masked.positions[i]] = mask_action_name(s.masked.actions[i]);
            original_at[s.masked.positions[i]] = s.masked.originals[i];
        }
        for (size_t pos = 0; pos < s.tokens.size(); ++pos) {
            if (!corpus_->vocab.is_content(s.tokens[pos])) continue;
            int word_id = is_masked[pos] ? original_at[pos] : s.tokens[pos];
            sink.push_back({static_cast<int>(s.record_index), pos, corpus_->vocab.word(word_id),
                            s.abar.empty() ? 0.0 : s.abar[pos], s.p.empty() ? 0.0 : s.p[pos],
                            is_masked[pos], actions[pos]});
        }
    }
}

TrainSummary Trainer::run() {
    TrainSummary summary;
    size_t batch_size = config_.train.batch_size;
    for (size_t epoch = 0; epoch < config_.train.epochs; ++epoch) {
        bool final_epoch = epoch + 1 == config_.train.epochs;
        std::vector<size_t> order = train_records_;
        Rng epoch_rng = shuffle_rng_.fork("epoch", epoch);
        epoch_rng.shuffle(order);
        for (size_t start = 0; start < order.size(); start += batch_size) {
            size_t end = std::min(start + batch_size, order.size());
            std::vector<size_t> batch(order.begin() + static_cast<long>(start),
                                      order.begin() + static_cast<long>(end));
            StepPlan plan = plan_step(batch);
            if (final_epoch) collect_dumps(plan, summary.final_epoch_dumps);

            StepOutputs outputs = compute_losses(plan);
            StepStats stats;
            stats.step = ++step_count_;
            stats.losses = outputs.report;

            size_t masked_positions = 0, content_tokens = 0, vacuous_masked = 0;
            size_t tem_attempts = 0, tem_accepts = 0;
            for (const SamplePlan& s : plan.samples) {
                for (int id : s.tokens)
                    if (corpus_->vocab.is_content(id)) ++content_tokens;
                masked_positions += s.masked.positions.size();
                for (int original : s.masked.originals)
                    if (corpus_->vocab.is_vacuous(original)) ++vacuous_masked;
                if (s.has_mask && config_.tem.enabled) {
                    ++tem_attempts;
                    if (s.enriched.accepted) ++tem_accepts;
                }
            }
            stats.mask_rate =
                content_tokens ? static_cast<double>(masked_positions) / content_tokens : 0.0;
            if (masked_positions > 0)
                stats.ratio_v = static_cast<double>(vacuous_masked) / static_cast<double>(masked_positions);
            if (tem_attempts > 0)
                stats.tem_accept_rate = static_cast<double>(tem_accepts) / static_cast<double>(tem_attempts);
            summary.log.push_back(stats);

            if (!finite(outputs.report.total)) {
                summary.diverged = true;
                return summary;
            }
            optimizer_.zero_grad();
            backward(outputs.total);
            if (config_.train.grad_clip > 0.0) optimizer_.clip_gradients(config_.train.grad_clip);
            optimizer_.step();
            pair_.momentum_update();
            queue_.push(outputs.momentum_image_features, outputs.momentum_text_features, outputs.labels);
        }
    }
    return summary;
}

} // namespace aga
