#pragma once

#include <deque>
#include <vector>

#include "aga/encoders.hpp"
#include "aga/rng.hpp"
#include "aga/tensor.hpp"

namespace aga {

struct ObjectivesConfig {
    double temperature_itc = 0.07;
    double momentum = 0.995; // EMA coefficient of the momentum model
    size_t queue_capacity = 1024;
    double weight_itc = 1.0;
    double weight_itc_distill = 1.0;
    double weight_itm = 1.0;
    double weight_mlm = 1.0;
    bool hard_negatives = true;

    void validate() const;
};

/// FIFO ring of momentum-encoded global features with identity labels, shared
/// between both modalities so the contrastive candidate sets stay aligned.
class FeatureQueue {
public:
    FeatureQueue(size_t capacity, size_t dim);

    /// Rows must be unit-normalized and detached (momentum features).
    void push(const Tensor& image_rows, const Tensor& text_rows, const std::vector<int>& labels);

    size_t size() const { return entries_.size(); }
    size_t capacity() const { return capacity_; }
    size_t dim() const { return dim_; }

    /// Snapshots in queue order (oldest first); no gradient participation.
    Tensor image_features() const;
    Tensor text_features() const;
    std::vector<int> labels() const;

private:
    struct Entry {
        std::vector<double> image, text;
        int label;
    };
    size_t capacity_;
    size_t dim_;
    std::deque<Entry> entries_;
};

struct ItcOutputs {
    Tensor loss;
    Tensor p_t2i, p_i2t;               // softmax over batch+queue candidates
    std::vector<double> targets_t2i;   // row-major, same shape as p_t2i
    std::vector<double> targets_i2t;
    std::vector<int> candidate_labels; // batch labels followed by queue labels
};

/// Bidirectional contrastive loss over in-batch plus queued candidates.
/// Targets are one-hot on the matching pair, extended to a normalized
/// multi-hot row when other candidates share the query's identity.
ItcOutputs itc_loss(const Tensor& text_features, const Tensor& image_features,
                    const FeatureQueue& queue, const std::vector<int>& labels, double tau);

/// Mean of the two KL terms between the momentum distributions q and the
/// online distributions p; gradient reaches only the online path.
Tensor itc_distill_loss(const Tensor& p_t2i, const Tensor& p_i2t, const Tensor& q_t2i,
                        const Tensor& q_i2t);

/// Binary match/mismatch cross-entropy over ITM head logits (n, 2);
/// match_labels[i] is 1 for a matched pair.
Tensor itm_loss(const Tensor& logits, const std::vector<int>& match_labels);

/// In-batch negative image per text query: a candidate with a different
/// identity, the highest-similarity one when `hard` (batches of at least 3),
/// uniform otherwise. -1 when no valid candidate exists.
std::vector<int> pick_negative_images(const std::vector<double>& sim_t2i, size_t batch,
                                      const std::vector<int>& labels, bool hard, Rng& rng);

/// Mean cross-entropy of vocabulary logits at masked positions against the
/// original token ids.
Tensor mlm_loss(const Tensor& logits, const std::vector<int>& target_ids);

struct LossReport {
    double itc = 0.0;
    double itc_distill = 0.0;
    double itm = 0.0;
    double mlm = 0.0;
    double total = 0.0;
};

/// Online model plus its EMA shadow. Momentum parameters never require
/// gradients.
struct ModelPair {
    Model online;
    Model momentum;
    double momentum_coefficient = 0.995;

    static ModelPair init(const EncoderConfig& config, Rng& rng, double momentum_coefficient);

    /// theta_m <- m * theta_m + (1 - m) * theta_online, elementwise.
    void momentum_update();
};

/// Decoupled-weight-decay adaptive optimizer over a model's parameters.
class AdamW {
public:
    AdamW() = default; // unbound; step() is a no-op
    AdamW(Model& model, double lr, double weight_decay, double beta1 = 0.9, double beta2 = 0.999,
          double eps = 1e-8);

    void zero_grad();
    void step();

    /// Scales gradients so their global L2 norm is at most `max_norm`.
    void clip_gradients(double max_norm);

    double lr() const { return lr_; }
    void set_lr(double lr) { lr_ = lr; }

private:
    std::vector<Tensor> params_;
    std::vector<std::vector<double>> m_, v_;
    double lr_, weight_decay_, beta1_, beta2_, eps_;
    size_t steps_ = 0;
};

} // namespace aga
