#include "aga/objectives.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>

namespace aga {

void ObjectivesConfig::validate() const {
    if (!(temperature_itc > 0.0))
        throw std::invalid_argument("objectives.temperature_itc must be positive");
    if (momentum < 0.0 || momentum > 1.0)
        throw std::invalid_argument("objectives.momentum must lie in [0, 1]");
    if (weight_itc < 0.0 || weight_itc_distill < 0.0 || weight_itm < 0.0 || weight_mlm < 0.0)
        throw std::invalid_argument("objectives loss weights must be non-negative");
}

namespace {

void check_unit_rows(const char* op, const Tensor& rows) {
    for (size_t i = 0; i < rows.rows(); ++i) {
        double s = 0.0;
        for (size_t j = 0; j < rows.cols(); ++j) s += rows.at(i, j) * rows.at(i, j);
        if (std::abs(std::sqrt(s) - 1.0) > 1e-6)
            throw std::invalid_argument(std::string(op) + ": row " + std::to_string(i) +
                                        " is not unit-normalized");
    }
}

} // namespace

FeatureQueue::FeatureQueue(size_t capacity, size_t dim) : capacity_(capacity), dim_(dim) {}

void FeatureQueue::push(const Tensor& image_rows, const Tensor& text_rows,
                        const std::vector<int>& labels) {
    if (capacity_ == 0) return; // degenerates to in-batch-only contrastive
    if (image_rows.rows() != labels.size() || text_rows.rows() != labels.size() ||
        image_rows.cols() != dim_ || text_rows.cols() != dim_)
        throw std::invalid_argument("queue: feature/label shape mismatch");
    if (image_rows.requires_grad() || text_rows.requires_grad())
        throw std::invalid_argument("queue: features must be detached momentum outputs");
    check_unit_rows("queue", image_rows);
    check_unit_rows("queue", text_rows);
    for (size_t i = 0; i < labels.size(); ++i) {
        Entry e;
        e.image.assign(image_rows.data().begin() + i * dim_, image_rows.data().begin() + (i + 1) * dim_);
        e.text.assign(text_rows.data().begin() + i * dim_, text_rows.data().begin() + (i + 1) * dim_);
        e.label = labels[i];
        entries_.push_back(std::move(e));
        if (entries_.size() > capacity_) entries_.pop_front();
    }
}

Tensor FeatureQueue::image_features() const {
    Tensor out({std::max<size_t>(entries_.size(), 1), dim_}, 0.0);
    for (size_t i = 0; i < entries_.size(); ++i)
        std::copy(entries_[i].image.begin(), entries_[i].image.end(), out.data().begin() + i * dim_);
    return out;
}

Tensor FeatureQueue::text_features() const {
    Tensor out({std::max<size_t>(entries_.size(), 1), dim_}, 0.0);
    for (size_t i = 0; i < entries_.size(); ++i)
        std::copy(entries_[i].text.begin(), entries_[i].text.end(), out.data().begin() + i * dim_);
    return out;
}

std::vector<int> FeatureQueue::labels() const {
    std::vector<int> out;
    out.reserve(entries_.size());
    for (const Entry& e : entries_) out.push_back(e.label);
    return out;
}

namespace {

Tensor multi_hot_targets(const std::vector<int>& query_labels, const std::vector<int>& candidate_labels) {
    Tensor targets({query_labels.size(), candidate_labels.size()}, 0.0);
    for (size_t i = 0; i < query_labels.size(); ++i) {
        size_t positives = 0;
        for (size_t j = 0; j < candidate_labels.size(); ++j)
            if (candidate_labels[j] == query_labels[i]) ++positives;
        if (positives == 0)
            throw std::invalid_argument("itc: query " + std::to_string(i) + " has no positive candidate");
        double w = 1.0 / static_cast<double>(positives);
        for (size_t j = 0; j < candidate_labels.size(); ++j)
            if (candidate_labels[j] == query_labels[i]) targets.at(i, j) = w;
    }
    return targets;
}

} // namespace

ItcOutputs itc_loss(const Tensor& text_features, const Tensor& image_features,
                    const FeatureQueue& queue, const std::vector<int>& labels, double tau) {
    if (!(tau > 0.0)) throw std::invalid_argument("itc: temperature must be positive");
    if (text_features.shape() != image_features.shape())
        throw std::invalid_argument("itc: feature shape mismatch " +
                                    shape_to_string(text_features.shape()) + " vs " +
                                    shape_to_string(image_features.shape()));
    if (text_features.rows() != labels.size())
        throw std::invalid_argument("itc: label count mismatch");
    check_unit_rows("itc", text_features);
    check_unit_rows("itc", image_features);

    ItcOutputs out;
    out.candidate_labels = labels;
    Tensor image_candidates = image_features;
    Tensor text_candidates = text_features;
    if (queue.size() > 0) {
        if (queue.dim() != text_features.cols())
            throw std::invalid_argument("itc: queue dimension mismatch");
        image_candidates = concat({image_features, queue.image_features()}, 0);
        text_candidates = concat({text_features, queue.text_features()}, 0);
        for (int label : queue.labels()) out.candidate_labels.push_back(label);
    }

    Tensor targets = multi_hot_targets(labels, out.candidate_labels);
    Tensor logits_t2i = scale(matmul(text_features, transpose(image_candidates)), 1.0 / tau);
    Tensor logits_i2t = scale(matmul(image_features, transpose(text_candidates)), 1.0 / tau);

    out.loss = scale(add(cross_entropy(logits_t2i, targets), cross_entropy(logits_i2t, targets)), 0.5);
    out.p_t2i = softmax(logits_t2i, 1.0, 1);
    out.p_i2t = softmax(logits_i2t, 1.0, 1);
    out.targets_t2i = targets.data();
    out.targets_i2t = targets.data();
    return out;
}

Tensor itc_distill_loss(const Tensor& p_t2i, const Tensor& p_i2t, const Tensor& q_t2i,
                        const Tensor& q_i2t) {
    if (p_t2i.shape() != q_t2i.shape() || p_i2t.shape() != q_i2t.shape())
        throw std::invalid_argument("itc_distill: candidate-set mismatch between online and momentum "
                                    "distributions");
    return scale(add(kl_divergence(q_t2i, p_t2i), kl_divergence(q_i2t, p_i2t)), 0.5);
}

Tensor itm_loss(const Tensor& logits, const std::vector<int>& match_labels) {
    if (logits.rank() != 2 || logits.cols() != 2)
        throw std::invalid_argument("itm: logits must be (n, 2), got " + shape_to_string(logits.shape()));
    if (logits.rows() != match_labels.size())
        throw std::invalid_argument("itm: label count mismatch");
    Tensor targets({match_labels.size(), 2}, 0.0);
    for (size_t i = 0; i < match_labels.size(); ++i) {
        if (match_labels[i] != 0 && match_labels[i] != 1)
            throw std::invalid_argument("itm: match labels must be 0 or 1");
        targets.at(i, match_labels[i] == 1 ? 1 : 0) = 1.0;
    }
    return cross_entropy(logits, targets);
}

std::vector<int> pick_negative_images(const std::vector<double>& sim_t2i, size_t batch,
                                      const std::vector<int>& labels, bool hard, Rng& rng) {
    if (labels.size() != batch || sim_t2i.size() != batch * batch)
        throw std::invalid_argument("pick_negative_images: shape mismatch");
    bool use_hard = hard && batch >= 3;
    std::vector<int> negatives(batch, -1);
    for (size_t i = 0; i < batch; ++i) {
        std::vector<size_t> valid;
        for (size_t j = 0; j < batch; ++j)
            if (labels[j] != labels[i]) valid.push_back(j);
        if (valid.empty()) continue; // single-identity batch: no negative available
        if (use_hard) {
            size_t best = valid[0];
            for (size_t j : valid)
                if (sim_t2i[i * batch + j] > sim_t2i[i * batch + best]) best = j;
            negatives[i] = static_cast<int>(best);
        } else {
            negatives[i] = static_cast<int>(valid[rng.uniform_index(valid.size())]);
        }
    }
    return negatives;
}

Tensor mlm_loss(const Tensor& logits, const std::vector<int>& target_ids) {
    if (logits.rank() != 2 || logits.rows() != target_ids.size())
        throw std::invalid_argument("mlm: " + std::to_string(target_ids.size()) +
                                    " targets for logits " + shape_to_string(logits.shape()));
    Tensor targets({target_ids.size(), logits.cols()}, 0.0);
    for (size_t i = 0; i < target_ids.size(); ++i) {
        if (target_ids[i] < 0 || static_cast<size_t>(target_ids[i]) >= logits.cols())
            throw std::invalid_argument("mlm: target id " + std::to_string(target_ids[i]) +
                                        " outside vocabulary of " + std::to_string(logits.cols()));
        targets.at(i, static_cast<size_t>(target_ids[i])) = 1.0;
    }
    return cross_entropy(logits, targets);
}

ModelPair ModelPair::init(const EncoderConfig& config, Rng& rng, double momentum_coefficient) {
    ModelPair pair;
    pair.online = Model::init(config, rng);
    pair.momentum = pair.online.clone(false);
    pair.momentum_coefficient = momentum_coefficient;
    return pair;
}

void ModelPair::momentum_update() {
    std::vector<Tensor*> online_params;
    online.visit_params([&](const std::string&, Tensor& t) { online_params.push_back(&t); });
    size_t i = 0;
    double m = momentum_coefficient;
    momentum.visit_params([&](const std::string& name, Tensor& t) {
        if (i >= online_params.size() || online_params[i]->shape() != t.shape())
            throw std::invalid_argument("momentum_update: parameter shape drift at " + name);
        const auto& src = online_params[i]->data();
        auto& dst = t.data();
        for (size_t k = 0; k < dst.size(); ++k) dst[k] = m * dst[k] + (1.0 - m) * src[k];
        ++i;
    });
}

AdamW::AdamW(Model& model, double lr, double weight_decay, double beta1, double beta2, double eps)
    : lr_(lr), weight_decay_(weight_decay), beta1_(beta1), beta2_(beta2), eps_(eps) {
    model.visit_params([&](const std::string&, Tensor& t) { params_.push_back(t); });
    m_.resize(params_.size());
    v_.resize(params_.size());
    for (size_t i = 0; i < params_.size(); ++i) {
        m_[i].assign(params_[i].numel(), 0.0);
        v_[i].assign(params_[i].numel(), 0.0);
    }
}

void AdamW::zero_grad() {
    for (Tensor& p : params_) p.zero_grad();
}

void AdamW::clip_gradients(double max_norm) {
    double total = 0.0;
    for (Tensor& p : params_) {
        if (!p.has_grad()) continue;
        for (double g : p.grad()) total += g * g;
    }
    total = std::sqrt(total);
    if (total <= max_norm || total == 0.0) return;
    double factor = max_norm / total;
    for (Tensor& p : params_) {
        if (!p.has_grad()) continue;
        for (double& g : p.node()->grad) g *= factor;
    }
}

void AdamW::step() {
    ++steps_;
    double bc1 = 1.0 - std::pow(beta1_, static_cast<double>(steps_));
    double bc2 = 1.0 - std::pow(beta2_, static_cast<double>(steps_));
    for (size_t i = 0; i < params_.size(); ++i) {
        Tensor& p = params_[i];
        if (!p.has_grad()) continue;
        const auto& g = p.grad();
        auto& data = p.data();
        for (size_t k = 0; k < data.size(); ++k) {
            m_[i][k] = beta1_ * m_[i][k] + (1.0 - beta1_) * g[k];
            v_[i][k] = beta2_ * v_[i][k] + (1.0 - beta2_) * g[k] * g[k];
            double mhat = m_[i][k] / bc1;
            double vhat = v_[i][k] / bc2;
            data[k] -= lr_ * (mhat / (std::sqrt(vhat) + eps_) + weight_decay_ * data[k]);
        }
    }
}

} // namespace aga
