#pragma once

#include <cstddef>
#include <algorithm>
#include <functional>
#include <initializer_list>
#include <memory>
#include <span>
#include <string>
#include <vector>

namespace aga {

/// One node of the computation tape: the value buffer plus everything the
/// reverse pass needs (parent links and the backward rule closure). The tape
/// is a DAG; `backward` visits each reachable node exactly once in reverse
/// topological order.
struct TensorNode {
    std::vector<size_t> shape;
    std::vector<double> data;
    std::vector<double> grad; // empty until first written
    bool requires_grad = false;
    const char* op = "leaf";
    std::vector<std::shared_ptr<TensorNode>> parents;
    std::function<void(TensorNode&)> backward_fn;

    size_t numel() const { return data.size(); }
    void ensure_grad() {
        if (grad.empty()) grad.assign(data.size(), 0.0);
    }
    void zero_grad_buffer() {
        std::fill(grad.begin(), grad.end(), 0.0);
    }
};

/// Dense 64-bit float tensor with reverse-mode gradient tape participation.
/// Value-semantic handle to a shared node; copying a Tensor aliases the node.
/// Row-major storage. Rank 1 and 2 are what the model code uses.
class Tensor {
public:
    Tensor() = default;
    explicit Tensor(std::vector<size_t> shape, double fill = 0.0);
    Tensor(std::vector<size_t> shape, std::vector<double> values);

    static Tensor scalar(double v);
    static Tensor row(std::vector<double> values);                     // shape {n}
    static Tensor matrix(size_t rows, size_t cols, std::vector<double> values);

    bool defined() const { return node_ != nullptr; }
    const std::vector<size_t>& shape() const { return node_->shape; }
    size_t rank() const { return node_->shape.size(); }
    size_t numel() const { return node_->data.size(); }
    size_t dim(size_t i) const { return node_->shape.at(i); }
    size_t rows() const;
    size_t cols() const;

    std::vector<double>& data() { return node_->data; }
    const std::vector<double>& data() const { return node_->data; }
    double& at(size_t i) { return node_->data.at(i); }
    double at(size_t i) const { return node_->data.at(i); }
    double& at(size_t i, size_t j);
    double at(size_t i, size_t j) const;

    /// Value of a single-element tensor.
    double value() const;

    bool requires_grad() const { return node_->requires_grad; }
    Tensor& set_requires_grad(bool v);

    bool has_grad() const { return !node_->grad.empty(); }
    const std::vector<double>& grad() const;
    void zero_grad();

    TensorNode* node() const { return node_.get(); }
    const std::shared_ptr<TensorNode>& node_ptr() const { return node_; }

private:
    explicit Tensor(std::shared_ptr<TensorNode> node) : node_(std::move(node)) {}
    std::shared_ptr<TensorNode> node_;

    friend Tensor wrap_node(std::shared_ptr<TensorNode> node);
};

/// Internal: adopt a manually built node. Used by the op implementations.
Tensor wrap_node(std::shared_ptr<TensorNode> node);

std::string shape_to_string(const std::vector<size_t>& shape);

// ---- elementwise and structural operations -------------------------------

Tensor add(const Tensor& a, const Tensor& b);
Tensor sub(const Tensor& a, const Tensor& b);
Tensor mul(const Tensor& a, const Tensor& b);
Tensor scale(const Tensor& a, double c);

/// Broadcast-add a length-C vector to every row of an (R, C) matrix.
Tensor add_rows(const Tensor& m, const Tensor& v);

Tensor matmul(const Tensor& a, const Tensor& b);
Tensor transpose(const Tensor& a);

Tensor concat(const std::vector<Tensor>& parts, int axis);
Tensor slice(const Tensor& a, int axis, size_t begin, size_t end);

/// Gather rows of a 2-D tensor; gradients scatter-add back.
Tensor gather_rows(const Tensor& a, const std::vector<size_t>& indices);

/// Rows of an embedding table selected by token id.
Tensor embedding_lookup(const Tensor& table, const std::vector<int>& ids);

Tensor sum_all(const Tensor& a);
Tensor mean_all(const Tensor& a);

Tensor gelu(const Tensor& a);

/// Row-wise layer normalization over the last axis with learned gain/bias.
Tensor layer_norm(const Tensor& x, const Tensor& gain, const Tensor& bias,
                  double eps = 1e-5);

/// Row-wise L2 normalization over the last axis.
Tensor l2_normalize_rows(const Tensor& x);

/// Temperature softmax along `axis` (negative counts from the end). Uses
/// log-sum-exp stabilization; slices sum to 1 up to rounding.
Tensor softmax(const Tensor& x, double temperature = 1.0, int axis = -1);

/// Mean over rows of H(target_row, softmax(logit_row)). Targets are treated
/// as constants (no gradient); each target row must be a probability vector.
Tensor cross_entropy(const Tensor& logits, const Tensor& targets);

/// Mean over rows of KL(q || p) = sum q (log q - log p), with p floored at
/// 1e-12 before the log. q is a detached target: gradient flows only into p.
Tensor kl_divergence(const Tensor& q, const Tensor& p);

/// Reverse pass from a scalar loss. Populates `grad` on every requires_grad
/// tensor reachable through the tape, visiting each node exactly once.
void backward(const Tensor& loss);

/// While alive, operations produce detached results: no parents, no backward
/// closures. Nestable; thread-local.
struct NoGradGuard {
    NoGradGuard();
    ~NoGradGuard();
    NoGradGuard(const NoGradGuard&) = delete;
    NoGradGuard& operator=(const NoGradGuard&) = delete;
};

bool grad_enabled();

constexpr double kLogEps = 1e-12;

} // namespace aga
