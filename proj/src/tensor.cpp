#include "aga/tensor.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <stdexcept>
#include <unordered_set>

namespace aga {

namespace {

size_t shape_numel(const std::vector<size_t>& shape) {
    size_t n = 1;
    for (size_t d : shape) {
        if (d == 0) throw std::invalid_argument("tensor: zero extent in shape " + shape_to_string(shape));
        n *= d;
    }
    return n;
}

void check_same_shape(const char* op, const Tensor& a, const Tensor& b) {
    if (a.shape() != b.shape()) {
        throw std::invalid_argument(std::string(op) + ": shape mismatch " +
                                    shape_to_string(a.shape()) + " vs " + shape_to_string(b.shape()));
    }
}

// Dense kernels on raw buffers.
// C = A(m,k) * B(k,n)
void mm_nn(const double* a, const double* b, double* c, size_t m, size_t k, size_t n, bool accumulate) {
    for (size_t i = 0; i < m; ++i) {
        double* crow = c + i * n;
        if (!accumulate) std::fill(crow, crow + n, 0.0);
        const double* arow = a + i * k;
        for (size_t p = 0; p < k; ++p) {
            double av = arow[p];
            const double* brow = b + p * n;
            for (size_t j = 0; j < n; ++j) crow[j] += av * brow[j];
        }
    }
}

// C = A(m,k) * B(n,k)^T
void mm_nt(const double* a, const double* b, double* c, size_t m, size_t k, size_t n, bool accumulate) {
    for (size_t i = 0; i < m; ++i) {
        const double* arow = a + i * k;
        double* crow = c + i * n;
        for (size_t j = 0; j < n; ++j) {
            const double* brow = b + j * k;
            double s = 0.0;
            for (size_t p = 0; p < k; ++p) s += arow[p] * brow[p];
            if (accumulate) crow[j] += s; else crow[j] = s;
        }
    }
}

// C = A(k,m)^T * B(k,n)
void mm_tn(const double* a, const double* b, double* c, size_t m, size_t k, size_t n, bool accumulate) {
    if (!accumulate) std::fill(c, c + m * n, 0.0);
    for (size_t p = 0; p < k; ++p) {
        const double* arow = a + p * m;
        const double* brow = b + p * n;
        for (size_t i = 0; i < m; ++i) {
            double av = arow[i];
            double* crow = c + i * n;
            for (size_t j = 0; j < n; ++j) crow[j] += av * brow[j];
        }
    }
}

thread_local int no_grad_depth = 0;

std::shared_ptr<TensorNode> make_node(std::vector<size_t> shape, const char* op,
                                      const std::vector<Tensor>& inputs) {
    auto node = std::make_shared<TensorNode>();
    size_t n = shape_numel(shape);
    node->shape = std::move(shape);
    node->data.assign(n, 0.0);
    node->op = op;
    if (no_grad_depth == 0) {
        for (const Tensor& t : inputs) {
            if (t.requires_grad()) node->requires_grad = true;
        }
    }
    if (node->requires_grad) {
        for (const Tensor& t : inputs) node->parents.push_back(t.node_ptr());
    }
    return node;
}

} // namespace

NoGradGuard::NoGradGuard() { ++no_grad_depth; }
NoGradGuard::~NoGradGuard() { --no_grad_depth; }
bool grad_enabled() { return no_grad_depth == 0; }

std::string shape_to_string(const std::vector<size_t>& shape) {
    std::string s = "(";
    for (size_t i = 0; i < shape.size(); ++i) {
        if (i) s += "x";
        s += std::to_string(shape[i]);
    }
    s += ")";
    return s;
}

Tensor wrap_node(std::shared_ptr<TensorNode> node) { return Tensor(std::move(node)); }

Tensor::Tensor(std::vector<size_t> shape, double fill) {
    node_ = std::make_shared<TensorNode>();
    size_t n = shape_numel(shape);
    node_->shape = std::move(shape);
    node_->data.assign(n, fill);
}

Tensor::Tensor(std::vector<size_t> shape, std::vector<double> values) {
    size_t n = shape_numel(shape);
    if (n != values.size()) {
        throw std::invalid_argument("tensor: shape " + shape_to_string(shape) + " expects " +
                                    std::to_string(n) + " values, got " + std::to_string(values.size()));
    }
    node_ = std::make_shared<TensorNode>();
    node_->shape = std::move(shape);
    node_->data = std::move(values);
}

Tensor Tensor::scalar(double v) { return Tensor({1}, std::vector<double>{v}); }

Tensor Tensor::row(std::vector<double> values) {
    size_t n = values.size();
    return Tensor({n}, std::move(values));
}

Tensor Tensor::matrix(size_t rows, size_t cols, std::vector<double> values) {
    return Tensor({rows, cols}, std::move(values));
}

size_t Tensor::rows() const {
    if (rank() != 2) throw std::invalid_argument("tensor: rows() on shape " + shape_to_string(shape()));
    return node_->shape[0];
}

size_t Tensor::cols() const {
    if (rank() != 2) throw std::invalid_argument("tensor: cols() on shape " + shape_to_string(shape()));
    return node_->shape[1];
}

double& Tensor::at(size_t i, size_t j) { return node_->data.at(i * cols() + j); }
double Tensor::at(size_t i, size_t j) const { return node_->data.at(i * cols() + j); }

double Tensor::value() const {
    if (numel() != 1) {
        throw std::invalid_argument("tensor: value() requires a single element, shape is " +
                                    shape_to_string(shape()));
    }
    return node_->data[0];
}

Tensor& Tensor::set_requires_grad(bool v) {
    node_->requires_grad = v;
    return *this;
}

const std::vector<double>& Tensor::grad() const {
    if (node_->grad.empty()) throw std::runtime_error("tensor: gradient not populated; run backward first");
    return node_->grad;
}

void Tensor::zero_grad() {
    std::fill(node_->grad.begin(), node_->grad.end(), 0.0);
}

// ---- elementwise ----------------------------------------------------------

Tensor add(const Tensor& a, const Tensor& b) {
    check_same_shape("add", a, b);
    auto node = make_node(a.shape(), "add", {a, b});
    const auto& av = a.data();
    const auto& bv = b.data();
    for (size_t i = 0; i < node->data.size(); ++i) node->data[i] = av[i] + bv[i];
    if (node->requires_grad) {
        TensorNode* an = a.node();
        TensorNode* bn = b.node();
        node->backward_fn = [an, bn](TensorNode& self) {
            if (an->requires_grad) {
                an->ensure_grad();
                for (size_t i = 0; i < self.grad.size(); ++i) an->grad[i] += self.grad[i];
            }
            if (bn->requires_grad) {
                bn->ensure_grad();
                for (size_t i = 0; i < self.grad.size(); ++i) bn->grad[i] += self.grad[i];
            }
        };
    }
    return wrap_node(std::move(node));
}

Tensor sub(const Tensor& a, const Tensor& b) {
    check_same_shape("sub", a, b);
    auto node = make_node(a.shape(), "sub", {a, b});
    const auto& av = a.data();
    const auto& bv = b.data();
    for (size_t i = 0; i < node->data.size(); ++i) node->data[i] = av[i] - bv[i];
    if (node->requires_grad) {
        TensorNode* an = a.node();
        TensorNode* bn = b.node();
        node->backward_fn = [an, bn](TensorNode& self) {
            if (an->requires_grad) {
                an->ensure_grad();
                for (size_t i = 0; i < self.grad.size(); ++i) an->grad[i] += self.grad[i];
            }
            if (bn->requires_grad) {
                bn->ensure_grad();
                for (size_t i = 0; i < self.grad.size(); ++i) bn->grad[i] -= self.grad[i];
            }
        };
    }
    return wrap_node(std::move(node));
}

Tensor mul(const Tensor& a, const Tensor& b) {
    check_same_shape("mul", a, b);
    auto node = make_node(a.shape(), "mul", {a, b});
    const auto& av = a.data();
    const auto& bv = b.data();
    for (size_t i = 0; i < node->data.size(); ++i) node->data[i] = av[i] * bv[i];
    if (node->requires_grad) {
        TensorNode* an = a.node();
        TensorNode* bn = b.node();
        node->backward_fn = [an, bn](TensorNode& self) {
            if (an->requires_grad) {
                an->ensure_grad();
                for (size_t i = 0; i < self.grad.size(); ++i) an->grad[i] += self.grad[i] * bn->data[i];
            }
            if (bn->requires_grad) {
                bn->ensure_grad();
                for (size_t i = 0; i < self.grad.size(); ++i) bn->grad[i] += self.grad[i] * an->data[i];
            }
        };
    }
    return wrap_node(std::move(node));
}

Tensor scale(const Tensor& a, double c) {
    auto node = make_node(a.shape(), "scale", {a});
    const auto& av = a.data();
    for (size_t i = 0; i < node->data.size(); ++i) node->data[i] = av[i] * c;
    if (node->requires_grad) {
        TensorNode* an = a.node();
        node->backward_fn = [an, c](TensorNode& self) {
            an->ensure_grad();
            for (size_t i = 0; i < self.grad.size(); ++i) an->grad[i] += self.grad[i] * c;
        };
    }
    return wrap_node(std::move(node));
}

Tensor add_rows(const Tensor& m, const Tensor& v) {
    if (m.rank() != 2 || v.rank() != 1 || v.dim(0) != m.cols()) {
        throw std::invalid_argument("add_rows: incompatible shapes " + shape_to_string(m.shape()) +
                                    " vs " + shape_to_string(v.shape()));
    }
    size_t rows = m.rows(), cols = m.cols();
    auto node = make_node(m.shape(), "add_rows", {m, v});
    const auto& mv = m.data();
    const auto& vv = v.data();
    for (size_t i = 0; i < rows; ++i)
        for (size_t j = 0; j < cols; ++j) node->data[i * cols + j] = mv[i * cols + j] + vv[j];
    if (node->requires_grad) {
        TensorNode* mn = m.node();
        TensorNode* vn = v.node();
        node->backward_fn = [mn, vn, rows, cols](TensorNode& self) {
            if (mn->requires_grad) {
                mn->ensure_grad();
                for (size_t i = 0; i < self.grad.size(); ++i) mn->grad[i] += self.grad[i];
            }
            if (vn->requires_grad) {
                vn->ensure_grad();
                for (size_t i = 0; i < rows; ++i)
                    for (size_t j = 0; j < cols; ++j) vn->grad[j] += self.grad[i * cols + j];
            }
        };
    }
    return wrap_node(std::move(node));
}

// ---- matmul / transpose ---------------------------------------------------

Tensor matmul(const Tensor& a, const Tensor& b) {
    if (a.rank() != 2 || b.rank() != 2 || a.cols() != b.rows()) {
        throw std::invalid_argument("matmul: dimension mismatch " + shape_to_string(a.shape()) +
                                    " vs " + shape_to_string(b.shape()));
    }
    size_t m = a.rows(), k = a.cols(), n = b.cols();
    auto node = make_node({m, n}, "matmul", {a, b});
    mm_nn(a.data().data(), b.data().data(), node->data.data(), m, k, n, false);
    if (node->requires_grad) {
        TensorNode* an = a.node();
        TensorNode* bn = b.node();
        node->backward_fn = [an, bn, m, k, n](TensorNode& self) {
            if (an->requires_grad) {
                an->ensure_grad(); // dA = dC * B^T
                mm_nt(self.grad.data(), bn->data.data(), an->grad.data(), m, n, k, true);
            }
            if (bn->requires_grad) {
                bn->ensure_grad(); // dB = A^T * dC
                mm_tn(an->data.data(), self.grad.data(), bn->grad.data(), k, m, n, true);
            }
        };
    }
    return wrap_node(std::move(node));
}

Tensor transpose(const Tensor& a) {
    if (a.rank() != 2) {
        throw std::invalid_argument("transpose: rank-2 tensor required, got " + shape_to_string(a.shape()));
    }
    size_t r = a.rows(), c = a.cols();
    auto node = make_node({c, r}, "transpose", {a});
    const auto& av = a.data();
    for (size_t i = 0; i < r; ++i)
        for (size_t j = 0; j < c; ++j) node->data[j * r + i] = av[i * c + j];
    if (node->requires_grad) {
        TensorNode* an = a.node();
        node->backward_fn = [an, r, c](TensorNode& self) {
            an->ensure_grad();
            for (size_t i = 0; i < r; ++i)
                for (size_t j = 0; j < c; ++j) an->grad[i * c + j] += self.grad[j * r + i];
        };
    }
    return wrap_node(std::move(node));
}

// ---- structure ------------------------------------------------------------

Tensor concat(const std::vector<Tensor>& parts, int axis) {
    if (parts.empty()) throw std::invalid_argument("concat: no inputs");
    if (axis != 0 && axis != 1) throw std::invalid_argument("concat: axis must be 0 or 1");
    for (const Tensor& t : parts) {
        if (t.rank() != 2)
            throw std::invalid_argument("concat: rank-2 tensors required, got " + shape_to_string(t.shape()));
    }
    size_t rows = parts[0].rows(), cols = parts[0].cols();
    if (axis == 0) {
        rows = 0;
        for (const Tensor& t : parts) {
            if (t.cols() != cols)
                throw std::invalid_argument("concat: column mismatch " + shape_to_string(parts[0].shape()) +
                                            " vs " + shape_to_string(t.shape()));
            rows += t.rows();
        }
    } else {
        cols = 0;
        for (const Tensor& t : parts) {
            if (t.rows() != rows)
                throw std::invalid_argument("concat: row mismatch " + shape_to_string(parts[0].shape()) +
                                            " vs " + shape_to_string(t.shape()));
            cols += t.cols();
        }
    }

    auto node = make_node({rows, cols}, "concat", parts);
    if (axis == 0) {
        size_t row_off = 0;
        for (const Tensor& t : parts) {
            std::copy(t.data().begin(), t.data().end(), node->data.begin() + row_off * cols);
            row_off += t.rows();
        }
    } else {
        size_t col_off = 0;
        for (const Tensor& t : parts) {
            size_t tc = t.cols();
            for (size_t i = 0; i < rows; ++i)
                std::copy(t.data().begin() + i * tc, t.data().begin() + (i + 1) * tc,
                          node->data.begin() + i * cols + col_off);
            col_off += tc;
        }
    }

    if (node->requires_grad) {
        std::vector<TensorNode*> part_nodes;
        std::vector<size_t> part_rows, part_cols;
        for (const Tensor& t : parts) {
            part_nodes.push_back(t.node());
            part_rows.push_back(t.rows());
            part_cols.push_back(t.cols());
        }
        node->backward_fn = [part_nodes, part_rows, part_cols, axis, rows, cols](TensorNode& self) {
            if (axis == 0) {
                size_t row_off = 0;
                for (size_t pi = 0; pi < part_nodes.size(); ++pi) {
                    TensorNode* pn = part_nodes[pi];
                    if (pn->requires_grad) {
                        pn->ensure_grad();
                        size_t count = part_rows[pi] * cols;
                        for (size_t i = 0; i < count; ++i) pn->grad[i] += self.grad[row_off * cols + i];
                    }
                    row_off += part_rows[pi];
                }
            } else {
                size_t col_off = 0;
                for (size_t pi = 0; pi < part_nodes.size(); ++pi) {
                    TensorNode* pn = part_nodes[pi];
                    size_t tc = part_cols[pi];
                    if (pn->requires_grad) {
                        pn->ensure_grad();
                        for (size_t i = 0; i < rows; ++i)
                            for (size_t j = 0; j < tc; ++j)
                                pn->grad[i * tc + j] += self.grad[i * cols + col_off + j];
                    }
                    col_off += tc;
                }
            }
        };
    }
    return wrap_node(std::move(node));
}

Tensor slice(const Tensor& a, int axis, size_t begin, size_t end) {
    if (a.rank() != 2) throw std::invalid_argument("slice: rank-2 tensor required, got " + shape_to_string(a.shape()));
    if (axis != 0 && axis != 1) throw std::invalid_argument("slice: axis must be 0 or 1");
    size_t extent = a.dim(static_cast<size_t>(axis));
    if (begin >= end || end > extent) {
        throw std::invalid_argument("slice: range [" + std::to_string(begin) + ", " + std::to_string(end) +
                                    ") invalid for shape " + shape_to_string(a.shape()));
    }
    size_t rows = a.rows(), cols = a.cols();
    size_t out_rows = axis == 0 ? end - begin : rows;
    size_t out_cols = axis == 1 ? end - begin : cols;
    auto node = make_node({out_rows, out_cols}, "slice", {a});
    const auto& av = a.data();
    for (size_t i = 0; i < out_rows; ++i) {
        size_t src_row = axis == 0 ? begin + i : i;
        size_t src_col = axis == 1 ? begin : 0;
        std::copy(av.begin() + src_row * cols + src_col,
                  av.begin() + src_row * cols + src_col + out_cols,
                  node->data.begin() + i * out_cols);
    }
    if (node->requires_grad) {
        TensorNode* an = a.node();
        node->backward_fn = [an, axis, begin, cols, out_rows, out_cols](TensorNode& self) {
            an->ensure_grad();
            for (size_t i = 0; i < out_rows; ++i) {
                size_t src_row = axis == 0 ? begin + i : i;
                size_t src_col = axis == 1 ? begin : 0;
                for (size_t j = 0; j < out_cols; ++j)
                    an->grad[src_row * cols + src_col + j] += self.grad[i * out_cols + j];
            }
        };
    }
    return wrap_node(std::move(node));
}

Tensor gather_rows(const Tensor& a, const std::vector<size_t>& indices) {
    if (a.rank() != 2) throw std::invalid_argument("gather_rows: rank-2 tensor required, got " + shape_to_string(a.shape()));
    if (indices.empty()) throw std::invalid_argument("gather_rows: empty index list");
    size_t rows = a.rows(), cols = a.cols();
    for (size_t idx : indices) {
        if (idx >= rows)
            throw std::out_of_range("gather_rows: index " + std::to_string(idx) + " out of range for shape " +
                                    shape_to_string(a.shape()));
    }
    auto node = make_node({indices.size(), cols}, "gather_rows", {a});
    const auto& av = a.data();
    for (size_t i = 0; i < indices.size(); ++i)
        std::copy(av.begin() + indices[i] * cols, av.begin() + (indices[i] + 1) * cols,
                  node->data.begin() + i * cols);
    if (node->requires_grad) {
        TensorNode* an = a.node();
        node->backward_fn = [an, indices, cols](TensorNode& self) {
            an->ensure_grad();
            for (size_t i = 0; i < indices.size(); ++i)
                for (size_t j = 0; j < cols; ++j) an->grad[indices[i] * cols + j] += self.grad[i * cols + j];
        };
    }
    return wrap_node(std::move(node));
}

Tensor embedding_lookup(const Tensor& table, const std::vector<int>& ids) {
    if (table.rank() != 2) throw std::invalid_argument("embedding_lookup: table must be rank 2");
    std::vector<size_t> indices(ids.size());
    for (size_t i = 0; i < ids.size(); ++i) {
        if (ids[i] < 0 || static_cast<size_t>(ids[i]) >= table.rows())
            throw std::out_of_range("embedding_lookup: id " + std::to_string(ids[i]) +
                                    " outside table of " + std::to_string(table.rows()) + " entries");
        indices[i] = static_cast<size_t>(ids[i]);
    }
    return gather_rows(table, indices);
}

// ---- reductions -----------------------------------------------------------

Tensor sum_all(const Tensor& a) {
    auto node = make_node({1}, "sum_all", {a});
    double s = 0.0;
    for (double v : a.data()) s += v;
    node->data[0] = s;
    if (node->requires_grad) {
        TensorNode* an = a.node();
        node->backward_fn = [an](TensorNode& self) {
            an->ensure_grad();
            double g = self.grad[0];
            for (double& gv : an->grad) gv += g;
        };
    }
    return wrap_node(std::move(node));
}

Tensor mean_all(const Tensor& a) {
    auto node = make_node({1}, "mean_all", {a});
    double s = 0.0;
    for (double v : a.data()) s += v;
    size_t n = a.numel();
    node->data[0] = s / static_cast<double>(n);
    if (node->requires_grad) {
        TensorNode* an = a.node();
        node->backward_fn = [an, n](TensorNode& self) {
            an->ensure_grad();
            double g = self.grad[0] / static_cast<double>(n);
            for (double& gv : an->grad) gv += g;
        };
    }
    return wrap_node(std::move(node));
}

// ---- nonlinearities -------------------------------------------------------

Tensor gelu(const Tensor& a) {
    constexpr double inv_sqrt2 = 0.7071067811865475244;
    auto node = make_node(a.shape(), "gelu", {a});
    const auto& av = a.data();
    for (size_t i = 0; i < av.size(); ++i) {
        node->data[i] = 0.5 * av[i] * (1.0 + std::erf(av[i] * inv_sqrt2));
    }
    if (node->requires_grad) {
        TensorNode* an = a.node();
        node->backward_fn = [an](TensorNode& self) {
            an->ensure_grad();
            constexpr double inv_sqrt2 = 0.7071067811865475244;
            constexpr double inv_sqrt2pi = 0.3989422804014326779;
            for (size_t i = 0; i < self.grad.size(); ++i) {
                double x = an->data[i];
                double cdf = 0.5 * (1.0 + std::erf(x * inv_sqrt2));
                double pdf = inv_sqrt2pi * std::exp(-0.5 * x * x);
                an->grad[i] += self.grad[i] * (cdf + x * pdf);
            }
        };
    }
    return wrap_node(std::move(node));
}

Tensor layer_norm(const Tensor& x, const Tensor& gain, const Tensor& bias, double eps) {
    size_t cols = x.rank() == 2 ? x.cols() : x.dim(0);
    size_t rows = x.rank() == 2 ? x.rows() : 1;
    if (x.rank() > 2) throw std::invalid_argument("layer_norm: rank-1 or rank-2 input required");
    if (gain.rank() != 1 || gain.dim(0) != cols || bias.rank() != 1 || bias.dim(0) != cols) {
        throw std::invalid_argument("layer_norm: gain/bias shape " + shape_to_string(gain.shape()) +
                                    "/" + shape_to_string(bias.shape()) + " does not match input " +
                                    shape_to_string(x.shape()));
    }
    auto node = make_node(x.shape(), "layer_norm", {x, gain, bias});
    const auto& xv = x.data();
    const auto& gv = gain.data();
    const auto& bv = bias.data();
    // save normalized values and inverse stddevs for the backward rule
    auto xhat = std::make_shared<std::vector<double>>(xv.size());
    auto inv_std = std::make_shared<std::vector<double>>(rows);
    for (size_t i = 0; i < rows; ++i) {
        const double* xr = xv.data() + i * cols;
        double mean = 0.0;
        for (size_t j = 0; j < cols; ++j) mean += xr[j];
        mean /= static_cast<double>(cols);
        double var = 0.0;
        for (size_t j = 0; j < cols; ++j) {
            double d = xr[j] - mean;
            var += d * d;
        }
        var /= static_cast<double>(cols);
        double is = 1.0 / std::sqrt(var + eps);
        (*inv_std)[i] = is;
        for (size_t j = 0; j < cols; ++j) {
            double xh = (xr[j] - mean) * is;
            (*xhat)[i * cols + j] = xh;
            node->data[i * cols + j] = xh * gv[j] + bv[j];
        }
    }
    if (node->requires_grad) {
        TensorNode* xn = x.node();
        TensorNode* gn = gain.node();
        TensorNode* bn = bias.node();
        node->backward_fn = [xn, gn, bn, xhat, inv_std, rows, cols](TensorNode& self) {
            for (size_t i = 0; i < rows; ++i) {
                const double* go = self.grad.data() + i * cols;
                const double* xh = xhat->data() + i * cols;
                if (gn->requires_grad) {
                    gn->ensure_grad();
                    for (size_t j = 0; j < cols; ++j) gn->grad[j] += go[j] * xh[j];
                }
                if (bn->requires_grad) {
                    bn->ensure_grad();
                    for (size_t j = 0; j < cols; ++j) bn->grad[j] += go[j];
                }
                if (xn->requires_grad) {
                    xn->ensure_grad();
                    double sum_g = 0.0, sum_gx = 0.0;
                    for (size_t j = 0; j < cols; ++j) {
                        double gj = go[j] * gn->data[j];
                        sum_g += gj;
                        sum_gx += gj * xh[j];
                    }
                    double inv_n = 1.0 / static_cast<double>(cols);
                    for (size_t j = 0; j < cols; ++j) {
                        double gj = go[j] * gn->data[j];
                        xn->grad[i * cols + j] +=
                            (*inv_std)[i] * (gj - inv_n * sum_g - xh[j] * inv_n * sum_gx);
                    }
                }
            }
        };
    }
    return wrap_node(std::move(node));
}

Tensor l2_normalize_rows(const Tensor& x) {
    size_t cols = x.rank() == 2 ? x.cols() : x.dim(0);
    size_t rows = x.rank() == 2 ? x.rows() : 1;
    if (x.rank() > 2) throw std::invalid_argument("l2_normalize_rows: rank-1 or rank-2 input required");
    auto node = make_node(x.shape(), "l2_normalize", {x});
    const auto& xv = x.data();
    auto norms = std::make_shared<std::vector<double>>(rows);
    for (size_t i = 0; i < rows; ++i) {
        double s = 0.0;
        for (size_t j = 0; j < cols; ++j) s += xv[i * cols + j] * xv[i * cols + j];
        double r = std::max(std::sqrt(s), 1e-12);
        (*norms)[i] = r;
        for (size_t j = 0; j < cols; ++j) node->data[i * cols + j] = xv[i * cols + j] / r;
    }
    if (node->requires_grad) {
        TensorNode* xn = x.node();
        node->backward_fn = [xn, norms, rows, cols](TensorNode& self) {
            xn->ensure_grad();
            for (size_t i = 0; i < rows; ++i) {
                const double* g = self.grad.data() + i * cols;
                const double* y = self.data.data() + i * cols;
                double dot = 0.0;
                for (size_t j = 0; j < cols; ++j) dot += g[j] * y[j];
                double inv_r = 1.0 / (*norms)[i];
                for (size_t j = 0; j < cols; ++j) xn->grad[i * cols + j] += (g[j] - y[j] * dot) * inv_r;
            }
        };
    }
    return wrap_node(std::move(node));
}

// ---- softmax / losses -----------------------------------------------------

namespace {

struct AxisLayout {
    size_t outer, extent, inner;
};

AxisLayout axis_layout(const std::vector<size_t>& shape, int axis) {
    int rank = static_cast<int>(shape.size());
    if (axis < 0) axis += rank;
    if (axis < 0 || axis >= rank) throw std::invalid_argument("softmax: axis out of range");
    AxisLayout l{1, shape[static_cast<size_t>(axis)], 1};
    for (int i = 0; i < axis; ++i) l.outer *= shape[static_cast<size_t>(i)];
    for (int i = axis + 1; i < rank; ++i) l.inner *= shape[static_cast<size_t>(i)];
    return l;
}

} // namespace

Tensor softmax(const Tensor& x, double temperature, int axis) {
    if (!(temperature > 0.0)) {
        throw std::invalid_argument("softmax: temperature must be positive, got " + std::to_string(temperature));
    }
    AxisLayout l = axis_layout(x.shape(), axis);
    auto node = make_node(x.shape(), "softmax", {x});
    const auto& xv = x.data();
    double inv_t = 1.0 / temperature;
    for (size_t o = 0; o < l.outer; ++o) {
        for (size_t in = 0; in < l.inner; ++in) {
            size_t base = o * l.extent * l.inner + in;
            double mx = -std::numeric_limits<double>::infinity();
            for (size_t j = 0; j < l.extent; ++j) mx = std::max(mx, xv[base + j * l.inner] * inv_t);
            double z = 0.0;
            for (size_t j = 0; j < l.extent; ++j) {
                double e = std::exp(xv[base + j * l.inner] * inv_t - mx);
                node->data[base + j * l.inner] = e;
                z += e;
            }
            double inv_z = 1.0 / z;
            for (size_t j = 0; j < l.extent; ++j) node->data[base + j * l.inner] *= inv_z;
        }
    }
    if (node->requires_grad) {
        TensorNode* xn = x.node();
        node->backward_fn = [xn, l, inv_t](TensorNode& self) {
            xn->ensure_grad();
            for (size_t o = 0; o < l.outer; ++o) {
                for (size_t in = 0; in < l.inner; ++in) {
                    size_t base = o * l.extent * l.inner + in;
                    double dot = 0.0;
                    for (size_t j = 0; j < l.extent; ++j)
                        dot += self.grad[base + j * l.inner] * self.data[base + j * l.inner];
                    for (size_t j = 0; j < l.extent; ++j) {
                        size_t idx = base + j * l.inner;
                        xn->grad[idx] += inv_t * self.data[idx] * (self.grad[idx] - dot);
                    }
                }
            }
        };
    }
    return wrap_node(std::move(node));
}

namespace {

void check_rows_input(const char* op, const Tensor& t) {
    if (t.rank() != 1 && t.rank() != 2)
        throw std::invalid_argument(std::string(op) + ": rank-1 or rank-2 input required, got " +
                                    shape_to_string(t.shape()));
}

} // namespace

Tensor cross_entropy(const Tensor& logits, const Tensor& targets) {
    check_rows_input("cross_entropy", logits);
    check_same_shape("cross_entropy", logits, targets);
    size_t cols = logits.rank() == 2 ? logits.cols() : logits.dim(0);
    size_t rows = logits.rank() == 2 ? logits.rows() : 1;
    const auto& tv = targets.data();
    for (size_t i = 0; i < rows; ++i) {
        double s = 0.0;
        for (size_t j = 0; j < cols; ++j) {
            double y = tv[i * cols + j];
            if (y < -1e-12)
                throw std::invalid_argument("cross_entropy: negative target entry in row " + std::to_string(i));
            s += y;
        }
        if (std::abs(s - 1.0) > 1e-6)
            throw std::invalid_argument("cross_entropy: target row " + std::to_string(i) +
                                        " sums to " + std::to_string(s) + ", expected 1");
    }

    auto node = make_node({1}, "cross_entropy", {logits});
    const auto& zv = logits.data();
    auto probs = std::make_shared<std::vector<double>>(zv.size());
    double total = 0.0;
    for (size_t i = 0; i < rows; ++i) {
        const double* z = zv.data() + i * cols;
        double mx = -std::numeric_limits<double>::infinity();
        for (size_t j = 0; j < cols; ++j) mx = std::max(mx, z[j]);
        double lse = 0.0;
        for (size_t j = 0; j < cols; ++j) lse += std::exp(z[j] - mx);
        lse = std::log(lse) + mx;
        double row_loss = 0.0;
        for (size_t j = 0; j < cols; ++j) {
            (*probs)[i * cols + j] = std::exp(z[j] - lse);
            row_loss += tv[i * cols + j] * (lse - z[j]);
        }
        total += row_loss;
    }
    node->data[0] = total / static_cast<double>(rows);

    if (node->requires_grad) {
        TensorNode* zn = logits.node();
        std::vector<double> targets_copy = tv; // detached target snapshot
        node->backward_fn = [zn, probs, targets_copy, rows, cols](TensorNode& self) {
            zn->ensure_grad();
            double g = self.grad[0] / static_cast<double>(rows);
            for (size_t i = 0; i < rows * cols; ++i)
                zn->grad[i] += g * ((*probs)[i] - targets_copy[i]);
        };
    }
    return wrap_node(std::move(node));
}

Tensor kl_divergence(const Tensor& q, const Tensor& p) {
    check_rows_input("kl_divergence", p);
    check_same_shape("kl_divergence", q, p);
    size_t cols = p.rank() == 2 ? p.cols() : p.dim(0);
    size_t rows = p.rank() == 2 ? p.rows() : 1;
    const auto& qv = q.data();
    const auto& pv = p.data();
    for (size_t i = 0; i < qv.size(); ++i) {
        if (qv[i] < -1e-12 || pv[i] < -1e-12)
            throw std::invalid_argument("kl_divergence: negative probability entry at index " + std::to_string(i));
    }

    auto node = make_node({1}, "kl_divergence", {p});
    double total = 0.0;
    for (size_t i = 0; i < rows; ++i) {
        for (size_t j = 0; j < cols; ++j) {
            double qj = qv[i * cols + j];
            if (qj <= 0.0) continue;
            double pj = std::max(pv[i * cols + j], kLogEps);
            total += qj * (std::log(qj) - std::log(pj));
        }
    }
    node->data[0] = total / static_cast<double>(rows);

    if (node->requires_grad) {
        TensorNode* pn = p.node();
        std::vector<double> q_copy = qv;
        node->backward_fn = [pn, q_copy, rows, cols](TensorNode& self) {
            pn->ensure_grad();
            double g = self.grad[0] / static_cast<double>(rows);
            for (size_t i = 0; i < rows * cols; ++i) {
                double qj = q_copy[i];
                if (qj <= 0.0) continue;
                pn->grad[i] -= g * qj / std::max(pn->data[i], kLogEps);
            }
        };
    }
    return wrap_node(std::move(node));
}

// ---- reverse pass ----------------------------------------------------------

void backward(const Tensor& loss) {
    if (!loss.defined() || loss.numel() != 1) {
        throw std::invalid_argument("backward: loss must be a defined scalar tensor");
    }
    TensorNode* root = loss.node();
    if (!root->requires_grad) {
        throw std::invalid_argument("backward: loss is not connected to any requires_grad tensor");
    }

    // Iterative post-order DFS over parent edges; reversal gives a
    // deterministic reverse topological order.
    std::vector<TensorNode*> order;
    std::unordered_set<TensorNode*> visited;
    struct Frame {
        TensorNode* node;
        size_t next_parent;
    };
    std::vector<Frame> stack;
    stack.push_back({root, 0});
    visited.insert(root);
    while (!stack.empty()) {
        Frame& f = stack.back();
        if (f.next_parent < f.node->parents.size()) {
            TensorNode* parent = f.node->parents[f.next_parent++].get();
            if (parent->requires_grad && !visited.count(parent)) {
                visited.insert(parent);
                stack.push_back({parent, 0});
            }
        } else {
            order.push_back(f.node);
            stack.pop_back();
        }
    }

    // Interior nodes get fresh gradients each pass; leaf tensors accumulate.
    for (TensorNode* node : order) {
        if (node->backward_fn && !node->grad.empty()) node->zero_grad_buffer();
    }

    root->ensure_grad();
    root->grad[0] += 1.0;
    for (auto it = order.rbegin(); it != order.rend(); ++it) {
        TensorNode* node = *it;
        if (node->backward_fn && !node->grad.empty()) node->backward_fn(*node);
    }
}

} // namespace aga
