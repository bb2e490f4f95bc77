#pragma once

// Dense row-major tensors with tape-free reverse-mode differentiation.
//
// Every op that receives at least one grad-requiring input records its
// parents and a backward closure on the output node, so the graph of one
// forward pass is exactly the set of nodes reachable from the loss.
// backward() orders that set topologically and runs each closure once.

#include <cstddef>
#include <functional>
#include <initializer_list>
#include <memory>
#include <span>
#include <string>
#include <vector>

#include "cmn/random.hpp"

namespace cmn {

using Real = double;
using Shape = std::vector<std::size_t>;

std::string shape_str(const Shape& shape);
std::size_t shape_numel(const Shape& shape);

namespace detail {

struct Node {
    Shape shape;
    std::vector<Real> data;
    std::vector<Real> grad;
    bool requires_grad = false;
    std::vector<std::shared_ptr<Node>> parents;
    std::function<void(Node&)> backward;

    std::vector<Real>& ensure_grad() {
        if (grad.size() != data.size()) grad.assign(data.size(), 0.0);
        return grad;
    }
};

}  // namespace detail

class Tensor {
public:
    Tensor() = default;
    Tensor(Shape shape, std::vector<Real> data, bool requires_grad = false);

    static Tensor zeros(Shape shape, bool requires_grad = false);
    static Tensor full(Shape shape, Real value, bool requires_grad = false);
    static Tensor scalar(Real value, bool requires_grad = false);
    static Tensor matrix(std::initializer_list<std::initializer_list<Real>> rows,
                         bool requires_grad = false);
    static Tensor vector(std::initializer_list<Real> values, bool requires_grad = false);

    bool defined() const { return node_ != nullptr; }
    const Shape& shape() const;
    std::size_t rank() const { return shape().size(); }
    std::size_t numel() const;
    std::size_t rows() const;
    std::size_t cols() const;

    std::span<const Real> data() const;
    std::span<Real> mutable_data();
    /// Empty until a backward pass has reached this tensor.
    std::span<const Real> grad() const;
    std::span<Real> mutable_grad();
    bool requires_grad() const;

    Real item() const;
    Real at(std::size_t i) const;
    Real at(std::size_t row, std::size_t col) const;

    void zero_grad();
    /// Backpropagates from this scalar. Returns the number of graph nodes visited.
    std::size_t backward();
    /// Backpropagates with an explicit upstream gradient of this tensor's shape.
    std::size_t backward(std::span<const Real> seed);

    /// Same values, cut from the graph.
    Tensor detach() const;
    Tensor clone(bool requires_grad = false) const;
    bool same_node(const Tensor& other) const { return node_ == other.node_; }

    const std::shared_ptr<detail::Node>& node() const { return node_; }
    explicit Tensor(std::shared_ptr<detail::Node> node) : node_(std::move(node)) {}

private:
    std::shared_ptr<detail::Node> node_;
};

/// Disables graph recording on the current thread while alive.
class NoGradGuard {
public:
    NoGradGuard();
    ~NoGradGuard();
    NoGradGuard(const NoGradGuard&) = delete;
    NoGradGuard& operator=(const NoGradGuard&) = delete;

private:
    bool previous_;
};

bool grad_enabled();

/// Row-major rows x cols matrix of indices, used for per-row selections.
struct IndexMatrix {
    std::size_t rows = 0;
    std::size_t cols = 0;
    std::vector<std::size_t> values;

    std::size_t operator()(std::size_t r, std::size_t c) const { return values[r * cols + c]; }
};

struct TopK {
    std::vector<std::size_t> indices;
    Tensor values;
};

// --- differentiable ops -------------------------------------------------

Tensor matmul(const Tensor& a, const Tensor& b);
Tensor transpose(const Tensor& a);

/// Elementwise a + b. b may also be a rank-1 vector matching a's last extent.
Tensor add(const Tensor& a, const Tensor& b);
Tensor sub(const Tensor& a, const Tensor& b);
Tensor mul(const Tensor& a, const Tensor& b);
Tensor scale(const Tensor& a, Real factor);
Tensor relu(const Tensor& a);
Tensor sum(const Tensor& a);

Tensor softmax(const Tensor& x, int axis = -1);
/// Normalises over the last axis; gain and bias have that extent.
Tensor layer_norm(const Tensor& x, const Tensor& gain, const Tensor& bias, Real eps = 1e-5);

Tensor embedding_lookup(const Tensor& table, std::span<const int> ids);
/// Mean of -log softmax(logits)[target] over rows whose target is not pad_id.
Tensor cross_entropy(const Tensor& logits, std::span<const int> targets, int pad_id);

Tensor concat(std::span<const Tensor> parts, std::size_t axis);
Tensor concat(std::initializer_list<Tensor> parts, std::size_t axis);
/// Rows or columns [begin, end) of a matrix.
Tensor slice(const Tensor& x, std::size_t axis, std::size_t begin, std::size_t end);

/// out[r, j] = x[r, idx(r, j)]
Tensor gather_cols(const Tensor& x, const IndexMatrix& idx);
/// out[r, :] = sum_j weights[r, j] * values[idx(r, j), :]
Tensor gather_weighted_sum(const Tensor& weights, const IndexMatrix& idx, const Tensor& values);

/// Inverted dropout. Identity when p == 0.
Tensor dropout(const Tensor& x, Real p, Rng& rng);

/// K largest entries of a rank-1 tensor, descending; ties go to the lower index.
/// Values stay on the graph; the selection itself is constant.
TopK top_k(const Tensor& values, std::size_t k);

/// Per-row top-k indices of a matrix with the same ordering rule as top_k.
IndexMatrix top_k_rows(const Tensor& x, std::size_t k);

}  // namespace cmn
