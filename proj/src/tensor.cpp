#include "cmn/tensor.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>
#include <sstream>
#include <unordered_set>

#include "cmn/errors.hpp"

namespace cmn {

namespace {

thread_local bool g_grad_enabled = true;

using NodePtr = std::shared_ptr<detail::Node>;

NodePtr make_node(Shape shape, std::vector<Real> data) {
    auto node = std::make_shared<detail::Node>();
    node->shape = std::move(shape);
    node->data = std::move(data);
    return node;
}

// Builds an op output. Parents and the backward closure are kept only when
// recording is on and some input needs a gradient.
Tensor make_result(Shape shape, std::vector<Real> data, std::vector<NodePtr> parents,
                   std::function<void(detail::Node&)> backward) {
    auto node = make_node(std::move(shape), std::move(data));
    if (g_grad_enabled) {
        const bool any = std::any_of(parents.begin(), parents.end(),
                                     [](const NodePtr& p) { return p->requires_grad; });
        if (any) {
            node->requires_grad = true;
            node->parents = std::move(parents);
            node->backward = std::move(backward);
        }
    }
    return Tensor(std::move(node));
}

const NodePtr& node_of(const Tensor& t, const char* op) {
    if (!t.defined()) throw ArgumentError(std::string(op) + ": undefined tensor");
    return t.node();
}

void require_matrix(const Tensor& t, const char* op) {
    if (t.rank() != 2) {
        throw DimensionError(std::string(op) + ": expected a matrix, got shape " +
                             shape_str(t.shape()));
    }
}

// C (m x n) += op(A) * op(B), row-major, k the contracted extent.
void gemm_nn(std::size_t m, std::size_t n, std::size_t k, const Real* a, const Real* b, Real* c) {
    for (std::size_t i = 0; i < m; ++i) {
        Real* crow = c + i * n;
        const Real* arow = a + i * k;
        for (std::size_t p = 0; p < k; ++p) {
            const Real av = arow[p];
            if (av == 0.0) continue;
            const Real* brow = b + p * n;
            for (std::size_t j = 0; j < n; ++j) crow[j] += av * brow[j];
        }
    }
}

// C (m x n) += A (m x k) * B^T, B stored n x k.
void gemm_nt(std::size_t m, std::size_t n, std::size_t k, const Real* a, const Real* b, Real* c) {
    for (std::size_t i = 0; i < m; ++i) {
        const Real* arow = a + i * k;
        for (std::size_t j = 0; j < n; ++j) {
            const Real* brow = b + j * k;
            Real acc = 0.0;
            for (std::size_t p = 0; p < k; ++p) acc += arow[p] * brow[p];
            c[i * n + j] += acc;
        }
    }
}

// C (m x n) += A^T * B, A stored k x m, B stored k x n.
void gemm_tn(std::size_t m, std::size_t n, std::size_t k, const Real* a, const Real* b, Real* c) {
    for (std::size_t p = 0; p < k; ++p) {
        const Real* arow = a + p * m;
        const Real* brow = b + p * n;
        for (std::size_t i = 0; i < m; ++i) {
            const Real av = arow[i];
            if (av == 0.0) continue;
            Real* crow = c + i * n;
            for (std::size_t j = 0; j < n; ++j) crow[j] += av * brow[j];
        }
    }
}

std::vector<std::size_t> ranked_indices(const Real* values, std::size_t n, std::size_t k) {
    std::vector<std::size_t> order(n);
    std::iota(order.begin(), order.end(), std::size_t{0});
    std::partial_sort(order.begin(), order.begin() + static_cast<std::ptrdiff_t>(k), order.end(),
                      [values](std::size_t lhs, std::size_t rhs) {
                          if (values[lhs] != values[rhs]) return values[lhs] > values[rhs];
                          return lhs < rhs;
                      });
    order.resize(k);
    return order;
}

}  // namespace

std::string shape_str(const Shape& shape) {
    std::ostringstream out;
    out << '[';
    for (std::size_t i = 0; i < shape.size(); ++i) {
        if (i) out << 'x';
        out << shape[i];
    }
    out << ']';
    return out.str();
}

std::size_t shape_numel(const Shape& shape) {
    std::size_t n = 1;
    for (auto e : shape) n *= e;
    return n;
}

// --- Tensor ---------------------------------------------------------------

Tensor::Tensor(Shape shape, std::vector<Real> data, bool requires_grad) {
    for (auto e : shape) {
        if (e == 0) throw DimensionError("tensor extents must be positive, got " + shape_str(shape));
    }
    if (shape_numel(shape) != data.size()) {
        throw DimensionError("shape " + shape_str(shape) + " holds " +
                             std::to_string(shape_numel(shape)) + " values, got " +
                             std::to_string(data.size()));
    }
    node_ = make_node(std::move(shape), std::move(data));
    node_->requires_grad = requires_grad;
}

Tensor Tensor::zeros(Shape shape, bool requires_grad) {
    const auto n = shape_numel(shape);
    return Tensor(std::move(shape), std::vector<Real>(n, 0.0), requires_grad);
}

Tensor Tensor::full(Shape shape, Real value, bool requires_grad) {
    const auto n = shape_numel(shape);
    return Tensor(std::move(shape), std::vector<Real>(n, value), requires_grad);
}

Tensor Tensor::scalar(Real value, bool requires_grad) {
    return Tensor(Shape{1}, std::vector<Real>{value}, requires_grad);
}

Tensor Tensor::matrix(std::initializer_list<std::initializer_list<Real>> rows, bool requires_grad) {
    const std::size_t r = rows.size();
    const std::size_t c = r ? rows.begin()->size() : 0;
    std::vector<Real> data;
    data.reserve(r * c);
    for (const auto& row : rows) {
        if (row.size() != c) throw DimensionError("ragged matrix literal");
        data.insert(data.end(), row.begin(), row.end());
    }
    return Tensor(Shape{r, c}, std::move(data), requires_grad);
}

Tensor Tensor::vector(std::initializer_list<Real> values, bool requires_grad) {
    return Tensor(Shape{values.size()}, std::vector<Real>(values), requires_grad);
}

const Shape& Tensor::shape() const { return node_of(*this, "shape")->shape; }
std::size_t Tensor::numel() const { return node_of(*this, "numel")->data.size(); }

std::size_t Tensor::rows() const {
    require_matrix(*this, "rows");
    return shape()[0];
}

std::size_t Tensor::cols() const {
    require_matrix(*this, "cols");
    return shape()[1];
}

std::span<const Real> Tensor::data() const { return node_of(*this, "data")->data; }
std::span<Real> Tensor::mutable_data() { return node_of(*this, "data")->data; }
std::span<const Real> Tensor::grad() const { return node_of(*this, "grad")->grad; }
std::span<Real> Tensor::mutable_grad() { return node_of(*this, "grad")->ensure_grad(); }
bool Tensor::requires_grad() const { return node_ && node_->requires_grad; }

Real Tensor::item() const {
    if (numel() != 1) throw DimensionError("item() on tensor of shape " + shape_str(shape()));
    return node_->data[0];
}

Real Tensor::at(std::size_t i) const {
    if (i >= numel()) throw IndexError("flat index " + std::to_string(i) + " out of range");
    return node_->data[i];
}

Real Tensor::at(std::size_t row, std::size_t col) const {
    require_matrix(*this, "at");
    if (row >= shape()[0] || col >= shape()[1]) {
        throw IndexError("index (" + std::to_string(row) + "," + std::to_string(col) +
                         ") out of range for " + shape_str(shape()));
    }
    return node_->data[row * shape()[1] + col];
}

void Tensor::zero_grad() {
    auto& node = node_of(*this, "zero_grad");
    if (!node->grad.empty()) std::fill(node->grad.begin(), node->grad.end(), 0.0);
}

std::size_t Tensor::backward() {
    if (numel() != 1) {
        throw DimensionError("backward() without a seed needs a scalar, got " + shape_str(shape()));
    }
    const Real one = 1.0;
    return backward(std::span<const Real>(&one, 1));
}

std::size_t Tensor::backward(std::span<const Real> seed) {
    auto& root = node_of(*this, "backward");
    if (seed.size() != root->data.size()) {
        throw DimensionError("backward seed has " + std::to_string(seed.size()) +
                             " values for shape " + shape_str(root->shape));
    }
    if (!root->requires_grad) return 0;

    // Iterative post-order DFS gives a topological order of the reachable graph.
    std::vector<detail::Node*> order;
    std::unordered_set<detail::Node*> visited;
    std::vector<std::pair<detail::Node*, std::size_t>> stack;
    stack.emplace_back(root.get(), 0);
    visited.insert(root.get());
    while (!stack.empty()) {
        auto& [node, next] = stack.back();
        if (next < node->parents.size()) {
            detail::Node* parent = node->parents[next++].get();
            if (parent->requires_grad && !visited.count(parent)) {
                visited.insert(parent);
                stack.emplace_back(parent, 0);
            }
        } else {
            order.push_back(node);
            stack.pop_back();
        }
    }

    for (auto* node : order) node->ensure_grad();
    auto& root_grad = root->grad;
    for (std::size_t i = 0; i < seed.size(); ++i) root_grad[i] += seed[i];
    for (auto it = order.rbegin(); it != order.rend(); ++it) {
        if ((*it)->backward) (*it)->backward(**it);
    }
    return order.size();
}

Tensor Tensor::detach() const {
    auto& node = node_of(*this, "detach");
    return Tensor(make_node(node->shape, node->data));
}

Tensor Tensor::clone(bool requires_grad) const {
    auto& node = node_of(*this, "clone");
    auto copy = make_node(node->shape, node->data);
    copy->requires_grad = requires_grad;
    return Tensor(std::move(copy));
}

NoGradGuard::NoGradGuard() : previous_(g_grad_enabled) { g_grad_enabled = false; }
NoGradGuard::~NoGradGuard() { g_grad_enabled = previous_; }
bool grad_enabled() { return g_grad_enabled; }

// --- ops --------------------------------------------------------------------

Tensor matmul(const Tensor& a, const Tensor& b) {
    require_matrix(a, "matmul");
    require_matrix(b, "matmul");
    const std::size_t m = a.shape()[0], k = a.shape()[1], n = b.shape()[1];
    if (b.shape()[0] != k) {
        throw DimensionError("matmul: inner dimensions differ, " + shape_str(a.shape()) + " x " +
                             shape_str(b.shape()));
    }
    std::vector<Real> out(m * n, 0.0);
    gemm_nn(m, n, k, a.data().data(), b.data().data(), out.data());
    auto pa = a.node(), pb = b.node();
    return make_result(Shape{m, n}, std::move(out), {pa, pb}, [m, n, k](detail::Node& self) {
        auto& na = *self.parents[0];
        auto& nb = *self.parents[1];
        if (na.requires_grad) gemm_nt(m, k, n, self.grad.data(), nb.data.data(), na.grad.data());
        if (nb.requires_grad) gemm_tn(k, n, m, na.data.data(), self.grad.data(), nb.grad.data());
    });
}

Tensor transpose(const Tensor& a) {
    require_matrix(a, "transpose");
    const std::size_t r = a.shape()[0], c = a.shape()[1];
    std::vector<Real> out(r * c);
    const auto src = a.data();
    for (std::size_t i = 0; i < r; ++i)
        for (std::size_t j = 0; j < c; ++j) out[j * r + i] = src[i * c + j];
    return make_result(Shape{c, r}, std::move(out), {a.node()}, [r, c](detail::Node& self) {
        auto& p = *self.parents[0];
        for (std::size_t i = 0; i < r; ++i)
            for (std::size_t j = 0; j < c; ++j) p.grad[i * c + j] += self.grad[j * r + i];
    });
}

namespace {

enum class Broadcast { None, Row };

Broadcast check_binary(const Tensor& a, const Tensor& b, const char* op) {
    if (a.shape() == b.shape()) return Broadcast::None;
    if (b.rank() == 1 && a.rank() >= 1 && a.shape().back() == b.shape()[0]) return Broadcast::Row;
    throw DimensionError(std::string(op) + ": incompatible shapes " + shape_str(a.shape()) +
                         " and " + shape_str(b.shape()));
}

}  // namespace

Tensor add(const Tensor& a, const Tensor& b) {
    const auto mode = check_binary(a, b, "add");
    const auto av = a.data(), bv = b.data();
    std::vector<Real> out(av.begin(), av.end());
    const std::size_t width = bv.size();
    for (std::size_t i = 0; i < out.size(); ++i) out[i] += bv[mode == Broadcast::Row ? i % width : i];
    return make_result(a.shape(), std::move(out), {a.node(), b.node()},
                       [mode, width](detail::Node& self) {
                           auto& pa = *self.parents[0];
                           auto& pb = *self.parents[1];
                           if (pa.requires_grad)
                               for (std::size_t i = 0; i < self.grad.size(); ++i) pa.grad[i] += self.grad[i];
                           if (pb.requires_grad) {
                               for (std::size_t i = 0; i < self.grad.size(); ++i)
                                   pb.grad[mode == Broadcast::Row ? i % width : i] += self.grad[i];
                           }
                       });
}

Tensor sub(const Tensor& a, const Tensor& b) {
    if (a.shape() != b.shape()) {
        throw DimensionError("sub: incompatible shapes " + shape_str(a.shape()) + " and " +
                             shape_str(b.shape()));
    }
    const auto av = a.data(), bv = b.data();
    std::vector<Real> out(av.size());
    for (std::size_t i = 0; i < out.size(); ++i) out[i] = av[i] - bv[i];
    return make_result(a.shape(), std::move(out), {a.node(), b.node()}, [](detail::Node& self) {
        auto& pa = *self.parents[0];
        auto& pb = *self.parents[1];
        for (std::size_t i = 0; i < self.grad.size(); ++i) {
            if (pa.requires_grad) pa.grad[i] += self.grad[i];
            if (pb.requires_grad) pb.grad[i] -= self.grad[i];
        }
    });
}

Tensor mul(const Tensor& a, const Tensor& b) {
    const auto mode = check_binary(a, b, "mul");
    const auto av = a.data(), bv = b.data();
    const std::size_t width = bv.size();
    std::vector<Real> out(av.size());
    for (std::size_t i = 0; i < out.size(); ++i) out[i] = av[i] * bv[mode == Broadcast::Row ? i % width : i];
    return make_result(a.shape(), std::move(out), {a.node(), b.node()},
                       [mode, width](detail::Node& self) {
                           auto& pa = *self.parents[0];
                           auto& pb = *self.parents[1];
                           for (std::size_t i = 0; i < self.grad.size(); ++i) {
                               const std::size_t j = mode == Broadcast::Row ? i % width : i;
                               if (pa.requires_grad) pa.grad[i] += self.grad[i] * pb.data[j];
                               if (pb.requires_grad) pb.grad[j] += self.grad[i] * pa.data[i];
                           }
                       });
}

Tensor scale(const Tensor& a, Real factor) {
    const auto av = a.data();
    std::vector<Real> out(av.size());
    for (std::size_t i = 0; i < out.size(); ++i) out[i] = av[i] * factor;
    return make_result(a.shape(), std::move(out), {a.node()}, [factor](detail::Node& self) {
        auto& p = *self.parents[0];
        for (std::size_t i = 0; i < self.grad.size(); ++i) p.grad[i] += self.grad[i] * factor;
    });
}

Tensor relu(const Tensor& a) {
    const auto av = a.data();
    std::vector<Real> out(av.size());
    for (std::size_t i = 0; i < out.size(); ++i) out[i] = av[i] > 0.0 ? av[i] : 0.0;
    return make_result(a.shape(), std::move(out), {a.node()}, [](detail::Node& self) {
        auto& p = *self.parents[0];
        for (std::size_t i = 0; i < self.grad.size(); ++i)
            if (p.data[i] > 0.0) p.grad[i] += self.grad[i];
    });
}

Tensor sum(const Tensor& a) {
    const auto av = a.data();
    const Real total = std::accumulate(av.begin(), av.end(), Real{0});
    return make_result(Shape{1}, {total}, {a.node()}, [](detail::Node& self) {
        auto& p = *self.parents[0];
        for (auto& g : p.grad) g += self.grad[0];
    });
}

Tensor softmax(const Tensor& x, int axis) {
    const auto& shape = x.shape();
    const int rank = static_cast<int>(shape.size());
    const int ax = axis < 0 ? axis + rank : axis;
    if (ax < 0 || ax >= rank) {
        throw ArgumentError("softmax: axis " + std::to_string(axis) + " invalid for shape " +
                            shape_str(shape));
    }
    std::size_t outer = 1, inner = 1;
    for (int i = 0; i < ax; ++i) outer *= shape[i];
    for (int i = ax + 1; i < rank; ++i) inner *= shape[i];
    const std::size_t len = shape[ax];
    const auto xv = x.data();
    std::vector<Real> out(xv.size());
    for (std::size_t o = 0; o < outer; ++o) {
        for (std::size_t in = 0; in < inner; ++in) {
            const std::size_t base = o * len * inner + in;
            Real mx = -std::numeric_limits<Real>::infinity();
            for (std::size_t j = 0; j < len; ++j) mx = std::max(mx, xv[base + j * inner]);
            Real total = 0.0;
            for (std::size_t j = 0; j < len; ++j) {
                const Real e = std::exp(xv[base + j * inner] - mx);
                out[base + j * inner] = e;
                total += e;
            }
            for (std::size_t j = 0; j < len; ++j) out[base + j * inner] /= total;
        }
    }
    return make_result(shape, std::move(out), {x.node()}, [outer, inner, len](detail::Node& self) {
        auto& p = *self.parents[0];
        for (std::size_t o = 0; o < outer; ++o) {
            for (std::size_t in = 0; in < inner; ++in) {
                const std::size_t base = o * len * inner + in;
                Real dot = 0.0;
                for (std::size_t j = 0; j < len; ++j)
                    dot += self.grad[base + j * inner] * self.data[base + j * inner];
                for (std::size_t j = 0; j < len; ++j) {
                    const std::size_t idx = base + j * inner;
                    p.grad[idx] += self.data[idx] * (self.grad[idx] - dot);
                }
            }
        }
    });
}

Tensor layer_norm(const Tensor& x, const Tensor& gain, const Tensor& bias, Real eps) {
    const auto& shape = x.shape();
    const std::size_t n = shape.back();
    if (gain.shape() != Shape{n} || bias.shape() != Shape{n}) {
        throw DimensionError("layer_norm: gain " + shape_str(gain.shape()) + " / bias " +
                             shape_str(bias.shape()) + " do not match input " + shape_str(shape));
    }
    const std::size_t rows = x.numel() / n;
    const auto xv = x.data(), gv = gain.data(), bv = bias.data();
    std::vector<Real> out(xv.size());
    std::vector<Real> normed(xv.size());
    std::vector<Real> inv_std(rows);
    for (std::size_t r = 0; r < rows; ++r) {
        const Real* row = xv.data() + r * n;
        Real mean = 0.0;
        for (std::size_t j = 0; j < n; ++j) mean += row[j];
        mean /= static_cast<Real>(n);
        Real var = 0.0;
        for (std::size_t j = 0; j < n; ++j) var += (row[j] - mean) * (row[j] - mean);
        var /= static_cast<Real>(n);
        inv_std[r] = 1.0 / std::sqrt(var + eps);
        for (std::size_t j = 0; j < n; ++j) {
            normed[r * n + j] = (row[j] - mean) * inv_std[r];
            out[r * n + j] = normed[r * n + j] * gv[j] + bv[j];
        }
    }
    return make_result(
        shape, std::move(out), {x.node(), gain.node(), bias.node()},
        [rows, n, normed = std::move(normed), inv_std = std::move(inv_std)](detail::Node& self) {
            auto& px = *self.parents[0];
            auto& pg = *self.parents[1];
            auto& pb = *self.parents[2];
            std::vector<Real> dxhat(n);
            for (std::size_t r = 0; r < rows; ++r) {
                const Real* g = self.grad.data() + r * n;
                const Real* xh = normed.data() + r * n;
                Real mean_d = 0.0, mean_dx = 0.0;
                for (std::size_t j = 0; j < n; ++j) {
                    if (pg.requires_grad) pg.grad[j] += g[j] * xh[j];
                    if (pb.requires_grad) pb.grad[j] += g[j];
                    dxhat[j] = g[j] * pg.data[j];
                    mean_d += dxhat[j];
                    mean_dx += dxhat[j] * xh[j];
                }
                if (!px.requires_grad) continue;
                mean_d /= static_cast<Real>(n);
                mean_dx /= static_cast<Real>(n);
                for (std::size_t j = 0; j < n; ++j)
                    px.grad[r * n + j] += inv_std[r] * (dxhat[j] - mean_d - xh[j] * mean_dx);
            }
        });
}

Tensor embedding_lookup(const Tensor& table, std::span<const int> ids) {
    require_matrix(table, "embedding_lookup");
    const std::size_t vocab = table.shape()[0], d = table.shape()[1];
    if (ids.empty()) throw ArgumentError("embedding_lookup: empty id sequence");
    std::vector<std::size_t> rows(ids.size());
    for (std::size_t i = 0; i < ids.size(); ++i) {
        if (ids[i] < 0 || static_cast<std::size_t>(ids[i]) >= vocab) {
            throw IndexError("embedding_lookup: id " + std::to_string(ids[i]) +
                             " out of range for table " + shape_str(table.shape()));
        }
        rows[i] = static_cast<std::size_t>(ids[i]);
    }
    const auto tv = table.data();
    std::vector<Real> out(ids.size() * d);
    for (std::size_t i = 0; i < rows.size(); ++i)
        std::copy_n(tv.data() + rows[i] * d, d, out.data() + i * d);
    return make_result(Shape{ids.size(), d}, std::move(out), {table.node()},
                       [rows = std::move(rows), d](detail::Node& self) {
                           auto& p = *self.parents[0];
                           for (std::size_t i = 0; i < rows.size(); ++i)
                               for (std::size_t j = 0; j < d; ++j)
                                   p.grad[rows[i] * d + j] += self.grad[i * d + j];
                       });
}

Tensor cross_entropy(const Tensor& logits, std::span<const int> targets, int pad_id) {
    require_matrix(logits, "cross_entropy");
    const std::size_t t = logits.shape()[0], v = logits.shape()[1];
    if (targets.size() != t) {
        throw DimensionError("cross_entropy: " + std::to_string(targets.size()) +
                             " targets for logits " + shape_str(logits.shape()));
    }
    const auto lv = logits.data();
    std::vector<Real> probs(t * v, 0.0);
    std::size_t counted = 0;
    Real total = 0.0;
    for (std::size_t i = 0; i < t; ++i) {
        if (targets[i] == pad_id) continue;
        if (targets[i] < 0 || static_cast<std::size_t>(targets[i]) >= v) {
            throw IndexError("cross_entropy: target " + std::to_string(targets[i]) +
                             " out of range for vocabulary " + std::to_string(v));
        }
        const Real* row = lv.data() + i * v;
        const Real mx = *std::max_element(row, row + v);
        Real z = 0.0;
        for (std::size_t j = 0; j < v; ++j) z += std::exp(row[j] - mx);
        const Real log_z = mx + std::log(z);
        for (std::size_t j = 0; j < v; ++j) probs[i * v + j] = std::exp(row[j] - log_z);
        total += log_z - row[targets[i]];
        ++counted;
    }
    if (counted == 0) throw ArgumentError("cross_entropy: every target is padding");
    const Real inv = 1.0 / static_cast<Real>(counted);
    std::vector<int> tgt(targets.begin(), targets.end());
    return make_result(Shape{1}, {total * inv}, {logits.node()},
                       [probs = std::move(probs), tgt = std::move(tgt), t, v, inv,
                        pad_id](detail::Node& self) {
                           auto& p = *self.parents[0];
                           const Real g = self.grad[0] * inv;
                           for (std::size_t i = 0; i < t; ++i) {
                               if (tgt[i] == pad_id) continue;
                               for (std::size_t j = 0; j < v; ++j) p.grad[i * v + j] += g * probs[i * v + j];
                               p.grad[i * v + static_cast<std::size_t>(tgt[i])] -= g;
                           }
                       });
}

Tensor concat(std::span<const Tensor> parts, std::size_t axis) {
    if (parts.empty()) throw ArgumentError("concat: no inputs");
    const std::size_t rank = parts[0].rank();
    if (rank == 1 && axis == 0) {
        std::vector<Real> out;
        std::vector<NodePtr> parents;
        std::vector<std::size_t> offsets;
        for (const auto& p : parts) {
            if (p.rank() != 1) throw DimensionError("concat: mixed ranks, got " + shape_str(p.shape()));
            offsets.push_back(out.size());
            out.insert(out.end(), p.data().begin(), p.data().end());
            parents.push_back(p.node());
        }
        const std::size_t n = out.size();
        return make_result(Shape{n}, std::move(out), std::move(parents),
                           [offsets = std::move(offsets)](detail::Node& self) {
                               for (std::size_t k = 0; k < self.parents.size(); ++k) {
                                   auto& p = *self.parents[k];
                                   if (!p.requires_grad) continue;
                                   for (std::size_t i = 0; i < p.data.size(); ++i) p.grad[i] += self.grad[offsets[k] + i];
                               }
                           });
    }
    if (rank != 2 || axis > 1) {
        throw ArgumentError("concat: supports rank-1 axis 0 or matrices along axis 0/1, got " +
                            shape_str(parts[0].shape()) + " axis " + std::to_string(axis));
    }
    const std::size_t other = parts[0].shape()[1 - axis];
    std::size_t along = 0;
    std::vector<NodePtr> parents;
    std::vector<std::size_t> extents;
    for (const auto& p : parts) {
        if (p.rank() != 2 || p.shape()[1 - axis] != other) {
            throw DimensionError("concat: shape " + shape_str(p.shape()) + " incompatible with " +
                                 shape_str(parts[0].shape()) + " along axis " + std::to_string(axis));
        }
        extents.push_back(p.shape()[axis]);
        along += p.shape()[axis];
        parents.push_back(p.node());
    }
    Shape out_shape = axis == 0 ? Shape{along, other} : Shape{other, along};
    std::vector<Real> out(along * other);
    if (axis == 0) {
        std::size_t offset = 0;
        for (const auto& p : parts) {
            std::copy(p.data().begin(), p.data().end(), out.begin() + static_cast<std::ptrdiff_t>(offset));
            offset += p.numel();
        }
    } else {
        std::size_t col = 0;
        for (std::size_t k = 0; k < parts.size(); ++k) {
            const auto src = parts[k].data();
            for (std::size_t r = 0; r < other; ++r)
                for (std::size_t c = 0; c < extents[k]; ++c) out[r * along + col + c] = src[r * extents[k] + c];
            col += extents[k];
        }
    }
    return make_result(std::move(out_shape), std::move(out), std::move(parents),
                       [axis, other, along, extents = std::move(extents)](detail::Node& self) {
                           std::size_t offset = 0;
                           for (std::size_t k = 0; k < self.parents.size(); ++k) {
                               auto& p = *self.parents[k];
                               const std::size_t e = extents[k];
                               if (p.requires_grad) {
                                   if (axis == 0) {
                                       for (std::size_t i = 0; i < e * other; ++i)
                                           p.grad[i] += self.grad[offset * other + i];
                                   } else {
                                       for (std::size_t r = 0; r < other; ++r)
                                           for (std::size_t c = 0; c < e; ++c)
                                               p.grad[r * e + c] += self.grad[r * along + offset + c];
                                   }
                               }
                               offset += e;
                           }
                       });
}

Tensor concat(std::initializer_list<Tensor> parts, std::size_t axis) {
    return concat(std::span<const Tensor>(parts.begin(), parts.size()), axis);
}

Tensor slice(const Tensor& x, std::size_t axis, std::size_t begin, std::size_t end) {
    require_matrix(x, "slice");
    const std::size_t r = x.shape()[0], c = x.shape()[1];
    const std::size_t extent = axis == 0 ? r : c;
    if (axis > 1 || begin >= end || end > extent) {
        throw ArgumentError("slice: range [" + std::to_string(begin) + "," + std::to_string(end) +
                            ") on axis " + std::to_string(axis) + " invalid for " + shape_str(x.shape()));
    }
    const std::size_t w = end - begin;
    const auto src = x.data();
    if (axis == 0) {
        std::vector<Real> out(src.begin() + static_cast<std::ptrdiff_t>(begin * c),
                              src.begin() + static_cast<std::ptrdiff_t>(end * c));
        return make_result(Shape{w, c}, std::move(out), {x.node()}, [begin, c](detail::Node& self) {
            auto& p = *self.parents[0];
            for (std::size_t i = 0; i < self.grad.size(); ++i) p.grad[begin * c + i] += self.grad[i];
        });
    }
    std::vector<Real> out(r * w);
    for (std::size_t i = 0; i < r; ++i)
        for (std::size_t j = 0; j < w; ++j) out[i * w + j] = src[i * c + begin + j];
    return make_result(Shape{r, w}, std::move(out), {x.node()}, [r, c, w, begin](detail::Node& self) {
        auto& p = *self.parents[0];
        for (std::size_t i = 0; i < r; ++i)
            for (std::size_t j = 0; j < w; ++j) p.grad[i * c + begin + j] += self.grad[i * w + j];
    });
}

Tensor gather_cols(const Tensor& x, const IndexMatrix& idx) {
    require_matrix(x, "gather_cols");
    const std::size_t r = x.shape()[0], c = x.shape()[1];
    if (idx.rows != r) {
        throw DimensionError("gather_cols: index rows " + std::to_string(idx.rows) +
                             " for input " + shape_str(x.shape()));
    }
    const auto src = x.data();
    std::vector<Real> out(r * idx.cols);
    for (std::size_t i = 0; i < r; ++i) {
        for (std::size_t j = 0; j < idx.cols; ++j) {
            const std::size_t col = idx(i, j);
            if (col >= c) throw IndexError("gather_cols: column " + std::to_string(col) + " out of range");
            out[i * idx.cols + j] = src[i * c + col];
        }
    }
    return make_result(Shape{r, idx.cols}, std::move(out), {x.node()}, [idx, c](detail::Node& self) {
        auto& p = *self.parents[0];
        for (std::size_t i = 0; i < idx.rows; ++i)
            for (std::size_t j = 0; j < idx.cols; ++j) p.grad[i * c + idx(i, j)] += self.grad[i * idx.cols + j];
    });
}

Tensor gather_weighted_sum(const Tensor& weights, const IndexMatrix& idx, const Tensor& values) {
    require_matrix(weights, "gather_weighted_sum");
    require_matrix(values, "gather_weighted_sum");
    const std::size_t rows = weights.shape()[0], k = weights.shape()[1];
    const std::size_t n = values.shape()[0], d = values.shape()[1];
    if (idx.rows != rows || idx.cols != k) {
        throw DimensionError("gather_weighted_sum: weights " + shape_str(weights.shape()) +
                             " vs indices [" + std::to_string(idx.rows) + "x" + std::to_string(idx.cols) + "]");
    }
    for (auto i : idx.values) {
        if (i >= n) {
            throw IndexError("gather_weighted_sum: row " + std::to_string(i) + " out of range for " +
                             shape_str(values.shape()));
        }
    }
    const auto wv = weights.data(), vv = values.data();
    std::vector<Real> out(rows * d, 0.0);
    for (std::size_t r = 0; r < rows; ++r)
        for (std::size_t j = 0; j < k; ++j) {
            const Real w = wv[r * k + j];
            const Real* src = vv.data() + idx(r, j) * d;
            for (std::size_t c = 0; c < d; ++c) out[r * d + c] += w * src[c];
        }
    return make_result(Shape{rows, d}, std::move(out), {weights.node(), values.node()},
                       [idx, rows, k, d](detail::Node& self) {
                           auto& pw = *self.parents[0];
                           auto& pv = *self.parents[1];
                           for (std::size_t r = 0; r < rows; ++r) {
                               const Real* g = self.grad.data() + r * d;
                               for (std::size_t j = 0; j < k; ++j) {
                                   const std::size_t row = idx(r, j);
                                   if (pw.requires_grad) {
                                       Real acc = 0.0;
                                       for (std::size_t c = 0; c < d; ++c) acc += g[c] * pv.data[row * d + c];
                                       pw.grad[r * k + j] += acc;
                                   }
                                   if (pv.requires_grad) {
                                       const Real w = pw.data[r * k + j];
                                       for (std::size_t c = 0; c < d; ++c) pv.grad[row * d + c] += w * g[c];
                                   }
                               }
                           }
                       });
}

Tensor dropout(const Tensor& x, Real p, Rng& rng) {
    if (p <= 0.0) return x;
    if (p >= 1.0) throw ArgumentError("dropout: rate must be below 1, got " + std::to_string(p));
    const Real keep = 1.0 / (1.0 - p);
    std::vector<Real> mask(x.numel());
    for (auto& m : mask) m = rng.bernoulli(p) ? 0.0 : keep;
    const auto xv = x.data();
    std::vector<Real> out(xv.size());
    for (std::size_t i = 0; i < out.size(); ++i) out[i] = xv[i] * mask[i];
    return make_result(x.shape(), std::move(out), {x.node()}, [mask = std::move(mask)](detail::Node& self) {
        auto& px = *self.parents[0];
        for (std::size_t i = 0; i < mask.size(); ++i) px.grad[i] += self.grad[i] * mask[i];
    });
}

TopK top_k(const Tensor& values, std::size_t k) {
    if (values.rank() != 1) throw DimensionError("top_k: expected a vector, got " + shape_str(values.shape()));
    const std::size_t n = values.numel();
    if (k == 0 || k > n) {
        throw ArgumentError("top_k: K=" + std::to_string(k) + " must be in [1, " + std::to_string(n) + "]");
    }
    IndexMatrix idx{1, k, ranked_indices(values.data().data(), n, k)};
    // Reuse the matrix gather on a 1 x n view to keep one backward path.
    auto as_matrix = make_result(Shape{1, n}, std::vector<Real>(values.data().begin(), values.data().end()),
                                 {values.node()}, [](detail::Node& self) {
                                     auto& p = *self.parents[0];
                                     for (std::size_t i = 0; i < self.grad.size(); ++i) p.grad[i] += self.grad[i];
                                 });
    auto picked = gather_cols(as_matrix, idx);
    auto flat = make_result(Shape{k}, std::vector<Real>(picked.data().begin(), picked.data().end()),
                            {picked.node()}, [](detail::Node& self) {
                                auto& p = *self.parents[0];
                                for (std::size_t i = 0; i < self.grad.size(); ++i) p.grad[i] += self.grad[i];
                            });
    return TopK{std::move(idx.values), std::move(flat)};
}

IndexMatrix top_k_rows(const Tensor& x, std::size_t k) {
    require_matrix(x, "top_k_rows");
    const std::size_t r = x.shape()[0], c = x.shape()[1];
    if (k == 0 || k > c) {
        throw ArgumentError("top_k: K=" + std::to_string(k) + " must be in [1, " + std::to_string(c) + "]");
    }
    IndexMatrix idx{r, k, {}};
    idx.values.reserve(r * k);
    const auto src = x.data();
    for (std::size_t i = 0; i < r; ++i) {
        auto row = ranked_indices(src.data() + i * c, c, k);
        idx.values.insert(idx.values.end(), row.begin(), row.end());
    }
    return idx;
}

}  // namespace cmn
