#pragma once

// Cross-modal memory: a trainable N x d matrix queried by feature sequences.
//
// Querying, per head h with d_h = d / H:
//   q_p = x_p W_q^(h),  k_i = m_i W_k^(h),  D_pi = q_p . k_i / sqrt(d_h)
//   select the K largest D_pi (ties to the lower row), w = softmax over those K.
// Responding, per head:
//   v_i = m_i W_v^(h),  r_p^(h) = sum_j w_pj v_{sel_pj}
// Head responses are concatenated and mapped back to d by W_o.
//
// Each W_* is stored as one d x d matrix whose column block h is the
// per-head d x d_h projection.

#include <cstddef>
#include <cstdint>
#include <iosfwd>
#include <span>
#include <string>
#include <vector>

#include "cmn/random.hpp"
#include "cmn/tensor.hpp"

namespace cmn {

struct MemoryMatrix {
    Tensor rows;  // N x d

    std::size_t slots() const { return rows.shape()[0]; }
    std::size_t dim() const { return rows.shape()[1]; }

    static MemoryMatrix random(std::size_t slots, std::size_t dim, Rng& rng, Real stddev = 0.02);
};

struct MemoryHeads {
    std::size_t heads = 1;
    Tensor w_q;  // d x d
    Tensor w_k;
    Tensor w_v;
    Tensor w_o;

    std::size_t dim() const { return w_q.shape()[0]; }
    std::size_t head_dim() const { return dim() / heads; }

    static MemoryHeads random(std::size_t dim, std::size_t heads, Rng& rng, Real stddev = 0.02);
};

/// Selected rows and weights for every (position, head), rank-ordered.
class QueryTrace {
public:
    QueryTrace() = default;
    QueryTrace(std::size_t positions, std::size_t heads, std::size_t k);

    std::size_t positions() const { return positions_; }
    std::size_t heads() const { return heads_; }
    std::size_t k() const { return k_; }

    std::size_t index(std::size_t pos, std::size_t head, std::size_t rank) const {
        return indices_[offset(pos, head, rank)];
    }
    Real weight(std::size_t pos, std::size_t head, std::size_t rank) const {
        return weights_[offset(pos, head, rank)];
    }
    void set(std::size_t pos, std::size_t head, std::size_t rank, std::size_t index, Real weight) {
        indices_[offset(pos, head, rank)] = index;
        weights_[offset(pos, head, rank)] = weight;
    }

    /// Indices and weights of one head as position-major matrices.
    IndexMatrix head_indices(std::size_t head) const;
    Tensor head_weights(std::size_t head) const;

private:
    std::size_t offset(std::size_t pos, std::size_t head, std::size_t rank) const {
        return (pos * heads_ + head) * k_ + rank;
    }

    std::size_t positions_ = 0;
    std::size_t heads_ = 0;
    std::size_t k_ = 0;
    std::vector<std::size_t> indices_;
    std::vector<Real> weights_;
};

/// Memory keys and values projected once and reused across many queries.
struct ProjectedMemory {
    Tensor keys;    // N x d, column block h = keys of head h
    Tensor values;  // N x d
    std::size_t heads = 1;
};

/// Result of the query step with weights still attached to the graph.
struct MemoryQuery {
    QueryTrace trace;
    std::vector<IndexMatrix> indices;  // per head, L x K
    std::vector<Tensor> weights;       // per head, L x K
};

struct MemoryResponse {
    Tensor response;  // L x d
    QueryTrace trace;
};

ProjectedMemory project_memory(const MemoryMatrix& mem, const MemoryHeads& heads);

MemoryQuery query(const Tensor& features, const MemoryMatrix& mem, const MemoryHeads& heads, std::size_t k);
MemoryQuery query(const Tensor& features, const ProjectedMemory& projected, const MemoryHeads& heads,
                  std::size_t k);

Tensor respond(const MemoryQuery& q, const MemoryMatrix& mem, const MemoryHeads& heads);
Tensor respond(const MemoryQuery& q, const ProjectedMemory& projected, const MemoryHeads& heads);
/// Responds with the trace's weights as constants.
Tensor respond(const QueryTrace& trace, const MemoryMatrix& mem, const MemoryHeads& heads);

/// Head responses before the output projection, concatenated: L x d.
Tensor respond_heads(const QueryTrace& trace, const MemoryMatrix& mem, const MemoryHeads& heads);

MemoryResponse query_and_respond(const Tensor& features, const MemoryMatrix& mem, const MemoryHeads& heads,
                                 std::size_t k);
MemoryResponse query_and_respond(const Tensor& features, const ProjectedMemory& projected,
                                 const MemoryHeads& heads, std::size_t k);

struct MemoryParamCount {
    std::size_t matrix = 0;       // N * d
    std::size_t projections = 0;  // 3 * H * d * d_h + d * d
    std::size_t total = 0;
    double percent_of(std::size_t model_total) const {
        return model_total ? 100.0 * static_cast<double>(total) / static_cast<double>(model_total) : 0.0;
    }
};

MemoryParamCount memory_param_count(std::size_t slots, std::size_t dim, std::size_t heads);
MemoryParamCount memory_param_count(const MemoryMatrix& mem, const MemoryHeads& heads);

/// CSV with columns modality,position,head,rank,memory_index,weight.
void write_trace_csv_header(std::ostream& out);
void write_trace_csv(std::ostream& out, const std::string& modality, const QueryTrace& trace);

}  // namespace cmn
