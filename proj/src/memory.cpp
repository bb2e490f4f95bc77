#include "cmn/memory.hpp"

#include <cmath>
#include <iomanip>
#include <ostream>

#include "cmn/errors.hpp"

namespace cmn {

namespace {

Tensor normal_matrix(std::size_t rows, std::size_t cols, Rng& rng, Real stddev) {
    std::vector<Real> data(rows * cols);
    for (auto& v : data) v = rng.normal(0.0, stddev);
    return Tensor(Shape{rows, cols}, std::move(data), true);
}

void check_heads(const MemoryHeads& heads, std::size_t dim) {
    if (heads.heads == 0 || dim % heads.heads != 0) {
        throw ArgumentError("memory heads " + std::to_string(heads.heads) + " must divide d=" +
                            std::to_string(dim));
    }
    if (heads.dim() != dim) {
        throw DimensionError("memory projections are " + shape_str(heads.w_q.shape()) +
                             " but memory rows have d=" + std::to_string(dim));
    }
}

Tensor head_block(const Tensor& m, std::size_t head, std::size_t head_dim) {
    return slice(m, 1, head * head_dim, (head + 1) * head_dim);
}

void check_indices(const IndexMatrix& idx, std::size_t slots) {
    for (auto i : idx.values) {
        if (i >= slots) {
            throw ConsistencyError("trace references memory row " + std::to_string(i) +
                                   " but the memory has " + std::to_string(slots) + " rows");
        }
    }
}

}  // namespace

MemoryMatrix MemoryMatrix::random(std::size_t slots, std::size_t dim, Rng& rng, Real stddev) {
    return MemoryMatrix{normal_matrix(slots, dim, rng, stddev)};
}

MemoryHeads MemoryHeads::random(std::size_t dim, std::size_t heads, Rng& rng, Real stddev) {
    if (heads == 0 || dim % heads != 0) {
        throw ArgumentError("memory heads " + std::to_string(heads) + " must divide d=" + std::to_string(dim));
    }
    MemoryHeads h;
    h.heads = heads;
    h.w_q = normal_matrix(dim, dim, rng, stddev);
    h.w_k = normal_matrix(dim, dim, rng, stddev);
    h.w_v = normal_matrix(dim, dim, rng, stddev);
    h.w_o = normal_matrix(dim, dim, rng, stddev);
    return h;
}

QueryTrace::QueryTrace(std::size_t positions, std::size_t heads, std::size_t k)
    : positions_(positions),
      heads_(heads),
      k_(k),
      indices_(positions * heads * k, 0),
      weights_(positions * heads * k, 0.0) {}

IndexMatrix QueryTrace::head_indices(std::size_t head) const {
    IndexMatrix idx{positions_, k_, std::vector<std::size_t>(positions_ * k_)};
    for (std::size_t p = 0; p < positions_; ++p)
        for (std::size_t r = 0; r < k_; ++r) idx.values[p * k_ + r] = index(p, head, r);
    return idx;
}

Tensor QueryTrace::head_weights(std::size_t head) const {
    std::vector<Real> w(positions_ * k_);
    for (std::size_t p = 0; p < positions_; ++p)
        for (std::size_t r = 0; r < k_; ++r) w[p * k_ + r] = weight(p, head, r);
    return Tensor(Shape{positions_, k_}, std::move(w));
}

ProjectedMemory project_memory(const MemoryMatrix& mem, const MemoryHeads& heads) {
    check_heads(heads, mem.dim());
    return ProjectedMemory{matmul(mem.rows, heads.w_k), matmul(mem.rows, heads.w_v), heads.heads};
}

MemoryQuery query(const Tensor& features, const ProjectedMemory& projected, const MemoryHeads& heads,
                  std::size_t k) {
    const std::size_t dim = heads.dim();
    check_heads(heads, projected.keys.shape()[1]);
    if (features.rank() != 2 || features.shape()[1] != dim) {
        throw DimensionError("memory query expects L x " + std::to_string(dim) + " features, got " +
                             shape_str(features.shape()));
    }
    const std::size_t slots = projected.keys.shape()[0];
    if (k == 0 || k > slots) {
        throw ArgumentError("memory query K=" + std::to_string(k) + " must be in [1, N=" +
                            std::to_string(slots) + "]");
    }
    const std::size_t positions = features.shape()[0];
    const std::size_t head_dim = heads.head_dim();
    const Real inv_scale = 1.0 / std::sqrt(static_cast<Real>(head_dim));

    const Tensor queries = matmul(features, heads.w_q);
    MemoryQuery out{QueryTrace(positions, heads.heads, k), {}, {}};
    for (std::size_t h = 0; h < heads.heads; ++h) {
        const Tensor qh = heads.heads == 1 ? queries : head_block(queries, h, head_dim);
        const Tensor kh = heads.heads == 1 ? projected.keys : head_block(projected.keys, h, head_dim);
        const Tensor distances = scale(matmul(qh, transpose(kh)), inv_scale);
        IndexMatrix selected = top_k_rows(distances, k);
        Tensor weights = softmax(gather_cols(distances, selected), -1);
        const auto wv = weights.data();
        for (std::size_t p = 0; p < positions; ++p)
            for (std::size_t r = 0; r < k; ++r) out.trace.set(p, h, r, selected(p, r), wv[p * k + r]);
        out.indices.push_back(std::move(selected));
        out.weights.push_back(std::move(weights));
    }
    return out;
}

MemoryQuery query(const Tensor& features, const MemoryMatrix& mem, const MemoryHeads& heads, std::size_t k) {
    return query(features, project_memory(mem, heads), heads, k);
}

Tensor respond(const MemoryQuery& q, const ProjectedMemory& projected, const MemoryHeads& heads) {
    const std::size_t slots = projected.values.shape()[0];
    const std::size_t head_dim = heads.head_dim();
    if (q.weights.size() != heads.heads || q.indices.size() != heads.heads) {
        throw ConsistencyError("query has " + std::to_string(q.weights.size()) + " heads, memory has " +
                               std::to_string(heads.heads));
    }
    std::vector<Tensor> parts;
    parts.reserve(heads.heads);
    for (std::size_t h = 0; h < heads.heads; ++h) {
        check_indices(q.indices[h], slots);
        const Tensor vh = heads.heads == 1 ? projected.values : head_block(projected.values, h, head_dim);
        parts.push_back(gather_weighted_sum(q.weights[h], q.indices[h], vh));
    }
    const Tensor joined = parts.size() == 1 ? parts[0] : concat(parts, 1);
    return matmul(joined, heads.w_o);
}

Tensor respond(const MemoryQuery& q, const MemoryMatrix& mem, const MemoryHeads& heads) {
    return respond(q, project_memory(mem, heads), heads);
}

Tensor respond_heads(const QueryTrace& trace, const MemoryMatrix& mem, const MemoryHeads& heads) {
    check_heads(heads, mem.dim());
    if (trace.heads() != heads.heads) {
        throw ConsistencyError("trace has " + std::to_string(trace.heads()) + " heads, memory has " +
                               std::to_string(heads.heads));
    }
    const Tensor values = matmul(mem.rows, heads.w_v);
    std::vector<Tensor> parts;
    for (std::size_t h = 0; h < heads.heads; ++h) {
        const IndexMatrix idx = trace.head_indices(h);
        check_indices(idx, mem.slots());
        const Tensor vh = heads.heads == 1 ? values : head_block(values, h, heads.head_dim());
        parts.push_back(gather_weighted_sum(trace.head_weights(h), idx, vh));
    }
    return parts.size() == 1 ? parts[0] : concat(parts, 1);
}

Tensor respond(const QueryTrace& trace, const MemoryMatrix& mem, const MemoryHeads& heads) {
    return matmul(respond_heads(trace, mem, heads), heads.w_o);
}

MemoryResponse query_and_respond(const Tensor& features, const ProjectedMemory& projected,
                                 const MemoryHeads& heads, std::size_t k) {
    MemoryQuery q = query(features, projected, heads, k);
    Tensor response = respond(q, projected, heads);
    return MemoryResponse{std::move(response), std::move(q.trace)};
}

MemoryResponse query_and_respond(const Tensor& features, const MemoryMatrix& mem, const MemoryHeads& heads,
                                 std::size_t k) {
    return query_and_respond(features, project_memory(mem, heads), heads, k);
}

MemoryParamCount memory_param_count(std::size_t slots, std::size_t dim, std::size_t heads) {
    if (heads == 0 || dim % heads != 0) {
        throw ArgumentError("memory heads " + std::to_string(heads) + " must divide d=" + std::to_string(dim));
    }
    const std::size_t head_dim = dim / heads;
    MemoryParamCount c;
    c.matrix = slots * dim;
    c.projections = 3 * heads * dim * head_dim + dim * dim;
    c.total = c.matrix + c.projections;
    return c;
}

MemoryParamCount memory_param_count(const MemoryMatrix& mem, const MemoryHeads& heads) {
    return memory_param_count(mem.slots(), mem.dim(), heads.heads);
}

void write_trace_csv_header(std::ostream& out) { out << "modality,position,head,rank,memory_index,weight\n"; }

void write_trace_csv(std::ostream& out, const std::string& modality, const QueryTrace& trace) {
    const auto old_precision = out.precision(17);
    for (std::size_t p = 0; p < trace.positions(); ++p)
        for (std::size_t h = 0; h < trace.heads(); ++h)
            for (std::size_t r = 0; r < trace.k(); ++r)
                out << modality << ',' << p << ',' << h << ',' << r << ',' << trace.index(p, h, r) << ','
                    << trace.weight(p, h, r) << '\n';
    out.precision(old_precision);
}

}  // namespace cmn
