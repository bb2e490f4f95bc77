#include <doctest.h>

#include <cmath>
#include <set>
#include <sstream>

#include "cmn/errors.hpp"
#include "cmn/memory.hpp"
#include "oracles.hpp"
#include "support.hpp"

using namespace cmn;
using cmn::testing::gradcheck;
using cmn::testing::probe;
using cmn::testing::random_tensor;

namespace {

MemoryHeads identity_heads(std::size_t d, std::size_t heads = 1) {
    std::vector<Real> id(d * d, 0.0);
    for (std::size_t i = 0; i < d; ++i) id[i * d + i] = 1.0;
    MemoryHeads h;
    h.heads = heads;
    h.w_q = Tensor(Shape{d, d}, id);
    h.w_k = Tensor(Shape{d, d}, id);
    h.w_v = Tensor(Shape{d, d}, id);
    h.w_o = Tensor(Shape{d, d}, id);
    return h;
}

void check_trace_invariants(const QueryTrace& t, std::size_t slots) {
    for (std::size_t p = 0; p < t.positions(); ++p)
        for (std::size_t h = 0; h < t.heads(); ++h) {
            std::set<std::size_t> seen;
            Real total = 0;
            for (std::size_t r = 0; r < t.k(); ++r) {
                CHECK(t.index(p, h, r) < slots);
                seen.insert(t.index(p, h, r));
                CHECK(t.weight(p, h, r) > 0.0);
                total += t.weight(p, h, r);
                if (r > 0) CHECK(t.weight(p, h, r) <= t.weight(p, h, r - 1));
            }
            CHECK(seen.size() == t.k());
            CHECK(total == doctest::Approx(1.0).epsilon(1e-6));
        }
}

}  // namespace

TEST_CASE("identity projections select the aligned row") {
    const MemoryMatrix mem{Tensor::matrix({{1, 0}, {0, 1}})};
    const auto heads = identity_heads(2);
    const Tensor x = Tensor::matrix({{1, 0}});
    const auto q = query(x, mem, heads, 1);
    CHECK(q.trace.index(0, 0, 0) == 0);
    CHECK(q.trace.weight(0, 0, 0) == 1.0);
    // With K=2 the weights expose the scaled distances 1/sqrt(2) and 0.
    const auto q2 = query(x, mem, heads, 2);
    CHECK(q2.trace.weight(0, 0, 0) == doctest::Approx(1.0 / (1.0 + std::exp(-1.0 / std::sqrt(2.0)))));
}

TEST_CASE("equidistant rows share weight") {
    const MemoryMatrix mem{Tensor::matrix({{1, 1}, {1, 1}, {-1, -1}})};
    const auto q = query(Tensor::matrix({{0.3, 0.3}}), mem, identity_heads(2), 2);
    CHECK(q.trace.index(0, 0, 0) == 0);
    CHECK(q.trace.index(0, 0, 1) == 1);
    CHECK(q.trace.weight(0, 0, 0) == 0.5);
    CHECK(q.trace.weight(0, 0, 1) == 0.5);
}

TEST_CASE("respond small cases") {
    SUBCASE("single selection returns the value-projected row") {
        Rng rng(1);
        const auto mem = MemoryMatrix::random(5, 4, rng, 1.0);
        const auto heads = MemoryHeads::random(4, 2, rng, 1.0);
        QueryTrace trace(1, 2, 1);
        trace.set(0, 0, 0, 3, 1.0);
        trace.set(0, 1, 0, 1, 1.0);
        const Tensor r = respond_heads(trace, mem, heads);
        const auto v = oracle::mat_mul(oracle::to_mat(mem.rows), oracle::to_mat(heads.w_v));
        CHECK(r.at(0, 0) == doctest::Approx(v[3][0]));
        CHECK(r.at(0, 1) == doctest::Approx(v[3][1]));
        CHECK(r.at(0, 2) == doctest::Approx(v[1][2]));
        CHECK(r.at(0, 3) == doctest::Approx(v[1][3]));
    }
    SUBCASE("midpoint of two transformed rows") {
        const MemoryMatrix mem{Tensor::matrix({{2, 0}, {0, 2}})};
        QueryTrace trace(1, 1, 2);
        trace.set(0, 0, 0, 0, 0.5);
        trace.set(0, 0, 1, 1, 0.5);
        const Tensor r = respond(trace, mem, identity_heads(2));
        CHECK(r.at(0, 0) == 1.0);
        CHECK(r.at(0, 1) == 1.0);
    }
}

TEST_CASE("query and respond match the dense oracle") {
    Rng rng(2);
    for (std::size_t heads : {1, 2, 4}) {
        const std::size_t d = 8, n = 16, k = 4;
        const auto mem = MemoryMatrix::random(n, d, rng, 1.0);
        const auto mh = MemoryHeads::random(d, heads, rng, 0.5);
        const Tensor x = random_tensor({5, d}, rng, 1.0, false);
        const auto got = query_and_respond(x, mem, mh, k);
        const auto want = oracle::dense_memory(oracle::to_mat(x), oracle::to_mat(mem.rows), oracle::to_mat(mh.w_q),
                                               oracle::to_mat(mh.w_k), oracle::to_mat(mh.w_v),
                                               oracle::to_mat(mh.w_o), heads, k);
        check_trace_invariants(got.trace, n);
        for (std::size_t p = 0; p < 5; ++p) {
            for (std::size_t h = 0; h < heads; ++h)
                for (std::size_t r = 0; r < k; ++r) {
                    CHECK(got.trace.index(p, h, r) == want.indices[p][h][r]);
                    CHECK(std::abs(got.trace.weight(p, h, r) - want.weights[p][h][r]) < 1e-12);
                }
            for (std::size_t c = 0; c < d; ++c) CHECK(std::abs(got.response.at(p, c) - want.response[p][c]) < 1e-12);
        }
    }
}

TEST_CASE("K equal to N is a dense softmax") {
    Rng rng(3);
    const auto mem = MemoryMatrix::random(6, 4, rng, 1.0);
    const auto mh = MemoryHeads::random(4, 1, rng, 1.0);
    const Tensor x = random_tensor({2, 4}, rng, 1.0, false);
    const auto q = query(x, mem, mh, 6);
    const Tensor dist = scale(matmul(matmul(x, mh.w_q), transpose(matmul(mem.rows, mh.w_k))), 0.5);
    const Tensor dense = softmax(dist, 1);
    for (std::size_t p = 0; p < 2; ++p)
        for (std::size_t r = 0; r < 6; ++r)
            CHECK(q.trace.weight(p, 0, r) == doctest::Approx(dense.at(p, q.trace.index(p, 0, r))).epsilon(1e-12));
}

TEST_CASE("memory gradients") {
    Rng rng(4);
    const std::size_t d = 4;
    const Tensor x = random_tensor({3, d}, rng, 1.0);
    const Tensor m = random_tensor({6, d}, rng, 1.0);
    const Tensor wq = random_tensor({d, d}, rng), wk = random_tensor({d, d}, rng);
    const Tensor wv = random_tensor({d, d}, rng), wo = random_tensor({d, d}, rng);
    const auto r = gradcheck({x, m, wq, wk, wv, wo}, [](const auto& in) {
        MemoryHeads h{2, in[2], in[3], in[4], in[5]};
        return probe(query_and_respond(in[0], MemoryMatrix{in[1]}, h, 3).response);
    });
    CHECK(r.max_rel < 1e-4);
}

TEST_CASE("ties go to the lowest index with uniform weights") {
    Rng rng(5);
    const auto mem = MemoryMatrix::random(8, 4, rng, 1.0);
    auto mh = MemoryHeads::random(4, 2, rng, 1.0);
    mh.w_q = Tensor::zeros({4, 4});
    const auto q = query(Tensor::zeros({1, 4}), mem, mh, 3);
    for (std::size_t h = 0; h < 2; ++h)
        for (std::size_t r = 0; r < 3; ++r) {
            CHECK(q.trace.index(0, h, r) == r);
            CHECK(q.trace.weight(0, h, r) == doctest::Approx(1.0 / 3));
        }
}

TEST_CASE("purity and permutation equivariance") {
    Rng rng(6);
    const auto mem = MemoryMatrix::random(10, 4, rng, 1.0);
    const auto mh = MemoryHeads::random(4, 2, rng, 1.0);
    const Tensor row = random_tensor({1, 4}, rng, 1.0, false);
    const Tensor other = random_tensor({1, 4}, rng, 1.0, false);
    const auto out = query_and_respond(concat({row, other, row}, 0), mem, mh, 3);
    for (std::size_t c = 0; c < 4; ++c) CHECK(out.response.at(0, c) == out.response.at(2, c));

    const auto swapped = query_and_respond(concat({other, row, row}, 0), mem, mh, 3);
    for (std::size_t h = 0; h < 2; ++h)
        for (std::size_t r = 0; r < 3; ++r) {
            CHECK(swapped.trace.index(0, h, r) == out.trace.index(1, h, r));
            CHECK(swapped.trace.index(1, h, r) == out.trace.index(0, h, r));
        }
}

TEST_CASE("respond is linear in the weights") {
    Rng rng(7);
    const auto mem = MemoryMatrix::random(6, 4, rng, 1.0);
    const auto mh = MemoryHeads::random(4, 1, rng, 1.0);
    QueryTrace a(1, 1, 3), b(1, 1, 3), blend(1, 1, 3);
    const Real wa[] = {0.5, 0.3, 0.2}, wb[] = {0.1, 0.1, 0.8}, alpha = 0.25;
    for (std::size_t r = 0; r < 3; ++r) {
        a.set(0, 0, r, r + 2, wa[r]);
        b.set(0, 0, r, r + 2, wb[r]);
        blend.set(0, 0, r, r + 2, alpha * wa[r] + (1 - alpha) * wb[r]);
    }
    const Tensor ra = respond(a, mem, mh), rb = respond(b, mem, mh), rm = respond(blend, mem, mh);
    for (std::size_t c = 0; c < 4; ++c)
        CHECK(rm.at(0, c) == doctest::Approx(alpha * ra.at(0, c) + (1 - alpha) * rb.at(0, c)).epsilon(1e-12));
}

TEST_CASE("parameter accounting") {
    CHECK(memory_param_count(64, 8, 1).matrix == 512);
    // N=4, d=4, H=2: M 4x4, three 4x4 projections split into two 4x2 heads, W_o 4x4.
    const auto c = memory_param_count(4, 4, 2);
    CHECK(c.matrix == 16);
    CHECK(c.projections == 3 * (2 * 4 * 2) + 16);
    CHECK(c.total == 80);
    Rng rng(8);
    const auto mem = MemoryMatrix::random(4, 4, rng);
    const auto mh = MemoryHeads::random(4, 2, rng);
    CHECK(memory_param_count(mem, mh).total ==
          mem.rows.numel() + mh.w_q.numel() + mh.w_k.numel() + mh.w_v.numel() + mh.w_o.numel());
    double last = 0.0;
    for (std::size_t n : {8, 16, 64, 256}) {
        const double pct = memory_param_count(n, 8, 2).percent_of(10000);
        CHECK(pct > last);
        last = pct;
    }
}

TEST_CASE("memory errors") {
    Rng rng(9);
    const auto mem = MemoryMatrix::random(4, 4, rng);
    const auto mh = MemoryHeads::random(4, 2, rng);
    CHECK_THROWS_AS(query(Tensor::zeros({1, 4}), mem, mh, 5), ArgumentError);
    CHECK_THROWS_AS(query(Tensor::zeros({1, 4}), mem, mh, 0), ArgumentError);
    CHECK_THROWS_AS(query(Tensor::zeros({1, 3}), mem, mh, 2), DimensionError);
    CHECK_THROWS_AS(MemoryHeads::random(4, 3, rng), ArgumentError);
    QueryTrace stale(1, 2, 1);
    stale.set(0, 0, 0, 7, 1.0);
    CHECK_THROWS_AS(respond(stale, mem, mh), ConsistencyError);
}

TEST_CASE("trace CSV") {
    Rng rng(10);
    const auto mem = MemoryMatrix::random(6, 4, rng, 1.0);
    const auto mh = MemoryHeads::random(4, 2, rng, 1.0);
    const auto q = query(random_tensor({3, 4}, rng, 1.0, false), mem, mh, 2);
    std::ostringstream out;
    write_trace_csv_header(out);
    write_trace_csv(out, "visual", q.trace);
    std::istringstream in(out.str());
    std::string line;
    std::getline(in, line);
    CHECK(line == "modality,position,head,rank,memory_index,weight");
    std::size_t rows = 0;
    while (std::getline(in, line)) {
        ++rows;
        CHECK(line.rfind("visual,", 0) == 0);
    }
    CHECK(rows == 3 * 2 * 2);
}
