#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <numeric>

#include "cmn/errors.hpp"
#include "cmn/tensor.hpp"
#include "support.hpp"

using namespace cmn;
using cmn::testing::gradcheck;
using cmn::testing::probe;
using cmn::testing::random_tensor;

namespace {

void check_values(const Tensor& t, std::initializer_list<Real> expected, Real tol = 1e-12) {
    REQUIRE(t.numel() == expected.size());
    std::size_t i = 0;
    for (Real e : expected) CHECK(t.data()[i++] == doctest::Approx(e).epsilon(tol));
}

}  // namespace

TEST_CASE("matmul small cases") {
    const Tensor id = Tensor::matrix({{1, 0}, {0, 1}});
    const Tensor b = Tensor::matrix({{1, 2}, {3, 4}});
    check_values(matmul(id, b), {1, 2, 3, 4});
    check_values(matmul(Tensor::matrix({{1, 0}, {0, 0}}), Tensor::matrix({{5}, {7}})), {5, 0});
    CHECK_THROWS_AS(matmul(b, Tensor::matrix({{1, 2, 3}})), DimensionError);
    try {
        matmul(b, Tensor::matrix({{1, 2, 3}}));
    } catch (const DimensionError& e) {
        CHECK(std::string(e.what()).find("[2x2]") != std::string::npos);
    }
}

TEST_CASE("matmul gradient") {
    Rng rng(1);
    const auto r = gradcheck({random_tensor({3, 3}, rng), random_tensor({3, 3}, rng)},
                             [](const auto& in) { return sum(matmul(in[0], in[1])); });
    CHECK(r.max_rel < 1e-4);
    const auto r2 = gradcheck({random_tensor({2, 5}, rng), random_tensor({5, 3}, rng)},
                              [](const auto& in) { return probe(matmul(in[0], in[1])); });
    CHECK(r2.max_rel < 1e-4);
}

TEST_CASE("softmax values") {
    check_values(softmax(Tensor::vector({0, 0, 0})), {1.0 / 3, 1.0 / 3, 1.0 / 3});
    const Tensor big = softmax(Tensor::vector({1000, 0}));
    CHECK(std::isfinite(big.at(0)));
    CHECK(big.at(0) == doctest::Approx(1.0));
    CHECK(big.at(1) < 1e-300);
    Rng rng(2);
    for (int trial = 0; trial < 50; ++trial) {
        const Tensor x = random_tensor({4, 7}, rng, 30.0, false);
        for (int axis : {0, 1}) {
            const Tensor s = softmax(x, axis);
            const std::size_t outer = axis == 1 ? 4 : 7, inner = axis == 1 ? 7 : 4;
            for (std::size_t o = 0; o < outer; ++o) {
                Real total = 0;
                for (std::size_t i = 0; i < inner; ++i) total += axis == 1 ? s.at(o, i) : s.at(i, o);
                CHECK(total == doctest::Approx(1.0).epsilon(1e-6));
            }
        }
    }
}

TEST_CASE("softmax Jacobian") {
    Rng rng(3);
    const Tensor x = random_tensor({5}, rng);
    for (std::size_t out = 0; out < 5; ++out) {
        std::vector<Real> onehot(5, 0.0);
        onehot[out] = 1.0;
        const Tensor pick(Shape{5}, onehot);
        const auto r = gradcheck({x}, [&](const auto& in) { return sum(mul(softmax(in[0]), pick)); });
        CHECK(r.max_rel < 1e-4);
    }
    const auto r = gradcheck({random_tensor({3, 4}, rng)}, [](const auto& in) { return probe(softmax(in[0], 0)); });
    CHECK(r.max_rel < 1e-4);
}

TEST_CASE("layer norm") {
    const Tensor one = Tensor::vector({1, 1});
    const Tensor zero = Tensor::vector({0, 0});
    check_values(layer_norm(Tensor::matrix({{3, 3}}), one, zero), {0, 0});
    const Tensor y = layer_norm(Tensor::matrix({{1, -1}}), one, zero);
    CHECK(y.at(0) == doctest::Approx(1.0).epsilon(1e-4));
    CHECK(y.at(1) == doctest::Approx(-1.0).epsilon(1e-4));
    Rng rng(4);
    const auto r = gradcheck({random_tensor({3, 6}, rng), random_tensor({6}, rng), random_tensor({6}, rng)},
                             [](const auto& in) { return probe(layer_norm(in[0], in[1], in[2])); });
    CHECK(r.max_rel < 1e-4);
}

TEST_CASE("embedding lookup") {
    Rng rng(5);
    const Tensor table = random_tensor({6, 3}, rng);
    const std::vector<int> ids{4, 0, 4};
    const Tensor e = embedding_lookup(table, ids);
    REQUIRE(e.shape() == Shape{3, 3});
    for (std::size_t c = 0; c < 3; ++c) CHECK(e.at(0, c) == table.at(4, c));
    const auto r = gradcheck({table}, [&](const auto& in) { return probe(embedding_lookup(in[0], ids)); });
    CHECK(r.max_rel < 1e-4);
    const std::vector<int> bad{6};
    CHECK_THROWS_AS(embedding_lookup(table, bad), IndexError);
}

TEST_CASE("cross entropy") {
    const Tensor uniform = Tensor::zeros({3, 8});
    const std::vector<int> targets{1, 5, 7};
    CHECK(cross_entropy(uniform, targets, 0).item() == doctest::Approx(std::log(8.0)).epsilon(1e-12));

    const Tensor logits = Tensor::matrix({{2, 0, 0}, {0, 9, -9}});
    const std::vector<int> with_pad{1, 0};
    const Real expect = std::log(std::exp(2.0) + 2.0);
    CHECK(cross_entropy(logits, with_pad, 0).item() == doctest::Approx(expect).epsilon(1e-12));
    const std::vector<int> all_pad{0, 0};
    CHECK_THROWS_AS(cross_entropy(logits, all_pad, 0), ArgumentError);

    Rng rng(6);
    const std::vector<int> t{2, 0, 3, 1};
    const auto r = gradcheck({random_tensor({4, 5}, rng)}, [&](const auto& in) { return cross_entropy(in[0], t, 0); });
    CHECK(r.max_rel < 1e-4);
}

TEST_CASE("elementwise, transpose, concat and slice gradients") {
    Rng rng(7);
    const Tensor a = random_tensor({3, 4}, rng), b = random_tensor({3, 4}, rng), row = random_tensor({4}, rng);
    CHECK(gradcheck({a, b}, [](const auto& in) { return probe(add(in[0], in[1])); }).max_rel < 1e-4);
    CHECK(gradcheck({a, row}, [](const auto& in) { return probe(add(in[0], in[1])); }).max_rel < 1e-4);
    CHECK(gradcheck({a, b}, [](const auto& in) { return probe(sub(in[0], in[1])); }).max_rel < 1e-4);
    CHECK(gradcheck({a, b}, [](const auto& in) { return probe(mul(in[0], in[1])); }).max_rel < 1e-4);
    CHECK(gradcheck({a}, [](const auto& in) { return probe(scale(in[0], -2.5)); }).max_rel < 1e-4);
    CHECK(gradcheck({a}, [](const auto& in) { return probe(relu(in[0])); }).max_rel < 1e-4);
    CHECK(gradcheck({a}, [](const auto& in) { return probe(transpose(in[0])); }).max_rel < 1e-4);
    CHECK(gradcheck({a, b}, [](const auto& in) { return probe(concat({in[0], in[1]}, 0)); }).max_rel < 1e-4);
    CHECK(gradcheck({a, b}, [](const auto& in) { return probe(concat({in[0], in[1]}, 1)); }).max_rel < 1e-4);
    CHECK(gradcheck({row, row.clone(true)}, [](const auto& in) { return probe(concat({in[0], in[1]}, 0)); })
              .max_rel < 1e-4);
    CHECK(gradcheck({a}, [](const auto& in) { return probe(slice(in[0], 1, 1, 3)); }).max_rel < 1e-4);
    CHECK(gradcheck({a}, [](const auto& in) { return probe(slice(in[0], 0, 2, 3)); }).max_rel < 1e-4);

    const Tensor t = transpose(Tensor::matrix({{1, 2, 3}}));
    CHECK(t.shape() == Shape{3, 1});
    CHECK(concat({a, b}, 0).shape() == Shape{6, 4});
    CHECK_THROWS_AS(concat({a, Tensor::zeros({2, 3})}, 0), DimensionError);
}

TEST_CASE("gather ops") {
    Rng rng(8);
    const Tensor x = random_tensor({2, 5}, rng);
    const IndexMatrix idx{2, 3, {4, 0, 2, 1, 1, 3}};
    const Tensor g = gather_cols(x, idx);
    CHECK(g.at(0, 0) == x.at(0, 4));
    CHECK(g.at(1, 2) == x.at(1, 3));
    CHECK(gradcheck({x}, [&](const auto& in) { return probe(gather_cols(in[0], idx)); }).max_rel < 1e-4);

    const Tensor w = random_tensor({2, 3}, rng), values = random_tensor({5, 4}, rng);
    const Tensor s = gather_weighted_sum(w, idx, values);
    for (std::size_t r = 0; r < 2; ++r)
        for (std::size_t c = 0; c < 4; ++c) {
            Real expect = 0;
            for (std::size_t j = 0; j < 3; ++j) expect += w.at(r, j) * values.at(idx(r, j), c);
            CHECK(s.at(r, c) == doctest::Approx(expect).epsilon(1e-14));
        }
    CHECK(gradcheck({w, values}, [&](const auto& in) { return probe(gather_weighted_sum(in[0], idx, in[1])); })
              .max_rel < 1e-4);
}

TEST_CASE("top_k") {
    const auto a = top_k(Tensor::vector({3, 1, 2}), 2);
    CHECK(a.indices == std::vector<std::size_t>{0, 2});
    check_values(a.values, {3, 2});
    CHECK(top_k(Tensor::vector({1, 1, 1}), 2).indices == std::vector<std::size_t>{0, 1});
    CHECK_THROWS_AS(top_k(Tensor::vector({1, 2}), 3), ArgumentError);
    CHECK_THROWS_AS(top_k(Tensor::vector({1, 2}), 0), ArgumentError);

    // Full stable descending sort as the oracle, with frequent ties.
    Rng rng(9);
    for (std::size_t n = 1; n <= 64; ++n) {
        for (int trial = 0; trial < 3; ++trial) {
            std::vector<Real> v(n);
            for (auto& x : v) x = trial == 0 ? static_cast<Real>(rng.below(4)) : rng.normal();
            std::vector<std::size_t> order(n);
            std::iota(order.begin(), order.end(), 0);
            std::stable_sort(order.begin(), order.end(), [&](std::size_t l, std::size_t r) { return v[l] > v[r]; });
            for (std::size_t k = 1; k <= n; ++k) {
                const auto got = top_k(Tensor(Shape{n}, v), k);
                REQUIRE(got.indices == std::vector<std::size_t>(order.begin(), order.begin() + k));
            }
            const auto rows = top_k_rows(Tensor(Shape{1, n}, v), n);
            CHECK(rows.values == order);
        }
    }

    // Gradient reaches only the selected entries.
    const Tensor x = Tensor::vector({0.5, 3.0, -1.0, 2.0}, true);
    sum(top_k(x, 2).values).backward();
    CHECK(std::vector<Real>(x.grad().begin(), x.grad().end()) == std::vector<Real>{0, 1, 0, 1});
    CHECK(gradcheck({Tensor::vector({0.5, 3.0, -1.0, 2.0}, true)},
                    [](const auto& in) { return probe(top_k(in[0], 3).values); })
              .max_rel < 1e-4);
}

TEST_CASE("reuse accumulates gradient") {
    Tensor x = Tensor::vector({1.5, -2.0}, true);
    sum(add(x, x)).backward();
    CHECK(x.grad()[0] == 2.0);
    CHECK(x.grad()[1] == 2.0);
    x.zero_grad();
    sum(mul(x, x)).backward();
    CHECK(x.grad()[0] == doctest::Approx(3.0));
    CHECK(x.grad()[1] == doctest::Approx(-4.0));

    // Diamond: y used by two branches that meet again.
    const Tensor a = Tensor::vector({2.0}, true);
    const Tensor y = scale(a, 3.0);
    const std::size_t visited = sum(add(mul(y, y), y)).backward();
    CHECK(a.grad()[0] == doctest::Approx(2 * 3 * 6.0 + 3.0));
    CHECK(visited == 5);
}

TEST_CASE("no-grad guard and detach") {
    const Tensor x = Tensor::vector({1, 2}, true);
    {
        NoGradGuard guard;
        CHECK_FALSE(grad_enabled());
        const Tensor y = scale(x, 2.0);
        CHECK_FALSE(y.requires_grad());
    }
    CHECK(grad_enabled());
    const Tensor d = scale(x, 2.0).detach();
    CHECK_FALSE(d.requires_grad());
    CHECK(d.at(1) == 4.0);
}

TEST_CASE("dropout") {
    Rng rng(10);
    const Tensor x = Tensor::full({100}, 1.0, true);
    CHECK(dropout(x, 0.0, rng).same_node(x));
    Rng r1(3), r2(3);
    const Tensor a = dropout(x, 0.5, r1), b = dropout(x, 0.5, r2);
    CHECK(std::equal(a.data().begin(), a.data().end(), b.data().begin()));
    for (Real v : a.data()) CHECK((v == 0.0 || v == 2.0));
    CHECK_THROWS_AS(dropout(x, 1.0, rng), ArgumentError);
}
