// Copyright 2026 the tfew authors
// SPDX-License-Identifier: Apache-2.0

#include <catch2/catch_amalgamated.hpp>

#include <cmath>
#include <vector>

#include "support.hpp"
#include "tfew/tensor.hpp"

using tfew::GradTape;
using tfew::Rng;
using tfew::TapeScope;
using tfew::Tensor;

namespace {

Tensor<double> random_tensor(std::vector<int> shape, Rng& rng, bool requires_grad = false) {
    return Tensor<double>::randn(std::move(shape), rng, 1.0, requires_grad);
}

}  // namespace

TEST_CASE("matmul identity and analytic cases") {
    auto eye = Tensor<double>::from_data({2, 2}, {1, 0, 0, 1});
    auto a = Tensor<double>::from_data({2, 2}, {1, 2, 3, 4});
    auto prod = tfew::matmul(eye, a);
    for (int i = 0; i < 2; ++i)
        for (int j = 0; j < 2; ++j) REQUIRE(prod.at(i, j) == a.at(i, j));

    auto row = Tensor<double>::from_data({1, 2}, {1, 2});
    auto col = Tensor<double>::from_data({2, 1}, {3, 4});
    REQUIRE(tfew::matmul(row, col).item() == 11.0);
}

TEST_CASE("matmul rejects mismatched shapes, naming both") {
    auto a = Tensor<double>::zeros({2, 3});
    auto b = Tensor<double>::zeros({2, 3});
    REQUIRE_THROWS_MATCHES(tfew::matmul(a, b), tfew::ShapeError,
                           Catch::Matchers::MessageMatches(
                               Catch::Matchers::ContainsSubstring("[2x3]") &&
                               Catch::Matchers::ContainsSubstring("x [2x3]")));
}

TEST_CASE("matmul gradients match central finite differences") {
    Rng rng(7);
    auto a = random_tensor({3, 4}, rng, true);
    auto b = random_tensor({4, 2}, rng, true);

    auto loss_value = [&]() {
        // weighted sum so the loss depends on every output entry differently
        auto prod = tfew::matmul(a, b);
        double acc = 0.0;
        for (int i = 0; i < prod.rows(); ++i)
            for (int j = 0; j < prod.cols(); ++j) acc += (1.0 + i + 2.0 * j) * prod.at(i, j);
        return acc;
    };

    GradTape<double> tape;
    {
        TapeScope<double> scope(tape);
        auto prod = tfew::matmul(a, b);
        std::vector<double> w(prod.numel());
        for (int i = 0; i < prod.rows(); ++i)
            for (int j = 0; j < prod.cols(); ++j) w[i * prod.cols() + j] = 1.0 + i + 2.0 * j;
        auto weights = Tensor<double>::from_data({3, 2}, w);
        tape.backward(tfew::sum(tfew::mul(prod, weights)));
    }

    REQUIRE(test_support::max_rel_error(a.grad(), test_support::fd_gradient(loss_value, a)) <
            1e-6);
    REQUIRE(test_support::max_rel_error(b.grad(), test_support::fd_gradient(loss_value, b)) <
            1e-6);
}

TEST_CASE("elementwise ones vector leaves matrix unchanged") {
    Rng rng(3);
    auto x = random_tensor({2, 3}, rng);
    auto ones = Tensor<double>::filled({3}, 1.0);
    auto y = tfew::mul(x, ones);
    for (std::size_t i = 0; i < x.numel(); ++i) REQUIRE(y.value()[i] == x.value()[i]);
}

TEST_CASE("elementwise vector broadcast analytic case") {
    auto x = Tensor<double>::from_data({2, 2}, {1, 3, 5, 7});
    auto l = Tensor<double>::from_data({2}, {2, 0});
    auto y = tfew::mul(x, l);
    REQUIRE(y.at(0, 0) == 2.0);
    REQUIRE(y.at(0, 1) == 0.0);
    REQUIRE(y.at(1, 0) == 10.0);
    REQUIRE(y.at(1, 1) == 0.0);
}

TEST_CASE("broadcast semantics match l_j * x_ij exhaustively on small shapes") {
    Rng rng(11);
    for (int rows = 1; rows <= 3; ++rows) {
        for (int cols = 1; cols <= 4; ++cols) {
            auto x = random_tensor({rows, cols}, rng);
            auto l = random_tensor({cols}, rng);
            auto y = tfew::mul(x, l);
            for (int i = 0; i < rows; ++i)
                for (int j = 0; j < cols; ++j) REQUIRE(y.at(i, j) == l.at(j) * x.at(i, j));
        }
    }
}

TEST_CASE("non-broadcastable shapes raise a shape error") {
    auto x = Tensor<double>::zeros({2, 3});
    auto l = Tensor<double>::zeros({2});
    REQUIRE_THROWS_AS(tfew::mul(x, l), tfew::ShapeError);
    REQUIRE_THROWS_AS(tfew::add(x, Tensor<double>::zeros({3, 2})), tfew::ShapeError);
}

TEST_CASE("gradient of sum(l * x) w.r.t. l equals column sums of x") {
    Rng rng(5);
    auto x = random_tensor({4, 3}, rng);
    auto l = random_tensor({3}, rng, true);

    GradTape<double> tape;
    {
        TapeScope<double> scope(tape);
        tape.backward(tfew::sum(tfew::mul(x, l)));
    }

    auto fd = test_support::fd_gradient(
        [&]() { return tfew::sum(tfew::mul(x, l)).item(); }, l);
    REQUIRE(test_support::max_rel_error(l.grad(), fd) < 1e-6);

    for (int j = 0; j < 3; ++j) {
        double col = 0.0;
        for (int i = 0; i < 4; ++i) col += x.at(i, j);
        REQUIRE_THAT(l.grad_at(j), Catch::Matchers::WithinAbs(col, 1e-12));
    }
}

TEST_CASE("softmax basics") {
    auto u = tfew::softmax_lastdim(Tensor<double>::from_data({3}, {0, 0, 0}));
    for (int j = 0; j < 3; ++j) REQUIRE_THAT(u.at(j), Catch::Matchers::WithinAbs(1.0 / 3, 1e-15));

    auto v = tfew::softmax_lastdim(Tensor<double>::from_data({2}, {0.0, std::log(2.0)}));
    REQUIRE_THAT(v.at(0), Catch::Matchers::WithinAbs(1.0 / 3, 1e-15));
    REQUIRE_THAT(v.at(1), Catch::Matchers::WithinAbs(2.0 / 3, 1e-15));
}

TEST_CASE("softmax is overflow-safe and shift-invariant") {
    auto big = tfew::softmax_lastdim(Tensor<double>::from_data({2}, {1000.0, 1000.5}));
    auto small = tfew::softmax_lastdim(Tensor<double>::from_data({2}, {0.0, 0.5}));
    for (int j = 0; j < 2; ++j) {
        REQUIRE(std::isfinite(big.at(j)));
        REQUIRE_THAT(big.at(j), Catch::Matchers::WithinAbs(small.at(j), 1e-12));
    }
}

TEST_CASE("softmax rows sum to one and shift invariance holds for random input") {
    Rng rng(19);
    for (int trial = 0; trial < 20; ++trial) {
        auto x = random_tensor({3, 5}, rng);
        auto y = tfew::softmax_lastdim(x);
        const double c = rng.normal() * 10.0;
        auto shifted = tfew::softmax_lastdim(tfew::add_constant(x, c));
        for (int i = 0; i < 3; ++i) {
            double s = 0.0;
            for (int j = 0; j < 5; ++j) {
                REQUIRE(y.at(i, j) >= 0.0);
                s += y.at(i, j);
                REQUIRE_THAT(shifted.at(i, j), Catch::Matchers::WithinAbs(y.at(i, j), 1e-6));
            }
            REQUIRE_THAT(s, Catch::Matchers::WithinAbs(1.0, 1e-6));
        }
    }
}

TEST_CASE("backward of a plain sum gives ones") {
    auto x = Tensor<double>::from_data({2, 2}, {1, 2, 3, 4}, true);
    GradTape<double> tape;
    {
        TapeScope<double> scope(tape);
        tape.backward(tfew::sum(x));
    }
    for (int i = 0; i < 4; ++i) REQUIRE(x.grad()[i] == 1.0);
}

TEST_CASE("backward of x*x at 3 gives 6") {
    auto x = Tensor<double>::scalar(3.0, true);
    GradTape<double> tape;
    {
        TapeScope<double> scope(tape);
        tape.backward(tfew::mul(x, x));
    }
    REQUIRE_THAT(x.grad()[0], Catch::Matchers::WithinAbs(6.0, 1e-12));
}

TEST_CASE("backward contract violations") {
    auto x = Tensor<double>::from_data({2}, {1, 2}, true);
    GradTape<double> tape;
    {
        TapeScope<double> scope(tape);
        auto y = tfew::mul(x, x);
        REQUIRE_THROWS_AS(tape.backward(y), tfew::ContractError);
        auto loss = tfew::sum(y);
        tape.backward(loss);
        REQUIRE_THROWS_AS(tape.backward(loss), tfew::StateError);
    }
}

TEST_CASE("composed expressions match finite differences") {
    Rng rng(23);
    auto x = random_tensor({2, 3}, rng, true);
    auto w = random_tensor({3, 3}, rng, true);
    auto l = random_tensor({3}, rng, true);

    auto build = [&]() {
        auto h = tfew::matmul(x, w);
        h = tfew::relu(tfew::add(h, l));
        auto probs = tfew::softmax_lastdim(tfew::mul(h, l));
        auto mixed = tfew::add(tfew::exp(tfew::scale(h, 0.3)), probs);
        auto shifted = tfew::add_constant(mixed, 1.5);
        return tfew::sum(tfew::log(shifted));
    };

    GradTape<double> tape;
    {
        TapeScope<double> scope(tape);
        tape.backward(build());
    }

    for (auto* t : {&x, &w, &l}) {
        auto fd = test_support::fd_gradient([&]() { return build().item(); }, *t);
        REQUIRE(test_support::max_rel_error(t->grad(), fd) < 1e-4);
    }
}

TEST_CASE("gelu and log1m gradients match finite differences") {
    Rng rng(29);
    auto x = random_tensor({2, 4}, rng, true);
    auto build = [&]() {
        auto p = tfew::softmax_lastdim(tfew::gelu(x));
        return tfew::sum(tfew::log1m(p));
    };
    GradTape<double> tape;
    {
        TapeScope<double> scope(tape);
        tape.backward(build());
    }
    auto fd = test_support::fd_gradient([&]() { return build().item(); }, x);
    REQUIRE(test_support::max_rel_error(x.grad(), fd) < 1e-4);
}

TEST_CASE("structural ops route gradients correctly") {
    Rng rng(31);
    auto x = random_tensor({3, 6}, rng, true);
    auto s = random_tensor({6}, rng, true);

    auto build = [&]() {
        auto normed = tfew::rms_norm(x, s);
        auto left = tfew::slice_cols(normed, 0, 3);
        auto right = tfew::slice_cols(normed, 3, 6);
        auto scores = tfew::causal_mask(tfew::matmul(left, tfew::transpose(right)));
        auto attn = tfew::softmax_lastdim(scores);
        auto out = tfew::concat_cols<double>({tfew::matmul(attn, left), right});
        auto picked = tfew::gather_rows(out, {1, 4, 2});
        return tfew::sum(picked);
    };

    GradTape<double> tape;
    {
        TapeScope<double> scope(tape);
        tape.backward(build());
    }
    for (auto* t : {&x, &s}) {
        auto fd = test_support::fd_gradient([&]() { return build().item(); }, *t);
        REQUIRE(test_support::max_rel_error(t->grad(), fd) < 1e-4);
    }
}

TEST_CASE("embedding scatter-adds gradients into looked-up rows") {
    Rng rng(37);
    auto table = random_tensor({5, 3}, rng, true);
    std::vector<int> ids{1, 1, 4};

    GradTape<double> tape;
    {
        TapeScope<double> scope(tape);
        tape.backward(tfew::sum(tfew::embed(table, ids)));
    }
    auto fd = test_support::fd_gradient(
        [&]() { return tfew::sum(tfew::embed(table, ids)).item(); }, table);
    REQUIRE(test_support::max_rel_error(table.grad(), fd) < 1e-6);
    REQUIRE(table.grad_at(1, 0) == 2.0);  // row used twice
    REQUIRE(table.grad_at(0, 0) == 0.0);

    REQUIRE_THROWS_AS(tfew::embed(table, std::vector<int>{0, 9}), tfew::InputError);
}

TEST_CASE("stack_scalars and pick keep gradient routing") {
    auto a = Tensor<double>::scalar(0.5, true);
    auto b = Tensor<double>::scalar(-1.0, true);
    auto build = [&]() {
        auto stacked = tfew::stack_scalars<double>({a, b});
        return tfew::scale(tfew::pick(tfew::log_softmax_lastdim(stacked), 0), -1.0);
    };
    GradTape<double> tape;
    {
        TapeScope<double> scope(tape);
        tape.backward(build());
    }
    for (auto* t : {&a, &b}) {
        auto fd = test_support::fd_gradient([&]() { return build().item(); }, *t);
        REQUIRE(test_support::max_rel_error(t->grad(), fd) < 1e-6);
    }
}

TEST_CASE("log_softmax matches log of softmax and its gradient checks out") {
    Rng rng(41);
    auto x = random_tensor({2, 5}, rng, true);
    auto direct = tfew::log_softmax_lastdim(x);
    auto composed = tfew::softmax_lastdim(x);
    for (int i = 0; i < 2; ++i)
        for (int j = 0; j < 5; ++j)
            REQUIRE_THAT(direct.at(i, j),
                         Catch::Matchers::WithinAbs(std::log(composed.at(i, j)), 1e-12));

    auto build = [&]() {
        return tfew::sum(tfew::gather_rows(tfew::log_softmax_lastdim(x), {2, 0}));
    };
    GradTape<double> tape;
    {
        TapeScope<double> scope(tape);
        tape.backward(build());
    }
    auto fd = test_support::fd_gradient([&]() { return build().item(); }, x);
    REQUIRE(test_support::max_rel_error(x.grad(), fd) < 1e-4);
}

TEST_CASE("same seed produces bit-identical tensors") {
    Rng r1(99), r2(99);
    auto a = Tensor<double>::randn({4, 4}, r1);
    auto b = Tensor<double>::randn({4, 4}, r2);
    for (std::size_t i = 0; i < a.numel(); ++i) REQUIRE(a.value()[i] == b.value()[i]);
}

TEST_CASE("operations without an active tape record nothing") {
    auto x = Tensor<double>::from_data({2}, {1, 2}, true);
    auto y = tfew::mul(x, x);
    REQUIRE_FALSE(y.requires_grad());
}
