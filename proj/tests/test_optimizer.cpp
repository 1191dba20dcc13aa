// Copyright 2026 the tfew authors
// SPDX-License-Identifier: Apache-2.0

#include <catch2/catch_amalgamated.hpp>

#include <cmath>
#include <vector>

#include "support.hpp"
#include "tfew/optimizer.hpp"

using tfew::Adafactor;
using tfew::NamedParam;
using tfew::Rng;
using tfew::Schedule;
using tfew::Tensor;

TEST_CASE("schedule hits the documented points") {
    Schedule s;
    REQUIRE(tfew::lr(0, s) == 0.0);
    REQUIRE(tfew::lr(60, s) == 3e-3);
    REQUIRE_THAT(tfew::lr(530, s), Catch::Matchers::WithinRel(1.5e-3, 1e-12));
    REQUIRE(tfew::lr(1000, s) == 0.0);
    REQUIRE(tfew::lr(1001, s) == 0.0);
    REQUIRE(tfew::lr(5000, s) == 0.0);
    REQUIRE_THROWS_AS(tfew::lr(-1, s), tfew::ContractError);
}

TEST_CASE("schedule is piecewise linear and continuous") {
    Schedule s;
    const double max_delta =
        s.peak_lr / std::min(s.warmup_steps, s.total_steps - s.warmup_steps);
    for (int step = 0; step < s.total_steps; ++step) {
        const double delta = std::abs(tfew::lr(step + 1, s) - tfew::lr(step, s));
        REQUIRE(delta <= max_delta + 1e-15);
    }
    Schedule degenerate{1e-2, 0, 10};
    REQUIRE(tfew::lr(0, degenerate) == 1e-2);
}

TEST_CASE("zero gradients leave parameters unchanged") {
    auto w = Tensor<double>::from_data({2, 2}, {1, 2, 3, 4});
    Adafactor<double> opt;
    for (int i = 0; i < 3; ++i) opt.step({{"w", w}}, 1e-2);
    REQUIRE(w.at(0, 0) == 1.0);
    REQUIRE(w.at(1, 1) == 4.0);
}

TEST_CASE("scalar parameter follows the hand-stepped recurrence") {
    const double lr = 1e-2, eps2 = 1e-30, d = 1.0;
    const std::vector<double> grads{0.4, -1.3, 0.05};

    double x_oracle = 1.5;
    double v = 0.0;
    for (int t = 1; t <= 3; ++t) {
        const double beta = 1.0 - std::pow(static_cast<double>(t), -0.8);
        const double g = grads[t - 1];
        v = beta * v + (1.0 - beta) * (g * g + eps2);
        double u = g / std::sqrt(v);
        u /= std::max(1.0, std::abs(u) / d);
        x_oracle -= lr * u;
    }

    auto x = Tensor<double>::scalar(1.5, true);
    Adafactor<double> opt;
    for (int t = 1; t <= 3; ++t) {
        x.grad_buffer()[0] = grads[t - 1];
        opt.step({{"x", x}}, lr);
    }
    REQUIRE_THAT(x.item(), Catch::Matchers::WithinAbs(x_oracle, 1e-15));
    REQUIRE(opt.steps_taken() == 3);
}

TEST_CASE("identical parameters with identical gradients get identical updates") {
    Rng rng(5);
    auto a = Tensor<double>::randn({3, 4}, rng);
    auto b = Tensor<double>::from_data({3, 4}, {a.value().begin(), a.value().end()});
    auto g = Tensor<double>::randn({3, 4}, rng);

    Adafactor<double> opt;
    for (int step = 0; step < 5; ++step) {
        for (auto* p : {&a, &b}) {
            auto& buf = p->grad_buffer();
            for (std::size_t i = 0; i < buf.size(); ++i) buf[i] = g.value()[i];
        }
        opt.step({{"a", a}, {"b", b}}, 2e-3);
    }
    for (std::size_t i = 0; i < a.numel(); ++i) REQUIRE(a.value()[i] == b.value()[i]);
}

TEST_CASE("updates are RMS-clipped at lr times the threshold") {
    Rng rng(7);
    auto w = Tensor<double>::randn({4, 4}, rng);
    const double lr = 5e-3;
    Adafactor<double> opt;
    for (int step = 0; step < 20; ++step) {
        auto before = std::vector<double>(w.value().begin(), w.value().end());
        auto& buf = w.grad_buffer();
        for (std::size_t i = 0; i < buf.size(); ++i) buf[i] = 0.3;  // constant gradients
        opt.step({{"w", w}}, lr);
        double mean_sq = 0.0;
        for (std::size_t i = 0; i < w.numel(); ++i) {
            const double delta = w.value()[i] - before[i];
            mean_sq += delta * delta;
        }
        mean_sq /= static_cast<double>(w.numel());
        REQUIRE(std::sqrt(mean_sq) <= lr * 1.0 + 1e-12);
    }
}

TEST_CASE("factored and unfactored paths give finite sane updates") {
    Rng rng(9);
    auto mat = Tensor<double>::randn({6, 3}, rng);
    auto vec = Tensor<double>::randn({5}, rng);
    Adafactor<double> opt;
    for (int step = 0; step < 10; ++step) {
        for (double& g : mat.grad_buffer()) g = rng.normal();
        for (double& g : vec.grad_buffer()) g = rng.normal();
        opt.step({{"mat", mat}, {"vec", vec}}, 1e-3);
    }
    for (double v : mat.value()) REQUIRE(std::isfinite(v));
    for (double v : vec.value()) REQUIRE(std::isfinite(v));
}

TEST_CASE("NaN gradients abort with the parameter name") {
    auto w = Tensor<double>::from_data({2}, {1, 2});
    w.grad_buffer()[1] = std::nan("");
    Adafactor<double> opt;
    REQUIRE_THROWS_MATCHES(
        opt.step({{"w_bad", w}}, 1e-3), tfew::TrainError,
        Catch::Matchers::MessageMatches(Catch::Matchers::ContainsSubstring("w_bad")));
}
