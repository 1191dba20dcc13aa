// Copyright 2026 the tfew authors
// SPDX-License-Identifier: Apache-2.0

#include <catch2/catch_amalgamated.hpp>

#include <algorithm>
#include <cmath>
#include <vector>

#include "support.hpp"
#include "tfew/ia3.hpp"
#include "tfew/model.hpp"

using tfew::Activation;
using tfew::GradTape;
using tfew::Model;
using tfew::ModelSpec;
using tfew::Rng;
using tfew::TapeScope;
using tfew::Tensor;

namespace {

std::vector<int> random_tokens(Rng& rng, int len, int vocab) {
    std::vector<int> ids(len);
    for (int& id : ids) id = static_cast<int>(rng.uniform(vocab));
    return ids;
}

// Independent re-derivation of the weight count implied by a spec.
std::size_t expected_param_count(const ModelSpec& s) {
    const std::size_t d = s.d_model, dk = s.d_k, dv = s.d_v, dff = s.d_ff;
    const std::size_t attn = 2 * d * dk + d * dv + dv * d;
    const std::size_t enc_block = d + attn + d + d * dff + dff * d;
    const std::size_t dec_block = d + attn + d + attn + d + d * dff + dff * d;
    return static_cast<std::size_t>(s.vocab_size) * d +
           static_cast<std::size_t>(s.max_seq_len) * d +
           static_cast<std::size_t>(s.enc_layers) * enc_block +
           static_cast<std::size_t>(s.dec_layers) * dec_block + 2 * d +
           d * static_cast<std::size_t>(s.vocab_size);
}

}  // namespace

TEST_CASE("build_model is deterministic per seed and varies across seeds") {
    const auto spec = tfew::toy_spec();
    auto a = tfew::build_model(spec, 42);
    auto b = tfew::build_model(spec, 42);
    auto c = tfew::build_model(spec, 43);

    auto wa = a.named_weights();
    auto wb = b.named_weights();
    auto wc = c.named_weights();
    bool any_diff = false;
    for (std::size_t i = 0; i < wa.size(); ++i) {
        REQUIRE(test_support::value_hash(wa[i].second) == test_support::value_hash(wb[i].second));
        any_diff = any_diff ||
                   test_support::value_hash(wa[i].second) != test_support::value_hash(wc[i].second);
    }
    REQUIRE(any_diff);
}

TEST_CASE("parameter count matches the closed-form expectation") {
    ModelSpec spec = tfew::toy_spec();
    REQUIRE(tfew::build_model(spec, 1).parameter_count() == expected_param_count(spec));

    spec.d_ff = 48;
    spec.enc_layers = 3;
    spec.dec_layers = 1;
    REQUIRE(tfew::build_model(spec, 1).parameter_count() == expected_param_count(spec));
}

TEST_CASE("invalid specs raise config errors naming the field") {
    ModelSpec spec = tfew::toy_spec();
    spec.d_k = 30;  // not divisible by 4 heads
    REQUIRE_THROWS_MATCHES(
        tfew::build_model(spec, 0), tfew::ConfigError,
        Catch::Matchers::MessageMatches(Catch::Matchers::ContainsSubstring("d_k")));

    spec = tfew::toy_spec();
    spec.vocab_size = 0;
    REQUIRE_THROWS_MATCHES(
        tfew::build_model(spec, 0), tfew::ConfigError,
        Catch::Matchers::MessageMatches(Catch::Matchers::ContainsSubstring("vocab_size")));

    spec = tfew::toy_spec();
    spec.enc_layers = 0;
    REQUIRE_THROWS_AS(tfew::build_model(spec, 0), tfew::ConfigError);
}

TEST_CASE("attention with ones rescaling equals plain attention bit for bit") {
    Rng rng(7);
    auto q = Tensor<double>::randn({5, 8}, rng);
    auto k = Tensor<double>::randn({5, 8}, rng);
    auto v = Tensor<double>::randn({5, 8}, rng);
    auto lk = Tensor<double>::filled({8}, 1.0);
    auto lv = Tensor<double>::filled({8}, 1.0);

    auto plain = tfew::attention<double>(q, k, v, nullptr, nullptr, 2, false);
    auto ones = tfew::attention<double>(q, k, v, &lk, &lv, 2, false);
    for (std::size_t i = 0; i < plain.numel(); ++i)
        REQUIRE(plain.value()[i] == ones.value()[i]);
}

TEST_CASE("zero value rescaling zeroes the attention output") {
    Rng rng(9);
    auto q = Tensor<double>::randn({4, 8}, rng);
    auto k = Tensor<double>::randn({4, 8}, rng);
    auto v = Tensor<double>::randn({4, 8}, rng);
    auto lv = Tensor<double>::filled({8}, 0.0);
    auto out = tfew::attention<double>(q, k, v, nullptr, &lv, 4, true);
    for (double x : out.value()) REQUIRE(x == 0.0);
}

TEST_CASE("single-position attention returns the rescaled value row for any l_k") {
    Rng rng(11);
    auto q = Tensor<double>::randn({1, 8}, rng);
    auto k = Tensor<double>::randn({1, 8}, rng);
    auto v = Tensor<double>::randn({1, 8}, rng);
    auto lv = Tensor<double>::randn({8}, rng);

    auto lk1 = Tensor<double>::randn({8}, rng);
    auto lk2 = Tensor<double>::randn({8}, rng);
    auto out1 = tfew::attention<double>(q, k, v, &lk1, &lv, 2, false);
    auto out2 = tfew::attention<double>(q, k, v, &lk2, &lv, 2, false);
    for (int j = 0; j < 8; ++j) {
        REQUIRE_THAT(out1.at(0, j), Catch::Matchers::WithinAbs(lv.at(j) * v.at(0, j), 1e-12));
        REQUIRE_THAT(out2.at(0, j), Catch::Matchers::WithinAbs(out1.at(0, j), 1e-12));
    }
}

TEST_CASE("attention rejects mismatched rescaling vectors") {
    Rng rng(13);
    auto q = Tensor<double>::randn({3, 8}, rng);
    auto k = Tensor<double>::randn({3, 8}, rng);
    auto v = Tensor<double>::randn({3, 8}, rng);
    auto bad = Tensor<double>::filled({6}, 1.0);
    REQUIRE_THROWS_AS(tfew::attention<double>(q, k, v, &bad, nullptr, 2, false),
                      tfew::ShapeError);
    REQUIRE_THROWS_AS(tfew::attention<double>(q, k, v, nullptr, &bad, 2, false),
                      tfew::ShapeError);
}

TEST_CASE("ffn rescaling identities and hand-computed case") {
    Rng rng(15);
    auto x = Tensor<double>::randn({3, 4}, rng);
    auto w1 = Tensor<double>::randn({4, 6}, rng);
    auto w2 = Tensor<double>::randn({6, 4}, rng);

    auto ones = Tensor<double>::filled({6}, 1.0);
    auto base = tfew::ffn<double>(x, w1, w2, nullptr, Activation::kRelu);
    auto with_ones = tfew::ffn<double>(x, w1, w2, &ones, Activation::kRelu);
    for (std::size_t i = 0; i < base.numel(); ++i)
        REQUIRE(base.value()[i] == with_ones.value()[i]);

    auto zeros = Tensor<double>::filled({6}, 0.0);
    auto zeroed = tfew::ffn<double>(x, w1, w2, &zeros, Activation::kRelu);
    for (double v : zeroed.value()) REQUIRE(v == 0.0);

    // x = [1 2], W1 = [[1 -1],[0 2]], l_ff = [2 0.5], W2 = [[1 0],[1 1]]
    // xW1 = [1 3]; relu -> [1 3]; rescale -> [2 1.5]; result = [3.5 1.5]
    auto hx = Tensor<double>::from_data({1, 2}, {1, 2});
    auto hw1 = Tensor<double>::from_data({2, 2}, {1, -1, 0, 2});
    auto hw2 = Tensor<double>::from_data({2, 2}, {1, 0, 1, 1});
    auto hl = Tensor<double>::from_data({2}, {2, 0.5});
    auto hout = tfew::ffn<double>(hx, hw1, hw2, &hl, Activation::kRelu);
    REQUIRE_THAT(hout.at(0, 0), Catch::Matchers::WithinAbs(3.5, 1e-12));
    REQUIRE_THAT(hout.at(0, 1), Catch::Matchers::WithinAbs(1.5, 1e-12));
}

TEST_CASE("forward with a fresh adapter matches the unadapted model to 0 ulp") {
    const auto spec = tfew::toy_spec();
    auto model = tfew::build_model(spec, 5);
    auto adapter = tfew::init_adapter(spec);
    Rng rng(17);
    for (int trial = 0; trial < 20; ++trial) {
        auto input = random_tokens(rng, 1 + static_cast<int>(rng.uniform(10)), spec.vocab_size);
        auto target = random_tokens(rng, 1 + static_cast<int>(rng.uniform(6)), spec.vocab_size);
        auto without = tfew::forward<double>(model, nullptr, input, target);
        auto with = tfew::forward(model, &adapter, input, target);
        for (std::size_t i = 0; i < without.numel(); ++i)
            REQUIRE(without.value()[i] == with.value()[i]);
    }
}

TEST_CASE("decoder is causally masked") {
    const auto spec = tfew::toy_spec();
    auto model = tfew::build_model(spec, 21);
    Rng rng(23);
    auto input = random_tokens(rng, 6, spec.vocab_size);
    auto target = random_tokens(rng, 6, spec.vocab_size);

    auto base = tfew::forward<double>(model, nullptr, input, target);

    SECTION("perturbing target position t leaves logits at positions <= t unchanged") {
        for (int t = 1; t < 6; ++t) {
            auto perturbed = target;
            perturbed[t] = (perturbed[t] + 1) % spec.vocab_size;
            auto logits = tfew::forward<double>(model, nullptr, input, perturbed);
            for (int row = 0; row <= t; ++row)
                for (int j = 0; j < spec.vocab_size; ++j)
                    REQUIRE(logits.at(row, j) == base.at(row, j));
        }
    }

    SECTION("permuting the suffix after t leaves the prefix invariant") {
        for (int t = 1; t < 5; ++t) {
            auto permuted = target;
            std::reverse(permuted.begin() + t + 1, permuted.end());
            auto logits = tfew::forward<double>(model, nullptr, input, permuted);
            for (int row = 0; row <= t; ++row)
                for (int j = 0; j < spec.vocab_size; ++j)
                    REQUIRE(logits.at(row, j) == base.at(row, j));
        }
    }
}

TEST_CASE("forward checks shapes and token ranges") {
    const auto spec = tfew::toy_spec();
    auto model = tfew::build_model(spec, 31);
    Rng rng(33);
    auto input = random_tokens(rng, 4, spec.vocab_size);
    auto target = random_tokens(rng, 3, spec.vocab_size);

    auto logits = tfew::forward<double>(model, nullptr, input, target);
    REQUIRE(logits.rows() == 3);
    REQUIRE(logits.cols() == spec.vocab_size);

    auto bad = input;
    bad[2] = spec.vocab_size;
    REQUIRE_THROWS_MATCHES(
        tfew::forward<double>(model, nullptr, bad, target), tfew::InputError,
        Catch::Matchers::MessageMatches(Catch::Matchers::ContainsSubstring("position 2")));

    REQUIRE_THROWS_AS(tfew::forward<double>(model, nullptr, input, std::vector<int>{}),
                      tfew::ContractError);

    std::vector<int> too_long(spec.max_seq_len + 1, 1);
    REQUIRE_THROWS_AS(tfew::forward<double>(model, nullptr, too_long, target),
                      tfew::InputError);
}

TEST_CASE("gradients reach every rescaling vector with frozen base weights") {
    const auto spec = tfew::toy_spec();
    auto model = tfew::build_model(spec, 35);
    auto adapter = tfew::init_adapter(spec);
    adapter.set_trainable(true);

    Rng rng(37);
    auto input = random_tokens(rng, 5, spec.vocab_size);
    auto target = random_tokens(rng, 4, spec.vocab_size);

    GradTape<double> tape;
    {
        TapeScope<double> scope(tape);
        auto logits = tfew::forward(model, &adapter, input, target);
        // squared logits make the loss sensitive to every feature sign
        tape.backward(tfew::sum(tfew::mul(logits, logits)));
    }
    for (const auto& [name, t] : adapter.named_vectors()) {
        INFO(name);
        REQUIRE(t.has_grad());
        double norm = 0.0;
        for (double g : t.grad()) norm += g * g;
        REQUIRE(norm > 0.0);
    }
    for (const auto& [name, t] : model.named_weights()) REQUIRE_FALSE(t.has_grad());
}
