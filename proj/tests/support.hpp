// Copyright 2026 the tfew authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cmath>
#include <cstdint>
#include <functional>
#include <vector>

#include "tfew/tensor.hpp"

namespace test_support {

// Central finite differences d(loss)/d(param), evaluated with the loss
// recomputed from scratch at each perturbation. Independent of the tape.
template <class LossFn>
std::vector<double> fd_gradient(LossFn loss, tfew::Tensor<double> param, double eps = 1e-5) {
    std::vector<double> g(param.numel());
    auto vals = param.mutable_value();
    for (std::size_t i = 0; i < vals.size(); ++i) {
        const double orig = vals[i];
        vals[i] = orig + eps;
        const double up = loss();
        vals[i] = orig - eps;
        const double down = loss();
        vals[i] = orig;
        g[i] = (up - down) / (2.0 * eps);
    }
    return g;
}

inline double rel_error(double a, double b, double floor = 1e-6) {
    const double scale = std::max({std::abs(a), std::abs(b), floor});
    return std::abs(a - b) / scale;
}

inline double max_rel_error(std::span<const double> analytic, const std::vector<double>& fd,
                            double floor = 1e-6) {
    double worst = 0.0;
    for (std::size_t i = 0; i < fd.size(); ++i) {
        const double a = i < analytic.size() ? analytic[i] : 0.0;
        worst = std::max(worst, rel_error(a, fd[i], floor));
    }
    return worst;
}

// FNV-1a over raw value bytes; used to assert tensors did not change.
template <class Real>
std::uint64_t value_hash(const tfew::Tensor<Real>& t) {
    std::uint64_t h = 1469598103934665603ULL;
    const auto* bytes = reinterpret_cast<const unsigned char*>(t.value().data());
    for (std::size_t i = 0; i < t.numel() * sizeof(Real); ++i) {
        h ^= bytes[i];
        h *= 1099511628211ULL;
    }
    return h;
}

}  // namespace test_support
