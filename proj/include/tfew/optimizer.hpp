// Copyright 2026 the tfew authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cmath>
#include <cstdint>
#include <map>
#include <string>
#include <vector>

#include "tfew/error.hpp"
#include "tfew/tensor.hpp"

namespace tfew {

/// Piecewise-linear learning rate: 0 -> peak over [0, warmup], then
/// peak -> 0 over [warmup, total]. Steps past the end return 0.
struct Schedule {
    double peak_lr = 3e-3;
    int warmup_steps = 60;
    int total_steps = 1000;
};

inline double lr(int step, const Schedule& s) {
    if (step < 0) throw ContractError("negative schedule step");
    if (step > s.total_steps) return 0.0;
    if (step <= s.warmup_steps) {
        if (s.warmup_steps == 0) return s.peak_lr;
        return s.peak_lr * static_cast<double>(step) / static_cast<double>(s.warmup_steps);
    }
    const int decay_span = s.total_steps - s.warmup_steps;
    if (decay_span == 0) return 0.0;
    return s.peak_lr * static_cast<double>(s.total_steps - step) /
           static_cast<double>(decay_span);
}

template <class Real>
struct NamedParam {
    std::string name;
    Tensor<Real> tensor;
};

/// Adafactor with an externally supplied learning rate: factored second
/// moments for matrices, a full accumulator for vectors, no first moment.
/// The second-moment decay follows 1 - t^-0.8; updates are RMS-clipped at
/// the threshold d. Consumes and clears parameter gradients.
template <class Real = double>
class Adafactor {
   public:
    struct Options {
        double decay_exponent = 0.8;
        double eps2 = 1e-30;
        double clip_threshold = 1.0;  // d
    };

    explicit Adafactor(Options opts = {}) : opts_(opts) {}

    std::int64_t steps_taken() const { return t_; }

    void step(const std::vector<NamedParam<Real>>& params, double learning_rate) {
        ++t_;
        const double beta =
            1.0 - std::pow(static_cast<double>(t_), -opts_.decay_exponent);
        for (const auto& p : params) apply(p, beta, learning_rate);
    }

   private:
    struct Slot {
        std::vector<double> row, col;  // factored accumulators (matrices)
        std::vector<double> vec;       // full accumulator (vectors)
        bool initialized = false;
    };

    void apply(const NamedParam<Real>& p, double beta, double learning_rate) {
        const auto& t = p.tensor;
        const std::size_t n = t.numel();
        std::vector<double> g(n, 0.0);
        if (t.has_grad()) {
            for (std::size_t i = 0; i < n; ++i) {
                const double gv = static_cast<double>(t.grad()[i]);
                if (std::isnan(gv)) {
                    throw TrainError("NaN gradient in parameter '" + p.name + "'");
                }
                g[i] = gv;
            }
        }

        Slot& slot = slots_[p.name];
        std::vector<double> u(n);
        if (t.rank() == 2) {
            const int rows = t.rows(), cols = t.cols();
            if (!slot.initialized) {
                slot.row.assign(rows, 0.0);
                slot.col.assign(cols, 0.0);
                slot.initialized = true;
            }
            std::vector<double> rsum(rows, 0.0), csum(cols, 0.0);
            for (int i = 0; i < rows; ++i) {
                for (int j = 0; j < cols; ++j) {
                    const double sq = g[static_cast<std::size_t>(i) * cols + j] *
                                          g[static_cast<std::size_t>(i) * cols + j] +
                                      opts_.eps2;
                    rsum[i] += sq;
                    csum[j] += sq;
                }
            }
            double row_total = 0.0;
            for (int i = 0; i < rows; ++i) {
                slot.row[i] = beta * slot.row[i] + (1.0 - beta) * rsum[i];
                row_total += slot.row[i];
            }
            for (int j = 0; j < cols; ++j) slot.col[j] = beta * slot.col[j] + (1.0 - beta) * csum[j];
            for (int i = 0; i < rows; ++i) {
                for (int j = 0; j < cols; ++j) {
                    const double v = slot.row[i] * slot.col[j] / row_total;
                    u[static_cast<std::size_t>(i) * cols + j] =
                        g[static_cast<std::size_t>(i) * cols + j] / std::sqrt(v);
                }
            }
        } else {
            if (!slot.initialized) {
                slot.vec.assign(n, 0.0);
                slot.initialized = true;
            }
            for (std::size_t i = 0; i < n; ++i) {
                slot.vec[i] = beta * slot.vec[i] + (1.0 - beta) * (g[i] * g[i] + opts_.eps2);
                u[i] = g[i] / std::sqrt(slot.vec[i]);
            }
        }

        double mean_sq = 0.0;
        for (double v : u) mean_sq += v * v;
        mean_sq /= static_cast<double>(n);
        const double clip = std::max(1.0, std::sqrt(mean_sq) / opts_.clip_threshold);

        auto vals = t.mutable_value();
        for (std::size_t i = 0; i < n; ++i) {
            vals[i] -= static_cast<Real>(learning_rate * u[i] / clip);
        }
        t.clear_grad();
    }

    Options opts_;
    std::map<std::string, Slot> slots_;
    std::int64_t t_ = 0;
};

}  // namespace tfew
