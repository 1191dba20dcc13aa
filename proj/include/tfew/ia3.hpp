// Copyright 2026 the tfew authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstdint>
#include <map>
#include <string>
#include <utility>
#include <vector>

#include "tfew/error.hpp"
#include "tfew/model.hpp"
#include "tfew/tensor.hpp"

namespace tfew {

// Learned rescaling vectors, three per encoder block (keys, values, FFN
// inner activations) and five per decoder block (self-attention and
// cross-attention each get their own key/value pair).

template <class Real>
struct EncoderAdapterBlock {
    Tensor<Real> l_k, l_v, l_ff;
};

template <class Real>
struct DecoderAdapterBlock {
    Tensor<Real> self_l_k, self_l_v;
    Tensor<Real> cross_l_k, cross_l_v;
    Tensor<Real> l_ff;
};

template <class Real = double>
struct IA3Adapter {
    ModelSpec spec;
    std::vector<EncoderAdapterBlock<Real>> enc;
    std::vector<DecoderAdapterBlock<Real>> dec;

    /// Checkpoint naming: enc.{i}.l_k / l_v / l_ff and
    /// dec.{i}.self.l_k / self.l_v / cross.l_k / cross.l_v / l_ff.
    std::vector<std::pair<std::string, Tensor<Real>>> named_vectors() const {
        std::vector<std::pair<std::string, Tensor<Real>>> out;
        for (std::size_t i = 0; i < enc.size(); ++i) {
            const std::string p = "enc." + std::to_string(i) + ".";
            out.emplace_back(p + "l_k", enc[i].l_k);
            out.emplace_back(p + "l_v", enc[i].l_v);
            out.emplace_back(p + "l_ff", enc[i].l_ff);
        }
        for (std::size_t i = 0; i < dec.size(); ++i) {
            const std::string p = "dec." + std::to_string(i) + ".";
            out.emplace_back(p + "self.l_k", dec[i].self_l_k);
            out.emplace_back(p + "self.l_v", dec[i].self_l_v);
            out.emplace_back(p + "cross.l_k", dec[i].cross_l_k);
            out.emplace_back(p + "cross.l_v", dec[i].cross_l_v);
            out.emplace_back(p + "l_ff", dec[i].l_ff);
        }
        return out;
    }

    std::size_t vector_count() const { return 3 * enc.size() + 5 * dec.size(); }

    std::size_t scalar_count() const {
        std::size_t n = 0;
        for (const auto& [name, t] : named_vectors()) n += t.numel();
        return n;
    }

    void set_trainable(bool trainable) {
        for (auto& [name, t] : named_vectors()) t.set_requires_grad(trainable);
    }

    IA3Adapter clone() const {
        IA3Adapter copy = *this;
        auto dup = [](Tensor<Real>& t) {
            t = Tensor<Real>::from_data(t.shape(), {t.value().begin(), t.value().end()});
        };
        for (auto& b : copy.enc) {
            dup(b.l_k);
            dup(b.l_v);
            dup(b.l_ff);
        }
        for (auto& b : copy.dec) {
            dup(b.self_l_k);
            dup(b.self_l_v);
            dup(b.cross_l_k);
            dup(b.cross_l_v);
            dup(b.l_ff);
        }
        return copy;
    }
};

/// All vectors start at exactly one, so a fresh adapter leaves the model's
/// function unchanged.
template <class Real = double>
IA3Adapter<Real> init_adapter(const ModelSpec& spec) {
    spec.validate();
    IA3Adapter<Real> a;
    a.spec = spec;
    auto ones = [](int n) { return Tensor<Real>::filled({n}, Real(1)); };
    for (int i = 0; i < spec.enc_layers; ++i) {
        a.enc.push_back({ones(spec.d_k), ones(spec.d_v), ones(spec.d_ff)});
    }
    for (int i = 0; i < spec.dec_layers; ++i) {
        a.dec.push_back(
            {ones(spec.d_k), ones(spec.d_v), ones(spec.d_k), ones(spec.d_v), ones(spec.d_ff)});
    }
    return a;
}

/// Closed-form adapter size: L_enc (d_k + d_v + d_ff) + L_dec (2 d_k + 2 d_v
/// + d_ff). Accepts raw dimensions so degenerate layer counts can be probed.
inline std::uint64_t ia3_param_count(std::uint64_t enc_layers, std::uint64_t dec_layers,
                                     std::uint64_t d_k, std::uint64_t d_v, std::uint64_t d_ff) {
    return enc_layers * (d_k + d_v + d_ff) + dec_layers * (2 * d_k + 2 * d_v + d_ff);
}

inline std::uint64_t ia3_param_count(const ModelSpec& spec) {
    return ia3_param_count(static_cast<std::uint64_t>(spec.enc_layers),
                           static_cast<std::uint64_t>(spec.dec_layers),
                           static_cast<std::uint64_t>(spec.d_k),
                           static_cast<std::uint64_t>(spec.d_v),
                           static_cast<std::uint64_t>(spec.d_ff));
}

/// Folds an adapter into a copy of the model's weights: key and value
/// projection columns absorb l_k and l_v, and the second FFN matrix absorbs
/// l_ff on its input side. The merged model computes the adapted function
/// with no rescaling at inference time.
template <class Real>
Model<Real> merge(const Model<Real>& model, const IA3Adapter<Real>& adapter) {
    if (!(adapter.spec == model.spec)) {
        throw ContractError("adapter spec does not match model spec");
    }
    Model<Real> merged = model.clone();

    auto scale_cols = [](Tensor<Real>& w, const Tensor<Real>& l) {
        auto vals = w.mutable_value();
        const int rows = w.rows(), cols = w.cols();
        for (int i = 0; i < rows; ++i)
            for (int j = 0; j < cols; ++j) vals[static_cast<std::size_t>(i) * cols + j] *= l.at(j);
    };
    auto scale_rows = [](Tensor<Real>& w, const Tensor<Real>& l) {
        auto vals = w.mutable_value();
        const int rows = w.rows(), cols = w.cols();
        for (int i = 0; i < rows; ++i)
            for (int j = 0; j < cols; ++j) vals[static_cast<std::size_t>(i) * cols + j] *= l.at(i);
    };

    for (std::size_t i = 0; i < merged.enc.size(); ++i) {
        scale_cols(merged.enc[i].attn.wk, adapter.enc[i].l_k);
        scale_cols(merged.enc[i].attn.wv, adapter.enc[i].l_v);
        scale_rows(merged.enc[i].w2, adapter.enc[i].l_ff);
    }
    for (std::size_t i = 0; i < merged.dec.size(); ++i) {
        scale_cols(merged.dec[i].self_attn.wk, adapter.dec[i].self_l_k);
        scale_cols(merged.dec[i].self_attn.wv, adapter.dec[i].self_l_v);
        scale_cols(merged.dec[i].cross_attn.wk, adapter.dec[i].cross_l_k);
        scale_cols(merged.dec[i].cross_attn.wv, adapter.dec[i].cross_l_v);
        scale_rows(merged.dec[i].w2, adapter.dec[i].l_ff);
    }
    return merged;
}

/// Task-id keyed adapter collection over one fixed ModelSpec.
template <class Real = double>
class AdapterStore {
   public:
    explicit AdapterStore(ModelSpec spec) : spec_(std::move(spec)) { spec_.validate(); }

    const ModelSpec& spec() const { return spec_; }

    void put(const std::string& task_id, IA3Adapter<Real> adapter) {
        if (!(adapter.spec == spec_)) {
            throw ContractError("adapter for task '" + task_id + "' does not match store spec");
        }
        adapters_.insert_or_assign(task_id, std::move(adapter));
    }

    IA3Adapter<Real>& get_or_init(const std::string& task_id) {
        auto it = adapters_.find(task_id);
        if (it == adapters_.end()) {
            it = adapters_.emplace(task_id, init_adapter<Real>(spec_)).first;
        }
        return it->second;
    }

    const IA3Adapter<Real>& at(const std::string& task_id) const {
        auto it = adapters_.find(task_id);
        if (it == adapters_.end()) throw LookupError("unknown task id '" + task_id + "'");
        return it->second;
    }

    bool contains(const std::string& task_id) const { return adapters_.count(task_id) > 0; }
    std::size_t size() const { return adapters_.size(); }

   private:
    ModelSpec spec_;
    std::map<std::string, IA3Adapter<Real>> adapters_;
};

/// Per-example adapter selection for a mixed-task batch. Every id must be
/// present in the store.
template <class Real>
std::vector<const IA3Adapter<Real>*> select_for_batch(const AdapterStore<Real>& store,
                                                      const std::vector<std::string>& task_ids) {
    std::vector<const IA3Adapter<Real>*> out;
    out.reserve(task_ids.size());
    for (const auto& id : task_ids) out.push_back(&store.at(id));
    return out;
}

/// Runs a mixed-task batch: example i is processed with adapters[i]. The
/// rescaling vectors touch activations only, so examples stay independent;
/// the result equals running each example alone.
template <class Real>
std::vector<Tensor<Real>> batched_forward(const Model<Real>& model,
                                          const std::vector<const IA3Adapter<Real>*>& adapters,
                                          const std::vector<std::vector<int>>& inputs,
                                          const std::vector<std::vector<int>>& targets) {
    if (adapters.size() != inputs.size() || inputs.size() != targets.size()) {
        throw ContractError("batched_forward requires one adapter, input, and target per example");
    }
    std::vector<Tensor<Real>> logits;
    logits.reserve(inputs.size());
    for (std::size_t i = 0; i < inputs.size(); ++i) {
        logits.push_back(forward(model, adapters[i], inputs[i], targets[i]));
    }
    return logits;
}

}  // namespace tfew
