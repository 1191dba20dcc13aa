// Copyright 2026 the tfew authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <string>
#include <vector>

#include "tfew/error.hpp"
#include "tfew/ia3.hpp"
#include "tfew/model.hpp"
#include "tfew/tensor.hpp"

namespace tfew {

/// A prompted input with the ordered list of candidate targets and the index
/// of the correct one. Candidates beyond the correct one are the N incorrect
/// target sequences.
struct CandidateSet {
    std::vector<int> input_tokens;
    std::vector<std::vector<int>> candidates;
    int correct_index = 0;

    void validate() const {
        if (candidates.empty()) throw ContractError("candidate set must not be empty");
        if (correct_index < 0 || correct_index >= static_cast<int>(candidates.size())) {
            throw ContractError("correct_index " + std::to_string(correct_index) +
                                " outside candidate list of size " +
                                std::to_string(candidates.size()));
        }
        for (const auto& c : candidates) {
            if (c.empty()) throw ContractError("candidate target sequences must be non-empty");
        }
        for (std::size_t i = 0; i < candidates.size(); ++i) {
            if (static_cast<int>(i) != correct_index &&
                candidates[i] == candidates[static_cast<std::size_t>(correct_index)]) {
                throw ContractError("correct target duplicated at candidate " +
                                    std::to_string(i));
            }
        }
    }

    const std::vector<int>& correct_target() const {
        return candidates[static_cast<std::size_t>(correct_index)];
    }

    std::size_t num_incorrect() const { return candidates.size() - 1; }
};

/// Which loss terms participate in training; all three by default, the
/// ablation flags turn individual terms off.
struct LossSwitches {
    bool lm = true;
    bool ul = true;
    bool ln = true;
};

template <class Real>
struct LossBreakdown {
    Real lm = 0;
    Real ul = 0;
    Real ln = 0;
    Real total = 0;
    Tensor<Real> node;  // taped total, for backward
};

/// Per-token log p(y_t | x, y_<t) under teacher forcing, as a length-T
/// vector. Shared seam for every loss and score in this module.
template <class Real>
Tensor<Real> token_logprobs(const Model<Real>& m, const IA3Adapter<Real>* adapter,
                            const Tensor<Real>& enc_states, const std::vector<int>& target) {
    auto logits = decode_logits(m, adapter, enc_states, target);
    return gather_rows(log_softmax_lastdim(logits), target);
}

namespace detail {

template <class Real>
Tensor<Real> mean_negative(const Tensor<Real>& logp) {
    return scale(sum(logp), Real(-1) / static_cast<Real>(logp.numel()));
}

template <class Real>
Tensor<Real> mean_positive(const Tensor<Real>& logp) {
    return scale(sum(logp), Real(1) / static_cast<Real>(logp.numel()));
}

}  // namespace detail

/// Average negative log-likelihood of the correct target (per-token mean).
template <class Real>
Tensor<Real> lm_loss(const Model<Real>& m, const IA3Adapter<Real>* adapter,
                     const std::vector<int>& input, const std::vector<int>& target) {
    return detail::mean_negative(token_logprobs(m, adapter, encode(m, adapter, input), target));
}

/// Unlikelihood penalty on the incorrect targets: the mean over all
/// incorrect tokens of -log(1 - p(token)), each candidate teacher-forced on
/// its own prefix. Zero when there are no incorrect targets.
template <class Real>
Tensor<Real> ul_loss(const Model<Real>& m, const IA3Adapter<Real>* adapter,
                     const std::vector<int>& input,
                     const std::vector<std::vector<int>>& incorrect_targets) {
    if (incorrect_targets.empty()) return Tensor<Real>::scalar(Real(0));
    auto enc_states = encode(m, adapter, input);
    Tensor<Real> acc;
    std::size_t total_tokens = 0;
    for (const auto& target : incorrect_targets) {
        auto term = sum(log1m(exp(token_logprobs(m, adapter, enc_states, target))));
        acc = acc.defined() ? add(acc, term) : term;
        total_tokens += target.size();
    }
    return scale(acc, Real(-1) / static_cast<Real>(total_tokens));
}

/// Length-normalized log-probability of a target; the exact negation of
/// lm_loss on the same arguments.
template <class Real>
Tensor<Real> length_normalized_logprob(const Model<Real>& m, const IA3Adapter<Real>* adapter,
                                       const std::vector<int>& input,
                                       const std::vector<int>& target) {
    return detail::mean_positive(token_logprobs(m, adapter, encode(m, adapter, input), target));
}

/// Softmax cross-entropy over per-candidate scores with the correct one as
/// the label; the score-level core of ln_loss.
template <class Real>
Tensor<Real> ln_loss_from_scores(const std::vector<Tensor<Real>>& scores, int correct_index) {
    return scale(pick(log_softmax_lastdim(stack_scalars(scores)), correct_index), Real(-1));
}

/// Length-normalized candidate loss: softmax cross-entropy over the
/// normalized log-probabilities of all candidates. Zero when there are no
/// incorrect candidates.
template <class Real>
Tensor<Real> ln_loss(const Model<Real>& m, const IA3Adapter<Real>* adapter,
                     const CandidateSet& ex) {
    ex.validate();
    if (ex.num_incorrect() == 0) return Tensor<Real>::scalar(Real(0));
    auto enc_states = encode(m, adapter, ex.input_tokens);
    std::vector<Tensor<Real>> betas;
    betas.reserve(ex.candidates.size());
    for (const auto& cand : ex.candidates) {
        betas.push_back(detail::mean_positive(token_logprobs(m, adapter, enc_states, cand)));
    }
    return ln_loss_from_scores(betas, ex.correct_index);
}

/// Unweighted sum of the enabled loss terms, with the encoder states shared
/// across all candidate decodes. Disabled terms contribute exactly zero and
/// stay off the tape.
template <class Real>
LossBreakdown<Real> total_loss(const Model<Real>& m, const IA3Adapter<Real>* adapter,
                               const CandidateSet& ex, const LossSwitches& on = {}) {
    ex.validate();
    auto enc_states = encode(m, adapter, ex.input_tokens);

    LossBreakdown<Real> out;
    Tensor<Real> lm_node, ul_node, ln_node;
    Tensor<Real> correct_logp;
    std::vector<Tensor<Real>> betas(ex.candidates.size());

    if (on.lm || on.ln) {
        correct_logp = token_logprobs(m, adapter, enc_states, ex.correct_target());
    }
    if (on.lm) {
        lm_node = detail::mean_negative(correct_logp);
        out.lm = lm_node.item();
    }

    const bool need_incorrect = (on.ul || on.ln) && ex.num_incorrect() > 0;
    if (need_incorrect) {
        Tensor<Real> ul_acc;
        std::size_t total_tokens = 0;
        for (std::size_t i = 0; i < ex.candidates.size(); ++i) {
            if (static_cast<int>(i) == ex.correct_index) continue;
            auto logp = token_logprobs(m, adapter, enc_states, ex.candidates[i]);
            if (on.ul) {
                auto term = sum(log1m(exp(logp)));
                ul_acc = ul_acc.defined() ? add(ul_acc, term) : term;
                total_tokens += ex.candidates[i].size();
            }
            if (on.ln) betas[i] = detail::mean_positive(logp);
        }
        if (on.ul) {
            ul_node = scale(ul_acc, Real(-1) / static_cast<Real>(total_tokens));
            out.ul = ul_node.item();
        }
        if (on.ln) {
            betas[static_cast<std::size_t>(ex.correct_index)] =
                detail::mean_positive(correct_logp);
            ln_node = ln_loss_from_scores(betas, ex.correct_index);
            out.ln = ln_node.item();
        }
    }

    Tensor<Real> total;
    for (const auto& node : {lm_node, ul_node, ln_node}) {
        if (node.defined()) total = total.defined() ? add(total, node) : node;
    }
    if (!total.defined()) total = Tensor<Real>::scalar(Real(0));
    out.node = total;
    out.total = total.item();
    return out;
}

}  // namespace tfew
