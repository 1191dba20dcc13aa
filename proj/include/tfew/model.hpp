// Copyright 2026 the tfew authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cmath>
#include <cstdint>
#include <string>
#include <utility>
#include <vector>

#include "tfew/error.hpp"
#include "tfew/rng.hpp"
#include "tfew/tensor.hpp"

namespace tfew {

template <class Real>
struct IA3Adapter;  // completed in ia3.hpp

enum class Activation { kRelu, kGelu };

inline Activation activation_from_string(const std::string& s) {
    if (s == "relu") return Activation::kRelu;
    if (s == "gelu") return Activation::kGelu;
    throw ConfigError("activation must be 'relu' or 'gelu', got '" + s + "'");
}

inline std::string to_string(Activation a) {
    return a == Activation::kRelu ? "relu" : "gelu";
}

/// Architecture hyperparameters of the toy encoder-decoder transformer.
/// d_k and d_v are total widths across heads.
struct ModelSpec {
    int vocab_size = 64;
    int d_model = 32;
    int num_heads = 4;
    int d_k = 32;
    int d_v = 32;
    int d_ff = 64;
    int enc_layers = 2;  // "L_enc"
    int dec_layers = 2;  // "L_dec"
    int max_seq_len = 64;
    // gelu keeps gradients alive on every FFN inner unit; relu is available
    // for hand-checkable arithmetic
    Activation activation = Activation::kGelu;

    void validate() const {
        auto positive = [](int v, const char* name) {
            if (v <= 0) throw ConfigError(std::string(name) + " must be positive");
        };
        positive(vocab_size, "vocab_size");
        positive(d_model, "d_model");
        positive(num_heads, "num_heads");
        positive(d_k, "d_k");
        positive(d_v, "d_v");
        positive(d_ff, "d_ff");
        positive(max_seq_len, "max_seq_len");
        if (enc_layers < 1) throw ConfigError("L_enc must be >= 1");
        if (dec_layers < 1) throw ConfigError("L_dec must be >= 1");
        if (d_k % num_heads != 0) throw ConfigError("d_k must be divisible by num_heads");
        if (d_v % num_heads != 0) throw ConfigError("d_v must be divisible by num_heads");
    }

    bool operator==(const ModelSpec&) const = default;
};

/// The default shapes used by tests and the CLI when no config is given:
/// seconds-scale training with non-degenerate head/FFN shapes.
inline ModelSpec toy_spec() {
    return ModelSpec{};
}

template <class Real>
struct AttentionWeights {
    Tensor<Real> wq, wk, wv, wo;
};

template <class Real>
struct EncoderBlock {
    Tensor<Real> norm_attn;
    AttentionWeights<Real> attn;
    Tensor<Real> norm_ffn;
    Tensor<Real> w1, w2;
};

template <class Real>
struct DecoderBlock {
    Tensor<Real> norm_self;
    AttentionWeights<Real> self_attn;
    Tensor<Real> norm_cross;
    AttentionWeights<Real> cross_attn;
    Tensor<Real> norm_ffn;
    Tensor<Real> w1, w2;
};

/// Token id fed to the decoder at position 0 under teacher forcing. The
/// tokenizer reserves id 0 as padding, which doubles as the start marker.
inline constexpr int kDecoderStartId = 0;

template <class Real = double>
class Model {
   public:
    ModelSpec spec;
    Tensor<Real> tok_embed;  // shared by encoder and decoder inputs
    Tensor<Real> pos_embed;
    std::vector<EncoderBlock<Real>> enc;
    std::vector<DecoderBlock<Real>> dec;
    Tensor<Real> enc_final_norm;
    Tensor<Real> dec_final_norm;
    Tensor<Real> head;  // output projection, untied from tok_embed

    /// Canonical (name, tensor) enumeration; iteration order is the
    /// initialization and checkpoint order.
    std::vector<std::pair<std::string, Tensor<Real>>> named_weights() const {
        std::vector<std::pair<std::string, Tensor<Real>>> out;
        out.emplace_back("embed.tok", tok_embed);
        out.emplace_back("embed.pos", pos_embed);
        for (std::size_t i = 0; i < enc.size(); ++i) {
            const std::string p = "enc." + std::to_string(i) + ".";
            out.emplace_back(p + "norm_attn", enc[i].norm_attn);
            out.emplace_back(p + "attn.wq", enc[i].attn.wq);
            out.emplace_back(p + "attn.wk", enc[i].attn.wk);
            out.emplace_back(p + "attn.wv", enc[i].attn.wv);
            out.emplace_back(p + "attn.wo", enc[i].attn.wo);
            out.emplace_back(p + "norm_ffn", enc[i].norm_ffn);
            out.emplace_back(p + "ffn.w1", enc[i].w1);
            out.emplace_back(p + "ffn.w2", enc[i].w2);
        }
        for (std::size_t i = 0; i < dec.size(); ++i) {
            const std::string p = "dec." + std::to_string(i) + ".";
            out.emplace_back(p + "norm_self", dec[i].norm_self);
            out.emplace_back(p + "self.wq", dec[i].self_attn.wq);
            out.emplace_back(p + "self.wk", dec[i].self_attn.wk);
            out.emplace_back(p + "self.wv", dec[i].self_attn.wv);
            out.emplace_back(p + "self.wo", dec[i].self_attn.wo);
            out.emplace_back(p + "norm_cross", dec[i].norm_cross);
            out.emplace_back(p + "cross.wq", dec[i].cross_attn.wq);
            out.emplace_back(p + "cross.wk", dec[i].cross_attn.wk);
            out.emplace_back(p + "cross.wv", dec[i].cross_attn.wv);
            out.emplace_back(p + "cross.wo", dec[i].cross_attn.wo);
            out.emplace_back(p + "norm_ffn", dec[i].norm_ffn);
            out.emplace_back(p + "ffn.w1", dec[i].w1);
            out.emplace_back(p + "ffn.w2", dec[i].w2);
        }
        out.emplace_back("enc.final_norm", enc_final_norm);
        out.emplace_back("dec.final_norm", dec_final_norm);
        out.emplace_back("head", head);
        return out;
    }

    std::size_t parameter_count() const {
        std::size_t n = 0;
        for (const auto& [name, t] : named_weights()) n += t.numel();
        return n;
    }

    void set_trainable(bool trainable) {
        for (auto& [name, t] : named_weights()) t.set_requires_grad(trainable);
    }

    /// Deep copy; gradients and requires_grad flags are not carried over.
    Model clone() const {
        Model copy = *this;
        auto dup = [](Tensor<Real>& t) {
            t = Tensor<Real>::from_data(t.shape(), {t.value().begin(), t.value().end()});
        };
        dup(copy.tok_embed);
        dup(copy.pos_embed);
        for (auto& b : copy.enc) {
            dup(b.norm_attn);
            dup(b.attn.wq);
            dup(b.attn.wk);
            dup(b.attn.wv);
            dup(b.attn.wo);
            dup(b.norm_ffn);
            dup(b.w1);
            dup(b.w2);
        }
        for (auto& b : copy.dec) {
            dup(b.norm_self);
            dup(b.self_attn.wq);
            dup(b.self_attn.wk);
            dup(b.self_attn.wv);
            dup(b.self_attn.wo);
            dup(b.norm_cross);
            dup(b.cross_attn.wq);
            dup(b.cross_attn.wk);
            dup(b.cross_attn.wv);
            dup(b.cross_attn.wo);
            dup(b.norm_ffn);
            dup(b.w1);
            dup(b.w2);
        }
        dup(copy.enc_final_norm);
        dup(copy.dec_final_norm);
        dup(copy.head);
        return copy;
    }
};

/// Builds a model with seeded init: projection matrices are normal with
/// stddev 1/sqrt(d_model), embeddings are unit normal, norm scales start
/// at one. Bit-deterministic per (spec, seed).
template <class Real = double>
Model<Real> build_model(const ModelSpec& spec, std::uint64_t seed) {
    spec.validate();
    Model<Real> m;
    m.spec = spec;
    Rng rng(mix_seed(seed, /*stream=*/0x7eaf));
    const Real proj_std = Real(1) / std::sqrt(static_cast<Real>(spec.d_model));

    auto proj = [&](int r, int c) { return Tensor<Real>::randn({r, c}, rng, proj_std); };
    auto norm = [&](int n) { return Tensor<Real>::filled({n}, Real(1)); };
    auto attn_weights = [&]() {
        AttentionWeights<Real> w;
        w.wq = proj(spec.d_model, spec.d_k);
        w.wk = proj(spec.d_model, spec.d_k);
        w.wv = proj(spec.d_model, spec.d_v);
        w.wo = proj(spec.d_v, spec.d_model);
        return w;
    };

    m.tok_embed = Tensor<Real>::randn({spec.vocab_size, spec.d_model}, rng);
    m.pos_embed = Tensor<Real>::randn({spec.max_seq_len, spec.d_model}, rng);
    for (int i = 0; i < spec.enc_layers; ++i) {
        EncoderBlock<Real> b;
        b.norm_attn = norm(spec.d_model);
        b.attn = attn_weights();
        b.norm_ffn = norm(spec.d_model);
        b.w1 = proj(spec.d_model, spec.d_ff);
        b.w2 = proj(spec.d_ff, spec.d_model);
        m.enc.push_back(std::move(b));
    }
    for (int i = 0; i < spec.dec_layers; ++i) {
        DecoderBlock<Real> b;
        b.norm_self = norm(spec.d_model);
        b.self_attn = attn_weights();
        b.norm_cross = norm(spec.d_model);
        b.cross_attn = attn_weights();
        b.norm_ffn = norm(spec.d_model);
        b.w1 = proj(spec.d_model, spec.d_ff);
        b.w2 = proj(spec.d_ff, spec.d_model);
        m.dec.push_back(std::move(b));
    }
    m.enc_final_norm = norm(spec.d_model);
    m.dec_final_norm = norm(spec.d_model);
    m.head = proj(spec.d_model, spec.vocab_size);
    return m;
}

/// Multi-head scaled dot-product attention over full-width Q, K, V with
/// optional rescaling vectors applied to the key and value features before
/// the head split. The softmax scale uses the per-head key width.
template <class Real>
Tensor<Real> attention(const Tensor<Real>& q, const Tensor<Real>& k, const Tensor<Real>& v,
                       const Tensor<Real>* l_k, const Tensor<Real>* l_v, int num_heads,
                       bool causal) {
    if (q.rank() != 2 || k.rank() != 2 || v.rank() != 2 || q.cols() != k.cols() ||
        k.rows() != v.rows()) {
        throw ShapeError("attention operand shapes: q=" + q.shape_string() +
                         " k=" + k.shape_string() + " v=" + v.shape_string());
    }
    if (q.cols() % num_heads != 0 || v.cols() % num_heads != 0) {
        throw ShapeError("attention widths not divisible by " + std::to_string(num_heads) +
                         " heads");
    }
    if (l_k != nullptr && (l_k->rank() != 1 || l_k->cols() != k.cols())) {
        throw ShapeError("l_k length " + l_k->shape_string() + " does not match key width " +
                         std::to_string(k.cols()));
    }
    if (l_v != nullptr && (l_v->rank() != 1 || l_v->cols() != v.cols())) {
        throw ShapeError("l_v length " + l_v->shape_string() + " does not match value width " +
                         std::to_string(v.cols()));
    }
    const Tensor<Real> keys = l_k != nullptr ? mul(k, *l_k) : k;
    const Tensor<Real> values = l_v != nullptr ? mul(v, *l_v) : v;

    const int dk_head = q.cols() / num_heads;
    const int dv_head = v.cols() / num_heads;
    const Real inv_sqrt_dk = Real(1) / std::sqrt(static_cast<Real>(dk_head));
    std::vector<Tensor<Real>> heads;
    heads.reserve(num_heads);
    for (int h = 0; h < num_heads; ++h) {
        auto qh = slice_cols(q, h * dk_head, (h + 1) * dk_head);
        auto kh = slice_cols(keys, h * dk_head, (h + 1) * dk_head);
        auto vh = slice_cols(values, h * dv_head, (h + 1) * dv_head);
        auto scores = scale(matmul(qh, transpose(kh)), inv_sqrt_dk);
        if (causal) scores = causal_mask(scores);
        heads.push_back(matmul(softmax_lastdim(scores), vh));
    }
    return num_heads == 1 ? heads[0] : concat_cols(heads);
}

/// Position-wise feed-forward with optional rescaling of the inner
/// activations: (l_ff ⊙ act(x W1)) W2.
template <class Real>
Tensor<Real> ffn(const Tensor<Real>& x, const Tensor<Real>& w1, const Tensor<Real>& w2,
                 const Tensor<Real>* l_ff, Activation act) {
    auto h = matmul(x, w1);
    h = act == Activation::kRelu ? relu(h) : gelu(h);
    if (l_ff != nullptr) {
        if (l_ff->rank() != 1 || l_ff->cols() != h.cols()) {
            throw ShapeError("l_ff length " + l_ff->shape_string() +
                             " does not match inner width " + std::to_string(h.cols()));
        }
        h = mul(h, *l_ff);
    }
    return matmul(h, w2);
}

namespace detail {

template <class Real>
void check_tokens(const ModelSpec& spec, const std::vector<int>& ids, const char* what) {
    if (static_cast<int>(ids.size()) > spec.max_seq_len) {
        throw InputError(std::string(what) + " length " + std::to_string(ids.size()) +
                         " exceeds max_seq_len " + std::to_string(spec.max_seq_len));
    }
    for (std::size_t i = 0; i < ids.size(); ++i) {
        if (ids[i] < 0 || ids[i] >= spec.vocab_size) {
            throw InputError(std::string(what) + " token id " + std::to_string(ids[i]) +
                             " out of range at position " + std::to_string(i));
        }
    }
}

template <class Real>
Tensor<Real> embed_sequence(const Model<Real>& m, const std::vector<int>& ids) {
    std::vector<int> positions(ids.size());
    for (std::size_t i = 0; i < ids.size(); ++i) positions[i] = static_cast<int>(i);
    return add(embed(m.tok_embed, ids), embed(m.pos_embed, positions));
}

}  // namespace detail

/// Encoder stack: returns the normalized encoder states [T_in x d_model].
template <class Real>
Tensor<Real> encode(const Model<Real>& m, const IA3Adapter<Real>* adapter,
                    const std::vector<int>& input_tokens) {
    if (input_tokens.empty()) throw ContractError("encoder input must be non-empty");
    detail::check_tokens<Real>(m.spec, input_tokens, "input");
    auto h = detail::embed_sequence(m, input_tokens);
    for (std::size_t i = 0; i < m.enc.size(); ++i) {
        const auto& b = m.enc[i];
        const Tensor<Real>* lk = adapter ? &adapter->enc[i].l_k : nullptr;
        const Tensor<Real>* lv = adapter ? &adapter->enc[i].l_v : nullptr;
        const Tensor<Real>* lf = adapter ? &adapter->enc[i].l_ff : nullptr;
        auto a_in = rms_norm(h, b.norm_attn);
        auto attn_out = attention(matmul(a_in, b.attn.wq), matmul(a_in, b.attn.wk),
                                  matmul(a_in, b.attn.wv), lk, lv, m.spec.num_heads,
                                  /*causal=*/false);
        h = add(h, matmul(attn_out, b.attn.wo));
        auto f_in = rms_norm(h, b.norm_ffn);
        h = add(h, ffn(f_in, b.w1, b.w2, lf, m.spec.activation));
    }
    return rms_norm(h, m.enc_final_norm);
}

/// Decoder stack under teacher forcing: position t sees target tokens < t
/// through a causal mask and all encoder states through cross-attention.
/// Returns logits [T_target x vocab_size].
template <class Real>
Tensor<Real> decode_logits(const Model<Real>& m, const IA3Adapter<Real>* adapter,
                           const Tensor<Real>& enc_states,
                           const std::vector<int>& target_tokens) {
    if (target_tokens.empty()) throw ContractError("target must be non-empty");
    detail::check_tokens<Real>(m.spec, target_tokens, "target");

    std::vector<int> dec_input(target_tokens.size());
    dec_input[0] = kDecoderStartId;
    for (std::size_t t = 1; t < target_tokens.size(); ++t) dec_input[t] = target_tokens[t - 1];

    auto h = detail::embed_sequence(m, dec_input);
    for (std::size_t i = 0; i < m.dec.size(); ++i) {
        const auto& b = m.dec[i];
        const Tensor<Real>* lk_self = adapter ? &adapter->dec[i].self_l_k : nullptr;
        const Tensor<Real>* lv_self = adapter ? &adapter->dec[i].self_l_v : nullptr;
        const Tensor<Real>* lk_cross = adapter ? &adapter->dec[i].cross_l_k : nullptr;
        const Tensor<Real>* lv_cross = adapter ? &adapter->dec[i].cross_l_v : nullptr;
        const Tensor<Real>* lf = adapter ? &adapter->dec[i].l_ff : nullptr;

        auto s_in = rms_norm(h, b.norm_self);
        auto self_out = attention(matmul(s_in, b.self_attn.wq), matmul(s_in, b.self_attn.wk),
                                  matmul(s_in, b.self_attn.wv), lk_self, lv_self,
                                  m.spec.num_heads, /*causal=*/true);
        h = add(h, matmul(self_out, b.self_attn.wo));

        auto c_in = rms_norm(h, b.norm_cross);
        auto cross_out = attention(matmul(c_in, b.cross_attn.wq),
                                   matmul(enc_states, b.cross_attn.wk),
                                   matmul(enc_states, b.cross_attn.wv), lk_cross, lv_cross,
                                   m.spec.num_heads, /*causal=*/false);
        h = add(h, matmul(cross_out, b.cross_attn.wo));

        auto f_in = rms_norm(h, b.norm_ffn);
        h = add(h, ffn(f_in, b.w1, b.w2, lf, m.spec.activation));
    }
    return matmul(rms_norm(h, m.dec_final_norm), m.head);
}

/// Teacher-forced forward pass. adapter == nullptr is the unadapted model
/// and matches a fresh all-ones adapter bit for bit.
template <class Real>
Tensor<Real> forward(const Model<Real>& m, const IA3Adapter<Real>* adapter,
                     const std::vector<int>& input_tokens,
                     const std::vector<int>& target_tokens) {
    return decode_logits(m, adapter, encode(m, adapter, input_tokens), target_tokens);
}

}  // namespace tfew
