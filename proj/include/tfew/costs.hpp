// Copyright 2026 the tfew authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cmath>
#include <cstdint>
#include <cstdio>
#include <optional>
#include <string>
#include <vector>

#include <json.hpp>

#include "tfew/error.hpp"
#include "tfew/ia3.hpp"

namespace tfew {

// Analytic cost model: FLOPs-per-token rules (2N inference / 6N training for
// decoder-only models, halved to N / 3N for encoder-decoder models where each
// token passes through only one side), token-count accounting for in-context
// learning, and byte accounting for stored shots, KV caches, and adapters.
// Everything is exact unsigned integer arithmetic; the quadratic attention
// term is deliberately ignored.

enum class Arch { kDecoderOnly, kEncoderDecoder };
enum class CostMode { kInference, kTraining };
enum class Method { kIcl, kPeftInference, kPeftTraining, kZeroShot };

using u64 = std::uint64_t;

namespace detail {

inline u64 checked_mul(u64 a, u64 b) {
    u64 out = 0;
    if (__builtin_mul_overflow(a, b, &out)) {
        throw ContractError("cost arithmetic overflowed 64 bits");
    }
    return out;
}

}  // namespace detail

inline u64 flops_per_token(Arch arch, u64 params, CostMode mode) {
    if (params == 0) throw ContractError("parameter count must be positive");
    const u64 factor = arch == Arch::kDecoderOnly ? (mode == CostMode::kInference ? 2 : 6)
                                                  : (mode == CostMode::kInference ? 1 : 3);
    return detail::checked_mul(factor, params);
}

/// FLOPs to process one query plus k cached shots with in-context learning.
inline u64 icl_inference_flops(Arch arch, u64 params, u64 shots, u64 shot_len, u64 query_len) {
    const u64 tokens = detail::checked_mul(shots, shot_len) + query_len;
    return detail::checked_mul(flops_per_token(arch, params, CostMode::kInference), tokens);
}

/// FLOPs to process one query (input plus all target choices) without shots.
inline u64 peft_inference_flops(Arch arch, u64 params, u64 query_len) {
    return detail::checked_mul(flops_per_token(arch, params, CostMode::kInference), query_len);
}

inline u64 peft_training_flops(Arch arch, u64 params, u64 steps, u64 batch, u64 seq_len) {
    return detail::checked_mul(
        flops_per_token(arch, params, CostMode::kTraining),
        detail::checked_mul(steps, detail::checked_mul(batch, seq_len)));
}

namespace detail {

inline u64 bits_to_bytes(u64 scalars, u64 bits) {
    if (bits % 8 != 0) throw ContractError("value_bits must be divisible by 8");
    return checked_mul(scalars, bits / 8);
}

}  // namespace detail

/// Disk bytes for k tokenized shots (token ids stored at the given width).
inline u64 icl_storage_bytes(u64 shots, u64 tokens_per_shot, u64 bits) {
    return detail::bits_to_bytes(detail::checked_mul(shots, tokens_per_shot), bits);
}

/// Bytes of cached key and value vectors for k shots.
inline u64 kv_cache_bytes(u64 shots, u64 tokens_per_shot, u64 layers, u64 d_model, u64 bits) {
    u64 scalars = detail::checked_mul(shots, tokens_per_shot);
    scalars = detail::checked_mul(scalars, layers);
    scalars = detail::checked_mul(scalars, d_model);
    scalars = detail::checked_mul(scalars, 2);  // keys and values
    return detail::bits_to_bytes(scalars, bits);
}

inline u64 adapter_storage_bytes(u64 adapter_params, u64 bits) {
    return detail::bits_to_bytes(adapter_params, bits);
}

/// Declarative model + method + shots configuration.
struct CostScenario {
    std::string name;
    Arch arch = Arch::kEncoderDecoder;
    u64 params = 0;
    Method method = Method::kZeroShot;
    u64 shots = 0;
    u64 shot_len = 0;
    u64 query_len = 0;
    u64 train_steps = 0;
    u64 batch_size = 0;
    u64 seq_len = 0;
    u64 value_bits = 32;
    u64 adapter_params = 0;
    u64 layers = 0;   // for the KV-cache figure; 0 disables it
    u64 d_model = 0;

    void validate() const {
        if (params == 0) throw ConfigError("params must be positive");
        if (value_bits != 16 && value_bits != 32 && value_bits != 64) {
            throw ConfigError("value_bits must be one of 16, 32, 64");
        }
    }
};

struct CostReport {
    u64 inference_flops = 0;
    u64 training_flops = 0;
    u64 disk_bytes = 0;
    std::optional<u64> kv_cache_bytes;

    bool operator==(const CostReport&) const = default;
};

inline CostReport compute_report(const CostScenario& s) {
    s.validate();
    CostReport r;
    switch (s.method) {
        case Method::kIcl:
            r.inference_flops =
                icl_inference_flops(s.arch, s.params, s.shots, s.shot_len, s.query_len);
            r.disk_bytes = icl_storage_bytes(s.shots, s.shot_len, s.value_bits);
            if (s.layers > 0 && s.d_model > 0) {
                r.kv_cache_bytes =
                    kv_cache_bytes(s.shots, s.shot_len, s.layers, s.d_model, s.value_bits);
            }
            break;
        case Method::kPeftInference:
            r.inference_flops = peft_inference_flops(s.arch, s.params, s.query_len);
            r.disk_bytes = adapter_storage_bytes(s.adapter_params, s.value_bits);
            break;
        case Method::kPeftTraining:
            r.inference_flops = peft_inference_flops(s.arch, s.params, s.query_len);
            r.training_flops =
                peft_training_flops(s.arch, s.params, s.train_steps, s.batch_size, s.seq_len);
            r.disk_bytes = adapter_storage_bytes(s.adapter_params, s.value_bits);
            break;
        case Method::kZeroShot:
            r.inference_flops = peft_inference_flops(s.arch, s.params, s.query_len);
            break;
    }
    return r;
}

// Two-significant-figure helpers. Published figures in this domain mix
// truncation and round-to-nearest, so the matcher accepts either; the
// renderer uses round-to-nearest.

inline u64 two_sig_figs_floor(u64 v) {
    u64 scale = 1;
    while (v / scale >= 100) scale *= 10;
    return v / scale * scale;
}

inline u64 two_sig_figs_nearest(u64 v) {
    u64 scale = 1;
    while (v / scale >= 100) scale *= 10;
    return (v + scale / 2) / scale * scale;
}

inline bool matches_two_sig_figs(u64 computed, u64 printed) {
    return two_sig_figs_floor(computed) == printed || two_sig_figs_nearest(computed) == printed;
}

inline bool within_relative(u64 computed, u64 reference, double tol) {
    const double c = static_cast<double>(computed);
    const double r = static_cast<double>(reference);
    return r == 0.0 ? computed == 0 : std::abs(c - r) / r <= tol;
}

/// "1.1e12"-style rendering at two significant figures.
inline std::string flops_string(u64 v) {
    if (v == 0) return "0";
    const u64 rounded = two_sig_figs_nearest(v);
    int exponent = 0;
    u64 x = rounded;
    while (x >= 10) {
        x /= 10;
        ++exponent;
    }
    u64 scale = 1;
    for (int i = 0; i < exponent; ++i) scale *= 10;
    const u64 first = rounded / scale;
    const u64 second = (rounded / (scale / 10)) % 10;
    if (exponent == 0) return std::to_string(first);
    return std::to_string(first) + "." + std::to_string(second) + "e" +
           std::to_string(exponent);
}

/// Decimal-prefix byte rendering at two significant figures ("16 kB").
inline std::string bytes_string(u64 v) {
    if (v == 0) return "0 B";
    static constexpr const char* units[] = {"B", "kB", "MB", "GB", "TB"};
    int unit = 0;
    u64 divisor = 1;
    while (v / divisor >= 1000 && unit < 4) {
        divisor *= 1000;
        ++unit;
    }
    const u64 rounded = two_sig_figs_nearest(v);
    const double scaled = static_cast<double>(rounded) / static_cast<double>(divisor);
    char buf[32];
    if (scaled >= 10.0 || scaled == static_cast<u64>(scaled)) {
        std::snprintf(buf, sizeof(buf), "%.0f %s", scaled, units[unit]);
    } else {
        std::snprintf(buf, sizeof(buf), "%.1f %s", scaled, units[unit]);
    }
    return buf;
}

/// The six benchmark scenarios: the adapter recipe on an 11B encoder-decoder
/// model, the same model zero-shot, and in-context learning with a same-size
/// encoder-decoder model and three decoder-only model sizes. Shots use the
/// median counts: 41 shots of 98 tokens, 103-token queries.
inline std::vector<CostScenario> table1_scenarios() {
    constexpr u64 kShots = 41, kShotLen = 98, kQueryLen = 103;
    const u64 adapter_params = ia3_param_count(24, 24, 4096, 4096, 10240);

    std::vector<CostScenario> rows;
    {
        CostScenario s;
        s.name = "T-Few";
        s.arch = Arch::kEncoderDecoder;
        s.params = 11'000'000'000ULL;
        s.method = Method::kPeftTraining;
        s.query_len = kQueryLen;
        s.train_steps = 1000;
        s.batch_size = 8;
        s.seq_len = 103;
        s.adapter_params = adapter_params;
        rows.push_back(s);
    }
    {
        CostScenario s;
        s.name = "T0";
        s.arch = Arch::kEncoderDecoder;
        s.params = 11'000'000'000ULL;
        s.method = Method::kZeroShot;
        s.query_len = kQueryLen;
        rows.push_back(s);
    }
    auto icl = [&](std::string name, Arch arch, u64 params) {
        CostScenario s;
        s.name = std::move(name);
        s.arch = arch;
        s.params = params;
        s.method = Method::kIcl;
        s.shots = kShots;
        s.shot_len = kShotLen;
        s.query_len = kQueryLen;
        return s;
    };
    rows.push_back(icl("T5+LM", Arch::kEncoderDecoder, 11'000'000'000ULL));
    rows.push_back(icl("GPT-3 6.7B", Arch::kDecoderOnly, 6'700'000'000ULL));
    rows.push_back(icl("GPT-3 13B", Arch::kDecoderOnly, 13'000'000'000ULL));
    rows.push_back(icl("GPT-3 175B", Arch::kDecoderOnly, 175'000'000'000ULL));
    return rows;
}

struct Table1Row {
    CostScenario scenario;
    CostReport report;
};

inline std::vector<Table1Row> table1_report() {
    std::vector<Table1Row> rows;
    for (const auto& s : table1_scenarios()) rows.push_back({s, compute_report(s)});
    return rows;
}

// JSON bindings for the CLI.

inline std::string to_string(Arch a) {
    return a == Arch::kDecoderOnly ? "decoder-only" : "encoder-decoder";
}

inline std::string to_string(Method m) {
    switch (m) {
        case Method::kIcl: return "icl";
        case Method::kPeftInference: return "peft-inference";
        case Method::kPeftTraining: return "peft-training";
        case Method::kZeroShot: return "zero-shot";
    }
    return "";
}

inline Arch arch_from_string(const std::string& s) {
    if (s == "decoder-only") return Arch::kDecoderOnly;
    if (s == "encoder-decoder") return Arch::kEncoderDecoder;
    throw ConfigError("arch must be 'decoder-only' or 'encoder-decoder', got '" + s + "'");
}

inline Method method_from_string(const std::string& s) {
    if (s == "icl") return Method::kIcl;
    if (s == "peft-inference") return Method::kPeftInference;
    if (s == "peft-training") return Method::kPeftTraining;
    if (s == "zero-shot") return Method::kZeroShot;
    throw ConfigError("unknown cost method '" + s + "'");
}

inline CostScenario scenario_from_json(const nlohmann::json& j) {
    CostScenario s;
    s.name = j.value("name", std::string("scenario"));
    s.arch = arch_from_string(j.value("arch", std::string("encoder-decoder")));
    s.params = j.value("params", u64{0});
    s.method = method_from_string(j.value("method", std::string("zero-shot")));
    s.shots = j.value("shots", u64{0});
    s.shot_len = j.value("shot_len", u64{0});
    s.query_len = j.value("query_len", u64{0});
    s.train_steps = j.value("train_steps", u64{0});
    s.batch_size = j.value("batch_size", u64{0});
    s.seq_len = j.value("seq_len", u64{0});
    s.value_bits = j.value("value_bits", u64{32});
    s.adapter_params = j.value("adapter_params", u64{0});
    s.layers = j.value("layers", u64{0});
    s.d_model = j.value("d_model", u64{0});
    return s;
}

inline nlohmann::json report_to_json(const CostScenario& s, const CostReport& r) {
    nlohmann::json j{{"name", s.name},
                     {"arch", to_string(s.arch)},
                     {"method", to_string(s.method)},
                     {"params", s.params},
                     {"inference_flops", r.inference_flops},
                     {"training_flops", r.training_flops},
                     {"disk_bytes", r.disk_bytes},
                     {"inference_flops_approx", flops_string(r.inference_flops)},
                     {"training_flops_approx", flops_string(r.training_flops)},
                     {"disk_approx", bytes_string(r.disk_bytes)}};
    if (r.kv_cache_bytes.has_value()) {
        j["kv_cache_bytes"] = *r.kv_cache_bytes;
        j["kv_cache_approx"] = bytes_string(*r.kv_cache_bytes);
    }
    return j;
}

}  // namespace tfew
