// Copyright 2026 the tfew authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <algorithm>
#include <cstdint>
#include <map>
#include <numeric>
#include <string>
#include <vector>

#include "tfew/error.hpp"
#include "tfew/objectives.hpp"
#include "tfew/rng.hpp"
#include "tfew/tokenizer.hpp"

namespace tfew {

// Synthetic classification tasks over short symbol strings. Labels are
// deterministic functions of the input; generators hit exact per-class
// quotas, so every split is class-balanced to within one example.

enum class TaskFamily {
    kCopyLast,
    kMajoritySymbol,
    kContainsPattern,
    kParityOfCount,
    kSortedOrder,
};

inline std::string to_string(TaskFamily f) {
    switch (f) {
        case TaskFamily::kCopyLast: return "copy-last";
        case TaskFamily::kMajoritySymbol: return "majority-symbol";
        case TaskFamily::kContainsPattern: return "contains-pattern";
        case TaskFamily::kParityOfCount: return "parity-of-count";
        case TaskFamily::kSortedOrder: return "sorted-order";
    }
    return "";
}

inline TaskFamily family_from_string(const std::string& s) {
    for (TaskFamily f : {TaskFamily::kCopyLast, TaskFamily::kMajoritySymbol,
                         TaskFamily::kContainsPattern, TaskFamily::kParityOfCount,
                         TaskFamily::kSortedOrder}) {
        if (to_string(f) == s) return f;
    }
    throw ConfigError("unknown task family '" + s + "'");
}

struct RawExample {
    std::vector<std::string> symbols;
    int label = 0;
};

struct SyntheticTask {
    TaskFamily family;
    std::string id;
    int num_classes = 2;
    std::uint64_t seed = 0;
    std::vector<RawExample> train;
    std::vector<RawExample> heldout;
};

inline int num_classes_of(TaskFamily f) {
    return f == TaskFamily::kCopyLast ? 3 : 2;
}

/// The labeling rule of each family.
inline int task_rule(TaskFamily family, const std::vector<std::string>& symbols) {
    switch (family) {
        case TaskFamily::kCopyLast: {
            const std::string& last = symbols.back();
            return last == "a" ? 0 : last == "b" ? 1 : 2;
        }
        case TaskFamily::kMajoritySymbol: {
            int a = 0;
            for (const auto& s : symbols) a += s == "a" ? 1 : 0;
            return 2 * a > static_cast<int>(symbols.size()) ? 0 : 1;
        }
        case TaskFamily::kContainsPattern: {
            for (std::size_t i = 0; i + 2 < symbols.size(); ++i) {
                if (symbols[i] == "a" && symbols[i + 1] == "b" && symbols[i + 2] == "b") return 1;
            }
            return 0;
        }
        case TaskFamily::kParityOfCount: {
            int a = 0;
            for (const auto& s : symbols) a += s == "a" ? 1 : 0;
            return a % 2;  // 0 = even, 1 = odd
        }
        case TaskFamily::kSortedOrder: {
            for (std::size_t i = 0; i + 1 < symbols.size(); ++i) {
                if (symbols[i] > symbols[i + 1]) return 0;
            }
            return 1;  // 1 = nondecreasing
        }
    }
    throw ContractError("unreachable task family");
}

namespace detail {

inline std::vector<std::string> random_symbols(TaskFamily family, Rng& rng) {
    auto pick = [&](const std::vector<std::string>& alphabet, int len) {
        std::vector<std::string> out(len);
        for (auto& s : out) s = alphabet[rng.uniform(alphabet.size())];
        return out;
    };
    switch (family) {
        case TaskFamily::kCopyLast:
            return pick({"a", "b", "c"}, 4 + static_cast<int>(rng.uniform(3)));
        case TaskFamily::kMajoritySymbol:
            return pick({"a", "b"}, 5);
        case TaskFamily::kContainsPattern:
            return pick({"a", "b"}, 6);
        case TaskFamily::kParityOfCount:
            return pick({"a", "b"}, 3);
        case TaskFamily::kSortedOrder:
            return pick({"0", "1", "2", "3"}, 4);
    }
    throw ContractError("unreachable task family");
}

/// Rejection-samples examples until every class quota is met exactly.
inline std::vector<RawExample> balanced_split(TaskFamily family, int size, Rng& rng) {
    const int classes = num_classes_of(family);
    std::vector<int> quota(classes, size / classes);
    for (int c = 0; c < size % classes; ++c) ++quota[c];

    std::vector<RawExample> out;
    out.reserve(size);
    while (static_cast<int>(out.size()) < size) {
        auto symbols = random_symbols(family, rng);
        const int label = task_rule(family, symbols);
        if (quota[label] == 0) continue;
        --quota[label];
        out.push_back({std::move(symbols), label});
    }
    return out;
}

}  // namespace detail

inline SyntheticTask make_task(TaskFamily family, std::uint64_t seed, int train_size = 512,
                               int heldout_size = 400) {
    SyntheticTask task;
    task.family = family;
    task.id = to_string(family);
    task.num_classes = num_classes_of(family);
    task.seed = seed;
    Rng train_rng(mix_seed(seed, 0xA1));
    Rng held_rng(mix_seed(seed, 0xA2));
    task.train = detail::balanced_split(family, train_size, train_rng);
    task.heldout = detail::balanced_split(family, heldout_size, held_rng);
    return task;
}

/// The five-task suite: the first three families form the pre-training
/// mixture, the last two are held out for few-shot evaluation.
inline std::vector<SyntheticTask> generate_task_suite(std::uint64_t master_seed) {
    std::vector<SyntheticTask> suite;
    int i = 0;
    for (TaskFamily f : {TaskFamily::kCopyLast, TaskFamily::kMajoritySymbol,
                         TaskFamily::kContainsPattern, TaskFamily::kParityOfCount,
                         TaskFamily::kSortedOrder}) {
        suite.push_back(make_task(f, mix_seed(master_seed, 0xB0 + i)));
        ++i;
    }
    return suite;
}

inline bool is_pretraining_family(TaskFamily f) {
    return f == TaskFamily::kCopyLast || f == TaskFamily::kMajoritySymbol ||
           f == TaskFamily::kContainsPattern;
}

inline const SyntheticTask& find_task(const std::vector<SyntheticTask>& suite,
                                      const std::string& id) {
    for (const auto& t : suite) {
        if (t.id == id) return t;
    }
    throw LookupError("unknown task id '" + id + "'");
}

/// k training examples sampled uniformly without replacement, deterministic
/// per (task, k, seed).
struct FewShotDataset {
    std::string task_id;
    int k = 0;
    std::uint64_t seed = 0;
    std::vector<int> example_ids;
};

inline FewShotDataset sample_few_shot(const SyntheticTask& task, int k, std::uint64_t seed) {
    if (k < 1 || k > static_cast<int>(task.train.size())) {
        throw ContractError("few-shot k=" + std::to_string(k) + " outside train split of " +
                            std::to_string(task.train.size()));
    }
    std::vector<int> ids(task.train.size());
    std::iota(ids.begin(), ids.end(), 0);
    Rng rng(mix_seed(seed, 0xC3));
    for (int i = 0; i < k; ++i) {
        const std::size_t j = i + rng.uniform(ids.size() - i);
        std::swap(ids[i], ids[j]);
    }
    ids.resize(k);
    FewShotDataset out;
    out.task_id = task.id;
    out.k = k;
    out.seed = seed;
    out.example_ids = std::move(ids);
    return out;
}

/// Prompt pattern with one {input} placeholder and one verbalizer per class.
/// Verbalizer lengths deliberately vary from one to three tokens.
struct PromptTemplate {
    std::string id;
    std::string pattern;
    std::vector<std::string> verbalizers;
};

inline std::vector<PromptTemplate> templates_for(TaskFamily family) {
    switch (family) {
        case TaskFamily::kCopyLast:
            return {{"copy-1", "last of {input} is", {"a", "b", "c"}},
                    {"copy-2", "{input} <sep> copy the last :", {"it is a", "it is b", "it is c"}},
                    {"copy-3", "the last kind in {input} =", {"kind a", "kind b", "kind c"}}};
        case TaskFamily::kMajoritySymbol:
            return {{"major-1", "most of {input} is", {"a", "b"}},
                    {"major-2", "{input} <sep> the most kind :", {"it is a", "it is b"}},
                    {"major-3", "the kind most in {input} is", {"kind a", "kind b"}}};
        case TaskFamily::kContainsPattern:
            return {{"contains-1", "has {input} a b b in it", {"no", "yes"}},
                    {"contains-2", "{input} <sep> a b b in it :", {"no", "yes"}},
                    {"contains-3", "has {input} a b b in it <sep> answer :",
                     {"it is no", "it is yes"}}};
        case TaskFamily::kParityOfCount:
            return {{"parity-1", "count of a in {input} is", {"even", "odd"}},
                    {"parity-2", "{input} <sep> the count of a :", {"it is even", "it is odd"}},
                    {"parity-3", "is the count of a in {input} even", {"yes", "no"}}};
        case TaskFamily::kSortedOrder:
            return {{"sorted-1", "order of {input} is", {"mixed", "sorted"}},
                    {"sorted-2", "is {input} sorted", {"no", "yes"}},
                    {"sorted-3", "{input} <sep> sorted order :", {"it is mixed", "it is sorted"}}};
    }
    throw ContractError("unreachable task family");
}

inline const PromptTemplate& find_template(const std::vector<PromptTemplate>& templates,
                                           const std::string& id) {
    for (const auto& t : templates) {
        if (t.id == id) return t;
    }
    throw LookupError("unknown template id '" + id + "'");
}

/// Instantiates a template on one example; verbalizer i answers class i.
inline CandidateSet apply_template(const PromptTemplate& tmpl, const RawExample& ex,
                                   const Tokenizer& tok = Tokenizer::instance()) {
    const auto pos = tmpl.pattern.find("{input}");
    if (pos == std::string::npos) {
        throw TemplateError("template '" + tmpl.id + "' lacks the {input} placeholder");
    }
    if (ex.label < 0 || ex.label >= static_cast<int>(tmpl.verbalizers.size())) {
        throw TemplateError("template '" + tmpl.id + "' has no verbalizer for class " +
                            std::to_string(ex.label));
    }
    std::string joined;
    for (std::size_t i = 0; i < ex.symbols.size(); ++i) {
        if (i > 0) joined += ' ';
        joined += ex.symbols[i];
    }
    std::string text = tmpl.pattern;
    text.replace(pos, 7, joined);

    CandidateSet out;
    out.input_tokens = tok.encode(text);
    for (const auto& v : tmpl.verbalizers) out.candidates.push_back(tok.encode(v));
    out.correct_index = ex.label;
    out.validate();
    return out;
}

/// Training-time template choice: one uniform draw per example per step from
/// a dedicated stream.
inline const PromptTemplate& sample_template(const std::vector<PromptTemplate>& templates,
                                             Rng& rng) {
    if (templates.empty()) throw ContractError("no templates to sample from");
    return templates[rng.uniform(templates.size())];
}

/// The held-out split prompted under every template, keyed by template id.
inline std::map<std::string, std::vector<CandidateSet>> templated_eval_set(
    const SyntheticTask& task, const Tokenizer& tok = Tokenizer::instance()) {
    std::map<std::string, std::vector<CandidateSet>> out;
    for (const auto& tmpl : templates_for(task.family)) {
        auto& examples = out[tmpl.id];
        examples.reserve(task.heldout.size());
        for (const auto& ex : task.heldout) examples.push_back(apply_template(tmpl, ex, tok));
    }
    return out;
}

}  // namespace tfew
