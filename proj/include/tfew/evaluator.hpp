// Copyright 2026 the tfew authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <map>
#include <sstream>
#include <string>
#include <vector>

#include <json.hpp>

#include "tfew/error.hpp"
#include "tfew/ia3.hpp"
#include "tfew/model.hpp"
#include "tfew/objectives.hpp"

namespace tfew {

struct EvalConfig {
    bool length_normalize = true;
    std::vector<std::string> template_ids;
    std::vector<std::uint64_t> seeds;

    void validate() const {
        if (template_ids.empty()) throw ConfigError("eval config needs at least one template");
        if (seeds.empty()) throw ConfigError("eval config needs at least one seed");
    }
};

struct EvalCell {
    std::string template_id;
    std::uint64_t seed = 0;
    double accuracy = 0.0;
};

struct EvalReport {
    std::vector<EvalCell> cells;
    double median = 0.0;
    double iqr = 0.0;
};

/// Linearly interpolated quantile (type 7) of an unsorted sample.
inline double quantile(std::vector<double> values, double p) {
    if (values.empty()) throw ContractError("quantile of an empty sample");
    std::sort(values.begin(), values.end());
    const double h = p * static_cast<double>(values.size() - 1);
    const std::size_t lo = static_cast<std::size_t>(h);
    const std::size_t hi = std::min(lo + 1, values.size() - 1);
    return values[lo] + (h - static_cast<double>(lo)) * (values[hi] - values[lo]);
}

/// Fills median and IQR from the cell accuracies.
inline EvalReport make_report(std::vector<EvalCell> cells) {
    if (cells.empty()) throw ContractError("report needs at least one cell");
    std::vector<double> acc;
    acc.reserve(cells.size());
    for (const auto& c : cells) acc.push_back(c.accuracy);
    EvalReport report;
    report.cells = std::move(cells);
    report.median = quantile(acc, 0.5);
    report.iqr = quantile(acc, 0.75) - quantile(acc, 0.25);
    return report;
}

/// Log-probability score per candidate: the per-token sum, or the per-token
/// mean when length normalization is on.
template <class Real>
std::vector<double> score_candidates(const Model<Real>& m, const IA3Adapter<Real>* adapter,
                                     const CandidateSet& ex, bool length_normalize) {
    ex.validate();
    auto enc_states = encode(m, adapter, ex.input_tokens);
    std::vector<double> scores;
    scores.reserve(ex.candidates.size());
    for (const auto& cand : ex.candidates) {
        auto logp = token_logprobs(m, adapter, enc_states, cand);
        double total = 0.0;
        for (Real v : logp.value()) total += static_cast<double>(v);
        scores.push_back(length_normalize ? total / static_cast<double>(cand.size()) : total);
    }
    return scores;
}

/// Argmax with ties broken toward the lowest index.
inline int rank_classify(const std::vector<double>& scores) {
    if (scores.empty()) throw ContractError("rank_classify needs at least one score");
    int best = 0;
    for (int i = 1; i < static_cast<int>(scores.size()); ++i) {
        if (scores[i] > scores[best]) best = i;
    }
    return best;
}

/// Fraction of examples whose top-ranked candidate is the correct one,
/// with candidate scores supplied by an arbitrary scorer.
template <class Scorer>
double accuracy_with_scorer(Scorer&& scorer, const std::vector<CandidateSet>& examples) {
    if (examples.empty()) throw ContractError("cannot evaluate an empty dataset");
    std::size_t correct = 0;
    for (const auto& ex : examples) {
        if (rank_classify(scorer(ex)) == ex.correct_index) ++correct;
    }
    return static_cast<double>(correct) / static_cast<double>(examples.size());
}

template <class Real>
double accuracy(const Model<Real>& m, const IA3Adapter<Real>* adapter,
                const std::vector<CandidateSet>& examples, bool length_normalize) {
    return accuracy_with_scorer(
        [&](const CandidateSet& ex) { return score_candidates(m, adapter, ex, length_normalize); },
        examples);
}

/// Total sequence-probability mass the model puts on incorrect candidates,
/// averaged over the dataset. Used to measure the unlikelihood effect.
template <class Real>
double mean_incorrect_mass(const Model<Real>& m, const IA3Adapter<Real>* adapter,
                           const std::vector<CandidateSet>& examples) {
    if (examples.empty()) throw ContractError("cannot evaluate an empty dataset");
    double total = 0.0;
    for (const auto& ex : examples) {
        auto scores = score_candidates(m, adapter, ex, /*length_normalize=*/false);
        for (std::size_t i = 0; i < scores.size(); ++i) {
            if (static_cast<int>(i) != ex.correct_index) total += std::exp(scores[i]);
        }
    }
    return total / static_cast<double>(examples.size());
}

/// Evaluates the full (template x seed) grid. adapter_for_seed maps each
/// few-shot seed to the adapter trained on that seed's subset (nullptr means
/// the unadapted model); examples_by_template holds the prompted dataset per
/// template id.
template <class Real, class AdapterForSeed>
EvalReport evaluate_grid(const Model<Real>& m, AdapterForSeed&& adapter_for_seed,
                         const std::map<std::string, std::vector<CandidateSet>>&
                             examples_by_template,
                         const EvalConfig& config) {
    config.validate();
    std::vector<EvalCell> cells;
    cells.reserve(config.template_ids.size() * config.seeds.size());
    for (const std::uint64_t seed : config.seeds) {
        const IA3Adapter<Real>* adapter = adapter_for_seed(seed);
        for (const auto& tmpl : config.template_ids) {
            auto it = examples_by_template.find(tmpl);
            if (it == examples_by_template.end()) {
                throw LookupError("no examples for template '" + tmpl + "'");
            }
            cells.push_back(
                {tmpl, seed, accuracy(m, adapter, it->second, config.length_normalize)});
        }
    }
    return make_report(std::move(cells));
}

/// Single-adapter evaluation: every seed cell reuses the same adapter.
template <class Real>
EvalReport evaluate(const Model<Real>& m, const IA3Adapter<Real>* adapter,
                    const std::map<std::string, std::vector<CandidateSet>>& examples_by_template,
                    const EvalConfig& config) {
    return evaluate_grid(m, [adapter](std::uint64_t) { return adapter; }, examples_by_template,
                         config);
}

inline nlohmann::json report_to_json(const EvalReport& report) {
    nlohmann::json cells = nlohmann::json::array();
    for (const auto& c : report.cells) {
        cells.push_back({{"template", c.template_id}, {"seed", c.seed}, {"accuracy", c.accuracy}});
    }
    return {{"median_accuracy", report.median}, {"iqr", report.iqr}, {"cells", cells}};
}

/// One row per (template, seed) cell.
inline std::string report_to_csv(const EvalReport& report) {
    std::ostringstream os;
    os << "template,seed,accuracy\n";
    for (const auto& c : report.cells) {
        os << c.template_id << "," << c.seed << "," << c.accuracy << "\n";
    }
    return os.str();
}

}  // namespace tfew
