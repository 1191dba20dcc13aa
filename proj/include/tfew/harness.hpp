// Copyright 2026 the tfew authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cmath>
#include <cstdint>
#include <map>
#include <sstream>
#include <string>
#include <vector>

#include <json.hpp>

#include "tfew/checkpoint.hpp"
#include "tfew/error.hpp"
#include "tfew/evaluator.hpp"
#include "tfew/ia3.hpp"
#include "tfew/model.hpp"
#include "tfew/objectives.hpp"
#include "tfew/optimizer.hpp"
#include "tfew/tasks.hpp"
#include "tfew/tokenizer.hpp"

namespace tfew {

enum class TrainMode { kAdapter, kFullFinetune, kPretrainAdapter };

inline std::string to_string(TrainMode m) {
    switch (m) {
        case TrainMode::kAdapter: return "adapter";
        case TrainMode::kFullFinetune: return "full-finetune";
        case TrainMode::kPretrainAdapter: return "pretrain-adapter";
    }
    return "";
}

inline TrainMode train_mode_from_string(const std::string& s) {
    if (s == "adapter") return TrainMode::kAdapter;
    if (s == "full-finetune") return TrainMode::kFullFinetune;
    if (s == "pretrain-adapter") return TrainMode::kPretrainAdapter;
    throw ConfigError("unknown train mode '" + s + "'");
}

enum class Precision { kDouble, kSingle };

struct TrainConfig {
    TrainMode mode = TrainMode::kAdapter;
    int steps = 1000;
    int batch_size = 8;
    Schedule schedule;  // peak 3e-3, 60-step warmup, total bound to steps
    LossSwitches losses;
    std::uint64_t seed = 0;
    Precision precision = Precision::kDouble;

    void validate() const {
        if (steps < 1) throw ConfigError("steps must be positive");
        if (batch_size < 1) throw ConfigError("batch_size must be positive");
    }
};

/// Pre-training scales the run up: 2,000 steps with batch 16 unless the
/// config says otherwise. The pre-training peak rate is kept below the
/// fine-tuning rate so the shared adapter stays a mild, broadly useful
/// starting point rather than a mixture specialist.
inline TrainConfig default_pretrain_config() {
    TrainConfig c;
    c.mode = TrainMode::kPretrainAdapter;
    c.steps = 2000;
    c.batch_size = 16;
    c.schedule.peak_lr = 1e-3;
    c.schedule.total_steps = c.steps;
    return c;
}

struct StepMetrics {
    int step = 0;
    double lm = 0, ul = 0, ln = 0, total = 0, lr = 0;
};

inline std::string metrics_to_csv(const std::vector<StepMetrics>& metrics) {
    std::ostringstream os;
    os << "step,lm,ul,ln,total,lr\n";
    os.precision(17);
    for (const auto& m : metrics) {
        os << m.step << "," << m.lm << "," << m.ul << "," << m.ln << "," << m.total << ","
           << m.lr << "\n";
    }
    return os.str();
}

struct TrainOutput {
    std::vector<StepMetrics> metrics;
};

namespace detail {

/// Uniform task-then-example draw, prompted with a uniformly drawn template.
inline CandidateSet sample_prompted_example(const std::vector<const SyntheticTask*>& tasks,
                                            Rng& example_rng, Rng& template_rng,
                                            const Tokenizer& tok) {
    const SyntheticTask* task = tasks[example_rng.uniform(tasks.size())];
    const RawExample& raw = task->train[example_rng.uniform(task->train.size())];
    const auto& templates = templates_for(task->family);
    return apply_template(sample_template(templates, template_rng), raw, tok);
}

/// Runs the optimizer loop over whatever the example source yields. The
/// adapter is the trainable set unless mode is full fine-tuning, in which
/// case the model weights are.
template <class Real, class ExampleSource>
TrainOutput train_loop(Model<Real>& model, IA3Adapter<Real>* adapter,
                       ExampleSource&& next_example, const TrainConfig& config) {
    config.validate();
    Schedule schedule = config.schedule;
    schedule.total_steps = config.steps;

    const bool full = config.mode == TrainMode::kFullFinetune;
    model.set_trainable(full);
    if (adapter != nullptr) adapter->set_trainable(!full);

    std::vector<NamedParam<Real>> trainables;
    if (full) {
        for (auto& [name, t] : model.named_weights()) trainables.push_back({name, t});
    } else {
        for (auto& [name, t] : adapter->named_vectors()) trainables.push_back({name, t});
    }

    Rng example_rng(mix_seed(config.seed, 0xD1));
    Rng template_rng(mix_seed(config.seed, 0xD2));
    Adafactor<Real> optimizer;

    TrainOutput out;
    out.metrics.reserve(config.steps);
    for (int step = 0; step < config.steps; ++step) {
        const double step_lr = lr(step, schedule);
        GradTape<Real> tape;
        StepMetrics row;
        row.step = step;
        row.lr = step_lr;
        {
            TapeScope<Real> scope(tape);
            Tensor<Real> batch_node;
            for (int b = 0; b < config.batch_size; ++b) {
                const CandidateSet ex = next_example(example_rng, template_rng);
                auto breakdown =
                    total_loss<Real>(model, full ? nullptr : adapter, ex, config.losses);
                row.lm += breakdown.lm;
                row.ul += breakdown.ul;
                row.ln += breakdown.ln;
                batch_node =
                    batch_node.defined() ? add(batch_node, breakdown.node) : breakdown.node;
            }
            batch_node = scale(batch_node, Real(1) / static_cast<Real>(config.batch_size));
            const double batch_total = static_cast<double>(batch_node.item());
            if (!std::isfinite(batch_total)) {
                throw TrainError("non-finite loss at step " + std::to_string(step));
            }
            row.lm /= config.batch_size;
            row.ul /= config.batch_size;
            row.ln /= config.batch_size;
            row.total = batch_total;
            tape.backward(batch_node);
        }
        optimizer.step(trainables, step_lr);
        out.metrics.push_back(row);
    }

    model.set_trainable(false);
    if (adapter != nullptr) adapter->set_trainable(false);
    return out;
}

}  // namespace detail

/// Fine-tunes on one task's few-shot subset. In adapter mode the store's
/// adapter for the task (created as ones if absent) is trained against the
/// frozen model; in full-finetune mode the model weights are trained and no
/// adapter is used.
template <class Real>
TrainOutput train_task(Model<Real>& model, AdapterStore<Real>& store, const SyntheticTask& task,
                       const FewShotDataset& shots, const TrainConfig& config) {
    if (config.mode == TrainMode::kPretrainAdapter) {
        throw ConfigError("pretrain-adapter mode requires the mixture entry point");
    }
    if (shots.task_id != task.id) {
        throw ContractError("few-shot dataset belongs to task '" + shots.task_id + "'");
    }
    IA3Adapter<Real>* adapter =
        config.mode == TrainMode::kAdapter ? &store.get_or_init(task.id) : nullptr;
    const auto& templates = templates_for(task.family);
    auto source = [&task, &shots, &templates](Rng& example_rng, Rng& template_rng) {
        const int id = shots.example_ids[example_rng.uniform(shots.example_ids.size())];
        return apply_template(sample_template(templates, template_rng),
                              task.train[static_cast<std::size_t>(id)]);
    };
    return detail::train_loop(model, adapter, source, config);
}

/// A target-only example over a random token string; teacher-forcing it
/// trains the output head and embeddings on the full vocabulary.
inline CandidateSet token_coverage_example(Rng& rng, int vocab_size) {
    CandidateSet ex;
    const int len = 3 + static_cast<int>(rng.uniform(4));
    ex.input_tokens.resize(len);
    // ids below 3 are <pad>/<eos>/<sep>; they never occur inside prompts
    for (int& id : ex.input_tokens) id = 3 + static_cast<int>(rng.uniform(vocab_size - 3));
    ex.candidates = {ex.input_tokens};
    ex.correct_index = 0;
    return ex;
}

/// Exact-count multiple choice answered with a digit, distractors being the
/// other possible counts; asked in both question-first and string-first
/// arrangements. Gives the base model count-valued features without ever
/// touching the held-out labels.
inline CandidateSet counting_example(Rng& rng, const Tokenizer& tok) {
    const int len = 3 + static_cast<int>(rng.uniform(4));
    std::string body;
    int count = 0;
    for (int i = 0; i < len; ++i) {
        const bool is_a = rng.uniform(2) == 0;
        count += is_a;
        if (i > 0) body += ' ';
        body += is_a ? 'a' : 'b';
    }

    CandidateSet ex;
    const bool question_first = rng.uniform(2) == 0;
    ex.input_tokens = tok.encode(question_first
                                     ? "the count of a in " + body + " ="
                                     : body + " <sep> the count of a =");
    for (int c = 0; c <= len; ++c) ex.candidates.push_back({tok.id_of(std::to_string(c))});
    ex.correct_index = count;
    return ex;
}

/// Multitask full fine-tuning over the mixture families, interleaved with
/// two pretext components: a copy task over random full-vocabulary strings
/// (trains the output head and embeddings on every token) and exact-count
/// questions (trains count-valued features). This is the desk-scale
/// analogue of the instruction-tuned backbone the adapter recipe starts
/// from: rescaling vectors can only steer competence the frozen weights
/// already have. The held-out families never appear in these batches.
template <class Real>
TrainOutput train_base_model(Model<Real>& model, const std::vector<SyntheticTask>& suite,
                             const TrainConfig& config, double coverage_fraction = 0.2,
                             double counting_fraction = 0.2) {
    if (config.mode != TrainMode::kFullFinetune) {
        throw ConfigError("train_base_model requires full-finetune mode");
    }
    std::vector<const SyntheticTask*> mixture;
    for (const auto& t : suite) {
        if (is_pretraining_family(t.family)) mixture.push_back(&t);
    }
    if (mixture.empty()) throw ContractError("task suite has no pre-training families");
    const int vocab = model.spec.vocab_size;
    auto source = [&mixture, coverage_fraction, counting_fraction,
                   vocab](Rng& example_rng, Rng& template_rng) {
        const double draw = example_rng.uniform_real();
        if (draw < coverage_fraction) {
            return token_coverage_example(example_rng, vocab);
        }
        if (draw < coverage_fraction + counting_fraction) {
            return counting_example(example_rng, Tokenizer::instance());
        }
        return detail::sample_prompted_example(mixture, example_rng, template_rng,
                                               Tokenizer::instance());
    };
    return detail::train_loop(model, static_cast<IA3Adapter<Real>*>(nullptr), source, config);
}

inline constexpr const char* kPretrainedAdapterId = "pretrained";

/// Pre-trains one shared adapter on the full train splits of the mixture
/// families, stored under "pretrained".
template <class Real>
TrainOutput pretrain_mixture(Model<Real>& model, AdapterStore<Real>& store,
                             const std::vector<SyntheticTask>& suite,
                             const TrainConfig& config) {
    if (config.mode != TrainMode::kPretrainAdapter) {
        throw ConfigError("pretrain_mixture requires pretrain-adapter mode");
    }
    std::vector<const SyntheticTask*> mixture;
    for (const auto& t : suite) {
        if (is_pretraining_family(t.family)) mixture.push_back(&t);
    }
    if (mixture.empty()) throw ContractError("task suite has no pre-training families");

    IA3Adapter<Real>* shared = &store.get_or_init(kPretrainedAdapterId);
    auto source = [&mixture](Rng& example_rng, Rng& template_rng) {
        return detail::sample_prompted_example(mixture, example_rng, template_rng,
                                               Tokenizer::instance());
    };
    return detail::train_loop(model, shared, source, config);
}

// --------------------------------------------------------------------------
// JSON bindings and checkpoint glue
// --------------------------------------------------------------------------

inline nlohmann::json spec_to_json(const ModelSpec& s) {
    return {{"vocab_size", s.vocab_size}, {"d_model", s.d_model},
            {"num_heads", s.num_heads},   {"d_k", s.d_k},
            {"d_v", s.d_v},               {"d_ff", s.d_ff},
            {"L_enc", s.enc_layers},      {"L_dec", s.dec_layers},
            {"max_seq_len", s.max_seq_len}, {"activation", to_string(s.activation)}};
}

inline ModelSpec spec_from_json(const nlohmann::json& j) {
    ModelSpec s;
    s.vocab_size = j.value("vocab_size", s.vocab_size);
    s.d_model = j.value("d_model", s.d_model);
    s.num_heads = j.value("num_heads", s.num_heads);
    s.d_k = j.value("d_k", s.d_k);
    s.d_v = j.value("d_v", s.d_v);
    s.d_ff = j.value("d_ff", s.d_ff);
    s.enc_layers = j.value("L_enc", s.enc_layers);
    s.dec_layers = j.value("L_dec", s.dec_layers);
    s.max_seq_len = j.value("max_seq_len", s.max_seq_len);
    s.activation = activation_from_string(j.value("activation", std::string("gelu")));
    s.validate();
    return s;
}

inline nlohmann::json train_config_to_json(const TrainConfig& c) {
    return {{"mode", to_string(c.mode)},
            {"steps", c.steps},
            {"batch_size", c.batch_size},
            {"peak_lr", c.schedule.peak_lr},
            {"warmup_steps", c.schedule.warmup_steps},
            {"losses", {{"lm", c.losses.lm}, {"ul", c.losses.ul}, {"ln", c.losses.ln}}},
            {"seed", c.seed},
            {"precision", c.precision == Precision::kDouble ? "double" : "single"}};
}

inline TrainConfig train_config_from_json(const nlohmann::json& j) {
    TrainConfig c;
    c.mode = train_mode_from_string(j.value("mode", std::string("adapter")));
    if (c.mode == TrainMode::kPretrainAdapter) {
        c = default_pretrain_config();
    }
    c.steps = j.value("steps", c.steps);
    c.batch_size = j.value("batch_size", c.batch_size);
    c.schedule.peak_lr = j.value("peak_lr", c.schedule.peak_lr);
    c.schedule.warmup_steps = j.value("warmup_steps", c.schedule.warmup_steps);
    c.schedule.total_steps = c.steps;
    if (j.contains("losses")) {
        const auto& l = j.at("losses");
        c.losses.lm = l.value("lm", true);
        c.losses.ul = l.value("ul", true);
        c.losses.ln = l.value("ln", true);
    }
    c.seed = j.value("seed", std::uint64_t{0});
    const std::string precision = j.value("precision", std::string("double"));
    if (precision == "double") {
        c.precision = Precision::kDouble;
    } else if (precision == "single") {
        c.precision = Precision::kSingle;
    } else {
        throw ConfigError("precision must be 'double' or 'single', got '" + precision + "'");
    }
    c.validate();
    return c;
}

/// How the frozen backbone is produced before any adapter work.
struct BasePrepConfig {
    int steps = 3000;
    int batch_size = 8;
    std::uint64_t seed = 99;
    double coverage_fraction = 0.2;
    double counting_fraction = 0.2;
};

/// One JSON document configuring a whole run.
struct RunConfig {
    ModelSpec model;
    std::uint64_t model_seed = 1;
    std::uint64_t master_seed = 7;
    std::string task = "parity-of-count";
    int shots = 32;
    BasePrepConfig base;
    TrainConfig train;
    EvalConfig eval;  // template_ids empty = all templates of the task

    static RunConfig from_json(const nlohmann::json& j) {
        RunConfig c;
        if (j.contains("model")) c.model = spec_from_json(j.at("model"));
        c.model_seed = j.value("model_seed", c.model_seed);
        c.master_seed = j.value("master_seed", c.master_seed);
        c.task = j.value("task", c.task);
        c.shots = j.value("shots", c.shots);
        if (j.contains("base")) {
            const auto& b = j.at("base");
            c.base.steps = b.value("steps", c.base.steps);
            c.base.batch_size = b.value("batch_size", c.base.batch_size);
            c.base.seed = b.value("seed", c.base.seed);
            c.base.coverage_fraction = b.value("coverage_fraction", c.base.coverage_fraction);
            c.base.counting_fraction = b.value("counting_fraction", c.base.counting_fraction);
        }
        if (j.contains("train")) c.train = train_config_from_json(j.at("train"));
        if (j.contains("eval")) {
            const auto& e = j.at("eval");
            c.eval.length_normalize = e.value("length_normalize", true);
            c.eval.template_ids =
                e.value("templates", std::vector<std::string>{});
            std::vector<std::uint64_t> seeds = e.value("seeds", std::vector<std::uint64_t>{});
            if (!seeds.empty()) c.eval.seeds = seeds;
        }
        if (c.eval.seeds.empty()) c.eval.seeds = {0, 1, 2, 3, 4};
        return c;
    }

    nlohmann::json to_json() const {
        nlohmann::json e{{"length_normalize", eval.length_normalize},
                         {"templates", eval.template_ids},
                         {"seeds", eval.seeds}};
        nlohmann::json b{{"steps", base.steps},
                         {"batch_size", base.batch_size},
                         {"seed", base.seed},
                         {"coverage_fraction", base.coverage_fraction},
                         {"counting_fraction", base.counting_fraction}};
        return {{"model", spec_to_json(model)}, {"model_seed", model_seed},
                {"master_seed", master_seed},   {"task", task},
                {"shots", shots},               {"base", b},
                {"train", train_config_to_json(train)}, {"eval", e}};
    }

    /// Template ids default to every template of the configured task.
    std::vector<std::string> eval_template_ids() const {
        if (!eval.template_ids.empty()) return eval.template_ids;
        std::vector<std::string> ids;
        for (const auto& t : templates_for(family_from_string(task))) ids.push_back(t.id);
        return ids;
    }
};

/// Builds and multitask-trains the frozen backbone for a run. Deterministic
/// per config.
template <class Real = double>
Model<Real> prepare_base_model(const RunConfig& config,
                               const std::vector<SyntheticTask>& suite) {
    auto model = build_model<Real>(config.model, config.model_seed);
    TrainConfig base_config;
    base_config.mode = TrainMode::kFullFinetune;
    base_config.steps = config.base.steps;
    base_config.batch_size = config.base.batch_size;
    base_config.seed = config.base.seed;
    train_base_model(model, suite, base_config, config.base.coverage_fraction,
                     config.base.counting_fraction);
    return model;
}

template <class Real>
void save_adapter(const std::string& path, const IA3Adapter<Real>& adapter,
                  const std::string& task_id) {
    nlohmann::json meta{{"kind", "adapter"}, {"task", task_id}, {"spec", spec_to_json(adapter.spec)}};
    save_checkpoint(path, meta.dump(), tensors_to_arrays(adapter.named_vectors()));
}

template <class Real = double>
IA3Adapter<Real> load_adapter(const std::string& path) {
    auto content = load_checkpoint(path);
    const auto meta = nlohmann::json::parse(content.meta_json);
    if (meta.value("kind", std::string()) != "adapter") {
        throw ContractError("checkpoint at '" + path + "' is not an adapter");
    }
    auto adapter = init_adapter<Real>(spec_from_json(meta.at("spec")));
    arrays_to_tensors(content.arrays, adapter.named_vectors());
    return adapter;
}

template <class Real>
void save_model(const std::string& path, const Model<Real>& model) {
    nlohmann::json meta{{"kind", "model"}, {"spec", spec_to_json(model.spec)}};
    save_checkpoint(path, meta.dump(), tensors_to_arrays(model.named_weights()));
}

template <class Real = double>
Model<Real> load_model(const std::string& path) {
    auto content = load_checkpoint(path);
    const auto meta = nlohmann::json::parse(content.meta_json);
    if (meta.value("kind", std::string()) != "model") {
        throw ContractError("checkpoint at '" + path + "' is not a model");
    }
    auto model = build_model<Real>(spec_from_json(meta.at("spec")), 0);
    arrays_to_tensors(content.arrays, model.named_weights());
    return model;
}

}  // namespace tfew
