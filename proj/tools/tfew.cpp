// Copyright 2026 the tfew authors
// SPDX-License-Identifier: Apache-2.0
//
// Command-line driver: few-shot adapter training, adapter pre-training,
// rank-classification evaluation, adapter merging, and the analytic cost
// model.

#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <string>

#include <CLI11.hpp>
#include <json.hpp>

#include "tfew/costs.hpp"
#include "tfew/harness.hpp"

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

tfew::RunConfig load_run_config(const std::string& path) {
    if (path.empty()) return tfew::RunConfig::from_json(json::object());
    std::ifstream is(path);
    if (!is) throw tfew::ConfigError("cannot open config file '" + path + "'");
    json j;
    is >> j;
    return tfew::RunConfig::from_json(j);
}

void write_file(const fs::path& path, const std::string& content) {
    std::ofstream os(path, std::ios::trunc);
    if (!os) throw tfew::ConfigError("cannot write '" + path.string() + "'");
    os << content;
}

struct CommonArgs {
    std::string config_path;
    std::string out_dir = "out";
    std::optional<std::uint64_t> seed;
    std::string model_ckpt;
    bool no_ul = false;
    bool no_ln = false;
};

void add_common(CLI::App* cmd, CommonArgs& args, bool with_losses) {
    cmd->add_option("--config", args.config_path, "run configuration JSON");
    cmd->add_option("--out", args.out_dir, "output directory");
    cmd->add_option("--seed", args.seed, "overrides the training / few-shot seed");
    cmd->add_option("--model", args.model_ckpt,
                    "prepared base model checkpoint (otherwise prepared from config)");
    if (with_losses) {
        cmd->add_flag("--no-ul", args.no_ul, "drop the unlikelihood loss term");
        cmd->add_flag("--no-ln", args.no_ln, "drop the length-normalized loss term");
    }
}

tfew::RunConfig resolve_config(const CommonArgs& args) {
    auto config = load_run_config(args.config_path);
    if (args.seed.has_value()) config.train.seed = *args.seed;
    if (args.no_ul) config.train.losses.ul = false;
    if (args.no_ln) config.train.losses.ln = false;
    return config;
}

template <class Real>
tfew::Model<Real> obtain_base(const tfew::RunConfig& config, const std::string& model_ckpt,
                              const std::vector<tfew::SyntheticTask>& suite) {
    if (!model_ckpt.empty()) {
        std::cout << "loading base model from " << model_ckpt << "\n";
        return tfew::load_model<Real>(model_ckpt);
    }
    std::cout << "preparing base model (" << config.base.steps << " multitask steps)\n";
    return tfew::prepare_base_model<Real>(config, suite);
}

template <class Real>
int run_train(const tfew::RunConfig& config, const CommonArgs& args,
              const std::string& init_adapter_path, bool no_pretrained_init) {
    auto suite = tfew::generate_task_suite(config.master_seed);
    fs::create_directories(args.out_dir);

    tfew::TrainOutput out;
    if (config.task == "mixture") {
        // this run *is* base preparation, so start from the raw seeded model
        if (config.train.mode != tfew::TrainMode::kFullFinetune) {
            throw tfew::ConfigError("task 'mixture' is only valid with full-finetune mode");
        }
        auto model = args.model_ckpt.empty()
                         ? tfew::build_model<Real>(config.model, config.model_seed)
                         : tfew::load_model<Real>(args.model_ckpt);
        out = tfew::train_base_model(model, suite, config.train, config.base.coverage_fraction,
                                     config.base.counting_fraction);
        tfew::save_model(fs::path(args.out_dir) / "model.ckpt", model);
    } else {
        auto model = obtain_base<Real>(config, args.model_ckpt, suite);
        const auto& task = tfew::find_task(suite, config.task);
        tfew::AdapterStore<Real> store(config.model);
        if (!init_adapter_path.empty() && !no_pretrained_init) {
            std::cout << "initializing adapter from " << init_adapter_path << "\n";
            store.put(task.id, tfew::load_adapter<Real>(init_adapter_path));
        }
        auto shots = tfew::sample_few_shot(task, config.shots, config.train.seed);
        out = tfew::train_task(model, store, task, shots, config.train);
        if (config.train.mode == tfew::TrainMode::kAdapter) {
            tfew::save_adapter(fs::path(args.out_dir) / "adapter.ckpt", store.at(task.id),
                               task.id);
        } else {
            tfew::save_model(fs::path(args.out_dir) / "model.ckpt", model);
        }
    }

    write_file(fs::path(args.out_dir) / "metrics.csv", tfew::metrics_to_csv(out.metrics));
    write_file(fs::path(args.out_dir) / "config.json", config.to_json().dump(2) + "\n");
    const auto& last = out.metrics.back();
    std::cout << "done: " << out.metrics.size() << " steps, final total=" << last.total
              << " (lm=" << last.lm << " ul=" << last.ul << " ln=" << last.ln << ")\n"
              << "wrote " << args.out_dir << "/{metrics.csv, config.json, checkpoint}\n";
    return 0;
}

template <class Real>
int run_pretrain(const tfew::RunConfig& config, const CommonArgs& args) {
    auto suite = tfew::generate_task_suite(config.master_seed);
    auto model = obtain_base<Real>(config, args.model_ckpt, suite);
    fs::create_directories(args.out_dir);

    tfew::AdapterStore<Real> store(config.model);
    auto out = tfew::pretrain_mixture(model, store, suite, config.train);
    tfew::save_adapter(fs::path(args.out_dir) / "pretrained.ckpt",
                       store.at(tfew::kPretrainedAdapterId), tfew::kPretrainedAdapterId);
    write_file(fs::path(args.out_dir) / "metrics.csv", tfew::metrics_to_csv(out.metrics));
    write_file(fs::path(args.out_dir) / "config.json", config.to_json().dump(2) + "\n");
    std::cout << "done: wrote " << args.out_dir << "/pretrained.ckpt\n";
    return 0;
}

int run_eval(const tfew::RunConfig& config, const CommonArgs& args,
             const std::string& adapter_path) {
    auto suite = tfew::generate_task_suite(config.master_seed);
    auto model = obtain_base<double>(config, args.model_ckpt, suite);
    const auto& task = tfew::find_task(suite, config.task);

    std::optional<tfew::IA3Adapter<double>> adapter;
    if (!adapter_path.empty()) adapter = tfew::load_adapter<double>(adapter_path);

    tfew::EvalConfig eval = config.eval;
    eval.template_ids = config.eval_template_ids();
    auto report = tfew::evaluate(model, adapter ? &*adapter : nullptr,
                                 tfew::templated_eval_set(task), eval);

    fs::create_directories(args.out_dir);
    write_file(fs::path(args.out_dir) / "report.json", tfew::report_to_json(report).dump(2) + "\n");
    write_file(fs::path(args.out_dir) / "report.csv", tfew::report_to_csv(report));
    std::cout << "task " << task.id << ": median accuracy " << report.median << ", IQR "
              << report.iqr << " over " << report.cells.size() << " cells\n"
              << "wrote " << args.out_dir << "/{report.json, report.csv}\n";
    return 0;
}

int run_merge(const tfew::RunConfig& config, const CommonArgs& args,
              const std::string& adapter_path) {
    auto adapter = tfew::load_adapter<double>(adapter_path);
    tfew::Model<double> model = [&] {
        if (!args.model_ckpt.empty()) return tfew::load_model<double>(args.model_ckpt);
        auto suite = tfew::generate_task_suite(config.master_seed);
        return tfew::prepare_base_model<double>(config, suite);
    }();
    auto merged = tfew::merge(model, adapter);
    fs::create_directories(args.out_dir);
    const auto path = fs::path(args.out_dir) / "merged.ckpt";
    tfew::save_model(path.string(), merged);
    std::cout << "wrote " << path.string() << "\n";
    return 0;
}

int run_cost(bool table1, const std::string& scenario_path, const std::string& json_out) {
    json out = json::array();
    std::vector<tfew::Table1Row> rows;
    if (table1) {
        rows = tfew::table1_report();
    } else {
        std::ifstream is(scenario_path);
        if (!is) throw tfew::ConfigError("cannot open scenario file '" + scenario_path + "'");
        json j;
        is >> j;
        for (const auto& item : j.is_array() ? j : json::array({j})) {
            auto scenario = tfew::scenario_from_json(item);
            rows.push_back({scenario, tfew::compute_report(scenario)});
        }
    }

    std::printf("%-12s %-16s %-16s %-12s %s\n", "method", "inference FLOPs", "training FLOPs",
                "disk", "kv cache");
    for (const auto& row : rows) {
        const auto& r = row.report;
        std::printf("%-12s %-16s %-16s %-12s %s\n", row.scenario.name.c_str(),
                    tfew::flops_string(r.inference_flops).c_str(),
                    tfew::flops_string(r.training_flops).c_str(),
                    tfew::bytes_string(r.disk_bytes).c_str(),
                    r.kv_cache_bytes ? tfew::bytes_string(*r.kv_cache_bytes).c_str() : "-");
        out.push_back(tfew::report_to_json(row.scenario, r));
    }
    if (!json_out.empty()) {
        write_file(json_out, out.dump(2) + "\n");
        std::cout << "wrote " << json_out << "\n";
    } else {
        std::cout << out.dump(2) << "\n";
    }
    return 0;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"few-shot learning with rescaling adapters on a toy transformer"};
    app.require_subcommand(1);

    CommonArgs train_args, pretrain_args, eval_args, merge_args;
    std::string init_adapter_path, eval_adapter_path, merge_adapter_path;
    bool no_pretrained_init = false;

    auto* train_cmd = app.add_subcommand("train", "few-shot train an adapter (or full model)");
    add_common(train_cmd, train_args, /*with_losses=*/true);
    train_cmd->add_option("--init-adapter", init_adapter_path,
                          "start from a pre-trained adapter checkpoint");
    train_cmd->add_flag("--no-pretrained-init", no_pretrained_init,
                        "ignore --init-adapter and start from ones");

    auto* pretrain_cmd = app.add_subcommand("pretrain", "pre-train a shared adapter on the mixture");
    add_common(pretrain_cmd, pretrain_args, /*with_losses=*/true);

    auto* eval_cmd = app.add_subcommand("eval", "rank-classification evaluation");
    add_common(eval_cmd, eval_args, /*with_losses=*/false);
    eval_cmd->add_option("--adapter", eval_adapter_path, "adapter checkpoint to evaluate");

    auto* merge_cmd = app.add_subcommand("merge", "fold an adapter into the model weights");
    add_common(merge_cmd, merge_args, /*with_losses=*/false);
    merge_cmd->add_option("--adapter", merge_adapter_path, "adapter checkpoint to merge")
        ->required();

    auto* cost_cmd = app.add_subcommand("cost", "analytic FLOPs / storage model");
    bool table1 = false;
    std::string scenario_path, cost_json_out;
    cost_cmd->add_flag("--table1", table1, "emit the six benchmark scenarios");
    cost_cmd->add_option("--scenario", scenario_path, "scenario JSON (object or array)");
    cost_cmd->add_option("--json", cost_json_out, "write machine-readable output here");

    CLI11_PARSE(app, argc, argv);

    try {
        if (train_cmd->parsed()) {
            auto config = resolve_config(train_args);
            if (config.train.precision == tfew::Precision::kSingle) {
                return run_train<float>(config, train_args, init_adapter_path,
                                        no_pretrained_init);
            }
            return run_train<double>(config, train_args, init_adapter_path, no_pretrained_init);
        }
        if (pretrain_cmd->parsed()) {
            auto config = resolve_config(pretrain_args);
            if (config.train.mode != tfew::TrainMode::kPretrainAdapter) {
                config.train = tfew::default_pretrain_config();
                if (pretrain_args.seed.has_value()) config.train.seed = *pretrain_args.seed;
            }
            if (config.train.precision == tfew::Precision::kSingle) {
                return run_pretrain<float>(config, pretrain_args);
            }
            return run_pretrain<double>(config, pretrain_args);
        }
        if (eval_cmd->parsed()) {
            return run_eval(resolve_config(eval_args), eval_args, eval_adapter_path);
        }
        if (merge_cmd->parsed()) {
            return run_merge(resolve_config(merge_args), merge_args, merge_adapter_path);
        }
        if (cost_cmd->parsed()) {
            if (!table1 && scenario_path.empty()) {
                std::cerr << "cost: pass --table1 or --scenario <file>\n";
                return 2;
            }
            return run_cost(table1, scenario_path, cost_json_out);
        }
    } catch (const tfew::Error& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 1;
    }
    return 0;
}
