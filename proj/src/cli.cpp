// Copyright (C) 2026 The qtune Authors
// SPDX-License-Identifier: Apache-2.0

#include "qtune/cli.hpp"

#include "qtune/container.hpp"
#include "qtune/error.hpp"
#include "qtune/mixed_precision.hpp"
#include "qtune/outlier.hpp"
#include "qtune/pipeline.hpp"
#include "qtune/quantizer.hpp"
#include "qtune/report.hpp"
#include "qtune/rng.hpp"

#include <CLI11.hpp>

#include <algorithm>
#include <cstdio>
#include <optional>
#include <ostream>
#include <string>
#include <vector>

namespace qtune {

namespace {

constexpr int kExitUsage = 2;

std::string one_line(std::string s)
{
    std::replace(s.begin(), s.end(), '\n', ' ');
    while (!s.empty() && s.back() == ' ') {
        s.pop_back();
    }
    return s;
}

std::string fmt(double v)
{
    char buf[32];
    std::snprintf(buf, sizeof buf, "%.6g", v);
    return buf;
}

const Matrix& require_float(const NamedTensor& t, std::string_view command)
{
    const auto* m = std::get_if<Matrix>(&t.value);
    if (!m) {
        throw Error(std::string(command) + " expects float32 tensors; '" + t.name + "' is quantized");
    }
    return *m;
}

void emit_report(const Json& doc, const std::optional<std::string>& path, std::ostream& out)
{
    const std::string text = dump_report(doc);
    if (path) {
        write_file_atomic(*path, text);
    } else {
        out << text;
    }
}

std::string join_layers(const std::vector<int>& bits)
{
    // Runs of equal bit-width, reported with 1-based inclusive layer numbers.
    std::string s;
    for (std::size_t i = 0; i < bits.size();) {
        std::size_t j = i;
        while (j + 1 < bits.size() && bits[j + 1] == bits[i]) {
            ++j;
        }
        if (!s.empty()) {
            s += ", ";
        }
        s += i == j ? "layer " + std::to_string(i + 1) : "layers " + std::to_string(i + 1) + "-" + std::to_string(j + 1);
        s += ": " + std::to_string(bits[i]) + "-bit";
        i = j + 1;
    }
    return s;
}

LayerPlan read_plan(const std::string& path)
{
    const auto bytes = read_file(path);
    Json j;
    try {
        j = Json::parse(bytes.begin(), bytes.end());
    } catch (const nlohmann::json::exception& e) {
        throw Error("cannot parse plan '" + path + "': " + e.what());
    }
    if (!j.is_array()) {
        throw Error("plan '" + path + "' must be a JSON array of bit-widths");
    }
    LayerPlan plan;
    for (const auto& v : j) {
        if (!v.is_number_integer()) {
            throw Error("plan '" + path + "' must contain integers only");
        }
        plan.bits_per_layer.push_back(v.get<int>());
    }
    plan.validate();
    return plan;
}

struct QuantArgs {
    int bits = 4;
    std::string strategy = "outlier";
    std::string granularity = "tensor";

    QuantConfig config() const
    {
        QuantConfig cfg{bits, parse_strategy(strategy), parse_granularity(granularity)};
        cfg.validate();
        return cfg;
    }
};

void add_quant_options(CLI::App* cmd, QuantArgs& q)
{
    cmd->add_option("--bits", q.bits, "Bit-width: 2, 4 or 8")->capture_default_str();
    cmd->add_option("--strategy", q.strategy, "minmax, outlier or mse")->capture_default_str();
    cmd->add_option("--granularity", q.granularity, "tensor or row")->capture_default_str();
}

} // namespace

int run_cli(int argc, const char* const* argv, std::ostream& out, std::ostream& err)
{
    CLI::App app{"qtune: low-bit weight quantization and outlier-aware fine-tuning"};
    app.name("qtune");
    app.set_version_flag("--version", QTUNE_VERSION);
    app.require_subcommand(1);

    std::string in_path;
    std::string out_path;
    std::optional<std::string> json_path;
    std::uint64_t seed = 42;

    QuantArgs qargs;
    auto* quantize_cmd = app.add_subcommand("quantize", "Quantize every float32 tensor of a container");
    quantize_cmd->add_option("--in", in_path, "Input container")->required();
    quantize_cmd->add_option("--out", out_path, "Output container")->required();
    add_quant_options(quantize_cmd, qargs);

    auto* dequantize_cmd = app.add_subcommand("dequantize", "Expand quantized tensors back to float32");
    dequantize_cmd->add_option("--in", in_path, "Input container")->required();
    dequantize_cmd->add_option("--out", out_path, "Output container")->required();

    std::vector<int> er_bits{4};
    std::vector<std::string> er_strategies{"minmax", "outlier", "mse"};
    std::vector<std::string> er_granularities{"tensor"};
    bool per_dim = false;
    auto* error_cmd = app.add_subcommand("error-report", "L2 quantization error per tensor and configuration");
    error_cmd->add_option("--in", in_path, "Input container")->required();
    error_cmd->add_option("--bits", er_bits, "Bit-widths, comma separated")->delimiter(',')->capture_default_str();
    error_cmd->add_option("--strategy", er_strategies, "Strategies, comma separated")
        ->delimiter(',')
        ->capture_default_str();
    error_cmd->add_option("--granularity", er_granularities, "Granularities, comma separated")
        ->delimiter(',')
        ->capture_default_str();
    error_cmd->add_flag("--per-dim", per_dim, "Include per-column errors");
    error_cmd->add_option("--json", json_path, "Report path (stdout when omitted)");

    double k = kDefaultOutlierK;
    std::size_t r = 1;
    auto* outliers_cmd = app.add_subcommand("outliers", "Outlier detection and trainable-dimension selection");
    outliers_cmd->add_option("--in", in_path, "Input container")->required();
    outliers_cmd->add_option("--k", k, "Threshold in standard deviations")->capture_default_str();
    outliers_cmd->add_option("--r", r, "Trainable dimensions per tensor")->capture_default_str();
    outliers_cmd->add_option("--json", json_path, "Report path (stdout when omitted)");

    std::size_t n_layers = 0;
    std::string region = "none";
    int low_bits = 2;
    int high_bits = 4;
    std::optional<std::string> plan_out;
    auto* plan_cmd = app.add_subcommand("plan", "Write a thirds mixed-precision plan");
    plan_cmd->add_option("--layers", n_layers, "Number of layers")->required();
    plan_cmd->add_option("--region", region, "none, bottom-third, bottom-two-thirds, top-third, top-two-thirds")
        ->capture_default_str();
    plan_cmd->add_option("--low", low_bits, "Bit-width inside the region")->capture_default_str();
    plan_cmd->add_option("--high", high_bits, "Bit-width elsewhere")->capture_default_str();
    plan_cmd->add_option("--out", plan_out, "Plan path (stdout when omitted)");

    std::string plan_path;
    QuantArgs pe_args;
    auto* plan_eval_cmd = app.add_subcommand("plan-eval", "Quantization error of a layer stack under a plan");
    plan_eval_cmd->add_option("--in", in_path, "Container with one float32 tensor per layer, bottom first")
        ->required();
    plan_eval_cmd->add_option("--plan", plan_path, "Plan file (JSON array of bit-widths)")->required();
    plan_eval_cmd->add_option("--strategy", pe_args.strategy, "minmax, outlier or mse")->capture_default_str();
    plan_eval_cmd->add_option("--granularity", pe_args.granularity, "tensor or row")->capture_default_str();
    plan_eval_cmd->add_option("--json", json_path, "Report path (stdout when omitted)");

    PipelineConfig pcfg;
    QuantArgs tt_args;
    std::string modes_arg = "full,outlier,random,alpha,frozen";
    std::vector<std::size_t> data_sizes;
    std::vector<std::string> plan_paths;
    std::optional<std::string> teacher_out;
    auto* train_cmd = app.add_subcommand("toy-train", "Pretrain a toy teacher and run the two-stage pipeline");
    train_cmd->add_option("--seed", seed, "Seed for every random stream")->capture_default_str();
    train_cmd->add_option("--r", pcfg.r, "Trainable dimensions per layer")->capture_default_str();
    add_quant_options(train_cmd, tt_args);
    train_cmd->add_option("--modes", modes_arg, "Comma separated: full, outlier, random, alpha, frozen")
        ->capture_default_str();
    train_cmd->add_option("--data-sizes", data_sizes, "Training-set sizes for the low-resource sweep")
        ->delimiter(',');
    train_cmd->add_option("--plan", plan_paths, "Mixed-precision plan files to run (repeatable)");
    train_cmd->add_option("--steps", pcfg.train.steps, "SGD steps")->capture_default_str();
    train_cmd->add_option("--lr", pcfg.train.learning_rate, "Learning rate")->capture_default_str();
    train_cmd->add_option("--train-size", pcfg.train_size, "Downstream training examples")->capture_default_str();
    train_cmd->add_option("--shift", pcfg.task_shift, "Downstream task perturbation")->capture_default_str();
    train_cmd->add_flag("--activation-quant", pcfg.activation_quant, "8-bit activations in quantized modes");
    train_cmd->add_option("--save-teacher", teacher_out, "Write teacher weights as a float32 container");
    train_cmd->add_option("--json", json_path, "Report path (stdout when omitted)");

    OutlierMatrixSpec gspec{256, 256, 0.0, 1.0, 0.001, 10.0, 42};
    std::size_t gcount = 1;
    auto* gen_cmd = app.add_subcommand("generate", "Write seeded Gaussian matrices with planted outliers");
    gen_cmd->add_option("--rows", gspec.rows, "Rows")->capture_default_str();
    gen_cmd->add_option("--cols", gspec.cols, "Columns")->capture_default_str();
    gen_cmd->add_option("--count", gcount, "Number of tensors")->capture_default_str();
    gen_cmd->add_option("--sigma", gspec.sigma, "Standard deviation")->capture_default_str();
    gen_cmd->add_option("--outlier-fraction", gspec.outlier_fraction, "Fraction of planted outliers")
        ->capture_default_str();
    gen_cmd->add_option("--outlier-magnitude", gspec.outlier_magnitude, "Outlier offset in standard deviations")
        ->capture_default_str();
    gen_cmd->add_option("--seed", seed, "Seed")->capture_default_str();
    gen_cmd->add_option("--out", out_path, "Output container")->required();

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        if (e.get_exit_code() == 0) {
            return app.exit(e, out, err);
        }
        err << "qtune: error: " << one_line(e.what()) << "\n";
        return kExitUsage;
    }

    try {
        if (*quantize_cmd) {
            const QuantConfig cfg = qargs.config();
            std::vector<NamedTensor> tensors = load_container(in_path);
            for (NamedTensor& t : tensors) {
                t.value = quantize(require_float(t, "quantize"), cfg);
            }
            save_container(out_path, tensors);
            out << "quantized " << tensors.size() << " tensor(s) to " << cfg.bits << "-bit "
                << to_string(cfg.strategy) << "/" << to_string(cfg.granularity) << "\n";
        } else if (*dequantize_cmd) {
            std::vector<NamedTensor> tensors = load_container(in_path);
            for (NamedTensor& t : tensors) {
                if (const auto* q = std::get_if<QuantizedTensor>(&t.value)) {
                    t.value = dequantize(*q);
                }
            }
            save_container(out_path, tensors);
            out << "dequantized " << tensors.size() << " tensor(s)\n";
        } else if (*error_cmd) {
            std::vector<QuantConfig> configs;
            for (int b : er_bits) {
                for (const auto& s : er_strategies) {
                    for (const auto& g : er_granularities) {
                        QuantConfig c{b, parse_strategy(s), parse_granularity(g)};
                        c.validate();
                        configs.push_back(c);
                    }
                }
            }
            const auto tensors = load_container(in_path);
            Json results = Json::array();
            for (const NamedTensor& t : tensors) {
                const Matrix& m = require_float(t, "error-report");
                Json entry;
                entry["name"] = t.name;
                entry["rows"] = m.rows();
                entry["cols"] = m.cols();
                Json errors = Json::array();
                for (const QuantConfig& c : configs) {
                    Json e = to_json(c);
                    const double l2 = quant_error(m, c);
                    e["error"] = finite_number(l2, "error");
                    if (per_dim) {
                        Json cols = Json::array();
                        for (double v : quant_error_per_column(m, c)) {
                            cols.push_back(finite_number(v, "per_dim"));
                        }
                        e["per_dim"] = std::move(cols);
                    }
                    if (json_path) {
                        out << t.name << " " << c.bits << "-bit " << to_string(c.strategy) << "/"
                            << to_string(c.granularity) << ": " << fmt(l2) << "\n";
                    }
                    errors.push_back(std::move(e));
                }
                entry["errors"] = std::move(errors);
                results.push_back(std::move(entry));
            }
            Json cfg;
            cfg["input"] = in_path;
            cfg["bits"] = er_bits;
            cfg["strategies"] = er_strategies;
            cfg["granularities"] = er_granularities;
            cfg["per_dim"] = per_dim;
            emit_report(make_report("error-report", std::move(cfg), Json{{"tensors", std::move(results)}}),
                        json_path, out);
        } else if (*outliers_cmd) {
            if (r < 1) {
                throw Error("--r must be at least 1");
            }
            const auto tensors = load_container(in_path);
            Json results = Json::array();
            for (const NamedTensor& t : tensors) {
                const Matrix& m = require_float(t, "outliers");
                const OutlierReport rep = detect_outliers(m, k);
                const DimSelection sel = select_trainable_dims(rep, r);
                Json entry;
                entry["name"] = t.name;
                entry.update(outlier_summary(rep, sel));
                if (json_path) {
                    out << t.name << ": " << rep.total() << " outliers, trainable ratio "
                        << entry["trainable_ratio"].get<std::string>() << "\n";
                }
                results.push_back(std::move(entry));
            }
            Json cfg;
            cfg["input"] = in_path;
            cfg["k"] = finite_number(k, "k");
            cfg["r"] = r;
            emit_report(make_report("outliers", std::move(cfg), Json{{"tensors", std::move(results)}}), json_path,
                        out);
        } else if (*plan_cmd) {
            const LayerPlan plan = make_thirds_plan(n_layers, parse_plan_region(region), low_bits, high_bits);
            const std::string text = Json(plan.bits_per_layer).dump() + "\n";
            if (plan_out) {
                write_file_atomic(*plan_out, text);
                out << join_layers(plan.bits_per_layer) << "\n";
            } else {
                out << text;
            }
        } else if (*plan_eval_cmd) {
            const Strategy strategy = parse_strategy(pe_args.strategy);
            const Granularity granularity = parse_granularity(pe_args.granularity);
            const LayerPlan plan = read_plan(plan_path);
            const auto tensors = load_container(in_path);
            std::vector<Matrix> layers;
            for (const NamedTensor& t : tensors) {
                layers.push_back(require_float(t, "plan-eval"));
            }
            const PlanEvaluation eval = apply_plan(layers, plan, strategy, granularity);
            Json per_layer = Json::array();
            for (std::size_t i = 0; i < layers.size(); ++i) {
                Json e;
                e["layer"] = i + 1;
                e["name"] = tensors[i].name;
                e["bits"] = plan.bits_per_layer[i];
                e["error"] = finite_number(eval.layer_errors[i], "error");
                per_layer.push_back(std::move(e));
            }
            Json cfg;
            cfg["input"] = in_path;
            cfg["bits_per_layer"] = plan.bits_per_layer;
            cfg["strategy"] = std::string(to_string(strategy));
            cfg["granularity"] = std::string(to_string(granularity));
            Json results;
            results["layers"] = std::move(per_layer);
            results["total_error"] = finite_number(eval.total_error, "total_error");
            if (json_path) {
                out << join_layers(plan.bits_per_layer) << "; total error " << fmt(eval.total_error) << "\n";
            }
            emit_report(make_report("plan-eval", std::move(cfg), std::move(results)), json_path, out);
        } else if (*train_cmd) {
            pcfg.quant = tt_args.config();
            pcfg.seed = seed;
            pcfg.modes.clear();
            for (const auto& m : CLI::detail::split(modes_arg, ',')) {
                const TuneMode mode = parse_tune_mode(m);
                if (std::find(pcfg.modes.begin(), pcfg.modes.end(), mode) != pcfg.modes.end()) {
                    throw Error("mode '" + m + "' listed twice");
                }
                pcfg.modes.push_back(mode);
            }
            std::vector<LayerPlan> plans;
            for (const auto& p : plan_paths) {
                plans.push_back(read_plan(p));
            }
            pcfg.validate();

            PretrainConfig pre;
            pre.task_seed = seed;
            const Teacher teacher = pretrain_teacher(pre);
            if (teacher_out) {
                std::vector<NamedTensor> weights;
                const auto mats = layer_weights(teacher.model);
                for (std::size_t l = 0; l < mats.size(); ++l) {
                    weights.push_back({"layer" + std::to_string(l + 1) + ".weight", mats[l]});
                }
                save_container(*teacher_out, weights);
            }

            const ExperimentReport rep = run_two_stage_pipeline(teacher, pcfg);
            Json results;
            Json tj;
            tj["pretrain_loss"] = finite_number(teacher.pretrain_loss, "pretrain_loss");
            tj["pretrain_steps"] = teacher.pretrain_steps;
            tj["outlier_columns"] = teacher.outlier_columns;
            results["teacher"] = std::move(tj);
            results["pipeline"] = to_json(rep);
            if (!data_sizes.empty()) {
                results["sweep"] = to_json(low_resource_sweep(teacher, pcfg, data_sizes));
            }
            if (!plans.empty()) {
                results["plans"] = to_json(run_mixed_pipeline(teacher, plans, pcfg));
            }
            if (json_path) {
                for (const ModeResult& m : rep.modes) {
                    out << to_string(m.mode) << ": final loss " << fmt(m.training.final_loss) << ", "
                        << m.trainable_params << " trainable\n";
                }
            }
            Json cfg = to_json(pcfg);
            cfg["data_sizes"] = data_sizes;
            Json plan_cfg = Json::array();
            for (const auto& p : plans) {
                plan_cfg.push_back(p.bits_per_layer);
            }
            cfg["plans"] = std::move(plan_cfg);
            emit_report(make_report("toy-train", std::move(cfg), std::move(results)), json_path, out);
        } else if (*gen_cmd) {
            if (gcount < 1) {
                throw Error("--count must be at least 1");
            }
            std::vector<NamedTensor> tensors;
            for (std::size_t i = 0; i < gcount; ++i) {
                OutlierMatrixSpec s = gspec;
                s.seed = SplitMix64::derive(seed, i);
                tensors.push_back({"w" + std::to_string(i), gen_gaussian_with_outliers(s)});
            }
            save_container(out_path, tensors);
            out << "wrote " << gcount << " tensor(s) of " << gspec.rows << "x" << gspec.cols << "\n";
        }
    } catch (const std::exception& e) {
        err << "qtune: error: " << one_line(e.what()) << "\n";
        return kExitUsage;
    }
    return 0;
}

} // namespace qtune
