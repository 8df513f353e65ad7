// Command-line front end: gen, train, eval, gradcheck, ablate.

#include <CLI11.hpp>

#include <exception>
#include <iostream>
#include <string>
#include <utility>
#include <vector>

#include "maa/commands.hpp"
#include "maa/common.hpp"

namespace {

std::vector<std::pair<std::string, std::string>> parse_sets(const std::vector<std::string>& sets) {
    std::vector<std::pair<std::string, std::string>> out;
    for (const auto& s : sets) {
        const auto eq = s.find('=');
        if (eq == std::string::npos) {
            throw maa::ConfigError("--set expects key=value, got '" + s + "'");
        }
        out.emplace_back(s.substr(0, eq), s.substr(eq + 1));
    }
    return out;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"Modality-agnostic multi-modal fusion trainer"};
    app.require_subcommand(1);

    maa::GenOptions gen;
    auto* gen_cmd = app.add_subcommand("gen", "Generate a synthetic embedding dataset");
    gen_cmd->add_option("--out", gen.out, "Output .maae file")->required();
    gen_cmd->add_option("--classes", gen.classes, "Number of classes");
    gen_cmd->add_option("--per-class", gen.per_class, "Records per class");
    gen_cmd->add_option("--seed", gen.seed, "Generator seed");
    gen_cmd->add_option("--split", gen.split, "Split tag; same seed + different split shares prototypes");
    gen_cmd->add_option("--mode", gen.mode, "prototype (default) or agreement");
    gen_cmd->add_option("--symbols", gen.symbols, "Symbol count for agreement mode");
    gen_cmd->add_option("--prototype-scale", gen.prototype_scale, "Prototype magnitude");
    gen_cmd->add_option("--modality", gen.modality_specs,
                        "Modality spec NAME:dim=..,tokens=A..B,info=..,sigma=..,drop=..,scale=.. "
                        "(repeatable; default G,L,T)");

    maa::TrainOptions train;
    std::vector<std::string> train_sets;
    auto* train_cmd = app.add_subcommand("train", "Train a model");
    train_cmd->add_option("--data", train.train_path, "Training .maae file")->required();
    train_cmd->add_option("--val", train.val_path, "Validation .maae file")->required();
    train_cmd->add_option("--out", train.out_dir, "Output directory")->required();
    train_cmd->add_option("--config", train.config_file, "key=value config file");
    train_cmd->add_option("--set", train_sets, "Config override key=value (repeatable)");
    train_cmd->add_flag("--resume", train.resume, "Resume from <out>/last.ckpt");

    maa::EvalOptions eval;
    auto* eval_cmd = app.add_subcommand("eval", "Evaluate a checkpoint");
    eval_cmd->add_option("--checkpoint", eval.checkpoint, "Checkpoint file")->required();
    eval_cmd->add_option("--data", eval.data_path, "Dataset .maae file")->required();
    eval_cmd->add_option("--report", eval.report_path, "Write the report document here");
    eval_cmd->add_option("--threads", eval.threads, "Worker threads (default: MAA_NUM_THREADS)");

    maa::GradcheckOptions gc;
    auto* gc_cmd = app.add_subcommand("gradcheck", "Finite-difference gradient verification (64-bit)");
    gc_cmd->add_option("--dim", gc.dim, "Model dim");
    gc_cmd->add_option("--ffn", gc.ffn_dim, "FFN dim");
    gc_cmd->add_option("--heads", gc.heads, "Attention heads");
    gc_cmd->add_option("--layers", gc.layers, "Encoder layers");
    gc_cmd->add_option("--classes", gc.classes, "Classes");
    gc_cmd->add_option("--adapter-mode", gc.adapter_mode, "independent|shared|none");
    gc_cmd->add_option("--activation", gc.activation, "gelu|relu");
    gc_cmd->add_option("--encoder-norm", gc.encoder_norm, "post|pre");
    gc_cmd->add_option("--eps", gc.eps, "Finite-difference step");
    gc_cmd->add_option("--tol", gc.tol, "Max relative error tolerance");
    gc_cmd->add_option("--seed", gc.seed, "Seed");
    gc_cmd->add_flag("--break-layer-norm", gc.break_layer_norm,
                     "Fault injection: flip a sign in the LayerNorm backward");

    maa::AblateOptions ablate;
    std::vector<std::string> ablate_sets;
    auto* ablate_cmd = app.add_subcommand("ablate", "Train one cell per axis value, same seed/budget");
    ablate_cmd->add_option("--axis", ablate.axis, "modalities|adapter|layers")->required();
    ablate_cmd->add_option("--values", ablate.values, "Axis values (repeatable)")->required();
    ablate_cmd->add_option("--data", ablate.train_path, "Training .maae file")->required();
    ablate_cmd->add_option("--val", ablate.val_path, "Validation .maae file")->required();
    ablate_cmd->add_option("--out", ablate.out_dir, "Output directory")->required();
    ablate_cmd->add_option("--config", ablate.config_file, "key=value config file");
    ablate_cmd->add_option("--set", ablate_sets, "Config override key=value (repeatable)");

    try {
        app.parse(argc, argv);
    } catch (const CLI::CallForHelp& e) {
        return app.exit(e);
    } catch (const CLI::ParseError& e) {
        app.exit(e);
        return 2;
    }

    try {
        if (*gen_cmd) {
            maa::run_gen(gen);
        } else if (*train_cmd) {
            train.overrides = parse_sets(train_sets);
            const auto summary = maa::run_train(train);
            std::cout << "best val mAP " << summary.best_val_map << " after "
                      << summary.epochs_run << " epochs; best checkpoint "
                      << summary.best_checkpoint << "\n";
        } else if (*eval_cmd) {
            maa::run_eval(eval);
        } else if (*gc_cmd) {
            const auto report = maa::run_gradcheck(gc);
            return report.passed(gc.tol) ? 0 : 1;
        } else if (*ablate_cmd) {
            ablate.overrides = parse_sets(ablate_sets);
            maa::run_ablate(ablate);
        }
    } catch (const maa::ConfigError& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 2;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 1;
    }
    return 0;
}
