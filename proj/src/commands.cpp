#include "maa/commands.hpp"

#include <algorithm>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <sstream>

#include "maa/batch.hpp"
#include "maa/checkpoint.hpp"
#include "maa/config.hpp"
#include "maa/dataio.hpp"
#include "maa/model.hpp"
#include "maa/trainer.hpp"

namespace maa {

namespace fs = std::filesystem;

namespace {

std::vector<std::string> split(const std::string& s, char sep) {
    std::vector<std::string> out;
    std::string cur;
    for (char c : s) {
        if (c == sep) {
            out.push_back(cur);
            cur.clear();
        } else {
            cur.push_back(c);
        }
    }
    out.push_back(cur);
    return out;
}

TrainConfig build_config(const std::string& config_file,
                         const std::vector<std::pair<std::string, std::string>>& overrides) {
    TrainConfig cfg;
    if (!config_file.empty()) cfg = TrainConfig::load_file(config_file);
    for (const auto& [k, v] : overrides) cfg.set(k, v);
    cfg.validate();
    return cfg;
}

void require_same_schema(const DatasetHeader& a, const DatasetHeader& b) {
    if (a.num_classes != b.num_classes || a.modalities.size() != b.modalities.size()) {
        throw ConfigError("train: train and val datasets have different schemas");
    }
    for (std::size_t i = 0; i < a.modalities.size(); ++i) {
        if (a.modalities[i].id != b.modalities[i].id || a.modalities[i].dim != b.modalities[i].dim) {
            throw ConfigError("train: train and val datasets have different modality tables");
        }
    }
}

}  // namespace

SyntheticModalitySpec parse_modality_spec(const std::string& text) {
    const auto colon = text.find(':');
    SyntheticModalitySpec spec;
    spec.name = colon == std::string::npos ? text : text.substr(0, colon);
    if (spec.name.empty()) throw ConfigError("gen: modality spec needs a name: '" + text + "'");
    bool have_id = true;
    if (spec.name == "G") spec.id = kModalityGlobal;
    else if (spec.name == "L") spec.id = kModalityLocal;
    else if (spec.name == "T") spec.id = kModalityText;
    else have_id = false;
    spec.dim = 16;
    if (spec.name == "L") {
        spec.min_tokens = spec.max_tokens = 5;
    } else if (spec.name == "T") {
        spec.min_tokens = 1;
        spec.max_tokens = 6;
    }
    if (colon != std::string::npos) {
        for (const auto& item : split(text.substr(colon + 1), ',')) {
            if (item.empty()) continue;
            const auto eq = item.find('=');
            if (eq == std::string::npos) {
                throw ConfigError("gen: modality option '" + item + "' is not key=value");
            }
            const std::string key = item.substr(0, eq);
            const std::string value = item.substr(eq + 1);
            try {
                if (key == "dim") spec.dim = static_cast<std::uint32_t>(std::stoul(value));
                else if (key == "tokens") {
                    const auto dots = value.find("..");
                    if (dots == std::string::npos) {
                        spec.min_tokens = spec.max_tokens = std::stoi(value);
                    } else {
                        spec.min_tokens = std::stoi(value.substr(0, dots));
                        spec.max_tokens = std::stoi(value.substr(dots + 2));
                    }
                } else if (key == "info") spec.informativeness = std::stod(value);
                else if (key == "sigma") spec.sigma = std::stod(value);
                else if (key == "drop") spec.dropout = std::stod(value);
                else if (key == "scale") spec.scale = std::stod(value);
                else if (key == "id") {
                    spec.id = static_cast<std::uint8_t>(std::stoul(value));
                    have_id = true;
                } else {
                    throw ConfigError("gen: unknown modality option '" + key + "'");
                }
            } catch (const ConfigError&) {
                throw;
            } catch (const std::exception&) {
                throw ConfigError("gen: bad value for modality option '" + item + "'");
            }
        }
    }
    if (!have_id) {
        throw ConfigError("gen: modality '" + spec.name + "' needs an explicit id=N (G/L/T imply 0/1/2)");
    }
    return spec;
}

DatasetHeader run_gen(const GenOptions& options) {
    if (options.out.empty()) throw ConfigError("gen: --out is required");
    std::vector<SyntheticModalitySpec> mods;
    if (options.modality_specs.empty()) {
        mods = default_modalities();
    } else {
        for (const auto& s : options.modality_specs) mods.push_back(parse_modality_spec(s));
    }

    DatasetHeader header;
    std::vector<EmbeddingRecord> records;
    if (options.mode == "prototype") {
        SyntheticSpec spec;
        spec.classes = options.classes;
        spec.per_class = options.per_class;
        spec.seed = options.seed;
        spec.split = options.split;
        spec.prototype_scale = options.prototype_scale;
        spec.modalities = mods;
        std::tie(header, records) = gen_synthetic(spec);
    } else if (options.mode == "agreement") {
        InteractionSpec spec;
        spec.symbols = options.symbols;
        spec.per_class = options.per_class;
        spec.seed = options.seed;
        spec.split = options.split;
        spec.prototype_scale = options.prototype_scale;
        spec.modalities = mods;
        std::tie(header, records) = gen_interaction(spec);
    } else {
        throw ConfigError("gen: unknown mode '" + options.mode + "' (prototype|agreement)");
    }

    write_dataset(options.out, header, records);
    if (!options.quiet) {
        std::cout << "wrote " << records.size() << " records, " << header.num_classes
                  << " classes to " << options.out << "\n";
        for (const auto& m : header.modalities) {
            std::cout << "  modality " << m.name << " (id " << static_cast<int>(m.id) << "), dim "
                      << m.dim << "\n";
        }
    }
    return header;
}

TrainSummary run_train(const TrainOptions& options) {
    if (options.train_path.empty() || options.val_path.empty() || options.out_dir.empty()) {
        throw ConfigError("train: --data, --val and --out are required");
    }
    TrainConfig cfg = build_config(options.config_file, options.overrides);
    DatasetHeader train_header, val_header;
    const auto train_records = read_all(options.train_path, &train_header);
    const auto val_records = read_all(options.val_path, &val_header);
    require_same_schema(train_header, val_header);

    const TrainOutcome outcome = train_model(cfg, train_header, train_records, val_records,
                                             options.out_dir, options.resume, options.quiet);

    TrainSummary summary;
    summary.best_val_map = outcome.best_val_map;
    summary.epochs_run = outcome.epochs_run;
    summary.best_checkpoint = outcome.best_checkpoint;
    summary.last_checkpoint = outcome.last_checkpoint;
    summary.train_loss_per_epoch = outcome.train_loss_per_epoch;
    summary.val_map_per_epoch = outcome.val_map_per_epoch;
    return summary;
}

MetricsReport run_eval(const EvalOptions& options) {
    if (options.checkpoint.empty() || options.data_path.empty()) {
        throw ConfigError("eval: --checkpoint and --data are required");
    }
    const Checkpoint ckpt = load_checkpoint(options.checkpoint);
    TrainConfig cfg = TrainConfig::from_text(ckpt.config_text);
    cfg.validate();
    if (!cfg.data.resolved()) {
        throw ConfigError("eval: checkpoint config has no data schema");
    }

    DatasetHeader header;
    const auto records = read_all(options.data_path, &header);
    check_schema_compatible(cfg.data, header);

    MaaModel<float> model(ModelConfig::from_train_config(cfg), cfg.seed);
    apply_to_model(ckpt, model);

    const int threads = options.threads > 0 ? options.threads : resolve_num_threads();
    MetricsReport report = evaluate_records(model, records, header, cfg, threads);

    std::vector<std::pair<std::string, std::string>> extra;
    std::istringstream cfg_lines(ckpt.config_text);
    std::string line;
    while (std::getline(cfg_lines, line)) {
        const auto eq = line.find('=');
        if (eq != std::string::npos) {
            extra.emplace_back("config." + line.substr(0, eq), line.substr(eq + 1));
        }
    }
    const std::string text = report.to_text(extra);
    if (!options.quiet) std::cout << text;
    if (!options.report_path.empty()) {
        std::ofstream out(options.report_path);
        if (!out) throw IoError("eval: cannot write report '" + options.report_path + "'");
        out << text;
    }
    return report;
}

GradCheckReport run_gradcheck(const GradcheckOptions& options) {
    if (options.dim < 8) throw ConfigError("gradcheck: dim must be >= 8");
    const AdapterMode mode = adapter_mode_from_string(options.adapter_mode);

    // Modality dims: heterogeneous for independent mode so the projection
    // to the model dim is exercised; uniform otherwise (required).
    std::vector<SyntheticModalitySpec> mods = {
        {kModalityGlobal, "G", static_cast<std::uint32_t>(options.dim), 1, 1, 1.0, 0.3, 0.0, 1.0},
        {kModalityLocal, "L", static_cast<std::uint32_t>(options.dim), 2, 2, 1.0, 0.3, 0.0, 1.0},
        {kModalityText, "T", static_cast<std::uint32_t>(options.dim), 1, 3, 1.0, 0.3, 0.3, 1.0},
    };
    if (mode == AdapterMode::independent) {
        mods[0].dim = static_cast<std::uint32_t>(options.dim - 4);
        mods[2].dim = static_cast<std::uint32_t>(options.dim - 6);
    }

    SyntheticSpec data_spec;
    data_spec.classes = static_cast<std::uint32_t>(options.classes);
    data_spec.per_class = 2;
    data_spec.seed = options.seed;
    data_spec.split = "gradcheck";
    data_spec.prototype_scale = 0.7;
    data_spec.modalities = mods;
    auto [header, records] = gen_synthetic(data_spec);
    records.resize(std::min<std::size_t>(records.size(), 4));

    // The check runs at extended precision (>= 64-bit) so the difference
    // quotient stays above the round-off floor even where the true
    // gradient is ~0; analytic and probed paths share one instantiation.
    using real_t = long double;
    const Batch<real_t> batch = collate<real_t>(records, header, CollateOptions{.quiet = true});

    ModelConfig mc;
    mc.dim = options.dim;
    mc.ffn_dim = options.ffn_dim;
    mc.heads = options.heads;
    mc.layers = options.layers;
    mc.classes = options.classes;
    mc.adapter_mode = mode;
    mc.activation = activation_from_string(options.activation);
    mc.encoder_norm = encoder_norm_from_string(options.encoder_norm);
    mc.dropout = 0.0;
    mc.modalities = header.modalities;
    MaaModel<real_t> model(mc, options.seed);

    model.zero_grads();
    ForwardTrace<real_t> trace;
    model.forward_backward(batch, trace, /*train=*/false);

    debug::break_layer_norm_backward = false;
    const auto loss_fn = [&]() {
        ForwardTrace<real_t> probe;
        model.forward(batch, probe, /*train=*/false);
        return ce_loss<real_t>(probe.logits, batch.labels).loss;
    };

    GradCheckReport report;
    if (options.break_layer_norm) {
        // Re-run the analytic backward with the fault injected.
        debug::break_layer_norm_backward = true;
        model.zero_grads();
        ForwardTrace<real_t> broken;
        model.forward_backward(batch, broken, /*train=*/false);
        debug::break_layer_norm_backward = false;
        report = finite_diff_gradcheck(loss_fn, model.params(), options.eps, options.seed);
    } else {
        report = finite_diff_gradcheck(loss_fn, model.params(), options.eps, options.seed);
    }

    if (!options.quiet) {
        for (const auto& e : report.per_param) {
            std::printf("  %-32s  coords %4zu  max rel err %.3e\n", e.name.c_str(),
                        e.coords_checked, e.max_rel_err);
        }
        std::printf("gradcheck %s (adapter %s, %d layers): max rel err %.3e on %s (tol %.1e)\n",
                    report.passed(options.tol) ? "PASS" : "FAIL", options.adapter_mode.c_str(),
                    options.layers, report.max_rel_err, report.worst_param.c_str(), options.tol);
    }
    return report;
}

std::vector<AblateCell> run_ablate(const AblateOptions& options) {
    if (options.values.empty()) throw ConfigError("ablate: at least one --values entry is required");
    if (options.axis != "modalities" && options.axis != "adapter" && options.axis != "layers") {
        throw ConfigError("ablate: unknown axis '" + options.axis +
                          "' (modalities|adapter|layers)");
    }
    if (options.train_path.empty() || options.val_path.empty() || options.out_dir.empty()) {
        throw ConfigError("ablate: --data, --val and --out are required");
    }
    const TrainConfig base = build_config(options.config_file, options.overrides);

    DatasetHeader train_header, val_header;
    const auto train_records = read_all(options.train_path, &train_header);
    const auto val_records = read_all(options.val_path, &val_header);
    require_same_schema(train_header, val_header);

    std::vector<AblateCell> cells;
    for (std::size_t i = 0; i < options.values.size(); ++i) {
        const std::string& value = options.values[i];
        TrainConfig cfg = base;
        if (options.axis == "modalities") {
            cfg.set("modalities", value);
        } else if (options.axis == "adapter") {
            cfg.set("adapter_mode", value);
        } else {
            cfg.set("layers", value);
        }
        std::string cell_name = value;
        std::replace(cell_name.begin(), cell_name.end(), ',', '+');
        const std::string cell_dir =
            (fs::path(options.out_dir) / ("cell_" + std::to_string(i) + "_" + cell_name)).string();
        if (!options.quiet) {
            std::cout << "== ablate " << options.axis << " = " << value << " -> " << cell_dir
                      << "\n";
        }
        train_model(cfg, train_header, train_records, val_records, cell_dir, /*resume=*/false,
                    options.quiet);

        EvalOptions eval_opts;
        eval_opts.checkpoint = (fs::path(cell_dir) / "best.ckpt").string();
        eval_opts.data_path = options.val_path;
        eval_opts.quiet = true;
        const MetricsReport report = run_eval(eval_opts);
        cells.push_back({value, report.map, report.accuracy});
    }

    fs::create_directories(options.out_dir);
    const std::string csv_path = (fs::path(options.out_dir) / "ablation.csv").string();
    std::ofstream csv(csv_path, std::ios::trunc);
    csv << "axis_value,map,accuracy\n";
    char buf[128];
    std::string table = options.axis + "        mAP     accuracy\n";
    for (const auto& cell : cells) {
        csv << cell.value << ',' << cell.map << ',' << cell.accuracy << '\n';
        std::snprintf(buf, sizeof(buf), "%-12s %.4f  %.4f\n", cell.value.c_str(), cell.map,
                      cell.accuracy);
        table += buf;
    }
    if (!options.quiet) std::cout << table;
    return cells;
}

}  // namespace maa
