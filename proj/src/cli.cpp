#include "tsalign/cli.hpp"

#include "tsalign/checkpoint.hpp"
#include "tsalign/config.hpp"
#include "tsalign/eval.hpp"

#include <CLI11.hpp>
#include <json.hpp>

#include <fstream>
#include <iomanip>
#include <iostream>
#include <sstream>

namespace tsalign::cli {

namespace fs = std::filesystem;

namespace {

struct Overrides {
    std::string config_path;
    std::optional<std::uint64_t> seed;
    std::optional<double> few_shot;
    std::string data;
    std::string output_dir;
    std::string alignment_checkpoint;
    std::string transfer;
    std::string metrics_scale;
    std::vector<Index> horizons;
    std::vector<std::string> checkpoints;
    std::string out;
    double eps = 1e-4;
    Index gradcheck_windows = 3;
};

config::RunConfig resolve_config(const Overrides& o) {
    auto cfg = config::load_run_config(o.config_path);
    if (o.seed) cfg.seed = *o.seed;
    if (o.few_shot) cfg.split.few_shot_fraction = *o.few_shot;
    if (!o.data.empty()) {
        cfg.data_path = o.data;
        cfg.synth.reset();
    }
    if (!o.output_dir.empty()) cfg.output_dir = o.output_dir;
    if (!o.alignment_checkpoint.empty()) cfg.alignment_checkpoint = o.alignment_checkpoint;
    if (!o.transfer.empty()) {
        if (o.transfer == "required") {
            cfg.transfer = config::Transfer::Required;
        } else if (o.transfer == "none") {
            cfg.transfer = config::Transfer::None;
        } else {
            throw ConfigError("--transfer must be 'required' or 'none'");
        }
    }
    if (!o.metrics_scale.empty()) {
        if (o.metrics_scale != "standardized" && o.metrics_scale != "raw") {
            throw ConfigError("--metrics-scale must be 'standardized' or 'raw'");
        }
        cfg.raw_scale_metrics = o.metrics_scale == "raw";
    }
    if (!o.horizons.empty()) cfg.horizons = o.horizons;
    cfg.propagate_seed();
    cfg.validate();
    if (!cfg.data_path.empty() && !fs::exists(cfg.resolved_data_path())) {
        throw ConfigError("data file not found: " + cfg.resolved_data_path().string());
    }
    if (!cfg.backbone_checkpoint.empty() && !fs::exists(cfg.backbone_checkpoint)) {
        throw ConfigError("backbone checkpoint not found: " + cfg.backbone_checkpoint);
    }
    return cfg;
}

data::RawSeries load_series(const config::RunConfig& cfg) {
    if (cfg.synth) return data::generate_synthetic(*cfg.synth);
    return data::load_csv(cfg.resolved_data_path());
}

std::string dataset_name(const config::RunConfig& cfg) {
    if (!cfg.dataset_name.empty()) return cfg.dataset_name;
    if (cfg.synth) return "synthetic";
    return fs::path(cfg.data_path).stem().string();
}

void write_text(const fs::path& path, const std::string& text) {
    fs::create_directories(path.parent_path());
    std::ofstream f(path, std::ios::binary);
    if (!f) throw Error("cannot write " + path.string());
    f << text;
    if (!f) throw Error("write failed for " + path.string());
}

struct LogBuffer {
    std::string text;
    train::StepObserver observer() {
        return [this](const train::StepRecord& r) { text += train::to_json_line(r) + "\n"; };
    }
};

train::Model initial_model(const config::RunConfig& cfg) {
    auto model = train::make_model(cfg.model, cfg.seed);
    if (!cfg.backbone_checkpoint.empty()) {
        const auto ckpt = checkpoint::load(cfg.backbone_checkpoint);
        train::load_pretrained_backbone(model, ckpt, cfg.backbone_first_layers, cfg.seed);
    }
    return model;
}

eval::PipelineConfig pipeline_config(const config::RunConfig& cfg) {
    eval::PipelineConfig p;
    p.model = cfg.model;
    p.finetune = cfg.finetune;
    p.policy = cfg.policy;
    p.raw_scale_metrics = cfg.raw_scale_metrics;
    p.dataset = dataset_name(cfg);
    p.few_shot_fraction = cfg.split.few_shot_fraction;
    return p;
}

int cmd_synth(const Overrides& o, std::ostream& out) {
    const auto cfg = resolve_config(o);
    if (!cfg.synth) throw ConfigError("synth needs data.synth in the config");
    const fs::path target = o.out.empty() ? cfg.output_dir / "synth.csv" : fs::path(o.out);
    const auto series = data::generate_synthetic(*cfg.synth);
    if (target.has_parent_path()) fs::create_directories(target.parent_path());
    data::write_csv(series, target);
    out << "wrote " << series.length() << " rows x " << series.channels() << " channels to " << target.string()
        << '\n';
    return kExitOk;
}

int cmd_align(const Overrides& o, std::ostream& out, std::ostream& err) {
    const auto cfg = resolve_config(o);
    const auto prepared = data::prepare(load_series(cfg), cfg.split);
    const auto windows = data::sliding_windows(prepared.train, cfg.model.input_len, 0);
    err << "alignment: " << prepared.train.length() << " train rows, " << windows.size() << " windows\n";

    auto model = initial_model(cfg);
    Rng rng(cfg.seed ^ 0xA5A5A5A5ULL);
    train::add_alignment_head(model, rng);
    backbone::apply_freeze_policy(model.parameters(), cfg.policy);
    LogBuffer log;
    const auto result = train::run_alignment(model, windows, cfg.align, log.observer());

    const fs::path ckpt_path = cfg.output_dir / "checkpoints" / "alignment.ckpt";
    fs::create_directories(ckpt_path.parent_path());
    checkpoint::save(train::to_checkpoint(model, "alignment"), ckpt_path);
    write_text(cfg.output_dir / "logs" / "align.jsonl", log.text);
    out << "alignment: " << result.steps << " steps, final loss "
        << (result.losses.empty() ? 0.0 : result.losses.back()) << ", checkpoint " << ckpt_path.string() << '\n';
    return kExitOk;
}

int cmd_finetune(const Overrides& o, std::ostream& out, std::ostream& err) {
    const auto cfg = resolve_config(o);
    std::optional<checkpoint::Checkpoint> aligned;
    if (cfg.transfer == config::Transfer::Required) {
        if (cfg.alignment_checkpoint.empty()) {
            throw ConfigError("transfer=required but no alignment checkpoint given (--alignment-checkpoint)");
        }
        if (!fs::exists(cfg.alignment_checkpoint)) {
            throw ConfigError("alignment checkpoint not found: " + cfg.alignment_checkpoint);
        }
        aligned = checkpoint::load(cfg.alignment_checkpoint);
        if (aligned->stage != "alignment") {
            throw ConfigError("checkpoint " + cfg.alignment_checkpoint + " has stage '" + aligned->stage +
                              "', expected 'alignment'");
        }
    } else if (!cfg.alignment_checkpoint.empty()) {
        err << "warning: transfer=none, ignoring alignment checkpoint " << cfg.alignment_checkpoint << '\n';
    }

    const auto prepared = data::prepare(load_series(cfg), cfg.split);
    nlohmann::json rows = {{"event", "data"},
                           {"few_shot", cfg.split.few_shot_fraction},
                           {"train_rows_full", prepared.full_train_rows},
                           {"train_rows", prepared.train.length()},
                           {"val_rows", prepared.val.length()},
                           {"test_rows", prepared.test.length()}};
    err << "finetune: train rows " << prepared.train.length() << " of " << prepared.full_train_rows
        << " (few-shot " << cfg.split.few_shot_fraction << "), val rows " << prepared.val.length()
        << ", test rows " << prepared.test.length() << '\n';

    LogBuffer log;
    log.text = rows.dump() + "\n";
    const auto pipeline = pipeline_config(cfg);
    auto result = eval::multi_horizon_protocol(pipeline, prepared, cfg.horizons, aligned ? &*aligned : nullptr,
                                               log.observer());

    fs::create_directories(cfg.output_dir / "checkpoints");
    for (std::size_t i = 0; i < cfg.horizons.size(); ++i) {
        const auto path = cfg.output_dir / "checkpoints" / ("forecast_h" + std::to_string(cfg.horizons[i]) + ".ckpt");
        checkpoint::save(train::to_checkpoint(result.models[i], "forecast"), path);
    }
    write_text(cfg.output_dir / "reports" / "finetune.json", eval::to_json(result.report));
    write_text(cfg.output_dir / "logs" / "finetune.jsonl", log.text);
    out << eval::to_table(result.report);
    return kExitOk;
}

int cmd_evaluate(const Overrides& o, std::ostream& out, std::ostream& err) {
    const auto cfg = resolve_config(o);
    std::vector<fs::path> paths(o.checkpoints.begin(), o.checkpoints.end());
    if (paths.empty()) {
        for (Index h : cfg.horizons) {
            paths.push_back(cfg.output_dir / "checkpoints" / ("forecast_h" + std::to_string(h) + ".ckpt"));
        }
    }
    for (const auto& p : paths) {
        if (!fs::exists(p)) throw ConfigError("checkpoint not found: " + p.string());
    }
    const auto prepared = data::prepare(load_series(cfg), cfg.split);
    const data::Scaler* scaler = cfg.raw_scale_metrics ? &prepared.scaler : nullptr;

    eval::MetricsReport report;
    report.dataset = dataset_name(cfg);
    report.scale = cfg.raw_scale_metrics ? "raw" : "standardized";
    report.few_shot_fraction = cfg.split.few_shot_fraction;
    for (const auto& p : paths) {
        const auto ckpt = checkpoint::load(p);
        if (ckpt.stage == "alignment") {
            // Linear evaluation: frozen aligned model plus a fresh head per horizon.
            for (Index h : cfg.horizons) {
                const auto r = eval::linear_eval(ckpt, prepared, h, cfg.finetune, scaler);
                report.horizons.push_back({h, r.metrics.mse, r.metrics.mae, r.metrics.windows});
            }
            continue;
        }
        const auto model = train::model_from_checkpoint(ckpt);
        if (!model.forecast_head) throw CheckpointError(p.string() + " has no forecast head");
        const Index h = model.forecast_head->horizon();
        const auto windows = data::sliding_windows(prepared.test, model.config.input_len, h);
        const auto m = eval::evaluate_forecast(model, windows, scaler);
        err << "evaluated " << p.string() << " on " << m.windows << " test windows\n";
        report.horizons.push_back({h, m.mse, m.mae, m.windows});
    }
    report.finalize();
    out << eval::to_json(report) << '\n';
    return kExitOk;
}

nlohmann::json gradcheck_json(const train::GradCheckReport& r) {
    nlohmann::json j = {{"eps", r.eps},
                        {"threshold", r.threshold},
                        {"max_rel_error", r.max_rel_error},
                        {"passed", r.passed},
                        {"tensors", nlohmann::json::array()}};
    for (const auto& e : r.entries) {
        j["tensors"].push_back({{"name", e.name},
                                {"elements", e.elements},
                                {"max_rel_error", e.max_rel_error},
                                {"worst_index", e.worst_index},
                                {"analytic", e.analytic},
                                {"numeric", e.numeric}});
    }
    return j;
}

int cmd_gradcheck(const Overrides& o, std::ostream& out, std::ostream& err) {
    const auto cfg = resolve_config(o);
    if (!(o.eps > 0.0)) throw ConfigError("--eps must be positive");
    if (o.gradcheck_windows < 1) throw ConfigError("--windows must be >= 1");
    const auto prepared = data::prepare(load_series(cfg), cfg.split);
    const Index h = cfg.horizons.front();
    auto windows = data::sliding_windows(prepared.train, cfg.model.input_len, h);
    if (windows.empty()) throw DataError("training split too short for one gradcheck window");
    windows.resize(std::min<std::size_t>(windows.size(), static_cast<std::size_t>(o.gradcheck_windows)));
    std::vector<const data::Window*> batch;
    for (const auto& w : windows) batch.push_back(&w);

    // Fresh adapters have B = 0, which zeroes the gradient of A; perturb B and the RevIN affine so
    // every trainable tensor carries signal.
    auto model = initial_model(cfg);
    Rng rng(cfg.seed ^ 0x6C8E9CF570932BD5ULL);
    train::add_alignment_head(model, rng);
    train::add_forecast_head(model, h, prepared.train.channels(), rng);
    for (auto& block : model.backbone.blocks) {
        for (auto* lora : {&block.lora_q, &block.lora_k}) {
            if (lora->has_value()) fill_normal((*lora)->b.value, 0.05, rng);
        }
    }
    fill_uniform(model.revin->gamma.value, 0.5, rng);
    model.revin->gamma.value.array() += 1.0;
    fill_uniform(model.revin->beta.value, 0.5, rng);
    backbone::apply_freeze_policy(model.parameters(), cfg.policy);

    const auto align_report = train::gradient_check(
        model, [&](bool grad) { return train::alignment_loss(model, batch, grad); }, o.eps);
    const auto forecast_report = train::gradient_check(
        model, [&](bool grad) { return train::forecast_loss(model, batch, grad); }, o.eps);
    const bool passed = align_report.passed && forecast_report.passed;
    nlohmann::json j = {{"alignment", gradcheck_json(align_report)},
                        {"forecast", gradcheck_json(forecast_report)},
                        {"passed", passed}};
    out << j.dump(2) << '\n';
    if (!passed) {
        err << "gradcheck failed: max relative error "
            << std::max(align_report.max_rel_error, forecast_report.max_rel_error) << " >= "
            << align_report.threshold << '\n';
        return kExitRuntime;
    }
    return kExitOk;
}

int cmd_inspect(const Overrides& o, std::ostream& out) {
    if (o.checkpoints.size() != 1) throw ConfigError("inspect-checkpoint needs exactly one --checkpoint");
    const fs::path path = o.checkpoints.front();
    if (!fs::exists(path)) throw ConfigError("checkpoint not found: " + path.string());
    const auto ckpt = checkpoint::load(path);
    out << "checkpoint " << path.string() << "\nversion " << ckpt.version << "\nstage " << ckpt.stage << '\n';
    for (const auto& [k, v] : ckpt.meta) out << "meta " << k << " = " << v << '\n';
    std::size_t width = 4;
    for (const auto& t : ckpt.tensors) width = std::max(width, t.name.size());
    Index total = 0;
    Index trainable = 0;
    for (const auto& t : ckpt.tensors) {
        out << std::left << std::setw(static_cast<int>(width) + 2) << t.name << std::right << std::setw(6)
            << t.value.rows() << " x " << std::left << std::setw(6) << t.value.cols() << std::setw(14)
            << to_string(t.group) << (t.trainable ? "trainable" : "frozen") << '\n';
        total += t.value.size();
        if (t.trainable) trainable += t.value.size();
    }
    out << std::right << ckpt.tensors.size() << " tensors, " << total << " values, " << trainable
        << " trainable\n";
    return kExitOk;
}

}  // namespace

int run(const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
    CLI::App app{"Two-stage forecasting with a frozen transformer backbone"};
    app.require_subcommand(1);
    Overrides o;

    const auto add_common = [&](CLI::App* sub, bool config_required) {
        auto* opt = sub->add_option("--config", o.config_path, "JSON run config");
        if (config_required) opt->required()->check(CLI::ExistingFile);
        sub->add_option("--seed", o.seed, "run seed");
        sub->add_option("--few-shot", o.few_shot, "fraction of the training split to keep");
        sub->add_option("--data", o.data, "CSV data file (relative paths use TSALIGN_DATA_DIR)");
        sub->add_option("--output-dir", o.output_dir, "root for checkpoints/, reports/, logs/");
        sub->add_option("--horizons", o.horizons, "forecast horizons")->delimiter(',');
        sub->add_option("--metrics-scale", o.metrics_scale, "standardized or raw");
    };

    auto* synth = app.add_subcommand("synth", "write a synthetic series as CSV");
    add_common(synth, true);
    synth->add_option("--out", o.out, "output CSV path");
    auto* align = app.add_subcommand("align", "stage 1: next-patch alignment");
    add_common(align, true);
    auto* finetune = app.add_subcommand("finetune", "stage 2: per-horizon LP-FT");
    add_common(finetune, true);
    finetune->add_option("--alignment-checkpoint", o.alignment_checkpoint, "stage 1 checkpoint");
    finetune->add_option("--transfer", o.transfer, "required or none");
    auto* evaluate = app.add_subcommand("evaluate", "test metrics for forecast checkpoints");
    add_common(evaluate, true);
    evaluate->add_option("--checkpoint", o.checkpoints, "checkpoint to evaluate (repeatable)");
    auto* gradcheck = app.add_subcommand("gradcheck", "finite-difference gradient check");
    add_common(gradcheck, true);
    gradcheck->add_option("--eps", o.eps, "central difference step");
    gradcheck->add_option("--windows", o.gradcheck_windows, "windows in the check batch");
    auto* inspect = app.add_subcommand("inspect-checkpoint", "print a checkpoint manifest");
    add_common(inspect, false);
    inspect->add_option("--checkpoint", o.checkpoints, "checkpoint file")->required();

    std::vector<std::string> reversed(args.rbegin(), args.rend());
    try {
        app.parse(reversed);
    } catch (const CLI::CallForHelp&) {
        out << app.help();
        return kExitOk;
    } catch (const CLI::CallForAllHelp&) {
        out << app.help("", CLI::AppFormatMode::All);
        return kExitOk;
    } catch (const CLI::ParseError& e) {
        err << "error: " << e.what() << "\n" << "run 'tsalign --help' for usage\n";
        return kExitUsage;
    }

    try {
        if (synth->parsed()) return cmd_synth(o, out);
        if (align->parsed()) return cmd_align(o, out, err);
        if (finetune->parsed()) return cmd_finetune(o, out, err);
        if (evaluate->parsed()) return cmd_evaluate(o, out, err);
        if (gradcheck->parsed()) return cmd_gradcheck(o, out, err);
        return cmd_inspect(o, out);
    } catch (const ConfigError& e) {
        err << "config error: " << e.what() << '\n';
        return kExitUsage;
    } catch (const std::exception& e) {
        err << "error: " << e.what() << '\n';
        return kExitRuntime;
    }
}

}  // namespace tsalign::cli
