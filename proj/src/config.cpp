#include "tsalign/config.hpp"

#include <json.hpp>

#include <cstdlib>
#include <fstream>
#include <set>
#include <sstream>

namespace tsalign::config {

namespace {

using nlohmann::json;

void reject_unknown(const json& obj, const std::set<std::string>& allowed, const std::string& where) {
    if (!obj.is_object()) throw ConfigError(where + " must be a JSON object");
    for (const auto& [key, value] : obj.items()) {
        if (allowed.count(key) == 0) throw ConfigError("unknown key '" + key + "' in " + where);
    }
}

template <typename T>
void read(const json& obj, const char* key, T& out, const std::string& where) {
    if (!obj.contains(key) || obj.at(key).is_null()) return;
    try {
        out = obj.at(key).get<T>();
    } catch (const json::exception&) {
        throw ConfigError(where + "." + key + " has the wrong type");
    }
}

data::SynthSpec synth_from_json(const json& j) {
    reject_unknown(j, {"length", "channels", "seed", "start", "interval_seconds", "components"}, "synth");
    data::SynthSpec spec;
    read(j, "length", spec.length, "synth");
    read(j, "channels", spec.channels, "synth");
    read(j, "seed", spec.seed, "synth");
    read(j, "interval_seconds", spec.sampling_interval, "synth");
    std::string start = "2016-07-01 00:00:00";
    read(j, "start", start, "synth");
    try {
        spec.start_timestamp = data::parse_timestamp(start);
    } catch (const DataError& e) {
        throw ConfigError(std::string("synth.start: ") + e.what());
    }
    if (j.contains("components")) {
        for (const auto& c : j.at("components")) {
            reject_unknown(c, {"kind", "amplitude", "period_steps", "phase_steps", "slope", "sigma"},
                           "synth.components");
            data::SynthComponent comp;
            std::string kind = "sine";
            read(c, "kind", kind, "synth.components");
            if (kind == "sine") {
                comp.kind = data::SynthComponent::Kind::Sine;
            } else if (kind == "trend") {
                comp.kind = data::SynthComponent::Kind::Trend;
            } else if (kind == "noise") {
                comp.kind = data::SynthComponent::Kind::Noise;
            } else {
                throw ConfigError("unknown synth component kind '" + kind + "'");
            }
            read(c, "amplitude", comp.amplitude, "synth.components");
            read(c, "period_steps", comp.period_steps, "synth.components");
            read(c, "phase_steps", comp.phase_steps, "synth.components");
            read(c, "slope", comp.slope, "synth.components");
            read(c, "sigma", comp.sigma, "synth.components");
            spec.components.push_back(comp);
        }
    }
    try {
        spec.validate();
    } catch (const DataError& e) {
        throw ConfigError(std::string("synth: ") + e.what());
    }
    return spec;
}

json synth_to_json(const data::SynthSpec& spec) {
    json j;
    j["length"] = spec.length;
    j["channels"] = spec.channels;
    j["seed"] = spec.seed;
    j["start"] = data::format_timestamp(spec.start_timestamp);
    j["interval_seconds"] = spec.sampling_interval;
    j["components"] = json::array();
    for (const auto& c : spec.components) {
        json cj;
        switch (c.kind) {
            case data::SynthComponent::Kind::Sine:
                cj = {{"kind", "sine"}, {"amplitude", c.amplitude}, {"period_steps", c.period_steps},
                      {"phase_steps", c.phase_steps}};
                break;
            case data::SynthComponent::Kind::Trend: cj = {{"kind", "trend"}, {"slope", c.slope}}; break;
            case data::SynthComponent::Kind::Noise: cj = {{"kind", "noise"}, {"sigma", c.sigma}}; break;
        }
        j["components"].push_back(cj);
    }
    return j;
}

void read_train(const json& j, train::TrainConfig& cfg, const std::string& where) {
    reject_unknown(j,
                   {"learning_rate", "batch_size", "epochs", "lp_epochs", "ft_epochs", "max_steps", "optimizer",
                    "beta1", "beta2", "adam_eps", "early_stopping", "patience"},
                   where);
    read(j, "learning_rate", cfg.learning_rate, where);
    read(j, "batch_size", cfg.batch_size, where);
    read(j, "epochs", cfg.epochs, where);
    read(j, "lp_epochs", cfg.lp_epochs, where);
    read(j, "ft_epochs", cfg.ft_epochs, where);
    read(j, "max_steps", cfg.max_steps, where);
    read(j, "beta1", cfg.beta1, where);
    read(j, "beta2", cfg.beta2, where);
    read(j, "adam_eps", cfg.adam_eps, where);
    read(j, "early_stopping", cfg.early_stopping, where);
    read(j, "patience", cfg.patience, where);
    if (j.contains("optimizer")) cfg.optimizer = train::parse_optimizer(j.at("optimizer").get<std::string>());
}

json train_to_json(const train::TrainConfig& cfg) {
    return {{"learning_rate", cfg.learning_rate}, {"batch_size", cfg.batch_size},
            {"epochs", cfg.epochs},               {"lp_epochs", cfg.lp_epochs},
            {"ft_epochs", cfg.ft_epochs},         {"max_steps", cfg.max_steps},
            {"optimizer", std::string(train::to_string(cfg.optimizer))},
            {"beta1", cfg.beta1},                 {"beta2", cfg.beta2},
            {"adam_eps", cfg.adam_eps},           {"early_stopping", cfg.early_stopping},
            {"patience", cfg.patience}};
}

}  // namespace

std::filesystem::path RunConfig::resolved_data_path() const {
    std::filesystem::path p(data_path);
    if (p.is_relative()) {
        if (const char* root = std::getenv("TSALIGN_DATA_DIR"); root != nullptr && *root != '\0') {
            return std::filesystem::path(root) / p;
        }
    }
    return p;
}

void RunConfig::validate() const {
    if (data_path.empty() == !synth.has_value()) {
        throw ConfigError("exactly one of data.path and data.synth must be set");
    }
    if (synth) synth->validate();
    model.validate();
    if (horizons.empty()) throw ConfigError("at least one horizon is required");
    for (Index h : horizons) {
        if (h < 1) throw ConfigError("every horizon must be >= 1");
    }
    try {
        split.validate();
    } catch (const DataError& e) {
        throw ConfigError(e.what());
    }
    align.validate(false);
    finetune.validate(true);
    if (model.num_patches() < 2) throw ConfigError("alignment needs at least 2 patches per window");
}

void RunConfig::propagate_seed() {
    align.seed = seed;
    finetune.seed = seed;
}

RunConfig parse_run_config(std::string_view json_text) {
    json j;
    try {
        j = json::parse(json_text);
    } catch (const json::parse_error& e) {
        throw ConfigError(std::string("config is not valid JSON: ") + e.what());
    }
    reject_unknown(j,
                   {"data", "input_len", "patch_len", "stride", "horizons", "split", "few_shot", "backbone",
                    "encoder", "lora", "trainable", "align", "finetune", "transfer", "alignment_checkpoint",
                    "metrics_scale", "seed", "output_dir"},
                   "config");
    RunConfig cfg;
    // Desk-scale training defaults; the model defaults mirror the reference setup.
    cfg.align.epochs = 10;
    cfg.finetune.lp_epochs = 5;
    cfg.finetune.ft_epochs = 5;

    if (j.contains("data")) {
        const auto& d = j.at("data");
        reject_unknown(d, {"path", "synth", "name"}, "data");
        read(d, "path", cfg.data_path, "data");
        read(d, "name", cfg.dataset_name, "data");
        if (d.contains("synth") && !d.at("synth").is_null()) cfg.synth = synth_from_json(d.at("synth"));
    }
    read(j, "input_len", cfg.model.input_len, "config");
    read(j, "patch_len", cfg.model.patch_len, "config");
    read(j, "stride", cfg.model.stride, "config");
    read(j, "horizons", cfg.horizons, "config");
    if (j.contains("split")) {
        const auto& s = j.at("split");
        reject_unknown(s, {"train", "val", "test"}, "split");
        read(s, "train", cfg.split.train_ratio, "split");
        read(s, "val", cfg.split.val_ratio, "split");
        read(s, "test", cfg.split.test_ratio, "split");
    }
    read(j, "few_shot", cfg.split.few_shot_fraction, "config");
    if (j.contains("backbone")) {
        const auto& b = j.at("backbone");
        reject_unknown(b,
                       {"layers", "dim", "heads", "ffn_dim", "max_positions", "dropout", "init_std", "checkpoint",
                        "first_layers"},
                       "backbone");
        auto& bc = cfg.model.backbone;
        read(b, "layers", bc.layers, "backbone");
        read(b, "dim", bc.dim, "backbone");
        read(b, "heads", bc.heads, "backbone");
        bc.ffn_dim = 4 * bc.dim;
        read(b, "ffn_dim", bc.ffn_dim, "backbone");
        read(b, "max_positions", bc.max_positions, "backbone");
        read(b, "dropout", bc.dropout, "backbone");
        read(b, "init_std", cfg.model.init_std, "backbone");
        read(b, "checkpoint", cfg.backbone_checkpoint, "backbone");
        read(b, "first_layers", cfg.backbone_first_layers, "backbone");
    }
    if (j.contains("encoder")) {
        const auto& e = j.at("encoder");
        reject_unknown(e, {"kernel_width", "max_patches", "temporal", "pooling"}, "encoder");
        read(e, "kernel_width", cfg.model.kernel_width, "encoder");
        read(e, "max_patches", cfg.model.max_patches, "encoder");
        if (e.contains("temporal")) {
            cfg.model.temporal.attributes.clear();
            for (const auto& name : e.at("temporal")) {
                cfg.model.temporal.attributes.push_back(encode::parse_temporal_attribute(name.get<std::string>()));
            }
        }
        if (e.contains("pooling")) cfg.model.pooling = encode::parse_pooling(e.at("pooling").get<std::string>());
    }
    if (j.contains("lora")) {
        const auto& l = j.at("lora");
        reject_unknown(l, {"rank", "alpha"}, "lora");
        read(l, "rank", cfg.model.lora_rank, "lora");
        read(l, "alpha", cfg.model.lora_alpha, "lora");
    }
    if (j.contains("trainable")) {
        cfg.policy = backbone::FreezePolicy::from_names(j.at("trainable").get<std::vector<std::string>>());
    }
    if (j.contains("align")) read_train(j.at("align"), cfg.align, "align");
    if (j.contains("finetune")) read_train(j.at("finetune"), cfg.finetune, "finetune");
    if (j.contains("transfer")) {
        const auto t = j.at("transfer").get<std::string>();
        if (t == "required") {
            cfg.transfer = Transfer::Required;
        } else if (t == "none") {
            cfg.transfer = Transfer::None;
        } else {
            throw ConfigError("transfer must be 'required' or 'none'");
        }
    }
    read(j, "alignment_checkpoint", cfg.alignment_checkpoint, "config");
    if (j.contains("metrics_scale")) {
        const auto s = j.at("metrics_scale").get<std::string>();
        if (s != "standardized" && s != "raw") throw ConfigError("metrics_scale must be 'standardized' or 'raw'");
        cfg.raw_scale_metrics = s == "raw";
    }
    read(j, "seed", cfg.seed, "config");
    std::string out_dir;
    read(j, "output_dir", out_dir, "config");
    if (!out_dir.empty()) cfg.output_dir = out_dir;
    cfg.propagate_seed();
    return cfg;
}

RunConfig load_run_config(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) throw ConfigError("cannot open config file " + path.string());
    std::stringstream ss;
    ss << in.rdbuf();
    return parse_run_config(ss.str());
}

data::SynthSpec parse_synth_spec(std::string_view json_text) {
    try {
        return synth_from_json(json::parse(json_text));
    } catch (const json::parse_error& e) {
        throw ConfigError(std::string("synth spec is not valid JSON: ") + e.what());
    }
}

std::string to_json(const RunConfig& cfg) {
    json j;
    json d;
    if (!cfg.data_path.empty()) d["path"] = cfg.data_path;
    if (cfg.synth) d["synth"] = synth_to_json(*cfg.synth);
    if (!cfg.dataset_name.empty()) d["name"] = cfg.dataset_name;
    j["data"] = d;
    j["input_len"] = cfg.model.input_len;
    j["patch_len"] = cfg.model.patch_len;
    j["stride"] = cfg.model.stride;
    j["horizons"] = cfg.horizons;
    j["split"] = {{"train", cfg.split.train_ratio}, {"val", cfg.split.val_ratio}, {"test", cfg.split.test_ratio}};
    j["few_shot"] = cfg.split.few_shot_fraction;
    const auto& b = cfg.model.backbone;
    j["backbone"] = {{"layers", b.layers},   {"dim", b.dim},
                     {"heads", b.heads},     {"ffn_dim", b.ffn_dim},
                     {"max_positions", b.max_positions}, {"dropout", b.dropout},
                     {"init_std", cfg.model.init_std}};
    if (!cfg.backbone_checkpoint.empty()) {
        j["backbone"]["checkpoint"] = cfg.backbone_checkpoint;
        j["backbone"]["first_layers"] = cfg.backbone_first_layers;
    }
    std::vector<std::string> temporal;
    for (auto a : cfg.model.temporal.attributes) temporal.emplace_back(encode::to_string(a));
    j["encoder"] = {{"kernel_width", cfg.model.kernel_width},
                    {"max_patches", cfg.model.max_patches},
                    {"temporal", temporal},
                    {"pooling", std::string(encode::to_string(cfg.model.pooling))}};
    j["lora"] = {{"rank", cfg.model.lora_rank}, {"alpha", cfg.model.lora_alpha}};
    std::vector<std::string> groups;
    for (auto g : cfg.policy.trainable) groups.emplace_back(to_string(g));
    j["trainable"] = groups;
    j["align"] = train_to_json(cfg.align);
    j["finetune"] = train_to_json(cfg.finetune);
    j["transfer"] = cfg.transfer == Transfer::Required ? "required" : "none";
    if (!cfg.alignment_checkpoint.empty()) j["alignment_checkpoint"] = cfg.alignment_checkpoint;
    j["metrics_scale"] = cfg.raw_scale_metrics ? "raw" : "standardized";
    j["seed"] = cfg.seed;
    j["output_dir"] = cfg.output_dir.string();
    return j.dump(2);
}

}  // namespace tsalign::config
