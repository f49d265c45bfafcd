#include "tsalign/model.hpp"

#include <cmath>
#include <sstream>

namespace tsalign::train {

namespace {

std::string temporal_to_meta(const encode::TemporalAttributeSpec& spec) {
    if (spec.size() == 0) return "none";
    std::string out;
    for (auto attr : spec.attributes) {
        if (!out.empty()) out += ',';
        out += encode::to_string(attr);
    }
    return out;
}

encode::TemporalAttributeSpec temporal_from_meta(const std::string& text) {
    encode::TemporalAttributeSpec spec;
    if (text == "none") return spec;
    std::istringstream in(text);
    std::string item;
    while (std::getline(in, item, ',')) spec.attributes.push_back(encode::parse_temporal_attribute(item));
    return spec;
}

}  // namespace

Index ModelConfig::num_patches() const { return transform::num_patches(input_len, patch_len, stride); }

encode::EncoderConfig ModelConfig::encoder_config() const {
    encode::EncoderConfig cfg;
    cfg.patch_len = patch_len;
    cfg.dim = backbone.dim;
    cfg.kernel_width = kernel_width;
    cfg.max_patches = max_patches;
    cfg.temporal = temporal;
    cfg.pooling = pooling;
    return cfg;
}

void ModelConfig::validate() const {
    if (patch_len < 1 || stride < 1) throw ConfigError("patch length and stride must be >= 1");
    if (input_len < patch_len) {
        throw ConfigError("input length " + std::to_string(input_len) + " must be >= patch length " +
                          std::to_string(patch_len));
    }
    backbone.validate();
    encoder_config().validate();
    const Index tp = num_patches();
    if (tp > max_patches) {
        throw ConfigError(std::to_string(tp) + " patches exceed the positional table of " +
                          std::to_string(max_patches));
    }
    if (tp > backbone.max_positions) {
        throw ConfigError(std::to_string(tp) + " patches exceed backbone max_positions " +
                          std::to_string(backbone.max_positions));
    }
    if (lora_rank < 0) throw ConfigError("LoRA rank must be >= 0");
    if (!(init_std > 0.0)) throw ConfigError("init_std must be positive");
}

AlignmentHead::AlignmentHead(Index patch_len, Index dim) : weight("head.align", ParamGroup::Head, patch_len, dim) {}

ForecastHead::ForecastHead(Index horizon, Index flat_dim)
    : weight("head.forecast", ParamGroup::Head, horizon, flat_dim) {}

ParamList Model::parameters() {
    ParamList out = encoder.parameters();
    const auto bb = backbone.parameters();
    out.insert(out.end(), bb.begin(), bb.end());
    if (align_head) out.push_back(&align_head->weight);
    if (forecast_head) out.push_back(&forecast_head->weight);
    if (revin) {
        out.push_back(&revin->gamma);
        out.push_back(&revin->beta);
    }
    return out;
}

std::vector<const Param*> Model::parameters() const {
    const auto list = const_cast<Model*>(this)->parameters();
    return {list.begin(), list.end()};
}

void Model::zero_grad() {
    for (Param* p : parameters()) p->zero_grad();
}

Model make_model(const ModelConfig& config, std::uint64_t seed) {
    config.validate();
    Rng rng(seed);
    Model model;
    model.config = config;
    model.encoder = encode::EncoderParams(config.encoder_config());
    model.encoder.init(rng);
    model.backbone = backbone::make_backbone(config.backbone, rng, config.init_std);
    if (config.lora_rank > 0) backbone::attach_lora(model.backbone, config.lora_rank, config.lora_alpha, rng);
    return model;
}

void load_pretrained_backbone(Model& model, const checkpoint::Checkpoint& ckpt, Index first_layers,
                              std::uint64_t seed) {
    auto state = checkpoint::read_backbone(ckpt, first_layers);
    if (state.config.dim != model.config.backbone.dim) {
        throw CheckpointError("pretrained backbone dim " + std::to_string(state.config.dim) +
                              " does not match model dim " + std::to_string(model.config.backbone.dim));
    }
    if (!state.has_lora() && model.config.lora_rank > 0) {
        Rng rng(seed ^ 0x5bd1e995ULL);
        backbone::attach_lora(state, model.config.lora_rank, model.config.lora_alpha, rng);
    }
    model.config.backbone = state.config;
    model.backbone = std::move(state);
}

void add_alignment_head(Model& model, Rng& rng) {
    AlignmentHead head(model.config.patch_len, model.config.backbone.dim);
    fill_uniform(head.weight.value, 1.0 / std::sqrt(static_cast<double>(model.config.backbone.dim)), rng);
    model.align_head = std::move(head);
}

void add_forecast_head(Model& model, Index horizon, Index channels, Rng& rng) {
    if (horizon < 1) throw ConfigError("horizon must be >= 1");
    if (channels < 1) throw ConfigError("channel count must be >= 1");
    const Index flat = model.config.num_patches() * model.config.backbone.dim;
    ForecastHead head(horizon, flat);
    fill_uniform(head.weight.value, 1.0 / std::sqrt(static_cast<double>(flat)), rng);
    model.forecast_head = std::move(head);
    model.revin = transform::RevINParams(channels);
}

checkpoint::Checkpoint to_checkpoint(const Model& model, const std::string& stage) {
    checkpoint::Checkpoint ckpt;
    ckpt.stage = stage;
    const auto& c = model.config;
    ckpt.set_meta("model.input_len", c.input_len);
    ckpt.set_meta("model.patch_len", c.patch_len);
    ckpt.set_meta("model.stride", c.stride);
    ckpt.set_meta("model.kernel_width", c.kernel_width);
    ckpt.set_meta("model.max_patches", c.max_patches);
    ckpt.set_meta("model.temporal", temporal_to_meta(c.temporal));
    ckpt.set_meta("model.pooling", std::string(encode::to_string(c.pooling)));
    ckpt.set_meta("model.init_std", c.init_std);
    ckpt.set_meta("model.lora_rank", c.lora_rank);
    ckpt.set_meta("model.lora_alpha", c.lora_alpha);
    if (model.forecast_head) {
        ckpt.set_meta("forecast.horizon", model.forecast_head->horizon());
        ckpt.set_meta("forecast.channels", model.revin->channels());
    }
    for (const Param* p : model.encoder.parameters()) ckpt.add(*p);
    checkpoint::write_backbone(model.backbone, ckpt);
    if (model.align_head) ckpt.add(model.align_head->weight);
    if (model.forecast_head) ckpt.add(model.forecast_head->weight);
    if (model.revin) {
        ckpt.add(model.revin->gamma);
        ckpt.add(model.revin->beta);
    }
    return ckpt;
}

Model model_from_checkpoint(const checkpoint::Checkpoint& ckpt) {
    ModelConfig c;
    c.input_len = ckpt.meta_int("model.input_len");
    c.patch_len = ckpt.meta_int("model.patch_len");
    c.stride = ckpt.meta_int("model.stride");
    c.kernel_width = ckpt.meta_int("model.kernel_width");
    c.max_patches = ckpt.meta_int("model.max_patches");
    c.temporal = temporal_from_meta(ckpt.meta_value("model.temporal"));
    c.pooling = encode::parse_pooling(ckpt.meta_value("model.pooling"));
    c.init_std = ckpt.meta_double("model.init_std");
    c.lora_rank = ckpt.meta_int("model.lora_rank");
    c.lora_alpha = ckpt.meta_double("model.lora_alpha");

    Model model;
    model.backbone = checkpoint::read_backbone(ckpt, -1);
    c.backbone = model.backbone.config;
    c.validate();
    model.config = c;
    model.encoder = encode::EncoderParams(c.encoder_config());
    for (Param* p : model.encoder.parameters()) checkpoint::restore(*p, ckpt);
    if (ckpt.find("head.align") != nullptr) {
        model.align_head = AlignmentHead(c.patch_len, c.backbone.dim);
        checkpoint::restore(model.align_head->weight, ckpt);
    }
    if (ckpt.find("head.forecast") != nullptr) {
        const Index horizon = ckpt.meta_int("forecast.horizon");
        const Index channels = ckpt.meta_int("forecast.channels");
        model.forecast_head = ForecastHead(horizon, c.num_patches() * c.backbone.dim);
        checkpoint::restore(model.forecast_head->weight, ckpt);
        model.revin = transform::RevINParams(channels);
        checkpoint::restore(model.revin->gamma, ckpt);
        checkpoint::restore(model.revin->beta, ckpt);
    }
    return model;
}

}  // namespace tsalign::train
