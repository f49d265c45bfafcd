#pragma once

#include "tsalign/backbone.hpp"
#include "tsalign/checkpoint.hpp"
#include "tsalign/common.hpp"
#include "tsalign/encode.hpp"
#include "tsalign/transform.hpp"

#include <optional>

namespace tsalign::train {

struct ModelConfig {
    Index input_len = 512;
    Index patch_len = 16;
    Index stride = 8;
    backbone::BackboneConfig backbone;
    Index kernel_width = 3;
    Index max_patches = 256;
    encode::TemporalAttributeSpec temporal = encode::TemporalAttributeSpec::all();
    encode::Pooling pooling = encode::Pooling::SelectFirst;
    Index lora_rank = 4;  // 0 disables adapters
    double lora_alpha = 8.0;
    double init_std = 0.02;

    Index num_patches() const;
    encode::EncoderConfig encoder_config() const;
    void validate() const;
};

/// Maps z (T_p x D) back to patches: p_hat = z W^T.
struct AlignmentHead {
    Param weight;  // P x D

    AlignmentHead() = default;
    AlignmentHead(Index patch_len, Index dim);
};

/// Maps flattened z (T_p * D) to one horizon: y = W flatten(z).
struct ForecastHead {
    Param weight;  // T_out x (T_p * D)

    ForecastHead() = default;
    ForecastHead(Index horizon, Index flat_dim);
    Index horizon() const { return weight.value.rows(); }
};

struct Model {
    ModelConfig config;
    encode::EncoderParams encoder;
    backbone::BackboneState backbone;
    std::optional<AlignmentHead> align_head;
    std::optional<ForecastHead> forecast_head;
    std::optional<transform::RevINParams> revin;

    ParamList parameters();
    std::vector<const Param*> parameters() const;
    void zero_grad();
};

/// Randomly initialized encoders and backbone; adapters attached when config.lora_rank > 0.
Model make_model(const ModelConfig& config, std::uint64_t seed);

/// Replaces the backbone blocks with those stored in a checkpoint (first_layers of them).
void load_pretrained_backbone(Model& model, const checkpoint::Checkpoint& ckpt, Index first_layers,
                              std::uint64_t seed);

void add_alignment_head(Model& model, Rng& rng);
void add_forecast_head(Model& model, Index horizon, Index channels, Rng& rng);

checkpoint::Checkpoint to_checkpoint(const Model& model, const std::string& stage);
Model model_from_checkpoint(const checkpoint::Checkpoint& ckpt);

}  // namespace tsalign::train
