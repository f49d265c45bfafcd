#pragma once

#include "tsalign/common.hpp"
#include "tsalign/transform.hpp"

#include <array>
#include <span>
#include <string_view>
#include <vector>

namespace tsalign::encode {

enum class TemporalAttribute { MinuteOfHour, HourOfDay, DayOfWeek, DayOfMonth, MonthOfYear };

int cardinality(TemporalAttribute attr);
std::string_view to_string(TemporalAttribute attr);
TemporalAttribute parse_temporal_attribute(std::string_view name);

/// Ordered attribute list; one lookup table per entry.
struct TemporalAttributeSpec {
    std::vector<TemporalAttribute> attributes;

    static TemporalAttributeSpec all();
    std::size_t size() const { return attributes.size(); }
};

enum class Pooling { SelectFirst, Mean };

std::string_view to_string(Pooling pooling);
Pooling parse_pooling(std::string_view name);

struct EncoderConfig {
    Index patch_len = 16;
    Index dim = 768;
    Index kernel_width = 3;
    Index max_patches = 256;
    TemporalAttributeSpec temporal = TemporalAttributeSpec::all();
    Pooling pooling = Pooling::SelectFirst;

    void validate() const;
};

struct EncoderParams {
    EncoderConfig config;
    Param conv_weight;  // D x (P * k), column c * k + tap
    Param conv_bias;    // 1 x D
    Param pos_table;    // max_patches x D
    std::vector<Param> temporal_tables;  // card_a x D, aligned with config.temporal

    EncoderParams() = default;
    explicit EncoderParams(const EncoderConfig& config);

    void init(Rng& rng);
    ParamList parameters();
    std::vector<const Param*> parameters() const;
};

/// Per-timestamp attribute indices: result[t][a] for attribute a of spec.
std::vector<std::vector<int>> extract_calendar(std::span<const Timestamp> timestamps,
                                               const TemporalAttributeSpec& spec);

Matrix token_encode(const transform::PatchGrid& grid, const EncoderParams& params);
Matrix positional_embed(std::span<const Index> patch_indices, const EncoderParams& params);
Matrix temporal_embed(const transform::PatchGrid& grid, const TemporalAttributeSpec& spec,
                      const EncoderParams& params, Pooling pooling = Pooling::SelectFirst);
Matrix combine_embeddings(const Matrix& token, const Matrix& pos, const Matrix& temp);

/// Full embedding e = token + positional + temporal for one channel's grid.
Matrix encode(const transform::PatchGrid& grid, const EncoderParams& params);

// Backward passes accumulate into the grads of trainable parameters only.
// token_encode_backward and encode_backward return d loss / d patches.
Matrix token_encode_backward(const transform::PatchGrid& grid, const Matrix& d_out, EncoderParams& params);
void positional_embed_backward(std::span<const Index> patch_indices, const Matrix& d_out, EncoderParams& params);
void temporal_embed_backward(const transform::PatchGrid& grid, const TemporalAttributeSpec& spec,
                             const Matrix& d_out, EncoderParams& params, Pooling pooling = Pooling::SelectFirst);
Matrix encode_backward(const transform::PatchGrid& grid, const Matrix& d_embedding, EncoderParams& params);

}  // namespace tsalign::encode
