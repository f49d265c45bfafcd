#pragma once

#include "tsalign/common.hpp"

#include <optional>
#include <set>
#include <string>
#include <vector>

namespace tsalign::backbone {

struct BackboneConfig {
    Index layers = 6;
    Index dim = 768;
    Index heads = 12;
    Index ffn_dim = 3072;
    Index max_positions = 1024;
    double dropout = 0.0;

    void validate() const;
};

/// Low-rank update scaling * B * A added to a D x D projection.
struct LoRAAdapter {
    Param a;  // r x D
    Param b;  // D x r, zero at attachment
    double scaling = 1.0;

    Matrix delta() const { return scaling * b.value * a.value; }
};

struct TransformerBlockParams {
    Param ln1_gamma, ln1_beta;
    Param w_q, w_k, w_v, w_o;  // D x D, y = x W^T
    Param ln2_gamma, ln2_beta;
    Param ffn_w1, ffn_b1;  // ffn_dim x D, 1 x ffn_dim
    Param ffn_w2, ffn_b2;  // D x ffn_dim, 1 x D
    std::optional<LoRAAdapter> lora_q;
    std::optional<LoRAAdapter> lora_k;

    TransformerBlockParams(Index index, const BackboneConfig& config);
    ParamList parameters();
};

struct BackboneState {
    BackboneConfig config;
    std::vector<TransformerBlockParams> blocks;
    Param lnf_gamma, lnf_beta;
    Index lora_rank = 0;
    double lora_alpha = 0.0;

    BackboneState() = default;
    explicit BackboneState(const BackboneConfig& config);

    bool has_lora() const { return lora_rank > 0; }
    ParamList parameters();
    std::vector<const Param*> parameters() const;
};

/// GPT-2 style initialization: N(0, init_std) weights, zero biases, unit layer-norm gains.
BackboneState make_backbone(const BackboneConfig& config, Rng& rng, double init_std = 0.02);

/// Adds Q and K adapters to every block. A ~ U(-1/r, 1/r), B = 0.
void attach_lora(BackboneState& state, Index rank, double alpha, Rng& rng);

/// Replaces each adapted projection by W + scaling * B * A and drops the adapters.
BackboneState merge_lora(const BackboneState& state);

struct FreezePolicy {
    std::set<ParamGroup> trainable;

    /// Layer-norm affines, LoRA, encoders, heads and RevIN.
    static FreezePolicy defaults();
    static FreezePolicy all_trainable();
    static FreezePolicy none() { return {}; }
    static FreezePolicy from_names(const std::vector<std::string>& names);

    bool allows(ParamGroup g) const { return trainable.count(g) > 0; }
};

void apply_freeze_policy(const ParamList& params, const FreezePolicy& policy);
void apply_freeze_policy(BackboneState& state, const FreezePolicy& policy);

/// Trainable element count over total element count of the backbone (adapters included).
double trainable_fraction(BackboneState& state);

// Forward intermediates needed by backward.
struct LayerNormCache {
    Matrix xhat;
    Vector rstd;
};

struct BlockCache {
    Matrix x;
    LayerNormCache ln1;
    Matrix h;  // ln1 output
    Matrix q, k, v;
    Matrix hq_a, hk_a;          // h A^T for LoRA
    std::vector<Matrix> probs;  // one T x T attention matrix per head
    Matrix attn_concat;
    Matrix attn_mask;  // dropout keep mask (scaled), empty when unused
    Matrix x1;
    LayerNormCache ln2;
    Matrix h2;
    Matrix u, g;
    Matrix ffn_mask;
};

struct BackboneCache {
    std::vector<BlockCache> blocks;
    LayerNormCache lnf;
};

Matrix layer_norm(const Matrix& x, const RowVector& gamma, const RowVector& beta, LayerNormCache* cache = nullptr);

/// Causal pre-LN stack followed by the final layer norm. Pass a cache to enable backward;
/// pass an rng to enable dropout (training mode).
Matrix forward(const BackboneState& state, const Matrix& e, BackboneCache* cache = nullptr,
               Rng* dropout_rng = nullptr);

/// Accumulates grads of trainable parameters and returns d loss / d e.
Matrix backward(BackboneState& state, const BackboneCache& cache, const Matrix& dz);

}  // namespace tsalign::backbone
