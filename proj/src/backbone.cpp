#include "tsalign/backbone.hpp"

#include <cmath>
#include <limits>

namespace tsalign::backbone {

namespace {

constexpr double kLayerNormEps = 1e-5;

std::string block_prefix(Index i) { return "blocks." + std::to_string(i) + "."; }

double gelu(double x) {
    constexpr double c = 0.7978845608028654;  // sqrt(2/pi)
    return 0.5 * x * (1.0 + std::tanh(c * (x + 0.044715 * x * x * x)));
}

double gelu_grad(double x) {
    constexpr double c = 0.7978845608028654;
    const double inner = c * (x + 0.044715 * x * x * x);
    const double t = std::tanh(inner);
    const double d_inner = c * (1.0 + 3.0 * 0.044715 * x * x);
    return 0.5 * (1.0 + t) + 0.5 * x * (1.0 - t * t) * d_inner;
}

Matrix layer_norm_backward(const Matrix& dy, const LayerNormCache& cache, Param& gamma, Param& beta) {
    if (gamma.trainable) gamma.grad += (dy.array() * cache.xhat.array()).colwise().sum().matrix();
    if (beta.trainable) beta.grad += dy.colwise().sum();
    const Matrix dxhat = dy.array().rowwise() * gamma.value.row(0).array();
    const double n = static_cast<double>(dy.cols());
    Matrix dx(dy.rows(), dy.cols());
    for (Index i = 0; i < dy.rows(); ++i) {
        const double mean_d = dxhat.row(i).sum() / n;
        const double mean_dx = dxhat.row(i).dot(cache.xhat.row(i)) / n;
        dx.row(i) = cache.rstd(i) * (dxhat.row(i).array() - mean_d - cache.xhat.row(i).array() * mean_dx);
    }
    return dx;
}

Matrix dropout_mask(Index rows, Index cols, double rate, Rng& rng) {
    std::bernoulli_distribution keep(1.0 - rate);
    Matrix mask(rows, cols);
    const double scale = 1.0 / (1.0 - rate);
    for (Index i = 0; i < mask.size(); ++i) mask.data()[i] = keep(rng) ? scale : 0.0;
    return mask;
}

void add_weight_grad(Param& w, const Matrix& d_out, const Matrix& input) {
    if (w.trainable) w.grad.noalias() += d_out.transpose() * input;
}

void add_bias_grad(Param& b, const Matrix& d_out) {
    if (b.trainable) b.grad += d_out.colwise().sum();
}

// y = x W^T [+ s (x A^T) B^T]; returns y and stores x A^T.
Matrix project(const Matrix& x, const Param& w, const std::optional<LoRAAdapter>& lora, Matrix* xa) {
    Matrix y = x * w.value.transpose();
    if (lora) {
        Matrix xa_local = x * lora->a.value.transpose();
        y.noalias() += lora->scaling * (xa_local * lora->b.value.transpose());
        if (xa != nullptr) *xa = std::move(xa_local);
    }
    return y;
}

// Accumulates grads for a projection and returns d x.
Matrix project_backward(const Matrix& dy, const Matrix& x, Param& w, std::optional<LoRAAdapter>& lora,
                        const Matrix& xa) {
    add_weight_grad(w, dy, x);
    Matrix dx = dy * w.value;
    if (lora) {
        if (lora->b.trainable) lora->b.grad.noalias() += lora->scaling * (dy.transpose() * xa);
        const Matrix dxa = lora->scaling * (dy * lora->b.value);
        if (lora->a.trainable) lora->a.grad.noalias() += dxa.transpose() * x;
        dx.noalias() += dxa * lora->a.value;
    }
    return dx;
}

}  // namespace

void BackboneConfig::validate() const {
    if (layers < 0) throw ConfigError("backbone layer count must be >= 0");
    if (dim < 1 || heads < 1) throw ConfigError("backbone dim and heads must be >= 1");
    if (dim % heads != 0) {
        throw ConfigError("backbone dim " + std::to_string(dim) + " is not divisible by heads " +
                          std::to_string(heads));
    }
    if (ffn_dim < 1) throw ConfigError("ffn_dim must be >= 1");
    if (max_positions < 1) throw ConfigError("max_positions must be >= 1");
    if (!(dropout >= 0.0 && dropout < 1.0)) throw ConfigError("dropout must lie in [0, 1)");
}

TransformerBlockParams::TransformerBlockParams(Index index, const BackboneConfig& cfg)
    : ln1_gamma(block_prefix(index) + "ln1.gamma", ParamGroup::LayerNorm, 1, cfg.dim),
      ln1_beta(block_prefix(index) + "ln1.beta", ParamGroup::LayerNorm, 1, cfg.dim),
      w_q(block_prefix(index) + "attn.w_q", ParamGroup::Attention, cfg.dim, cfg.dim),
      w_k(block_prefix(index) + "attn.w_k", ParamGroup::Attention, cfg.dim, cfg.dim),
      w_v(block_prefix(index) + "attn.w_v", ParamGroup::Attention, cfg.dim, cfg.dim),
      w_o(block_prefix(index) + "attn.w_o", ParamGroup::Attention, cfg.dim, cfg.dim),
      ln2_gamma(block_prefix(index) + "ln2.gamma", ParamGroup::LayerNorm, 1, cfg.dim),
      ln2_beta(block_prefix(index) + "ln2.beta", ParamGroup::LayerNorm, 1, cfg.dim),
      ffn_w1(block_prefix(index) + "ffn.w1", ParamGroup::FeedForward, cfg.ffn_dim, cfg.dim),
      ffn_b1(block_prefix(index) + "ffn.b1", ParamGroup::FeedForward, 1, cfg.ffn_dim),
      ffn_w2(block_prefix(index) + "ffn.w2", ParamGroup::FeedForward, cfg.dim, cfg.ffn_dim),
      ffn_b2(block_prefix(index) + "ffn.b2", ParamGroup::FeedForward, 1, cfg.dim) {
    ln1_gamma.value.setOnes();
    ln2_gamma.value.setOnes();
}

ParamList TransformerBlockParams::parameters() {
    ParamList out{&ln1_gamma, &ln1_beta, &w_q, &w_k, &w_v, &w_o, &ln2_gamma, &ln2_beta,
                  &ffn_w1, &ffn_b1, &ffn_w2, &ffn_b2};
    if (lora_q) {
        out.push_back(&lora_q->a);
        out.push_back(&lora_q->b);
    }
    if (lora_k) {
        out.push_back(&lora_k->a);
        out.push_back(&lora_k->b);
    }
    return out;
}

BackboneState::BackboneState(const BackboneConfig& cfg)
    : config(cfg),
      lnf_gamma("ln_f.gamma", ParamGroup::LayerNorm, 1, cfg.dim),
      lnf_beta("ln_f.beta", ParamGroup::LayerNorm, 1, cfg.dim) {
    cfg.validate();
    lnf_gamma.value.setOnes();
    blocks.reserve(static_cast<std::size_t>(cfg.layers));
    for (Index i = 0; i < cfg.layers; ++i) blocks.emplace_back(i, cfg);
}

ParamList BackboneState::parameters() {
    ParamList out;
    for (auto& block : blocks) {
        auto p = block.parameters();
        out.insert(out.end(), p.begin(), p.end());
    }
    out.push_back(&lnf_gamma);
    out.push_back(&lnf_beta);
    return out;
}

std::vector<const Param*> BackboneState::parameters() const {
    const auto list = const_cast<BackboneState*>(this)->parameters();
    return {list.begin(), list.end()};
}

BackboneState make_backbone(const BackboneConfig& config, Rng& rng, double init_std) {
    BackboneState state(config);
    for (auto& block : state.blocks) {
        for (Param* w : {&block.w_q, &block.w_k, &block.w_v, &block.w_o, &block.ffn_w1, &block.ffn_w2}) {
            fill_normal(w->value, init_std, rng);
        }
    }
    return state;
}

void attach_lora(BackboneState& state, Index rank, double alpha, Rng& rng) {
    if (rank < 1) throw ConfigError("LoRA rank must be >= 1, got " + std::to_string(rank));
    if (state.has_lora()) throw ConfigError("LoRA adapters are already attached");
    const Index d = state.config.dim;
    const double scaling = alpha / static_cast<double>(rank);
    Index i = 0;
    for (auto& block : state.blocks) {
        for (auto* slot : {&block.lora_q, &block.lora_k}) {
            const std::string which = slot == &block.lora_q ? "lora_q" : "lora_k";
            LoRAAdapter adapter{Param(block_prefix(i) + "attn." + which + ".a", ParamGroup::LoRA, rank, d),
                                Param(block_prefix(i) + "attn." + which + ".b", ParamGroup::LoRA, d, rank),
                                scaling};
            fill_uniform(adapter.a.value, 1.0 / static_cast<double>(rank), rng);
            adapter.a.trainable = true;
            adapter.b.trainable = true;
            *slot = std::move(adapter);
        }
        ++i;
    }
    state.lora_rank = rank;
    state.lora_alpha = alpha;
}

BackboneState merge_lora(const BackboneState& state) {
    BackboneState merged = state;
    for (auto& block : merged.blocks) {
        if (block.lora_q) block.w_q.value += block.lora_q->delta();
        if (block.lora_k) block.w_k.value += block.lora_k->delta();
        block.lora_q.reset();
        block.lora_k.reset();
    }
    merged.lora_rank = 0;
    merged.lora_alpha = 0.0;
    return merged;
}

FreezePolicy FreezePolicy::defaults() {
    return {{ParamGroup::LayerNorm, ParamGroup::LoRA, ParamGroup::Encoder, ParamGroup::Head, ParamGroup::RevIN}};
}

FreezePolicy FreezePolicy::all_trainable() {
    return {{ParamGroup::LayerNorm, ParamGroup::LoRA, ParamGroup::Encoder, ParamGroup::Head, ParamGroup::RevIN,
             ParamGroup::Attention, ParamGroup::FeedForward}};
}

FreezePolicy FreezePolicy::from_names(const std::vector<std::string>& names) {
    FreezePolicy policy;
    for (const auto& name : names) {
        if (name == "all") return all_trainable();
        policy.trainable.insert(parse_param_group(name));
    }
    return policy;
}

void apply_freeze_policy(const ParamList& params, const FreezePolicy& policy) {
    for (Param* p : params) {
        p->trainable = policy.allows(p->group);
        p->zero_grad();
    }
}

void apply_freeze_policy(BackboneState& state, const FreezePolicy& policy) {
    apply_freeze_policy(state.parameters(), policy);
}

double trainable_fraction(BackboneState& state) {
    Index trainable = 0;
    Index total = 0;
    for (const Param* p : state.parameters()) {
        total += p->size();
        if (p->trainable) trainable += p->size();
    }
    return total == 0 ? 0.0 : static_cast<double>(trainable) / static_cast<double>(total);
}

Matrix layer_norm(const Matrix& x, const RowVector& gamma, const RowVector& beta, LayerNormCache* cache) {
    const Index rows = x.rows();
    Matrix xhat(rows, x.cols());
    Vector rstd(rows);
    for (Index i = 0; i < rows; ++i) {
        const double mean = x.row(i).mean();
        const double var = (x.row(i).array() - mean).square().mean();
        rstd(i) = 1.0 / std::sqrt(var + kLayerNormEps);
        xhat.row(i) = (x.row(i).array() - mean) * rstd(i);
    }
    Matrix y = (xhat.array().rowwise() * gamma.array()).rowwise() + beta.array();
    if (cache != nullptr) {
        cache->xhat = std::move(xhat);
        cache->rstd = std::move(rstd);
    }
    return y;
}

Matrix forward(const BackboneState& state, const Matrix& e, BackboneCache* cache, Rng* dropout_rng) {
    const auto& cfg = state.config;
    if (e.cols() != cfg.dim) {
        throw ShapeError("backbone expects embeddings of dim " + std::to_string(cfg.dim) + ", got " +
                         std::to_string(e.cols()));
    }
    if (e.rows() > cfg.max_positions) {
        throw ShapeError("sequence of " + std::to_string(e.rows()) + " tokens exceeds max_positions " +
                         std::to_string(cfg.max_positions));
    }
    const Index t = e.rows();
    const Index head_dim = cfg.dim / cfg.heads;
    const double inv_sqrt = 1.0 / std::sqrt(static_cast<double>(head_dim));
    const bool use_dropout = dropout_rng != nullptr && cfg.dropout > 0.0;
    if (cache != nullptr) cache->blocks.assign(state.blocks.size(), BlockCache{});

    Matrix x = e;
    for (std::size_t b = 0; b < state.blocks.size(); ++b) {
        const auto& block = state.blocks[b];
        BlockCache local;
        BlockCache& c = cache != nullptr ? cache->blocks[b] : local;
        c.x = x;
        c.h = layer_norm(x, block.ln1_gamma.value.row(0), block.ln1_beta.value.row(0), &c.ln1);
        c.q = project(c.h, block.w_q, block.lora_q, &c.hq_a);
        c.k = project(c.h, block.w_k, block.lora_k, &c.hk_a);
        c.v = c.h * block.w_v.value.transpose();

        c.attn_concat.resize(t, cfg.dim);
        c.probs.resize(static_cast<std::size_t>(cfg.heads));
        for (Index hd = 0; hd < cfg.heads; ++hd) {
            const auto qh = c.q.middleCols(hd * head_dim, head_dim);
            const auto kh = c.k.middleCols(hd * head_dim, head_dim);
            const auto vh = c.v.middleCols(hd * head_dim, head_dim);
            Matrix scores = (qh * kh.transpose()) * inv_sqrt;
            Matrix& probs = c.probs[static_cast<std::size_t>(hd)];
            probs.setZero(t, t);
            for (Index i = 0; i < t; ++i) {
                // Causal: row i attends to columns 0..i only.
                const double mx = scores.row(i).head(i + 1).maxCoeff();
                double sum = 0.0;
                for (Index j = 0; j <= i; ++j) {
                    probs(i, j) = std::exp(scores(i, j) - mx);
                    sum += probs(i, j);
                }
                probs.row(i).head(i + 1) /= sum;
            }
            c.attn_concat.middleCols(hd * head_dim, head_dim).noalias() = probs * vh;
        }
        Matrix attn_out = c.attn_concat * block.w_o.value.transpose();
        if (use_dropout) {
            c.attn_mask = dropout_mask(t, cfg.dim, cfg.dropout, *dropout_rng);
            attn_out.array() *= c.attn_mask.array();
        }
        c.x1 = x + attn_out;

        c.h2 = layer_norm(c.x1, block.ln2_gamma.value.row(0), block.ln2_beta.value.row(0), &c.ln2);
        c.u = (c.h2 * block.ffn_w1.value.transpose()).rowwise() + block.ffn_b1.value.row(0);
        c.g = c.u.unaryExpr([](double v) { return gelu(v); });
        Matrix ffn_out = (c.g * block.ffn_w2.value.transpose()).rowwise() + block.ffn_b2.value.row(0);
        if (use_dropout) {
            c.ffn_mask = dropout_mask(t, cfg.dim, cfg.dropout, *dropout_rng);
            ffn_out.array() *= c.ffn_mask.array();
        }
        x = c.x1 + ffn_out;
    }
    LayerNormCache lnf_local;
    return layer_norm(x, state.lnf_gamma.value.row(0), state.lnf_beta.value.row(0),
                      cache != nullptr ? &cache->lnf : &lnf_local);
}

Matrix backward(BackboneState& state, const BackboneCache& cache, const Matrix& dz) {
    const auto& cfg = state.config;
    const Index head_dim = cfg.dim / cfg.heads;
    const double inv_sqrt = 1.0 / std::sqrt(static_cast<double>(head_dim));

    Matrix dx = layer_norm_backward(dz, cache.lnf, state.lnf_gamma, state.lnf_beta);
    for (std::size_t b = state.blocks.size(); b-- > 0;) {
        auto& block = state.blocks[b];
        const BlockCache& c = cache.blocks[b];
        const Index t = c.x.rows();

        // Feed-forward branch.
        Matrix d_ffn = dx;
        if (c.ffn_mask.size() > 0) d_ffn.array() *= c.ffn_mask.array();
        add_weight_grad(block.ffn_w2, d_ffn, c.g);
        add_bias_grad(block.ffn_b2, d_ffn);
        Matrix du = (d_ffn * block.ffn_w2.value).array() * c.u.unaryExpr([](double v) { return gelu_grad(v); }).array();
        add_weight_grad(block.ffn_w1, du, c.h2);
        add_bias_grad(block.ffn_b1, du);
        const Matrix dh2 = du * block.ffn_w1.value;
        Matrix dx1 = dx + layer_norm_backward(dh2, c.ln2, block.ln2_gamma, block.ln2_beta);

        // Attention branch.
        Matrix d_attn = dx1;
        if (c.attn_mask.size() > 0) d_attn.array() *= c.attn_mask.array();
        add_weight_grad(block.w_o, d_attn, c.attn_concat);
        const Matrix d_concat = d_attn * block.w_o.value;
        Matrix dq(t, cfg.dim), dk(t, cfg.dim), dv(t, cfg.dim);
        for (Index hd = 0; hd < cfg.heads; ++hd) {
            const Matrix& probs = c.probs[static_cast<std::size_t>(hd)];
            const auto d_oh = d_concat.middleCols(hd * head_dim, head_dim);
            const auto qh = c.q.middleCols(hd * head_dim, head_dim);
            const auto kh = c.k.middleCols(hd * head_dim, head_dim);
            const auto vh = c.v.middleCols(hd * head_dim, head_dim);
            const Matrix d_probs = d_oh * vh.transpose();
            dv.middleCols(hd * head_dim, head_dim).noalias() = probs.transpose() * d_oh;
            Matrix d_scores(t, t);
            for (Index i = 0; i < t; ++i) {
                const double dot = probs.row(i).dot(d_probs.row(i));
                d_scores.row(i) = probs.row(i).array() * (d_probs.row(i).array() - dot);
            }
            d_scores *= inv_sqrt;
            dq.middleCols(hd * head_dim, head_dim).noalias() = d_scores * kh;
            dk.middleCols(hd * head_dim, head_dim).noalias() = d_scores.transpose() * qh;
        }
        Matrix dh = project_backward(dq, c.h, block.w_q, block.lora_q, c.hq_a);
        dh += project_backward(dk, c.h, block.w_k, block.lora_k, c.hk_a);
        add_weight_grad(block.w_v, dv, c.h);
        dh.noalias() += dv * block.w_v.value;
        dx = dx1 + layer_norm_backward(dh, c.ln1, block.ln1_gamma, block.ln1_beta);
    }
    return dx;
}

}  // namespace tsalign::backbone
