#include "tsalign/train.hpp"

#include "tsalign/encode.hpp"
#include "tsalign/transform.hpp"

#include <json.hpp>

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>

namespace tsalign::train {

namespace {

void check_same_shape(const Matrix& a, const Matrix& b) {
    if (a.rows() != b.rows() || a.cols() != b.cols()) {
        throw ShapeError("shape mismatch: " + std::to_string(a.rows()) + "x" + std::to_string(a.cols()) + " vs " +
                         std::to_string(b.rows()) + "x" + std::to_string(b.cols()));
    }
    if (a.size() == 0) throw ShapeError("metric over zero elements");
}

Vector flatten(const Matrix& z) { return Eigen::Map<const Vector>(z.data(), z.size()); }

Matrix unflatten(const Vector& flat, Index rows, Index cols) { return Eigen::Map<const Matrix>(flat.data(), rows, cols); }

transform::PatchGrid channel_grid(const Model& model, const Matrix& normed, Index c, const data::Window& w) {
    const Vector series = normed.col(c);
    return transform::patchify(std::span<const double>(series.data(), static_cast<std::size_t>(series.size())),
                               model.config.patch_len, model.config.stride, w.in_timestamps);
}

void check_window(const Model& model, const data::Window& w) {
    if (w.x_in.rows() != model.config.input_len) {
        throw ShapeError("window look-back " + std::to_string(w.x_in.rows()) + " does not match model input length " +
                         std::to_string(model.config.input_len));
    }
}

void check_forecast_window(const Model& model, const data::Window& w) {
    check_window(model, w);
    const Index horizon = model.forecast_head->horizon();
    const Index channels = model.revin->channels();
    if (w.x_in.cols() != channels || w.x_out.rows() != horizon || w.x_out.cols() != channels) {
        throw ShapeError("window is " + std::to_string(w.x_in.cols()) + " channels with a " +
                         std::to_string(w.x_out.rows()) + "x" + std::to_string(w.x_out.cols()) +
                         " target, head expects " + std::to_string(horizon) + "x" + std::to_string(channels));
    }
}

struct ForecastParts {
    const Param& head;
    const transform::RevINParams& revin;
};

ForecastParts forecast_parts(const Model& model) {
    if (!model.forecast_head || !model.revin) throw ShapeError("model has no forecast head");
    return {model.forecast_head->weight, *model.revin};
}

// Per (window, channel) flattened backbone output, valid while everything but the head is frozen.
struct FeatureCache {
    std::vector<std::vector<Vector>> flat;        // [window][channel]
    std::vector<transform::NormStats> stats;      // per window
};

FeatureCache build_feature_cache(const Model& model, const std::vector<data::Window>& windows) {
    FeatureCache cache;
    cache.flat.reserve(windows.size());
    cache.stats.reserve(windows.size());
    for (const auto& w : windows) {
        check_forecast_window(model, w);
        auto [normed, stats] = transform::revin_normalize(w.x_in, *model.revin);
        std::vector<Vector> per_channel;
        for (Index c = 0; c < normed.cols(); ++c) {
            const auto grid = channel_grid(model, normed, c, w);
            per_channel.push_back(flatten(backbone::forward(model.backbone, encode::encode(grid, model.encoder))));
        }
        cache.flat.push_back(std::move(per_channel));
        cache.stats.push_back(std::move(stats));
    }
    return cache;
}

// Head-only forecast loss over cached features; indices select windows.
double cached_head_loss(Model& model, const FeatureCache& cache, const std::vector<data::Window>& windows,
                        std::span<const std::size_t> indices, bool compute_grad) {
    Param& head = model.forecast_head->weight;
    const auto& revin = *model.revin;
    const Index horizon = head.value.rows();
    const Index channels = revin.channels();
    const double n = static_cast<double>(indices.size()) * static_cast<double>(horizon * channels);
    double total = 0.0;
    for (std::size_t idx : indices) {
        const auto& w = windows[idx];
        const auto& stats = cache.stats[idx];
        for (Index c = 0; c < channels; ++c) {
            const double g = revin.gamma.value(0, c);
            const double b = revin.beta.value(0, c);
            const Vector y = head.value * cache.flat[idx][static_cast<std::size_t>(c)];
            const Vector pred = ((y.array() - b) / g * stats.std(c) + stats.mean(c)).matrix();
            const Vector diff = pred - w.x_out.col(c);
            total += diff.squaredNorm();
            if (compute_grad && head.trainable) {
                const Vector dy = (2.0 / n) * diff * (stats.std(c) / g);
                head.grad.noalias() += dy * cache.flat[idx][static_cast<std::size_t>(c)].transpose();
            }
        }
    }
    return total / n;
}

std::uint64_t phase_salt(std::string_view phase) {
    std::uint64_t h = 0xcbf29ce484222325ULL;  // FNV-1a
    for (unsigned char ch : phase) {
        h ^= ch;
        h *= 0x100000001b3ULL;
    }
    return h;
}

struct EpochLoop {
    Model& model;
    const TrainConfig& config;
    std::string stage;
    std::string phase;
    const StepObserver& observer;
};

// Runs up to `epochs` epochs of shuffled mini-batches. loss_fn(indices, compute_grad) -> loss.
// val_fn, when set, enables early stopping.
TrainResult run_epochs(const EpochLoop& loop, std::size_t window_count, Index epochs,
                       const std::function<double(std::span<const std::size_t>, bool)>& loss_fn,
                       const std::function<double()>& val_fn) {
    TrainResult result;
    if (epochs <= 0 || window_count == 0) return result;
    const auto& cfg = loop.config;
    Optimizer optimizer(loop.model.parameters(), cfg);
    const ParamList active = trainable(loop.model.parameters());
    Rng shuffle_rng(cfg.seed * 0x2545F4914F6CDD1DULL + phase_salt(loop.phase));

    std::vector<std::size_t> order(window_count);
    std::iota(order.begin(), order.end(), std::size_t{0});
    const auto batch = static_cast<std::size_t>(cfg.batch_size);

    double best_val = std::numeric_limits<double>::infinity();
    std::vector<Matrix> best_values;
    Index bad_epochs = 0;

    for (Index epoch = 0; epoch < epochs; ++epoch) {
        std::shuffle(order.begin(), order.end(), shuffle_rng);
        for (std::size_t start = 0; start < order.size(); start += batch) {
            if (cfg.max_steps > 0 && result.steps >= cfg.max_steps) break;
            const std::size_t count = std::min(batch, order.size() - start);
            for (Param* p : active) p->zero_grad();
            const double loss = loss_fn(std::span<const std::size_t>(order.data() + start, count), true);
            if (!std::isfinite(loss)) {
                throw TrainingError(loop.stage + "/" + loop.phase + ": non-finite loss at step " +
                                    std::to_string(result.steps) + " (epoch " + std::to_string(epoch) + ")");
            }
            optimizer.step();
            result.losses.push_back(loss);
            ++result.steps;
            if (loop.observer) {
                loop.observer({loop.stage, loop.phase, result.steps, epoch, loss, cfg.learning_rate});
            }
        }
        if (cfg.max_steps > 0 && result.steps >= cfg.max_steps) break;
        if (val_fn) {
            const double val = val_fn();
            if (val < best_val) {
                best_val = val;
                best_values.clear();
                for (const Param* p : active) best_values.push_back(p->value);
                bad_epochs = 0;
            } else if (++bad_epochs >= cfg.patience) {
                for (std::size_t i = 0; i < active.size(); ++i) active[i]->value = best_values[i];
                break;
            }
        }
    }
    for (Param* p : active) p->zero_grad();
    return result;
}

std::vector<const data::Window*> select(const std::vector<data::Window>& windows,
                                        std::span<const std::size_t> indices) {
    std::vector<const data::Window*> out;
    out.reserve(indices.size());
    for (auto i : indices) out.push_back(&windows[i]);
    return out;
}

}  // namespace

double mse(const Matrix& actual, const Matrix& predicted) {
    check_same_shape(actual, predicted);
    return (actual - predicted).array().square().sum() / static_cast<double>(actual.size());
}

double mae(const Matrix& actual, const Matrix& predicted) {
    check_same_shape(actual, predicted);
    return (actual - predicted).array().abs().sum() / static_cast<double>(actual.size());
}

OptimizerKind parse_optimizer(std::string_view name) {
    if (name == "adam") return OptimizerKind::Adam;
    if (name == "sgd") return OptimizerKind::Sgd;
    throw ConfigError("unknown optimizer '" + std::string(name) + "'");
}

std::string_view to_string(OptimizerKind kind) { return kind == OptimizerKind::Adam ? "adam" : "sgd"; }

void TrainConfig::validate(bool forecasting) const {
    if (!(learning_rate > 0.0) || !std::isfinite(learning_rate)) throw ConfigError("learning rate must be positive");
    if (batch_size < 1) throw ConfigError("batch size must be >= 1");
    if (epochs < 0 || lp_epochs < 0 || ft_epochs < 0 || max_steps < 0) {
        throw ConfigError("epoch and step counts must be >= 0");
    }
    if (forecasting && lp_epochs == 0 && ft_epochs == 0) {
        throw ConfigError("forecasting needs at least one LP or FT epoch");
    }
    if (!(beta1 >= 0.0 && beta1 < 1.0) || !(beta2 >= 0.0 && beta2 < 1.0) || !(adam_eps > 0.0)) {
        throw ConfigError("invalid adaptive-moment hyperparameters");
    }
    if (patience < 1) throw ConfigError("patience must be >= 1");
}

Optimizer::Optimizer(ParamList params, const TrainConfig& config) : params_(trainable(params)), config_(config) {
    for (const Param* p : params_) {
        m_.push_back(Matrix::Zero(p->value.rows(), p->value.cols()));
        v_.push_back(Matrix::Zero(p->value.rows(), p->value.cols()));
    }
}

void Optimizer::step() {
    for (const Param* p : params_) {
        if (!p->grad.allFinite()) {
            throw TrainingError("non-finite gradient for " + p->name + " at step " + std::to_string(step_count_));
        }
    }
    ++step_count_;
    const double lr = config_.learning_rate;
    if (config_.optimizer == OptimizerKind::Sgd) {
        for (Param* p : params_) p->value -= lr * p->grad;
        return;
    }
    const double b1 = config_.beta1;
    const double b2 = config_.beta2;
    const double c1 = 1.0 - std::pow(b1, static_cast<double>(step_count_));
    const double c2 = 1.0 - std::pow(b2, static_cast<double>(step_count_));
    for (std::size_t i = 0; i < params_.size(); ++i) {
        Param& p = *params_[i];
        m_[i] = b1 * m_[i] + (1.0 - b1) * p.grad;
        v_[i] = b2 * v_[i] + (1.0 - b2) * p.grad.cwiseAbs2();
        p.value.array() -= lr * (m_[i].array() / c1) / ((v_[i].array() / c2).sqrt() + config_.adam_eps);
    }
}

ParamList trainable(const ParamList& params) {
    ParamList out;
    std::copy_if(params.begin(), params.end(), std::back_inserter(out), [](const Param* p) { return p->trainable; });
    return out;
}

std::string to_json_line(const StepRecord& r) {
    nlohmann::ordered_json j;
    j["stage"] = r.stage;
    j["phase"] = r.phase;
    j["step"] = r.step;
    j["epoch"] = r.epoch;
    j["loss"] = r.loss;
    j["lr"] = r.lr;
    return j.dump();
}

double alignment_loss(Model& model, std::span<const data::Window* const> batch, bool compute_grad,
                      Rng* dropout_rng) {
    if (!model.align_head) throw ShapeError("model has no alignment head");
    if (batch.empty()) throw ShapeError("empty batch");
    Param& head = model.align_head->weight;
    const Index tp = model.config.num_patches();
    if (tp < 2) throw ShapeError("alignment needs at least 2 patches per window");
    const Index p = model.config.patch_len;
    const Index channels = batch.front()->x_in.cols();
    const double n = static_cast<double>(batch.size()) * static_cast<double>(channels * (tp - 1) * p);

    double total = 0.0;
    for (const data::Window* w : batch) {
        check_window(model, *w);
        const auto [normed, stats] = transform::instance_normalize(w->x_in);
        for (Index c = 0; c < normed.cols(); ++c) {
            const auto grid = channel_grid(model, normed, c, *w);
            const auto shifted = transform::make_shift_targets(grid);
            backbone::BackboneCache cache;
            const Matrix e = encode::encode(grid, model.encoder);
            const Matrix z = backbone::forward(model.backbone, e, compute_grad ? &cache : nullptr, dropout_rng);
            const Matrix pred = z * head.value.transpose();
            const Matrix diff = pred.topRows(tp - 1) - shifted.targets;
            total += diff.squaredNorm();
            if (!compute_grad) continue;
            Matrix d_pred = Matrix::Zero(tp, p);
            d_pred.topRows(tp - 1) = (2.0 / n) * diff;
            if (head.trainable) head.grad.noalias() += d_pred.transpose() * z;
            const Matrix dz = d_pred * head.value;
            const Matrix de = backbone::backward(model.backbone, cache, dz);
            encode::encode_backward(grid, de, model.encoder);
        }
    }
    return total / n;
}

double forecast_loss(Model& model, std::span<const data::Window* const> batch, bool compute_grad, Rng* dropout_rng) {
    (void)forecast_parts(model);
    if (batch.empty()) throw ShapeError("empty batch");
    Param& head = model.forecast_head->weight;
    auto& revin = *model.revin;
    const Index tp = model.config.num_patches();
    const Index dim = model.config.backbone.dim;
    const Index horizon = head.value.rows();
    const Index channels = revin.channels();
    const double n = static_cast<double>(batch.size()) * static_cast<double>(horizon * channels);

    double total = 0.0;
    for (const data::Window* w : batch) {
        check_forecast_window(model, *w);
        const auto [standardized, stats] = transform::instance_normalize(w->x_in);
        for (Index c = 0; c < channels; ++c) {
            const double g = revin.gamma.value(0, c);
            const double b = revin.beta.value(0, c);
            if (std::abs(g) < 1e-8) throw ShapeError("RevIN gamma is not invertible");
            const Matrix normed_col = (standardized.col(c).array() * g + b).matrix();
            const auto grid = transform::patchify(
                std::span<const double>(normed_col.data(), static_cast<std::size_t>(normed_col.size())),
                model.config.patch_len, model.config.stride, w->in_timestamps);
            backbone::BackboneCache cache;
            const Matrix z = backbone::forward(model.backbone, encode::encode(grid, model.encoder),
                                               compute_grad ? &cache : nullptr, dropout_rng);
            const Vector flat = flatten(z);
            const Vector y = head.value * flat;
            const double sd = stats.std(c);
            const Vector pred = ((y.array() - b) / g * sd + stats.mean(c)).matrix();
            const Vector diff = pred - w->x_out.col(c);
            total += diff.squaredNorm();
            if (!compute_grad) continue;

            const Vector d_pred = (2.0 / n) * diff;
            const Vector dy = d_pred * (sd / g);
            if (revin.beta.trainable) revin.beta.grad(0, c) += -d_pred.sum() * sd / g;
            if (revin.gamma.trainable) {
                revin.gamma.grad(0, c) += (d_pred.array() * (-(y.array() - b) / (g * g) * sd)).sum();
            }
            if (head.trainable) head.grad.noalias() += dy * flat.transpose();
            const Vector d_flat = head.value.transpose() * dy;
            const Matrix de = backbone::backward(model.backbone, cache, unflatten(d_flat, tp, dim));
            const Matrix d_patches = encode::encode_backward(grid, de, model.encoder);
            if (revin.gamma.trainable || revin.beta.trainable) {
                const Vector d_normed = transform::patchify_backward(d_patches, model.config.input_len,
                                                                     model.config.stride);
                if (revin.gamma.trainable) revin.gamma.grad(0, c) += d_normed.dot(standardized.col(c));
                if (revin.beta.trainable) revin.beta.grad(0, c) += d_normed.sum();
            }
        }
    }
    return total / n;
}

Matrix forecast_forward(const Model& model, const data::Window& window) {
    const auto parts = forecast_parts(model);
    check_window(model, window);
    const auto [normed, stats] = transform::revin_normalize(window.x_in, parts.revin);
    Matrix y(parts.head.value.rows(), normed.cols());
    for (Index c = 0; c < normed.cols(); ++c) {
        const auto grid = channel_grid(model, normed, c, window);
        const Matrix z = backbone::forward(model.backbone, encode::encode(grid, model.encoder));
        y.col(c) = parts.head.value * flatten(z);
    }
    return transform::revin_denormalize(y, stats, parts.revin);
}

std::vector<Matrix> alignment_features(const Model& model, const data::Window& window) {
    check_window(model, window);
    const auto [normed, stats] = transform::instance_normalize(window.x_in);
    std::vector<Matrix> out;
    for (Index c = 0; c < normed.cols(); ++c) {
        const auto grid = channel_grid(model, normed, c, window);
        out.push_back(backbone::forward(model.backbone, encode::encode(grid, model.encoder)));
    }
    return out;
}

TrainResult run_alignment(Model& model, const std::vector<data::Window>& train_windows, const TrainConfig& config,
                          const StepObserver& observer) {
    config.validate(false);
    if (!model.align_head) throw ShapeError("model has no alignment head");
    if (train_windows.empty()) throw DataError("no alignment windows");
    Rng dropout_rng(config.seed ^ 0xD1B54A32D192ED03ULL);
    Rng* drop = model.config.backbone.dropout > 0.0 ? &dropout_rng : nullptr;
    const EpochLoop loop{model, config, "alignment", "align", observer};
    return run_epochs(
        loop, train_windows.size(), config.epochs,
        [&](std::span<const std::size_t> idx, bool grad) {
            const auto batch = select(train_windows, idx);
            return alignment_loss(model, batch, grad, drop);
        },
        {});
}

LpFtResult run_lp_ft(Model& model, const std::vector<data::Window>& train_windows, const TrainConfig& config,
                     const LpFtOptions& options, const StepObserver& observer) {
    config.validate(true);
    (void)forecast_parts(model);
    if (train_windows.empty()) throw DataError("no forecasting windows");
    if (config.early_stopping && options.val_windows == nullptr) {
        throw ConfigError("early stopping requires validation windows");
    }
    const auto val_fn = [&]() -> std::function<double()> {
        if (!config.early_stopping) return {};
        return [&]() {
            const auto batch = select(*options.val_windows, [&] {
                std::vector<std::size_t> all(options.val_windows->size());
                std::iota(all.begin(), all.end(), std::size_t{0});
                return all;
            }());
            return forecast_loss(model, batch, false);
        };
    }();

    LpFtResult result;
    Param* head = &model.forecast_head->weight;

    if (config.lp_epochs > 0) {
        for (Param* p : model.parameters()) {
            p->trainable = (p == head);
            p->zero_grad();
        }
        const EpochLoop loop{model, config, "forecast", "lp", observer};
        if (model.config.backbone.dropout > 0.0) {
            Rng dropout_rng(config.seed ^ 0x94D049BB133111EBULL);
            result.lp = run_epochs(
                loop, train_windows.size(), config.lp_epochs,
                [&](std::span<const std::size_t> idx, bool grad) {
                    return forecast_loss(model, select(train_windows, idx), grad, &dropout_rng);
                },
                val_fn);
        } else {
            // Everything below the head is frozen and deterministic, so features are computed once.
            const auto cache = build_feature_cache(model, train_windows);
            result.lp = run_epochs(
                loop, train_windows.size(), config.lp_epochs,
                [&](std::span<const std::size_t> idx, bool grad) {
                    return cached_head_loss(model, cache, train_windows, idx, grad);
                },
                val_fn);
        }
    }

    if (config.ft_epochs > 0) {
        backbone::apply_freeze_policy(model.parameters(), options.policy);
        Rng dropout_rng(config.seed ^ 0xBF58476D1CE4E5B9ULL);
        Rng* drop = model.config.backbone.dropout > 0.0 ? &dropout_rng : nullptr;
        const EpochLoop loop{model, config, "forecast", "ft", observer};
        result.ft = run_epochs(
            loop, train_windows.size(), config.ft_epochs,
            [&](std::span<const std::size_t> idx, bool grad) {
                return forecast_loss(model, select(train_windows, idx), grad, drop);
            },
            val_fn);
    }
    return result;
}

GradCheckReport gradient_check(Model& model, const LossFn& loss_fn, double eps, double threshold) {
    GradCheckReport report;
    report.eps = eps;
    report.threshold = threshold;
    const ParamList params = trainable(model.parameters());
    model.zero_grad();
    (void)loss_fn(true);
    std::vector<Matrix> analytic;
    for (const Param* p : params) analytic.push_back(p->grad);
    model.zero_grad();

    for (std::size_t k = 0; k < params.size(); ++k) {
        Param& p = *params[k];
        GradCheckEntry entry;
        entry.name = p.name;
        entry.elements = p.size();
        for (Index i = 0; i < p.size(); ++i) {
            double& v = p.value.data()[i];
            const double saved = v;
            v = saved + eps;
            const double plus = loss_fn(false);
            v = saved - eps;
            const double minus = loss_fn(false);
            v = saved;
            const double numeric = (plus - minus) / (2.0 * eps);
            const double a = analytic[k].data()[i];
            const double rel = std::abs(a - numeric) / std::max({std::abs(a), std::abs(numeric), 1e-8});
            if (i == 0 || rel > entry.max_rel_error) {
                entry.max_rel_error = rel;
                entry.worst_index = i;
                entry.analytic = a;
                entry.numeric = numeric;
            }
        }
        report.max_rel_error = std::max(report.max_rel_error, entry.max_rel_error);
        report.entries.push_back(std::move(entry));
    }
    report.passed = report.max_rel_error < threshold;
    return report;
}

}  // namespace tsalign::train
