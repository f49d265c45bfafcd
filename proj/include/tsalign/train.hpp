#pragma once

#include "tsalign/backbone.hpp"
#include "tsalign/checkpoint.hpp"
#include "tsalign/data.hpp"
#include "tsalign/model.hpp"

#include <functional>
#include <span>
#include <string>
#include <vector>

namespace tsalign::train {

double mse(const Matrix& actual, const Matrix& predicted);
double mae(const Matrix& actual, const Matrix& predicted);

enum class OptimizerKind { Adam, Sgd };

OptimizerKind parse_optimizer(std::string_view name);
std::string_view to_string(OptimizerKind kind);

struct TrainConfig {
    double learning_rate = 1e-3;
    Index batch_size = 32;
    Index epochs = 10;      // alignment stage and linear evaluation
    Index lp_epochs = 5;    // forecasting stage, head only
    Index ft_epochs = 5;    // forecasting stage, designated trainable groups
    Index max_steps = 0;    // per phase; 0 means no cap
    std::uint64_t seed = 0;
    OptimizerKind optimizer = OptimizerKind::Adam;
    double beta1 = 0.9;
    double beta2 = 0.999;
    double adam_eps = 1e-8;
    bool early_stopping = false;
    Index patience = 3;

    void validate(bool forecasting) const;
};

/// Adaptive-moment or plain gradient descent over a fixed set of trainable parameters.
class Optimizer {
public:
    Optimizer(ParamList params, const TrainConfig& config);

    /// Applies one update from the accumulated grads. Throws TrainingError on non-finite grads.
    void step();
    Index steps() const { return step_count_; }

private:
    ParamList params_;
    TrainConfig config_;
    std::vector<Matrix> m_;
    std::vector<Matrix> v_;
    Index step_count_ = 0;
};

/// Trainable parameters only.
ParamList trainable(const ParamList& params);

/// One line-delimited training record.
struct StepRecord {
    std::string stage;
    std::string phase;
    Index step = 0;
    Index epoch = 0;
    double loss = 0.0;
    double lr = 0.0;
};
using StepObserver = std::function<void(const StepRecord&)>;
std::string to_json_line(const StepRecord& record);

/// Shifted-patch MSE over a batch of look-back windows. Accumulates grads when requested.
double alignment_loss(Model& model, std::span<const data::Window* const> batch, bool compute_grad,
                      Rng* dropout_rng = nullptr);

/// Forecast MSE over a batch. Accumulates grads when requested.
double forecast_loss(Model& model, std::span<const data::Window* const> batch, bool compute_grad,
                     Rng* dropout_rng = nullptr);

/// RevIN-normalize, patch, encode, run the backbone, project and denormalize: T_out x C.
Matrix forecast_forward(const Model& model, const data::Window& window);

/// Backbone output z (T_p x D) per channel for an affine-free normalized window.
std::vector<Matrix> alignment_features(const Model& model, const data::Window& window);

struct TrainResult {
    std::vector<double> losses;  // one per optimizer step
    Index steps = 0;
};

/// Stage 1: autoregressive next-patch training of the designated trainable groups.
TrainResult run_alignment(Model& model, const std::vector<data::Window>& train_windows, const TrainConfig& config,
                          const StepObserver& observer = {});

struct LpFtOptions {
    backbone::FreezePolicy policy = backbone::FreezePolicy::defaults();
    const std::vector<data::Window>* val_windows = nullptr;  // needed for early stopping
};

struct LpFtResult {
    TrainResult lp;
    TrainResult ft;
};

/// Stage 2: linear probing (forecast head only) followed by fine-tuning of the policy's groups.
LpFtResult run_lp_ft(Model& model, const std::vector<data::Window>& train_windows, const TrainConfig& config,
                     const LpFtOptions& options = {}, const StepObserver& observer = {});

struct GradCheckEntry {
    std::string name;
    Index elements = 0;
    double max_rel_error = 0.0;
    Index worst_index = 0;
    double analytic = 0.0;
    double numeric = 0.0;
};

struct GradCheckReport {
    std::vector<GradCheckEntry> entries;
    double eps = 0.0;
    double threshold = 1e-3;
    double max_rel_error = 0.0;
    bool passed = true;
};

using LossFn = std::function<double(bool compute_grad)>;

/// Central finite differences on every trainable scalar of the model versus analytic grads.
GradCheckReport gradient_check(Model& model, const LossFn& loss_fn, double eps = 1e-4, double threshold = 1e-3);

}  // namespace tsalign::train
