#pragma once

#include "tsalign/checkpoint.hpp"
#include "tsalign/data.hpp"
#include "tsalign/model.hpp"
#include "tsalign/train.hpp"

#include <optional>
#include <span>
#include <string>
#include <vector>

namespace tsalign::eval {

struct ForecastMetrics {
    double mse = 0.0;
    double mae = 0.0;
    Index windows = 0;
};

/// Global elementwise means over windows, horizon steps and channels. When raw_scaler is set,
/// predictions and targets are mapped back to the raw scale first.
ForecastMetrics evaluate_forecast(const train::Model& model, const std::vector<data::Window>& windows,
                                  const data::Scaler* raw_scaler = nullptr);

/// Same reduction for precomputed predictions; used by the metric oracles.
ForecastMetrics evaluate_predictions(const std::vector<Matrix>& actual, const std::vector<Matrix>& predicted);

struct HorizonMetrics {
    Index horizon = 0;
    double mse = 0.0;
    double mae = 0.0;
    Index windows = 0;
};

struct MetricsReport {
    std::string dataset;
    std::string scale = "standardized";
    double few_shot_fraction = 1.0;
    std::vector<HorizonMetrics> horizons;
    double avg_mse = 0.0;
    double avg_mae = 0.0;

    void finalize();  // recomputes the averages
};

std::string to_json(const MetricsReport& report);
MetricsReport report_from_json(const std::string& text);
std::string to_table(const MetricsReport& report);

struct PipelineConfig {
    train::ModelConfig model;
    train::TrainConfig finetune;
    backbone::FreezePolicy policy = backbone::FreezePolicy::defaults();
    bool raw_scale_metrics = false;
    std::string dataset = "dataset";
    double few_shot_fraction = 1.0;
};

struct ProtocolResult {
    MetricsReport report;
    std::vector<train::Model> models;  // one per horizon, same order as the report
};

/// Builds the stage-2 starting model: the aligned weights when a checkpoint is given, otherwise a
/// fresh random model. The alignment head is dropped and a forecast head added.
train::Model forecasting_model(const PipelineConfig& config, const checkpoint::Checkpoint* alignment,
                               Index horizon, Index channels, std::uint64_t seed);

/// Fine-tunes one model per horizon from the shared stage-1 checkpoint and evaluates on the test split.
ProtocolResult multi_horizon_protocol(const PipelineConfig& config, const data::PreparedData& data,
                                      std::span<const Index> horizons, const checkpoint::Checkpoint* alignment,
                                      const train::StepObserver& observer = {});

struct LinearEvalResult {
    ForecastMetrics metrics;
    train::Model model;
};

/// Freezes every tensor of the model, trains a fresh forecast head for config.epochs and
/// reports test metrics.
LinearEvalResult linear_eval(train::Model model, const data::PreparedData& data, Index horizon,
                             const train::TrainConfig& config, const data::Scaler* raw_scaler = nullptr);
LinearEvalResult linear_eval(const checkpoint::Checkpoint& aligned, const data::PreparedData& data, Index horizon,
                             const train::TrainConfig& config, const data::Scaler* raw_scaler = nullptr);

}  // namespace tsalign::eval
