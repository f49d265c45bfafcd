#include "tsalign/eval.hpp"

#include <json.hpp>

#include <cstdio>
#include <sstream>

namespace tsalign::eval {

namespace {

ForecastMetrics reduce(const std::vector<double>& sq, const std::vector<double>& abs, Index elements,
                       Index windows) {
    if (elements == 0) throw DataError("empty evaluation set");
    ForecastMetrics m;
    m.mse = pairwise_sum(sq) / static_cast<double>(elements);
    m.mae = pairwise_sum(abs) / static_cast<double>(elements);
    m.windows = windows;
    return m;
}

void check_compatible(const train::ModelConfig& a, const train::ModelConfig& b) {
    if (a.input_len != b.input_len || a.patch_len != b.patch_len || a.stride != b.stride) {
        throw ConfigError("alignment checkpoint tokenization (T_in " + std::to_string(a.input_len) + ", P " +
                          std::to_string(a.patch_len) + ", S " + std::to_string(a.stride) +
                          ") differs from the run config (T_in " + std::to_string(b.input_len) + ", P " +
                          std::to_string(b.patch_len) + ", S " + std::to_string(b.stride) + ")");
    }
}

}  // namespace

ForecastMetrics evaluate_forecast(const train::Model& model, const std::vector<data::Window>& windows,
                                  const data::Scaler* raw_scaler) {
    if (windows.empty()) throw DataError("empty test set");
    std::vector<double> sq, abs;
    sq.reserve(windows.size());
    abs.reserve(windows.size());
    Index elements = 0;
    for (const auto& w : windows) {
        Matrix pred = train::forecast_forward(model, w);
        Matrix actual = w.x_out;
        if (actual.rows() != pred.rows() || actual.cols() != pred.cols()) {
            throw ShapeError("window target is " + std::to_string(actual.rows()) + "x" + std::to_string(actual.cols()) +
                             ", model predicts " + std::to_string(pred.rows()) + "x" + std::to_string(pred.cols()));
        }
        if (raw_scaler != nullptr) {
            pred = data::invert_scaler(pred, *raw_scaler);
            actual = data::invert_scaler(actual, *raw_scaler);
        }
        sq.push_back((actual - pred).array().square().sum());
        abs.push_back((actual - pred).array().abs().sum());
        elements += actual.size();
    }
    return reduce(sq, abs, elements, static_cast<Index>(windows.size()));
}

ForecastMetrics evaluate_predictions(const std::vector<Matrix>& actual, const std::vector<Matrix>& predicted) {
    if (actual.size() != predicted.size()) throw ShapeError("prediction count mismatch");
    std::vector<double> sq, abs;
    Index elements = 0;
    for (std::size_t i = 0; i < actual.size(); ++i) {
        if (actual[i].rows() != predicted[i].rows() || actual[i].cols() != predicted[i].cols()) {
            throw ShapeError("prediction shape mismatch at window " + std::to_string(i));
        }
        sq.push_back((actual[i] - predicted[i]).array().square().sum());
        abs.push_back((actual[i] - predicted[i]).array().abs().sum());
        elements += actual[i].size();
    }
    return reduce(sq, abs, elements, static_cast<Index>(actual.size()));
}

void MetricsReport::finalize() {
    std::vector<double> m, a;
    for (const auto& h : horizons) {
        m.push_back(h.mse);
        a.push_back(h.mae);
    }
    const double n = horizons.empty() ? 1.0 : static_cast<double>(horizons.size());
    avg_mse = pairwise_sum(m) / n;
    avg_mae = pairwise_sum(a) / n;
}

std::string to_json(const MetricsReport& report) {
    nlohmann::ordered_json j;
    j["dataset"] = report.dataset;
    j["scale"] = report.scale;
    j["few_shot_fraction"] = report.few_shot_fraction;
    j["horizons"] = nlohmann::ordered_json::array();
    for (const auto& h : report.horizons) {
        nlohmann::ordered_json row;
        row["horizon"] = h.horizon;
        row["mse"] = h.mse;
        row["mae"] = h.mae;
        row["windows"] = h.windows;
        j["horizons"].push_back(row);
    }
    j["average"] = {{"mse", report.avg_mse}, {"mae", report.avg_mae}};
    return j.dump(2);
}

MetricsReport report_from_json(const std::string& text) {
    const auto j = nlohmann::json::parse(text);
    MetricsReport r;
    r.dataset = j.at("dataset").get<std::string>();
    r.scale = j.at("scale").get<std::string>();
    r.few_shot_fraction = j.at("few_shot_fraction").get<double>();
    for (const auto& row : j.at("horizons")) {
        r.horizons.push_back({row.at("horizon").get<Index>(), row.at("mse").get<double>(), row.at("mae").get<double>(),
                              row.at("windows").get<Index>()});
    }
    r.avg_mse = j.at("average").at("mse").get<double>();
    r.avg_mae = j.at("average").at("mae").get<double>();
    return r;
}

std::string to_table(const MetricsReport& report) {
    std::ostringstream out;
    char line[128];
    out << "dataset " << report.dataset << " (" << report.scale << ", few-shot " << report.few_shot_fraction
        << ")\n";
    std::snprintf(line, sizeof(line), "%8s %12s %12s %8s\n", "horizon", "mse", "mae", "windows");
    out << line;
    for (const auto& h : report.horizons) {
        std::snprintf(line, sizeof(line), "%8lld %12.6f %12.6f %8lld\n", static_cast<long long>(h.horizon), h.mse,
                      h.mae, static_cast<long long>(h.windows));
        out << line;
    }
    std::snprintf(line, sizeof(line), "%8s %12.6f %12.6f\n", "avg", report.avg_mse, report.avg_mae);
    out << line;
    return out.str();
}

train::Model forecasting_model(const PipelineConfig& config, const checkpoint::Checkpoint* alignment,
                               Index horizon, Index channels, std::uint64_t seed) {
    train::Model model;
    if (alignment != nullptr) {
        model = train::model_from_checkpoint(*alignment);
        check_compatible(model.config, config.model);
        model.align_head.reset();
    } else {
        model = train::make_model(config.model, seed);
    }
    Rng rng(seed * 0x9E3779B97F4A7C15ULL + static_cast<std::uint64_t>(horizon));
    train::add_forecast_head(model, horizon, channels, rng);
    backbone::apply_freeze_policy(model.parameters(), config.policy);
    return model;
}

ProtocolResult multi_horizon_protocol(const PipelineConfig& config, const data::PreparedData& data,
                                      std::span<const Index> horizons, const checkpoint::Checkpoint* alignment,
                                      const train::StepObserver& observer) {
    if (horizons.empty()) throw ConfigError("no horizons requested");
    const Index t_in = config.model.input_len;
    Index max_h = 0;
    for (Index h : horizons) {
        if (h < 1) throw ConfigError("horizons must be >= 1");
        max_h = std::max(max_h, h);
    }
    for (const auto* split : {&data.train, &data.val, &data.test}) {
        if (split->length() < t_in + max_h) {
            throw DataError("split of " + std::to_string(split->length()) + " rows is shorter than T_in + horizon = " +
                            std::to_string(t_in + max_h));
        }
    }

    ProtocolResult result;
    result.report.dataset = config.dataset;
    result.report.few_shot_fraction = config.few_shot_fraction;
    result.report.scale = config.raw_scale_metrics ? "raw" : "standardized";
    for (Index h : horizons) {
        const auto train_windows = data::sliding_windows(data.train, t_in, h);
        const auto val_windows = data::sliding_windows(data.val, t_in, h);
        const auto test_windows = data::sliding_windows(data.test, t_in, h);
        auto model = forecasting_model(config, alignment, h, data.train.channels(), config.finetune.seed);
        train::LpFtOptions options;
        options.policy = config.policy;
        options.val_windows = &val_windows;
        train::run_lp_ft(model, train_windows, config.finetune, options, observer);
        const auto m =
            evaluate_forecast(model, test_windows, config.raw_scale_metrics ? &data.scaler : nullptr);
        result.report.horizons.push_back({h, m.mse, m.mae, m.windows});
        result.models.push_back(std::move(model));
    }
    result.report.finalize();
    return result;
}

LinearEvalResult linear_eval(train::Model model, const data::PreparedData& data, Index horizon,
                             const train::TrainConfig& config, const data::Scaler* raw_scaler) {
    if (config.epochs < 1) throw ConfigError("linear evaluation needs at least one epoch");
    model.align_head.reset();
    Rng rng(config.seed * 0x9E3779B97F4A7C15ULL + static_cast<std::uint64_t>(horizon));
    train::add_forecast_head(model, horizon, data.train.channels(), rng);
    backbone::apply_freeze_policy(model.parameters(), backbone::FreezePolicy::none());

    train::TrainConfig probe = config;
    probe.lp_epochs = config.epochs;
    probe.ft_epochs = 0;
    probe.early_stopping = false;
    const auto t_in = model.config.input_len;
    const auto train_windows = data::sliding_windows(data.train, t_in, horizon);
    const auto test_windows = data::sliding_windows(data.test, t_in, horizon);
    train::run_lp_ft(model, train_windows, probe);
    LinearEvalResult out{evaluate_forecast(model, test_windows, raw_scaler), std::move(model)};
    return out;
}

LinearEvalResult linear_eval(const checkpoint::Checkpoint& aligned, const data::PreparedData& data, Index horizon,
                             const train::TrainConfig& config, const data::Scaler* raw_scaler) {
    return linear_eval(train::model_from_checkpoint(aligned), data, horizon, config, raw_scaler);
}

}  // namespace tsalign::eval
