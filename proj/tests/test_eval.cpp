#include "test_support.hpp"

#include "tsalign/eval.hpp"

#include <doctest.h>

#include <random>

using namespace tsalign;
using namespace tsalign::eval;
using testing::bit_identical;

namespace {

Matrix random_matrix(Index rows, Index cols, std::mt19937_64& rng) {
    std::normal_distribution<double> nd;
    Matrix m(rows, cols);
    for (Index i = 0; i < m.size(); ++i) m.data()[i] = nd(rng);
    return m;
}

PipelineConfig toy_pipeline() {
    PipelineConfig p;
    p.model = testing::toy_model_config();
    p.finetune.batch_size = 16;
    p.finetune.lp_epochs = 1;
    p.finetune.ft_epochs = 1;
    p.finetune.max_steps = 5;
    p.finetune.seed = 1;
    p.dataset = "toy";
    return p;
}

data::PreparedData toy_data(Index length = 512, std::uint64_t seed = 2) {
    return data::prepare(data::generate_synthetic(testing::sine_spec(length, 2, seed, 0.05)), {});
}

}  // namespace

TEST_CASE("evaluate_predictions examples") {
    Matrix actual = Matrix::Zero(2, 1), pred(2, 1);
    pred << 1, -1;
    const auto m = evaluate_predictions({actual}, {pred});
    CHECK(m.mse == 1.0);
    CHECK(m.mae == 1.0);
    CHECK(m.windows == 1);
    const auto perfect = evaluate_predictions({pred, actual}, {pred, actual});
    CHECK(perfect.mse == 0.0);
    CHECK(perfect.mae == 0.0);
    CHECK_THROWS(evaluate_predictions({}, {}));
    CHECK_THROWS_AS(evaluate_predictions({actual}, {Matrix::Zero(3, 1)}), ShapeError);
}

TEST_CASE("evaluate_predictions matches a triple loop") {
    std::mt19937_64 rng(1);
    for (int trial = 0; trial < 10; ++trial) {
        const Index n = 1 + trial, h = 3 + trial % 4, c = 1 + trial % 3;
        std::vector<Matrix> a, p;
        for (Index w = 0; w < n; ++w) {
            a.push_back(random_matrix(h, c, rng));
            p.push_back(random_matrix(h, c, rng));
        }
        double se = 0.0, ae = 0.0;
        for (Index w = 0; w < n; ++w) {
            for (Index t = 0; t < h; ++t) {
                for (Index j = 0; j < c; ++j) {
                    const double d = a[static_cast<std::size_t>(w)](t, j) - p[static_cast<std::size_t>(w)](t, j);
                    se += d * d;
                    ae += std::abs(d);
                }
            }
        }
        const double count = static_cast<double>(n * h * c);
        const auto m = evaluate_predictions(a, p);
        CHECK(std::abs(m.mse - se / count) < 1e-12);
        CHECK(std::abs(m.mae - ae / count) < 1e-12);

        // Symmetry and MAE scaling.
        const auto swapped = evaluate_predictions(p, a);
        CHECK(swapped.mse == doctest::Approx(m.mse).epsilon(1e-14));
        CHECK(swapped.mae == doctest::Approx(m.mae).epsilon(1e-14));
        std::vector<Matrix> as, ps;
        for (std::size_t w = 0; w < a.size(); ++w) {
            as.push_back(-2.5 * a[w]);
            ps.push_back(-2.5 * p[w]);
        }
        CHECK(evaluate_predictions(as, ps).mae == doctest::Approx(2.5 * m.mae).epsilon(1e-12));
    }
}

TEST_CASE("evaluate_forecast agrees with forecast_forward and the scaler inverse") {
    const auto d = toy_data();
    auto model = train::make_model(testing::toy_model_config(), 3);
    Rng rng(4);
    train::add_forecast_head(model, 8, 2, rng);
    const auto windows = data::sliding_windows(d.test, 32, 8);
    std::vector<Matrix> a, p, ar, pr;
    for (const auto& w : windows) {
        a.push_back(w.x_out);
        p.push_back(train::forecast_forward(model, w));
        ar.push_back(data::invert_scaler(w.x_out, d.scaler));
        pr.push_back(data::invert_scaler(p.back(), d.scaler));
    }
    const auto m = evaluate_forecast(model, windows);
    const auto ref = evaluate_predictions(a, p);
    CHECK(m.windows == static_cast<Index>(windows.size()));
    CHECK(std::abs(m.mse - ref.mse) < 1e-12);
    CHECK(std::abs(m.mae - ref.mae) < 1e-12);
    const auto raw = evaluate_forecast(model, windows, &d.scaler);
    CHECK(std::abs(raw.mse - evaluate_predictions(ar, pr).mse) < 1e-12);
    CHECK_THROWS_AS(evaluate_forecast(model, {}), DataError);
    CHECK_THROWS_AS(evaluate_forecast(model, data::sliding_windows(d.test, 32, 4)), ShapeError);
}

TEST_CASE("report averages and serialization") {
    MetricsReport r;
    r.dataset = "toy";
    r.few_shot_fraction = 0.1;
    r.horizons = {{8, 0.5, 0.4, 10}, {16, 0.7, 0.6, 9}, {24, 0.1, 0.3, 8}};
    r.finalize();
    CHECK(std::abs(r.avg_mse - (0.5 + 0.7 + 0.1) / 3.0) < 1e-12);
    CHECK(std::abs(r.avg_mae - (0.4 + 0.6 + 0.3) / 3.0) < 1e-12);
    const auto back = report_from_json(to_json(r));
    CHECK(back.dataset == "toy");
    CHECK(back.few_shot_fraction == 0.1);
    REQUIRE(back.horizons.size() == 3);
    CHECK(back.horizons[1].horizon == 16);
    CHECK(back.horizons[2].mse == 0.1);
    CHECK(back.avg_mse == r.avg_mse);
    const auto table = to_table(r);
    CHECK(table.find("avg") != std::string::npos);
    CHECK(table.find("16") != std::string::npos);
}

TEST_CASE("multi horizon protocol on synthetic data") {
    const auto d = toy_data();
    const std::vector<Index> horizons{8, 16};
    const auto result = multi_horizon_protocol(toy_pipeline(), d, horizons, nullptr);
    REQUIRE(result.report.horizons.size() == 2);
    REQUIRE(result.models.size() == 2);
    CHECK(result.report.horizons[0].horizon == 8);
    CHECK(result.models[1].forecast_head->horizon() == 16);
    CHECK(std::abs(result.report.avg_mse -
                   (result.report.horizons[0].mse + result.report.horizons[1].mse) / 2.0) < 1e-12);
    CHECK(std::isfinite(result.report.avg_mae));

    const std::vector<Index> too_long{720};
    CHECK_THROWS_AS(multi_horizon_protocol(toy_pipeline(), toy_data(400), too_long, nullptr), DataError);
    const std::vector<Index> none;
    CHECK_THROWS(multi_horizon_protocol(toy_pipeline(), d, none, nullptr));
}

TEST_CASE("protocol starts every horizon from the same aligned weights") {
    const auto d = toy_data();
    auto aligned = train::make_model(testing::toy_model_config(), 5);
    Rng rng(6);
    train::add_alignment_head(aligned, rng);
    const auto ckpt = train::to_checkpoint(aligned, "alignment");
    auto cfg = toy_pipeline();
    const auto m8 = forecasting_model(cfg, &ckpt, 8, 2, 1);
    const auto m16 = forecasting_model(cfg, &ckpt, 16, 2, 1);
    CHECK_FALSE(m8.align_head.has_value());
    CHECK(bit_identical(m8.backbone.blocks[1].w_v.value, aligned.backbone.blocks[1].w_v.value));
    CHECK(bit_identical(m16.encoder.conv_weight.value, aligned.encoder.conv_weight.value));
    cfg.model.patch_len = 16;
    CHECK_THROWS(forecasting_model(cfg, &ckpt, 8, 2, 1));
}

TEST_CASE("linear evaluation trains only a fresh head") {
    const auto d = toy_data();
    auto aligned = train::make_model(testing::toy_model_config(), 7);
    Rng rng(8);
    train::add_alignment_head(aligned, rng);
    const auto ckpt = train::to_checkpoint(aligned, "alignment");
    train::TrainConfig cfg;
    cfg.epochs = 2;
    cfg.batch_size = 16;
    cfg.seed = 9;
    const auto result = linear_eval(ckpt, d, 8, cfg);
    CHECK(std::isfinite(result.metrics.mse));
    CHECK(result.metrics.windows > 0);

    // Initial head is reproducible from the same seed; it must have moved.
    train::Model fresh = train::model_from_checkpoint(ckpt);
    Rng head_rng(cfg.seed * 0x9E3779B97F4A7C15ULL + 8);
    train::add_forecast_head(fresh, 8, 2, head_rng);
    CHECK_FALSE(bit_identical(fresh.forecast_head->weight.value, result.model.forecast_head->weight.value));

    std::set<ParamGroup> changed;
    for (const Param* p : result.model.parameters()) {
        if (const auto* rec = ckpt.find(p->name)) {
            CHECK_MESSAGE(bit_identical(rec->value, p->value), p->name);
        } else {
            changed.insert(p->group);
        }
        if (p->name.rfind("revin", 0) == 0) CHECK(bit_identical(p->value, fresh.revin->gamma.name == p->name
                                                                              ? fresh.revin->gamma.value
                                                                              : fresh.revin->beta.value));
    }
    CHECK(changed == std::set<ParamGroup>{ParamGroup::Head, ParamGroup::RevIN});
}
