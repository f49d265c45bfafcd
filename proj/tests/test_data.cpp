#include "test_support.hpp"

#include "tsalign/data.hpp"

#include <doctest.h>

#include <filesystem>
#include <fstream>
#include <random>

using namespace tsalign;
namespace fs = std::filesystem;

namespace {

fs::path write_file(const std::string& name, const std::string& text) {
    const auto path = fs::temp_directory_path() / ("tsalign_test_" + name);
    std::ofstream(path) << text;
    return path;
}

data::RawSeries ramp(Index rows, Index channels) {
    data::RawSeries s;
    s.sampling_interval = 3600;
    s.values.resize(rows, channels);
    for (Index t = 0; t < rows; ++t) {
        s.timestamps.push_back(1467331200 + 3600 * t);
        for (Index c = 0; c < channels; ++c) s.values(t, c) = static_cast<double>(100 * c + t);
    }
    for (Index c = 0; c < channels; ++c) s.feature_names.push_back("c" + std::to_string(c));
    return s;
}

std::string error_of(const std::function<void()>& fn) {
    try {
        fn();
    } catch (const std::exception& e) {
        return e.what();
    }
    return "";
}

}  // namespace

TEST_CASE("load_csv reads a five row fixture") {
    const auto path = write_file("five.csv",
                                 "date,a,b\n"
                                 "2016-07-01 00:00:00,1,2\n"
                                 "2016-07-01 01:00:00,3,4\n"
                                 "2016-07-01 02:00:00,5,6\n"
                                 "2016-07-01 03:00:00,7,8.5\n"
                                 "2016-07-01 04:00:00,-1e-3,10\n");
    const auto s = data::load_csv(path);
    CHECK(s.length() == 5);
    CHECK(s.channels() == 2);
    CHECK(s.sampling_interval == 3600);
    CHECK(s.feature_names == std::vector<std::string>{"a", "b"});
    CHECK(s.values(3, 1) == 8.5);
    CHECK(s.values(4, 0) == -1e-3);
}

TEST_CASE("load_csv handles an ETT style file with seven value columns") {
    std::string text = "date,HUFL,HULL,MUFL,MULL,LUFL,LULL,OT\n";
    for (int h = 0; h < 4; ++h) {
        text += "2016-07-01 0" + std::to_string(h) + ":00:00,5.8,2.0,1.4,0.4,4.0,1.3,30.5\n";
    }
    const auto s = data::load_csv(write_file("ett.csv", text));
    CHECK(s.channels() == 7);
    CHECK(s.feature_names.back() == "OT");
}

TEST_CASE("load_csv rejects duplicate timestamps naming the row") {
    const auto path = write_file("dup.csv",
                                 "date,a\n"
                                 "2016-07-01 00:00:00,1\n"
                                 "2016-07-01 01:00:00,2\n"
                                 "2016-07-01 01:00:00,3\n");
    const auto msg = error_of([&] { data::load_csv(path); });
    CHECK(msg.find("row 3") != std::string::npos);
}

TEST_CASE("load_csv rejects malformed input") {
    CHECK_THROWS_AS(data::load_csv(write_file("nodate.csv", "time,a\n2016-07-01 00:00:00,1\n")), DataError);
    CHECK_THROWS_AS(data::load_csv(write_file("ragged.csv",
                                              "date,a,b\n2016-07-01 00:00:00,1,2\n2016-07-01 01:00:00,3\n")),
                    DataError);
    CHECK_THROWS_AS(data::load_csv(write_file("nan.csv",
                                              "date,a\n2016-07-01 00:00:00,1\n2016-07-01 01:00:00,abc\n")),
                    DataError);
    CHECK_THROWS_AS(data::load_csv(write_file("uneven.csv",
                                              "date,a\n2016-07-01 00:00:00,1\n2016-07-01 01:00:00,2\n"
                                              "2016-07-01 03:00:00,3\n")),
                    DataError);
    CHECK_THROWS_AS(data::load_csv(write_file("baddate.csv", "date,a\n2016-13-01 00:00:00,1\n")), DataError);
    CHECK_THROWS_AS(data::load_csv(fs::temp_directory_path() / "tsalign_missing.csv"), DataError);
}

TEST_CASE("write_csv then load_csv round trips exactly") {
    auto s = data::generate_synthetic(testing::sine_spec(48, 3, 11, 0.3));
    const auto path = fs::temp_directory_path() / "tsalign_test_roundtrip.csv";
    data::write_csv(s, path);
    const auto back = data::load_csv(path);
    CHECK(back.timestamps == s.timestamps);
    CHECK(testing::bit_identical(back.values, s.values));
}

TEST_CASE("timestamps parse and format in the fixed layout") {
    CHECK(data::parse_timestamp("1970-01-01 00:00:00") == 0);
    CHECK(data::parse_timestamp("2016-07-01 00:00:00") == 1467331200);
    CHECK(data::format_timestamp(1467331200 + 13 * 3600) == "2016-07-01 13:00:00");
    CHECK_THROWS(data::parse_timestamp("2016-07-01"));
    CHECK_THROWS(data::parse_timestamp("2016-02-30 00:00:00"));
}

TEST_CASE("chronological_split uses floor, floor, remainder") {
    data::SplitSpec spec;
    auto [tr, va, te] = data::chronological_split(ramp(100, 1), spec);
    CHECK(tr.length() == 70);
    CHECK(va.length() == 10);
    CHECK(te.length() == 20);

    auto s101 = data::chronological_split(ramp(101, 1), spec);
    // floor(70.7) = 70, floor(10.1) = 10, 101 - 80 = 21
    CHECK(s101.train.length() == 70);
    CHECK(s101.val.length() == 10);
    CHECK(s101.test.length() == 21);

    data::SplitSpec bad{0.5, 0.5, 0.5, 1.0};
    CHECK_THROWS_AS(bad.validate(), DataError);
    CHECK_THROWS_AS(data::chronological_split(ramp(100, 1), bad), DataError);
    CHECK_THROWS_AS(data::chronological_split(ramp(2, 1), spec), DataError);
}

TEST_CASE("split segments concatenate to the original series") {
    std::mt19937_64 rng(3);
    for (int trial = 0; trial < 30; ++trial) {
        const Index t = std::uniform_int_distribution<Index>(20, 400)(rng);
        const double a = std::uniform_real_distribution<double>(0.3, 0.8)(rng);
        const double b = std::uniform_real_distribution<double>(0.05, (1.0 - a) / 2)(rng);
        data::SplitSpec spec{a, b, 1.0 - a - b, 1.0};
        const auto s = ramp(t, 2);
        const auto parts = data::chronological_split(s, spec);
        Matrix joined(t, 2);
        joined << parts.train.values, parts.val.values, parts.test.values;
        CHECK(testing::bit_identical(joined, s.values));
        auto ts = parts.train.timestamps;
        ts.insert(ts.end(), parts.val.timestamps.begin(), parts.val.timestamps.end());
        ts.insert(ts.end(), parts.test.timestamps.begin(), parts.test.timestamps.end());
        CHECK(ts == s.timestamps);
    }
}

TEST_CASE("few_shot_prefix takes the leading rows") {
    const auto s = ramp(1000, 2);
    CHECK(data::few_shot_prefix(s, 0.05).length() == 50);
    const auto p10 = data::few_shot_prefix(s, 0.10);
    CHECK(p10.length() == 100);
    CHECK(p10.values(99, 1) == s.values(99, 1));
    const auto full = data::few_shot_prefix(s, 1.0);
    CHECK(testing::bit_identical(full.values, s.values));
    CHECK(full.timestamps == s.timestamps);
    CHECK_THROWS_AS(data::few_shot_prefix(s, 0.0), DataError);
    CHECK_THROWS_AS(data::few_shot_prefix(s, 1.5), DataError);
    CHECK_THROWS_AS(data::few_shot_prefix(ramp(5, 1), 0.1), DataError);
}

TEST_CASE("few_shot_prefix is idempotent at 1 and monotone") {
    const auto s = ramp(333, 1);
    CHECK(testing::bit_identical(data::few_shot_prefix(data::few_shot_prefix(s, 1.0), 1.0).values, s.values));
    std::mt19937_64 rng(5);
    for (int trial = 0; trial < 50; ++trial) {
        double a = std::uniform_real_distribution<double>(0.01, 1.0)(rng);
        double b = std::uniform_real_distribution<double>(0.01, 1.0)(rng);
        if (a > b) std::swap(a, b);
        const auto pa = data::few_shot_prefix(s, a);
        const auto pb = data::few_shot_prefix(s, b);
        REQUIRE(pa.length() <= pb.length());
        CHECK(testing::bit_identical(pa.values, pb.values.topRows(pa.length())));
    }
}

TEST_CASE("sliding_windows count and contents") {
    const auto s = ramp(10, 2);
    const auto w = data::sliding_windows(s, 3, 2);
    REQUIRE(w.size() == 6);
    CHECK(testing::bit_identical(w[0].x_in, s.values.topRows(3)));
    CHECK(testing::bit_identical(w[0].x_out, s.values.middleRows(3, 2)));
    CHECK(w[5].start_index == 5);
    CHECK(w[2].in_timestamps == std::vector<Timestamp>(s.timestamps.begin() + 2, s.timestamps.begin() + 5));
    CHECK_THROWS_AS(data::sliding_windows(ramp(4, 1), 3, 2), DataError);
}

TEST_CASE("sliding_windows matches a naive index oracle for random triples") {
    std::mt19937_64 rng(17);
    for (int trial = 0; trial < 100; ++trial) {
        const Index t_in = std::uniform_int_distribution<Index>(1, 40)(rng);
        const Index t_out = std::uniform_int_distribution<Index>(1, 20)(rng);
        const Index t = t_in + t_out + std::uniform_int_distribution<Index>(0, 60)(rng);
        const auto s = ramp(t, 1);
        const auto w = data::sliding_windows(s, t_in, t_out);
        Index expected = 0;
        for (Index k = 0; k + t_in + t_out <= t; ++k) ++expected;
        REQUIRE(static_cast<Index>(w.size()) == expected);
        const std::size_t k = std::uniform_int_distribution<std::size_t>(0, w.size() - 1)(rng);
        for (Index i = 0; i < t_in; ++i) CHECK(w[k].x_in(i, 0) == s.values(static_cast<Index>(k) + i, 0));
        for (Index i = 0; i < t_out; ++i) CHECK(w[k].x_out(i, 0) == s.values(static_cast<Index>(k) + t_in + i, 0));
    }
}

TEST_CASE("generate_synthetic sine range, determinism and linearity") {
    auto spec = testing::sine_spec(96, 1, 0);
    spec.components[0].phase_steps = 0.0;
    const auto s = data::generate_synthetic(spec);
    CHECK(s.length() == 96);
    const double mx = s.values.maxCoeff();
    CHECK(mx >= 0.99);
    CHECK(mx <= 1.0);

    auto noisy = testing::sine_spec(200, 3, 7, 0.5);
    CHECK(testing::bit_identical(data::generate_synthetic(noisy).values, data::generate_synthetic(noisy).values));
    auto other = noisy;
    other.seed = 8;
    CHECK_FALSE(testing::bit_identical(data::generate_synthetic(noisy).values,
                                       data::generate_synthetic(other).values));

    data::SynthSpec a = testing::sine_spec(120, 2, 1);
    data::SynthSpec b = a;
    data::SynthComponent trend;
    trend.kind = data::SynthComponent::Kind::Trend;
    trend.slope = 0.01;
    b.components = {trend};
    data::SynthSpec both = a;
    both.components.push_back(trend);
    const Matrix sum = data::generate_synthetic(a).values + data::generate_synthetic(b).values;
    CHECK((data::generate_synthetic(both).values - sum).cwiseAbs().maxCoeff() < 1e-12);

    auto bad = spec;
    bad.components[0].period_steps = 1.5;
    CHECK_THROWS_AS(data::generate_synthetic(bad), DataError);
    bad = spec;
    bad.length = 0;
    CHECK_THROWS_AS(data::generate_synthetic(bad), DataError);
}

TEST_CASE("scaler fit and apply") {
    data::RawSeries s = ramp(2, 1);
    s.values << 0.0, 2.0;
    const auto sc = data::fit_scaler(s);
    CHECK(sc.mean(0) == doctest::Approx(1.0));
    CHECK(sc.std(0) == doctest::Approx(1.0));
    const auto z = data::apply_scaler(s, sc);
    CHECK(z.values(0, 0) == doctest::Approx(-1.0));
    CHECK(z.values(1, 0) == doctest::Approx(1.0));

    // Test data is scaled with the training statistics.
    data::RawSeries test = ramp(2, 1);
    test.values << 10.0, 12.0;
    const auto zt = data::apply_scaler(test, sc);
    CHECK(zt.values(0, 0) == doctest::Approx(9.0));
    CHECK(zt.values(1, 0) == doctest::Approx(11.0));
    CHECK(testing::bit_identical(data::invert_scaler(zt.values, sc), test.values));

    data::RawSeries flat = ramp(4, 1);
    flat.values.setConstant(5.0);
    const auto zf = data::apply_scaler(flat, data::fit_scaler(flat));
    CHECK(zf.values.cwiseAbs().maxCoeff() == 0.0);
}

TEST_CASE("scaled training split is standardized") {
    const auto s = data::generate_synthetic(testing::sine_spec(500, 3, 2, 0.4));
    const auto z = data::apply_scaler(s, data::fit_scaler(s));
    for (Index c = 0; c < 3; ++c) {
        const double mean = z.values.col(c).mean();
        const double var = (z.values.col(c).array() - mean).square().mean();
        CHECK(std::abs(mean) < 1e-6);
        CHECK(std::abs(std::sqrt(var) - 1.0) < 1e-4);
    }
}

TEST_CASE("prepare fits on the full train split before taking the few-shot prefix") {
    const auto s = data::generate_synthetic(testing::sine_spec(1000, 2, 4, 0.2));
    data::SplitSpec spec;
    spec.few_shot_fraction = 0.1;
    const auto p = data::prepare(s, spec);
    CHECK(p.full_train_rows == 700);
    CHECK(p.train.length() == 70);
    CHECK(p.val.length() == 100);
    CHECK(p.test.length() == 200);
    const auto sc = data::fit_scaler(s.slice(0, 700));
    CHECK(testing::bit_identical(p.scaler.mean, sc.mean));
    CHECK(testing::bit_identical(p.train.values, data::apply_scaler(s.slice(0, 70), sc).values));
}
