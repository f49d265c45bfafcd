#pragma once

#include "tsalign/common.hpp"

#include <filesystem>
#include <string>
#include <vector>

namespace tsalign::data {

/// Evenly sampled multivariate series: values are T x C, one row per timestamp.
struct RawSeries {
    std::vector<Timestamp> timestamps;
    Matrix values;
    std::vector<std::string> feature_names;
    std::int64_t sampling_interval = 0;

    Index length() const { return values.rows(); }
    Index channels() const { return values.cols(); }

    /// Rows [begin, begin + count) as a new series.
    RawSeries slice(Index begin, Index count) const;
    /// Throws DataError if any invariant is violated.
    void validate() const;
};

struct SplitSpec {
    double train_ratio = 0.7;
    double val_ratio = 0.1;
    double test_ratio = 0.2;
    double few_shot_fraction = 1.0;

    void validate() const;
};

struct Splits {
    RawSeries train;
    RawSeries val;
    RawSeries test;
};

struct Window {
    Matrix x_in;   // T_in x C
    Matrix x_out;  // T_out x C
    std::vector<Timestamp> in_timestamps;
    Index start_index = 0;
};

struct SynthComponent {
    enum class Kind { Sine, Trend, Noise };
    Kind kind = Kind::Sine;
    double amplitude = 1.0;
    double period_steps = 24.0;  // sine
    double slope = 0.0;          // trend, per step
    double sigma = 0.0;          // noise
    double phase_steps = 0.0;    // sine, shifted per channel by channel * phase_steps
};

struct SynthSpec {
    Index length = 0;
    std::vector<SynthComponent> components;
    Index channels = 1;
    std::uint64_t seed = 0;
    Timestamp start_timestamp = 0;
    std::int64_t sampling_interval = 3600;

    void validate() const;
};

struct Scaler {
    Vector mean;
    Vector std;
};

/// Parses "YYYY-MM-DD HH:MM:SS" into epoch seconds (UTC, no timezone).
Timestamp parse_timestamp(std::string_view text);
std::string format_timestamp(Timestamp ts);

/// Standardized splits: scaler fit on the full training split, few-shot prefix taken afterwards.
struct PreparedData {
    RawSeries train;
    RawSeries val;
    RawSeries test;
    Scaler scaler;
    Index full_train_rows = 0;
};

PreparedData prepare(const RawSeries& series, const SplitSpec& spec);

RawSeries load_csv(const std::filesystem::path& path);
void write_csv(const RawSeries& series, const std::filesystem::path& path);

Splits chronological_split(const RawSeries& series, const SplitSpec& spec);
RawSeries few_shot_prefix(const RawSeries& train, double fraction);
std::vector<Window> sliding_windows(const RawSeries& series, Index input_len, Index output_len);
RawSeries generate_synthetic(const SynthSpec& spec);

Scaler fit_scaler(const RawSeries& train);
RawSeries apply_scaler(const RawSeries& series, const Scaler& scaler);
/// Maps standardized values (rows x C) back to the raw scale.
Matrix invert_scaler(const Matrix& values, const Scaler& scaler);

}  // namespace tsalign::data
