#include "tsalign/data.hpp"

#include <charconv>
#include <chrono>
#include <cmath>
#include <fstream>
#include <iomanip>
#include <iostream>
#include <sstream>

namespace tsalign::data {

namespace {

std::string_view trim(std::string_view s) {
    while (!s.empty() && (s.front() == ' ' || s.front() == '\t')) s.remove_prefix(1);
    while (!s.empty() && (s.back() == ' ' || s.back() == '\t' || s.back() == '\r')) s.remove_suffix(1);
    return s;
}

std::vector<std::string_view> split_commas(std::string_view line) {
    std::vector<std::string_view> cells;
    std::size_t start = 0;
    while (true) {
        const auto pos = line.find(',', start);
        if (pos == std::string_view::npos) {
            cells.push_back(trim(line.substr(start)));
            break;
        }
        cells.push_back(trim(line.substr(start, pos - start)));
        start = pos + 1;
    }
    return cells;
}

bool parse_int(std::string_view s, int& out) {
    const auto [ptr, ec] = std::from_chars(s.data(), s.data() + s.size(), out);
    return ec == std::errc() && ptr == s.data() + s.size();
}

std::string row_label(std::size_t row) { return "row " + std::to_string(row); }

}  // namespace

Timestamp parse_timestamp(std::string_view text) {
    text = trim(text);
    // YYYY-MM-DD HH:MM:SS
    if (text.size() != 19 || text[4] != '-' || text[7] != '-' || text[10] != ' ' || text[13] != ':' ||
        text[16] != ':') {
        throw DataError("invalid timestamp '" + std::string(text) + "', expected YYYY-MM-DD HH:MM:SS");
    }
    int y = 0, mo = 0, d = 0, h = 0, mi = 0, s = 0;
    if (!parse_int(text.substr(0, 4), y) || !parse_int(text.substr(5, 2), mo) ||
        !parse_int(text.substr(8, 2), d) || !parse_int(text.substr(11, 2), h) ||
        !parse_int(text.substr(14, 2), mi) || !parse_int(text.substr(17, 2), s)) {
        throw DataError("invalid timestamp '" + std::string(text) + "'");
    }
    using namespace std::chrono;
    const year_month_day ymd{year{y}, month{static_cast<unsigned>(mo)}, day{static_cast<unsigned>(d)}};
    if (!ymd.ok() || h > 23 || mi > 59 || s > 59 || h < 0 || mi < 0 || s < 0) {
        throw DataError("invalid timestamp '" + std::string(text) + "'");
    }
    const auto days = sys_days{ymd}.time_since_epoch().count();
    return static_cast<Timestamp>(days) * 86400 + h * 3600 + mi * 60 + s;
}

std::string format_timestamp(Timestamp ts) {
    using namespace std::chrono;
    Timestamp days = ts / 86400;
    Timestamp rem = ts % 86400;
    if (rem < 0) {
        rem += 86400;
        --days;
    }
    const year_month_day ymd{sys_days{std::chrono::days{days}}};
    char buf[32];
    std::snprintf(buf, sizeof(buf), "%04d-%02u-%02u %02d:%02d:%02d", static_cast<int>(ymd.year()),
                  static_cast<unsigned>(ymd.month()), static_cast<unsigned>(ymd.day()),
                  static_cast<int>(rem / 3600), static_cast<int>((rem % 3600) / 60), static_cast<int>(rem % 60));
    return buf;
}

RawSeries RawSeries::slice(Index begin, Index count) const {
    if (begin < 0 || count < 0 || begin + count > length()) {
        throw DataError("slice [" + std::to_string(begin) + ", " + std::to_string(begin + count) +
                        ") out of range for series of length " + std::to_string(length()));
    }
    RawSeries out;
    out.timestamps.assign(timestamps.begin() + begin, timestamps.begin() + begin + count);
    out.values = values.middleRows(begin, count);
    out.feature_names = feature_names;
    out.sampling_interval = sampling_interval;
    return out;
}

void RawSeries::validate() const {
    if (length() < 1 || channels() < 1) throw DataError("series must have at least one row and one channel");
    if (static_cast<Index>(timestamps.size()) != length()) throw DataError("timestamp count does not match rows");
    if (static_cast<Index>(feature_names.size()) != channels()) {
        throw DataError("feature name count does not match channels");
    }
    if (!values.allFinite()) throw DataError("series contains non-finite values");
    if (length() > 1 && sampling_interval <= 0) throw DataError("sampling interval must be positive");
    for (std::size_t i = 1; i < timestamps.size(); ++i) {
        if (timestamps[i] - timestamps[i - 1] != sampling_interval) {
            throw DataError("timestamps are not evenly spaced at index " + std::to_string(i));
        }
    }
}

void SplitSpec::validate() const {
    for (double r : {train_ratio, val_ratio, test_ratio}) {
        if (!(r >= 0.0 && r <= 1.0)) throw DataError("split ratios must lie in [0, 1]");
    }
    if (std::abs(train_ratio + val_ratio + test_ratio - 1.0) > 1e-9) {
        throw DataError("split ratios must sum to 1");
    }
    if (!(few_shot_fraction > 0.0 && few_shot_fraction <= 1.0)) {
        throw DataError("few-shot fraction must lie in (0, 1]");
    }
}

void SynthSpec::validate() const {
    if (length < 1) throw DataError("synthetic length must be >= 1");
    if (channels < 1) throw DataError("synthetic channel count must be >= 1");
    if (sampling_interval <= 0) throw DataError("synthetic sampling interval must be positive");
    for (const auto& c : components) {
        if (c.kind == SynthComponent::Kind::Sine && !(c.period_steps >= 2.0)) {
            throw DataError("sine period_steps must be >= 2");
        }
        if (c.kind == SynthComponent::Kind::Noise && !(c.sigma >= 0.0)) {
            throw DataError("noise sigma must be >= 0");
        }
    }
}

RawSeries load_csv(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) throw DataError("cannot open data file " + path.string());

    std::string line;
    if (!std::getline(in, line)) throw DataError(path.string() + ": empty file");
    if (line.size() >= 3 && static_cast<unsigned char>(line[0]) == 0xEF) line.erase(0, 3);  // UTF-8 BOM
    const auto header = split_commas(line);
    if (header.empty() || header[0] != "date") {
        throw DataError(path.string() + ": first header cell must be 'date'");
    }
    if (header.size() < 2) throw DataError(path.string() + ": no value columns");

    RawSeries series;
    for (std::size_t c = 1; c < header.size(); ++c) series.feature_names.emplace_back(header[c]);
    const std::size_t channels = header.size() - 1;

    std::vector<double> flat;
    std::size_t row = 0;
    while (std::getline(in, line)) {
        if (trim(line).empty()) continue;
        ++row;
        const auto cells = split_commas(line);
        if (cells.size() != header.size()) {
            throw DataError(path.string() + ": " + row_label(row) + " has " + std::to_string(cells.size()) +
                            " cells, expected " + std::to_string(header.size()));
        }
        try {
            series.timestamps.push_back(parse_timestamp(cells[0]));
        } catch (const DataError& e) {
            throw DataError(path.string() + ": " + row_label(row) + ": " + e.what());
        }
        for (std::size_t c = 1; c < cells.size(); ++c) {
            double v = 0.0;
            const auto cell = cells[c];
            const auto [ptr, ec] = std::from_chars(cell.data(), cell.data() + cell.size(), v);
            if (cell.empty() || ec != std::errc() || ptr != cell.data() + cell.size() || !std::isfinite(v)) {
                throw DataError(path.string() + ": " + row_label(row) + ": non-numeric cell '" +
                                std::string(cell) + "' in column '" + series.feature_names[c - 1] + "'");
            }
            flat.push_back(v);
        }
    }
    if (row == 0) throw DataError(path.string() + ": no data rows");

    if (row >= 2) {
        series.sampling_interval = series.timestamps[1] - series.timestamps[0];
        if (series.sampling_interval <= 0) {
            throw DataError(path.string() + ": " + row_label(2) + ": timestamps not strictly increasing");
        }
        for (std::size_t i = 2; i < series.timestamps.size(); ++i) {
            const auto delta = series.timestamps[i] - series.timestamps[i - 1];
            if (delta <= 0) {
                throw DataError(path.string() + ": " + row_label(i + 1) +
                                ": uneven spacing, timestamps not strictly increasing");
            }
            if (delta != series.sampling_interval) {
                throw DataError(path.string() + ": " + row_label(i + 1) + ": uneven spacing, step " +
                                std::to_string(delta) + "s vs " + std::to_string(series.sampling_interval) + "s");
            }
        }
    }

    series.values = Eigen::Map<const Matrix>(flat.data(), static_cast<Index>(row), static_cast<Index>(channels));
    return series;
}

void write_csv(const RawSeries& series, const std::filesystem::path& path) {
    std::ostringstream out;
    out << "date";
    for (const auto& name : series.feature_names) out << ',' << name;
    out << '\n';
    out << std::setprecision(17);
    for (Index t = 0; t < series.length(); ++t) {
        out << format_timestamp(series.timestamps[static_cast<std::size_t>(t)]);
        for (Index c = 0; c < series.channels(); ++c) out << ',' << series.values(t, c);
        out << '\n';
    }
    std::ofstream file(path, std::ios::binary | std::ios::trunc);
    if (!file) throw DataError("cannot write " + path.string());
    file << out.str();
    if (!file) throw DataError("failed writing " + path.string());
}

Splits chronological_split(const RawSeries& series, const SplitSpec& spec) {
    spec.validate();
    const Index t = series.length();
    if (t < 3) throw DataError("series needs at least 3 rows to split");
    const auto n_train = static_cast<Index>(std::floor(static_cast<double>(t) * spec.train_ratio));
    const auto n_val = static_cast<Index>(std::floor(static_cast<double>(t) * spec.val_ratio));
    const Index n_test = t - n_train - n_val;
    if (n_train < 1 || n_val < 1 || n_test < 1) {
        throw DataError("split produces an empty segment (train " + std::to_string(n_train) + ", val " +
                        std::to_string(n_val) + ", test " + std::to_string(n_test) + ")");
    }
    return {series.slice(0, n_train), series.slice(n_train, n_val), series.slice(n_train + n_val, n_test)};
}

RawSeries few_shot_prefix(const RawSeries& train, double fraction) {
    if (!(fraction > 0.0 && fraction <= 1.0)) throw DataError("few-shot fraction must lie in (0, 1]");
    const auto n = static_cast<Index>(std::floor(static_cast<double>(train.length()) * fraction));
    if (n < 1) throw DataError("few-shot prefix is empty");
    return train.slice(0, n);
}

std::vector<Window> sliding_windows(const RawSeries& series, Index input_len, Index output_len) {
    if (input_len < 1 || output_len < 0) throw DataError("invalid window lengths");
    const Index total = input_len + output_len;
    if (series.length() < total) {
        throw DataError("series of length " + std::to_string(series.length()) + " is too short for windows of " +
                        std::to_string(total));
    }
    const Index count = series.length() - total + 1;
    std::vector<Window> windows;
    windows.reserve(static_cast<std::size_t>(count));
    for (Index k = 0; k < count; ++k) {
        Window w;
        w.x_in = series.values.middleRows(k, input_len);
        w.x_out = series.values.middleRows(k + input_len, output_len);
        w.in_timestamps.assign(series.timestamps.begin() + k, series.timestamps.begin() + k + input_len);
        w.start_index = k;
        windows.push_back(std::move(w));
    }
    return windows;
}

RawSeries generate_synthetic(const SynthSpec& spec) {
    spec.validate();
    constexpr double kTwoPi = 6.283185307179586476925286766559;
    RawSeries out;
    out.sampling_interval = spec.sampling_interval;
    out.values = Matrix::Zero(spec.length, spec.channels);
    out.timestamps.resize(static_cast<std::size_t>(spec.length));
    for (Index t = 0; t < spec.length; ++t) {
        out.timestamps[static_cast<std::size_t>(t)] = spec.start_timestamp + t * spec.sampling_interval;
    }
    for (Index c = 0; c < spec.channels; ++c) out.feature_names.push_back("ch" + std::to_string(c));

    for (std::size_t k = 0; k < spec.components.size(); ++k) {
        const auto& comp = spec.components[k];
        // One independent stream per noise component keeps components additive.
        Rng rng(spec.seed * 0x9E3779B97F4A7C15ULL + k);
        std::normal_distribution<double> noise(0.0, 1.0);
        for (Index c = 0; c < spec.channels; ++c) {
            for (Index t = 0; t < spec.length; ++t) {
                double v = 0.0;
                switch (comp.kind) {
                    case SynthComponent::Kind::Sine: {
                        const double shift = static_cast<double>(c) * comp.phase_steps;
                        v = comp.amplitude * std::sin(kTwoPi * (static_cast<double>(t) + shift) / comp.period_steps);
                        break;
                    }
                    case SynthComponent::Kind::Trend:
                        v = comp.slope * static_cast<double>(t);
                        break;
                    case SynthComponent::Kind::Noise:
                        v = comp.sigma * noise(rng);
                        break;
                }
                out.values(t, c) += v;
            }
        }
    }
    return out;
}

Scaler fit_scaler(const RawSeries& train) {
    constexpr double kMinStd = 1e-8;
    Scaler s;
    s.mean = train.values.colwise().mean().transpose();
    s.std.resize(train.channels());
    for (Index c = 0; c < train.channels(); ++c) {
        const double var = (train.values.col(c).array() - s.mean(c)).square().mean();
        double sd = std::sqrt(var);
        if (sd < kMinStd) {
            std::cerr << "warning: channel " << c << " is constant in the training split; using unit scale\n";
            sd = 1.0;
        }
        s.std(c) = sd;
    }
    return s;
}

RawSeries apply_scaler(const RawSeries& series, const Scaler& scaler) {
    if (scaler.mean.size() != series.channels()) throw ShapeError("scaler channel count mismatch");
    RawSeries out = series;
    for (Index c = 0; c < series.channels(); ++c) {
        out.values.col(c) = (series.values.col(c).array() - scaler.mean(c)) / scaler.std(c);
    }
    return out;
}

Matrix invert_scaler(const Matrix& values, const Scaler& scaler) {
    if (scaler.mean.size() != values.cols()) throw ShapeError("scaler channel count mismatch");
    Matrix out = values;
    for (Index c = 0; c < values.cols(); ++c) {
        out.col(c) = values.col(c).array() * scaler.std(c) + scaler.mean(c);
    }
    return out;
}

PreparedData prepare(const RawSeries& series, const SplitSpec& spec) {
    auto splits = chronological_split(series, spec);
    PreparedData out;
    out.full_train_rows = splits.train.length();
    out.scaler = fit_scaler(splits.train);
    out.train = few_shot_prefix(apply_scaler(splits.train, out.scaler), spec.few_shot_fraction);
    out.val = apply_scaler(splits.val, out.scaler);
    out.test = apply_scaler(splits.test, out.scaler);
    return out;
}

}  // namespace tsalign::data
