#include "tsalign/encode.hpp"

#include <chrono>
#include <cmath>
#include <numeric>
#include <string>

namespace tsalign::encode {

namespace {

constexpr std::array<std::pair<TemporalAttribute, std::string_view>, 5> kAttributeNames{{
    {TemporalAttribute::MinuteOfHour, "minute_of_hour"},
    {TemporalAttribute::HourOfDay, "hour_of_day"},
    {TemporalAttribute::DayOfWeek, "day_of_week"},
    {TemporalAttribute::DayOfMonth, "day_of_month"},
    {TemporalAttribute::MonthOfYear, "month_of_year"},
}};

// Columns c * k + tap of the conv weight: the D x P slice for one tap.
Matrix tap_weights(const Matrix& w, Index tap, Index p, Index k) {
    Matrix out(w.rows(), p);
    for (Index c = 0; c < p; ++c) out.col(c) = w.col(c * k + tap);
    return out;
}

void add_tap_grad(Matrix& grad, const Matrix& g, Index tap, Index k) {
    for (Index c = 0; c < g.cols(); ++c) grad.col(c * k + tap) += g.col(c);
}

std::vector<Index> iota_indices(Index n) {
    std::vector<Index> v(static_cast<std::size_t>(n));
    std::iota(v.begin(), v.end(), Index{0});
    return v;
}

}  // namespace

int cardinality(TemporalAttribute attr) {
    switch (attr) {
        case TemporalAttribute::MinuteOfHour: return 60;
        case TemporalAttribute::HourOfDay: return 24;
        case TemporalAttribute::DayOfWeek: return 7;
        case TemporalAttribute::DayOfMonth: return 31;
        case TemporalAttribute::MonthOfYear: return 12;
    }
    return 0;
}

std::string_view to_string(TemporalAttribute attr) {
    for (const auto& [a, name] : kAttributeNames) {
        if (a == attr) return name;
    }
    return "unknown";
}

TemporalAttribute parse_temporal_attribute(std::string_view name) {
    for (const auto& [a, n] : kAttributeNames) {
        if (n == name) return a;
    }
    throw ConfigError("unknown temporal attribute '" + std::string(name) + "'");
}

TemporalAttributeSpec TemporalAttributeSpec::all() {
    TemporalAttributeSpec spec;
    for (const auto& [a, name] : kAttributeNames) spec.attributes.push_back(a);
    return spec;
}

std::string_view to_string(Pooling pooling) {
    return pooling == Pooling::SelectFirst ? "select_first" : "mean";
}

Pooling parse_pooling(std::string_view name) {
    if (name == "select_first") return Pooling::SelectFirst;
    if (name == "mean") return Pooling::Mean;
    throw ConfigError("unknown pooling '" + std::string(name) + "'");
}

void EncoderConfig::validate() const {
    if (patch_len < 1) throw ConfigError("patch length must be >= 1");
    if (dim < 1) throw ConfigError("embedding dim must be >= 1");
    if (kernel_width < 1 || kernel_width % 2 == 0) throw ConfigError("conv kernel width must be odd and >= 1");
    if (max_patches < 1) throw ConfigError("max_patches must be >= 1");
}

EncoderParams::EncoderParams(const EncoderConfig& cfg)
    : config(cfg),
      conv_weight("encoder.conv.weight", ParamGroup::Encoder, cfg.dim, cfg.patch_len * cfg.kernel_width),
      conv_bias("encoder.conv.bias", ParamGroup::Encoder, 1, cfg.dim),
      pos_table("encoder.pos_table", ParamGroup::Encoder, cfg.max_patches, cfg.dim) {
    cfg.validate();
    for (auto attr : cfg.temporal.attributes) {
        temporal_tables.emplace_back("encoder.temporal." + std::string(to_string(attr)), ParamGroup::Encoder,
                                     cardinality(attr), cfg.dim);
    }
}

void EncoderParams::init(Rng& rng) {
    // Conv follows the usual fan-in uniform init; tables use small normals.
    const double bound = 1.0 / std::sqrt(static_cast<double>(config.patch_len * config.kernel_width));
    fill_uniform(conv_weight.value, bound, rng);
    fill_uniform(conv_bias.value, bound, rng);
    fill_normal(pos_table.value, 0.02, rng);
    for (auto& table : temporal_tables) fill_normal(table.value, 0.02, rng);
}

ParamList EncoderParams::parameters() {
    ParamList out{&conv_weight, &conv_bias, &pos_table};
    for (auto& t : temporal_tables) out.push_back(&t);
    return out;
}

std::vector<const Param*> EncoderParams::parameters() const {
    const auto list = const_cast<EncoderParams*>(this)->parameters();
    return {list.begin(), list.end()};
}

std::vector<std::vector<int>> extract_calendar(std::span<const Timestamp> timestamps,
                                               const TemporalAttributeSpec& spec) {
    using namespace std::chrono;
    std::vector<std::vector<int>> out;
    out.reserve(timestamps.size());
    for (Timestamp ts : timestamps) {
        Timestamp days = ts / 86400;
        Timestamp secs = ts % 86400;
        if (secs < 0) {
            secs += 86400;
            --days;
        }
        const sys_days day_point{std::chrono::days{days}};
        const year_month_day ymd{day_point};
        const weekday wd{day_point};
        std::vector<int> row;
        row.reserve(spec.size());
        for (auto attr : spec.attributes) {
            switch (attr) {
                case TemporalAttribute::MinuteOfHour: row.push_back(static_cast<int>((secs % 3600) / 60)); break;
                case TemporalAttribute::HourOfDay: row.push_back(static_cast<int>(secs / 3600)); break;
                case TemporalAttribute::DayOfWeek: row.push_back(static_cast<int>(wd.iso_encoding()) - 1); break;
                case TemporalAttribute::DayOfMonth: row.push_back(static_cast<int>(unsigned(ymd.day())) - 1); break;
                case TemporalAttribute::MonthOfYear: row.push_back(static_cast<int>(unsigned(ymd.month())) - 1); break;
            }
        }
        out.push_back(std::move(row));
    }
    return out;
}

Matrix token_encode(const transform::PatchGrid& grid, const EncoderParams& params) {
    const Index p = params.config.patch_len;
    const Index k = params.config.kernel_width;
    if (grid.patches.cols() != p) {
        throw ShapeError("token encoder expects patch length " + std::to_string(p) + ", got " +
                         std::to_string(grid.patches.cols()));
    }
    const Index count = grid.num_patches();
    const Index pad = (k - 1) / 2;
    Matrix out = params.conv_bias.value.replicate(count, 1);
    for (Index tap = 0; tap < k; ++tap) {
        // Weight slice for this tap: D x P, columns c * k + tap.
        const Matrix w_tap = tap_weights(params.conv_weight.value, tap, p, k);
        const Index shift = tap - pad;
        const Index lo = std::max<Index>(0, -shift);
        const Index hi = std::min<Index>(count, count - shift);
        if (hi <= lo) continue;
        out.middleRows(lo, hi - lo).noalias() += grid.patches.middleRows(lo + shift, hi - lo) * w_tap.transpose();
    }
    return out;
}

Matrix token_encode_backward(const transform::PatchGrid& grid, const Matrix& d_out, EncoderParams& params) {
    const Index p = params.config.patch_len;
    const Index k = params.config.kernel_width;
    const Index count = grid.num_patches();
    const Index pad = (k - 1) / 2;
    if (params.conv_bias.trainable) params.conv_bias.grad += d_out.colwise().sum();
    Matrix d_patches = Matrix::Zero(count, p);
    for (Index tap = 0; tap < k; ++tap) {
        const Index shift = tap - pad;
        const Index lo = std::max<Index>(0, -shift);
        const Index hi = std::min<Index>(count, count - shift);
        if (hi <= lo) continue;
        const Matrix w_tap = tap_weights(params.conv_weight.value, tap, p, k);
        if (params.conv_weight.trainable) {
            const Matrix g = d_out.middleRows(lo, hi - lo).transpose() * grid.patches.middleRows(lo + shift, hi - lo);
            add_tap_grad(params.conv_weight.grad, g, tap, k);
        }
        d_patches.middleRows(lo + shift, hi - lo).noalias() += d_out.middleRows(lo, hi - lo) * w_tap;
    }
    return d_patches;
}

Matrix positional_embed(std::span<const Index> patch_indices, const EncoderParams& params) {
    const Index rows = params.pos_table.value.rows();
    Matrix out(static_cast<Index>(patch_indices.size()), params.config.dim);
    for (std::size_t j = 0; j < patch_indices.size(); ++j) {
        const Index idx = patch_indices[j];
        if (idx < 0 || idx >= rows) {
            throw ShapeError("patch index " + std::to_string(idx) + " outside positional table of " +
                             std::to_string(rows) + " rows");
        }
        out.row(static_cast<Index>(j)) = params.pos_table.value.row(idx);
    }
    return out;
}

void positional_embed_backward(std::span<const Index> patch_indices, const Matrix& d_out, EncoderParams& params) {
    if (!params.pos_table.trainable) return;
    for (std::size_t j = 0; j < patch_indices.size(); ++j) {
        params.pos_table.grad.row(patch_indices[j]) += d_out.row(static_cast<Index>(j));
    }
}

namespace {

void check_temporal(const TemporalAttributeSpec& spec, const EncoderParams& params) {
    if (spec.size() != params.temporal_tables.size()) {
        throw ShapeError("temporal spec has " + std::to_string(spec.size()) + " attributes but encoder has " +
                         std::to_string(params.temporal_tables.size()) + " tables");
    }
}

// Timestamps contributing to patch j and the weight each receives.
template <typename Fn>
void for_each_pooled(const transform::PatchGrid& grid, Pooling pooling, Fn&& fn) {
    const Index count = grid.num_patches();
    if (pooling == Pooling::SelectFirst) {
        const auto cal_ts = std::span<const Timestamp>(grid.patch_start_timestamps);
        for (Index j = 0; j < count; ++j) fn(j, cal_ts[static_cast<std::size_t>(j)], 1.0);
        return;
    }
    const double w = 1.0 / static_cast<double>(grid.patch_len);
    for (Index j = 0; j < count; ++j) {
        for (Index i = 0; i < grid.patch_len; ++i) {
            fn(j, grid.source_timestamps[static_cast<std::size_t>(j * grid.stride + i)], w);
        }
    }
}

}  // namespace

Matrix temporal_embed(const transform::PatchGrid& grid, const TemporalAttributeSpec& spec,
                      const EncoderParams& params, Pooling pooling) {
    check_temporal(spec, params);
    Matrix out = Matrix::Zero(grid.num_patches(), params.config.dim);
    if (spec.size() == 0) return out;
    for_each_pooled(grid, pooling, [&](Index j, Timestamp ts, double w) {
        const auto idx = extract_calendar(std::span<const Timestamp>(&ts, 1), spec).front();
        for (std::size_t a = 0; a < spec.size(); ++a) {
            out.row(j) += w * params.temporal_tables[a].value.row(idx[a]);
        }
    });
    return out;
}

void temporal_embed_backward(const transform::PatchGrid& grid, const TemporalAttributeSpec& spec,
                             const Matrix& d_out, EncoderParams& params, Pooling pooling) {
    check_temporal(spec, params);
    if (spec.size() == 0) return;
    for_each_pooled(grid, pooling, [&](Index j, Timestamp ts, double w) {
        const auto idx = extract_calendar(std::span<const Timestamp>(&ts, 1), spec).front();
        for (std::size_t a = 0; a < spec.size(); ++a) {
            auto& table = params.temporal_tables[a];
            if (table.trainable) table.grad.row(idx[a]) += w * d_out.row(j);
        }
    });
}

Matrix combine_embeddings(const Matrix& token, const Matrix& pos, const Matrix& temp) {
    if (token.rows() != pos.rows() || token.rows() != temp.rows() || token.cols() != pos.cols() ||
        token.cols() != temp.cols()) {
        throw ShapeError("embedding shapes differ");
    }
    return token + pos + temp;
}

Matrix encode(const transform::PatchGrid& grid, const EncoderParams& params) {
    const auto indices = iota_indices(grid.num_patches());
    return combine_embeddings(token_encode(grid, params), positional_embed(indices, params),
                              temporal_embed(grid, params.config.temporal, params, params.config.pooling));
}

Matrix encode_backward(const transform::PatchGrid& grid, const Matrix& d_embedding, EncoderParams& params) {
    const auto indices = iota_indices(grid.num_patches());
    positional_embed_backward(indices, d_embedding, params);
    temporal_embed_backward(grid, params.config.temporal, d_embedding, params, params.config.pooling);
    return token_encode_backward(grid, d_embedding, params);
}

}  // namespace tsalign::encode
