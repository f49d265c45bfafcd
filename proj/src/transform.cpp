#include "tsalign/transform.hpp"

#include <cmath>
#include <string>

namespace tsalign::transform {

RevINParams::RevINParams(Index channels)
    : gamma("revin.gamma", ParamGroup::RevIN, 1, channels), beta("revin.beta", ParamGroup::RevIN, 1, channels) {
    gamma.value.setOnes();
}

Index num_patches(Index input_len, Index patch_len, Index stride) {
    if (patch_len < 1 || stride < 1) throw ShapeError("patch length and stride must be >= 1");
    if (input_len < patch_len) {
        throw ShapeError("input length " + std::to_string(input_len) + " is shorter than patch length " +
                         std::to_string(patch_len));
    }
    return (input_len - patch_len) / stride + 1;
}

NormStats compute_stats(const Matrix& x) {
    NormStats stats;
    stats.mean = x.colwise().mean().transpose();
    stats.std.resize(x.cols());
    for (Index c = 0; c < x.cols(); ++c) {
        const double var = (x.col(c).array() - stats.mean(c)).square().mean();
        stats.std(c) = std::sqrt(var + kNormEpsilon);
    }
    return stats;
}

std::pair<Matrix, NormStats> instance_normalize(const Matrix& x_in) {
    if (x_in.rows() < 2) throw ShapeError("instance normalization needs at least 2 time steps");
    NormStats stats = compute_stats(x_in);
    Matrix out(x_in.rows(), x_in.cols());
    for (Index c = 0; c < x_in.cols(); ++c) {
        out.col(c) = (x_in.col(c).array() - stats.mean(c)) / stats.std(c);
    }
    return {std::move(out), std::move(stats)};
}

std::pair<Matrix, NormStats> revin_normalize(const Matrix& x_in, const RevINParams& params) {
    if (params.channels() != x_in.cols()) throw ShapeError("RevIN channel count mismatch");
    auto [z, stats] = instance_normalize(x_in);
    for (Index c = 0; c < z.cols(); ++c) {
        z.col(c) = z.col(c).array() * params.gamma.value(0, c) + params.beta.value(0, c);
    }
    return {std::move(z), std::move(stats)};
}

Matrix revin_denormalize(const Matrix& y, const NormStats& stats, const RevINParams& params) {
    if (params.channels() != y.cols() || stats.mean.size() != y.cols()) {
        throw ShapeError("RevIN channel count mismatch");
    }
    Matrix out(y.rows(), y.cols());
    for (Index c = 0; c < y.cols(); ++c) {
        const double g = params.gamma.value(0, c);
        if (std::abs(g) < 1e-8) {
            throw ShapeError("RevIN gamma for channel " + std::to_string(c) + " is not invertible");
        }
        out.col(c) = (y.col(c).array() - params.beta.value(0, c)) / g * stats.std(c) + stats.mean(c);
    }
    return out;
}

std::vector<Vector> channel_independence(const Matrix& x) {
    std::vector<Vector> out;
    out.reserve(static_cast<std::size_t>(x.cols()));
    for (Index c = 0; c < x.cols(); ++c) out.emplace_back(x.col(c));
    return out;
}

Matrix stack_channels(const std::vector<Vector>& series) {
    if (series.empty()) return {};
    Matrix out(series.front().size(), static_cast<Index>(series.size()));
    for (std::size_t c = 0; c < series.size(); ++c) {
        if (series[c].size() != out.rows()) throw ShapeError("channels differ in length");
        out.col(static_cast<Index>(c)) = series[c];
    }
    return out;
}

PatchGrid patchify(std::span<const double> series, Index patch_len, Index stride,
                   std::span<const Timestamp> timestamps) {
    const auto input_len = static_cast<Index>(series.size());
    if (static_cast<Index>(timestamps.size()) != input_len) {
        throw ShapeError("patchify: timestamp count does not match series length");
    }
    const Index count = num_patches(input_len, patch_len, stride);
    PatchGrid grid;
    grid.patch_len = patch_len;
    grid.stride = stride;
    grid.patches.resize(count, patch_len);
    grid.patch_start_timestamps.resize(static_cast<std::size_t>(count));
    grid.source_timestamps.assign(timestamps.begin(), timestamps.end());
    for (Index j = 0; j < count; ++j) {
        const Index start = j * stride;
        for (Index i = 0; i < patch_len; ++i) grid.patches(j, i) = series[static_cast<std::size_t>(start + i)];
        grid.patch_start_timestamps[static_cast<std::size_t>(j)] = timestamps[static_cast<std::size_t>(start)];
    }
    return grid;
}

ShiftedPair make_shift_targets(const PatchGrid& grid) {
    const Index count = grid.num_patches();
    if (count < 2) throw ShapeError("shifted targets need at least 2 patches, got " + std::to_string(count));
    return {grid.patches.topRows(count - 1), grid.patches.bottomRows(count - 1)};
}

Vector patchify_backward(const Matrix& d_patches, Index input_len, Index stride) {
    Vector out = Vector::Zero(input_len);
    for (Index j = 0; j < d_patches.rows(); ++j) {
        out.segment(j * stride, d_patches.cols()) += d_patches.row(j).transpose();
    }
    return out;
}

}  // namespace tsalign::transform
