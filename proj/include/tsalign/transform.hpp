#pragma once

#include "tsalign/common.hpp"

#include <span>
#include <vector>

namespace tsalign::transform {

inline constexpr double kNormEpsilon = 1e-5;

/// Per-window, per-channel statistics. std already includes the epsilon.
struct NormStats {
    Vector mean;
    Vector std;
};

/// Trainable per-channel affine shared by RevIN normalization and denormalization.
struct RevINParams {
    Param gamma;  // 1 x C
    Param beta;   // 1 x C

    RevINParams() = default;
    explicit RevINParams(Index channels);
    Index channels() const { return gamma.value.cols(); }
};

/// Overlapping patches of one univariate channel.
struct PatchGrid {
    Matrix patches;  // T_p x P
    std::vector<Timestamp> patch_start_timestamps;
    // Every timestamp of the source window; patch j covers [j*S, j*S + P).
    std::vector<Timestamp> source_timestamps;
    Index patch_len = 0;
    Index stride = 0;

    Index num_patches() const { return patches.rows(); }
};

struct ShiftedPair {
    Matrix inputs;   // (T_p - 1) x P
    Matrix targets;  // (T_p - 1) x P
};

Index num_patches(Index input_len, Index patch_len, Index stride);

NormStats compute_stats(const Matrix& x);
std::pair<Matrix, NormStats> instance_normalize(const Matrix& x_in);

std::pair<Matrix, NormStats> revin_normalize(const Matrix& x_in, const RevINParams& params);
Matrix revin_denormalize(const Matrix& y, const NormStats& stats, const RevINParams& params);

std::vector<Vector> channel_independence(const Matrix& x);
Matrix stack_channels(const std::vector<Vector>& series);

PatchGrid patchify(std::span<const double> series, Index patch_len, Index stride,
                   std::span<const Timestamp> timestamps);
ShiftedPair make_shift_targets(const PatchGrid& grid);

/// Adjoint of patchify: scatters patch gradients back onto the source series.
Vector patchify_backward(const Matrix& d_patches, Index input_len, Index stride);

}  // namespace tsalign::transform
