#include "test_support.hpp"

#include "tsalign/transform.hpp"

#include <doctest.h>

#include <random>

using namespace tsalign;
using namespace tsalign::transform;

namespace {

Matrix random_matrix(Index rows, Index cols, std::mt19937_64& rng, double scale = 1.0) {
    std::normal_distribution<double> nd(0.0, scale);
    Matrix m(rows, cols);
    for (Index i = 0; i < m.size(); ++i) m.data()[i] = nd(rng);
    return m;
}

std::vector<Timestamp> hourly(Index n) {
    std::vector<Timestamp> ts;
    for (Index i = 0; i < n; ++i) ts.push_back(1467331200 + 3600 * i);
    return ts;
}

// Independent statistics: two-pass population mean/std.
std::pair<double, double> naive_stats(const Matrix& x, Index c) {
    double s = 0.0;
    for (Index t = 0; t < x.rows(); ++t) s += x(t, c);
    const double mean = s / static_cast<double>(x.rows());
    double v = 0.0;
    for (Index t = 0; t < x.rows(); ++t) v += (x(t, c) - mean) * (x(t, c) - mean);
    return {mean, std::sqrt(v / static_cast<double>(x.rows()))};
}

}  // namespace

TEST_CASE("instance_normalize on [1,2,3]") {
    Matrix x(3, 1);
    x << 1, 2, 3;
    const auto [z, stats] = instance_normalize(x);
    const double sd = std::sqrt(2.0 / 3.0 + kNormEpsilon);
    CHECK(z(0, 0) == doctest::Approx(-1.0 / sd).epsilon(1e-12));
    CHECK(z(1, 0) == 0.0);
    CHECK(z(2, 0) == doctest::Approx(1.22474).epsilon(1e-4));
    const auto [m, s] = naive_stats(x, 0);
    CHECK(stats.mean(0) == doctest::Approx(m));
    CHECK(stats.std(0) == doctest::Approx(std::sqrt(s * s + kNormEpsilon)));
}

TEST_CASE("instance_normalize maps a constant channel to zeros") {
    Matrix x = Matrix::Constant(4, 1, 5.0);
    CHECK(instance_normalize(x).first.cwiseAbs().maxCoeff() == 0.0);
}

TEST_CASE("instance_normalize output statistics") {
    std::mt19937_64 rng(1);
    for (int trial = 0; trial < 20; ++trial) {
        Matrix x = random_matrix(64, 3, rng, 5.0);
        x.col(1).array() += 100.0;
        const auto z = instance_normalize(x).first;
        for (Index c = 0; c < 3; ++c) {
            const auto [m, s] = naive_stats(z, c);
            CHECK(std::abs(m) < 1e-6);
            CHECK(std::abs(s - 1.0) < 1e-4);
        }
    }
}

TEST_CASE("revin affine definition and identity round trip") {
    std::mt19937_64 rng(2);
    const Matrix x = random_matrix(32, 2, rng, 3.0);
    RevINParams identity(2);
    const auto [z, stats] = revin_normalize(x, identity);
    CHECK((revin_denormalize(z, stats, identity) - x).cwiseAbs().maxCoeff() < 1e-5);

    RevINParams aff(2);
    aff.gamma.value.setConstant(2.0);
    aff.beta.value.setConstant(1.0);
    const auto [za, sa] = revin_normalize(x, aff);
    CHECK((za - (2.0 * z.array() + 1.0).matrix()).cwiseAbs().maxCoeff() < 1e-12);

    aff.gamma.value(0, 1) = 1e-9;
    CHECK_THROWS(revin_denormalize(za, sa, aff));
}

TEST_CASE("revin round trip over random windows and affines") {
    std::mt19937_64 rng(3);
    std::uniform_real_distribution<double> mag(1e-3, 3.0);
    std::bernoulli_distribution sign(0.5);
    double worst = 0.0;
    for (int trial = 0; trial < 100; ++trial) {
        const Index c = 1 + trial % 4;
        Matrix x = random_matrix(48, c, rng, 10.0);
        RevINParams p(c);
        for (Index j = 0; j < c; ++j) {
            p.gamma.value(0, j) = (sign(rng) ? 1.0 : -1.0) * mag(rng);
            p.beta.value(0, j) = std::normal_distribution<double>(0.0, 2.0)(rng);
        }
        const auto [z, stats] = revin_normalize(x, p);
        worst = std::max(worst, (revin_denormalize(z, stats, p) - x).cwiseAbs().maxCoeff());
    }
    CHECK(worst < 1e-5);
}

TEST_CASE("channel_independence splits and restacks columns") {
    Matrix x(4, 3);
    x << 1, 2, 3, 4, 5, 6, 7, 8, 9, 10, 11, 12;
    const auto parts = channel_independence(x);
    REQUIRE(parts.size() == 3);
    CHECK(parts[1].size() == 4);
    CHECK(testing::bit_identical(parts[1], x.col(1)));
    CHECK(testing::bit_identical(stack_channels(parts), x));
    Matrix one = x.col(0);
    const auto single = channel_independence(one);
    REQUIRE(single.size() == 1);
    CHECK(testing::bit_identical(single[0], one));
}

TEST_CASE("patch counts for the reference settings") {
    CHECK(num_patches(512, 16, 8) == 63);
    CHECK(num_patches(336, 16, 8) == 41);
    CHECK(num_patches(512, 12, 12) == 42);
    CHECK_THROWS(num_patches(8, 16, 8));
    CHECK_THROWS(num_patches(32, 8, 0));
}

TEST_CASE("patchify matches a naive slicing oracle") {
    std::mt19937_64 rng(4);
    for (int trial = 0; trial < 50; ++trial) {
        const Index p = std::uniform_int_distribution<Index>(1, 64)(rng);
        const Index t_in = std::uniform_int_distribution<Index>(p, 1024)(rng);
        const Index s = std::uniform_int_distribution<Index>(1, 32)(rng);
        Vector series(t_in);
        for (Index i = 0; i < t_in; ++i) series(i) = std::normal_distribution<double>()(rng);
        const auto ts = hourly(t_in);
        const auto grid = patchify(std::span<const double>(series.data(), t_in), p, s, ts);
        Index expected_rows = 0;
        for (Index start = 0; start + p <= t_in; start += s) {
            for (Index i = 0; i < p; ++i) REQUIRE(grid.patches(expected_rows, i) == series(start + i));
            CHECK(grid.patch_start_timestamps[static_cast<std::size_t>(expected_rows)] == ts[static_cast<std::size_t>(start)]);
            ++expected_rows;
        }
        CHECK(grid.num_patches() == expected_rows);
        CHECK(grid.num_patches() == (t_in - p) / s + 1);
    }
}

TEST_CASE("patchify rejects a window shorter than a patch") {
    Vector v = Vector::Zero(4);
    const auto ts = hourly(4);
    CHECK_THROWS(patchify(std::span<const double>(v.data(), 4), 8, 4, ts));
}

TEST_CASE("make_shift_targets on three patches") {
    PatchGrid g;
    g.patches.resize(3, 2);
    g.patches << 1, 2, 3, 4, 5, 6;
    g.patch_len = 2;
    g.stride = 2;
    const auto pair = make_shift_targets(g);
    CHECK(testing::bit_identical(pair.inputs, g.patches.topRows(2)));
    CHECK(testing::bit_identical(pair.targets, g.patches.bottomRows(2)));
    PatchGrid one;
    one.patches = Matrix::Ones(1, 2);
    CHECK_THROWS(make_shift_targets(one));
}

TEST_CASE("shift targets of overlapping patches agree with a direct slice oracle") {
    std::mt19937_64 rng(5);
    for (int trial = 0; trial < 30; ++trial) {
        const Index p = std::uniform_int_distribution<Index>(2, 16)(rng);
        const Index s = std::uniform_int_distribution<Index>(1, p - 1)(rng);
        const Index t_in = p + s * std::uniform_int_distribution<Index>(1, 20)(rng);
        Vector x(t_in);
        for (Index i = 0; i < t_in; ++i) x(i) = std::normal_distribution<double>()(rng);
        const auto grid = patchify(std::span<const double>(x.data(), t_in), p, s, hourly(t_in));
        const auto pair = make_shift_targets(grid);
        for (Index j = 0; j < pair.targets.rows(); ++j) {
            CHECK(testing::bit_identical(pair.targets.row(j), grid.patches.row(j + 1)));
            for (Index i = 0; i < p; ++i) CHECK(pair.targets(j, i) == x((j + 1) * s + i));
            // Overlap: the first P - S target values are the last P - S input values.
            for (Index i = 0; i < p - s; ++i) CHECK(pair.targets(j, i) == pair.inputs(j, i + s));
        }
    }
}

TEST_CASE("patchify_backward is the adjoint of patchify") {
    std::mt19937_64 rng(6);
    const Index t_in = 37, p = 8, s = 3;
    Vector x(t_in);
    for (Index i = 0; i < t_in; ++i) x(i) = std::normal_distribution<double>()(rng);
    const auto grid = patchify(std::span<const double>(x.data(), t_in), p, s, hourly(t_in));
    const Matrix g = random_matrix(grid.num_patches(), p, rng);
    const Vector back = patchify_backward(g, t_in, s);
    CHECK(back.size() == t_in);
    CHECK(std::abs(grid.patches.cwiseProduct(g).sum() - x.dot(back)) < 1e-10);
}
