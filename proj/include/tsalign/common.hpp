#pragma once

#include <Eigen/Dense>

#include <cstdint>
#include <random>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

namespace tsalign {

// Row-major storage so tensors serialize in the order they are indexed.
using Matrix = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using Vector = Eigen::VectorXd;
using RowVector = Eigen::RowVectorXd;
using Index = Eigen::Index;
using Timestamp = std::int64_t;  // epoch seconds, timezone-naive
using Rng = std::mt19937_64;

struct Error : std::runtime_error {
    using std::runtime_error::runtime_error;
};
struct DataError : Error {
    using Error::Error;
};
struct ShapeError : Error {
    using Error::Error;
};
struct CheckpointError : Error {
    using Error::Error;
};
struct ConfigError : Error {
    using Error::Error;
};
struct TrainingError : Error {
    using Error::Error;
};

// Trainability is assigned per group by a FreezePolicy.
enum class ParamGroup {
    LayerNorm,
    LoRA,
    Encoder,
    Head,
    RevIN,
    Attention,
    FeedForward,
};

std::string_view to_string(ParamGroup group);
ParamGroup parse_param_group(std::string_view name);

struct Param {
    std::string name;
    ParamGroup group = ParamGroup::Encoder;
    bool trainable = false;
    Matrix value;
    Matrix grad;

    Param() = default;
    Param(std::string name_, ParamGroup group_, Index rows, Index cols)
        : name(std::move(name_)), group(group_), value(Matrix::Zero(rows, cols)),
          grad(Matrix::Zero(rows, cols)) {}

    Index size() const { return value.size(); }
    void zero_grad() { grad.setZero(value.rows(), value.cols()); }
};

using ParamList = std::vector<Param*>;

void fill_normal(Matrix& m, double stddev, Rng& rng);
void fill_uniform(Matrix& m, double bound, Rng& rng);

// Pairwise summation keeps reductions independent of accumulation order
// for a fixed input sequence.
double pairwise_sum(const double* values, std::size_t n);
inline double pairwise_sum(const std::vector<double>& values) {
    return pairwise_sum(values.data(), values.size());
}

}  // namespace tsalign
