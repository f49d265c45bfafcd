#include "tsalign/common.hpp"

#include <array>

namespace tsalign {

namespace {
constexpr std::array<std::pair<ParamGroup, std::string_view>, 7> kGroupNames{{
    {ParamGroup::LayerNorm, "layer_norm"},
    {ParamGroup::LoRA, "lora"},
    {ParamGroup::Encoder, "encoder"},
    {ParamGroup::Head, "head"},
    {ParamGroup::RevIN, "revin"},
    {ParamGroup::Attention, "attention"},
    {ParamGroup::FeedForward, "feed_forward"},
}};
}  // namespace

std::string_view to_string(ParamGroup group) {
    for (const auto& [g, name] : kGroupNames) {
        if (g == group) return name;
    }
    return "unknown";
}

ParamGroup parse_param_group(std::string_view name) {
    for (const auto& [g, n] : kGroupNames) {
        if (n == name) return g;
    }
    throw ConfigError("unknown parameter group '" + std::string(name) + "'");
}

void fill_normal(Matrix& m, double stddev, Rng& rng) {
    std::normal_distribution<double> dist(0.0, stddev);
    for (Index i = 0; i < m.size(); ++i) m.data()[i] = dist(rng);
}

void fill_uniform(Matrix& m, double bound, Rng& rng) {
    std::uniform_real_distribution<double> dist(-bound, bound);
    for (Index i = 0; i < m.size(); ++i) m.data()[i] = dist(rng);
}

double pairwise_sum(const double* values, std::size_t n) {
    if (n <= 8) {
        double s = 0.0;
        for (std::size_t i = 0; i < n; ++i) s += values[i];
        return s;
    }
    const std::size_t half = n / 2;
    return pairwise_sum(values, half) + pairwise_sum(values + half, n - half);
}

}  // namespace tsalign
