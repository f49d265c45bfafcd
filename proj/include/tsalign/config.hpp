#pragma once

#include "tsalign/backbone.hpp"
#include "tsalign/data.hpp"
#include "tsalign/model.hpp"
#include "tsalign/train.hpp"

#include <filesystem>
#include <optional>
#include <string>
#include <vector>

namespace tsalign::config {

enum class Transfer { Required, None };

/// Everything one CLI invocation needs. Defaults follow the reference setup
/// (T_in 512, P 16, S 8, horizons 96/192/336/720, six 768-wide blocks).
struct RunConfig {
    std::string data_path;
    std::optional<data::SynthSpec> synth;
    std::string dataset_name;

    train::ModelConfig model;
    std::vector<Index> horizons{96, 192, 336, 720};
    data::SplitSpec split;
    backbone::FreezePolicy policy = backbone::FreezePolicy::defaults();
    train::TrainConfig align;
    train::TrainConfig finetune;

    std::string backbone_checkpoint;
    Index backbone_first_layers = -1;
    Transfer transfer = Transfer::Required;
    std::string alignment_checkpoint;
    bool raw_scale_metrics = false;
    std::uint64_t seed = 2024;
    std::filesystem::path output_dir = "runs/default";

    /// Resolved data file: relative paths are taken under TSALIGN_DATA_DIR when it is set.
    std::filesystem::path resolved_data_path() const;
    void validate() const;
    /// Seeds every stage from the run seed.
    void propagate_seed();
};

RunConfig parse_run_config(std::string_view json_text);
RunConfig load_run_config(const std::filesystem::path& path);
std::string to_json(const RunConfig& config);

data::SynthSpec parse_synth_spec(std::string_view json_text);

}  // namespace tsalign::config
