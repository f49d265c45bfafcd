#pragma once

#include "tsalign/backbone.hpp"
#include "tsalign/common.hpp"

#include <filesystem>
#include <map>
#include <string>
#include <vector>

namespace tsalign::checkpoint {

inline constexpr int kFormatVersion = 1;

struct TensorRecord {
    std::string name;
    ParamGroup group = ParamGroup::Encoder;
    bool trainable = false;
    Matrix value;
};

/// Plain-text manifest followed by a raw payload of little-endian float64 values, row-major.
///
///   TSALIGN-CHECKPOINT <version>
///   stage <tag>
///   meta <key> <value>                                 (repeated)
///   tensor <name> <rows> <cols> <group> <trainable> <byte-offset>   (repeated)
///   payload <byte-count>
///   <payload bytes>
struct Checkpoint {
    int version = kFormatVersion;
    std::string stage;
    std::map<std::string, std::string> meta;
    std::vector<TensorRecord> tensors;

    const TensorRecord* find(const std::string& name) const;
    const TensorRecord& require(const std::string& name) const;
    const std::string& meta_value(const std::string& key) const;
    Index meta_int(const std::string& key) const;
    double meta_double(const std::string& key) const;

    void add(const Param& p);
    void set_meta(const std::string& key, const std::string& value) { meta[key] = value; }
    void set_meta(const std::string& key, Index value) { meta[key] = std::to_string(value); }
    void set_meta(const std::string& key, double value);
};

void save(const Checkpoint& ckpt, const std::filesystem::path& path);
Checkpoint load(const std::filesystem::path& path);
/// Reads and validates the manifest only; tensor values are left empty.
Checkpoint read_manifest(const std::filesystem::path& path);
std::string format_manifest(const Checkpoint& ckpt);

/// Copies value and trainable flag from the record; shapes must match.
void restore(Param& p, const Checkpoint& ckpt);

void write_backbone(const backbone::BackboneState& state, Checkpoint& ckpt);
backbone::BackboneState read_backbone(const Checkpoint& ckpt, Index first_layers);

/// Loads blocks 0..first_layers-1 and the final layer norm of a stored backbone.
backbone::BackboneState load_checkpoint(const std::filesystem::path& path, Index first_layers);

}  // namespace tsalign::checkpoint
