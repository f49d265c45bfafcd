#include "tsalign/checkpoint.hpp"

#include <bit>
#include <cstring>
#include <fstream>
#include <sstream>

namespace tsalign::checkpoint {

namespace {

constexpr const char* kMagic = "TSALIGN-CHECKPOINT";

static_assert(std::endian::native == std::endian::little, "payload I/O assumes a little-endian host");

std::string format_double(double v) {
    char buf[40];
    std::snprintf(buf, sizeof(buf), "%.17g", v);
    return buf;
}

struct ParsedFile {
    Checkpoint ckpt;
    std::vector<std::pair<std::size_t, std::size_t>> spans;  // offset, bytes per tensor
    std::size_t payload_bytes = 0;
    std::streampos payload_start;
};

ParsedFile parse_manifest(std::istream& in, const std::string& where) {
    ParsedFile parsed;
    std::string line;
    if (!std::getline(in, line)) throw CheckpointError(where + ": empty file");
    {
        std::istringstream ls(line);
        std::string magic;
        int version = 0;
        if (!(ls >> magic >> version) || magic != kMagic) throw CheckpointError(where + ": not a checkpoint file");
        if (version != kFormatVersion) {
            throw CheckpointError(where + ": unsupported format version " + std::to_string(version) +
                                  " (expected " + std::to_string(kFormatVersion) + ")");
        }
        parsed.ckpt.version = version;
    }
    std::size_t expected_offset = 0;
    while (std::getline(in, line)) {
        std::istringstream ls(line);
        std::string kind;
        ls >> kind;
        if (kind == "stage") {
            ls >> parsed.ckpt.stage;
        } else if (kind == "meta") {
            std::string key, value;
            ls >> key >> value;
            if (key.empty()) throw CheckpointError(where + ": malformed meta line");
            parsed.ckpt.meta[key] = value;
        } else if (kind == "tensor") {
            TensorRecord rec;
            Index rows = -1, cols = -1;
            std::string group;
            int trainable = -1;
            std::size_t offset = 0;
            if (!(ls >> rec.name >> rows >> cols >> group >> trainable >> offset) || rows < 0 || cols < 0 ||
                (trainable != 0 && trainable != 1)) {
                throw CheckpointError(where + ": malformed tensor line '" + line + "'");
            }
            try {
                rec.group = parse_param_group(group);
            } catch (const ConfigError& e) {
                throw CheckpointError(where + ": " + e.what());
            }
            rec.trainable = trainable == 1;
            const std::size_t bytes = static_cast<std::size_t>(rows * cols) * sizeof(double);
            if (offset != expected_offset) {
                throw CheckpointError(where + ": tensor " + rec.name + " has offset " + std::to_string(offset) +
                                      ", expected " + std::to_string(expected_offset));
            }
            expected_offset += bytes;
            rec.value.resize(rows, cols);
            parsed.spans.emplace_back(offset, bytes);
            parsed.ckpt.tensors.push_back(std::move(rec));
        } else if (kind == "payload") {
            if (!(ls >> parsed.payload_bytes)) throw CheckpointError(where + ": malformed payload line");
            if (parsed.payload_bytes != expected_offset) {
                throw CheckpointError(where + ": payload holds " + std::to_string(parsed.payload_bytes) +
                                      " bytes but manifest describes " + std::to_string(expected_offset));
            }
            parsed.payload_start = in.tellg();
            return parsed;
        } else if (!kind.empty()) {
            throw CheckpointError(where + ": unknown manifest entry '" + kind + "'");
        }
    }
    throw CheckpointError(where + ": missing payload section");
}

}  // namespace

const TensorRecord* Checkpoint::find(const std::string& name) const {
    for (const auto& t : tensors) {
        if (t.name == name) return &t;
    }
    return nullptr;
}

const TensorRecord& Checkpoint::require(const std::string& name) const {
    const auto* rec = find(name);
    if (rec == nullptr) throw CheckpointError("checkpoint is missing tensor " + name);
    return *rec;
}

const std::string& Checkpoint::meta_value(const std::string& key) const {
    const auto it = meta.find(key);
    if (it == meta.end()) throw CheckpointError("checkpoint is missing meta entry " + key);
    return it->second;
}

Index Checkpoint::meta_int(const std::string& key) const {
    try {
        return static_cast<Index>(std::stoll(meta_value(key)));
    } catch (const std::logic_error&) {
        throw CheckpointError("meta entry " + key + " is not an integer");
    }
}

double Checkpoint::meta_double(const std::string& key) const {
    try {
        return std::stod(meta_value(key));
    } catch (const std::logic_error&) {
        throw CheckpointError("meta entry " + key + " is not a number");
    }
}

void Checkpoint::add(const Param& p) {
    if (find(p.name) != nullptr) throw CheckpointError("duplicate tensor " + p.name);
    tensors.push_back({p.name, p.group, p.trainable, p.value});
}

void Checkpoint::set_meta(const std::string& key, double value) { meta[key] = format_double(value); }

std::string format_manifest(const Checkpoint& ckpt) {
    std::ostringstream out;
    out << kMagic << ' ' << ckpt.version << '\n';
    out << "stage " << (ckpt.stage.empty() ? "none" : ckpt.stage) << '\n';
    for (const auto& [k, v] : ckpt.meta) out << "meta " << k << ' ' << v << '\n';
    std::size_t offset = 0;
    for (const auto& t : ckpt.tensors) {
        out << "tensor " << t.name << ' ' << t.value.rows() << ' ' << t.value.cols() << ' ' << to_string(t.group)
            << ' ' << (t.trainable ? 1 : 0) << ' ' << offset << '\n';
        offset += static_cast<std::size_t>(t.value.size()) * sizeof(double);
    }
    out << "payload " << offset << '\n';
    return out.str();
}

void save(const Checkpoint& ckpt, const std::filesystem::path& path) {
    for (const auto& [k, v] : ckpt.meta) {
        if (k.find_first_of(" \n\t") != std::string::npos || v.find_first_of(" \n\t") != std::string::npos ||
            v.empty()) {
            throw CheckpointError("meta entry '" + k + "' must be a single non-empty token");
        }
    }
    if (!path.parent_path().empty()) std::filesystem::create_directories(path.parent_path());
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) throw CheckpointError("cannot write checkpoint " + path.string());
    out << format_manifest(ckpt);
    for (const auto& t : ckpt.tensors) {
        out.write(reinterpret_cast<const char*>(t.value.data()),
                  static_cast<std::streamsize>(t.value.size() * static_cast<Index>(sizeof(double))));
    }
    if (!out) throw CheckpointError("failed writing checkpoint " + path.string());
}

Checkpoint read_manifest(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw CheckpointError("cannot open checkpoint " + path.string());
    auto parsed = parse_manifest(in, path.string());
    for (auto& t : parsed.ckpt.tensors) t.value.setZero();
    return std::move(parsed.ckpt);
}

Checkpoint load(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw CheckpointError("cannot open checkpoint " + path.string());
    auto parsed = parse_manifest(in, path.string());
    std::vector<char> payload(parsed.payload_bytes);
    in.read(payload.data(), static_cast<std::streamsize>(payload.size()));
    if (in.gcount() != static_cast<std::streamsize>(payload.size())) {
        throw CheckpointError(path.string() + ": truncated payload");
    }
    if (in.peek() != std::char_traits<char>::eof()) {
        throw CheckpointError(path.string() + ": trailing bytes after payload");
    }
    for (std::size_t i = 0; i < parsed.ckpt.tensors.size(); ++i) {
        auto& t = parsed.ckpt.tensors[i];
        const auto [offset, bytes] = parsed.spans[i];
        if (bytes > 0) std::memcpy(t.value.data(), payload.data() + offset, bytes);
    }
    return std::move(parsed.ckpt);
}

void restore(Param& p, const Checkpoint& ckpt) {
    const auto& rec = ckpt.require(p.name);
    if (rec.value.rows() != p.value.rows() || rec.value.cols() != p.value.cols()) {
        throw CheckpointError("tensor " + p.name + " has shape " + std::to_string(rec.value.rows()) + "x" +
                              std::to_string(rec.value.cols()) + ", expected " + std::to_string(p.value.rows()) +
                              "x" + std::to_string(p.value.cols()));
    }
    p.value = rec.value;
    p.trainable = rec.trainable;
    p.zero_grad();
}

void write_backbone(const backbone::BackboneState& state, Checkpoint& ckpt) {
    const auto& cfg = state.config;
    ckpt.set_meta("backbone.layers", cfg.layers);
    ckpt.set_meta("backbone.dim", cfg.dim);
    ckpt.set_meta("backbone.heads", cfg.heads);
    ckpt.set_meta("backbone.ffn_dim", cfg.ffn_dim);
    ckpt.set_meta("backbone.max_positions", cfg.max_positions);
    ckpt.set_meta("backbone.dropout", cfg.dropout);
    ckpt.set_meta("lora.rank", state.lora_rank);
    ckpt.set_meta("lora.alpha", state.lora_alpha);
    for (const Param* p : state.parameters()) ckpt.add(*p);
}

backbone::BackboneState read_backbone(const Checkpoint& ckpt, Index first_layers) {
    backbone::BackboneConfig cfg;
    cfg.layers = ckpt.meta_int("backbone.layers");
    cfg.dim = ckpt.meta_int("backbone.dim");
    cfg.heads = ckpt.meta_int("backbone.heads");
    cfg.ffn_dim = ckpt.meta_int("backbone.ffn_dim");
    cfg.max_positions = ckpt.meta_int("backbone.max_positions");
    cfg.dropout = ckpt.meta_double("backbone.dropout");
    if (first_layers < 0) first_layers = cfg.layers;
    if (first_layers > cfg.layers) {
        throw CheckpointError("requested " + std::to_string(first_layers) + " blocks but checkpoint has only " +
                              std::to_string(cfg.layers));
    }
    cfg.layers = first_layers;
    backbone::BackboneState state(cfg);
    const Index rank = ckpt.meta_int("lora.rank");
    if (rank > 0) {
        Rng unused(0);
        backbone::attach_lora(state, rank, ckpt.meta_double("lora.alpha"), unused);
    }
    for (Param* p : state.parameters()) restore(*p, ckpt);
    return state;
}

backbone::BackboneState load_checkpoint(const std::filesystem::path& path, Index first_layers) {
    return read_backbone(load(path), first_layers);
}

}  // namespace tsalign::checkpoint
