#pragma once

#include <string>

#include "relseg/models.hpp"
#include "relseg/nn.hpp"

#include <nlohmann/json.hpp>

namespace relseg {

/// On-disk model state: "RSC1" magic, u32 little-endian JSON header length,
/// JSON header (kind, spec, epsilon, seed, epoch, tensor directory), then the
/// listed tensors as consecutive RNT1 blocks.
struct Checkpoint {
    ModelKind kind = ModelKind::UnrolledLrp;
    EncoderSpec spec;
    double epsilon = 0.0;
    std::uint64_t seed = 0;
    std::size_t epoch = 0;
    Params params;
    std::vector<LayerParams> decoder;  // free-decoder kinds only
};

void save_checkpoint(const std::string& path, const Checkpoint& ckpt);
Checkpoint load_checkpoint(const std::string& path);

nlohmann::json spec_to_json(const EncoderSpec& spec);
EncoderSpec spec_from_json(const nlohmann::json& j);

}  // namespace relseg
