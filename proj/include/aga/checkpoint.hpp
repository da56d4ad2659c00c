#pragma once

#include <cstdint>
#include <string>

#include "aga/config.hpp"
#include "aga/objectives.hpp"

namespace aga {

constexpr uint32_t kCheckpointFormatVersion = 1;

/// Single binary file: magic, version, effective-config JSON (with the
/// runtime vocabulary size), then named parameter arrays with shapes for the
/// online and momentum models. Little-endian, 64-bit floats.
void save_checkpoint(const std::string& path, const RunConfig& config, const ModelPair& pair);

struct Checkpoint {
    RunConfig config;
    size_t vocab_size = 0;
    ModelPair pair;
};

Checkpoint load_checkpoint(const std::string& path);

} // namespace aga
