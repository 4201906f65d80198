#pragma once

#include <filesystem>

#include "hippofuse/model.hpp"

namespace hippofuse {

// Binary network checkpoint: versioned header, the network configuration as
// JSON, the flat trainable parameter vector and the batch-norm running
// statistics, all little-endian float32. Byte layout in docs/FORMATS.md.
void save_checkpoint(const std::filesystem::path& path,
                     const FusionNetwork<float>& net);

FusionNetwork<float> load_checkpoint(const std::filesystem::path& path);

}  // namespace hippofuse
