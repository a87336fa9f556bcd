#pragma once
// Binary checkpoint, all integers and reals little-endian:
//   "GESCCKPT"                         8 bytes
//   u32 version (= 1)
//   u32 n, n bytes of JSON             {"config": run config, "input_dim", "num_classes", "num_edges"}
//   u32 tensor count
//   per tensor: u32 name length, name, u64 element count
//   payload: every tensor's float64 values in table order
#include <filesystem>

#include "gesc/config.hpp"
#include "gesc/model.hpp"

namespace gesc::ckpt {

inline constexpr std::uint32_t kVersion = 1;

struct Checkpoint {
    config::RunConfig config;
    model::ModelParams params;
};

void save(const std::filesystem::path& path, const config::RunConfig& cfg,
          const model::ModelParams& params);

/// Throws DataError("io"/"parse") for unreadable or malformed files and
/// DimensionError when the shape table disagrees with the stored config.
Checkpoint load(const std::filesystem::path& path);

}  // namespace gesc::ckpt
