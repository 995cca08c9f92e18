#pragma once

#include "spagan/config.hpp"
#include "spagan/model_set.hpp"

#include <filesystem>
#include <stdexcept>

namespace spagan {

class CheckpointError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

/// Checkpoint container, little-endian:
///
///   "SPAGANCK"  u32 version (=1)
///   u64 n, n bytes of `key = value` metadata (the full TrainConfig plus
///       step, adam_steps.{G,F,DX,DY})
///   u32 tensor count, then per tensor:
///       u32 name length, name, u32 rows, u32 cols, rows*cols float32 (row-major)
///   u64 FNV-1a hash of every preceding byte
///
/// Weight names are `{G,F,DX,DY}.<layer>.<weight|bias>`; Adam moments are
/// stored as `adam.m.<weight name>` and `adam.v.<weight name>`.
inline constexpr std::uint32_t kCheckpointVersion = 1;

template <typename Scalar>
void saveCheckpoint(const std::filesystem::path& path, ModelSet<Scalar>& models, const TrainConfig& cfg);

struct CheckpointHeader {
    TrainConfig config;
    long step = 0;
};

CheckpointHeader readCheckpointHeader(const std::filesystem::path& path);

/// Rebuilds the networks described by the stored config and restores every tensor.
template <typename Scalar>
ModelSet<Scalar> loadCheckpoint(const std::filesystem::path& path, TrainConfig* config = nullptr);

} // namespace spagan
