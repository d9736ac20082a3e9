#pragma once

// Binary checkpoints of a ParameterStore.
//
// Layout (little-endian): "LADK", version u32, component u32, config digest
// u64, block count u32, then per block: name (u32 length + UTF-8), rows u32,
// cols u32, rows*cols f32. A CRC-32 of every preceding byte closes the file.
// Scalars that are not parameters (e.g. the latent scale) are stored as 1x1
// blocks whose names start with "meta.".

#include "ladiff/autograd.hpp"
#include "ladiff/config.hpp"

#include <filesystem>
#include <map>
#include <string>

namespace ladiff {

inline constexpr std::uint32_t kCheckpointVersion = 1;

using CheckpointMeta = std::map<std::string, float>;

void save_checkpoint(const std::filesystem::path& path, Component component, std::uint64_t digest,
                     const ag::ParameterStore<float>& store, const CheckpointMeta& meta = {});

/// Restores every parameter of `store` bitwise and returns the meta scalars.
/// Errors: MissingArtifactError (no file), ChecksumError (corrupt bytes),
/// FormatError (wrong magic/version/component, unknown or missing block,
/// shape mismatch; names the block and offset), DigestMismatchError (saved
/// under a different architecture config).
CheckpointMeta load_checkpoint(const std::filesystem::path& path, Component component, std::uint64_t digest,
                               ag::ParameterStore<float>& store);

}  // namespace ladiff
