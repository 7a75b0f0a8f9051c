// SPDX-License-Identifier: Apache-2.0
//
// Binary checkpoint: "KPG1", u16 version, u32 tensor count, then per tensor
// u32 name length, name, u8 rank, u64 dims, row-major f32 data (all little
// endian); a JSON trailer with config, vocabulary and counters; finally the
// u64 byte offset of the trailer.
#pragma once

#include <cstdint>
#include <filesystem>
#include <iosfwd>

#include "kpg/training.hpp"

namespace kpg {

inline constexpr std::uint16_t kCheckpointVersion = 1;

void save_checkpoint(std::ostream& out, const Checkpoint& ckpt);
/// Writes to a temporary sibling and renames it into place.
void save_checkpoint(const std::filesystem::path& path, const Checkpoint& ckpt);

/// Throws CheckpointError on bad magic, unsupported version, truncation,
/// or tensors whose names or shapes disagree with the recorded dimensions
/// and vocabulary.
Checkpoint load_checkpoint(std::istream& in);
Checkpoint load_checkpoint(const std::filesystem::path& path);

}  // namespace kpg
