#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>

#include "sembg/network.hpp"
#include "sembg/trainer.hpp"

namespace sembg {

inline constexpr std::uint32_t kCheckpointVersion = 1;

// Binary container: "SEMBGCKP", u32 version, u64 arch hash, arch JSON,
// parameters and buffers in declaration order (u64 rank, u64 extents, f32
// data), train state, optimizer state, RNG state, history JSON and a CRC32
// trailer over everything before it. Little-endian throughout.
void save_checkpoint(const std::filesystem::path& path, Network& net, const TrainState& state,
                     const History& history);

struct LoadedCheckpoint {
  Network net;
  TrainState state;
  History history;
};

// Checks magic, version and CRC in that order. When `expected_hash` is set
// the stored architecture must match it.
LoadedCheckpoint load_checkpoint(const std::filesystem::path& path,
                                 std::optional<std::uint64_t> expected_hash = std::nullopt);

}  // namespace sembg
