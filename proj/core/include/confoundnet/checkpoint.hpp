#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "confoundnet/network.hpp"
#include "confoundnet/trainer.hpp"

namespace confoundnet {

inline constexpr std::uint32_t kCheckpointVersion = 1;

struct Checkpoint {
  Network net;
  HyperParams hp;
  Metrics metrics;
  std::vector<std::string> class_names;
};

/// Binary container:
///
///   "CFNTCKPT"  u32 version  u64 header length  header JSON
///   float64 payload of every tensor listed in the header, in order
///   u64 FNV-1a checksum of everything before it
///
/// All integers little-endian. The header records the network config, seed,
/// hyperparameters, metrics, class names and each tensor's name and shape.
void checkpoint_save(const Network& net, const HyperParams& hp, const Metrics& metrics,
                     const std::filesystem::path& path,
                     const std::vector<std::string>& class_names = {});

/// Throws FormatError on a bad magic, version mismatch, truncation, checksum
/// failure or inconsistent shapes. Nothing is returned on failure.
Checkpoint checkpoint_load(const std::filesystem::path& path);

std::string checkpoint_serialize(const Network& net, const HyperParams& hp, const Metrics& metrics,
                                 const std::vector<std::string>& class_names);
Checkpoint checkpoint_deserialize(const std::string& bytes);

}  // namespace confoundnet
