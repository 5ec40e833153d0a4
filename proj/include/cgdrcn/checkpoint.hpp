// SPDX-License-Identifier: Apache-2.0
//
// Checkpoint archive, all integers little-endian:
//   "CGDRCNCK"                         8-byte magic
//   u32 format version (1)
//   u32 manifest length, manifest      `key = value` text (backbone, variant, sigma, version, ...)
//   u32 tensor count
//   per tensor: u32 name length, name, u32 channels, u32 rows, u32 cols, f64 values
#pragma once

#include <filesystem>
#include <stdexcept>
#include <string>
#include <vector>

#include "cgdrcn/kvfile.hpp"
#include "cgdrcn/network.hpp"

namespace cgdrcn {

inline constexpr char kCheckpointMagic[9] = "CGDRCNCK";
inline constexpr std::uint32_t kCheckpointFormat = 1;
inline constexpr const char* kLibraryVersion = "0.1.0";

class CheckpointError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

struct NamedTensor {
  std::string name;
  Tensor value;
};

struct Archive {
  KeyValues manifest;
  std::vector<NamedTensor> tensors;
};

void write_archive(const std::filesystem::path& path, const Archive& archive);
Archive read_archive(const std::filesystem::path& path);

/// Manifest keys describing the model itself.
KeyValues model_manifest(const ModelConfig& config);
ModelConfig config_from_manifest(const KeyValues& manifest);

/// `extra` entries (e.g. sigma, val_mae) are merged into the manifest.
void save_checkpoint(const std::filesystem::path& path, Model& model, const KeyValues& extra = {});

struct LoadedCheckpoint {
  Model model;
  KeyValues manifest;
};
LoadedCheckpoint load_checkpoint(const std::filesystem::path& path);

/// Copies same-named tensors from an archive into `model`; returns how many were imported.
/// A name match with a different shape is an error; unknown names are ignored.
std::size_t import_weights(Model& model, const std::filesystem::path& path);

/// Builds the model and imports `config.backbone.pretrained_weights` when set.
Model create_model(const ModelConfig& config);

}  // namespace cgdrcn
