#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "gaitlab/silhouette.hpp"

namespace gaitlab {

inline constexpr std::uint32_t kContainerVersion = 1;

enum class StorageMode { kPacked, kPng };
enum class DirectoryLayout { kCasia, kFlat };

struct ManifestEntry {
  std::string sequence_id;
  std::optional<std::string> subject_id;
  std::optional<std::string> view;
  std::optional<std::string> condition;
  int frame_count = 0;
  int height = 0;
  int width = 0;
  std::uint64_t offset = 0;  // byte offset of the frame payload (packed)
  std::string path;          // frame directory relative to the manifest (png)
};

struct DatasetManifest {
  std::uint32_t format_version = kContainerVersion;
  StorageMode storage = StorageMode::kPacked;
  std::filesystem::path container;  // packed payload file, or manifest file for png
  std::vector<ManifestEntry> entries;
  std::vector<std::string> warnings;

  const ManifestEntry* find(const std::string& sequence_id) const;
};

/// Writes `sequences` to `out`. Packed mode produces the binary container
/// plus `<out>.manifest`; png mode writes `out` as a manifest next to a
/// `<out>.frames/` directory. Throws DuplicateSequence on id collisions.
DatasetManifest write_dataset(const std::filesystem::path& out, std::span<const GaitSequence> sequences,
                              StorageMode mode = StorageMode::kPacked);

/// Opens either a packed container (detected by its magic) or a manifest.
DatasetManifest open_dataset(const std::filesystem::path& path);

void write_manifest(const std::filesystem::path& path, const DatasetManifest& manifest);
DatasetManifest read_manifest(const std::filesystem::path& path);

GaitSequence load_sequence(const DatasetManifest& manifest, const std::string& sequence_id);
std::vector<GaitSequence> load_all(const DatasetManifest& manifest);

struct PackOptions {
  DirectoryLayout layout = DirectoryLayout::kFlat;
  StorageMode storage = StorageMode::kPacked;
  bool normalize = true;
};

/// Scans an image tree, binarizes (>127) and optionally size-normalizes each
/// frame, then writes the dataset. Sequences with no usable frames are
/// skipped and reported in `warnings`.
DatasetManifest pack_dataset(const std::filesystem::path& root_dir, const std::filesystem::path& out,
                             const PackOptions& options);

SilhouetteFrame read_frame_image(const std::filesystem::path& file);
void write_frame_image(const std::filesystem::path& file, const SilhouetteFrame& frame);

}  // namespace gaitlab
