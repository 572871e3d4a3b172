#pragma once

#include <filesystem>

#include "latentvol/volume.hpp"

namespace latentvol {

enum class VolumeFormat {
  /// `<name>.f32raw` little-endian float32 payload plus `<name>.json` sidecar.
  Native,
  /// NIfTI-1 single file (`.nii` or `.nii.gz`), read-only.
  Nifti,
  /// Pick by file extension.
  Auto,
};

VolumeFormat parse_volume_format(std::string_view s);

/// Loads a volume. For the native format `path` may name the payload, the
/// sidecar, or the common stem. A missing spacing entry yields (1,1,1) and
/// sets Volume::spacing_defaulted().
///
/// Throws IoError when the file is missing, FormatError when it does not
/// parse and ValueError when it holds non-finite intensities.
Volume load_volume(const std::filesystem::path& path, VolumeFormat format = VolumeFormat::Auto);

/// Writes `<stem>.f32raw` and `<stem>.json`; returns the payload path.
std::filesystem::path save_volume(const Volume& v, const std::filesystem::path& path);

/// Lists native volumes (`*.f32raw`) in a directory, sorted by name.
std::vector<std::filesystem::path> list_volumes(const std::filesystem::path& dir);

}  // namespace latentvol
