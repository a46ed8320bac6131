#pragma once

// Volume readers and writers.
//
// Native format: a little-endian raw array file plus a JSON sidecar with the
// same stem ("case.raw" + "case.json") holding dtype, shape, spacing and
// intensity unit. Volumes are float32, masks uint8.
//
// NIfTI-1 (.nii / .nii.gz) is supported as an adapter: spacing is taken from
// pixdim, the affine is otherwise ignored.

#include <filesystem>

#include "rprloc/volgrid.hpp"

namespace rprloc {

std::filesystem::path sidecar_path(const std::filesystem::path& raw_path);

void save_volume(const Volume& vol, const std::filesystem::path& raw_path);
void save_mask(const Mask& mask, const Vec3& spacing, const std::filesystem::path& raw_path);

// Dispatches on extension: .raw/.json -> native, .nii/.nii.gz -> NIfTI.
Volume load_volume(const std::filesystem::path& path);
Mask load_mask(const std::filesystem::path& path);

Volume load_nifti(const std::filesystem::path& path, IntensityUnit unit = IntensityUnit::kRaw);
void save_nifti(const Volume& vol, const std::filesystem::path& path);

}  // namespace rprloc
