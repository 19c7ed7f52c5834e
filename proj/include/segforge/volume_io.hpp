#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <optional>
#include <vector>

#include "segforge/error.hpp"

namespace segforge {

// Dense 3D array in [D,H,W] order (W fastest).
template <typename T>
struct Volume {
  std::int64_t depth = 0, height = 0, width = 0;
  std::vector<T> voxels;

  Volume() = default;
  Volume(std::int64_t d, std::int64_t h, std::int64_t w, T fill = T{})
      : depth(d), height(h), width(w), voxels(static_cast<std::size_t>(d * h * w), fill) {}

  std::size_t size() const noexcept { return voxels.size(); }
  std::array<std::int64_t, 3> dims() const noexcept { return {depth, height, width}; }
  bool same_dims(const auto& o) const noexcept {
    return depth == o.depth && height == o.height && width == o.width;
  }

  T& at(std::int64_t z, std::int64_t y, std::int64_t x) {
    return voxels[static_cast<std::size_t>((z * height + y) * width + x)];
  }
  const T& at(std::int64_t z, std::int64_t y, std::int64_t x) const {
    return voxels[static_cast<std::size_t>((z * height + y) * width + x)];
  }

  bool operator==(const Volume&) const = default;
};

using FloatVolume = Volume<float>;
using LabelVolume = Volume<std::uint8_t>;

// --- NIfTI-1 (single-file .nii, uncompressed) -----------------------------

enum class NiftiType : std::int16_t {
  UInt8 = 2,
  Int16 = 4,
  Float32 = 16,
  UInt16 = 512,
};

struct NiftiImage {
  FloatVolume volume;  // scl_slope / scl_inter already applied
  NiftiType datatype = NiftiType::Float32;
  std::array<float, 3> spacing{1.0f, 1.0f, 1.0f};  // pixdim[1..3], x y z
  float scl_slope = 0.0f;
  float scl_inter = 0.0f;
  bool big_endian = false;
  std::vector<std::uint8_t> header;  // raw 348 bytes as read, for geometry copies
};

// Reads a single-file NIfTI-1. Byte order is detected from sizeof_hdr.
NiftiImage read_nifti(const std::filesystem::path& path);
NiftiImage parse_nifti(const std::vector<std::uint8_t>& bytes);

// Writes a uint8 label volume. When `geometry` holds a source header its
// orientation and spacing fields are kept; dims, datatype and scaling are
// rewritten. Output is little-endian.
void write_nifti_labels(const std::filesystem::path& path, const LabelVolume& labels,
                        const std::vector<std::uint8_t>* geometry = nullptr);

// --- .svol raw volumes ------------------------------------------------------
//
// "SVOL0001", u32 rank, u32 dims[rank], u8 dtype, raw little-endian data.

enum class SvolType : std::uint8_t { Float32 = 0, UInt8 = 1, Int16 = 2 };

struct SvolArray {
  std::vector<std::uint32_t> dims;
  SvolType dtype = SvolType::Float32;
  std::vector<std::uint8_t> payload;  // little-endian element bytes
};

SvolArray read_svol(const std::filesystem::path& path);
SvolArray parse_svol(const std::vector<std::uint8_t>& bytes);
void write_svol(const std::filesystem::path& path, const SvolArray& array);

void write_svol(const std::filesystem::path& path, const FloatVolume& volume);
void write_svol(const std::filesystem::path& path, const LabelVolume& volume);
void write_svol(const std::filesystem::path& path, const Volume<std::int16_t>& volume);

// Converting readers. Rank must be 3. Any dtype converts to float; labels
// require an integer dtype with values in [0, 255].
FloatVolume svol_to_float(const SvolArray& array);
LabelVolume svol_to_labels(const SvolArray& array);

std::vector<std::uint8_t> read_file(const std::filesystem::path& path);
// Writes via a temporary file and rename so readers never see a partial file.
void write_file_atomic(const std::filesystem::path& path, const std::vector<std::uint8_t>& bytes);

}  // namespace segforge
