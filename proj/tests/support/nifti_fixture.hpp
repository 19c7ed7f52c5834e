#pragma once

#include <array>
#include <cstdint>
#include <cstring>
#include <vector>

namespace segforge::testing {

// Writes NIfTI-1 single-file images field by field from the header layout:
// sizeof_hdr@0 dim[8]@40 datatype@70 bitpix@72 pixdim[8]@76 vox_offset@108
// scl_slope@112 scl_inter@116 qform@252 sform@254 srow_x@280 magic@344.
struct NiftiFixture {
  std::array<std::int16_t, 3> dims;  // x, y, z
  std::int16_t datatype;
  bool big_endian = false;
  std::array<float, 3> spacing{1.0f, 1.0f, 1.0f};
  float slope = 0.0f, inter = 0.0f;
  std::int16_t qform_code = 0, sform_code = 0;
  std::array<float, 4> srow_x{0, 0, 0, 0};

  template <typename U>
  void put(std::vector<std::uint8_t>& b, std::size_t off, U v) const {
    std::uint8_t raw[sizeof(U)];
    std::memcpy(raw, &v, sizeof(U));
    for (std::size_t i = 0; i < sizeof(U); ++i) b[off + i] = raw[big_endian ? sizeof(U) - 1 - i : i];
  }

  std::vector<std::uint8_t> header(std::int16_t bitpix) const {
    std::vector<std::uint8_t> b(352, 0);
    put<std::int32_t>(b, 0, 348);
    put<std::int16_t>(b, 40, 3);
    for (int i = 0; i < 3; ++i) put<std::int16_t>(b, 42 + 2 * i, dims[i]);
    for (int i = 3; i < 7; ++i) put<std::int16_t>(b, 42 + 2 * i, 1);
    put<std::int16_t>(b, 70, datatype);
    put<std::int16_t>(b, 72, bitpix);
    put<float>(b, 76, 1.0f);
    for (int i = 0; i < 3; ++i) put<float>(b, 80 + 4 * i, spacing[i]);
    put<float>(b, 108, 352.0f);
    put<float>(b, 112, slope);
    put<float>(b, 116, inter);
    put<std::int16_t>(b, 252, qform_code);
    put<std::int16_t>(b, 254, sform_code);
    for (int i = 0; i < 4; ++i) put<float>(b, 280 + 4 * i, srow_x[i]);
    std::memcpy(b.data() + 344, "n+1\0", 4);
    return b;
  }

  std::vector<std::uint8_t> bytes_f32(const std::vector<float>& v) const {
    auto b = header(32);
    b.resize(352 + 4 * v.size());
    for (std::size_t i = 0; i < v.size(); ++i) put<float>(b, 352 + 4 * i, v[i]);
    return b;
  }
  std::vector<std::uint8_t> bytes_i16(const std::vector<std::int16_t>& v) const {
    auto b = header(16);
    b.resize(352 + 2 * v.size());
    for (std::size_t i = 0; i < v.size(); ++i) put<std::int16_t>(b, 352 + 2 * i, v[i]);
    return b;
  }
  // Payload bytes appended as given (uint8 data, or pre-ordered multi-byte data).
  std::vector<std::uint8_t> bytes_raw(const std::vector<std::uint8_t>& payload) const {
    auto b = header(static_cast<std::int16_t>(datatype == 2 ? 8 : 16));
    b.insert(b.end(), payload.begin(), payload.end());
    return b;
  }
};

}  // namespace segforge::testing
