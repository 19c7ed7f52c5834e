#include "segforge/volume_io.hpp"

#include <bit>
#include <cstring>
#include <fstream>
#include <string>

namespace segforge {
namespace {

// Byte reader over a buffer with a selectable byte order.
class ByteReader {
 public:
  ByteReader(const std::vector<std::uint8_t>& bytes, bool big_endian)
      : bytes_(bytes), big_(big_endian) {}

  template <typename U>
  U read(std::size_t offset) const {
    if (offset + sizeof(U) > bytes_.size()) throw FormatError("unexpected end of data", offset);
    std::uint8_t raw[sizeof(U)];
    std::memcpy(raw, bytes_.data() + offset, sizeof(U));
    if (big_ != (std::endian::native == std::endian::big)) {
      for (std::size_t i = 0; i < sizeof(U) / 2; ++i) std::swap(raw[i], raw[sizeof(U) - 1 - i]);
    }
    U v;
    std::memcpy(&v, raw, sizeof(U));
    return v;
  }

 private:
  const std::vector<std::uint8_t>& bytes_;
  bool big_;
};

template <typename U>
void put_le(std::vector<std::uint8_t>& out, std::size_t offset, U value) {
  std::uint8_t raw[sizeof(U)];
  std::memcpy(raw, &value, sizeof(U));
  if constexpr (std::endian::native == std::endian::big) {
    for (std::size_t i = 0; i < sizeof(U) / 2; ++i) std::swap(raw[i], raw[sizeof(U) - 1 - i]);
  }
  if (out.size() < offset + sizeof(U)) out.resize(offset + sizeof(U));
  std::memcpy(out.data() + offset, raw, sizeof(U));
}

template <typename U>
void append_le(std::vector<std::uint8_t>& out, U value) {
  put_le(out, out.size(), value);
}

constexpr std::size_t kNiftiHeaderSize = 348;
constexpr std::size_t kNiftiDataStart = 352;

// NIfTI-1 field offsets.
namespace nifti {
constexpr std::size_t sizeof_hdr = 0, dim_info = 39, dim = 40, datatype = 70, bitpix = 72,
                      pixdim = 76, vox_offset = 108, scl_slope = 112, scl_inter = 116,
                      xyzt_units = 123, descrip = 148, qform_code = 252, sform_code = 254,
                      quatern_b = 256, magic = 344;
}

}  // namespace

std::vector<std::uint8_t> read_file(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw DataError("cannot open " + path.string());
  std::vector<std::uint8_t> bytes((std::istreambuf_iterator<char>(in)),
                                  std::istreambuf_iterator<char>());
  return bytes;
}

void write_file_atomic(const std::filesystem::path& path, const std::vector<std::uint8_t>& bytes) {
  auto tmp = path;
  tmp += ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) throw Error("cannot write " + tmp.string());
    out.write(reinterpret_cast<const char*>(bytes.data()),
              static_cast<std::streamsize>(bytes.size()));
    if (!out) throw Error("write failed for " + tmp.string());
  }
  std::error_code ec;
  std::filesystem::rename(tmp, path, ec);
  if (ec) throw Error("cannot move " + tmp.string() + " to " + path.string() + ": " + ec.message());
}

// ---------------------------------------------------------------------------

NiftiImage parse_nifti(const std::vector<std::uint8_t>& bytes) {
  if (bytes.size() < kNiftiHeaderSize) {
    throw FormatError("NIfTI header truncated (" + std::to_string(bytes.size()) + " bytes)",
                      bytes.size());
  }
  bool big = false;
  if (ByteReader(bytes, false).read<std::int32_t>(nifti::sizeof_hdr) != 348) {
    if (ByteReader(bytes, true).read<std::int32_t>(nifti::sizeof_hdr) != 348) {
      throw FormatError("sizeof_hdr is not 348 in either byte order", nifti::sizeof_hdr);
    }
    big = true;
  }
  const ByteReader r(bytes, big);
  if (std::memcmp(bytes.data() + nifti::magic, "n+1\0", 4) != 0) {
    throw FormatError("bad NIfTI magic (expected single-file \"n+1\")", nifti::magic);
  }

  const auto ndim = r.read<std::int16_t>(nifti::dim);
  if (ndim < 1 || ndim > 7) throw FormatError("invalid dim[0] " + std::to_string(ndim), nifti::dim);
  std::array<std::int64_t, 3> xyz{1, 1, 1};
  for (int i = 1; i <= ndim; ++i) {
    const auto d = r.read<std::int16_t>(nifti::dim + 2 * i);
    if (d < 1) throw FormatError("non-positive dim[" + std::to_string(i) + "]", nifti::dim + 2 * i);
    if (i <= 3) {
      xyz[i - 1] = d;
    } else if (d != 1) {
      throw FormatError("only 3D volumes are supported", nifti::dim + 2 * i);
    }
  }

  NiftiImage img;
  img.big_endian = big;
  const auto dt = r.read<std::int16_t>(nifti::datatype);
  std::size_t elem = 0;
  switch (dt) {
    case 2: elem = 1; break;
    case 4: elem = 2; break;
    case 16: elem = 4; break;
    case 512: elem = 2; break;
    default:
      throw FormatError("unsupported NIfTI datatype " + std::to_string(dt), nifti::datatype);
  }
  img.datatype = static_cast<NiftiType>(dt);
  for (int i = 0; i < 3; ++i) img.spacing[i] = r.read<float>(nifti::pixdim + 4 * (i + 1));
  img.scl_slope = r.read<float>(nifti::scl_slope);
  img.scl_inter = r.read<float>(nifti::scl_inter);
  const auto vox_offset = r.read<float>(nifti::vox_offset);
  if (!(vox_offset >= static_cast<float>(kNiftiHeaderSize))) {
    throw FormatError("vox_offset " + std::to_string(vox_offset) + " inside the header",
                      nifti::vox_offset);
  }
  const auto start = static_cast<std::size_t>(vox_offset);
  const auto count = static_cast<std::size_t>(xyz[0] * xyz[1] * xyz[2]);
  if (start + count * elem > bytes.size()) {
    throw FormatError("voxel data truncated: need " + std::to_string(start + count * elem) +
                          " bytes, file has " + std::to_string(bytes.size()),
                      bytes.size());
  }

  // dim[1] = x varies fastest, so file order is already [z][y][x] = [D,H,W].
  img.volume = FloatVolume(xyz[2], xyz[1], xyz[0]);
  const bool scaled = img.scl_slope != 0.0f;
  for (std::size_t i = 0; i < count; ++i) {
    const auto off = start + i * elem;
    float v = 0.0f;
    switch (img.datatype) {
      case NiftiType::UInt8: v = bytes[off]; break;
      case NiftiType::Int16: v = r.read<std::int16_t>(off); break;
      case NiftiType::UInt16: v = r.read<std::uint16_t>(off); break;
      case NiftiType::Float32: v = r.read<float>(off); break;
    }
    if (scaled) v = v * img.scl_slope + img.scl_inter;
    img.volume.voxels[i] = v;
  }
  img.header.assign(bytes.begin(), bytes.begin() + kNiftiHeaderSize);
  return img;
}

NiftiImage read_nifti(const std::filesystem::path& path) {
  try {
    return parse_nifti(read_file(path));
  } catch (const FormatError& e) {
    throw FormatError(path.string() + ": " + e.what(), e.offset());
  }
}

void write_nifti_labels(const std::filesystem::path& path, const LabelVolume& labels,
                        const std::vector<std::uint8_t>* geometry) {
  std::vector<std::uint8_t> out(kNiftiDataStart, 0);
  if (geometry && geometry->size() >= kNiftiHeaderSize) {
    const bool big = ByteReader(*geometry, false).read<std::int32_t>(nifti::sizeof_hdr) != 348;
    const ByteReader r(*geometry, big);
    out[nifti::dim_info] = (*geometry)[nifti::dim_info];
    out[nifti::xyzt_units] = (*geometry)[nifti::xyzt_units];
    std::memcpy(out.data() + nifti::descrip, geometry->data() + nifti::descrip, 80);
    for (int i = 0; i < 8; ++i) put_le(out, nifti::pixdim + 4 * i, r.read<float>(nifti::pixdim + 4 * i));
    put_le(out, nifti::qform_code, r.read<std::int16_t>(nifti::qform_code));
    put_le(out, nifti::sform_code, r.read<std::int16_t>(nifti::sform_code));
    // quatern_b..d, qoffset_x..z, srow_x/y/z: 18 consecutive floats.
    for (int i = 0; i < 18; ++i) {
      put_le(out, nifti::quatern_b + 4 * i, r.read<float>(nifti::quatern_b + 4 * i));
    }
  } else {
    for (int i = 0; i < 4; ++i) put_le(out, nifti::pixdim + 4 * i, 1.0f);
  }
  put_le<std::int32_t>(out, nifti::sizeof_hdr, 348);
  const std::int16_t dims[8] = {3,
                                static_cast<std::int16_t>(labels.width),
                                static_cast<std::int16_t>(labels.height),
                                static_cast<std::int16_t>(labels.depth),
                                1, 1, 1, 1};
  for (int i = 0; i < 8; ++i) put_le(out, nifti::dim + 2 * i, dims[i]);
  put_le<std::int16_t>(out, nifti::datatype, 2);
  put_le<std::int16_t>(out, nifti::bitpix, 8);
  put_le<float>(out, nifti::vox_offset, static_cast<float>(kNiftiDataStart));
  put_le<float>(out, nifti::scl_slope, 0.0f);
  put_le<float>(out, nifti::scl_inter, 0.0f);
  std::memcpy(out.data() + nifti::magic, "n+1\0", 4);
  out.insert(out.end(), labels.voxels.begin(), labels.voxels.end());
  write_file_atomic(path, out);
}

// ---------------------------------------------------------------------------

namespace {
constexpr char kSvolMagic[8] = {'S', 'V', 'O', 'L', '0', '0', '0', '1'};

std::size_t svol_elem_size(SvolType t) {
  switch (t) {
    case SvolType::Float32: return 4;
    case SvolType::UInt8: return 1;
    case SvolType::Int16: return 2;
  }
  return 0;
}
}  // namespace

SvolArray parse_svol(const std::vector<std::uint8_t>& bytes) {
  if (bytes.size() < 12 || std::memcmp(bytes.data(), kSvolMagic, 8) != 0) {
    throw FormatError("bad .svol magic", 0);
  }
  const ByteReader r(bytes, false);
  const auto rank = r.read<std::uint32_t>(8);
  if (rank < 1 || rank > 8) throw FormatError("invalid .svol rank " + std::to_string(rank), 8);
  SvolArray a;
  std::size_t pos = 12;
  std::uint64_t count = 1;
  for (std::uint32_t i = 0; i < rank; ++i, pos += 4) {
    const auto d = r.read<std::uint32_t>(pos);
    if (d == 0) throw FormatError("zero .svol dimension", pos);
    a.dims.push_back(d);
    count *= d;
  }
  if (pos >= bytes.size()) throw FormatError("missing .svol dtype", pos);
  const auto code = bytes[pos];
  if (code > 2) throw FormatError("unknown .svol dtype code " + std::to_string(code), pos);
  a.dtype = static_cast<SvolType>(code);
  ++pos;
  const auto need = count * svol_elem_size(a.dtype);
  if (bytes.size() - pos != need) {
    throw FormatError(".svol payload is " + std::to_string(bytes.size() - pos) + " bytes, expected " +
                          std::to_string(need),
                      bytes.size() < pos + need ? bytes.size() : pos + need);
  }
  a.payload.assign(bytes.begin() + static_cast<std::ptrdiff_t>(pos), bytes.end());
  return a;
}

SvolArray read_svol(const std::filesystem::path& path) {
  try {
    return parse_svol(read_file(path));
  } catch (const FormatError& e) {
    throw FormatError(path.string() + ": " + e.what(), e.offset());
  }
}

void write_svol(const std::filesystem::path& path, const SvolArray& a) {
  std::vector<std::uint8_t> out(kSvolMagic, kSvolMagic + 8);
  append_le<std::uint32_t>(out, static_cast<std::uint32_t>(a.dims.size()));
  for (auto d : a.dims) append_le<std::uint32_t>(out, d);
  out.push_back(static_cast<std::uint8_t>(a.dtype));
  out.insert(out.end(), a.payload.begin(), a.payload.end());
  write_file_atomic(path, out);
}

namespace {
template <typename T>
SvolArray to_svol(const Volume<T>& v, SvolType type) {
  SvolArray a;
  a.dims = {static_cast<std::uint32_t>(v.depth), static_cast<std::uint32_t>(v.height),
            static_cast<std::uint32_t>(v.width)};
  a.dtype = type;
  a.payload.reserve(v.size() * sizeof(T));
  for (const T x : v.voxels) append_le(a.payload, x);
  return a;
}

void require_rank3(const SvolArray& a) {
  if (a.dims.size() != 3) {
    throw DataError(".svol volume must have rank 3, got " + std::to_string(a.dims.size()));
  }
}
}  // namespace

void write_svol(const std::filesystem::path& path, const FloatVolume& v) {
  write_svol(path, to_svol(v, SvolType::Float32));
}
void write_svol(const std::filesystem::path& path, const LabelVolume& v) {
  write_svol(path, to_svol(v, SvolType::UInt8));
}
void write_svol(const std::filesystem::path& path, const Volume<std::int16_t>& v) {
  write_svol(path, to_svol(v, SvolType::Int16));
}

FloatVolume svol_to_float(const SvolArray& a) {
  require_rank3(a);
  FloatVolume v(a.dims[0], a.dims[1], a.dims[2]);
  const ByteReader r(a.payload, false);
  for (std::size_t i = 0; i < v.size(); ++i) {
    switch (a.dtype) {
      case SvolType::Float32: v.voxels[i] = r.read<float>(4 * i); break;
      case SvolType::UInt8: v.voxels[i] = a.payload[i]; break;
      case SvolType::Int16: v.voxels[i] = r.read<std::int16_t>(2 * i); break;
    }
  }
  return v;
}

LabelVolume svol_to_labels(const SvolArray& a) {
  require_rank3(a);
  LabelVolume v(a.dims[0], a.dims[1], a.dims[2]);
  const ByteReader r(a.payload, false);
  for (std::size_t i = 0; i < v.size(); ++i) {
    int value = 0;
    switch (a.dtype) {
      case SvolType::Float32: throw DataError("label volume stored as float32");
      case SvolType::UInt8: value = a.payload[i]; break;
      case SvolType::Int16: value = r.read<std::int16_t>(2 * i); break;
    }
    if (value < 0 || value > 255) throw DataError("label value " + std::to_string(value) + " out of range");
    v.voxels[i] = static_cast<std::uint8_t>(value);
  }
  return v;
}

}  // namespace segforge
