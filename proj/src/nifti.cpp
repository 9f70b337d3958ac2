#include "pbtseg/nifti.hpp"

#include <zlib.h>

#include <algorithm>
#include <array>
#include <optional>
#include <bit>
#include <cmath>
#include <cstring>
#include <fstream>
#include <iterator>

namespace pbtseg {
namespace nifti {

namespace {

// Byte offsets into the 348-byte header.
constexpr std::size_t kOffSizeofHdr = 0;
constexpr std::size_t kOffDim = 40;
constexpr std::size_t kOffDatatype = 70;
constexpr std::size_t kOffBitpix = 72;
constexpr std::size_t kOffPixdim = 76;
constexpr std::size_t kOffVoxOffset = 108;
constexpr std::size_t kOffSclSlope = 112;
constexpr std::size_t kOffSclInter = 116;
constexpr std::size_t kOffXyztUnits = 123;
constexpr std::size_t kOffDescrip = 148;
constexpr std::size_t kOffQformCode = 252;
constexpr std::size_t kOffSformCode = 254;
constexpr std::size_t kOffQuatern = 256;
constexpr std::size_t kOffQoffset = 268;
constexpr std::size_t kOffSrow = 280;
constexpr std::size_t kOffMagic = 344;
constexpr std::size_t kDescripLen = 80;

class HeaderReader {
public:
  HeaderReader(std::span<const std::uint8_t> bytes, bool swap) : bytes_(bytes), swap_(swap) {}

  template <typename T>
  T get(std::size_t offset) const {
    std::array<std::uint8_t, sizeof(T)> buf{};
    std::memcpy(buf.data(), bytes_.data() + offset, sizeof(T));
    if (swap_) std::reverse(buf.begin(), buf.end());
    T v;
    std::memcpy(&v, buf.data(), sizeof(T));
    return v;
  }

private:
  std::span<const std::uint8_t> bytes_;
  bool swap_;
};

class HeaderWriter {
public:
  explicit HeaderWriter(std::vector<std::uint8_t>& out) : out_(out) {}

  template <typename T>
  void put(std::size_t offset, T v) {
    std::memcpy(out_.data() + offset, &v, sizeof(T));
  }

private:
  std::vector<std::uint8_t>& out_;
};

static_assert(std::endian::native == std::endian::little, "writer assumes a little-endian host");

int bytes_per_voxel(std::int16_t datatype) {
  switch (datatype) {
    case kUInt8:
    case kInt8: return 1;
    case kInt16:
    case kUInt16: return 2;
    case kInt32:
    case kUInt32:
    case kFloat32: return 4;
    case kFloat64:
    case kInt64:
    case kUInt64: return 8;
    default: return 0;
  }
}

template <typename T>
void convert(std::span<const std::uint8_t> raw, bool swap, std::vector<double>& out) {
  const std::size_t n = out.size();
  std::array<std::uint8_t, sizeof(T)> buf{};
  for (std::size_t i = 0; i < n; ++i) {
    std::memcpy(buf.data(), raw.data() + i * sizeof(T), sizeof(T));
    if (swap) std::reverse(buf.begin(), buf.end());
    T v;
    std::memcpy(&v, buf.data(), sizeof(T));
    out[i] = static_cast<double>(v);
  }
}

Affine quatern_to_affine(double b, double c, double d, double qx, double qy, double qz, double dx, double dy,
                         double dz, double qfac) {
  double a = 1.0 - (b * b + c * c + d * d);
  if (a < 1e-7) {
    const double norm = 1.0 / std::sqrt(b * b + c * c + d * d);
    b *= norm;
    c *= norm;
    d *= norm;
    a = 0.0;
  } else {
    a = std::sqrt(a);
  }
  if (dz == 0.0) dz = 1.0;
  dz *= qfac;
  Affine m{};
  m[0] = (a * a + b * b - c * c - d * d) * dx;
  m[1] = 2.0 * (b * c - a * d) * dy;
  m[2] = 2.0 * (b * d + a * c) * dz;
  m[3] = qx;
  m[4] = 2.0 * (b * c + a * d) * dx;
  m[5] = (a * a + c * c - b * b - d * d) * dy;
  m[6] = 2.0 * (c * d - a * b) * dz;
  m[7] = qy;
  m[8] = 2.0 * (b * d - a * c) * dx;
  m[9] = 2.0 * (c * d + a * b) * dy;
  m[10] = (a * a + d * d - c * c - b * b) * dz;
  m[11] = qz;
  m[15] = 1.0;
  return m;
}

std::vector<std::uint8_t> encode_common(const VolumeGeometry& g, std::int16_t datatype,
                                        std::span<const std::uint8_t> payload, const std::string& description) {
  for (auto n : g.shape()) {
    if (n > 32767) throw NiftiError("dimension exceeds the NIfTI-1 limit of 32767");
  }
  std::vector<std::uint8_t> out(static_cast<std::size_t>(kVoxOffset) + payload.size(), 0);
  HeaderWriter w(out);
  w.put<std::int32_t>(kOffSizeofHdr, kHeaderSize);
  w.put<std::int16_t>(kOffDim, 3);
  for (int i = 0; i < 3; ++i) w.put<std::int16_t>(kOffDim + 2 * (i + 1), static_cast<std::int16_t>(g.shape()[i]));
  for (int i = 4; i < 8; ++i) w.put<std::int16_t>(kOffDim + 2 * i, 1);
  w.put<std::int16_t>(kOffDatatype, datatype);
  w.put<std::int16_t>(kOffBitpix, static_cast<std::int16_t>(8 * bytes_per_voxel(datatype)));
  w.put<float>(kOffPixdim, 1.0f);
  for (int i = 0; i < 3; ++i) w.put<float>(kOffPixdim + 4 * (i + 1), static_cast<float>(g.spacing()[i]));
  for (int i = 4; i < 8; ++i) w.put<float>(kOffPixdim + 4 * i, 1.0f);
  w.put<float>(kOffVoxOffset, static_cast<float>(kVoxOffset));
  w.put<float>(kOffSclSlope, 0.0f);
  w.put<float>(kOffSclInter, 0.0f);
  out[kOffXyztUnits] = 2;  // NIFTI_UNITS_MM
  std::memcpy(out.data() + kOffDescrip, description.data(), std::min(description.size(), kDescripLen - 1));
  w.put<std::int16_t>(kOffQformCode, 0);
  w.put<std::int16_t>(kOffSformCode, 1);  // NIFTI_XFORM_SCANNER_ANAT
  for (int row = 0; row < 3; ++row) {
    for (int col = 0; col < 4; ++col) {
      w.put<float>(kOffSrow + 16 * row + 4 * col, static_cast<float>(g.affine()[row * 4 + col]));
    }
  }
  std::memcpy(out.data() + kOffMagic, "n+1\0", 4);
  std::copy(payload.begin(), payload.end(), out.begin() + kVoxOffset);
  return out;
}

std::vector<std::uint8_t> read_file(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw NiftiError("cannot open " + path.string());
  return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

void write_file(const std::filesystem::path& path, std::span<const std::uint8_t> bytes) {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw NiftiError("cannot open " + path.string() + " for writing");
  out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
  if (!out) throw NiftiError("write failed for " + path.string());
}

bool wants_gzip(const std::filesystem::path& path) { return path.extension() == ".gz"; }

}  // namespace

bool is_gzip(std::span<const std::uint8_t> bytes) noexcept {
  return bytes.size() >= 2 && bytes[0] == 0x1F && bytes[1] == 0x8B;
}

std::vector<std::uint8_t> gzip_compress(std::span<const std::uint8_t> bytes) {
  z_stream zs{};
  if (deflateInit2(&zs, Z_DEFAULT_COMPRESSION, Z_DEFLATED, 15 + 16, 8, Z_DEFAULT_STRATEGY) != Z_OK) {
    throw NiftiError("deflateInit2 failed");
  }
  std::vector<std::uint8_t> out(deflateBound(&zs, static_cast<uLong>(bytes.size())) + 32);
  zs.next_in = const_cast<Bytef*>(bytes.data());
  zs.avail_in = static_cast<uInt>(bytes.size());
  zs.next_out = out.data();
  zs.avail_out = static_cast<uInt>(out.size());
  const int rc = deflate(&zs, Z_FINISH);
  const auto produced = zs.total_out;
  deflateEnd(&zs);
  if (rc != Z_STREAM_END) throw NiftiError("gzip compression failed");
  out.resize(produced);
  return out;
}

std::vector<std::uint8_t> gzip_decompress(std::span<const std::uint8_t> bytes) {
  std::vector<std::uint8_t> out;
  std::array<std::uint8_t, 1 << 16> chunk{};
  z_stream zs{};
  if (inflateInit2(&zs, 15 + 32) != Z_OK) throw NiftiError("inflateInit2 failed");
  zs.next_in = const_cast<Bytef*>(bytes.data());
  zs.avail_in = static_cast<uInt>(bytes.size());
  for (;;) {
    zs.next_out = chunk.data();
    zs.avail_out = static_cast<uInt>(chunk.size());
    const int rc = inflate(&zs, Z_NO_FLUSH);
    out.insert(out.end(), chunk.data(), chunk.data() + (chunk.size() - zs.avail_out));
    if (rc == Z_STREAM_END) {
      // concatenated gzip members
      if (zs.avail_in > 0 && is_gzip({zs.next_in, zs.avail_in})) {
        inflateReset(&zs);
        continue;
      }
      break;
    }
    if (rc != Z_OK) {
      inflateEnd(&zs);
      throw NiftiError("corrupt gzip stream");
    }
    if (zs.avail_in == 0 && zs.avail_out != 0) {
      inflateEnd(&zs);
      throw NiftiError("truncated gzip stream");
    }
  }
  inflateEnd(&zs);
  return out;
}

RawImage decode(std::span<const std::uint8_t> file_bytes) {
  std::vector<std::uint8_t> inflated;
  std::span<const std::uint8_t> bytes = file_bytes;
  if (is_gzip(file_bytes)) {
    inflated = gzip_decompress(file_bytes);
    bytes = inflated;
  }
  if (bytes.size() < static_cast<std::size_t>(kHeaderSize)) throw NiftiError("file shorter than a NIfTI-1 header");

  bool swap = false;
  {
    HeaderReader probe(bytes, false);
    const auto size = probe.get<std::int32_t>(kOffSizeofHdr);
    if (size != kHeaderSize) {
      HeaderReader swapped(bytes, true);
      if (swapped.get<std::int32_t>(kOffSizeofHdr) != kHeaderSize) {
        throw NiftiError("malformed header: sizeof_hdr is " + std::to_string(size) + ", expected 348");
      }
      swap = true;
    }
  }
  HeaderReader h(bytes, swap);

  const char* magic = reinterpret_cast<const char*>(bytes.data() + kOffMagic);
  if (std::memcmp(magic, "ni1\0", 4) == 0) {
    throw NiftiError("two-file NIfTI (ni1) is not supported; expected single-file n+1");
  }
  if (std::memcmp(magic, "n+1\0", 4) != 0) throw NiftiError("malformed header: bad magic");

  const auto ndim = h.get<std::int16_t>(kOffDim);
  if (ndim < 1 || ndim > 7) throw NiftiError("malformed header: dim[0] out of range");
  Shape shape{1, 1, 1};
  for (int i = 1; i <= ndim; ++i) {
    const auto d = h.get<std::int16_t>(kOffDim + 2 * i);
    if (d < 1) throw NiftiError("malformed header: non-positive dimension");
    if (i <= 3) {
      shape[i - 1] = static_cast<std::size_t>(d);
    } else if (d != 1) {
      throw NiftiError("only 3D volumes are supported");
    }
  }

  const auto datatype = h.get<std::int16_t>(kOffDatatype);
  const int bpv = bytes_per_voxel(datatype);
  if (bpv == 0) throw NiftiError("unsupported NIfTI datatype " + std::to_string(datatype));

  std::array<double, 8> pixdim{};
  for (int i = 0; i < 8; ++i) pixdim[i] = h.get<float>(kOffPixdim + 4 * i);

  Affine affine{};
  const auto sform_code = h.get<std::int16_t>(kOffSformCode);
  const auto qform_code = h.get<std::int16_t>(kOffQformCode);
  if (sform_code > 0) {
    for (int row = 0; row < 3; ++row) {
      for (int col = 0; col < 4; ++col) affine[row * 4 + col] = h.get<float>(kOffSrow + 16 * row + 4 * col);
    }
    affine[15] = 1.0;
  } else if (qform_code > 0) {
    affine = quatern_to_affine(h.get<float>(kOffQuatern), h.get<float>(kOffQuatern + 4), h.get<float>(kOffQuatern + 8),
                               h.get<float>(kOffQoffset), h.get<float>(kOffQoffset + 4), h.get<float>(kOffQoffset + 8),
                               pixdim[1], pixdim[2], pixdim[3], pixdim[0] < 0 ? -1.0 : 1.0);
  } else {
    for (int i = 0; i < 3; ++i) affine[i * 5] = pixdim[i + 1] > 0 ? pixdim[i + 1] : 1.0;
    affine[15] = 1.0;
  }

  std::optional<VolumeGeometry> geometry;
  try {
    geometry.emplace(shape, affine);
  } catch (const GeometryError& e) {
    throw NiftiError(std::string("malformed header: ") + e.what());
  }

  const double vox_offset = h.get<float>(kOffVoxOffset);
  const auto offset = static_cast<std::size_t>(std::max(vox_offset, static_cast<double>(kHeaderSize)));
  const std::size_t nvox = geometry->voxel_count();
  const std::size_t need = nvox * static_cast<std::size_t>(bpv);
  if (bytes.size() < offset + need) throw NiftiError("file truncated: voxel data incomplete");
  auto raw = bytes.subspan(offset, need);

  std::vector<double> values(nvox);
  switch (datatype) {
    case kUInt8: convert<std::uint8_t>(raw, swap, values); break;
    case kInt8: convert<std::int8_t>(raw, swap, values); break;
    case kInt16: convert<std::int16_t>(raw, swap, values); break;
    case kUInt16: convert<std::uint16_t>(raw, swap, values); break;
    case kInt32: convert<std::int32_t>(raw, swap, values); break;
    case kUInt32: convert<std::uint32_t>(raw, swap, values); break;
    case kInt64: convert<std::int64_t>(raw, swap, values); break;
    case kUInt64: convert<std::uint64_t>(raw, swap, values); break;
    case kFloat32: convert<float>(raw, swap, values); break;
    case kFloat64: convert<double>(raw, swap, values); break;
    default: break;
  }

  const double slope = h.get<float>(kOffSclSlope);
  const double inter = h.get<float>(kOffSclInter);
  if (slope != 0.0 && std::isfinite(slope) && !(slope == 1.0 && inter == 0.0)) {
    for (auto& v : values) v = v * slope + inter;
  }

  const char* descrip = reinterpret_cast<const char*>(bytes.data() + kOffDescrip);
  std::string description(descrip, strnlen(descrip, kDescripLen));

  return RawImage{std::move(*geometry), datatype, std::move(description), std::move(values)};
}

RawImage read(const std::filesystem::path& path) {
  const auto bytes = read_file(path);
  try {
    return decode(bytes);
  } catch (const NiftiError& e) {
    throw NiftiError(path.string() + ": " + e.what());
  }
}

std::vector<std::uint8_t> encode_labels(const LabelVolume& vol, const std::string& description) {
  return encode_common(vol.geometry(), kUInt8, vol.codes(), description);
}

std::vector<std::uint8_t> encode_intensity(const IntensityVolume& vol, const std::string& description) {
  const auto values = vol.values();
  std::span<const std::uint8_t> payload(reinterpret_cast<const std::uint8_t*>(values.data()),
                                        values.size() * sizeof(float));
  return encode_common(vol.geometry(), kFloat32, payload, description);
}

}  // namespace nifti

LabelVolume load_label_volume(const std::filesystem::path& path) {
  std::string ignored;
  return load_label_volume(path, ignored);
}

LabelVolume load_label_volume(const std::filesystem::path& path, std::string& description) {
  auto raw = nifti::read(path);
  description = raw.description;
  std::vector<std::uint8_t> codes(raw.values.size());
  for (std::size_t i = 0; i < raw.values.size(); ++i) {
    const double v = raw.values[i];
    if (!std::isfinite(v) || v != std::floor(v)) {
      throw LabelError(path.string() + ": non-integer label value at voxel " + std::to_string(i));
    }
    if (v < 0.0 || v > kMaxLabelCode) {
      throw LabelError(path.string() + ": label code " + std::to_string(static_cast<long long>(v)) +
                       " outside {0,1,2,3} at voxel " + std::to_string(i));
    }
    codes[i] = static_cast<std::uint8_t>(v);
  }
  return LabelVolume(std::move(raw.geometry), std::move(codes));
}

IntensityVolume load_intensity_volume(const std::filesystem::path& path, Sequence tag) {
  auto raw = nifti::read(path);
  std::vector<float> values(raw.values.begin(), raw.values.end());
  try {
    return IntensityVolume(std::move(raw.geometry), std::move(values), tag);
  } catch (const std::invalid_argument& e) {
    throw NiftiError(path.string() + ": " + e.what());
  }
}

void save_nifti(const LabelVolume& vol, const std::filesystem::path& path, const std::string& description) {
  auto bytes = nifti::encode_labels(vol, description);
  nifti::write_file(path, nifti::wants_gzip(path) ? nifti::gzip_compress(bytes) : bytes);
}

void save_nifti(const IntensityVolume& vol, const std::filesystem::path& path, const std::string& description) {
  auto bytes = nifti::encode_intensity(vol, description);
  nifti::write_file(path, nifti::wants_gzip(path) ? nifti::gzip_compress(bytes) : bytes);
}

std::string read_nifti_description(const std::filesystem::path& path) { return nifti::read(path).description; }

}  // namespace pbtseg
