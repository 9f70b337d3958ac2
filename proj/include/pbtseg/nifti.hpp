#pragma once

// NIfTI-1 single-file codec (.nii and .nii.gz).
//
// Reading accepts either byte order and the common integer and float
// datatypes. Orientation comes from the sform when sform_code > 0, then the
// qform, then pixdim alone. Writing always emits little-endian "n+1" files
// with the affine in the sform; a ".gz" suffix selects gzip compression.

#include <cstdint>
#include <filesystem>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include "pbtseg/volume.hpp"

namespace pbtseg {

class NiftiError : public std::runtime_error {
public:
  using std::runtime_error::runtime_error;
};

namespace nifti {

inline constexpr int kHeaderSize = 348;
inline constexpr int kVoxOffset = 352;

enum DataType : std::int16_t {
  kUInt8 = 2,
  kInt16 = 4,
  kInt32 = 8,
  kFloat32 = 16,
  kFloat64 = 64,
  kInt8 = 256,
  kUInt16 = 512,
  kUInt32 = 768,
  kInt64 = 1024,
  kUInt64 = 1280,
};

/// Decoded image before interpretation as labels or intensities.
struct RawImage {
  VolumeGeometry geometry;
  std::int16_t datatype;
  std::string description;  // header descrip field
  std::vector<double> values;  // scaled by scl_slope/scl_inter when set
};

/// Parses an in-memory file (possibly gzip-compressed).
RawImage decode(std::span<const std::uint8_t> bytes);
RawImage read(const std::filesystem::path& path);

/// Encodes a complete uncompressed single-file image.
std::vector<std::uint8_t> encode_labels(const LabelVolume& vol, const std::string& description = {});
std::vector<std::uint8_t> encode_intensity(const IntensityVolume& vol, const std::string& description = {});

bool is_gzip(std::span<const std::uint8_t> bytes) noexcept;
std::vector<std::uint8_t> gzip_compress(std::span<const std::uint8_t> bytes);
std::vector<std::uint8_t> gzip_decompress(std::span<const std::uint8_t> bytes);

}  // namespace nifti

/// Loads a label map; rejects non-integer values and codes outside {0,1,2,3}.
LabelVolume load_label_volume(const std::filesystem::path& path);
/// Same, also returning the header's descrip field (postprocessing provenance).
LabelVolume load_label_volume(const std::filesystem::path& path, std::string& description);
IntensityVolume load_intensity_volume(const std::filesystem::path& path, Sequence tag);

/// Labels are written as uint8. `description` lands in the 80-byte descrip field.
void save_nifti(const LabelVolume& vol, const std::filesystem::path& path, const std::string& description = {});
/// Intensities are written as float32.
void save_nifti(const IntensityVolume& vol, const std::filesystem::path& path,
                const std::string& description = {});

/// Reads only the descrip field of a file's header.
std::string read_nifti_description(const std::filesystem::path& path);

}  // namespace pbtseg
