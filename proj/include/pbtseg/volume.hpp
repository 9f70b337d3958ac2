#pragma once

// Voxel-grid data model: geometry, label volumes with the exclusive
// tumour-subregion code set, intensity volumes and per-channel masks.

#include <array>
#include <cstddef>
#include <cstdint>
#include <optional>
#include <span>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

namespace pbtseg {

using Shape = std::array<std::size_t, 3>;
using Spacing = std::array<double, 3>;
/// Row-major 4x4 voxel-index to world-mm transform.
using Affine = std::array<double, 16>;

class GeometryError : public std::runtime_error {
public:
  using std::runtime_error::runtime_error;
};

class LabelError : public std::runtime_error {
public:
  using std::runtime_error::runtime_error;
};

/// On-disk label codes. WT is never stored; it is the union of the three.
enum class Channel : std::uint8_t { T2H = 1, ET = 2, CC = 3 };

inline constexpr std::array<Channel, 3> kAllChannels{Channel::T2H, Channel::ET, Channel::CC};
inline constexpr std::uint8_t kBackground = 0;
inline constexpr std::uint8_t kMaxLabelCode = 3;

std::string_view to_string(Channel c);
Channel parse_channel(std::string_view s);
/// Parses a comma-separated channel list such as "ET,CC".
std::vector<Channel> parse_channel_list(std::string_view s);

enum class Sequence { T1, T1C, T2, FLAIR };

inline constexpr std::array<Sequence, 4> kAllSequences{Sequence::T1C, Sequence::T1, Sequence::T2,
                                                       Sequence::FLAIR};

/// Display tag: "T1", "T1-C", "T2", "FLAIR".
std::string_view to_string(Sequence s);
/// Accepts the display tag plus the common spellings T1C, T1CE, T1Gd (case-insensitive).
Sequence parse_sequence(std::string_view s);
/// Per-case file stem used in cohort directories: t1, t1c, t2, flair.
std::string_view file_stem(Sequence s);

class VolumeGeometry {
public:
  /// Axis-aligned geometry with origin at the world origin.
  VolumeGeometry(Shape shape, Spacing spacing);
  /// Spacing is taken from the column norms of the affine's 3x3 block.
  VolumeGeometry(Shape shape, const Affine& affine);

  static VolumeGeometry isotropic(Shape shape, double spacing_mm = 1.0) {
    return VolumeGeometry(shape, Spacing{spacing_mm, spacing_mm, spacing_mm});
  }

  const Shape& shape() const noexcept { return shape_; }
  const Spacing& spacing() const noexcept { return spacing_; }
  const Affine& affine() const noexcept { return affine_; }

  std::size_t voxel_count() const noexcept { return shape_[0] * shape_[1] * shape_[2]; }
  double voxel_volume_mm3() const noexcept { return spacing_[0] * spacing_[1] * spacing_[2]; }
  /// 1 mL = 1000 mm^3.
  double voxel_volume_ml() const noexcept { return voxel_volume_mm3() / 1000.0; }

  /// Linear index with x fastest (NIfTI storage order).
  std::size_t index(std::size_t x, std::size_t y, std::size_t z) const noexcept {
    return x + shape_[0] * (y + shape_[1] * z);
  }
  bool contains(std::int64_t x, std::int64_t y, std::int64_t z) const noexcept {
    return x >= 0 && y >= 0 && z >= 0 && x < static_cast<std::int64_t>(shape_[0]) &&
           y < static_cast<std::int64_t>(shape_[1]) && z < static_cast<std::int64_t>(shape_[2]);
  }

  /// Same shape and affine entries within `tol`.
  bool compatible_with(const VolumeGeometry& other, double tol = 1e-3) const noexcept;

  friend bool operator==(const VolumeGeometry&, const VolumeGeometry&) = default;

private:
  Shape shape_;
  Spacing spacing_;
  Affine affine_;
};

/// Throws GeometryError when the two geometries are not compatible.
void require_compatible(const VolumeGeometry& a, const VolumeGeometry& b, std::string_view what);

class BinaryMask {
public:
  BinaryMask(VolumeGeometry geometry, std::vector<std::uint8_t> bits);
  explicit BinaryMask(VolumeGeometry geometry);

  const VolumeGeometry& geometry() const noexcept { return geometry_; }
  std::span<const std::uint8_t> bits() const noexcept { return bits_; }
  bool at(std::size_t x, std::size_t y, std::size_t z) const noexcept {
    return bits_[geometry_.index(x, y, z)] != 0;
  }
  std::size_t population() const noexcept;
  bool empty() const noexcept { return population() == 0; }

  friend bool operator==(const BinaryMask&, const BinaryMask&) = default;

private:
  VolumeGeometry geometry_;
  std::vector<std::uint8_t> bits_;  // 0 or 1
};

class LabelVolume {
public:
  /// Validates that every code lies in {0,1,2,3}; throws LabelError otherwise.
  LabelVolume(VolumeGeometry geometry, std::vector<std::uint8_t> codes);
  /// All-background volume.
  explicit LabelVolume(VolumeGeometry geometry);

  const VolumeGeometry& geometry() const noexcept { return geometry_; }
  std::span<const std::uint8_t> codes() const noexcept { return codes_; }
  std::uint8_t at(std::size_t x, std::size_t y, std::size_t z) const noexcept {
    return codes_[geometry_.index(x, y, z)];
  }

  friend bool operator==(const LabelVolume&, const LabelVolume&) = default;

private:
  VolumeGeometry geometry_;
  std::vector<std::uint8_t> codes_;
};

class IntensityVolume {
public:
  IntensityVolume(VolumeGeometry geometry, std::vector<float> values, Sequence tag);

  const VolumeGeometry& geometry() const noexcept { return geometry_; }
  std::span<const float> values() const noexcept { return values_; }
  Sequence sequence() const noexcept { return tag_; }
  float at(std::size_t x, std::size_t y, std::size_t z) const noexcept {
    return values_[geometry_.index(x, y, z)];
  }

private:
  VolumeGeometry geometry_;
  std::vector<float> values_;
  Sequence tag_;
};

BinaryMask channel_mask(const LabelVolume& vol, Channel channel);
BinaryMask whole_tumour_mask(const LabelVolume& vol);
double mask_volume_ml(const BinaryMask& mask);

}  // namespace pbtseg
