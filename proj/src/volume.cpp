#include "pbtseg/volume.hpp"

#include <algorithm>
#include <cctype>
#include <cmath>
#include <numeric>

namespace pbtseg {

namespace {

std::string upper(std::string_view s) {
  std::string out(s);
  std::transform(out.begin(), out.end(), out.begin(),
                 [](unsigned char c) { return static_cast<char>(std::toupper(c)); });
  return out;
}

std::string_view trim(std::string_view s) {
  while (!s.empty() && std::isspace(static_cast<unsigned char>(s.front()))) s.remove_prefix(1);
  while (!s.empty() && std::isspace(static_cast<unsigned char>(s.back()))) s.remove_suffix(1);
  return s;
}

void check_shape(const Shape& shape) {
  for (auto n : shape) {
    if (n == 0) throw GeometryError("volume shape entries must be >= 1");
  }
}

}  // namespace

std::string_view to_string(Channel c) {
  switch (c) {
    case Channel::T2H: return "T2H";
    case Channel::ET: return "ET";
    case Channel::CC: return "CC";
  }
  return "?";
}

Channel parse_channel(std::string_view s) {
  const auto u = upper(trim(s));
  if (u == "T2H") return Channel::T2H;
  if (u == "ET") return Channel::ET;
  if (u == "CC") return Channel::CC;
  throw std::invalid_argument("unknown label channel '" + std::string(s) + "'");
}

std::vector<Channel> parse_channel_list(std::string_view s) {
  std::vector<Channel> out;
  std::size_t start = 0;
  while (start <= s.size()) {
    auto end = s.find(',', start);
    if (end == std::string_view::npos) end = s.size();
    auto tok = trim(s.substr(start, end - start));
    if (!tok.empty()) {
      auto c = parse_channel(tok);
      if (std::find(out.begin(), out.end(), c) == out.end()) out.push_back(c);
    }
    start = end + 1;
  }
  return out;
}

std::string_view to_string(Sequence s) {
  switch (s) {
    case Sequence::T1: return "T1";
    case Sequence::T1C: return "T1-C";
    case Sequence::T2: return "T2";
    case Sequence::FLAIR: return "FLAIR";
  }
  return "?";
}

Sequence parse_sequence(std::string_view s) {
  const auto u = upper(trim(s));
  if (u == "T1") return Sequence::T1;
  if (u == "T1-C" || u == "T1C" || u == "T1CE" || u == "T1GD" || u == "T1-CE") return Sequence::T1C;
  if (u == "T2") return Sequence::T2;
  if (u == "FLAIR" || u == "T2-FLAIR") return Sequence::FLAIR;
  throw std::invalid_argument("unknown MRI sequence '" + std::string(s) + "'");
}

std::string_view file_stem(Sequence s) {
  switch (s) {
    case Sequence::T1: return "t1";
    case Sequence::T1C: return "t1c";
    case Sequence::T2: return "t2";
    case Sequence::FLAIR: return "flair";
  }
  return "?";
}

VolumeGeometry::VolumeGeometry(Shape shape, Spacing spacing) : shape_(shape), spacing_(spacing), affine_{} {
  check_shape(shape_);
  for (auto s : spacing_) {
    if (!(s > 0.0) || !std::isfinite(s)) throw GeometryError("voxel spacing must be positive");
  }
  affine_[0] = spacing_[0];
  affine_[5] = spacing_[1];
  affine_[10] = spacing_[2];
  affine_[15] = 1.0;
}

VolumeGeometry::VolumeGeometry(Shape shape, const Affine& affine) : shape_(shape), spacing_{}, affine_(affine) {
  check_shape(shape_);
  for (int col = 0; col < 3; ++col) {
    double sq = 0.0;
    for (int row = 0; row < 3; ++row) sq += affine_[row * 4 + col] * affine_[row * 4 + col];
    spacing_[col] = std::sqrt(sq);
    if (!(spacing_[col] > 0.0) || !std::isfinite(spacing_[col])) {
      throw GeometryError("affine has a degenerate axis");
    }
  }
  affine_[12] = 0.0;
  affine_[13] = 0.0;
  affine_[14] = 0.0;
  affine_[15] = 1.0;
}

bool VolumeGeometry::compatible_with(const VolumeGeometry& other, double tol) const noexcept {
  if (shape_ != other.shape_) return false;
  for (std::size_t i = 0; i < affine_.size(); ++i) {
    if (std::abs(affine_[i] - other.affine_[i]) > tol) return false;
  }
  return true;
}

void require_compatible(const VolumeGeometry& a, const VolumeGeometry& b, std::string_view what) {
  if (!a.compatible_with(b)) {
    throw GeometryError("incompatible geometry: " + std::string(what));
  }
}

BinaryMask::BinaryMask(VolumeGeometry geometry, std::vector<std::uint8_t> bits)
    : geometry_(std::move(geometry)), bits_(std::move(bits)) {
  if (bits_.size() != geometry_.voxel_count()) {
    throw GeometryError("mask length does not match geometry");
  }
  for (auto& b : bits_) b = b ? 1 : 0;
}

BinaryMask::BinaryMask(VolumeGeometry geometry)
    : geometry_(std::move(geometry)), bits_(geometry_.voxel_count(), 0) {}

std::size_t BinaryMask::population() const noexcept {
  return static_cast<std::size_t>(std::count(bits_.begin(), bits_.end(), std::uint8_t{1}));
}

LabelVolume::LabelVolume(VolumeGeometry geometry, std::vector<std::uint8_t> codes)
    : geometry_(std::move(geometry)), codes_(std::move(codes)) {
  if (codes_.size() != geometry_.voxel_count()) {
    throw GeometryError("label array length does not match geometry");
  }
  auto bad = std::find_if(codes_.begin(), codes_.end(), [](std::uint8_t c) { return c > kMaxLabelCode; });
  if (bad != codes_.end()) {
    throw LabelError("label code " + std::to_string(*bad) + " outside {0,1,2,3} at voxel " +
                     std::to_string(bad - codes_.begin()));
  }
}

LabelVolume::LabelVolume(VolumeGeometry geometry)
    : geometry_(std::move(geometry)), codes_(geometry_.voxel_count(), kBackground) {}

IntensityVolume::IntensityVolume(VolumeGeometry geometry, std::vector<float> values, Sequence tag)
    : geometry_(std::move(geometry)), values_(std::move(values)), tag_(tag) {
  if (values_.size() != geometry_.voxel_count()) {
    throw GeometryError("intensity array length does not match geometry");
  }
  if (!std::all_of(values_.begin(), values_.end(), [](float v) { return std::isfinite(v); })) {
    throw std::invalid_argument("intensity volume contains non-finite values");
  }
}

BinaryMask channel_mask(const LabelVolume& vol, Channel channel) {
  const auto code = static_cast<std::uint8_t>(channel);
  std::vector<std::uint8_t> bits(vol.codes().size());
  std::transform(vol.codes().begin(), vol.codes().end(), bits.begin(),
                 [code](std::uint8_t c) -> std::uint8_t { return c == code ? 1 : 0; });
  return BinaryMask(vol.geometry(), std::move(bits));
}

BinaryMask whole_tumour_mask(const LabelVolume& vol) {
  std::vector<std::uint8_t> bits(vol.codes().size());
  std::transform(vol.codes().begin(), vol.codes().end(), bits.begin(),
                 [](std::uint8_t c) -> std::uint8_t { return c != kBackground ? 1 : 0; });
  return BinaryMask(vol.geometry(), std::move(bits));
}

double mask_volume_ml(const BinaryMask& mask) {
  return static_cast<double>(mask.population()) * mask.geometry().voxel_volume_mm3() / 1000.0;
}

}  // namespace pbtseg
