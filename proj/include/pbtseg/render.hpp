#pragma once

// Slice rendering for the rating viewer: windowed grayscale with
// half-transparent label overlays, encoded as PNG.

#include <array>
#include <cstdint>
#include <span>
#include <string_view>
#include <vector>

#include "pbtseg/volume.hpp"

namespace pbtseg {

enum class SliceAxis { Axial, Coronal, Sagittal };

SliceAxis parse_slice_axis(std::string_view s);
std::string_view to_string(SliceAxis a);
/// Number of slices along the axis (z, y, x respectively).
std::size_t slice_count(const VolumeGeometry& g, SliceAxis axis);

struct Rgb {
  std::uint8_t r, g, b;
};

/// Fixed legend colours.
Rgb overlay_colour(Channel c);

struct Window {
  double lo = 0.0;
  double hi = 0.0;
};

/// Clamps to the 0.5th and 99.5th percentiles (nearest rank) of the volume.
Window display_window(const IntensityVolume& vol);

struct Image8 {
  std::size_t width = 0;
  std::size_t height = 0;
  std::size_t channels = 1;  // 1 = gray, 3 = RGB
  std::vector<std::uint8_t> pixels;

  friend bool operator==(const Image8&, const Image8&) = default;
};

/// Axial slices show x across and y down; coronal x/z; sagittal y/z. The
/// second axis is flipped so larger indices are at the top. Without overlay
/// channels the result is single-channel gray; otherwise RGB where each
/// labelled voxel of a requested channel is averaged 50/50 with its colour.
/// Throws std::out_of_range for an index past the last slice.
Image8 render_slice(const IntensityVolume& image, const Window& window, const LabelVolume& labels, SliceAxis axis,
                    std::size_t index, std::span<const Channel> overlays);

std::vector<std::uint8_t> encode_png(const Image8& image);
Image8 decode_png(std::span<const std::uint8_t> bytes);

}  // namespace pbtseg
