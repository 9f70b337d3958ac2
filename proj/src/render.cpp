#include "pbtseg/render.hpp"

#include <png.h>

#include <algorithm>
#include <cmath>
#include <cstring>
#include <stdexcept>
#include <string>

namespace pbtseg {

SliceAxis parse_slice_axis(std::string_view s) {
  if (s == "axial") return SliceAxis::Axial;
  if (s == "coronal") return SliceAxis::Coronal;
  if (s == "sagittal") return SliceAxis::Sagittal;
  throw std::invalid_argument("axis must be axial, coronal or sagittal");
}

std::string_view to_string(SliceAxis a) {
  switch (a) {
    case SliceAxis::Axial: return "axial";
    case SliceAxis::Coronal: return "coronal";
    case SliceAxis::Sagittal: return "sagittal";
  }
  return "?";
}

std::size_t slice_count(const VolumeGeometry& g, SliceAxis axis) {
  switch (axis) {
    case SliceAxis::Axial: return g.shape()[2];
    case SliceAxis::Coronal: return g.shape()[1];
    case SliceAxis::Sagittal: return g.shape()[0];
  }
  return 0;
}

Rgb overlay_colour(Channel c) {
  switch (c) {
    case Channel::T2H: return {0, 200, 0};
    case Channel::ET: return {230, 30, 30};
    case Channel::CC: return {40, 120, 255};
  }
  return {255, 255, 255};
}

Window display_window(const IntensityVolume& vol) {
  std::vector<float> sorted(vol.values().begin(), vol.values().end());
  std::sort(sorted.begin(), sorted.end());
  const auto n = sorted.size();
  const auto lo_rank = static_cast<std::size_t>(std::floor(0.005 * static_cast<double>(n - 1)));
  const auto hi_rank = static_cast<std::size_t>(std::ceil(0.995 * static_cast<double>(n - 1)));
  return {sorted[lo_rank], sorted[hi_rank]};
}

Image8 render_slice(const IntensityVolume& image, const Window& window, const LabelVolume& labels, SliceAxis axis,
                    std::size_t index, std::span<const Channel> overlays) {
  require_compatible(image.geometry(), labels.geometry(), "image and labels");
  const auto& g = image.geometry();
  const auto [nx, ny, nz] = g.shape();
  if (index >= slice_count(g, axis)) {
    throw std::out_of_range("slice index " + std::to_string(index) + " out of range for " +
                            std::string(to_string(axis)));
  }

  Image8 out;
  switch (axis) {
    case SliceAxis::Axial: out.width = nx, out.height = ny; break;
    case SliceAxis::Coronal: out.width = nx, out.height = nz; break;
    case SliceAxis::Sagittal: out.width = ny, out.height = nz; break;
  }
  out.channels = overlays.empty() ? 1 : 3;
  out.pixels.resize(out.width * out.height * out.channels);

  const double span = window.hi - window.lo;
  for (std::size_t row = 0; row < out.height; ++row) {
    const std::size_t v = out.height - 1 - row;
    for (std::size_t u = 0; u < out.width; ++u) {
      std::size_t x = 0, y = 0, z = 0;
      switch (axis) {
        case SliceAxis::Axial: x = u, y = v, z = index; break;
        case SliceAxis::Coronal: x = u, y = index, z = v; break;
        case SliceAxis::Sagittal: x = index, y = u, z = v; break;
      }
      const double value = std::clamp(static_cast<double>(image.at(x, y, z)), window.lo, window.hi);
      const auto gray = span > 0.0 ? static_cast<std::uint8_t>(std::lround(255.0 * (value - window.lo) / span)) : 0;
      auto* px = &out.pixels[(row * out.width + u) * out.channels];
      if (out.channels == 1) {
        px[0] = gray;
        continue;
      }
      px[0] = px[1] = px[2] = gray;
      const auto code = labels.at(x, y, z);
      if (code == kBackground) continue;
      const auto ch = static_cast<Channel>(code);
      if (std::find(overlays.begin(), overlays.end(), ch) == overlays.end()) continue;
      const auto c = overlay_colour(ch);
      px[0] = static_cast<std::uint8_t>((gray + c.r + 1) / 2);
      px[1] = static_cast<std::uint8_t>((gray + c.g + 1) / 2);
      px[2] = static_cast<std::uint8_t>((gray + c.b + 1) / 2);
    }
  }
  return out;
}

namespace {

void png_error_fn(png_structp, png_const_charp msg) { throw std::runtime_error(std::string("png: ") + msg); }
void png_warning_fn(png_structp, png_const_charp) {}

void png_write_to_vector(png_structp png, png_bytep data, png_size_t length) {
  auto* out = static_cast<std::vector<std::uint8_t>*>(png_get_io_ptr(png));
  out->insert(out->end(), data, data + length);
}
void png_flush_noop(png_structp) {}

struct ReadCursor {
  std::span<const std::uint8_t> bytes;
  std::size_t offset = 0;
};

void png_read_from_span(png_structp png, png_bytep data, png_size_t length) {
  auto* cur = static_cast<ReadCursor*>(png_get_io_ptr(png));
  if (cur->offset + length > cur->bytes.size()) png_error(png, "unexpected end of data");
  std::memcpy(data, cur->bytes.data() + cur->offset, length);
  cur->offset += length;
}

}  // namespace

std::vector<std::uint8_t> encode_png(const Image8& image) {
  if (image.channels != 1 && image.channels != 3) throw std::invalid_argument("png: 1 or 3 channels supported");
  std::vector<std::uint8_t> out;
  png_structp png = png_create_write_struct(PNG_LIBPNG_VER_STRING, nullptr, png_error_fn, png_warning_fn);
  png_infop info = png ? png_create_info_struct(png) : nullptr;
  if (!png || !info) {
    png_destroy_write_struct(&png, &info);
    throw std::runtime_error("png: allocation failed");
  }
  try {
    png_set_write_fn(png, &out, png_write_to_vector, png_flush_noop);
    png_set_IHDR(png, info, static_cast<png_uint_32>(image.width), static_cast<png_uint_32>(image.height), 8,
                 image.channels == 1 ? PNG_COLOR_TYPE_GRAY : PNG_COLOR_TYPE_RGB, PNG_INTERLACE_NONE,
                 PNG_COMPRESSION_TYPE_DEFAULT, PNG_FILTER_TYPE_DEFAULT);
    png_write_info(png, info);
    const std::size_t stride = image.width * image.channels;
    for (std::size_t row = 0; row < image.height; ++row) {
      png_write_row(png, const_cast<png_bytep>(image.pixels.data() + row * stride));
    }
    png_write_end(png, nullptr);
  } catch (...) {
    png_destroy_write_struct(&png, &info);
    throw;
  }
  png_destroy_write_struct(&png, &info);
  return out;
}

Image8 decode_png(std::span<const std::uint8_t> bytes) {
  if (bytes.size() < 8 || png_sig_cmp(bytes.data(), 0, 8) != 0) throw std::runtime_error("png: bad signature");
  png_structp png = png_create_read_struct(PNG_LIBPNG_VER_STRING, nullptr, png_error_fn, png_warning_fn);
  png_infop info = png ? png_create_info_struct(png) : nullptr;
  if (!png || !info) {
    png_destroy_read_struct(&png, &info, nullptr);
    throw std::runtime_error("png: allocation failed");
  }
  ReadCursor cursor{bytes, 0};
  Image8 img;
  try {
    png_set_read_fn(png, &cursor, png_read_from_span);
    png_read_info(png, info);
    const auto color = png_get_color_type(png, info);
    if (png_get_bit_depth(png, info) != 8 || (color != PNG_COLOR_TYPE_GRAY && color != PNG_COLOR_TYPE_RGB)) {
      png_error(png, "only 8-bit gray or RGB supported");
    }
    img.width = png_get_image_width(png, info);
    img.height = png_get_image_height(png, info);
    img.channels = color == PNG_COLOR_TYPE_GRAY ? 1 : 3;
    img.pixels.resize(img.width * img.height * img.channels);
    const std::size_t stride = img.width * img.channels;
    for (std::size_t row = 0; row < img.height; ++row) png_read_row(png, img.pixels.data() + row * stride, nullptr);
    png_read_end(png, nullptr);
  } catch (...) {
    png_destroy_read_struct(&png, &info, nullptr);
    throw;
  }
  png_destroy_read_struct(&png, &info, nullptr);
  return img;
}

}  // namespace pbtseg
