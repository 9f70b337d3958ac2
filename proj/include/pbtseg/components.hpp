#pragma once

// 3D connected-component labeling and the size-based false-positive filter.

#include <array>
#include <cstddef>
#include <cstdint>
#include <string>
#include <string_view>
#include <vector>

#include "pbtseg/volume.hpp"

namespace pbtseg {

/// Voxel adjacency: shared face (6), face or edge (18), face, edge or corner (26).
enum class Connectivity : int { Face = 6, Edge = 18, Corner = 26 };

Connectivity connectivity_from_int(int kind);
inline int to_int(Connectivity c) { return static_cast<int>(c); }

struct BoundingBox {
  std::array<std::size_t, 3> min;
  std::array<std::size_t, 3> max;  // inclusive
};

struct ComponentSet {
  VolumeGeometry geometry;
  /// Per-voxel component id, 0 for background, 1..count otherwise.
  std::vector<std::uint32_t> labels;
  /// sizes[id - 1] is the voxel count of component `id`.
  std::vector<std::size_t> sizes;
  std::vector<BoundingBox> boxes;

  std::size_t count() const noexcept { return sizes.size(); }
};

/// Two-pass union-find labeling. Ids follow the raster order (x fastest) of
/// each component's first voxel, so identical inputs always produce identical ids.
ComponentSet connected_components(const BinaryMask& mask, Connectivity conn = Connectivity::Corner);

struct ComponentStat {
  std::uint32_t id;
  std::size_t voxels;
  double volume_ml;
  BoundingBox box;
};

/// Sorted by descending size; ties keep ascending id.
std::vector<ComponentStat> component_stats(const ComponentSet& cs);

inline constexpr std::size_t kDefaultMinComponentVoxels = 125;

struct FilterOptions {
  std::size_t threshold_voxels = kDefaultMinComponentVoxels;
  Connectivity connectivity = Connectivity::Corner;
  std::vector<Channel> channels{kAllChannels.begin(), kAllChannels.end()};
};

/// For each selected channel independently, sets components with fewer than
/// `threshold_voxels` voxels to background. A component of exactly the
/// threshold size is kept.
LabelVolume filter_small_components(const LabelVolume& vol, const FilterOptions& options = {});

/// Compact provenance tag, e.g. "cc-filter t=125 c=26 ch=T2H,ET,CC".
std::string describe(const FilterOptions& options);

}  // namespace pbtseg
