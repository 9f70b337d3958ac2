#pragma once

// Shared helpers for the test binaries: random volume generators, a
// brute-force flood-fill labeller and a scratch directory.

#include <cstdint>
#include <deque>
#include <filesystem>
#include <random>
#include <string>
#include <vector>

#include "pbtseg/components.hpp"
#include "pbtseg/phantom.hpp"
#include "pbtseg/volume.hpp"

namespace testing {

using namespace pbtseg;

struct ScratchDir {
  std::filesystem::path path;
  explicit ScratchDir(const std::string& tag) {
    static std::uint64_t counter = 0;
    std::random_device rd;
    path = std::filesystem::temp_directory_path() /
           ("pbtseg-" + tag + "-" + std::to_string(rd()) + "-" + std::to_string(counter++));
    std::filesystem::create_directories(path);
  }
  ~ScratchDir() {
    std::error_code ec;
    std::filesystem::remove_all(path, ec);
  }
  ScratchDir(const ScratchDir&) = delete;
  ScratchDir& operator=(const ScratchDir&) = delete;
};

inline Shape random_shape(Xorshift64& rng, std::size_t max_dim) {
  return {1 + rng.below(max_dim), 1 + rng.below(max_dim), 1 + rng.below(max_dim)};
}

inline BinaryMask random_mask(Xorshift64& rng, Shape shape, double density) {
  const auto g = VolumeGeometry::isotropic(shape);
  std::vector<std::uint8_t> bits(g.voxel_count());
  for (auto& b : bits) b = rng.uniform() < density ? 1 : 0;
  return BinaryMask(g, std::move(bits));
}

inline LabelVolume random_labels(Xorshift64& rng, Shape shape, double density) {
  const auto g = VolumeGeometry::isotropic(shape);
  std::vector<std::uint8_t> codes(g.voxel_count());
  for (auto& c : codes) c = rng.uniform() < density ? static_cast<std::uint8_t>(1 + rng.below(3)) : 0;
  return LabelVolume(g, std::move(codes));
}

/// Neighbour offsets written out from the definition: face neighbours differ
/// in one coordinate, edge neighbours in at most two, corner in at most three.
inline std::vector<std::array<int, 3>> oracle_offsets(int connectivity) {
  const int max_changed = connectivity == 6 ? 1 : connectivity == 18 ? 2 : 3;
  std::vector<std::array<int, 3>> out;
  for (int dz = -1; dz <= 1; ++dz)
    for (int dy = -1; dy <= 1; ++dy)
      for (int dx = -1; dx <= 1; ++dx) {
        const int changed = (dx != 0) + (dy != 0) + (dz != 0);
        if (changed > 0 && changed <= max_changed) out.push_back({dx, dy, dz});
      }
  return out;
}

/// Breadth-first flood fill, seeded in raster order.
inline std::vector<std::uint32_t> flood_fill_oracle(const BinaryMask& mask, int connectivity) {
  const auto& g = mask.geometry();
  const auto [nx, ny, nz] = g.shape();
  const auto offsets = oracle_offsets(connectivity);
  std::vector<std::uint32_t> label(g.voxel_count(), 0);
  std::uint32_t next = 0;
  for (std::size_t z = 0; z < nz; ++z)
    for (std::size_t y = 0; y < ny; ++y)
      for (std::size_t x = 0; x < nx; ++x) {
        const auto seed = g.index(x, y, z);
        if (!mask.bits()[seed] || label[seed]) continue;
        label[seed] = ++next;
        std::deque<std::array<std::int64_t, 3>> queue{{static_cast<std::int64_t>(x), static_cast<std::int64_t>(y),
                                                       static_cast<std::int64_t>(z)}};
        while (!queue.empty()) {
          const auto p = queue.front();
          queue.pop_front();
          for (const auto& d : offsets) {
            const std::int64_t qx = p[0] + d[0], qy = p[1] + d[1], qz = p[2] + d[2];
            if (!g.contains(qx, qy, qz)) continue;
            const auto q = g.index(static_cast<std::size_t>(qx), static_cast<std::size_t>(qy),
                                   static_cast<std::size_t>(qz));
            if (mask.bits()[q] && !label[q]) {
              label[q] = next;
              queue.push_back({qx, qy, qz});
            }
          }
        }
      }
  return label;
}

/// True when the two labellings induce the same partition of the foreground.
inline bool same_partition(const std::vector<std::uint32_t>& a, const std::vector<std::uint32_t>& b) {
  if (a.size() != b.size()) return false;
  std::vector<std::int64_t> ab, ba;
  for (std::size_t i = 0; i < a.size(); ++i) {
    if ((a[i] == 0) != (b[i] == 0)) return false;
    if (a[i] == 0) continue;
    if (ab.size() <= a[i]) ab.resize(a[i] + 1, -1);
    if (ba.size() <= b[i]) ba.resize(b[i] + 1, -1);
    if (ab[a[i]] == -1) ab[a[i]] = b[i];
    if (ba[b[i]] == -1) ba[b[i]] = a[i];
    if (ab[a[i]] != b[i] || ba[b[i]] != a[i]) return false;
  }
  return true;
}

/// Integer lattice points with x^2 + y^2 + z^2 <= r^2.
inline std::size_t lattice_points_in_ball(int r) {
  std::size_t n = 0;
  for (int z = -r; z <= r; ++z)
    for (int y = -r; y <= r; ++y)
      for (int x = -r; x <= r; ++x) n += x * x + y * y + z * z <= r * r;
  return n;
}

/// Places a cube of side `s` with its lowest corner at `at`.
inline void paint_cube(std::vector<std::uint8_t>& codes, const VolumeGeometry& g, std::array<std::size_t, 3> at,
                       std::size_t s, std::uint8_t code) {
  for (std::size_t z = at[2]; z < at[2] + s; ++z)
    for (std::size_t y = at[1]; y < at[1] + s; ++y)
      for (std::size_t x = at[0]; x < at[0] + s; ++x) codes[g.index(x, y, z)] = code;
}

}  // namespace testing
