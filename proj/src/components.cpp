#include "pbtseg/components.hpp"

#include <algorithm>
#include <numeric>
#include <stdexcept>
#include <string>

namespace pbtseg {

namespace {

struct Offset {
  std::int64_t dx, dy, dz;
};

// Neighbours already visited in a raster scan (z outer, x inner).
std::vector<Offset> backward_neighbours(Connectivity conn) {
  const int max_order = conn == Connectivity::Face ? 1 : conn == Connectivity::Edge ? 2 : 3;
  std::vector<Offset> out;
  for (std::int64_t dz = -1; dz <= 0; ++dz) {
    for (std::int64_t dy = -1; dy <= 1; ++dy) {
      for (std::int64_t dx = -1; dx <= 1; ++dx) {
        const bool before = dz < 0 || (dz == 0 && dy < 0) || (dz == 0 && dy == 0 && dx < 0);
        if (!before) continue;
        const int order = static_cast<int>((dx != 0) + (dy != 0) + (dz != 0));
        if (order <= max_order) out.push_back({dx, dy, dz});
      }
    }
  }
  return out;
}

class DisjointSet {
public:
  std::uint32_t make() {
    parent_.push_back(static_cast<std::uint32_t>(parent_.size()));
    return parent_.back();
  }
  std::uint32_t find(std::uint32_t x) {
    while (parent_[x] != x) {
      parent_[x] = parent_[parent_[x]];
      x = parent_[x];
    }
    return x;
  }
  void unite(std::uint32_t a, std::uint32_t b) {
    a = find(a);
    b = find(b);
    if (a == b) return;
    if (a < b) {
      parent_[b] = a;
    } else {
      parent_[a] = b;
    }
  }

private:
  std::vector<std::uint32_t> parent_;
};

}  // namespace

Connectivity connectivity_from_int(int kind) {
  switch (kind) {
    case 6: return Connectivity::Face;
    case 18: return Connectivity::Edge;
    case 26: return Connectivity::Corner;
    default: throw std::invalid_argument("connectivity must be 6, 18 or 26, got " + std::to_string(kind));
  }
}

ComponentSet connected_components(const BinaryMask& mask, Connectivity conn) {
  const auto& g = mask.geometry();
  const auto [nx, ny, nz] = g.shape();
  const auto bits = mask.bits();
  const auto neighbours = backward_neighbours(conn);

  // provisional labels are stored +1 so that 0 stays background
  std::vector<std::uint32_t> labels(bits.size(), 0);
  DisjointSet sets;

  for (std::size_t z = 0; z < nz; ++z) {
    for (std::size_t y = 0; y < ny; ++y) {
      for (std::size_t x = 0; x < nx; ++x) {
        const std::size_t i = g.index(x, y, z);
        if (!bits[i]) continue;
        std::uint32_t current = 0;
        for (const auto& o : neighbours) {
          const auto px = static_cast<std::int64_t>(x) + o.dx;
          const auto py = static_cast<std::int64_t>(y) + o.dy;
          const auto pz = static_cast<std::int64_t>(z) + o.dz;
          if (!g.contains(px, py, pz)) continue;
          const auto n = labels[g.index(static_cast<std::size_t>(px), static_cast<std::size_t>(py),
                                        static_cast<std::size_t>(pz))];
          if (n == 0) continue;
          if (current == 0) {
            current = n;
          } else if (n != current) {
            sets.unite(current - 1, n - 1);
          }
        }
        labels[i] = current != 0 ? current : sets.make() + 1;
      }
    }
  }

  ComponentSet out{g, {}, {}, {}};
  std::vector<std::uint32_t> final_id;  // root -> final id, 0 = unassigned
  for (std::size_t z = 0; z < nz; ++z) {
    for (std::size_t y = 0; y < ny; ++y) {
      for (std::size_t x = 0; x < nx; ++x) {
        const std::size_t i = g.index(x, y, z);
        if (labels[i] == 0) continue;
        const auto root = sets.find(labels[i] - 1);
        if (root >= final_id.size()) final_id.resize(root + 1, 0);
        auto& id = final_id[root];
        if (id == 0) {
          out.sizes.push_back(0);
          out.boxes.push_back(BoundingBox{{x, y, z}, {x, y, z}});
          id = static_cast<std::uint32_t>(out.sizes.size());
        }
        labels[i] = id;
        ++out.sizes[id - 1];
        auto& box = out.boxes[id - 1];
        const std::array<std::size_t, 3> p{x, y, z};
        for (int a = 0; a < 3; ++a) {
          box.min[a] = std::min(box.min[a], p[a]);
          box.max[a] = std::max(box.max[a], p[a]);
        }
      }
    }
  }
  out.labels = std::move(labels);
  return out;
}

std::vector<ComponentStat> component_stats(const ComponentSet& cs) {
  const double voxel_mm3 = cs.geometry.voxel_volume_mm3();
  std::vector<ComponentStat> stats;
  stats.reserve(cs.count());
  for (std::size_t k = 0; k < cs.count(); ++k) {
    stats.push_back({static_cast<std::uint32_t>(k + 1), cs.sizes[k],
                     static_cast<double>(cs.sizes[k]) * voxel_mm3 / 1000.0, cs.boxes[k]});
  }
  std::stable_sort(stats.begin(), stats.end(),
                   [](const ComponentStat& a, const ComponentStat& b) { return a.voxels > b.voxels; });
  return stats;
}

LabelVolume filter_small_components(const LabelVolume& vol, const FilterOptions& options) {
  if (options.threshold_voxels == 0) throw std::invalid_argument("component threshold must be >= 1 voxel");
  std::vector<std::uint8_t> codes(vol.codes().begin(), vol.codes().end());
  for (const auto channel : options.channels) {
    const auto cs = connected_components(channel_mask(vol, channel), options.connectivity);
    for (std::size_t i = 0; i < codes.size(); ++i) {
      const auto id = cs.labels[i];
      if (id != 0 && cs.sizes[id - 1] < options.threshold_voxels) codes[i] = kBackground;
    }
  }
  return LabelVolume(vol.geometry(), std::move(codes));
}

std::string describe(const FilterOptions& options) {
  std::string ch;
  for (auto c : options.channels) {
    if (!ch.empty()) ch += ',';
    ch += to_string(c);
  }
  return "cc-filter t=" + std::to_string(options.threshold_voxels) + " c=" + std::to_string(to_int(options.connectivity)) +
         " ch=" + ch;
}

}  // namespace pbtseg
