#include "pbtseg/phantom.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>
#include <stdexcept>

#include "pbtseg/nifti.hpp"

namespace pbtseg {

double Xorshift64::normal() noexcept {
  double u1 = uniform();
  while (u1 <= 0.0) u1 = uniform();
  const double u2 = uniform();
  return std::sqrt(-2.0 * std::log(u1)) * std::cos(2.0 * std::numbers::pi * u2);
}

namespace {

struct Radii {
  double t2h;
  double cc;  // 0 when absent
  double et_inner;
  double et_outer;  // == et_inner when absent
};

Radii radii_of(const PhantomSpec& s) {
  Radii r{s.t2h_radius_mm, s.cc_radius_mm.value_or(0.0), 0.0, 0.0};
  if (s.et_shell_mm) {
    r.et_inner = r.cc;
    if (s.cc_radius_mm && s.cyst_style == CystStyle::NonEnhancing) r.et_inner += kNonEnhancingGapMm;
    r.et_outer = r.et_inner + *s.et_shell_mm;
  }
  return r;
}

// Region intensities per sequence (kAllSequences order), indexed by label code.
constexpr std::array<std::array<float, 4>, 4> kRegionIntensity{{
    {100.f, 85.f, 210.f, 45.f},   // T1-C
    {100.f, 80.f, 90.f, 40.f},    // T1
    {100.f, 180.f, 160.f, 250.f}, // T2
    {100.f, 190.f, 170.f, 60.f},  // FLAIR
}};

std::uint64_t mix(std::uint64_t a, std::uint64_t b) {
  // splitmix64 finaliser over a ^ golden-ratio-scaled b
  std::uint64_t z = a ^ (b * 0x9E3779B97F4A7C15ULL);
  z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ULL;
  z = (z ^ (z >> 27)) * 0x94D049BB133111EBULL;
  return z ^ (z >> 31);
}

}  // namespace

void validate(const PhantomSpec& s) {
  if (!(s.t2h_radius_mm > 0.0)) throw std::invalid_argument("T2H radius must be positive");
  if (s.cc_radius_mm && !(*s.cc_radius_mm > 0.0)) throw std::invalid_argument("CC radius must be positive");
  if (s.et_shell_mm && !(*s.et_shell_mm > 0.0)) throw std::invalid_argument("ET shell thickness must be positive");
  if (!(s.noise_sd >= 0.0)) throw std::invalid_argument("noise SD must be non-negative");
  for (auto a : s.axis_scale) {
    if (!(a > 0.0)) throw std::invalid_argument("axis scale must be positive");
  }
  const auto r = radii_of(s);
  if (!(r.cc < r.t2h)) throw std::invalid_argument("CC core must be smaller than the T2H radius");
  if (s.et_shell_mm && !(r.et_outer < r.t2h)) {
    throw std::invalid_argument("ET shell must lie strictly inside the T2H region");
  }
  VolumeGeometry(s.shape, s.spacing);  // validates shape/spacing
  for (int a = 0; a < 3; ++a) {
    const double extent_vox = s.t2h_radius_mm * s.axis_scale[a] / s.spacing[a];
    if (s.centre[a] - extent_vox < 0.0 || s.centre[a] + extent_vox > static_cast<double>(s.shape[a] - 1)) {
      throw std::invalid_argument("phantom radii exceed the grid");
    }
  }
}

const IntensityVolume& Phantom::image(Sequence s) const {
  for (const auto& img : images) {
    if (img.sequence() == s) return img;
  }
  throw std::out_of_range("phantom has no such sequence");
}

Phantom generate_phantom(const PhantomSpec& s) {
  validate(s);
  const VolumeGeometry g(s.shape, s.spacing);
  const auto r = radii_of(s);
  const auto [nx, ny, nz] = s.shape;

  std::vector<std::uint8_t> codes(g.voxel_count(), kBackground);
  for (std::size_t z = 0; z < nz; ++z) {
    for (std::size_t y = 0; y < ny; ++y) {
      for (std::size_t x = 0; x < nx; ++x) {
        const std::array<double, 3> p{static_cast<double>(x), static_cast<double>(y), static_cast<double>(z)};
        double d2 = 0.0;
        for (int a = 0; a < 3; ++a) {
          const double mm = (p[a] - s.centre[a]) * s.spacing[a] / s.axis_scale[a];
          d2 += mm * mm;
        }
        const double d = std::sqrt(d2);
        std::uint8_t code = kBackground;
        if (s.cc_radius_mm && d <= r.cc) {
          code = static_cast<std::uint8_t>(Channel::CC);
        } else if (s.et_shell_mm && d > r.et_inner && d <= r.et_outer) {
          code = static_cast<std::uint8_t>(Channel::ET);
        } else if (s.et_shell_mm && !s.cc_radius_mm && d <= r.et_outer) {
          code = static_cast<std::uint8_t>(Channel::ET);  // solid enhancing core
        } else if (d <= r.t2h) {
          code = static_cast<std::uint8_t>(Channel::T2H);
        }
        codes[g.index(x, y, z)] = code;
      }
    }
  }

  std::vector<IntensityVolume> images;
  images.reserve(kAllSequences.size());
  for (std::size_t k = 0; k < kAllSequences.size(); ++k) {
    Xorshift64 rng(mix(s.seed, k + 1));
    std::vector<float> values(codes.size());
    for (std::size_t i = 0; i < codes.size(); ++i) {
      values[i] = kRegionIntensity[k][codes[i]] + static_cast<float>(s.noise_sd * rng.normal());
    }
    images.emplace_back(g, std::move(values), kAllSequences[k]);
  }
  return Phantom{LabelVolume(g, std::move(codes)), std::move(images)};
}

namespace {

constexpr std::array<std::array<int, 3>, 26> neighbourhood26() {
  std::array<std::array<int, 3>, 26> out{};
  std::size_t n = 0;
  for (int dz = -1; dz <= 1; ++dz) {
    for (int dy = -1; dy <= 1; ++dy) {
      for (int dx = -1; dx <= 1; ++dx) {
        if (dx == 0 && dy == 0 && dz == 0) continue;
        out[n++] = {dx, dy, dz};
      }
    }
  }
  return out;
}

constexpr auto kNeighbours = neighbourhood26();

std::vector<std::uint8_t> translate(const LabelVolume& gt, const Translate& t) {
  const auto& g = gt.geometry();
  const auto [nx, ny, nz] = g.shape();
  std::vector<std::uint8_t> out(g.voxel_count(), kBackground);
  for (std::size_t z = 0; z < nz; ++z) {
    for (std::size_t y = 0; y < ny; ++y) {
      for (std::size_t x = 0; x < nx; ++x) {
        const auto sx = static_cast<std::int64_t>(x) - t.offset[0];
        const auto sy = static_cast<std::int64_t>(y) - t.offset[1];
        const auto sz = static_cast<std::int64_t>(z) - t.offset[2];
        if (!g.contains(sx, sy, sz)) continue;
        out[g.index(x, y, z)] =
            gt.at(static_cast<std::size_t>(sx), static_cast<std::size_t>(sy), static_cast<std::size_t>(sz));
      }
    }
  }
  return out;
}

// One step of 26-neighbour dilation (grow) or erosion (!grow). A grown voxel
// takes the code of its first labelled neighbour in fixed offset order.
std::vector<std::uint8_t> morph_step(const VolumeGeometry& g, const std::vector<std::uint8_t>& in, bool grow) {
  const auto [nx, ny, nz] = g.shape();
  std::vector<std::uint8_t> out(in);
  for (std::size_t z = 0; z < nz; ++z) {
    for (std::size_t y = 0; y < ny; ++y) {
      for (std::size_t x = 0; x < nx; ++x) {
        const std::size_t i = g.index(x, y, z);
        if (grow == (in[i] != kBackground)) continue;
        for (const auto& o : kNeighbours) {
          const auto px = static_cast<std::int64_t>(x) + o[0];
          const auto py = static_cast<std::int64_t>(y) + o[1];
          const auto pz = static_cast<std::int64_t>(z) + o[2];
          const bool inside = g.contains(px, py, pz);
          const std::uint8_t n = inside ? in[g.index(static_cast<std::size_t>(px), static_cast<std::size_t>(py),
                                                     static_cast<std::size_t>(pz))]
                                        : kBackground;
          if (grow && n != kBackground) {
            out[i] = n;
            break;
          }
          if (!grow && n == kBackground) {
            out[i] = kBackground;
            break;
          }
        }
      }
    }
  }
  return out;
}

std::vector<std::uint8_t> speckle(const LabelVolume& gt, const Speckle& sp, std::uint64_t seed) {
  if (sp.size == 0) throw std::invalid_argument("speckle size must be >= 1");
  const auto& g = gt.geometry();
  const auto shape = g.shape();
  std::vector<std::uint8_t> out(gt.codes().begin(), gt.codes().end());
  if (sp.count == 0) return out;

  // Blob = first `size` voxels, in raster order, of a side^3 box.
  std::size_t side = 1;
  while (side * side * side < sp.size) ++side;
  const std::size_t rows = (sp.size + side - 1) / side;
  const std::array<std::size_t, 3> extent{std::min(side, sp.size), std::min(side, rows),
                                          (sp.size + side * side - 1) / (side * side)};
  for (int a = 0; a < 3; ++a) {
    if (extent[a] > shape[a]) throw std::runtime_error("speckle does not fit in the grid");
  }

  Xorshift64 rng(seed);
  const std::size_t max_attempts = 2000 * sp.count + 10000;
  std::size_t placed = 0;
  constexpr std::int64_t kMargin = 2;
  for (std::size_t attempt = 0; attempt < max_attempts && placed < sp.count; ++attempt) {
    std::array<std::size_t, 3> corner{};
    for (int a = 0; a < 3; ++a) corner[a] = rng.below(shape[a] - extent[a] + 1);
    bool clear = true;
    for (std::int64_t z = static_cast<std::int64_t>(corner[2]) - kMargin;
         clear && z < static_cast<std::int64_t>(corner[2] + extent[2]) + kMargin; ++z) {
      for (std::int64_t y = static_cast<std::int64_t>(corner[1]) - kMargin;
           clear && y < static_cast<std::int64_t>(corner[1] + extent[1]) + kMargin; ++y) {
        for (std::int64_t x = static_cast<std::int64_t>(corner[0]) - kMargin;
             x < static_cast<std::int64_t>(corner[0] + extent[0]) + kMargin; ++x) {
          if (!g.contains(x, y, z)) continue;
          if (out[g.index(static_cast<std::size_t>(x), static_cast<std::size_t>(y), static_cast<std::size_t>(z))] !=
              kBackground) {
            clear = false;
            break;
          }
        }
      }
    }
    if (!clear) continue;
    std::size_t filled = 0;
    for (std::size_t z = 0; z < extent[2] && filled < sp.size; ++z) {
      for (std::size_t y = 0; y < side && filled < sp.size; ++y) {
        for (std::size_t x = 0; x < side && filled < sp.size; ++x) {
          out[g.index(corner[0] + x, corner[1] + y, corner[2] + z)] = static_cast<std::uint8_t>(sp.channel);
          ++filled;
        }
      }
    }
    ++placed;
  }
  if (placed < sp.count) {
    throw std::runtime_error("could only place " + std::to_string(placed) + " of " + std::to_string(sp.count) +
                             " speckles");
  }
  return out;
}

}  // namespace

LabelVolume perturb(const LabelVolume& gt, const PerturbationSpec& p) {
  const auto& g = gt.geometry();
  std::vector<std::uint8_t> codes = std::visit(
      [&](const auto& kind) -> std::vector<std::uint8_t> {
        using T = std::decay_t<decltype(kind)>;
        if constexpr (std::is_same_v<T, Translate>) {
          return translate(gt, kind);
        } else if constexpr (std::is_same_v<T, Dilate> || std::is_same_v<T, Erode>) {
          std::vector<std::uint8_t> cur(gt.codes().begin(), gt.codes().end());
          for (std::size_t i = 0; i < kind.k; ++i) cur = morph_step(g, cur, std::is_same_v<T, Dilate>);
          return cur;
        } else if constexpr (std::is_same_v<T, Speckle>) {
          return speckle(gt, kind, p.seed);
        } else {
          std::vector<std::uint8_t> cur(gt.codes().begin(), gt.codes().end());
          const auto code = static_cast<std::uint8_t>(kind.channel);
          std::replace(cur.begin(), cur.end(), code, kBackground);
          return cur;
        }
      },
      p.kind);
  return LabelVolume(g, std::move(codes));
}

SyntheticCase make_synthetic_case(const CohortSpec& spec, std::size_t index) {
  Xorshift64 rng(mix(spec.seed, index + 1));
  char id[32];
  std::snprintf(id, sizeof(id), "%04zu", index + 1);

  CaseInfo info;
  info.case_id = spec.id_prefix + "_" + id;
  info.age_years = std::round(rng.uniform() * 180.0) / 10.0;
  info.sex = rng.below(2) == 0 ? Sex::F : Sex::M;
  info.tumour_type = kAllTumourTypes[index % kAllTumourTypes.size()];
  info.location = kAllLocations[(index + index / kAllLocations.size()) % kAllLocations.size()];
  info.split = Split::Test;

  PhantomSpec ps;
  ps.shape = spec.shape;
  ps.spacing = spec.spacing;
  ps.t2h_radius_mm = spec.min_radius_mm + rng.uniform() * (spec.max_radius_mm - spec.min_radius_mm);
  for (int a = 0; a < 3; ++a) {
    const double mid = (static_cast<double>(spec.shape[a]) - 1.0) / 2.0;
    const double room = mid - ps.t2h_radius_mm / spec.spacing[a] - 1.0;
    const double jitter = std::max(0.0, std::min(room, 3.0));
    ps.centre[a] = mid + (rng.uniform() * 2.0 - 1.0) * jitter;
  }
  const bool has_cc = rng.uniform() < spec.cc_probability;
  const bool has_et = rng.uniform() < spec.et_probability;
  ps.cyst_style = rng.below(2) == 0 ? CystStyle::RingEnhancing : CystStyle::NonEnhancing;
  if (has_cc) ps.cc_radius_mm = 0.3 * ps.t2h_radius_mm;
  if (has_et) ps.et_shell_mm = 0.2 * ps.t2h_radius_mm;
  ps.seed = rng.next();

  auto phantom = generate_phantom(ps);
  LabelVolume prediction = phantom.labels;
  for (std::size_t k = 0; k < spec.perturbations.size(); ++k) {
    auto p = spec.perturbations[k];
    p.seed = mix(p.seed ^ ps.seed, k + 1);
    prediction = perturb(prediction, p);
  }
  return SyntheticCase{std::move(info), ps, std::move(phantom), std::move(prediction)};
}

CaseManifest cohort_manifest(const CohortSpec& spec) {
  std::vector<CaseInfo> infos;
  for (std::size_t i = 0; i < spec.cases; ++i) infos.push_back(make_synthetic_case(spec, i).info);
  return CaseManifest(std::move(infos));
}

void write_cohort(const CohortSpec& spec, const std::filesystem::path& out) {
  std::vector<CaseInfo> infos;
  for (std::size_t i = 0; i < spec.cases; ++i) {
    const auto c = make_synthetic_case(spec, i);
    const auto dir = out / "cohort" / c.info.case_id;
    for (const auto& img : c.phantom.images) {
      save_nifti(img, dir / (std::string(file_stem(img.sequence())) + ".nii.gz"));
    }
    save_nifti(c.phantom.labels, dir / "seg.nii.gz", "synthetic ground truth");
    save_nifti(c.prediction, out / "pred" / c.info.case_id / "pred.nii.gz", "synthetic prediction");
    infos.push_back(c.info);
  }
  write_manifest(CaseManifest(std::move(infos)), out / "manifest.csv");
}

}  // namespace pbtseg
