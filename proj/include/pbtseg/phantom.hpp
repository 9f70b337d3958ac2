#pragma once

// Synthetic tumour phantoms and seeded degradations used as ground truth for
// testing the evaluation pipeline.

#include <array>
#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <variant>
#include <vector>

#include "pbtseg/manifest.hpp"
#include "pbtseg/volume.hpp"

namespace pbtseg {

/// xorshift64* (Marsaglia shifts 12/25/27, multiplier 0x2545F4914F6CDD1D).
/// A zero seed is replaced by 0x9E3779B97F4A7C15 since zero is a fixed point.
/// uniform() uses the top 53 bits; below(n) is next() % n.
class Xorshift64 {
public:
  explicit Xorshift64(std::uint64_t seed) noexcept : state_(seed ? seed : 0x9E3779B97F4A7C15ULL) {}

  std::uint64_t next() noexcept {
    state_ ^= state_ >> 12;
    state_ ^= state_ << 25;
    state_ ^= state_ >> 27;
    return state_ * 0x2545F4914F6CDD1DULL;
  }
  double uniform() noexcept { return static_cast<double>(next() >> 11) * 0x1.0p-53; }
  std::uint64_t below(std::uint64_t n) noexcept { return n == 0 ? 0 : next() % n; }
  /// Box-Muller on two uniform() draws.
  double normal() noexcept;

private:
  std::uint64_t state_;
};

enum class CystStyle { RingEnhancing, NonEnhancing };

/// Gap of T2H tissue between a non-enhancing cyst and the enhancing shell.
inline constexpr double kNonEnhancingGapMm = 2.0;

struct PhantomSpec {
  Shape shape{64, 64, 64};
  Spacing spacing{1.0, 1.0, 1.0};
  std::array<double, 3> centre{31.5, 31.5, 31.5};  // voxel coordinates
  double t2h_radius_mm = 10.0;
  std::optional<double> et_shell_mm;
  std::optional<double> cc_radius_mm;
  CystStyle cyst_style = CystStyle::RingEnhancing;
  /// Per-axis semi-axis scale; (1,1,1) gives a sphere.
  std::array<double, 3> axis_scale{1.0, 1.0, 1.0};
  std::uint64_t seed = 1;
  double noise_sd = 5.0;
};

/// Throws std::invalid_argument unless the radii nest strictly and the T2H
/// ellipsoid fits inside the grid.
void validate(const PhantomSpec& spec);

struct Phantom {
  LabelVolume labels;
  /// Indexed like kAllSequences: T1-C, T1, T2, FLAIR.
  std::vector<IntensityVolume> images;

  const IntensityVolume& image(Sequence s) const;
};

/// A voxel belongs to a region when its centre lies inside the analytic surface.
Phantom generate_phantom(const PhantomSpec& spec);

struct Translate {
  std::array<std::int64_t, 3> offset{0, 0, 0};
};
struct Dilate {
  std::size_t k = 1;
};
struct Erode {
  std::size_t k = 1;
};
/// `count` separate blobs of exactly `size` voxels placed in background at
/// least two voxels away from any label.
struct Speckle {
  std::size_t count = 1;
  std::size_t size = 1;
  Channel channel = Channel::ET;
};
/// Relabels every voxel of the channel as background.
struct DropChannel {
  Channel channel = Channel::CC;
};

struct PerturbationSpec {
  std::variant<Translate, Dilate, Erode, Speckle, DropChannel> kind;
  std::uint64_t seed = 1;
};

/// Dilation and erosion act on the whole-tumour boundary under 26-adjacency.
/// Throws std::runtime_error when speckles cannot be placed.
LabelVolume perturb(const LabelVolume& gt, const PerturbationSpec& p);

struct CohortSpec {
  std::size_t cases = 20;
  std::uint64_t seed = 42;
  std::string id_prefix = "PBT";
  Shape shape{48, 48, 48};
  Spacing spacing{1.0, 1.0, 1.0};
  double min_radius_mm = 8.0;
  double max_radius_mm = 14.0;
  double et_probability = 0.7;
  double cc_probability = 0.3;
  /// Applied in order to each case's ground truth to form its prediction.
  std::vector<PerturbationSpec> perturbations;
};

struct SyntheticCase {
  CaseInfo info;
  PhantomSpec spec;
  Phantom phantom;
  LabelVolume prediction;
};

/// Tumour types and locations are assigned round-robin over the vocabularies.
SyntheticCase make_synthetic_case(const CohortSpec& spec, std::size_t index);
CaseManifest cohort_manifest(const CohortSpec& spec);

/// Writes <out>/cohort/<id>/{t1,t1c,t2,flair,seg}.nii.gz, <out>/pred/<id>/pred.nii.gz
/// and <out>/manifest.csv.
void write_cohort(const CohortSpec& spec, const std::filesystem::path& out);

}  // namespace pbtseg
