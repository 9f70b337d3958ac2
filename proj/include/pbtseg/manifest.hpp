#pragma once

// Cohort manifest: demographics plus the fixed histology and location
// vocabularies used for stratified reporting.

#include <array>
#include <filesystem>
#include <map>
#include <string>
#include <string_view>
#include <vector>

namespace pbtseg {

enum class TumourType { Medulloblastoma, Ependymoma, HighGradeGlioma, LowGradeGlioma, Other };
enum class Location { BrainHemispheres, PosteriorFossa, Brainstem, Pinealis, Other };
enum class Sex { F, M };
enum class Split { Train, Test };

inline constexpr std::array<TumourType, 5> kAllTumourTypes{TumourType::Medulloblastoma, TumourType::Ependymoma,
                                                           TumourType::HighGradeGlioma, TumourType::LowGradeGlioma,
                                                           TumourType::Other};
inline constexpr std::array<Location, 5> kAllLocations{Location::BrainHemispheres, Location::PosteriorFossa,
                                                       Location::Brainstem, Location::Pinealis, Location::Other};

std::string_view to_string(TumourType t);
std::string_view to_string(Location l);
std::string_view to_string(Sex s);
std::string_view to_string(Split s);
TumourType parse_tumour_type(std::string_view s);
Location parse_location(std::string_view s);
Sex parse_sex(std::string_view s);
Split parse_split(std::string_view s);

struct CaseInfo {
  std::string case_id;
  double age_years = 0.0;
  Sex sex = Sex::F;
  TumourType tumour_type = TumourType::Other;
  Location location = Location::Other;
  Split split = Split::Test;
};

class CaseManifest {
public:
  CaseManifest() = default;
  /// Throws std::invalid_argument on duplicate ids or negative ages.
  explicit CaseManifest(std::vector<CaseInfo> cases);

  const std::vector<CaseInfo>& cases() const noexcept { return cases_; }
  std::size_t size() const noexcept { return cases_.size(); }
  bool contains(std::string_view case_id) const;
  /// Throws std::out_of_range for an unknown id.
  const CaseInfo& at(std::string_view case_id) const;
  /// Case ids in ascending order.
  std::vector<std::string> sorted_ids() const;

private:
  std::vector<CaseInfo> cases_;
  std::map<std::string, std::size_t, std::less<>> index_;
};

inline const std::vector<std::string> kManifestHeader{"case_id", "age_years", "sex", "tumour_type", "location", "split"};

/// Parse errors carry the 1-based line number.
CaseManifest parse_manifest(std::string_view text);
CaseManifest read_manifest(const std::filesystem::path& path);
std::string format_manifest(const CaseManifest& manifest);
void write_manifest(const CaseManifest& manifest, const std::filesystem::path& path);

}  // namespace pbtseg
