#include "pbtseg/manifest.hpp"

#include <algorithm>
#include <cctype>
#include <fstream>
#include <set>
#include <stdexcept>

#include "pbtseg/csv.hpp"

namespace pbtseg {

namespace {

std::string fold(std::string_view s) {
  std::string out;
  for (char c : s) {
    if (std::isalnum(static_cast<unsigned char>(c))) out += static_cast<char>(std::tolower(static_cast<unsigned char>(c)));
  }
  return out;
}

template <typename Enum, std::size_t N>
Enum parse_vocab(std::string_view s, const std::array<Enum, N>& all, std::string_view what) {
  const auto key = fold(s);
  for (auto e : all) {
    if (fold(to_string(e)) == key) return e;
  }
  throw std::invalid_argument("unknown " + std::string(what) + " '" + std::string(s) + "'");
}

}  // namespace

std::string_view to_string(TumourType t) {
  switch (t) {
    case TumourType::Medulloblastoma: return "Medulloblastoma";
    case TumourType::Ependymoma: return "Ependymoma";
    case TumourType::HighGradeGlioma: return "High Grade/Diffuse Midline Glioma";
    case TumourType::LowGradeGlioma: return "Low Grade Glioma";
    case TumourType::Other: return "Other";
  }
  return "?";
}

std::string_view to_string(Location l) {
  switch (l) {
    case Location::BrainHemispheres: return "Brain Hemispheres";
    case Location::PosteriorFossa: return "Posterior Fossa";
    case Location::Brainstem: return "Brainstem";
    case Location::Pinealis: return "Pinealis";
    case Location::Other: return "Other";
  }
  return "?";
}

std::string_view to_string(Sex s) { return s == Sex::F ? "F" : "M"; }
std::string_view to_string(Split s) { return s == Split::Train ? "train" : "test"; }

TumourType parse_tumour_type(std::string_view s) { return parse_vocab(s, kAllTumourTypes, "tumour type"); }
Location parse_location(std::string_view s) { return parse_vocab(s, kAllLocations, "tumour location"); }

Sex parse_sex(std::string_view s) {
  const auto k = fold(s);
  if (k == "f") return Sex::F;
  if (k == "m") return Sex::M;
  throw std::invalid_argument("sex must be F or M, got '" + std::string(s) + "'");
}

Split parse_split(std::string_view s) {
  const auto k = fold(s);
  if (k == "train") return Split::Train;
  if (k == "test") return Split::Test;
  throw std::invalid_argument("split must be train or test, got '" + std::string(s) + "'");
}

CaseManifest::CaseManifest(std::vector<CaseInfo> cases) : cases_(std::move(cases)) {
  for (std::size_t i = 0; i < cases_.size(); ++i) {
    const auto& c = cases_[i];
    if (c.case_id.empty()) throw std::invalid_argument("empty case_id");
    if (!(c.age_years >= 0.0)) throw std::invalid_argument("negative age for case " + c.case_id);
    if (!index_.emplace(c.case_id, i).second) throw std::invalid_argument("duplicate case_id " + c.case_id);
  }
}

bool CaseManifest::contains(std::string_view case_id) const { return index_.find(case_id) != index_.end(); }

const CaseInfo& CaseManifest::at(std::string_view case_id) const {
  auto it = index_.find(case_id);
  if (it == index_.end()) throw std::out_of_range("case '" + std::string(case_id) + "' not in manifest");
  return cases_[it->second];
}

std::vector<std::string> CaseManifest::sorted_ids() const {
  std::vector<std::string> ids;
  ids.reserve(index_.size());
  for (const auto& [id, _] : index_) ids.push_back(id);
  return ids;
}

CaseManifest parse_manifest(std::string_view text) {
  const auto table = csv::parse(text);
  csv::require_header(table, kManifestHeader);
  std::vector<CaseInfo> cases;
  std::set<std::string, std::less<>> seen;
  for (const auto& row : table.rows) {
    if (row.fields.size() != kManifestHeader.size()) {
      throw csv::ParseError(row.line, "expected 6 fields, got " + std::to_string(row.fields.size()));
    }
    try {
      CaseInfo c;
      c.case_id = row.fields[0];
      c.age_years = csv::parse_number(row.fields[1]);
      c.sex = parse_sex(row.fields[2]);
      c.tumour_type = parse_tumour_type(row.fields[3]);
      c.location = parse_location(row.fields[4]);
      c.split = parse_split(row.fields[5]);
      if (c.case_id.empty()) throw std::invalid_argument("empty case_id");
      if (!(c.age_years >= 0.0)) throw std::invalid_argument("age_years must be non-negative");
      if (!seen.insert(c.case_id).second) throw std::invalid_argument("duplicate case_id " + c.case_id);
      cases.push_back(std::move(c));
    } catch (const std::invalid_argument& e) {
      throw csv::ParseError(row.line, e.what());
    }
  }
  return CaseManifest(std::move(cases));
}

CaseManifest read_manifest(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("cannot open manifest " + path.string());
  std::string text((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  try {
    return parse_manifest(text);
  } catch (const csv::ParseError& e) {
    throw std::runtime_error(path.string() + ": " + e.what());
  }
}

std::string format_manifest(const CaseManifest& manifest) {
  std::string out = csv::join(kManifestHeader) + "\n";
  for (const auto& c : manifest.cases()) {
    out += csv::join({c.case_id, csv::format_number(c.age_years), std::string(to_string(c.sex)),
                      std::string(to_string(c.tumour_type)), std::string(to_string(c.location)),
                      std::string(to_string(c.split))});
    out += "\n";
  }
  return out;
}

void write_manifest(const CaseManifest& manifest, const std::filesystem::path& path) {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw std::runtime_error("cannot write " + path.string());
  out << format_manifest(manifest);
}

}  // namespace pbtseg
