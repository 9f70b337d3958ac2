#pragma once

// Volumetric similarity metrics, per-case evaluation over the three label
// channels plus the derived whole tumour, rater agreement, and stratified
// median (SD) aggregation.

#include <array>
#include <filesystem>
#include <map>
#include <optional>
#include <ostream>
#include <string>
#include <vector>

#include "pbtseg/manifest.hpp"
#include "pbtseg/volume.hpp"

namespace pbtseg {

enum class EvalChannel { T2H, ET, CC, WT };

inline constexpr std::array<EvalChannel, 4> kEvalChannels{EvalChannel::T2H, EvalChannel::ET, EvalChannel::CC,
                                                          EvalChannel::WT};

std::string_view to_string(EvalChannel c);
EvalChannel parse_eval_channel(std::string_view s);
EvalChannel to_eval_channel(Channel c);

/// What dice() returns when both masks are empty.
enum class EmptyPolicy { Exclude, One };

std::string_view to_string(EmptyPolicy p);
EmptyPolicy parse_empty_policy(std::string_view s);

/// 2|A n B| / (|A| + |B|). Zero when exactly one mask is empty; when both are
/// empty, nullopt under Exclude and 1.0 under One. Throws GeometryError on
/// incompatible masks.
std::optional<double> dice(const BinaryMask& a, const BinaryMask& b, EmptyPolicy policy = EmptyPolicy::Exclude);

/// 100 * |pred - ref| / ref; nullopt when ref is zero.
std::optional<double> volume_difference_pct(double vol_pred_ml, double vol_ref_ml);

struct MetricRecord {
  std::string case_id;
  EvalChannel channel = EvalChannel::WT;
  std::optional<double> dsc;
  double vol_pred_ml = 0.0;
  double vol_ref_ml = 0.0;
  std::optional<double> vol_diff_pct;
  bool ref_empty = false;
  bool pred_empty = false;

  friend bool operator==(const MetricRecord&, const MetricRecord&) = default;
};

/// One record each for T2H, ET, CC and WT (in that order). WT is scored on the
/// union masks.
std::array<MetricRecord, 4> evaluate_case(const std::string& case_id, const LabelVolume& pred, const LabelVolume& ref,
                                          EmptyPolicy policy = EmptyPolicy::Exclude);

using LabelSet = std::map<std::string, LabelVolume>;

/// evaluate_case over every case with `reference` as the reference side. Used
/// for both intra-rater (two timepoints) and inter-rater (two raters) analyses.
/// Throws std::invalid_argument when the case sets differ.
std::vector<MetricRecord> pairwise_agreement(const LabelSet& reference, const LabelSet& other,
                                             EmptyPolicy policy = EmptyPolicy::Exclude);

enum class Metric { Dice, VolumeDifference };
enum class StratifierAxis { None, TumourType, Location };

std::string_view to_string(Metric m);
std::string_view to_string(StratifierAxis a);
StratifierAxis parse_stratifier(std::string_view s);

struct AggregateRow {
  EvalChannel channel = EvalChannel::WT;
  Metric metric = Metric::Dice;
  StratifierAxis axis = StratifierAxis::None;
  std::string stratum;  // "All" when unstratified
  std::size_t n = 0;
  std::size_t excluded = 0;  // undefined metric values left out of n
  std::optional<double> median;
  std::optional<double> sd;
  std::optional<double> mean;
};

/// Groups by channel (and stratum when `axis` is not None). Stratified rows
/// cover every vocabulary category, including empty ones. Throws
/// std::out_of_range when a stratified record's case is not in `manifest`.
std::vector<AggregateRow> aggregate(const std::vector<MetricRecord>& records, Metric metric, StratifierAxis axis,
                                    const CaseManifest* manifest = nullptr);

inline const std::vector<std::string> kMetricsHeader{"case_id",    "channel",      "dsc",       "vol_pred_ml",
                                                     "vol_ref_ml", "vol_diff_pct", "ref_empty", "pred_empty"};
inline const std::vector<std::string> kAggregateHeader{"metric", "channel", "axis",   "stratum",
                                                       "n",      "excluded", "median", "sd", "mean"};

/// `provenance` lines are written first as '#key=value' comments.
void write_metrics_csv(std::ostream& out, const std::vector<MetricRecord>& records,
                       const std::vector<std::pair<std::string, std::string>>& provenance = {});
struct MetricsFile {
  std::vector<std::pair<std::string, std::string>> provenance;
  std::vector<MetricRecord> records;
};
MetricsFile read_metrics_csv(const std::filesystem::path& path);
MetricsFile parse_metrics_csv(std::string_view text);

void write_aggregate_csv(std::ostream& out, const std::vector<AggregateRow>& rows,
                         const std::vector<std::pair<std::string, std::string>>& provenance = {});

}  // namespace pbtseg
