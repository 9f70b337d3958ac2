#pragma once

// Batch orchestration: cohort directory conventions, postprocess/evaluate
// runs, rater agreement, the sequence-combination study, contouring-time
// savings and report formatting.
//
// Cohort layout: <root>/<case_id>/{t1,t1c,t2,flair}.nii.gz plus seg.nii.gz for
// references; prediction roots mirror it with pred.nii.gz.

#include <filesystem>
#include <optional>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

#include "pbtseg/components.hpp"
#include "pbtseg/manifest.hpp"
#include "pbtseg/metrics.hpp"
#include "pbtseg/phantom.hpp"

namespace pbtseg {

inline constexpr const char* kReferenceFile = "seg.nii.gz";
inline constexpr const char* kPredictionFile = "pred.nii.gz";

using Provenance = std::vector<std::pair<std::string, std::string>>;

/// Case ids (sorted) of subdirectories of `root` that contain `filename`.
std::vector<std::string> list_cases(const std::filesystem::path& root, const std::string& filename);

// ---- contouring time ----

/// (t_manual - t_ai_adjusted) / t_manual. Negative when the assisted workflow
/// is slower. Throws std::invalid_argument unless t_manual_s > 0.
double compute_time_saving(double t_manual_s, double t_ai_adjusted_s);

/// Nearest-integer percent, e.g. 0.8299 -> "83%".
std::string format_percent(double fraction);

struct TimingRecord {
  std::string case_id;
  Channel channel = Channel::T2H;
  double t_manual_s = 0.0;
  double t_ai_adjusted_s = 0.0;
};

struct TimingSummaryRow {
  Channel channel = Channel::T2H;
  std::size_t n = 0;
  double median_saving = 0.0;
  double mean_saving = 0.0;
  double median_manual_s = 0.0;
  double median_adjusted_s = 0.0;
};

struct TimingReport {
  std::vector<TimingRecord> records;
  std::vector<TimingSummaryRow> summary;  // channels with at least one record, T2H/ET/CC order
  std::vector<std::string> warnings;
};

/// Every rejected row, each tagged with its 1-based line number.
class TimingCsvError : public std::runtime_error {
public:
  explicit TimingCsvError(std::vector<std::pair<std::size_t, std::string>> problems);
  const std::vector<std::pair<std::size_t, std::string>>& problems() const noexcept { return problems_; }

private:
  std::vector<std::pair<std::size_t, std::string>> problems_;
};

inline const std::vector<std::string> kTimingHeader{"case_id", "channel", "t_manual_s", "t_ai_adjusted_s"};

TimingReport parse_timing_csv(std::string_view text);
TimingReport ingest_timing_csv(const std::filesystem::path& path);
std::string format_timing_report(const TimingReport& report);

// ---- postprocessing ----

/// Filters one label file; the filter settings are stored in the output header.
void postprocess_file(const std::filesystem::path& in, const std::filesystem::path& out, const FilterOptions& options);

struct PostprocessSummary {
  std::size_t cases = 0;
  std::size_t voxels_removed = 0;
};

/// Filters every <in>/<case>/<filename> into <out>/<case>/<filename> and
/// writes <out>/postprocess.json with the settings.
PostprocessSummary postprocess_directory(const std::filesystem::path& in, const std::filesystem::path& out,
                                         const FilterOptions& options, const std::string& filename = kPredictionFile);

// ---- evaluation ----

struct EvaluationOptions {
  std::optional<FilterOptions> filter;  // applied to predictions before scoring
  EmptyPolicy empty_policy = EmptyPolicy::Exclude;
  std::vector<StratifierAxis> axes{StratifierAxis::TumourType, StratifierAxis::Location};
  std::string prediction_file = kPredictionFile;
  std::string reference_file = kReferenceFile;
  std::size_t workers = 0;  // 0 = hardware concurrency
};

Provenance describe(const EvaluationOptions& options);

struct CaseError {
  std::string case_id;
  std::string message;
};

struct EvaluationResult {
  Provenance provenance;
  std::vector<MetricRecord> records;  // sorted by case id, then T2H/ET/CC/WT
  std::vector<AggregateRow> aggregates;  // per axis: dsc rows then vol_diff_pct rows
  std::vector<CaseError> errors;

  bool ok() const noexcept { return errors.empty(); }
};

/// Scores every manifest case. Missing files and geometry mismatches become
/// per-case errors; the remaining cases are still evaluated.
EvaluationResult run_evaluation(const std::filesystem::path& pred_dir, const std::filesystem::path& ref_dir,
                                const CaseManifest& manifest, const EvaluationOptions& options);

/// Writes metrics.csv, aggregates.csv and (when there are errors) errors.csv.
void write_evaluation(const EvaluationResult& result, const std::filesystem::path& out_dir);

/// Agreement between two annotation sets stored as <root>/<case>/<filename>;
/// `dir_a` is the reference side.
std::vector<MetricRecord> run_agreement(const std::filesystem::path& dir_a, const std::filesystem::path& dir_b,
                                        EmptyPolicy policy = EmptyPolicy::Exclude,
                                        const std::string& filename = kReferenceFile);

// ---- reports ----

enum class ReportFormat { Csv, Markdown };
ReportFormat parse_report_format(std::string_view s);

/// Table-2 style tables: one table per channel and metric, rows = strata,
/// columns = median, sd, n. Markdown shows "median (SD)" and rounds percentages.
std::string format_report(const std::vector<MetricRecord>& records, const std::vector<StratifierAxis>& axes,
                          const CaseManifest* manifest, ReportFormat format, const Provenance& provenance = {});

// ---- sequence-combination study ----

struct ComboSpec {
  /// Canonical order T1-C, T1, T2, FLAIR, without duplicates.
  std::vector<Sequence> sequences;

  /// '+'-joined canonical key, e.g. "T1-C+T1+T2".
  std::string name() const;
  /// Human-readable form, e.g. "T1-C + T1 + T2".
  std::string display_name() const;

  friend bool operator==(const ComboSpec&, const ComboSpec&) = default;
};

/// Order-insensitive and whitespace-insensitive; throws std::invalid_argument
/// for an empty list or an unknown sequence.
ComboSpec parse_combo(std::string_view text);

/// The thirteen studied combinations, full protocol first.
const std::vector<ComboSpec>& preset_combos();

struct StudyManifest {
  std::filesystem::path reference_dir;
  std::optional<std::filesystem::path> manifest;
  std::string prediction_file = kPredictionFile;
  std::vector<std::pair<ComboSpec, std::filesystem::path>> combos;
};

/// JSON: {"reference": dir, "manifest": csv?, "prediction_file": name?,
///        "combos": [{"name": "T1 + T2", "predictions": dir}, ...]}.
/// Relative paths resolve against `base_dir`.
StudyManifest parse_study_manifest(std::string_view json_text, const std::filesystem::path& base_dir);
StudyManifest read_study_manifest(const std::filesystem::path& path);

struct ComboRow {
  ComboSpec combo;
  std::array<AggregateRow, 4> dice;  // T2H, ET, CC, WT
};

struct ComboStudyResult {
  std::vector<ComboRow> rows;  // preset order, then any other combos by name
  std::vector<CaseError> errors;
};

ComboStudyResult run_combo_study(const StudyManifest& study, const EvaluationOptions& options = {});
std::string format_combo_table(const ComboStudyResult& result, ReportFormat format);

// ---- synthetic cohorts ----

/// JSON cohort description for the phantom command; see README for the keys.
CohortSpec parse_cohort_spec(std::string_view json_text);

}  // namespace pbtseg
