#include "pbtseg/workflow.hpp"

#include <algorithm>
#include <atomic>
#include <cmath>
#include <fstream>
#include <map>
#include <mutex>
#include <sstream>
#include <thread>

#include <json.hpp>

#include "pbtseg/csv.hpp"
#include "pbtseg/nifti.hpp"
#include "pbtseg/stats.hpp"

namespace pbtseg {

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

std::string slurp(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("cannot open " + path.string());
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

void write_text(const fs::path& path, const std::string& text) {
  if (path.has_parent_path()) fs::create_directories(path.parent_path());
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw std::runtime_error("cannot write " + path.string());
  out << text;
  if (!out) throw std::runtime_error("write failed for " + path.string());
}

// Runs fn(i) for i in [0, n) on a bounded pool. fn must not throw.
template <typename Fn>
void parallel_for(std::size_t n, std::size_t workers, Fn&& fn) {
  if (workers == 0) workers = std::max(1u, std::thread::hardware_concurrency());
  workers = std::min(workers, n);
  if (workers <= 1) {
    for (std::size_t i = 0; i < n; ++i) fn(i);
    return;
  }
  std::atomic<std::size_t> next{0};
  std::vector<std::jthread> pool;
  pool.reserve(workers);
  for (std::size_t w = 0; w < workers; ++w) {
    pool.emplace_back([&] {
      for (std::size_t i = next++; i < n; i = next++) fn(i);
    });
  }
}

std::string fixed(double v, int digits) {
  char buf[64];
  std::snprintf(buf, sizeof(buf), "%.*f", digits, v);
  return buf;
}

}  // namespace

std::vector<std::string> list_cases(const fs::path& root, const std::string& filename) {
  if (!fs::is_directory(root)) throw std::runtime_error("not a directory: " + root.string());
  std::vector<std::string> ids;
  for (const auto& entry : fs::directory_iterator(root)) {
    if (entry.is_directory() && fs::exists(entry.path() / filename)) ids.push_back(entry.path().filename().string());
  }
  std::sort(ids.begin(), ids.end());
  return ids;
}

// ---- contouring time ----

double compute_time_saving(double t_manual_s, double t_ai_adjusted_s) {
  if (!(t_manual_s > 0.0) || !std::isfinite(t_manual_s)) {
    throw std::invalid_argument("manual contouring time must be positive");
  }
  return (t_manual_s - t_ai_adjusted_s) / t_manual_s;
}

std::string format_percent(double fraction) {
  const double pct = std::round(fraction * 100.0);
  return std::to_string(static_cast<long long>(pct == 0.0 ? 0.0 : pct)) + "%";
}

TimingCsvError::TimingCsvError(std::vector<std::pair<std::size_t, std::string>> problems)
    : std::runtime_error([&] {
        std::string msg = "rejected timing rows:";
        for (const auto& [line, what] : problems) msg += "\n  line " + std::to_string(line) + ": " + what;
        return msg;
      }()),
      problems_(std::move(problems)) {}

TimingReport parse_timing_csv(std::string_view text) {
  const auto table = csv::parse(text);
  csv::require_header(table, kTimingHeader);
  TimingReport report;
  std::vector<std::pair<std::size_t, std::string>> problems;
  for (const auto& row : table.rows) {
    if (row.fields.size() != kTimingHeader.size()) {
      problems.emplace_back(row.line, "expected 4 fields, got " + std::to_string(row.fields.size()));
      continue;
    }
    try {
      TimingRecord r;
      r.case_id = row.fields[0];
      r.channel = parse_channel(row.fields[1]);
      r.t_manual_s = csv::parse_number(row.fields[2]);
      r.t_ai_adjusted_s = csv::parse_number(row.fields[3]);
      if (!(r.t_manual_s > 0.0)) throw std::invalid_argument("t_manual_s must be > 0");
      if (!(r.t_ai_adjusted_s > 0.0)) throw std::invalid_argument("t_ai_adjusted_s must be > 0");
      report.records.push_back(std::move(r));
    } catch (const std::invalid_argument& e) {
      problems.emplace_back(row.line, e.what());
    }
  }
  if (!problems.empty()) throw TimingCsvError(std::move(problems));
  if (report.records.empty()) report.warnings.emplace_back("timing file has no data rows");

  for (auto ch : kAllChannels) {
    std::vector<double> savings, manual, adjusted;
    for (const auto& r : report.records) {
      if (r.channel != ch) continue;
      savings.push_back(compute_time_saving(r.t_manual_s, r.t_ai_adjusted_s));
      manual.push_back(r.t_manual_s);
      adjusted.push_back(r.t_ai_adjusted_s);
    }
    if (savings.empty()) continue;
    const auto s = summarize(savings);
    report.summary.push_back({ch, s.n, *s.median, *s.mean, *median(manual), *median(adjusted)});
  }
  return report;
}

TimingReport ingest_timing_csv(const fs::path& path) { return parse_timing_csv(slurp(path)); }

std::string format_timing_report(const TimingReport& report) {
  auto mmss = [](double s) {
    const auto total = static_cast<long long>(std::llround(s));
    return std::to_string(total / 60) + " min " + std::to_string(total % 60) + " s";
  };
  std::ostringstream out;
  out << "channel,n,median_manual_s,median_ai_adjusted_s,median_saving,mean_saving\n";
  for (const auto& r : report.summary) {
    out << to_string(r.channel) << ',' << r.n << ',' << csv::format_number(r.median_manual_s) << ','
        << csv::format_number(r.median_adjusted_s) << ',' << csv::format_number(r.median_saving) << ','
        << csv::format_number(r.mean_saving) << '\n';
  }
  out << '\n';
  for (const auto& r : report.summary) {
    out << to_string(r.channel) << ": manual " << mmss(r.median_manual_s) << ", AI-adjusted "
        << mmss(r.median_adjusted_s) << ", saving " << format_percent(r.median_saving) << " (n=" << r.n << ")\n";
  }
  return out.str();
}

// ---- postprocessing ----

void postprocess_file(const fs::path& in, const fs::path& out, const FilterOptions& options) {
  const auto vol = load_label_volume(in);
  save_nifti(filter_small_components(vol, options), out, describe(options));
}

PostprocessSummary postprocess_directory(const fs::path& in, const fs::path& out, const FilterOptions& options,
                                         const std::string& filename) {
  const auto ids = list_cases(in, filename);
  std::vector<std::size_t> removed(ids.size(), 0);
  std::vector<std::string> failures(ids.size());
  parallel_for(ids.size(), 0, [&](std::size_t i) {
    try {
      const auto vol = load_label_volume(in / ids[i] / filename);
      const auto filtered = filter_small_components(vol, options);
      for (std::size_t k = 0; k < vol.codes().size(); ++k) removed[i] += vol.codes()[k] != filtered.codes()[k];
      save_nifti(filtered, out / ids[i] / filename, describe(options));
    } catch (const std::exception& e) {
      failures[i] = e.what();
    }
  });
  for (std::size_t i = 0; i < ids.size(); ++i) {
    if (!failures[i].empty()) throw std::runtime_error(ids[i] + ": " + failures[i]);
  }
  json settings = {{"threshold_voxels", options.threshold_voxels},
                   {"connectivity", to_int(options.connectivity)},
                   {"channels", json::array()}};
  for (auto c : options.channels) settings["channels"].push_back(std::string(to_string(c)));
  write_text(out / "postprocess.json", settings.dump(2) + "\n");

  PostprocessSummary summary;
  summary.cases = ids.size();
  for (auto r : removed) summary.voxels_removed += r;
  return summary;
}

// ---- evaluation ----

Provenance describe(const EvaluationOptions& options) {
  Provenance p;
  p.emplace_back("tool", "pbtseg evaluate");
  p.emplace_back("postprocess", options.filter ? describe(*options.filter) : "none");
  p.emplace_back("empty_policy", std::string(to_string(options.empty_policy)));
  std::string axes;
  for (auto a : options.axes) {
    if (!axes.empty()) axes += ',';
    axes += to_string(a);
  }
  p.emplace_back("stratify", axes.empty() ? "none" : axes);
  return p;
}

EvaluationResult run_evaluation(const fs::path& pred_dir, const fs::path& ref_dir, const CaseManifest& manifest,
                                const EvaluationOptions& options) {
  const auto ids = manifest.sorted_ids();
  struct Slot {
    std::optional<std::array<MetricRecord, 4>> records;
    std::string error;
    std::string pred_description;
  };
  std::vector<Slot> slots(ids.size());

  parallel_for(ids.size(), options.workers, [&](std::size_t i) {
    const auto& id = ids[i];
    auto& slot = slots[i];
    const auto pred_path = pred_dir / id / options.prediction_file;
    const auto ref_path = ref_dir / id / options.reference_file;
    try {
      if (!fs::exists(pred_path)) throw std::runtime_error("missing prediction " + pred_path.string());
      if (!fs::exists(ref_path)) throw std::runtime_error("missing reference " + ref_path.string());
      auto pred = load_label_volume(pred_path, slot.pred_description);
      const auto ref = load_label_volume(ref_path);
      if (options.filter) pred = filter_small_components(pred, *options.filter);
      slot.records = evaluate_case(id, pred, ref, options.empty_policy);
    } catch (const std::exception& e) {
      slot.error = e.what();
    }
  });

  EvaluationResult result;
  result.provenance = describe(options);
  std::string pred_variant;
  for (std::size_t i = 0; i < ids.size(); ++i) {
    if (slots[i].records) {
      result.records.insert(result.records.end(), slots[i].records->begin(), slots[i].records->end());
      const auto& d = slots[i].pred_description;
      const std::string variant = d.starts_with("cc-filter") ? d : "raw";
      if (pred_variant.empty()) {
        pred_variant = variant;
      } else if (pred_variant != variant) {
        pred_variant = "mixed";
      }
    } else {
      result.errors.push_back({ids[i], slots[i].error});
    }
  }
  result.provenance.emplace_back("prediction_files", pred_variant.empty() ? "none" : pred_variant);

  for (auto axis : options.axes) {
    for (auto metric : {Metric::Dice, Metric::VolumeDifference}) {
      auto rows = aggregate(result.records, metric, axis, &manifest);
      result.aggregates.insert(result.aggregates.end(), rows.begin(), rows.end());
    }
  }
  return result;
}

void write_evaluation(const EvaluationResult& result, const fs::path& out_dir) {
  fs::create_directories(out_dir);
  {
    std::ostringstream ss;
    write_metrics_csv(ss, result.records, result.provenance);
    write_text(out_dir / "metrics.csv", ss.str());
  }
  {
    std::ostringstream ss;
    write_aggregate_csv(ss, result.aggregates, result.provenance);
    write_text(out_dir / "aggregates.csv", ss.str());
  }
  const auto errors_path = out_dir / "errors.csv";
  if (!result.errors.empty()) {
    std::ostringstream ss;
    for (const auto& [k, v] : result.provenance) ss << '#' << k << '=' << v << '\n';
    ss << "case_id,error\n";
    for (const auto& e : result.errors) ss << csv::join({e.case_id, e.message}) << '\n';
    write_text(errors_path, ss.str());
  } else if (fs::exists(errors_path)) {
    fs::remove(errors_path);
  }
}

std::vector<MetricRecord> run_agreement(const fs::path& dir_a, const fs::path& dir_b, EmptyPolicy policy,
                                        const std::string& filename) {
  LabelSet a, b;
  for (const auto& id : list_cases(dir_a, filename)) a.emplace(id, load_label_volume(dir_a / id / filename));
  for (const auto& id : list_cases(dir_b, filename)) b.emplace(id, load_label_volume(dir_b / id / filename));
  return pairwise_agreement(a, b, policy);
}

// ---- reports ----

ReportFormat parse_report_format(std::string_view s) {
  if (s == "csv") return ReportFormat::Csv;
  if (s == "md" || s == "markdown") return ReportFormat::Markdown;
  throw std::invalid_argument("report format must be csv or md");
}

std::string format_report(const std::vector<MetricRecord>& records, const std::vector<StratifierAxis>& axes,
                          const CaseManifest* manifest, ReportFormat format, const Provenance& provenance) {
  std::vector<AggregateRow> rows;
  for (auto axis : axes) {
    for (auto metric : {Metric::Dice, Metric::VolumeDifference}) {
      auto part = aggregate(records, metric, axis, manifest);
      rows.insert(rows.end(), part.begin(), part.end());
    }
  }
  std::ostringstream out;
  if (format == ReportFormat::Csv) {
    write_aggregate_csv(out, rows, provenance);
    return out.str();
  }

  for (const auto& [k, v] : provenance) out << "<!-- " << k << "=" << v << " -->\n";
  if (!provenance.empty()) out << '\n';
  constexpr std::array<EvalChannel, 4> kTableOrder{EvalChannel::WT, EvalChannel::T2H, EvalChannel::ET,
                                                   EvalChannel::CC};
  for (auto axis : axes) {
    for (auto metric : {Metric::Dice, Metric::VolumeDifference}) {
      for (auto channel : kTableOrder) {
        out << "### " << to_string(channel) << ' ' << (metric == Metric::Dice ? "DSC" : "volume difference (%)")
            << ", stratified by " << to_string(axis) << "\n\n";
        out << "| Stratum | Median (SD) | Mean | n | Excluded |\n|---|---|---|---|---|\n";
        for (const auto& r : rows) {
          if (r.axis != axis || r.metric != metric || r.channel != channel) continue;
          auto fmt = [&](double v) {
            return metric == Metric::Dice ? fixed(v, 2) : format_percent(v / 100.0);
          };
          std::string cell = "n/a", mean = "n/a";
          if (r.median) {
            cell = fmt(*r.median);
            if (r.sd) cell += " (" + fmt(*r.sd) + ")";
            mean = fmt(*r.mean);
          }
          out << "| " << r.stratum << " | " << cell << " | " << mean << " | " << r.n << " | " << r.excluded
              << " |\n";
        }
        out << '\n';
      }
    }
  }
  return out.str();
}

// ---- sequence-combination study ----

std::string ComboSpec::name() const {
  std::string out;
  for (auto s : sequences) {
    if (!out.empty()) out += '+';
    out += to_string(s);
  }
  return out;
}

std::string ComboSpec::display_name() const {
  std::string out;
  for (auto s : sequences) {
    if (!out.empty()) out += " + ";
    out += to_string(s);
  }
  return out;
}

ComboSpec parse_combo(std::string_view text) {
  std::vector<bool> present(kAllSequences.size(), false);
  std::size_t start = 0;
  bool any = false;
  while (start <= text.size()) {
    auto end = text.find('+', start);
    if (end == std::string_view::npos) end = text.size();
    auto token = text.substr(start, end - start);
    start = end + 1;
    if (token.find_first_not_of(" \t") == std::string_view::npos) {
      throw std::invalid_argument("empty sequence name in combination '" + std::string(text) + "'");
    }
    const auto seq = parse_sequence(token);
    for (std::size_t k = 0; k < kAllSequences.size(); ++k) {
      if (kAllSequences[k] == seq) present[k] = true;
    }
    any = true;
  }
  if (!any) throw std::invalid_argument("empty sequence combination");
  ComboSpec spec;
  for (std::size_t k = 0; k < kAllSequences.size(); ++k) {
    if (present[k]) spec.sequences.push_back(kAllSequences[k]);
  }
  return spec;
}

const std::vector<ComboSpec>& preset_combos() {
  static const std::vector<ComboSpec> presets = [] {
    std::vector<ComboSpec> out;
    for (const char* name : {"T1-C + T1 + T2 + FLAIR", "T1-C", "T1", "T2", "FLAIR", "T1-C + T1 + T2",
                             "T1-C + T2 + FLAIR", "T1-C + T1", "T1-C + T2", "T1 + T2", "T1 + FLAIR",
                             "T1-C + FLAIR", "T2 + FLAIR"}) {
      out.push_back(parse_combo(name));
    }
    return out;
  }();
  return presets;
}

StudyManifest parse_study_manifest(std::string_view json_text, const fs::path& base_dir) {
  const auto j = json::parse(json_text);
  auto resolve = [&](const std::string& p) {
    fs::path path(p);
    return path.is_absolute() ? path : base_dir / path;
  };
  StudyManifest study;
  study.reference_dir = resolve(j.at("reference").get<std::string>());
  if (j.contains("manifest")) study.manifest = resolve(j.at("manifest").get<std::string>());
  if (j.contains("prediction_file")) study.prediction_file = j.at("prediction_file").get<std::string>();
  for (const auto& c : j.at("combos")) {
    auto combo = parse_combo(c.at("name").get<std::string>());
    for (const auto& [existing, _] : study.combos) {
      if (existing == combo) throw std::invalid_argument("combination listed twice: " + combo.display_name());
    }
    study.combos.emplace_back(std::move(combo), resolve(c.at("predictions").get<std::string>()));
  }
  if (study.combos.empty()) throw std::invalid_argument("study lists no combinations");
  return study;
}

StudyManifest read_study_manifest(const fs::path& path) {
  return parse_study_manifest(slurp(path), path.has_parent_path() ? path.parent_path() : fs::path("."));
}

ComboStudyResult run_combo_study(const StudyManifest& study, const EvaluationOptions& options) {
  CaseManifest manifest;
  if (study.manifest) {
    manifest = read_manifest(*study.manifest);
  } else {
    std::vector<CaseInfo> infos;
    for (const auto& id : list_cases(study.reference_dir, options.reference_file)) {
      CaseInfo info;
      info.case_id = id;
      infos.push_back(std::move(info));
    }
    manifest = CaseManifest(std::move(infos));
  }

  auto rank = [](const ComboSpec& c) {
    const auto& presets = preset_combos();
    auto it = std::find(presets.begin(), presets.end(), c);
    return static_cast<std::size_t>(it - presets.begin());
  };
  auto combos = study.combos;
  std::stable_sort(combos.begin(), combos.end(), [&](const auto& a, const auto& b) {
    const auto ra = rank(a.first), rb = rank(b.first);
    if (ra != rb) return ra < rb;
    return a.first.name() < b.first.name();
  });

  ComboStudyResult result;
  for (const auto& [combo, pred_dir] : combos) {
    auto opts = options;
    opts.axes = {StratifierAxis::None};
    opts.prediction_file = study.prediction_file;
    const auto eval = run_evaluation(pred_dir, study.reference_dir, manifest, opts);
    for (const auto& e : eval.errors) result.errors.push_back({combo.display_name() + "/" + e.case_id, e.message});
    const auto rows = aggregate(eval.records, Metric::Dice, StratifierAxis::None, nullptr);
    ComboRow row{combo, {rows[0], rows[1], rows[2], rows[3]}};
    result.rows.push_back(std::move(row));
  }
  return result;
}

std::string format_combo_table(const ComboStudyResult& result, ReportFormat format) {
  std::ostringstream out;
  if (format == ReportFormat::Csv) {
    out << "combo,channel,n,excluded,median,sd,mean\n";
    for (const auto& row : result.rows) {
      for (const auto& a : row.dice) {
        out << csv::join({row.combo.name(), std::string(to_string(a.channel)), std::to_string(a.n),
                          std::to_string(a.excluded), csv::format_optional(a.median), csv::format_optional(a.sd),
                          csv::format_optional(a.mean)})
            << '\n';
      }
    }
    return out.str();
  }
  out << "| Combination | T2H | ET | CC | WT |\n|---|---|---|---|---|\n";
  for (const auto& row : result.rows) {
    out << "| " << row.combo.display_name();
    for (const auto& a : row.dice) {
      std::string cell = "n/a";
      if (a.median) {
        cell = fixed(*a.median, 2);
        if (a.sd) cell += " (" + fixed(*a.sd, 2) + ")";
      }
      out << " | " << cell;
    }
    out << " |\n";
  }
  return out.str();
}

// ---- synthetic cohorts ----

namespace {

PerturbationSpec parse_perturbation(const json& j) {
  const auto kind = j.at("kind").get<std::string>();
  PerturbationSpec p;
  p.seed = j.value("seed", std::uint64_t{1});
  auto nonneg = [&](const char* key, std::int64_t fallback) {
    const auto v = j.value(key, fallback);
    if (v < 0) throw std::invalid_argument(std::string("perturbation parameter '") + key + "' must be >= 0");
    return static_cast<std::size_t>(v);
  };
  if (kind == "translate") {
    const auto off = j.at("offset").get<std::vector<std::int64_t>>();
    if (off.size() != 3) throw std::invalid_argument("translate offset needs 3 entries");
    p.kind = Translate{{off[0], off[1], off[2]}};
  } else if (kind == "dilate") {
    p.kind = Dilate{nonneg("k", 1)};
  } else if (kind == "erode") {
    p.kind = Erode{nonneg("k", 1)};
  } else if (kind == "speckle") {
    Speckle s{nonneg("count", 1), nonneg("size", 1), parse_channel(j.value("channel", std::string("ET")))};
    if (s.size < 1) throw std::invalid_argument("speckle size must be >= 1");
    p.kind = s;
  } else if (kind == "drop_channel") {
    p.kind = DropChannel{parse_channel(j.at("channel").get<std::string>())};
  } else {
    throw std::invalid_argument("unknown perturbation kind '" + kind + "'");
  }
  return p;
}

}  // namespace

CohortSpec parse_cohort_spec(std::string_view json_text) {
  const auto j = json::parse(json_text);
  CohortSpec spec;
  spec.cases = j.value("cases", spec.cases);
  spec.seed = j.value("seed", spec.seed);
  spec.id_prefix = j.value("id_prefix", spec.id_prefix);
  if (j.contains("shape")) {
    const auto s = j.at("shape").get<std::vector<std::size_t>>();
    if (s.size() != 3) throw std::invalid_argument("shape needs 3 entries");
    spec.shape = {s[0], s[1], s[2]};
  }
  if (j.contains("spacing")) {
    const auto s = j.at("spacing").get<std::vector<double>>();
    if (s.size() != 3) throw std::invalid_argument("spacing needs 3 entries");
    spec.spacing = {s[0], s[1], s[2]};
  }
  spec.min_radius_mm = j.value("min_radius_mm", spec.min_radius_mm);
  spec.max_radius_mm = j.value("max_radius_mm", spec.max_radius_mm);
  spec.et_probability = j.value("et_probability", spec.et_probability);
  spec.cc_probability = j.value("cc_probability", spec.cc_probability);
  if (j.contains("perturbations")) {
    for (const auto& p : j.at("perturbations")) spec.perturbations.push_back(parse_perturbation(p));
  }
  if (spec.cases == 0) throw std::invalid_argument("cohort needs at least one case");
  if (!(spec.min_radius_mm > 0.0) || spec.max_radius_mm < spec.min_radius_mm) {
    throw std::invalid_argument("invalid radius range");
  }
  return spec;
}

}  // namespace pbtseg
