#include <doctest.h>

#include <fstream>
#include <set>
#include <sstream>

#include "pbtseg/csv.hpp"
#include "pbtseg/nifti.hpp"
#include "pbtseg/workflow.hpp"
#include "support.hpp"

using namespace pbtseg;
using namespace testing;
namespace fs = std::filesystem;

namespace {

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

CohortSpec small_cohort(std::size_t cases) {
  CohortSpec spec;
  spec.cases = cases;
  spec.seed = 5;
  spec.shape = {32, 32, 32};
  spec.min_radius_mm = 6;
  spec.max_radius_mm = 9;
  spec.et_probability = 1.0;
  return spec;
}

void copy_tree(const fs::path& from, const fs::path& to) {
  fs::create_directories(to);
  fs::copy(from, to, fs::copy_options::recursive | fs::copy_options::overwrite_existing);
}

const AggregateRow& find_row(const std::vector<AggregateRow>& rows, EvalChannel ch, Metric m,
                             const std::string& stratum = "All") {
  for (const auto& r : rows) {
    if (r.channel == ch && r.metric == m && r.stratum == stratum) return r;
  }
  throw std::runtime_error("row not found");
}

}  // namespace

TEST_SUITE("timing") {
  TEST_CASE("published contouring times") {
    CHECK(format_percent(compute_time_saving(2905, 494)) == "83%");
    CHECK(format_percent(compute_time_saving(1581, 912)) == "42%");
    CHECK(format_percent(compute_time_saving(1374, 1008)) == "27%");
    CHECK(compute_time_saving(100, 100) == 0.0);
    CHECK(compute_time_saving(100, 150) == doctest::Approx(-0.5));
    CHECK_THROWS_AS(compute_time_saving(0, 10), std::invalid_argument);
    CHECK_THROWS_AS(compute_time_saving(-5, 10), std::invalid_argument);
  }

  TEST_CASE("saving is at most one and decreases with adjusted time") {
    Xorshift64 rng(31);
    for (int i = 0; i < 500; ++i) {
      const double manual = 1 + rng.uniform() * 5000;
      const double a = rng.uniform() * 6000, b = a + 1 + rng.uniform() * 100;
      CHECK(compute_time_saving(manual, a) <= 1.0);
      CHECK(compute_time_saving(manual, a) > compute_time_saving(manual, b));
    }
  }

  TEST_CASE("timing CSV summary") {
    const auto r = parse_timing_csv(
        "case_id,channel,t_manual_s,t_ai_adjusted_s\n"
        "median,T2H,2905,494\nmedian,ET,1581,912\nmedian,CC,1374,1008\n");
    REQUIRE(r.summary.size() == 3);
    CHECK(format_percent(r.summary[0].median_saving) == "83%");
    CHECK(r.summary[1].channel == Channel::ET);
    CHECK(std::abs(r.summary[2].median_saving - 366.0 / 1374.0) < 1e-12);
    const auto text = format_timing_report(r);
    CHECK(text.find("T2H: manual 48 min 25 s, AI-adjusted 8 min 14 s, saving 83%") != std::string::npos);
  }

  TEST_CASE("empty body warns, bad rows are all reported") {
    const auto empty = parse_timing_csv("case_id,channel,t_manual_s,t_ai_adjusted_s\n");
    CHECK(empty.summary.empty());
    CHECK(empty.warnings.size() == 1);
    try {
      parse_timing_csv(
          "case_id,channel,t_manual_s,t_ai_adjusted_s\n"
          "a,T2H,0,10\n"
          "b,ET,12,9\n"
          "c,CC,abc,3\n"
          "d,WT,1,1\n");
      FAIL("expected rejection");
    } catch (const TimingCsvError& e) {
      REQUIRE(e.problems().size() == 3);
      CHECK(e.problems()[0].first == 2);
      CHECK(e.problems()[1].first == 4);
      CHECK(e.problems()[2].first == 5);
    }
    CHECK_THROWS_AS(parse_timing_csv("case,channel,manual,adjusted\n"), csv::ParseError);
  }
}

TEST_SUITE("combos") {
  TEST_CASE("canonical names") {
    CHECK(parse_combo("T2+T1") == parse_combo("T1 + T2"));
    CHECK(parse_combo("FLAIR + t1c + T2 + T1").name() == "T1-C+T1+T2+FLAIR");
    CHECK(parse_combo("T2 + T2").sequences.size() == 1);
    CHECK_THROWS(parse_combo(""));
    CHECK_THROWS(parse_combo("T1 + DWI"));
    CHECK_THROWS(parse_combo("T1 + "));
  }

  TEST_CASE("canonicalization is idempotent and order-insensitive") {
    Xorshift64 rng(2);
    const std::array<std::string, 4> names{"T1-C", "T1", "T2", "FLAIR"};
    for (int i = 0; i < 200; ++i) {
      std::vector<std::string> pick;
      for (const auto& n : names) {
        if (rng.below(2)) pick.push_back(n);
      }
      if (pick.empty()) pick.push_back(names[rng.below(4)]);
      std::string a, b;
      for (std::size_t k = 0; k < pick.size(); ++k) a += (k ? "+" : "") + pick[k];
      for (std::size_t k = pick.size(); k-- > 0;) b += pick[k] + (k ? " + " : "");
      const auto ca = parse_combo(a);
      CHECK(ca == parse_combo(b));
      CHECK(parse_combo(ca.name()) == ca);
      CHECK(parse_combo(ca.display_name()) == ca);
    }
  }

  TEST_CASE("thirteen presets including every single sequence") {
    const auto& p = preset_combos();
    CHECK(p.size() == 13);
    std::set<std::string> names;
    for (const auto& c : p) names.insert(c.name());
    CHECK(names.size() == 13);
    for (const char* single : {"T1-C", "T1", "T2", "FLAIR"}) CHECK(names.count(single) == 1);
    CHECK(p.front().display_name() == "T1-C + T1 + T2 + FLAIR");
  }

  TEST_CASE("study: identity predictions beat eroded predictions") {
    ScratchDir dir("combo");
    write_cohort(small_cohort(4), dir.path);
    // "model outputs": identity copy for T1 + T2, eroded copy for FLAIR
    for (const auto& id : list_cases(dir.path / "cohort", "seg.nii.gz")) {
      const auto ref = load_label_volume(dir.path / "cohort" / id / "seg.nii.gz");
      save_nifti(ref, dir.path / "same" / id / "pred.nii.gz");
      save_nifti(perturb(ref, {Erode{1}, 1}), dir.path / "eroded" / id / "pred.nii.gz");
    }
    std::ofstream(dir.path / "study.json") << R"({"reference": "cohort", "manifest": "manifest.csv",
      "combos": [{"name": "FLAIR", "predictions": "eroded"}, {"name": "T2+T1", "predictions": "same"}]})";
    const auto study = read_study_manifest(dir.path / "study.json");
    const auto result = run_combo_study(study);
    CHECK(result.errors.empty());
    REQUIRE(result.rows.size() == 2);
    CHECK(result.rows[0].combo.name() == "FLAIR");  // preset order
    CHECK(result.rows[1].combo.name() == "T1+T2");
    for (std::size_t c = 0; c < 4; ++c) {
      if (!result.rows[1].dice[c].median) continue;
      CHECK(*result.rows[1].dice[c].median == 1.0);
    }
    CHECK(*result.rows[0].dice[3].median < 1.0);
    const auto md = format_combo_table(result, ReportFormat::Markdown);
    CHECK(md.find("| T1 + T2 | 1.00 (0.00)") != std::string::npos);
    const auto csvt = format_combo_table(result, ReportFormat::Csv);
    CHECK(csvt.find("T1+T2,WT,4,0,1,0,1") != std::string::npos);

    std::ofstream(dir.path / "dup.json") << R"({"reference": "cohort",
      "combos": [{"name": "T1+T2", "predictions": "same"}, {"name": "T2 + T1", "predictions": "eroded"}]})";
    CHECK_THROWS_AS(read_study_manifest(dir.path / "dup.json"), std::invalid_argument);
  }
}

TEST_SUITE("evaluation") {
  TEST_CASE("identical predictions give perfect scores") {
    ScratchDir dir("eval");
    write_cohort(small_cohort(5), dir.path);
    const auto manifest = read_manifest(dir.path / "manifest.csv");
    EvaluationOptions opts;
    opts.prediction_file = opts.reference_file = "seg.nii.gz";
    const auto result = run_evaluation(dir.path / "cohort", dir.path / "cohort", manifest, opts);
    CHECK(result.ok());
    for (const auto& r : result.aggregates) {
      if (r.n == 0) continue;
      if (r.metric == Metric::Dice) CHECK(*r.median == 1.0);
      if (r.metric == Metric::VolumeDifference) CHECK(*r.median == 0.0);
    }
  }

  TEST_CASE("filtering speckled predictions never lowers ET Dice") {
    ScratchDir dir("eval");
    auto spec = small_cohort(6);
    // radii large enough that the true ET shell stays above the threshold
    spec.cc_probability = 1.0;
    spec.shape = {40, 40, 40};
    spec.min_radius_mm = 10;
    spec.max_radius_mm = 13;
    spec.perturbations = {{Dilate{1}, 2}, {Speckle{3, 40, Channel::ET}, 9}};
    write_cohort(spec, dir.path);
    const auto manifest = read_manifest(dir.path / "manifest.csv");
    EvaluationOptions raw;
    EvaluationOptions filtered;
    filtered.filter = FilterOptions{};
    const auto a = run_evaluation(dir.path / "pred", dir.path / "cohort", manifest, raw);
    const auto b = run_evaluation(dir.path / "pred", dir.path / "cohort", manifest, filtered);
    const auto ra = aggregate(a.records, Metric::Dice, StratifierAxis::None);
    const auto rb = aggregate(b.records, Metric::Dice, StratifierAxis::None);
    CHECK(*find_row(rb, EvalChannel::ET, Metric::Dice).median >= *find_row(ra, EvalChannel::ET, Metric::Dice).median);
    for (std::size_t i = 0; i < a.records.size(); ++i) {
      if (a.records[i].channel == EvalChannel::ET && a.records[i].dsc && b.records[i].dsc) {
        CHECK(*b.records[i].dsc >= *a.records[i].dsc);
      }
    }
    CHECK(b.provenance[1].second == "cc-filter t=125 c=26 ch=T2H,ET,CC");
  }

  TEST_CASE("missing and mismatched cases become per-case errors") {
    ScratchDir dir("eval");
    write_cohort(small_cohort(4), dir.path);
    const auto manifest = read_manifest(dir.path / "manifest.csv");
    const auto ids = manifest.sorted_ids();
    fs::remove(dir.path / "pred" / ids[1] / "pred.nii.gz");
    save_nifti(LabelVolume(VolumeGeometry::isotropic({8, 8, 8})), dir.path / "pred" / ids[2] / "pred.nii.gz");
    const auto result = run_evaluation(dir.path / "pred", dir.path / "cohort", manifest, {});
    REQUIRE(result.errors.size() == 2);
    CHECK(result.errors[0].case_id == ids[1]);
    CHECK(result.errors[0].message.find("missing prediction") != std::string::npos);
    CHECK(result.errors[1].case_id == ids[2]);
    CHECK(result.records.size() == 8);
    write_evaluation(result, dir.path / "out");
    CHECK(fs::exists(dir.path / "out" / "errors.csv"));
  }

  TEST_CASE("outputs are byte-identical across worker counts") {
    ScratchDir dir("eval");
    auto spec = small_cohort(6);
    spec.perturbations = {{Translate{{1, 0, -1}}, 1}};
    write_cohort(spec, dir.path);
    const auto manifest = read_manifest(dir.path / "manifest.csv");
    EvaluationOptions one, many;
    one.workers = 1;
    many.workers = 8;
    write_evaluation(run_evaluation(dir.path / "pred", dir.path / "cohort", manifest, one), dir.path / "a");
    write_evaluation(run_evaluation(dir.path / "pred", dir.path / "cohort", manifest, many), dir.path / "b");
    CHECK(slurp(dir.path / "a" / "metrics.csv") == slurp(dir.path / "b" / "metrics.csv"));
    CHECK(slurp(dir.path / "a" / "aggregates.csv") == slurp(dir.path / "b" / "aggregates.csv"));
    // provenance travels with the metrics
    const auto back = read_metrics_csv(dir.path / "a" / "metrics.csv");
    CHECK(back.provenance[2] == std::pair<std::string, std::string>{"empty_policy", "exclude"});
  }

  TEST_CASE("postprocess directory records its settings") {
    ScratchDir dir("pp");
    auto spec = small_cohort(3);
    spec.et_probability = 0.0;
    spec.cc_probability = 0.0;  // only the large T2H sphere survives the filter untouched
    spec.perturbations = {{Speckle{2, 20, Channel::CC}, 3}};
    write_cohort(spec, dir.path);
    FilterOptions f;
    f.connectivity = Connectivity::Face;
    const auto s = postprocess_directory(dir.path / "pred", dir.path / "pp", f);
    CHECK(s.cases == 3);
    CHECK(s.voxels_removed == 3 * 2 * 20);
    const auto ids = list_cases(dir.path / "pp", "pred.nii.gz");
    CHECK(ids.size() == 3);
    CHECK(read_nifti_description(dir.path / "pp" / ids[0] / "pred.nii.gz") == "cc-filter t=125 c=6 ch=T2H,ET,CC");
    CHECK(slurp(dir.path / "pp" / "postprocess.json").find("\"connectivity\": 6") != std::string::npos);
    const auto m = read_manifest(dir.path / "manifest.csv");
    const auto ev = run_evaluation(dir.path / "pp", dir.path / "cohort", m, {});
    CHECK(ev.provenance.back().second == "cc-filter t=125 c=6 ch=T2H,ET,CC");
  }

  TEST_CASE("agreement of a set with itself is perfect") {
    ScratchDir dir("agree");
    write_cohort(small_cohort(3), dir.path);
    copy_tree(dir.path / "cohort", dir.path / "copy");
    const auto recs = run_agreement(dir.path / "cohort", dir.path / "copy");
    CHECK(recs.size() == 12);
    for (const auto& r : recs) {
      if (r.dsc) CHECK(*r.dsc == 1.0);
    }
  }

  TEST_CASE("markdown report") {
    CaseManifest manifest({{"a", 5, Sex::F, TumourType::Ependymoma, Location::Pinealis, Split::Test},
                           {"b", 6, Sex::M, TumourType::Ependymoma, Location::Brainstem, Split::Test}});
    std::vector<MetricRecord> recs;
    for (const auto& [id, d, v] : {std::tuple{"a", 0.8, 10.0}, std::tuple{"b", 0.9, 30.0}}) {
      MetricRecord r;
      r.case_id = id;
      r.channel = EvalChannel::WT;
      r.dsc = d;
      r.vol_diff_pct = v;
      recs.push_back(r);
    }
    const auto md = format_report(recs, {StratifierAxis::Location}, &manifest, ReportFormat::Markdown);
    CHECK(md.find("| Pinealis | 0.80 | 0.80 | 1 | 0 |") != std::string::npos);
    CHECK(md.find("| Brainstem | 30% | 30% | 1 | 0 |") != std::string::npos);
    const auto all = format_report(recs, {StratifierAxis::None}, nullptr, ReportFormat::Markdown);
    CHECK(all.find("| All | 0.85 (0.07) | 0.85 | 2 | 0 |") != std::string::npos);
    const auto csvr = format_report(recs, {StratifierAxis::None}, nullptr, ReportFormat::Csv);
    CHECK(csvr.find("dsc,WT,none,All,2,0,0.85") != std::string::npos);
  }

  TEST_CASE("cohort spec JSON") {
    const auto spec = parse_cohort_spec(R"({"cases": 3, "seed": 9, "shape": [20, 22, 24],
      "perturbations": [{"kind": "translate", "offset": [1, 0, 0]}, {"kind": "drop_channel", "channel": "CC"}]})");
    CHECK(spec.cases == 3);
    CHECK(spec.shape == Shape{20, 22, 24});
    CHECK(spec.perturbations.size() == 2);
    CHECK_THROWS(parse_cohort_spec(R"({"perturbations": [{"kind": "blur"}]})"));
    CHECK_THROWS(parse_cohort_spec(R"({"cases": 0})"));
  }
}
