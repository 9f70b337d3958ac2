// pbtseg: command-line front end for postprocessing, evaluation, the
// sequence-combination study, timing analysis, synthetic cohorts and the
// rating service.

#include <httplib.h>

#include <CLI11.hpp>
#include <csignal>
#include <cstdlib>
#include <fstream>
#include <iostream>
#include <thread>

#include "pbtseg/csv.hpp"
#include "pbtseg/nifti.hpp"
#include "pbtseg/server.hpp"
#include "pbtseg/workflow.hpp"

namespace fs = std::filesystem;
using namespace pbtseg;

namespace {

std::vector<StratifierAxis> stratify_axes(const std::string& s) {
  if (s == "both") return {StratifierAxis::TumourType, StratifierAxis::Location};
  return {parse_stratifier(s)};
}

FilterOptions filter_options(std::size_t threshold, int connectivity, const std::string& channels) {
  FilterOptions f;
  f.threshold_voxels = threshold;
  f.connectivity = connectivity_from_int(connectivity);
  f.channels = parse_channel_list(channels);
  if (f.channels.empty()) throw std::invalid_argument("--channels selects no channel");
  return f;
}

std::string read_text(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("cannot open " + path.string());
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

void write_text(const std::optional<fs::path>& path, const std::string& text) {
  if (!path) {
    std::cout << text;
    return;
  }
  if (path->has_parent_path()) fs::create_directories(path->parent_path());
  std::ofstream out(*path, std::ios::binary);
  out << text;
  if (!out) throw std::runtime_error("cannot write " + path->string());
}

void print_errors(const std::vector<CaseError>& errors) {
  for (const auto& e : errors) std::cerr << "error: " << e.case_id << ": " << e.message << '\n';
}

const std::map<std::string, std::string> kStratifyChoices{
    {"type", "type"}, {"location", "location"}, {"none", "none"}, {"both", "both"}};

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Paediatric brain-tumour segmentation post-inference toolkit"};
  app.require_subcommand(1);

  // postprocess
  auto* pp = app.add_subcommand("postprocess", "Remove connected components below a voxel threshold");
  fs::path pp_in, pp_out;
  std::size_t pp_threshold = kDefaultMinComponentVoxels;
  int pp_conn = 26;
  std::string pp_channels = "T2H,ET,CC";
  std::string pp_file = kPredictionFile;
  pp->add_option("--in", pp_in, "Label file or prediction root")->required()->check(CLI::ExistingPath);
  pp->add_option("--out", pp_out, "Output file or directory")->required();
  pp->add_option("--threshold", pp_threshold, "Components smaller than this are removed")->capture_default_str();
  pp->add_option("--connectivity", pp_conn, "6, 18 or 26")->capture_default_str()->check(CLI::IsMember({6, 18, 26}));
  pp->add_option("--channels", pp_channels, "Channels to filter")->capture_default_str();
  pp->add_option("--label-file", pp_file, "Per-case file name in directory mode")->capture_default_str();

  // evaluate
  auto* ev = app.add_subcommand("evaluate", "Score predictions against references");
  fs::path ev_pred, ev_ref, ev_manifest, ev_out = "eval";
  std::string ev_stratify = "both", ev_policy = "exclude", ev_channels = "T2H,ET,CC";
  bool ev_filter = false;
  std::size_t ev_threshold = kDefaultMinComponentVoxels, ev_workers = 0;
  int ev_conn = 26;
  std::string ev_pred_file = kPredictionFile, ev_ref_file = kReferenceFile;
  ev->add_option("--pred", ev_pred, "Prediction root")->required()->check(CLI::ExistingDirectory);
  ev->add_option("--ref", ev_ref, "Reference root")->required()->check(CLI::ExistingDirectory);
  ev->add_option("--manifest", ev_manifest, "Case manifest CSV")->required()->check(CLI::ExistingFile);
  ev->add_option("--stratify", ev_stratify)->capture_default_str()->transform(CLI::IsMember(kStratifyChoices));
  ev->add_flag("--filter", ev_filter, "Filter predictions before scoring");
  ev->add_option("--threshold", ev_threshold)->capture_default_str();
  ev->add_option("--connectivity", ev_conn)->capture_default_str()->check(CLI::IsMember({6, 18, 26}));
  ev->add_option("--channels", ev_channels, "Channels filtered by --filter")->capture_default_str();
  ev->add_option("--empty-policy", ev_policy, "Dice when both masks are empty")
      ->capture_default_str()
      ->check(CLI::IsMember({"exclude", "one"}));
  ev->add_option("--pred-file", ev_pred_file)->capture_default_str();
  ev->add_option("--ref-file", ev_ref_file)->capture_default_str();
  ev->add_option("--workers", ev_workers, "0 = one per hardware thread")->capture_default_str();
  ev->add_option("--out", ev_out, "Output directory")->capture_default_str();

  // agree
  auto* ag = app.add_subcommand("agree", "Agreement between two annotation sets");
  fs::path ag_a, ag_b;
  std::optional<fs::path> ag_out;
  std::string ag_file = kReferenceFile, ag_policy = "exclude";
  ag->add_option("--a", ag_a, "Reference annotation root")->required()->check(CLI::ExistingDirectory);
  ag->add_option("--b", ag_b, "Second annotation root")->required()->check(CLI::ExistingDirectory);
  ag->add_option("--file", ag_file, "Per-case file name")->capture_default_str();
  ag->add_option("--empty-policy", ag_policy)->capture_default_str()->check(CLI::IsMember({"exclude", "one"}));
  ag->add_option("--out", ag_out, "Per-case metrics CSV (summary goes to stdout)");

  // combos
  auto* co = app.add_subcommand("combos", "Sequence-combination study table");
  fs::path co_study;
  std::string co_format = "md", co_policy = "exclude";
  bool co_presets = false;
  co->add_option("--study", co_study, "Study JSON")->check(CLI::ExistingFile);
  co->add_option("--format", co_format)->capture_default_str()->check(CLI::IsMember({"csv", "md"}));
  co->add_option("--empty-policy", co_policy)->capture_default_str()->check(CLI::IsMember({"exclude", "one"}));
  co->add_flag("--list-presets", co_presets, "Print the built-in combinations and exit");

  // time
  auto* tm = app.add_subcommand("time", "Contouring-time savings from a timing CSV");
  fs::path tm_csv;
  tm->add_option("--csv", tm_csv, "case_id,channel,t_manual_s,t_ai_adjusted_s")->required()->check(CLI::ExistingFile);

  // phantom
  auto* ph = app.add_subcommand("phantom", "Write a synthetic cohort");
  std::optional<fs::path> ph_spec;
  fs::path ph_out;
  ph->add_option("--spec", ph_spec, "Cohort JSON (defaults when omitted)")->check(CLI::ExistingFile);
  ph->add_option("--out", ph_out, "Output directory")->required();

  // report
  auto* rp = app.add_subcommand("report", "Stratified tables from a metrics CSV");
  fs::path rp_metrics;
  std::optional<fs::path> rp_manifest, rp_out;
  std::string rp_format = "md";
  std::optional<std::string> rp_stratify;
  rp->add_option("--metrics", rp_metrics)->required()->check(CLI::ExistingFile);
  rp->add_option("--format", rp_format)->capture_default_str()->check(CLI::IsMember({"csv", "md"}));
  rp->add_option("--manifest", rp_manifest)->check(CLI::ExistingFile);
  rp->add_option("--stratify", rp_stratify, "Default: both with a manifest, none without")
      ->transform(CLI::IsMember(kStratifyChoices));
  rp->add_option("--out", rp_out, "Output file (default stdout)");

  // serve
  auto* sv = app.add_subcommand("serve", "Run the blinded rating service");
  std::string sv_listen = "127.0.0.1:8080", sv_label_file = kPredictionFile;
  fs::path sv_cohort, sv_tokens;
  std::optional<fs::path> sv_labels, sv_log;
  std::optional<std::uint64_t> sv_seed;
  sv->add_option("--listen", sv_listen, "host:port")->capture_default_str()->envname("PBTSEG_LISTEN");
  sv->add_option("--cohort", sv_cohort, "Image root")->required()->envname("PBTSEG_COHORT")->check(CLI::ExistingDirectory);
  sv->add_option("--labels", sv_labels, "Segmentation root (default: cohort)")->envname("PBTSEG_LABELS");
  sv->add_option("--label-file", sv_label_file)->capture_default_str()->envname("PBTSEG_LABEL_FILE");
  sv->add_option("--tokens", sv_tokens, "Rater token file")->required()->envname("PBTSEG_TOKENS")->check(CLI::ExistingFile);
  sv->add_option("--log", sv_log, "Ratings log (NDJSON)")->envname("PBTSEG_LOG");
  sv->add_option("--default-seed", sv_seed, "Seed when a session request has none")->envname("PBTSEG_SEED");

  // ratings-export
  auto* rx = app.add_subcommand("ratings-export", "Unblinded ratings of finalized sessions");
  fs::path rx_cohort, rx_log;
  std::optional<fs::path> rx_out;
  std::string rx_label_file = kPredictionFile;
  rx->add_option("--labels", rx_cohort, "Segmentation root the service used")->required()->check(CLI::ExistingDirectory);
  rx->add_option("--label-file", rx_label_file)->capture_default_str();
  rx->add_option("--log", rx_log)->required()->check(CLI::ExistingFile);
  rx->add_option("--out", rx_out, "CSV output (default stdout)");

  CLI11_PARSE(app, argc, argv);

  try {
    if (*pp) {
      const auto options = filter_options(pp_threshold, pp_conn, pp_channels);
      if (fs::is_regular_file(pp_in)) {
        postprocess_file(pp_in, pp_out, options);
        std::cout << "wrote " << pp_out.string() << " (" << describe(options) << ")\n";
      } else {
        const auto s = postprocess_directory(pp_in, pp_out, options, pp_file);
        std::cout << s.cases << " cases, " << s.voxels_removed << " voxels removed (" << describe(options) << ")\n";
      }
      return 0;
    }

    if (*ev) {
      EvaluationOptions options;
      if (ev_filter) options.filter = filter_options(ev_threshold, ev_conn, ev_channels);
      options.empty_policy = parse_empty_policy(ev_policy);
      options.axes = stratify_axes(ev_stratify);
      options.prediction_file = ev_pred_file;
      options.reference_file = ev_ref_file;
      options.workers = ev_workers;
      const auto manifest = read_manifest(ev_manifest);
      const auto result = run_evaluation(ev_pred, ev_ref, manifest, options);
      write_evaluation(result, ev_out);
      std::cout << result.records.size() / 4 << " cases scored, " << result.errors.size() << " errors; wrote "
                << ev_out.string() << '\n';
      print_errors(result.errors);
      return result.ok() ? 0 : 1;
    }

    if (*ag) {
      const auto records = run_agreement(ag_a, ag_b, parse_empty_policy(ag_policy), ag_file);
      if (ag_out) {
        std::ostringstream ss;
        write_metrics_csv(ss, records, {{"tool", "agree"}, {"empty_policy", ag_policy}});
        write_text(ag_out, ss.str());
      }
      std::cout << format_report(records, {StratifierAxis::None}, nullptr, ReportFormat::Markdown);
      return 0;
    }

    if (*co) {
      if (co_presets) {
        for (const auto& c : preset_combos()) std::cout << c.display_name() << '\n';
        return 0;
      }
      if (co_study.empty()) throw std::invalid_argument("--study is required");
      EvaluationOptions options;
      options.empty_policy = parse_empty_policy(co_policy);
      const auto result = run_combo_study(read_study_manifest(co_study), options);
      std::cout << format_combo_table(result, parse_report_format(co_format));
      print_errors(result.errors);
      return result.errors.empty() ? 0 : 1;
    }

    if (*tm) {
      try {
        const auto report = ingest_timing_csv(tm_csv);
        for (const auto& w : report.warnings) std::cerr << "warning: " << w << '\n';
        std::cout << format_timing_report(report);
      } catch (const TimingCsvError& e) {
        for (const auto& [line, msg] : e.problems()) std::cerr << tm_csv.string() << ':' << line << ": " << msg << '\n';
        return 1;
      }
      return 0;
    }

    if (*ph) {
      const auto spec = ph_spec ? parse_cohort_spec(read_text(*ph_spec)) : CohortSpec{};
      write_cohort(spec, ph_out);
      std::cout << spec.cases << " cases written to " << ph_out.string() << '\n';
      return 0;
    }

    if (*rp) {
      const auto metrics = read_metrics_csv(rp_metrics);
      std::optional<CaseManifest> manifest;
      if (rp_manifest) manifest = read_manifest(*rp_manifest);
      const auto axes = stratify_axes(rp_stratify.value_or(manifest ? "both" : "none"));
      const bool needs_manifest =
          std::any_of(axes.begin(), axes.end(), [](StratifierAxis a) { return a != StratifierAxis::None; });
      if (needs_manifest && !manifest) throw std::invalid_argument("stratified reports need --manifest");
      write_text(rp_out, format_report(metrics.records, axes, manifest ? &*manifest : nullptr,
                                       parse_report_format(rp_format), metrics.provenance));
      return 0;
    }

    if (*sv) {
      const auto colon = sv_listen.rfind(':');
      if (colon == std::string::npos) throw std::invalid_argument("--listen expects host:port");
      const auto host = sv_listen.substr(0, colon);
      const int port = std::stoi(sv_listen.substr(colon + 1));

      ServiceConfig config;
      config.cohort_root = sv_cohort;
      config.label_root = sv_labels;
      config.label_file = sv_label_file;
      config.tokens = read_token_file(sv_tokens);
      config.log_path = sv_log;
      config.default_seed = sv_seed;
      if (config.tokens.empty()) throw std::invalid_argument("token file defines no raters");

      RatingService service(std::move(config));
      httplib::Server server;
      service.mount(server);

      sigset_t signals;
      sigemptyset(&signals);
      sigaddset(&signals, SIGINT);
      sigaddset(&signals, SIGTERM);
      pthread_sigmask(SIG_BLOCK, &signals, nullptr);
      std::jthread stopper([&] {
        int sig = 0;
        sigwait(&signals, &sig);
        server.stop();
      });

      if (!server.bind_to_port(host, port)) throw std::runtime_error("cannot listen on " + sv_listen);
      std::cerr << "serving " << service.store().case_count() << " cases (" << service.label_variant() << ") on "
                << sv_listen << '\n';
      server.listen_after_bind();
      return 0;
    }

    if (*rx) {
      RatingStore store(list_cases(rx_cohort, rx_label_file), rx_log);
      std::ostringstream ss;
      ss << csv::join({"rater_id", "session_id", "case_id", "channel", "stars", "timestamp"}) << '\n';
      for (const auto& u : store.unblinded()) {
        ss << csv::join({u.record.rater_id, u.record.session_id, u.case_id, std::string(to_string(u.record.channel)),
                         std::to_string(u.record.stars), u.record.timestamp})
           << '\n';
      }
      write_text(rx_out, ss.str());
      return 0;
    }
  } catch (const std::exception& e) {
    std::cerr << "pbtseg: " << e.what() << '\n';
    return 1;
  }
  return 0;
}
