#pragma once

// HTTP front end of the blinded rating workflow.
//
//   POST /sessions                 {rater_id, seed?}         -> session
//   GET  /sessions/{id}                                      -> progress
//   GET  /sessions/{id}/next                                 -> next key, slice counts
//   POST /sessions/{id}/finalize
//   GET  /cases/{key}/slice?seq=&axis=&i=&overlay=           -> PNG
//   POST /ratings                  {session_id, key, channel, stars}
//   GET  /summary?finalized=true                             -> per-rater table
//   GET  /scale                                              -> rubric strings
//
// Every endpoint except /scale and /healthz needs "Authorization: Bearer
// <token>" (or ?token= for image tags). Responses never carry case ids.

#include <cstdint>
#include <filesystem>
#include <map>
#include <memory>
#include <mutex>
#include <optional>
#include <string>

#include "pbtseg/rating.hpp"
#include "pbtseg/render.hpp"

namespace httplib {
class Server;
}

namespace pbtseg {

struct ServiceConfig {
  /// <cohort_root>/<case>/{t1,t1c,t2,flair}.nii.gz
  std::filesystem::path cohort_root;
  /// Where the rated segmentations live; defaults to cohort_root.
  std::optional<std::filesystem::path> label_root;
  std::string label_file = "pred.nii.gz";
  /// token -> rater id
  std::map<std::string, std::string> tokens;
  std::optional<std::filesystem::path> log_path;
  /// Used when POST /sessions omits the seed; otherwise a seed is required.
  std::optional<std::uint64_t> default_seed;
  std::uint64_t key_salt = 0x5EED5A17ULL;
};

/// Token file: one "rater_id token" pair per line; '#' starts a comment.
std::map<std::string, std::string> read_token_file(const std::filesystem::path& path);

class RatingService {
public:
  /// Cases are the subdirectories of the label root holding the label file.
  explicit RatingService(ServiceConfig config, RatingStore::Clock clock = utc_timestamp_now);
  ~RatingService();

  RatingStore& store() noexcept { return *store_; }
  const ServiceConfig& config() const noexcept { return config_; }

  /// "raw", or the filter settings when the labels were postprocessed.
  const std::string& label_variant() const noexcept { return label_variant_; }

  /// Registers all routes on `server`.
  void mount(httplib::Server& server);

private:
  struct CaseData;
  std::shared_ptr<const CaseData> load_case(const std::string& case_id);

  ServiceConfig config_;
  std::unique_ptr<RatingStore> store_;
  std::string label_variant_;
  std::mutex cache_mutex_;
  std::map<std::string, std::shared_ptr<const CaseData>> cache_;
};

}  // namespace pbtseg
