#pragma once

// Blinded, randomized clinical-acceptability rating: sessions, the 1-4 star
// scale, an append-only ratings log and per-rater summaries.

#include <array>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <functional>
#include <map>
#include <optional>
#include <shared_mutex>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

#include "pbtseg/volume.hpp"

namespace pbtseg {

/// Rubric served verbatim to raters; index 0 is one star.
inline constexpr std::array<std::string_view, 4> kStarRubric{
    "The segmentation is completely incorrect/not in the right location.",
    "The segmentation is in the correct location but requires significant modifications.",
    "The segmentation is in the correct location but needs minor adjustments.",
    "The segmentation is clinically usable and perfect.",
};

class RatingError : public std::runtime_error {
public:
  enum class Kind { BadRequest, NotFound, Forbidden };
  RatingError(Kind kind, const std::string& what) : std::runtime_error(what), kind_(kind) {}
  Kind kind() const noexcept { return kind_; }

private:
  Kind kind_;
};

struct RatingRecord {
  std::string session_id;
  std::string rater_id;
  std::string blinded_case_key;
  Channel channel = Channel::T2H;
  int stars = 0;
  std::string timestamp;  // UTC ISO-8601

  friend bool operator==(const RatingRecord&, const RatingRecord&) = default;
};

struct BlindedSession {
  std::string session_id;
  std::string rater_id;
  std::uint64_t seed = 0;
  std::vector<std::string> keys;  // presentation order
  bool finalized = false;
};

/// Fisher-Yates over the sorted case ids driven by xorshift64*(seed).
/// Returns the case ids in presentation order.
std::vector<std::string> blinded_order(std::vector<std::string> case_ids, std::uint64_t seed);

/// Opaque 16-hex-digit key for a presentation slot.
std::string blinded_key(std::uint64_t salt, std::uint64_t seed, std::size_t position);

struct RatingSummaryRow {
  std::string rater_id;
  Channel channel = Channel::T2H;
  std::size_t n = 0;
  std::optional<double> mean;
  std::optional<double> sd;  // sample SD, absent for n < 2
  std::array<std::size_t, 4> histogram{};  // counts of 1..4 stars
};

/// Keeps the last record (log order) per (rater, key, channel) and
/// summarizes per rater and channel. Rows are sorted by rater, then T2H/ET/CC.
std::vector<RatingSummaryRow> summarize_ratings(const std::vector<RatingRecord>& log);

std::string utc_timestamp_now();

/// Sessions and ratings for one cohort. Every mutation is appended to an
/// NDJSON log (when a path is given) before it becomes visible; constructing
/// a store over an existing log replays it. Thread-safe.
class RatingStore {
public:
  using Clock = std::function<std::string()>;

  RatingStore(std::vector<std::string> case_ids, std::optional<std::filesystem::path> log_path = std::nullopt,
              std::uint64_t key_salt = 0x5EED5A17ULL, Clock clock = utc_timestamp_now);

  BlindedSession create_session(const std::string& rater_id, std::uint64_t seed);
  BlindedSession session(const std::string& session_id) const;
  std::vector<BlindedSession> sessions() const;

  /// Throws RatingError for stars outside 1..4, unknown session or key, or a
  /// session owned by another rater.
  RatingRecord submit(const std::string& session_id, const std::string& rater_id, const std::string& key,
                      Channel channel, int stars);
  void finalize(const std::string& session_id, const std::string& rater_id);

  /// First key of the session not yet rated on all three channels.
  std::optional<std::string> next_key(const std::string& session_id) const;
  /// Latest stars per channel for this rater and key.
  std::map<Channel, int> current_ratings(const std::string& rater_id, const std::string& key) const;
  bool rater_has_key(const std::string& rater_id, const std::string& key) const;

  /// Server-side only.
  std::string case_for_key(const std::string& key) const;

  std::vector<RatingRecord> log() const;
  /// With finalized_only, ratings from unfinalized sessions are left out.
  std::vector<RatingSummaryRow> summary(bool finalized_only) const;

  struct UnblindedRating {
    std::string case_id;
    RatingRecord record;
  };
  /// Latest ratings of finalized sessions with their case ids restored.
  std::vector<UnblindedRating> unblinded() const;

  std::size_t case_count() const noexcept { return case_ids_.size(); }

private:
  void append(const std::string& line);
  void replay(const std::filesystem::path& path);
  BlindedSession make_session(const std::string& session_id, const std::string& rater_id, std::uint64_t seed) const;
  void register_session(BlindedSession s);
  const BlindedSession& session_locked(const std::string& session_id) const;

  std::vector<std::string> case_ids_;  // sorted
  std::uint64_t key_salt_;
  Clock clock_;
  std::optional<std::filesystem::path> log_path_;
  std::ofstream log_out_;

  mutable std::shared_mutex mutex_;
  std::map<std::string, BlindedSession> sessions_;
  std::map<std::string, std::string> key_to_case_;
  std::vector<RatingRecord> records_;
  std::size_t session_counter_ = 0;
};

}  // namespace pbtseg
